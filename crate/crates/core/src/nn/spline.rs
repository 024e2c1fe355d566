//! Uniform B-spline bases on [-1, 1].
//!
//! `grid` intervals of width `h = 2 / grid`, knots extended `degree` steps
//! beyond each end, giving `grid + degree` bases. With the default degree 4
//! (efficient-KAN's `spline_order = 4`) that is the `G + 4` bases per edge.

pub const MAX_DEGREE: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformBSpline {
    pub grid: usize,
    pub degree: usize,
    h: f64,
}

/// The `degree + 1` bases that are nonzero at a point, starting at `first`.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
}

impl UniformBSpline {
    pub fn new(grid: usize, degree: usize) -> Self {
        assert!(grid >= 1, "grid must have at least one interval");
        assert!(degree <= MAX_DEGREE, "degree above {MAX_DEGREE}");
        UniformBSpline {
            grid,
            degree,
            h: 2.0 / grid as f64,
        }
    }

    pub fn n_bases(&self) -> usize {
        self.grid + self.degree
    }

    pub fn knot_step(&self) -> f64 {
        self.h
    }

    /// Knot `m` of the extended sequence, `m = 0 ..= grid + 2 * degree`.
    #[inline]
    pub fn knot(&self, m: usize) -> f64 {
        -1.0 + (m as f64 - self.degree as f64) * self.h
    }

    /// Interval index for an already clamped `x`.
    #[inline]
    fn interval(&self, x: f64) -> usize {
        let q = ((x + 1.0) / self.h).floor();
        if q <= 0.0 {
            0
        } else {
            (q as usize).min(self.grid - 1)
        }
    }

    /// Nonzero bases at `x` (clamped to [-1, 1]) via the Cox-de Boor triangle.
    #[inline]
    pub fn basis(&self, x: f64) -> LocalBasis {
        let x = x.clamp(-1.0, 1.0);
        let q = self.interval(x);
        LocalBasis {
            first: q,
            values: self.triangle(q, x, self.degree),
        }
    }

    /// Nonzero bases and their derivatives at `x`. The derivative is taken
    /// inside the domain; callers zero it for inputs that were clamped.
    pub fn basis_with_derivative(&self, x: f64) -> (LocalBasis, [f64; MAX_DEGREE + 1]) {
        let x = x.clamp(-1.0, 1.0);
        let q = self.interval(x);
        let p = self.degree;
        let values = self.triangle(q, x, p);
        let mut deriv = [0.0; MAX_DEGREE + 1];
        if p > 0 {
            // degree p-1 bases at the same span cover indices q+1 ..= q+p
            let lower = self.triangle(q, x, p - 1);
            let inv_h = 1.0 / self.h;
            for m in 0..=p {
                let left = if m >= 1 { lower[m - 1] } else { 0.0 };
                let right = if m < p { lower[m] } else { 0.0 };
                deriv[m] = (left - right) * inv_h;
            }
        }
        (LocalBasis { first: q, values }, deriv)
    }

    /// Degree-`p` bases nonzero on interval `q` (knot span `q + degree`).
    /// Entry `m` is basis `q + degree - p + m`.
    fn triangle(&self, q: usize, x: f64, p: usize) -> [f64; MAX_DEGREE + 1] {
        let span = q + self.degree;
        let mut n = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        for &(g, p) in &[(10, 4), (6, 4), (5, 3), (1, 4), (3, 1)] {
            let s = UniformBSpline::new(g, p);
            for k in 0..=400 {
                let x = -1.0 + 2.0 * k as f64 / 400.0;
                let b = s.basis(x);
                let sum: f64 = b.values[..=p].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "g={g} p={p} x={x} sum={sum}");
                assert!(b.first + p < s.n_bases());
            }
        }
    }

    #[test]
    fn derivative_sums_to_zero() {
        let s = UniformBSpline::new(10, 4);
        for k in 0..50 {
            let x = -0.99 + 1.98 * k as f64 / 49.0;
            let (_, d) = s.basis_with_derivative(x);
            let sum: f64 = d.iter().sum();
            assert!(sum.abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_matches_differences() {
        let s = UniformBSpline::new(6, 4);
        let eval = |x: f64, k: usize| {
            let b = s.basis(x);
            if k >= b.first && k <= b.first + 4 {
                b.values[k - b.first]
            } else {
                0.0
            }
        };
        for &x in &[-0.7, -0.1, 0.33, 0.81] {
            let (b, d) = s.basis_with_derivative(x);
            for m in 0..=4 {
                let k = b.first + m;
                let fd = (eval(x + 1e-6, k) - eval(x - 1e-6, k)) / 2e-6;
                assert!((fd - d[m]).abs() < 1e-6, "x={x} k={k}");
            }
        }
    }
}
