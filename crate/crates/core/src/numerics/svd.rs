//! Truncated SVD of mean-centered data.
//!
//! The centered matrix is reduced to its smaller Gram matrix, which is
//! diagonalized by Householder tridiagonalization followed by implicit QL
//! iterations (the EISPACK `tred2`/`tql2` pair). Columns that are constant
//! across all rows carry no variance and are dropped before the Gram product.

use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, norm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// `d x p`, orthonormal rows in descending singular-value order.
    pub components: Matrix,
    pub singular_values: Vec<f64>,
    pub mean: Vec<f64>,
}

impl SvdResult {
    /// Coordinates of `x` in the component basis: `C (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components
            .iter_rows()
            .map(|c| dot(c, &centered))
            .collect()
    }
}

/// Top-`d` right singular vectors of the column-centered `x`.
const NULL_TOL: f64 = 1e-7;

pub fn svd_topk(x: &Matrix, d: usize) -> Result<SvdResult> {
    let (n, p) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::validation(format!("svd needs at least 2 rows, got {n}")));
    }
    if d == 0 || d > n.min(p) {
        return Err(Error::dimension(format!(
            "requested {d} components from a {n}x{p} matrix"
        )));
    }
    if !x.is_finite() {
        return Err(Error::validation("svd input contains non-finite values"));
    }

    let mean = x.column_means();
    let active: Vec<usize> = (0..p)
        .filter(|&j| x.iter_rows().any(|r| r[j] != mean[j]))
        .collect();
    let pa = active.len();

    // centered, active-column copy
    let mut xc = Matrix::zeros(n, pa);
    for i in 0..n {
        let src = x.row(i);
        let dst = xc.row_mut(i);
        for (k, &j) in active.iter().enumerate() {
            dst[k] = src[j] - mean[j];
        }
    }

    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut sigmas: Vec<f64> = Vec::with_capacity(d);
    if pa > 0 {
        if n >= pa {
            let gram = gram_columns(&xc);
            let eig = symmetric_eigen(gram);
            for k in 0..d.min(pa) {
                let lambda = eig.values[k].max(0.0);
                let mut v = vec![0.0; p];
                for (a, &j) in active.iter().enumerate() {
                    v[j] = eig.vectors[(a, k)];
                }
                vectors.push(v);
                sigmas.push(lambda.sqrt());
            }
        } else {
            let gram = gram_rows(&xc);
            let eig = symmetric_eigen(gram);
            let scale = eig.values.first().copied().unwrap_or(0.0).max(0.0);
            for k in 0..d.min(n) {
                let lambda = eig.values[k].max(0.0);
                if lambda <= scale * 1e-24 || lambda == 0.0 {
                    break;
                }
                let sigma = lambda.sqrt();
                let mut va = vec![0.0; pa];
                for i in 0..n {
                    axpy(eig.vectors[(i, k)] / sigma, xc.row(i), &mut va);
                }
                let mut v = vec![0.0; p];
                for (a, &j) in active.iter().enumerate() {
                    v[j] = va[a];
                }
                vectors.push(v);
                sigmas.push(sigma);
            }
        }
    }

    // Drop numerically null directions and re-orthonormalize; zero singular
    // values get arbitrary orthonormal completions. Going through the Gram
    // matrix resolves singular values only down to about sqrt(eps) * top.
    let top = sigmas.first().copied().unwrap_or(0.0);
    let mut kept = Vec::with_capacity(d);
    let mut kept_sigma = Vec::with_capacity(d);
    for (v, s) in vectors.into_iter().zip(sigmas) {
        if s <= top * NULL_TOL || s == 0.0 {
            break;
        }
        kept.push(v);
        kept_sigma.push(s);
    }
    orthonormalize(&mut kept);
    let mut e = 0;
    while kept.len() < d {
        let mut cand = vec![0.0; p];
        cand[e] = 1.0;
        e += 1;
        for q in &kept {
            let c = dot(q, &cand);
            axpy(-c, q, &mut cand);
        }
        let nrm = norm(&cand);
        if nrm > 1e-8 {
            cand.iter_mut().for_each(|v| *v /= nrm);
            kept.push(cand);
            kept_sigma.push(0.0);
        }
    }

    for v in &mut kept {
        fix_sign(v);
    }
    let components = Matrix::from_vec(d, p, kept.concat())?;
    Ok(SvdResult {
        components,
        singular_values: kept_sigma,
        mean,
    })
}

/// Flip so the largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Two passes of modified Gram-Schmidt.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for k in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(k);
            let v = &mut rest[0];
            for q in done.iter() {
                let c = dot(q, v);
                axpy(-c, q, v);
            }
            let nrm = norm(v);
            if nrm > 0.0 {
                v.iter_mut().for_each(|x| *x /= nrm);
            }
        }
    }
}

/// `X^T X`
fn gram_columns(x: &Matrix) -> Matrix {
    let p = x.cols();
    let mut g = Matrix::zeros(p, p);
    for r in x.iter_rows() {
        for (i, &a) in r.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            // upper triangle only
            axpy(a, &r[i..], &mut g.row_mut(i)[i..]);
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

/// `X X^T`
fn gram_rows(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(x.row(i), x.row(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

pub struct SymmetricEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: Matrix,
}

/// Full eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(a: Matrix) -> SymmetricEigen {
    let n = a.rows();
    let mut v = a;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n > 0 {
        tred2(n, &mut v, &mut d, &mut e);
        v = v.transpose();
        tql2(n, &mut v, &mut d, &mut e);
    }
    // tql2 leaves ascending order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, k)] = v[(src, i)];
        }
    }
    SymmetricEigen {
        values: order.iter().map(|&i| d[i]).collect(),
        vectors,
    }
}

// Householder reduction to tridiagonal form (after the public-domain JAMA port
// of EISPACK tred2).
fn tred2(n: usize, v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let t = f * e[k] + g * d[k];
                    v[(k, j)] -= t;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let t = g * d[k];
                    v[(k, j)] -= t;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit QL on the tridiagonal form (JAMA tql2). `vt` holds the
// accumulated transformation transposed, so eigenvector `k` ends up in row `k`.
fn tql2(n: usize, vt: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }

        if m > l {
            loop {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in l + 2..n {
                    d[i] -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.data_mut().split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let t = *b;
                        *b = s * *a + c * t;
                        *a = c * *a - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}
