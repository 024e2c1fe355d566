use serde::{Deserialize, Serialize};

use super::matrix::{squared_distance, Matrix};
use super::rng::RngState;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    /// `C x d`
    pub centers: Matrix,
    pub inertia: f64,
    /// Inertia right after k-means++ seeding.
    pub seed_inertia: f64,
    /// Inertia after every Lloyd assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansModel {
    pub fn n_clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }
}

/// Nearest center by Euclidean distance; ties go to the lowest index.
pub fn kmeans_assign(model: &KMeansModel, x: &[f64]) -> Result<(usize, f64)> {
    if x.len() != model.dim() {
        return Err(Error::validation(format!(
            "point has dimension {}, model has {}",
            x.len(),
            model.dim()
        )));
    }
    let (idx, d2) = nearest(&model.centers, x);
    Ok((idx, d2.sqrt()))
}

fn nearest(centers: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centers.iter_rows().enumerate() {
        let d2 = squared_distance(row, x);
        if d2 < best.1 {
            best = (c, d2);
        }
    }
    best
}

/// One k-means run: k-means++ seeding then Lloyd iterations until the
/// assignment stops changing or `max_iter` updates have been made.
pub fn kmeans_fit(x: &Matrix, c: usize, rng: &mut RngState, max_iter: usize) -> Result<KMeansModel> {
    let n = x.rows();
    if c == 0 {
        return Err(Error::validation("cluster count must be at least 1"));
    }
    if n < c {
        return Err(Error::validation(format!(
            "cannot form {c} clusters from {n} points"
        )));
    }
    let dim = x.cols();
    let mut centers = seed_plus_plus(x, c, rng);

    let mut assign = vec![usize::MAX; n];
    let mut dist2 = vec![0.0; n];
    let mut history = Vec::new();
    let mut seed_inertia = None;
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for i in 0..n {
            let (a, d2) = nearest(&centers, x.row(i));
            if a != assign[i] {
                changed = true;
                assign[i] = a;
            }
            dist2[i] = d2;
        }
        let inertia: f64 = dist2.iter().sum();
        seed_inertia.get_or_insert(inertia);
        history.push(inertia);
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        // mean update
        let mut sums = Matrix::zeros(c, dim);
        let mut counts = vec![0usize; c];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                for (ctr, s) in centers.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *ctr = s * inv;
                }
            }
        }
        // empty clusters take the point farthest from its own (updated) center
        for k in 0..c {
            if counts[k] > 0 {
                continue;
            }
            let mut far = (0usize, -1.0f64);
            for i in 0..n {
                if counts[assign[i]] <= 1 {
                    continue;
                }
                let d2 = squared_distance(x.row(i), centers.row(assign[i]));
                if d2 > far.1 {
                    far = (i, d2);
                }
            }
            if far.1 < 0.0 {
                break;
            }
            let i = far.0;
            counts[assign[i]] -= 1;
            counts[k] = 1;
            centers.row_mut(k).copy_from_slice(x.row(i));
            assign[i] = k;
        }
    }

    Ok(KMeansModel {
        centers,
        inertia: *history.last().expect("at least one assignment step"),
        seed_inertia: seed_inertia.unwrap_or(0.0),
        inertia_history: history,
        iterations,
    })
}

/// Best of `restarts` runs by inertia; the earliest run wins ties.
pub fn kmeans_fit_restarts(
    x: &Matrix,
    c: usize,
    restarts: usize,
    rng: &mut RngState,
    max_iter: usize,
) -> Result<KMeansModel> {
    let mut best: Option<KMeansModel> = None;
    for _ in 0..restarts.max(1) {
        let m = kmeans_fit(x, c, rng, max_iter)?;
        if best.as_ref().is_none_or(|b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn seed_plus_plus(x: &Matrix, c: usize, rng: &mut RngState) -> Matrix {
    let n = x.rows();
    let mut centers = Matrix::zeros(c, x.cols());
    let first = rng.below(n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x
        .iter_rows()
        .map(|r| squared_distance(r, centers.row(0)))
        .collect();
    for k in 1..c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just past the running sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.below(n)
        };
        centers.row_mut(k).copy_from_slice(x.row(pick));
        for (i, r) in x.iter_rows().enumerate() {
            let nd = squared_distance(r, centers.row(k));
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }
    centers
}
