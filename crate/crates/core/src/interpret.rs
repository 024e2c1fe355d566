//! LIME local-linear fits, KAN node/edge importance and spline sampling.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{kan_edge, FeatureExtractor, KanLayerConfig, Tensor};
use crate::numerics::{Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalLinearModel {
    /// `d x n_in`
    pub w: Matrix,
    /// `F(x)`
    pub intercept: Vec<f64>,
    pub anchor: Vec<f64>,
    /// Standard deviation of every perturbation coordinate.
    pub scale: f64,
}

impl LocalLinearModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = x.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        let mut out = self.intercept.clone();
        for (j, o) in out.iter_mut().enumerate() {
            *o += crate::numerics::dot(self.w.row(j), &delta);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("output,input,coefficient\n");
        for j in 0..self.w.rows() {
            for i in 0..self.w.cols() {
                s.push_str(&format!("{j},{i},{:e}\n", self.w[(j, i)]));
            }
        }
        s
    }
}

/// Least-squares fit of `F(x + dx) - F(x) ~ W dx` over Gaussian
/// perturbations with per-coordinate standard deviation `scale`; no locality
/// kernel.
pub fn lime_fit<F>(f: F, x: &[f64], n_perturbations: usize, scale: f64, rng: &mut RngState) -> Result<LocalLinearModel>
where
    F: Fn(&[&[f64]]) -> Result<Matrix>,
{
    let p = x.len();
    if !(scale > 0.0) {
        return Err(Error::validation("perturbation scale must be positive"));
    }
    if n_perturbations < p {
        return Err(Error::validation(format!(
            "underdetermined fit: {n_perturbations} perturbations for {p} inputs"
        )));
    }
    let base = f(&[x])?;
    let intercept = base.row(0).to_vec();
    let d = intercept.len();

    let mut deltas = Matrix::zeros(n_perturbations, p);
    for v in deltas.data_mut() {
        *v = scale * rng.normal();
    }
    let points: Vec<Vec<f64>> = deltas
        .iter_rows()
        .map(|dx| x.iter().zip(dx).map(|(a, b)| a + b).collect())
        .collect();
    let mut responses = Matrix::zeros(n_perturbations, d);
    for (chunk_start, chunk) in points.chunks(256).enumerate().map(|(k, c)| (k * 256, c)) {
        let rows: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
        let out = f(&rows)?;
        for (r, row) in out.iter_rows().enumerate() {
            for (j, v) in row.iter().enumerate() {
                responses.data_mut()[(chunk_start + r) * d + j] = v - intercept[j];
            }
        }
    }

    // normal equations (D^T D) W^T = D^T Y, scaled to unit perturbations
    let inv = 1.0 / scale;
    let dn: Vec<f64> = deltas.data().iter().map(|v| v * inv).collect();
    let dn = Matrix::from_vec(n_perturbations, p, dn)?;
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = Matrix::zeros(p, d);
    for (drow, yrow) in dn.iter_rows().zip(responses.iter_rows()) {
        for a in 0..p {
            let da = drow[a];
            if da == 0.0 {
                continue;
            }
            crate::numerics::axpy(da, &drow[a..], &mut gram.row_mut(a)[a..]);
            crate::numerics::axpy(da, yrow, rhs.row_mut(a));
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram.data_mut()[a * p + b] = gram[(b, a)];
        }
    }
    let l = cholesky(&gram)?;
    let mut w = Matrix::zeros(d, p);
    let mut col = vec![0.0; p];
    for j in 0..d {
        for a in 0..p {
            col[a] = rhs[(a, j)];
        }
        cholesky_solve(&l, &mut col);
        for a in 0..p {
            w.data_mut()[j * p + a] = col[a] * inv;
        }
    }
    Ok(LocalLinearModel {
        w,
        intercept,
        anchor: x.to_vec(),
        scale,
    })
}

/// Evaluation closure over an extractor, for [`lime_fit`].
pub fn extractor_fn(model: &FeatureExtractor) -> impl Fn(&[&[f64]]) -> Result<Matrix> + '_ {
    move |rows: &[&[f64]]| {
        let x = Tensor::stack(&model.spec.input_shape, rows)?;
        let y = model.predict(&x)?;
        Matrix::from_vec(rows.len(), model.feature_size(), y.into_data())
    }
}

fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > 0.0) {
            return Err(Error::Degenerate("perturbation design is singular".into()));
        }
        let ljj = s.sqrt();
        l.data_mut()[j * n + j] = ljj;
        for i in j + 1..n {
            let s = a[(i, j)] - crate::numerics::dot(&l.row(i)[..j], &l.row(j)[..j]);
            l.data_mut()[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Matrix, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let s = b[i] - crate::numerics::dot(&l.row(i)[..i], &b[..i]);
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

fn kan_parts(model: &FeatureExtractor) -> Result<(KanLayerConfig, &[f64])> {
    let cfg = model
        .spec
        .kan_config()
        .ok_or_else(|| Error::validation("model is not a KAN extractor"))?;
    Ok((cfg, &model.body_params()[..cfg.param_len()]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeImportance {
    /// Per input node: sum over edges of the mean absolute edge response.
    pub nodes: Vec<f64>,
    /// `n_in x n_out` mean absolute edge responses.
    pub edges: Matrix,
}

impl NodeImportance {
    /// Edges whose mean response reaches `threshold`, strongest first.
    pub fn important_edges(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let mut v: Vec<(usize, usize, f64)> = (0..self.edges.rows())
            .flat_map(|i| (0..self.edges.cols()).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.edges[(i, j)]))
            .filter(|e| e.2 >= threshold)
            .collect();
        v.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        v
    }

    /// Edges below `threshold`, the ones a pruning pass would drop.
    pub fn pruned_edges(&self, threshold: f64) -> Vec<(usize, usize)> {
        (0..self.edges.rows())
            .flat_map(|i| (0..self.edges.cols()).map(move |j| (i, j)))
            .filter(|&(i, j)| self.edges[(i, j)] < threshold)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,importance\n");
        for (i, v) in self.nodes.iter().enumerate() {
            s.push_str(&format!("{i},{v:e}\n"));
        }
        s
    }
}

/// Mean absolute response of every KAN edge over the reference inputs. Only
/// the KAN body is considered, not a linear bypass.
pub fn kan_node_importance(model: &FeatureExtractor, reference: &[&[f64]]) -> Result<NodeImportance> {
    if reference.is_empty() {
        return Err(Error::validation("reference data is empty"));
    }
    let (cfg, params) = kan_parts(model)?;
    let spline = cfg.spline();
    let mut edges = Matrix::zeros(cfg.n_in, cfg.n_out);
    for x in reference {
        if x.len() != cfg.n_in {
            return Err(Error::validation(format!(
                "reference sample has {} values, KAN takes {}",
                x.len(),
                cfg.n_in
            )));
        }
        for (i, &xv) in x.iter().enumerate() {
            for j in 0..cfg.n_out {
                edges.data_mut()[i * cfg.n_out + j] += kan_edge(&cfg, params, &spline, i, j, xv).abs();
            }
        }
    }
    let inv = 1.0 / reference.len() as f64;
    edges.data_mut().iter_mut().for_each(|v| *v *= inv);
    let nodes = edges.iter_rows().map(|r| r.iter().sum()).collect();
    Ok(NodeImportance { nodes, edges })
}

/// `n_points` uniform samples `(x, psi_ij(x))` over [-1, 1].
pub fn kan_spline_export(model: &FeatureExtractor, i: usize, j: usize, n_points: usize) -> Result<Vec<(f64, f64)>> {
    let (cfg, params) = kan_parts(model)?;
    if i >= cfg.n_in || j >= cfg.n_out {
        return Err(Error::validation(format!(
            "edge ({i}, {j}) outside {}x{}",
            cfg.n_in, cfg.n_out
        )));
    }
    if n_points < 2 {
        return Err(Error::validation("need at least two sample points"));
    }
    let spline = cfg.spline();
    Ok((0..n_points)
        .map(|k| {
            let x = -1.0 + 2.0 * k as f64 / (n_points - 1) as f64;
            (x, kan_edge(&cfg, params, &spline, i, j, x))
        })
        .collect())
}

pub fn spline_csv(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("x,psi\n");
    for (x, y) in samples {
        s.push_str(&format!("{x:.9},{y:e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lime_recovers_linear_map() {
        let a = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        let f = |rows: &[&[f64]]| {
            let mut out = Vec::new();
            for r in rows {
                for j in 0..2 {
                    out.push(crate::numerics::dot(a.row(j), r));
                }
            }
            Matrix::from_vec(rows.len(), 2, out)
        };
        let m = lime_fit(f, &[0.3, -0.1, 0.7], 50, 0.01, &mut RngState::new(2)).unwrap();
        for (w, e) in m.w.data().iter().zip(a.data()) {
            assert!((w - e).abs() < 1e-6);
        }
    }

    #[test]
    fn lime_constant_and_underdetermined() {
        let f = |rows: &[&[f64]]| Matrix::from_vec(rows.len(), 1, vec![4.0; rows.len()]);
        let m = lime_fit(f, &[1.0, 2.0], 10, 0.01, &mut RngState::new(0)).unwrap();
        assert!(m.w.data().iter().all(|v| v.abs() < 1e-8));
        assert!(lime_fit(f, &[1.0, 2.0], 1, 0.01, &mut RngState::new(0)).is_err());
    }
}
