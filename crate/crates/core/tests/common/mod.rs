//! Reference implementations written independently of the library, shared by
//! the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::DMatrix;
use ued_core::nn::{decoder_for, mse, softmax_cross_entropy, ExtractorSpec, FeatureExtractor, Module, Tensor};
use ued_core::numerics::{Matrix, RngState};
use ued_core::ssl::contrastive_loss;

// ---------------------------------------------------------------- metrics

/// Pair counting: P(score_pos > score_neg) + 0.5 P(tie).
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            den += 1.0;
            if sp > sn {
                num += 1.0;
            } else if sp == sn {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Mutual information over the arithmetic mean of the two entropies, from an
/// explicit contingency table.
pub fn nmi_direct(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let h = |c: &HashMap<usize, usize>| -> f64 {
        c.values()
            .map(|&k| {
                let p = k as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (ha, hb) = (h(&ca), h(&cb));
    if ha == 0.0 && hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &k) in &joint {
        let pxy = k as f64 / n;
        mi += pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln();
    }
    (mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0)
}

pub fn f1_counts(pred: &[u8], labels: &[u8]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fneg);
    2.0 * precision * recall / (precision + recall)
}

// ---------------------------------------------------------------- splines

/// Extended uniform knots over [-1, 1] for `grid` intervals.
pub fn knots(grid: usize, degree: usize) -> Vec<f64> {
    let h = 2.0 / grid as f64;
    (0..=grid + 2 * degree)
        .map(|m| -1.0 + (m as f64 - degree as f64) * h)
        .collect()
}

/// Textbook recursive Cox-de Boor evaluation of basis `i` of degree `p`.
pub fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + p] - t[i];
    if d1 != 0.0 {
        v += (x - t[i]) / d1 * cox_de_boor(t, i, p - 1, x);
    }
    let d2 = t[i + p + 1] - t[i + 1];
    if d2 != 0.0 {
        v += (t[i + p + 1] - x) / d2 * cox_de_boor(t, i + 1, p - 1, x);
    }
    v
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `p/(t[i+p]-t[i]) N_{i,p-1} - p/(t[i+p+1]-t[i+1]) N_{i+1,p-1}`.
pub fn cox_de_boor_derivative(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    let a = p as f64 / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x);
    let b = p as f64 / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x);
    a - b
}

// ---------------------------------------------------------------- convolution

/// "Same" cross-correlation with zero padding `(k - 1) / 2`.
/// `w[o][c][kk]`, `x[c][t]`.
pub fn conv1d_naive(w: &[f64], bias: &[f64], x: &[f64], cin: usize, cout: usize, k: usize, len: usize) -> Vec<f64> {
    let pad = (k - 1) as isize / 2;
    let mut y = vec![0.0; cout * len];
    for o in 0..cout {
        for t in 0..len {
            let mut s = bias[o];
            for c in 0..cin {
                for kk in 0..k {
                    let src = t as isize + kk as isize - pad;
                    if src >= 0 && (src as usize) < len {
                        s += w[(o * cin + c) * k + kk] * x[c * len + src as usize];
                    }
                }
            }
            y[o * len + t] = s;
        }
    }
    y
}

pub fn conv2d_naive(
    w: &[f64],
    bias: &[f64],
    x: &[f64],
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    wd: usize,
) -> Vec<f64> {
    let pad = (k - 1) as isize / 2;
    let mut y = vec![0.0; cout * h * wd];
    for o in 0..cout {
        for r in 0..h {
            for s in 0..wd {
                let mut acc = bias[o];
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let rr = r as isize + ky as isize - pad;
                            let ss = s as isize + kx as isize - pad;
                            if rr >= 0 && ss >= 0 && (rr as usize) < h && (ss as usize) < wd {
                                acc += w[((o * cin + c) * k + ky) * k + kx] * x[(c * h + rr as usize) * wd + ss as usize];
                            }
                        }
                    }
                }
                y[(o * h + r) * wd + s] = acc;
            }
        }
    }
    y
}

// ---------------------------------------------------------------- SVD

/// Top-`d` eigenvectors (as rows) of the sample covariance, via nalgebra.
pub fn covariance_eigvecs(x: &Matrix, d: usize) -> Vec<Vec<f64>> {
    let (n, p) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, p, x.data());
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .take(d)
        .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect()
}

/// Frobenius norm of `(I - A^T A) B^T` for orthonormal row sets `A`, `B`; an
/// upper bound on the sine of the largest principal angle between the spans.
pub fn subspace_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for bv in b {
        let mut r = bv.clone();
        for av in a {
            let c: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
            for (ri, ai) in r.iter_mut().zip(av) {
                *ri -= c * ai;
            }
        }
        total += r.iter().map(|v| v * v).sum::<f64>();
    }
    total.sqrt()
}

// ---------------------------------------------------------------- k-means

pub fn partition_inertia(x: &Matrix, labels: &[usize], c: usize) -> f64 {
    let d = x.cols();
    let mut sums = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (row, &l) in x.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut total = 0.0;
    for (row, &l) in x.iter_rows().zip(labels) {
        for (k, v) in row.iter().enumerate() {
            let m = sums[l][k] / counts[l] as f64;
            total += (v - m) * (v - m);
        }
    }
    total
}

/// Minimum inertia over every assignment of the rows to exactly `c`
/// non-empty clusters (canonical labelings only).
pub fn best_partition_inertia(x: &Matrix, c: usize) -> f64 {
    fn rec(x: &Matrix, c: usize, labels: &mut Vec<usize>, used: usize, best: &mut f64) {
        if labels.len() == x.rows() {
            if used == c {
                *best = best.min(partition_inertia(x, labels, c));
            }
            return;
        }
        let remaining = x.rows() - labels.len();
        if c - used > remaining {
            return;
        }
        for l in 0..(used + 1).min(c) {
            labels.push(l);
            rec(x, c, labels, used.max(l + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(x, c, &mut Vec::new(), 0, &mut best);
    best
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-4;
pub const FD_COORDS: usize = 25;

/// Result of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_relative_error: f64,
}

/// Compares `grad` against central differences of `f` on `FD_COORDS` random
/// coordinates. When the central differences at `h` and `h / 2` disagree by
/// more than 1e-5 relative, a ReLU or max-pool kink lies inside the step and
/// the difference quotient is not a valid reference; the coordinate is
/// redrawn and counted in `skipped_kinks`.
pub fn check_gradient(
    name: &str,
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    grad: &[f64],
    rng: &mut RngState,
) -> GradReport {
    let h = FD_STEP;
    let mut p = params.to_vec();
    let mut central = |p: &mut Vec<f64>, k: usize, h: f64| {
        let orig = p[k];
        p[k] = orig + h;
        let fp = f(p);
        p[k] = orig - h;
        let fm = f(p);
        p[k] = orig;
        (fp - fm) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    let mut attempts = 0;
    while checked < FD_COORDS && attempts < 40 * FD_COORDS {
        attempts += 1;
        let k = rng.below(p.len());
        let c1 = central(&mut p, k, h);
        let c2 = central(&mut p, k, h / 2.0);
        if (c1 - c2).abs() > 1e-5 * c1.abs().max(c2.abs()).max(1e-6) + 1e-10 {
            skipped += 1;
            continue;
        }
        let rel = (c1 - grad[k]).abs() / c1.abs().max(grad[k].abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    GradReport {
        name: name.into(),
        checked,
        skipped_kinks: skipped,
        worst_relative_error: if checked < FD_COORDS { f64::INFINITY } else { worst },
    }
}

fn random_batch(shape: &[usize], batch: usize, rng: &mut RngState) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..batch * n).map(|_| rng.uniform_range(-0.9, 0.9)).collect();
    let mut full = vec![batch];
    full.extend_from_slice(shape);
    Tensor::new(full, data).unwrap()
}

/// Perturbs every parameter so that no coordinate sits at a special value
/// (KAN weights start at exactly 1, batch-norm at 1 and 0).
fn jitter(model: &mut FeatureExtractor, rng: &mut RngState) {
    for p in model.params.iter_mut() {
        *p += 0.05 * rng.normal();
    }
}

/// `sum(r * F(x))` in training mode, as a function of the parameters.
pub fn extractor_projection_check(name: &str, spec: ExtractorSpec, batch: usize, rng: &mut RngState) -> GradReport {
    let mut model = FeatureExtractor::new(spec, rng);
    jitter(&mut model, rng);
    let x = random_batch(&model.spec.input_shape.clone(), batch, rng);
    let d = model.feature_size();
    let r: Vec<f64> = (0..batch * d).map(|_| rng.normal()).collect();
    let gy = Tensor::new(vec![batch, d], r.clone()).unwrap();
    let mut m = model.clone();
    let (_, tape) = m.forward_train(&x).unwrap();
    let mut grads = vec![0.0; model.params.len()];
    model.backward(&tape, &gy, &mut grads, false);
    let params = model.params.clone();
    let mut f = |p: &[f64]| {
        let mut m = model.clone();
        m.params.copy_from_slice(p);
        let (y, _) = m.forward_train(&x).unwrap();
        y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    check_gradient(name, &mut f, &params, &grads, rng)
}

/// Encoder + decoder under the reconstruction MSE; parameters are
/// `[encoder | decoder]`.
pub fn autoencoder_check(name: &str, spec: ExtractorSpec, batch: usize, rng: &mut RngState) -> GradReport {
    let mut enc = FeatureExtractor::new(spec, rng);
    jitter(&mut enc, rng);
    let dec = Module::new(decoder_for(&enc.spec).unwrap(), rng);
    let x = random_batch(&enc.spec.input_shape.clone(), batch, rng);
    let ne = enc.params.len();
    let loss = |enc: &FeatureExtractor, dec: &Module| -> (f64, Vec<f64>) {
        let mut e = enc.clone();
        let mut dm = dec.clone();
        let (h, etape) = e.forward_train(&x).unwrap();
        let dtape = dm.forward_train(&h).unwrap();
        let (l, g) = mse(&dtape.output, &x).unwrap();
        let mut grads = vec![0.0; ne + dec.params.len()];
        let gh = dec.backward(&dtape, g, &mut grads[ne..], true).unwrap();
        enc.backward(&etape, &gh, &mut grads[..ne], false);
        (l, grads)
    };
    let (_, grads) = loss(&enc, &dec);
    let mut params = enc.params.clone();
    params.extend_from_slice(&dec.params);
    let mut f = |p: &[f64]| {
        let mut e = enc.clone();
        let mut dm = dec.clone();
        e.params.copy_from_slice(&p[..ne]);
        dm.params.copy_from_slice(&p[ne..]);
        loss(&e, &dm).0
    };
    check_gradient(name, &mut f, &params, &grads, rng)
}

/// Encoder + linear classification head under softmax cross-entropy against
/// fixed pseudo-labels.
pub fn dc_head_check(name: &str, spec: ExtractorSpec, batch: usize, classes: usize, rng: &mut RngState) -> GradReport {
    let mut enc = FeatureExtractor::new(spec, rng);
    jitter(&mut enc, rng);
    let head = Module::linear_head(enc.feature_size(), classes, rng).unwrap();
    let x = random_batch(&enc.spec.input_shape.clone(), batch, rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(classes)).collect();
    let ne = enc.params.len();
    let loss = |enc: &FeatureExtractor, head: &Module| -> (f64, Vec<f64>) {
        let mut e = enc.clone();
        let mut hm = head.clone();
        let (h, etape) = e.forward_train(&x).unwrap();
        let htape = hm.forward_train(&h).unwrap();
        let (l, g) = softmax_cross_entropy(&htape.output, &labels).unwrap();
        let mut grads = vec![0.0; ne + head.params.len()];
        let gh = head.backward(&htape, g, &mut grads[ne..], true).unwrap();
        enc.backward(&etape, &gh, &mut grads[..ne], false);
        (l, grads)
    };
    let (_, grads) = loss(&enc, &head);
    let mut params = enc.params.clone();
    params.extend_from_slice(&head.params);
    let mut f = |p: &[f64]| {
        let mut e = enc.clone();
        let mut hm = head.clone();
        e.params.copy_from_slice(&p[..ne]);
        hm.params.copy_from_slice(&p[ne..]);
        loss(&e, &hm).0
    };
    check_gradient(name, &mut f, &params, &grads, rng)
}

/// Encoder applied to `2n` stacked views under NT-Xent.
pub fn contrastive_check(name: &str, spec: ExtractorSpec, n: usize, tau: f64, rng: &mut RngState) -> GradReport {
    let mut enc = FeatureExtractor::new(spec, rng);
    jitter(&mut enc, rng);
    let x = random_batch(&enc.spec.input_shape.clone(), 2 * n, rng);
    let d = enc.feature_size();
    let loss = |enc: &FeatureExtractor| -> (f64, Vec<f64>) {
        let mut e = enc.clone();
        let (h, tape) = e.forward_train(&x).unwrap();
        let hm = Matrix::from_vec(2 * n, d, h.into_data()).unwrap();
        let (l, g) = contrastive_loss(&hm, tau).unwrap();
        let gy = Tensor::new(vec![2 * n, d], g.into_vec()).unwrap();
        let mut grads = vec![0.0; enc.params.len()];
        enc.backward(&tape, &gy, &mut grads, false);
        (l, grads)
    };
    let (_, grads) = loss(&enc);
    let params = enc.params.clone();
    let mut f = |p: &[f64]| {
        let mut e = enc.clone();
        e.params.copy_from_slice(p);
        loss(&e).0
    };
    check_gradient(name, &mut f, &params, &grads, rng)
}

/// Every gradient scenario of the engine, at sizes small enough for a quick
/// run but with the full CNN input shapes.
pub fn all_gradient_checks(seed: u64) -> Vec<GradReport> {
    let mut rng = RngState::new(seed);
    let kan = || ExtractorSpec::kan(24, 5, 10).unwrap();
    let cnn1 = || ExtractorSpec::cnn1d(256, 20).unwrap();
    let cnn2 = || ExtractorSpec::cnn2d(60, 20).unwrap();
    vec![
        extractor_projection_check("kan", kan(), 4, &mut rng),
        extractor_projection_check("cnn1d", cnn1(), 3, &mut rng),
        extractor_projection_check("cnn2d", cnn2(), 2, &mut rng),
        extractor_projection_check("kan+svd bypass", kan().with_bypass(), 4, &mut rng),
        extractor_projection_check("cnn1d+svd bypass", cnn1().with_bypass(), 3, &mut rng),
        extractor_projection_check("pca bypass", ExtractorSpec::pca(vec![12], 4), 3, &mut rng),
        autoencoder_check("ae kan", kan(), 4, &mut rng),
        autoencoder_check("ae cnn1d", cnn1(), 2, &mut rng),
        autoencoder_check("ae cnn2d", cnn2(), 2, &mut rng),
        dc_head_check("dc head kan", kan(), 6, 3, &mut rng),
        dc_head_check("dc head cnn1d", cnn1(), 4, 3, &mut rng),
        contrastive_check("contrastive kan", kan(), 3, 0.5, &mut rng),
        contrastive_check("contrastive cnn1d", cnn1(), 2, 0.5, &mut rng),
    ]
}
