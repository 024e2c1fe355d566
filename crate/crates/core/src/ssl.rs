//! Self-supervised trainers: deep clustering, auto-encoding and contrastive
//! learning, with their augmentations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::{IQTrace, InputPipeline};
use crate::nn::{
    decoder_for, mse, softmax_cross_entropy, AdamState, FeatureExtractor, Module, Tensor,
};
use crate::numerics::{dot, kmeans_fit, norm, Matrix, RngState, DEFAULT_MAX_ITER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// Deep clustering.
    Dc,
    /// Auto-encoder.
    Ae,
    /// Contrastive.
    Cl,
    /// No training (PCA baseline).
    None,
}

impl Approach {
    pub fn name(&self) -> &'static str {
        match self {
            Approach::Dc => "dc",
            Approach::Ae => "ae",
            Approach::Cl => "cl",
            Approach::None => "none",
        }
    }
}

pub fn quarter_turns() -> Vec<f64> {
    vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]
}

/// The literal `{0, pi, 2 pi, 3 pi}` set, which holds two distinct rotations.
pub fn half_turns_literal() -> Vec<f64> {
    vec![0.0, PI, 2.0 * PI, 3.0 * PI]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub approach: Approach,
    pub epochs: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dc_clusters: usize,
    pub cl_temperature: f64,
    pub noise_std: f64,
    pub rotation_set: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            approach: Approach::Dc,
            epochs: 100,
            eval_every: 15,
            batch_size: 64,
            lr: 1e-3,
            dc_clusters: 80,
            cl_temperature: 0.5,
            noise_std: 0.05,
            rotation_set: quarter_turns(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.eval_every == 0 || self.eval_every > self.epochs {
            return Err(Error::validation(format!(
                "need epochs >= eval_every >= 1, got {} and {}",
                self.epochs, self.eval_every
            )));
        }
        if !(self.cl_temperature > 0.0) {
            return Err(Error::validation("contrastive temperature must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::validation("noise std must be non-negative"));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::validation("batch size and learning rate must be positive"));
        }
        if self.rotation_set.is_empty() {
            return Err(Error::validation("rotation set is empty"));
        }
        Ok(())
    }

    /// Multiples of `eval_every` plus the final epoch.
    pub fn eval_epochs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (1..=self.epochs / self.eval_every).map(|k| k * self.eval_every).collect();
        if v.last() != Some(&self.epochs) {
            v.push(self.epochs);
        }
        v
    }
}

/// Adds i.i.d. `N(0, std^2)` to every scalar.
pub fn augment_noise(x: &[f64], std: f64, rng: &mut RngState) -> Vec<f64> {
    if std == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|v| v + std * rng.normal()).collect()
}

/// Per-cell noise for occupancy grids, clipped at zero.
pub fn augment_noise_grid(cells: &[f64], std: f64, rng: &mut RngState) -> Vec<f64> {
    augment_noise(cells, std, rng).into_iter().map(|v| v.max(0.0)).collect()
}

/// Noise added to both channels of a trace.
pub fn augment_trace_noise(x: &IQTrace, std: f64, rng: &mut RngState) -> IQTrace {
    IQTrace {
        i: augment_noise(&x.i, std, rng),
        q: augment_noise(&x.q, std, rng),
        ..x.clone()
    }
}

/// Complex rotation `(I + jQ) e^{j angle}`.
pub fn augment_rotate(x: &IQTrace, angle: f64) -> IQTrace {
    if angle == 0.0 {
        return x.clone();
    }
    let (s, c) = angle.sin_cos();
    IQTrace {
        i: x.i.iter().zip(&x.q).map(|(a, b)| a * c - b * s).collect(),
        q: x.i.iter().zip(&x.q).map(|(a, b)| a * s + b * c).collect(),
        ..x.clone()
    }
}

/// Training inputs: the normalized traces (for augmentation) and their clean
/// prepared inputs.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub pipeline: InputPipeline,
    pub traces: Vec<IQTrace>,
    pub inputs: Vec<Vec<f64>>,
}

impl TrainData {
    pub fn new(pipeline: InputPipeline, traces: Vec<IQTrace>) -> Result<Self> {
        let traces = traces
            .iter()
            .map(crate::modality::normalize_iq)
            .collect::<Result<Vec<_>>>()?;
        let inputs = traces.iter().map(|t| pipeline.prepare(t)).collect::<Result<Vec<_>>>()?;
        Ok(TrainData {
            pipeline,
            traces,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let rows: Vec<&[f64]> = idx.iter().map(|&k| self.inputs[k].as_slice()).collect();
        Tensor::stack(&self.pipeline.shape(), &rows)
    }

    /// One augmented view: random rotation from the set, noise on the I/Q
    /// samples, then the usual normalization and input preparation.
    pub fn view(&self, k: usize, cfg: &TrainConfig, rng: &mut RngState) -> Result<Vec<f64>> {
        let angle = cfg.rotation_set[rng.below(cfg.rotation_set.len())];
        if angle == 0.0 && cfg.noise_std == 0.0 {
            return Ok(self.inputs[k].clone());
        }
        let t = augment_trace_noise(&augment_rotate(&self.traces[k], angle), cfg.noise_std, rng);
        self.pipeline.prepare(&t)
    }

    pub fn embed(&self, model: &FeatureExtractor, batch: usize) -> Result<Matrix> {
        let rows: Vec<&[f64]> = self.inputs.iter().map(|v| v.as_slice()).collect();
        model.embed(&rows, batch)
    }
}

/// NT-Xent over the `2n` views `[H*; H**]` with cosine similarity and
/// temperature `tau`. Returns the loss and its gradient with respect to both
/// view matrices stacked the same way.
pub fn contrastive_loss(h: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    let m = h.rows();
    if m < 4 || m % 2 != 0 {
        return Err(Error::validation("contrastive loss needs two views of at least two samples"));
    }
    if !(tau > 0.0) {
        return Err(Error::validation("temperature must be positive"));
    }
    let n = m / 2;
    let d = h.cols();
    let mut z = Matrix::zeros(m, d);
    let mut norms = vec![0.0; m];
    for r in 0..m {
        let nr = norm(h.row(r));
        if nr == 0.0 || !nr.is_finite() {
            return Err(Error::validation(format!("row {r} has zero or non-finite norm")));
        }
        norms[r] = nr;
        for (zv, hv) in z.row_mut(r).iter_mut().zip(h.row(r)) {
            *zv = hv / nr;
        }
    }
    let mut s = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = dot(z.row(a), z.row(b)) / tau;
            s.data_mut()[a * m + b] = v;
            s.data_mut()[b * m + a] = v;
        }
    }
    // g[a][b] = dL / ds_ab, treating s_ab and s_ba as separate entries
    let mut g = Matrix::zeros(m, m);
    let mut loss = 0.0;
    for a in 0..m {
        let pos = (a + n) % m;
        let row = s.row(a);
        let max = (0..m).filter(|&b| b != a).map(|b| row[b]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..m).filter(|&b| b != a).map(|b| (row[b] - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[pos];
        for b in 0..m {
            if b != a {
                g.data_mut()[a * m + b] = (row[b] - lse).exp() / m as f64;
            }
        }
        g.data_mut()[a * m + pos] -= 1.0 / m as f64;
    }
    loss /= m as f64;
    let mut gh = Matrix::zeros(m, d);
    for a in 0..m {
        let mut gz = vec![0.0; d];
        for b in 0..m {
            let w = (g[(a, b)] + g[(b, a)]) / tau;
            if w != 0.0 {
                crate::numerics::axpy(w, z.row(b), &mut gz);
            }
        }
        let za = z.row(a);
        let proj = dot(za, &gz);
        for (k, out) in gh.row_mut(a).iter_mut().enumerate() {
            *out = (gz[k] - za[k] * proj) / norms[a];
        }
    }
    Ok((loss, gh))
}

/// Epoch index and mean training loss.
pub type CurvePoint = (usize, f64);

pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub checkpoints: Vec<(usize, FeatureExtractor)>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in curve {
        s.push_str(&format!("{e},{l:.9}\n"));
    }
    s
}

/// Shuffled mini-batches; a trailing batch with fewer than two samples is
/// dropped.
fn batches(n: usize, size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
        .chunks(size)
        .filter(|c| c.len() >= 2 || n < 2)
        .map(|c| c.to_vec())
        .collect()
}

fn check_loss(loss: f64, batch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::training(batch, format!("non-finite loss {loss}")));
    }
    Ok(())
}

type Checkpoint<'a> = &'a mut dyn FnMut(usize, &FeatureExtractor) -> Result<()>;

/// Dispatches on `cfg.approach`. `on_checkpoint` sees the model at every
/// evaluation epoch.
pub fn train(
    model: &mut FeatureExtractor,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
    on_checkpoint: Checkpoint,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    match cfg.approach {
        Approach::Dc => deep_clustering(model, data, cfg, rng, on_checkpoint),
        Approach::Ae => {
            let net = decoder_for(&model.spec)?;
            let mut decoder = Module::new(net, &mut rng.derive(0xDEC0));
            autoencoder(model, &mut decoder, data, cfg, rng, on_checkpoint)
        }
        Approach::Cl => contrastive(model, data, cfg, rng, on_checkpoint),
        Approach::None => {
            for e in cfg.eval_epochs() {
                on_checkpoint(e, model)?;
            }
            Ok(Vec::new())
        }
    }
}

fn collect(
    model: &mut FeatureExtractor,
    f: impl FnOnce(&mut FeatureExtractor, Checkpoint) -> Result<Vec<CurvePoint>>,
) -> Result<TrainOutcome> {
    let mut checkpoints = Vec::new();
    let curve = f(model, &mut |e, m| {
        checkpoints.push((e, m.clone()));
        Ok(())
    })?;
    Ok(TrainOutcome { curve, checkpoints })
}

pub fn train_deep_clustering(
    model: &mut FeatureExtractor,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainOutcome> {
    collect(model, |m, cb| {
        cfg.validate()?;
        deep_clustering(m, data, cfg, rng, cb)
    })
}

pub fn train_autoencoder(
    model: &mut FeatureExtractor,
    decoder: &mut Module,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainOutcome> {
    collect(model, |m, cb| {
        cfg.validate()?;
        autoencoder(m, decoder, data, cfg, rng, cb)
    })
}

pub fn train_contrastive(
    model: &mut FeatureExtractor,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainOutcome> {
    collect(model, |m, cb| {
        cfg.validate()?;
        contrastive(m, data, cfg, rng, cb)
    })
}

/// Pseudo-labels of one clustering step.
pub fn pseudo_labels(features: &Matrix, c: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    let km = kmeans_fit(features, c, rng, DEFAULT_MAX_ITER)?;
    let mut labels = Vec::with_capacity(features.rows());
    let mut counts = vec![0usize; c];
    for row in features.iter_rows().take(features.rows()) {
        let (k, _) = crate::numerics::kmeans_assign(&km, row)?;
        counts[k] += 1;
        labels.push(k);
    }
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::training(0, format!("cluster {k} is empty after repair")));
    }
    Ok(labels)
}

fn deep_clustering(
    model: &mut FeatureExtractor,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
    on_checkpoint: Checkpoint,
) -> Result<Vec<CurvePoint>> {
    let c = cfg.dc_clusters;
    if c == 0 || c > data.len() {
        return Err(Error::validation(format!(
            "cannot form {c} pseudo-label clusters from {} samples",
            data.len()
        )));
    }
    let eval = cfg.eval_epochs();
    let mut adam = AdamState::new(model.params.len(), cfg.lr);
    let mut curve = Vec::new();
    let mut batch_no = 0;
    for epoch in 1..=cfg.epochs {
        let features = data.embed(model, cfg.batch_size.max(64))?;
        let labels = pseudo_labels(&features, c, rng)?;
        let mut head = Module::linear_head(model.feature_size(), c, rng)?;
        let mut head_adam = AdamState::new(head.params.len(), cfg.lr);
        let (mut total, mut count) = (0.0, 0);
        for idx in batches(data.len(), cfg.batch_size, rng) {
            let x = data.batch(&idx)?;
            let (h, tape) = model.forward_train(&x)?;
            let htape = head.forward_train(&h)?;
            let y: Vec<usize> = idx.iter().map(|&k| labels[k]).collect();
            let (loss, g) = softmax_cross_entropy(&htape.output, &y)?;
            check_loss(loss, batch_no)?;
            let mut head_grads = vec![0.0; head.params.len()];
            let gh = head
                .backward(&htape, g, &mut head_grads, true)
                .expect("input gradient requested");
            let mut grads = vec![0.0; model.params.len()];
            model.backward(&tape, &gh, &mut grads, false);
            head_adam.step(&mut head.params, &head_grads, batch_no)?;
            adam.step(&mut model.params, &grads, batch_no)?;
            total += loss;
            count += 1;
            batch_no += 1;
        }
        curve.push((epoch, total / count.max(1) as f64));
        if eval.contains(&epoch) {
            on_checkpoint(epoch, model)?;
        }
    }
    Ok(curve)
}

fn autoencoder(
    model: &mut FeatureExtractor,
    decoder: &mut Module,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
    on_checkpoint: Checkpoint,
) -> Result<Vec<CurvePoint>> {
    if decoder.net.output_shape() != data.pipeline.shape().as_slice() {
        return Err(Error::validation(format!(
            "decoder output {:?} does not match input {:?}",
            decoder.net.output_shape(),
            data.pipeline.shape()
        )));
    }
    let eval = cfg.eval_epochs();
    let mut adam = AdamState::new(model.params.len(), cfg.lr);
    let mut dec_adam = AdamState::new(decoder.params.len(), cfg.lr);
    let mut curve = Vec::new();
    let mut batch_no = 0;
    for epoch in 1..=cfg.epochs {
        let (mut total, mut count) = (0.0, 0);
        for idx in batches(data.len(), cfg.batch_size, rng) {
            let x = data.batch(&idx)?;
            let (h, tape) = model.forward_train(&x)?;
            let dtape = decoder.forward_train(&h)?;
            let (loss, g) = mse(&dtape.output, &x)?;
            check_loss(loss, batch_no)?;
            let mut dec_grads = vec![0.0; decoder.params.len()];
            let gh = decoder
                .backward(&dtape, g, &mut dec_grads, true)
                .expect("input gradient requested");
            let mut grads = vec![0.0; model.params.len()];
            model.backward(&tape, &gh, &mut grads, false);
            dec_adam.step(&mut decoder.params, &dec_grads, batch_no)?;
            adam.step(&mut model.params, &grads, batch_no)?;
            total += loss;
            count += 1;
            batch_no += 1;
        }
        curve.push((epoch, total / count.max(1) as f64));
        if eval.contains(&epoch) {
            on_checkpoint(epoch, model)?;
        }
    }
    Ok(curve)
}

fn contrastive(
    model: &mut FeatureExtractor,
    data: &TrainData,
    cfg: &TrainConfig,
    rng: &mut RngState,
    on_checkpoint: Checkpoint,
) -> Result<Vec<CurvePoint>> {
    if cfg.batch_size < 2 || data.len() < 2 {
        return Err(Error::validation("contrastive training needs batches of at least two"));
    }
    let eval = cfg.eval_epochs();
    let shape = data.pipeline.shape();
    let d = model.feature_size();
    let mut adam = AdamState::new(model.params.len(), cfg.lr);
    let mut curve = Vec::new();
    let mut batch_no = 0;
    for epoch in 1..=cfg.epochs {
        let (mut total, mut count) = (0.0, 0);
        for idx in batches(data.len(), cfg.batch_size, rng) {
            let mut views = Vec::with_capacity(2 * idx.len());
            for _ in 0..2 {
                for &k in &idx {
                    views.push(data.view(k, cfg, rng)?);
                }
            }
            let rows: Vec<&[f64]> = views.iter().map(|v| v.as_slice()).collect();
            let x = Tensor::stack(&shape, &rows)?;
            let (h, tape) = model.forward_train(&x)?;
            let hm = Matrix::from_vec(h.batch(), d, h.into_data())?;
            let (loss, gh) = contrastive_loss(&hm, cfg.cl_temperature)
                .map_err(|e| Error::training(batch_no, e.to_string()))?;
            check_loss(loss, batch_no)?;
            let gy = Tensor::new(vec![gh.rows(), d], gh.into_vec())?;
            let mut grads = vec![0.0; model.params.len()];
            model.backward(&tape, &gy, &mut grads, false);
            adam.step(&mut model.params, &grads, batch_no)?;
            total += loss;
            count += 1;
            batch_no += 1;
        }
        curve.push((epoch, total / count.max(1) as f64));
        if eval.contains(&epoch) {
            on_checkpoint(epoch, model)?;
        }
    }
    Ok(curve)
}
