//! Layer catalogue. Every layer reads its parameters from a slice of the
//! owning model's flat parameter vector and writes gradients into the
//! matching slice of a gradient vector.

use serde::{Deserialize, Serialize};

use super::spline::UniformBSpline;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, RngState};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KanLayerConfig {
    pub n_in: usize,
    pub n_out: usize,
    /// Number of uniform intervals on [-1, 1].
    pub grid: usize,
    /// Polynomial degree of the B-spline bases (efficient-KAN convention);
    /// each edge carries `grid + spline_order` coefficients.
    pub spline_order: usize,
}

impl KanLayerConfig {
    pub fn new(n_in: usize, n_out: usize, grid: usize) -> Self {
        KanLayerConfig {
            n_in,
            n_out,
            grid,
            spline_order: 4,
        }
    }

    pub fn n_bases(&self) -> usize {
        self.grid + self.spline_order
    }

    pub fn n_edges(&self) -> usize {
        self.n_in * self.n_out
    }

    pub fn spline_coefficients(&self) -> usize {
        self.n_edges() * self.n_bases()
    }

    pub fn param_len(&self) -> usize {
        2 * self.n_edges() + self.spline_coefficients()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 || self.grid == 0 {
            return Err(Error::validation(format!("invalid KAN layer {self:?}")));
        }
        if self.spline_order > super::spline::MAX_DEGREE {
            return Err(Error::validation(format!(
                "spline order {} above {}",
                self.spline_order,
                super::spline::MAX_DEGREE
            )));
        }
        Ok(())
    }

    pub fn spline(&self) -> UniformBSpline {
        UniformBSpline::new(self.grid, self.spline_order)
    }

    // parameter layout: w_b[i][j], w_s[i][j], gamma[i][j][k]
    pub fn wb_index(&self, i: usize, j: usize) -> usize {
        i * self.n_out + j
    }

    pub fn ws_index(&self, i: usize, j: usize) -> usize {
        self.n_edges() + i * self.n_out + j
    }

    pub fn gamma_index(&self, i: usize, j: usize, k: usize) -> usize {
        2 * self.n_edges() + (i * self.n_out + j) * self.n_bases() + k
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Stride 1, "same" padding.
    Conv1d { cin: usize, cout: usize, k: usize },
    Conv2d { cin: usize, cout: usize, k: usize },
    BatchNorm { channels: usize },
    Relu,
    /// Window 2, stride 2, floor.
    MaxPool1d,
    MaxPool2d,
    /// Nearest-neighbour resize.
    Upsample1d { out_len: usize },
    Upsample2d { out_h: usize, out_w: usize },
    Linear { nin: usize, nout: usize },
    Kan(KanLayerConfig),
    Reshape { shape: Vec<usize> },
}

/// Per-layer values kept from the forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    None,
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Pool { argmax: Vec<u32> },
}

impl Layer {
    pub fn param_len(&self) -> usize {
        match self {
            Layer::Conv1d { cin, cout, k } => cin * cout * k + cout,
            Layer::Conv2d { cin, cout, k } => cin * cout * k * k + cout,
            Layer::BatchNorm { channels } => 2 * channels,
            Layer::Linear { nin, nout } => nin * nout + nout,
            Layer::Kan(cfg) => cfg.param_len(),
            _ => 0,
        }
    }

    /// Running mean and variance for batch norm.
    pub fn state_len(&self) -> usize {
        match self {
            Layer::BatchNorm { channels } => 2 * channels,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || {
            Error::dimension(format!("layer {self:?} cannot take input of shape {input:?}"))
        };
        Ok(match self {
            Layer::Conv1d { cin, cout, .. } => match input {
                [c, l] if c == cin => vec![*cout, *l],
                _ => return Err(bad()),
            },
            Layer::Conv2d { cin, cout, .. } => match input {
                [c, h, w] if c == cin => vec![*cout, *h, *w],
                _ => return Err(bad()),
            },
            Layer::BatchNorm { channels } => match input.first() {
                Some(c) if c == channels && input.len() >= 2 => input.to_vec(),
                _ => return Err(bad()),
            },
            Layer::Relu => input.to_vec(),
            Layer::MaxPool1d => match input {
                [c, l] if *l >= 2 => vec![*c, l / 2],
                _ => return Err(bad()),
            },
            Layer::MaxPool2d => match input {
                [c, h, w] if *h >= 2 && *w >= 2 => vec![*c, h / 2, w / 2],
                _ => return Err(bad()),
            },
            Layer::Upsample1d { out_len } => match input {
                [c, _] => vec![*c, *out_len],
                _ => return Err(bad()),
            },
            Layer::Upsample2d { out_h, out_w } => match input {
                [c, _, _] => vec![*c, *out_h, *out_w],
                _ => return Err(bad()),
            },
            Layer::Linear { nin, nout } => {
                if input.iter().product::<usize>() != *nin {
                    return Err(bad());
                }
                vec![*nout]
            }
            Layer::Kan(cfg) => {
                if input.iter().product::<usize>() != cfg.n_in {
                    return Err(bad());
                }
                vec![cfg.n_out]
            }
            Layer::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(bad());
                }
                shape.clone()
            }
        })
    }

    pub fn init_params(&self, params: &mut [f64], rng: &mut RngState) {
        let uniform = |params: &mut [f64], bound: f64, rng: &mut RngState| {
            for p in params {
                *p = rng.uniform_range(-bound, bound);
            }
        };
        match self {
            Layer::Conv1d { cin, k, .. } => uniform(params, 1.0 / ((cin * k) as f64).sqrt(), rng),
            Layer::Conv2d { cin, k, .. } => {
                uniform(params, 1.0 / ((cin * k * k) as f64).sqrt(), rng)
            }
            Layer::Linear { nin, .. } => uniform(params, 1.0 / (*nin as f64).sqrt(), rng),
            Layer::BatchNorm { channels } => {
                params[..*channels].fill(1.0);
                params[*channels..].fill(0.0);
            }
            Layer::Kan(cfg) => {
                let e = cfg.n_edges();
                params[..2 * e].fill(1.0);
                for g in &mut params[2 * e..] {
                    *g = 0.1 * rng.normal();
                }
            }
            _ => {}
        }
    }

    pub fn init_state(&self, state: &mut [f64]) {
        if let Layer::BatchNorm { channels } = self {
            state[..*channels].fill(0.0);
            state[*channels..].fill(1.0);
        }
    }

    /// Forward pass over a batch. `state` is updated only in training mode.
    pub fn forward(
        &self,
        params: &[f64],
        state: &mut [f64],
        x: &Tensor,
        mode: Mode,
        out_shape: &[usize],
    ) -> (Tensor, Cache) {
        let b = x.batch();
        let mut shape = vec![b];
        shape.extend_from_slice(out_shape);
        match self {
            Layer::Conv1d { cin, cout, k } => {
                (conv1d_forward(params, x, *cin, *cout, *k, shape), Cache::None)
            }
            Layer::Conv2d { cin, cout, k } => {
                (conv2d_forward(params, x, *cin, *cout, *k, shape), Cache::None)
            }
            Layer::BatchNorm { channels } => batchnorm_forward(params, state, x, *channels, mode),
            Layer::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                (Tensor::new(shape, data).expect("shape"), Cache::None)
            }
            Layer::MaxPool1d => maxpool1d_forward(x, shape),
            Layer::MaxPool2d => maxpool2d_forward(x, shape),
            Layer::Upsample1d { .. } | Layer::Upsample2d { .. } => {
                (upsample_forward(x, shape), Cache::None)
            }
            Layer::Linear { nin, nout } => (linear_forward(params, x, *nin, *nout), Cache::None),
            Layer::Kan(cfg) => (kan_forward_batch(cfg, params, x), Cache::None),
            Layer::Reshape { .. } => (
                Tensor::new(shape, x.data().to_vec()).expect("reshape"),
                Cache::None,
            ),
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Tensor,
        cache: &Cache,
        gy: &Tensor,
        grads: &mut [f64],
        need_input: bool,
    ) -> Option<Tensor> {
        match self {
            Layer::Conv1d { cin, cout, k } => {
                conv1d_backward(params, x, gy, grads, *cin, *cout, *k, need_input)
            }
            Layer::Conv2d { cin, cout, k } => {
                conv2d_backward(params, x, gy, grads, *cin, *cout, *k, need_input)
            }
            Layer::BatchNorm { channels } => {
                Some(batchnorm_backward(params, x, cache, gy, grads, *channels))
            }
            Layer::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                    .collect();
                Some(Tensor::new(x.shape().to_vec(), data).expect("shape"))
            }
            Layer::MaxPool1d | Layer::MaxPool2d => {
                let Cache::Pool { argmax } = cache else {
                    unreachable!("pool cache")
                };
                let mut gx = Tensor::zeros(x.shape().to_vec());
                let per_in = x.sample_len();
                let per_out = gy.sample_len();
                for b in 0..x.batch() {
                    for o in 0..per_out {
                        let src = argmax[b * per_out + o] as usize;
                        gx.data_mut()[b * per_in + src] += gy.data()[b * per_out + o];
                    }
                }
                Some(gx)
            }
            Layer::Upsample1d { .. } | Layer::Upsample2d { .. } => Some(upsample_backward(x, gy)),
            Layer::Linear { nin, nout } => {
                linear_backward(params, x, gy, grads, *nin, *nout, need_input)
            }
            Layer::Kan(cfg) => kan_backward_batch(cfg, params, x, gy, grads, need_input),
            Layer::Reshape { .. } => Some(
                Tensor::new(x.shape().to_vec(), gy.data().to_vec()).expect("reshape"),
            ),
        }
    }
}

// ---------------------------------------------------------------- convolution

fn conv1d_forward(
    params: &[f64],
    x: &Tensor,
    cin: usize,
    cout: usize,
    k: usize,
    shape: Vec<usize>,
) -> Tensor {
    let l = x.sample_shape()[1];
    let pad = (k - 1) / 2;
    let (w, bias) = params.split_at(cin * cout * k);
    let mut y = Tensor::zeros(shape);
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for o in 0..cout {
            let yo = &mut ys[o * l..(o + 1) * l];
            yo.fill(bias[o]);
            for c in 0..cin {
                let xc = &xs[c * l..(c + 1) * l];
                for kk in 0..k {
                    let wv = w[(o * cin + c) * k + kk];
                    let shift = kk as isize - pad as isize;
                    let (t0, t1) = valid_range(l, shift);
                    if t0 < t1 {
                        let s0 = (t0 as isize + shift) as usize;
                        axpy(wv, &xc[s0..s0 + (t1 - t0)], &mut yo[t0..t1]);
                    }
                }
            }
        }
    }
    y
}

/// Output positions `t` for which `t + shift` is inside `0..len`.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = (len as isize - shift).min(len as isize).max(0) as usize;
    (t0.min(len), t1)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    params: &[f64],
    x: &Tensor,
    gy: &Tensor,
    grads: &mut [f64],
    cin: usize,
    cout: usize,
    k: usize,
    need_input: bool,
) -> Option<Tensor> {
    let l = x.sample_shape()[1];
    let pad = (k - 1) / 2;
    let nw = cin * cout * k;
    let w = &params[..nw];
    let (gw, gb) = grads.split_at_mut(nw);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape().to_vec()));
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let gys = gy.sample(b);
        for o in 0..cout {
            let go = &gys[o * l..(o + 1) * l];
            gb[o] += go.iter().sum::<f64>();
            for c in 0..cin {
                let xc = &xs[c * l..(c + 1) * l];
                for kk in 0..k {
                    let shift = kk as isize - pad as isize;
                    let (t0, t1) = valid_range(l, shift);
                    if t0 >= t1 {
                        continue;
                    }
                    let s0 = (t0 as isize + shift) as usize;
                    let idx = (o * cin + c) * k + kk;
                    gw[idx] += dot(&go[t0..t1], &xc[s0..s0 + (t1 - t0)]);
                    if let Some(gx) = gx.as_mut() {
                        let gxc = &mut gx.sample_mut(b)[c * l..(c + 1) * l];
                        axpy(w[idx], &go[t0..t1], &mut gxc[s0..s0 + (t1 - t0)]);
                    }
                }
            }
        }
    }
    gx
}

fn conv2d_forward(
    params: &[f64],
    x: &Tensor,
    cin: usize,
    cout: usize,
    k: usize,
    shape: Vec<usize>,
) -> Tensor {
    let (h, wd) = (x.sample_shape()[1], x.sample_shape()[2]);
    let plane = h * wd;
    let pad = (k - 1) / 2;
    let (w, bias) = params.split_at(cin * cout * k * k);
    let mut y = Tensor::zeros(shape);
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for o in 0..cout {
            let yo = &mut ys[o * plane..(o + 1) * plane];
            yo.fill(bias[o]);
            for c in 0..cin {
                let xc = &xs[c * plane..(c + 1) * plane];
                for ky in 0..k {
                    let sy = ky as isize - pad as isize;
                    let (r0, r1) = valid_range(h, sy);
                    for kx in 0..k {
                        let wv = w[((o * cin + c) * k + ky) * k + kx];
                        let sx = kx as isize - pad as isize;
                        let (c0, c1) = valid_range(wd, sx);
                        if c0 >= c1 {
                            continue;
                        }
                        let src_c0 = (c0 as isize + sx) as usize;
                        for r in r0..r1 {
                            let src_r = (r as isize + sy) as usize;
                            let src = &xc[src_r * wd + src_c0..src_r * wd + src_c0 + (c1 - c0)];
                            axpy(wv, src, &mut yo[r * wd + c0..r * wd + c1]);
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    params: &[f64],
    x: &Tensor,
    gy: &Tensor,
    grads: &mut [f64],
    cin: usize,
    cout: usize,
    k: usize,
    need_input: bool,
) -> Option<Tensor> {
    let (h, wd) = (x.sample_shape()[1], x.sample_shape()[2]);
    let plane = h * wd;
    let pad = (k - 1) / 2;
    let nw = cin * cout * k * k;
    let w = &params[..nw];
    let (gw, gb) = grads.split_at_mut(nw);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape().to_vec()));
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let gys = gy.sample(b);
        for o in 0..cout {
            let go = &gys[o * plane..(o + 1) * plane];
            gb[o] += go.iter().sum::<f64>();
            for c in 0..cin {
                let xc = &xs[c * plane..(c + 1) * plane];
                for ky in 0..k {
                    let sy = ky as isize - pad as isize;
                    let (r0, r1) = valid_range(h, sy);
                    for kx in 0..k {
                        let idx = ((o * cin + c) * k + ky) * k + kx;
                        let sx = kx as isize - pad as isize;
                        let (c0, c1) = valid_range(wd, sx);
                        if c0 >= c1 {
                            continue;
                        }
                        let src_c0 = (c0 as isize + sx) as usize;
                        let len = c1 - c0;
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            let src_r = (r as isize + sy) as usize;
                            let xo = src_r * wd + src_c0;
                            acc += dot(&go[r * wd + c0..r * wd + c1], &xc[xo..xo + len]);
                        }
                        gw[idx] += acc;
                        if let Some(gx) = gx.as_mut() {
                            let gxc = &mut gx.sample_mut(b)[c * plane..(c + 1) * plane];
                            for r in r0..r1 {
                                let src_r = (r as isize + sy) as usize;
                                let xo = src_r * wd + src_c0;
                                axpy(w[idx], &go[r * wd + c0..r * wd + c1], &mut gxc[xo..xo + len]);
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------- batch norm

fn batchnorm_forward(
    params: &[f64],
    state: &mut [f64],
    x: &Tensor,
    channels: usize,
    mode: Mode,
) -> (Tensor, Cache) {
    let (gamma, beta) = params.split_at(channels);
    let b = x.batch();
    let spatial = x.sample_len() / channels;
    let count = (b * spatial) as f64;
    let mut y = Tensor::zeros(x.shape().to_vec());
    let mut xhat = vec![0.0; x.data().len()];
    let mut inv_std = vec![0.0; channels];
    for c in 0..channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut s = 0.0;
                for bi in 0..b {
                    s += x.sample(bi)[c * spatial..(c + 1) * spatial].iter().sum::<f64>();
                }
                let mean = s / count;
                let mut v = 0.0;
                for bi in 0..b {
                    for &xv in &x.sample(bi)[c * spatial..(c + 1) * spatial] {
                        v += (xv - mean) * (xv - mean);
                    }
                }
                let var = v / count;
                let unbiased = if count > 1.0 { v / (count - 1.0) } else { var };
                state[c] = (1.0 - BN_MOMENTUM) * state[c] + BN_MOMENTUM * mean;
                state[channels + c] =
                    (1.0 - BN_MOMENTUM) * state[channels + c] + BN_MOMENTUM * unbiased;
                (mean, var)
            }
            Mode::Eval => (state[c], state[channels + c]),
        };
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        let per = x.sample_len();
        for bi in 0..b {
            let base = bi * per + c * spatial;
            for s in 0..spatial {
                let xh = (x.data()[base + s] - mean) * is;
                xhat[base + s] = xh;
                y.data_mut()[base + s] = gamma[c] * xh + beta[c];
            }
        }
    }
    let cache = match mode {
        Mode::Train => Cache::BatchNorm { xhat, inv_std },
        // eval-mode backward treats the statistics as constants
        Mode::Eval => Cache::BatchNorm {
            xhat,
            inv_std: inv_std.into_iter().map(|v| -v).collect(),
        },
    };
    (y, cache)
}

fn batchnorm_backward(
    params: &[f64],
    x: &Tensor,
    cache: &Cache,
    gy: &Tensor,
    grads: &mut [f64],
    channels: usize,
) -> Tensor {
    let Cache::BatchNorm { xhat, inv_std } = cache else {
        unreachable!("batch norm cache")
    };
    let gamma = &params[..channels];
    let b = x.batch();
    let per = x.sample_len();
    let spatial = per / channels;
    let count = (b * spatial) as f64;
    let mut gx = Tensor::zeros(x.shape().to_vec());
    for c in 0..channels {
        // negative inv_std marks eval-mode statistics
        let eval = inv_std[c] < 0.0;
        let is = inv_std[c].abs();
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for bi in 0..b {
            let base = bi * per + c * spatial;
            for s in 0..spatial {
                let g = gy.data()[base + s];
                sum_g += g;
                sum_gx += g * xhat[base + s];
            }
        }
        grads[c] += sum_gx;
        grads[channels + c] += sum_g;
        for bi in 0..b {
            let base = bi * per + c * spatial;
            for s in 0..spatial {
                let g = gy.data()[base + s];
                gx.data_mut()[base + s] = if eval {
                    gamma[c] * is * g
                } else {
                    gamma[c] * is * (g - sum_g / count - xhat[base + s] * sum_gx / count)
                };
            }
        }
    }
    gx
}

// ---------------------------------------------------------------- pooling

fn maxpool1d_forward(x: &Tensor, shape: Vec<usize>) -> (Tensor, Cache) {
    let (c, l) = (x.sample_shape()[0], x.sample_shape()[1]);
    let lo = l / 2;
    let mut y = Tensor::zeros(shape);
    let mut argmax = Vec::with_capacity(x.batch() * c * lo);
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for ch in 0..c {
            for t in 0..lo {
                let i0 = ch * l + 2 * t;
                let (idx, v) = if xs[i0 + 1] > xs[i0] {
                    (i0 + 1, xs[i0 + 1])
                } else {
                    (i0, xs[i0])
                };
                ys[ch * lo + t] = v;
                argmax.push(idx as u32);
            }
        }
    }
    (y, Cache::Pool { argmax })
}

fn maxpool2d_forward(x: &Tensor, shape: Vec<usize>) -> (Tensor, Cache) {
    let (c, h, w) = (x.sample_shape()[0], x.sample_shape()[1], x.sample_shape()[2]);
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(shape);
    let mut argmax = Vec::with_capacity(x.batch() * c * ho * wo);
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for ch in 0..c {
            for r in 0..ho {
                for col in 0..wo {
                    let mut best = ch * h * w + 2 * r * w + 2 * col;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ch * h * w + (2 * r + dr) * w + 2 * col + dc;
                        if xs[i] > xs[best] {
                            best = i;
                        }
                    }
                    ys[(ch * ho + r) * wo + col] = xs[best];
                    argmax.push(best as u32);
                }
            }
        }
    }
    (y, Cache::Pool { argmax })
}

/// Nearest source index for a resize from `n_in` to `n_out` positions.
#[inline]
fn nearest_src(dst: usize, n_in: usize, n_out: usize) -> usize {
    (dst * n_in / n_out).min(n_in - 1)
}

fn upsample_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    match (in_shape, out_shape) {
        ([c, li], [_, lo]) => (0..*c)
            .flat_map(|ch| (0..*lo).map(move |t| ch * li + nearest_src(t, *li, *lo)))
            .collect(),
        ([c, hi, wi], [_, ho, wo]) => {
            let mut m = Vec::with_capacity(c * ho * wo);
            for ch in 0..*c {
                for r in 0..*ho {
                    let sr = nearest_src(r, *hi, *ho);
                    for col in 0..*wo {
                        m.push((ch * hi + sr) * wi + nearest_src(col, *wi, *wo));
                    }
                }
            }
            m
        }
        _ => unreachable!("upsample shapes validated at construction"),
    }
}

fn upsample_forward(x: &Tensor, shape: Vec<usize>) -> Tensor {
    let map = upsample_map(x.sample_shape(), &shape[1..]);
    let mut y = Tensor::zeros(shape);
    for b in 0..x.batch() {
        let xs = x.sample(b);
        for (o, &src) in y.sample_mut(b).iter_mut().zip(&map) {
            *o = xs[src];
        }
    }
    y
}

fn upsample_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    let map = upsample_map(x.sample_shape(), gy.sample_shape());
    let mut gx = Tensor::zeros(x.shape().to_vec());
    for b in 0..x.batch() {
        let gs = gy.sample(b).to_vec();
        let gxs = gx.sample_mut(b);
        for (g, &src) in gs.iter().zip(&map) {
            gxs[src] += g;
        }
    }
    gx
}

// ---------------------------------------------------------------- linear

fn linear_forward(params: &[f64], x: &Tensor, nin: usize, nout: usize) -> Tensor {
    let (w, bias) = params.split_at(nin * nout);
    let mut y = Tensor::zeros(vec![x.batch(), nout]);
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for o in 0..nout {
            ys[o] = bias[o] + dot(&w[o * nin..(o + 1) * nin], xs);
        }
    }
    y
}

fn linear_backward(
    params: &[f64],
    x: &Tensor,
    gy: &Tensor,
    grads: &mut [f64],
    nin: usize,
    nout: usize,
    need_input: bool,
) -> Option<Tensor> {
    let w = &params[..nin * nout];
    let (gw, gb) = grads.split_at_mut(nin * nout);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape().to_vec()));
    for b in 0..x.batch() {
        let xs = x.sample(b);
        let gys = gy.sample(b);
        for o in 0..nout {
            let g = gys[o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            axpy(g, xs, &mut gw[o * nin..(o + 1) * nin]);
            if let Some(gx) = gx.as_mut() {
                axpy(g, &w[o * nin..(o + 1) * nin], gx.sample_mut(b));
            }
        }
    }
    gx
}

// ---------------------------------------------------------------- KAN

/// Value every input of a sparse constellation grid takes on empty cells.
/// Samples at this value share one basis evaluation per node.
const KAN_FLOOR: f64 = -1.0;

/// psi_ij(x) = w_b silu(x) + w_s sum_k gamma_k B_k(clamp(x)).
#[inline]
pub fn kan_edge(cfg: &KanLayerConfig, params: &[f64], spline: &UniformBSpline, i: usize, j: usize, x: f64) -> f64 {
    let basis = spline.basis(x);
    let g0 = cfg.gamma_index(i, j, basis.first);
    let s: f64 = (0..=cfg.spline_order)
        .map(|m| params[g0 + m] * basis.values[m])
        .sum();
    params[cfg.wb_index(i, j)] * silu(x) + params[cfg.ws_index(i, j)] * s
}

/// Sum over edges of one node `i` into `out`, skipping nothing.
#[inline]
fn kan_node_accumulate(
    cfg: &KanLayerConfig,
    params: &[f64],
    i: usize,
    silu_x: f64,
    first: usize,
    values: &[f64],
    sign: f64,
    out: &mut [f64],
) {
    let e = cfg.n_edges();
    let nb = cfg.n_bases();
    let order = cfg.spline_order;
    let row = i * cfg.n_out;
    let wb = &params[row..row + cfg.n_out];
    let ws = &params[e + row..e + row + cfg.n_out];
    let gam = &params[2 * e + row * nb..2 * e + (row + cfg.n_out) * nb];
    for j in 0..cfg.n_out {
        let g = &gam[j * nb + first..j * nb + first + order + 1];
        let mut s = 0.0;
        for m in 0..=order {
            s += g[m] * values[m];
        }
        out[j] += sign * (wb[j] * silu_x + ws[j] * s);
    }
}

pub fn kan_forward_batch(cfg: &KanLayerConfig, params: &[f64], x: &Tensor) -> Tensor {
    let spline = cfg.spline();
    let n_in = cfg.n_in;
    let n_out = cfg.n_out;
    let b = x.batch();
    let mut y = Tensor::zeros(vec![b, n_out]);

    // shared contribution of every node sitting at the floor value
    let floor_basis = spline.basis(KAN_FLOOR);
    let floor_silu = silu(KAN_FLOOR);
    let floor_count = x.data().iter().filter(|&&v| v == KAN_FLOOR).count();
    let use_floor = floor_count * 4 > x.data().len();
    let mut floor_total = vec![0.0; n_out];
    if use_floor {
        for i in 0..n_in {
            kan_node_accumulate(
                cfg,
                params,
                i,
                floor_silu,
                floor_basis.first,
                &floor_basis.values,
                1.0,
                &mut floor_total,
            );
        }
    }

    for bi in 0..b {
        let xs = x.sample(bi);
        let ys = y.sample_mut(bi);
        if use_floor {
            ys.copy_from_slice(&floor_total);
        }
        for i in 0..n_in {
            let xv = xs[i];
            if use_floor && xv == KAN_FLOOR {
                continue;
            }
            let basis = spline.basis(xv);
            kan_node_accumulate(cfg, params, i, silu(xv), basis.first, &basis.values, 1.0, ys);
            if use_floor {
                kan_node_accumulate(
                    cfg,
                    params,
                    i,
                    floor_silu,
                    floor_basis.first,
                    &floor_basis.values,
                    -1.0,
                    ys,
                );
            }
        }
    }
    y
}

fn kan_backward_batch(
    cfg: &KanLayerConfig,
    params: &[f64],
    x: &Tensor,
    gy: &Tensor,
    grads: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let spline = cfg.spline();
    let (n_in, n_out) = (cfg.n_in, cfg.n_out);
    let e = cfg.n_edges();
    let nb = cfg.n_bases();
    let order = cfg.spline_order;
    let b = x.batch();

    let floor_count = x.data().iter().filter(|&&v| v == KAN_FLOOR).count();
    let use_floor = floor_count * 4 > x.data().len();

    // gradient mass arriving at floor-valued inputs, per (node, output)
    let mut floor_mass = if use_floor {
        let mut total = vec![0.0; n_out];
        for bi in 0..b {
            axpy(1.0, gy.sample(bi), &mut total);
        }
        let mut m = vec![0.0; e];
        for i in 0..n_in {
            m[i * n_out..(i + 1) * n_out].copy_from_slice(&total);
        }
        m
    } else {
        Vec::new()
    };

    let (gwb, rest) = grads.split_at_mut(e);
    let (gws, ggam) = rest.split_at_mut(e);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape().to_vec()));

    for bi in 0..b {
        let xs = x.sample(bi);
        let g = gy.sample(bi);
        for i in 0..n_in {
            let xv = xs[i];
            let row = i * n_out;
            if use_floor {
                if xv == KAN_FLOOR && !need_input {
                    continue;
                }
                if xv != KAN_FLOOR {
                    for j in 0..n_out {
                        floor_mass[row + j] -= g[j];
                    }
                } else {
                    // floor-valued input: parameter gradients come from the mass
                    // pass below, only the input gradient is taken here
                    let (basis, dbasis) = spline.basis_with_derivative(xv);
                    let gxi = kan_input_grad(cfg, params, i, xv, &basis, &dbasis, g);
                    if let Some(gx) = gx.as_mut() {
                        gx.sample_mut(bi)[i] = gxi;
                    }
                    continue;
                }
            }
            let sx = silu(xv);
            let (basis, dbasis) = if need_input {
                spline.basis_with_derivative(xv)
            } else {
                (spline.basis(xv), [0.0; super::spline::MAX_DEGREE + 1])
            };
            for j in 0..n_out {
                let gj = g[j];
                if gj == 0.0 {
                    continue;
                }
                let edge = row + j;
                let g0 = 2 * e + edge * nb + basis.first;
                let mut s = 0.0;
                for m in 0..=order {
                    s += params[g0 + m] * basis.values[m];
                }
                gwb[edge] += gj * sx;
                gws[edge] += gj * s;
                let wsg = params[e + edge] * gj;
                let gg = &mut ggam[edge * nb + basis.first..edge * nb + basis.first + order + 1];
                for m in 0..=order {
                    gg[m] += wsg * basis.values[m];
                }
            }
            if let Some(gx) = gx.as_mut() {
                gx.sample_mut(bi)[i] = kan_input_grad(cfg, params, i, xv, &basis, &dbasis, g);
            }
        }
    }

    if use_floor {
        let basis = spline.basis(KAN_FLOOR);
        let sx = silu(KAN_FLOOR);
        for i in 0..n_in {
            for j in 0..n_out {
                let edge = i * n_out + j;
                let mass = floor_mass[edge];
                if mass == 0.0 {
                    continue;
                }
                let g0 = 2 * e + edge * nb + basis.first;
                let mut s = 0.0;
                for m in 0..=order {
                    s += params[g0 + m] * basis.values[m];
                }
                gwb[edge] += mass * sx;
                gws[edge] += mass * s;
                let wsg = params[e + edge] * mass;
                let gg = &mut ggam[edge * nb + basis.first..edge * nb + basis.first + order + 1];
                for m in 0..=order {
                    gg[m] += wsg * basis.values[m];
                }
            }
        }
    }
    gx
}

/// d/dx of sum_j g_j psi_ij(x). The spline part is flat outside [-1, 1].
fn kan_input_grad(
    cfg: &KanLayerConfig,
    params: &[f64],
    i: usize,
    xv: f64,
    basis: &super::spline::LocalBasis,
    dbasis: &[f64],
    g: &[f64],
) -> f64 {
    let e = cfg.n_edges();
    let nb = cfg.n_bases();
    let dsilu = silu_derivative(xv);
    let inside = (-1.0..=1.0).contains(&xv);
    let mut acc = 0.0;
    for (j, &gj) in g.iter().enumerate().take(cfg.n_out) {
        let edge = i * cfg.n_out + j;
        let mut d = params[edge] * dsilu;
        if inside {
            let g0 = 2 * e + edge * nb + basis.first;
            let mut ds = 0.0;
            for m in 0..=cfg.spline_order {
                ds += params[g0 + m] * dbasis[m];
            }
            d += params[e + edge] * ds;
        }
        acc += gj * d;
    }
    acc
}
