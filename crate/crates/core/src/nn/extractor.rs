//! Feature extractors, heads and decoders.

use serde::{Deserialize, Serialize};

use super::layers::{KanLayerConfig, Layer, Mode};
use super::network::{Network, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, Matrix, RngState, SvdResult};

/// Weight of the extractor body when a linear bypass is present.
pub const BYPASS_BODY_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Cnn1d,
    Cnn2d,
    Kan,
    Pca,
}

impl ExtractorKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExtractorKind::Cnn1d => "cnn1d",
            ExtractorKind::Cnn2d => "cnn2d",
            ExtractorKind::Kan => "kan",
            ExtractorKind::Pca => "pca",
        }
    }
}

/// One CNN block: convolution with `channels` outputs and kernel `kernel`,
/// batch norm, ReLU, max pool by 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnBlock {
    pub channels: usize,
    pub kernel: usize,
}

pub const CNN1D_BLOCKS: [CnnBlock; 4] = [
    CnnBlock { channels: 8, kernel: 7 },
    CnnBlock { channels: 16, kernel: 5 },
    CnnBlock { channels: 16, kernel: 5 },
    CnnBlock { channels: 224, kernel: 3 },
];

pub const CNN2D_BLOCKS: [CnnBlock; 4] = [
    CnnBlock { channels: 8, kernel: 3 },
    CnnBlock { channels: 16, kernel: 3 },
    CnnBlock { channels: 32, kernel: 3 },
    CnnBlock { channels: 160, kernel: 5 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub feature_size: usize,
    pub input_shape: Vec<usize>,
    /// Trainable body; absent for PCA.
    pub body: Option<Network>,
    /// Linear bypass `W x + b` added to `body(x) / 10`.
    pub bypass: bool,
}

fn cnn_layers(input_shape: &[usize], blocks: &[CnnBlock], feature_size: usize) -> Vec<Layer> {
    let two_d = input_shape.len() == 3;
    let mut layers = Vec::new();
    let mut c = input_shape[0];
    let mut spatial: Vec<usize> = input_shape[1..].to_vec();
    for b in blocks {
        layers.push(if two_d {
            Layer::Conv2d { cin: c, cout: b.channels, k: b.kernel }
        } else {
            Layer::Conv1d { cin: c, cout: b.channels, k: b.kernel }
        });
        layers.push(Layer::BatchNorm { channels: b.channels });
        layers.push(Layer::Relu);
        layers.push(if two_d { Layer::MaxPool2d } else { Layer::MaxPool1d });
        c = b.channels;
        spatial.iter_mut().for_each(|s| *s /= 2);
    }
    let flat = c * spatial.iter().product::<usize>();
    layers.push(Layer::Linear { nin: flat, nout: feature_size });
    layers
}

impl ExtractorSpec {
    pub fn cnn1d(trace_len: usize, feature_size: usize) -> Result<Self> {
        Self::cnn(vec![2, trace_len], &CNN1D_BLOCKS, ExtractorKind::Cnn1d, feature_size)
    }

    pub fn cnn2d(grid: usize, feature_size: usize) -> Result<Self> {
        Self::cnn(vec![1, grid, grid], &CNN2D_BLOCKS, ExtractorKind::Cnn2d, feature_size)
    }

    pub fn cnn(
        input_shape: Vec<usize>,
        blocks: &[CnnBlock],
        kind: ExtractorKind,
        feature_size: usize,
    ) -> Result<Self> {
        let layers = cnn_layers(&input_shape, blocks, feature_size);
        Ok(ExtractorSpec {
            kind,
            feature_size,
            body: Some(Network::new(input_shape.clone(), layers)?),
            input_shape,
            bypass: false,
        })
    }

    pub fn kan(n_in: usize, feature_size: usize, grid: usize) -> Result<Self> {
        let cfg = KanLayerConfig::new(n_in, feature_size, grid);
        Ok(ExtractorSpec {
            kind: ExtractorKind::Kan,
            feature_size,
            input_shape: vec![n_in],
            body: Some(Network::new(vec![n_in], vec![Layer::Kan(cfg)])?),
            bypass: false,
        })
    }

    pub fn pca(input_shape: Vec<usize>, feature_size: usize) -> Self {
        ExtractorSpec {
            kind: ExtractorKind::Pca,
            feature_size,
            input_shape,
            body: None,
            bypass: true,
        }
    }

    pub fn with_bypass(mut self) -> Self {
        self.bypass = true;
        self
    }

    pub fn n_in(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn body_param_len(&self) -> usize {
        self.body.as_ref().map_or(0, Network::param_len)
    }

    pub fn bypass_param_len(&self) -> usize {
        if self.bypass {
            self.feature_size * (self.n_in() + 1)
        } else {
            0
        }
    }

    pub fn param_len(&self) -> usize {
        self.body_param_len() + self.bypass_param_len()
    }

    pub fn state_len(&self) -> usize {
        self.body.as_ref().map_or(0, Network::state_len)
    }

    /// The single KAN layer of a KAN extractor.
    pub fn kan_config(&self) -> Option<KanLayerConfig> {
        match self.body.as_ref()?.layers() {
            [Layer::Kan(cfg)] => Some(*cfg),
            _ => None,
        }
    }
}

/// Backward-pass record of one extractor forward.
pub struct ExtractorTape {
    body: Option<Tape>,
    input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub spec: ExtractorSpec,
    /// `[body | W (d x n_in, row-major) | b (d)]`
    pub params: Vec<f64>,
    /// Batch-norm running statistics.
    pub state: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(spec: ExtractorSpec, rng: &mut RngState) -> Self {
        let (mut params, state) = match &spec.body {
            Some(net) => net.init(rng),
            None => (Vec::new(), Vec::new()),
        };
        params.resize(spec.param_len(), 0.0);
        FeatureExtractor { spec, params, state }
    }

    pub fn from_parts(spec: ExtractorSpec, params: Vec<f64>, state: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_len() || state.len() != spec.state_len() {
            return Err(Error::validation(format!(
                "expected {} parameters and {} state values, got {} and {}",
                spec.param_len(),
                spec.state_len(),
                params.len(),
                state.len()
            )));
        }
        Ok(FeatureExtractor { spec, params, state })
    }

    pub fn kind(&self) -> ExtractorKind {
        self.spec.kind
    }

    pub fn feature_size(&self) -> usize {
        self.spec.feature_size
    }

    pub fn body_params(&self) -> &[f64] {
        &self.params[..self.spec.body_param_len()]
    }

    pub fn body_params_mut(&mut self) -> &mut [f64] {
        let n = self.spec.body_param_len();
        &mut self.params[..n]
    }

    fn bypass_split(&self) -> usize {
        self.spec.body_param_len() + self.spec.feature_size * self.spec.n_in()
    }

    /// Sets the bypass to `W (x - mean)` from a truncated SVD of the
    /// training inputs.
    pub fn set_bypass_from_svd(&mut self, svd: &SvdResult) -> Result<()> {
        let d = self.spec.feature_size;
        let p = self.spec.n_in();
        if !self.spec.bypass {
            return Err(Error::validation("extractor has no bypass"));
        }
        if svd.components.rows() != d || svd.components.cols() != p {
            return Err(Error::dimension(format!(
                "SVD components are {}x{}, bypass needs {d}x{p}",
                svd.components.rows(),
                svd.components.cols()
            )));
        }
        let start = self.spec.body_param_len();
        let split = self.bypass_split();
        self.params[start..split].copy_from_slice(svd.components.data());
        for j in 0..d {
            self.params[split + j] = -dot(svd.components.row(j), &svd.mean);
        }
        Ok(())
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.sample_shape() != self.spec.input_shape.as_slice() {
            return Err(Error::validation(format!(
                "extractor expects input {:?}, got {:?}",
                self.spec.input_shape,
                x.sample_shape()
            )));
        }
        Ok(())
    }

    fn add_bypass(&self, x: &Tensor, out: &mut Tensor) {
        let d = self.spec.feature_size;
        let n_in = self.spec.n_in();
        let start = self.spec.body_param_len();
        let split = self.bypass_split();
        let w = &self.params[start..split];
        let b = &self.params[split..split + d];
        for bi in 0..x.batch() {
            let xs = x.sample(bi);
            let ys = out.sample_mut(bi);
            for j in 0..d {
                ys[j] += b[j] + dot(&w[j * n_in..(j + 1) * n_in], xs);
            }
        }
    }

    fn combine(&self, x: &Tensor, body_out: Option<Tensor>) -> Tensor {
        let mut out = match body_out {
            Some(mut y) => {
                if self.spec.bypass {
                    y.scale(BYPASS_BODY_SCALE);
                }
                y
            }
            None => Tensor::zeros(vec![x.batch(), self.spec.feature_size]),
        };
        if self.spec.bypass {
            self.add_bypass(x, &mut out);
        }
        out
    }

    /// Training-mode forward; updates batch-norm running statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ExtractorTape)> {
        self.check(x)?;
        let nb = self.spec.body_param_len();
        let tape = match &self.spec.body {
            Some(net) => Some(net.forward(&self.params[..nb], &mut self.state, x, Mode::Train)?),
            None => None,
        };
        let out = self.combine(x, tape.as_ref().map(|t| t.output.clone()));
        Ok((
            out,
            ExtractorTape {
                body: tape,
                input: x.clone(),
            },
        ))
    }

    /// Eval-mode forward keeping a tape (used for gradient checks and
    /// interpretation).
    pub fn forward_eval_tape(&self, x: &Tensor) -> Result<(Tensor, ExtractorTape)> {
        self.check(x)?;
        let nb = self.spec.body_param_len();
        let mut scratch = self.state.clone();
        let tape = match &self.spec.body {
            Some(net) => Some(net.forward(&self.params[..nb], &mut scratch, x, Mode::Eval)?),
            None => None,
        };
        let out = self.combine(x, tape.as_ref().map(|t| t.output.clone()));
        Ok((
            out,
            ExtractorTape {
                body: tape,
                input: x.clone(),
            },
        ))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let nb = self.spec.body_param_len();
        let body = match &self.spec.body {
            Some(net) => Some(net.predict(&self.params[..nb], &self.state, x)?),
            None => None,
        };
        Ok(self.combine(x, body))
    }

    /// Embeds samples in eval mode, `batch` at a time.
    pub fn embed(&self, samples: &[&[f64]], batch: usize) -> Result<Matrix> {
        let d = self.spec.feature_size;
        let mut out = Vec::with_capacity(samples.len() * d);
        for chunk in samples.chunks(batch.max(1)) {
            let x = Tensor::stack(&self.spec.input_shape, chunk)?;
            out.extend_from_slice(self.predict(&x)?.data());
        }
        Matrix::from_vec(samples.len(), d, out)
    }

    /// Accumulates gradients of every parameter into `grads`.
    pub fn backward(&self, tape: &ExtractorTape, gy: &Tensor, grads: &mut [f64], need_input: bool) -> Option<Tensor> {
        let nb = self.spec.body_param_len();
        let d = self.spec.feature_size;
        let n_in = self.spec.n_in();
        let x = &tape.input;
        let mut gx = None;
        if let (Some(net), Some(body_tape)) = (&self.spec.body, &tape.body) {
            let mut gbody = gy.clone();
            if self.spec.bypass {
                gbody.scale(BYPASS_BODY_SCALE);
            }
            gx = net.backward(&self.params[..nb], body_tape, gbody, &mut grads[..nb], need_input);
        }
        if self.spec.bypass {
            let split = self.bypass_split();
            let w = &self.params[nb..split];
            let mut gx_bypass = need_input.then(|| Tensor::zeros(x.shape().to_vec()));
            let (gw, gb) = grads[nb..].split_at_mut(d * n_in);
            for bi in 0..x.batch() {
                let xs = x.sample(bi);
                let g = gy.sample(bi);
                for j in 0..d {
                    gb[j] += g[j];
                    axpy(g[j], xs, &mut gw[j * n_in..(j + 1) * n_in]);
                    if let Some(gxb) = gx_bypass.as_mut() {
                        axpy(g[j], &w[j * n_in..(j + 1) * n_in], gxb.sample_mut(bi));
                    }
                }
            }
            gx = match (gx, gx_bypass) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    Some(a)
                }
                (None, b) => b,
                (a, None) => a,
            };
        }
        gx
    }
}

/// A network together with its parameters; used for heads and decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub net: Network,
    pub params: Vec<f64>,
    pub state: Vec<f64>,
}

impl Module {
    pub fn new(net: Network, rng: &mut RngState) -> Self {
        let (params, state) = net.init(rng);
        Module { net, params, state }
    }

    /// Linear classification head `d -> classes`.
    pub fn linear_head(d: usize, classes: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Module::new(
            Network::new(vec![d], vec![Layer::Linear { nin: d, nout: classes }])?,
            rng,
        ))
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tape> {
        self.net.forward(&self.params, &mut self.state, x, Mode::Train)
    }

    pub fn forward_eval_tape(&self, x: &Tensor) -> Result<Tape> {
        let mut scratch = self.state.clone();
        self.net.forward(&self.params, &mut scratch, x, Mode::Eval)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.net.predict(&self.params, &self.state, x)
    }

    pub fn backward(&self, tape: &Tape, gy: Tensor, grads: &mut [f64], need_input: bool) -> Option<Tensor> {
        self.net.backward(&self.params, tape, gy, grads, need_input)
    }
}

/// Decoder network mapping `d` features back to the extractor input shape.
///
/// CNN decoders mirror the encoder with nearest up-sampling and convolutions;
/// KAN decoders are one KAN layer `d -> n_in`.
pub fn decoder_for(spec: &ExtractorSpec) -> Result<Network> {
    let d = spec.feature_size;
    match spec.kind {
        ExtractorKind::Kan => {
            let grid = spec.kan_config().map_or(10, |c| c.grid);
            let n = spec.n_in();
            Network::new(vec![d], vec![Layer::Kan(KanLayerConfig::new(d, n, grid))])
        }
        ExtractorKind::Cnn1d | ExtractorKind::Cnn2d => {
            let body = spec
                .body
                .as_ref()
                .ok_or_else(|| Error::validation("CNN extractor without body"))?;
            cnn_decoder(body, d)
        }
        ExtractorKind::Pca => Err(Error::validation("PCA extractors have no decoder")),
    }
}

fn cnn_decoder(encoder: &Network, d: usize) -> Result<Network> {
    // (conv layer index, its input shape) for each encoder block
    let convs: Vec<(usize, Vec<usize>, &Layer)> = encoder
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Conv1d { .. } | Layer::Conv2d { .. }))
        .map(|(i, l)| (i, encoder.layer_input_shape(i).to_vec(), l))
        .collect();
    let last = encoder.layers().len() - 1;
    let bottleneck = encoder.layer_input_shape(last).to_vec();
    let flat: usize = bottleneck.iter().product();
    let mut layers = vec![
        Layer::Linear { nin: d, nout: flat },
        Layer::Reshape { shape: bottleneck },
    ];
    for (n, (_, in_shape, conv)) in convs.iter().enumerate().rev() {
        let target_c = in_shape[0];
        layers.push(match in_shape.len() {
            2 => Layer::Upsample1d { out_len: in_shape[1] },
            _ => Layer::Upsample2d {
                out_h: in_shape[1],
                out_w: in_shape[2],
            },
        });
        let (cin, k) = match conv {
            Layer::Conv1d { cout, k, .. } | Layer::Conv2d { cout, k, .. } => (*cout, *k),
            _ => unreachable!(),
        };
        layers.push(match in_shape.len() {
            2 => Layer::Conv1d { cin, cout: target_c, k },
            _ => Layer::Conv2d { cin, cout: target_c, k },
        });
        if n > 0 {
            layers.push(Layer::BatchNorm { channels: target_c });
            layers.push(Layer::Relu);
        }
    }
    Network::new(vec![d], layers)
}
