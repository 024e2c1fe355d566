use serde::{Deserialize, Serialize};

use super::layers::{Cache, Layer, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::numerics::RngState;

/// A chain of layers with precomputed shapes and parameter offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkDef", into = "NetworkDef")]
pub struct Network {
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the output shape.
    shapes: Vec<Vec<usize>>,
    param_offsets: Vec<usize>,
    state_offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDef {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl TryFrom<NetworkDef> for Network {
    type Error = Error;
    fn try_from(d: NetworkDef) -> Result<Self> {
        Network::new(d.input_shape, d.layers)
    }
}

impl From<Network> for NetworkDef {
    fn from(n: Network) -> Self {
        NetworkDef {
            input_shape: n.shapes[0].clone(),
            layers: n.layers,
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    pub output: Tensor,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut param_offsets = vec![0];
        let mut state_offsets = vec![0];
        for layer in &layers {
            if let Layer::Kan(cfg) = layer {
                cfg.validate()?;
            }
            let next = layer.output_shape(shapes.last().expect("nonempty"))?;
            shapes.push(next);
            param_offsets.push(param_offsets.last().unwrap() + layer.param_len());
            state_offsets.push(state_offsets.last().unwrap() + layer.state_len());
        }
        Ok(Network {
            layers,
            shapes,
            param_offsets,
            state_offsets,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("nonempty")
    }

    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn param_len(&self) -> usize {
        *self.param_offsets.last().unwrap()
    }

    pub fn state_len(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn param_range(&self, i: usize) -> std::ops::Range<usize> {
        self.param_offsets[i]..self.param_offsets[i + 1]
    }

    pub fn init(&self, rng: &mut RngState) -> (Vec<f64>, Vec<f64>) {
        let mut params = vec![0.0; self.param_len()];
        let mut state = vec![0.0; self.state_len()];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.init_params(&mut params[self.param_range(i)], rng);
            layer.init_state(&mut state[self.state_offsets[i]..self.state_offsets[i + 1]]);
        }
        (params, state)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.sample_shape() != self.input_shape() {
            return Err(Error::validation(format!(
                "input shape {:?} does not match {:?}",
                x.sample_shape(),
                self.input_shape()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping a tape. Training mode updates batch-norm running
    /// statistics in `state`.
    pub fn forward(&self, params: &[f64], state: &mut [f64], x: &Tensor, mode: Mode) -> Result<Tape> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let s = &mut state[self.state_offsets[i]..self.state_offsets[i + 1]];
            let (y, cache) = layer.forward(&params[self.param_range(i)], s, &cur, mode, &self.shapes[i + 1]);
            inputs.push(std::mem::replace(&mut cur, y));
            caches.push(cache);
        }
        Ok(Tape {
            inputs,
            caches,
            output: cur,
        })
    }

    /// Eval-mode forward without a tape.
    pub fn predict(&self, params: &[f64], state: &[f64], x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut scratch = state.to_vec();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let s = &mut scratch[self.state_offsets[i]..self.state_offsets[i + 1]];
            cur = layer
                .forward(&params[self.param_range(i)], s, &cur, Mode::Eval, &self.shapes[i + 1])
                .0;
        }
        Ok(cur)
    }

    /// Accumulates parameter gradients into `grads`; returns the gradient with
    /// respect to the network input when `need_input` is set.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        gy: Tensor,
        grads: &mut [f64],
        need_input: bool,
    ) -> Option<Tensor> {
        let mut g = gy;
        for i in (0..self.layers.len()).rev() {
            let need = need_input || i > 0;
            let r = self.param_range(i);
            match self.layers[i].backward(
                &params[r.clone()],
                &tape.inputs[i],
                &tape.caches[i],
                &g,
                &mut grads[r],
                need,
            ) {
                Some(gx) => g = gx,
                None => return None,
            }
        }
        Some(g)
    }
}
