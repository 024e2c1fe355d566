//! Parameter and FLOP accounting.
//!
//! FLOP model, per sample:
//! - convolution / linear: 2 per multiply-add (bias adds are not counted);
//! - batch norm: 2 per element; ReLU: 1 per element;
//! - max pooling: `window - 1` comparisons per output;
//! - KAN edge: `2 (G + 4)` for the coefficient dot product plus 4 to weight
//!   and sum the silu and spline terms; each input node adds `8 (G + 4)`
//!   for basis evaluation and 4 for silu;
//! - bypass: `2 d n_in`, plus `2 d` to scale and add the body output.

use serde::Serialize;

use super::extractor::ExtractorSpec;
use super::layers::Layer;
use super::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    /// KAN spline coefficients only.
    pub spline_coefficients: usize,
}

pub fn layer_flops(layer: &Layer, input: &[usize], output: &[usize]) -> u64 {
    let n_in: usize = input.iter().product();
    let n_out: usize = output.iter().product();
    let f = match layer {
        Layer::Conv1d { cin, k, .. } => n_out * 2 * cin * k,
        Layer::Conv2d { cin, k, .. } => n_out * 2 * cin * k * k,
        Layer::BatchNorm { .. } => 2 * n_in,
        Layer::Relu => n_in,
        Layer::MaxPool1d => n_out,
        Layer::MaxPool2d => 3 * n_out,
        Layer::Linear { nin, nout } => 2 * nin * nout,
        Layer::Kan(cfg) => {
            let nb = cfg.n_bases();
            cfg.n_edges() * (2 * nb + 4) + cfg.n_in * (8 * nb + 4)
        }
        Layer::Upsample1d { .. } | Layer::Upsample2d { .. } | Layer::Reshape { .. } => 0,
    };
    f as u64
}

pub fn network_flops(net: &Network) -> u64 {
    net.layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let out = if i + 1 < net.layers().len() {
                net.layer_input_shape(i + 1)
            } else {
                net.output_shape()
            };
            layer_flops(l, net.layer_input_shape(i), out)
        })
        .sum()
}

pub fn network_params(net: &Network) -> ParamCount {
    ParamCount {
        total: net.param_len(),
        spline_coefficients: net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Kan(cfg) => cfg.spline_coefficients(),
                _ => 0,
            })
            .sum(),
    }
}

/// Trainable scalars of an extractor. A PCA extractor counts its projection
/// matrix only (`d * n_in`).
pub fn count_params(spec: &ExtractorSpec) -> ParamCount {
    let body = spec.body.as_ref().map(network_params).unwrap_or(ParamCount {
        total: 0,
        spline_coefficients: 0,
    });
    let bypass = match spec.body {
        None => spec.feature_size * spec.n_in(),
        Some(_) => spec.bypass_param_len(),
    };
    ParamCount {
        total: body.total + bypass,
        spline_coefficients: body.spline_coefficients,
    }
}

pub fn count_flops(spec: &ExtractorSpec) -> u64 {
    let d = spec.feature_size as u64;
    let n = spec.n_in() as u64;
    let body = spec.body.as_ref().map_or(0, network_flops);
    match (&spec.body, spec.bypass) {
        (None, _) => 2 * d * n,
        (Some(_), true) => body + 2 * d * n + 2 * d,
        (Some(_), false) => body,
    }
}
