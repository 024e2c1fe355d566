//! A small neural-network engine with hand-written reverse-mode gradients.

mod accounting;
mod adam;
mod checkpoint;
mod extractor;
mod layers;
mod loss;
mod network;
mod spline;
mod tensor;

pub use accounting::{count_flops, count_params, layer_flops, network_flops, network_params, ParamCount};
pub use adam::AdamState;
pub(crate) use checkpoint::Cursor;
pub use checkpoint::{decode_extractor, encode_extractor, load_extractor, save_extractor};
pub use extractor::{
    decoder_for, CnnBlock, ExtractorKind, ExtractorSpec, ExtractorTape, FeatureExtractor, Module,
    BYPASS_BODY_SCALE, CNN1D_BLOCKS, CNN2D_BLOCKS,
};
pub use layers::{
    kan_edge, kan_forward_batch, silu, silu_derivative, KanLayerConfig, Layer, Mode, BN_EPS,
    BN_MOMENTUM,
};
pub use loss::{mse, softmax_cross_entropy};
pub use network::{Network, Tape};
pub use spline::{LocalBasis, UniformBSpline, MAX_DEGREE};
pub use tensor::Tensor;
