//! Zero-shot self-supervised unknown emitter detection.
//!
//! The crate is organised as a pipeline:
//!
//! * [`synth`] generates emitter fingerprints and same/different message datasets,
//! * [`modality`] turns traces into normalized I/Q tensors or constellation grids,
//! * [`nn`] holds the feature extractors (CNN, KAN, SVD bypass, PCA) and their gradients,
//! * [`ssl`] trains extractors with deep clustering, auto-encoding or contrastive learning,
//! * [`detector`] implements the cluster-distance quantile decision rule,
//! * [`metrics`] scores detections (ROC-AUC, NMI, F1),
//! * [`harness`] runs leave-emitters-out cross-validation and sweeps,
//! * [`interpret`] exports LIME fits and KAN importances,
//! * [`dataio`] persists datasets in the `UED1` binary layout.

pub mod dataio;
pub mod detector;
pub mod error;
pub mod harness;
pub mod interpret;
pub mod metrics;
pub mod modality;
pub mod nn;
pub mod numerics;
pub mod ssl;
pub mod synth;

pub use error::{Error, Result};
