//! Deterministic numerical kernels: seeded RNG, dense matrices, truncated SVD
//! and K-means.

mod kmeans;
mod matrix;
mod rng;
mod svd;

pub use kmeans::{kmeans_assign, kmeans_fit, kmeans_fit_restarts, KMeansModel, DEFAULT_MAX_ITER};
pub use matrix::{axpy, dot, norm, squared_distance, Matrix};
pub use rng::RngState;
pub use svd::{svd_topk, symmetric_eigen, SvdResult, SymmetricEigen};
