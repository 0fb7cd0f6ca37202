//! Spectral temporal graph network for multivariate time-series forecasting.
//!
//! The crate is self-contained: a reverse-mode autodiff tape over dense
//! tensors, explicit spectral kernels (dense DFT, graph Laplacian
//! eigendecomposition), a latent-correlation layer that learns the graph
//! from data, the two-block residual forecasting network, and the training
//! and evaluation machinery around them.

pub mod autodiff;
pub mod correlation;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod persist;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use autodiff::{finite_difference_gradient, Gradients, Tape};
pub use error::{Error, Result};
pub use model::{AblationFlags, ModelConfig, NetworkParams};
pub use spectral::{ComplexMatrix, SpectralBasis};
pub use tensor::{NodeId, Tensor};
pub use training::{Dataset, NormKind, NormStats, TrainConfig};
