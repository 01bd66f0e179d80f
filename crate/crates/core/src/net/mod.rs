//! Dense MLP with manual backpropagation and measurement primitives.

pub mod activation;
pub mod checkpoint;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod rng;

pub use activation::{sigma_gelu, sigma_gelu_prime, Activation, DEFAULT_SIGMA};
pub use gradcheck::{gradient_check, LayerGradCheck, FD_STEP};
pub use linalg::{coordinate_scale, coordinate_scale_mat, frobenius, spectral_norm, spectral_norm_warm, spectral_norm_with};
pub use loss::{accuracy, one_hot, Loss, LossEval};
pub use network::{Dims, GradientSet, InitSpec, Network, PassCache};
pub use rng::Stream;
