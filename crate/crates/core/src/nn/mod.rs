//! Minimal 1-D CNN engine with deterministic and variational layers.
//!
//! Activations flow as row-major [`Tensor`]s shaped `[batch, length,
//! channels]` before [`LayerSpec::Flatten`] and `[batch, features]` after
//! it. Variational layers keep a `(mean, raw_scale)` pair per weight with
//! `scale = softplus(raw_scale)` and draw one weight sample per forward
//! pass. Gradients are computed by hand-written reverse-mode passes.

pub mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata};
pub use layers::{
    Activation, ArchitectureConfig, LayerSpec, ModelKind, Shape, BATCHNORM_EPSILON, BATCHNORM_MOMENTUM,
    DEFAULT_DROPOUT, INITIAL_RAW_SCALE,
};
pub use loss::{
    bernoulli_nll, bernoulli_nll_grad, elbo_loss, gaussian_kl, gaussian_kl_grad, reparameterize, sigmoid, softplus,
    softplus_inverse, PROB_CLAMP,
};
pub use model::{
    ForwardPass, Gradients, LossBreakdown, Mode, Model, Noise, Param, ParameterCount, PredictionDistribution,
    DEFAULT_PRIOR_SCALE,
};
pub use optim::{rmsprop_step, RmsProp};
pub use tensor::Tensor;
