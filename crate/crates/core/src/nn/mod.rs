//! Minimal dense/convolutional stack with hand-written reverse-mode
//! gradients, Adam, and the parameter-vector arithmetic used by the
//! meta-learner's outer update.
//!
//! The graph is fixed (conv blocks -> three fully-connected modules
//! with batch norm and ReLU), so gradients are computed by explicit
//! per-layer backward passes over cached activations rather than a
//! general autodiff tape.

pub mod adam;
pub mod checkpoint;
mod gemm;
pub mod layers;
pub mod loss;
pub mod model;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use loss::softmax_cross_entropy;
pub use model::{
    backward, forward, forward_eval, init_params, replace_head, BatchNormState, BnMode, Cache,
    ModelSpec,
};
pub use params::{param_axpy, param_axpy_invocations, ParamSet};
pub use tensor::Tensor;
