//! Small differentiable-layer toolkit with hand-written backward passes.

mod container;
mod conv;
mod gradcheck;
mod layers;
mod mlp;
mod tensor;

pub use container::{Container, MAGIC, VERSION};
pub use conv::{TextCnnConfig, TextCnnParams, TextTape, TokenCache};
pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckReport, MAX_GRADCHECK_PARAMS};
pub use layers::{
    dense_backward, dense_forward, sigmoid, softplus, Activation, LayerParams, Param, Parameterized,
};
pub use mlp::{ForwardTape, Mlp};
pub use tensor::Tensor;
