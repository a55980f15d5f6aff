//! The instance classifier and its training primitives.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod model;
pub mod optim;

pub use activation::{instance_softmax, instance_softmax_backward, relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use loss::{masked_cross_entropy, LossOutput, TaskLabels};
pub use model::{FcnModel, ForwardCache, LayerSpec, ModelSpec};
pub use optim::{sgd_step, Sgd};
