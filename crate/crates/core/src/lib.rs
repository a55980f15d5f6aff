//! Multiple instance learning with a fully convolutional instance classifier.
//!
//! An image (a *bag*) is scored by a small FCN whose output grid holds one
//! class distribution per *instance*, the receptive field behind each grid
//! cell. An aggregation layer pools the foreground instances into a bag
//! prediction: masked max, masked mean, or quantile-function pooling followed
//! by a learned softmax head. Training applies the bag label to random
//! foreground-rich crops (MI augmentation) while test-time evaluation always
//! uses the whole image.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod agg;
pub mod augment;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod train;

#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/instance-classifier.md")]
    mod instance_classifier {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/augmentation.md")]
    mod augmentation {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
