//! Active-learning for image segmentation, end to end and self-contained:
//! a small trainable segmentation network with an entropy regularizer at its
//! abstraction layer, MC-dropout uncertainty, descriptor- and content-based
//! representativeness, and rank-aggregation sample querying, driven on
//! synthetic segmentation tasks.

// Index-style loops are the clearest form for the convolution kernels.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::excessive_precision)]
// `!(x > 0.0)` deliberately treats NaN as invalid; `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::manual_is_multiple_of)]

pub mod affinity;
pub mod alloop;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod micronet;
pub mod rng;
pub mod selection;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
