//! Balanced binary neural networks with gated residuals.
//!
//! The crate covers the whole life cycle of a small binary network:
//!
//! * [`quant`]: balanced weight binarization (per-filter centering of a
//!   trainable proxy, then `sign · mean|w|`) and clip-round activation
//!   binarization with a masked straight-through gradient.
//! * [`layers`]: binary convolutions, gated residual units in four
//!   topologies, BasicCNN / ResNet-20 builders and a FLOPs counter.
//! * [`train`]: SGD training, evaluation, checkpoints, run reports.
//! * [`bitpack`]: sign/activation bit planes, AND+popcount convolution,
//!   the `.bbg` export format and an inference benchmark.
//! * [`data`]: MNIST IDX and CIFAR-10 binary loaders, augmentation and a
//!   synthetic two-class set.
//! * [`verify`]: finite-difference gradient checks and the invariant suite.
//!
//! Everything runs on the CPU in a single thread unless stated otherwise.

pub mod bitpack;
pub mod data;
pub mod error;
mod gemm;
pub mod layers;
pub mod ops;
pub mod quant;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod workflow;

pub use error::{Error, Result};
pub use tensor::{GradPair, Real, Shape4, Tensor4};
