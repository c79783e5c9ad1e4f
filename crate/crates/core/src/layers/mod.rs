//! Network layers, residual units and the two reference architectures.

mod binary;
mod block;
mod flops;
mod model;
mod nn;

pub use binary::BinaryConv;
pub use block::{gated_block_backward, gated_block_forward, BlockGrads, BlockVariant, ResidualUnit, Shortcut};
pub use flops::{count_flops, layer_ops, FlopsReport, BINARY_OP_DIVISOR};
pub use model::{build_model, parse_kernel_stage, Arch, HeadPool, LayerInfo, LayerRole, Model, ModelSpec};
pub use nn::{BatchNorm2d, Conv2d, Gate, Linear};

use crate::error::Result;
use crate::ops;
use crate::tensor::{GradPair, Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for backward.
    Train,
    /// Running statistics, no caches.
    Eval,
}

/// Which forward function binary layers use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Rounding quantizers with straight-through gradients.
    #[default]
    Ste,
    /// The quantizers' smooth surrogates (identity for weights, clip for
    /// activations), for finite-difference checking of the wiring.
    Surrogate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    LinearBias,
    BnGamma,
    BnBeta,
    Gate,
}

impl ParamKind {
    /// Weight decay applies to conv and classifier weights only.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }
}

/// Named traversal over trainable parameters and non-trainable buffers.
pub trait Params<T: Real> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>));

    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {}

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, _, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `r(x, s) = s ⊙ x`, channel `i` scaled by `s[i]`.
pub fn gate_apply<T: Real>(x: &Tensor4<T>, s: &[T]) -> Result<Tensor4<T>> {
    ops::scale_channels(x, s)
}
