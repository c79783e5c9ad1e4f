use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Real;

use super::model::{LayerInfo, LayerRole, Model};

/// Binary multiply-accumulates are charged at 1/64 of a float op.
pub const BINARY_OP_DIVISOR: u64 = 64;

/// Per-sample operation counts, multiply-accumulate counted once.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    /// Stem, downsample and classifier layers.
    pub float_ops: u64,
    /// Binary layers before the divisor.
    pub binary_ops: u64,
    /// `binary_ops / 64`.
    pub binary_equivalent: f64,
    /// `c·h·w` per gate.
    pub gate_ops: u64,
    /// `float_ops + binary_equivalent + gate_ops`.
    pub total: f64,
}

impl FlopsReport {
    pub fn add_layer(&mut self, layer: &LayerInfo) {
        let [c, h, w] = layer.out;
        match layer.role {
            LayerRole::Gate => self.gate_ops += (c * h * w) as u64,
            LayerRole::Binary => self.binary_ops += layer_ops(layer),
            LayerRole::Stem | LayerRole::Downsample | LayerRole::Classifier => self.float_ops += layer_ops(layer),
        }
        self.binary_equivalent = self.binary_ops as f64 / BINARY_OP_DIVISOR as f64;
        self.total = self.float_ops as f64 + self.binary_equivalent + self.gate_ops as f64;
    }
}

/// `output pixels · Cout · Cin · Kh · Kw` for a conv or fc layer.
pub fn layer_ops(layer: &LayerInfo) -> u64 {
    let [_, h, w] = layer.out;
    (h * w * layer.weight.numel()) as u64
}

pub fn count_flops<T: Real>(model: &Model<T>) -> Result<FlopsReport> {
    let mut report = FlopsReport::default();
    for layer in model.describe()? {
        report.add_layer(&layer);
    }
    Ok(report)
}
