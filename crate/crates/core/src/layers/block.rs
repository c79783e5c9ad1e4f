use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ops;
use crate::quant::WeightQuant;
use crate::tensor::{GradPair, Real, Tensor4};

use super::binary::BinaryConv;
use super::nn::{BatchNorm2d, Conv2d, Gate};
use super::{join, Estimator, Mode, ParamKind, Params};

/// Residual topology.
///
/// `Vanilla` and `VanillaGated` wrap one shortcut around two binary convs;
/// `Bireal` and `Gated` wrap a shortcut around each conv. The gated forms
/// scale the shortcut per channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlockVariant {
    Vanilla,
    VanillaGated,
    Bireal,
    #[default]
    Gated,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 4] = [
        BlockVariant::Vanilla,
        BlockVariant::VanillaGated,
        BlockVariant::Bireal,
        BlockVariant::Gated,
    ];

    pub fn is_gated(self) -> bool {
        matches!(self, BlockVariant::Gated | BlockVariant::VanillaGated)
    }

    /// Shortcut around each conv rather than around a pair.
    pub fn per_conv(self) -> bool {
        matches!(self, BlockVariant::Gated | BlockVariant::Bireal)
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockVariant::Vanilla => "vanilla",
            BlockVariant::VanillaGated => "vanilla-gated",
            BlockVariant::Bireal => "bireal",
            BlockVariant::Gated => "gated",
        })
    }
}

impl FromStr for BlockVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BlockVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| format!("unknown variant '{s}' (expected vanilla|vanilla-gated|bireal|gated)"))
    }
}

/// The shortcut path `r(x)` of a residual unit.
#[derive(Clone, Debug)]
pub enum Shortcut<T = f32> {
    Identity,
    Gated(Gate<T>),
    /// Full-precision 1×1 strided conv + BN, optionally gated afterwards.
    Downsample {
        conv: Conv2d<T>,
        bn: BatchNorm2d<T>,
        gate: Option<Gate<T>>,
    },
}

impl<T: Real> Shortcut<T> {
    pub fn build<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, gated: bool, rng: &mut R) -> Self {
        if stride != 1 || cin != cout {
            Shortcut::Downsample {
                conv: Conv2d::init(cout, cin, 1, stride, 0, rng),
                bn: BatchNorm2d::new(cout),
                gate: gated.then(|| Gate::new(cout)),
            }
        } else if gated {
            Shortcut::Gated(Gate::new(cin))
        } else {
            Shortcut::Identity
        }
    }

    pub fn gate(&self) -> Option<&Gate<T>> {
        match self {
            Shortcut::Gated(g) => Some(g),
            Shortcut::Downsample { gate, .. } => gate.as_ref(),
            Shortcut::Identity => None,
        }
    }

    pub fn gate_mut(&mut self) -> Option<&mut Gate<T>> {
        match self {
            Shortcut::Gated(g) => Some(g),
            Shortcut::Downsample { gate, .. } => gate.as_mut(),
            Shortcut::Identity => None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        match self {
            Shortcut::Identity => Ok(x.clone()),
            Shortcut::Gated(g) => g.forward(x, mode),
            Shortcut::Downsample { conv, bn, gate } => {
                let z = bn.forward(&conv.forward(x, mode)?, mode)?;
                match gate {
                    Some(g) => g.forward(&z, mode),
                    None => Ok(z),
                }
            }
        }
    }

    pub fn backward(&mut self, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Shortcut::Identity => Ok(g_y.clone()),
            Shortcut::Gated(g) => g.backward(g_y),
            Shortcut::Downsample { conv, bn, gate } => {
                let g_z = match gate {
                    Some(g) => g.backward(g_y)?,
                    None => g_y.clone(),
                };
                let g = bn.backward(&g_z)?;
                Ok(conv.backward(&g, true)?.expect("input gradient requested"))
            }
        }
    }
}

impl<T: Real> Params<T> for Shortcut<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        match self {
            Shortcut::Identity => {}
            Shortcut::Gated(g) => g.visit_params(&join(prefix, "gate"), f),
            Shortcut::Downsample { conv, bn, gate } => {
                conv.visit_params(&join(prefix, "conv"), f);
                bn.visit_params(&join(prefix, "bn"), f);
                if let Some(g) = gate {
                    g.visit_params(&join(prefix, "gate"), f);
                }
            }
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        if let Shortcut::Downsample { bn, .. } = self {
            bn.visit_buffers(&join(prefix, "bn"), f);
        }
    }
}

/// `y = F(x) + r(x)` where `F` is a chain of one or two binary convs.
#[derive(Clone, Debug)]
pub struct ResidualUnit<T = f32> {
    pub body: Vec<BinaryConv<T>>,
    pub shortcut: Shortcut<T>,
}

impl<T: Real> ResidualUnit<T> {
    /// One unit of the given variant. Per-conv variants get a single conv;
    /// two-conv variants get a pair whose first conv carries the stride.
    pub fn build<R: Rng + ?Sized>(
        variant: BlockVariant,
        quant: WeightQuant,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let mut body = vec![BinaryConv::init(cin, cout, stride, quant, rng)];
        if !variant.per_conv() {
            body.push(BinaryConv::init(cout, cout, 1, quant, rng));
        }
        ResidualUnit {
            body,
            shortcut: Shortcut::build(cin, cout, stride, variant.is_gated(), rng),
        }
    }

    pub fn set_estimator(&mut self, estimator: Estimator) {
        self.body.iter_mut().for_each(|c| c.estimator = estimator);
    }

    /// Main path `F(x)` alone.
    pub fn forward_body(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let mut h = x.clone();
        for conv in &mut self.body {
            h = conv.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let f = self.forward_body(x, mode)?;
        let r = self.shortcut.forward(x, mode)?;
        ops::add(&f, &r)
    }

    /// `∂y/∂x = ∂F/∂x + ∂r/∂x`; parameter gradients accumulate in place.
    pub fn backward(&mut self, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = g_y.clone();
        for conv in self.body.iter_mut().rev() {
            g = conv.backward(&g)?;
        }
        let g_r = self.shortcut.backward(g_y)?;
        g.add_assign(&g_r)?;
        Ok(g)
    }
}

impl<T: Real> Params<T> for ResidualUnit<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        for (i, conv) in self.body.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("body.{i}")), f);
        }
        self.shortcut.visit_params(&join(prefix, "shortcut"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        for (i, conv) in self.body.iter_mut().enumerate() {
            conv.visit_buffers(&join(prefix, &format!("body.{i}")), f);
        }
        self.shortcut.visit_buffers(&join(prefix, "shortcut"), f);
    }
}

/// Forward pass of one gated (or identity) residual unit.
pub fn gated_block_forward<T: Real>(x: &Tensor4<T>, unit: &mut ResidualUnit<T>, mode: Mode) -> Result<Tensor4<T>> {
    unit.forward(x, mode)
}

/// Gradients of one unit after a training-mode forward.
#[derive(Clone, Debug)]
pub struct BlockGrads<T> {
    pub g_x: Tensor4<T>,
    /// Gradient of the gate vector, when the shortcut is gated.
    pub g_s: Option<Tensor4<T>>,
}

/// Backward pass of one unit. Gradients are computed from zeroed
/// accumulators, so `g_s` reflects this call only.
pub fn gated_block_backward<T: Real>(g_y: &Tensor4<T>, unit: &mut ResidualUnit<T>) -> Result<BlockGrads<T>> {
    unit.visit_params("", &mut |_, _, p| p.zero_grad());
    let g_x = unit.backward(g_y)?;
    let g_s = unit.shortcut.gate().map(|g| g.s.grad.clone());
    Ok(BlockGrads { g_x, g_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};

    fn zero_body<T: Real>(unit: &mut ResidualUnit<T>) {
        for conv in &mut unit.body {
            conv.bn.gamma.value.fill(T::zero());
            conv.bn.beta.value.fill(T::zero());
        }
    }

    #[test]
    fn variant_parsing_round_trips() {
        for v in BlockVariant::ALL {
            assert_eq!(v.to_string().parse::<BlockVariant>().unwrap(), v);
        }
        assert!("resnet".parse::<BlockVariant>().is_err());
    }

    #[test]
    fn topology_matches_variant() {
        let mut rng = SeedRng::new(1).stream(Stream::Test, 0);
        for v in BlockVariant::ALL {
            let u = ResidualUnit::<f32>::build(v, WeightQuant::Balanced, 4, 4, 1, &mut rng);
            assert_eq!(u.body.len(), if v.per_conv() { 1 } else { 2 });
            assert_eq!(u.shortcut.gate().is_some(), v.is_gated());
        }
        let down = ResidualUnit::<f32>::build(BlockVariant::Gated, WeightQuant::Balanced, 4, 8, 2, &mut rng);
        match &down.shortcut {
            Shortcut::Downsample { gate: Some(g), .. } => assert_eq!(g.channels(), 8),
            other => panic!("expected gated downsample, got {other:?}"),
        }
    }

    #[test]
    fn zero_body_with_gate_two_doubles_input() {
        let mut rng = SeedRng::new(2).stream(Stream::Test, 0);
        let mut u = ResidualUnit::<f32>::build(BlockVariant::Gated, WeightQuant::Balanced, 1, 1, 1, &mut rng);
        zero_body(&mut u);
        u.shortcut.gate_mut().unwrap().s.value.fill(2.0);
        let x = Tensor4::<f32>::randn([2, 1, 4, 4], 1.0, &mut rng);
        let y = u.forward(&x, Mode::Train).unwrap();
        assert_eq!(y, x.map(|v| 2.0 * v));
    }

    #[test]
    fn zero_body_identity_gate_passes_gradient() {
        let mut rng = SeedRng::new(3).stream(Stream::Test, 0);
        let mut u = ResidualUnit::<f32>::build(BlockVariant::Gated, WeightQuant::Balanced, 2, 2, 1, &mut rng);
        zero_body(&mut u);
        let x = Tensor4::<f32>::randn([2, 2, 3, 3], 1.0, &mut rng);
        u.forward(&x, Mode::Train).unwrap();
        let g = Tensor4::<f32>::randn([2, 2, 3, 3], 1.0, &mut rng);
        let grads = gated_block_backward(&g, &mut u).unwrap();
        assert_eq!(grads.g_x, g);
        // g_s[i] = Σ_{n,h,w} g·x, by loop
        let g_s = grads.g_s.unwrap();
        for c in 0..2 {
            let mut want = 0.0f64;
            for n in 0..2 {
                for h in 0..3 {
                    for w in 0..3 {
                        want += g.at(n, c, h, w) as f64 * x.at(n, c, h, w) as f64;
                    }
                }
            }
            assert!((g_s.data()[c] as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn gate_length_mismatch_rejected() {
        let mut g = Gate::<f32>::new(3);
        assert!(g.forward(&Tensor4::zeros([1, 2, 2, 2]), Mode::Eval).is_err());
    }
}
