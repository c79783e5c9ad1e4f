use crate::error::{Error, Result};
use crate::layers::{Estimator, HeadPool, Model, Shortcut};
use crate::ops;
use crate::tensor::Tensor4;

use super::conv::{packed_conv2d, PackedConv};

/// Which activation register a layer reads and writes.
///
/// Units run their body on the main register and their shortcut on the
/// skip register; `fork` copies main into skip before the layer and
/// `merge` adds skip into main after it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Route {
    pub fork: bool,
    pub on_skip: bool,
    pub merge: bool,
}

impl Route {
    pub const MAIN: Route = Route {
        fork: false,
        on_skip: false,
        merge: false,
    };
    pub const SKIP: Route = Route {
        fork: false,
        on_skip: true,
        merge: false,
    };

    pub fn bits(self) -> u32 {
        self.fork as u32 | (self.on_skip as u32) << 1 | (self.merge as u32) << 2
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        (bits < 8).then_some(Route {
            fork: bits & 1 != 0,
            on_skip: bits & 2 != 0,
            merge: bits & 4 != 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max { k: usize, stride: usize },
    Avg { k: usize, stride: usize },
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PackedLayer {
    FpConv {
        weight: Tensor4<f32>,
        stride: usize,
        pad: usize,
    },
    BinConv(PackedConv),
    Fc {
        weight: Tensor4<f32>,
        bias: Tensor4<f32>,
    },
    Gate(Vec<f32>),
    Pool(PoolKind),
    /// Folded batch norm, optionally followed by ReLU.
    Affine {
        scale: Vec<f32>,
        shift: Vec<f32>,
        relu: bool,
    },
}

impl PackedLayer {
    pub fn tag(&self) -> u8 {
        match self {
            PackedLayer::FpConv { .. } => 0,
            PackedLayer::BinConv(_) => 1,
            PackedLayer::Fc { .. } => 2,
            PackedLayer::Gate(_) => 3,
            PackedLayer::Pool(_) => 4,
            PackedLayer::Affine { .. } => 5,
        }
    }

    fn apply(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        match self {
            PackedLayer::FpConv { weight, stride, pad } => ops::conv2d(x, weight, *stride, *pad),
            PackedLayer::BinConv(conv) => packed_conv2d(conv, x),
            PackedLayer::Fc { weight, bias } => ops::linear(x, weight, bias),
            PackedLayer::Gate(s) => ops::scale_channels(x, s),
            PackedLayer::Pool(PoolKind::Max { k, stride }) => Ok(ops::maxpool2d(x, *k, *stride)?.0),
            PackedLayer::Pool(PoolKind::Avg { k, stride }) => ops::avgpool2d(x, *k, *stride),
            PackedLayer::Pool(PoolKind::Global) => Ok(ops::global_avg_pool(x)),
            PackedLayer::Affine { scale, shift, relu } => {
                let mut y = x.clone();
                ops::apply_affine(&mut y, scale, shift)?;
                Ok(if *relu { ops::relu(&y) } else { y })
            }
        }
    }
}

/// The deployment form of a model: binary layers as sign bit planes with
/// folded affines, everything else verbatim in `f32`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PackedModel {
    pub layers: Vec<(PackedLayer, Route)>,
}

impl PackedModel {
    /// Exports the eval-mode behaviour of `model`.
    pub fn from_model(model: &Model<f32>) -> Result<Self> {
        let mut layers = Vec::new();
        let stem = &model.stem_conv;
        layers.push((
            PackedLayer::FpConv {
                weight: stem.weight.value.clone(),
                stride: stem.stride,
                pad: stem.pad,
            },
            Route::MAIN,
        ));
        let (scale, shift) = model.stem_bn.folded(1.0);
        layers.push((PackedLayer::Affine { scale, shift, relu: true }, Route::MAIN));
        if model.stem_maxpool {
            layers.push((PackedLayer::Pool(PoolKind::Max { k: 2, stride: 2 }), Route::MAIN));
        }

        for (u, unit) in model.units.iter().enumerate() {
            let start = layers.len();
            for conv in &unit.body {
                if conv.estimator != Estimator::Ste || !conv.quantize_input {
                    return Err(Error::InvalidArgument(format!(
                        "unit {u}: only straight-through binary convs with binarized inputs can be packed"
                    )));
                }
                let bw = conv.balanced_weight();
                let (scale, shift) = conv.bn.folded(bw.alpha);
                let packed = PackedConv::new(&bw.signs, bw.alpha, scale, shift, conv.stride, conv.pad)?;
                layers.push((PackedLayer::BinConv(packed), Route::MAIN));
            }
            match &unit.shortcut {
                Shortcut::Identity => {}
                Shortcut::Gated(g) => layers.push((PackedLayer::Gate(g.s.value.data().to_vec()), Route::SKIP)),
                Shortcut::Downsample { conv, bn, gate } => {
                    layers.push((
                        PackedLayer::FpConv {
                            weight: conv.weight.value.clone(),
                            stride: conv.stride,
                            pad: conv.pad,
                        },
                        Route::SKIP,
                    ));
                    let (scale, shift) = bn.folded(1.0);
                    layers.push((PackedLayer::Affine { scale, shift, relu: false }, Route::SKIP));
                    if let Some(g) = gate {
                        layers.push((PackedLayer::Gate(g.s.value.data().to_vec()), Route::SKIP));
                    }
                }
            }
            layers[start].1.fork = true;
            layers.last_mut().expect("unit emitted layers").1.merge = true;
        }

        layers.push((
            PackedLayer::Pool(match model.head_pool {
                HeadPool::Avg(k) => PoolKind::Avg { k, stride: k },
                HeadPool::Global => PoolKind::Global,
            }),
            Route::MAIN,
        ));
        layers.push((
            PackedLayer::Fc {
                weight: model.fc.weight.value.clone(),
                bias: model.fc.bias.value.clone(),
            },
            Route::MAIN,
        ));
        Ok(PackedModel { layers })
    }

    /// Logits `(N, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        let mut main = x.clone();
        let mut skip: Option<Tensor4<f32>> = None;
        for (i, (layer, route)) in self.layers.iter().enumerate() {
            if route.fork {
                skip = Some(main.clone());
            }
            if route.on_skip {
                let s = skip.as_ref().ok_or_else(|| routing_error(i, "reads the skip register before a fork"))?;
                skip = Some(layer.apply(s)?);
            } else {
                main = layer.apply(&main)?;
            }
            if route.merge {
                let s = skip.take().ok_or_else(|| routing_error(i, "merges without a fork"))?;
                main = ops::add(&main, &s)?;
            }
        }
        Ok(main)
    }

    pub fn predict(&self, x: &Tensor4<f32>) -> Result<Vec<usize>> {
        Ok(ops::argmax_rows(&self.forward(x)?))
    }

    pub fn binary_layers(&self) -> impl Iterator<Item = &PackedConv> {
        self.layers.iter().filter_map(|(l, _)| match l {
            PackedLayer::BinConv(c) => Some(c),
            _ => None,
        })
    }
}

fn routing_error(layer: usize, detail: &str) -> Error {
    Error::InvalidArgument(format!("packed layer {layer} {detail}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BlockVariant, Mode, ModelSpec};
    use crate::rng::{SeedRng, Stream};

    fn warmed(spec: &ModelSpec, seed: u64) -> (Model<f32>, Tensor4<f32>) {
        let mut m = Model::<f32>::new(spec, seed).unwrap();
        let mut rng = SeedRng::new(seed).stream(Stream::Test, 0);
        let [c, h, w] = spec.input;
        let x = Tensor4::<f32>::uniform([6, c, h, w], 0.0, 1.0, &mut rng);
        // Populate running statistics so the folded affines are non-trivial.
        for _ in 0..3 {
            m.forward(&x, Mode::Train).unwrap();
        }
        (m, x)
    }

    #[test]
    fn logits_match_float_engine_bitwise() {
        for variant in BlockVariant::ALL {
            let spec = ModelSpec::basiccnn().with_variant(variant).with_input([1, 12, 12], 4);
            let (mut m, x) = warmed(&spec, 7);
            let packed = PackedModel::from_model(&m).unwrap();
            assert_eq!(packed.forward(&x).unwrap(), m.forward(&x, Mode::Eval).unwrap(), "{variant}");
        }
    }

    #[test]
    fn resnet_with_downsample_matches() {
        let spec = ModelSpec {
            kernel_stage: [4, 8, 8],
            ..ModelSpec::resnet20().with_input([3, 8, 8], 10)
        };
        let (mut m, x) = warmed(&spec, 3);
        let packed = PackedModel::from_model(&m).unwrap();
        assert_eq!(packed.forward(&x).unwrap(), m.forward(&x, Mode::Eval).unwrap());
    }

    #[test]
    fn route_bits_round_trip() {
        for b in 0..8 {
            assert_eq!(Route::from_bits(b).unwrap().bits(), b);
        }
        assert!(Route::from_bits(8).is_none());
    }
}
