use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom};
use crate::quant::WeightQuant;
use crate::rng::{SeedRng, Stream};
use crate::tensor::{GradPair, Real, Shape4, Tensor4};

use super::block::{BlockVariant, ResidualUnit, Shortcut};
use super::nn::{no_cache, BatchNorm2d, Conv2d, Linear};
use super::{join, Estimator, Mode, ParamKind, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// conv → maxpool → two residual blocks → avgpool → fc (MNIST scale).
    #[serde(rename = "basiccnn")]
    BasicCnn,
    /// Three stages of three basic blocks (CIFAR scale).
    #[serde(rename = "resnet20")]
    Resnet20,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::BasicCnn => "basiccnn",
            Arch::Resnet20 => "resnet20",
        })
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basiccnn" => Ok(Arch::BasicCnn),
            "resnet20" => Ok(Arch::Resnet20),
            other => Err(format!("unknown arch '{other}' (expected basiccnn|resnet20)")),
        }
    }
}

/// Architecture description; together with a seed it fully determines the
/// initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelSpec {
    pub arch: Arch,
    pub variant: BlockVariant,
    pub weight_quant: WeightQuant,
    /// Channel widths of the three stages before `width_mult`. BasicCNN
    /// uses the first entry only.
    pub kernel_stage: [usize; 3],
    pub width_mult: f64,
    /// Drops the stem max-pool (BasicCNN; ResNet-20 has none).
    pub remove_maxpool: bool,
    pub num_classes: usize,
    /// Input `(C, H, W)`.
    pub input: [usize; 3],
}

impl ModelSpec {
    pub fn resnet20() -> Self {
        ModelSpec {
            arch: Arch::Resnet20,
            variant: BlockVariant::Gated,
            weight_quant: WeightQuant::Balanced,
            kernel_stage: [16, 32, 64],
            width_mult: 1.0,
            remove_maxpool: false,
            num_classes: 10,
            input: [3, 32, 32],
        }
    }

    pub fn basiccnn() -> Self {
        ModelSpec {
            arch: Arch::BasicCnn,
            input: [1, 28, 28],
            ..Self::resnet20()
        }
    }

    pub fn with_variant(mut self, variant: BlockVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_quant(mut self, quant: WeightQuant) -> Self {
        self.weight_quant = quant;
        self
    }

    pub fn with_input(mut self, input: [usize; 3], num_classes: usize) -> Self {
        self.input = input;
        self.num_classes = num_classes;
        self
    }

    /// Effective stage widths, `round(kernel_stage · width_mult)`.
    pub fn stage_widths(&self) -> Result<[usize; 3]> {
        if !(self.width_mult.is_finite() && self.width_mult > 0.0) {
            return Err(Error::InvalidArgument(format!("width multiplier must be positive, got {}", self.width_mult)));
        }
        let mut out = [0; 3];
        for (o, &k) in out.iter_mut().zip(&self.kernel_stage) {
            *o = (k as f64 * self.width_mult).round() as usize;
            if *o == 0 {
                return Err(Error::InvalidArgument(format!(
                    "kernel stage {:?} × {} yields a zero-width stage",
                    self.kernel_stage, self.width_mult
                )));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_widths()?;
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.input.contains(&0) {
            return Err(Error::InvalidArgument(format!("input shape {:?} has a zero dimension", self.input)));
        }
        Ok(())
    }
}

/// Parses `"16-32-64"`.
pub fn parse_kernel_stage(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<_> = s.split('-').map(str::parse::<usize>).collect::<Result<_, _>>().map_err(|e| format!("{s}: {e}"))?;
    <[usize; 3]>::try_from(parts).map_err(|_| format!("kernel stage '{s}' must have three widths, e.g. 16-32-64"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadPool {
    Avg(usize),
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Stem,
    Binary,
    Downsample,
    Classifier,
    Gate,
}

/// One weighted layer found by walking a model.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub role: LayerRole,
    /// Weights and inputs go through binarizers.
    pub quantized: bool,
    pub weight: Shape4,
    /// Per-sample output `(C, H, W)`.
    pub out: [usize; 3],
}

impl LayerInfo {
    /// Counted in the conventional "N-layer" name of the network.
    pub fn is_main_layer(&self) -> bool {
        matches!(self.role, LayerRole::Stem | LayerRole::Binary | LayerRole::Classifier)
    }
}

#[derive(Clone, Debug, Default)]
struct StemCache<T> {
    pre_relu: Option<Tensor4<T>>,
    pool: Option<(Shape4, Vec<usize>)>,
    head_in: Option<Shape4>,
}

/// A built network: full-precision stem, residual units, pooled classifier.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub spec: ModelSpec,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub stem_maxpool: bool,
    pub units: Vec<ResidualUnit<T>>,
    pub head_pool: HeadPool,
    pub fc: Linear<T>,
    cache: StemCache<T>,
}

/// Builds a model from its spec, drawing initial weights from `rng`.
pub fn build_model<T: Real, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Model<T>> {
    spec.validate()?;
    let widths = spec.stage_widths()?;
    let [cin, h, w] = spec.input;
    let quant = spec.weight_quant;
    let stem_conv = Conv2d::init(widths[0], cin, 3, 1, 1, rng);
    let mut units = Vec::new();
    let push_block = |units: &mut Vec<ResidualUnit<T>>, rng: &mut R, cin: usize, cout: usize, stride: usize| {
        if spec.variant.per_conv() {
            units.push(ResidualUnit::build(spec.variant, quant, cin, cout, stride, rng));
            units.push(ResidualUnit::build(spec.variant, quant, cout, cout, 1, rng));
        } else {
            units.push(ResidualUnit::build(spec.variant, quant, cin, cout, stride, rng));
        }
    };

    let (stem_maxpool, head_pool, fc_in) = match spec.arch {
        Arch::Resnet20 => {
            let mut c = widths[0];
            for (stage, &width) in widths.iter().enumerate() {
                for block in 0..3 {
                    let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                    push_block(&mut units, rng, c, width, stride);
                    c = width;
                }
            }
            (false, HeadPool::Global, widths[2])
        }
        Arch::BasicCnn => {
            let c = widths[0];
            for _ in 0..2 {
                push_block(&mut units, rng, c, c, 1);
            }
            let maxpool = !spec.remove_maxpool;
            let (mut hh, mut ww) = (h, w);
            if maxpool {
                hh /= 2;
                ww /= 2;
            }
            if hh < 2 || ww < 2 {
                return Err(Error::InvalidArgument(format!("input {h}x{w} too small for BasicCNN")));
            }
            (maxpool, HeadPool::Avg(2), c * (hh / 2) * (ww / 2))
        }
    };
    let fc = Linear::init(fc_in, spec.num_classes, rng);
    Ok(Model {
        spec: spec.clone(),
        stem_conv,
        stem_bn: BatchNorm2d::new(widths[0]),
        stem_maxpool,
        units,
        head_pool,
        fc,
        cache: StemCache::default(),
    })
}

impl<T: Real> Model<T> {
    /// Builds with weights drawn from the `Init` stream of `seed`.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        build_model(spec, &mut SeedRng::new(seed).stream(Stream::Init, 0))
    }

    pub fn set_estimator(&mut self, estimator: Estimator) {
        self.units.iter_mut().for_each(|u| u.set_estimator(estimator));
    }

    pub fn input_shape(&self, batch: usize) -> Shape4 {
        let [c, h, w] = self.spec.input;
        Shape4::new(batch, c, h, w)
    }

    pub fn forward_stem(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let z = self.stem_conv.forward(x, mode)?;
        let z = self.stem_bn.forward(&z, mode)?;
        let a = ops::relu(&z);
        self.cache.pre_relu = (mode == Mode::Train).then_some(z);
        if self.stem_maxpool {
            let (p, arg) = ops::maxpool2d(&a, 2, 2)?;
            self.cache.pool = (mode == Mode::Train).then(|| (a.shape(), arg));
            Ok(p)
        } else {
            Ok(a)
        }
    }

    pub fn forward_head(&mut self, z: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.cache.head_in = Some(z.shape());
        let pooled = match self.head_pool {
            HeadPool::Avg(k) => ops::avgpool2d(z, k, k)?,
            HeadPool::Global => ops::global_avg_pool(z),
        };
        self.fc.forward(&pooled, mode)
    }

    /// Logits `(N, classes, 1, 1)`.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        x.expect_shape(self.input_shape(x.shape().n), "Model::forward")?;
        let mut z = self.forward_stem(x, mode)?;
        for unit in &mut self.units {
            z = unit.forward(&z, mode)?;
        }
        self.forward_head(&z, mode)
    }

    /// Backpropagates from the logits; parameter gradients accumulate.
    pub fn backward(&mut self, g_logits: &Tensor4<T>) -> Result<()> {
        let g = self.fc.backward(g_logits)?;
        let head_in = self.cache.head_in.ok_or_else(|| no_cache("Model"))?;
        let mut g = match self.head_pool {
            HeadPool::Avg(k) => ops::avgpool2d_backward(head_in, k, k, &g)?,
            HeadPool::Global => ops::global_avg_pool_backward(head_in, &g)?,
        };
        for unit in self.units.iter_mut().rev() {
            g = unit.backward(&g)?;
        }
        if self.stem_maxpool {
            let (shape, arg) = self.cache.pool.as_ref().ok_or_else(|| no_cache("Model"))?;
            g = ops::maxpool2d_backward(*shape, arg, &g)?;
        }
        let pre = self.cache.pre_relu.as_ref().ok_or_else(|| no_cache("Model"))?;
        let g = ops::relu_backward(pre, &g)?;
        let g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g, false)?;
        Ok(())
    }

    /// Eval-mode predicted labels.
    pub fn predict(&mut self, x: &Tensor4<T>) -> Result<Vec<usize>> {
        Ok(ops::argmax_rows(&self.forward(x, Mode::Eval)?))
    }

    /// Name of the first parameter, buffer or layer output that is not
    /// finite for this input, if any.
    pub fn locate_non_finite(&mut self, x: &Tensor4<T>) -> Option<String> {
        let mut bad = None;
        self.visit_params("", &mut |name, _, p| {
            if bad.is_none() && !p.value.all_finite() {
                bad = Some(name.to_string());
            }
        });
        self.visit_buffers("", &mut |name, b| {
            if bad.is_none() && !b.all_finite() {
                bad = Some(name.to_string());
            }
        });
        if bad.is_some() {
            return bad;
        }
        let mut probe = self.clone();
        let check = |name: &str, t: Result<Tensor4<T>>| -> std::result::Result<Tensor4<T>, String> {
            match t {
                Ok(t) if t.all_finite() => Ok(t),
                _ => Err(name.to_string()),
            }
        };
        let mut run = || -> std::result::Result<(), String> {
            let mut z = check("stem", probe.forward_stem(x, Mode::Train))?;
            for (i, unit) in probe.units.iter_mut().enumerate() {
                let mut h = z.clone();
                for (j, conv) in unit.body.clone().iter_mut().enumerate() {
                    h = check(&format!("units.{i}.body.{j}"), conv.forward(&h, Mode::Train))?;
                }
                z = check(&format!("units.{i}"), unit.forward(&z, Mode::Train))?;
            }
            check("head", probe.forward_head(&z, Mode::Train))?;
            Ok(())
        };
        run().err()
    }

    /// Walks every weighted layer in forward order.
    pub fn describe(&self) -> Result<Vec<LayerInfo>> {
        let mut out = Vec::new();
        let [cin, h, w] = self.spec.input;
        let x = Shape4::new(1, cin, h, w);
        let g = ConvGeom::new(x, self.stem_conv.weight.value.shape(), self.stem_conv.stride, self.stem_conv.pad)?;
        out.push(LayerInfo {
            name: "stem.conv".into(),
            role: LayerRole::Stem,
            quantized: false,
            weight: self.stem_conv.weight.value.shape(),
            out: [g.cout, g.oh, g.ow],
        });
        let mut cur = g.out_shape(1);
        if self.stem_maxpool {
            cur = Shape4::new(1, cur.c, (cur.h - 2) / 2 + 1, (cur.w - 2) / 2 + 1);
        }
        for (i, unit) in self.units.iter().enumerate() {
            let unit_in = cur;
            for (j, conv) in unit.body.iter().enumerate() {
                let wshape = conv.proxy.v.value.shape();
                let g = ConvGeom::new(cur, wshape, conv.stride, conv.pad)?;
                out.push(LayerInfo {
                    name: format!("units.{i}.body.{j}"),
                    role: LayerRole::Binary,
                    quantized: conv.quantize_input,
                    weight: wshape,
                    out: [g.cout, g.oh, g.ow],
                });
                cur = g.out_shape(1);
            }
            let gate_shape = match &unit.shortcut {
                Shortcut::Identity => None,
                Shortcut::Gated(g) => Some(g.s.value.shape()),
                Shortcut::Downsample { conv, gate, .. } => {
                    let wshape = conv.weight.value.shape();
                    let g = ConvGeom::new(unit_in, wshape, conv.stride, conv.pad)?;
                    if g.out_shape(1) != cur {
                        return Err(Error::shape(
                            "Model::describe",
                            format!("unit {i}: shortcut yields {} but body yields {cur}", g.out_shape(1)),
                        ));
                    }
                    out.push(LayerInfo {
                        name: format!("units.{i}.shortcut.conv"),
                        role: LayerRole::Downsample,
                        quantized: false,
                        weight: wshape,
                        out: [g.cout, g.oh, g.ow],
                    });
                    gate.as_ref().map(|g| g.s.value.shape())
                }
            };
            if let Some(s) = gate_shape {
                out.push(LayerInfo {
                    name: format!("units.{i}.shortcut.gate"),
                    role: LayerRole::Gate,
                    quantized: false,
                    weight: s,
                    out: [cur.c, cur.h, cur.w],
                });
            }
        }
        out.push(LayerInfo {
            name: "fc".into(),
            role: LayerRole::Classifier,
            quantized: false,
            weight: self.fc.weight.value.shape(),
            out: [self.spec.num_classes, 1, 1],
        });
        Ok(out)
    }

    /// Parameters and buffers in traversal order.
    pub fn state_dict(&mut self) -> Vec<(String, Tensor4<T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, _, p| out.push((name.to_string(), p.value.clone())));
        self.visit_buffers("", &mut |name, b| out.push((name.to_string(), b.clone())));
        out
    }

    /// Loads tensors by name; every parameter and buffer must be present
    /// with a matching shape.
    pub fn load_state_dict<U: Real>(&mut self, state: &[(String, Tensor4<U>)]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &Tensor4<U>> =
            state.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut err = None;
        let mut assign = |name: &str, dst: &mut Tensor4<T>| {
            if err.is_some() {
                return;
            }
            match lookup.get(name) {
                None => err = Some(Error::InvalidArgument(format!("state is missing '{name}'"))),
                Some(src) if src.shape() != dst.shape() => {
                    err = Some(Error::shape(
                        "load_state_dict",
                        format!("'{name}': stored {} vs model {}", src.shape(), dst.shape()),
                    ))
                }
                Some(src) => *dst = src.cast(),
            }
        };
        self.visit_params("", &mut |name, _, p| assign(name, &mut p.value));
        self.visit_buffers("", &mut |name, b| assign(name, b));
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<U: Real>(&mut self) -> Result<Model<U>> {
        let mut m = Model::<U>::new(&self.spec, 0)?;
        m.load_state_dict(&self.state_dict())?;
        Ok(m)
    }
}

impl<T: Real> Params<T> for Model<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        self.stem_conv.visit_params(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_params(&join(prefix, "stem.bn"), f);
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_params(&join(prefix, &format!("units.{i}")), f);
        }
        self.fc.visit_params(&join(prefix, "fc"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        self.stem_bn.visit_buffers(&join(prefix, "stem.bn"), f);
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_buffers(&join(prefix, &format!("units.{i}")), f);
        }
    }
}
