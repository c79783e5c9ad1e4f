use rand::Rng;

use crate::error::Result;
use crate::ops;
use crate::quant::{
    binarize_activations, binarize_activations_backward, binarize_weights_backward, clip_unit, BalancedWeight,
    ProxyWeight, WeightQuant,
};
use crate::tensor::{GradPair, Real, Tensor4};

use super::nn::{no_cache, BatchNorm2d};
use super::{join, Estimator, Mode, ParamKind, Params};

#[derive(Clone, Debug)]
struct BinaryCache<T> {
    xq: Tensor4<T>,
    mask: Option<Vec<bool>>,
    wq: Tensor4<T>,
}

/// Binary convolution block `F(x) = BN(conv(binarize(x), w^b))`.
///
/// The only weight state is the proxy `v`; centered and binary weights are
/// re-derived on every forward pass.
#[derive(Clone, Debug)]
pub struct BinaryConv<T = f32> {
    pub proxy: ProxyWeight<T>,
    pub quant: WeightQuant,
    pub stride: usize,
    pub pad: usize,
    pub bn: BatchNorm2d<T>,
    /// When false the input is used as-is instead of being binarized.
    pub quantize_input: bool,
    pub estimator: Estimator,
    cache: Option<BinaryCache<T>>,
}

impl<T: Real> BinaryConv<T> {
    pub fn new(v: Tensor4<T>, quant: WeightQuant, stride: usize, pad: usize) -> Self {
        let cout = v.shape().n;
        BinaryConv {
            proxy: ProxyWeight::new(v),
            quant,
            stride,
            pad,
            bn: BatchNorm2d::new(cout),
            quantize_input: true,
            estimator: Estimator::Ste,
            cache: None,
        }
    }

    pub fn init<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, quant: WeightQuant, rng: &mut R) -> Self {
        let std = (2.0 / (cin * 9) as f64).sqrt();
        Self::new(Tensor4::randn([cout, cin, 3, 3], std, rng), quant, stride, 1)
    }

    pub fn in_channels(&self) -> usize {
        self.proxy.v.value.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.proxy.v.value.shape().n
    }

    /// Centered weights, signs and scale derived from the current proxy.
    pub fn balanced_weight(&self) -> BalancedWeight<T> {
        self.proxy.derive(self.quant)
    }

    fn quantize_input(&self, x: &Tensor4<T>) -> (Tensor4<T>, Option<Vec<bool>>) {
        if !self.quantize_input {
            return (x.clone(), None);
        }
        let a = match self.estimator {
            Estimator::Ste => binarize_activations(x),
            Estimator::Surrogate => clip_unit(x),
        };
        (a.xb, Some(a.mask))
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let (xq, mask) = self.quantize_input(x);
        let bw = self.balanced_weight();
        match (mode, self.estimator) {
            (Mode::Eval, Estimator::Ste) => {
                self.cache = None;
                // signs ∈ {±1} against {0,1} inputs: every accumulator is an
                // exact small integer, shared bit-for-bit with the packed engine.
                let mut acc = ops::conv2d(&xq, &bw.signs, self.stride, self.pad)?;
                let (scale, shift) = self.bn.folded(bw.alpha);
                ops::apply_affine(&mut acc, &scale, &shift)?;
                Ok(acc)
            }
            _ => {
                let wq = match self.estimator {
                    Estimator::Ste => bw.binarized(),
                    Estimator::Surrogate => bw.w,
                };
                let pre = ops::conv2d(&xq, &wq, self.stride, self.pad)?;
                let y = self.bn.forward(&pre, mode)?;
                self.cache = (mode == Mode::Train).then_some(BinaryCache { xq, mask, wq });
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g_pre = self.bn.backward(g_y)?;
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("BinaryConv"))?;
        let (g_xq, g_wq) = ops::conv2d_backward(&cache.xq, &cache.wq, &g_pre, self.stride, self.pad, true)?;
        let g_w = binarize_weights_backward(&g_wq);
        self.proxy.accumulate_from_w(&g_w, self.quant)?;
        let g_xq = g_xq.expect("input gradient requested");
        match &cache.mask {
            Some(mask) => binarize_activations_backward(&g_xq, mask),
            None => Ok(g_xq),
        }
    }

    /// Weights used by the last training-mode forward, if cached.
    pub fn cached_weights(&self) -> Option<&Tensor4<T>> {
        self.cache.as_ref().map(|c| &c.wq)
    }
}

impl<T: Real> Params<T> for BinaryConv<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        f(&join(prefix, "proxy"), ParamKind::ConvWeight, &mut self.proxy.v);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }
}
