use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{GradPair, Real, Tensor4};

use super::{join, Mode, ParamKind, Params};

/// Full-precision convolution.
#[derive(Clone, Debug)]
pub struct Conv2d<T = f32> {
    pub weight: GradPair<T>,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(weight: Tensor4<T>, stride: usize, pad: usize) -> Self {
        Conv2d {
            weight: GradPair::new(weight),
            stride,
            pad,
            input: None,
        }
    }

    /// He-normal initialisation.
    pub fn init<R: Rng + ?Sized>(cout: usize, cin: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self::new(Tensor4::randn([cout, cin, k, k], std, rng), stride, pad)
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let y = ops::conv2d(x, &self.weight.value, self.stride, self.pad)?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g_y: &Tensor4<T>, need_input: bool) -> Result<Option<Tensor4<T>>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("Conv2d"))?;
        let (g_x, g_w) = ops::conv2d_backward(x, &self.weight.value, g_y, self.stride, self.pad, need_input)?;
        self.weight.accumulate(&g_w)?;
        Ok(g_x)
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        f(&join(prefix, "weight"), ParamKind::ConvWeight, &mut self.weight);
    }
}

/// Batch normalization with learnable affine and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T = f32> {
    pub gamma: GradPair<T>,
    pub beta: GradPair<T>,
    pub running_mean: Tensor4<T>,
    pub running_var: Tensor4<T>,
    cache: Option<ops::BnCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: GradPair::new(Tensor4::vector(vec![T::one(); channels])),
            beta: GradPair::new(Tensor4::vector(vec![T::zero(); channels])),
            running_mean: Tensor4::vector(vec![T::zero(); channels]),
            running_var: Tensor4::vector(vec![T::one(); channels]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        match mode {
            Mode::Train => {
                let (y, cache) = ops::batchnorm_train(
                    x,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.running_mean.data_mut(),
                    self.running_var.data_mut(),
                )?;
                self.cache = Some(cache);
                Ok(y)
            }
            Mode::Eval => {
                self.cache = None;
                ops::batchnorm_eval(
                    x,
                    self.gamma.value.data(),
                    self.beta.value.data(),
                    self.running_mean.data(),
                    self.running_var.data(),
                )
            }
        }
    }

    pub fn backward(&mut self, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("BatchNorm2d"))?;
        let (g_x, g_gamma, g_beta) = ops::batchnorm_backward(g_y, cache, self.gamma.value.data())?;
        self.gamma.accumulate(&Tensor4::vector(g_gamma))?;
        self.beta.accumulate(&Tensor4::vector(g_beta))?;
        Ok(g_x)
    }

    /// Inference affine with a scalar pre-scale folded in.
    pub fn folded(&self, alpha: T) -> (Vec<T>, Vec<T>) {
        ops::fold_affine(
            alpha,
            self.gamma.value.data(),
            self.beta.value.data(),
            self.running_mean.data(),
            self.running_var.data(),
        )
    }
}

impl<T: Real> Params<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        f(&join(prefix, "gamma"), ParamKind::BnGamma, &mut self.gamma);
        f(&join(prefix, "beta"), ParamKind::BnBeta, &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Fully connected classifier over the flattened input.
#[derive(Clone, Debug)]
pub struct Linear<T = f32> {
    pub weight: GradPair<T>,
    pub bias: GradPair<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Linear<T> {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: GradPair::new(Tensor4::uniform([outputs, inputs, 1, 1], -bound, bound, rng)),
            bias: GradPair::new(Tensor4::uniform([1, outputs, 1, 1], -bound, bound, rng)),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let y = ops::linear(x, &self.weight.value, &self.bias.value)?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("Linear"))?;
        let (g_x, g_w, g_b) = ops::linear_backward(x, &self.weight.value, &self.bias.value, g_y)?;
        self.weight.accumulate(&g_w)?;
        self.bias.accumulate(&g_b)?;
        Ok(g_x)
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        f(&join(prefix, "weight"), ParamKind::LinearWeight, &mut self.weight);
        f(&join(prefix, "bias"), ParamKind::LinearBias, &mut self.bias);
    }
}

/// Learnable per-channel gate `r(x, s) = s ⊙ x`, initialised to ones.
#[derive(Clone, Debug)]
pub struct Gate<T = f32> {
    pub s: GradPair<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Gate<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_values(vec![T::one(); channels])
    }

    pub fn with_values(s: Vec<T>) -> Self {
        Gate {
            s: GradPair::new(Tensor4::vector(s)),
            input: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.s.value.len()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let y = super::gate_apply(x, self.s.value.data())?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("Gate"))?;
        let (g_x, g_s) = ops::scale_channels_backward(x, self.s.value.data(), g_y)?;
        self.s.accumulate(&Tensor4::vector(g_s))?;
        Ok(g_x)
    }
}

impl<T: Real> Params<T> for Gate<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ParamKind, &mut GradPair<T>)) {
        f(prefix, ParamKind::Gate, &mut self.s);
    }
}

pub(crate) fn no_cache(layer: &str) -> Error {
    Error::InvalidArgument(format!("{layer}::backward called without a training-mode forward"))
}
