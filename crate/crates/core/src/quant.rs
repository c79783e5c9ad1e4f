//! Weight and activation binarizers with their straight-through gradients.
//!
//! Weights are stored only as a real-valued proxy `v`. The forward pass
//! centers every output filter of `v` to zero mean, then replaces each
//! centered weight by `sign(w) · mean|w|`, with one scale for the layer.
//! Activations are clipped to `[0, 1]` and rounded to `{0, 1}`; the
//! backward pass lets gradients through only where the input was strictly
//! inside `(0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{GradPair, Real, Tensor4};

/// How real weights are turned into binary ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightQuant {
    /// Center each filter, then `sign · mean|w|`.
    #[default]
    Balanced,
    /// `sign · mean|v|` applied to the proxy directly, without centering.
    Vanilla,
}

impl std::fmt::Display for WeightQuant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightQuant::Balanced => "balanced",
            WeightQuant::Vanilla => "vanilla",
        })
    }
}

impl std::str::FromStr for WeightQuant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(WeightQuant::Balanced),
            "vanilla" => Ok(WeightQuant::Vanilla),
            other => Err(format!("unknown weight quantization '{other}' (expected balanced|vanilla)")),
        }
    }
}

/// Subtracts the per-filter mean. A filter whose mean is already below the
/// rounding floor of its own values is returned untouched, which makes the
/// map exactly idempotent in floating point.
fn center_filters<T: Real>(v: &Tensor4<T>) -> Tensor4<T> {
    let s = v.shape();
    let d = s.item_len();
    let mut w = v.clone();
    if d == 0 {
        return w;
    }
    let floor = 4.0 * T::epsilon().as_f64();
    for f in 0..s.n {
        let filter = w.item_mut(f);
        // A second pass removes the rounding error of a large first mean.
        for _ in 0..4 {
            let sum: f64 = filter.iter().map(|x| x.as_f64()).sum();
            let max_abs = filter.iter().map(|x| x.as_f64().abs()).fold(0.0, f64::max);
            let mean = sum / d as f64;
            if mean.abs() <= floor * max_abs {
                break;
            }
            let m = T::from_f64(mean);
            filter.iter_mut().for_each(|x| *x -= m);
        }
    }
    w
}

/// Per output filter, `w = v − mean(v)` over the fan-in `Cin·Kh·Kw`.
pub fn center_weights<T: Real>(v: &Tensor4<T>) -> Tensor4<T> {
    center_filters(v)
}

/// Gradient of [`center_weights`]: the centering matrix `I − 11ᵀ/d` is
/// symmetric, so the backward pass centers the incoming gradient.
pub fn center_backward<T: Real>(g_w: &Tensor4<T>) -> Tensor4<T> {
    center_filters(g_w)
}

/// Centered weights together with their binary code.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedWeight<T = f32> {
    pub w: Tensor4<T>,
    /// `±1` per element, `sign(0) = +1`.
    pub signs: Tensor4<T>,
    /// Mean absolute value of `w` over the whole layer.
    pub alpha: T,
}

impl<T: Real> BalancedWeight<T> {
    /// `signs · alpha`, the weights the convolution actually uses.
    pub fn binarized(&self) -> Tensor4<T> {
        let a = self.alpha;
        self.signs.map(|s| s * a)
    }
}

#[inline]
pub fn sign<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

pub fn binarize_weights<T: Real>(w: &Tensor4<T>) -> BalancedWeight<T> {
    let n = w.len().max(1);
    let alpha = w.data().iter().map(|x| x.as_f64().abs()).sum::<f64>() / n as f64;
    BalancedWeight {
        w: w.clone(),
        signs: w.map(sign),
        alpha: T::from_f64(alpha),
    }
}

/// Straight-through: the gradient reaching the binary weights is passed to
/// the real weights unchanged. `alpha` is treated as a constant.
pub fn binarize_weights_backward<T: Real>(g_wb: &Tensor4<T>) -> Tensor4<T> {
    g_wb.clone()
}

/// The trainable proxy tensor `v` of one binary convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyWeight<T = f32> {
    pub v: GradPair<T>,
}

impl<T: Real> ProxyWeight<T> {
    pub fn new(v: Tensor4<T>) -> Self {
        ProxyWeight { v: GradPair::new(v) }
    }

    /// `Cin·Kh·Kw`.
    pub fn fan_in(&self) -> usize {
        self.v.value.shape().item_len()
    }

    /// The real weights `w` derived from `v` under the given scheme.
    pub fn real_weights(&self, quant: WeightQuant) -> Tensor4<T> {
        match quant {
            WeightQuant::Balanced => center_weights(&self.v.value),
            WeightQuant::Vanilla => self.v.value.clone(),
        }
    }

    pub fn derive(&self, quant: WeightQuant) -> BalancedWeight<T> {
        binarize_weights(&self.real_weights(quant))
    }

    /// Maps a gradient w.r.t. `w` back onto `v` and accumulates it.
    pub fn accumulate_from_w(&mut self, g_w: &Tensor4<T>, quant: WeightQuant) -> Result<()> {
        match quant {
            WeightQuant::Balanced => self.v.accumulate(&center_backward(g_w)),
            WeightQuant::Vanilla => self.v.accumulate(g_w),
        }
    }
}

/// Binary activations and the straight-through mask.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryActivation<T = f32> {
    /// `round(clip(x, 0, 1))`, entries in `{0, 1}`.
    pub xb: Tensor4<T>,
    /// True where `0 < x < 1` held on the input.
    pub mask: Vec<bool>,
}

/// `round(clip(x, 0, 1))` with ties at 0.5 rounded up.
#[inline]
pub fn binarize_value<T: Real>(x: T) -> T {
    if x >= T::from_f64(0.5) {
        T::one()
    } else {
        T::zero()
    }
}

#[inline]
pub fn ste_mask_value<T: Real>(x: T) -> bool {
    x > T::zero() && x < T::one()
}

pub fn binarize_activations<T: Real>(x: &Tensor4<T>) -> BinaryActivation<T> {
    BinaryActivation {
        xb: x.map(binarize_value),
        mask: x.data().iter().map(|&v| ste_mask_value(v)).collect(),
    }
}

/// `g_x = g_xb` where the mask is set, zero elsewhere.
pub fn binarize_activations_backward<T: Real>(g_xb: &Tensor4<T>, mask: &[bool]) -> Result<Tensor4<T>> {
    if g_xb.len() != mask.len() {
        return Err(crate::Error::shape(
            "binarize_activations_backward",
            format!("gradient has {} elements, mask {}", g_xb.len(), mask.len()),
        ));
    }
    let mut g = g_xb.clone();
    for (v, &m) in g.data_mut().iter_mut().zip(mask) {
        if !m {
            *v = T::zero();
        }
    }
    Ok(g)
}

/// `clip(x, 0, 1)`: the smooth function whose derivative the activation
/// straight-through estimator uses. Gradient checks substitute it for the
/// rounding quantizer so finite differences see the same Jacobian.
pub fn clip_unit<T: Real>(x: &Tensor4<T>) -> BinaryActivation<T> {
    BinaryActivation {
        xb: x.map(|v| v.max(T::zero()).min(T::one())),
        mask: x.data().iter().map(|&v| ste_mask_value(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};

    fn t(shape: [usize; 4], v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn center_examples() {
        assert_eq!(center_weights(&t([1, 1, 1, 3], &[1., 2., 3.])).data(), &[-1., 0., 1.]);
        assert_eq!(center_weights(&t([1, 1, 2, 2], &[2.5; 4])).data(), &[0.; 4]);
    }

    #[test]
    fn random_filters_sum_to_zero() {
        let mut rng = SeedRng::new(21).stream(Stream::Test, 0);
        let v = Tensor4::<f32>::randn([4, 3, 3, 3], 1.0, &mut rng).map(|x| x + 0.3);
        let w = center_weights(&v);
        for f in 0..4 {
            let s: f64 = w.item(f).iter().map(|&x| x as f64).sum();
            assert!(s.abs() <= 1e-5, "filter {f} sums to {s}");
        }
    }

    #[test]
    fn center_backward_examples() {
        assert_eq!(center_backward(&t([1, 1, 1, 3], &[1., 1., 1.])).data(), &[0.; 3]);
        assert_eq!(center_backward(&t([1, 1, 1, 3], &[-1., 0., 1.])).data(), &[-1., 0., 1.]);
    }

    #[test]
    fn center_backward_matches_finite_differences() {
        // L(v) = <g, center(v)>; dL/dv by central differences in f64.
        let mut rng = SeedRng::new(5).stream(Stream::Test, 0);
        let v = Tensor4::<f64>::randn([2, 2, 2, 2], 1.0, &mut rng);
        let g = Tensor4::<f64>::randn([2, 2, 2, 2], 1.0, &mut rng);
        let loss = |v: &Tensor4<f64>| -> f64 {
            center_weights(v).data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let analytic = center_backward(&g);
        let h = 1e-6;
        for i in 0..v.len() {
            let (mut p, mut m) = (v.clone(), v.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((numeric - analytic.data()[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn binarize_examples() {
        let b = binarize_weights(&t([1, 1, 1, 3], &[-1., 0., 1.]));
        assert!((b.alpha - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.binarized().data(), &[-2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);

        let z = binarize_weights(&Tensor4::<f32>::zeros([2, 1, 1, 2]));
        assert_eq!(z.alpha, 0.0);
        assert!(z.binarized().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binarize_matches_one_line_recompute() {
        let mut rng = SeedRng::new(8).stream(Stream::Test, 0);
        let w = Tensor4::<f32>::randn([3, 2, 3, 3], 1.0, &mut rng);
        let b = binarize_weights(&w);
        let alpha = (w.data().iter().map(|v| v.abs() as f64).sum::<f64>() / w.len() as f64) as f32;
        let want: Vec<f32> = w.data().iter().map(|&v| if v >= 0.0 { alpha } else { -alpha }).collect();
        assert_eq!(b.binarized().data(), &want[..]);
    }

    #[test]
    fn weight_backward_is_identity() {
        let g = t([1, 1, 1, 2], &[0.3, -0.2]);
        assert_eq!(binarize_weights_backward(&g), g);
    }

    #[test]
    fn activation_examples() {
        let a = binarize_activations(&t([1, 1, 1, 4], &[-0.5, 0.2, 0.7, 1.3]));
        assert_eq!(a.xb.data(), &[0., 0., 1., 1.]);
        assert_eq!(a.mask, vec![false, true, true, false]);
        assert_eq!(binarize_activations(&t([1, 1, 1, 1], &[0.5])).xb.data(), &[1.0]);
        let edges = binarize_activations(&t([1, 1, 1, 2], &[0.0, 1.0]));
        assert_eq!(edges.mask, vec![false, false]);
    }

    #[test]
    fn activation_backward_examples() {
        let g = t([1, 1, 1, 4], &[1.; 4]);
        let out = binarize_activations_backward(&g, &[false, true, true, false]).unwrap();
        assert_eq!(out.data(), &[0., 1., 1., 0.]);
        let dead = binarize_activations_backward(&g, &[false; 4]).unwrap();
        assert!(dead.data().iter().all(|&v| v == 0.0));
        assert!(binarize_activations_backward(&g, &[true; 3]).is_err());
    }

    #[test]
    fn vanilla_skips_centering() {
        let p = ProxyWeight::new(t([1, 1, 1, 3], &[1., 2., 3.]));
        assert_eq!(p.real_weights(WeightQuant::Vanilla).data(), &[1., 2., 3.]);
        assert_eq!(p.real_weights(WeightQuant::Balanced).data(), &[-1., 0., 1.]);
        assert_eq!(p.fan_in(), 3);
    }
}
