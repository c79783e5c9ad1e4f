use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::layers::{BinaryConv, Estimator, Mode, Model, Params};
use crate::ops;
use crate::quant::{binarize_activations, center_backward, center_weights, WeightQuant};
use crate::rng::{SeedRng, Stream};
use crate::tensor::Tensor4;

use super::CheckOutcome;

/// Relative-error bound for smooth paths.
pub const GRAD_TOLERANCE: f64 = 1e-3;
/// Tried in order until the interval around the point is smooth.
const STEPS: [f64; 3] = [1e-6, 1e-7, 1e-8];
/// Denominator floor of the relative error. Below it finite differences
/// through clip/ReLU networks are dominated by roundoff and kink noise.
const FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&GradEntry> {
        self.entries.iter().filter(|e| !(e.rel_err < GRAD_TOLERANCE)).collect()
    }

    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.failures().is_empty()
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn loss(m: &mut Model<f64>, x: &Tensor4<f64>, y: &[usize]) -> Result<f64> {
    let logits = m.forward(x, Mode::Train)?;
    Ok(ops::softmax_cross_entropy(&logits, y)?.0)
}

fn nudge(m: &mut Model<f64>, param: &str, index: usize, delta: f64) {
    m.visit_params("", &mut |name, _, p| {
        if name == param {
            p.value.data_mut()[index] += delta;
        }
    });
}

/// Central differences in 64-bit on a copy of `model` with the binarizers
/// replaced by their straight-through surrogates, so every parameter
/// (proxies through the centering map included) sits on a smooth path.
/// Up to `per_param` random coordinates of each tensor are checked.
pub fn check_gradients(model: &mut Model<f32>, seed: u64, per_param: usize) -> Result<GradCheckReport> {
    let mut m: Model<f64> = model.cast()?;
    m.set_estimator(Estimator::Surrogate);
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 0);
    let shape = m.input_shape(2);
    let x = Tensor4::uniform(shape, 0.0, 1.0, &mut rng);
    let y: Vec<usize> = (0..shape.n).map(|_| rng.random_range(0..m.spec.num_classes)).collect();

    m.zero_grad();
    let logits = m.forward(&x, Mode::Train)?;
    let (_, g) = ops::softmax_cross_entropy(&logits, &y)?;
    m.backward(&g)?;

    let mut picks = Vec::new();
    m.visit_params("", &mut |name, _, p| {
        let n = p.value.len();
        for i in sample(&mut rng, n, per_param.min(n)) {
            picks.push((name.to_string(), i, p.grad.data()[i].as_f64()));
        }
    });

    let mut report = GradCheckReport::default();
    for (param, index, analytic) in picks {
        let mut central = |step: f64| -> Result<f64> {
            nudge(&mut m, &param, index, step);
            let up = loss(&mut m, &x, &y)?;
            nudge(&mut m, &param, index, -2.0 * step);
            let down = loss(&mut m, &x, &y)?;
            nudge(&mut m, &param, index, step);
            Ok((up - down) / (2.0 * step))
        };
        // A step is trusted once the next smaller one agrees with it, which
        // fails when a clip or ReLU kink falls inside the wider interval.
        let mut numeric = central(STEPS[0])?;
        for &step in &STEPS[1..] {
            let finer = central(step)?;
            if rel_err(numeric, finer) < 1e-4 {
                break;
            }
            numeric = finer;
        }
        report.entries.push(GradEntry {
            rel_err: rel_err(analytic, numeric),
            param,
            index,
            analytic,
            numeric,
        });
    }
    Ok(report)
}

use crate::tensor::Real as _;

/// Checks a [`BinaryConv`]'s rounding-mode backward against the estimator
/// formulas, recomputed independently: the activation gradient is the
/// masked pass-through of the conv input gradient, and the proxy gradient
/// is the conv weight gradient (centered under balanced quantization).
/// Both must match bitwise.
pub fn check_ste_layer(quant: WeightQuant, seed: u64) -> Result<CheckOutcome> {
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 1);
    let mut layer = BinaryConv::<f64>::init(5, 4, 1, quant, &mut rng);
    let x = Tensor4::uniform([2, 5, 6, 6], -0.5, 1.5, &mut rng);
    let g_y = Tensor4::randn([2, 4, 6, 6], 1.0, &mut rng);

    let mut reference_bn = layer.bn.clone();
    layer.forward(&x, Mode::Train)?;
    let g_x = layer.backward(&g_y)?;

    let a = binarize_activations(&x);
    let wb = layer.balanced_weight().binarized();
    let pre = ops::conv2d(&a.xb, &wb, layer.stride, layer.pad)?;
    reference_bn.forward(&pre, Mode::Train)?;
    let g_pre = reference_bn.backward(&g_y)?;
    let (g_xb, g_wb) = ops::conv2d_backward(&a.xb, &wb, &g_pre, layer.stride, layer.pad, true)?;
    let g_xb = g_xb.expect("input gradient");
    let expect_x: Vec<f64> = g_xb.data().iter().zip(&a.mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
    let expect_v = match quant {
        WeightQuant::Balanced => center_backward(&g_wb),
        WeightQuant::Vanilla => g_wb,
    };
    let x_ok = g_x.data() == expect_x.as_slice();
    let v_ok = layer.proxy.v.grad == expect_v;
    Ok(CheckOutcome::new(
        format!("ste backward ({quant})"),
        x_ok && v_ok,
        format!("activation path bitwise: {x_ok}, proxy path bitwise: {v_ok}"),
    ))
}

/// The centering backward against the closed form `g − mean(g)` per filter
/// and against central differences of the centering map itself.
pub fn check_centering_gradient(seed: u64) -> Result<CheckOutcome> {
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 2);
    let v = Tensor4::<f64>::randn([3, 2, 3, 3], 1.0, &mut rng);
    let g_w = Tensor4::<f64>::randn(v.shape(), 1.0, &mut rng);
    let g_v = center_backward(&g_w);
    let d = v.shape().item_len();
    let mut worst_closed = 0.0f64;
    for f in 0..v.shape().n {
        let mean = g_w.item(f).iter().sum::<f64>() / d as f64;
        for (a, b) in g_v.item(f).iter().zip(g_w.item(f)) {
            worst_closed = worst_closed.max((a - (b - mean)).abs());
        }
    }
    // L(v) = <g_w, center(v)> has gradient center_backward(g_w).
    let objective = |v: &Tensor4<f64>| -> f64 { center_weights(v).data().iter().zip(g_w.data()).map(|(a, b)| a * b).sum() };
    let mut worst_fd = 0.0f64;
    for i in 0..v.len() {
        let mut up = v.clone();
        up.data_mut()[i] += 1e-5;
        let mut down = v.clone();
        down.data_mut()[i] -= 1e-5;
        let numeric = (objective(&up) - objective(&down)) / 2e-5;
        worst_fd = worst_fd.max((numeric - g_v.data()[i]).abs());
    }
    Ok(CheckOutcome::new(
        "centering backward",
        worst_closed < 1e-6 && worst_fd < 1e-6,
        format!("closed-form max err {worst_closed:.2e}, finite-difference max err {worst_fd:.2e}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BlockVariant, ModelSpec};

    #[test]
    fn tiny_models_pass() {
        for variant in [BlockVariant::Gated, BlockVariant::Vanilla] {
            let mut spec = ModelSpec::resnet20().with_variant(variant).with_input([3, 8, 8], 3);
            spec.kernel_stage = [4, 8, 8];
            let mut m = Model::new(&spec, 3).unwrap();
            let r = check_gradients(&mut m, 1, 3).unwrap();
            assert!(r.passed(), "{:?}", r.worst());
        }
    }

    #[test]
    fn wrong_gradient_detected() {
        assert!(rel_err(1.0, 1.01) > GRAD_TOLERANCE);
        assert!(rel_err(0.0, 0.0) < GRAD_TOLERANCE);
        assert!(rel_err(2e-4, 2.1e-4) > GRAD_TOLERANCE);
    }

    #[test]
    fn ste_formulas_hold() {
        for q in [WeightQuant::Balanced, WeightQuant::Vanilla] {
            let c = check_ste_layer(q, 5).unwrap();
            assert!(c.passed, "{}", c.detail);
        }
        assert!(check_centering_gradient(5).unwrap().passed);
    }
}
