use crate::bitpack::{pack_bits, BitDomain, PackedModel};
use crate::error::Result;
use crate::layers::{BlockVariant, LayerRole, Mode, Model, ModelSpec};
use crate::quant::{binarize_activations, binarize_weights, center_weights};
use crate::rng::{SeedRng, Stream};
use crate::tensor::Tensor4;

use super::CheckOutcome;

const FILTER_SHAPES: [[usize; 4]; 5] = [[1, 1, 1, 1], [4, 3, 3, 3], [16, 16, 3, 3], [8, 64, 3, 3], [3, 130, 1, 1]];

fn random_proxies(seed: u64) -> Vec<Tensor4<f32>> {
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 10);
    let mut out = Vec::new();
    for shape in FILTER_SHAPES {
        for offset in [0.0f32, 3.0, -1e4] {
            let mut v = Tensor4::randn(shape, 1.0, &mut rng);
            v.data_mut().iter_mut().for_each(|x| *x += offset);
            out.push(v);
        }
    }
    out
}

/// `|Σ w| ≤ 1e-5 · d` for every filter after centering.
pub fn centering_balance(seed: u64) -> CheckOutcome {
    let mut worst = 0.0f64;
    for v in random_proxies(seed) {
        let w = center_weights(&v);
        let d = w.shape().item_len() as f64;
        for f in 0..w.shape().n {
            let sum: f64 = w.item(f).iter().map(|&x| x as f64).sum();
            worst = worst.max(sum.abs() / d);
        }
    }
    CheckOutcome::new("centering balance", worst <= 1e-5, format!("max |sum|/d = {worst:.3e}"))
}

/// Centering a centered tensor changes nothing, bit for bit.
pub fn centering_idempotence(seed: u64) -> CheckOutcome {
    let bad = random_proxies(seed)
        .iter()
        .filter(|v| {
            let w = center_weights(v);
            center_weights(&w) != w
        })
        .count();
    CheckOutcome::new("centering idempotence", bad == 0, format!("{bad} tensors changed on re-centering"))
}

/// Weights land on `{−α, +α}` with `α = mean|w|`; activations on `{0, 1}`.
pub fn quantization_levels(seed: u64) -> CheckOutcome {
    let mut problems = Vec::new();
    for (i, v) in random_proxies(seed).iter().enumerate() {
        let w = center_weights(v);
        let bw = binarize_weights(&w);
        let alpha = w.data().iter().map(|x| x.abs() as f64).sum::<f64>() / w.len() as f64;
        if (bw.alpha as f64 - alpha).abs() > 1e-6 * alpha.max(1.0) {
            problems.push(format!("tensor {i}: alpha {} vs mean|w| {alpha}", bw.alpha));
        }
        if !bw.signs.data().iter().all(|&s| s == 1.0 || s == -1.0) {
            problems.push(format!("tensor {i}: sign outside {{-1, +1}}"));
        }
        if !bw.binarized().data().iter().all(|&b| b == bw.alpha || b == -bw.alpha) {
            problems.push(format!("tensor {i}: binarized weight outside {{-a, +a}}"));
        }
    }
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 11);
    let x = Tensor4::<f32>::uniform([4, 3, 5, 5], -1.0, 2.0, &mut rng);
    if !binarize_activations(&x).xb.data().iter().all(|&b| b == 0.0 || b == 1.0) {
        problems.push("activation outside {0, 1}".into());
    }
    let detail = if problems.is_empty() {
        format!("{} weight tensors and one activation tensor checked", FILTER_SHAPES.len() * 3)
    } else {
        problems.join("; ")
    };
    CheckOutcome::new("quantization levels", problems.is_empty(), detail)
}

fn small_resnet(variant: BlockVariant) -> ModelSpec {
    let mut spec = ModelSpec::resnet20().with_variant(variant).with_input([3, 16, 16], 10);
    spec.kernel_stage = [8, 16, 16];
    spec
}

/// With every gate at its initial value of one, the gated and bireal
/// variants compute the same function.
pub fn gated_equals_bireal_at_init(seed: u64) -> Result<CheckOutcome> {
    let mut gated = Model::<f32>::new(&small_resnet(BlockVariant::Gated), seed)?;
    let mut bireal = Model::<f32>::new(&small_resnet(BlockVariant::Bireal), seed)?;
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 12);
    let x = Tensor4::uniform(gated.input_shape(4), 0.0, 1.0, &mut rng);
    let mut same = true;
    for mode in [Mode::Train, Mode::Eval] {
        same &= gated.forward(&x, mode)? == bireal.forward(&x, mode)?;
    }
    Ok(CheckOutcome::new("gated == bireal at init", same, "train and eval logits compared bitwise"))
}

/// The stem conv, shortcut projections and classifier stay full precision;
/// every other conv is binary.
pub fn exclusion_rule(seed: u64) -> Result<CheckOutcome> {
    let mut problems = Vec::new();
    for spec in [ModelSpec::resnet20(), ModelSpec::basiccnn()] {
        let layers = Model::<f32>::new(&spec, seed)?.describe()?;
        for l in &layers {
            let want = l.role == LayerRole::Binary;
            if l.quantized != want {
                problems.push(format!("{} {}: quantized = {}", spec.arch, l.name, l.quantized));
            }
        }
        let main = layers.iter().filter(|l| l.is_main_layer()).count();
        if spec.arch == crate::layers::Arch::Resnet20 && main != 20 {
            problems.push(format!("resnet20 has {main} main layers"));
        }
    }
    let ok = problems.is_empty();
    Ok(CheckOutcome::new(
        "exclusion rule",
        ok,
        if ok {
            "first conv, shortcut projections and classifier full precision".into()
        } else {
            problems.join("; ")
        },
    ))
}

/// Bit packing round-trips and the packed engine reproduces float labels.
pub fn packed_engine(seed: u64) -> Result<CheckOutcome> {
    let mut rng = SeedRng::new(seed).stream(Stream::Test, 13);
    let bits = Tensor4::<f32>::uniform([2, 130, 3, 3], 0.0, 1.0, &mut rng).map(|v| v.round());
    let plane = pack_bits(&bits, BitDomain::Activation)?;
    let round_trip = plane.unpack(BitDomain::Activation) == bits && plane.padding_popcount() == 0;
    let mut model = Model::<f32>::new(&small_resnet(BlockVariant::Gated), seed)?;
    let x = Tensor4::uniform(model.input_shape(16), 0.0, 1.0, &mut rng);
    model.forward(&x, Mode::Train)?;
    let packed = PackedModel::from_model(&model)?;
    let same = packed.forward(&x)? == model.forward(&x, Mode::Eval)?;
    Ok(CheckOutcome::new(
        "packed engine",
        round_trip && same,
        format!("pack/unpack round trip: {round_trip}, packed logits bitwise equal: {same}"),
    ))
}
