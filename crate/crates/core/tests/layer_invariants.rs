use bbg::layers::{
    count_flops, gated_block_backward, gated_block_forward, Arch, BlockVariant, LayerRole, Mode, Model, ModelSpec,
    Params, ResidualUnit, Shortcut, BINARY_OP_DIVISOR,
};
use bbg::ops;
use bbg::quant::WeightQuant;
use bbg::rng::{SeedRng, Stream};
use bbg::tensor::Tensor4;
use rand_chacha::ChaCha8Rng;

fn rng(i: u64) -> ChaCha8Rng {
    SeedRng::new(11).stream(Stream::Test, i)
}

fn unit(variant: BlockVariant, cin: usize, cout: usize, stride: usize, seed: u64) -> ResidualUnit<f64> {
    ResidualUnit::build(variant, WeightQuant::Balanced, cin, cout, stride, &mut rng(seed))
}

#[test]
fn gated_equals_bireal_at_init_on_50_inputs() {
    let spec = ModelSpec::resnet20().with_input([3, 16, 16], 10);
    let mut gated = Model::<f32>::new(&spec.clone().with_variant(BlockVariant::Gated), 5).unwrap();
    let mut bireal = Model::<f32>::new(&spec.with_variant(BlockVariant::Bireal), 5).unwrap();
    let mut r = rng(0);
    for _ in 0..50 {
        let x = Tensor4::uniform(gated.input_shape(2), 0.0, 1.0, &mut r);
        assert_eq!(gated.forward(&x, Mode::Train).unwrap(), bireal.forward(&x, Mode::Train).unwrap());
    }
}

#[test]
fn gradient_additivity_against_bireal() {
    let mut gated = unit(BlockVariant::Gated, 4, 4, 1, 1);
    let mut bireal = unit(BlockVariant::Bireal, 4, 4, 1, 1);
    let s = vec![0.3, -1.2, 2.0, 0.9];
    gated.shortcut.gate_mut().unwrap().s.value = Tensor4::vector(s.clone());
    let mut r = rng(1);
    let x = Tensor4::uniform([2, 4, 5, 5], -0.5, 1.5, &mut r);
    let g_y = Tensor4::randn([2, 4, 5, 5], 1.0, &mut r);
    gated_block_forward(&x, &mut gated, Mode::Train).unwrap();
    gated_block_forward(&x, &mut bireal, Mode::Train).unwrap();
    let gg = gated_block_backward(&g_y, &mut gated).unwrap();
    let gb = gated_block_backward(&g_y, &mut bireal).unwrap();
    let sm1: Vec<f64> = s.iter().map(|v| v - 1.0).collect();
    let want = ops::scale_channels(&g_y, &sm1).unwrap();
    let diff = gg.g_x.zip_map(&gb.g_x, "diff", |a, b| a - b).unwrap();
    assert!(diff.max_abs_diff(&want) < 1e-12);
}

#[test]
fn zero_body_gate_gradient_is_channel_inner_product() {
    let mut u = unit(BlockVariant::Gated, 3, 3, 1, 2);
    for conv in &mut u.body {
        conv.bn.gamma.value.fill(0.0);
        conv.bn.beta.value.fill(0.0);
    }
    let mut r = rng(2);
    let x = Tensor4::uniform([2, 3, 4, 4], 0.0, 1.0, &mut r);
    let g_y = Tensor4::randn(x.shape(), 1.0, &mut r);
    gated_block_forward(&x, &mut u, Mode::Train).unwrap();
    let g_s = gated_block_backward(&g_y, &mut u).unwrap().g_s.unwrap();
    for c in 0..3 {
        let mut want = 0.0;
        for n in 0..2 {
            for (a, b) in g_y.plane(n, c).iter().zip(x.plane(n, c)) {
                want += a * b;
            }
        }
        assert!((g_s.data()[c] - want).abs() < 1e-12);
    }
}

#[test]
fn gate_gradient_matches_finite_differences() {
    let mut u = unit(BlockVariant::Gated, 3, 3, 1, 3);
    let mut r = rng(3);
    let x = Tensor4::uniform([2, 3, 4, 4], 0.0, 1.0, &mut r);
    let proj = Tensor4::randn(x.shape(), 1.0, &mut r);
    let loss = |u: &mut ResidualUnit<f64>| -> f64 {
        let y = gated_block_forward(&x, u, Mode::Train).unwrap();
        y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    loss(&mut u);
    let g_s = gated_block_backward(&proj, &mut u).unwrap().g_s.unwrap();
    for c in 0..3 {
        let h = 1e-6;
        let gate = |u: &mut ResidualUnit<f64>, d: f64| u.shortcut.gate_mut().unwrap().s.value.data_mut()[c] += d;
        gate(&mut u, h);
        let up = loss(&mut u);
        gate(&mut u, -2.0 * h);
        let down = loss(&mut u);
        gate(&mut u, h);
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - g_s.data()[c]).abs() / numeric.abs().max(1e-8);
        assert!(rel < 1e-6, "channel {c}: {numeric} vs {}", g_s.data()[c]);
    }
}

#[test]
fn block_is_composition_of_sub_ops() {
    for variant in BlockVariant::ALL {
        let mut u = unit(variant, 4, 8, 2, 4);
        let mut r = rng(4);
        let x = Tensor4::uniform([2, 4, 6, 6], 0.0, 1.0, &mut r);
        let y = gated_block_forward(&x, &mut u, Mode::Train).unwrap();
        let mut reference = u.clone();
        let mut f = x.clone();
        for conv in &mut reference.body {
            f = conv.forward(&f, Mode::Train).unwrap();
        }
        let res = match &mut reference.shortcut {
            Shortcut::Downsample { conv, bn, gate } => {
                let z = bn.forward(&conv.forward(&x, Mode::Train).unwrap(), Mode::Train).unwrap();
                match gate {
                    Some(g) => ops::scale_channels(&z, g.s.value.data()).unwrap(),
                    None => z,
                }
            }
            _ => panic!("stride 2 needs a projection"),
        };
        assert_eq!(y, ops::add(&f, &res).unwrap(), "{variant}");
        assert_eq!(y.shape().dims(), [2, 8, 3, 3]);
    }
}

#[test]
fn stage_transitions_preserve_declared_shapes() {
    for variant in BlockVariant::ALL {
        let spec = ModelSpec::resnet20().with_variant(variant);
        let mut m = Model::<f32>::new(&spec, 1).unwrap();
        let x = Tensor4::filled(m.input_shape(1), 0.6);
        let mut z = m.forward_stem(&x, Mode::Eval).unwrap();
        for u in &mut m.units {
            let want = u.body.last().unwrap().out_channels();
            z = u.forward(&z, Mode::Eval).unwrap();
            assert_eq!(z.shape().c, want);
        }
        assert_eq!(z.shape().dims(), [1, 64, 8, 8], "{variant}");
    }
}

#[test]
fn exclusion_rule_holds_for_every_build() {
    for arch in [Arch::Resnet20, Arch::BasicCnn] {
        for variant in BlockVariant::ALL {
            for quant in [WeightQuant::Balanced, WeightQuant::Vanilla] {
                let base = match arch {
                    Arch::Resnet20 => ModelSpec::resnet20(),
                    Arch::BasicCnn => ModelSpec::basiccnn(),
                };
                let m = Model::<f32>::new(&base.with_variant(variant).with_quant(quant), 1).unwrap();
                for l in m.describe().unwrap() {
                    match l.role {
                        LayerRole::Stem | LayerRole::Classifier | LayerRole::Downsample | LayerRole::Gate => {
                            assert!(!l.quantized, "{arch} {variant}: {}", l.name)
                        }
                        LayerRole::Binary => assert!(l.quantized, "{arch} {variant}: {}", l.name),
                    }
                }
            }
        }
    }
}

#[test]
fn binary_parameter_count_is_closed_form() {
    let mut m = Model::<f32>::new(&ModelSpec::resnet20(), 1).unwrap();
    let mut count = 0;
    m.visit_params("", &mut |name, _, p| {
        if name.ends_with("proxy") {
            count += p.value.len();
        }
    });
    // 16→16 ×6, 16→32, 32→32 ×5, 32→64, 64→64 ×5; all 3×3.
    let want = 9 * (6 * 16 * 16 + 16 * 32 + 5 * 32 * 32 + 32 * 64 + 5 * 64 * 64);
    assert_eq!(count, want);
}

#[test]
fn flops_are_additive_over_layers() {
    let m = Model::<f32>::new(&ModelSpec::resnet20(), 1).unwrap();
    let r = count_flops(&m).unwrap();
    let layers = m.describe().unwrap();
    let mut float = 0u64;
    let mut binary = 0u64;
    let mut gate = 0u64;
    for l in &layers {
        let ops = (l.out[1] * l.out[2]) as u64 * l.weight.numel() as u64;
        match l.role {
            LayerRole::Binary => binary += ops,
            LayerRole::Gate => gate += (l.out[0] * l.out[1] * l.out[2]) as u64,
            _ => float += ops,
        }
    }
    assert_eq!((r.float_ops, r.binary_ops, r.gate_ops), (float, binary, gate));
    let total = float as f64 + binary as f64 / BINARY_OP_DIVISOR as f64 + gate as f64;
    assert!((r.total - total).abs() < 1e-6);
}
