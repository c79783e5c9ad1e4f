use bbg::bitpack::{
    from_bytes, pack_bits, pack_filters, packed_conv2d, packed_conv2d_portable, popdot, to_bytes, BitDomain,
    PackedConv, PackedModel,
};
use bbg::layers::{BlockVariant, Mode, Model, ModelSpec};
use bbg::ops::BN_EPS;
use bbg::rng::{SeedRng, Stream};
use bbg::tensor::Tensor4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rng(i: u64) -> ChaCha8Rng {
    SeedRng::new(23).stream(Stream::Test, i)
}

fn signs(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor4<f32> {
    Tensor4::<f32>::uniform(shape, -1.0, 1.0, r).map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

fn bits(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor4<f32> {
    Tensor4::<f32>::uniform(shape, 0.0, 1.0, r).map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

#[test]
fn popdot_matches_loop_on_10k_pairs() {
    let mut r = rng(0);
    for _ in 0..10_000 {
        let len = r.random_range(1..=300);
        let w = signs([1, 1, 1, len], &mut r);
        let a = bits([1, 1, 1, len], &mut r);
        let want: i64 = w.data().iter().zip(a.data()).map(|(x, y)| (*x * *y) as i64).sum();
        let got = popdot(&pack_bits(&w, BitDomain::Sign).unwrap(), &pack_bits(&a, BitDomain::Activation).unwrap()).unwrap();
        assert_eq!(got, want, "length {len}");
    }
}

#[test]
fn padding_bits_stay_clear() {
    let mut r = rng(1);
    for cin in [1, 7, 63, 64, 65, 127, 128, 130] {
        let w = signs([5, cin, 3, 3], &mut r);
        let p = pack_filters(&w).unwrap();
        assert_eq!(p.padding_popcount(), 0);
        assert_eq!(p.unpack_filters(), w);
        let a = pack_bits(&bits([1, cin, 1, 1], &mut r), BitDomain::Activation).unwrap();
        assert_eq!(a.padding_popcount(), 0);
    }
}

#[test]
fn zero_padding_contributes_nothing() {
    // An all-zero input through a padded conv must give exactly the shift.
    let mut r = rng(2);
    let w = signs([3, 70, 3, 3], &mut r);
    let layer = PackedConv::new(&w, 0.5, vec![2.0, -1.0, 0.5], vec![0.25, 1.0, -3.0], 1, 1).unwrap();
    let y = packed_conv2d(&layer, &Tensor4::zeros([1, 70, 5, 5])).unwrap();
    for c in 0..3 {
        assert!(y.plane(0, c).iter().all(|&v| v == layer.shift[c]));
    }
}

#[test]
fn folded_affine_matches_unfolded_batchnorm() {
    let mut r = rng(3);
    for _ in 0..50 {
        let (cin, cout) = (r.random_range(1..=80), r.random_range(1..=6));
        let w = signs([cout, cin, 3, 3], &mut r);
        let x = bits([2, cin, 5, 5], &mut r);
        let alpha: f64 = r.random_range(0.01..2.0);
        let gamma: Vec<f64> = (0..cout).map(|_| r.random_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let mean: Vec<f64> = (0..cout).map(|_| r.random_range(-5.0..5.0)).collect();
        let var: Vec<f64> = (0..cout).map(|_| r.random_range(0.1..20.0)).collect();
        let scale: Vec<f32> = (0..cout).map(|c| (alpha * gamma[c] / (var[c] + BN_EPS).sqrt()) as f32).collect();
        let shift: Vec<f32> = (0..cout)
            .map(|c| (beta[c] - gamma[c] * mean[c] / (var[c] + BN_EPS).sqrt()) as f32)
            .collect();
        let stride = r.random_range(1..=2);
        let layer = PackedConv::new(&w, alpha as f32, scale, shift, stride, 1).unwrap();
        let got = packed_conv2d(&layer, &x).unwrap();
        let s = got.shape();
        for n in 0..2 {
            for o in 0..cout {
                for oy in 0..s.h {
                    for ox in 0..s.w {
                        let mut acc = 0i64;
                        for i in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (iy, ix) = ((oy * stride + ky) as isize - 1, (ox * stride + kx) as isize - 1);
                                    if iy < 0 || ix < 0 || iy >= 5 || ix >= 5 {
                                        continue;
                                    }
                                    acc += (w.at(o, i, ky, kx) * x.at(n, i, iy as usize, ix as usize)) as i64;
                                }
                            }
                        }
                        let want = gamma[o] * (alpha * acc as f64 - mean[o]) / (var[o] + BN_EPS).sqrt() + beta[o];
                        let v = got.at(n, o, oy, ox) as f64;
                        assert!((v - want).abs() <= 1e-4 * want.abs().max(1.0), "{v} vs {want}");
                    }
                }
            }
        }
    }
}

#[test]
fn popcount_backends_agree() {
    let mut r = rng(4);
    for cin in [3, 64, 100] {
        let layer = PackedConv::new(&signs([4, cin, 3, 3], &mut r), 1.0, vec![1.0; 4], vec![0.0; 4], 1, 1).unwrap();
        let x = Tensor4::uniform([2, cin, 6, 6], -1.0, 2.0, &mut r);
        assert_eq!(packed_conv2d(&layer, &x).unwrap(), packed_conv2d_portable(&layer, &x).unwrap());
    }
}

#[test]
fn exported_models_match_float_eval_bitwise() {
    for variant in BlockVariant::ALL {
        let mut spec = ModelSpec::resnet20().with_variant(variant).with_input([3, 16, 16], 10);
        spec.kernel_stage = [8, 16, 16];
        let mut m = Model::<f32>::new(&spec, 7).unwrap();
        let mut r = rng(5);
        let x = Tensor4::uniform(m.input_shape(8), 0.0, 1.0, &mut r);
        m.forward(&x, Mode::Train).unwrap();
        let packed = PackedModel::from_model(&m).unwrap();
        let reloaded = from_bytes(&to_bytes(&packed), "mem").unwrap();
        assert_eq!(reloaded, packed);
        assert_eq!(packed.forward(&x).unwrap(), m.forward(&x, Mode::Eval).unwrap(), "{variant}");
    }
}
