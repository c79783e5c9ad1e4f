//! Every smooth op's backward against 64-bit central differences, and
//! conv2d against a direct loop summation.

use bbg::ops;
use bbg::rng::{SeedRng, Stream};
use bbg::tensor::Tensor4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rng(i: u64) -> ChaCha8Rng {
    SeedRng::new(7).stream(Stream::Test, i)
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences of `f` at every coordinate of `x`, compared to `g`.
fn assert_fd(name: &str, x: &Tensor4<f64>, g: &[f64], f: impl Fn(&Tensor4<f64>) -> f64) {
    assert_eq!(x.len(), g.len(), "{name}");
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += H;
        let mut down = x.clone();
        down.data_mut()[i] -= H;
        let numeric = (f(&up) - f(&down)) / (2.0 * H);
        let e = rel(g[i], numeric);
        assert!(e < 1e-3, "{name}[{i}]: analytic {} numeric {numeric} rel {e}", g[i]);
    }
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(0);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
        let x = Tensor4::<f64>::randn([2, 3, 5, 5], 1.0, &mut r);
        let w = Tensor4::<f64>::randn([4, 3, 3, 3], 1.0, &mut r);
        let y = ops::conv2d(&x, &w, stride, pad).unwrap();
        let proj = Tensor4::randn(y.shape(), 1.0, &mut r);
        let (gx, gw) = ops::conv2d_backward(&x, &w, &proj, stride, pad, true).unwrap();
        assert_fd("conv x", &x, gx.unwrap().data(), |x| dot(&ops::conv2d(x, &w, stride, pad).unwrap(), &proj));
        assert_fd("conv w", &w, gw.data(), |w| dot(&ops::conv2d(&x, w, stride, pad).unwrap(), &proj));
    }
}

#[test]
fn batchnorm_gradients() {
    let mut r = rng(1);
    let x = Tensor4::<f64>::randn([3, 2, 3, 3], 2.0, &mut r);
    let gamma = vec![1.5, -0.7];
    let beta = vec![0.2, 0.3];
    let run = |x: &Tensor4<f64>, gamma: &[f64], beta: &[f64]| {
        let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
        ops::batchnorm_train(x, gamma, beta, &mut m, &mut v).unwrap()
    };
    let (y, cache) = run(&x, &gamma, &beta);
    let proj = Tensor4::randn(y.shape(), 1.0, &mut r);
    let (gx, gg, gb) = ops::batchnorm_backward(&proj, &cache, &gamma).unwrap();
    assert_fd("bn x", &x, gx.data(), |x| dot(&run(x, &gamma, &beta).0, &proj));
    let gt = Tensor4::vector(gamma.clone());
    assert_fd("bn gamma", &gt, &gg, |g| dot(&run(&x, g.data(), &beta).0, &proj));
    let bt = Tensor4::vector(beta.clone());
    assert_fd("bn beta", &bt, &gb, |b| dot(&run(&x, &gamma, b.data()).0, &proj));
}

#[test]
fn linear_and_cross_entropy_gradients() {
    let mut r = rng(2);
    let x = Tensor4::<f64>::randn([3, 5, 1, 1], 1.0, &mut r);
    let w = Tensor4::<f64>::randn([4, 5, 1, 1], 1.0, &mut r);
    let b = Tensor4::<f64>::randn([1, 4, 1, 1], 1.0, &mut r);
    let labels = [0, 3, 1];
    let loss = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &Tensor4<f64>| {
        ops::softmax_cross_entropy(&ops::linear(x, w, b).unwrap(), &labels).unwrap().0
    };
    let logits = ops::linear(&x, &w, &b).unwrap();
    let (_, g_logits) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    let (gx, gw, gb) = ops::linear_backward(&x, &w, &b, &g_logits).unwrap();
    assert_fd("linear x", &x, gx.data(), |x| loss(x, &w, &b));
    assert_fd("linear w", &w, gw.data(), |w| loss(&x, w, &b));
    assert_fd("linear b", &b, gb.data(), |b| loss(&x, &w, b));
}

#[test]
fn pooling_relu_and_gate_gradients() {
    let mut r = rng(3);
    let x = Tensor4::<f64>::randn([2, 3, 4, 4], 1.0, &mut r);
    let s = x.shape();

    let y = ops::avgpool2d(&x, 2, 2).unwrap();
    let proj = Tensor4::randn(y.shape(), 1.0, &mut r);
    let g = ops::avgpool2d_backward(s, 2, 2, &proj).unwrap();
    assert_fd("avgpool", &x, g.data(), |x| dot(&ops::avgpool2d(x, 2, 2).unwrap(), &proj));

    let (y, arg) = ops::maxpool2d(&x, 2, 2).unwrap();
    let proj = Tensor4::randn(y.shape(), 1.0, &mut r);
    let g = ops::maxpool2d_backward(s, &arg, &proj).unwrap();
    assert_fd("maxpool", &x, g.data(), |x| dot(&ops::maxpool2d(x, 2, 2).unwrap().0, &proj));

    let y = ops::global_avg_pool(&x);
    let proj = Tensor4::randn(y.shape(), 1.0, &mut r);
    let g = ops::global_avg_pool_backward(s, &proj).unwrap();
    assert_fd("gap", &x, g.data(), |x| dot(&ops::global_avg_pool(x), &proj));

    let proj = Tensor4::randn(s, 1.0, &mut r);
    let g = ops::relu_backward(&x, &proj).unwrap();
    assert_fd("relu", &x, g.data(), |x| dot(&ops::relu(x), &proj));

    let gate = vec![0.5, 1.0, -2.0];
    let (gx, gs) = ops::scale_channels_backward(&x, &gate, &proj).unwrap();
    assert_fd("gate x", &x, gx.data(), |x| dot(&ops::scale_channels(x, &gate).unwrap(), &proj));
    let st = Tensor4::vector(gate.clone());
    assert_fd("gate s", &st, &gs, |s| dot(&ops::scale_channels(&x, s.data()).unwrap(), &proj));
}

fn loop_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    let mut out = Vec::new();
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += x.at(n, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_loop_oracle_on_200_configs() {
    let mut r = rng(4);
    for case in 0..200 {
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..=2);
        let pad = r.random_range(0..=k / 2);
        let h = r.random_range(k.max(1)..=9);
        let w = r.random_range(k.max(1)..=9);
        let x = Tensor4::<f32>::randn([r.random_range(1..=3), r.random_range(1..=6), h, w], 1.0, &mut r);
        let wt = Tensor4::<f32>::randn([r.random_range(1..=6), x.shape().c, k, k], 1.0, &mut r);
        let got = ops::conv2d(&x, &wt, stride, pad).unwrap();
        let want = loop_conv(&x.cast(), &wt.cast(), stride, pad);
        assert_eq!(got.len(), want.len(), "case {case}");
        for (i, (&g, &e)) in got.data().iter().zip(&want).enumerate() {
            assert!((g as f64 - e).abs() < 1e-5 * e.abs().max(1.0), "case {case} [{i}]: {g} vs {e}");
        }
    }
}

#[test]
fn spec_conv_example() {
    let mut r = rng(5);
    let x = Tensor4::<f32>::randn([2, 3, 5, 5], 1.0, &mut r);
    let w = Tensor4::<f32>::randn([4, 3, 3, 3], 1.0, &mut r);
    let got = ops::conv2d(&x, &w, 1, 1).unwrap();
    let want = loop_conv(&x.cast(), &w.cast(), 1, 1);
    for (&g, &e) in got.data().iter().zip(&want) {
        assert!((g as f64 - e).abs() < 1e-5);
    }
}
