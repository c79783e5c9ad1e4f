use crate::error::{Error, Result};
use crate::gemm::transpose;
use crate::tensor::{Real, Shape4, Tensor4};

pub fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    a.zip_map(b, "add", |x, y| x + y)
}

/// Multiplies channel `i` of every item by `s[i]`.
pub fn scale_channels<T: Real>(x: &Tensor4<T>, s: &[T]) -> Result<Tensor4<T>> {
    let shape = x.shape();
    if s.len() != shape.c {
        return Err(Error::shape(
            "scale_channels",
            format!("{} scales for input {shape}", s.len()),
        ));
    }
    let mut y = x.clone();
    for n in 0..shape.n {
        for (c, &sc) in s.iter().enumerate() {
            y.plane_mut(n, c).iter_mut().for_each(|v| *v *= sc);
        }
    }
    Ok(y)
}

/// Returns `(g_x, g_s)` for `y = s ⊙ x`.
pub fn scale_channels_backward<T: Real>(x: &Tensor4<T>, s: &[T], g_y: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>)> {
    g_y.expect_shape(x.shape(), "scale_channels_backward")?;
    let g_x = scale_channels(g_y, s)?;
    let shape = x.shape();
    let mut g_s = vec![T::zero(); shape.c];
    for n in 0..shape.n {
        for (c, gs) in g_s.iter_mut().enumerate() {
            *gs += x.plane(n, c).iter().zip(g_y.plane(n, c)).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
    Ok((g_x, g_s))
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor4<T>, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.zip_map(g_y, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
}

fn pool_shape(op: &'static str, s: Shape4, k: usize, stride: usize) -> Result<Shape4> {
    if k == 0 || stride == 0 || s.h < k || s.w < k {
        return Err(Error::shape(op, format!("window {k} stride {stride} on input {s}")));
    }
    Ok(Shape4::new(s.n, s.c, (s.h - k) / stride + 1, (s.w - k) / stride + 1))
}

/// Max pooling without padding. Also returns the flat input index of each
/// window's maximum (first occurrence wins ties).
pub fn maxpool2d<T: Real>(x: &Tensor4<T>, k: usize, stride: usize) -> Result<(Tensor4<T>, Vec<usize>)> {
    let s = x.shape();
    let os = pool_shape("maxpool2d", s, k, stride)?;
    let mut y = Tensor4::zeros(os);
    let mut arg = vec![0usize; os.numel()];
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut best = x.offset(n, c, oy * stride, ox * stride);
                    for ky in 0..k {
                        for kx in 0..k {
                            let i = x.offset(n, c, oy * stride + ky, ox * stride + kx);
                            if x.data()[i] > x.data()[best] {
                                best = i;
                            }
                        }
                    }
                    y.data_mut()[o] = x.data()[best];
                    arg[o] = best;
                    o += 1;
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2d_backward<T: Real>(in_shape: Shape4, argmax: &[usize], g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    if argmax.len() != g_y.len() {
        return Err(Error::shape("maxpool2d_backward", "argmax length differs from gradient"));
    }
    let mut g_x = Tensor4::zeros(in_shape);
    for (&i, &g) in argmax.iter().zip(g_y.data()) {
        g_x.data_mut()[i] += g;
    }
    Ok(g_x)
}

/// Average pooling without padding.
pub fn avgpool2d<T: Real>(x: &Tensor4<T>, k: usize, stride: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    let os = pool_shape("avgpool2d", s, k, stride)?;
    let inv = T::one() / T::from_usize(k * k);
    let mut y = Tensor4::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += x.at(n, c, oy * stride + ky, ox * stride + kx);
                        }
                    }
                    y.set(n, c, oy, ox, acc * inv);
                }
            }
        }
    }
    Ok(y)
}

pub fn avgpool2d_backward<T: Real>(in_shape: Shape4, k: usize, stride: usize, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    let os = pool_shape("avgpool2d_backward", in_shape, k, stride)?;
    g_y.expect_shape(os, "avgpool2d_backward")?;
    let inv = T::one() / T::from_usize(k * k);
    let mut g_x = Tensor4::zeros(in_shape);
    for n in 0..os.n {
        for c in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = g_y.at(n, c, oy, ox) * inv;
                    for ky in 0..k {
                        for kx in 0..k {
                            let i = g_x.offset(n, c, oy * stride + ky, ox * stride + kx);
                            g_x.data_mut()[i] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(g_x)
}

/// Mean over each `H×W` plane; output `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let s = x.shape();
    let inv = T::one() / T::from_usize(s.plane_len().max(1));
    let mut y = Tensor4::zeros([s.n, s.c, 1, 1]);
    for n in 0..s.n {
        for c in 0..s.c {
            let m = x.plane(n, c).iter().copied().sum::<T>() * inv;
            y.set(n, c, 0, 0, m);
        }
    }
    y
}

pub fn global_avg_pool_backward<T: Real>(in_shape: Shape4, g_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    g_y.expect_shape(Shape4::new(in_shape.n, in_shape.c, 1, 1), "global_avg_pool_backward")?;
    let inv = T::one() / T::from_usize(in_shape.plane_len().max(1));
    let mut g_x = Tensor4::zeros(in_shape);
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            let g = g_y.at(n, c, 0, 0) * inv;
            g_x.plane_mut(n, c).fill(g);
        }
    }
    Ok(g_x)
}

fn check_linear<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>, b: &Tensor4<T>) -> Result<(usize, usize, usize)> {
    let (n, d) = (x.shape().n, x.shape().item_len());
    let (out, inp) = (w.shape().n, w.shape().item_len());
    if inp != d || b.len() != out {
        return Err(Error::shape(
            "linear",
            format!("input {} flattens to {d}, weight {} expects {inp}, bias has {}", x.shape(), w.shape(), b.len()),
        ));
    }
    Ok((n, d, out))
}

/// `y = flatten(x) · Wᵀ + b` with `W (out, in, 1, 1)`; output `(N, out, 1, 1)`.
pub fn linear<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (n, d, out) = check_linear(x, w, b)?;
    let mut w_t = vec![T::zero(); d * out];
    transpose(out, d, w.data(), &mut w_t);
    let mut y = Tensor4::zeros([n, out, 1, 1]);
    for i in 0..n {
        y.item_mut(i).copy_from_slice(b.data());
    }
    T::gemm(n, d, out, x.data(), &w_t, y.data_mut());
    Ok(y)
}

/// Returns `(g_x, g_w, g_b)`.
pub fn linear_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    b: &Tensor4<T>,
    g_y: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Tensor4<T>)> {
    let (n, d, out) = check_linear(x, w, b)?;
    g_y.expect_shape(Shape4::new(n, out, 1, 1), "linear_backward")?;
    let mut g_x = Tensor4::zeros(x.shape());
    T::gemm(n, out, d, g_y.data(), w.data(), g_x.data_mut());
    let mut g_t = vec![T::zero(); n * out];
    transpose(n, out, g_y.data(), &mut g_t);
    let mut g_w = Tensor4::zeros(w.shape());
    T::gemm(out, n, d, &g_t, x.data(), g_w.data_mut());
    let mut g_b = Tensor4::zeros(b.shape());
    for i in 0..n {
        for (gb, &g) in g_b.data_mut().iter_mut().zip(g_y.item(i)) {
            *gb += g;
        }
    }
    Ok((g_x, g_w, g_b))
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(T, Tensor4<T>)> {
    let s = logits.shape();
    let k = s.item_len();
    if labels.len() != s.n || s.n == 0 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for logits {s}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
    }
    let inv_n = T::one() / T::from_usize(s.n);
    let mut grad = Tensor4::zeros(s);
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.item(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        for (j, (g, &v)) in grad.item_mut(i).iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            let target = if j == label { T::one() } else { T::zero() };
            *g = (p - target) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Index of the largest logit of each item.
pub fn argmax_rows<T: Real>(logits: &Tensor4<T>) -> Vec<usize> {
    (0..logits.shape().n)
        .map(|i| {
            let row = logits.item(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor4::<f64>::filled([3, 10, 1, 1], 0.7);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn relu_values() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn linear_matches_hand_matrix_product() {
        // 3 samples, 4 features, 2 outputs
        let x = Tensor4::<f64>::from_vec([3, 4, 1, 1], (1..=12).map(f64::from).collect()).unwrap();
        let w = Tensor4::<f64>::from_vec([2, 4, 1, 1], vec![1., 0., -1., 2., 0.5, 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor4::<f64>::vector(vec![0.25, -1.0]);
        let y = linear(&x, &w, &b).unwrap();
        let want = [
            1. - 3. + 8. + 0.25,
            0.5 * 10. - 1.0,
            5. - 7. + 16. + 0.25,
            0.5 * 26. - 1.0,
            9. - 11. + 24. + 0.25,
            0.5 * 42. - 1.0,
        ];
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn maxpool_picks_window_maximum() {
        let x = Tensor4::<f32>::from_vec([1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 9.]).unwrap();
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        assert_eq!(arg, vec![1, 6]);
    }

    #[test]
    fn avgpool_and_gap() {
        let x = Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![1., 2., 3., 6.]).unwrap();
        assert_eq!(avgpool2d(&x, 2, 2).unwrap().data(), &[3.0]);
        assert_eq!(global_avg_pool(&x).data(), &[3.0]);
    }

    #[test]
    fn scale_channels_length_mismatch() {
        let x = Tensor4::<f32>::zeros([1, 3, 2, 2]);
        assert!(scale_channels(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn add_shape_mismatch() {
        let a = Tensor4::<f32>::zeros([1, 3, 2, 2]);
        let b = Tensor4::<f32>::zeros([1, 3, 2, 1]);
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn argmax_first_wins_ties() {
        let mut rng = SeedRng::new(1).stream(Stream::Test, 0);
        let mut t = Tensor4::<f32>::randn([2, 5, 1, 1], 1.0, &mut rng);
        t.item_mut(0).copy_from_slice(&[0.0, 3.0, 3.0, 1.0, -2.0]);
        assert_eq!(argmax_rows(&t)[0], 1);
    }
}
