use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Values saved by the training-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
}

fn check_params<T: Real>(x: &Tensor4<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    let c = x.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm2d",
            format!("input has {c} channels, gamma {} and beta {}", gamma.len(), beta.len()),
        ));
    }
    Ok(())
}

/// Training-mode batch normalization over `(N, H, W)` per channel.
///
/// Updates `running_mean`/`running_var` with momentum [`BN_MOMENTUM`]; the
/// running variance uses the unbiased batch estimate.
pub fn batchnorm_train<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
) -> Result<(Tensor4<T>, BnCache<T>)> {
    check_params(x, gamma, beta)?;
    let s = x.shape();
    if running_mean.len() != s.c || running_var.len() != s.c {
        return Err(Error::shape("batchnorm2d", "running statistics length differs from channels"));
    }
    let count = s.n * s.plane_len();
    if count == 0 {
        return Err(Error::shape("batchnorm2d", "empty batch"));
    }
    let m = T::from_usize(count);
    let eps = T::from_f64(BN_EPS);
    let momentum = T::from_f64(BN_MOMENTUM);

    let mut y = Tensor4::zeros(s);
    let mut xhat = Tensor4::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut sum = T::zero();
        for n in 0..s.n {
            sum += x.plane(n, c).iter().copied().sum::<T>();
        }
        let mean = sum / m;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq += x.plane(n, c).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
        }
        let var = sq / m;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[c] = istd;
        for n in 0..s.n {
            let src = x.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            for (h, &v) in xh.iter_mut().zip(src) {
                *h = (v - mean) * istd;
            }
            let (g, b) = (gamma[c], beta[c]);
            let dst = y.plane_mut(n, c);
            for (o, &h) in dst.iter_mut().zip(xhat.plane(n, c)) {
                *o = g * h + b;
            }
        }
        let unbiased = if count > 1 { sq / T::from_usize(count - 1) } else { var };
        running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * mean;
        running_var[c] = (T::one() - momentum) * running_var[c] + momentum * unbiased;
    }
    Ok((y, BnCache { xhat, inv_std }))
}

/// Returns `(g_x, g_gamma, g_beta)`.
pub fn batchnorm_backward<T: Real>(
    g_y: &Tensor4<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let s = cache.xhat.shape();
    g_y.expect_shape(s, "batchnorm_backward")?;
    let m = T::from_usize(s.n * s.plane_len());
    let mut g_x = Tensor4::zeros(s);
    let mut g_gamma = vec![T::zero(); s.c];
    let mut g_beta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for n in 0..s.n {
            for (&g, &h) in g_y.plane(n, c).iter().zip(cache.xhat.plane(n, c)) {
                sg += g;
                sgx += g * h;
            }
        }
        g_beta[c] = sg;
        g_gamma[c] = sgx;
        let k = gamma[c] * cache.inv_std[c] / m;
        for n in 0..s.n {
            let gy = g_y.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            for ((o, &g), &h) in g_x.plane_mut(n, c).iter_mut().zip(gy).zip(xh) {
                *o = k * (m * g - sg - h * sgx);
            }
        }
    }
    Ok((g_x, g_gamma, g_beta))
}

/// Folds a scalar pre-scale `alpha` and inference-mode batch normalization
/// into one per-channel affine `y = acc·scale + shift`.
///
/// Both the float eval path and the packed engine call this, so they apply
/// bit-identical constants.
pub fn fold_affine<T: Real>(alpha: T, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64(BN_EPS);
    gamma
        .iter()
        .zip(beta)
        .zip(mean.iter().zip(var))
        .map(|((&g, &b), (&mu, &v))| {
            let bn_scale = g / (v + eps).sqrt();
            (alpha * bn_scale, b - mu * bn_scale)
        })
        .unzip()
}

/// In-place per-channel `x·scale + shift`.
pub fn apply_affine<T: Real>(x: &mut Tensor4<T>, scale: &[T], shift: &[T]) -> Result<()> {
    let s = x.shape();
    if scale.len() != s.c || shift.len() != s.c {
        return Err(Error::shape("apply_affine", format!("{} channels vs {} constants", s.c, scale.len())));
    }
    for n in 0..s.n {
        for c in 0..s.c {
            let (a, b) = (scale[c], shift[c]);
            for v in x.plane_mut(n, c) {
                *v = *v * a + b;
            }
        }
    }
    Ok(())
}

/// Inference-mode batch normalization from running statistics.
pub fn batchnorm_eval<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor4<T>> {
    check_params(x, gamma, beta)?;
    if running_mean.len() != gamma.len() || running_var.len() != gamma.len() {
        return Err(Error::shape("batchnorm2d", "running statistics length differs from channels"));
    }
    if running_var.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) || running_mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("eval-mode batchnorm needs finite running statistics".into()));
    }
    let (scale, shift) = fold_affine(T::one(), gamma, beta, running_mean, running_var);
    let mut y = x.clone();
    apply_affine(&mut y, &scale, &shift)?;
    Ok(y)
}
