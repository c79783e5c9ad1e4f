//! Row-major matrix multiply-accumulate used by the float convolution and
//! linear layers.

use crate::tensor::Real;

const ROW_BLOCK: usize = 4;

#[inline(always)]
fn kernel<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let full = m - m % ROW_BLOCK;
    for i in (0..full).step_by(ROW_BLOCK) {
        let (c0, rest) = c[i * n..(i + ROW_BLOCK) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
    }
    for i in full..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn gemm_portable<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    kernel(m, k, n, a, b, c);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_f32_avx2(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    kernel(m, k, n, a, b, c);
}

/// f32 entry point. Dispatches to an AVX2 build of the same kernel when the
/// CPU supports it; FMA stays disabled so both variants round identically.
pub(crate) fn gemm_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature check above guarantees AVX2 is available.
        unsafe { gemm_f32_avx2(m, k, n, a, b, c) };
        return;
    }
    kernel(m, k, n, a, b, c);
}

/// Out-of-place transpose of a row-major `rows×cols` matrix.
pub(crate) fn transpose<T: Real>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    debug_assert!(src.len() >= rows * cols && dst.len() >= rows * cols);
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};
    use crate::tensor::Tensor4;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_on_odd_sizes() {
        let mut rng = SeedRng::new(1).stream(Stream::Test, 0);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (7, 9, 13), (4, 1, 3), (9, 17, 2)] {
            let a = Tensor4::<f64>::randn([1, 1, m, k], 1.0, &mut rng);
            let b = Tensor4::<f64>::randn([1, 1, k, n], 1.0, &mut rng);
            let mut c = vec![0.0; m * n];
            f64::gemm(m, k, n, a.data(), b.data(), &mut c);
            let want = naive(m, k, n, a.data(), b.data());
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f32_dispatch_is_bitwise_equal_to_portable() {
        let mut rng = SeedRng::new(2).stream(Stream::Test, 0);
        let (m, k, n) = (10, 37, 29);
        let a = Tensor4::<f32>::randn([1, 1, m, k], 1.0, &mut rng);
        let b = Tensor4::<f32>::randn([1, 1, k, n], 1.0, &mut rng);
        let mut fast = vec![0.0f32; m * n];
        let mut slow = vec![0.0f32; m * n];
        f32::gemm(m, k, n, a.data(), b.data(), &mut fast);
        gemm_portable(m, k, n, a.data(), b.data(), &mut slow);
        assert_eq!(fast, slow);
    }

    #[test]
    fn transpose_round_trips() {
        let src: Vec<f32> = (0..35).map(|v| v as f32).collect();
        let mut t = vec![0.0; 35];
        let mut back = vec![0.0; 35];
        transpose(5, 7, &src, &mut t);
        assert_eq!(t[1], 7.0);
        transpose(7, 5, &t, &mut back);
        assert_eq!(src, back);
    }
}
