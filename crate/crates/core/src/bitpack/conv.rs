use crate::error::{Error, Result};
use crate::ops::ConvGeom;
use crate::quant::binarize_value;
use crate::tensor::{Shape4, Tensor4};

use super::{pack_filters, words_for, BitPlane, WORD_BITS};

/// A binary convolution with its batch norm and scale folded into one
/// per-channel affine.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedConv {
    pub stride: usize,
    pub pad: usize,
    /// `w_pos` rows, one per output channel; `dims` is `(Cout, Cin, Kh, Kw)`.
    pub signs: BitPlane,
    pub alpha: f32,
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl PackedConv {
    pub fn new(signs: &Tensor4<f32>, alpha: f32, scale: Vec<f32>, shift: Vec<f32>, stride: usize, pad: usize) -> Result<Self> {
        let cout = signs.shape().n;
        if scale.len() != cout || shift.len() != cout {
            return Err(Error::shape(
                "PackedConv::new",
                format!("{cout} filters vs {} scales and {} shifts", scale.len(), shift.len()),
            ));
        }
        Ok(PackedConv {
            stride,
            pad,
            signs: pack_filters(signs)?,
            alpha,
            scale,
            shift,
        })
    }

    pub fn weight_shape(&self) -> Shape4 {
        self.signs.dims
    }

    pub fn geometry(&self, x: Shape4) -> Result<ConvGeom> {
        ConvGeom::new(x, self.weight_shape(), self.stride, self.pad)
    }
}

/// Binarizes one NCHW item into per-pixel channel words (HWC order).
fn pack_pixels(item: &[f32], c: usize, pixels: usize, out: &mut [u64]) {
    let wpp = words_for(c);
    out.iter_mut().for_each(|w| *w = 0);
    for ch in 0..c {
        let plane = &item[ch * pixels..(ch + 1) * pixels];
        let (word, bit) = (ch / WORD_BITS, ch % WORD_BITS);
        for (p, &v) in plane.iter().enumerate() {
            if binarize_value(v) == 1.0 {
                out[p * wpp + word] |= 1 << bit;
            }
        }
    }
}

/// ORs the low `nbits` of `src` into `dst` starting at bit `pos`. Bits of
/// `src` beyond `nbits` must be zero.
#[inline(always)]
fn append_bits(dst: &mut [u64], pos: usize, src: &[u64], nbits: usize) {
    let (mut idx, off) = (pos / WORD_BITS, pos % WORD_BITS);
    if off == 0 {
        dst[idx..idx + src.len()].copy_from_slice(src);
        return;
    }
    let end_word = (pos + nbits - 1) / WORD_BITS;
    for &word in src {
        dst[idx] |= word << off;
        if idx < end_word {
            dst[idx + 1] |= word >> (WORD_BITS - off);
        }
        idx += 1;
    }
}

/// Builds packed patches, one `words_per_row` row per output pixel, plus
/// each patch's popcount.
fn im2row(g: &ConvGeom, pixels: &[u64], rows: &mut [u64], wpr: usize) {
    let wpp = words_for(g.cin);
    rows.iter_mut().for_each(|w| *w = 0);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut rows[(oy * g.ow + ox) * wpr..][..wpr];
            let mut pos = 0;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                        let p = iy as usize * g.w + ix as usize;
                        append_bits(row, pos, &pixels[p * wpp..(p + 1) * wpp], g.cin);
                    }
                    pos += g.cin;
                }
            }
        }
    }
}

#[inline(always)]
fn dot_kernel(layer: &PackedConv, rows: &[u64], wpr: usize, npix: usize, out: &mut [f32]) {
    let cout = layer.signs.rows;
    for p in 0..npix {
        let a = &rows[p * wpr..(p + 1) * wpr];
        let apop = a.iter().map(|x| x.count_ones()).sum::<u32>() as i32;
        for o in 0..cout {
            let w = layer.signs.row(o);
            let mut both = 0u32;
            for j in 0..wpr {
                both += (w[j] & a[j]).count_ones();
            }
            let acc = 2 * both as i32 - apop;
            out[o * npix + p] = acc as f32 * layer.scale[o] + layer.shift[o];
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn dot_kernel_popcnt(layer: &PackedConv, rows: &[u64], wpr: usize, npix: usize, out: &mut [f32]) {
    dot_kernel(layer, rows, wpr, npix, out)
}

fn dispatch_dot(layer: &PackedConv, rows: &[u64], wpr: usize, npix: usize, out: &mut [f32], portable: bool) {
    #[cfg(target_arch = "x86_64")]
    if !portable && std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the feature was detected at runtime.
        unsafe { dot_kernel_popcnt(layer, rows, wpr, npix, out) };
        return;
    }
    let _ = portable;
    dot_kernel(layer, rows, wpr, npix, out)
}

/// Which popcount implementation [`packed_conv2d`] uses on this CPU.
pub fn popcount_backend() -> &'static str {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        return "popcnt";
    }
    "portable"
}

fn run(layer: &PackedConv, x: &Tensor4<f32>, portable: bool) -> Result<Tensor4<f32>> {
    let g = layer.geometry(x.shape())?;
    let n = x.shape().n;
    let wpr = layer.signs.words_per_row;
    let npix = g.out_pixels();
    let mut pixels = vec![0u64; g.h * g.w * words_for(g.cin)];
    let mut rows = vec![0u64; npix * wpr];
    let mut out = Tensor4::zeros(g.out_shape(n));
    for i in 0..n {
        pack_pixels(x.item(i), g.cin, g.h * g.w, &mut pixels);
        im2row(&g, &pixels, &mut rows, wpr);
        dispatch_dot(layer, &rows, wpr, npix, out.item_mut(i), portable);
    }
    Ok(out)
}

/// Binarizes `x` (`x ≥ 0.5 → 1`), convolves with the packed signs by
/// AND+popcount and applies the folded affine.
pub fn packed_conv2d(layer: &PackedConv, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
    run(layer, x, false)
}

/// [`packed_conv2d`] restricted to the portable popcount.
pub fn packed_conv2d_portable(layer: &PackedConv, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
    run(layer, x, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use crate::rng::{SeedRng, Stream};
    use rand::Rng;

    fn random_case(seed: u64, cin: usize, cout: usize, k: usize, hw: usize) -> (PackedConv, Tensor4<f32>, Tensor4<f32>) {
        let mut rng = SeedRng::new(seed).stream(Stream::Test, 0);
        let signs = Tensor4::<f32>::uniform([cout, cin, k, k], -1.0, 1.0, &mut rng).map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let x = Tensor4::<f32>::uniform([2, cin, hw, hw], -0.5, 1.5, &mut rng);
        let stride = rng.random_range(1..=2);
        let layer = PackedConv::new(&signs, 1.0, vec![1.0; cout], vec![0.0; cout], stride, k / 2).unwrap();
        (layer, x, signs)
    }

    #[test]
    fn append_bits_concatenates() {
        let mut dst = [0u64; 2];
        append_bits(&mut dst, 0, &[0b101], 3);
        append_bits(&mut dst, 3, &[0b11], 2);
        append_bits(&mut dst, 62, &[0b111], 3);
        assert_eq!(dst[0], 0b11101 | (0b11 << 62));
        assert_eq!(dst[1], 1);
    }

    #[test]
    fn one_by_one_reduces_to_popdot() {
        let signs = Tensor4::from_vec([1, 4, 1, 1], vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        let layer = PackedConv::new(&signs, 1.0, vec![1.0], vec![0.0], 1, 0).unwrap();
        let x = Tensor4::from_vec([1, 4, 1, 1], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(packed_conv2d(&layer, &x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn matches_float_conv_on_binary_inputs() {
        for (seed, cin) in [(1, 8), (2, 63), (3, 64), (4, 65), (5, 130)] {
            let (layer, x, signs) = random_case(seed, cin, 4, 3, 6);
            let xb = x.map(binarize_value);
            let want = ops::conv2d(&xb, &signs, layer.stride, layer.pad).unwrap();
            let got = packed_conv2d(&layer, &x).unwrap();
            assert_eq!(got, want, "cin {cin}");
        }
    }

    #[test]
    fn portable_and_dispatched_agree() {
        let (layer, x, _) = random_case(9, 37, 5, 3, 7);
        assert_eq!(packed_conv2d(&layer, &x).unwrap(), packed_conv2d_portable(&layer, &x).unwrap());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let (layer, _, _) = random_case(1, 8, 4, 3, 6);
        assert!(packed_conv2d(&layer, &Tensor4::zeros([1, 7, 6, 6])).is_err());
    }
}
