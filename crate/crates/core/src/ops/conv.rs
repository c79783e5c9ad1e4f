use crate::error::{Error, Result};
use crate::gemm::transpose;
use crate::tensor::{Real, Shape4, Tensor4};

/// Resolved geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: Shape4, weight: Shape4, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if weight.c != x.c {
            return Err(Error::shape(
                "conv2d",
                format!("weight {weight} expects {} input channels, input {x} has {}", weight.c, x.c),
            ));
        }
        if weight.h == 0 || weight.w == 0 || x.h + 2 * pad < weight.h || x.w + 2 * pad < weight.w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} does not fit input {x} with pad {pad}", weight.h, weight.w),
            ));
        }
        Ok(ConvGeom {
            cin: x.c,
            h: x.h,
            w: x.w,
            cout: weight.n,
            kh: weight.h,
            kw: weight.w,
            stride,
            pad,
            oh: (x.h + 2 * pad - weight.h) / stride + 1,
            ow: (x.w + 2 * pad - weight.w) / stride + 1,
        })
    }

    /// Fan-in `Cin·Kh·Kw`.
    pub const fn fan_in(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub const fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    pub const fn out_shape(&self, n: usize) -> Shape4 {
        Shape4::new(n, self.cout, self.oh, self.ow)
    }

    /// Input coordinate for output index `o` and kernel tap `k`, if inside.
    #[inline]
    pub fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds one input item into a `(Cin·Kh·Kw) × (OH·OW)` column matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, item: &[T], cols: &mut [T]) {
    let p = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &item[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let seg = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.source(oy, ky, g.h) {
                        None => seg.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * g.w..(iy + 1) * g.w];
                            for (ox, v) in seg.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input item.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], item: &mut [T]) {
    let p = g.out_pixels();
    for ci in 0..g.cin {
        let plane = &mut item[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x (N,Cin,H,W)` with `weight (Cout,Cin,Kh,Kw)`.
pub fn conv2d<T: Real>(x: &Tensor4<T>, weight: &Tensor4<T>, stride: usize, pad: usize) -> Result<Tensor4<T>> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    let n = x.shape().n;
    let mut out = Tensor4::zeros(g.out_shape(n));
    let mut cols = vec![T::zero(); g.fan_in() * g.out_pixels()];
    for i in 0..n {
        im2col(&g, x.item(i), &mut cols);
        T::gemm(g.cout, g.fan_in(), g.out_pixels(), weight.data(), &cols, out.item_mut(i));
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input and weight.
///
/// The input gradient is skipped (returned as `None`) when `need_input` is
/// false, which saves the dominant cost for a network's first layer.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    g_out: &Tensor4<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<(Option<Tensor4<T>>, Tensor4<T>)> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    let n = x.shape().n;
    g_out.expect_shape(g.out_shape(n), "conv2d_backward")?;
    let (k, p) = (g.fan_in(), g.out_pixels());

    let mut g_w = Tensor4::zeros(weight.shape());
    let mut g_x = need_input.then(|| Tensor4::zeros(x.shape()));
    let mut cols = vec![T::zero(); k * p];
    let mut cols_t = vec![T::zero(); k * p];
    let mut w_t = vec![T::zero(); k * g.cout];
    transpose(g.cout, k, weight.data(), &mut w_t);

    for i in 0..n {
        im2col(&g, x.item(i), &mut cols);
        transpose(k, p, &cols, &mut cols_t);
        T::gemm(g.cout, p, k, g_out.item(i), &cols_t, g_w.data_mut());
        if let Some(gx) = g_x.as_mut() {
            cols.fill(T::zero());
            T::gemm(k, g.cout, p, &w_t, g_out.item(i), &mut cols);
            col2im(&g, &cols, gx.item_mut(i));
        }
    }
    Ok((g_x, g_w))
}
