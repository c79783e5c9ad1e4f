//! The `.bbg` export container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "BBG1"  version:u16  layer_count:u32
//! per layer:
//!   tag:u8  route:u32  dims:u32[tag-specific]  payload  fingerprint:u64
//! ```
//!
//! | tag | layer       | dims after route                          | payload                                   |
//! |-----|-------------|-------------------------------------------|-------------------------------------------|
//! | 0   | fp conv     | cout cin kh kw stride pad                 | f32 weights                               |
//! | 1   | binary conv | cout cin kh kw stride pad words_per_row   | u64 sign words, f32 alpha, scale, shift   |
//! | 2   | fc          | out in                                    | f32 weights, f32 bias                     |
//! | 3   | gate        | c                                         | f32 gates                                 |
//! | 4   | pool        | kind(0 max, 1 avg, 2 global) k stride     | none                                      |
//! | 5   | folded bn   | c relu                                    | f32 scale, f32 shift                      |
//!
//! The fingerprint is FNV-1a over the route, dims and payload bytes.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

use super::conv::PackedConv;
use super::model::{PackedLayer, PackedModel, PoolKind, Route};
use super::{words_for, BitPlane};

pub const BBG_MAGIC: &[u8; 4] = b"BBG1";
pub const BBG_VERSION: u16 = 1;

#[derive(Default)]
struct Body(Vec<u8>);

impl Body {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }

    fn u64s(&mut self, v: &[u64]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
}

fn fingerprint(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn to_bytes(model: &PackedModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BBG_MAGIC);
    out.extend_from_slice(&BBG_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for (layer, route) in &model.layers {
        let mut b = Body::default();
        b.u32(route.bits() as usize);
        match layer {
            PackedLayer::FpConv { weight, stride, pad } => {
                weight.shape().dims().iter().for_each(|&d| b.u32(d));
                b.u32(*stride);
                b.u32(*pad);
                b.f32s(weight.data());
            }
            PackedLayer::BinConv(c) => {
                c.signs.dims.dims().iter().for_each(|&d| b.u32(d));
                b.u32(c.stride);
                b.u32(c.pad);
                b.u32(c.signs.words_per_row);
                b.u64s(&c.signs.words);
                b.f32s(&[c.alpha]);
                b.f32s(&c.scale);
                b.f32s(&c.shift);
            }
            PackedLayer::Fc { weight, bias } => {
                b.u32(weight.shape().n);
                b.u32(weight.shape().item_len());
                b.f32s(weight.data());
                b.f32s(bias.data());
            }
            PackedLayer::Gate(s) => {
                b.u32(s.len());
                b.f32s(s);
            }
            PackedLayer::Pool(kind) => {
                let (code, k, stride) = match *kind {
                    PoolKind::Max { k, stride } => (0, k, stride),
                    PoolKind::Avg { k, stride } => (1, k, stride),
                    PoolKind::Global => (2, 0, 0),
                };
                b.u32(code);
                b.u32(k);
                b.u32(stride);
            }
            PackedLayer::Affine { scale, shift, relu } => {
                b.u32(scale.len());
                b.u32(*relu as usize);
                b.f32s(scale);
                b.f32s(shift);
            }
        }
        out.push(layer.tag());
        out.extend_from_slice(&b.0);
        out.extend_from_slice(&fingerprint(&b.0).to_le_bytes());
    }
    out
}

pub fn write_bbg(path: impl AsRef<Path>, model: &PackedModel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn read_bbg(path: impl AsRef<Path>) -> Result<PackedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            path: self.path.clone(),
            expected: (self.pos as u64).saturating_add(n as u64),
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.format("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.format("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn format(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }
}

fn tensor(c: &Cursor, shape: Shape4, data: Vec<f32>) -> Result<Tensor4<f32>> {
    Tensor4::from_vec(shape, data).map_err(|e| c.format(e.to_string()))
}

fn read_layer(c: &mut Cursor, tag: u8) -> Result<(PackedLayer, Route)> {
    let route = Route::from_bits(c.u32()? as u32).ok_or_else(|| c.format("invalid route flags"))?;
    let layer = match tag {
        0 => {
            let shape = Shape4::new(c.u32()?, c.u32()?, c.u32()?, c.u32()?);
            let (stride, pad) = (c.u32()?, c.u32()?);
            let data = c.f32s(shape.numel())?;
            PackedLayer::FpConv {
                weight: tensor(c, shape, data)?,
                stride,
                pad,
            }
        }
        1 => {
            let dims = Shape4::new(c.u32()?, c.u32()?, c.u32()?, c.u32()?);
            let (stride, pad, wpr) = (c.u32()?, c.u32()?, c.u32()?);
            if wpr != words_for(dims.item_len()) {
                return Err(c.format(format!("{wpr} words per row for fan-in {}", dims.item_len())));
            }
            let words = c.u64s(dims.n * wpr)?;
            let alpha = c.f32s(1)?[0];
            let scale = c.f32s(dims.n)?;
            let shift = c.f32s(dims.n)?;
            let signs = BitPlane {
                dims,
                rows: dims.n,
                row_bits: dims.item_len(),
                words_per_row: wpr,
                words,
            };
            if signs.padding_popcount() != 0 {
                return Err(c.format("set bits in sign-plane padding"));
            }
            PackedLayer::BinConv(PackedConv {
                stride,
                pad,
                signs,
                alpha,
                scale,
                shift,
            })
        }
        2 => {
            let (out, inp) = (c.u32()?, c.u32()?);
            let w = c.f32s(out * inp)?;
            let b = c.f32s(out)?;
            PackedLayer::Fc {
                weight: tensor(c, Shape4::new(out, inp, 1, 1), w)?,
                bias: tensor(c, Shape4::new(1, out, 1, 1), b)?,
            }
        }
        3 => {
            let n = c.u32()?;
            PackedLayer::Gate(c.f32s(n)?)
        }
        4 => {
            let (code, k, stride) = (c.u32()?, c.u32()?, c.u32()?);
            PackedLayer::Pool(match code {
                0 => PoolKind::Max { k, stride },
                1 => PoolKind::Avg { k, stride },
                2 => PoolKind::Global,
                other => return Err(c.format(format!("unknown pool kind {other}"))),
            })
        }
        5 => {
            let (n, relu) = (c.u32()?, c.u32()?);
            if relu > 1 {
                return Err(c.format(format!("relu flag {relu}")));
            }
            PackedLayer::Affine {
                scale: c.f32s(n)?,
                shift: c.f32s(n)?,
                relu: relu == 1,
            }
        }
        other => return Err(c.format(format!("unknown layer tag {other}"))),
    };
    Ok((layer, route))
}

pub fn from_bytes(bytes: &[u8], path: impl Into<PathBuf>) -> Result<PackedModel> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path: path.into(),
    };
    if c.take(4)? != BBG_MAGIC {
        c.pos = 0;
        return Err(c.format("bad magic, expected \"BBG1\""));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != BBG_VERSION {
        return Err(Error::Version {
            found: version,
            supported: BBG_VERSION,
        });
    }
    let count = c.u32()?;
    let mut layers = Vec::new();
    for i in 0..count {
        let tag = c.take(1)?[0];
        let start = c.pos;
        let layer = read_layer(&mut c, tag)?;
        let stored = c.u64()?;
        if fingerprint(&bytes[start..c.pos - 8]) != stored {
            return Err(Error::Corrupt {
                section: format!("layer {i}"),
            });
        }
        layers.push(layer);
    }
    if c.pos != bytes.len() {
        return Err(c.format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(PackedModel { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Mode, Model, ModelSpec};

    fn packed() -> PackedModel {
        let spec = ModelSpec {
            kernel_stage: [4, 8, 8],
            ..ModelSpec::resnet20().with_input([3, 8, 8], 10)
        };
        let mut m = Model::<f32>::new(&spec, 1).unwrap();
        m.forward(&Tensor4::filled([2, 3, 8, 8], 0.6), Mode::Train).unwrap();
        PackedModel::from_model(&m).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let p = packed();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"BBG1");
        let q = from_bytes(&bytes, "mem").unwrap();
        assert_eq!(q, p);
        assert_eq!(to_bytes(&q), bytes);
    }

    #[test]
    fn flipped_payload_byte_names_layer() {
        let mut bytes = to_bytes(&packed());
        let n = bytes.len();
        bytes[n - 20] ^= 0x10;
        let err = from_bytes(&bytes, "mem").unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
    }

    #[test]
    fn header_errors() {
        let bytes = to_bytes(&packed());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad, "m").unwrap_err(), Error::Format { offset: 0, .. }));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(from_bytes(&v2, "m").unwrap_err(), Error::Version { found: 2, .. }));
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3], "m").unwrap_err(),
            Error::Truncated { .. }
        ));
    }
}
