//! Bit-packed inference.
//!
//! Weight signs and binary activations are packed LSB-first into `u64`
//! words. With signs `b ∈ {±1}` stored as `w_pos = (b + 1) / 2` and
//! activations `a ∈ {0, 1}`, one inner product is
//! `Σ b·a = 2·popcount(w_pos & a) − popcount(a)`.
//!
//! Fan-in is packed in `(kh, kw, ci)` order so that a convolution patch is
//! a concatenation of per-pixel channel words.

mod bench;
mod conv;
mod format;
mod model;

pub use bench::{benchmark, BenchReport, MIN_WARMUP};
pub use conv::{packed_conv2d, packed_conv2d_portable, popcount_backend, PackedConv};
pub use format::{from_bytes, read_bbg, to_bytes, write_bbg, BBG_MAGIC, BBG_VERSION};
pub use model::{PackedLayer, PackedModel, PoolKind, Route};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub(crate) const WORD_BITS: usize = 64;

pub(crate) const fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// Value domain of a packed tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDomain {
    /// `{0, 1}`, stored as is.
    Activation,
    /// `{−1, +1}`, stored as `(s + 1) / 2`.
    Sign,
}

impl BitDomain {
    fn encode(self, v: f32) -> Option<bool> {
        match self {
            BitDomain::Activation if v == 0.0 => Some(false),
            BitDomain::Activation if v == 1.0 => Some(true),
            BitDomain::Sign if v == -1.0 => Some(false),
            BitDomain::Sign if v == 1.0 => Some(true),
            _ => None,
        }
    }

    fn decode(self, bit: bool) -> f32 {
        match (self, bit) {
            (_, true) => 1.0,
            (BitDomain::Activation, false) => 0.0,
            (BitDomain::Sign, false) => -1.0,
        }
    }
}

/// Rows of packed bits; each row starts on a word boundary and its tail
/// bits are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlane {
    pub dims: Shape4,
    pub rows: usize,
    pub row_bits: usize,
    pub words_per_row: usize,
    pub words: Vec<u64>,
}

impl BitPlane {
    pub fn zeros(dims: Shape4, rows: usize, row_bits: usize) -> Self {
        let words_per_row = words_for(row_bits);
        BitPlane {
            dims,
            rows,
            row_bits,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn get(&self, r: usize, i: usize) -> bool {
        self.row(r)[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    fn set(&mut self, r: usize, i: usize) {
        self.words[r * self.words_per_row + i / WORD_BITS] |= 1 << (i % WORD_BITS);
    }

    /// Number of set bits beyond `row_bits` in any row; zero for every
    /// well-formed plane.
    pub fn padding_popcount(&self) -> u32 {
        let tail = self.row_bits % WORD_BITS;
        if tail == 0 || self.words_per_row == 0 {
            return 0;
        }
        (0..self.rows)
            .map(|r| (self.row(r)[self.words_per_row - 1] >> tail).count_ones())
            .sum()
    }

    /// Inverse of [`pack_bits`].
    pub fn unpack(&self, domain: BitDomain) -> Tensor4<f32> {
        let mut data = Vec::with_capacity(self.rows * self.row_bits);
        for r in 0..self.rows {
            data.extend((0..self.row_bits).map(|i| domain.decode(self.get(r, i))));
        }
        Tensor4::from_vec(self.dims, data).expect("plane dims match bit count")
    }

    /// Inverse of [`pack_filters`], in `(Cout, Cin, Kh, Kw)` order.
    pub fn unpack_filters(&self) -> Tensor4<f32> {
        let Shape4 { n: cout, c: cin, h: kh, w: kw } = self.dims;
        let mut t = Tensor4::zeros(self.dims);
        for o in 0..cout {
            for i in 0..cin {
                for y in 0..kh {
                    for x in 0..kw {
                        let bit = self.get(o, (y * kw + x) * cin + i);
                        t.set(o, i, y, x, BitDomain::Sign.decode(bit));
                    }
                }
            }
        }
        t
    }
}

/// Packs every entry of `t`, in storage order, into a single row.
pub fn pack_bits(t: &Tensor4<f32>, domain: BitDomain) -> Result<BitPlane> {
    let mut plane = BitPlane::zeros(t.shape(), 1, t.len());
    for (i, &v) in t.data().iter().enumerate() {
        match domain.encode(v) {
            Some(true) => plane.set(0, i),
            Some(false) => {}
            None => return Err(Error::NonBinary { index: i, value: v }),
        }
    }
    Ok(plane)
}

/// Packs `±1` filters `(Cout, Cin, Kh, Kw)` one row per output channel,
/// fan-in ordered `(kh, kw, ci)`.
pub fn pack_filters(signs: &Tensor4<f32>) -> Result<BitPlane> {
    let s = signs.shape();
    let mut plane = BitPlane::zeros(s, s.n, s.item_len());
    for o in 0..s.n {
        for i in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = signs.at(o, i, y, x);
                    match BitDomain::Sign.encode(v) {
                        Some(true) => plane.set(o, (y * s.w + x) * s.c + i),
                        Some(false) => {}
                        None => {
                            return Err(Error::NonBinary {
                                index: signs.offset(o, i, y, x),
                                value: v,
                            })
                        }
                    }
                }
            }
        }
    }
    Ok(plane)
}

#[inline(always)]
pub(crate) fn and_popcount(w: &[u64], a: &[u64]) -> u32 {
    w.iter().zip(a).map(|(x, y)| (x & y).count_ones()).sum()
}

#[inline(always)]
pub(crate) fn popcount(a: &[u64]) -> u32 {
    a.iter().map(|x| x.count_ones()).sum()
}

/// `Σ b_i a_i` for signs packed as `w_pos` and activations `a`.
#[inline(always)]
pub fn popdot_words(w_pos: &[u64], a: &[u64]) -> i64 {
    2 * and_popcount(w_pos, a) as i64 - popcount(a) as i64
}

/// Checked inner product of two single-row planes of equal length.
pub fn popdot(w_pos: &BitPlane, a: &BitPlane) -> Result<i64> {
    if w_pos.rows != 1 || a.rows != 1 || w_pos.row_bits != a.row_bits {
        return Err(Error::shape(
            "popdot",
            format!(
                "{}x{} bits vs {}x{} bits",
                w_pos.rows, w_pos.row_bits, a.rows, a.row_bits
            ),
        ));
    }
    Ok(popdot_words(w_pos.row(0), a.row(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};
    use rand::Rng;

    fn flat(values: Vec<f32>) -> Tensor4<f32> {
        let n = values.len();
        Tensor4::from_vec([1, 1, 1, n], values).unwrap()
    }

    #[test]
    fn sixty_four_ones_fill_one_word() {
        let p = pack_bits(&flat(vec![1.0; 64]), BitDomain::Activation).unwrap();
        assert_eq!(p.words, vec![0xFFFF_FFFF_FFFF_FFFF]);
    }

    #[test]
    fn sixty_five_zeros_round_trip() {
        let t = flat(vec![0.0; 65]);
        let p = pack_bits(&t, BitDomain::Activation).unwrap();
        assert_eq!(p.words.len(), 2);
        assert_eq!(p.unpack(BitDomain::Activation), t);
    }

    #[test]
    fn random_pattern_round_trips() {
        let mut rng = SeedRng::new(5).stream(Stream::Test, 0);
        let t = flat((0..1000).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect());
        let p = pack_bits(&t, BitDomain::Sign).unwrap();
        assert_eq!(p.padding_popcount(), 0);
        assert_eq!(p.unpack(BitDomain::Sign), t);
    }

    #[test]
    fn non_binary_reports_index() {
        let err = pack_bits(&flat(vec![0.0, 1.0, 0.5]), BitDomain::Activation).unwrap_err();
        assert!(matches!(err, Error::NonBinary { index: 2, .. }));
        assert!(pack_bits(&flat(vec![0.0]), BitDomain::Sign).is_err());
    }

    #[test]
    fn popdot_small_case() {
        let w = pack_bits(&flat(vec![1.0, -1.0, 1.0, 1.0]), BitDomain::Sign).unwrap();
        let a = pack_bits(&flat(vec![1.0, 1.0, 0.0, 1.0]), BitDomain::Activation).unwrap();
        assert_eq!(popdot(&w, &a).unwrap(), 1);
        let zero = pack_bits(&flat(vec![0.0; 4]), BitDomain::Activation).unwrap();
        assert_eq!(popdot(&w, &zero).unwrap(), 0);
        let short = pack_bits(&flat(vec![0.0; 3]), BitDomain::Activation).unwrap();
        assert!(popdot(&w, &short).is_err());
    }

    #[test]
    fn filters_round_trip() {
        let mut rng = SeedRng::new(6).stream(Stream::Test, 0);
        let signs = Tensor4::<f32>::uniform([5, 70, 3, 3], -1.0, 1.0, &mut rng).map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let p = pack_filters(&signs).unwrap();
        assert_eq!(p.words_per_row, 10);
        assert_eq!(p.padding_popcount(), 0);
        assert_eq!(p.unpack_filters(), signs);
    }
}
