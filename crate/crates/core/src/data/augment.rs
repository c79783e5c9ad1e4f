use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor4;

/// Random-crop with zero padding and horizontal flip, applied per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Augmentation {
    pub crop_pad: usize,
    pub flip: bool,
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation { crop_pad: 0, flip: false };
    pub const CIFAR: Augmentation = Augmentation { crop_pad: 4, flip: true };

    pub fn is_none(&self) -> bool {
        self.crop_pad == 0 && !self.flip
    }

    /// Augments every sample of `x` in place. Draws nothing when disabled.
    pub fn apply<R: Rng + ?Sized>(&self, x: &mut Tensor4<f32>, rng: &mut R) {
        if self.is_none() {
            return;
        }
        let s = x.shape();
        let p = self.crop_pad as i64;
        let mut buf = vec![0.0f32; s.plane_len()];
        for n in 0..s.n {
            let dy = if p > 0 { rng.random_range(-p..=p) } else { 0 };
            let dx = if p > 0 { rng.random_range(-p..=p) } else { 0 };
            let flip = self.flip && rng.random_bool(0.5);
            for c in 0..s.c {
                let plane = x.plane_mut(n, c);
                for h in 0..s.h {
                    for w in 0..s.w {
                        let sy = h as i64 + dy;
                        let wx = if flip { s.w - 1 - w } else { w };
                        let sx = wx as i64 + dx;
                        buf[h * s.w + w] = if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                            plane[sy as usize * s.w + sx as usize]
                        } else {
                            0.0
                        };
                    }
                }
                plane.copy_from_slice(&buf);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};

    #[test]
    fn none_is_identity() {
        let mut rng = SeedRng::new(1).stream(Stream::Augment, 0);
        let x0 = Tensor4::<f32>::uniform([2, 3, 8, 8], 0.0, 1.0, &mut rng);
        let mut x = x0.clone();
        Augmentation::NONE.apply(&mut x, &mut rng);
        assert_eq!(x, x0);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut rng = SeedRng::new(1).stream(Stream::Test, 0);
        let x0 = Tensor4::<f32>::uniform([4, 3, 8, 8], 0.0, 1.0, &mut rng);
        let run = |seed| {
            let mut x = x0.clone();
            Augmentation::CIFAR.apply(&mut x, &mut SeedRng::new(seed).stream(Stream::Augment, 0));
            x
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn flip_only_mirrors_rows() {
        let x0 = Tensor4::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let aug = Augmentation { crop_pad: 0, flip: true };
        let mut rng = SeedRng::new(2).stream(Stream::Augment, 0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..20 {
            let mut x = x0.clone();
            aug.apply(&mut x, &mut rng);
            seen.insert(x.data().iter().map(|v| *v as i32).collect::<Vec<_>>());
        }
        assert_eq!(seen.len(), 2);
        assert!(seen.contains(&vec![3, 2, 1]));
    }
}
