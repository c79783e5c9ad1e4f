use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{SeedRng, Stream};
use crate::tensor::Tensor4;

use super::{sha256_hex, Dataset, DatasetId, Normalization, Split, Splits};

const TOY_SIZE: usize = 200;
const TOY_SIDE: usize = 16;

fn toy_split(seed: u64, split: Split) -> Dataset {
    let index = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = SeedRng::new(seed).stream(Stream::Synthetic, index);
    let mut data = Vec::with_capacity(TOY_SIZE * TOY_SIDE * TOY_SIDE);
    let labels: Vec<usize> = (0..TOY_SIZE).map(|i| i % 2).collect();
    for &label in &labels {
        let sign = if label == 1 { 1.0 } else { -1.0 };
        for h in 0..TOY_SIDE {
            for w in 0..TOY_SIDE {
                let pattern = if (h / 4 + w / 4) % 2 == 0 { 1.0 } else { -1.0 };
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push((0.5 + 0.3 * sign * pattern + 0.3 * noise) as f32);
            }
        }
    }
    Dataset {
        id: DatasetId::Toy2Class,
        split,
        images: Tensor4::from_vec([TOY_SIZE, 1, TOY_SIDE, TOY_SIDE], data).expect("toy dims"),
        labels,
        num_classes: 2,
        normalization: Normalization::identity(1),
        checksum: sha256_hex(format!("toy-2class:{seed}").as_bytes()),
    }
}

/// Two Gaussian classes around opposite checkerboard means, 200 samples
/// per split, balanced.
pub fn toy_two_class(seed: u64) -> Splits {
    Splits {
        train: toy_split(seed, Split::Train),
        test: toy_split(seed, Split::Test),
    }
}

/// Uniform-noise images whose labels carry no information; any model's
/// accuracy on it sits at chance.
pub fn label_shuffled(n: usize, classes: usize, shape: [usize; 3], seed: u64) -> Splits {
    let make = |split: Split, index: u64| {
        let mut rng = SeedRng::new(seed).stream(Stream::Synthetic, 10 + index);
        let [c, h, w] = shape;
        let images = Tensor4::uniform([n, c, h, w], 0.0, 1.0, &mut rng);
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Dataset {
            id: DatasetId::Shuffled10,
            split,
            images,
            labels,
            num_classes: classes,
            normalization: Normalization::identity(c),
            checksum: sha256_hex(format!("shuffled:{n}:{classes}:{shape:?}:{seed}").as_bytes()),
        }
    };
    Splits {
        train: make(Split::Train, 0),
        test: make(Split::Test, 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_is_balanced_and_seeded() {
        let a = toy_two_class(1);
        assert_eq!(a.train.len(), 200);
        assert_eq!(a.train.class_counts(), vec![100, 100]);
        assert_eq!(a.train.sample_shape(), [1, 16, 16]);
        assert_eq!(a.train.images, toy_two_class(1).train.images);
        assert_ne!(a.train.images, a.test.images);
    }

    #[test]
    fn class_means_differ() {
        let d = toy_two_class(2).train;
        // Pixel (0, 0) sits on a +1 cell of the pattern.
        let mean_of = |label: usize| {
            let idx: Vec<_> = (0..d.len()).filter(|&i| d.labels[i] == label).collect();
            idx.iter().map(|&i| d.images.at(i, 0, 0, 0) as f64).sum::<f64>() / idx.len() as f64
        };
        assert!((mean_of(1) - 0.8).abs() < 0.1, "{}", mean_of(1));
        assert!((mean_of(0) - 0.2).abs() < 0.1, "{}", mean_of(0));
    }

    #[test]
    fn shuffled_labels_cover_classes() {
        let s = label_shuffled(1000, 10, [1, 8, 8], 4);
        assert!(s.train.class_counts().iter().all(|&c| c > 50));
    }
}
