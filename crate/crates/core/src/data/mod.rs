//! Dataset loading, synthetic sets, augmentation and checkpoints.
//!
//! Loaders are pure functions of the bytes on disk (and a seed for
//! subsetting); only [`fetch`] touches the network.

mod augment;
mod checkpoint;
mod cifar;
mod fetch;
mod mnist;
mod synthetic;

pub use augment::Augmentation;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cifar::{
    cifar_files_present, load_cifar10, parse_cifar_records, stratified_subset, CIFAR_RECORD_LEN, CIFAR_TRAIN_FILES,
    CIFAR_TEST_FILE,
};
pub use fetch::{fetch, CIFAR_MD5, CIFAR_URL, MNIST_NPM_SHA256, MNIST_NPM_URL};
pub use mnist::{load_mnist, mnist_files_present, parse_idx_images, parse_idx_labels, MNIST_FILES};
pub use synthetic::{label_shuffled, toy_two_class};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    Mnist,
    Cifar10,
    /// Stratified 5,000-image training subset of CIFAR-10.
    #[serde(rename = "cifar10-5k")]
    Cifar10Subset,
    /// 200 synthetic 1×16×16 images from two Gaussian classes.
    #[serde(rename = "toy-2class")]
    Toy2Class,
    /// Uniform noise images with uniformly random labels over 10 classes.
    #[serde(rename = "shuffled-10")]
    Shuffled10,
}

impl DatasetId {
    pub const ALL: [DatasetId; 5] = [
        DatasetId::Mnist,
        DatasetId::Cifar10,
        DatasetId::Cifar10Subset,
        DatasetId::Toy2Class,
        DatasetId::Shuffled10,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Cifar10Subset => "cifar10-5k",
            DatasetId::Toy2Class => "toy-2class",
            DatasetId::Shuffled10 => "shuffled-10",
        }
    }

    /// Per-sample `(C, H, W)` and class count.
    pub fn geometry(self) -> ([usize; 3], usize) {
        match self {
            DatasetId::Mnist => ([1, 28, 28], 10),
            DatasetId::Cifar10 | DatasetId::Cifar10Subset => ([3, 32, 32], 10),
            DatasetId::Toy2Class => ([1, 16, 16], 2),
            DatasetId::Shuffled10 => ([1, 16, 16], 10),
        }
    }

    /// Whether the set is built in rather than read from disk.
    pub fn is_synthetic(self) -> bool {
        matches!(self, DatasetId::Toy2Class | DatasetId::Shuffled10)
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetId::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dataset '{s}' (expected mnist|cifar10|cifar10-5k|toy-2class|shuffled-10)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Per-channel input normalization `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, x: &mut Tensor4<f32>) {
        let s = x.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                let (m, d) = (self.mean[c], self.std[c]);
                x.plane_mut(n, c).iter_mut().for_each(|v| *v = (*v - m) / d);
            }
        }
    }
}

/// One split of a dataset, fully in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: DatasetId,
    pub split: Split,
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Normalization,
    /// Hex SHA-256 of the source bytes (or of the generator parameters for
    /// synthetic sets).
    pub checksum: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s.c, s.h, s.w]
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor4<f32>, Vec<usize>) {
        (
            self.images.gather_items(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            id: self.id,
            split: self.split,
            images: Tensor4::zeros(Shape4::new(0, 0, 0, 0)),
            labels: Vec::new(),
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
            checksum: self.checksum.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }
}

/// Train and test splits of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Dataset root: `$BBG_DATA_DIR` if set, else `<workspace>/data`.
pub fn data_root() -> PathBuf {
    match std::env::var_os("BBG_DATA_DIR") {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// Loads both splits of `id` from `root` (ignored for synthetic sets).
pub fn load(id: DatasetId, root: &Path, seed: u64) -> Result<Splits> {
    load_subset(id, root, seed, None)
}

/// Like [`load`], keeping a class-stratified subset of `subset` training
/// samples. `cifar10-5k` defaults to 5,000.
pub fn load_subset(id: DatasetId, root: &Path, seed: u64, subset: Option<usize>) -> Result<Splits> {
    let mut splits = match id {
        DatasetId::Mnist => load_mnist(root.join("mnist"))?,
        DatasetId::Cifar10 | DatasetId::Cifar10Subset => {
            let n = subset.or((id == DatasetId::Cifar10Subset).then_some(5000));
            return load_cifar10(root.join("cifar10"), n, seed);
        }
        DatasetId::Toy2Class => toy_two_class(seed),
        DatasetId::Shuffled10 => label_shuffled(1000, 10, [1, 16, 16], seed),
    };
    if let Some(n) = subset {
        let keep = stratified_subset(&splits.train.labels, splits.train.num_classes, n, seed)?;
        splits.train = splits.train.select(&keep);
    }
    Ok(splits)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex_digest(&Sha256::digest(bytes))
}

pub(crate) fn hex_digest(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
