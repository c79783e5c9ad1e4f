use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{SeedRng, Stream};
use crate::tensor::Tensor4;

use super::{read_file, sha256_hex, Dataset, DatasetId, Normalization, Split, Splits};

/// One label byte followed by 3×32×32 channel-planar pixels.
pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
/// `sha256  name` lines written by the fetch step after the archive's
/// checksum has been verified.
pub(crate) const MANIFEST: &str = "SHA256SUMS";

/// Decodes concatenated records into `(N, 3, 32, 32)` in `[0, 1]` and labels.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<(Tensor4<f32>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: bytes.len().next_multiple_of(CIFAR_RECORD_LEN) as u64,
            actual: bytes.len() as u64,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (i * CIFAR_RECORD_LEN) as u64,
                detail: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((Tensor4::from_vec([n, 3, 32, 32], data)?, labels))
}

/// Resolves the directory holding the `.bin` batches, accepting either
/// `dir` itself or the archive's `cifar-10-batches-bin` subdirectory.
fn batches_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.join(CIFAR_TEST_FILE).is_file() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn cifar_files_present(dir: &Path) -> bool {
    let d = batches_dir(dir);
    CIFAR_TRAIN_FILES.iter().chain([&CIFAR_TEST_FILE]).all(|f| d.join(f).is_file())
}

fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some(sum), Some(name)) => {
                out.insert(name.to_string(), sum.to_string());
            }
            _ => {
                return Err(Error::Format {
                    path,
                    offset: i as u64,
                    detail: format!("bad manifest line '{line}'"),
                })
            }
        }
    }
    Ok(out)
}

fn read_checked(dir: &Path, name: &str, manifest: &BTreeMap<String, String>) -> Result<(Vec<u8>, String)> {
    let path = dir.join(name);
    let bytes = read_file(&path)?;
    let got = sha256_hex(&bytes);
    let want = manifest.get(name).ok_or_else(|| Error::Checksum {
        path: path.clone(),
        expected: format!("an entry in {MANIFEST}"),
        actual: got.clone(),
    })?;
    if *want != got {
        return Err(Error::Checksum {
            path,
            expected: want.clone(),
            actual: got,
        });
    }
    Ok((bytes, got))
}

/// Indices of a class-balanced subset: `n / classes` per class, each class
/// drawn by a seeded shuffle, returned in ascending order.
pub fn stratified_subset(labels: &[usize], classes: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if classes == 0 || !n.is_multiple_of(classes) {
        return Err(Error::InvalidArgument(format!("subset size {n} is not a multiple of {classes} classes")));
    }
    let per = n / classes;
    let mut rng = SeedRng::new(seed).stream(Stream::Subset, 0);
    let mut out = Vec::with_capacity(n);
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < per {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} samples, subset needs {per}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..per]);
    }
    out.sort_unstable();
    Ok(out)
}

fn channel_stats(x: &Tensor4<f32>) -> Normalization {
    let s = x.shape();
    let count = (s.n * s.plane_len()) as f64;
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for c in 0..s.c {
        let (mut sum, mut sq) = (0.0f64, 0.0f64);
        for n in 0..s.n {
            for &v in x.plane(n, c) {
                sum += v as f64;
                sq += (v as f64) * (v as f64);
            }
        }
        let m = sum / count;
        mean.push(m as f32);
        std.push(((sq / count - m * m).max(0.0).sqrt().max(1e-6)) as f32);
    }
    Normalization { mean, std }
}

/// Loads CIFAR-10 from the binary batches under `dir`, optionally keeping a
/// stratified `subset` of the training split. Both splits are normalized
/// with per-channel statistics of the (possibly subsetted) training split.
pub fn load_cifar10(dir: impl AsRef<Path>, subset: Option<usize>, seed: u64) -> Result<Splits> {
    let root = dir.as_ref();
    let dir = batches_dir(root);
    let manifest = read_manifest(&dir).or_else(|_| read_manifest(root))?;
    let mut train_bytes = Vec::new();
    let mut sums = Vec::new();
    for name in CIFAR_TRAIN_FILES {
        let (b, sum) = read_checked(&dir, name, &manifest)?;
        train_bytes.extend_from_slice(&b);
        sums.push(sum);
    }
    let (test_bytes, test_sum) = read_checked(&dir, CIFAR_TEST_FILE, &manifest)?;
    sums.push(test_sum);
    let checksum = sha256_hex(sums.join("\n").as_bytes());

    let (mut train_x, mut train_y) = parse_cifar_records(&train_bytes, &dir.join("data_batch_*.bin"))?;
    let (mut test_x, test_y) = parse_cifar_records(&test_bytes, &dir.join(CIFAR_TEST_FILE))?;
    let id = match subset {
        Some(n) => {
            let keep = stratified_subset(&train_y, 10, n, seed)?;
            train_x = train_x.gather_items(&keep);
            train_y = keep.iter().map(|&i| train_y[i]).collect();
            DatasetId::Cifar10Subset
        }
        None => DatasetId::Cifar10,
    };
    let norm = channel_stats(&train_x);
    norm.apply(&mut train_x);
    norm.apply(&mut test_x);
    let make = |split, images, labels| Dataset {
        id,
        split,
        images,
        labels,
        num_classes: 10,
        normalization: norm.clone(),
        checksum: checksum.clone(),
    };
    Ok(Splits {
        train: make(Split::Train, train_x, train_y),
        test: make(Split::Test, test_x, test_y),
    })
}
