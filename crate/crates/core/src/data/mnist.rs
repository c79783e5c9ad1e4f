use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::{read_file, sha256_hex, Dataset, DatasetId, Normalization, Split, Splits};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Canonical file names and their SHA-256.
pub const MNIST_FILES: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte", "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"),
    ("train-labels-idx1-ubyte", "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"),
    ("t10k-images-idx3-ubyte", "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"),
    ("t10k-labels-idx1-ubyte", "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"),
];

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: offset as u64 + 4,
            actual: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("magic {magic:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Decodes an IDX3 image file into `(N, 1, rows, cols)` scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor4<f32>> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    check_len(bytes, 16 + n * rows * cols, path)?;
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor4::from_vec([n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    check_len(bytes, 8 + n, path)?;
    if let Some(i) = bytes[8..].iter().position(|&l| l > 9) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8 + i as u64,
            detail: format!("label {} out of range", bytes[8 + i]),
        });
    }
    Ok(bytes[8..].iter().map(|&l| l as usize).collect())
}

pub fn mnist_files_present(dir: &Path) -> bool {
    MNIST_FILES.iter().all(|(name, _)| dir.join(name).is_file())
}

fn read_verified(dir: &Path, index: usize) -> Result<(Vec<u8>, std::path::PathBuf)> {
    let (name, want) = MNIST_FILES[index];
    let path = dir.join(name);
    let bytes = read_file(&path)?;
    let got = sha256_hex(&bytes);
    if got != want {
        return Err(Error::Checksum {
            path,
            expected: want.into(),
            actual: got,
        });
    }
    Ok((bytes, path))
}

/// Loads the 60k/10k MNIST splits from the four IDX files in `dir`,
/// verifying each against its pinned SHA-256.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    let split = |images: usize, labels: usize, split: Split| -> Result<Dataset> {
        let (ib, ip) = read_verified(dir, images)?;
        let (lb, lp) = read_verified(dir, labels)?;
        let images = parse_idx_images(&ib, &ip)?;
        let labels = parse_idx_labels(&lb, &lp)?;
        if images.shape().n != labels.len() {
            return Err(Error::Format {
                path: lp,
                offset: 4,
                detail: format!("{} labels for {} images", labels.len(), images.shape().n),
            });
        }
        Ok(Dataset {
            id: DatasetId::Mnist,
            split,
            images,
            labels,
            num_classes: 10,
            normalization: Normalization::identity(1),
            checksum: format!("{}+{}", MNIST_FILES[0].1, MNIST_FILES[2].1),
        })
    };
    Ok(Splits {
        train: split(0, 1, Split::Train)?,
        test: split(2, 3, Split::Test)?,
    })
}
