use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use md5::{Digest as _, Md5};

use crate::error::{Error, Result};

use super::cifar::{cifar_files_present, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES, MANIFEST};
use super::mnist::{mnist_files_present, MNIST_FILES};
use super::{hex_digest, sha256_hex, DatasetId};

/// The `mnist-data` npm package bundles the four raw IDX files.
pub const MNIST_NPM_URL: &str = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz";
pub const MNIST_NPM_SHA256: &str = "8f87f2d0d9133e6c9f7012d6d26bb05409e7e870a1de21d1a600b8d400cc07ed";
pub const CIFAR_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
pub const CIFAR_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";

const MAX_DOWNLOAD: u64 = 512 << 20;

fn download(url: &str) -> Result<Vec<u8>> {
    let err = |e: ureq::Error| Error::Download {
        url: url.into(),
        detail: e.to_string(),
    };
    let mut resp = ureq::get(url).call().map_err(err)?;
    resp.body_mut().with_config().limit(MAX_DOWNLOAD).read_to_vec().map_err(err)
}

/// Extracts archive members whose file name is in `wanted` into `dest`.
fn extract(archive: &[u8], url: &str, wanted: &[&str], dest: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let mut tar = tar::Archive::new(GzDecoder::new(archive));
    let mut written = Vec::new();
    let entries = tar.entries().map_err(|e| Error::io(url, e))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| Error::io(url, e))?;
        let path = entry.path().map_err(|e| Error::io(url, e))?.into_owned();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        if !wanted.contains(&name.as_str()) {
            continue;
        }
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
        let out = dest.join(&name);
        std::fs::write(&out, &bytes).map_err(|e| Error::io(&out, e))?;
        written.push(name);
    }
    let missing: Vec<_> = wanted.iter().filter(|w| !written.iter().any(|n| n == *w)).collect();
    if !missing.is_empty() {
        return Err(Error::Download {
            url: url.into(),
            detail: format!("archive lacks {missing:?}"),
        });
    }
    Ok(written)
}

fn fetch_mnist(dir: &Path) -> Result<()> {
    if mnist_files_present(dir) {
        return Ok(());
    }
    let archive = download(MNIST_NPM_URL)?;
    let got = sha256_hex(&archive);
    if got != MNIST_NPM_SHA256 {
        return Err(Error::Checksum {
            path: MNIST_NPM_URL.into(),
            expected: MNIST_NPM_SHA256.into(),
            actual: got,
        });
    }
    let names: Vec<&str> = MNIST_FILES.iter().map(|(n, _)| *n).collect();
    extract(&archive, MNIST_NPM_URL, &names, dir)?;
    Ok(())
}

fn fetch_cifar(dir: &Path) -> Result<()> {
    if cifar_files_present(dir) && dir.join(MANIFEST).is_file() {
        return Ok(());
    }
    let archive = download(CIFAR_URL)?;
    let got = hex_digest(&Md5::digest(&archive));
    if got != CIFAR_MD5 {
        return Err(Error::Checksum {
            path: CIFAR_URL.into(),
            expected: CIFAR_MD5.into(),
            actual: got,
        });
    }
    let names: Vec<&str> = CIFAR_TRAIN_FILES.iter().copied().chain([CIFAR_TEST_FILE]).collect();
    extract(&archive, CIFAR_URL, &names, dir)?;
    let mut manifest = String::new();
    for name in &names {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        manifest += &format!("{}  {name}\n", sha256_hex(&bytes));
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Downloads `id` under `root` with checksum pinning; returns the dataset
/// directory. Already-present files are kept. Synthetic sets need nothing.
pub fn fetch(id: DatasetId, root: &Path) -> Result<Option<PathBuf>> {
    match id {
        DatasetId::Mnist => {
            let dir = root.join("mnist");
            fetch_mnist(&dir)?;
            Ok(Some(dir))
        }
        DatasetId::Cifar10 | DatasetId::Cifar10Subset => {
            let dir = root.join("cifar10");
            fetch_cifar(&dir)?;
            Ok(Some(dir))
        }
        DatasetId::Toy2Class | DatasetId::Shuffled10 => Ok(None),
    }
}
