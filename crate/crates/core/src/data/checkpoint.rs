//! The `BBGC` checkpoint container.
//!
//! ```text
//! "BBGC"  version:u16  section_count:u32
//! per section: name_len:u16 name payload_len:u64 payload fingerprint:u64
//! ```
//!
//! Fingerprints are FNV-1a over the payload. JSON sections hold the
//! config and progress; tensor sections hold `count:u32` then per tensor
//! `name_len:u16 name dims:u32×4 f32 data`, all little-endian.

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};
use crate::train::{Progress, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BBGC";
pub const CHECKPOINT_VERSION: u16 = 1;

pub type NamedTensors = Vec<(String, Tensor4<f32>)>;

/// Resumable training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub progress: Progress,
    /// Parameters and buffers of the current model.
    pub model: NamedTensors,
    /// SGD momentum buffers by parameter name.
    pub momentum: NamedTensors,
    /// State of the best model so far (empty before the first evaluation).
    pub best: NamedTensors,
}

fn fingerprint(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn encode_tensors(tensors: &NamedTensors) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        for d in t.shape().dims() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        t.data().iter().for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.base + self.pos) as u64 + n as u64,
                actual: (self.base + self.bytes.len()) as u64,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()?;
        let offset = self.base + self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            detail: "name is not UTF-8".into(),
        })
    }
}

fn decode_tensors(payload: &[u8], base: usize, path: &Path) -> Result<NamedTensors> {
    let mut r = Reader {
        bytes: payload,
        pos: 0,
        base,
        path,
    };
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name = r.name()?;
        let shape = Shape4::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let raw = r.take(shape.numel().saturating_mul(4))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor4::from_vec(shape, data)?));
    }
    Ok(out)
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let sections: Vec<(&str, Vec<u8>)> = vec![
        ("config", serde_json::to_vec(&ck.config)?),
        ("progress", serde_json::to_vec(&ck.progress)?),
        ("model", encode_tensors(&ck.model)),
        ("momentum", encode_tensors(&ck.momentum)),
        ("best", encode_tensors(&ck.best)),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, payload) in sections {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&fingerprint(&payload).to_le_bytes());
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(ck)?;
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        bytes,
        pos: 0,
        base: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "bad magic, expected \"BBGC\"".into(),
        });
    }
    let version = r.u16()? as u16;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = r.u32()?;
    let mut sections = std::collections::HashMap::new();
    for _ in 0..count {
        let name = r.name()?;
        let len = r.u64()? as usize;
        let start = r.pos;
        let payload = r.take(len)?;
        if fingerprint(payload) != r.u64()? {
            return Err(Error::Corrupt { section: name });
        }
        sections.insert(name, (start, payload));
    }
    let mut get = |name: &str| {
        sections.remove(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            detail: format!("missing section '{name}'"),
        })
    };
    let json_err = |section: &str, e: serde_json::Error| Error::Serde(format!("{}: section '{section}': {e}", path.display()));
    let config = serde_json::from_slice(get("config")?.1).map_err(|e| json_err("config", e))?;
    let progress = serde_json::from_slice(get("progress")?.1).map_err(|e| json_err("progress", e))?;
    let (s, p) = get("model")?;
    let model = decode_tensors(p, s, path)?;
    let (s, p) = get("momentum")?;
    let momentum = decode_tensors(p, s, path)?;
    let (s, p) = get("best")?;
    let best = decode_tensors(p, s, path)?;
    Ok(Checkpoint {
        config,
        progress,
        model,
        momentum,
        best,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedRng, Stream};

    fn sample() -> Checkpoint {
        let mut rng = SeedRng::new(1).stream(Stream::Test, 0);
        Checkpoint {
            config: TrainConfig::toy(),
            progress: Progress {
                epochs_done: 2,
                step: 20,
                step_losses: vec![0.7, 0.6, f32::MIN_POSITIVE],
                ..Progress::default()
            },
            model: vec![
                ("a.weight".into(), Tensor4::randn([2, 3, 3, 3], 1.0, &mut rng)),
                ("a.bn.gamma".into(), Tensor4::filled([1, 2, 1, 1], 1.0)),
            ],
            momentum: vec![("a.weight".into(), Tensor4::randn([2, 3, 3, 3], 1.0, &mut rng))],
            best: Vec::new(),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bbgc");
        let ck = sample();
        save_checkpoint(&p, &ck).unwrap();
        let loaded = load_checkpoint(&p).unwrap();
        assert_eq!(loaded, ck);
        let first = std::fs::read(&p).unwrap();
        save_checkpoint(&p, &loaded).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn flipped_byte_names_section() {
        let mut bytes = checkpoint_bytes(&sample()).unwrap();
        let needle = b"a.bn.gamma";
        let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        bytes[at + needle.len() + 17] ^= 0xff;
        match parse_checkpoint(&bytes, Path::new("c")).unwrap_err() {
            Error::Corrupt { section } => assert_eq!(section, "model"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = checkpoint_bytes(&sample()).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            parse_checkpoint(&bytes, Path::new("c")).unwrap_err(),
            Error::Version { found: 9, .. }
        ));
    }
}
