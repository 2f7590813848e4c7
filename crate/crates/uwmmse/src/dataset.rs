//! UWDS channel-dataset container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UWDS"
//! 4       2     format version, u16 LE (= 1)
//! 6       4     M, u32 LE
//! 10      8     sample count, u64 LE
//! 18      ...   count × M × M f64 LE, row-major, samples concatenated
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uwmmse_core::channel::{apply_perturbation, ChannelMatrix};
use uwmmse_core::stability::PerturbationSpec;
use uwmmse_core::{Matrix, SystemConfig};

use crate::error::{Result, RunError};
use crate::provenance::Provenance;

pub const MAGIC: [u8; 4] = *b"UWDS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes at offset 0")]
    BadMagic,
    #[error("unsupported format version {0} at offset 4")]
    UnsupportedVersion(u16),
    #[error("truncated at offset {offset}: expected {expected} bytes in total")]
    Truncated { offset: usize, expected: u64 },
    #[error("{extra} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("network size 0 at offset 6")]
    ZeroSize,
    #[error("non-finite entry at offset {offset} (sample {sample})")]
    NonFinite { offset: usize, sample: u64 },
    #[error("sample {sample} has size {found}, the dataset has {expected}")]
    MixedSizes { sample: usize, expected: usize, found: usize },
}

impl From<FormatError> for RunError {
    fn from(e: FormatError) -> Self {
        RunError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub samples: Vec<ChannelMatrix>,
}

impl Dataset {
    pub fn new(samples: Vec<ChannelMatrix>) -> Result<Self, FormatError> {
        let m = samples.first().map_or(1, ChannelMatrix::m);
        if let Some((sample, h)) = samples.iter().enumerate().find(|(_, h)| h.m() != m) {
            return Err(FormatError::MixedSizes { sample, expected: m, found: h.m() });
        }
        Ok(Self { m, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn encoded_len(m: usize, count: usize) -> usize {
        HEADER_LEN + count * m * m * 8
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(self.m, self.len()));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for h in &self.samples {
            for x in h.matrix().as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let truncated = |expected: u64| FormatError::Truncated { offset: bytes.len(), expected };
        if bytes.len() < 4 {
            return Err(if MAGIC.starts_with(bytes) { truncated(HEADER_LEN as u64) } else { FormatError::BadMagic });
        }
        if bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN as u64));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let m = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as u64;
        let count = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
        if m == 0 {
            return Err(FormatError::ZeroSize);
        }
        let expected = m
            .checked_mul(m)
            .and_then(|mm| mm.checked_mul(count))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(HEADER_LEN as u64))
            .unwrap_or(u64::MAX);
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(truncated(expected));
        }
        if actual > expected {
            return Err(FormatError::TrailingBytes { offset: expected as usize, extra: (actual - expected) as usize });
        }
        let m = m as usize;
        let per_sample = m * m * 8;
        let mut samples = Vec::with_capacity(count as usize);
        for (n, chunk) in bytes[HEADER_LEN..].chunks_exact(per_sample).enumerate() {
            let values: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
                return Err(FormatError::NonFinite { offset: HEADER_LEN + n * per_sample + pos * 8, sample: n as u64 });
            }
            let h = Matrix::from_row_major(m, m, values).expect("square chunk");
            samples.push(ChannelMatrix::new(h).expect("finite square matrix"));
        }
        Ok(Self { m, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(RunError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(RunError::io(path))?;
        Self::decode(&bytes).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
    }

    /// Applies the per-sample perturbation streams of `spec`.
    pub fn perturbed(&self, spec: &PerturbationSpec) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(n, h)| apply_perturbation(h, &spec.draw(self.m, n)?))
            .collect::<uwmmse_core::Result<Vec<_>>>()?;
        Ok(Self { m: self.m, samples })
    }
}

/// Sidecar manifest `<file>.json` of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub format_version: u16,
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub system: SystemConfig,
    pub provenance: Provenance,
}

/// Sidecar of a perturbed sibling file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSidecar {
    pub tau: f64,
    pub eps: f64,
    pub seed: u64,
    /// File name of the clean dataset this was derived from.
    pub source: String,
    pub provenance: Provenance,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `dir/name.uwds` → `dir/name.perturbed.uwds`.
pub fn perturbed_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "uwds".into());
    path.with_file_name(format!("{stem}.perturbed.{ext}"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(RunError::io(path))
}
