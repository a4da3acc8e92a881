//! Versioned, checksummed model files.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` body length (both
//! little-endian), a JSON body, then the SHA-256 of everything before it.

use std::path::Path;

use phq_ensemble::augment::AugmentConfig;
use phq_ensemble::io::SystemKind;
use phq_ensemble::optim::TrainConfig;
use phq_ensemble::{BottomUp, TopDown};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PHQMODEL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("model archive integrity check failed: {0}")]
    Integrity(String),
    #[error("model archive format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model archive holds a {found} system but {expected} was requested")]
    KindMismatch { expected: &'static str, found: &'static str },
    #[error("model archive i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "models", rename_all = "kebab-case")]
pub enum Ensemble {
    BottomUp(BottomUp),
    TopDown(TopDown),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub ensemble: Ensemble,
    pub train_config: TrainConfig,
    pub augment_config: AugmentConfig,
    /// Hex SHA-256 over the training label and embedding files.
    pub data_fingerprint: String,
}

impl ModelArchive {
    pub fn kind(&self) -> SystemKind {
        match self.ensemble {
            Ensemble::BottomUp(_) => SystemKind::BottomUp,
            Ensemble::TopDown(_) => SystemKind::TopDown,
        }
    }

    pub fn expect_kind(&self, expected: SystemKind) -> Result<(), ArchiveError> {
        if self.kind() != expected {
            return Err(ArchiveError::KindMismatch {
                expected: expected.name(),
                found: self.kind().name(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("archive body serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + body.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let bad = |m: &str| ArchiveError::Integrity(m.to_string());
        if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
            return Err(bad("file is truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a model archive (bad magic)"));
        }
        let (content, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(content).as_slice() != sum {
            return Err(bad("checksum mismatch"));
        }
        let version = u32::from_le_bytes(content[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ArchiveError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(content[12..20].try_into().unwrap());
        let body = &content[HEADER_LEN..];
        if body.len() as u64 != len {
            return Err(bad("body length does not match header"));
        }
        let archive: ModelArchive = serde_json::from_slice(body).map_err(|e| bad(&format!("body: {e}")))?;
        let checked = match &archive.ensemble {
            Ensemble::BottomUp(m) => m.validate(),
            Ensemble::TopDown(m) => m.validate(),
        };
        checked.map_err(|e| bad(&e.to_string()))?;
        Ok(archive)
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        ModelArchive::from_bytes(&std::fs::read(path)?)
    }
}

/// Hex SHA-256 over the given files, each prefixed by its byte length.
pub fn fingerprint(files: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update((f.len() as u64).to_le_bytes());
        h.update(f);
    }
    format!("{:x}", h.finalize())
}
