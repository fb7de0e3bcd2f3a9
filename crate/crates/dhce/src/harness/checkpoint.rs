//! Checkpoint persistence.
//!
//! Layout: 8-byte magic `DHCEv1\0\0`, little-endian u64 header length,
//! a UTF-8 JSON header (version, hyperparameters, encoder spec,
//! vocabulary, event types, parameter manifest), then raw little-endian
//! f64 buffers in manifest order. The header is human-inspectable; the
//! buffers make save/load/save byte-identical.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::DiseaseVocabulary;
use crate::events::{EncodeError, HashingEncoder, RemoteEncoder, TextEncoder};
use crate::model::{HyperParams, ModelParameters};
use crate::numkit::Tensor;

pub const MAGIC: [u8; 8] = *b"DHCEv1\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: unexpected end at offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed checkpoint header: {0}")]
    BadHeader(String),
    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),
}

/// Which text encoder produced the event vectors the parameters were
/// trained against, with its pinned output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    Hashing { dim: usize, seed: u64 },
    Remote {
        endpoint: String,
        dim: usize,
        timeout_ms: u64,
        retries: u32,
    },
}

impl EncoderSpec {
    pub fn dim(&self) -> usize {
        match self {
            Self::Hashing { dim, .. } => *dim,
            Self::Remote { dim, .. } => *dim,
        }
    }

    /// Rebuilds the encoder; a remote encoder re-fetches `/info` and the
    /// advertised dimension must still match the checkpoint.
    pub fn build(&self) -> Result<Box<dyn TextEncoder>, EncodeError> {
        match self {
            Self::Hashing { dim, seed } => Ok(Box::new(HashingEncoder::new(*dim, *seed)?)),
            Self::Remote {
                endpoint,
                dim,
                timeout_ms,
                retries,
            } => {
                let enc =
                    RemoteEncoder::connect(endpoint, Duration::from_millis(*timeout_ms), *retries)?;
                if enc.dim() != *dim {
                    return Err(EncodeError::DimensionMismatch {
                        expected: *dim,
                        got: enc.dim(),
                    });
                }
                Ok(Box::new(enc))
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    hyperparams: HyperParams,
    encoder: EncoderSpec,
    vocabulary: Vec<String>,
    event_types: Vec<String>,
    manifest: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub hp: HyperParams,
    pub encoder: EncoderSpec,
    pub vocabulary: Arc<DiseaseVocabulary>,
    pub event_types: Vec<String>,
    pub params: ModelParameters,
}

impl Checkpoint {
    fn header(&self) -> Header {
        Header {
            version: FORMAT_VERSION,
            hyperparams: self.hp,
            encoder: self.encoder.clone(),
            vocabulary: self.vocabulary.codes().to_vec(),
            event_types: self.event_types.clone(),
            manifest: self
                .params
                .manifest()
                .into_iter()
                .map(|(name, (rows, cols))| ManifestEntry {
                    name: name.to_string(),
                    rows,
                    cols,
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header =
            serde_json::to_vec(&self.header()).expect("checkpoint header serialization");
        let mut out = Vec::with_capacity(header.len() + 16);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for tensor in self.params.tensors() {
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut offset = 0usize;
        let take = |offset: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *offset + n > bytes.len() {
                return Err(CheckpointError::Truncated { offset: *offset });
            }
            let slice = &bytes[*offset..*offset + n];
            *offset += n;
            Ok(slice)
        };

        if take(&mut offset, 8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len =
            u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(&mut offset, header_len)?)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(header.version));
        }

        let mut vocabulary = DiseaseVocabulary::from_codes(header.vocabulary)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        vocabulary.reindex();

        let expected: Vec<(&'static str, (usize, usize))> = {
            let probe = ModelParameters::init(
                vocabulary.len().max(1),
                header.hyperparams.d,
                header.encoder.dim(),
                0,
            );
            probe.manifest()
        };
        if header.manifest.len() != expected.len() {
            return Err(CheckpointError::ManifestMismatch(format!(
                "expected {} entries, found {}",
                expected.len(),
                header.manifest.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.manifest.len());
        for (entry, (name, shape)) in header.manifest.iter().zip(&expected) {
            if entry.name != *name || (entry.rows, entry.cols) != *shape {
                return Err(CheckpointError::ManifestMismatch(format!(
                    "entry {} ({}x{}) does not match expected {name} {shape:?}",
                    entry.name, entry.rows, entry.cols
                )));
            }
            let n = entry.rows * entry.cols;
            let raw = take(&mut offset, n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(
                Tensor::new(entry.rows, entry.cols, data)
                    .map_err(|e| CheckpointError::ManifestMismatch(e.to_string()))?,
            );
        }
        if offset != bytes.len() {
            return Err(CheckpointError::ManifestMismatch(format!(
                "{} trailing bytes after parameter buffers",
                bytes.len() - offset
            )));
        }
        let params = ModelParameters::from_tensors(
            vocabulary.len(),
            header.hyperparams.d,
            header.encoder.dim(),
            tensors,
        )
        .map_err(|e| CheckpointError::ManifestMismatch(e.to_string()))?;

        Ok(Self {
            hp: header.hyperparams,
            encoder: header.encoder,
            vocabulary: Arc::new(vocabulary),
            event_types: header.event_types,
            params,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = checkpoint.to_bytes();
    let mut file = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let vocab =
            DiseaseVocabulary::from_codes(["a", "b", "c"].iter().map(|s| s.to_string())).unwrap();
        let hp = HyperParams {
            d: 4,
            ..HyperParams::default()
        };
        Checkpoint {
            hp,
            encoder: EncoderSpec::Hashing { dim: 8, seed: 7 },
            vocabulary: Arc::new(vocab),
            event_types: vec!["lab".into()],
            params: ModelParameters::init(3, 4, 8, 99),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.params, ckpt.params);
        assert_eq!(loaded.vocabulary.codes(), ckpt.vocabulary.codes());
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn truncation_reports_the_offset() {
        let bytes = sample().to_bytes();
        let cut = bytes.len() - 13;
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(CheckpointError::Truncated { offset }) => assert!(offset <= cut),
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let ckpt = sample();
        let mut bytes = ckpt.to_bytes();
        // Header starts at byte 16; bump the version digit in the JSON.
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[16..16 + header_len].to_vec()).unwrap();
        let bumped = header.replace("\"version\":1", "\"version\":9");
        assert_ne!(header, bumped);
        bytes.splice(16..16 + header_len, bumped.into_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn vocabulary_reindexes_on_load() {
        let loaded = Checkpoint::from_bytes(&sample().to_bytes()).unwrap();
        assert_eq!(loaded.vocabulary.index_of("b"), Some(1));
    }
}
