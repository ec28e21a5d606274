//! Self-describing binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `CTRF`                              |
//! | 4      | 1    | format version                            |
//! | 5      | 3    | reserved, zero                            |
//! | 8      | 8    | header length `H` (u64)                   |
//! | 16     | H    | UTF-8 JSON header                         |
//! | 16+H   | 4·N  | parameter payload, IEEE-754 f32           |
//! | end-32 | 32   | SHA-256 of every preceding byte           |
//!
//! The header holds the schema and its fingerprint, the model config, the
//! vocabularies, the numeric statistics and a tensor directory giving each
//! parameter's name, shape and element offset into the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, Tensor};
use crate::dataset::{ContentType, EncodedExamples};
use crate::features::{Encoder, FeatureError, FeatureSchema, NumericStats, VocabSet};
use crate::models::{CtrNet, ModelConfig, ModelError};

pub const MAGIC: &[u8; 4] = b"CTRF";
pub const FORMAT_VERSION: u8 = 1;
const PREAMBLE: usize = 16;
const DIGEST: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u8, expected: u8 },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("schema fingerprint mismatch: checkpoint has {checkpoint}, data has {data}")]
    Fingerprint { checkpoint: String, data: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    content_type: ContentType,
    schema: FeatureSchema,
    config: ModelConfig,
    vocabs: VocabSet,
    stats: BTreeMap<String, NumericStats>,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to encode raw rows for it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    net: CtrNet,
    params: ParamStore<f32>,
    encoder: Encoder,
    content_type: ContentType,
}

impl Checkpoint {
    pub fn new(net: CtrNet, params: ParamStore<f32>, encoder: Encoder, content_type: ContentType) -> Result<Self, CheckpointError> {
        net.check_params(&params)?;
        if net.schema().fingerprint() != encoder.schema().fingerprint() {
            return Err(CheckpointError::Fingerprint {
                checkpoint: net.schema().fingerprint(),
                data: encoder.schema().fingerprint(),
            });
        }
        Ok(Checkpoint { net, params, encoder, content_type })
    }

    pub fn net(&self) -> &CtrNet {
        &self.net
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn content_type(&self) -> ContentType {
        self.content_type
    }

    pub fn fingerprint(&self) -> String {
        self.net.schema().fingerprint()
    }

    /// Eval-mode click probabilities. Rows must come from this checkpoint's encoder.
    pub fn predict(&self, examples: &EncodedExamples) -> Result<Vec<f64>, CheckpointError> {
        let fp = self.fingerprint();
        if examples.schema_fingerprint != fp {
            return Err(CheckpointError::Fingerprint { checkpoint: fp, data: examples.schema_fingerprint.clone() });
        }
        Ok(self.net.predict(&self.params, &examples.as_batch(), 2048))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (_, name, t) in self.params.iter() {
            tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset });
            offset += t.numel();
        }
        let header = Header {
            fingerprint: self.fingerprint(),
            content_type: self.content_type,
            schema: self.net.schema().clone(),
            config: self.net.config().clone(),
            vocabs: self.encoder.vocabs().clone(),
            stats: self.encoder.stats().clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * offset + DIGEST);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[FORMAT_VERSION, 0, 0, 0]);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 {
            return Err(CheckpointError::Truncated(format!("{} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < PREAMBLE + DIGEST {
            return Err(CheckpointError::Truncated(format!("{} bytes", bytes.len())));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: bytes[4], expected: FORMAT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_end = bytes.len() - DIGEST;
        if header_len > body_end - PREAMBLE {
            return Err(CheckpointError::Truncated("header extends past end of file".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..PREAMBLE + header_len])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let payload = &bytes[PREAMBLE + header_len..body_end];
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if payload.len() != 4 * expected {
            return Err(CheckpointError::Truncated(format!(
                "payload has {} bytes, directory needs {}",
                payload.len(),
                4 * expected
            )));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(CheckpointError::Checksum);
        }
        let found = header.schema.fingerprint();
        if found != header.fingerprint {
            return Err(CheckpointError::Fingerprint { checkpoint: header.fingerprint, data: found });
        }
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let start = 4 * t.offset;
            if t.shape.is_empty() || t.shape.contains(&0) || start + 4 * n > payload.len() {
                return Err(CheckpointError::Header(format!("bad directory entry for {}", t.name)));
            }
            let data = payload[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(t.name.clone(), Tensor::new(t.shape.clone(), data));
        }
        let net = CtrNet::new(header.config, &header.schema)?;
        let encoder = Encoder::new(header.schema, header.vocabs, header.stats)?;
        Checkpoint::new(net, params, encoder, header.content_type)
    }

    /// Loads and additionally requires the given schema fingerprint.
    pub fn load_expecting(path: &Path, fingerprint: &str) -> Result<Self, CheckpointError> {
        let ckpt = Self::load(path)?;
        if ckpt.fingerprint() != fingerprint {
            return Err(CheckpointError::Fingerprint { checkpoint: ckpt.fingerprint(), data: fingerprint.to_string() });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|e| CheckpointError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|e| CheckpointError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_bytes(&bytes)
    }
}
