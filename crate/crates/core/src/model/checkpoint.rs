use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParams};
use crate::kernel::Tensor2;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of a vocabulary manifest (e.g. the bytes of `templates.csv`).
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub vocab_hash: String,
    pub shapes: Vec<(usize, usize)>,
    pub params: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, params: &ModelParams, seed: u64, vocab_hash: &str) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            seed,
            vocab_hash: vocab_hash.to_string(),
            shapes: params.tensors.iter().map(Tensor2::shape).collect(),
            params: params.tensors.iter().map(|t| t.data().to_vec()).collect(),
        }
    }

    pub fn model_params(&self) -> Result<ModelParams, ModelError> {
        if self.shapes.len() != self.params.len() {
            return Err(ModelError::BadConfig("checkpoint shape list does not match parameter list".into()));
        }
        let tensors = self
            .shapes
            .iter()
            .zip(&self.params)
            .map(|(&(r, c), data)| Tensor2::from_vec(r, c, data.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let params = ModelParams { tensors };
        params.check_shapes(&self.config)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(self).map_err(|source| ModelError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a checkpoint; when `expected_vocab_hash` is given it must match.
    pub fn load(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|source| ModelError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion(ckpt.version));
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != ckpt.vocab_hash {
                return Err(ModelError::VocabMismatch {
                    expected: expected.to_string(),
                    found: ckpt.vocab_hash,
                });
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_hash_check() {
        let config = ModelConfig {
            vocab_size: 9,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_seq_len: 8,
            dropout: 0.0,
        };
        let params = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let hash = hash_bytes(b"event_id,template\n0,a\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(&config, &params, 4, &hash).save(&path).unwrap();

        let back = Checkpoint::load(&path, Some(&hash)).unwrap();
        assert_eq!(back.model_params().unwrap(), params);
        assert_eq!(back.config, config);
        assert!(matches!(
            Checkpoint::load(&path, Some("deadbeef")),
            Err(ModelError::VocabMismatch { .. })
        ));
    }
}
