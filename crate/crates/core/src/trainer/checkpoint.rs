//! `SSPC` checkpoint files.
//!
//! Layout: the magic `SSPC`, one version byte, a little-endian `u32` length
//! followed by that many bytes of UTF-8 JSON metadata, then every parameter
//! as raw little-endian `f32` in declaration order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainError, TrainMode};
use crate::autodiff::{group_of, ParameterSet, Tensor};
use crate::model::{AcousticModel, ModelConfig, GROUPS};
use crate::pinyin::{Frontend, SymbolTable};

const MAGIC: &[u8; 4] = b"SSPC";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AcousticModel,
    pub frontend: Frontend,
    pub step: u64,
    pub mode: TrainMode,
    /// Group name to frozen flag, for every parameter group.
    pub frozen: BTreeMap<String, bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: ModelConfig,
    phonemes: Vec<String>,
    tones: Vec<String>,
    step: u64,
    mode: TrainMode,
    frozen: BTreeMap<String, bool>,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint(msg.into())
}

impl Checkpoint {
    /// Wraps a model, reading freeze flags off its parameters.
    pub fn new(model: AcousticModel, frontend: Frontend, step: u64, mode: TrainMode) -> Self {
        let mut frozen: BTreeMap<String, bool> = GROUPS.iter().map(|g| (g.to_string(), false)).collect();
        for (name, t) in model.params.iter() {
            if !t.trainable {
                frozen.insert(group_of(name).to_string(), true);
            }
        }
        Self {
            model,
            frontend,
            step,
            mode,
            frozen,
        }
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen.get(group).copied().unwrap_or(false)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.model.config.clone(),
            phonemes: self.frontend.phonemes.symbols()[1..].to_vec(),
            tones: self.frontend.tones.symbols()[1..].to_vec(),
            step: self.step,
            mode: self.mode,
            frozen: self.frozen.clone(),
            tensors: self
                .model
                .params
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.to_string(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(9 + json.len() + 4 * self.model.params.num_values());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.params.iter() {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing SSPC magic"));
        }
        if bytes[4] != VERSION {
            return Err(corrupt(format!("unsupported version {}", bytes[4])));
        }
        let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
        let json = bytes.get(9..9 + len).ok_or_else(|| corrupt("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(json).map_err(|e| corrupt(format!("metadata: {e}")))?;
        meta.config.validate().map_err(|e| corrupt(e.to_string()))?;
        let frontend = Frontend {
            phonemes: SymbolTable::new(meta.phonemes).map_err(|e| corrupt(e.to_string()))?,
            tones: SymbolTable::new(meta.tones).map_err(|e| corrupt(e.to_string()))?,
        };
        if frontend.phonemes.len() != meta.config.phoneme_vocab || frontend.tones.len() != meta.config.tone_vocab {
            return Err(corrupt("vocabulary sizes disagree with the model config"));
        }

        let mut blob = &bytes[9 + len..];
        let mut params = ParameterSet::new();
        for tm in meta.tensors {
            let n: usize = tm.shape.iter().product();
            if blob.len() < 4 * n {
                return Err(corrupt(format!("blob for {} is truncated", tm.name)));
            }
            let values = blob[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blob = &blob[4 * n..];
            let mut t = Tensor::new(tm.shape, values).map_err(|e| corrupt(e.to_string()))?;
            t.trainable = !meta.frozen.get(group_of(&tm.name)).copied().unwrap_or(false);
            params.insert(tm.name, t).map_err(|e| corrupt(e.to_string()))?;
        }
        if !blob.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", blob.len())));
        }
        // the layout must match what this config builds
        let reference = AcousticModel::new(meta.config.clone(), 0).map_err(|e| corrupt(e.to_string()))?;
        let expected: Vec<(&str, &[usize])> = reference.params.iter().map(|(n, t)| (n, t.shape.as_slice())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape.as_slice())).collect();
        if expected != got {
            return Err(corrupt("parameter names or shapes do not match the model config"));
        }
        Ok(Self {
            model: AcousticModel {
                config: meta.config,
                params,
            },
            frontend,
            step: meta.step,
            mode: meta.mode,
            frozen: meta.frozen,
        })
    }

    /// Writes to a temporary file next to `path`, then renames.
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        crate::dsp::atomic_write(path, &self.to_bytes()).map_err(|e| TrainError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::NameSelector;
    use crate::model::PHONEME_ENCODER;

    fn tiny() -> AcousticModel {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks_per_encoder: 1,
            conv_filter: 8,
            ..Default::default()
        };
        AcousticModel::new(cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_and_resave_identical() {
        let mut m = tiny();
        m.params.set_trainable(&NameSelector::group(PHONEME_ENCODER), false);
        let ck = Checkpoint::new(m, Frontend::default(), 42, TrainMode::Lora);
        assert!(ck.is_frozen(PHONEME_ENCODER));
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.sspc"), dir.path().join("b.sspc"));
        ck.save(&a).unwrap();
        let back = Checkpoint::load(&a).unwrap();
        assert_eq!(back, ck);
        back.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = Checkpoint::new(tiny(), Frontend::default(), 0, TrainMode::Joint).to_bytes();
        let cases: Vec<Vec<u8>> = vec![
            b"NOPE".to_vec(),
            {
                let mut b = bytes.clone();
                b[4] = 9;
                b
            },
            bytes[..bytes.len() - 3].to_vec(),
            {
                let mut b = bytes.clone();
                b.push(0);
                b
            },
            {
                let mut b = bytes.clone();
                b[12] = b'#';
                b
            },
        ];
        for c in cases {
            assert!(matches!(Checkpoint::from_bytes(&c), Err(TrainError::CorruptCheckpoint(_))));
        }
    }
}
