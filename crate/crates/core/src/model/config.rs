use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::pinyin::{FINALS, INITIALS, TONES};

/// Where the style embedding is added to the phoneme path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "u8", into = "u8")]
pub enum FusionStage {
    /// Before the duration adaptor; durations see the fused embedding.
    #[default]
    BeforeLengthAdaptor,
    /// After length regulation; durations come from the phoneme path only.
    AfterLengthAdaptor,
    /// After the mel decoder, right before the output projection.
    BeforeOutputLinear,
}

impl FusionStage {
    pub fn index(self) -> u8 {
        match self {
            FusionStage::BeforeLengthAdaptor => 0,
            FusionStage::AfterLengthAdaptor => 1,
            FusionStage::BeforeOutputLinear => 2,
        }
    }

    pub const ALL: [FusionStage; 3] = [
        FusionStage::BeforeLengthAdaptor,
        FusionStage::AfterLengthAdaptor,
        FusionStage::BeforeOutputLinear,
    ];
}

impl TryFrom<u8> for FusionStage {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(FusionStage::BeforeLengthAdaptor),
            1 => Ok(FusionStage::AfterLengthAdaptor),
            2 => Ok(FusionStage::BeforeOutputLinear),
            other => Err(format!("fusion stage must be 0, 1 or 2, got {other}")),
        }
    }
}

impl From<FusionStage> for u8 {
    fn from(s: FusionStage) -> u8 {
        s.index()
    }
}

impl fmt::Display for FusionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks_per_encoder: usize,
    /// Kernel widths of the two convolutions in each FFT block (also used by
    /// the duration predictor).
    pub conv_kernels: [usize; 2],
    pub conv_filter: usize,
    pub n_mels: usize,
    pub fusion_stage: FusionStage,
    pub dropout_fft: f64,
    pub dropout_duration: f64,
    pub max_seq_len: usize,
    pub phoneme_vocab: usize,
    pub tone_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 2,
            n_blocks_per_encoder: 4,
            conv_kernels: [3, 3],
            conv_filter: 256,
            n_mels: 80,
            fusion_stage: FusionStage::BeforeLengthAdaptor,
            dropout_fft: 0.5,
            dropout_duration: 0.1,
            max_seq_len: 1000,
            phoneme_vocab: 1 + INITIALS.len() + FINALS.len(),
            tone_vocab: 1 + TONES.len(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.conv_kernels.iter().any(|k| k % 2 == 0) {
            return fail(format!("conv kernels must be odd, got {:?}", self.conv_kernels));
        }
        if self.conv_filter == 0 || self.n_mels == 0 || self.n_blocks_per_encoder == 0 {
            return fail("conv_filter, n_mels and n_blocks_per_encoder must be positive".into());
        }
        for p in [self.dropout_fft, self.dropout_duration] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("dropout {p} outside [0, 1)"));
            }
        }
        if self.phoneme_vocab < 2 || self.tone_vocab < 2 || self.max_seq_len == 0 {
            return fail("vocabularies need PAD plus at least one symbol".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_mels, 80);
        assert_eq!(c.n_blocks_per_encoder, 4);
        assert_eq!((c.dropout_fft, c.dropout_duration), (0.5, 0.1));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = ModelConfig {
            d_model: 130,
            n_heads: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            conv_kernels: [3, 4],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stage_serializes_as_number() {
        let c = ModelConfig {
            fusion_stage: FusionStage::BeforeOutputLinear,
            ..Default::default()
        };
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"fusion_stage\":2"));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"fusion_stage":3}"#).is_err());
        assert!(serde_json::from_str::<ModelConfig>(r#"{"bogus":1}"#).is_err());
    }
}
