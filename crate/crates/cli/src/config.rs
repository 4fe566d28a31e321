use std::path::Path;

use serde::{Deserialize, Serialize};
use tonal_tts::dsp::{MelConfig, MelFilterbank};
use tonal_tts::model::{FusionStage, ModelConfig};
use tonal_tts::seed::DEFAULT_ROOT_SEED;
use tonal_tts::trainer::{TrainConfig, TrainMode};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocoderConfig {
    pub iterations: usize,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            iterations: tonal_tts::dsp::DEFAULT_ITERATIONS,
        }
    }
}

/// Everything a command needs, read from one JSON document.
///
/// ```json
/// { "seed": 7, "sample_rate": 48000,
///   "model": { "d_model": 128 }, "train": { "steps": 500 },
///   "mel": { "hop": 512 }, "vocoder": { "iterations": 60 } }
/// ```
///
/// Every section and field is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; `init`, `dropout`, `batches` and `griffin_lim` derive from it.
    pub seed: u64,
    /// Output rate for synthesis.
    pub sample_rate: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mel: MelConfig,
    pub vocoder: VocoderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_ROOT_SEED,
            sample_rate: 48000,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            mel: MelConfig::default(),
            vocoder: VocoderConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub fusion_stage: Option<FusionStage>,
    pub mode: Option<TrainMode>,
    pub steps: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.train.seed != DEFAULT_ROOT_SEED && cfg.train.seed != cfg.seed {
            return Err(CliError::Usage("config: set the seed at the top level, not under `train`".into()));
        }
        let model_stage = cfg.model.fusion_stage;
        if model_stage != FusionStage::default() && model_stage != cfg.train.fusion_stage {
            return Err(CliError::Usage(
                "config: model.fusion_stage and train.fusion_stage disagree; set train.fusion_stage".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    /// Applies overrides, propagates shared fields and validates.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(f) = o.fusion_stage {
            self.train.fusion_stage = f;
        }
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
        if let Some(n) = o.steps {
            self.train.steps = n;
        }
        self.train.seed = self.seed;
        self.model.fusion_stage = self.train.fusion_stage;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: String| CliError::Usage(format!("config: {e}"));
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        self.mel.stft().validate().map_err(|e| usage(e.to_string()))?;
        if self.model.n_mels != self.mel.n_mels {
            return Err(usage(format!(
                "model.n_mels {} differs from mel.n_mels {}",
                self.model.n_mels, self.mel.n_mels
            )));
        }
        if self.sample_rate == 0 {
            return Err(usage("sample_rate must be positive".into()));
        }
        let fmax = self.mel.fmax.unwrap_or(self.sample_rate as f64 / 2.0);
        MelFilterbank::new(self.sample_rate, self.mel.n_fft, self.mel.n_mels, self.mel.fmin, fmax)
            .map_err(|e| usage(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sead": 1}"#), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_json(r#"{"model": {"width": 3}}"#), Err(CliError::Usage(_))));
    }

    #[test]
    fn overrides_win_and_propagate() {
        let cfg = RunConfig::from_json(r#"{"seed": 3, "train": {"steps": 9, "fusion_stage": 1}}"#).unwrap();
        let r = cfg
            .clone()
            .resolve(&Overrides {
                seed: Some(11),
                fusion_stage: Some(FusionStage::BeforeOutputLinear),
                ..Default::default()
            })
            .unwrap();
        assert_eq!((r.seed, r.train.seed, r.train.steps), (11, 11, 9));
        assert_eq!(r.model.fusion_stage, FusionStage::BeforeOutputLinear);
        let r = cfg.resolve(&Overrides::default()).unwrap();
        assert_eq!(r.model.fusion_stage, FusionStage::AfterLengthAdaptor);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for doc in [
            r#"{"train": {"steps": 0}}"#,
            r#"{"model": {"n_mels": 40}}"#,
            r#"{"mel": {"n_fft": 1000}}"#,
            r#"{"train": {"fusion_stage": 5}}"#,
            r#"{"model": {"fusion_stage": 2}}"#,
        ] {
            let r = RunConfig::from_json(doc).and_then(|c| c.resolve(&Overrides::default()));
            assert!(matches!(r, Err(CliError::Usage(_))), "{doc}");
        }
    }
}
