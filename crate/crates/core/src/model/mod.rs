//! The acoustic model: disjoint phoneme and style encoders, a duration
//! adaptor, additive style fusion at a configurable stage, and a mel
//! decoder with an 80-band output projection.
//!
//! Parameter groups, in declaration order:
//!
//! | group              | contents                                      |
//! |--------------------|-----------------------------------------------|
//! | `phoneme_encoder`  | phoneme embedding + FFT blocks                |
//! | `style_encoder`    | tone embedding + FFT blocks                   |
//! | `duration_adaptor` | duration predictor                            |
//! | `mel_decoder`      | FFT blocks at frame rate                      |
//! | `output_linear`    | `d_model -> n_mels` projection                |

mod config;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{FusionStage, ModelConfig};
pub use layers::{fft_block, fft_block_with_attention, fuse, length_regulate, positional_encoding};

use crate::autodiff::{Binding, Dense, ParameterSet, Real, Tape, TensorError, Var};
use crate::pinyin::AcousticTokens;

pub const PHONEME_ENCODER: &str = "phoneme_encoder";
pub const STYLE_ENCODER: &str = "style_encoder";
pub const DURATION_ADAPTOR: &str = "duration_adaptor";
pub const MEL_DECODER: &str = "mel_decoder";
pub const OUTPUT_LINEAR: &str = "output_linear";
pub const GROUPS: [&str; 5] = [PHONEME_ENCODER, STYLE_ENCODER, DURATION_ADAPTOR, MEL_DECODER, OUTPUT_LINEAR];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("token id {id} outside vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("phoneme and tone streams differ in length ({phonemes} vs {tones})")]
    StreamMismatch { phonemes: usize, tones: usize },
    #[error("{durations} durations for {tokens} tokens")]
    LengthMismatch { tokens: usize, durations: usize },
    #[error("negative duration {value} at token {index}")]
    NegativeDuration { index: usize, value: i64 },
    #[error("training forward pass requires ground-truth durations")]
    MissingDurations,
    #[error("sequence of {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("non-finite duration prediction at token {0}")]
    NonFiniteDuration(usize),
}

/// Time-major hidden states on a tape with a validity mask (false = PAD).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub values: Var,
    pub mask: Vec<bool>,
}

/// Per-token frame counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DurationSequence(Vec<u32>);

impl DurationSequence {
    pub fn new(frames: Vec<u32>) -> Self {
        Self(frames)
    }

    pub fn from_signed(values: &[i64]) -> Result<Self, ModelError> {
        values
            .iter()
            .enumerate()
            .map(|(index, &value)| u32::try_from(value).map_err(|_| ModelError::NegativeDuration { index, value }))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    /// Splits `total` frames over `tokens` as evenly as possible; the
    /// remainder goes to the earliest tokens.
    pub fn uniform(total: usize, tokens: usize) -> Self {
        if tokens == 0 {
            return Self(Vec::new());
        }
        let (q, r) = (total / tokens, total % tokens);
        Self((0..tokens).map(|i| (q + usize::from(i < r)) as u32).collect())
    }

    /// Inference rule for log-domain predictions: `max(0, round(exp(p) - 1))`.
    pub fn from_log_predictions(preds: &[f32]) -> Result<Self, ModelError> {
        preds
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if !p.is_finite() {
                    return Err(ModelError::NonFiniteDuration(i));
                }
                let d = ((p as f64).exp() - 1.0).round().max(0.0);
                Ok(d.min(u32::MAX as f64) as u32)
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn frames(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&d| d as usize).sum()
    }

    /// Duration targets in the log domain, `log(d + 1)`.
    pub fn log_targets(&self) -> Vec<f64> {
        self.0.iter().map(|&d| (d as f64 + 1.0).ln()).collect()
    }
}

/// How the style path takes part in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StyleInput {
    /// Style encoder output is fused as usual.
    #[default]
    Active,
    /// Style embeddings are replaced by zero vectors before fusion.
    Zeroed,
    /// No fusion at all: the phoneme-only pipeline.
    Absent,
}

#[derive(Debug, Clone)]
pub struct ForwardInput<'a> {
    pub tokens: &'a AcousticTokens,
    /// Ground-truth durations; required on training tapes.
    pub durations: Option<&'a DurationSequence>,
    pub pad_tokens_to: Option<usize>,
    pub pad_frames_to: Option<usize>,
    pub style: StyleInput,
}

impl<'a> ForwardInput<'a> {
    pub fn new(tokens: &'a AcousticTokens) -> Self {
        Self {
            tokens,
            durations: None,
            pad_tokens_to: None,
            pad_frames_to: None,
            style: StyleInput::Active,
        }
    }

    pub fn with_durations(mut self, d: &'a DurationSequence) -> Self {
        self.durations = Some(d);
        self
    }

    pub fn with_style(mut self, style: StyleInput) -> Self {
        self.style = style;
        self
    }

    pub fn padded(mut self, tokens: usize, frames: usize) -> Self {
        self.pad_tokens_to = Some(tokens);
        self.pad_frames_to = Some(frames);
        self
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[frames, n_mels]` predicted log-mel.
    pub mel: Var,
    pub frame_mask: Vec<bool>,
    /// `[tokens, 1]` log-domain duration predictions.
    pub log_durations: Var,
    pub token_mask: Vec<bool>,
    /// Durations used for expansion (ground truth or predicted).
    pub durations: DurationSequence,
    pub phoneme_hidden: Var,
    pub style_hidden: Option<Var>,
}

fn zeros_like<F: Real>(tape: &mut Tape<F>, seq: &EmbeddingSequence) -> EmbeddingSequence {
    let shape = tape.shape(seq.values).to_vec();
    EmbeddingSequence {
        values: tape.constant(Dense::zeros(&shape)),
        mask: seq.mask.clone(),
    }
}

/// The full forward pass with stage-dependent fusion wiring.
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    cfg: &ModelConfig,
    input: &ForwardInput<'_>,
) -> Result<ForwardOutput, ModelError> {
    let tokens = input.tokens;
    let n = tokens.phonemes.len();
    if tokens.tones.len() != n {
        return Err(ModelError::StreamMismatch {
            phonemes: n,
            tones: tokens.tones.len(),
        });
    }
    if n > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: n,
            max: cfg.max_seq_len,
        });
    }
    if tape.is_training() && input.durations.is_none() {
        return Err(ModelError::MissingDurations);
    }
    if let Some(d) = input.durations {
        if d.len() != n {
            return Err(ModelError::LengthMismatch {
                tokens: n,
                durations: d.len(),
            });
        }
    }

    let t = input.pad_tokens_to.unwrap_or(n).max(n);
    let mut token_mask = vec![true; n];
    token_mask.resize(t, false);
    let pad_ids = |ids: &[u32]| {
        let mut v = ids.to_vec();
        v.resize(t, 0);
        v
    };

    let h_p = layers::encode_tokens(tape, b, PHONEME_ENCODER, &pad_ids(&tokens.phonemes), &token_mask, cfg.phoneme_vocab, cfg)?;
    let h_s = match input.style {
        StyleInput::Absent => None,
        StyleInput::Zeroed => Some(zeros_like(tape, &h_p)),
        StyleInput::Active => Some(layers::encode_tokens(tape, b, STYLE_ENCODER, &pad_ids(&tokens.tones), &token_mask, cfg.tone_vocab, cfg)?),
    };

    let stage = cfg.fusion_stage;
    let duration_input = match (&h_s, stage) {
        (Some(s), FusionStage::BeforeLengthAdaptor) => fuse(tape, &h_p, s)?,
        _ => h_p.clone(),
    };
    let log_durations = layers::predict_durations(tape, b, DURATION_ADAPTOR, &duration_input, cfg)?;

    let durations = match input.durations {
        Some(d) => d.clone(),
        None => {
            let preds: Vec<f32> = tape.value(log_durations).data[..n].iter().map(|x| x.f64() as f32).collect();
            DurationSequence::from_log_predictions(&preds)?
        }
    };
    let m = durations.total();
    if m > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: m,
            max: cfg.max_seq_len,
        });
    }
    let mut padded = durations.frames().to_vec();
    padded.resize(t, 0);
    let padded = DurationSequence::new(padded);
    let pad_frames = input.pad_frames_to;

    let expanded = length_regulate(tape, &duration_input, &padded, pad_frames)?;
    let style_expanded = match (&h_s, stage) {
        (Some(s), FusionStage::AfterLengthAdaptor | FusionStage::BeforeOutputLinear) => {
            Some(length_regulate(tape, s, &padded, pad_frames)?)
        }
        _ => None,
    };
    let decoder_input = match (&style_expanded, stage) {
        (Some(s), FusionStage::AfterLengthAdaptor) => fuse(tape, &expanded, s)?,
        _ => expanded,
    };
    let frame_mask = decoder_input.mask.clone();
    let x = layers::add_positions(tape, decoder_input.values, cfg.d_model)?;
    let x = layers::zero_padding(tape, x, &frame_mask)?;
    let mut h_m = layers::block_stack(
        tape,
        b,
        MEL_DECODER,
        EmbeddingSequence {
            values: x,
            mask: frame_mask.clone(),
        },
        cfg,
    )?;
    if let (Some(s), FusionStage::BeforeOutputLinear) = (&style_expanded, stage) {
        h_m = fuse(tape, &h_m, s)?;
    }
    let w = b.var(&format!("{OUTPUT_LINEAR}.weight"))?;
    let bias = b.var(&format!("{OUTPUT_LINEAR}.bias"))?;
    let mel = tape.matmul(h_m.values, w)?;
    let mel = tape.add(mel, bias)?;

    Ok(ForwardOutput {
        mel,
        frame_mask,
        log_durations,
        token_mask,
        durations,
        phoneme_hidden: h_p.values,
        style_hidden: h_s.map(|s| s.values),
    })
}

/// A model: configuration plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

/// Inference result for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Row-major `[frames, n_mels]`.
    pub mel: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub durations: DurationSequence,
    pub log_durations: Vec<f32>,
}

impl AcousticModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        layers::init_encoder(&mut p, &mut rng, PHONEME_ENCODER, config.phoneme_vocab, &config)?;
        layers::init_encoder(&mut p, &mut rng, STYLE_ENCODER, config.tone_vocab, &config)?;
        layers::init_duration_predictor(&mut p, &mut rng, DURATION_ADAPTOR, &config)?;
        layers::init_block_stack(&mut p, &mut rng, MEL_DECODER, &config)?;
        p.insert(
            format!("{OUTPUT_LINEAR}.weight"),
            crate::autodiff::xavier_uniform(&mut rng, &[config.d_model, config.n_mels], config.d_model, config.n_mels),
        )?;
        p.insert(format!("{OUTPUT_LINEAR}.bias"), crate::autodiff::Tensor::zeros(&[config.n_mels]))?;
        Ok(Self { config, params: p })
    }

    /// Eval-mode forward pass. Uses `durations` when given, otherwise the
    /// predicted ones.
    pub fn infer(
        &self,
        tokens: &AcousticTokens,
        durations: Option<&DurationSequence>,
        style: StyleInput,
    ) -> Result<Inference, ModelError> {
        let mut tape = Tape::<f32>::new();
        let binding = bind_frozen(&self.params, &mut tape);
        let mut input = ForwardInput::new(tokens).with_style(style);
        input.durations = durations;
        let out = forward(&mut tape, &binding, &self.config, &input)?;
        let mel = tape.value(out.mel);
        Ok(Inference {
            mel: mel.data.clone(),
            n_frames: mel.shape[0],
            n_mels: self.config.n_mels,
            durations: out.durations,
            log_durations: tape.value(out.log_durations).data.clone(),
        })
    }
}

/// Binds every parameter as an untracked constant.
pub fn bind_frozen<'p>(params: &'p ParameterSet, tape: &mut Tape<f32>) -> Binding<'p> {
    let vars = params.iter().map(|(_, t)| tape.constant(t.as_dense())).collect();
    Binding::with_vars(params, vars).expect("one var per parameter")
}
