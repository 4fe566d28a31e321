//! Joint training and frozen-base adaptation with a warm-up schedule, Adam,
//! global-norm clipping and `SSPC` checkpoints.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::Checkpoint;

use crate::autodiff::{Dense, NameSelector, ParameterSet, Tape, TensorError, Var};
use crate::model::{
    bind_frozen, forward, AcousticModel, DurationSequence, ForwardInput, FusionStage, ModelConfig, ModelError,
    DURATION_ADAPTOR, GROUPS, PHONEME_ENCODER,
};
use crate::pinyin::{AcousticTokens, Frontend};
use crate::seed::sub_seed;

/// Groups held fixed during adaptation.
pub const LORA_FROZEN: [&str; 2] = [PHONEME_ENCODER, DURATION_ADAPTOR];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    DatasetEmpty,
    #[error("utterance {id}: {reason}")]
    InvalidUtterance { id: String, reason: String },
    #[error("non-finite loss at step {step} (mel {mel_loss}, duration {duration_loss}, lr {lr}); batch {batch:?}")]
    NonFiniteLoss {
        step: u64,
        mel_loss: f64,
        duration_loss: f64,
        lr: f64,
        batch: Vec<String>,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Every group trains.
    #[default]
    Joint,
    /// Phoneme encoder and duration adaptor frozen.
    Lora,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Joint => "joint",
            TrainMode::Lora => "lora",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "lora" => Ok(TrainMode::Lora),
            other => Err(format!("unknown mode `{other}` (expected joint or lora)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub fusion_stage: FusionStage,
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub mel_loss_weight: f64,
    pub duration_loss_weight: f64,
    /// Emit an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Global L2 gradient norm limit.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Joint,
            fusion_stage: FusionStage::BeforeLengthAdaptor,
            steps: 2000,
            batch_size: 8,
            warmup_steps: 4000,
            seed: crate::seed::DEFAULT_ROOT_SEED,
            mel_loss_weight: 1.0,
            duration_loss_weight: 1.0,
            checkpoint_every: 0,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.steps == 0 {
            return fail("steps must be at least 1");
        }
        if self.warmup_steps == 0 {
            return fail("warmup_steps must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        for w in [self.mel_loss_weight, self.duration_loss_weight] {
            if !(w.is_finite() && w >= 0.0) {
                return fail("loss weights must be finite and nonnegative");
            }
        }
        if !(self.grad_clip > 0.0) {
            return fail("grad_clip must be positive");
        }
        Ok(())
    }
}

/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`, for `step >= 1`.
pub fn lr_at(step: u64, d_model: usize, warmup: usize) -> f64 {
    let s = step.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
}

/// Adam with first/second moments kept only for tensors that have been
/// updated while trainable.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            t: 0,
            state: vec![None; n_params],
        }
    }

    /// Number of tensors with allocated moment buffers.
    pub fn allocated(&self) -> usize {
        self.state.iter().filter(|s| s.is_some()).count()
    }

    pub fn has_state(&self, index: usize) -> bool {
        self.state.get(index).is_some_and(Option::is_some)
    }

    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) {
        assert_eq!(self.state.len(), params.len(), "optimizer built for another parameter set");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((_, p), slot) in params.iter_mut().zip(self.state.iter_mut()) {
            let Some(g) = p.grad.as_ref().filter(|_| p.trainable) else {
                continue;
            };
            let (m, v) = slot.get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                let gi = g[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p.values[i] = (p.values[i] as f64 - update) as f32;
            }
        }
    }
}

/// Scales all held gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

/// One training example: tokens, ground-truth durations and target log-mel.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub tokens: AcousticTokens,
    pub durations: DurationSequence,
    /// Row-major `[n_frames, n_mels]`.
    pub mel: Vec<f32>,
    pub n_mels: usize,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        tokens: AcousticTokens,
        durations: DurationSequence,
        mel: Vec<f32>,
        n_mels: usize,
    ) -> Result<Self, TrainError> {
        let id = id.into();
        let bad = |reason: String| TrainError::InvalidUtterance { id: id.clone(), reason };
        if tokens.phonemes.len() != tokens.tones.len() {
            return Err(bad("phoneme and tone streams differ in length".into()));
        }
        if durations.len() != tokens.len() {
            return Err(bad(format!("{} durations for {} tokens", durations.len(), tokens.len())));
        }
        if n_mels == 0 || mel.len() % n_mels != 0 {
            return Err(bad(format!("{} mel values do not divide into {n_mels} bands", mel.len())));
        }
        if durations.total() != mel.len() / n_mels {
            return Err(bad(format!(
                "durations sum to {} but the mel has {} frames",
                durations.total(),
                mel.len() / n_mels
            )));
        }
        Ok(Self {
            id,
            tokens,
            durations,
            mel,
            n_mels,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.mel.len() / self.n_mels.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub mel_loss: f64,
    pub duration_loss: f64,
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Hooks called by [`Trainer::run`].
pub trait TrainObserver {
    fn on_step(&mut self, _report: &StepReport) -> Result<(), TrainError> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Losses of a model on a dataset, pooled over every valid element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalLosses {
    pub mel_mse: f64,
    pub duration_mse: f64,
}

/// Eval-mode (no dropout) masked losses with ground-truth durations.
pub fn evaluate(model: &AcousticModel, data: &[Utterance]) -> Result<EvalLosses, TrainError> {
    if data.is_empty() {
        return Err(TrainError::DatasetEmpty);
    }
    let (mut mel_sum, mut mel_n, mut dur_sum, mut dur_n) = (0.0, 0usize, 0.0, 0usize);
    for u in data {
        let mut tape = Tape::<f32>::new();
        let b = bind_frozen(&model.params, &mut tape);
        let out = forward(&mut tape, &b, &model.config, &ForwardInput::new(&u.tokens).with_durations(&u.durations))?;
        let pred = tape.value(out.mel);
        mel_sum += pred.data.iter().zip(&u.mel).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>();
        mel_n += u.mel.len();
        let ld = tape.value(out.log_durations);
        dur_sum += ld
            .data
            .iter()
            .zip(u.durations.log_targets())
            .map(|(a, b)| (*a as f64 - b).powi(2))
            .sum::<f64>();
        dur_n += u.durations.len();
    }
    Ok(EvalLosses {
        mel_mse: mel_sum / mel_n.max(1) as f64,
        duration_mse: dur_sum / dur_n.max(1) as f64,
    })
}

/// Owns a model and its optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: AcousticModel,
    pub frontend: Frontend,
    pub config: TrainConfig,
    adam: Adam,
    step: u64,
    order: Vec<usize>,
    cursor: usize,
    batch_rng: ChaCha8Rng,
    dropout_root: u64,
}

impl Trainer {
    /// Fresh model for joint training; initialised from the `init` sub-seed.
    pub fn joint(model_config: ModelConfig, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model_config = ModelConfig {
            fusion_stage: config.fusion_stage,
            ..model_config
        };
        let model = AcousticModel::new(model_config, sub_seed(config.seed, "init"))?;
        Ok(Self::with_model(model, Frontend::default(), TrainConfig {
            mode: TrainMode::Joint,
            ..config
        }))
    }

    /// Adaptation on top of `base`: the phoneme encoder and duration adaptor
    /// are frozen, every other group trains.
    pub fn lora(base: &Checkpoint, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut model = base.model.clone();
        model.config.fusion_stage = config.fusion_stage;
        for g in GROUPS {
            model.params.set_trainable(&NameSelector::group(g), !LORA_FROZEN.contains(&g));
        }
        Ok(Self::with_model(model, base.frontend.clone(), TrainConfig {
            mode: TrainMode::Lora,
            ..config
        }))
    }

    fn with_model(model: AcousticModel, frontend: Frontend, config: TrainConfig) -> Self {
        let n = model.params.len();
        Self {
            batch_rng: ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "batches")),
            dropout_root: sub_seed(config.seed, "dropout"),
            model,
            frontend,
            config,
            adam: Adam::new(n),
            step: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.model.clone(), self.frontend.clone(), self.step, self.config.mode)
    }

    /// Next batch: the whole set when it fits, otherwise consecutive slices
    /// of a per-epoch shuffle.
    pub fn next_batch<'d>(&mut self, data: &'d [Utterance]) -> Vec<&'d Utterance> {
        if self.config.batch_size >= data.len() {
            return data.iter().collect();
        }
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor == self.order.len() || self.order.len() != data.len() {
                self.order = (0..data.len()).collect();
                self.order.shuffle(&mut self.batch_rng);
                self.cursor = 0;
            }
            batch.push(&data[self.order[self.cursor]]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer update on a padded, masked batch.
    pub fn train_step(&mut self, batch: &[&Utterance]) -> Result<StepReport, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::DatasetEmpty);
        }
        let cfg = self.model.config.clone();
        for u in batch {
            if u.n_mels != cfg.n_mels {
                return Err(TrainError::InvalidUtterance {
                    id: u.id.clone(),
                    reason: format!("{} mel bands, model expects {}", u.n_mels, cfg.n_mels),
                });
            }
        }
        let step = self.step + 1;
        let lr = lr_at(step, cfg.d_model, self.config.warmup_steps);
        let t_max = batch.iter().map(|u| u.tokens.len()).max().unwrap_or(0);
        let f_max = batch.iter().map(|u| u.n_frames()).max().unwrap_or(0);
        let mel_count: usize = batch.iter().map(|u| u.mel.len()).sum();
        let tok_count: usize = batch.iter().map(|u| u.tokens.len()).sum();

        let mut tape = Tape::<f32>::training(sub_seed(self.dropout_root, &step.to_string()));
        let binding = self.model.params.bind(&mut tape);
        let mut mel_terms: Vec<Var> = Vec::new();
        let mut dur_terms: Vec<Var> = Vec::new();
        for u in batch {
            let input = ForwardInput::new(&u.tokens).with_durations(&u.durations).padded(t_max, f_max);
            let out = forward(&mut tape, &binding, &cfg, &input)?;

            let mut target = u.mel.clone();
            target.resize(f_max * cfg.n_mels, 0.0);
            let target = tape.constant(Dense::new(vec![f_max, cfg.n_mels], target)?);
            let mse = tape.mse(out.mel, target, Some(&out.frame_mask))?;
            mel_terms.push(tape.scale(mse, u.mel.len() as f64 / mel_count.max(1) as f64)?);

            let mut log_d = u.durations.log_targets();
            log_d.resize(t_max, 0.0);
            let target = tape.constant(Dense::from_f64(&[t_max, 1], &log_d));
            let mse = tape.mse(out.log_durations, target, Some(&out.token_mask))?;
            dur_terms.push(tape.scale(mse, u.tokens.len() as f64 / tok_count.max(1) as f64)?);
        }
        let mel_loss = sum_all(&mut tape, &mel_terms)?;
        let dur_loss = sum_all(&mut tape, &dur_terms)?;
        let (mel_v, dur_v) = (tape.value(mel_loss).data[0] as f64, tape.value(dur_loss).data[0] as f64);
        if !(mel_v.is_finite() && dur_v.is_finite()) {
            return Err(TrainError::NonFiniteLoss {
                step,
                mel_loss: mel_v,
                duration_loss: dur_v,
                lr,
                batch: batch.iter().map(|u| u.id.clone()).collect(),
            });
        }
        let weighted_mel = tape.scale(mel_loss, self.config.mel_loss_weight)?;
        let weighted_dur = tape.scale(dur_loss, self.config.duration_loss_weight)?;
        let loss = tape.add(weighted_mel, weighted_dur)?;
        let vars = binding.vars().to_vec();
        let grads = tape.backward(loss)?;

        self.model.params.zero_grad();
        self.model.params.accumulate(&vars, &grads);
        let grad_norm = clip_grad_norm(&mut self.model.params, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                mel_loss: mel_v,
                duration_loss: dur_v,
                lr,
                batch: batch.iter().map(|u| u.id.clone()).collect(),
            });
        }
        self.adam.step(&mut self.model.params, lr);
        self.model.params.zero_grad();
        self.step = step;
        Ok(StepReport {
            step,
            mel_loss: mel_v,
            duration_loss: dur_v,
            lr,
            grad_norm,
        })
    }

    /// Runs the configured number of steps and returns the final checkpoint.
    pub fn run(&mut self, data: &[Utterance], observer: &mut dyn TrainObserver) -> Result<Checkpoint, TrainError> {
        if data.is_empty() {
            return Err(TrainError::DatasetEmpty);
        }
        let target = self.step + self.config.steps as u64;
        while self.step < target {
            let batch = self.next_batch(data);
            let report = self.train_step(&batch)?;
            observer.on_step(&report)?;
            let every = self.config.checkpoint_every as u64;
            if every > 0 && report.step % every == 0 && report.step < target {
                observer.on_checkpoint(&self.checkpoint())?;
            }
        }
        let last = self.checkpoint();
        observer.on_checkpoint(&last)?;
        Ok(last)
    }
}

fn sum_all(tape: &mut Tape<f32>, terms: &[Var]) -> Result<Var, TensorError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

pub fn train(
    data: &[Utterance],
    model_config: ModelConfig,
    config: TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint, TrainError> {
    if data.is_empty() {
        return Err(TrainError::DatasetEmpty);
    }
    Trainer::joint(model_config, config)?.run(data, observer)
}

pub fn lora_adapt(
    base: &Checkpoint,
    data: &[Utterance],
    config: TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Checkpoint, TrainError> {
    if data.is_empty() {
        return Err(TrainError::DatasetEmpty);
    }
    Trainer::lora(base, config)?.run(data, observer)
}
