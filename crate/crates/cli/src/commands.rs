use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use tonal_tts::dsp::{griffin_lim, load_wav, mel_to_linear, save_wav, wav_to_logmel, AudioBuffer, MelMeta, MelSpectrogram, LOG_OFFSET};
use tonal_tts::eval::{format_metric_report, format_ratings, ingest_pesq, llm_mos, mcd, parse_metric_report, wer_levels, Alignment, MetricReport, MosRating};
use tonal_tts::model::{DurationSequence, StyleInput};
use tonal_tts::pinyin::Frontend;
use tonal_tts::seed::sub_seed;
use tonal_tts::trainer::{lora_adapt, train, Checkpoint, StepReport, TrainError, TrainMode, TrainObserver};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{load_manifest, load_transcripts, Split};
use crate::store::{self, IndexRow};

/// What `prepare` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub utterances: usize,
    pub train: usize,
    pub test: usize,
    pub total_frames: usize,
}

impl PrepareSummary {
    fn render(&self) -> String {
        format!(
            "utterances\t{}\ntrain\t{}\ntest\t{}\ntotal_frames\t{}\n",
            self.utterances, self.train, self.test, self.total_frames
        )
    }
}

struct Prepared {
    row: IndexRow,
    mel: MelSpectrogram,
    tokens: String,
    durations: String,
}

/// Reads a manifest, extracts log-mels and writes a feature store to `out`.
///
/// Durations come from the manifest when given (their count must match the
/// token count and their sum the frame count); otherwise frames are split
/// as evenly as possible across tokens. Every input is checked before
/// anything is written.
pub fn cmd_prepare(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<PrepareSummary> {
    let rows = load_manifest(manifest)?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: manifest has no rows", manifest.display())));
    }
    if let Some(r) = rows.iter().find(|r| !r.wav.is_file()) {
        return Err(CliError::MissingWav {
            utt_id: r.utt_id.clone(),
            path: r.wav.clone(),
        });
    }
    let frontend = Frontend::default();
    let prepared: Vec<Result<Prepared>> = rows
        .par_iter()
        .map(|r| {
            let tokens = frontend.tokens(&r.pinyin).map_err(|e| CliError::parse(&r.utt_id, e.to_string()))?;
            if tokens.is_empty() {
                return Err(CliError::parse(&r.utt_id, "sentence has no syllables"));
            }
            if let Some(d) = &r.durations {
                if d.len() != tokens.len() {
                    return Err(CliError::parse(&r.utt_id, format!("{} durations for {} tokens", d.len(), tokens.len())));
                }
            }
            let audio = load_wav(&r.wav).map_err(|e| CliError::parse(&r.utt_id, e.to_string()))?;
            if audio.sample_rate != cfg.sample_rate {
                log::warn!("{}: sample rate {} differs from configured {}", r.utt_id, audio.sample_rate, cfg.sample_rate);
            }
            let mel = wav_to_logmel(&audio, &cfg.mel).map_err(|e| CliError::parse(&r.utt_id, e.to_string()))?;
            let durations = match &r.durations {
                Some(d) => {
                    let sum: u64 = d.iter().map(|&v| v as u64).sum();
                    if sum != mel.n_frames as u64 {
                        return Err(CliError::parse(
                            &r.utt_id,
                            format!("durations sum to {sum} but the audio has {} frames", mel.n_frames),
                        ));
                    }
                    DurationSequence::new(d.clone())
                }
                None => DurationSequence::uniform(mel.n_frames, tokens.len()),
            };
            Ok(Prepared {
                row: IndexRow {
                    utt_id: r.utt_id.clone(),
                    split: r.split,
                    n_tokens: tokens.len(),
                    n_frames: mel.n_frames,
                    pinyin: r.pinyin.clone(),
                },
                tokens: store::format_tokens(&tokens),
                durations: store::format_durations(&durations),
                mel,
            })
        })
        .collect();
    let prepared: Vec<Prepared> = prepared.into_iter().collect::<Result<_>>()?;

    store::create_dir(out)?;
    prepared.par_iter().try_for_each(|p| -> Result<()> {
        let id = &p.row.utt_id;
        p.mel.save(&store::mel_path(out, id))?;
        store::write_atomic(&store::tokens_path(out, id), p.tokens.as_bytes())?;
        store::write_atomic(&store::durations_path(out, id), p.durations.as_bytes())
    })?;
    let index: Vec<IndexRow> = prepared.iter().map(|p| p.row.clone()).collect();
    store::write_atomic(&out.join("index.tsv"), store::format_index(&index).as_bytes())?;
    let mut vocab = Vec::new();
    frontend.phonemes.write_to(&mut vocab).map_err(|e| CliError::io(out, e))?;
    store::write_atomic(&out.join("phonemes.txt"), &vocab)?;
    vocab.clear();
    frontend.tones.write_to(&mut vocab).map_err(|e| CliError::io(out, e))?;
    store::write_atomic(&out.join("tones.txt"), &vocab)?;
    let summary = PrepareSummary {
        utterances: index.len(),
        train: index.iter().filter(|r| r.split == Split::Train).count(),
        test: index.iter().filter(|r| r.split == Split::Test).count(),
        total_frames: index.iter().map(|r| r.n_frames).sum(),
    };
    store::write_atomic(&out.join("summary.txt"), summary.render().as_bytes())?;
    info!("prepared {} utterances ({} frames)", summary.utterances, summary.total_frames);
    Ok(summary)
}

/// Collects loss lines and saves checkpoints as training runs.
struct RunLog<'a> {
    out: &'a Path,
    lines: String,
}

impl TrainObserver for RunLog<'_> {
    fn on_step(&mut self, r: &StepReport) -> std::result::Result<(), TrainError> {
        writeln!(self.lines, "{}\t{}\t{}\t{}", r.step, r.mel_loss, r.duration_loss, r.lr).unwrap();
        if r.step % 100 == 0 {
            info!("step {} mel {:.4} dur {:.4} lr {:.2e}", r.step, r.mel_loss, r.duration_loss, r.lr);
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, ck: &Checkpoint) -> std::result::Result<(), TrainError> {
        ck.save(&self.out.join(format!("step_{:06}.ckpt", ck.step)))?;
        store::write_atomic(&self.out.join("loss.tsv"), self.lines.as_bytes()).map_err(|e| TrainError::Io(e.to_string()))
    }
}

pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("final.ckpt")
}

/// Trains on the `train` split of a feature store. Joint mode starts from
/// scratch; LoRA mode adapts `base` and requires it.
///
/// Writes `loss.tsv` (`step  mel_loss  dur_loss  lr`, one line per step),
/// `step_NNNNNN.ckpt` at the configured cadence and at the end,
/// `final.ckpt`, and the resolved `config.json`.
pub fn cmd_train(cfg: &RunConfig, features: &Path, out: &Path, base: Option<&Path>) -> Result<PathBuf> {
    let base = match (cfg.train.mode, base) {
        (TrainMode::Lora, None) => return Err(CliError::Usage("lora mode needs --base <checkpoint>".into())),
        (TrainMode::Joint, Some(_)) => {
            return Err(CliError::Usage("--base only applies to lora mode; use finetune or --mode lora".into()))
        }
        (TrainMode::Lora, Some(p)) => Some(Checkpoint::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?),
        (TrainMode::Joint, None) => None,
    };
    if let Some(b) = &base {
        if b.model.config.n_mels != cfg.mel.n_mels {
            return Err(CliError::Usage(format!(
                "base checkpoint predicts {} mel bands, config has {}",
                b.model.config.n_mels, cfg.mel.n_mels
            )));
        }
    }
    let data = store::load_split(features, Split::Train)?;
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: no training utterances", features.display())));
    }
    store::create_dir(out)?;
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    store::write_atomic(&out.join("config.json"), json.as_bytes())?;
    let mut log = RunLog {
        out,
        lines: String::new(),
    };
    let ck = match &base {
        None => train(&data, cfg.model.clone(), cfg.train.clone(), &mut log)?,
        Some(b) => lora_adapt(b, &data, cfg.train.clone(), &mut log)?,
    };
    store::write_atomic(&out.join("loss.tsv"), log.lines.as_bytes())?;
    let path = final_checkpoint_path(out);
    ck.save(&path).map_err(|e| CliError::io(&path, e))?;
    info!("wrote {}", path.display());
    Ok(path)
}

/// LoRA adaptation of `base`; `--base` is mandatory.
pub fn cmd_finetune(cfg: &RunConfig, features: &Path, out: &Path, base: Option<&Path>) -> Result<PathBuf> {
    let base = base.ok_or_else(|| CliError::Usage("finetune needs --base <checkpoint>".into()))?;
    let mut cfg = cfg.clone();
    cfg.train.mode = TrainMode::Lora;
    cmd_train(&cfg, features, out, Some(base))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub utt_id: String,
    pub mel: PathBuf,
    pub wav: PathBuf,
    pub n_frames: usize,
}

/// Ids for ad-hoc sentences given on the command line.
pub fn numbered(sentences: &[String]) -> Vec<(String, String)> {
    sentences.iter().enumerate().map(|(i, s)| (format!("utt{i:03}"), s.clone())).collect()
}

/// Text to waveform: G2P, acoustic model with predicted durations, mel
/// file, mel inversion and Griffin-Lim. Also writes `<id>.tokens`.
pub fn cmd_synth(cfg: &RunConfig, checkpoint: &Path, sentences: &[(String, String)], out: &Path) -> Result<Vec<SynthOutput>> {
    if sentences.is_empty() {
        return Err(CliError::Usage("nothing to synthesize".into()));
    }
    let ck = Checkpoint::load(checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    if ck.model.config.n_mels != cfg.mel.n_mels {
        return Err(CliError::Usage(format!(
            "checkpoint predicts {} mel bands, config has {}",
            ck.model.config.n_mels, cfg.mel.n_mels
        )));
    }
    let meta = MelMeta {
        sample_rate: cfg.sample_rate,
        n_fft: cfg.mel.n_fft,
        hop: cfg.mel.hop,
        n_mels: cfg.mel.n_mels,
        fmin: cfg.mel.fmin,
        fmax: cfg.mel.fmax.unwrap_or(cfg.sample_rate as f64 / 2.0),
        log_offset: LOG_OFFSET,
    };
    let tokens = sentences
        .iter()
        .map(|(id, s)| {
            let t = ck.frontend.tokens(s).map_err(|e| CliError::parse(id, format!("`{s}`: {e}")))?;
            if t.is_empty() {
                return Err(CliError::parse(id, "sentence has no syllables"));
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    store::create_dir(out)?;
    let gl_seed = sub_seed(cfg.seed, "griffin_lim");
    let results: Vec<Result<SynthOutput>> = sentences
        .par_iter()
        .zip(tokens.par_iter())
        .map(|((id, s), t)| {
            let what = format!("{id} (`{s}`)");
            let inf = ck.model.infer(t, None, StyleInput::Active).map_err(|e| CliError::from(e).context(&what))?;
            if inf.n_frames == 0 {
                return Err(CliError::Numeric(format!("{what}: every predicted duration is zero")));
            }
            if inf.mel.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Numeric(format!("{what}: non-finite mel prediction")));
            }
            let mel = MelSpectrogram {
                data: inf.mel,
                n_frames: inf.n_frames,
                meta,
            };
            let mel_file = store::mel_path(out, id);
            mel.save(&mel_file)?;
            store::write_atomic(&store::tokens_path(out, id), store::format_tokens(t).as_bytes())?;
            let mag = mel_to_linear(&mel).map_err(|e| CliError::from(e).context(&what))?;
            let len = (inf.n_frames - 1) * cfg.mel.hop;
            let gl = griffin_lim(&mag, cfg.mel.stft(), cfg.vocoder.iterations, gl_seed, len)
                .map_err(|e| CliError::from(e).context(&what))?;
            if gl.audio.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Numeric(format!("{what}: non-finite waveform")));
            }
            let peak = gl.audio.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 1.0 {
                log::warn!("{what}: waveform peaks at {peak:.2} and will clip");
            }
            let audio = AudioBuffer::new(gl.audio.iter().map(|&v| v as f32).collect(), cfg.sample_rate)?;
            let wav = out.join(format!("{id}.wav"));
            save_wav(&wav, &audio)?;
            Ok(SynthOutput {
                utt_id: id.clone(),
                mel: mel_file,
                wav,
                n_frames: inf.n_frames,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Inputs for [`cmd_eval`].
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub reference: &'a Path,
    pub hypothesis: &'a Path,
    pub synth_mels: &'a Path,
    pub ref_mels: &'a Path,
    pub pesq: Option<&'a Path>,
    pub system_id: &'a str,
    pub alignment: Alignment,
}

/// Scores every utterance of the reference transcript file and writes the
/// per-utterance and per-system report to `out`.
pub fn cmd_eval(inputs: &EvalInputs, out: &Path) -> Result<Vec<MetricReport>> {
    let refs = load_transcripts(inputs.reference)?;
    let hyps = load_transcripts(inputs.hypothesis)?;
    if refs.is_empty() {
        return Err(CliError::Data(format!("{}: no reference transcripts", inputs.reference.display())));
    }
    let pesq: Option<BTreeMap<String, f64>> = inputs.pesq.map(ingest_pesq).transpose()?;
    let mut missing = Vec::new();
    for id in refs.keys() {
        if !hyps.contains_key(id) {
            missing.push(format!("{id} (hypothesis transcript)"));
        }
        for (dir, what) in [(inputs.synth_mels, "synthesized mel"), (inputs.ref_mels, "reference mel")] {
            if !store::mel_path(dir, id).is_file() {
                missing.push(format!("{id} ({what})"));
            }
        }
        if let Some(p) = &pesq {
            if !p.contains_key(id) {
                missing.push(format!("{id} (pesq score)"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::JoinFailure { missing });
    }
    let ids: Vec<&String> = refs.keys().collect();
    let reports: Vec<Result<MetricReport>> = ids
        .par_iter()
        .map(|id| {
            let levels = wer_levels(&refs[*id], &hyps[*id]).map_err(|e| CliError::parse(id.as_str(), e.to_string()))?;
            let a = MelSpectrogram::load(&store::mel_path(inputs.synth_mels, id))?;
            let b = MelSpectrogram::load(&store::mel_path(inputs.ref_mels, id))?;
            let d = mcd(&a, &b, inputs.alignment).map_err(|e| CliError::parse(id.as_str(), e.to_string()))?;
            Ok(MetricReport {
                utt_id: (*id).clone(),
                system_id: inputs.system_id.to_string(),
                wer: levels.wer,
                wer_p: levels.wer_p,
                wer_t: levels.wer_t,
                mcd: d,
                pesq: pesq.as_ref().map(|p| p[*id]),
            })
        })
        .collect();
    let reports: Vec<MetricReport> = reports.into_iter().collect::<Result<_>>()?;
    store::write_atomic(out, format_metric_report(&reports).as_bytes())?;
    Ok(reports)
}

/// Pools metric reports from any number of systems and rates each
/// utterance 1..5 per metric against the pool's percentiles.
pub fn cmd_rate(reports: &[PathBuf], out: &Path) -> Result<Vec<MosRating>> {
    if reports.is_empty() {
        return Err(CliError::Usage("rate needs at least one report".into()));
    }
    let mut pool = Vec::new();
    for p in reports {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        pool.extend(parse_metric_report(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?);
    }
    let ratings = llm_mos(&pool)?;
    store::write_atomic(out, format_ratings(&ratings).as_bytes())?;
    Ok(ratings)
}
