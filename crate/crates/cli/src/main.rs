use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tonal_tts::eval::Alignment;
use tonal_tts::model::FusionStage;
use tonal_tts::trainer::TrainMode;
use tonal_tts_cli::commands::{numbered, EvalInputs};
use tonal_tts_cli::manifest::load_transcripts;
use tonal_tts_cli::{cmd_eval, cmd_finetune, cmd_prepare, cmd_rate, cmd_synth, cmd_train, CliError, Overrides, RunConfig};

/// Tone-aware Mandarin text-to-speech: data preparation, training,
/// synthesis and evaluation.
#[derive(Parser)]
#[command(name = "tonal-tts", version)]
struct Cli {
    /// JSON run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature store written by `prepare`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_stage)]
    fusion_stage: Option<FusionStage>,
    #[arg(long)]
    steps: Option<usize>,
    /// Base checkpoint to adapt.
    #[arg(long)]
    base: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mels, tokens and durations from a manifest.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (joint from scratch, or lora on top of --base).
    Train {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long)]
        mode: Option<TrainMode>,
    },
    /// LoRA adaptation of --base.
    Finetune {
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Synthesize mel and wav files from pinyin.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sentence to synthesize; repeatable.
        #[arg(long, required_unless_present = "transcript")]
        text: Vec<String>,
        /// `utt_id<TAB>pinyin` lines.
        #[arg(long, conflicts_with = "text")]
        transcript: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score synthesized utterances against references.
    Eval {
        /// Reference transcripts, `utt_id<TAB>pinyin`.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Recognized transcripts of the synthesized audio.
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        synth_mels: PathBuf,
        #[arg(long)]
        ref_mels: PathBuf,
        /// `utt_id<TAB>score` from an external PESQ tool.
        #[arg(long)]
        pesq: Option<PathBuf>,
        #[arg(long, default_value = "system")]
        system: String,
        /// Compare frames index by index instead of aligning with DTW.
        #[arg(long)]
        truncate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate pooled metric reports 1..5.
    Rate {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_stage(s: &str) -> Result<FusionStage, String> {
    let v: u8 = s.parse().map_err(|_| format!("`{s}` is not 0, 1 or 2"))?;
    FusionStage::try_from(v)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Overrides {
        seed: cli.seed,
        ..Default::default()
    };
    if let Command::Train { args, .. } | Command::Finetune { args } = &cli.command {
        overrides.fusion_stage = args.fusion_stage;
        overrides.steps = args.steps;
    }
    if let Command::Train { mode, .. } = &cli.command {
        overrides.mode = *mode;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?.resolve(&overrides)?;
    match cli.command {
        Command::Prepare { manifest, out } => {
            let s = cmd_prepare(&cfg, &manifest, &out)?;
            println!("{} utterances ({} train, {} test), {} frames", s.utterances, s.train, s.test, s.total_frames);
        }
        Command::Train { args, .. } => {
            let p = cmd_train(&cfg, &args.features, &args.out, args.base.as_deref())?;
            println!("{}", p.display());
        }
        Command::Finetune { args } => {
            let p = cmd_finetune(&cfg, &args.features, &args.out, args.base.as_deref())?;
            println!("{}", p.display());
        }
        Command::Synth {
            checkpoint,
            text,
            transcript,
            out,
        } => {
            let sentences = match transcript {
                Some(t) => load_transcripts(&t)?.into_iter().collect(),
                None => numbered(&text),
            };
            for o in cmd_synth(&cfg, &checkpoint, &sentences, &out)? {
                println!("{}\t{}\t{}", o.utt_id, o.n_frames, o.wav.display());
            }
        }
        Command::Eval {
            reference,
            hyp,
            synth_mels,
            ref_mels,
            pesq,
            system,
            truncate,
            out,
        } => {
            let inputs = EvalInputs {
                reference: &reference,
                hypothesis: &hyp,
                synth_mels: &synth_mels,
                ref_mels: &ref_mels,
                pesq: pesq.as_deref(),
                system_id: &system,
                alignment: if truncate { Alignment::Truncate } else { Alignment::Dtw },
            };
            let r = cmd_eval(&inputs, &out)?;
            println!("{} utterances scored", r.len());
        }
        Command::Rate { reports, out } => {
            let r = cmd_rate(&reports, &out)?;
            println!("{} utterances rated", r.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
