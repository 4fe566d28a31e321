//! Fits the default model to the three toy utterances and reports the
//! masked log-mel MSE before and after.
//!
//! `cargo run --release -p tonal-tts-cli --example overfit -- [steps] [warmup] [fft_dropout]`

use std::time::Instant;

use tonal_tts::dsp::{wav_to_logmel, AudioBuffer, MelConfig};
use tonal_tts::model::{DurationSequence, ModelConfig};
use tonal_tts::pinyin::Frontend;
use tonal_tts::trainer::{evaluate, StepReport, TrainConfig, TrainError, TrainObserver, Trainer, Utterance};
use tonal_tts_cli::toy::{synthesize, toy_durations, TOY_SENTENCES};

struct Progress(Instant);

impl TrainObserver for Progress {
    fn on_step(&mut self, r: &StepReport) -> Result<(), TrainError> {
        if r.step % 100 == 0 {
            println!(
                "{:>5} mel {:.4} dur {:.4} lr {:.2e} |g| {:.2} {:.0}s",
                r.step,
                r.mel_loss,
                r.duration_loss,
                r.lr,
                r.grad_norm,
                self.0.elapsed().as_secs_f64()
            );
        }
        Ok(())
    }
}

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let model = ModelConfig {
        dropout_fft: arg(3, ModelConfig::default().dropout_fft),
        ..Default::default()
    };
    let train = TrainConfig {
        steps: arg(1, 2000),
        warmup_steps: arg(2, 4000),
        ..Default::default()
    };
    let mel_cfg = MelConfig::default();
    let fe = Frontend::default();
    let data: Vec<Utterance> = TOY_SENTENCES
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = toy_durations(s).unwrap();
            let x = synthesize(s, &d, 48000, mel_cfg.hop).unwrap();
            let mel = wav_to_logmel(&AudioBuffer::new(x, 48000).unwrap(), &mel_cfg).unwrap();
            Utterance::new(format!("toy{i:03}"), fe.tokens(s).unwrap(), DurationSequence::new(d), mel.data, mel_cfg.n_mels)
                .unwrap()
        })
        .collect();
    let mut tr = Trainer::joint(model, train).unwrap();
    println!("initial {:?}", evaluate(&tr.model, &data).unwrap());
    tr.run(&data, &mut Progress(Instant::now())).unwrap();
    println!("final {:?}", evaluate(&tr.model, &data).unwrap());
}
