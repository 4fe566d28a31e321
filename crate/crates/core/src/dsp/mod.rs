//! Audio I/O, STFT, mel analysis and phase reconstruction.

mod griffin_lim;
mod mel;
mod stft;
mod wav;

use thiserror::Error;

pub use griffin_lim::{griffin_lim, GriffinLim, DEFAULT_ITERATIONS};
pub use mel::{
    hz_to_mel, mel_to_hz, mel_to_linear, sidecar_path, wav_to_logmel, Magnitude, MelConfig, MelFilterbank, MelMeta,
    MelSpectrogram, LOG_OFFSET,
};
pub(crate) use mel::atomic_write;
pub use stft::{bin_weight, istft, stft, ComplexSpectrogram, StftConfig};
pub use wav::{load_wav, save_wav};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid frame parameters n_fft={n_fft} hop={hop}")]
    BadFrameParams { n_fft: usize, hop: usize },
    #[error("invalid mel band edges fmin={fmin} fmax={fmax}: {why}")]
    BadBandEdges { fmin: f64, fmax: f64, why: String },
    #[error("mel metadata mismatch: {0}")]
    MetadataMismatch(String),
    #[error("magnitude must be finite and nonnegative (index {0})")]
    NegativeMagnitude(usize),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
}

/// Mono audio in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::InvalidAudio(format!("non-finite sample at {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
