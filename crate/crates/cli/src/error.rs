use std::path::PathBuf;

use tonal_tts::dsp::DspError;
use tonal_tts::eval::EvalError;
use tonal_tts::model::ModelError;
use tonal_tts::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{utt_id}: wav file {} not found", path.display())]
    MissingWav { utt_id: String, path: PathBuf },
    #[error("{}{reason}", location(.line, .utt_id))]
    Parse {
        line: Option<usize>,
        utt_id: Option<String>,
        reason: String,
    },
    #[error("inputs do not join; missing: {}", missing.join(", "))]
    JoinFailure { missing: Vec<String> },
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

fn location(line: &Option<usize>, utt: &Option<String>) -> String {
    match (line, utt) {
        (Some(l), Some(u)) => format!("line {l} ({u}): "),
        (Some(l), None) => format!("line {l}: "),
        (None, Some(u)) => format!("{u}: "),
        (None, None) => String::new(),
    }
}

impl CliError {
    /// 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 4,
            _ => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }

    pub fn parse(utt_id: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Parse {
            line: None,
            utt_id: Some(utt_id.into()),
            reason: reason.into(),
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
            other => other,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } | TrainError::Model(ModelError::NonFiniteDuration(_)) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteDuration(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DspError> for CliError {
    fn from(e: DspError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MalformedLine { line, reason } => CliError::Parse {
                line: Some(line),
                utt_id: None,
                reason,
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
