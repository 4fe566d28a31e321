//! Intelligibility, spectral distance and percentile-rating metrics.

mod mcd;
mod mos;
mod report;
mod wer;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use mcd::{dct_matrix, mcd, mcd_cepstra, mel_to_cepstra, Alignment, MCD_SCALE, N_CEPSTRA};
pub use mos::{llm_mos, nearest_rank, ExternalRatings, MosRating, PercentileRater, Rater, Thresholds};
pub use report::{
    format_metric_report, format_ratings, mean_std, parse_metric_report, SYSTEM_SECTION, METRIC_COLUMNS,
    RATING_COLUMNS, UTTERANCE_SECTION,
};
pub use wer::{edit_distance, wer, wer_levels, EditCounts, WerLevels};

use crate::pinyin::PinyinError;

/// Lowest and highest score a PESQ tool reports.
pub const PESQ_RANGE: (f64, f64) = (-0.5, 4.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Reference,
    Hypothesis,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Reference => "reference",
            Side::Hypothesis => "hypothesis",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("empty rating pool")]
    EmptyPool,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("{side} sentence: {source}")]
    G2p { side: Side, source: PinyinError },
    #[error("no external rating for {0}")]
    MissingRating(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Metrics for one synthesized utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub utt_id: String,
    pub system_id: String,
    pub wer: f64,
    pub wer_p: f64,
    pub wer_t: f64,
    /// dB.
    pub mcd: f64,
    pub pesq: Option<f64>,
}

/// Parses `utt_id<TAB>score` lines; blank lines are skipped.
pub fn parse_pesq(text: &str) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::MalformedLine { line: i + 1, reason };
        let (id, score) = line.split_once('\t').ok_or_else(|| bad("expected `utt_id<TAB>score`".into()))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(bad("empty utterance id".into()));
        }
        let v: f64 = score.trim().parse().map_err(|_| bad(format!("score `{}` is not a number", score.trim())))?;
        if !(PESQ_RANGE.0..=PESQ_RANGE.1).contains(&v) {
            return Err(bad(format!("score {v} outside [{}, {}]", PESQ_RANGE.0, PESQ_RANGE.1)));
        }
        if out.insert(id.to_string(), v).is_some() {
            return Err(bad(format!("duplicate utterance `{id}`")));
        }
    }
    Ok(out)
}

pub fn ingest_pesq(path: &Path) -> Result<BTreeMap<String, f64>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_pesq(&text)
}
