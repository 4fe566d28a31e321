//! On-disk feature store written by `prepare` and read by `train`.
//!
//! Layout of a store directory:
//!
//! - `<id>.mel` / `<id>.mel.txt`: little-endian f32 log-mel and its sidecar
//! - `<id>.tokens`: phoneme IDs on line 1, tone IDs on line 2
//! - `<id>.dur`: per-token frame counts, space separated
//! - `index.tsv`: `utt_id  split  n_tokens  n_frames  pinyin`
//! - `summary.txt`: utterance counts and total frames
//! - `phonemes.txt`, `tones.txt`: vocabularies (line number = ID)

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tonal_tts::dsp::MelSpectrogram;
use tonal_tts::model::DurationSequence;
use tonal_tts::pinyin::AcousticTokens;
use tonal_tts::trainer::Utterance;

use crate::error::{CliError, Result};
use crate::manifest::Split;

/// Writes through `<path>.tmp` and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let run = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    run().map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn mel_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.mel"))
}

pub fn tokens_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.tokens"))
}

pub fn durations_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.dur"))
}

fn join(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_ids(line: &str, path: &Path) -> Result<Vec<u32>> {
    line.split_whitespace()
        .map(|t| t.parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn format_tokens(tokens: &AcousticTokens) -> String {
    format!("{}\n{}\n", join(&tokens.phonemes), join(&tokens.tones))
}

pub fn read_tokens(path: &Path) -> Result<AcousticTokens> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let phonemes = parse_ids(lines.next().unwrap_or(""), path)?;
    let tones = parse_ids(lines.next().unwrap_or(""), path)?;
    if phonemes.len() != tones.len() {
        return Err(CliError::Data(format!("{}: token streams differ in length", path.display())));
    }
    Ok(AcousticTokens { phonemes, tones })
}

pub fn format_durations(d: &DurationSequence) -> String {
    format!("{}\n", join(d.frames()))
}

pub fn read_durations(path: &Path) -> Result<DurationSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(DurationSequence::new(parse_ids(&text, path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub utt_id: String,
    pub split: Split,
    pub n_tokens: usize,
    pub n_frames: usize,
    pub pinyin: String,
}

pub fn format_index(rows: &[IndexRow]) -> String {
    let mut s = String::new();
    for r in rows {
        writeln!(s, "{}\t{}\t{}\t{}\t{}", r.utt_id, r.split, r.n_tokens, r.n_frames, r.pinyin).unwrap();
    }
    s
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join("index.tsv");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |reason: String| CliError::Parse {
                line: Some(i + 1),
                utt_id: None,
                reason: format!("{}: {reason}", path.display()),
            };
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
            Ok(IndexRow {
                utt_id: f[0].to_string(),
                split: f[1].parse().map_err(bad)?,
                n_tokens: num(f[2])?,
                n_frames: num(f[3])?,
                pinyin: f[4].to_string(),
            })
        })
        .collect()
}

/// Loads every utterance of one split as training examples.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Utterance>> {
    read_index(dir)?
        .into_iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let mel = MelSpectrogram::load(&mel_path(dir, &r.utt_id))?;
            let tokens = read_tokens(&tokens_path(dir, &r.utt_id))?;
            let durations = read_durations(&durations_path(dir, &r.utt_id))?;
            let n_mels = mel.n_mels();
            Ok(Utterance::new(r.utt_id, tokens, durations, mel.data, n_mels)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_and_duration_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = AcousticTokens {
            phonemes: vec![5, 9, 1],
            tones: vec![1, 4, 6],
        };
        let p = tokens_path(dir.path(), "u");
        write_atomic(&p, format_tokens(&t).as_bytes()).unwrap();
        assert_eq!(read_tokens(&p).unwrap(), t);
        let d = DurationSequence::new(vec![3, 0, 7]);
        let p = durations_path(dir.path(), "u");
        write_atomic(&p, format_durations(&d).as_bytes()).unwrap();
        assert_eq!(read_durations(&p).unwrap(), d);
        assert!(!p.with_extension("dur.tmp").exists());
    }

    #[test]
    fn index_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![IndexRow {
            utt_id: "a".into(),
            split: Split::Test,
            n_tokens: 4,
            n_frames: 30,
            pinyin: "ni3 hao3".into(),
        }];
        write_atomic(&dir.path().join("index.tsv"), format_index(&rows).as_bytes()).unwrap();
        assert_eq!(read_index(dir.path()).unwrap(), rows);
    }
}
