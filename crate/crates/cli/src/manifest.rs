//! Dataset manifests and transcript files.
//!
//! Manifest rows: `utt_id<TAB>pinyin<TAB>wav_path[<TAB>durations[<TAB>split]]`,
//! where durations are comma-separated frame counts (may be empty) and split
//! is `train` (default) or `test`. Relative wav paths resolve against the
//! manifest's directory. Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, PartialOrd, Ord)]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub utt_id: String,
    pub pinyin: String,
    pub wav: PathBuf,
    pub durations: Option<Vec<u32>>,
    pub split: Split,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let err = |utt: Option<&str>, reason: String| CliError::Parse {
            line: Some(i + 1),
            utt_id: utt.map(str::to_string),
            reason,
        };
        if !(3..=5).contains(&f.len()) {
            return Err(err(None, format!("expected 3 to 5 tab-separated fields, found {}", f.len())));
        }
        let id = f[0].trim();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(err(None, format!("invalid utterance id `{id}`")));
        }
        if !seen.insert(id.to_string()) {
            return Err(err(Some(id), "duplicate utterance id".into()));
        }
        let durations = match f.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(
                s.split(',')
                    .map(|d| d.trim().parse::<u32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(Some(id), format!("durations `{s}` are not nonnegative integers")))?,
            ),
        };
        let split = match f.get(4).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => Split::Train,
            Some(s) => s.parse().map_err(|e| err(Some(id), e))?,
        };
        let wav = Path::new(f[2].trim());
        rows.push(ManifestRow {
            utt_id: id.to_string(),
            pinyin: f[1].trim().to_string(),
            wav: if wav.is_absolute() { wav.to_path_buf() } else { base.join(wav) },
            durations,
            split,
        });
    }
    Ok(rows)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// `utt_id<TAB>pinyin sentence` lines.
pub fn parse_transcripts(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| CliError::Parse {
            line: Some(i + 1),
            utt_id: None,
            reason,
        };
        let (id, s) = line.split_once('\t').ok_or_else(|| err("expected `utt_id<TAB>sentence`".into()))?;
        let id = id.trim();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(err(format!("invalid utterance id `{id}`")));
        }
        if out.insert(id.to_string(), s.trim().to_string()).is_some() {
            return Err(err(format!("duplicate utterance id `{id}`")));
        }
    }
    Ok(out)
}

pub fn load_transcripts(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_transcripts(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_defaults() {
        let text = "# header\na\tni3 hao3\tx/a.wav\n\nb\tma1\t/abs/b.wav\t2,3\ttest\nc\tma1\tc.wav\t\ttest\n";
        let rows = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].wav, PathBuf::from("/data/x/a.wav"));
        assert_eq!((rows[0].durations.clone(), rows[0].split), (None, Split::Train));
        assert_eq!(rows[1].wav, PathBuf::from("/abs/b.wav"));
        assert_eq!((rows[1].durations.clone(), rows[1].split), (Some(vec![2, 3]), Split::Test));
        assert_eq!((rows[2].durations.clone(), rows[2].split), (None, Split::Test));
    }

    #[test]
    fn bad_rows_name_line_and_id() {
        let cases = [
            ("a\tni3", 1),
            ("a\tni3\ta.wav\n a\tni3\ta.wav", 2),
            ("a\tni3\ta.wav\t1,x", 1),
            ("a\tni3\ta.wav\t1\tdev", 1),
        ];
        for (text, line) in cases {
            match parse_manifest(text, Path::new(".")) {
                Err(CliError::Parse { line: Some(l), .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn transcripts() {
        let t = parse_transcripts("u1\tni3 hao3\nu2\tma1\n").unwrap();
        assert_eq!(t["u1"], "ni3 hao3");
        assert!(parse_transcripts("u1 ni3").is_err());
        assert!(parse_transcripts("u1\ta\nu1\tb").is_err());
    }
}
