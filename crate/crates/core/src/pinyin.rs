//! Pinyin front end: syllable parsing, grapheme-to-phoneme conversion into
//! position-aligned phoneme/tone streams, and symbol tables.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

/// The 21 Mandarin initials. Digraphs come first so a linear scan gives
/// longest-match behaviour.
pub const INITIALS: [&str; 21] = [
    "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "r",
    "z", "c", "s",
];

/// The 39 finals used by the phoneme inventory. `v` spells ü. `ii` is the
/// apical vowel after z/c/s and `iii` the retroflex vowel after zh/ch/sh/r;
/// both are written `i` on the surface.
pub const FINALS: [&str; 39] = [
    "a", "o", "e", "i", "u", "v", "ai", "ei", "ao", "ou", "ia", "ie", "ua", "uo", "ve", "iao",
    "iu", "uai", "ui", "an", "en", "in", "vn", "ian", "uan", "van", "un", "ang", "eng", "ing",
    "ong", "iang", "uang", "ueng", "iong", "er", "io", "ii", "iii",
];

/// Tone symbols. `0` marks an initial; `1`-`4` are lexical tones and `5` is
/// the neutral tone.
pub const TONES: [&str; 6] = ["0", "1", "2", "3", "4", "5"];

pub const PAD: &str = "PAD";
pub const NEUTRAL_TONE: u8 = 5;
pub const INITIAL_TONE: u8 = 0;

// Zero-initial syllables spelled with y/w, mapped to their underlying final.
const ZERO_INITIAL_SPELLINGS: [(&str, &str); 24] = [
    ("yi", "i"),
    ("ya", "ia"),
    ("ye", "ie"),
    ("yao", "iao"),
    ("you", "iu"),
    ("yan", "ian"),
    ("yin", "in"),
    ("yang", "iang"),
    ("ying", "ing"),
    ("yong", "iong"),
    ("yo", "io"),
    ("yu", "v"),
    ("yue", "ve"),
    ("yuan", "van"),
    ("yun", "vn"),
    ("wu", "u"),
    ("wa", "ua"),
    ("wo", "uo"),
    ("wai", "uai"),
    ("wei", "ui"),
    ("wan", "uan"),
    ("wen", "un"),
    ("wang", "uang"),
    ("weng", "ueng"),
];

// Finals that never occur on their own without an initial in standard
// orthography; everything else in FINALS may stand bare (a, an, er, ...).
const BARE_FINALS: [&str; 12] = [
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "er",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PinyinError {
    #[error("unknown syllable `{0}`")]
    UnknownSyllable(String),
    #[error("bad tone digit `{digit}` in `{syllable}`")]
    BadToneDigit { syllable: String, digit: char },
    #[error("token {position} (`{token}`): {source}")]
    AtToken {
        position: usize,
        token: String,
        #[source]
        source: Box<PinyinError>,
    },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("id {0} out of vocabulary range")]
    IdOutOfRange(u32),
    #[error("vocabulary file: {0}")]
    Vocabulary(String),
}

/// One parsed pinyin syllable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Syllable {
    pub initial: Option<&'static str>,
    pub final_: &'static str,
    pub tone: u8,
}

impl Syllable {
    /// Renders the syllable back to standard tone-numbered pinyin.
    pub fn to_pinyin(&self) -> String {
        let body = match self.initial {
            None => surface_zero_initial(self.final_).to_string(),
            Some(ini) => {
                let fin = match (ini, self.final_) {
                    (_, "ii") | (_, "iii") => "i",
                    ("j" | "q" | "x", "v") => "u",
                    ("j" | "q" | "x", "ve") => "ue",
                    ("j" | "q" | "x", "van") => "uan",
                    ("j" | "q" | "x", "vn") => "un",
                    (_, f) => f,
                };
                format!("{ini}{fin}")
            }
        };
        format!("{body}{}", self.tone)
    }
}

impl fmt::Display for Syllable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_pinyin())
    }
}

fn surface_zero_initial(final_: &'static str) -> &'static str {
    ZERO_INITIAL_SPELLINGS
        .iter()
        .find(|(_, f)| *f == final_)
        .map(|(s, _)| *s)
        .unwrap_or(final_)
}

fn intern_final(s: &str) -> Option<&'static str> {
    FINALS.iter().copied().find(|f| *f == s)
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '，' | '。' | '！' | '？' | '、' | '；' | '：' | '“' | '”' | '‘' | '’' | '（' | '）' | '《'
                | '》' | '…' | '\u{2014}'
        )
}

/// Lowercases, rewrites ü as `v`, removes punctuation and the erhua `r`
/// suffix, and makes the tone explicit (missing or `0` becomes neutral 5).
///
/// Returns `None` when nothing but punctuation remains.
pub fn normalize_syllable(text: &str) -> Result<Option<String>, PinyinError> {
    let mut s: String = text
        .chars()
        .filter(|c| !is_punctuation(*c) || *c == ':')
        .flat_map(|c| c.to_lowercase())
        .collect();
    s = s.replace("u:", "v").replace('ü', "v").replace(':', "");
    if s.is_empty() {
        return Ok(None);
    }
    // erhua written after the tone digit: "hua1r"
    if s.len() > 2 && s.ends_with('r') && s[..s.len() - 1].ends_with(|c: char| c.is_ascii_digit()) {
        s.pop();
    }
    let (body, digit) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_digit() => (s[..i].to_string(), Some(c)),
        _ => (s.clone(), None),
    };
    if body.is_empty() || !body.chars().all(|c| c.is_ascii_lowercase()) {
        return Err(PinyinError::UnknownSyllable(text.to_string()));
    }
    let tone = match digit {
        None | Some('0') => NEUTRAL_TONE,
        Some(d @ '1'..='5') => d as u8 - b'0',
        Some(d) => {
            return Err(PinyinError::BadToneDigit {
                syllable: text.to_string(),
                digit: d,
            })
        }
    };
    let mut body = body;
    if body.len() > 2 && body.ends_with('r') {
        body.pop();
    }
    Ok(Some(format!("{body}{tone}")))
}

/// Parses one tone-numbered pinyin syllable such as `hao3`.
pub fn parse_syllable(text: &str) -> Result<Syllable, PinyinError> {
    let norm = normalize_syllable(text)?.ok_or_else(|| PinyinError::UnknownSyllable(text.into()))?;
    let (body, tone_char) = norm.split_at(norm.len() - 1);
    let tone = tone_char.as_bytes()[0] - b'0';
    let unknown = || PinyinError::UnknownSyllable(text.to_string());

    if let Some((_, fin)) = ZERO_INITIAL_SPELLINGS.iter().find(|(s, _)| *s == body) {
        return Ok(Syllable {
            initial: None,
            final_: intern_final(fin).ok_or_else(unknown)?,
            tone,
        });
    }
    if body.starts_with('y') || body.starts_with('w') {
        return Err(unknown());
    }

    let initial = INITIALS.iter().copied().find(|i| body.starts_with(i));
    let residue = &body[initial.map_or(0, str::len)..];
    let final_ = match initial {
        None => {
            if !BARE_FINALS.contains(&residue) {
                return Err(unknown());
            }
            residue.to_string()
        }
        Some(ini) => {
            if residue == "ii" || residue == "iii" {
                return Err(unknown());
            }
            match ini {
                "j" | "q" | "x" if residue.starts_with('u') => format!("v{}", &residue[1..]),
                "z" | "c" | "s" if residue == "i" => "ii".to_string(),
                "zh" | "ch" | "sh" | "r" if residue == "i" => "iii".to_string(),
                _ => residue.to_string(),
            }
        }
    };
    Ok(Syllable {
        initial,
        final_: intern_final(&final_).ok_or_else(unknown)?,
        tone,
    })
}

/// Phoneme and tone symbols for one sentence, position aligned.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhonemeSequence {
    pub syllables: Vec<Syllable>,
    pub phonemes: Vec<&'static str>,
    pub tones: Vec<u8>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn tone_symbols(&self) -> Vec<String> {
        self.tones.iter().map(|t| t.to_string()).collect()
    }

    /// Normalized syllable strings, the tokens of syllable-level WER.
    pub fn syllable_strings(&self) -> Vec<String> {
        self.syllables.iter().map(Syllable::to_pinyin).collect()
    }
}

/// Grapheme-to-phoneme conversion of a whitespace separated pinyin sentence.
///
/// Each initial contributes a `(initial, 0)` pair and each final a
/// `(final, tone)` pair.
pub fn g2p(sentence: &str) -> Result<PhonemeSequence, PinyinError> {
    let mut out = PhonemeSequence::default();
    for (position, token) in sentence.split_ascii_whitespace().enumerate() {
        let wrap = |e: PinyinError| PinyinError::AtToken {
            position,
            token: token.to_string(),
            source: Box::new(e),
        };
        if normalize_syllable(token).map_err(wrap)?.is_none() {
            continue;
        }
        let syl = parse_syllable(token).map_err(wrap)?;
        if let Some(ini) = syl.initial {
            out.phonemes.push(ini);
            out.tones.push(INITIAL_TONE);
        }
        out.phonemes.push(syl.final_);
        out.tones.push(syl.tone);
        out.syllables.push(syl);
    }
    Ok(out)
}

/// Ordered symbol list with `PAD` at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    /// Builds a table from symbols excluding `PAD`, which is inserted at 0.
    pub fn new<I, S>(symbols: I) -> Result<Self, PinyinError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD.to_string()];
        all.extend(symbols.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(symbols: Vec<String>) -> Result<Self, PinyinError> {
        if symbols.first().map(String::as_str) != Some(PAD) {
            return Err(PinyinError::Vocabulary("first symbol must be PAD".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || index.insert(s.clone(), i as u32).is_some() {
                return Err(PinyinError::Vocabulary(format!("duplicate or empty symbol `{s}`")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn phonemes() -> Self {
        Self::new(INITIALS.iter().chain(FINALS.iter()).copied()).expect("static inventory")
    }

    pub fn tones() -> Self {
        Self::new(TONES).expect("static inventory")
    }

    /// Number of entries including `PAD`.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() <= 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<u32>, PinyinError> {
        symbols
            .iter()
            .map(|s| {
                let s = s.as_ref();
                match self.id(s) {
                    Some(0) | None => Err(PinyinError::UnknownSymbol(s.to_string())),
                    Some(id) => Ok(id),
                }
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, PinyinError> {
        ids.iter()
            .map(|&id| {
                self.symbol(id)
                    .map(str::to_string)
                    .ok_or(PinyinError::IdOutOfRange(id))
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.symbols {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, PinyinError> {
        let symbols = r
            .lines()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PinyinError::Vocabulary(e.to_string()))?;
        Self::from_full_list(symbols)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)
    }

    pub fn load(path: &Path) -> Result<Self, PinyinError> {
        let f = std::fs::File::open(path).map_err(|e| PinyinError::Vocabulary(e.to_string()))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Phoneme and tone ID streams for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AcousticTokens {
    pub phonemes: Vec<u32>,
    pub tones: Vec<u32>,
}

impl AcousticTokens {
    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }
}

/// G2P plus vocabulary encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frontend {
    pub phonemes: SymbolTable,
    pub tones: SymbolTable,
}

impl Default for Frontend {
    fn default() -> Self {
        Self {
            phonemes: SymbolTable::phonemes(),
            tones: SymbolTable::tones(),
        }
    }
}

impl Frontend {
    pub fn encode(&self, seq: &PhonemeSequence) -> Result<AcousticTokens, PinyinError> {
        Ok(AcousticTokens {
            phonemes: self.phonemes.encode(&seq.phonemes)?,
            tones: self.tones.encode(&seq.tone_symbols())?,
        })
    }

    pub fn tokens(&self, sentence: &str) -> Result<AcousticTokens, PinyinError> {
        self.encode(&g2p(sentence)?)
    }

    pub fn decode(&self, tokens: &AcousticTokens) -> Result<(Vec<String>, Vec<String>), PinyinError> {
        Ok((
            self.phonemes.decode(&tokens.phonemes)?,
            self.tones.decode(&tokens.tones)?,
        ))
    }
}

/// Every standard syllable spelling the parser accepts, with tone 1.
pub fn syllable_inventory() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (s, _) in ZERO_INITIAL_SPELLINGS {
        out.push(s.to_string());
    }
    for f in BARE_FINALS {
        out.push(f.to_string());
    }
    for ini in INITIALS {
        for fin in FINALS {
            let syl = Syllable {
                initial: Some(ini),
                final_: fin,
                tone: 1,
            };
            if plausible(ini, fin) {
                let p = syl.to_pinyin();
                out.push(p[..p.len() - 1].to_string());
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

fn plausible(ini: &str, fin: &str) -> bool {
    let palatal = matches!(ini, "j" | "q" | "x");
    let sibilant = matches!(ini, "z" | "c" | "s");
    let retroflex = matches!(ini, "zh" | "ch" | "sh" | "r");
    match fin {
        "ii" => sibilant,
        "iii" => retroflex,
        "er" | "io" | "ueng" => false,
        f if f.starts_with('v') => palatal || (matches!(ini, "n" | "l") && matches!(f, "v" | "ve")),
        f if f.starts_with('i') => !sibilant && !retroflex && !matches!(ini, "f" | "g" | "k" | "h"),
        _ => !palatal,
    }
}
