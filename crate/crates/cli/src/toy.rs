//! Deterministic synthetic corpus: each token becomes a harmonic tone whose
//! spectral envelope depends on the phoneme and whose pitch contour follows
//! the tone. Useful for smoke tests and overfitting runs without real data.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tonal_tts::dsp::{save_wav, AudioBuffer};
use tonal_tts::pinyin::{g2p, PinyinError, INITIAL_TONE};

pub const TOY_SENTENCES: [&str; 3] = ["ni3 hao3", "chong2 qing4 ma5", "zhong1 guo2 ren2"];

/// Frames per token: initials are short, finals carry the tone.
pub fn toy_durations(sentence: &str) -> Result<Vec<u32>, PinyinError> {
    let seq = g2p(sentence)?;
    Ok(seq
        .tones
        .iter()
        .enumerate()
        .map(|(i, &t)| match t {
            INITIAL_TONE => 3,
            3 => 9,
            _ => 7 + (i % 2) as u32,
        })
        .collect())
}

fn pitch(tone: u8, u: f64) -> f64 {
    match tone {
        1 => 240.0,
        2 => 170.0 + 90.0 * u,
        3 => 190.0 - 70.0 * (PI * u).sin(),
        4 => 290.0 - 130.0 * u,
        5 => 200.0,
        _ => 220.0,
    }
}

fn formants(phoneme: &str) -> (f64, f64) {
    let h = phoneme.bytes().fold(7u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
    (350.0 + (h % 13) as f64 * 60.0, 1100.0 + (h / 13 % 17) as f64 * 110.0)
}

/// Renders `sentence` with the given per-token frame counts; the signal has
/// `(sum(durations) - 1) * hop` samples so that a centred STFT with this hop
/// yields exactly `sum(durations)` frames. Peak amplitude is 0.8.
pub fn synthesize(sentence: &str, durations: &[u32], sample_rate: u32, hop: usize) -> Result<Vec<f32>, PinyinError> {
    let seq = g2p(sentence)?;
    assert_eq!(seq.phonemes.len(), durations.len(), "one duration per token");
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let len = total.saturating_sub(1) * hop;
    let sr = sample_rate as f64;
    let starts: Vec<usize> = durations
        .iter()
        .scan(0usize, |acc, &d| {
            let s = *acc;
            *acc += d as usize;
            Some(s)
        })
        .collect();
    const HARMONICS: usize = 24;
    let mut phase = [0.0f64; HARMONICS];
    let mut amps = [0.0f64; HARMONICS];
    // ~3 ms smoothing of harmonic amplitudes avoids clicks at boundaries
    let alpha = 1.0 - (-1.0 / (0.003 * sr)).exp();
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let frame = ((n as f64 / hop as f64).round() as usize).min(total - 1);
        let k = starts.iter().rposition(|&s| s <= frame).unwrap_or(0);
        let span = (durations[k] as f64 * hop as f64).max(1.0);
        let u = ((n as f64 - (starts[k] as f64 - 0.5) * hop as f64) / span).clamp(0.0, 1.0);
        let f0 = pitch(seq.tones[k], u);
        let (f1, f2) = formants(seq.phonemes[k]);
        let gain = if seq.tones[k] == INITIAL_TONE { 0.5 } else { 1.0 };
        let mut x = 0.0;
        for h in 0..HARMONICS {
            let f = f0 * (h + 1) as f64;
            let target = if f < 0.45 * sr {
                gain * ((-((f - f1) / 400.0).powi(2)).exp() + 0.6 * (-((f - f2) / 600.0).powi(2)).exp() + 0.05)
            } else {
                0.0
            };
            amps[h] += alpha * (target - amps[h]);
            phase[h] = (phase[h] + 2.0 * PI * f / sr) % (2.0 * PI);
            x += amps[h] * phase[h].sin();
        }
        out.push(x);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.8 / peak } else { 0.0 };
    Ok(out.into_iter().map(|v| (v * scale) as f32).collect())
}

/// Writes one wav per sentence and a manifest with explicit durations;
/// returns the manifest path.
pub fn write_corpus(dir: &Path, sentences: &[&str], sample_rate: u32, hop: usize) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, s) in sentences.iter().enumerate() {
        let id = format!("toy{i:03}");
        let d = toy_durations(s).map_err(std::io::Error::other)?;
        let samples = synthesize(s, &d, sample_rate, hop).map_err(std::io::Error::other)?;
        let audio = AudioBuffer::new(samples, sample_rate).map_err(std::io::Error::other)?;
        save_wav(&dir.join(format!("{id}.wav")), &audio).map_err(std::io::Error::other)?;
        let d: Vec<String> = d.iter().map(u32::to_string).collect();
        writeln!(manifest, "{id}\t{s}\t{id}.wav\t{}", d.join(",")).unwrap();
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest)?;
    Ok(path)
}
