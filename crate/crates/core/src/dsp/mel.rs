use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stft::{stft, StftConfig};
use super::{AudioBuffer, DspError};

pub const LOG_OFFSET: f64 = 1e-5;
const NNLS_ITERS: usize = 50;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters, `n_mels x (n_fft / 2 + 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub bins: usize,
    /// Peak frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self, DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        let bad = |why: String| DspError::BadBandEdges { fmin, fmax, why };
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) || n_mels == 0 {
            return Err(bad(format!("need 0 <= fmin < fmax <= {nyquist}")));
        }
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * bins..(m + 1) * bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = bin_hz(k);
                *w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
            }
            if row.iter().all(|&w| w == 0.0) {
                return Err(bad(format!("filter {m} covers no FFT bin; use fewer mels or a larger n_fft")));
            }
        }
        Ok(Self {
            weights,
            n_mels,
            bins,
            centers: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// `mel[m] = sum_k W[m, k] * power[k]` for one frame.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Analysis settings for log-mel extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper band edge; `None` means Nyquist.
    pub fmax: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 512,
            n_mels: 80,
            fmin: 0.0,
            fmax: None,
        }
    }
}

impl MelConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            n_fft: self.n_fft,
            hop: self.hop,
        }
    }
}

/// Metadata carried next to every stored mel matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelMeta {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_offset: f64,
}

impl MelMeta {
    pub fn filterbank(&self) -> Result<MelFilterbank, DspError> {
        MelFilterbank::new(self.sample_rate, self.n_fft, self.n_mels, self.fmin, self.fmax)
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            n_fft: self.n_fft,
            hop: self.hop,
        }
    }
}

/// Natural-log mel power, `frames x n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f32>,
    pub n_frames: usize,
    pub meta: MelMeta,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.meta.n_mels
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let m = self.meta.n_mels;
        &self.data[f * m..(f + 1) * m]
    }

    /// Raw little-endian f32 frames, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn sidecar(&self) -> String {
        let m = &self.meta;
        format!(
            "n_frames={}\nn_mels={}\nsr={}\nn_fft={}\nhop={}\nlog_offset={}\nfmin={}\nfmax={}\n",
            self.n_frames, m.n_mels, m.sample_rate, m.n_fft, m.hop, m.log_offset, m.fmin, m.fmax
        )
    }

    /// Writes `<path>` (binary) and `<path>.txt` (sidecar), each through a
    /// temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), DspError> {
        atomic_write(path, &self.to_bytes())?;
        atomic_write(&sidecar_path(path), self.sidecar().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, DspError> {
        let side = std::fs::read_to_string(sidecar_path(path)).map_err(|e| DspError::Io(format!("{}: {e}", path.display())))?;
        let mut kv = std::collections::BTreeMap::new();
        for line in side.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DspError::MetadataMismatch(format!("bad sidecar line `{line}`")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(kv: &std::collections::BTreeMap<String, String>, k: &str) -> Result<T, DspError> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DspError::MetadataMismatch(format!("sidecar field `{k}` missing or invalid")))
        }
        let meta = MelMeta {
            sample_rate: get(&kv, "sr")?,
            n_fft: get(&kv, "n_fft")?,
            hop: get(&kv, "hop")?,
            n_mels: get(&kv, "n_mels")?,
            log_offset: get(&kv, "log_offset")?,
            fmin: kv.get("fmin").map_or(Ok(0.0), |_| get(&kv, "fmin"))?,
            fmax: match kv.get("fmax") {
                Some(_) => get(&kv, "fmax")?,
                None => get::<u32>(&kv, "sr")? as f64 / 2.0,
            },
        };
        let n_frames: usize = get(&kv, "n_frames")?;
        let bytes = std::fs::read(path).map_err(|e| DspError::Io(format!("{}: {e}", path.display())))?;
        if bytes.len() != n_frames * meta.n_mels * 4 {
            return Err(DspError::MetadataMismatch(format!(
                "{} holds {} bytes, sidecar promises {n_frames} x {} floats",
                path.display(),
                bytes.len(),
                meta.n_mels
            )));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { data, n_frames, meta })
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    s.into()
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DspError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let io = |e: std::io::Error| DspError::Io(format!("{}: {e}", path.display()));
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// `log(mel_fb . |stft|^2 + 1e-5)` per frame.
pub fn wav_to_logmel(audio: &AudioBuffer, config: &MelConfig) -> Result<MelSpectrogram, DspError> {
    let meta = MelMeta {
        sample_rate: audio.sample_rate,
        n_fft: config.n_fft,
        hop: config.hop,
        n_mels: config.n_mels,
        fmin: config.fmin,
        fmax: config.fmax.unwrap_or(audio.sample_rate as f64 / 2.0),
        log_offset: LOG_OFFSET,
    };
    let fb = meta.filterbank()?;
    let signal: Vec<f64> = audio.samples.iter().map(|&s| s as f64).collect();
    let spec = stft(&signal, config.stft())?;
    let mut data = Vec::with_capacity(spec.n_frames * config.n_mels);
    for f in 0..spec.n_frames {
        let power: Vec<f64> = spec.frame(f).iter().map(|c| c.norm_sqr()).collect();
        data.extend(fb.apply(&power).into_iter().map(|p| (p + LOG_OFFSET).ln() as f32));
    }
    Ok(MelSpectrogram {
        data,
        n_frames: spec.n_frames,
        meta,
    })
}

/// Linear magnitude spectrogram, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitude {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub bins: usize,
}

/// Undoes the log compression and solves the nonnegative least-squares
/// problem `min ||mel - W s||, s >= 0` per frame with multiplicative
/// updates; returns `sqrt(s)`.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Result<Magnitude, DspError> {
    let meta = mel.meta;
    if mel.data.len() != mel.n_frames * meta.n_mels {
        return Err(DspError::MetadataMismatch(format!(
            "{} values for {} frames of {} mels",
            mel.data.len(),
            mel.n_frames,
            meta.n_mels
        )));
    }
    let fb = meta
        .filterbank()
        .map_err(|e| DspError::MetadataMismatch(format!("no filterbank for metadata: {e}")))?;
    let bins = fb.bins;
    let col_sums: Vec<f64> = (0..bins).map(|k| (0..fb.n_mels).map(|m| fb.row(m)[k]).sum()).collect();
    let row_sums: Vec<f64> = (0..fb.n_mels).map(|m| fb.row(m).iter().sum()).collect();
    // powers within float rounding of the log floor are treated as silence
    let floor = meta.log_offset * 1e-3;

    let mut out = Vec::with_capacity(mel.n_frames * bins);
    for f in 0..mel.n_frames {
        let target: Vec<f64> = mel
            .frame(f)
            .iter()
            .map(|&v| {
                let p = (v as f64).exp() - meta.log_offset;
                if p > floor {
                    p
                } else {
                    0.0
                }
            })
            .collect();
        // Wt y, and a flat-spectrum initial guess per filter
        let wty: Vec<f64> = (0..bins).map(|k| (0..fb.n_mels).map(|m| fb.row(m)[k] * target[m]).sum()).collect();
        let mut s: Vec<f64> = (0..bins)
            .map(|k| {
                if col_sums[k] == 0.0 {
                    return 0.0;
                }
                (0..fb.n_mels).map(|m| fb.row(m)[k] * target[m] / row_sums[m]).sum::<f64>() / col_sums[k]
            })
            .collect();
        for _ in 0..NNLS_ITERS {
            let ws = fb.apply(&s);
            for k in 0..bins {
                if s[k] == 0.0 {
                    continue;
                }
                let wtws: f64 = (0..fb.n_mels).map(|m| fb.row(m)[k] * ws[m]).sum();
                s[k] = if wtws > 0.0 { s[k] * wty[k] / wtws } else { 0.0 };
            }
        }
        out.extend(s.iter().map(|&p| p.max(0.0).sqrt()));
    }
    Ok(Magnitude {
        data: out,
        n_frames: mel.n_frames,
        bins,
    })
}
