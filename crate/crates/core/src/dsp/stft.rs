use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::DspError;

/// Frame size and hop of a Hann-windowed, reflect-centred STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { n_fft: 1024, hop: 512 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() || self.hop == 0 || self.hop > self.n_fft {
            return Err(DspError::BadFrameParams {
                n_fft: self.n_fft,
                hop: self.hop,
            });
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        (0..self.n_fft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.n_fft as f64).cos())
            .collect()
    }
}

/// One-sided complex spectrogram, `frames x (n_fft / 2 + 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Vec<Complex64>,
    pub n_frames: usize,
    pub config: StftConfig,
    /// Length of the analysed signal, used as the default inverse length.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn frame(&self, f: usize) -> &[Complex64] {
        let b = self.bins();
        &self.data[f * b..(f + 1) * b]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Index into a signal of `len` samples after reflecting `i` (numpy
/// `reflect` semantics, applied repeatedly for long pads).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Weight of one-sided bin `k` in the two-sided spectrum norm.
pub fn bin_weight(k: usize, n_fft: usize) -> f64 {
    if k == 0 || k == n_fft / 2 {
        1.0
    } else {
        2.0
    }
}

pub fn stft(signal: &[f64], config: StftConfig) -> Result<ComplexSpectrogram, DspError> {
    config.validate()?;
    let n = config.n_fft;
    let pad = (n / 2) as isize;
    let frames = config.frames_for(signal.len());
    let bins = config.bins();
    let window = config.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::default(); n];
    let mut data = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = (f * config.hop) as isize - pad;
        for (i, b) in buf.iter_mut().enumerate() {
            let x = if signal.is_empty() {
                0.0
            } else {
                signal[reflect(start + i as isize, signal.len())]
            };
            *b = Complex64::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        data,
        n_frames: frames,
        config,
        signal_len: signal.len(),
    })
}

/// Least-squares inverse of [`stft`]: windowed overlap-add divided by the
/// summed squared window, with reflected padding folded back onto the
/// samples it was copied from. `len` defaults to the analysed length.
pub fn istft(spec: &ComplexSpectrogram, len: Option<usize>) -> Result<Vec<f64>, DspError> {
    let config = spec.config;
    config.validate()?;
    let n = config.n_fft;
    let bins = config.bins();
    if spec.data.len() != spec.n_frames * bins {
        return Err(DspError::BadFrameParams {
            n_fft: n,
            hop: config.hop,
        });
    }
    let len = len.unwrap_or(spec.signal_len);
    if len == 0 {
        return Ok(Vec::new());
    }
    let pad = (n / 2) as isize;
    let window = config.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut num = vec![0.0f64; len];
    let mut den = vec![0.0f64; len];
    let mut buf = vec![Complex64::default(); n];
    for f in 0..spec.n_frames {
        let frame = spec.frame(f);
        buf[..bins].copy_from_slice(frame);
        // the inverse of a real signal ignores imaginary parts at DC/Nyquist
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = (f * config.hop) as isize - pad;
        for (i, b) in buf.iter().enumerate() {
            let j = reflect(start + i as isize, len);
            num[j] += b.re / n as f64 * window[i];
            den[j] += window[i] * window[i];
        }
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(&a, &d)| if d > 1e-12 { a / d } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn reflect_matches_numpy() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(stft(&[0.0; 10], StftConfig { n_fft: 1000, hop: 100 }).is_err());
        assert!(stft(&[0.0; 10], StftConfig { n_fft: 1024, hop: 0 }).is_err());
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let s = stft(&[0.0; 3000], StftConfig::default()).unwrap();
        assert!(s.magnitude().iter().all(|&m| m == 0.0));
        assert_eq!(s.n_frames, 1 + 3000 / 512);
    }

    #[test]
    fn round_trip_reconstructs_signal() {
        let cfg = StftConfig::default();
        let x = noise(16000, 1);
        let back = istft(&stft(&x, cfg).unwrap(), None).unwrap();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        for len in [1, 2, 5, 300, 513, 1500] {
            let x = noise(len, len as u64);
            let back = istft(&stft(&x, cfg).unwrap(), None).unwrap();
            let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "len {len}: {err}");
        }
    }

    #[test]
    fn sinusoid_energy_concentrates_near_its_bin() {
        let cfg = StftConfig::default();
        let sr = 16000.0;
        let freq = 16.0 * sr / cfg.n_fft as f64;
        let x: Vec<f64> = (0..16000).map(|i| (2.0 * PI * freq * i as f64 / sr).sin()).collect();
        let s = stft(&x, cfg).unwrap();
        for f in 2..s.n_frames - 2 {
            let p: Vec<f64> = s.frame(f).iter().map(|c| c.norm_sqr()).collect();
            let total: f64 = p.iter().sum();
            let near: f64 = p[15..=17].iter().sum();
            assert!(near / total >= 0.9, "frame {f}: {}", near / total);
        }
    }

    #[test]
    fn parseval_tracks_signal_power() {
        let cfg = StftConfig::default();
        let x = noise(160_000, 9);
        let s = stft(&x, cfg).unwrap();
        let spec_power: f64 = (0..s.n_frames)
            .flat_map(|f| s.frame(f).iter().enumerate().map(|(k, c)| bin_weight(k, cfg.n_fft) * c.norm_sqr()))
            .sum();
        let n = cfg.n_fft as f64;
        let overlap = n * (3.0 * n / 8.0) / cfg.hop as f64;
        let signal_power: f64 = x.iter().map(|v| v * v).sum();
        let ratio = spec_power / (overlap * signal_power);
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }
}
