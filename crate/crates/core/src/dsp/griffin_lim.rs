use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::stft::{bin_weight, istft, stft, ComplexSpectrogram, StftConfig};
use super::{DspError, Magnitude};

pub const DEFAULT_ITERATIONS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct GriffinLim {
    pub audio: Vec<f64>,
    /// `|| |STFT(x_i)| - M ||` after each iteration.
    pub distances: Vec<f64>,
}

fn distance(spec: &ComplexSpectrogram, mag: &Magnitude) -> f64 {
    let n_fft = spec.config.n_fft;
    spec.data
        .iter()
        .zip(&mag.data)
        .enumerate()
        .map(|(i, (c, m))| bin_weight(i % mag.bins, n_fft) * (c.norm() - m).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Gain `g >= 0` minimising `|| g |S| - M ||`.
fn best_gain(spec: &ComplexSpectrogram, mag: &Magnitude) -> f64 {
    let n_fft = spec.config.n_fft;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (c, m)) in spec.data.iter().zip(&mag.data).enumerate() {
        let w = bin_weight(i % mag.bins, n_fft);
        num += w * c.norm() * m;
        den += w * c.norm_sqr();
    }
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// Magnitude projection: keep the phase of `est`, impose `mag`.
fn impose(est: &ComplexSpectrogram, mag: &Magnitude) -> ComplexSpectrogram {
    let data = est
        .data
        .iter()
        .zip(&mag.data)
        .map(|(e, &m)| {
            let n = e.norm();
            if n > 0.0 {
                e * (m / n)
            } else {
                Complex64::new(m, 0.0)
            }
        })
        .collect();
    ComplexSpectrogram { data, ..est.clone() }
}

/// Accelerated alternating projections from a seeded random phase.
///
/// Each iteration takes the classic projection step `y = istft(M e^{i phase(stft(x))})`
/// and tries the extrapolated point `y + momentum (y - y_prev)`. The
/// extrapolation is kept only if it does not increase the spectral
/// distance; otherwise the plain step is used, which never does. `len` is
/// the output length; frames must equal `1 + len / hop`.
pub fn griffin_lim(
    mag: &Magnitude,
    config: StftConfig,
    iterations: usize,
    seed: u64,
    len: usize,
) -> Result<GriffinLim, DspError> {
    config.validate()?;
    if mag.bins != config.bins() || mag.data.len() != mag.n_frames * mag.bins || config.frames_for(len) != mag.n_frames {
        return Err(DspError::MetadataMismatch(format!(
            "{} frames x {} bins does not fit n_fft={} hop={} len={len}",
            mag.n_frames, mag.bins, config.n_fft, config.hop
        )));
    }
    if let Some(i) = mag.data.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(DspError::NegativeMagnitude(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ComplexSpectrogram {
        data: mag
            .data
            .iter()
            .map(|&m| Complex64::from_polar(m, rng.random_range(0.0..2.0 * PI)))
            .collect(),
        n_frames: mag.n_frames,
        config,
        signal_len: len,
    };
    let mut x = istft(&init, Some(len))?;
    let mut spec = stft(&x, config)?;
    let mut dist = distance(&spec, mag);
    let mut prev: Option<Vec<f64>> = None;
    let mut distances = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let y = istft(&impose(&spec, mag), Some(len))?;
        let mut accepted = false;
        if let Some(p) = &prev {
            let mut z: Vec<f64> = y.iter().zip(p).map(|(a, b)| a + DEFAULT_MOMENTUM * (a - b)).collect();
            let mut zs = stft(&z, config)?;
            let g = best_gain(&zs, mag);
            z.iter_mut().for_each(|v| *v *= g);
            zs.data.iter_mut().for_each(|c| *c *= g);
            let zd = distance(&zs, mag);
            if zd <= dist {
                (x, spec, dist, accepted) = (z, zs, zd, true);
            }
        }
        if !accepted {
            spec = stft(&y, config)?;
            dist = distance(&spec, mag);
            x = y.clone();
        }
        prev = Some(y);
        distances.push(dist);
    }
    Ok(GriffinLim { audio: x, distances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn magnitude_of(x: &[f64], cfg: StftConfig) -> Magnitude {
        let s = stft(x, cfg).unwrap();
        Magnitude {
            data: s.magnitude(),
            n_frames: s.n_frames,
            bins: cfg.bins(),
        }
    }

    #[test]
    fn distance_never_increases() {
        let cfg = StftConfig { n_fft: 256, hop: 64 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let len = rng.random_range(200..2000);
            let frames = cfg.frames_for(len);
            let mag = Magnitude {
                data: (0..frames * cfg.bins()).map(|_| rng.random_range(0.0..1.0)).collect(),
                n_frames: frames,
                bins: cfg.bins(),
            };
            let out = griffin_lim(&mag, cfg, DEFAULT_ITERATIONS, trial, len).unwrap();
            for w in out.distances.windows(2) {
                assert!(w[1] <= w[0] + 1e-6, "trial {trial}: {} > {}", w[1], w[0]);
            }
        }
    }

    fn tone_error(seed: u64) -> f64 {
        let cfg = StftConfig::default();
        let sr = 48000.0;
        let x: Vec<f64> = (0..48000).map(|i| 0.5 * (2.0 * PI * 440.0 * i as f64 / sr).sin()).collect();
        let mag = magnitude_of(&x, cfg);
        let out = griffin_lim(&mag, cfg, DEFAULT_ITERATIONS, seed, x.len()).unwrap();
        let rec = magnitude_of(&out.audio, cfg);
        let err: f64 = rec.data.iter().zip(&mag.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = mag.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        err / norm
    }

    #[test]
    fn reconstructs_a_tone() {
        let seed = crate::seed::sub_seed(crate::seed::DEFAULT_ROOT_SEED, "griffin_lim");
        let e = tone_error(seed);
        assert!(e < 0.05, "relative magnitude error {e}");
    }

    #[test]
    fn seeded_and_validated() {
        let cfg = StftConfig { n_fft: 64, hop: 16 };
        let mag = Magnitude {
            data: vec![0.5; cfg.frames_for(100) * cfg.bins()],
            n_frames: cfg.frames_for(100),
            bins: cfg.bins(),
        };
        let a = griffin_lim(&mag, cfg, 5, 7, 100).unwrap();
        assert_eq!(a, griffin_lim(&mag, cfg, 5, 7, 100).unwrap());
        let mut bad = mag.clone();
        bad.data[3] = -1.0;
        assert_eq!(griffin_lim(&bad, cfg, 5, 7, 100), Err(DspError::NegativeMagnitude(3)));
        assert!(griffin_lim(&mag, cfg, 5, 7, 10).is_err());
        let zero = Magnitude { data: vec![0.0; mag.data.len()], ..mag };
        assert!(griffin_lim(&zero, cfg, 3, 1, 100).unwrap().audio.iter().all(|&v| v == 0.0));
    }
}
