use std::f64::consts::{LN_10, PI, SQRT_2};

use super::EvalError;
use crate::dsp::MelSpectrogram;

pub const N_CEPSTRA: usize = 13;

/// `(10 / ln 10) * sqrt(2)`.
pub const MCD_SCALE: f64 = 10.0 / LN_10 * SQRT_2;

/// Orthonormal DCT-II matrix, `n x n`, row `k` holding basis `k`.
pub fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Per frame, the orthonormal DCT-II of the log-mel bands with
/// coefficients `1..=n_coeffs` kept.
pub fn mel_to_cepstra(mel: &MelSpectrogram, n_coeffs: usize) -> Vec<Vec<f64>> {
    let n = mel.n_mels();
    let basis = dct_matrix(n);
    (0..mel.n_frames)
        .map(|f| {
            let x = mel.frame(f);
            (1..=n_coeffs.min(n.saturating_sub(1)))
                .map(|k| basis[k].iter().zip(x).map(|(b, &v)| b * v as f64).sum())
                .collect()
        })
        .collect()
}

/// How two cepstral sequences are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Symmetric dynamic time warping.
    #[default]
    Dtw,
    /// Pair frames index by index, dropping the longer tail.
    Truncate,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean `K * ||c - c'||` over aligned frame pairs, `K = 10 / ln 10 * sqrt 2`.
pub fn mcd_cepstra(a: &[Vec<f64>], b: &[Vec<f64>], alignment: Alignment) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mean = match alignment {
        Alignment::Truncate => {
            let n = a.len().min(b.len());
            (0..n).map(|i| dist(&a[i], &b[i])).sum::<f64>() / n as f64
        }
        Alignment::Dtw => {
            let (n, m) = (a.len(), b.len());
            // best (total cost, path length) reaching each cell; comparing the
            // pair lexicographically keeps the result symmetric in a and b
            let mut prev = vec![(f64::INFINITY, 0usize); m];
            let mut cur = prev.clone();
            for i in 0..n {
                for j in 0..m {
                    let local = dist(&a[i], &b[j]);
                    let best = if i == 0 && j == 0 {
                        (0.0, 0)
                    } else {
                        let mut cands = Vec::with_capacity(3);
                        if i > 0 {
                            cands.push(prev[j]);
                        }
                        if j > 0 {
                            cands.push(cur[j - 1]);
                        }
                        if i > 0 && j > 0 {
                            cands.push(prev[j - 1]);
                        }
                        cands
                            .into_iter()
                            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                            .unwrap()
                    };
                    cur[j] = (best.0 + local, best.1 + 1);
                }
                std::mem::swap(&mut prev, &mut cur);
            }
            let (cost, len) = prev[m - 1];
            cost / len as f64
        }
    };
    Ok(MCD_SCALE * mean)
}

pub fn mcd(a: &MelSpectrogram, b: &MelSpectrogram, alignment: Alignment) -> Result<f64, EvalError> {
    mcd_cepstra(&mel_to_cepstra(a, N_CEPSTRA), &mel_to_cepstra(b, N_CEPSTRA), alignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{MelMeta, LOG_OFFSET};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mel(frames: Vec<Vec<f32>>) -> MelSpectrogram {
        let n_mels = frames[0].len();
        MelSpectrogram {
            n_frames: frames.len(),
            data: frames.concat(),
            meta: MelMeta {
                sample_rate: 16000,
                n_fft: 1024,
                hop: 512,
                n_mels,
                fmin: 0.0,
                fmax: 8000.0,
                log_offset: LOG_OFFSET,
            },
        }
    }

    fn random_mel(rng: &mut ChaCha8Rng, frames: usize) -> MelSpectrogram {
        mel((0..frames).map(|_| (0..80).map(|_| rng.random_range(-8.0..2.0)).collect()).collect())
    }

    #[test]
    fn constant_frame_has_no_kept_coefficients() {
        let c = mel_to_cepstra(&mel(vec![vec![-3.5; 80]; 4]), N_CEPSTRA);
        assert_eq!((c.len(), c[0].len()), (4, 13));
        assert!(c.iter().flatten().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix(80);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = d.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let back: Vec<f64> = (0..80).map(|i| (0..80).map(|k| d[k][i] * y[k]).sum()).collect();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn uniform_offset_closed_form() {
        let a = vec![vec![0.3; 13]; 20];
        let b: Vec<Vec<f64>> = a.iter().map(|f| f.iter().map(|v| v + 0.1).collect()).collect();
        let expected = 10.0 / LN_10 * (2.0f64 * 13.0 * 0.01).sqrt();
        assert!((expected - 2.2144).abs() < 1e-3);
        for al in [Alignment::Dtw, Alignment::Truncate] {
            assert!((mcd_cepstra(&a, &b, al).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_symmetry_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (n, m) = (rng.random_range(1..30), rng.random_range(1..30));
            let (a, b) = (random_mel(&mut rng, n), random_mel(&mut rng, m));
            assert_eq!(mcd(&a, &a, Alignment::Dtw).unwrap(), 0.0);
            let ab = mcd(&a, &b, Alignment::Dtw).unwrap();
            assert!(ab > 0.0);
            assert_eq!(ab, mcd(&b, &a, Alignment::Dtw).unwrap());
        }
        assert_eq!(mcd_cepstra(&[], &[vec![0.0; 13]], Alignment::Dtw), Err(EvalError::EmptyInput));
    }

    #[test]
    fn dtw_absorbs_time_stretch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_mel(&mut rng, 12);
        let stretched = mel((0..24).map(|i| a.frame(i / 2).to_vec()).collect());
        assert_eq!(mcd(&a, &stretched, Alignment::Dtw).unwrap(), 0.0);
        assert!(mcd(&a, &stretched, Alignment::Truncate).unwrap() > 0.0);
    }
}
