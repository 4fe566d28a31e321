use std::path::Path;

use super::{AudioBuffer, DspError};

/// Reads 16-bit PCM. Stereo is averaged down to mono.
pub fn load_wav(path: &Path) -> Result<AudioBuffer, DspError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => DspError::Io(io.to_string()),
        other => DspError::UnsupportedFormat(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedFormat(format!(
            "{} bit {:?} samples; only 16-bit PCM is supported",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(DspError::UnsupportedFormat(format!("{channels} channels")));
    }
    let raw = reader
        .samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DspError::Io(e.to_string()))?;
    if channels == 2 {
        log::warn!("{}: averaging stereo to mono", path.display());
    }
    let samples = raw
        .chunks(channels)
        .map(|c| c.iter().map(|&s| s as f32 / 32768.0).sum::<f32>() / channels as f32)
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, rounding to nearest and clipping. The file is
/// written next to `path` and renamed into place.
pub fn save_wav(path: &Path, audio: &AudioBuffer) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let tmp = path.with_extension("wav.tmp");
    let io = |e: hound::Error| DspError::Io(e.to_string());
    let mut w = hound::WavWriter::create(&tmp, spec).map_err(io)?;
    for &s in &audio.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(io)?;
    }
    w.finalize().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| DspError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantisation_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..500).map(|i| ((i as f32) * 0.37).sin() * 0.9).collect();
        save_wav(&path, &AudioBuffer::new(samples.clone(), 16000).unwrap()).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        // a second pass is exact
        save_wav(&path, &back).unwrap();
        assert_eq!(load_wav(&path).unwrap(), back);
    }

    #[test]
    fn zero_file_and_clipping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        save_wav(&path, &AudioBuffer::new(vec![0.0; 64], 8000).unwrap()).unwrap();
        assert!(load_wav(&path).unwrap().samples.iter().all(|&s| s == 0.0));
        save_wav(&path, &AudioBuffer { samples: vec![1.5, -1.5], sample_rate: 8000 }).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn rejects_24_bit_and_averages_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(DspError::UnsupportedFormat(_))));

        let spec = hound::WavSpec {
            channels: 2,
            bits_per_sample: 16,
            ..spec
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for s in [1000i16, 3000, -2000, 0] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let a = load_wav(&path).unwrap();
        assert_eq!(a.samples, vec![2000.0 / 32768.0, -1000.0 / 32768.0]);

        assert!(matches!(load_wav(&dir.path().join("missing.wav")), Err(DspError::Io(_))));
    }
}
