//! Mono 16-bit PCM WAV read/write.

use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Read a mono WAV file. With `expected_sr` set, any other rate is an error;
/// nothing is resampled.
pub fn read_wav(path: &Path, expected_sr: Option<u32>) -> Result<Waveform> {
    let load_err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| load_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(load_err(format!("expected mono, found {} channels", spec.channels)));
    }
    if let Some(sr) = expected_sr {
        if spec.sample_rate != sr {
            return Err(Error::SampleRate {
                path: path.to_path_buf(),
                expected: sr,
                found: spec.sample_rate,
            });
        }
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| load_err(e.to_string()))?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| load_err(e.to_string()))?,
    };
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Write PCM16, clipping to full scale.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform {
            samples: (0..400).map(|i| (i as f64 * 0.05).sin() * 0.5).collect(),
            sample_rate: 16_000,
        };
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p, Some(16_000)).unwrap();
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_wav(&p, &Waveform::zeros(10, 8000)).unwrap();
        assert!(matches!(
            read_wav(&p, Some(16_000)),
            Err(Error::SampleRate { found: 8000, .. })
        ));
        assert!(matches!(
            read_wav(&dir.path().join("missing.wav"), None),
            Err(Error::Load { .. })
        ));
    }
}
