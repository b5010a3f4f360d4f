//! Mono WAV I/O: PCM 16-bit and IEEE float 32-bit.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Waveform};

impl From<hound::Error> for DspError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => DspError::Io(io),
            other => DspError::Wav(other.to_string()),
        }
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DspError::Wav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(DspError::Wav(format!(
                "{}: unsupported format {fmt:?}/{bits}-bit (PCM-16 and float-32 supported)",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0);
        writer.write_sample(v as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float32_round_trip_is_exact_at_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Waveform {
            samples: (0..1000)
                .map(|_| rng.random_range(-1.0f64..1.0) as f32 as f64)
                .collect(),
            sample_rate: 24_000,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav_f32(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 24_000);
        assert_eq!(r.samples, w.samples);
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Waveform {
            samples: (0..1000).map(|_| rng.random_range(-0.9..0.9)).collect(),
            sample_rate: 16_000,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav_pcm16(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 16_000);
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut writer = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            writer.write_sample(0i16).unwrap();
            writer.write_sample(0i16).unwrap();
        }
        writer.finalize().unwrap();
        assert!(read_wav(&path).is_err());
    }
}
