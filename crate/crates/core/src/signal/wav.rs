//! PCM16 mono WAV reading and writing.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

fn wav_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(path, format!("channels={} unsupported", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!(
                "only PCM16 is supported (got {:?} with {} bits)",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e.to_string()))?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Quantizes to PCM16 (round half away from zero, clamped to the int16 range).
pub fn quantize(sample: f64) -> i16 {
    (sample * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| wav_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn half_scale_reads_as_one_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0]);
    }

    #[test]
    fn round_trip_within_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        write_wav(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("channels=2 unsupported"), "{err}");
    }

    #[test]
    fn float_and_malformed_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&path).unwrap_err().to_string().contains("PCM16"));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF\x00\x00").unwrap();
        assert!(read_wav(&junk).is_err());
    }

    #[test]
    fn quantize_rounds_half_away_and_clamps() {
        assert_eq!(quantize(0.5 / 32768.0), 1);
        assert_eq!(quantize(-0.5 / 32768.0), -1);
        assert_eq!(quantize(1.0), i16::MAX);
        assert_eq!(quantize(-1.5), i16::MIN);
    }
}
