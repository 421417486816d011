//! PCM WAV reading (16-bit int or float32, mono or downmixed) and 16-bit
//! mono writing.

use std::path::Path;

use crate::error::{Error, Result};

/// Read a WAV file as mono `f32` samples in [-1, 1] plus its sample rate.
/// Multi-channel input is downmixed by averaging channels.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported WAV format {format:?}/{bits}-bit; use 16-bit PCM or float32",
                path.display()
            )))
        }
    };

    if channels == 1 {
        return Ok((interleaved, spec.sample_rate));
    }
    let frames = interleaved.len() / channels;
    let mut mono = Vec::with_capacity(frames);
    for f in 0..frames {
        let sum: f32 = interleaved[f * channels..(f + 1) * channels].iter().sum();
        mono.push(sum / channels as f32);
    }
    Ok((mono, spec.sample_rate))
}

/// Write mono samples as 16-bit PCM, clamping to [-1, 1].
pub fn write_wav_mono(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        // same 1/32768 scale as the reader, clamped into i16 range
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..100).map(|i| (i as f32 / 50.0 - 1.0) * 0.9).collect();
        write_wav_mono(&path, &samples, 16_000).unwrap();
        let (back, rate) = read_wav_mono(&path).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn stereo_float_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..10 {
            w.write_sample(i as f32 * 0.01).unwrap(); // left
            w.write_sample(i as f32 * 0.03).unwrap(); // right
        }
        w.finalize().unwrap();
        let (mono, _) = read_wav_mono(&path).unwrap();
        assert_eq!(mono.len(), 10);
        for (i, v) in mono.iter().enumerate() {
            assert!((v - i as f32 * 0.02).abs() < 1e-6);
        }
    }
}
