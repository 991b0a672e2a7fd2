//! WAV reading and writing (16/24-bit PCM and 32-bit float).

use std::path::Path;

use hound::{SampleFormat, WavSpec};
use ndarray::Array2;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::Parse(format!(
                "{}: unsupported sample format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    if channels == 0 || !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Parse(format!("{}: ragged channel data", path.display())));
    }
    let frames = interleaved.len() / channels;
    let samples = Array2::from_shape_fn((channels, frames), |(c, t)| interleaved[t * channels + c]);
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Pcm24 => (24, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: audio.channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let s = audio.samples();
    for t in 0..audio.len() {
        for c in 0..audio.channels() {
            let v = s[[c, t]];
            match format {
                WavFormat::Float32 => writer.write_sample(v as f32)?,
                WavFormat::Pcm16 | WavFormat::Pcm24 => {
                    let scale = (1i64 << (bits - 1)) as f64;
                    let q = (v * scale).round().clamp(-scale, scale - 1.0) as i32;
                    writer.write_sample(q)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
