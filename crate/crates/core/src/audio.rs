//! Multichannel WAV input and output.
//!
//! Channel order is `[H mics..., E mics...]`. Float32 is the default sample
//! format; PCM16 uses a full-scale factor of 32768 both ways, so any sample
//! of the form `n / 32768` survives a round trip unchanged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    #[default]
    Float32,
    Pcm16,
}

const PCM16_SCALE: f64 = 32768.0;

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io.to_string()),
        other => Error::Format(other.to_string()),
    }
}

/// Writes equal-length channels, interleaved.
pub fn write_wav(path: impl AsRef<Path>, channels: &[Vec<f64>], sample_rate: u32, format: WavFormat) -> Result<()> {
    let n = channels.first().map(Vec::len).ok_or_else(|| Error::Dimension("no channels".into()))?;
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("channels have different lengths".into()));
    }
    let num_channels = u16::try_from(channels.len()).map_err(|_| Error::Dimension("too many channels".into()))?;
    let spec = match format {
        WavFormat::Float32 => hound::WavSpec {
            channels: num_channels,
            sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        },
        WavFormat::Pcm16 => hound::WavSpec {
            channels: num_channels,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..n {
        for c in channels {
            match format {
                WavFormat::Float32 => w.write_sample(c[i] as f32).map_err(wav_err)?,
                WavFormat::Pcm16 => {
                    let s = (c[i] * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(s).map_err(wav_err)?
                }
            }
        }
    }
    w.finalize().map_err(wav_err)
}

/// Decoded WAV file.
#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub format: WavFormat,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavData> {
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    let m = usize::from(spec.channels);
    if m == 0 {
        return Err(Error::Format("WAV file without channels".into()));
    }
    let (format, interleaved): (WavFormat, Vec<f64>) = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => (
            WavFormat::Float32,
            r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>().map_err(wav_err)?,
        ),
        (hound::SampleFormat::Int, 16) => (
            WavFormat::Pcm16,
            r.samples::<i16>()
                .map(|s| s.map(|v| f64::from(v) / PCM16_SCALE))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?,
        ),
        (f, b) => return Err(Error::Format(format!("unsupported sample format {f:?} with {b} bits"))),
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / m); m];
    for frame in interleaved.chunks_exact(m) {
        for (c, &x) in channels.iter_mut().zip(frame) {
            c.push(x);
        }
    }
    Ok(WavData { channels, sample_rate: spec.sample_rate, format })
}
