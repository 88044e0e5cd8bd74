//! RIFF/WAVE I/O: 16-bit PCM and 32-bit IEEE float, 1 to 6 channels, 16 kHz.

use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavSpec};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const MAX_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Deinterleaved multichannel audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f32>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self> {
        if let Some(first) = channels.first() {
            for (i, ch) in channels.iter().enumerate() {
                if ch.len() != first.len() {
                    return Err(Error::shape(format!("channel {i} length"), first.len(), ch.len()));
                }
            }
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedAudio(format!(
            "{}: sample rate {} Hz, only {} Hz is supported",
            path.display(),
            spec.sample_rate,
            SAMPLE_RATE
        )));
    }
    let n_ch = spec.channels as usize;
    if n_ch == 0 || n_ch > MAX_CHANNELS {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {n_ch} channels, expected 1 to {MAX_CHANNELS}",
            path.display()
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (HoundFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {fmt:?} samples, expected 16-bit PCM or 32-bit float",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (ch, &s) in channels.iter_mut().zip(frame) {
            ch.push(s);
        }
    }
    AudioBuffer::new(spec.sample_rate, channels)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let n_ch = audio.num_channels();
    if n_ch == 0 || n_ch > MAX_CHANNELS {
        return Err(Error::UnsupportedAudio(format!(
            "cannot write {n_ch} channels, expected 1 to {MAX_CHANNELS}"
        )));
    }
    let (bits_per_sample, sample_format) = match format {
        SampleFormat::Pcm16 => (16, HoundFormat::Int),
        SampleFormat::Float32 => (32, HoundFormat::Float),
    };
    let spec = WavSpec {
        channels: n_ch as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for n in 0..audio.len() {
        for ch in &audio.channels {
            match format {
                SampleFormat::Pcm16 => {
                    let v = (ch[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(v)
                }
                SampleFormat::Float32 => writer.write_sample(ch[n]),
            }
            .map_err(wav_err(path))?;
        }
    }
    writer.finalize().map_err(wav_err(path))
}
