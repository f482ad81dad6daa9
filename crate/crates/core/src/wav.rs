//! Minimal RIFF/WAVE codec: reads 16-bit PCM and 32-bit IEEE float, any channel
//! count, and writes 16-bit mono PCM.

use std::path::Path;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavHeader {
    pub format: SampleFormat,
    pub channels: u16,
    pub sample_rate_hz: u32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    let id = path.to_string_lossy().into_owned();
    decode_wav(&bytes, id).map_err(|e| e.in_file(path))
}

/// Decodes a WAV byte stream to a mono clip. Channels are averaged; 16-bit
/// samples are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8], source_id: impl Into<String>) -> Result<AudioClip> {
    let source_id = source_id.into();
    let (header, data) = parse_chunks(bytes)?;
    let channels = usize::from(header.channels);
    let bytes_per_sample = match header.format {
        SampleFormat::Pcm16 => 2,
        SampleFormat::Float32 => 4,
    };
    let frame_bytes = channels * bytes_per_sample;
    if data.len() % frame_bytes != 0 {
        return Err(Error::Format(format!(
            "data chunk of {} bytes is not a whole number of {frame_bytes}-byte frames",
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyAudio(source_id));
    }

    let decode = |chunk: &[u8]| -> f64 {
        match header.format {
            SampleFormat::Pcm16 => f64::from(i16::from_le_bytes([chunk[0], chunk[1]])) / 32768.0,
            SampleFormat::Float32 => {
                f64::from(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
            }
        }
    };

    let mut samples: Vec<f64> = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame.chunks_exact(bytes_per_sample).map(decode).sum();
            sum / channels as f64
        })
        .collect();

    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Format("non-finite float sample".into()));
    }
    // Float files may exceed full scale; bring them back into [-1, 1].
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    AudioClip::new(samples, header.sample_rate_hz, source_id)
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_chunks(bytes: &[u8]) -> Result<(WavHeader, &[u8])> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut header = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "chunk {:?} declares {size} bytes but the file ends first",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => header = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }
    let header = header.ok_or_else(|| Error::Format("no \"fmt \" chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no \"data\" chunk".into()))?;
    Ok((header, data))
}

fn parse_fmt(body: &[u8]) -> Result<WavHeader> {
    if body.len() < 16 {
        return Err(Error::Format(format!("fmt chunk too short ({} bytes)", body.len())));
    }
    let mut tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate_hz = read_u32(body, 4);
    let bits = read_u16(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID whose
        // first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(Error::Format("truncated WAVE_FORMAT_EXTENSIBLE block".into()));
        }
        tag = read_u16(body, 24);
    }
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    if sample_rate_hz == 0 {
        return Err(Error::Format("zero sample rate".into()));
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM, b) => {
            return Err(Error::UnsupportedCodec(format!("{b}-bit integer PCM")));
        }
        (FORMAT_IEEE_FLOAT, b) => {
            return Err(Error::UnsupportedCodec(format!("{b}-bit float")));
        }
        (6, _) => return Err(Error::UnsupportedCodec("A-law".into())),
        (7, _) => return Err(Error::UnsupportedCodec("mu-law".into())),
        (t, _) => return Err(Error::UnsupportedCodec(format!("format tag {t:#06x}"))),
    };
    Ok(WavHeader {
        format,
        channels,
        sample_rate_hz,
    })
}

/// Quantizes to 16-bit mono PCM: `round(s * 32768)` clamped to the i16 range.
pub fn encode_pcm16(samples: &[f64], sample_rate_hz: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pcm16(clip.samples(), clip.sample_rate_hz()))
        .map_err(|e| Error::from(e).in_file(path))
}
