//! Minimal RIFF/WAVE codec: PCM16 and IEEE float32, any channel count.

use super::{DspError, SampleBuffer};

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_IEEE_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, DspError> {
    if body.len() < 16 {
        return Err(DspError::MalformedHeader("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format = le_u16(body, 0);
    if format == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the SubFormat GUID,
        // whose first two bytes carry the real format tag.
        if body.len() < 26 {
            return Err(DspError::MalformedHeader("truncated WAVEFORMATEXTENSIBLE".into()));
        }
        format = le_u16(body, 24);
    }
    Ok(FmtChunk {
        format,
        channels: le_u16(body, 2),
        sample_rate: le_u32(body, 4),
        bits: le_u16(body, 14),
    })
}

/// Decodes a RIFF/WAVE byte stream to a mono buffer.
///
/// Accepts 16-bit integer PCM (scaled by 1/32768) and 32-bit float PCM.
/// Multi-channel input is averaged to mono. Float samples are clamped to
/// [-1, 1].
pub fn decode_wav(bytes: &[u8]) -> Result<SampleBuffer, DspError> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DspError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }

    let mut fmt = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(len);
        if id == b"data" {
            // tolerate writers that leave the data length short or unset
            data = Some(&bytes[body_start..body_end.min(bytes.len())]);
            if fmt.is_some() {
                break;
            }
        } else {
            if body_end > bytes.len() {
                return Err(DspError::MalformedHeader("chunk runs past end of file".into()));
            }
            if id == b"fmt " {
                fmt = Some(parse_fmt(&bytes[body_start..body_end])?);
            }
        }
        pos = body_end.saturating_add(len & 1);
    }

    let fmt = fmt.ok_or_else(|| DspError::MalformedHeader("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| DspError::MalformedHeader("missing data chunk".into()))?;
    if fmt.channels == 0 {
        return Err(DspError::MalformedHeader("zero channels".into()));
    }
    if fmt.sample_rate == 0 {
        return Err(DspError::MalformedHeader("zero sample rate".into()));
    }

    let channels = fmt.channels as usize;
    let interleaved: Vec<f32> = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => {
            let mut out = Vec::with_capacity(data.len() / 4);
            for (i, c) in data.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if !v.is_finite() {
                    return Err(DspError::NonFinite(i / channels));
                }
                out.push(v.clamp(-1.0, 1.0));
            }
            out
        }
        (FORMAT_PCM, bits) | (FORMAT_IEEE_FLOAT, bits) => {
            return Err(DspError::UnsupportedEncoding(format!(
                "{bits}-bit samples (format tag {:#06x})",
                fmt.format
            )))
        }
        (tag, _) => {
            return Err(DspError::UnsupportedEncoding(format!(
                "compressed or unknown format tag {tag:#06x}"
            )))
        }
    };

    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
            .collect()
    };
    SampleBuffer::new(mono, fmt.sample_rate)
}

fn header(format: u16, channels: u16, sample_rate: u32, bits: u16, data_len: u32) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out
}

/// Encodes a buffer as mono 16-bit PCM WAV.
pub fn encode_wav_pcm16(buf: &SampleBuffer) -> Vec<u8> {
    let mut out = header(FORMAT_PCM, 1, buf.sample_rate(), 16, 2 * buf.len() as u32);
    for &s in buf.samples() {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
