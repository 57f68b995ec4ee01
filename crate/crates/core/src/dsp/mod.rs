//! Audio decoding and the logmel front end.
//!
//! The pipeline is `decode_wav` → `resample` (to 16 kHz) → `logmel`. Feature
//! matrices are persisted with [`write_lmel`]/[`read_lmel`].

mod lmel;
mod mel;
mod resample;
mod wav;

pub use lmel::{read_lmel, read_lmel_file, write_lmel, write_lmel_file, LMEL_VERSION};
pub use mel::{hz_to_mel, logmel, mel_to_hz, LogMelExtractor, LogMelSpec, MelFilterbank, LOG_FLOOR};
pub use resample::resample;
pub use wav::{decode_wav, encode_wav_pcm16};

use thiserror::Error;

/// Sample rate the network front end expects.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_N_MELS: usize = 64;
pub const DEFAULT_WIN_MS: f64 = 16.0;
pub const DEFAULT_HOP_MS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("wrong sample rate: expected {expected} Hz, got {got} Hz")]
    WrongSampleRate { expected: u32, got: u32 },
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("malformed feature file: {0}")]
    FeatureFormat(String),
    #[error("feature file version {found} is not supported (expected {expected})")]
    FeatureVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::InvalidRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}
