//! Audio ingestion and analysis: WAV files, sample-rate conversion, corpus
//! preparation and log-mel spectrograms.

mod corpus;
mod mel;
mod resample;
mod wav;

pub use corpus::{prepare_corpus, read_manifest, CorpusReport, ManifestRow, MANIFEST_HEADER};
pub use mel::{filter_centers, mel_spectrogram, MelAnalyzer, MelSpectrogram, FFT_SIZE, HOP, LOG_FLOOR, MEL_CHANNELS, WINDOW};
pub use resample::{resample, Resampler};
pub use wav::{read_wav, read_wav_with_info, write_wav, WavInfo};

use std::path::PathBuf;

use thiserror::Error;

/// Canonical sample rate of the toolkit.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed WAV file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("unsupported WAV encoding in {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("WAV file {0} holds no samples")]
    Empty(PathBuf),
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("waveform contains non-finite samples")]
    NonFinite,
    #[error("mel analysis expects {expected} Hz audio, got {found} Hz")]
    WrongRate { expected: u32, found: u32 },
    #[error("input has {found} samples; at least {required} are needed for one analysis window")]
    TooShort { required: usize, found: usize },
    #[error("clip length must be positive (clip_seconds = {0})")]
    InvalidClip(f64),
}

/// Mono audio at a declared sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate);
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copy with every sample limited to `[-1, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
            sample_rate: self.sample_rate,
        }
    }
}
