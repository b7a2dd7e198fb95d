//! 80-channel log-mel spectrogram: 25 ms Hann windows every 10 ms at 16 kHz,
//! zero-padded to a 1024-point FFT, magnitude spectrum through unnormalized
//! triangular HTK-mel filters spanning 0 to 8 kHz, then `log10` with a floor.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioError, Waveform, SAMPLE_RATE};

pub const MEL_CHANNELS: usize = 80;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const FFT_SIZE: usize = 1024;
pub const F_MAX: f64 = 8000.0;
pub const FLOOR: f64 = 1e-5;
/// `log10(FLOOR)`.
pub const LOG_FLOOR: f64 = -5.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-mel magnitudes, `values[channel][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<Vec<f64>>,
    pub frames: usize,
}

impl MelSpectrogram {
    pub fn channels(&self) -> usize {
        self.values.len()
    }

    /// One row per channel, frames as columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.values {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Header of three little-endian u32 (channels, frames, 0) followed by
    /// channel-major little-endian f64 values.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.channels() * self.frames);
        for v in [self.channels() as u32, self.frames as u32, 0] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for row in &self.values {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Binary PGM, one pixel per (frame, channel), low channels at the bottom,
    /// scaled from the grid minimum (black) to maximum (white).
    pub fn to_pgm(&self) -> Vec<u8> {
        let (lo, hi) = self
            .values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P5\n{} {}\n255\n", self.frames, self.channels()).into_bytes();
        for row in self.values.iter().rev() {
            out.extend(row.iter().map(|v| ((v - lo) / span * 255.0).round() as u8));
        }
        out
    }
}

/// Precomputed window, FFT plan and filterbank.
pub struct MelAnalyzer {
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl Default for MelAnalyzer {
    fn default() -> Self {
        Self::new()
    }
}

impl MelAnalyzer {
    pub fn new() -> Self {
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self {
            window,
            filters: filterbank(),
            fft,
        }
    }

    /// `filters[channel][bin]` over the `FFT_SIZE / 2 + 1` non-negative bins.
    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn analyze(&self, w: &Waveform) -> Result<MelSpectrogram, AudioError> {
        if w.sample_rate() != SAMPLE_RATE {
            return Err(AudioError::WrongRate {
                expected: SAMPLE_RATE,
                found: w.sample_rate(),
            });
        }
        let x = w.samples();
        if x.len() < WINDOW {
            return Err(AudioError::TooShort {
                required: WINDOW,
                found: x.len(),
            });
        }
        let frames = 1 + (x.len() - WINDOW) / HOP;
        let bins = FFT_SIZE / 2 + 1;
        let mut values = vec![vec![0.0; frames]; MEL_CHANNELS];
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut mag = vec![0.0; bins];
        for f in 0..frames {
            let seg = &x[f * HOP..f * HOP + WINDOW];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(if i < WINDOW { seg[i] * self.window[i] } else { 0.0 }, 0.0);
            }
            self.fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            for (ch, filt) in self.filters.iter().enumerate() {
                let e: f64 = filt.iter().zip(&mag).map(|(a, b)| a * b).sum();
                values[ch][f] = if e <= FLOOR { LOG_FLOOR } else { e.log10() };
            }
        }
        Ok(MelSpectrogram { values, frames })
    }
}

/// Triangular filters with peaks of 1 at `MEL_CHANNELS` centers equally
/// spaced in mel between 0 Hz and `F_MAX`.
fn filterbank() -> Vec<Vec<f64>> {
    let top = hz_to_mel(F_MAX);
    let edges: Vec<f64> = (0..MEL_CHANNELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (MEL_CHANNELS + 1) as f64))
        .collect();
    let bins = FFT_SIZE / 2 + 1;
    (0..MEL_CHANNELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Center frequency of each filter, in Hz.
pub fn filter_centers() -> Vec<f64> {
    let top = hz_to_mel(F_MAX);
    (1..=MEL_CHANNELS)
        .map(|i| mel_to_hz(top * i as f64 / (MEL_CHANNELS + 1) as f64))
        .collect()
}

pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram, AudioError> {
    MelAnalyzer::new().analyze(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn frame_count_and_silence() {
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        assert_eq!(m.channels(), 80);
        assert_eq!(m.frames, 98);
        assert!(m.values.iter().flatten().all(|&v| v == -5.0));
        for n in [400, 401, 559, 560, 561, 12345] {
            let w = Waveform::new(vec![0.0; n], 16000).unwrap();
            assert_eq!(mel_spectrogram(&w).unwrap().frames, 1 + (n - 400) / 160);
        }
    }

    #[test]
    fn rejects_short_or_wrong_rate_input() {
        let w = Waveform::new(vec![0.0; 399], 16000).unwrap();
        assert!(matches!(
            mel_spectrogram(&w),
            Err(AudioError::TooShort { required: 400, found: 399 })
        ));
        let w = Waveform::new(vec![0.0; 1000], 22050).unwrap();
        assert!(matches!(mel_spectrogram(&w), Err(AudioError::WrongRate { .. })));
    }

    #[test]
    fn filters_are_positive_triangles_partitioning_the_band() {
        let a = MelAnalyzer::new();
        for f in a.filters() {
            assert!(f.iter().sum::<f64>() > 0.0);
            assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // inside the covered band, neighbouring triangles sum to one
        let centers = filter_centers();
        for k in 0..=FFT_SIZE / 2 {
            let f = k as f64 * 16000.0 / FFT_SIZE as f64;
            if f >= centers[0] && f <= centers[MEL_CHANNELS - 1] {
                let total: f64 = a.filters().iter().map(|row| row[k]).sum();
                assert!((total - 1.0).abs() < 1e-9, "bin {k}: {total}");
            }
        }
    }

    #[test]
    fn tone_peaks_in_nearest_filter() {
        let w = Waveform::new(
            (0..16000)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
        .unwrap();
        let m = mel_spectrogram(&w).unwrap();
        let centers = filter_centers();
        let nearest = (0..MEL_CHANNELS)
            .min_by(|&a, &b| {
                (centers[a] - 1000.0)
                    .abs()
                    .partial_cmp(&(centers[b] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        for f in 0..m.frames {
            let best = (0..MEL_CHANNELS)
                .max_by(|&a, &b| m.values[a][f].partial_cmp(&m.values[b][f]).unwrap())
                .unwrap();
            assert_eq!(best, nearest, "frame {f}");
        }
    }

    #[test]
    fn export_formats() {
        let m = MelSpectrogram {
            values: vec![vec![1.0, 2.0], vec![3.0, -5.0]],
            frames: 2,
        };
        assert_eq!(m.to_csv(), "1,2\n3,-5\n");
        let raw = m.to_raw();
        assert_eq!(&raw[..12], &[2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(f64::from_le_bytes(raw[12..20].try_into().unwrap()), 1.0);
        assert_eq!(raw.len(), 12 + 32);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n2 2\n255\n"));
        // last channel first; -5 is the minimum
        assert_eq!(&pgm[pgm.len() - 4..], &[255, 0, 191, 223]);
    }
}
