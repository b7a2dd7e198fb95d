//! Browser bindings: schedule curves, forward noising of a demo waveform
//! and mel spectrograms of synthetic tones.
//!
//! The plain functions return `Result<_, String>` and are what the native
//! tests exercise; the `#[wasm_bindgen]` exports wrap them for JavaScript.

use std::f64::consts::TAU;

use cryforge::audio::mel_spectrogram;
use cryforge::{VarianceSchedule, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

pub const DEMO_RATE: u32 = 16000;

/// Per-step schedule quantities for `t = 1..=T`.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

#[wasm_bindgen]
impl Curves {
    #[wasm_bindgen(getter)]
    pub fn beta(&self) -> Vec<f64> {
        self.beta.clone()
    }

    #[wasm_bindgen(getter, js_name = alphaBar)]
    pub fn alpha_bar(&self) -> Vec<f64> {
        self.alpha_bar.clone()
    }

    #[wasm_bindgen(getter, js_name = betaTilde)]
    pub fn beta_tilde(&self) -> Vec<f64> {
        self.beta_tilde.clone()
    }
}

/// A clean signal and its corrupted version at one step.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Noised {
    clean: Vec<f64>,
    noisy: Vec<f64>,
    alpha_bar: f64,
}

#[wasm_bindgen]
impl Noised {
    #[wasm_bindgen(getter)]
    pub fn clean(&self) -> Vec<f64> {
        self.clean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn noisy(&self) -> Vec<f64> {
        self.noisy.clone()
    }

    #[wasm_bindgen(getter, js_name = alphaBar)]
    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    /// Signal-to-noise ratio of the corruption in dB, `10 log10(a / (1 - a))`.
    #[wasm_bindgen(getter, js_name = snrDb)]
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.alpha_bar / (1.0 - self.alpha_bar)).log10()
    }
}

/// Channel-major log-mel grid.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct MelGrid {
    channels: usize,
    frames: usize,
    values: Vec<f64>,
}

#[wasm_bindgen]
impl MelGrid {
    #[wasm_bindgen(getter)]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `values[channel * frames + frame]`.
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

pub fn curves(steps: usize, beta_start: f64, beta_end: f64) -> Result<Curves, String> {
    let s = VarianceSchedule::linear(steps, beta_start, beta_end).map_err(|e| e.to_string())?;
    Ok(Curves {
        beta: (1..=steps).map(|t| s.beta(t)).collect(),
        alpha_bar: (1..=steps).map(|t| s.alpha_bar(t)).collect(),
        beta_tilde: (1..=steps).map(|t| s.beta_tilde(t)).collect(),
    })
}

/// A cry-like test signal at 16 kHz: a rising then falling pitch contour
/// with three harmonics under a smooth envelope.
pub fn demo_waveform(len: usize) -> Vec<f64> {
    let mut phase = 0.0;
    (0..len)
        .map(|i| {
            let u = i as f64 / len.max(1) as f64;
            let pitch = 420.0 + 180.0 * (std::f64::consts::PI * u).sin();
            phase += TAU * pitch / DEMO_RATE as f64;
            let env = (std::f64::consts::PI * u).sin().powf(0.6);
            let voice = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
            0.5 * env * voice / 1.75
        })
        .collect()
}

/// Corrupts the demo waveform to step `t` with noise drawn from `seed`.
/// `t = 0` returns the clean signal.
pub fn noise_demo(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    t: usize,
    seed: u64,
    len: usize,
) -> Result<Noised, String> {
    let s = VarianceSchedule::linear(steps, beta_start, beta_end).map_err(|e| e.to_string())?;
    let clean = demo_waveform(len);
    if t == 0 {
        return Ok(Noised {
            noisy: clean.clone(),
            clean,
            alpha_bar: 1.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..len).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let noisy = s.forward_closed_form(&clean, t, &eps).map_err(|e| e.to_string())?.x_t;
    Ok(Noised {
        clean,
        noisy,
        alpha_bar: s.alpha_bar(t),
    })
}

/// Log-mel grid of a linear chirp from `f_start` to `f_end` Hz at 16 kHz.
pub fn chirp_mel(f_start: f64, f_end: f64, seconds: f64) -> Result<MelGrid, String> {
    let nyquist = DEMO_RATE as f64 / 2.0;
    for f in [f_start, f_end] {
        if !(0.0..nyquist).contains(&f) {
            return Err(format!("frequency {f} Hz must lie in [0, {nyquist})"));
        }
    }
    if !(seconds.is_finite() && seconds > 0.0 && seconds <= 10.0) {
        return Err(format!("duration {seconds} s must lie in (0, 10]"));
    }
    let n = (seconds * DEMO_RATE as f64).round() as usize;
    let dur = n as f64 / DEMO_RATE as f64;
    let samples = (0..n)
        .map(|i| {
            let time = i as f64 / DEMO_RATE as f64;
            let phase = TAU * (f_start * time + 0.5 * (f_end - f_start) * time * time / dur);
            0.5 * phase.sin()
        })
        .collect();
    let w = Waveform::new(samples, DEMO_RATE).map_err(|e| e.to_string())?;
    let m = mel_spectrogram(&w).map_err(|e| e.to_string())?;
    Ok(MelGrid {
        channels: m.channels(),
        frames: m.frames,
        values: m.values.into_iter().flatten().collect(),
    })
}

#[wasm_bindgen(js_name = scheduleCurves)]
pub fn schedule_curves(steps: usize, beta_start: f64, beta_end: f64) -> Result<Curves, JsError> {
    curves(steps, beta_start, beta_end).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = noiseDemo)]
pub fn noise_demo_js(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    t: usize,
    seed: u32,
    len: usize,
) -> Result<Noised, JsError> {
    noise_demo(steps, beta_start, beta_end, t, seed as u64, len).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = chirpMel)]
pub fn chirp_mel_js(f_start: f64, f_end: f64, seconds: f64) -> Result<MelGrid, JsError> {
    chirp_mel(f_start, f_end, seconds).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_follow_the_schedule() {
        let c = curves(200, 1e-4, 0.02).unwrap();
        assert_eq!(c.beta.len(), 200);
        assert_eq!(c.beta[0], 1e-4);
        assert!((c.beta[199] - 0.02).abs() < 1e-15);
        assert_eq!(c.beta_tilde[0], 0.0);
        let mut prod = 1.0;
        for (t, ab) in c.alpha_bar.iter().enumerate() {
            prod *= 1.0 - c.beta[t];
            assert!((ab - prod).abs() <= 1e-12 * prod);
        }
        assert!(curves(200, 0.02, 1e-4).is_err());
    }

    #[test]
    fn noising_mixes_signal_and_noise_in_the_closed_form_ratio() {
        let len = 4096;
        let zero = noise_demo(200, 1e-4, 0.02, 0, 1, len).unwrap();
        assert_eq!(zero.clean, zero.noisy);
        let n = noise_demo(200, 1e-4, 0.02, 200, 1, len).unwrap();
        assert_eq!(n, noise_demo(200, 1e-4, 0.02, 200, 1, len).unwrap());
        // at the last step the residual after removing the signal is unit noise
        let a = n.alpha_bar.sqrt();
        let resid: f64 = n.noisy.iter().zip(&n.clean).map(|(x, c)| (x - a * c).powi(2)).sum();
        let var = resid / len as f64 / (1.0 - n.alpha_bar);
        assert!((var - 1.0).abs() < 0.1, "{var}");
        let brute: f64 = (0..200).map(|k| 1.0 - (1e-4 + (0.02 - 1e-4) * k as f64 / 199.0)).product();
        assert!((n.alpha_bar - brute).abs() < 1e-12);
        assert!((n.snr_db() - 10.0 * (brute / (1.0 - brute)).log10()).abs() < 1e-9);
        assert!(noise_demo(200, 1e-4, 0.02, 201, 1, len).is_err());
    }

    #[test]
    fn demo_waveform_stays_in_range() {
        let w = demo_waveform(8000);
        assert!(w.iter().all(|v| v.abs() <= 0.5));
        assert!(w.iter().any(|v| v.abs() > 0.2));
    }

    #[test]
    fn chirp_energy_moves_up_the_mel_axis() {
        let m = chirp_mel(200.0, 6000.0, 1.0).unwrap();
        assert_eq!((m.channels, m.frames), (80, 98));
        let peak = |frame: usize| {
            (0..m.channels)
                .max_by(|&a, &b| {
                    m.values[a * m.frames + frame].total_cmp(&m.values[b * m.frames + frame])
                })
                .unwrap()
        };
        assert!(peak(10) < peak(50) && peak(50) < peak(90));
        assert!(chirp_mel(200.0, 9000.0, 1.0).is_err());
        assert!(chirp_mel(200.0, 900.0, 0.0).is_err());
    }
}
