//! Variance schedules and the closed-form diffusion mathematics built on them.
//!
//! Steps are 1-based throughout the public API: `t` ranges over `1..=T` and
//! the cumulative product `alpha_bar` is additionally defined at `t = 0`
//! where it equals one.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("a schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("invalid beta endpoints [{start}, {end}]: need 0 < start <= end < 1")]
    InvalidEndpoints { start: f64, end: f64 },
    #[error("beta at step {step} is {value}, outside (0, 1)")]
    InvalidBeta { step: usize, value: f64 },
    #[error("step {t} outside [{min}, {max}]")]
    StepOutOfRange { t: usize, min: usize, max: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Noise variances `beta_t` and every constant derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    // index 0 holds step 1
    betas: Vec<f64>,
    alphas: Vec<f64>,
    // index t holds alpha_bar_t, alpha_bar_0 = 1
    alpha_bars: Vec<f64>,
    beta_tildes: Vec<f64>,
}

/// A corrupted signal together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Mean and standard deviation of one reverse step.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl VarianceSchedule {
    /// Betas spaced linearly from `beta_start` (step 1) to `beta_end` (step T), both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::TooFewSteps(steps));
        }
        let valid = beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0;
        if !valid || !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(ScheduleError::InvalidEndpoints {
                start: beta_start,
                end: beta_end,
            });
        }
        let span = beta_end - beta_start;
        let last = (steps - 1) as f64;
        let mut betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + span * (i as f64) / last)
            .collect();
        betas[steps - 1] = beta_end;
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit per-step variances, `betas[0]` being step 1.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::TooFewSteps(0));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(ScheduleError::InvalidBeta {
                    step: i + 1,
                    value: b,
                });
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let beta_tildes = betas
            .iter()
            .enumerate()
            .map(|(i, b)| (1.0 - alpha_bars[i]) / (1.0 - alpha_bars[i + 1]) * b)
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            beta_tildes,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Defined for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tildes[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar_0 ..= alpha_bar_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tildes
    }

    pub fn check_step(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.num_steps() {
            return Err(ScheduleError::StepOutOfRange {
                t,
                min: 1,
                max: self.num_steps(),
            });
        }
        Ok(())
    }

    /// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
    pub fn forward_closed_form(
        &self,
        x0: &[f64],
        t: usize,
        eps: &[f64],
    ) -> Result<NoisySample, ScheduleError> {
        self.check_step(t)?;
        check_len(x0.len(), eps.len())?;
        let signal = self.alpha_bar(t).sqrt();
        let noise = (1.0 - self.alpha_bar(t)).sqrt();
        let x_t = x0
            .iter()
            .zip(eps)
            .map(|(x, e)| signal * x + noise * e)
            .collect();
        Ok(NoisySample {
            x_t,
            t,
            eps: eps.to_vec(),
        })
    }

    /// Runs the Markov chain `x_s = sqrt(1 - beta_s) x_{s-1} + sqrt(beta_s) z_s`
    /// for `s = 1..=t`. `t = 0` returns `x0` unchanged.
    pub fn forward_iterative<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        t: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>, ScheduleError> {
        if t > self.num_steps() {
            return Err(ScheduleError::StepOutOfRange {
                t,
                min: 0,
                max: self.num_steps(),
            });
        }
        let mut x = x0.to_vec();
        for s in 1..=t {
            let keep = self.alpha(s).sqrt();
            let spread = self.beta(s).sqrt();
            for v in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = keep * *v + spread * z;
            }
        }
        Ok(x)
    }

    /// Reverse-step mean from a noise estimate, and `sigma = sqrt(beta_tilde_t)`
    /// (zero at `t = 1`).
    pub fn posterior(
        &self,
        x_t: &[f64],
        t: usize,
        eps_hat: &[f64],
    ) -> Result<Posterior, ScheduleError> {
        self.check_step(t)?;
        check_len(x_t.len(), eps_hat.len())?;
        let inv_sqrt_alpha = 1.0 / self.alpha(t).sqrt();
        let coef = self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt();
        let mean = x_t
            .iter()
            .zip(eps_hat)
            .map(|(x, e)| inv_sqrt_alpha * (x - coef * e))
            .collect();
        Ok(Posterior {
            mean,
            sigma: self.beta_tilde(t).sqrt(),
        })
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), ScheduleError> {
    if expected != found {
        return Err(ScheduleError::LengthMismatch { expected, found });
    }
    Ok(())
}
