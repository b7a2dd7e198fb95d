//! Ancestral sampling from Gaussian noise, at full length or with a reduced
//! number of reverse steps.
//!
//! Every generated item `k` draws all of its noise from its own ChaCha
//! stream `(seed, k)`, so an item is bit-identical whether it is generated
//! alone or as part of a batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{EpsilonNet, ModelError};
use crate::numerics::Tensor;
use crate::schedule::{ScheduleError, VarianceSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("fast_steps = {requested} outside [2, {max}]")]
    FastSteps { requested: usize, max: usize },
    #[error("sample length must be at least 1")]
    EmptyLength,
    #[error("non-finite value at reverse step {step}")]
    NonFinite { step: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerConfig {
    pub num_samples: usize,
    pub length: usize,
    pub seed: u64,
    /// Number of reverse steps when using the reduced schedule.
    pub fast_steps: Option<usize>,
}

/// Anything that predicts the noise in a `[B, 1, L]` batch at real-valued steps.
pub trait NoisePredictor {
    fn predict(&self, x: &Tensor, steps: &[f64]) -> Result<Tensor, ModelError>;
}

impl NoisePredictor for EpsilonNet {
    fn predict(&self, x: &Tensor, steps: &[f64]) -> Result<Tensor, ModelError> {
        self.forward_fractional(x, steps)
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, x: &Tensor, _steps: &[f64]) -> Result<Tensor, ModelError> {
        Ok(Tensor::zeros(x.shape().to_vec())?)
    }
}

/// A reverse chain: the schedule whose posterior drives each step, and the
/// step value fed to the network's embedding at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversePlan {
    pub schedule: VarianceSchedule,
    /// `embed_steps[k - 1]` is the embedding input at reverse step `k`.
    pub embed_steps: Vec<f64>,
}

impl ReversePlan {
    /// The training chain itself.
    pub fn full(sched: &VarianceSchedule) -> Self {
        Self {
            schedule: sched.clone(),
            embed_steps: (1..=sched.num_steps()).map(|t| t as f64).collect(),
        }
    }

    /// An `S`-step chain whose noise levels are the training `alpha_bar`
    /// sampled at `S` evenly spaced fractional steps in `[1, T]`, with
    /// geometric interpolation between neighbouring integer steps. Each level
    /// is aligned back onto a fractional training step by linear interpolation
    /// in `sqrt(alpha_bar)`; the network sees that fractional step. With
    /// `S = T` the plan coincides with [`ReversePlan::full`].
    pub fn reduced(sched: &VarianceSchedule, steps: usize) -> Result<Self, SampleError> {
        let t_max = sched.num_steps();
        if steps < 2 || steps > t_max {
            return Err(SampleError::FastSteps {
                requested: steps,
                max: t_max,
            });
        }
        let targets: Vec<f64> = (0..steps)
            .map(|k| {
                let num = k * (t_max - 1);
                let base = 1 + num / (steps - 1);
                let rem = num % (steps - 1);
                if rem == 0 {
                    sched.alpha_bar(base)
                } else {
                    let f = rem as f64 / (steps - 1) as f64;
                    ((1.0 - f) * sched.alpha_bar(base).ln() + f * sched.alpha_bar(base + 1).ln())
                        .exp()
                }
            })
            .collect();
        let embed_steps = targets.iter().map(|&a| align_step(sched, a)).collect();
        let mut prev = 1.0;
        let betas = targets
            .iter()
            .map(|&a| {
                let b = 1.0 - a / prev;
                prev = a;
                b
            })
            .collect();
        Ok(Self {
            schedule: VarianceSchedule::from_betas(betas)?,
            embed_steps,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.embed_steps.len()
    }
}

/// Fractional training step whose `sqrt(alpha_bar)`, interpolated linearly
/// between integer steps, equals `sqrt(target)`.
pub fn align_step(sched: &VarianceSchedule, target: f64) -> f64 {
    let t_max = sched.num_steps();
    let root = target.sqrt();
    for s in 1..t_max {
        let (hi, lo) = (sched.alpha_bar(s).sqrt(), sched.alpha_bar(s + 1).sqrt());
        if root >= hi {
            return s as f64;
        }
        if root > lo {
            return s as f64 + (hi - root) / (hi - lo);
        }
    }
    t_max as f64
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `plan` from pure noise for the items `indices`, returning raw
/// (unclamped) signals of `length` samples.
pub fn run_reverse<P: NoisePredictor + ?Sized>(
    net: &P,
    plan: &ReversePlan,
    seed: u64,
    indices: &[u64],
    length: usize,
) -> Result<Vec<Vec<f64>>, SampleError> {
    if length == 0 {
        return Err(SampleError::EmptyLength);
    }
    let mut rngs: Vec<ChaCha8Rng> = indices.iter().map(|&i| stream_rng(seed, i)).collect();
    let mut xs: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|r| (0..length).map(|_| r.sample(StandardNormal)).collect())
        .collect();
    let batch = indices.len();
    let sched = &plan.schedule;
    for t in (1..=plan.num_steps()).rev() {
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let x = Tensor::new(vec![batch, 1, length], flat).map_err(ModelError::from)?;
        let eps_hat = net
            .predict(&x, &vec![plan.embed_steps[t - 1]; batch])
            .map_err(|e| match e {
                ModelError::Tensor(crate::numerics::TensorError::NonFinite(_)) => {
                    SampleError::NonFinite { step: t }
                }
                other => other.into(),
            })?;
        for (b, (x, rng)) in xs.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let post = sched.posterior(x, t, &eps_hat.values()[b * length..(b + 1) * length])?;
            *x = post.mean;
            if post.sigma > 0.0 {
                for v in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += post.sigma * z;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SampleError::NonFinite { step: t });
            }
        }
    }
    Ok(xs)
}

fn plan_for(sched: &VarianceSchedule, cfg: &SamplerConfig) -> Result<ReversePlan, SampleError> {
    match cfg.fast_steps {
        Some(s) => ReversePlan::reduced(sched, s),
        None => Ok(ReversePlan::full(sched)),
    }
}

/// Full-length ancestral sampling (ignores `cfg.fast_steps`).
pub fn sample<P: NoisePredictor + ?Sized>(
    net: &P,
    sched: &VarianceSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<Vec<f64>>, SampleError> {
    let indices: Vec<u64> = (0..cfg.num_samples as u64).collect();
    run_reverse(net, &ReversePlan::full(sched), cfg.seed, &indices, cfg.length)
}

/// Reduced-step sampling with `cfg.fast_steps` reverse steps.
pub fn fast_sample<P: NoisePredictor + ?Sized>(
    net: &P,
    sched: &VarianceSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<Vec<f64>>, SampleError> {
    let steps = cfg.fast_steps.ok_or(SampleError::FastSteps {
        requested: 0,
        max: sched.num_steps(),
    })?;
    let plan = ReversePlan::reduced(sched, steps)?;
    let indices: Vec<u64> = (0..cfg.num_samples as u64).collect();
    run_reverse(net, &plan, cfg.seed, &indices, cfg.length)
}

/// Item `index` of the run described by `cfg`, generated on its own.
pub fn sample_one<P: NoisePredictor + ?Sized>(
    net: &P,
    sched: &VarianceSchedule,
    cfg: &SamplerConfig,
    index: u64,
) -> Result<Vec<f64>, SampleError> {
    let plan = plan_for(sched, cfg)?;
    Ok(run_reverse(net, &plan, cfg.seed, &[index], cfg.length)?.remove(0))
}

/// Variance of `x_0` under the zero predictor, from `v_T = 1` through
/// `v_{t-1} = v_t / alpha_t + beta_tilde_t`.
pub fn zero_predictor_variance(sched: &VarianceSchedule) -> f64 {
    (1..=sched.num_steps())
        .rev()
        .fold(1.0, |v, t| v / sched.alpha(t) + sched.beta_tilde(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> VarianceSchedule {
        VarianceSchedule::linear(50, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn reduced_plan_bounds() {
        let s = sched();
        assert!(ReversePlan::reduced(&s, 1).is_err());
        assert!(ReversePlan::reduced(&s, 51).is_err());
        assert!(ReversePlan::reduced(&s, 2).is_ok());
    }

    #[test]
    fn reduced_plan_steps_increase_within_range() {
        let s = VarianceSchedule::linear(200, 1e-4, 0.02).unwrap();
        for n in [2, 6, 17, 199, 200] {
            let plan = ReversePlan::reduced(&s, n).unwrap();
            let steps = &plan.embed_steps;
            assert_eq!(steps.len(), n);
            assert_eq!(steps[0], 1.0);
            assert_eq!(steps[n - 1], 200.0);
            assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
            assert!(steps.iter().all(|&t| (1.0..=200.0).contains(&t)));
            let last = plan.schedule.alpha_bar(n);
            assert!((last / s.alpha_bar(200) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_plan_with_all_steps_is_the_training_chain() {
        let s = sched();
        let plan = ReversePlan::reduced(&s, 50).unwrap();
        let full = ReversePlan::full(&s);
        assert_eq!(plan.embed_steps, full.embed_steps);
        for t in 1..=50 {
            assert!((plan.schedule.beta(t) - s.beta(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn alignment_hits_integer_steps_exactly() {
        let s = sched();
        for t in 1..=50 {
            assert_eq!(align_step(&s, s.alpha_bar(t)), t as f64);
        }
        let mid = (s.alpha_bar(10).sqrt() + s.alpha_bar(11).sqrt()) / 2.0;
        assert!((align_step(&s, mid * mid) - 10.5).abs() < 1e-9);
    }

    #[test]
    fn shape_and_determinism() {
        let s = sched();
        let cfg = SamplerConfig {
            num_samples: 3,
            length: 37,
            seed: 5,
            fast_steps: None,
        };
        let a = sample(&ZeroPredictor, &s, &cfg).unwrap();
        let b = sample(&ZeroPredictor, &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|x| x.len() == 37 && x.iter().all(|v| v.is_finite())));
        assert_ne!(a[0], a[1]);
        let bad = SamplerConfig { length: 0, ..cfg };
        assert_eq!(sample(&ZeroPredictor, &s, &bad), Err(SampleError::EmptyLength));
    }

    #[test]
    fn items_do_not_depend_on_batch() {
        let s = sched();
        let cfg = SamplerConfig {
            num_samples: 4,
            length: 16,
            seed: 8,
            fast_steps: Some(6),
        };
        let all = fast_sample(&ZeroPredictor, &s, &cfg).unwrap();
        for (k, x) in all.iter().enumerate() {
            assert_eq!(&sample_one(&ZeroPredictor, &s, &cfg, k as u64).unwrap(), x);
        }
    }

    #[test]
    fn variance_recursion_of_two_step_chain() {
        let s = VarianceSchedule::linear(2, 0.5, 0.5).unwrap();
        // v_1 = 1/0.5 + 1/3, v_0 = v_1/0.5 + 0
        assert!((zero_predictor_variance(&s) - (2.0 + 1.0 / 3.0) * 2.0).abs() < 1e-12);
    }
}
