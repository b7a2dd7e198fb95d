//! Noise-prediction training: draw `(x0, t, eps)`, regress the network's
//! output onto `eps` with a mean squared error, step Adam.

mod adam;
mod checkpoint;

pub use adam::{adam_update, AdamConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, RngState, MAGIC, VERSION,
};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EpsilonNet, ModelConfig, ModelError, Parameter};
use crate::numerics::{Graph, Tensor, TensorError};
use crate::schedule::{ScheduleError, VarianceSchedule};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("clip {index} has {found} samples, expected {expected}")]
    ClipLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Zero writes a checkpoint only at the end of the run.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 16,
            max_steps: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            log_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(TrainError::InvalidConfig("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters of a linear variance schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            diffusion_steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<VarianceSchedule, ScheduleError> {
        VarianceSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

/// Equal-length training clips.
#[derive(Debug, Clone)]
pub struct Dataset {
    clips: Vec<Vec<f64>>,
    clip_len: usize,
}

impl Dataset {
    pub fn new(clips: Vec<Vec<f64>>) -> Result<Self, TrainError> {
        let clip_len = clips.first().ok_or(TrainError::EmptyDataset)?.len();
        if clip_len == 0 {
            return Err(TrainError::ClipLength {
                index: 0,
                expected: 1,
                found: 0,
            });
        }
        for (index, c) in clips.iter().enumerate() {
            if c.len() != clip_len {
                return Err(TrainError::ClipLength {
                    index,
                    expected: clip_len,
                    found: c.len(),
                });
            }
        }
        Ok(Self { clips, clip_len })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    /// `[batch, 1, L]` of clips drawn uniformly with replacement.
    pub fn draw_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Tensor {
        let mut values = Vec::with_capacity(batch * self.clip_len);
        for _ in 0..batch {
            let i = rng.random_range(0..self.clips.len());
            values.extend_from_slice(&self.clips[i]);
        }
        Tensor::from_parts(vec![batch, 1, self.clip_len], values)
    }
}

/// Uniform draw from `1..=steps`.
pub fn sample_step<R: Rng + ?Sized>(steps: usize, rng: &mut R) -> usize {
    rng.random_range(1..=steps)
}

/// Adam first and second moments, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &EpsilonNet) -> Self {
        let zeros: Vec<Vec<f64>> = net
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.tensor.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Noise-prediction loss at fixed steps and noise, with parameter gradients
/// in [`EpsilonNet::parameters`] order.
pub fn loss_and_gradients(
    net: &EpsilonNet,
    x0: &Tensor,
    steps: &[usize],
    eps: &[f64],
    sched: &VarianceSchedule,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let (x_t, eps_t) = corrupt(x0, steps, eps, sched)?;
    let mut g = Graph::new();
    let xi = g.leaf(x_t);
    let target = g.leaf(eps_t);
    let steps_f: Vec<f64> = steps.iter().map(|&t| t as f64).collect();
    let (pred, ids) = net.forward_graph(&mut g, xi, &steps_f)?;
    let loss = g.mean_squared_error(pred, target).map_err(ModelError::from)?;
    g.backward(loss).map_err(ModelError::from)?;
    Ok((g.value(loss)[0], ids.gradients(&g)))
}

/// Noise-prediction loss without gradients.
pub fn loss_only(
    net: &EpsilonNet,
    x0: &Tensor,
    steps: &[usize],
    eps: &[f64],
    sched: &VarianceSchedule,
) -> Result<f64, TrainError> {
    let (x_t, eps_t) = corrupt(x0, steps, eps, sched)?;
    let pred = net.forward(&x_t, steps)?;
    let n = pred.len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(eps_t.values())
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / n)
}

fn corrupt(
    x0: &Tensor,
    steps: &[usize],
    eps: &[f64],
    sched: &VarianceSchedule,
) -> Result<(Tensor, Tensor), TrainError> {
    let shape = x0.shape().to_vec();
    if shape.len() != 3 || shape[1] != 1 || shape[0] != steps.len() || eps.len() != x0.len() {
        return Err(ModelError::InputShape {
            shape,
            steps: steps.len(),
        }
        .into());
    }
    let l = shape[2];
    let mut x_t = Vec::with_capacity(x0.len());
    for (b, &t) in steps.iter().enumerate() {
        let row = b * l..(b + 1) * l;
        let noisy = sched.forward_closed_form(&x0.values()[row.clone()], t, &eps[row])?;
        x_t.extend(noisy.x_t);
    }
    Ok((
        Tensor::from_parts(shape.clone(), x_t),
        Tensor::from_parts(shape, eps.to_vec()),
    ))
}

/// One training step on `batch` (`[B, 1, L]`): draws a step and noise per
/// batch item from `rng`, backpropagates the loss and applies one Adam update.
/// Returns the loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut EpsilonNet,
    batch: &Tensor,
    sched: &VarianceSchedule,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let step_index = opt.step + 1;
    let b = batch.shape()[0];
    let steps: Vec<usize> = (0..b)
        .map(|_| sample_step(sched.num_steps(), rng))
        .collect();
    let eps: Vec<f64> = (0..batch.len()).map(|_| rng.sample(StandardNormal)).collect();
    let (loss, grads) = match loss_and_gradients(net, batch, &steps, &eps, sched) {
        Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite(_)))) => {
            return Err(TrainError::NonFiniteLoss { step: step_index })
        }
        other => other?,
    };
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: step_index });
    }
    let adam = cfg.adam();
    for (i, p) in net.parameters_mut().iter_mut().enumerate() {
        adam_update(
            p.tensor.values_mut(),
            &grads[i],
            &mut opt.m[i],
            &mut opt.v[i],
            step_index,
            &adam,
        );
    }
    opt.step = step_index;
    Ok(loss)
}

/// Owns everything a training run mutates.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: EpsilonNet,
    pub schedule: VarianceSchedule,
    pub schedule_config: ScheduleConfig,
    pub config: TrainConfig,
    pub adam: AdamState,
}

impl Trainer {
    /// Fresh weights drawn from the run seed.
    pub fn new(
        model: ModelConfig,
        schedule_config: ScheduleConfig,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let schedule = schedule_config.build()?;
        let net = EpsilonNet::init(model, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        let adam = AdamState::new(&net);
        Ok(Self {
            net,
            schedule,
            schedule_config,
            config,
            adam,
        })
    }

    /// Restores a run. `max_steps` and logging cadence come from `config`;
    /// everything that determines the trajectory comes from the checkpoint.
    /// With `expected` set, the stored weights must match that model layout.
    pub fn resume(
        ck: Checkpoint,
        expected: Option<&ModelConfig>,
        config: Option<TrainConfig>,
    ) -> Result<Self, TrainError> {
        let model = expected.cloned().unwrap_or_else(|| ck.model.clone());
        let net = EpsilonNet::from_parameters(model, ck.params)?;
        let mut train = ck.train;
        if let Some(c) = config {
            train.max_steps = c.max_steps;
            train.checkpoint_every = c.checkpoint_every;
            train.log_every = c.log_every;
        }
        train.validate()?;
        let take = |t: Vec<Parameter>| t.into_iter().map(|p| p.tensor.into_values()).collect();
        Ok(Self {
            schedule: ck.schedule.build()?,
            schedule_config: ck.schedule,
            net,
            config: train,
            adam: AdamState {
                m: take(ck.adam_m),
                v: take(ck.adam_v),
                step: ck.step,
            },
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Random stream for step `k`: a function of `(seed, k)` alone.
    pub fn step_rng(&self, k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(k);
        rng
    }

    /// Draws the next batch and runs [`train_step`].
    pub fn next_step(&mut self, data: &Dataset) -> Result<f64, TrainError> {
        let mut rng = self.step_rng(self.adam.step + 1);
        let batch = data.draw_batch(self.config.batch_size, &mut rng);
        train_step(
            &mut self.net,
            &batch,
            &self.schedule,
            &mut self.adam,
            &self.config,
            &mut rng,
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let table = |values: &[Vec<f64>]| -> Vec<Parameter> {
            self.net
                .parameters()
                .iter()
                .zip(values)
                .map(|(p, v)| Parameter {
                    name: p.name.clone(),
                    tensor: Tensor::new(p.tensor.shape().to_vec(), v.clone())
                        .expect("moment buffers match parameter shapes"),
                })
                .collect()
        };
        Checkpoint {
            version: VERSION,
            model: self.net.config().clone(),
            train: self.config.clone(),
            schedule: self.schedule_config,
            step: self.adam.step,
            params: self.net.parameters().to_vec(),
            adam_m: table(&self.adam.m),
            adam_v: table(&self.adam.v),
            rng_state: RngState {
                seed: self.config.seed,
                next_stream: self.adam.step + 1,
            },
        }
    }
}

/// One telemetry row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub wall_ms: u128,
}

impl LogRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.step, self.loss, self.wall_ms)
    }
}

pub const LOG_HEADER: &str = "step,loss,wall_ms";

#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Checkpoint destination, written atomically.
    pub checkpoint_path: Option<PathBuf>,
    /// Append-only `step,loss,wall_ms` log.
    pub log_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of every step run in this call.
    pub losses: Vec<(u64, f64)>,
}

/// Runs steps until `trainer.config.max_steps`, logging every `log_every`
/// steps to `on_log` and the log file, and checkpointing every
/// `checkpoint_every` steps and at the end.
pub fn train_loop(
    data: &Dataset,
    trainer: &mut Trainer,
    opts: &LoopOptions,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome, TrainError> {
    if data.clip_len() != trainer.net.config().audio_length {
        return Err(TrainError::ClipLength {
            index: 0,
            expected: trainer.net.config().audio_length,
            found: data.clip_len(),
        });
    }
    let mut log = match &opts.log_path {
        Some(path) => {
            let io = |source| TrainError::Io {
                path: path.clone(),
                source,
            };
            let fresh = !path.exists() || std::fs::metadata(path).map_err(io)?.len() == 0;
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io)?;
            if fresh {
                writeln!(f, "{LOG_HEADER}").map_err(io)?;
            }
            Some((f, path.clone()))
        }
        None => None,
    };
    let save = |trainer: &Trainer| -> Result<Checkpoint, TrainError> {
        let ck = trainer.checkpoint();
        if let Some(path) = &opts.checkpoint_path {
            save_checkpoint(&ck, path)?;
        }
        Ok(ck)
    };

    let start = Instant::now();
    let mut losses = Vec::new();
    while trainer.step() < trainer.config.max_steps {
        let loss = trainer.next_step(data)?;
        let step = trainer.step();
        losses.push((step, loss));
        if step.is_multiple_of(trainer.config.log_every) {
            let rec = LogRecord {
                step,
                loss,
                wall_ms: start.elapsed().as_millis(),
            };
            on_log(&rec);
            if let Some((f, path)) = &mut log {
                writeln!(f, "{}", rec.csv_line()).map_err(|source| TrainError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
        }
        let every = trainer.config.checkpoint_every;
        if every > 0 && step.is_multiple_of(every) && step < trainer.config.max_steps {
            save(trainer)?;
        }
    }
    let checkpoint = save(trainer)?;
    Ok(TrainOutcome { checkpoint, losses })
}
