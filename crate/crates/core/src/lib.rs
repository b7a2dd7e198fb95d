//! Diffusion-probabilistic generation of 1-D waveforms.
//!
//! * [`schedule`]: variance schedules, forward corruption, reverse posteriors
//! * [`numerics`]: tensors with reverse-mode differentiation
//! * [`model`]: the dilated-convolution noise predictor
//! * [`training`]: noise-prediction training with Adam, checkpoints
//! * [`sampling`]: ancestral and reduced-step generation
//! * [`audio`]: WAV I/O, resampling, corpus preparation, mel analysis

pub mod audio;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod schedule;
pub mod training;

pub use audio::{AudioError, Waveform};
pub use model::{step_embedding, EpsilonNet, ModelConfig, ModelError, Parameter};
pub use numerics::{Graph, NodeId, Tensor, TensorError};
pub use schedule::{NoisySample, Posterior, ScheduleError, VarianceSchedule};
pub use sampling::{fast_sample, sample, SampleError, SamplerConfig};
pub use training::{Checkpoint, ScheduleConfig, TrainConfig, TrainError, Trainer};
