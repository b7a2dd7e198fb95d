//! Minimal tensor arithmetic with reverse-mode differentiation.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{sigmoid, Activation, Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("unsupported tensor rank {0} (expected 1..=3)")]
    UnsupportedRank(usize),
    #[error("shape {shape:?} needs a different element count than {found}")]
    ElementCount { shape: Vec<usize>, found: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("convolution kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("dilation must be at least 1")]
    ZeroDilation,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),
    #[error("backward on a graph that was not recording")]
    NotRecording,
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
}
