//! The noise-prediction network `eps(x_t, t)`.
//!
//! A sinusoidal embedding of the diffusion step feeds a two-layer MLP whose
//! output is projected into every residual layer. Each residual layer runs a
//! centered dilated convolution followed by a `tanh * sigmoid` gate; gated
//! activations feed both the residual path and a skip path, and the summed
//! skips go through a two-convolution output head. The last convolution is
//! zero-initialized so a fresh network predicts exactly zero noise.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Graph, NodeId, Tensor, TensorError};

pub const EMBEDDING_DIM: usize = 128;
pub const EMBEDDING_HIDDEN: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("diffusion step {0} must be finite and non-negative")]
    InvalidStep(f64),
    #[error("input must be [batch, 1, length] with one step per batch item, got {shape:?} and {steps} steps")]
    InputShape { shape: Vec<usize>, steps: usize },
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{expected}` expected, found `{found}`")]
    ParamName { expected: String, found: String },
    #[error("missing tensor `{0}`")]
    MissingParam(String),
    #[error("unexpected extra tensor `{0}`")]
    UnexpectedParam(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub residual_layers: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub kernel_size: usize,
    pub dilation_cycle_length: usize,
    pub embedding_dim: usize,
    pub audio_length: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            residual_layers: 30,
            residual_channels: 64,
            skip_channels: 64,
            kernel_size: 3,
            dilation_cycle_length: 10,
            embedding_dim: EMBEDDING_DIM,
            audio_length: 16000,
        }
    }
}

impl ModelConfig {
    /// 30 layers at 32 channels, small enough to train on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            residual_channels: 32,
            skip_channels: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.residual_layers == 0 {
            return fail("residual_layers must be >= 1");
        }
        if self.residual_channels == 0 || self.skip_channels == 0 {
            return fail("channel counts must be >= 1");
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail("kernel_size must be odd");
        }
        if self.dilation_cycle_length == 0 {
            return fail("dilation_cycle_length must be >= 1");
        }
        if self.embedding_dim != EMBEDDING_DIM {
            return fail("embedding_dim is fixed at 128");
        }
        if self.audio_length == 0 {
            return fail("audio_length must be >= 1");
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % self.dilation_cycle_length)
    }

    /// One-sided receptive field of the residual stack, in samples.
    pub fn receptive_field_radius(&self) -> usize {
        (0..self.residual_layers)
            .map(|i| self.dilation(i) * (self.kernel_size - 1) / 2)
            .sum()
    }
}

/// `10^(4i/63)` for `i = 0..64`, each correctly rounded. Computing these with
/// `powf` loses up to a few ulps, which at the top frequency is already a
/// phase error above 1e-12.
const EMBEDDING_FREQUENCIES: [f64; EMBEDDING_DIM / 2] = [
    1.0, 1.1574228805920572, 1.3396277245180157, 1.5505157798326246,
    1.7946024402973164, 2.0771139259664553, 2.404099183509972, 2.7825594022071245,
    3.220597918721083, 3.7275937203149403, 4.314402261443782, 4.993587893473148,
    5.779692884153314, 6.689548786914144, 7.74263682681127, 8.961505019466045,
    10.372250954070571, 12.005080577484074, 13.894954943731376, 16.082338776670415,
    18.614066873551216, 21.544346900318835, 24.935920049841588, 28.86140441430089,
    33.40484983513245, 38.66353752192411, 44.750062972504494, 51.79474679231211,
    59.948425031894104, 69.38567878737186, 80.30857221391514, 92.95097898806492,
    107.58358985421788, 124.51970847350329, 144.12195967188538, 166.81005372000587,
    193.06977288832502, 223.46337269165943, 258.6416205275969, 299.35772947204896,
    346.4834855730367, 401.02791394952067, 464.1588833612779, 537.228111832403,
    621.8001087320918, 719.685673001152, 832.9806647658268, 964.11088049075,
    1115.8839925077484, 1291.5496650148839, 1494.8691337092334, 1730.1957388458943,
    2002.5681360431176, 2317.818180600892, 2682.6957952797256, 3105.01349512486,
    3593.813663804627, 4159.562163071847, 4814.372420784346, 5572.264795507173,
    6449.466771037623, 7464.760408417121, 8639.884494839685, 10000.0,
];

/// Sinusoidal step embedding: `sin(10^(4i/63) t)` for `i = 0..64`, then the
/// matching cosines. Fractional steps are accepted.
pub fn step_embedding(t: f64) -> Result<Vec<f64>, ModelError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(ModelError::InvalidStep(t));
    }
    let half = EMBEDDING_DIM / 2;
    let mut out = vec![0.0; EMBEDDING_DIM];
    for (i, freq) in EMBEDDING_FREQUENCIES.iter().enumerate() {
        out[i] = (freq * t).sin();
        out[half + i] = (freq * t).cos();
    }
    Ok(out)
}

/// One named weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    zero: bool,
}

const HEAD: usize = 6;
const PER_LAYER: usize = 8;

fn layout(cfg: &ModelConfig) -> Vec<Spec> {
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize, zero: bool| {
        specs.push(Spec {
            name,
            shape,
            fan_in,
            zero,
        })
    };
    let (c, s, k) = (cfg.residual_channels, cfg.skip_channels, cfg.kernel_size);
    let (e, h) = (EMBEDDING_DIM, EMBEDDING_HIDDEN);
    let mut layer = |prefix: &str, w: Vec<usize>, fan_in: usize, zero: bool| {
        let out = w[0];
        push(format!("{prefix}.weight"), w, fan_in, zero);
        push(format!("{prefix}.bias"), vec![out], fan_in, zero);
    };
    layer("input_proj", vec![c, 1, 1], 1, false);
    layer("embed_fc1", vec![h, e], e, false);
    layer("embed_fc2", vec![h, h], h, false);
    for i in 0..cfg.residual_layers {
        layer(&format!("layers.{i}.step_fc"), vec![c, h], h, false);
        layer(&format!("layers.{i}.dilated_conv"), vec![2 * c, c, k], c * k, false);
        layer(&format!("layers.{i}.residual_proj"), vec![c, c, 1], c, false);
        layer(&format!("layers.{i}.skip_proj"), vec![s, c, 1], c, false);
    }
    layer("out_conv1", vec![s, s, 1], s, false);
    layer("out_conv2", vec![1, s, 1], s, true);
    specs
}

/// Graph handles of the parameters used in one forward pass.
#[derive(Debug, Clone)]
pub struct ParamIds(Vec<NodeId>);

impl ParamIds {
    pub fn ids(&self) -> &[NodeId] {
        &self.0
    }

    /// Gradients in parameter order, zero-filled where nothing flowed.
    pub fn gradients(&self, graph: &Graph) -> Vec<Vec<f64>> {
        self.0
            .iter()
            .map(|id| match graph.grad(*id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; graph.tensor(*id).len()],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonNet {
    config: ModelConfig,
    params: Vec<Parameter>,
}

impl EpsilonNet {
    /// Uniform fan-in initialization, `U(-sqrt(1/fan_in), sqrt(1/fan_in))`,
    /// with the final output convolution set to zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let params = layout(&config)
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let bound = (1.0 / spec.fan_in as f64).sqrt();
                let values = if spec.zero {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                Parameter {
                    name: spec.name,
                    tensor: Tensor::from_parts(spec.shape, values),
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a network from named tensors, which must match the config's
    /// layout name for name and shape for shape.
    pub fn from_parameters(
        config: ModelConfig,
        params: Vec<Parameter>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        check_layout(&config, &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Predicts the noise in `x` (`[B, 1, L]`) at integer steps.
    pub fn forward(&self, x: &Tensor, steps: &[usize]) -> Result<Tensor, ModelError> {
        let steps: Vec<f64> = steps.iter().map(|&t| t as f64).collect();
        self.forward_fractional(x, &steps)
    }

    /// Like [`EpsilonNet::forward`] but with real-valued step embeddings.
    pub fn forward_fractional(&self, x: &Tensor, steps: &[f64]) -> Result<Tensor, ModelError> {
        let mut g = Graph::inference();
        let xi = g.leaf(x.clone());
        let (out, _) = self.forward_graph(&mut g, xi, steps)?;
        Ok(g.take_tensor(out))
    }

    /// Records the forward pass on `g`. Parameters enter as gradient-tracking
    /// leaves when the graph is recording.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: NodeId,
        steps: &[f64],
    ) -> Result<(NodeId, ParamIds), ModelError> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != 1 || xs[0] != steps.len() || xs[2] == 0 {
            return Err(ModelError::InputShape {
                shape: xs,
                steps: steps.len(),
            });
        }
        let batch = xs[0];
        let mut emb = Vec::with_capacity(batch * EMBEDDING_DIM);
        for &t in steps {
            emb.extend(step_embedding(t)?);
        }

        let track = g.is_recording();
        let ids: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| {
                let t = p.tensor.clone();
                g.leaf(if track { t.with_grad() } else { t })
            })
            .collect();
        let p = |i: usize| (ids[2 * i], ids[2 * i + 1]);

        let emb = g.leaf(Tensor::from_parts(vec![batch, EMBEDDING_DIM], emb));
        let (w, b) = p(1);
        let e1 = g.linear(emb, w, b)?;
        let e1 = g.swish(e1)?;
        let (w, b) = p(2);
        let e2 = g.linear(e1, w, b)?;
        let cond = g.swish(e2)?;

        let (w, b) = p(0);
        let h0 = g.conv1d(x, w, b, 1)?;
        let mut h = g.relu(h0)?;
        g.release(h0);

        let c = self.config.residual_channels;
        let mut skip_total: Option<NodeId> = None;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..self.config.residual_layers {
            let base = (HEAD + PER_LAYER * i) / 2;
            let (w, b) = p(base);
            let step = g.linear(cond, w, b)?;
            let y = g.add_over_time(h, step)?;
            let (w, b) = p(base + 1);
            let y2 = g.conv1d(y, w, b, self.config.dilation(i))?;
            g.release(y);
            let filt = g.slice_channels(y2, 0, c)?;
            let gate_in = g.slice_channels(y2, c, c)?;
            g.release(y2);
            let filt_t = g.tanh(filt)?;
            let gate_s = g.sigmoid(gate_in)?;
            g.release(filt);
            g.release(gate_in);
            let gated = g.mul(filt_t, gate_s)?;
            g.release(filt_t);
            g.release(gate_s);

            let (w, b) = p(base + 3);
            let skip = g.conv1d(gated, w, b, 1)?;
            skip_total = Some(match skip_total {
                None => skip,
                Some(total) => {
                    let s = g.add(total, skip)?;
                    g.release(total);
                    g.release(skip);
                    s
                }
            });

            let (w, b) = p(base + 2);
            let res = g.conv1d(gated, w, b, 1)?;
            g.release(gated);
            let sum = g.add(res, h)?;
            g.release(res);
            g.release(h);
            h = g.scale(sum, inv_sqrt2)?;
            g.release(sum);
        }
        g.release(h);

        let skip_total = skip_total.expect("at least one residual layer");
        let out_base = (HEAD + PER_LAYER * self.config.residual_layers) / 2;
        let a = g.relu(skip_total)?;
        g.release(skip_total);
        let (w, b) = p(out_base);
        let a2 = g.conv1d(a, w, b, 1)?;
        g.release(a);
        let a3 = g.relu(a2)?;
        g.release(a2);
        let (w, b) = p(out_base + 1);
        let out = g.conv1d(a3, w, b, 1)?;
        g.release(a3);
        Ok((out, ParamIds(ids)))
    }
}

fn check_layout(cfg: &ModelConfig, params: &[Parameter]) -> Result<(), ModelError> {
    let specs = layout(cfg);
    for (i, spec) in specs.iter().enumerate() {
        let Some(p) = params.get(i) else {
            return Err(ModelError::MissingParam(spec.name.clone()));
        };
        if p.name != spec.name {
            return Err(ModelError::ParamName {
                expected: spec.name.clone(),
                found: p.name.clone(),
            });
        }
        if p.tensor.shape() != spec.shape.as_slice() {
            return Err(ModelError::ParamShape {
                name: spec.name.clone(),
                expected: spec.shape.clone(),
                found: p.tensor.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = params.get(specs.len()) {
        return Err(ModelError::UnexpectedParam(extra.name.clone()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frequency_table_is_geometric() {
        for (i, f) in EMBEDDING_FREQUENCIES.iter().enumerate() {
            let approx = 10f64.powf(4.0 * i as f64 / 63.0);
            assert!((f - approx).abs() <= 8.0 * f64::EPSILON * approx, "i = {i}");
        }
        assert_eq!(EMBEDDING_FREQUENCIES[0], 1.0);
        assert_eq!(EMBEDDING_FREQUENCIES[63], 10000.0);
    }

    fn small() -> ModelConfig {
        ModelConfig {
            residual_layers: 3,
            residual_channels: 4,
            skip_channels: 5,
            kernel_size: 3,
            dilation_cycle_length: 2,
            embedding_dim: 128,
            audio_length: 16,
        }
    }

    #[test]
    fn embedding_at_zero_and_one() {
        let e = step_embedding(0.0).unwrap();
        assert!(e[..64].iter().all(|&v| v == 0.0));
        assert!(e[64..].iter().all(|&v| v == 1.0));
        let e = step_embedding(1.0).unwrap();
        assert_eq!(e[0], 1f64.sin());
        assert_eq!(e[64], 1f64.cos());
        assert!((e[63] - 10_000f64.sin()).abs() < 1e-12);
        assert!(step_embedding(-1.0).is_err());
        assert!(step_embedding(f64::NAN).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = [
            ModelConfig {
                residual_layers: 0,
                ..small()
            },
            ModelConfig {
                kernel_size: 4,
                ..small()
            },
            ModelConfig {
                embedding_dim: 64,
                ..small()
            },
            ModelConfig {
                dilation_cycle_length: 0,
                ..small()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
        }
    }

    #[test]
    fn dilations_cycle_through_powers_of_two() {
        let cfg = ModelConfig::default();
        let d: Vec<usize> = (0..12).map(|i| cfg.dilation(i)).collect();
        assert_eq!(d, vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1, 2]);
        // three cycles of 1 + 2 + ... + 512
        assert_eq!(cfg.receptive_field_radius(), 3 * 1023);
    }

    #[test]
    fn init_is_deterministic_with_zero_head() {
        let a = EpsilonNet::init(small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = EpsilonNet::init(small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for name in ["out_conv2.weight", "out_conv2.bias"] {
            assert!(a.parameter(name).unwrap().tensor.values().iter().all(|&v| v == 0.0));
        }
        let c = EpsilonNet::init(small(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_follows_config() {
        let cfg = small();
        let net = EpsilonNet::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (c, s, k) = (4, 5, 3);
        let per_layer = (512 * c + c) + (2 * c * c * k + 2 * c) + (c * c + c) + (s * c + s);
        let expected = (c + c)
            + (512 * 128 + 512)
            + (512 * 512 + 512)
            + 3 * per_layer
            + (s * s + s)
            + (s + 1);
        assert_eq!(net.num_parameters(), expected);
    }

    #[test]
    fn fresh_net_outputs_zero_and_preserves_shape() {
        let net = EpsilonNet::init(small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in [1, 17, 256] {
            let x = Tensor::new(
                vec![2, 1, len],
                (0..2 * len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let y = net.forward(&x, &[1, 40]).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = EpsilonNet::init(small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = Tensor::zeros(vec![2, 1, 8]).unwrap();
        assert!(matches!(
            net.forward(&x, &[1]),
            Err(ModelError::InputShape { .. })
        ));
        let x = Tensor::zeros(vec![1, 2, 8]).unwrap();
        assert!(matches!(
            net.forward(&x, &[1]),
            Err(ModelError::InputShape { .. })
        ));
        let x = Tensor::zeros(vec![1, 1, 8]).unwrap();
        assert!(matches!(
            net.forward_fractional(&x, &[-2.0]),
            Err(ModelError::InvalidStep(_))
        ));
    }

    #[test]
    fn reload_checks_names_and_shapes() {
        let net = EpsilonNet::init(small(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let again =
            EpsilonNet::from_parameters(small(), net.parameters().to_vec()).unwrap();
        assert_eq!(again, net);

        let fewer = ModelConfig {
            residual_layers: 2,
            ..small()
        };
        match EpsilonNet::from_parameters(fewer, net.parameters().to_vec()) {
            Err(ModelError::ParamName { expected, found }) => {
                assert_eq!(expected, "out_conv1.weight");
                assert_eq!(found, "layers.2.step_fc.weight");
            }
            other => panic!("unexpected {other:?}"),
        }
        let wider = ModelConfig {
            residual_channels: 6,
            ..small()
        };
        match EpsilonNet::from_parameters(wider, net.parameters().to_vec()) {
            Err(ModelError::ParamShape { name, .. }) => assert_eq!(name, "input_proj.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
