use super::kernels::{self, ConvDims};
use super::{Tensor, TensorError};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Swish => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and the output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    MeanSquaredError(NodeId, NodeId),
    Activation(NodeId, Activation),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        dims: ConvDims,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        rows: usize,
    },
    AddOverTime(NodeId, NodeId),
    SliceChannels {
        input: NodeId,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of tensor operations, recorded in execution (hence topological) order.
///
/// With recording disabled the graph keeps no backward information and
/// [`Graph::release`] frees intermediate buffers, so long inference passes
/// stay within memory.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph for forward-only evaluation.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let needs_grad = self.recording && tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].tensor.values()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    pub fn take_tensor(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].tensor, Tensor::scalar(0.0))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    /// Drops the values of an intermediate result. Only effective when the
    /// graph is not recording; a recording graph needs every value for backward.
    pub fn release(&mut self, id: NodeId) {
        if !self.recording {
            self.nodes[id.0].tensor.release();
        }
    }

    fn push(&mut self, tensor: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node {
            tensor,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        self.recording && ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    fn emit(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        op: Op,
        inputs: &[NodeId],
    ) -> Result<NodeId, TensorError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(name));
        }
        let needs_grad = self.needs(inputs);
        Ok(self.push(Tensor::from_parts(shape, values), op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("add", a, b)?;
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.emit("add", shape, v, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.emit("mul", shape, v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        let v = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.emit("scale", shape, v, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let s = self.value(a).iter().sum();
        self.emit("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    /// Mean over all elements of `(a - b)^2`.
    pub fn mean_squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mean_squared_error", a, b)?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.emit(
            "mean_squared_error",
            vec![1],
            vec![s / n],
            Op::MeanSquaredError(a, b),
            &[a, b],
        )
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> Result<NodeId, TensorError> {
        let v = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        let shape = self.shape(a).to_vec();
        self.emit("activation", shape, v, Op::Activation(a, kind), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.activation(a, Activation::Relu)
    }

    pub fn swish(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.activation(a, Activation::Swish)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.activation(a, Activation::Sigmoid)
    }

    /// Centered dilated convolution over `[B, Cin, L]` with zero padding of
    /// `dilation * (K - 1) / 2` on each side; output is `[B, Cout, L]`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        dilation: usize,
    ) -> Result<NodeId, TensorError> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        if ws[2] % 2 == 0 {
            return Err(TensorError::EvenKernel(ws[2]));
        }
        if dilation == 0 {
            return Err(TensorError::ZeroDilation);
        }
        if xs[1] != ws[1] || bs[0] != ws[0] || xs[2] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let dims = ConvDims {
            batch: xs[0],
            in_channels: xs[1],
            out_channels: ws[0],
            kernel: ws[2],
            len: xs[2],
            dilation,
        };
        let out = kernels::conv1d_forward(
            &dims,
            self.value(input),
            self.value(weight),
            self.value(bias),
        );
        self.emit(
            "conv1d",
            vec![dims.batch, dims.out_channels, dims.len],
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            },
            &[input, weight, bias],
        )
    }

    /// Affine map over the trailing dimension, broadcast over leading ones.
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        let d_in = *xs.last().expect("rank >= 1");
        if ws.len() != 2 || bs.len() != 1 || ws[1] != d_in || bs[0] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let d_out = ws[0];
        let rows = self.value(input).len() / d_in;
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = d_out;
        let out = kernels::linear_forward(
            rows,
            d_in,
            d_out,
            self.value(input),
            self.value(weight),
            self.value(bias),
        );
        self.emit(
            "linear",
            shape,
            out,
            Op::Linear {
                input,
                weight,
                bias,
                rows,
            },
            &[input, weight, bias],
        )
    }

    /// `x[B, C, L] + e[B, C]`, with `e` repeated along time.
    pub fn add_over_time(&mut self, x: NodeId, e: NodeId) -> Result<NodeId, TensorError> {
        let (xs, es) = (self.shape(x), self.shape(e));
        if xs.len() != 3 || es.len() != 2 || xs[0] != es[0] || xs[1] != es[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_over_time",
                left: xs.to_vec(),
                right: es.to_vec(),
            });
        }
        let l = xs[2];
        let shape = xs.to_vec();
        let mut out = self.value(x).to_vec();
        for (row, &bias) in out.chunks_mut(l).zip(self.value(e)) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        self.emit("add_over_time", shape, out, Op::AddOverTime(x, e), &[x, e])
    }

    /// Channels `start..start + count` of a `[B, C, L]` tensor.
    pub fn slice_channels(
        &mut self,
        input: NodeId,
        start: usize,
        count: usize,
    ) -> Result<NodeId, TensorError> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 || start + count > xs[1] || count == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_channels",
                left: xs,
                right: vec![start, count],
            });
        }
        let (b, c, l) = (xs[0], xs[1], xs[2]);
        let src = self.value(input);
        let mut out = Vec::with_capacity(b * count * l);
        for bi in 0..b {
            out.extend_from_slice(&src[(bi * c + start) * l..(bi * c + start + count) * l]);
        }
        self.emit(
            "slice_channels",
            vec![b, count, l],
            out,
            Op::SliceChannels { input, start },
            &[input],
        )
    }

    /// Propagates `d loss / d node` from a scalar `loss` to every leaf that
    /// requires a gradient. Leaf gradients accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarBackward(self.shape(loss).to_vec()));
        }
        if !self.recording {
            return Err(TensorError::NotRecording);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].tensor.accumulate_grad(&g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: NodeId,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let n = self.nodes[id.0].tensor.len();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match self.nodes[idx].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(buf) = self.grad_buf(grads, id) {
                        buf.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (id, other) in [(a, b), (b, a)] {
                    let ov = self.value(other);
                    if let Some(buf) = self.grad_buf(grads, id) {
                        for ((d, g), o) in buf.iter_mut().zip(g).zip(ov) {
                            *d += g * o;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(buf) = self.grad_buf(grads, a) {
                    buf.iter_mut().zip(g).for_each(|(d, g)| *d += g * f);
                }
            }
            Op::Sum(a) => {
                if let Some(buf) = self.grad_buf(grads, a) {
                    buf.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanSquaredError(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let k = 2.0 * g[0] / av.len() as f64;
                for (id, sign) in [(a, 1.0), (b, -1.0)] {
                    if let Some(buf) = self.grad_buf(grads, id) {
                        for ((d, x), y) in buf.iter_mut().zip(av).zip(bv) {
                            *d += sign * k * (x - y);
                        }
                    }
                }
            }
            Op::Activation(a, kind) => {
                let (x, y) = (self.value(a), self.nodes[idx].tensor.values());
                if let Some(buf) = self.grad_buf(grads, a) {
                    for (((d, g), x), y) in buf.iter_mut().zip(g).zip(x).zip(y) {
                        *d += g * kind.derivative(*x, *y);
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            } => {
                let (xv, wv) = (self.value(input), self.value(weight));
                // three disjoint buffers; take them out to satisfy the borrow checker
                let mut gi = self.grad_buf(grads, input).map(std::mem::take);
                let mut gw = self.grad_buf(grads, weight).map(std::mem::take);
                let mut gb = self.grad_buf(grads, bias).map(std::mem::take);
                kernels::conv1d_backward(
                    &dims,
                    xv,
                    wv,
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                restore(grads, input, gi);
                restore(grads, weight, gw);
                restore(grads, bias, gb);
            }
            Op::Linear {
                input,
                weight,
                bias,
                rows,
            } => {
                let (xv, wv) = (self.value(input), self.value(weight));
                let ws = self.shape(weight);
                let (d_out, d_in) = (ws[0], ws[1]);
                let mut gi = self.grad_buf(grads, input).map(std::mem::take);
                let mut gw = self.grad_buf(grads, weight).map(std::mem::take);
                let mut gb = self.grad_buf(grads, bias).map(std::mem::take);
                kernels::linear_backward(
                    rows,
                    d_in,
                    d_out,
                    xv,
                    wv,
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                restore(grads, input, gi);
                restore(grads, weight, gw);
                restore(grads, bias, gb);
            }
            Op::AddOverTime(x, e) => {
                let l = self.shape(x)[2];
                if let Some(buf) = self.grad_buf(grads, x) {
                    buf.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(buf) = self.grad_buf(grads, e) {
                    for (d, row) in buf.iter_mut().zip(g.chunks(l)) {
                        *d += row.iter().sum::<f64>();
                    }
                }
            }
            Op::SliceChannels { input, start } => {
                let xs = self.shape(input).to_vec();
                let (b, c, l) = (xs[0], xs[1], xs[2]);
                let count = self.nodes[idx].tensor.shape()[1];
                if let Some(buf) = self.grad_buf(grads, input) {
                    for bi in 0..b {
                        let dst = &mut buf[(bi * c + start) * l..(bi * c + start + count) * l];
                        let src = &g[bi * count * l..(bi + 1) * count * l];
                        dst.iter_mut().zip(src).for_each(|(d, g)| *d += g);
                    }
                }
            }
        }
    }
}

fn restore(grads: &mut [Option<Vec<f64>>], id: NodeId, buf: Option<Vec<f64>>) {
    if let Some(buf) = buf {
        grads[id.0] = Some(buf);
    }
}
