//! Reverse-mode differentiation over a recorded op list.
//!
//! A [`Graph`] owns every value produced during a forward pass. Ops append a
//! node holding the output tensor plus whatever context the backward rule
//! needs (batch-norm statistics, selected median indices, ...). Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Graph::backward`] walks it in reverse.

pub(crate) mod conv;
pub mod gradcheck;
mod linear;
mod norm;
mod pointwise;
mod reduce;
mod shape;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

pub use conv::{PadMode, PadSpec};
pub use norm::{BatchStats, BnMode};
pub use reduce::ReduceKind;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: PadSpec,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    ChannelScale {
        input: Var,
        gate: Var,
    },
    Reduce {
        input: Var,
        kind: ReduceKind,
    },
    /// One selected flat input index per output element.
    MedianLine {
        input: Var,
        selected: Vec<u32>,
    },
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::BatchNorm { .. } => "batch_norm",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::Linear { .. } => "fully_connected",
            Op::ChannelScale { .. } => "channel_scale",
            Op::Reduce { .. } => "reduce",
            Op::MedianLine { .. } => "median_pool_line",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::AddScalar(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::GlobalAvgPool(a)
            | Op::Reshape(a) => vec![*a],
            Op::Softmax { input, .. }
            | Op::Reduce { input, .. }
            | Op::MedianLine { input, .. }
            | Op::Narrow { input, .. } => vec![*input],
            Op::BatchNorm {
                input,
                scale,
                shift,
                ..
            } => vec![*input, *scale, *shift],
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::ChannelScale { input, gate } => vec![*input, *gate],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Recording of one forward pass plus the gradient buffers filled by
/// [`Graph::backward`].
///
/// Single-threaded by contract; build one graph per forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            check_finite: false,
        }
    }

    /// Makes every op fail with [`Error::NonFinite`] if it produces a NaN or
    /// infinity.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` target with respect to `v`, if any
    /// path reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad matches value shape"))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub(crate) fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "output of {} (node {})",
                op.name(),
                self.nodes.len()
            )));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Fills gradient buffers with d`loss`/d`node` for every node that
    /// `loss` depends on. Previous gradients are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.nodes[loss.0].value.len();
        if numel != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(out_grad) = self.grads[idx].take() else {
                continue;
            };
            backward_node(&self.nodes, &mut self.grads, idx, &out_grad);
            self.grads[idx] = Some(out_grad);
        }
        Ok(())
    }

    /// Hash of every discrete decision taken during the forward pass (relu
    /// masks, |x| signs, median selections). Two evaluations with the same
    /// signature lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    i.hash(&mut h);
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::Reduce {
                    input,
                    kind: ReduceKind::MeanAbs,
                } => {
                    i.hash(&mut h);
                    for v in self.value(*input).data() {
                        let s: i8 = if *v > T::zero() {
                            1
                        } else if *v < T::zero() {
                            -1
                        } else {
                            0
                        };
                        s.hash(&mut h);
                    }
                }
                Op::MedianLine { selected, .. } => {
                    i.hash(&mut h);
                    selected.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` for constants.
pub(crate) fn grad_slot<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backward_node<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], idx: usize, gy: &[T]) {
    let node = &nodes[idx];
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            pad,
        } => conv::backward(nodes, grads, *input, *kernel, *bias, *stride, *pad, gy),
        Op::Add(a, b) => pointwise::backward_add(nodes, grads, *a, *b, gy, T::one()),
        Op::Sub(a, b) => pointwise::backward_add(nodes, grads, *a, *b, gy, -T::one()),
        Op::Mul(a, b) => pointwise::backward_mul(nodes, grads, *a, *b, gy),
        Op::Div(a, b) => pointwise::backward_div(nodes, grads, *a, *b, &node.value, gy),
        Op::AddScalar(a) => pointwise::backward_scale(nodes, grads, *a, T::one(), gy),
        Op::Scale(a, s) => pointwise::backward_scale(nodes, grads, *a, *s, gy),
        Op::Relu(a) => pointwise::backward_relu(nodes, grads, *a, gy),
        Op::Sigmoid(a) => pointwise::backward_sigmoid(nodes, grads, *a, &node.value, gy),
        Op::Softmax { input, axis } => {
            pointwise::backward_softmax(nodes, grads, *input, *axis, &node.value, gy)
        }
        Op::BatchNorm {
            input,
            scale,
            shift,
            xhat,
            inv_std,
            train,
        } => norm::backward(
            nodes, grads, *input, *scale, *shift, xhat, inv_std, *train, gy,
        ),
        Op::GlobalAvgPool(a) => reduce::backward_gap(nodes, grads, *a, gy),
        Op::Linear {
            input,
            weight,
            bias,
        } => linear::backward_linear(nodes, grads, *input, *weight, *bias, gy),
        Op::ChannelScale { input, gate } => {
            linear::backward_channel_scale(nodes, grads, *input, *gate, gy)
        }
        Op::Reduce { input, kind } => reduce::backward_reduce(nodes, grads, *input, *kind, gy),
        Op::MedianLine { input, selected } => {
            if let Some(gx) = grad_slot(nodes, grads, *input) {
                for (&s, &g) in selected.iter().zip(gy) {
                    gx[s as usize] += g;
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(gx) = grad_slot(nodes, grads, *a) {
                for (d, &g) in gx.iter_mut().zip(gy) {
                    *d += g;
                }
            }
        }
        Op::Concat { inputs, axis } => shape::backward_concat(nodes, grads, inputs, *axis, gy),
        Op::Narrow { input, axis, start } => {
            shape::backward_narrow(nodes, grads, *input, *axis, *start, &node.value, gy)
        }
    }
}
