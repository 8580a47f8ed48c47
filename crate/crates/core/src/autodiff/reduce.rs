use super::{grad_slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dims4, Tensor};

/// Scalar reductions used by the losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    /// `mean(|x|)`, subgradient 0 at `x == 0`.
    MeanAbs,
    /// `mean(x^2)`
    MeanSq,
    Mean,
}

impl<T: Scalar> Graph<T> {
    /// Reduces every element to a one-element tensor.
    pub fn reduce(&mut self, input: Var, kind: ReduceKind) -> Result<Var> {
        let x = self.value(input).data();
        if x.is_empty() {
            return Err(Error::dim("reduce", "cannot reduce an empty tensor"));
        }
        let n = x.len() as f64;
        let total: f64 = match kind {
            ReduceKind::MeanAbs => x.iter().map(|v| v.as_f64().abs()).sum(),
            ReduceKind::MeanSq => x.iter().map(|v| v.as_f64().powi(2)).sum(),
            ReduceKind::Mean => x.iter().map(|v| v.as_f64()).sum(),
        };
        self.push(Tensor::scalar(T::of(total / n)), Op::Reduce { input, kind })
    }

    /// Spatial mean of every channel: `N x C x H x W -> N x C x 1 x 1`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(input), "global_avg_pool")?;
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let out: Vec<T> = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(Tensor::new([n, c, 1, 1], out)?, Op::GlobalAvgPool(input))
    }
}

pub(super) fn backward_reduce<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    kind: ReduceKind,
    gy: &[T],
) {
    let x = nodes[input.index()].value.data();
    let scale = gy[0] / T::of(x.len() as f64);
    let two = T::of(2.0);
    if let Some(gx) = grad_slot(nodes, grads, input) {
        for (d, &v) in gx.iter_mut().zip(x) {
            *d += match kind {
                ReduceKind::Mean => scale,
                ReduceKind::MeanSq => scale * two * v,
                ReduceKind::MeanAbs => {
                    if v > T::zero() {
                        scale
                    } else if v < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                }
            };
        }
    }
}

pub(super) fn backward_gap<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    gy: &[T],
) {
    let (_, _, h, w) = nodes[input.index()].value.dims4().expect("validated");
    let hw = h * w;
    let inv = T::of(1.0 / hw as f64);
    if let Some(gx) = grad_slot(nodes, grads, input) {
        for (plane, &g) in gx.chunks_mut(hw).zip(gy) {
            for d in plane {
                *d += g * inv;
            }
        }
    }
}
