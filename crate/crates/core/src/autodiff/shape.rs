use super::pointwise::split_axis;
use super::{grad_slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(input))
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no operands"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(
                "concat",
                format!("axis {} out of range for {:?}", axis, base),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(
                    "concat",
                    format!("{:?} vs {:?} along axis {}", s, base, axis),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    /// Slice `start..start + len` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!(
                    "range {}..{} on axis {} of {:?}",
                    start,
                    start + len,
                    axis,
                    shape
                ),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(
                &x[(o * full + start) * inner..(o * full + start + len) * inner],
            );
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(value, Op::Narrow { input, axis, start })
    }
}

pub(super) fn backward_concat<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    inputs: &[Var],
    axis: usize,
    gy: &[T],
) {
    let base = nodes[inputs[0].index()].value.shape();
    let (outer, _, inner) = split_axis(base, axis);
    let total: usize = inputs
        .iter()
        .map(|v| nodes[v.index()].value.shape()[axis])
        .sum();
    let mut offset = 0;
    for &v in inputs {
        let len = nodes[v.index()].value.shape()[axis] * inner;
        if let Some(gx) = grad_slot(nodes, grads, v) {
            for o in 0..outer {
                let src = &gy[o * total * inner + offset..][..len];
                for (d, &g) in gx[o * len..(o + 1) * len].iter_mut().zip(src) {
                    *d += g;
                }
            }
        }
        offset += len;
    }
}

pub(super) fn backward_narrow<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    axis: usize,
    start: usize,
    out: &Tensor<T>,
    gy: &[T],
) {
    let shape = nodes[input.index()].value.shape();
    let (outer, full, inner) = split_axis(shape, axis);
    let len = out.shape()[axis];
    if let Some(gx) = grad_slot(nodes, grads, input) {
        for o in 0..outer {
            let dst = &mut gx[(o * full + start) * inner..(o * full + start + len) * inner];
            for (d, &g) in dst
                .iter_mut()
                .zip(&gy[o * len * inner..(o + 1) * len * inner])
            {
                *d += g;
            }
        }
    }
}
