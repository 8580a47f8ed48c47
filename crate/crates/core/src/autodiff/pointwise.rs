use super::{grad_slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        self.push(v, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Sum of several equally shaped tensors.
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items
            .split_first()
            .ok_or_else(|| Error::dim("add_n", "no operands"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `max(x, 0)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// Softmax along `axis`, e.g. over the group axis of an `N x G x C`
    /// tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {} out of range for {:?}", axis, shape),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        self.push(v, Op::Softmax { input: a, axis })
    }
}

pub(super) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(super) fn backward_add<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    b: Var,
    gy: &[T],
    sign_b: T,
) {
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for (d, &g) in ga.iter_mut().zip(gy) {
            *d += g;
        }
    }
    if let Some(gb) = grad_slot(nodes, grads, b) {
        for (d, &g) in gb.iter_mut().zip(gy) {
            *d += sign_b * g;
        }
    }
}

pub(super) fn backward_mul<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    b: Var,
    gy: &[T],
) {
    let av = nodes[a.index()].value.data();
    let bv = nodes[b.index()].value.data();
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for ((d, &g), &y) in ga.iter_mut().zip(gy).zip(bv) {
            *d += g * y;
        }
    }
    if let Some(gb) = grad_slot(nodes, grads, b) {
        for ((d, &g), &x) in gb.iter_mut().zip(gy).zip(av) {
            *d += g * x;
        }
    }
}

pub(super) fn backward_div<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    b: Var,
    out: &Tensor<T>,
    gy: &[T],
) {
    let bv = nodes[b.index()].value.data();
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for ((d, &g), &y) in ga.iter_mut().zip(gy).zip(bv) {
            *d += g / y;
        }
    }
    if let Some(gb) = grad_slot(nodes, grads, b) {
        for (((d, &g), &y), &q) in gb.iter_mut().zip(gy).zip(bv).zip(out.data()) {
            *d -= g * q / y;
        }
    }
}

pub(super) fn backward_scale<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    s: T,
    gy: &[T],
) {
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for (d, &g) in ga.iter_mut().zip(gy) {
            *d += s * g;
        }
    }
}

pub(super) fn backward_relu<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    gy: &[T],
) {
    let x = nodes[a.index()].value.data();
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for ((d, &g), &xv) in ga.iter_mut().zip(gy).zip(x) {
            if xv > T::zero() {
                *d += g;
            }
        }
    }
}

pub(super) fn backward_sigmoid<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    out: &Tensor<T>,
    gy: &[T],
) {
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for ((d, &g), &y) in ga.iter_mut().zip(gy).zip(out.data()) {
            *d += g * y * (T::one() - y);
        }
    }
}

pub(super) fn backward_softmax<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    a: Var,
    axis: usize,
    out: &Tensor<T>,
    gy: &[T],
) {
    let (outer, len, inner) = split_axis(out.shape(), axis);
    let y = out.data();
    if let Some(ga) = grad_slot(nodes, grads, a) {
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let dot: T = (0..len).map(|j| y[at(j)] * gy[at(j)]).sum();
                for j in 0..len {
                    ga[at(j)] += y[at(j)] * (gy[at(j)] - dot);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ReduceKind;

    #[test]
    fn elementwise_identities() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn([5], |i| i as f32 - 2.5));
        let y = g.add_scalar(x, 0.0).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let z = g.sub(x, x).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let p = g.mul(a, b).unwrap();
        let l = g.scale(p, 5.0).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[15.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[10.0]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new([3], vec![-1.5, 2.0, 0.0]).unwrap());
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).data()[2], 0.5);
        let l = g.reduce(r, ReduceKind::Mean).unwrap();
        g.backward(l).unwrap();
        // subgradient at exactly zero is zero
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full([2, 3, 4], 0.7));
        let s = g.softmax(x, 1).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
        assert!(g.softmax(a, 2).is_err());
    }
}
