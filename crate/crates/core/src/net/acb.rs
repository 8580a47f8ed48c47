use rand::Rng;

use crate::autodiff::{PadMode, PadSpec, Var};
use crate::error::{Error, Result};
use crate::nn::{he_uniform, ParamId, ParamKind, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Asymmetric convolution block: parallel `k x k`, `1 x k` and `k x 1`
/// convolutions with zero padding, summed, plus one bias.
#[derive(Clone, Debug)]
pub struct Acb {
    pub square: ParamId,
    pub row: ParamId,
    pub column: ParamId,
    pub bias: ParamId,
    pub k: usize,
}

impl Acb {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::contract(
                "acb",
                format!("kernel size must be odd, got {k}"),
            ));
        }
        let fan_in = inputs * (k * k + 2 * k);
        let mut kernel = |suffix: &str, kh: usize, kw: usize| {
            store.register(
                format!("{name}.{suffix}"),
                he_uniform(&[outputs, inputs, kh, kw], fan_in, rng),
                ParamKind::Weight,
            )
        };
        let square = kernel("square", k, k)?;
        let row = kernel("row", 1, k)?;
        let column = kernel("column", k, 1)?;
        let bias = store.register(
            format!("{name}.bias"),
            Tensor::zeros([outputs]),
            ParamKind::Weight,
        )?;
        Ok(Acb {
            square,
            row,
            column,
            bias,
            k,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let k = self.k;
        let half = k / 2;
        let (sq, row, col, b) = (
            s.p(self.square),
            s.p(self.row),
            s.p(self.column),
            s.p(self.bias),
        );
        let a = s
            .graph
            .conv2d(x, sq, Some(b), 1, PadSpec::new(PadMode::Zero, half, half))?;
        let r = s
            .graph
            .conv2d(x, row, None, 1, PadSpec::new(PadMode::Zero, 0, half))?;
        let c = s
            .graph
            .conv2d(x, col, None, 1, PadSpec::new(PadMode::Zero, half, 0))?;
        s.graph.add_n(&[a, r, c])
    }

    /// The single `k x k` kernel equivalent to the three branches.
    pub fn fused_kernel<T: Scalar>(&self, store: &ParamStore<T>) -> Tensor<T> {
        let k = self.k;
        let half = k / 2;
        let mut fused = store.get(self.square).clone();
        let planes = fused.len() / (k * k);
        let (row, col) = (store.get(self.row).data(), store.get(self.column).data());
        let data = fused.data_mut();
        for p in 0..planes {
            for i in 0..k {
                data[p * k * k + half * k + i] += row[p * k + i];
                data[p * k * k + i * k + half] += col[p * k + i];
            }
        }
        fused
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::nn::Mode;
    use crate::seed;

    #[test]
    fn zero_side_kernels_reduce_to_plain_conv() {
        let mut store = ParamStore::<f64>::new();
        let acb = Acb::new(&mut store, "acb", 2, 3, 3, &mut seed::rng(0, "acb", 0)).unwrap();
        for id in [acb.row, acb.column] {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut rng = seed::rng(1, "x", 0);
        let x = Tensor::from_fn([1, 2, 5, 6], |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let mut s = Session::bind(&mut g, &store, Mode::Eval, false);
        let xv = s.graph.constant(x);
        let y = acb.forward(&mut s, xv).unwrap();
        let (w, b) = (s.p(acb.square), s.p(acb.bias));
        let plain = s
            .graph
            .conv2d(xv, w, Some(b), 1, PadSpec::same(PadMode::Zero, 3, 3))
            .unwrap();
        assert!(s.graph.value(y).max_abs_diff(s.graph.value(plain)) < 1e-14);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut store = ParamStore::<f32>::new();
        let acb = Acb::new(&mut store, "acb", 4, 4, 5, &mut seed::rng(0, "acb", 0)).unwrap();
        let mut g = Graph::new();
        let mut s = Session::bind(&mut g, &store, Mode::Eval, false);
        let x = s.graph.constant(Tensor::zeros([2, 4, 7, 7]));
        let y = acb.forward(&mut s, x).unwrap();
        assert!(s.graph.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_kernel_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        assert!(Acb::new(&mut store, "acb", 1, 1, 2, &mut seed::rng(0, "acb", 0)).is_err());
    }
}
