use super::{grad_slot, Graph, Node, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dims4, Tensor};

/// Statistics source for [`Graph::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in train mode. `var` is the
/// unbiased estimate used to update running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Graph<T> {
    /// Per-channel normalization of an NCHW tensor followed by the affine
    /// map `scale * xhat + shift`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        mode: BnMode<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = dims4(self.shape(input), "batch_norm")?;
        for (what, v) in [("scale", scale), ("shift", shift)] {
            if self.value(v).len() != c {
                return Err(Error::dim(
                    "batch_norm",
                    format!(
                        "{} has {} values for {} channels",
                        what,
                        self.value(v).len(),
                        c
                    ),
                ));
            }
        }
        let hw = h * w;
        let m = n * hw;
        let x = self.value(input).data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(Error::contract(
                        "batch_norm",
                        "train mode needs at least two values per channel",
                    ));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        s += x[(b * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        ss += x[(b * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| (v.as_f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = T::of(mu);
                    var[ch] = T::of(ss / m as f64);
                }
                let unbiased = var
                    .iter()
                    .map(|&v| v * T::of(m as f64 / (m - 1) as f64))
                    .collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim(
                        "batch_norm",
                        format!(
                            "running stats have {}/{} values for {} channels",
                            mean.len(),
                            var.len(),
                            c
                        ),
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        let value = Tensor::new([n, c, h, w], out)?;
        let var_out = self.push(
            value,
            Op::BatchNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                train: stats.is_some(),
            },
        )?;
        Ok((var_out, stats))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    input: Var,
    scale: Var,
    shift: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    gy: &[T],
) {
    let (n, c, h, w) = nodes[input.index()].value.dims4().expect("validated");
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                sum_dy[ch] += gy[i];
                sum_dy_xhat[ch] += gy[i] * xhat[i];
            }
        }
    }
    if let Some(gs) = grad_slot(nodes, grads, scale) {
        for ch in 0..c {
            gs[ch] += sum_dy_xhat[ch];
        }
    }
    if let Some(gb) = grad_slot(nodes, grads, shift) {
        for ch in 0..c {
            gb[ch] += sum_dy[ch];
        }
    }
    let gamma = nodes[scale.index()].value.data().to_vec();
    if let Some(gx) = grad_slot(nodes, grads, input) {
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let k = gamma[ch] * inv_std[ch];
                for i in base..base + hw {
                    gx[i] += if train {
                        k * (gy[i] - (sum_dy[ch] + xhat[i] * sum_dy_xhat[ch]) / m)
                    } else {
                        k * gy[i]
                    };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| ((i * 7919 % 1013) as f64 / 1013.0) * 4.0 - 1.3)
            .collect()
    }

    #[test]
    fn eval_identity_with_unit_stats() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new([2, 3, 2, 2], noise(24)).unwrap());
        let s = g.constant(Tensor::full([3], 1.0));
        let b = g.constant(Tensor::zeros([3]));
        let (y, stats) = g
            .batch_norm(
                x,
                s,
                b,
                BnMode::Eval {
                    mean: &[0.0; 3],
                    var: &[1.0; 3],
                },
                0.0,
            )
            .unwrap();
        assert!(stats.is_none());
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut g = Graph::<f32>::new();
        let data: Vec<f32> = noise(2 * 3 * 4 * 5)
            .into_iter()
            .map(|v| v as f32 * 3.0 + 1.0)
            .collect();
        let x = g.constant(Tensor::new([2, 3, 4, 5], data).unwrap());
        let s = g.constant(Tensor::full([3], 1.0));
        let b = g.constant(Tensor::zeros([3]));
        let (y, stats) = g.batch_norm(x, s, b, BnMode::Train, 1e-5).unwrap();
        assert_eq!(stats.unwrap().mean.len(), 3);
        let v = g.value(y).data();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| v[(n * 3 + ch) * 20..][..20].iter().map(|&x| x as f64))
                .collect();
            let mean = vals.iter().sum::<f64>() / 40.0;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn train_mode_needs_two_values() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 2, 1, 1]));
        let s = g.constant(Tensor::full([2], 1.0));
        let b = g.constant(Tensor::zeros([2]));
        assert!(g.batch_norm(x, s, b, BnMode::Train, 1e-5).is_err());
        // zero variance is absorbed by eps
        let x = g.constant(Tensor::zeros([2, 2, 1, 1]));
        let (y, _) = g.batch_norm(x, s, b, BnMode::Train, 1e-5).unwrap();
        assert!(g.value(y).is_finite());
    }
}
