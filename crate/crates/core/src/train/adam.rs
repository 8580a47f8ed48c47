use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state for every trainable entry
/// of a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// `(param, first moment, second moment)` in store order.
    pub moments: Vec<(ParamId, Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let moments = store
            .weight_ids()
            .map(|id| {
                let shape = store.get(id).shape().to_vec();
                (id, Tensor::zeros(shape.clone()), Tensor::zeros(shape))
            })
            .collect();
        Adam {
            config,
            step: 0,
            moments,
        }
    }

    /// One update with learning rate `lr`. `grads` must list every trainable
    /// entry in store order, as [`crate::nn::Session::weight_grads`] does.
    /// Nothing is modified if any gradient is non-finite.
    pub fn update(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(ParamId, Tensor<T>)],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.moments.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} gradients for {} parameters",
                    grads.len(),
                    self.moments.len()
                ),
            ));
        }
        for ((id, g), (mid, m, _)) in grads.iter().zip(&self.moments) {
            if id != mid || g.shape() != m.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!(
                        "gradient for `{}` does not match its parameter",
                        store.entry(*id).name
                    ),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of `{}`",
                    store.entry(*id).name
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / c1);
        let (inv_sqrt_c2, eps) = (T::of(1.0 / c2.sqrt()), T::of(eps));
        for ((id, g), (_, m, v)) in grads.iter().zip(self.moments.iter_mut()) {
            let p = store.get_mut(*id).data_mut();
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step_size * *m / (v.sqrt() * inv_sqrt_c2 + eps);
            }
        }
        Ok(())
    }
}
