use rand::Rng;

use super::params::{he_uniform, BnUpdate, ParamId, ParamKind, ParamStore, Session};
use crate::autodiff::{BnMode, PadMode, PadSpec, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistics in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Fully connected layer, weight `out x in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.register(
                format!("{name}.weight"),
                he_uniform(&[outputs, inputs], inputs, rng),
                ParamKind::Weight,
            )?,
            bias: store.register(
                format!("{name}.bias"),
                Tensor::zeros([outputs]),
                ParamKind::Weight,
            )?,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.weight), s.p(self.bias));
        s.graph.fully_connected(x, w, Some(b))
    }
}

/// Stride-1 convolution with a bias and zero "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: PadSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        kh: usize,
        kw: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Conv {
            weight: store.register(
                format!("{name}.weight"),
                he_uniform(&[outputs, inputs, kh, kw], inputs * kh * kw, rng),
                ParamKind::Weight,
            )?,
            bias: store.register(
                format!("{name}.bias"),
                Tensor::zeros([outputs]),
                ParamKind::Weight,
            )?,
            pad: PadSpec::same(PadMode::Zero, kh, kw),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (s.p(self.weight), s.p(self.bias));
        s.graph.conv2d(x, w, Some(b), 1, self.pad)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            scale: store.register(
                format!("{name}.scale"),
                Tensor::full([channels], T::one()),
                ParamKind::Weight,
            )?,
            shift: store.register(
                format!("{name}.shift"),
                Tensor::zeros([channels]),
                ParamKind::Weight,
            )?,
            running_mean: store.register(
                format!("{name}.running_mean"),
                Tensor::zeros([channels]),
                ParamKind::Buffer,
            )?,
            running_var: store.register(
                format!("{name}.running_var"),
                Tensor::full([channels], T::one()),
                ParamKind::Buffer,
            )?,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (scale, shift) = (s.p(self.scale), s.p(self.shift));
        let eps = T::of(BN_EPS);
        match s.mode() {
            super::Mode::Train => {
                let (y, stats) = s.graph.batch_norm(x, scale, shift, BnMode::Train, eps)?;
                s.record_bn(BnUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    stats: stats.expect("train mode returns stats"),
                });
                Ok(y)
            }
            super::Mode::Eval => {
                let store = s.store();
                let mode = BnMode::Eval {
                    mean: store.get(self.running_mean).data(),
                    var: store.get(self.running_var).data(),
                };
                Ok(s.graph.batch_norm(x, scale, shift, mode, eps)?.0)
            }
        }
    }
}
