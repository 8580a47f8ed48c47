//! Training losses and evaluation metrics.

mod metrics;
mod ssim;

pub use metrics::{mse, psnr, ssim_value};
pub use ssim::{ssim, SsimParams, SSIM_SIGMA, SSIM_WINDOW};

use crate::autodiff::{Graph, ReduceKind, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights of the detail, structure and reconstruction terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub detail: f64,
    pub structure: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            detail: 1.0,
            structure: 1.0,
            reconstruction: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_detail", self.detail),
            ("lambda_structure", self.structure),
            ("lambda_reconstruction", self.reconstruction),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            detail: self.detail * c,
            structure: self.structure * c,
            reconstruction: self.reconstruction * c,
        }
    }
}

fn check_pair<T: Scalar>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

/// Mean absolute error between predicted and target detail layers.
pub fn detail_loss<T: Scalar>(g: &mut Graph<T>, predicted: Var, target: Var) -> Result<Var> {
    check_pair(g, "detail_loss", predicted, target)?;
    let d = g.sub(predicted, target)?;
    g.reduce(d, ReduceKind::MeanAbs)
}

/// Mean squared error between predicted and target structure layers.
pub fn structure_loss<T: Scalar>(g: &mut Graph<T>, predicted: Var, target: Var) -> Result<Var> {
    check_pair(g, "structure_loss", predicted, target)?;
    let d = g.sub(predicted, target)?;
    g.reduce(d, ReduceKind::MeanSq)
}

/// `mean |p - gt| + 1 - SSIM(p, gt)`.
pub fn reconstruction_loss<T: Scalar>(
    g: &mut Graph<T>,
    predicted: Var,
    target: Var,
    params: &SsimParams,
) -> Result<Var> {
    check_pair(g, "reconstruction_loss", predicted, target)?;
    let d = g.sub(predicted, target)?;
    let l1 = g.reduce(d, ReduceKind::MeanAbs)?;
    let s = ssim(g, predicted, target, params)?;
    let neg = g.scale(s, -T::one())?;
    let dissim = g.add_scalar(neg, T::one())?;
    g.add(l1, dissim)
}

/// The three network outputs, or their supervision targets.
#[derive(Clone, Copy, Debug)]
pub struct Triple {
    pub detail: Var,
    pub structure: Var,
    pub image: Var,
}

/// Individual terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub detail: Var,
    pub structure: Var,
    pub reconstruction: Var,
    pub total: Var,
}

/// `w_d * L_d + w_s * L_s + w_r * L_r`. Terms with zero weight are reported
/// but left out of the sum.
pub fn composite_loss<T: Scalar>(
    g: &mut Graph<T>,
    predicted: Triple,
    target: Triple,
    weights: &LossWeights,
    params: &SsimParams,
) -> Result<LossTerms> {
    let detail = detail_loss(g, predicted.detail, target.detail)?;
    let structure = structure_loss(g, predicted.structure, target.structure)?;
    let reconstruction = reconstruction_loss(g, predicted.image, target.image, params)?;
    let mut parts = Vec::with_capacity(3);
    for (w, v) in [
        (weights.detail, detail),
        (weights.structure, structure),
        (weights.reconstruction, reconstruction),
    ] {
        if w != 0.0 {
            parts.push(if w == 1.0 { v } else { g.scale(v, T::of(w))? });
        }
    }
    let total = if parts.is_empty() {
        g.scale(detail, T::zero())?
    } else {
        g.add_n(&parts)?
    };
    Ok(LossTerms {
        detail,
        structure,
        reconstruction,
        total,
    })
}
