use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamStore, Session};
use crate::scalar::Scalar;

/// Squeeze-and-excitation gate: GAP, bottleneck FC, relu, FC, sigmoid, then a
/// per-channel rescale of the input.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub squeeze: Linear,
    pub excite: Linear,
}

impl SeBlock {
    pub fn hidden_width(channels: usize) -> usize {
        (channels / 16).max(4)
    }

    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::contract("se_block", "needs at least one channel"));
        }
        let hidden = Self::hidden_width(channels);
        Ok(SeBlock {
            squeeze: Linear::new(store, &format!("{name}.squeeze"), channels, hidden, rng)?,
            excite: Linear::new(store, &format!("{name}.excite"), hidden, channels, rng)?,
        })
    }

    /// Per-channel gate values, `N x C`, each in `(0, 1)`.
    pub fn gate<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let pooled = s.graph.global_avg_pool(x)?;
        let z = self.squeeze.forward(s, pooled)?;
        let z = s.graph.relu(z)?;
        let e = self.excite.forward(s, z)?;
        s.graph.sigmoid(e)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gate = self.gate(s, x)?;
        s.graph.channel_scale(x, gate)
    }
}

/// Attention over the three direction groups: the groups are summed and
/// pooled, squeezed through a reduction FC, and three FC heads produce
/// per-channel logits that are normalized across groups with a softmax.
#[derive(Clone, Debug)]
pub struct DirectionAttention {
    pub reduce: Linear,
    pub heads: [Linear; 3],
}

pub const ATTENTION_REDUCTION: usize = 4;

impl DirectionAttention {
    pub fn hidden_width(channels: usize) -> usize {
        (channels / ATTENTION_REDUCTION).max(1)
    }

    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = Self::hidden_width(channels);
        let reduce = Linear::new(store, &format!("{name}.reduce"), channels, hidden, rng)?;
        let mut head =
            |i: usize| Linear::new(store, &format!("{name}.head{i}"), hidden, channels, rng);
        let heads = [head(0)?, head(1)?, head(2)?];
        Ok(DirectionAttention { reduce, heads })
    }

    /// Softmax weights, `N x 3 x C`; each channel's three weights sum to 1.
    pub fn weights<T: Scalar>(&self, s: &mut Session<'_, T>, groups: [Var; 3]) -> Result<Var> {
        let shape = s.graph.shape(groups[0]).to_vec();
        for &g in &groups[1..] {
            if s.graph.shape(g) != shape.as_slice() {
                return Err(Error::dim(
                    "direction_attention",
                    format!("{:?} vs {:?}", s.graph.shape(g), shape),
                ));
            }
        }
        let (n, c) = (shape[0], shape[1]);
        let fused = s.graph.add_n(&groups)?;
        let pooled = s.graph.global_avg_pool(fused)?;
        let z = self.reduce.forward(s, pooled)?;
        let z = s.graph.relu(z)?;
        let mut logits = Vec::with_capacity(3);
        for head in &self.heads {
            let l = head.forward(s, z)?;
            logits.push(s.graph.reshape(l, &[n, 1, c])?);
        }
        let stacked = s.graph.concat(&logits, 1)?;
        s.graph.softmax(stacked, 1)
    }

    /// `sum_i w_i * y_i` with per-channel weights from [`Self::weights`],
    /// evaluated as `y_1 + w_2 (y_2 - y_1) + w_3 (y_3 - y_1)`. The weights sum
    /// to 1, so the two forms agree, but this one returns equal groups
    /// (constants in particular) exactly instead of up to rounding in the
    /// weight sum. The gradients agree because the softmax Jacobian
    /// annihilates constant vectors.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, groups: [Var; 3]) -> Result<Var> {
        let weights = self.weights(s, groups)?;
        let mut parts = vec![groups[0]];
        for (i, &y) in groups.iter().enumerate().skip(1) {
            let w = s.graph.narrow(weights, 1, i, 1)?;
            let diff = s.graph.sub(y, groups[0])?;
            parts.push(s.graph.channel_scale(diff, w)?);
        }
        s.graph.add_n(&parts)
    }
}
