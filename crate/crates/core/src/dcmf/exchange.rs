use rand::Rng;

use super::attention::{DirectionAttention, SeBlock};
use super::direction::DirectionSpec;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Session};
use crate::scalar::Scalar;

/// Three cross-median filters combined by direction attention.
#[derive(Clone, Debug)]
pub struct CmfBank {
    pub specs: [DirectionSpec; 3],
    pub attention: DirectionAttention,
}

impl CmfBank {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(CmfBank {
            specs: DirectionSpec::standard_set(k)?,
            attention: DirectionAttention::new(store, &format!("{name}.attention"), channels, rng)?,
        })
    }

    /// The three per-direction filter outputs, before attention.
    pub fn groups<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<[Var; 3]> {
        Ok([
            s.graph.cmf(x, &self.specs[0])?,
            s.graph.cmf(x, &self.specs[1])?,
            s.graph.cmf(x, &self.specs[2])?,
        ])
    }

    /// Low-frequency component of `x`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let groups = self.groups(s, x)?;
        self.attention.forward(s, groups)
    }
}

fn same_shape<T: Scalar>(s: &Session<'_, T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (s.graph.shape(a), s.graph.shape(b));
    if sa != sb {
        return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// What the detail branch extracts at one stage.
#[derive(Clone, Copy, Debug)]
pub struct HiloSplit {
    /// Filter output, before the SE gate.
    pub low: Var,
    /// Gated low frequency sent to the structure branch.
    pub low_out: Var,
}

/// High In Low Out: the detail branch peels off its low frequency, sends it
/// (SE-gated) across, and takes in high frequency from the structure branch.
#[derive(Clone, Debug)]
pub struct Hilo {
    pub bank: CmfBank,
    pub se: SeBlock,
}

impl Hilo {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Hilo {
            bank: CmfBank::new(store, &format!("{name}.bank"), channels, k, rng)?,
            se: SeBlock::new(store, &format!("{name}.se"), channels, rng)?,
        })
    }

    pub fn split<T: Scalar>(&self, s: &mut Session<'_, T>, z_d: Var) -> Result<HiloSplit> {
        let low = self.bank.forward(s, z_d)?;
        let low_out = self.se.forward(s, low)?;
        Ok(HiloSplit { low, low_out })
    }

    /// `(z_d - low) + high_in`.
    pub fn merge<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_d: Var,
        split: &HiloSplit,
        high_in: Var,
    ) -> Result<Var> {
        same_shape(s, "hilo", z_d, high_in)?;
        let high = s.graph.sub(z_d, split.low)?;
        s.graph.add(high, high_in)
    }

    /// Returns `(z_d_next, split)`.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_d: Var,
        high_in: Var,
    ) -> Result<(Var, HiloSplit)> {
        same_shape(s, "hilo", z_d, high_in)?;
        let split = self.split(s, z_d)?;
        Ok((self.merge(s, z_d, &split, high_in)?, split))
    }
}

/// What the structure branch extracts at one stage.
#[derive(Clone, Copy, Debug)]
pub struct LihoSplit {
    pub low: Var,
    /// Filter residual sent to the detail branch.
    pub high_out: Var,
}

/// Low In High Out: the structure branch keeps its low frequency, sends the
/// filter residual across, and takes in low frequency from the detail branch.
#[derive(Clone, Debug)]
pub struct Liho {
    pub bank: CmfBank,
}

impl Liho {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Liho {
            bank: CmfBank::new(store, &format!("{name}.bank"), channels, k, rng)?,
        })
    }

    pub fn split<T: Scalar>(&self, s: &mut Session<'_, T>, z_s: Var) -> Result<LihoSplit> {
        let low = self.bank.forward(s, z_s)?;
        let high_out = s.graph.sub(z_s, low)?;
        Ok(LihoSplit { low, high_out })
    }

    /// `low + low_in`.
    pub fn merge<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        split: &LihoSplit,
        low_in: Var,
    ) -> Result<Var> {
        same_shape(s, "liho", split.low, low_in)?;
        s.graph.add(split.low, low_in)
    }

    /// Returns `(z_s_next, split)`.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_s: Var,
        low_in: Var,
    ) -> Result<(Var, LihoSplit)> {
        same_shape(s, "liho", z_s, low_in)?;
        let split = self.split(s, z_s)?;
        Ok((self.merge(s, &split, low_in)?, split))
    }
}
