use rand::Rng;

use super::acb::Acb;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, ParamStore, Session};
use crate::scalar::Scalar;

/// One round of the interactive adapter. `psi_d2` carries detail features
/// into the structure branch and `psi_s2` the reverse; both are absent when
/// the branches do not interact.
#[derive(Clone, Debug)]
pub struct AdapterRound {
    pub psi_d1: Acb,
    pub psi_d2: Option<Acb>,
    pub psi_s1: Acb,
    pub psi_s2: Option<Acb>,
    pub bn_d: BatchNorm,
    pub bn_s: BatchNorm,
}

impl AdapterRound {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        k: usize,
        cross: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut acb =
            |suffix: &str| Acb::new(store, &format!("{name}.{suffix}"), width, width, k, rng);
        let psi_d1 = acb("psi_d1")?;
        let psi_d2 = if cross { Some(acb("psi_d2")?) } else { None };
        let psi_s1 = acb("psi_s1")?;
        let psi_s2 = if cross { Some(acb("psi_s2")?) } else { None };
        Ok(AdapterRound {
            psi_d1,
            psi_d2,
            psi_s1,
            psi_s2,
            bn_d: BatchNorm::new(store, &format!("{name}.bn_d"), width)?,
            bn_s: BatchNorm::new(store, &format!("{name}.bn_s"), width)?,
        })
    }

    /// `z_d' = relu(BN(psi_d1(z_d) + psi_s2(z_s)))` and
    /// `z_s' = relu(BN(psi_s1(z_s) + psi_d2(z_d)))`. Cross terms are skipped
    /// when `cross` is false.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_d: Var,
        z_s: Var,
        cross: bool,
    ) -> Result<(Var, Var)> {
        let mut d = self.psi_d1.forward(s, z_d)?;
        let mut st = self.psi_s1.forward(s, z_s)?;
        if cross {
            if let Some(psi) = &self.psi_s2 {
                let t = psi.forward(s, z_s)?;
                d = s.graph.add(d, t)?;
            }
            if let Some(psi) = &self.psi_d2 {
                let t = psi.forward(s, z_d)?;
                st = s.graph.add(st, t)?;
            }
        }
        let d = self.bn_d.forward(s, d)?;
        let d = s.graph.relu(d)?;
        let st = self.bn_s.forward(s, st)?;
        let st = s.graph.relu(st)?;
        Ok((d, st))
    }
}

/// Two adapter rounds, with fresh or shared parameters.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub rounds: Vec<AdapterRound>,
}

pub const ADAPTER_ROUNDS: usize = 2;

impl Adapter {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        k: usize,
        cross: bool,
        shared: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let count = if shared { 1 } else { ADAPTER_ROUNDS };
        let rounds = (0..count)
            .map(|r| AdapterRound::new(store, &format!("{name}.round{r}"), width, k, cross, rng))
            .collect::<Result<_>>()?;
        Ok(Adapter { rounds })
    }

    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_d: Var,
        z_s: Var,
        cross: bool,
    ) -> Result<(Var, Var)> {
        let (sd, ss) = (s.graph.shape(z_d), s.graph.shape(z_s));
        if sd != ss {
            return Err(Error::dim("adapter", format!("{sd:?} vs {ss:?}")));
        }
        let (mut d, mut st) = (z_d, z_s);
        for r in 0..ADAPTER_ROUNDS {
            let round = &self.rounds[r.min(self.rounds.len() - 1)];
            (d, st) = round.forward(s, d, st, cross)?;
        }
        Ok((d, st))
    }
}
