use std::fmt;
use std::str::FromStr;

use crate::dcmf::{DirectionAttention, SeBlock};
use crate::error::{Error, Result};

/// Network variant, from the single-branch baseline to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Dual branch with adapters and HILO/LIHO frequency exchange.
    Full,
    /// Single residual branch with a global skip from the input.
    Bl,
    /// Two independent branches: adapters without cross terms, no exchange.
    Dbl,
    /// Two branches with interactive adapters, no exchange.
    DblI,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Bl, Ablation::Dbl, Ablation::DblI, Ablation::Full];

    pub fn is_dual(self) -> bool {
        self != Ablation::Bl
    }

    pub fn has_exchange(self) -> bool {
        self == Ablation::Full
    }

    pub fn has_cross_terms(self) -> bool {
        matches!(self, Ablation::Full | Ablation::DblI)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::Bl => "BL",
            Ablation::Dbl => "DBL",
            Ablation::DblI => "DBL+I",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Ablation::Full),
            "bl" => Ok(Ablation::Bl),
            "dbl" => Ok(Ablation::Dbl),
            "dbl+i" => Ok(Ablation::DblI),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected full, BL, DBL or DBL+I)"
            ))),
        }
    }
}

/// Architecture hyperparameters. Everything that shapes the parameter
/// registry lives here.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub stages: usize,
    pub width: usize,
    pub acb_k: usize,
    pub cmf_k: usize,
    pub ablation: Ablation,
    /// Reuse one parameter set for both adapter rounds.
    pub share_adapter_rounds: bool,
}

pub const INPUT_CHANNELS: usize = 3;
/// Kernel size of the entry and exit convolutions.
pub const HEAD_K: usize = 3;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 4,
            width: 16,
            acb_k: 3,
            cmf_k: 5,
            ablation: Ablation::Full,
            share_adapter_rounds: false,
        }
    }
}

fn conv_count(inputs: usize, outputs: usize, kh: usize, kw: usize) -> usize {
    outputs * inputs * kh * kw + outputs
}

fn linear_count(inputs: usize, outputs: usize) -> usize {
    outputs * inputs + outputs
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(Error::Config("stages must be at least 1".into()));
        }
        if self.width < 4 {
            return Err(Error::Config(format!(
                "width must be at least 4, got {}",
                self.width
            )));
        }
        for (name, k) in [("acb_k", self.acb_k), ("cmf_k", self.cmf_k)] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        Ok(())
    }

    pub fn adapter_rounds(&self) -> usize {
        if self.share_adapter_rounds {
            1
        } else {
            2
        }
    }

    /// Smallest spatial size the network accepts.
    pub fn min_spatial(&self) -> usize {
        self.cmf_k.max(crate::loss::SSIM_WINDOW)
    }

    /// Trainable scalar count implied by the configuration alone.
    pub fn parameter_count(&self) -> usize {
        let f = self.width;
        let head = conv_count(INPUT_CHANNELS, f, HEAD_K, HEAD_K);
        let tail = conv_count(f, INPUT_CHANNELS, HEAD_K, HEAD_K);
        let bn = 2 * f;
        if !self.ablation.is_dual() {
            let block = 2 * conv_count(f, f, 3, 3) + 2 * bn;
            return head + tail + self.stages * block;
        }
        let k = self.acb_k;
        let acb = f * f * (k * k + 2 * k) + f;
        let psi_per_round = if self.ablation.has_cross_terms() {
            4
        } else {
            2
        };
        let adapter = self.adapter_rounds() * (psi_per_round * acb + 2 * bn);
        let exchange = if self.ablation.has_exchange() {
            let ah = DirectionAttention::hidden_width(f);
            let attention = linear_count(f, ah) + 3 * linear_count(ah, f);
            let sh = SeBlock::hidden_width(f);
            let se = linear_count(f, sh) + linear_count(sh, f);
            2 * attention + se
        } else {
            0
        };
        2 * (head + tail) + self.stages * (adapter + exchange)
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("stages", self.stages.to_string()),
            ("width", self.width.to_string()),
            ("acb_k", self.acb_k.to_string()),
            ("cmf_k", self.cmf_k.to_string()),
            ("ablation", self.ablation.to_string()),
            (
                "share_adapter_rounds",
                self.share_adapter_rounds.to_string(),
            ),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys that
    /// are not model settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let parse_usize = |v: &str| {
            v.parse::<usize>().map_err(|_| {
                Error::Config(format!("{key}: expected a non-negative integer, got `{v}`"))
            })
        };
        match key {
            "stages" => self.stages = parse_usize(value)?,
            "width" => self.width = parse_usize(value)?,
            "acb_k" => self.acb_k = parse_usize(value)?,
            "cmf_k" => self.cmf_k = parse_usize(value)?,
            "ablation" => self.ablation = value.parse()?,
            "share_adapter_rounds" => {
                self.share_adapter_rounds = value.parse().map_err(|_| {
                    Error::Config(format!("{key}: expected true or false, got `{value}`"))
                })?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Name of the first field that differs from `other`, if any.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<(&'static str, String, String)> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .find(|(a, b)| a.1 != b.1)
            .map(|(a, b)| (a.0, a.1, b.1))
    }
}
