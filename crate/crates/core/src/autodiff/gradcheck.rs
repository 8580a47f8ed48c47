//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64`. A probe whose `+eps` or `-eps` evaluation takes a
//! different discrete branch than the unperturbed point (relu mask, |x| sign,
//! median selection) is reported as unverifiable instead of being compared.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Gradient magnitudes below this are compared absolutely.
    pub magnitude_floor: f64,
    /// Probe a seeded random subset of coordinates instead of all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-6,
            tolerance: 1e-3,
            magnitude_floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ElementCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: Vec<ElementCheck>,
    /// `(input, index)` pairs sitting on a kink or tie.
    pub unverifiable: Vec<(usize, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checked.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    /// Every probed coordinate was verifiable.
    pub fn point_is_clean(&self) -> bool {
        self.unverifiable.is_empty()
    }

    /// At least one coordinate was compared and all compared coordinates are
    /// within tolerance.
    pub fn passed(&self) -> bool {
        !self.checked.is_empty() && self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ElementCheck> {
        self.checked
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(Error::contract(
            "grad_check",
            format!("function must return a scalar, got {:?}", g.shape(loss)),
        ));
    }
    Ok((g, vars, loss))
}

/// Compares the analytic gradient of the scalar function `f` at `inputs`
/// with central finite differences.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, loss) = evaluate(&f, inputs)?;
    let signature = g.branch_signature();
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|t| t.into_data())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    drop(g);

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = match cfg.max_coords {
        Some(k) if k < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picks = sample(&mut rng, coords.len(), k).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|p| coords[p]).collect()
        }
        _ => coords,
    };

    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        ..Default::default()
    };
    let mut probe = inputs.to_vec();
    for (i, j) in chosen {
        let original = probe[i].data()[j];
        let mut side = |delta: f64| -> Result<(f64, u64)> {
            probe[i].data_mut()[j] = original + delta;
            let (g, _, l) = evaluate(&f, &probe)?;
            Ok((g.value(l).data()[0], g.branch_signature()))
        };
        let (plus, sig_plus) = side(cfg.eps)?;
        let (minus, sig_minus) = side(-cfg.eps)?;
        probe[i].data_mut()[j] = original;
        if sig_plus != signature || sig_minus != signature {
            report.unverifiable.push((i, j));
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let a = analytic[i][j];
        report.checked.push(ElementCheck {
            input: i,
            index: j,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric, cfg.magnitude_floor),
        });
    }
    Ok(report)
}
