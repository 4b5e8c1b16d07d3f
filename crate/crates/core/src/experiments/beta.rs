use rayon::prelude::*;
use serde::Serialize;

use super::{prepare_trial, Scenario};
use crate::error::{Error, Result};
use crate::gradient_decomp::forward_state;
use crate::linalg::fit_line;
use crate::loss_residue::{residue_diagnostics, LossKind};
use crate::network::{Activation, Scaling};

/// `n / d`.
pub const PSI1: f64 = 0.75;
/// `m / d`.
pub const PSI2: f64 = 1.25;

pub fn geometry(n: usize) -> (usize, usize) {
    let d = (n as f64 / PSI1).round() as usize;
    let m = (PSI2 * d as f64).round() as usize;
    (d, m)
}

#[derive(Clone, Debug, Serialize)]
pub struct BetaFit {
    pub beta_hat: f64,
    pub r2: f64,
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    /// Trial means of `|zᵀr| / (√n‖r‖₂)` per grid point.
    pub mean_alignment: Vec<f64>,
    pub trials: usize,
}

/// Fits `log a = c − (β/2) log d` to trial means of `sample(n, d, m, trial)`.
pub fn estimate_beta_with<F>(n_grid: &[usize], trials: usize, sample: F) -> Result<BetaFit>
where
    F: Fn(usize, usize, usize, u64) -> Result<f64> + Sync,
{
    if n_grid.len() < 2 {
        return Err(Error::InvalidParameter("n_grid needs at least two points".into()));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] < 2 {
        return Err(Error::InvalidParameter(format!("n_grid must be strictly increasing and >= 2, got {n_grid:?}")));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut d_grid = Vec::with_capacity(n_grid.len());
    let mut means = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let (d, m) = geometry(n);
        let vals: Vec<f64> = (0..trials as u64).into_par_iter().map(|t| sample(n, d, m, t)).collect::<Result<_>>()?;
        let mean = vals.iter().sum::<f64>() / trials as f64;
        if !(mean > 0.0) {
            return Err(Error::DegenerateFit(format!("mean alignment at n={n} is {mean}")));
        }
        d_grid.push(d);
        means.push(mean);
    }
    let lx: Vec<f64> = d_grid.iter().map(|&d| (d as f64).ln()).collect();
    let ly: Vec<f64> = means.iter().map(|a| a.ln()).collect();
    let fit = fit_line(&lx, &ly)?;
    Ok(BetaFit { beta_hat: -2.0 * fit.slope, r2: fit.r2, n_grid: n_grid.to_vec(), d_grid, mean_alignment: means, trials })
}

/// β for a scenario, measured at initialisation on the ψ-geometry grid.
pub fn estimate_beta(base: &Scenario, n_grid: &[usize], trials: usize) -> Result<BetaFit> {
    estimate_beta_with(n_grid, trials, |n, d, m, t| {
        let s = base.with_geometry(n, d, m);
        let st = prepare_trial(&s, t)?;
        let fs = forward_state(&st.net, &st.sample.x.view(), &st.y.view(), s.loss)?;
        Ok(residue_diagnostics(&fs.r.view(), &st.sample.z.view())?.z_alignment)
    })
}

/// The activation × loss × (ν, α) × scaling grid, with sequential ids.
pub fn beta_grid(seed: u64, trials: usize) -> Vec<Scenario> {
    let mut out = Vec::new();
    let (d, m) = geometry(750);
    for act in Activation::ALL {
        for loss in LossKind::ALL {
            for nu in [0.125, 0.375, 0.625] {
                for alpha in [0.0, 0.5] {
                    for scaling in [Scaling::Mf, Scaling::Ntk] {
                        let mut s = Scenario::new(750, d, m, nu, alpha, act, scaling);
                        s.loss = loss;
                        s.id = out.len() as u64;
                        s.seed = seed;
                        s.trials = trials;
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

/// One `beta.csv` row.
#[derive(Clone, Debug, Serialize)]
pub struct BetaRow {
    pub scenario_id: u64,
    pub activation: String,
    pub loss: String,
    pub nu: f64,
    pub alpha: f64,
    pub scaling: String,
    pub n: usize,
    pub mean_alignment: f64,
}

impl BetaRow {
    pub fn rows(s: &Scenario, fit: &BetaFit) -> Vec<BetaRow> {
        fit.n_grid
            .iter()
            .zip(&fit.mean_alignment)
            .map(|(&n, &a)| BetaRow {
                scenario_id: s.id,
                activation: s.activation.to_string(),
                loss: s.loss.to_string(),
                nu: s.nu,
                alpha: s.alpha,
                scaling: s.scaling.to_string(),
                n,
                mean_alignment: a,
            })
            .collect()
    }
}
