//! Targets, losses and the residue vector `r_i = ∂ℓ(f_i, y_i)/∂f_i`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{sigmoid, softplus};
use crate::rng::normal_vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
    Hinge,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mse, LossKind::Bce, LossKind::Hinge];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
            LossKind::Hinge => "hinge",
        }
    }

    /// Per-sample loss `ℓ(f, y)`.
    pub fn value(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Mse => 0.5 * (f - y) * (f - y),
            // Logit form; well defined for targets outside [0, 1].
            LossKind::Bce => softplus(f) - y * f,
            LossKind::Hinge => (1.0 - y * f).max(0.0),
        }
    }

    /// `∂ℓ/∂f`; for hinge the subgradient that is zero on the margin.
    pub fn derivative(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Mse => f - y,
            LossKind::Bce => sigmoid(f) - y,
            LossKind::Hinge => {
                if y * f >= 1.0 {
                    0.0
                } else {
                    -y
                }
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}` (expected mse, bce or hinge)")))
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// `r` for the given loss.
pub fn residue(loss: LossKind, preds: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<Array1<f64>> {
    same_len(preds.len(), y.len(), "residue")?;
    Ok(Array1::from_iter(preds.iter().zip(y.iter()).map(|(&f, &yi)| loss.derivative(f, yi))))
}

/// Mean loss `(1/n)Σℓ(f_i, y_i)`.
pub fn mean_loss(loss: LossKind, preds: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<f64> {
    same_len(preds.len(), y.len(), "mean_loss")?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds.iter().zip(y.iter()).map(|(&f, &yi)| loss.value(f, yi)).sum();
    Ok(total / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetModel {
    /// `f*(x) = sigmoid(ωᵀx)`.
    SingleIndex { omega: Vec<f64>, noise_std: f64 },
    /// `f*(x) = sigmoid(β₁ᵀx) + tanh(β₂ᵀx) + relu(β₃ᵀx)`.
    TripleIndex { betas: [Vec<f64>; 3], noise_std: f64 },
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (nrm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("{what} must be a unit vector, norm is {nrm}")));
    }
    Ok(())
}

impl TargetModel {
    pub fn validate(&self, d: usize) -> Result<()> {
        let (dirs, noise): (Vec<&Vec<f64>>, f64) = match self {
            TargetModel::SingleIndex { omega, noise_std } => (vec![omega], *noise_std),
            TargetModel::TripleIndex { betas, noise_std } => (betas.iter().collect(), *noise_std),
        };
        for (i, v) in dirs.iter().enumerate() {
            if v.len() != d {
                return Err(Error::ShapeMismatch(format!("target direction {i} has length {}, expected d={d}", v.len())));
            }
            check_unit(v, "target direction")?;
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_std must be >= 0, got {noise}")));
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        match self {
            TargetModel::SingleIndex { noise_std, .. } | TargetModel::TripleIndex { noise_std, .. } => *noise_std,
        }
    }

    /// The teacher direction used as a spike candidate, if there is a single one.
    pub fn teacher(&self) -> Option<Array1<f64>> {
        match self {
            TargetModel::SingleIndex { omega, .. } => Some(Array1::from(omega.clone())),
            TargetModel::TripleIndex { .. } => None,
        }
    }

    /// Noise-free `f*(x)` for every row.
    pub fn clean(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        self.validate(x.ncols())?;
        Ok(match self {
            TargetModel::SingleIndex { omega, .. } => x.dot(&ArrayView1::from(omega.as_slice())).mapv(sigmoid),
            TargetModel::TripleIndex { betas, .. } => {
                let p1 = x.dot(&ArrayView1::from(betas[0].as_slice()));
                let p2 = x.dot(&ArrayView1::from(betas[1].as_slice()));
                let p3 = x.dot(&ArrayView1::from(betas[2].as_slice()));
                Array1::from_iter((0..x.nrows()).map(|i| sigmoid(p1[i]) + p2[i].tanh() + p3[i].max(0.0)))
            }
        })
    }
}

/// Targets for the given loss: noisy regression values for mse, raw `f*` for
/// bce, and `sign(f* − ½)` with ties to `+1` for hinge.
pub fn make_targets<R: Rng + ?Sized>(model: &TargetModel, x: &ArrayView2<f64>, loss: LossKind, rng: &mut R) -> Result<Array1<f64>> {
    let f = model.clean(x)?;
    Ok(match loss {
        LossKind::Mse => {
            let s = model.noise_std();
            if s == 0.0 {
                f
            } else {
                f + normal_vector(x.nrows(), rng) * s
            }
        }
        LossKind::Bce => f,
        LossKind::Hinge => f.mapv(|v| if v - 0.5 >= 0.0 { 1.0 } else { -1.0 }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidueDiagnostics {
    /// `‖r‖∞ / ‖r‖₂`.
    pub inf_over_l2: f64,
    /// `|zᵀr| / (√n‖r‖₂)`.
    pub z_alignment: f64,
}

pub fn residue_diagnostics(r: &ArrayView1<f64>, z: &ArrayView1<f64>) -> Result<ResidueDiagnostics> {
    same_len(r.len(), z.len(), "residue_diagnostics")?;
    let l2 = r.dot(r).sqrt();
    if !(l2 > 0.0) {
        return Err(Error::ZeroResidue);
    }
    let inf = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = r.len() as f64;
    Ok(ResidueDiagnostics { inf_over_l2: inf / l2, z_alignment: z.dot(r).abs() / (n.sqrt() * l2) })
}
