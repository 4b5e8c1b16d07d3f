//! Growth-exponent checks of the spike and bulk norms over a sample-size sweep.

use ndarray::{Array1, Array2, Zip};
use rayon::prelude::*;
use serde::Serialize;

use super::beta::geometry;
use super::{prepare_trial, Scenario};
use crate::error::{Error, Result};
use crate::gradient_decomp::forward_state;
use crate::linalg::{fit_line, norm, LineFit};
use crate::network::estimate_mu;
use crate::rng::Purpose;

#[derive(Clone, Debug, Serialize)]
pub struct AuditPoint {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Mean of `‖E‖₂ / (√m γ ‖r‖∞)`.
    pub e_scaled: f64,
    /// Mean of `‖S1‖₂ / ‖E‖₂`.
    pub s1_over_e: f64,
    /// Mean of `‖S1‖₂ / (√m γ)`.
    pub s1_scaled: f64,
    /// Mean of `‖S2‖₂ / (√m γ n^ν)`.
    pub s2_scaled: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub nu: f64,
    pub alpha: f64,
    pub trials: usize,
    pub points: Vec<AuditPoint>,
    pub e_fit: LineFit,
    pub ratio_fit: LineFit,
    pub s1_fit: LineFit,
    pub s2_fit: LineFit,
}

impl AuditReport {
    /// Predicted upper bound on the slope of `e_scaled`.
    pub fn e_bound(&self) -> f64 {
        self.nu - 0.5
    }

    /// Predicted lower bound on the slope of `s1_over_e`.
    pub fn ratio_bound(&self) -> f64 {
        0.5 - self.nu - 0.5 * self.alpha
    }
}

/// `‖(γ/n) X_Bᵀ H‖₂` by power iteration without forming the product.
fn bulk_norm(x_b: &Array2<f64>, h: &Array2<f64>, scale: f64) -> f64 {
    let m = h.ncols();
    let mut v = Array1::from_shape_fn(m, |j| 1.0 + 0.01 * ((j * 7919) % 101) as f64);
    v /= norm(&v.view());
    let mut sigma = 0.0;
    for _ in 0..500 {
        let u = x_b.t().dot(&h.dot(&v));
        let next = norm(&u.view());
        if next == 0.0 {
            return 0.0;
        }
        let w = h.t().dot(&x_b.dot(&u));
        let wn = norm(&w.view());
        v = w / wn;
        if (next - sigma).abs() <= 1e-9 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma * scale
}

fn trial_point(s: &Scenario, t: u64) -> Result<[f64; 4]> {
    let st = prepare_trial(s, t)?;
    let mut rng = st.streams.get(Purpose::Mu);
    let mu = estimate_mu(&st.net, &st.cov, s.mu_samples, &mut rng)?;
    let x = st.sample.x.view();
    let fs = forward_state(&st.net, &x, &st.y.view(), s.loss)?;
    let net = &st.net;
    let act = net.activation;
    let (n, m) = (s.n as f64, s.m as f64);
    let gamma = net.gamma();

    let mut h = fs.pre;
    Zip::from(h.rows_mut()).and(&fs.r).for_each(|mut row, &ri| {
        Zip::from(&mut row).and(&net.a).and(&mu).for_each(|v, &aj, &mj| *v = ri * aj * (act.d1(*v) - mj));
    });
    let amu = &net.a * &mu;
    let s1 = gamma / n * norm(&st.sample.x_b.t().dot(&fs.r).view()) * norm(&amu.view());
    let s2 = gamma * st.sample.zeta / n * norm(&st.sample.z.dot(&h).view());
    let e = bulk_norm(&st.sample.x_b, &h, gamma / n);
    let r_inf = fs.r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if !(e > 0.0 && r_inf > 0.0) {
        return Err(Error::DegenerateFit(format!("zero bulk norm or residue at n={}", s.n)));
    }
    let root = m.sqrt() * gamma;
    Ok([e / (root * r_inf), s1 / e, s1 / root, s2 / (root * n.powf(s.nu))])
}

/// Sweeps `n` on the ψ geometry and fits log-log slopes of the four scaled norms.
pub fn exponent_audit(base: &Scenario, n_grid: &[usize], trials: usize) -> Result<AuditReport> {
    if n_grid.len() < 2 || trials == 0 {
        return Err(Error::InvalidParameter("audit needs at least two sample sizes and one trial".into()));
    }
    let mut points = Vec::new();
    for &n in n_grid {
        let (d, m) = geometry(n);
        let s = base.with_geometry(n, d, m);
        let vals: Vec<[f64; 4]> = (0..trials as u64).into_par_iter().map(|t| trial_point(&s, t)).collect::<Result<_>>()?;
        let mean = |k: usize| vals.iter().map(|v| v[k]).sum::<f64>() / trials as f64;
        points.push(AuditPoint { n, d, m, e_scaled: mean(0), s1_over_e: mean(1), s1_scaled: mean(2), s2_scaled: mean(3) });
    }
    let ln: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let fit = |f: fn(&AuditPoint) -> f64| -> Result<LineFit> {
        let ly: Vec<f64> = points.iter().map(|p| f(p).ln()).collect();
        fit_line(&ln, &ly)
    };
    Ok(AuditReport {
        nu: base.nu,
        alpha: base.alpha,
        trials,
        e_fit: fit(|p| p.e_scaled)?,
        ratio_fit: fit(|p| p.s1_over_e)?,
        s1_fit: fit(|p| p.s1_scaled)?,
        s2_fit: fit(|p| p.s2_scaled)?,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient_decomp::decompose;
    use crate::linalg::operator_norm;
    use crate::network::{Activation, Scaling};

    #[test]
    fn matrix_free_norm_matches_dense() {
        let mut s = Scenario::new(40, 53, 67, 0.2, 0.0, Activation::Sigmoid, Scaling::Ntk);
        s.mu_samples = 1000;
        let st = prepare_trial(&s, 0).unwrap();
        let mut rng = st.streams.get(Purpose::Mu);
        let mu = estimate_mu(&st.net, &st.cov, s.mu_samples, &mut rng).unwrap();
        let dec = decompose(&st.net, &st.sample, &st.y.view(), s.loss, &mu.view()).unwrap();
        let dense = operator_norm(&dec.e.view());
        let mut h = dec.sigma_perp.clone();
        for (i, mut row) in h.rows_mut().into_iter().enumerate() {
            row *= dec.r[i];
            row *= &st.net.a;
        }
        let free = bulk_norm(&st.sample.x_b, &h, st.net.gamma() / 40.0);
        assert!((dense - free).abs() < 1e-6 * dense);
        let p = trial_point(&s, 0).unwrap();
        assert!((p[1] - dec.s1.norm() / dense).abs() < 1e-6 * p[1]);
    }
}
