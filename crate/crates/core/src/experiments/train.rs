//! Full-batch gradient descent with weight normalisation.

use ndarray::{s, Array1, Array2, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{prepare_trial, Regularizer, Scenario, TrialState};
use crate::error::{Error, Result};
use crate::gradient_decomp::{forward_state, gradient_from, jacobian_penalty_gradient, jacobian_penalty_value};
use crate::linalg::{self, Svd};
use crate::loss_residue::{mean_loss, residue_diagnostics};
use crate::network::{estimate_mu, weight_normalize, Network, Scaling};
use crate::rng::Purpose;
use crate::spectra_align::{alignment, principal_angles};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainOptions {
    /// Number of gradient steps; epochs `0..=epochs` are recorded.
    pub epochs: usize,
    /// Dimension of the leading right singular subspaces compared in paired runs.
    pub angle_rank: usize,
    /// Index of the trial whose draws seed the run.
    pub trial: u64,
}

impl TrainOptions {
    pub fn new(epochs: usize) -> Self {
        Self { epochs, angle_rank: 10, trial: 0 }
    }
}

/// One `history.csv` row.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub align_q: f64,
    pub align_residue: f64,
    pub align_target: f64,
    #[serde(rename = "align_G0")]
    pub align_g0: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub r_inf_over_l2: f64,
    pub z_align: f64,
    pub principal_angle_deg: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainHistory {
    pub scaling: Scaling,
    pub records: Vec<EpochRecord>,
    /// SHA-256 over `X`, `y`, `W₀` and `a`.
    pub input_hash: String,
    /// First epoch whose dominant alignment (data vs residue) differs from epoch 0.
    pub crossing_epoch: Option<usize>,
}

impl TrainHistory {
    fn finish(&mut self) {
        let dominant = |r: &EpochRecord| r.align_q > r.align_residue;
        if let Some(first) = self.records.first() {
            let d0 = dominant(first);
            self.crossing_epoch = self.records.iter().find(|r| dominant(r) != d0).map(|r| r.epoch);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PairedHistory {
    pub mf: TrainHistory,
    pub ntk: TrainHistory,
}

fn hash_inputs(st: &TrialState) -> String {
    let mut h = Sha256::new();
    for arr in [st.sample.x.iter(), st.net.w.iter()] {
        for v in arr {
            h.update(v.to_le_bytes());
        }
    }
    for v in st.y.iter().chain(st.net.a.iter()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Leading left singular vector, tolerant of weak gaps.
fn top_left(g: &ArrayView2<f64>) -> Result<Array1<f64>> {
    let svd: Svd = match linalg::svd_subspace(g, 1, 1e-9, 400) {
        Ok(s) => s,
        Err(Error::ConvergenceFailure(_)) => linalg::svd_dense(g, 1)?,
        Err(e) => return Err(e),
    };
    Ok(svd.u.column(0).to_owned())
}

/// Orthonormal basis of the leading `k`-dimensional right singular subspace of `w`.
fn right_subspace(w: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let gram = w.t().dot(w);
    let (_, vecs) = gram.eigh(UPLO::Lower)?;
    let d = vecs.ncols();
    let k = k.min(d);
    // eigh sorts ascending.
    let mut out = vecs.slice(s![.., d - k..]).to_owned();
    out.invert_axis(ndarray::Axis(1));
    Ok(out)
}

struct Run<'a> {
    s: &'a Scenario,
    st: &'a TrialState,
    net: Network,
    mu_rng: ChaCha8Rng,
    g0_top: Option<Array1<f64>>,
    initial_loss: Option<f64>,
    target_dir: Array1<f64>,
}

impl<'a> Run<'a> {
    fn new(s: &'a Scenario, st: &'a TrialState, scaling: Scaling) -> Self {
        let target_dir = st.sample.x_b.t().dot(&st.y);
        Self {
            s,
            st,
            net: st.net.with_scaling(scaling),
            mu_rng: st.streams.get(Purpose::Mu),
            g0_top: None,
            initial_loss: None,
            target_dir,
        }
    }

    /// Records epoch `t` and returns the gradient with respect to `Wᵀ`.
    fn observe(&mut self, epoch: usize) -> Result<(EpochRecord, Array2<f64>)> {
        let x = self.st.sample.x.view();
        let fs = forward_state(&self.net, &x, &self.st.y.view(), self.s.loss)?;
        let mut loss = mean_loss(self.s.loss, &fs.preds.view(), &self.st.y.view())?;
        let mut g = gradient_from(&self.net, &x, &fs.pre, &fs.r.view());
        match self.s.regularizer {
            Regularizer::WeightDecay { lambda } => {
                g.scaled_add(lambda, &self.net.w.t());
                loss += 0.5 * lambda * self.net.w.iter().map(|v| v * v).sum::<f64>();
            }
            Regularizer::Jacobian { lambda } => {
                g += &jacobian_penalty_gradient(&self.net, &self.st.sample, lambda)?.grad;
                loss += jacobian_penalty_value(&self.net, &x, lambda)?;
            }
            Regularizer::None | Regularizer::InputNoise { .. } => {}
        }
        let initial = *self.initial_loss.get_or_insert(loss);
        if !loss.is_finite() || loss > 1e6 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::DivergenceDetected { epoch, loss });
        }

        let u = top_left(&g.view())?;
        let g0 = self.g0_top.get_or_insert_with(|| u.clone()).clone();
        let residue_dir = self.st.sample.x_b.t().dot(&fs.r);
        let cos = |v: &Array1<f64>| alignment(&u.view(), &v.view()).unwrap_or(0.0);
        let mu = estimate_mu(&self.net, &self.st.cov, self.s.mu_samples, &mut self.mu_rng)?;
        let (inf, za) = match residue_diagnostics(&fs.r.view(), &self.st.sample.z.view()) {
            Ok(dg) => (dg.inf_over_l2, dg.z_alignment),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let rec = EpochRecord {
            epoch,
            loss,
            align_q: cos(&self.st.sample.q),
            align_residue: cos(&residue_dir),
            align_target: cos(&self.target_dir),
            align_g0: cos(&g0),
            mu_min: mu.iter().copied().fold(f64::INFINITY, f64::min),
            mu_max: mu.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            r_inf_over_l2: inf,
            z_align: za,
            principal_angle_deg: None,
        };
        Ok((rec, g))
    }

    /// `W ← normalize(W − γ⁻¹Gᵀ)`.
    fn step(&mut self, g: &Array2<f64>) -> Result<()> {
        let eta = 1.0 / self.net.gamma();
        let mut w = self.net.w.clone();
        w.scaled_add(-eta, &g.t());
        self.net.w = weight_normalize(&w.view())?;
        Ok(())
    }
}

fn check_epochs(opts: &TrainOptions) -> Result<()> {
    if opts.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be at least 1".into()));
    }
    Ok(())
}

/// Trains the scenario's own scaling.
pub fn train(s: &Scenario, opts: &TrainOptions) -> Result<TrainHistory> {
    check_epochs(opts)?;
    let st = prepare_trial(s, opts.trial)?;
    let mut run = Run::new(s, &st, s.scaling);
    let mut records = Vec::with_capacity(opts.epochs + 1);
    for epoch in 0..=opts.epochs {
        let (rec, g) = run.observe(epoch)?;
        records.push(rec);
        if epoch < opts.epochs {
            run.step(&g)?;
        }
    }
    let mut h = TrainHistory { scaling: s.scaling, records, input_hash: hash_inputs(&st), crossing_epoch: None };
    h.finish();
    Ok(h)
}

/// MF and NTK runs from identical `X`, `y`, `W₀`, `a`, with the mean principal
/// angle between their leading right singular subspaces recorded per epoch.
pub fn train_paired(s: &Scenario, opts: &TrainOptions) -> Result<PairedHistory> {
    check_epochs(opts)?;
    if opts.angle_rank == 0 {
        return Err(Error::InvalidParameter("angle_rank must be at least 1".into()));
    }
    let st = prepare_trial(s, opts.trial)?;
    let hash = hash_inputs(&st);
    let mut mf = Run::new(s, &st, Scaling::Mf);
    let mut ntk = Run::new(s, &st, Scaling::Ntk);
    let (mut rec_mf, mut rec_ntk) = (Vec::new(), Vec::new());
    for epoch in 0..=opts.epochs {
        let (mut a, ga) = mf.observe(epoch)?;
        let (mut b, gb) = ntk.observe(epoch)?;
        let ua = right_subspace(&mf.net.w, opts.angle_rank)?;
        let ub = right_subspace(&ntk.net.w, opts.angle_rank)?;
        let angles = principal_angles(&ua.view(), &ub.view())?;
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        a.principal_angle_deg = Some(mean);
        b.principal_angle_deg = Some(mean);
        rec_mf.push(a);
        rec_ntk.push(b);
        if epoch < opts.epochs {
            mf.step(&ga)?;
            ntk.step(&gb)?;
        }
    }
    // Both runs were built from the same trial state; recheck before reporting.
    let again = hash_inputs(&prepare_trial(s, opts.trial)?);
    if again != hash {
        return Err(Error::InvalidParameter("paired runs did not share identical inputs".into()));
    }
    let mut mf_h = TrainHistory { scaling: Scaling::Mf, records: rec_mf, input_hash: hash.clone(), crossing_epoch: None };
    let mut ntk_h = TrainHistory { scaling: Scaling::Ntk, records: rec_ntk, input_hash: hash, crossing_epoch: None };
    mf_h.finish();
    ntk_h.finish();
    Ok(PairedHistory { mf: mf_h, ntk: ntk_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;

    fn small() -> Scenario {
        let mut s = Scenario::new(60, 40, 30, 0.0, 0.0, Activation::Sigmoid, Scaling::Mf);
        s.mu_samples = 500;
        s
    }

    #[test]
    fn history_shape_and_determinism() {
        let s = small();
        let a = train(&s, &TrainOptions::new(3)).unwrap();
        let b = train(&s, &TrainOptions::new(3)).unwrap();
        assert_eq!(a.records.len(), 4);
        assert_eq!(a.records, b.records);
        assert!((a.records[0].align_g0 - 1.0).abs() < 1e-12);
        for r in &a.records {
            for v in [r.align_q, r.align_residue, r.align_target, r.align_g0] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        assert!(train(&small(), &TrainOptions::new(0)).is_err());
    }

    #[test]
    fn paired_runs_start_identical() {
        let p = train_paired(&small(), &TrainOptions { epochs: 2, angle_rank: 5, trial: 0 }).unwrap();
        assert_eq!(p.mf.input_hash, p.ntk.input_hash);
        assert!(p.mf.records[0].principal_angle_deg.unwrap() < 1e-5);
        assert_eq!(p.mf.records.len(), 3);
    }

    #[test]
    fn linear_mu_is_one() {
        // Identity activation is only reachable from code.
        let mut s = small();
        s.activation = Activation::LinearTest;
        let h = train(&s, &TrainOptions::new(1)).unwrap();
        assert_eq!(h.records[0].mu_min, 1.0);
        assert_eq!(h.records[0].mu_max, 1.0);
    }
}
