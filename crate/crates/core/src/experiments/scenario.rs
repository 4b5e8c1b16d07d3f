use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use super::{Regularizer, Scenario};
use crate::data_model::{sample_spiked_data, DataSample, SpikedCovariance};
use crate::error::Result;
use crate::gradient_decomp::{decompose, jacobian_penalty_gradient, GradientDecomposition};
use crate::linalg::{operator_norm, RankOne};
use crate::loss_residue::{make_targets, residue_diagnostics, ResidueDiagnostics, TargetModel};
use crate::network::{estimate_mu, init_weights, sample_outer_weights, Network};
use crate::rng::{unit_vector, Purpose, TrialStreams};
use crate::spectra_align::{classify_spikes, label_greedy, Candidate, SpectralReport, Spike, SpikeLabel};

/// Everything drawn for one trial before any gradient is taken.
#[derive(Clone, Debug)]
pub struct TrialState {
    /// Data the network sees; includes input noise when that regulariser is active.
    pub sample: DataSample,
    pub y: Array1<f64>,
    pub target: TargetModel,
    pub net: Network,
    /// Population covariance of the rows of `sample.x`.
    pub cov: SpikedCovariance,
    pub streams: TrialStreams,
}

pub fn prepare_trial(s: &Scenario, trial: u64) -> Result<TrialState> {
    s.validate()?;
    let streams = TrialStreams::new(s.seed, s.id, trial);

    let mut rng = streams.get(Purpose::Data);
    let spec = s.data_spec(unit_vector(s.d, &mut rng))?;
    let clean = sample_spiked_data(&spec, &mut rng)?;

    let mut rng = streams.get(Purpose::Target);
    let target = s.target.draw(s.d, &mut rng);
    let y = make_targets(&target, &clean.x.view(), s.loss, &mut rng)?;

    let mut rng = streams.get(Purpose::Weights);
    let w = init_weights(s.init.resolve(s.n)?, s.m, s.d, &spec.q.view(), Some(&clean.x.view()), &mut rng)?;
    let a = sample_outer_weights(s.m, &mut rng);
    let net = Network::new(w, a, s.scaling, s.activation)?;

    let tau2 = s.regularizer.input_noise();
    let mut rng = streams.get(Purpose::InputNoise);
    let sample = clean.with_input_noise(tau2, &mut rng)?;
    let cov = spec.covariance().with_isotropic_noise(tau2);
    Ok(TrialState { sample, y, target, net, cov, streams })
}

impl TrialState {
    pub fn candidates(&self, labels: &[SpikeLabel], r: &Array1<f64>) -> Vec<Candidate> {
        labels
            .iter()
            .filter_map(|&l| {
                let v = match l {
                    SpikeLabel::Residue => self.sample.x_b.t().dot(r),
                    SpikeLabel::Data => self.sample.q.clone(),
                    SpikeLabel::Target => self.sample.x_b.t().dot(&self.y),
                    SpikeLabel::Teacher => self.target.teacher()?,
                    SpikeLabel::Unmatched => return None,
                };
                Some(Candidate::new(l, v))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentNorms {
    pub g: f64,
    pub s1: f64,
    pub s12: f64,
    pub s2: f64,
    pub e: f64,
    /// `‖S1 + S12‖₂`
    pub residue_composite: f64,
    /// `‖S12 + S2‖₂`
    pub data_composite: f64,
    /// `‖S3‖₂` when the Jacobian penalty is active.
    pub s3: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub report: SpectralReport,
    pub norms: ComponentNorms,
    pub diagnostics: Option<ResidueDiagnostics>,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Jacobian penalty on an activation with `σ″ ≡ 0` almost everywhere.
    pub penalty_degenerate: bool,
}

/// The decomposition and spectral report of one trial.
pub fn run_trial(s: &Scenario, trial: u64) -> Result<(TrialState, GradientDecomposition, TrialOutcome)> {
    let st = prepare_trial(s, trial)?;
    let mut rng = st.streams.get(Purpose::Mu);
    let mu = estimate_mu(&st.net, &st.cov, s.mu_samples, &mut rng)?;
    let dec = decompose(&st.net, &st.sample, &st.y.view(), s.loss, &mu.view())?;

    let mut g_total = dec.g.clone();
    let mut b = dec.spikes_dense();
    let mut s3_norm = 0.0;
    let mut penalty_degenerate = false;
    match s.regularizer {
        Regularizer::WeightDecay { lambda } => g_total.scaled_add(lambda, &st.net.w.t()),
        Regularizer::Jacobian { lambda } => {
            let p = jacobian_penalty_gradient(&st.net, &st.sample, lambda)?;
            g_total += &p.grad;
            p.s3.add_to(&mut b);
            s3_norm = p.s3.norm();
            penalty_degenerate = !p.has_curvature;
        }
        Regularizer::None | Regularizer::InputNoise { .. } => {}
    }

    let candidates = st.candidates(&s.candidates, &dec.r);
    let report = classify_spikes(&g_total.view(), Some(&b.view()), &candidates, s.threshold, s.spike_rule)?;
    let rank_one_norm = |r: RankOne| r.norm();
    let norms = ComponentNorms {
        g: operator_norm(&g_total.view()),
        s1: dec.s1.norm(),
        s12: dec.s12.norm(),
        s2: dec.s2.norm(),
        e: operator_norm(&dec.e.view()),
        residue_composite: rank_one_norm(dec.residue_composite()),
        data_composite: rank_one_norm(dec.data_composite()),
        s3: s3_norm,
    };
    let diagnostics = residue_diagnostics(&dec.r.view(), &st.sample.z.view()).ok();
    let mu_min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let outcome = TrialOutcome { trial, report, norms, diagnostics, mu_min, mu_max, penalty_degenerate };
    Ok((st, dec, outcome))
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LabelStats {
    /// Fraction of trials in which the label is among the detected spikes.
    pub detected_fraction: f64,
    /// Fraction of trials in which the label is on the largest spike.
    pub top_fraction: f64,
    /// Mean best cosine of the candidate with the leading vectors.
    pub mean_score: f64,
    /// Mean overlay value over the trials that have this overlay.
    pub mean_overlay: Option<f64>,
}

/// Trial-aggregated spectrum and labels.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub mean_singular_values: Vec<f64>,
    /// Spikes of the mean spectrum, labelled from the trial-averaged cosine table.
    pub spikes: Vec<Spike>,
    pub label_stats: BTreeMap<SpikeLabel, LabelStats>,
    pub mean_spike_count: f64,
    pub trials: Vec<TrialOutcome>,
}

impl ScenarioReport {
    pub fn labels(&self) -> Vec<SpikeLabel> {
        self.spikes.iter().map(|s| s.label).collect()
    }

    pub fn stats(&self, label: SpikeLabel) -> LabelStats {
        self.label_stats.get(&label).cloned().unwrap_or_default()
    }

    /// Fraction of trials whose largest spike carries `label`.
    pub fn top_fraction(&self, label: SpikeLabel) -> f64 {
        self.stats(label).top_fraction
    }
}

pub fn run_scenario(s: &Scenario) -> Result<ScenarioReport> {
    s.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..s.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(s, t).map(|(_, _, o)| o))
        .collect::<Result<_>>()?;
    Ok(aggregate(s, outcomes))
}

fn aggregate(s: &Scenario, trials: Vec<TrialOutcome>) -> ScenarioReport {
    let nt = trials.len() as f64;
    let len = trials.iter().map(|t| t.report.singular_values.len()).min().unwrap_or(0);
    let mut mean = vec![0.0; len];
    for t in &trials {
        for (m, v) in mean.iter_mut().zip(&t.report.singular_values) {
            *m += v / nt;
        }
    }
    let labels = trials[0].report.candidate_order.clone();
    let rows = trials.iter().map(|t| t.report.cosines.len()).min().unwrap_or(0);
    let mut cos = Array2::zeros((rows, labels.len()));
    for t in &trials {
        for i in 0..rows {
            for j in 0..labels.len() {
                cos[[i, j]] += t.report.cosines[i][j] / nt;
            }
        }
    }
    let count = s.spike_rule.count(&mean);
    let spikes = label_greedy(&cos.view(), &labels, count, s.threshold)
        .into_iter()
        .enumerate()
        .map(|(i, (label, alignment))| Spike { rank: i + 1, label, value: mean[i], alignment })
        .collect();

    let mut label_stats = BTreeMap::new();
    for &l in &labels {
        let detected = trials.iter().filter(|t| t.report.labels().contains(&l)).count() as f64;
        let top = trials.iter().filter(|t| t.report.top_label() == Some(l)).count() as f64;
        let score = trials.iter().map(|t| t.report.candidate_scores.get(&l).copied().unwrap_or(0.0)).sum::<f64>();
        let overlays: Vec<f64> = trials.iter().filter_map(|t| t.report.overlay(l)).collect();
        let mean_overlay = if overlays.is_empty() { None } else { Some(overlays.iter().sum::<f64>() / overlays.len() as f64) };
        label_stats.insert(
            l,
            LabelStats { detected_fraction: detected / nt, top_fraction: top / nt, mean_score: score / nt, mean_overlay },
        );
    }
    let mean_spike_count = trials.iter().map(|t| t.report.spikes.len() as f64).sum::<f64>() / nt;
    ScenarioReport { scenario: s.clone(), mean_singular_values: mean, spikes, label_stats, mean_spike_count, trials }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Scaling};

    fn small(act: Activation) -> Scenario {
        let mut s = Scenario::new(60, 80, 100, 0.2, 0.0, act, Scaling::Ntk);
        s.trials = 3;
        s.mu_samples = 2000;
        s
    }

    #[test]
    fn trials_are_reproducible_and_distinct() {
        let s = small(Activation::Tanh);
        let a = prepare_trial(&s, 1).unwrap();
        let b = prepare_trial(&s, 1).unwrap();
        let c = prepare_trial(&s, 2).unwrap();
        assert_eq!(a.sample.x, b.sample.x);
        assert_eq!(a.net.w, b.net.w);
        assert_ne!(a.sample.x, c.sample.x);
    }

    #[test]
    fn common_random_numbers_across_activations() {
        let a = prepare_trial(&small(Activation::Tanh), 0).unwrap();
        let b = prepare_trial(&small(Activation::Relu), 0).unwrap();
        assert_eq!(a.sample.x, b.sample.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.net.w, b.net.w);
    }

    #[test]
    fn scenario_runs_and_reconstructs() {
        let s = small(Activation::Sigmoid);
        let (_, dec, out) = run_trial(&s, 0).unwrap();
        assert!(dec.reconstruction_error() < 1e-9);
        assert!(out.norms.g > 0.0);
        let rep = run_scenario(&s).unwrap();
        assert_eq!(rep.trials.len(), 3);
        assert!(rep.mean_singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn input_noise_keeps_exact_split() {
        let mut s = small(Activation::Swish);
        s.regularizer = Regularizer::InputNoise { tau2: 0.25 };
        let (st, dec, _) = run_trial(&s, 0).unwrap();
        assert!(st.sample.reconstruction_error() < 1e-10);
        assert!(dec.reconstruction_error() < 1e-9);
    }
}
