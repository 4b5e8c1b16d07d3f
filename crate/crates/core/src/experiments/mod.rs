//! Experiment drivers: single-shot spectra, β sweeps, training dynamics and
//! exponent audits.

mod audit;
mod beta;
mod scenario;
mod train;

pub use audit::{exponent_audit, AuditPoint, AuditReport};
pub use beta::{beta_grid, estimate_beta, estimate_beta_with, BetaFit, BetaRow, PSI1, PSI2};
pub use scenario::{prepare_trial, run_scenario, run_trial, LabelStats, ScenarioReport, TrialOutcome, TrialState};
pub use train::{train, train_paired, EpochRecord, PairedHistory, TrainHistory, TrainOptions};

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::SpikedDataSpec;
use crate::error::{Error, Result};
use crate::loss_residue::{LossKind, TargetModel};
use crate::network::{Activation, Scaling, WeightInit, MU_SAMPLES};
use crate::rng::unit_vector;
use crate::spectra_align::{SpikeLabel, SpikeRule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Regularizer {
    None,
    WeightDecay { lambda: f64 },
    InputNoise { tau2: f64 },
    Jacobian { lambda: f64 },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Regularizer::None => return Ok(()),
            Regularizer::WeightDecay { lambda } | Regularizer::Jacobian { lambda } => lambda,
            Regularizer::InputNoise { tau2 } => tau2,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularizer strength must be >= 0, got {v}")));
        }
        Ok(())
    }

    pub fn input_noise(&self) -> f64 {
        match *self {
            Regularizer::InputNoise { tau2 } => tau2,
            _ => 0.0,
        }
    }
}

/// Inner-weight initialisation with the spike strength given directly or as a power of `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitConfig {
    Sphere,
    Spiked {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        /// `c = n^c_exponent`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_exponent: Option<f64>,
    },
    OrthoToQ,
    DataDependent,
}

impl InitConfig {
    pub fn resolve(&self, n: usize) -> Result<WeightInit> {
        Ok(match *self {
            InitConfig::Sphere => WeightInit::Sphere,
            InitConfig::OrthoToQ => WeightInit::OrthoToQ,
            InitConfig::DataDependent => WeightInit::DataDependent,
            InitConfig::Spiked { c: Some(c), c_exponent: None } => WeightInit::Spiked { c },
            InitConfig::Spiked { c: None, c_exponent: Some(e) } => WeightInit::Spiked { c: (n as f64).powf(e) },
            InitConfig::Spiked { .. } => {
                return Err(Error::Config("spiked init needs exactly one of `c` and `c_exponent`".into()))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    SingleIndex,
    TripleIndex,
}

/// Target family; directions are drawn per trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
}

fn default_noise_std() -> f64 {
    1.0
}

impl TargetSpec {
    pub fn triple(noise_std: f64) -> Self {
        Self { kind: TargetKind::TripleIndex, noise_std }
    }

    pub fn draw<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> TargetModel {
        match self.kind {
            TargetKind::SingleIndex => TargetModel::SingleIndex { omega: unit_vector(d, rng).to_vec(), noise_std: self.noise_std },
            TargetKind::TripleIndex => TargetModel::TripleIndex {
                betas: [unit_vector(d, rng).to_vec(), unit_vector(d, rng).to_vec(), unit_vector(d, rng).to_vec()],
                noise_std: self.noise_std,
            },
        }
    }
}

/// One fully specified experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub nu: f64,
    pub alpha: f64,
    pub zeta_zero: bool,
    pub activation: Activation,
    pub loss: LossKind,
    pub scaling: Scaling,
    pub init: InitConfig,
    pub target: TargetSpec,
    pub regularizer: Regularizer,
    pub trials: usize,
    pub mu_samples: usize,
    pub threshold: f64,
    pub spike_rule: SpikeRule,
    pub candidates: Vec<SpikeLabel>,
}

impl Scenario {
    /// Defaults: sphere weights, triple-index mse targets, no regulariser.
    pub fn new(n: usize, d: usize, m: usize, nu: f64, alpha: f64, activation: Activation, scaling: Scaling) -> Self {
        Self {
            id: 0,
            seed: 0,
            n,
            d,
            m,
            nu,
            alpha,
            zeta_zero: false,
            activation,
            loss: LossKind::Mse,
            scaling,
            init: InitConfig::Sphere,
            target: TargetSpec::triple(1.0),
            regularizer: Regularizer::None,
            trials: 1,
            mu_samples: MU_SAMPLES,
            threshold: 0.5,
            spike_rule: SpikeRule::default(),
            candidates: vec![SpikeLabel::Data, SpikeLabel::Residue],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d == 0 || self.m == 0 {
            return Err(Error::InvalidParameter(format!("need n >= 2, d >= 1, m >= 1 (n={}, d={}, m={})", self.n, self.d, self.m)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.mu_samples == 0 {
            return Err(Error::InvalidParameter("mu_samples must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if self.spike_rule.max_spikes == 0 || !(self.spike_rule.factor > 1.0) {
            return Err(Error::InvalidParameter("spike rule needs max_spikes >= 1 and factor > 1".into()));
        }
        if self.candidates.is_empty() || self.candidates.contains(&SpikeLabel::Unmatched) {
            return Err(Error::InvalidParameter("candidates must be a nonempty list of residue/data/target/teacher".into()));
        }
        if self.candidates.contains(&SpikeLabel::Teacher) && self.target.kind != TargetKind::SingleIndex {
            return Err(Error::InvalidParameter("the teacher candidate needs a single_index target".into()));
        }
        if !(self.target.noise_std >= 0.0) {
            return Err(Error::InvalidParameter("noise_std must be >= 0".into()));
        }
        self.regularizer.validate()?;
        self.init.resolve(self.n)?;
        self.data_spec(Array1::from_elem(self.d, 1.0 / (self.d as f64).sqrt()))?;
        Ok(())
    }

    pub fn data_spec(&self, q: Array1<f64>) -> Result<SpikedDataSpec> {
        let mut q = q;
        // Normalise once more so rounding in the draw never trips validation.
        let nrm = q.dot(&q).sqrt();
        q /= nrm;
        let spec = SpikedDataSpec::new(self.n, self.d, self.nu, self.alpha, q)?;
        Ok(if self.zeta_zero { spec.without_spike() } else { spec })
    }

    pub fn with_geometry(&self, n: usize, d: usize, m: usize) -> Self {
        Self { n, d, m, ..self.clone() }
    }
}
