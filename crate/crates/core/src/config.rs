//! TOML run configuration.
//!
//! Top-level tables are `data`, `network`, `loss`, `target`, `regularizer` and
//! `run`; anything else, at any level, is rejected. Which fields are required
//! depends on the command, so every field is optional at parse time and the
//! accessors report the first missing one by its dotted path.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiments::{beta_grid, InitConfig, Regularizer, Scenario, TargetKind, TargetSpec, TrainOptions};
use crate::loss_residue::LossKind;
use crate::network::{Activation, Scaling, MU_SAMPLES};
use crate::spectra_align::{SpikeLabel, SpikeRule};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub nu: Option<f64>,
    pub alpha: Option<f64>,
    pub zeta_zero: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub m: Option<usize>,
    pub activation: Option<String>,
    pub scaling: Option<String>,
    pub init: Option<InitConfig>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub kind: Option<TargetKind>,
    pub noise_std: Option<f64>,
}

/// Sweep axes for the β command; `preset = "full"` fills unset axes with the full grid.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub preset: Option<String>,
    pub activations: Option<Vec<String>>,
    pub losses: Option<Vec<String>>,
    pub nus: Option<Vec<f64>>,
    pub alphas: Option<Vec<f64>>,
    pub scalings: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub scenario_id: Option<u64>,
    pub mu_samples: Option<usize>,
    pub threshold: Option<f64>,
    pub max_spikes: Option<usize>,
    pub spike_factor: Option<f64>,
    pub candidates: Option<Vec<SpikeLabel>>,
    pub epochs: Option<usize>,
    pub compare_scalings: Option<bool>,
    pub angle_rank: Option<usize>,
    pub trial: Option<u64>,
    pub n_grid: Option<Vec<usize>>,
    pub grid: Option<GridSection>,
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    pub has_header: Option<bool>,
    pub rows: Option<usize>,
    pub center: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataSection>,
    pub network: Option<NetworkSection>,
    pub loss: Option<LossSection>,
    pub target: Option<TargetSection>,
    pub regularizer: Option<Regularizer>,
    pub run: Option<RunSection>,
}

fn missing(path: &str) -> Error {
    Error::Config(format!("missing required field `{path}`"))
}

fn need<T: Clone>(v: &Option<T>, path: &str) -> Result<T> {
    v.clone().ok_or_else(|| missing(path))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(v: &[String]) -> Result<Vec<T>> {
    v.iter().map(|s| s.parse()).collect()
}

#[derive(Clone, Debug)]
pub struct BetaPlan {
    pub scenarios: Vec<Scenario>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Idx,
    Csv,
}

#[derive(Clone, Debug)]
pub struct IngestPlan {
    pub input: PathBuf,
    pub format: InputFormat,
    pub has_header: bool,
    pub rows: Option<usize>,
    pub center: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn run(&self) -> RunSection {
        self.run.clone().unwrap_or_default()
    }

    fn seed(&self, over: Option<u64>) -> u64 {
        over.or(self.run().seed).unwrap_or(0)
    }

    /// Everything except geometry and the swept tags.
    fn base(&self, seed: Option<u64>) -> Result<Scenario> {
        let run = self.run();
        let net = self.network.clone().unwrap_or_default();
        let target = self.target.clone().unwrap_or_default();
        let mut s = Scenario::new(2, 1, 1, 0.0, 0.0, Activation::Sigmoid, Scaling::Ntk);
        s.id = run.scenario_id.unwrap_or(0);
        s.seed = self.seed(seed);
        s.init = net.init.unwrap_or(InitConfig::Sphere);
        s.target = TargetSpec { kind: target.kind.unwrap_or(TargetKind::TripleIndex), noise_std: target.noise_std.unwrap_or(1.0) };
        s.regularizer = self.regularizer.unwrap_or(Regularizer::None);
        s.trials = run.trials.unwrap_or(1);
        s.mu_samples = run.mu_samples.unwrap_or(MU_SAMPLES);
        s.threshold = run.threshold.unwrap_or(0.5);
        let def = SpikeRule::default();
        s.spike_rule = SpikeRule { max_spikes: run.max_spikes.unwrap_or(def.max_spikes), factor: run.spike_factor.unwrap_or(def.factor) };
        if let Some(c) = run.candidates {
            s.candidates = c;
        }
        Ok(s)
    }

    /// The single scenario described by the file.
    pub fn scenario(&self, seed: Option<u64>) -> Result<Scenario> {
        let data = self.data.clone().ok_or_else(|| missing("data"))?;
        let net = self.network.clone().ok_or_else(|| missing("network"))?;
        let loss = self.loss.clone().ok_or_else(|| missing("loss"))?;
        let mut s = self.base(seed)?;
        s.n = need(&data.n, "data.n")?;
        s.d = need(&data.d, "data.d")?;
        s.nu = need(&data.nu, "data.nu")?;
        s.alpha = need(&data.alpha, "data.alpha")?;
        s.zeta_zero = data.zeta_zero.unwrap_or(false);
        s.m = need(&net.m, "network.m")?;
        s.activation = need(&net.activation, "network.activation")?.parse()?;
        s.scaling = need(&net.scaling, "network.scaling")?.parse()?;
        s.loss = need(&loss.kind, "loss.kind")?.parse()?;
        s.trials = need(&self.run().trials, "run.trials")?;
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }

    pub fn train_options(&self) -> Result<(TrainOptions, bool)> {
        let run = self.run();
        let epochs = need(&run.epochs, "run.epochs")?;
        if epochs == 0 {
            return Err(Error::Config("run.epochs must be at least 1".into()));
        }
        let mut opts = TrainOptions::new(epochs);
        if let Some(k) = run.angle_rank {
            opts.angle_rank = k;
        }
        opts.trial = run.trial.unwrap_or(0);
        Ok((opts, run.compare_scalings.unwrap_or(false)))
    }

    pub fn beta_plan(&self, seed: Option<u64>) -> Result<BetaPlan> {
        let run = self.run();
        let n_grid = need(&run.n_grid, "run.n_grid")?;
        let trials = need(&run.trials, "run.trials")?;
        let base = self.base(seed)?;
        let grid = run.grid.clone().unwrap_or_default();
        let scenarios = match grid.preset.as_deref() {
            Some("full") if grid.activations.is_none() && grid.losses.is_none() && grid.nus.is_none() && grid.alphas.is_none() && grid.scalings.is_none() => {
                beta_grid(base.seed, trials)
                    .into_iter()
                    .map(|g| Scenario { id: g.id + base.id, ..self.apply_grid(&base, &g) })
                    .collect()
            }
            Some("full") | None => self.grid_scenarios(&base, &grid, trials)?,
            Some(other) => return Err(Error::Config(format!("unknown grid preset `{other}` (expected full)"))),
        };
        for s in &scenarios {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(BetaPlan { scenarios, n_grid, trials })
    }

    fn apply_grid(&self, base: &Scenario, g: &Scenario) -> Scenario {
        Scenario {
            activation: g.activation,
            loss: g.loss,
            nu: g.nu,
            alpha: g.alpha,
            scaling: g.scaling,
            n: g.n,
            d: g.d,
            m: g.m,
            ..base.clone()
        }
    }

    fn grid_scenarios(&self, base: &Scenario, grid: &GridSection, trials: usize) -> Result<Vec<Scenario>> {
        let full = grid.preset.as_deref() == Some("full");
        let net = self.network.clone().unwrap_or_default();
        let data = self.data.clone().unwrap_or_default();
        let loss = self.loss.clone().unwrap_or_default();
        let axis_or = |list: &Option<Vec<String>>, single: &Option<String>, path: &str, all: Vec<String>| -> Result<Vec<String>> {
            match (list, single) {
                (Some(l), _) => Ok(l.clone()),
                (None, _) if full => Ok(all),
                (None, Some(s)) => Ok(vec![s.clone()]),
                (None, None) => Err(missing(path)),
            }
        };
        let acts: Vec<Activation> = parse_list(&axis_or(
            &grid.activations,
            &net.activation,
            "network.activation",
            Activation::ALL.iter().map(|a| a.to_string()).collect(),
        )?)?;
        let losses: Vec<LossKind> =
            parse_list(&axis_or(&grid.losses, &loss.kind, "loss.kind", LossKind::ALL.iter().map(|l| l.to_string()).collect())?)?;
        let scalings: Vec<Scaling> =
            parse_list(&axis_or(&grid.scalings, &net.scaling, "network.scaling", vec!["mf".into(), "ntk".into()])?)?;
        let num_axis = |list: &Option<Vec<f64>>, single: Option<f64>, path: &str, all: Vec<f64>| -> Result<Vec<f64>> {
            match (list, single) {
                (Some(l), _) => Ok(l.clone()),
                (None, _) if full => Ok(all),
                (None, Some(v)) => Ok(vec![v]),
                (None, None) => Err(missing(path)),
            }
        };
        let nus = num_axis(&grid.nus, data.nu, "data.nu", vec![0.125, 0.375, 0.625])?;
        let alphas = num_axis(&grid.alphas, data.alpha, "data.alpha", vec![0.0, 0.5])?;
        for (name, len) in [("activations", acts.len()), ("losses", losses.len()), ("nus", nus.len()), ("alphas", alphas.len()), ("scalings", scalings.len())] {
            if len == 0 {
                return Err(Error::Config(format!("grid axis `run.grid.{name}` is empty")));
            }
        }
        let mut out = Vec::new();
        for &activation in &acts {
            for &l in &losses {
                for &nu in &nus {
                    for &alpha in &alphas {
                        for &scaling in &scalings {
                            let mut s = base.clone();
                            s.id = base.id + out.len() as u64;
                            s.activation = activation;
                            s.loss = l;
                            s.nu = nu;
                            s.alpha = alpha;
                            s.scaling = scaling;
                            s.trials = trials;
                            s.n = 750;
                            s.d = 1000;
                            s.m = 1250;
                            out.push(s);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn ingest_plan(&self, base_dir: Option<&Path>) -> Result<IngestPlan> {
        let run = self.run();
        let mut input = need(&run.input, "run.input")?;
        if input.is_relative() {
            if let Some(dir) = base_dir {
                input = dir.join(input);
            }
        }
        let format = match run.format.as_deref() {
            Some("idx") => InputFormat::Idx,
            Some("csv") => InputFormat::Csv,
            Some(other) => return Err(Error::Config(format!("unknown input format `{other}` (expected idx or csv)"))),
            None => match input.extension().and_then(|e| e.to_str()) {
                Some("csv") | Some("txt") => InputFormat::Csv,
                _ => InputFormat::Idx,
            },
        };
        Ok(IngestPlan { input, format, has_header: run.has_header.unwrap_or(false), rows: run.rows, center: run.center.unwrap_or(true) })
    }
}
