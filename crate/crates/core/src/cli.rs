//! Command-line front end: `spectrum`, `train`, `beta` and `ingest`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{InputFormat, RunConfig};
use crate::data_model::estimate_spike_exponent;
use crate::error::{Error, Result};
use crate::experiments::{estimate_beta, run_scenario, train, train_paired, BetaRow, EpochRecord, ScenarioReport};
use crate::ingest::{load_idx, load_matrix_csv, Preprocessing, SourceFormat};

#[derive(Debug, Parser)]
#[command(name = "spikegrad", version, about = "Spike structure of first-layer gradients on spiked data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gradient spectrum at initialisation with spike labels.
    Spectrum(CommonArgs),
    /// Gradient-descent dynamics, optionally MF and NTK side by side.
    Train(CommonArgs),
    /// Residue-to-spike alignment exponent over a scenario grid.
    Beta(CommonArgs),
    /// Spike-exponent estimate for a real data matrix.
    Ingest(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Restricts output to one format; both are written by default.
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl CommonArgs {
    fn csv(&self) -> bool {
        self.format != Some(OutputFormat::Json)
    }

    fn json(&self) -> bool {
        self.format != Some(OutputFormat::Csv)
    }
}

/// One `spectrum.csv` row; label and alignment are empty past the detected spikes.
#[derive(Serialize)]
struct SpectrumRow {
    trial: u64,
    rank: usize,
    singular_value: f64,
    spike_label: Option<String>,
    alignment: Option<f64>,
}

#[derive(Serialize)]
struct FitEntry {
    beta_hat: f64,
    r2: f64,
}

#[derive(Serialize)]
struct IngestSummary {
    nu_hat: f64,
    alpha_hat: Option<f64>,
    n: usize,
    d: usize,
    top_eigenvalue: f64,
    source: String,
    format: SourceFormat,
    preprocessing: Preprocessing,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::new(std::io::ErrorKind::Other, format!("{other:?}"))),
    }
}

fn spectrum_rows(report: &ScenarioReport) -> Vec<SpectrumRow> {
    let mut rows = Vec::new();
    for t in &report.trials {
        for (i, &v) in t.report.singular_values.iter().enumerate() {
            let spike = t.report.spikes.get(i);
            rows.push(SpectrumRow {
                trial: t.trial,
                rank: i + 1,
                singular_value: v,
                spike_label: spike.map(|s| s.label.to_string()),
                alignment: spike.map(|s| s.alignment),
            });
        }
    }
    rows
}

fn history_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    write_csv(path, records)
}

fn cmd_spectrum(args: &CommonArgs, cfg: &RunConfig) -> Result<()> {
    let s = cfg.scenario(args.seed)?;
    let report = run_scenario(&s)?;
    if args.csv() {
        write_csv(&args.out.join("spectrum.csv"), &spectrum_rows(&report))?;
    }
    if args.json() {
        write_json(&args.out.join("report.json"), &report)?;
    }
    Ok(())
}

fn cmd_train(args: &CommonArgs, cfg: &RunConfig) -> Result<()> {
    let s = cfg.scenario(args.seed)?;
    let (opts, paired) = cfg.train_options()?;
    #[derive(Serialize)]
    struct Summary<'a, H: Serialize> {
        scenario: &'a crate::experiments::Scenario,
        options: &'a crate::experiments::TrainOptions,
        history: H,
    }
    if paired {
        let h = train_paired(&s, &opts)?;
        if args.csv() {
            history_csv(&args.out.join("history_mf.csv"), &h.mf.records)?;
            history_csv(&args.out.join("history_ntk.csv"), &h.ntk.records)?;
        }
        if args.json() {
            write_json(&args.out.join("summary.json"), &Summary { scenario: &s, options: &opts, history: &h })?;
        }
    } else {
        let h = train(&s, &opts)?;
        if args.csv() {
            history_csv(&args.out.join("history.csv"), &h.records)?;
        }
        if args.json() {
            write_json(&args.out.join("summary.json"), &Summary { scenario: &s, options: &opts, history: &h })?;
        }
    }
    Ok(())
}

fn cmd_beta(args: &CommonArgs, cfg: &RunConfig) -> Result<()> {
    let plan = cfg.beta_plan(args.seed)?;
    let mut rows = Vec::new();
    let mut fits = BTreeMap::new();
    for s in &plan.scenarios {
        let fit = estimate_beta(s, &plan.n_grid, plan.trials)?;
        rows.extend(BetaRow::rows(s, &fit));
        fits.insert(s.id, FitEntry { beta_hat: fit.beta_hat, r2: fit.r2 });
    }
    if args.csv() {
        write_csv(&args.out.join("beta.csv"), &rows)?;
    }
    if args.json() {
        write_json(&args.out.join("fit.json"), &fits)?;
    }
    Ok(())
}

fn cmd_ingest(args: &CommonArgs, cfg: &RunConfig) -> Result<()> {
    let plan = cfg.ingest_plan(args.config.parent())?;
    let mut data = match plan.format {
        InputFormat::Idx => load_idx(&plan.input)?,
        InputFormat::Csv => load_matrix_csv(&plan.input, plan.has_header)?,
    };
    if let Some(rows) = plan.rows {
        data = data.truncate_rows(rows);
    }
    if plan.center {
        data = data.centered();
    }
    let est = estimate_spike_exponent(&data.x.view())?;
    let summary = IngestSummary {
        nu_hat: est.nu_hat,
        alpha_hat: est.alpha_hat.is_finite().then_some(est.alpha_hat),
        n: est.n,
        d: est.d,
        top_eigenvalue: est.top_eigenvalue,
        source: data.path.display().to_string(),
        format: data.format,
        preprocessing: data.preprocessing,
    };
    write_json(&args.out.join("estimate.json"), &summary)
}

/// Runs a parsed command line, writing outputs under `--out`.
pub fn run(cli: &Cli) -> Result<()> {
    let (Command::Spectrum(args) | Command::Train(args) | Command::Beta(args) | Command::Ingest(args)) = &cli.command;
    let cfg = RunConfig::load(&args.config)?;
    fs::create_dir_all(&args.out)?;
    let work = || match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Beta(a) => cmd_beta(a, &cfg),
        Command::Ingest(a) => cmd_ingest(a, &cfg),
    };
    match args.jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Entry point returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
