//! `junta-probe`: command-line front end for the experiments in
//! `junta_probe_core`.
//!
//! Settings come from three layers, later ones winning: a `key = value`
//! file given by `--config`, `JUNTA_PROBE_<KEY>` environment variables, and
//! command-line flags.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use junta_probe_core::harness::{self, Command, ExperimentReport, RunConfig, RunStatus};
use junta_probe_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "junta-probe", version, about = "Test and learn linear juntas over Gaussian space from query access")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Is f close to a linear k-junta with surface area at most s?
    Test(Flags),
    /// Learn the relevant subspace and a hypothesis on it.
    Learn(Flags),
    /// Rank test, learning, then an offline class check of the learned g.
    StructureTest(Flags),
    /// Coupling, total variation and distance experiments on D1 / D2.
    Lowerbound(Flags),
    /// Estimator accuracy against closed forms.
    BenchEstimators(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// key = value settings file
    #[arg(long)]
    config: Option<PathBuf>,
    /// zoo JSON file, inline JSON, or descriptor such as halfspace:0, parity:0,1,2, intersection:2
    #[arg(long)]
    function: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// surface-area bound; for lowerbound, stripe counts (comma separated)
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    /// practical or paper-faithful
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// JSONL report (appended); CSV for lowerbound
    #[arg(long)]
    out: Option<String>,
    /// JSONL report path for lowerbound
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    max_queries: Option<String>,
    #[arg(long)]
    max_cover: Option<String>,
    #[arg(long)]
    time_hint: Option<String>,
    /// skip the surface-area gate
    #[arg(long)]
    no_gate: bool,
    /// number of anchors
    #[arg(long)]
    r: Option<String>,
    /// samples per Gram entry
    #[arg(long)]
    entry_samples: Option<String>,
    /// thresholds:N, constants:N or cover
    #[arg(long)]
    hypotheses: Option<String>,
    /// fresh points for the learned-hypothesis error
    #[arg(long)]
    fresh: Option<String>,
    /// grid:AxB, spread:N, cloud:N, clusters:N or points:x,y;...
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    tv_trials: Option<String>,
    /// bench repetitions
    #[arg(long)]
    reps: Option<String>,
    /// bench time parameter
    #[arg(long)]
    t: Option<String>,
    /// bench degree-1 parameter
    #[arg(long)]
    eta: Option<String>,
    /// bench inner correlation
    #[arg(long)]
    rho: Option<String>,
    /// bench failure probability
    #[arg(long)]
    delta: Option<String>,
}

impl Flags {
    fn settings(&self) -> Vec<(String, String)> {
        let opts = [
            ("function", &self.function),
            ("dim", &self.dim),
            ("k", &self.k),
            ("s", &self.s),
            ("eps", &self.eps),
            ("preset", &self.preset),
            ("seed", &self.seed),
            ("out", &self.out),
            ("max-queries", &self.max_queries),
            ("max-cover", &self.max_cover),
            ("time-hint", &self.time_hint),
            ("r", &self.r),
            ("entry-samples", &self.entry_samples),
            ("hypotheses", &self.hypotheses),
            ("fresh", &self.fresh),
            ("design", &self.design),
            ("trials", &self.trials),
            ("tv-trials", &self.tv_trials),
            ("reps", &self.reps),
            ("t", &self.t),
            ("eta", &self.eta),
            ("rho", &self.rho),
            ("delta", &self.delta),
        ];
        let mut out: Vec<(String, String)> = opts
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.no_gate {
            out.push(("gate".into(), "false".into()));
        }
        out
    }
}

fn build_config(command: Command, flags: &Flags) -> Result<RunConfig> {
    let mut layers = Vec::new();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
        layers.extend(harness::parse_config_file(&text)?);
    }
    layers.extend(harness::env_settings(std::env::vars()));
    layers.extend(flags.settings());
    let cfg = RunConfig::from_settings(command, layers.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(cfg)
}

fn write_outputs(cfg: &RunConfig, flags: &Flags, report: &ExperimentReport) -> Result<()> {
    if cfg.command == Command::Lowerbound {
        let rows = harness::lowerbound_rows(report)?;
        match &cfg.out {
            Some(path) => {
                let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
                harness::write_lowerbound_csv(&rows, f)?;
            }
            None => harness::write_lowerbound_csv(&rows, std::io::stdout().lock())?,
        }
        if let Some(path) = &flags.report {
            report.append_to(path)?;
        }
        return Ok(());
    }
    match &cfg.out {
        Some(path) => report.append_to(path).with_context(|| format!("writing {}", path.display()))?,
        None => writeln!(std::io::stdout().lock(), "{}", report.to_json_line()?)?,
    }
    Ok(())
}

fn summary(report: &ExperimentReport) -> String {
    let p = &report.payload;
    let head = match report.command {
        Command::Test | Command::StructureTest => format!("verdict {}", p["verdict"].as_str().unwrap_or("-")),
        Command::Learn => format!(
            "learned {} on {} directions, fresh error {}",
            p["g"].as_str().unwrap_or("-"),
            p["ell"],
            p["fresh_error"]
        ),
        Command::Lowerbound => format!("{} rows", p["rows"].as_array().map_or(0, Vec::len)),
        Command::BenchEstimators => format!("{} failures", p["failures"]),
    };
    format!("{}: {head}, {} queries", report.command, report.ledger.queries)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Sub::Test(f) => (Command::Test, f),
        Sub::Learn(f) => (Command::Learn, f),
        Sub::StructureTest(f) => (Command::StructureTest, f),
        Sub::Lowerbound(f) => (Command::Lowerbound, f),
        Sub::BenchEstimators(f) => (Command::BenchEstimators, f),
    };
    let cfg = match build_config(command, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("usage error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let report = match harness::run(&cfg) {
        Ok(r) => r,
        // bad descriptors and designs surface only once the run starts
        Err(e @ (CoreError::InvalidArgument(_) | CoreError::Parse(_))) => {
            eprintln!("usage error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = write_outputs(&cfg, flags, &report).map(|()| report);
    match result {
        Ok(report) if report.status == RunStatus::BudgetExceeded => {
            eprintln!("budget exceeded: {}", report.error.as_deref().unwrap_or(""));
            ExitCode::from(3)
        }
        Ok(report) => {
            eprintln!("{}", summary(&report));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
