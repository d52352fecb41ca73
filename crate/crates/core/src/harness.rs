//! Experiment orchestration: run configuration, dispatch, and JSONL reports.
//!
//! Seeds: the master seed `m` gives `GaussianSampler::new(m)`; each stage
//! draws from `child(tag)` with the fixed tags below, and per-item streams
//! use `child2(tag, index)`. Nothing else is random.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{invalid, Error, Result};
use crate::estimators::{estimate, trace_samples, EstimatorConfig, Target};
use crate::hypothesis::{FamilySpec, ThresholdClassChecker};
use crate::learner::{coefficient_bound, evaluate_learned, find_invariant_structure, test_structure_class, LearnParams};
use crate::lowerbound::{close_pair_straddle_rate, coupling_experiment, estimate_tv_distance, CouplingSummary, QueryDesign, RateCheck, TvEstimate};
use crate::oracle::{Function, Oracle, QueryLedger};
use crate::sampler::GaussianSampler;
use crate::tester::{gate_epsilon, test_rank, NoiseSensitivityGate, Preset, RankTestParams, SurfaceAreaGate};
use crate::truth::{halfspace_noise_sensitivity_at, OrthoCombo};
use crate::zoo::{make_halfspace, random_intersection, randomly_rotated, sample_d1, sample_d2, sign_lifted_parity, ZooFunction};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const FUNCTION_STREAM: u64 = 0xF0;
const TEST_STREAM: u64 = 0x7E;
const LEARN_STREAM: u64 = 0x1E;
const FRESH_STREAM: u64 = 0xF5;
const STRUCTURE_STREAM: u64 = 0x57;
const DESIGN_STREAM: u64 = 0xDE;
const LOWERBOUND_STREAM: u64 = 0x1B;
const BENCH_STREAM: u64 = 0xBE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Test,
    Learn,
    StructureTest,
    Lowerbound,
    BenchEstimators,
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Command::Test),
            "learn" => Ok(Command::Learn),
            "structure-test" => Ok(Command::StructureTest),
            "lowerbound" => Ok(Command::Lowerbound),
            "bench-estimators" => Ok(Command::BenchEstimators),
            _ => Err(Error::Parse(format!("unknown subcommand {s:?}"))),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Test => "test",
            Command::Learn => "learn",
            Command::StructureTest => "structure-test",
            Command::Lowerbound => "lowerbound",
            Command::BenchEstimators => "bench-estimators",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    /// zoo JSON path, inline JSON, or a short descriptor (see `load_function`)
    pub function: Option<String>,
    pub dim: Option<usize>,
    pub k: usize,
    /// one value except for `lowerbound`, which sweeps a list
    pub s: Vec<f64>,
    pub epsilon: f64,
    pub preset: Preset,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub max_queries: Option<u64>,
    pub max_cover: f64,
    /// recorded, not enforced
    pub time_hint: Option<f64>,
    /// run the surface-area gate before the rank test
    pub gate: bool,
    pub r: Option<usize>,
    pub entry_samples: Option<u64>,
    pub hypotheses: FamilySpec,
    /// fresh points for the learned-hypothesis error
    pub fresh: usize,
    pub design: String,
    pub trials: u64,
    pub tv_trials: Option<u64>,
    pub reps: usize,
    pub t: f64,
    pub eta: f64,
    pub rho: f64,
    pub delta: f64,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            function: None,
            dim: None,
            k: 1,
            s: vec![1.0],
            epsilon: 0.25,
            preset: Preset::Practical,
            seed: 0,
            out: None,
            max_queries: None,
            max_cover: crate::learner::DEFAULT_COVER_CAP,
            time_hint: None,
            gate: true,
            r: None,
            entry_samples: None,
            hypotheses: FamilySpec::Thresholds(200),
            fresh: 1000,
            design: "spread:5".into(),
            trials: 10_000,
            tv_trials: None,
            reps: 1,
            t: 0.5,
            eta: 0.1,
            rho: 0.3,
            delta: 0.05,
        }
    }

    /// Keys accepted in config files, `JUNTA_PROBE_*` variables and flags.
    pub const KEYS: &'static [&'static str] = &[
        "function", "dim", "k", "s", "eps", "preset", "seed", "out", "max-queries", "max-cover", "time-hint", "gate", "r",
        "entry-samples", "hypotheses", "fresh", "design", "trials", "tv-trials", "reps", "t", "eta", "rho", "delta",
    ];

    /// Applies one `key = value` setting; `_` and `-` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        let v = value.trim();
        let bad = |what: &str| Error::Parse(format!("field {key}: expected {what}, got {v:?}"));
        fn num<T: FromStr>(v: &str) -> Option<T> {
            v.replace('_', "").parse().ok().or_else(|| {
                // allow 1e5 style integers
                let f: f64 = v.parse().ok()?;
                if f.fract() == 0.0 && f >= 0.0 {
                    format!("{f:.0}").parse().ok()
                } else {
                    None
                }
            })
        }
        match key.as_str() {
            "function" => self.function = Some(v.to_string()),
            "dim" => self.dim = Some(num(v).ok_or_else(|| bad("a positive integer"))?),
            "k" => self.k = num(v).ok_or_else(|| bad("a positive integer"))?,
            "s" => {
                self.s = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("a number or comma-separated list"))?
            }
            "eps" | "epsilon" => self.epsilon = v.parse().map_err(|_| bad("a number in (0,1)"))?,
            "preset" => self.preset = v.parse().map_err(|_| bad("paper-faithful or practical"))?,
            "seed" => self.seed = num(v).ok_or_else(|| bad("an unsigned integer"))?,
            "out" => self.out = Some(PathBuf::from(v)),
            "max-queries" => self.max_queries = Some(num(v).ok_or_else(|| bad("a positive integer"))?),
            "max-cover" => self.max_cover = v.parse().map_err(|_| bad("a positive number"))?,
            "time-hint" => self.time_hint = Some(v.parse().map_err(|_| bad("seconds"))?),
            "gate" => {
                self.gate = match v.to_ascii_lowercase().as_str() {
                    "true" | "yes" | "1" | "on" => true,
                    "false" | "no" | "0" | "off" => false,
                    _ => return Err(bad("true or false")),
                }
            }
            "r" => self.r = Some(num(v).ok_or_else(|| bad("a positive integer"))?),
            "entry-samples" => self.entry_samples = Some(num(v).ok_or_else(|| bad("a positive integer"))?),
            "hypotheses" => self.hypotheses = v.parse().map_err(|_| bad("thresholds:N, constants:N or cover"))?,
            "fresh" => self.fresh = num(v).ok_or_else(|| bad("a positive integer"))?,
            "design" => self.design = v.to_string(),
            "trials" => self.trials = num(v).ok_or_else(|| bad("a positive integer"))?,
            "tv-trials" => self.tv_trials = Some(num(v).ok_or_else(|| bad("a positive integer"))?),
            "reps" => self.reps = num(v).ok_or_else(|| bad("a positive integer"))?,
            "t" => self.t = v.parse().map_err(|_| bad("a positive number"))?,
            "eta" => self.eta = v.parse().map_err(|_| bad("a number in (0,1)"))?,
            "rho" => self.rho = v.parse().map_err(|_| bad("a number in (0,1)"))?,
            "delta" => self.delta = v.parse().map_err(|_| bad("a number in (0,1)"))?,
            _ => return Err(Error::Parse(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Later settings win, so pass file, then environment, then flags.
    pub fn from_settings<'a>(command: Command, settings: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = RunConfig::new(command);
        for (k, v) in settings {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("field {name}: {what}")))
            }
        };
        field("k", self.k >= 1, "must be at least 1")?;
        field("eps", self.epsilon > 0.0 && self.epsilon < 1.0, "must lie in (0,1)")?;
        field("s", !self.s.is_empty() && self.s.iter().all(|&s| s > 0.0 && s.is_finite()), "must be positive")?;
        field("dim", self.dim != Some(0), "must be positive")?;
        field("max-queries", self.max_queries != Some(0), "must be positive")?;
        field("max-cover", self.max_cover >= 1.0, "must be at least 1")?;
        field("time-hint", self.time_hint.is_none_or(|t| t > 0.0), "must be positive")?;
        field("r", self.r != Some(0), "must be positive")?;
        field("entry-samples", self.entry_samples != Some(0), "must be positive")?;
        field("fresh", self.fresh >= 1, "must be positive")?;
        field("trials", self.trials >= 1, "must be positive")?;
        field("tv-trials", self.tv_trials != Some(0), "must be positive")?;
        field("reps", self.reps >= 1, "must be positive")?;
        field("t", self.t > 0.0 && self.t.is_finite(), "must be positive")?;
        field("eta", self.eta > 0.0 && self.eta < 1.0, "must lie in (0,1)")?;
        field("rho", self.rho > 0.0 && self.rho < 1.0, "must lie in (0,1)")?;
        field("delta", self.delta > 0.0 && self.delta < 1.0, "must lie in (0,1)")?;
        match self.command {
            Command::Lowerbound => field("s", self.s.iter().all(|s| s.fract() == 0.0), "must be integers for lowerbound"),
            _ => field("s", self.s.len() == 1, "takes a single value for this subcommand"),
        }
    }
}

/// Parses a plain `key = value` file; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `JUNTA_PROBE_<KEY>` settings from an environment listing.
pub fn env_settings(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix("JUNTA_PROBE_")?.to_ascii_lowercase().replace('_', "-");
            RunConfig::KEYS.contains(&key.as_str()).then_some((key, v))
        })
        .collect();
    out.sort();
    out
}

/// Reads a zoo function from inline JSON, a JSON file, or a descriptor:
/// `constant:C`, `halfspace:THETA` (normal e_1), `parity:i,j,..`,
/// `intersection:M` (random normals through the origin, seeded),
/// `rotated-halfspace:THETA`, `d1:S`, `d2:S`.
pub fn load_function(spec: &str, dim: Option<usize>, seed: u64) -> Result<ZooFunction> {
    let spec = spec.trim();
    let mut rng = GaussianSampler::new(seed).child(FUNCTION_STREAM);
    let need_dim = || dim.ok_or_else(|| Error::InvalidArgument(format!("field dim: required for function {spec:?}")));
    let bad = || Error::Parse(format!("field function: cannot parse {spec:?}"));
    let f = if spec.starts_with('{') {
        ZooFunction::from_json(spec)?
    } else if let Some((kind, arg)) = spec.split_once(':').filter(|(k, _)| !k.contains(['/', '.'])) {
        let num = || arg.parse::<f64>().map_err(|_| bad());
        let int = || arg.parse::<usize>().map_err(|_| bad());
        match kind {
            "constant" => ZooFunction::Constant { c: num()?, dim: dim.unwrap_or(0) },
            "halfspace" => {
                let mut u = vec![0.0; need_dim()?];
                u[0] = 1.0;
                make_halfspace(u, num()?)?
            }
            "rotated-halfspace" => randomly_rotated(make_halfspace(vec![1.0], num()?)?, need_dim()?, &mut rng)?,
            "parity" => {
                let coords = arg.split(',').map(|c| c.trim().parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
                sign_lifted_parity(need_dim()?, coords)?
            }
            "intersection" => random_intersection(int()?, need_dim()?, 0.0, &mut rng)?,
            "d1" => sample_d1(int()?, &mut rng)?,
            "d2" => sample_d2(int()?, &mut rng)?,
            _ => return Err(bad()),
        }
    } else {
        let text = std::fs::read_to_string(spec)
            .map_err(|e| Error::InvalidArgument(format!("field function: cannot read {spec:?}: {e}")))?;
        ZooFunction::from_json(&text)?
    };
    if let Some(n) = dim {
        if f.dim() != 0 && f.dim() != n {
            return invalid(format!("field dim: function has dimension {}, config says {n}", f.dim()));
        }
    }
    Ok(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BudgetExceeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub queries: u64,
    pub cap: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// The formulas' outputs, `null` where a quantity does not apply.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Derivations {
    pub t: Option<f64>,
    pub r: Option<usize>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    pub t_succ: Option<usize>,
    pub tau: Option<f64>,
    pub xi: Option<f64>,
    /// scoring points for the configured family; `null` for the cover,
    /// whose size is known only after learning
    pub j: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub status: RunStatus,
    pub config: RunConfig,
    pub derivations: Derivations,
    /// full parameter structs
    pub parameters: Value,
    /// deterministic results; timings live outside
    pub payload: Value,
    pub ledger: LedgerTotals,
    pub timings: Vec<StageTiming>,
    pub error: Option<String>,
}

impl ExperimentReport {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    /// Appends one line to `path`.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", self.to_json_line()?)?;
        Ok(())
    }

    /// Payload serialization used for reproducibility comparisons.
    pub fn payload_bytes(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.payload)?)
    }
}

#[derive(Default)]
struct Stages {
    payload: Map<String, Value>,
    timings: Vec<StageTiming>,
}

impl Stages {
    /// Runs `body`, records its time, and stores its result under `name`.
    fn run<T: Serialize>(&mut self, name: &str, body: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = body();
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        let out = out?;
        self.payload.insert(name.to_string(), serde_json::to_value(&out)?);
        Ok(out)
    }

    fn put(&mut self, key: &str, v: Value) {
        self.payload.insert(key.to_string(), v);
    }
}

fn rank_params(cfg: &RunConfig) -> Result<RankTestParams> {
    let mut p = RankTestParams::new(cfg.preset, cfg.k, cfg.s[0], cfg.epsilon)?;
    if let Some(r) = cfg.r {
        p = p.with_r(r);
    }
    if let Some(n) = cfg.entry_samples {
        let blocks = p.entry_blocks;
        p = p.with_entry_samples(n, blocks);
    }
    p.validate()?;
    Ok(p)
}

fn learn_params(cfg: &RunConfig) -> Result<LearnParams> {
    let mut p = LearnParams::new(cfg.preset, cfg.k, cfg.s[0], cfg.epsilon)?;
    p.cover_log_cap = cfg.max_cover.ln();
    p.validate()?;
    Ok(p)
}

fn family_log_size(f: FamilySpec) -> Option<f64> {
    match f {
        FamilySpec::Thresholds(n) => Some((2.0 * n as f64).ln()),
        FamilySpec::Constants(n) => Some((n as f64).ln()),
        FamilySpec::Cover => None,
    }
}

/// Parameter derivations for a config, without running anything.
pub fn derive_parameters(cfg: &RunConfig) -> Result<(Derivations, Value)> {
    let mut d = Derivations::default();
    let mut params = Map::new();
    if matches!(cfg.command, Command::Test | Command::StructureTest) {
        let p = rank_params(cfg)?;
        d.t = Some(p.t);
        d.r = Some(p.r);
        d.kappa = Some(p.kappa);
        params.insert("expected_rank_queries".into(), json!(p.expected_queries()));
        if cfg.command == Command::Test && cfg.gate {
            let ge = gate_epsilon(cfg.preset, cfg.epsilon);
            let g = NoiseSensitivityGate::default();
            params.insert(
                "gate".into(),
                json!({
                    "epsilon": ge,
                    "t0": NoiseSensitivityGate::t0(cfg.s[0], ge),
                    "bound": NoiseSensitivityGate::bound(cfg.s[0], ge),
                    "samples": g.samples(cfg.s[0], ge),
                }),
            );
        }
        params.insert("rank".into(), serde_json::to_value(&p)?);
    }
    if matches!(cfg.command, Command::Learn | Command::StructureTest) {
        let p = learn_params(cfg)?;
        d.t = Some(p.t);
        d.gamma = Some(p.gamma);
        d.t_succ = Some(p.t_succ);
        d.tau = Some(p.tau);
        d.xi = Some(p.xi);
        d.j = family_log_size(cfg.hypotheses).map(|l| p.scoring_points(l));
        params.insert("lambda".into(), json!(coefficient_bound(cfg.k, p.t, p.gamma)));
        params.insert("learn".into(), serde_json::to_value(&p)?);
    }
    if cfg.command == Command::BenchEstimators {
        d.t = Some(cfg.t);
        params.insert("bench".into(), serde_json::to_value(BenchConfig::from_run(cfg))?);
    }
    Ok((d, Value::Object(params)))
}

fn verdict(b: bool) -> Value {
    json!(if b { "yes" } else { "no" })
}

/// Runs one experiment. A query-budget overrun yields a report with status
/// `BudgetExceeded` and whatever stages finished; other failures are errors.
pub fn run(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (derivations, parameters) = derive_parameters(cfg)?;
    let ledger = cfg.max_queries.map_or_else(QueryLedger::new, QueryLedger::with_cap);
    let master = GaussianSampler::new(cfg.seed);
    let mut st = Stages::default();
    let outcome = match cfg.command {
        Command::Test => run_test(cfg, &ledger, &master, &mut st),
        Command::Learn => run_learn(cfg, &ledger, &master, &mut st),
        Command::StructureTest => run_structure(cfg, &ledger, &master, &mut st),
        Command::Lowerbound => run_lowerbound(cfg, &master, &mut st),
        Command::BenchEstimators => run_bench(cfg, &ledger, &master, &mut st),
    };
    let (status, error) = match outcome {
        Ok(()) => (RunStatus::Completed, None),
        Err(e @ Error::BudgetExceeded { .. }) => (RunStatus::BudgetExceeded, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(ExperimentReport {
        version: VERSION.to_string(),
        command: cfg.command,
        seed: cfg.seed,
        status,
        config: cfg.clone(),
        derivations,
        parameters,
        payload: Value::Object(st.payload),
        ledger: LedgerTotals {
            queries: ledger.total(),
            cap: ledger.cap(),
        },
        timings: st.timings,
        error,
    })
}

fn oracle_for(cfg: &RunConfig, ledger: &QueryLedger) -> Result<(Arc<ZooFunction>, Oracle)> {
    let spec = cfg
        .function
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("field function: required for this subcommand".into()))?;
    let f = Arc::new(load_function(spec, cfg.dim, cfg.seed)?);
    if f.dim() == 0 {
        return invalid("field dim: required for a constant function");
    }
    let oracle = Oracle::from_arc(f.clone(), ledger.clone());
    Ok((f, oracle))
}

fn run_test(cfg: &RunConfig, ledger: &QueryLedger, master: &GaussianSampler, st: &mut Stages) -> Result<()> {
    let (_, oracle) = oracle_for(cfg, ledger)?;
    let params = rank_params(cfg)?;
    let sampler = master.child(TEST_STREAM);
    st.put("preset", json!(cfg.preset));
    st.put("seed", json!(cfg.seed));
    // same order and streams as tester::test_linear_junta
    if cfg.gate {
        let ge = gate_epsilon(params.preset, params.epsilon);
        let gv = st.run("gate", || NoiseSensitivityGate::default().test(&oracle, params.s, ge, &sampler))?;
        if !gv.accept {
            st.put("verdict", verdict(false));
            st.put("queries", json!(ledger.total()));
            return Ok(());
        }
    }
    let rv = st.run("rank", || test_rank(&oracle, &params, &sampler))?;
    st.put("verdict", verdict(rv.answer));
    st.put("sigma", json!(rv.gram.singular_values));
    st.put("sigma_k_plus_1", json!(rv.sigma_k_plus_1));
    st.put("threshold", json!(rv.threshold));
    st.put("queries", json!(ledger.total()));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreshCheck {
    pub points: usize,
    /// mean `|f(x) - h(x)|`
    pub mean_abs_error: f64,
    /// fraction of points with `f(x) = h(x)`
    pub agreement: f64,
    pub queries: u64,
}

/// Error of a learned hypothesis on fresh Gaussian points; `f` is read
/// directly as ground truth, `h` pays for its projections.
pub fn fresh_check(
    truth: &dyn Function,
    learned: &crate::learner::LearnedHypothesis,
    oracle: &Oracle,
    points: usize,
    sampler: &GaussianSampler,
) -> Result<FreshCheck> {
    let stage = oracle.stage();
    let mut xs = sampler.child(0);
    let (mut err, mut agree) = (0.0, 0usize);
    for i in 0..points {
        let x = xs.normal_vec(truth.dim());
        let h = evaluate_learned(learned, &stage, &x, &sampler.child2(1, i as u64))?;
        let fx = truth.eval(&x);
        err += (fx - h).abs();
        agree += usize::from(fx == h);
    }
    Ok(FreshCheck {
        points,
        mean_abs_error: err / points as f64,
        agreement: agree as f64 / points as f64,
        queries: stage.ledger().total(),
    })
}

fn run_learn(cfg: &RunConfig, ledger: &QueryLedger, master: &GaussianSampler, st: &mut Stages) -> Result<()> {
    let (f, oracle) = oracle_for(cfg, ledger)?;
    let params = learn_params(cfg)?;
    let out = st.run("learn", || find_invariant_structure(&oracle, &params, cfg.hypotheses, &master.child(LEARN_STREAM)))?;
    let h = &out.hypothesis;
    st.put("ell", json!(h.bundle.ell()));
    st.put("anchors", json!(h.bundle.anchors));
    st.put("alpha", serde_json::to_value(&h.bundle.alpha)?);
    st.put("g", json!(h.g.describe()));
    st.put("score", json!(h.score));
    st.put("learn_queries", json!(out.queries));
    let fresh = st.run("fresh", || fresh_check(f.as_ref(), h, &oracle, cfg.fresh, &master.child(FRESH_STREAM)))?;
    st.put("fresh_error", json!(fresh.mean_abs_error));
    st.put("queries", json!(ledger.total()));
    Ok(())
}

fn run_structure(cfg: &RunConfig, ledger: &QueryLedger, master: &GaussianSampler, st: &mut Stages) -> Result<()> {
    let (_, oracle) = oracle_for(cfg, ledger)?;
    let rank = rank_params(cfg)?;
    let learn = learn_params(cfg)?;
    let checker = ThresholdClassChecker::default();
    let v = st.run("structure", || {
        test_structure_class(&oracle, &checker, &rank, &learn, cfg.hypotheses, &master.child(STRUCTURE_STREAM))
    })?;
    st.put("verdict", verdict(v.answer));
    st.put("checker", serde_json::to_value(&checker)?);
    st.put("queries", json!(ledger.total()));
    Ok(())
}

/// One line of the lower-bound CSV plus the statistics behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerboundRow {
    pub s: u64,
    pub n: usize,
    pub tv: f64,
    pub tv_ci: f64,
    pub event_a_fail_rate: f64,
    /// `fail_rate * s^{1/10}`, the constant in `C s^{-1/10}`
    pub fitted_c: f64,
    pub coupling: CouplingSummary,
    pub tv_estimate: TvEstimate,
    pub straddle: RateCheck,
}

fn run_lowerbound(cfg: &RunConfig, master: &GaussianSampler, st: &mut Stages) -> Result<()> {
    let design = QueryDesign::parse(&cfg.design, &mut master.child(DESIGN_STREAM))?;
    st.put("design", serde_json::to_value(&design)?);
    let tv_trials = cfg.tv_trials.unwrap_or(cfg.trials);
    let mut rows = Vec::new();
    for &s in &cfg.s {
        let s = s as u64;
        let base = master.child2(LOWERBOUND_STREAM, s);
        let start = Instant::now();
        let coupling = coupling_experiment(&design, s as usize, cfg.trials, &base.child(1))?;
        let tv = estimate_tv_distance(&design, s as usize, tv_trials, &base.child(2))?;
        let straddle = close_pair_straddle_rate(&design, s as usize, cfg.trials, &base.child(3));
        st.timings.push(StageTiming {
            stage: format!("s={s}"),
            seconds: start.elapsed().as_secs_f64(),
        });
        rows.push(LowerboundRow {
            s,
            n: design.n(),
            tv: tv.tv,
            tv_ci: tv.half_width,
            event_a_fail_rate: coupling.fail_rate,
            fitted_c: coupling.fail_rate * (s as f64).powf(0.1),
            coupling,
            tv_estimate: tv,
            straddle,
        });
    }
    st.put("rows", serde_json::to_value(&rows)?);
    Ok(())
}

/// Rows stored in a lowerbound report.
pub fn lowerbound_rows(report: &ExperimentReport) -> Result<Vec<LowerboundRow>> {
    let rows = report
        .payload
        .get("rows")
        .ok_or_else(|| Error::InvalidArgument("report has no lowerbound rows".into()))?;
    Ok(serde_json::from_value(rows.clone())?)
}

/// CSV with columns `s, n, tv, tv_ci, eventA_fail_rate`.
pub fn write_lowerbound_csv<W: Write>(rows: &[LowerboundRow], mut out: W) -> Result<()> {
    writeln!(out, "s,n,tv,tv_ci,eventA_fail_rate")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.s, r.n, r.tv, r.tv_ci, r.event_a_fail_rate)?;
    }
    Ok(())
}

/// Estimator bench settings. Each estimate is a plain mean of
/// `ceil(1.5 m2 / (delta eps^2))` samples, with `m2` the kernel's second
/// moment from a pilot run; by Chebyshev it is eps-accurate with probability
/// at least `1 - delta` once the pilot is within a factor 1.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub t: f64,
    pub eta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub reps: usize,
    pub pilot: usize,
    pub min_samples: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            t: 0.5,
            eta: 0.1,
            rho: 0.3,
            epsilon: 0.05,
            delta: 0.05,
            reps: 1,
            pilot: 20_000,
            min_samples: 10_000,
        }
    }
}

impl BenchConfig {
    fn from_run(cfg: &RunConfig) -> Self {
        BenchConfig {
            t: cfg.t,
            eta: cfg.eta,
            rho: cfg.rho,
            epsilon: cfg.epsilon.min(0.05),
            delta: cfg.delta,
            reps: cfg.reps,
            ..BenchConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub quantity: String,
    pub rep: usize,
    pub target: f64,
    pub estimate: f64,
    pub error: f64,
    pub tolerance: f64,
    pub samples: u64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub quantity: String,
    pub runs: usize,
    pub failures: usize,
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

pub const BENCH_QUANTITIES: [&str; 5] = ["mean", "pt", "degree1", "grad_inner", "noise_sensitivity"];

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Noise sensitivity in closed form, where one is implemented.
fn ns_truth(f: &ZooFunction, t: f64) -> Option<f64> {
    match f {
        ZooFunction::Halfspace { theta, .. } => Some(halfspace_noise_sensitivity_at(t, *theta)),
        ZooFunction::Constant { .. } => Some(0.0),
        ZooFunction::RotatedJunta { inner, .. } => ns_truth(inner, t),
        _ => None,
    }
}

/// Runs the estimators against closed forms for halfspace-type functions.
pub fn bench_estimators(f: &ZooFunction, oracle: &Oracle, cfg: &BenchConfig, sampler: &GaussianSampler) -> Result<BenchReport> {
    let combo = OrthoCombo::from_zoo(f)
        .ok_or_else(|| Error::InvalidArgument("bench-estimators needs a halfspace, an orthogonal combination, or a constant".into()))?;
    let n = oracle.dim();
    let s_eta = -cfg.eta.ln();
    let mut rows = Vec::new();
    for rep in 0..cfg.reps {
        let base = sampler.child2(BENCH_STREAM, rep as u64);
        let mut pts = base.child(0);
        let (y1, y2, x) = (pts.normal_vec(n), pts.normal_vec(n), pts.normal_vec(n));
        for (qi, &name) in BENCH_QUANTITIES.iter().enumerate() {
            let (target, truth) = match name {
                "mean" => (Target::Mean, combo.mean()),
                "pt" => (Target::Pt { t: cfg.t, x: &y1 }, combo.pt(cfg.t, &y1)),
                "degree1" => (Target::Degree1 { eta: cfg.eta, x: &x }, (combo.pt(s_eta, &x) - combo.mean()) / cfg.eta),
                "grad_inner" => (
                    Target::GradInner { t: cfg.t, y1: &y1, y2: &y2, rho: cfg.rho },
                    dot(&combo.grad_pt(cfg.t, &y1), &combo.grad_pt(cfg.t, &y2)),
                ),
                _ => match ns_truth(f, cfg.t) {
                    Some(v) => (Target::NoiseSensitivity { t: cfg.t }, v),
                    None => continue,
                },
            };
            let pilot = trace_samples(oracle, target.clone(), cfg.pilot, &mut base.child2(1, qi as u64))?;
            let m2 = pilot.iter().map(|v| v * v).sum::<f64>() / pilot.len().max(1) as f64;
            let samples = ((1.5 * m2 / (cfg.delta * cfg.epsilon * cfg.epsilon)).ceil() as u64).max(cfg.min_samples);
            let ecfg = EstimatorConfig::fixed(cfg.epsilon, cfg.delta, samples as usize, 1)?;
            let est = estimate(oracle, target, &ecfg, &mut base.child2(2, qi as u64))?;
            let error = (est.value - truth).abs();
            rows.push(BenchRow {
                quantity: name.to_string(),
                rep,
                target: truth,
                estimate: est.value,
                error,
                tolerance: cfg.epsilon,
                samples,
                pass: error <= cfg.epsilon,
            });
        }
    }
    let summary = BENCH_QUANTITIES
        .iter()
        .filter_map(|&q| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.quantity == q).collect();
            (!mine.is_empty()).then(|| BenchSummary {
                quantity: q.to_string(),
                runs: mine.len(),
                failures: mine.iter().filter(|r| !r.pass).count(),
                max_error: mine.iter().map(|r| r.error).fold(0.0, f64::max),
            })
        })
        .collect();
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
        summary,
    })
}

fn run_bench(cfg: &RunConfig, ledger: &QueryLedger, master: &GaussianSampler, st: &mut Stages) -> Result<()> {
    let spec = cfg.function.clone().unwrap_or_else(|| "halfspace:0".into());
    let dim = cfg.dim.or(Some(16));
    let mut f = load_function(&spec, dim, cfg.seed)?;
    if let ZooFunction::Constant { dim: d, .. } = &mut f {
        *d = dim.unwrap_or(16);
    }
    let oracle = Oracle::from_arc(Arc::new(f.clone()), ledger.clone());
    let bc = BenchConfig::from_run(cfg);
    let report = st.run("bench", || bench_estimators(&f, &oracle, &bc, &master.child(BENCH_STREAM)))?;
    let failures: usize = report.summary.iter().map(|s| s.failures).sum();
    st.put("failures", json!(failures));
    Ok(())
}

/// Flattens `key = value` pairs from several sources into one ordered map,
/// later sources overriding earlier ones; useful for echoing effective settings.
pub fn merge_settings(sources: &[Vec<(String, String)>]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for src in sources {
        for (k, v) in src {
            out.insert(k.trim().to_ascii_lowercase().replace('_', "-"), v.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(cmd: Command, pairs: &[(&str, &str)]) -> RunConfig {
        RunConfig::from_settings(cmd, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn settings_parse_and_later_wins() {
        let c = cfg(Command::Test, &[("k", "2"), ("eps", "0.2"), ("k", "3"), ("max_queries", "1e6"), ("gate", "no")]);
        assert_eq!(c.k, 3);
        assert_eq!(c.max_queries, Some(1_000_000));
        assert!(!c.gate);
        let e = RunConfig::from_settings(Command::Test, [("eps", "2")]).unwrap_err().to_string();
        assert!(e.contains("field eps"), "{e}");
        let e = RunConfig::from_settings(Command::Test, [("k", "two")]).unwrap_err().to_string();
        assert!(e.contains("field k"), "{e}");
        assert!(RunConfig::from_settings(Command::Test, [("colour", "red")]).is_err());
        assert!(RunConfig::from_settings(Command::Test, [("s", "1,2")]).is_err());
        assert_eq!(cfg(Command::Lowerbound, &[("s", "100, 1000")]).s, vec![100.0, 1000.0]);
        assert!(RunConfig::from_settings(Command::Lowerbound, [("s", "10.5")]).is_err());
    }

    #[test]
    fn config_file_and_env() {
        let pairs = parse_config_file("# comment\nk = 2\n\neps=0.3 # trailing\n").unwrap();
        assert_eq!(pairs, vec![("k".into(), "2".into()), ("eps".into(), "0.3".into())]);
        assert!(parse_config_file("k 2").is_err());
        let env = env_settings(vec![
            ("JUNTA_PROBE_SEED".to_string(), "9".to_string()),
            ("JUNTA_PROBE_MAX_QUERIES".to_string(), "5".to_string()),
            ("JUNTA_PROBE_NOPE".to_string(), "1".to_string()),
            ("HOME".to_string(), "/".to_string()),
        ]);
        assert_eq!(env, vec![("max-queries".into(), "5".into()), ("seed".into(), "9".into())]);
    }

    #[test]
    fn descriptors() {
        assert_eq!(load_function("constant:1", Some(3), 0).unwrap(), ZooFunction::Constant { c: 1.0, dim: 3 });
        assert_eq!(load_function("halfspace:0.5", Some(4), 0).unwrap().dim(), 4);
        assert!(load_function("halfspace:0.5", None, 0).is_err());
        assert_eq!(load_function("parity:0,1,2", Some(16), 0).unwrap().dim(), 16);
        assert_eq!(load_function("intersection:2", Some(8), 1).unwrap(), load_function("intersection:2", Some(8), 1).unwrap());
        assert_eq!(load_function("d2:10", None, 0).unwrap().dim(), 2);
        assert!(load_function("parity:0,1,2", Some(2), 0).is_err());
        assert!(load_function("/no/such/file.json", None, 0).is_err());
        let json = make_halfspace(vec![0.0, 1.0], 0.0).unwrap().to_json();
        assert_eq!(load_function(&json, Some(2), 0).unwrap().dim(), 2);
    }

    #[test]
    fn constant_function_test_says_yes() {
        let c = cfg(Command::Test, &[("function", "constant:1"), ("dim", "4"), ("k", "1"), ("s", "1"), ("eps", "0.25"), ("r", "2"), ("entry-samples", "1000")]);
        let rep = run(&c).unwrap();
        assert_eq!(rep.status, RunStatus::Completed);
        assert_eq!(rep.payload["verdict"], "yes");
        assert!(rep.ledger.queries > 0);
        assert_eq!(rep.payload["queries"], json!(rep.ledger.queries));
        assert_eq!(rep.derivations.r, Some(2));
        let back = ExperimentReport::from_json_line(&rep.to_json_line().unwrap()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn budget_cap_is_reported() {
        let c = cfg(Command::Test, &[("function", "halfspace:0"), ("dim", "4"), ("max-queries", "10")]);
        let rep = run(&c).unwrap();
        assert_eq!(rep.status, RunStatus::BudgetExceeded);
        assert!(rep.ledger.queries <= 10);
        assert!(rep.error.as_deref().unwrap().contains("budget"));
    }

    #[test]
    fn missing_function_names_the_field() {
        let e = run(&RunConfig::new(Command::Learn)).unwrap_err().to_string();
        assert!(e.contains("field function"), "{e}");
    }

    #[test]
    fn bench_on_shifted_halfspace() {
        let c = cfg(Command::BenchEstimators, &[("function", "halfspace:1"), ("dim", "4")]);
        let rep = run(&c).unwrap();
        let rows = &rep.payload["bench"]["rows"];
        assert_eq!(rows[0]["quantity"], "mean");
        assert!((rows[0]["target"].as_f64().unwrap() + 0.6827).abs() < 1e-4);
        assert_eq!(rep.payload["failures"], 0);
    }

    #[test]
    fn bench_on_zero_constant_has_zero_targets() {
        let c = cfg(Command::BenchEstimators, &[("function", "constant:0")]);
        let rep = run(&c).unwrap();
        let rows = rep.payload["bench"]["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r["target"] == 0.0 && r["estimate"] == 0.0));
    }

    #[test]
    fn lowerbound_rows_and_csv() {
        let c = cfg(Command::Lowerbound, &[("s", "10,100"), ("design", "spread:3"), ("trials", "500")]);
        let rep = run(&c).unwrap();
        let rows = lowerbound_rows(&rep).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].coupling.identity_violations, 0);
        let mut buf = Vec::new();
        write_lowerbound_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,n,tv,tv_ci,eventA_fail_rate\n10,3,"));
        assert_eq!(text.lines().count(), 3);
    }
}
