//! Testing whether a function is a linear k-junta: the Gram-rank test, a
//! surface-area gate, and their composition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{estimate, estimate_noise_sensitivity, EstimatorConfig, InnerNoise, Target};
use crate::linalg::{singular_values_sym, SymMatrix};
use crate::oracle::Oracle;
use crate::sampler::GaussianSampler;
use crate::truth::ledoux_bound;

/// Which parameter derivation to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Parameters exactly as derived in the analysis; astronomically expensive.
    PaperFaithful,
    /// Desk-scale parameters; see `RankTestParams::practical`.
    Practical,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-faithful" | "paper" => Ok(Preset::PaperFaithful),
            "practical" => Ok(Preset::Practical),
            _ => Err(Error::Parse(format!(
                "unknown preset {s:?}; expected paper-faithful or practical"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::PaperFaithful => "paper-faithful",
            Preset::Practical => "practical",
        })
    }
}

/// `T = e^{2t} - 1` used by the practical preset.
pub const PRACTICAL_T_SCALE: f64 = 8.0;
/// Inner correlation of the gradient inner-product estimator, practical preset.
pub const PRACTICAL_RHO: f64 = 0.5;
/// Anchors per unit of rank, practical preset (always within the 12k cap).
pub const PRACTICAL_ANCHORS_PER_RANK: usize = 3;
/// Per-entry sample cap, practical preset.
pub const PRACTICAL_ENTRY_SAMPLES: u64 = 200_000;

fn check_kse(k: usize, s: f64, epsilon: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return invalid(format!("surface-area bound s must be positive, got {s}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0,1), got {epsilon}"));
    }
    if k > 64 {
        return invalid(format!("rank k = {k} is out of range"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTestParams {
    pub k: usize,
    pub s: f64,
    pub epsilon: f64,
    pub preset: Preset,
    pub t: f64,
    pub r: usize,
    /// nominal entrywise accuracy `epsilon^2 / (40 r)`
    pub kappa: f64,
    /// inner correlation of the J-estimator
    pub rho: f64,
    /// samples per median-of-means block for each Gram entry
    pub entry_batch: f64,
    /// odd number of blocks per Gram entry
    pub entry_blocks: usize,
    /// decision threshold `epsilon^2 / 16`
    pub threshold: f64,
}

impl RankTestParams {
    /// `t = eps^4 / (900 s^2)`, `r = ceil(k s^2 / eps^7)`, `kappa = eps^2 / (40 r)`,
    /// each entry to accuracy kappa with failure `eps / (r (r+1) / 2)`.
    pub fn paper_faithful(k: usize, s: f64, epsilon: f64) -> Result<Self> {
        check_kse(k, s, epsilon)?;
        let t = epsilon.powi(4) / (900.0 * s * s);
        let r_f = (k as f64 * s * s / epsilon.powi(7)).ceil().max(1.0);
        if r_f > 1e9 {
            return invalid(format!("anchor count r = {r_f:e} is not representable"));
        }
        let r = r_f as usize;
        let kappa = epsilon * epsilon / (40.0 * r as f64);
        let big_t = (2.0 * t).exp_m1();
        let rho = InnerNoise::FromAccuracy.rho(t, kappa)?;
        let range = 8.0 / (rho * rho * big_t);
        let pairs = (r as f64) * (r as f64 + 1.0) / 2.0;
        let delta = epsilon / pairs;
        let entry_blocks = 2 * (18.0 * (1.0 / delta).ln()).ceil() as usize + 1;
        let entry_batch = (2.0 * range * range / (kappa * kappa)).ceil();
        Ok(RankTestParams {
            k,
            s,
            epsilon,
            preset: Preset::PaperFaithful,
            t,
            r,
            kappa,
            rho,
            entry_batch,
            entry_blocks,
            threshold: epsilon * epsilon / 16.0,
        })
    }

    /// Desk-scale preset: `e^{2t} - 1 = 8`, `r = 3k` anchors, inner
    /// correlation 0.5, and a single average of 2e5 J-samples per entry.
    /// The threshold `eps^2 / 16` is unchanged.
    pub fn practical(k: usize, s: f64, epsilon: f64) -> Result<Self> {
        check_kse(k, s, epsilon)?;
        let r = (PRACTICAL_ANCHORS_PER_RANK * k).clamp(k + 1, 12 * k.max(1));
        Ok(RankTestParams {
            k,
            s,
            epsilon,
            preset: Preset::Practical,
            t: 0.5 * PRACTICAL_T_SCALE.ln_1p(),
            r,
            kappa: epsilon * epsilon / (40.0 * r as f64),
            rho: PRACTICAL_RHO,
            entry_batch: PRACTICAL_ENTRY_SAMPLES as f64,
            entry_blocks: 1,
            threshold: epsilon * epsilon / 16.0,
        })
    }

    pub fn new(preset: Preset, k: usize, s: f64, epsilon: f64) -> Result<Self> {
        match preset {
            Preset::PaperFaithful => Self::paper_faithful(k, s, epsilon),
            Preset::Practical => Self::practical(k, s, epsilon),
        }
    }

    pub fn with_r(mut self, r: usize) -> Self {
        self.r = r;
        self.kappa = self.epsilon * self.epsilon / (40.0 * r as f64);
        self
    }

    pub fn with_entry_samples(mut self, batch: u64, blocks: usize) -> Self {
        self.entry_batch = batch as f64;
        self.entry_blocks = blocks;
        self
    }

    pub fn pairs(&self) -> u64 {
        (self.r as u64) * (self.r as u64 + 1) / 2
    }

    /// Exact query count of `test_rank`: 4 per J-sample, upper triangle only.
    pub fn expected_queries(&self) -> f64 {
        self.pairs() as f64 * self.entry_batch * self.entry_blocks as f64 * 4.0
    }

    pub fn entry_config(&self) -> Result<EstimatorConfig> {
        if self.entry_batch > 1e15 {
            return invalid(format!(
                "per-entry batch {:e} is infeasible; use the practical preset",
                self.entry_batch
            ));
        }
        EstimatorConfig::fixed(
            self.kappa,
            (self.epsilon / self.pairs() as f64).min(0.5),
            self.entry_batch as usize,
            self.entry_blocks,
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_kse(self.k, self.s, self.epsilon)?;
        if self.r == 0 {
            return invalid("r must be at least 1");
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return invalid("t must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return invalid("rho must lie in (0,1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramEstimate {
    pub matrix: SymMatrix,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankVerdict {
    pub answer: bool,
    pub gram: GramEstimate,
    pub sigma_k_plus_1: f64,
    pub threshold: f64,
    pub queries: u64,
    pub params: RankTestParams,
}

/// Tags separating the child streams used by the testers.
const ANCHOR_STREAM: u64 = 0xA11C;
const ENTRY_STREAM: u64 = 0xE117;
const GATE_STREAM: u64 = 0x6A7E;

/// Anchors `y_1..y_r`, standard Gaussian in R^n.
pub fn draw_anchors(n: usize, r: usize, sampler: &GaussianSampler) -> Vec<Vec<f64>> {
    let mut s = sampler.child(ANCHOR_STREAM);
    (0..r).map(|_| s.normal_vec(n)).collect()
}

/// Estimates the Gram matrix of `D P_t f` at `r` random anchors and answers
/// yes iff its (k+1)-st singular value is at most `epsilon^2 / 16`.
///
/// Entries with `i <= j` are estimated once, each from its own derived
/// stream, and mirrored.
pub fn test_rank(f: &Oracle, params: &RankTestParams, sampler: &GaussianSampler) -> Result<RankVerdict> {
    params.validate()?;
    let cfg = params.entry_config()?;
    let stage = f.stage();
    let n = f.dim();
    let anchors = draw_anchors(n, params.r, sampler);
    let entries = sampler.child(ENTRY_STREAM);
    let mut b = SymMatrix::zeros(params.r);
    for i in 0..params.r {
        for j in i..params.r {
            let mut s = entries.child2(i as u64, j as u64);
            let target = Target::GradInner {
                t: params.t,
                y1: &anchors[i],
                y2: &anchors[j],
                rho: params.rho,
            };
            b.set(i, j, estimate(&stage, target, &cfg, &mut s)?.value);
        }
    }
    let singular_values = singular_values_sym(&b)?;
    let sigma_k_plus_1 = singular_values.get(params.k).copied().unwrap_or(0.0);
    Ok(RankVerdict {
        answer: sigma_k_plus_1 <= params.threshold,
        gram: GramEstimate {
            matrix: b,
            singular_values,
        },
        sigma_k_plus_1,
        threshold: params.threshold,
        queries: stage.ledger().total(),
        params: params.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub gate: String,
    pub accept: bool,
    pub statistic: f64,
    pub bound: f64,
    pub t0: f64,
    pub samples: u64,
    pub queries: u64,
}

/// A test that accepts functions of Gaussian surface area at most `s`.
pub trait SurfaceAreaGate {
    fn name(&self) -> &str;
    fn test(&self, f: &Oracle, s: f64, epsilon: f64, sampler: &GaussianSampler) -> Result<GateVerdict>;
}

/// One-sided noise-sensitivity gate: at `t0 = (eps / (30 s))^4`, accept iff
/// the estimated noise sensitivity is at most `2 sqrt(t0) / sqrt(pi) * s (1 + eps)`.
///
/// Functions with surface area at most `s` pass (Ledoux's inequality);
/// rejection of large-surface functions is heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSensitivityGate {
    /// expected number of disagreements at the bound
    pub target_count: f64,
    pub min_samples: u64,
    pub max_samples: u64,
}

impl Default for NoiseSensitivityGate {
    fn default() -> Self {
        NoiseSensitivityGate {
            target_count: 100.0,
            min_samples: 10_000,
            max_samples: 10_000_000,
        }
    }
}

impl NoiseSensitivityGate {
    pub fn t0(s: f64, epsilon: f64) -> f64 {
        (epsilon / (30.0 * s)).powi(4)
    }

    pub fn bound(s: f64, epsilon: f64) -> f64 {
        ledoux_bound(Self::t0(s, epsilon), s) * (1.0 + epsilon)
    }

    pub fn samples(&self, s: f64, epsilon: f64) -> u64 {
        let want = (self.target_count / Self::bound(s, epsilon)).ceil();
        (want.min(self.max_samples as f64) as u64).max(self.min_samples)
    }
}

impl SurfaceAreaGate for NoiseSensitivityGate {
    fn name(&self) -> &str {
        "noise-sensitivity"
    }

    fn test(&self, f: &Oracle, s: f64, epsilon: f64, sampler: &GaussianSampler) -> Result<GateVerdict> {
        check_kse(0, s, epsilon.min(0.5))?;
        let t0 = Self::t0(s, epsilon);
        let bound = Self::bound(s, epsilon);
        let samples = self.samples(s, epsilon);
        let stage = f.stage();
        let mut rng = sampler.child(GATE_STREAM);
        let est = estimate_noise_sensitivity(&stage, t0, &EstimatorConfig::plain(samples as usize), &mut rng)?;
        Ok(GateVerdict {
            gate: self.name().to_string(),
            accept: est.value <= bound,
            statistic: est.value,
            bound,
            t0,
            samples,
            queries: stage.ledger().total(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearJuntaVerdict {
    pub answer: bool,
    pub gate_epsilon: f64,
    pub gate: GateVerdict,
    /// absent when the gate rejected
    pub rank: Option<RankVerdict>,
    pub queries: u64,
}

/// Error parameter handed to the surface-area gate: `(eps/30)^4` when
/// paper-faithful, `eps` itself in the practical preset.
pub fn gate_epsilon(preset: Preset, epsilon: f64) -> f64 {
    match preset {
        Preset::PaperFaithful => (epsilon / 30.0).powi(4),
        Preset::Practical => epsilon,
    }
}

/// Gate first; the rank test runs only if the gate accepts.
pub fn test_linear_junta(
    f: &Oracle,
    gate: &dyn SurfaceAreaGate,
    params: &RankTestParams,
    sampler: &GaussianSampler,
) -> Result<LinearJuntaVerdict> {
    let stage = f.stage();
    let ge = gate_epsilon(params.preset, params.epsilon);
    let gv = gate.test(&stage, params.s, ge, sampler)?;
    let rank = if gv.accept {
        Some(test_rank(&stage, params, sampler)?)
    } else {
        None
    };
    Ok(LinearJuntaVerdict {
        answer: gv.accept && rank.as_ref().is_some_and(|r| r.answer),
        gate_epsilon: ge,
        gate: gv,
        rank,
        queries: stage.ledger().total(),
    })
}
