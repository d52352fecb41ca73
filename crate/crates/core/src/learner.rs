//! Learning the invariant structure of a linear junta: candidate directions,
//! implicit orthonormalization, hypothesis selection, and class testing.

use serde::{Deserialize, Serialize};

use crate::cover::{build_cover, CoverSpec};
use crate::error::{invalid, Error, Result};
use crate::estimators::{estimate, EstimatorConfig, InnerNoise, Target};
use crate::hypothesis::{constant_family, threshold_family, ClassCheck, ClassChecker, FamilySpec, Hypothesis};
use crate::linalg::{lambda_tol, orthonormalize_coeffs, OrthoCoeffs, SymMatrix};
use crate::oracle::Oracle;
use crate::sampler::GaussianSampler;
use crate::tester::{test_rank, Preset, RankTestParams, RankVerdict};

/// Sample sizing kept in floating point so that paper-faithful sizes can be
/// recorded even when they cannot be run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sizing {
    pub accuracy: f64,
    pub batch: f64,
    pub blocks: usize,
}

/// Largest batch `Sizing::config` will hand to an estimator.
pub const MAX_RUNNABLE_BATCH: f64 = 1e12;

impl Sizing {
    pub fn hoeffding(accuracy: f64, delta: f64, range: f64) -> Sizing {
        Sizing {
            accuracy,
            batch: (2.0 * range * range / (accuracy * accuracy)).ceil(),
            blocks: 2 * (18.0 * (1.0 / delta).ln()).ceil() as usize + 1,
        }
    }

    pub fn fixed(accuracy: f64, batch: u64, blocks: usize) -> Sizing {
        Sizing {
            accuracy,
            batch: batch as f64,
            blocks,
        }
    }

    pub fn samples(&self) -> f64 {
        self.batch * self.blocks as f64
    }

    pub fn config(&self) -> Result<EstimatorConfig> {
        if !(self.batch >= 1.0 && self.batch <= MAX_RUNNABLE_BATCH) {
            return invalid(format!(
                "batch {:e} is not runnable; the paper-faithful preset is for auditing only",
                self.batch
            ));
        }
        EstimatorConfig::fixed(self.accuracy.max(f64::MIN_POSITIVE), 0.1, self.batch as usize, self.blocks.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    pub k: usize,
    pub s: f64,
    pub epsilon: f64,
    pub preset: Preset,
    pub t: f64,
    pub gamma: f64,
    /// inner correlation of the gradient inner-product estimator
    pub rho: f64,
    /// Gram entries used by the candidate test
    pub beta: Sizing,
    /// Gram entries used by the orthonormalization
    pub ortho: Sizing,
    /// orthonormalization accuracy
    pub tau: f64,
    pub tau_succ: f64,
    pub t_succ: usize,
    pub xi: f64,
    pub directional: Sizing,
    pub pt: Sizing,
    /// overrides the number of scoring points
    pub points: Option<usize>,
    pub cover_c: f64,
    pub cover_delta: f64,
    /// natural-log cap on the number of cover functions enumerated
    pub cover_log_cap: f64,
    /// draw all candidate directions before any test
    pub non_adaptive: bool,
}

pub const PRACTICAL_LEARN_T_SCALE: f64 = 1.0;
pub const PRACTICAL_LEARN_RHO: f64 = 0.5;
pub const PRACTICAL_LEARN_XI: f64 = 0.3;
pub const PRACTICAL_TAU_SUCC: f64 = 0.2;
pub const DEFAULT_COVER_CAP: f64 = 1e7;

fn check_kse(k: usize, s: f64, epsilon: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return invalid(format!("surface-area bound s must be positive, got {s}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0,1), got {epsilon}"));
    }
    if k > 16 {
        return invalid(format!("k = {k} is out of range for the learner"));
    }
    Ok(())
}

/// `Lambda(l, t, gamma) = 2 (l / (t gamma))^{l+1}`.
pub fn coefficient_bound(ell: usize, t: f64, gamma: f64) -> f64 {
    let l = ell.max(1) as f64;
    2.0 * (l / (t * gamma)).powi(ell.max(1) as i32 + 1)
}

impl LearnParams {
    /// `t = eps^4/(900 s^2)`, `gamma = eps^2/8`, `tau_succ = eps^6/s^2`,
    /// `T_succ = ceil(ln(10k/eps)/tau_succ)`; accuracies sized for `l = k`.
    pub fn paper_faithful(k: usize, s: f64, epsilon: f64) -> Result<Self> {
        check_kse(k, s, epsilon)?;
        let l = k.max(1);
        let lf = l as f64;
        let t = epsilon.powi(4) / (900.0 * s * s);
        let big_t = (2.0 * t).exp_m1();
        let gamma = epsilon * epsilon / 8.0;
        let eta = 1.0 / t.sqrt();
        let nu = gamma * gamma * t / (100.0 * lf * lf);
        let tau = epsilon * epsilon * t.sqrt() / (100.0 * lf.powf(1.5));
        let tau_succ = epsilon.powi(6) / (s * s);
        let t_succ = ((10.0 * k.max(1) as f64 / epsilon).ln() / tau_succ).ceil();
        let delta = epsilon / 100.0;
        let gram = |acc: f64| {
            let rho = acc * big_t / 2.0;
            Sizing::hoeffding(acc, delta, 8.0 / (rho * rho * big_t))
        };
        let big_k = lf * lf * coefficient_bound(l, t, gamma);
        let xi = epsilon * epsilon * t.sqrt() / (big_k * lf.powi(3));
        Ok(LearnParams {
            k,
            s,
            epsilon,
            preset: Preset::PaperFaithful,
            t,
            gamma,
            rho: (lambda_tol(l, nu, eta, gamma / 2.0) * big_t / 2.0).min(0.5),
            beta: gram(lambda_tol(l, nu, eta, gamma / 2.0)),
            ortho: gram(lambda_tol(l, tau, eta, gamma / 2.0)),
            tau,
            tau_succ,
            t_succ: t_succ.min(u32::MAX as f64) as usize,
            xi,
            directional: Sizing::hoeffding(xi, delta, 4.0 / (xi * big_t.sqrt())),
            pt: Sizing::hoeffding(epsilon / 10.0, delta, 2.0),
            points: None,
            cover_c: 1.0,
            cover_delta: epsilon / 10.0,
            cover_log_cap: DEFAULT_COVER_CAP.ln(),
            non_adaptive: false,
        })
    }

    /// Desk-scale preset: `e^{2t} - 1 = 1`, `gamma = eps`, inner correlation
    /// 0.5 with 2e5 samples per Gram entry, `tau_succ = 0.2`, directional
    /// parameter 0.3 with 1e4 samples, 1e3 samples per `P_t f` value.
    pub fn practical(k: usize, s: f64, epsilon: f64) -> Result<Self> {
        check_kse(k, s, epsilon)?;
        let t = 0.5 * PRACTICAL_LEARN_T_SCALE.ln_1p();
        let lf = k.max(1) as f64;
        Ok(LearnParams {
            k,
            s,
            epsilon,
            preset: Preset::Practical,
            t,
            gamma: epsilon,
            rho: PRACTICAL_LEARN_RHO,
            beta: Sizing::fixed(epsilon * epsilon / 50.0, 200_000, 1),
            ortho: Sizing::fixed(epsilon * epsilon / 50.0, 200_000, 1),
            tau: epsilon * epsilon * t.sqrt() / (100.0 * lf.powf(1.5)),
            tau_succ: PRACTICAL_TAU_SUCC,
            t_succ: ((10.0 * k.max(1) as f64 / epsilon).ln() / PRACTICAL_TAU_SUCC).ceil() as usize,
            xi: PRACTICAL_LEARN_XI,
            directional: Sizing::fixed(0.05, 10_000, 1),
            pt: Sizing::fixed(0.05, 1_000, 1),
            points: None,
            cover_c: 1.0,
            cover_delta: epsilon / 10.0,
            cover_log_cap: DEFAULT_COVER_CAP.ln(),
            non_adaptive: false,
        })
    }

    pub fn new(preset: Preset, k: usize, s: f64, epsilon: f64) -> Result<Self> {
        match preset {
            Preset::PaperFaithful => Self::paper_faithful(k, s, epsilon),
            Preset::Practical => Self::practical(k, s, epsilon),
        }
    }

    /// Gradient-norm bound `t^{-1/2}` used for the independence margin.
    pub fn eta(&self) -> f64 {
        1.0 / self.t.sqrt()
    }

    /// `(3 gamma / 4)^2`, the squared residual a candidate must exceed.
    pub fn candidate_threshold(&self) -> f64 {
        (0.75 * self.gamma).powi(2)
    }

    /// `ceil((10/eps^2) ln(|H| / eps))` scoring points for a family of
    /// natural-log size `log_h`.
    pub fn scoring_points(&self, log_h: f64) -> usize {
        if let Some(p) = self.points {
            return p;
        }
        let ln_inv_mu = log_h - self.epsilon.ln();
        (10.0 / (self.epsilon * self.epsilon) * ln_inv_mu.max(1.0)).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_kse(self.k, self.s, self.epsilon)?;
        if !(self.t > 0.0 && self.gamma > 0.0) {
            return invalid("t and gamma must be positive");
        }
        if !(self.rho > 0.0 && self.rho < 1.0 && self.xi > 0.0 && self.xi < 1.0) {
            return invalid("rho and xi must lie in (0,1)");
        }
        if self.eta() < self.gamma / 2.0 {
            return invalid("gamma/2 exceeds the gradient-norm bound t^{-1/2}");
        }
        Ok(())
    }
}

/// Anchors found so far, with their estimated Gram and coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionBundle {
    pub t: f64,
    pub gamma: f64,
    pub anchors: Vec<Vec<f64>>,
    /// estimated `<D P_t f(y_i), D P_t f(y_j)>`
    pub beta: SymMatrix,
    /// `w_i = sum_j alpha_ij D P_t f(y_j)` is near-orthonormal
    pub alpha: SymMatrix,
    pub ortho: Option<OrthoCoeffs>,
    pub xi: f64,
    pub directional: Sizing,
}

impl DirectionBundle {
    pub fn empty(params: &LearnParams) -> Self {
        DirectionBundle {
            t: params.t,
            gamma: params.gamma,
            anchors: Vec::new(),
            beta: SymMatrix::zeros(0),
            alpha: SymMatrix::zeros(0),
            ortho: None,
            xi: params.xi,
            directional: params.directional,
        }
    }

    pub fn ell(&self) -> usize {
        self.anchors.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTest {
    pub accept: bool,
    pub beta_new: f64,
    pub zeta: Vec<f64>,
    /// estimated squared distance from the span: `beta_new - sum zeta_i^2`
    pub residual: f64,
    pub threshold: f64,
}

/// Decides whether a candidate gradient escapes the span of the bundle,
/// from estimated entries `beta_col[j] ~ <v_j, v_new>` and
/// `beta_new ~ |v_new|^2`. `beta_new` is read as a squared norm.
pub fn test_candidate_direction(bundle: &DirectionBundle, beta_col: &[f64], beta_new: f64, gamma: f64) -> Result<CandidateTest> {
    let ell = bundle.ell();
    if beta_col.len() != ell || bundle.alpha.order() != ell {
        return invalid(format!("expected {ell} Gram entries and an order-{ell} alpha"));
    }
    let zeta: Vec<f64> = (0..ell)
        .map(|i| (0..ell).map(|j| bundle.alpha.get(i, j) * beta_col[j]).sum())
        .collect();
    let residual = beta_new - zeta.iter().map(|z| z * z).sum::<f64>();
    let threshold = (0.75 * gamma).powi(2);
    Ok(CandidateTest {
        accept: residual > threshold,
        beta_new,
        zeta,
        residual,
        threshold,
    })
}

const CANDIDATE_STREAM: u64 = 0xCA7D;
const PROBE_STREAM: u64 = 0x960B;
const ORTHO_STREAM: u64 = 0x0274;
const POINT_STREAM: u64 = 0x9017;
const DIRECTIONAL_STREAM: u64 = 0xD12E;
const PT_STREAM: u64 = 0x9775;

fn grad_inner(f: &Oracle, t: f64, y1: &[f64], y2: &[f64], rho: f64, cfg: &EstimatorConfig, s: &mut GaussianSampler) -> Result<f64> {
    let rho = InnerNoise::Correlation { rho }.rho(t, cfg.epsilon)?;
    Ok(estimate(f, Target::GradInner { t, y1, y2, rho }, cfg, s)?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSearch {
    pub bundle: DirectionBundle,
    pub attempts: usize,
    pub tests: Vec<CandidateTest>,
    pub queries: u64,
}

/// Collects up to `k` anchors whose gradients are pairwise far from each
/// other's span; stops after `T_succ` consecutive rejections.
pub fn find_candidate_directions(f: &Oracle, params: &LearnParams, sampler: &GaussianSampler) -> Result<DirectionSearch> {
    params.validate()?;
    let stage = f.stage();
    let n = f.dim();
    let cfg = params.beta.config()?;
    let mut bundle = DirectionBundle::empty(params);
    let mut draws = sampler.child(CANDIDATE_STREAM);
    let probes = sampler.child(PROBE_STREAM);
    let pool: Option<Vec<Vec<f64>>> = params
        .non_adaptive
        .then(|| (0..(params.k + 1) * params.t_succ).map(|_| draws.normal_vec(n)).collect());
    let mut tests = Vec::new();
    let mut attempts = 0usize;
    let nu = params.gamma * params.gamma * params.t / (100.0 * (params.k.max(1) as f64).powi(2));
    'outer: while bundle.ell() < params.k {
        for _ in 0..params.t_succ {
            let z = match &pool {
                Some(p) => match p.get(attempts) {
                    Some(z) => z.clone(),
                    None => break 'outer,
                },
                None => draws.normal_vec(n),
            };
            let ell = bundle.ell();
            let mut col = Vec::with_capacity(ell);
            for (j, y) in bundle.anchors.iter().enumerate() {
                let mut s = probes.child2(attempts as u64, j as u64);
                col.push(grad_inner(&stage, params.t, y, &z, params.rho, &cfg, &mut s)?);
            }
            let mut s = probes.child2(attempts as u64, ell as u64);
            let beta_new = grad_inner(&stage, params.t, &z, &z, params.rho, &cfg, &mut s)?;
            attempts += 1;
            let test = test_candidate_direction(&bundle, &col, beta_new, params.gamma)?;
            let accept = test.accept;
            tests.push(test);
            if !accept {
                continue;
            }
            let mut beta = SymMatrix::zeros(ell + 1);
            for i in 0..ell {
                for j in i..ell {
                    beta.set(i, j, bundle.beta.get(i, j));
                }
                beta.set(i, ell, col[i]);
            }
            beta.set(ell, ell, beta_new);
            match orthonormalize_coeffs(&beta, ell + 1, params.eta(), params.gamma / 2.0, nu) {
                Ok(oc) => {
                    bundle.anchors.push(z);
                    bundle.beta = beta;
                    bundle.alpha = oc.alpha;
                    continue 'outer;
                }
                // estimated Gram too ill-conditioned: treat as a rejection
                Err(Error::PerturbationTooLarge { .. }) => {
                    if let Some(t) = tests.last_mut() {
                        t.accept = false;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        break;
    }
    assert!(bundle.ell() <= params.k);
    Ok(DirectionSearch {
        bundle,
        attempts,
        tests,
        queries: stage.ledger().total(),
    })
}

/// Re-estimates the anchor Gram at the orthonormalization accuracy and
/// stores `alpha` with `|w_i - sum_j alpha_ij v_j| <= tau`.
pub fn compute_ortho_transform(f: &Oracle, bundle: &mut DirectionBundle, params: &LearnParams, sampler: &GaussianSampler) -> Result<OrthoCoeffs> {
    let ell = bundle.ell();
    let cfg = params.ortho.config()?;
    let streams = sampler.child(ORTHO_STREAM);
    let mut beta = SymMatrix::zeros(ell);
    for i in 0..ell {
        for j in i..ell {
            let mut s = streams.child2(i as u64, j as u64);
            beta.set(i, j, grad_inner(f, params.t, &bundle.anchors[i], &bundle.anchors[j], params.rho, &cfg, &mut s)?);
        }
    }
    let oc = orthonormalize_coeffs(&beta, ell, params.eta(), params.gamma / 2.0, params.tau).map_err(|e| match e {
        Error::PerturbationTooLarge { lambda_min, floor } | Error::RankDeficient { lambda_min, floor } => Error::CertificationFailed(format!(
            "anchor Gram has smallest eigenvalue {lambda_min:e} below {floor:e}; anchors are not independent"
        )),
        other => other,
    })?;
    bundle.beta = beta;
    bundle.alpha = oc.alpha.clone();
    bundle.ortho = Some(oc.clone());
    Ok(oc)
}

/// `xbar_i = sum_j alpha_ij zeta_j`, with `zeta_j` the degree-1 evaluation
/// of `f_{t, y_j}` at `x`.
pub fn project(f: &Oracle, bundle: &DirectionBundle, x: &[f64], sampler: &GaussianSampler) -> Result<Vec<f64>> {
    let ell = bundle.ell();
    let cfg = bundle.directional.config()?;
    let mut zeta = Vec::with_capacity(ell);
    for (j, y) in bundle.anchors.iter().enumerate() {
        let mut s = sampler.child2(DIRECTIONAL_STREAM, j as u64);
        let target = Target::Directional { t: bundle.t, y, x, xi: bundle.xi };
        zeta.push(estimate(f, target, &cfg, &mut s)?.value);
    }
    Ok((0..ell)
        .map(|i| (0..ell).map(|j| bundle.alpha.get(i, j) * zeta[j]).sum())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedHypothesis {
    pub g: Hypothesis,
    pub bundle: DirectionBundle,
    /// mean `|P_t f(x_i) - g(xbar_i)|` over the scoring points
    pub score: f64,
    pub scored: u64,
    pub points: usize,
    pub queries: u64,
}

/// Scores every hypothesis on common points and returns the first minimizer.
/// `log_size` is the natural log of the family size and fixes the number of
/// points.
pub fn estimate_closest_hypothesis(
    f: &Oracle,
    bundle: &DirectionBundle,
    hypotheses: &mut dyn Iterator<Item = Hypothesis>,
    log_size: f64,
    params: &LearnParams,
    sampler: &GaussianSampler,
) -> Result<LearnedHypothesis> {
    let stage = f.stage();
    let n = f.dim();
    let points = params.scoring_points(log_size);
    let pt_cfg = params.pt.config()?;
    let mut xs = sampler.child(POINT_STREAM);
    let pts = sampler.child(PT_STREAM);
    let mut xbar = Vec::with_capacity(points);
    let mut ptv = Vec::with_capacity(points);
    for i in 0..points {
        let x = xs.normal_vec(n);
        xbar.push(project(&stage, bundle, &x, &sampler.child2(POINT_STREAM, i as u64))?);
        let mut s = pts.child(i as u64);
        ptv.push(estimate(&stage, Target::Pt { t: params.t, x: &x }, &pt_cfg, &mut s)?.value);
    }
    let mut best: Option<(f64, Hypothesis)> = None;
    let mut scored = 0u64;
    for g in hypotheses {
        scored += 1;
        let score = xbar.iter().zip(&ptv).map(|(z, p)| (p - g.eval(z)).abs()).sum::<f64>() / points as f64;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, g));
        }
    }
    let (score, g) = best.ok_or_else(|| Error::InvalidArgument("empty hypothesis family".into()))?;
    Ok(LearnedHypothesis {
        g,
        bundle: bundle.clone(),
        score,
        scored,
        points,
        queries: stage.ledger().total(),
    })
}

/// `g(xbar(x))`, computing the projection with fresh queries.
pub fn evaluate_learned(h: &LearnedHypothesis, f: &Oracle, x: &[f64], sampler: &GaussianSampler) -> Result<f64> {
    Ok(h.g.eval(&project(f, &h.bundle, x, sampler)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub hypothesis: LearnedHypothesis,
    pub attempts: usize,
    pub ortho: Option<OrthoCoeffs>,
    pub family: FamilySpec,
    pub queries: u64,
}

/// Directions, then orthonormalization, then hypothesis selection.
pub fn find_invariant_structure(f: &Oracle, params: &LearnParams, family: FamilySpec, sampler: &GaussianSampler) -> Result<LearnOutcome> {
    let stage = f.stage();
    let search = find_candidate_directions(&stage, params, &sampler.child(1))?;
    let mut bundle = search.bundle;
    let ortho = if bundle.ell() > 0 {
        Some(compute_ortho_transform(&stage, &mut bundle, params, &sampler.child(2))?)
    } else {
        None
    };
    let hsampler = sampler.child(3);
    let hypothesis = match family {
        FamilySpec::Thresholds(m) => {
            let fam = threshold_family(m);
            let log = (fam.len() as f64).ln();
            estimate_closest_hypothesis(&stage, &bundle, &mut fam.into_iter(), log, params, &hsampler)?
        }
        FamilySpec::Constants(m) => {
            let fam = constant_family(m);
            let log = (fam.len() as f64).ln();
            estimate_closest_hypothesis(&stage, &bundle, &mut fam.into_iter(), log, params, &hsampler)?
        }
        FamilySpec::Cover => {
            let mut spec = CoverSpec::new(bundle.ell(), params.t, params.cover_delta);
            spec.c = params.cover_c;
            spec.log_cap = params.cover_log_cap;
            let cover = build_cover(&spec)?;
            let mut it = cover.iter().map(Hypothesis::Cover);
            estimate_closest_hypothesis(&stage, &bundle, &mut it, cover.log_size_estimate, params, &hsampler)?
        }
    };
    Ok(LearnOutcome {
        hypothesis,
        attempts: search.attempts,
        ortho,
        family,
        queries: stage.ledger().total(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureVerdict {
    pub answer: bool,
    pub rank: RankVerdict,
    pub learned: Option<LearnOutcome>,
    pub class_check: Option<ClassCheck>,
    pub queries: u64,
    /// queries issued while the class checker ran; always 0
    pub queries_during_check: u64,
}

/// Rank test, then learning, then an offline class check of the learned `g`
/// run with the ledger frozen.
pub fn test_structure_class(
    f: &Oracle,
    checker: &dyn ClassChecker,
    rank: &RankTestParams,
    learn: &LearnParams,
    family: FamilySpec,
    sampler: &GaussianSampler,
) -> Result<StructureVerdict> {
    let stage = f.stage();
    let rv = test_rank(&stage, rank, &sampler.child(10))?;
    if !rv.answer {
        return Ok(StructureVerdict {
            answer: false,
            rank: rv,
            learned: None,
            class_check: None,
            queries: stage.ledger().total(),
            queries_during_check: 0,
        });
    }
    let learned = find_invariant_structure(&stage, learn, family, &sampler.child(11))?;
    let before = stage.ledger().total();
    stage.ledger().freeze();
    let check = checker.check(&learned.hypothesis.g, learned.hypothesis.bundle.ell(), learn.k, learn.epsilon);
    stage.ledger().unfreeze();
    let check = check?;
    let during = stage.ledger().total() - before;
    Ok(StructureVerdict {
        answer: check.accept,
        rank: rv,
        learned: Some(learned),
        class_check: Some(check),
        queries: stage.ledger().total(),
        queries_during_check: during,
    })
}
