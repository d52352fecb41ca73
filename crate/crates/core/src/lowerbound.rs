//! Experiments on the two stripe distributions D1 (1-juntas) and D2 (their
//! cut versions): the coupling event, total-variation distance of
//! non-adaptive answer vectors, and distance of D2 samples to 1-juntas.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oracle::Function;
use crate::sampler::GaussianSampler;
use crate::zoo::{draw_stripes, perp, stripe_of, StripeDraw, ZooFunction};

/// Query points in the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryDesign {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

impl QueryDesign {
    pub fn new(name: impl Into<String>, points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return invalid("a query design needs at least one point");
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("query points must be finite");
        }
        Ok(QueryDesign {
            name: name.into(),
            points,
        })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// `a x b` grid on [-0.8, 0.8]^2.
    pub fn grid(a: usize, b: usize) -> Result<Self> {
        let axis = |m: usize| -> Vec<f64> {
            if m == 1 {
                vec![0.0]
            } else {
                (0..m).map(|i| -0.8 + 1.6 * i as f64 / (m - 1) as f64).collect()
            }
        };
        let mut pts = Vec::new();
        for &x in &axis(a) {
            for &y in &axis(b) {
                pts.push([x, y]);
            }
        }
        Self::new(format!("grid:{a}x{b}"), pts)
    }

    /// `n` points on the circle of radius 0.6, evenly spaced.
    pub fn spread(n: usize) -> Result<Self> {
        let pts = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64 + 0.1;
                [0.6 * a.cos(), 0.6 * a.sin()]
            })
            .collect();
        Self::new(format!("spread:{n}"), pts)
    }

    /// `n` standard Gaussian points scaled by 0.5.
    pub fn cloud(n: usize, sampler: &mut GaussianSampler) -> Result<Self> {
        let pts = (0..n).map(|_| [0.5 * sampler.normal(), 0.5 * sampler.normal()]).collect();
        Self::new(format!("cloud:{n}"), pts)
    }

    /// Two clusters of radius 0.15 around (-0.4, -0.4) and (0.4, 0.4).
    pub fn clusters(n: usize, sampler: &mut GaussianSampler) -> Result<Self> {
        let pts = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { -0.4 } else { 0.4 };
                let r = 0.15 * sampler.uniform(0.0, 1.0).sqrt();
                let a = sampler.uniform(0.0, 2.0 * PI);
                [c + r * a.cos(), c + r * a.sin()]
            })
            .collect();
        Self::new(format!("clusters:{n}"), pts)
    }

    /// Parses `grid:AxB`, `spread:N`, `cloud:N`, `clusters:N` or
    /// `points:x,y;x,y;...`.
    pub fn parse(spec: &str, sampler: &mut GaussianSampler) -> Result<Self> {
        let bad = || Error::Parse(format!("bad design {spec:?}; expected grid:AxB, spread:N, cloud:N, clusters:N or points:x,y;..."));
        let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
        let count = || arg.parse::<usize>().map_err(|_| bad());
        match kind {
            "grid" => {
                let (a, b) = arg.split_once('x').ok_or_else(bad)?;
                Self::grid(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)
            }
            "spread" => Self::spread(count()?),
            "cloud" => Self::cloud(count()?, sampler),
            "clusters" => Self::clusters(count()?, sampler),
            "points" => {
                let pts = arg
                    .split(';')
                    .map(|p| {
                        let (x, y) = p.split_once(',').ok_or_else(bad)?;
                        Ok([x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?])
                    })
                    .collect::<Result<Vec<[f64; 2]>>>()?;
                Self::new(spec, pts)
            }
            _ => Err(bad()),
        }
    }
}

impl FromStr for QueryDesign {
    type Err = Error;
    /// Deterministic designs only; random ones need a sampler.
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, &mut GaussianSampler::new(0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingOutcome {
    pub event_a_held: bool,
    /// event A recomputed from pairwise separation checks
    pub event_a_pairwise: bool,
    pub answers_f: Vec<i8>,
    pub answers_g: Vec<i8>,
}

impl CouplingOutcome {
    pub fn identical(&self) -> bool {
        self.answers_f == self.answers_g
    }
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Per point: stripe index (if inside the strip) and whether it lies on the
/// plus side `<x, theta_perp> >= z`.
fn locate(design: &QueryDesign, d: &StripeDraw, z: f64) -> Vec<(Option<usize>, bool)> {
    let tp = perp(d.theta);
    design
        .points
        .iter()
        .map(|&x| (stripe_of(&d.breakpoints, dot2(d.theta, x)), dot2(tp, x) >= z))
        .collect()
}

/// Event A: no stripe holds points on both sides of the cut.
fn event_a_by_membership(loc: &[(Option<usize>, bool)]) -> bool {
    let mut sides: Vec<(usize, bool)> = loc.iter().filter_map(|&(s, p)| s.map(|s| (s, p))).collect();
    sides.sort_unstable();
    sides.windows(2).all(|w| w[0].0 != w[1].0 || w[0].1 == w[1].1)
}

/// Event A again: every pair on opposite sides of the cut is either off the
/// strip or separated by an interior breakpoint.
fn event_a_by_pairs(design: &QueryDesign, d: &StripeDraw, z: f64) -> bool {
    let tp = perp(d.theta);
    let s = d.breakpoints.len() - 1;
    let (lo, hi) = (d.breakpoints[0], d.breakpoints[s]);
    let interior = &d.breakpoints[1..s];
    let proj: Vec<(f64, bool)> = design
        .points
        .iter()
        .map(|&x| (dot2(d.theta, x), dot2(tp, x) >= z))
        .collect();
    for i in 0..proj.len() {
        for j in 0..i {
            let ((p, sp), (q, sq)) = (proj[i], proj[j]);
            if sp == sq || p <= lo || p > hi || q <= lo || q > hi {
                continue;
            }
            let (a, b) = if p < q { (p, q) } else { (q, p) };
            // some a_k with a <= a_k < b separates (a_{k-1}, a_k] from (a_k, ...]
            let k = interior.partition_point(|&v| v < a);
            let separated = k < interior.len() && interior[k] < b;
            if !separated {
                return false;
            }
        }
    }
    true
}

fn d1(d: &StripeDraw) -> ZooFunction {
    ZooFunction::StripedOneJunta {
        theta: d.theta,
        breakpoints: d.breakpoints.clone(),
        bits: d.bits.clone(),
    }
}

fn d2(d: &StripeDraw, bits: Vec<i8>, z: f64) -> ZooFunction {
    ZooFunction::CutStripedTwoJunta {
        theta: d.theta,
        breakpoints: d.breakpoints.clone(),
        bits,
        cut: z,
    }
}

fn answers(f: &ZooFunction, design: &QueryDesign) -> Vec<i8> {
    design
        .points
        .iter()
        .map(|x| if f.eval(x) > 0.0 { 1 } else { -1 })
        .collect()
}

/// One coupled draw of `f ~ D1` and `g ~ D2` sharing direction, breakpoints
/// and cut. `g` uses bits `b_i sigma_i` with `sigma_i = -1` exactly when the
/// design points in stripe i all lie on the minus side; `sigma` does not
/// depend on `b`, so `g` is still distributed as D2.
pub fn run_coupling_trial(design: &QueryDesign, s: usize, sampler: &mut GaussianSampler) -> Result<CouplingOutcome> {
    let d = draw_stripes(s, sampler)?;
    let z = sampler.uniform(-1.0, 1.0);
    let loc = locate(design, &d, z);
    let held = event_a_by_membership(&loc);
    let pairwise = event_a_by_pairs(design, &d, z);
    let mut minus_only = vec![false; s];
    let mut has_plus = vec![false; s];
    for &(stripe, plus) in &loc {
        if let Some(i) = stripe {
            if plus {
                has_plus[i - 1] = true;
            } else {
                minus_only[i - 1] = true;
            }
        }
    }
    let bits: Vec<i8> = (0..s)
        .map(|i| if minus_only[i] && !has_plus[i] { -d.bits[i] } else { d.bits[i] })
        .collect();
    let out = CouplingOutcome {
        event_a_held: held,
        event_a_pairwise: pairwise,
        answers_f: answers(&d1(&d), design),
        answers_g: answers(&d2(&d, bits, z), design),
    };
    assert!(!out.event_a_held || out.identical(), "coupling identity violated");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub trials: u64,
    pub event_a_failures: u64,
    pub fail_rate: f64,
    /// trials where the two computations of event A disagree
    pub method_disagreements: u64,
    /// trials where A held but the answers differed
    pub identity_violations: u64,
    /// trials where the answers differed
    pub answer_mismatches: u64,
}

pub fn coupling_experiment(design: &QueryDesign, s: usize, trials: u64, sampler: &GaussianSampler) -> Result<CouplingSummary> {
    let mut rng = sampler.child(0xC0);
    let mut sum = CouplingSummary {
        trials,
        event_a_failures: 0,
        fail_rate: 0.0,
        method_disagreements: 0,
        identity_violations: 0,
        answer_mismatches: 0,
    };
    for _ in 0..trials {
        let o = run_coupling_trial(design, s, &mut rng)?;
        sum.event_a_failures += u64::from(!o.event_a_held);
        sum.method_disagreements += u64::from(o.event_a_held != o.event_a_pairwise);
        sum.identity_violations += u64::from(o.event_a_held && !o.identical());
        sum.answer_mismatches += u64::from(!o.identical());
    }
    sum.fail_rate = sum.event_a_failures as f64 / trials.max(1) as f64;
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    /// bias-corrected estimate `max(0, 2 tv_raw - mean of bootstrap)`
    pub tv: f64,
    /// plug-in TV between the smoothed histograms
    pub tv_raw: f64,
    /// 95% bootstrap half-width
    pub half_width: f64,
    pub bootstrap_mean: f64,
    /// mean plug-in TV between two same-law samples drawn from the pooled
    /// histogram: the estimator's noise floor at this n and trial count
    pub null_mean: f64,
    /// 95th percentile of that null distribution
    pub null_q95: f64,
    pub trials: u64,
    pub n: usize,
}

pub const MAX_TV_POINTS: usize = 20;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

fn code(a: &[i8]) -> usize {
    a.iter().enumerate().fold(0, |acc, (i, &v)| acc | (usize::from(v > 0) << i))
}

/// Plus-four smoothing: four pseudo-counts spread evenly over the cells.
fn smoothed(counts: &[u64], trials: u64) -> Vec<f64> {
    let extra = 4.0 / counts.len() as f64;
    let denom = trials as f64 + 4.0;
    counts.iter().map(|&c| (c as f64 + extra) / denom).collect()
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial(trials: u64, p: &[f64], rng: &mut impl Rng) -> Vec<u64> {
    let mut left = trials;
    let mut mass = 1.0;
    let mut out = vec![0u64; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        let frac = if i + 1 == p.len() { 1.0 } else { (pi / mass).clamp(0.0, 1.0) };
        let c = Binomial::new(left, frac).expect("valid binomial").sample(rng);
        out[i] = c;
        left -= c;
        mass -= pi;
    }
    out
}

/// TV distance between the answer-vector laws of independent `f ~ D1` and
/// `g ~ D2` on the design, with a parametric bootstrap.
pub fn estimate_tv_distance(design: &QueryDesign, s: usize, trials: u64, sampler: &GaussianSampler) -> Result<TvEstimate> {
    let n = design.n();
    if n > MAX_TV_POINTS {
        return invalid(format!("TV estimation enumerates 2^n cells; n = {n} exceeds {MAX_TV_POINTS}"));
    }
    if trials == 0 {
        return invalid("trials must be positive");
    }
    let cells = 1usize << n;
    let mut cf = vec![0u64; cells];
    let mut cg = vec![0u64; cells];
    let mut rf = sampler.child(0xD1);
    let mut rg = sampler.child(0xD2);
    for _ in 0..trials {
        let d = draw_stripes(s, &mut rf)?;
        cf[code(&answers(&d1(&d), design))] += 1;
        let d = draw_stripes(s, &mut rg)?;
        let z = rg.uniform(-1.0, 1.0);
        let bits = d.bits.clone();
        cg[code(&answers(&d2(&d, bits, z), design))] += 1;
    }
    let p = smoothed(&cf, trials);
    let q = smoothed(&cg, trials);
    let tv_raw = tv(&p, &q);
    let mut boot = sampler.child(0xB0);
    let mut reps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let bp = smoothed(&multinomial(trials, &p, boot.rng()), trials);
            let bq = smoothed(&multinomial(trials, &q, boot.rng()), trials);
            tv(&bp, &bq)
        })
        .collect();
    reps.sort_unstable_by(f64::total_cmp);
    let bootstrap_mean = reps.iter().sum::<f64>() / reps.len() as f64;
    let lo = reps[(0.025 * reps.len() as f64) as usize];
    let hi = reps[((0.975 * reps.len() as f64) as usize).min(reps.len() - 1)];
    let pooled: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut null: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let a = smoothed(&multinomial(trials, &pooled, boot.rng()), trials);
            let b = smoothed(&multinomial(trials, &pooled, boot.rng()), trials);
            tv(&a, &b)
        })
        .collect();
    null.sort_unstable_by(f64::total_cmp);
    Ok(TvEstimate {
        null_mean: null.iter().sum::<f64>() / null.len() as f64,
        null_q95: null[((0.95 * null.len() as f64) as usize).min(null.len() - 1)],
        tv: (2.0 * tv_raw - bootstrap_mean).max(0.0),
        tv_raw,
        half_width: 0.5 * (hi - lo),
        bootstrap_mean,
        trials,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuntaDistance {
    pub distance: f64,
    pub best_angle: f64,
    pub directions: usize,
    pub samples: usize,
    pub bins: usize,
}

pub const DISTANCE_BINS: usize = 200;
pub const DISTANCE_RANGE: f64 = 4.0;

/// Minimum over `directions` angles in [0, pi) of the disagreement between
/// `g` and the bin-wise majority of `g` along that angle (200 bins on
/// [-4, 4] plus two tail bins), on common Gaussian points.
pub fn estimate_distance_to_1junta(g: &dyn Function, directions: usize, samples: usize, sampler: &GaussianSampler) -> Result<JuntaDistance> {
    estimate_distance_to_1junta_with_bins(g, directions, samples, DISTANCE_BINS, sampler)
}

pub fn estimate_distance_to_1junta_with_bins(
    g: &dyn Function,
    directions: usize,
    samples: usize,
    bins: usize,
    sampler: &GaussianSampler,
) -> Result<JuntaDistance> {
    if g.dim() != 2 {
        return invalid(format!("expected a function on R^2, got dimension {}", g.dim()));
    }
    if directions == 0 || samples == 0 || bins == 0 {
        return invalid("directions, samples and bins must be positive");
    }
    let mut rng = sampler.child(0xD15);
    let xs: Vec<[f64; 2]> = (0..samples).map(|_| [rng.normal(), rng.normal()]).collect();
    let vals: Vec<bool> = xs.iter().map(|x| g.eval(x) > 0.0).collect();
    let width = 2.0 * DISTANCE_RANGE / bins as f64;
    let mut best = (f64::INFINITY, 0.0);
    let mut plus = vec![0u32; bins + 2];
    let mut total = vec![0u32; bins + 2];
    for k in 0..directions {
        let phi = PI * k as f64 / directions as f64;
        let u = [phi.cos(), phi.sin()];
        plus.iter_mut().for_each(|c| *c = 0);
        total.iter_mut().for_each(|c| *c = 0);
        for (x, &v) in xs.iter().zip(&vals) {
            let p = dot2(u, *x);
            let b = if p < -DISTANCE_RANGE {
                0
            } else if p >= DISTANCE_RANGE {
                bins + 1
            } else {
                1 + (((p + DISTANCE_RANGE) / width) as usize).min(bins - 1)
            };
            total[b] += 1;
            plus[b] += u32::from(v);
        }
        let wrong: u64 = plus.iter().zip(&total).map(|(&p, &t)| u64::from(p.min(t - p))).sum();
        let d = wrong as f64 / samples as f64;
        if d < best.0 {
            best = (d, phi);
        }
    }
    Ok(JuntaDistance {
        distance: best.0,
        best_angle: best.1,
        directions,
        samples,
        bins,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub rate: f64,
    pub bound: f64,
    pub trials: u64,
}

/// Fraction of draws of `(theta, z)` in which some pair of design points at
/// distance at most `delta = s^{-1/3}` straddles the cut line; reported
/// against `5 n^2 delta`.
pub fn close_pair_straddle_rate(design: &QueryDesign, s: usize, trials: u64, sampler: &GaussianSampler) -> RateCheck {
    let delta = (s as f64).powf(-1.0 / 3.0);
    let pts = &design.points;
    let close: Vec<(usize, usize)> = (0..pts.len())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .filter(|&(i, j)| ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt() <= delta)
        .collect();
    let mut rng = sampler.child(0x53);
    let mut hits = 0u64;
    for _ in 0..trials {
        let a = rng.uniform(0.0, 2.0 * PI);
        let tp = perp([a.cos(), a.sin()]);
        let z = rng.uniform(-1.0, 1.0);
        if close.iter().any(|&(i, j)| (dot2(tp, pts[i]) >= z) != (dot2(tp, pts[j]) >= z)) {
            hits += 1;
        }
    }
    let n = design.n() as f64;
    RateCheck {
        rate: hits as f64 / trials.max(1) as f64,
        bound: 5.0 * n * n * delta,
        trials,
    }
}

/// Empirical `Pr(|<theta, x>| <= delta |x|)` over uniform unit `theta`,
/// reported against `delta`.
pub fn small_inner_product_rate(x: [f64; 2], delta: f64, draws: u64, sampler: &GaussianSampler) -> RateCheck {
    let mut rng = sampler.child(0x54);
    let nx = dot2(x, x).sqrt();
    let hits = (0..draws)
        .filter(|_| {
            let a = rng.uniform(0.0, 2.0 * PI);
            dot2([a.cos(), a.sin()], x).abs() <= delta * nx
        })
        .count() as u64;
    RateCheck {
        rate: hits as f64 / draws.max(1) as f64,
        bound: delta,
        trials: draws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::sample_d1;

    #[test]
    fn design_parsing() {
        let g = QueryDesign::from_str("grid:3x3").unwrap();
        assert_eq!(g.n(), 9);
        assert_eq!(g.points[0], [-0.8, -0.8]);
        assert_eq!(QueryDesign::from_str("spread:5").unwrap().n(), 5);
        let p = QueryDesign::from_str("points:0,0;0.5,-0.25").unwrap();
        assert_eq!(p.points, vec![[0.0, 0.0], [0.5, -0.25]]);
        assert!(QueryDesign::from_str("grid:3").is_err());
        assert!(QueryDesign::from_str("spread:0").is_err());
        assert!(QueryDesign::from_str("hexagon:4").is_err());
    }

    #[test]
    fn single_point_always_couples() {
        let d = QueryDesign::from_str("points:0.1,0.2").unwrap();
        let s = coupling_experiment(&d, 50, 2000, &GaussianSampler::new(4)).unwrap();
        assert_eq!(s.event_a_failures, 0);
        assert_eq!(s.answer_mismatches, 0);
    }

    #[test]
    fn two_methods_agree_and_identity_holds() {
        let d = QueryDesign::from_str("clusters:8").unwrap();
        for s in [2, 10, 100] {
            let r = coupling_experiment(&d, s, 3000, &GaussianSampler::new(s as u64)).unwrap();
            assert_eq!(r.method_disagreements, 0);
            assert_eq!(r.identity_violations, 0);
            assert!(r.answer_mismatches <= r.event_a_failures);
        }
    }

    #[test]
    fn small_s_is_detectable() {
        let d = QueryDesign::parse("clusters:8", &mut GaussianSampler::new(9)).unwrap();
        let e = estimate_tv_distance(&d, 10, 20_000, &GaussianSampler::new(1)).unwrap();
        assert!(e.tv > 3.0 * e.half_width, "{e:?}");
        assert!(e.tv_raw > e.null_q95, "{e:?}");
    }

    #[test]
    fn origin_point_is_indistinguishable() {
        let d = QueryDesign::from_str("points:0,0").unwrap();
        let e = estimate_tv_distance(&d, 100, 20_000, &GaussianSampler::new(2)).unwrap();
        assert!(e.tv <= 3.0 * e.half_width + 1e-3, "{e:?}");
        assert!(e.tv_raw <= e.null_q95 + 1e-3, "{e:?}");
        assert!(estimate_tv_distance(&QueryDesign::grid(5, 5).unwrap(), 10, 1, &GaussianSampler::new(0)).is_err());
    }

    #[test]
    fn multinomial_preserves_total() {
        let mut s = GaussianSampler::new(3);
        let c = multinomial(1000, &[0.1, 0.2, 0.7], s.rng());
        assert_eq!(c.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn d1_is_close_to_a_junta_at_small_s() {
        let f = sample_d1(4, &mut GaussianSampler::new(6)).unwrap();
        let r = estimate_distance_to_1junta(&f, 180, 50_000, &GaussianSampler::new(1)).unwrap();
        assert!(r.distance <= 0.02, "{r:?}");
    }

    #[test]
    fn quadrant_function_is_far() {
        let q = crate::oracle::FnFunction::new(2, |x: &[f64]| if x[0] * x[1] >= 0.0 { 1.0 } else { -1.0 });
        let r = estimate_distance_to_1junta(&q, 180, 50_000, &GaussianSampler::new(1)).unwrap();
        assert!(r.distance >= 0.2, "{r:?}");
    }

    #[test]
    fn inner_product_rate() {
        let r = small_inner_product_rate([0.3, -1.0], 0.05, 100_000, &GaussianSampler::new(8));
        assert!(r.rate <= r.bound);
        assert!((r.rate - 2.0 * 0.05f64.asin() / PI).abs() < 0.005);
    }
}
