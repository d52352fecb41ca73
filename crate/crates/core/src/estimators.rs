//! Monte-Carlo estimators for Ornstein-Uhlenbeck and Hermite quantities.
//!
//! Every estimator is a median of block means of an unbiased (or, for the
//! gradient inner product, controlled-bias) single-sample kernel. All query
//! points are standard Gaussian marginally when the anchor points are.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::oracle::Oracle;
use crate::sampler::GaussianSampler;
use crate::truth::noise_weight;

/// Sample sizing for a median-of-means estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub batch: usize,
    pub blocks: usize,
}

impl EstimatorConfig {
    /// Hoeffding sizing for a kernel taking values in an interval of width
    /// `range`: each block fails with probability at most 2e^{-4} < 1/8, and
    /// the median of `2 ceil(18 ln(1/delta)) + 1` blocks fails with
    /// probability at most delta.
    pub fn hoeffding(epsilon: f64, delta: f64, range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return invalid(format!("value range must be positive, got {range}"));
        }
        Self::check(epsilon, delta)?;
        let blocks = 2 * (18.0 * (1.0 / delta).ln()).ceil() as usize + 1;
        let batch = (2.0 * range * range / (epsilon * epsilon)).ceil();
        if batch > 1e15 {
            return invalid(format!("batch size {batch:e} is not representable"));
        }
        Ok(EstimatorConfig {
            epsilon,
            delta,
            batch: batch as usize,
            blocks,
        })
    }

    /// Explicit sizing; `epsilon` and `delta` are carried for the record only.
    pub fn fixed(epsilon: f64, delta: f64, batch: usize, blocks: usize) -> Result<Self> {
        Self::check(epsilon, delta)?;
        let cfg = EstimatorConfig {
            epsilon,
            delta,
            batch,
            blocks,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A single plain average of `samples` draws.
    pub fn plain(samples: usize) -> Self {
        EstimatorConfig {
            epsilon: 1.0,
            delta: 0.5,
            batch: samples.max(1),
            blocks: 1,
        }
    }

    fn check(epsilon: f64, delta: f64) -> Result<()> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("delta must lie in (0,1), got {delta}"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Self::check(self.epsilon, self.delta)?;
        if self.batch == 0 {
            return invalid("batch must be at least 1");
        }
        if self.blocks % 2 == 0 {
            return invalid(format!("blocks must be odd, got {}", self.blocks));
        }
        Ok(())
    }

    pub fn samples(&self) -> u64 {
        self.batch as u64 * self.blocks as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub value: f64,
    /// plain mean over all samples, next to the median-of-means `value`
    pub mean: f64,
    /// standard error of `mean`
    pub std_error: f64,
    pub samples_used: u64,
    pub queries: u64,
    pub config: EstimatorConfig,
}

/// How the inner noise of the gradient inner-product estimator is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InnerNoise {
    /// `e^{-t'} = epsilon (e^{2t} - 1) / 2`, so the bias is below epsilon.
    FromAccuracy,
    /// Explicit correlation `rho = e^{-t'}` in (0, 1).
    Correlation { rho: f64 },
}

impl InnerNoise {
    pub fn rho(&self, t: f64, epsilon: f64) -> Result<f64> {
        let rho = match *self {
            InnerNoise::FromAccuracy => epsilon * (2.0 * t).exp_m1() / 2.0,
            InnerNoise::Correlation { rho } => rho,
        };
        if !(rho > 0.0 && rho < 1.0) {
            return invalid(format!("inner correlation must lie in (0,1), got {rho}"));
        }
        Ok(rho)
    }
}

/// A quantity with an unbiased single-sample kernel.
#[derive(Clone, Debug)]
pub enum Target<'a> {
    /// `E f`
    Mean,
    /// `P_t f(x)`
    Pt { t: f64, x: &'a [f64] },
    /// `(P_s f(x) - E f) / eta` with `e^{-s} = eta`
    Degree1 { eta: f64, x: &'a [f64] },
    /// `<W_1 f_{t,y1}, W_1 f_{t,y2}> / (e^{2t} - 1)` up to an O(rho^2) bias
    GradInner {
        t: f64,
        y1: &'a [f64],
        y2: &'a [f64],
        rho: f64,
    },
    /// degree-1 evaluation of `f_{t,y}` at `x` with parameter `xi`, over `sqrt(e^{2t}-1)`
    Directional {
        t: f64,
        y: &'a [f64],
        x: &'a [f64],
        xi: f64,
    },
    /// `Pr[f(z) != f(e^{-t} z + sqrt(1-e^{-2t}) z')]`
    NoiseSensitivity { t: f64 },
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return invalid(format!("t must be positive and finite, got {t}"));
    }
    Ok(())
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return invalid(format!("{name} must lie in (0,1), got {v}"));
    }
    Ok(())
}

fn check_point(name: &str, p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return invalid(format!("{name} has length {}, expected {n}", p.len()));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{name} has non-finite coordinates"));
    }
    Ok(())
}

impl Target<'_> {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            Target::Mean => Ok(()),
            Target::Pt { t, x } => {
                check_t(t)?;
                check_point("x", x, n)
            }
            Target::Degree1 { eta, x } => {
                check_unit_open("eta", eta)?;
                check_point("x", x, n)
            }
            Target::GradInner { t, y1, y2, rho } => {
                check_t(t)?;
                check_unit_open("rho", rho)?;
                check_point("y1", y1, n)?;
                check_point("y2", y2, n)
            }
            Target::Directional { t, y, x, xi } => {
                check_t(t)?;
                check_unit_open("xi", xi)?;
                check_point("y", y, n)?;
                check_point("x", x, n)
            }
            Target::NoiseSensitivity { t } => check_t(t),
        }
    }

    /// Width of the interval the kernel takes values in.
    pub fn range(&self) -> f64 {
        match *self {
            Target::Mean | Target::Pt { .. } => 2.0,
            Target::Degree1 { eta, .. } => 4.0 / eta,
            Target::GradInner { t, rho, .. } => 8.0 / (rho * rho * (2.0 * t).exp_m1()),
            Target::Directional { t, xi, .. } => 4.0 / (xi * (2.0 * t).exp_m1().sqrt()),
            Target::NoiseSensitivity { .. } => 1.0,
        }
    }

    pub fn queries_per_sample(&self) -> u64 {
        match self {
            Target::Mean | Target::Pt { .. } => 1,
            Target::Degree1 { .. } | Target::Directional { .. } | Target::NoiseSensitivity { .. } => 2,
            Target::GradInner { .. } => 4,
        }
    }
}

/// Precomputed constants and buffers for drawing kernel samples.
struct Kernel<'a> {
    target: Target<'a>,
    n: usize,
    a: f64,
    b: f64,
    c: f64,
    scale: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Greater => return true,
            std::cmp::Ordering::Less => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

impl<'a> Kernel<'a> {
    fn new(target: Target<'a>, n: usize) -> Self {
        let (mut a, mut b, mut c, mut scale) = (0.0, 0.0, 0.0, 1.0);
        let target = match target {
            Target::Pt { t, .. } | Target::NoiseSensitivity { t } => {
                a = (-t).exp();
                b = noise_weight(t);
                target
            }
            Target::Degree1 { eta, .. } => {
                a = eta;
                b = (1.0 - eta * eta).sqrt();
                scale = 1.0 / eta;
                target
            }
            Target::GradInner { t, y1, y2, rho } => {
                a = (-t).exp();
                b = noise_weight(t);
                c = (1.0 - rho * rho).sqrt();
                scale = 1.0 / (rho * rho * (2.0 * t).exp_m1());
                // canonical order makes the estimate symmetric in (y1, y2)
                if lex_greater(y1, y2) {
                    Target::GradInner {
                        t,
                        y1: y2,
                        y2: y1,
                        rho,
                    }
                } else {
                    target
                }
            }
            Target::Directional { t, xi, .. } => {
                a = (-t).exp();
                b = noise_weight(t);
                c = (1.0 - xi * xi).sqrt();
                scale = 1.0 / (xi * (2.0 * t).exp_m1().sqrt());
                target
            }
            Target::Mean => target,
        };
        Kernel {
            target,
            n,
            a,
            b,
            c,
            scale,
            u: vec![0.0; n],
            v: vec![0.0; n],
            w: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    #[inline]
    fn draw(&mut self, f: &Oracle, s: &mut GaussianSampler) -> Result<f64> {
        let (a, b, c) = (self.a, self.b, self.c);
        match self.target {
            Target::Mean => {
                s.fill_normal(&mut self.u);
                f.query(&self.u)
            }
            Target::Pt { x, .. } => {
                s.fill_normal(&mut self.u);
                for i in 0..self.n {
                    self.p[i] = a * x[i] + b * self.u[i];
                }
                f.query(&self.p)
            }
            Target::Degree1 { x, .. } => {
                s.fill_normal(&mut self.u);
                for i in 0..self.n {
                    self.p[i] = a * x[i] + b * self.u[i];
                }
                Ok((f.query(&self.p)? - f.query(&self.u)?) * self.scale)
            }
            Target::NoiseSensitivity { .. } => {
                s.fill_normal(&mut self.u);
                s.fill_normal(&mut self.v);
                for i in 0..self.n {
                    self.p[i] = a * self.u[i] + b * self.v[i];
                }
                Ok(if f.query(&self.u)? != f.query(&self.p)? {
                    1.0
                } else {
                    0.0
                })
            }
            Target::GradInner { y1, y2, rho, .. } => {
                // x -> u, y -> v, z -> w; f_{t,y}(w) = f(a y + b w)
                s.fill_normal(&mut self.u);
                s.fill_normal(&mut self.v);
                s.fill_normal(&mut self.w);
                for i in 0..self.n {
                    self.p[i] = a * y1[i] + b * (rho * self.u[i] + c * self.v[i]);
                    self.q[i] = a * y1[i] + b * self.v[i];
                }
                let d1 = f.query(&self.p)? - f.query(&self.q)?;
                for i in 0..self.n {
                    self.p[i] = a * y2[i] + b * (rho * self.u[i] + c * self.w[i]);
                    self.q[i] = a * y2[i] + b * self.w[i];
                }
                let d2 = f.query(&self.p)? - f.query(&self.q)?;
                Ok(d1 * d2 * self.scale)
            }
            Target::Directional { y, x, xi, .. } => {
                s.fill_normal(&mut self.u);
                for i in 0..self.n {
                    self.p[i] = a * y[i] + b * (xi * x[i] + c * self.u[i]);
                    self.q[i] = a * y[i] + b * self.u[i];
                }
                Ok((f.query(&self.p)? - f.query(&self.q)?) * self.scale)
            }
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Median-of-means estimate of `target`.
pub fn estimate(
    f: &Oracle,
    target: Target<'_>,
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    cfg.validate()?;
    let n = f.dim();
    target.validate(n)?;
    let qps = target.queries_per_sample();
    let mut kernel = Kernel::new(target, n);
    let mut block_means = Vec::with_capacity(cfg.blocks);
    let (mut total, mut total_sq) = (0.0, 0.0);
    for _ in 0..cfg.blocks {
        let mut sum = 0.0;
        for _ in 0..cfg.batch {
            let v = kernel.draw(f, sampler)?;
            sum += v;
            total_sq += v * v;
        }
        total += sum;
        block_means.push(sum / cfg.batch as f64);
    }
    let samples = cfg.samples();
    let mean = total / samples as f64;
    let var = if samples > 1 {
        ((total_sq - total * mean) / (samples - 1) as f64).max(0.0)
    } else {
        0.0
    };
    Ok(ScalarEstimate {
        value: median(block_means),
        mean,
        std_error: (var / samples as f64).sqrt(),
        samples_used: samples,
        queries: samples * qps,
        config: *cfg,
    })
}

pub fn estimate_mean(
    f: &Oracle,
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    estimate(f, Target::Mean, cfg, sampler)
}

pub fn estimate_pt(
    f: &Oracle,
    t: f64,
    x: &[f64],
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    estimate(f, Target::Pt { t, x }, cfg, sampler)
}

pub fn estimate_degree1_eval(
    f: &Oracle,
    eta: f64,
    x: &[f64],
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    estimate(f, Target::Degree1 { eta, x }, cfg, sampler)
}

pub fn estimate_grad_inner(
    f: &Oracle,
    t: f64,
    y1: &[f64],
    y2: &[f64],
    inner: InnerNoise,
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    check_t(t)?;
    let rho = inner.rho(t, cfg.epsilon)?;
    estimate(f, Target::GradInner { t, y1, y2, rho }, cfg, sampler)
}

pub fn estimate_directional_eval(
    f: &Oracle,
    t: f64,
    y: &[f64],
    x: &[f64],
    xi: f64,
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    estimate(f, Target::Directional { t, y, x, xi }, cfg, sampler)
}

pub fn estimate_noise_sensitivity(
    f: &Oracle,
    t: f64,
    cfg: &EstimatorConfig,
    sampler: &mut GaussianSampler,
) -> Result<ScalarEstimate> {
    estimate(f, Target::NoiseSensitivity { t }, cfg, sampler)
}

/// Raw kernel samples, for debugging estimator behaviour.
pub fn trace_samples(
    f: &Oracle,
    target: Target<'_>,
    count: usize,
    sampler: &mut GaussianSampler,
) -> Result<Vec<f64>> {
    target.validate(f.dim())?;
    let mut kernel = Kernel::new(target, f.dim());
    (0..count).map(|_| kernel.draw(f, sampler)).collect()
}

/// Writes `sample,value` rows with a header.
pub fn write_trace_csv<W: Write>(values: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "sample,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth::*;
    use crate::zoo::{make_halfspace, ZooFunction};

    fn e1(n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    }

    #[test]
    fn hoeffding_sizing_constants() {
        let cfg = EstimatorConfig::hoeffding(0.1, 0.01, 2.0).unwrap();
        assert_eq!(cfg.blocks, 2 * 83 + 1);
        assert_eq!(cfg.batch, 800);
        assert!(EstimatorConfig::hoeffding(0.0, 0.1, 2.0).is_err());
        assert!(EstimatorConfig::hoeffding(0.1, 1.0, 2.0).is_err());
        assert!(EstimatorConfig::fixed(0.1, 0.1, 10, 4).is_err());
    }

    #[test]
    fn constant_function_is_exact() {
        let f = Oracle::new(ZooFunction::Constant { c: 1.0, dim: 4 });
        let mut s = GaussianSampler::new(0);
        let cfg = EstimatorConfig::plain(100);
        assert_eq!(estimate_mean(&f, &cfg, &mut s).unwrap().value, 1.0);
        let x = [0.3; 4];
        assert_eq!(estimate_degree1_eval(&f, 0.2, &x, &cfg, &mut s).unwrap().value, 0.0);
        let g = estimate_grad_inner(&f, 0.5, &x, &x, InnerNoise::Correlation { rho: 0.3 }, &cfg, &mut s);
        assert_eq!(g.unwrap().value, 0.0);
        assert_eq!(estimate_noise_sensitivity(&f, 0.1, &cfg, &mut s).unwrap().value, 0.0);
        let m = Oracle::new(ZooFunction::Constant { c: -1.0, dim: 4 });
        assert_eq!(estimate_pt(&m, 0.5, &x, &cfg, &mut s).unwrap().value, -1.0);
    }

    #[test]
    fn ledger_counts_every_query() {
        let f = Oracle::new(make_halfspace(e1(3), 0.0).unwrap());
        let mut s = GaussianSampler::new(1);
        let cfg = EstimatorConfig::fixed(0.1, 0.1, 7, 3).unwrap();
        let y = [0.1, 0.2, 0.3];
        let e = estimate_grad_inner(&f, 0.4, &y, &y, InnerNoise::Correlation { rho: 0.5 }, &cfg, &mut s)
            .unwrap();
        assert_eq!(e.queries, 84);
        assert_eq!(f.ledger().total(), 84);
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let f = Oracle::new(make_halfspace(e1(2), 0.0).unwrap());
        let mut s = GaussianSampler::new(1);
        let cfg = EstimatorConfig::plain(10);
        let x = [0.0, 0.0];
        assert!(estimate_pt(&f, 0.0, &x, &cfg, &mut s).is_err());
        assert!(estimate_degree1_eval(&f, 1.0, &x, &cfg, &mut s).is_err());
        assert!(estimate_pt(&f, 0.5, &[0.0], &cfg, &mut s).is_err());
        // the paper choice of inner noise needs epsilon (e^{2t}-1) / 2 < 1
        let big = EstimatorConfig::fixed(1.0, 0.1, 10, 1).unwrap();
        assert!(estimate_grad_inner(&f, 2.0, &x, &x, InnerNoise::FromAccuracy, &big, &mut s).is_err());
        assert_eq!(f.ledger().total(), 0);
    }

    #[test]
    fn grad_inner_is_exactly_symmetric() {
        let f = Oracle::new(make_halfspace(vec![0.6, 0.8, 0.0], 0.1).unwrap());
        let cfg = EstimatorConfig::fixed(0.1, 0.1, 2000, 3).unwrap();
        let (y1, y2) = ([0.5, -0.2, 1.0], [-0.3, 0.9, 0.0]);
        let inner = InnerNoise::Correlation { rho: 0.4 };
        let a = estimate_grad_inner(&f, 0.5, &y1, &y2, inner, &cfg, &mut GaussianSampler::new(5)).unwrap();
        let b = estimate_grad_inner(&f, 0.5, &y2, &y1, inner, &cfg, &mut GaussianSampler::new(5)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn pt_and_ns_match_closed_forms() {
        let f = Oracle::new(make_halfspace(e1(4), 0.0).unwrap());
        let mut s = GaussianSampler::new(2);
        let cfg = EstimatorConfig::hoeffding(0.02, 0.001, 2.0).unwrap();
        let y = [1.0, 0.5, -0.5, 2.0];
        let pt = estimate_pt(&f, 0.5, &y, &cfg, &mut s).unwrap();
        assert!((pt.value - halfspace_pt(0.5, 1.0, 0.0)).abs() < 0.02);
        let ns_cfg = EstimatorConfig::hoeffding(0.01, 0.001, 1.0).unwrap();
        let ns = estimate_noise_sensitivity(&f, 0.1, &ns_cfg, &mut s).unwrap();
        assert!((ns.value - halfspace_noise_sensitivity(0.1)).abs() < 0.01);
        // total smoothing: P_t f is E f
        let far = estimate_pt(&f, 30.0, &y, &EstimatorConfig::plain(40_000), &mut s).unwrap();
        assert!(far.value.abs() < 0.02);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let f = Oracle::new(make_halfspace(e1(2), 0.0).unwrap());
        let v = trace_samples(&f, Target::Mean, 3, &mut GaussianSampler::new(0)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&v, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("sample,value\n0,"));
    }
}
