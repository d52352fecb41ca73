//! Hypotheses `g: R^l -> [-1, 1]` scored by the learner, restricted
//! families of them, and class checkers run on a learned `g`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cover::CoverFunction;
use crate::error::{Error, Result};
use crate::sampler::GaussianSampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hypothesis {
    Constant {
        value: f64,
    },
    /// `sign(orientation * z_0 - theta)`, with `z_0 = 0` when `l = 0`
    Threshold {
        theta: f64,
        orientation: i8,
    },
    Cover(CoverFunction),
}

impl Hypothesis {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Hypothesis::Constant { value } => *value,
            Hypothesis::Threshold { theta, orientation } => {
                let z0 = z.first().copied().unwrap_or(0.0);
                if f64::from(*orientation) * z0 - theta >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Hypothesis::Cover(g) => g.eval(z),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Hypothesis::Constant { value } => format!("constant {value}"),
            Hypothesis::Threshold { theta, orientation } => {
                let s = if *orientation > 0 { "" } else { "-" };
                format!("sign({s}z0 - {theta:.4})")
            }
            Hypothesis::Cover(g) => format!("cover function on {} net points", g.net.len()),
        }
    }
}

/// Which hypotheses the learner scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", content = "size", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `n` offsets evenly spaced on [-3, 3], both orientations
    Thresholds(usize),
    /// `n` constants evenly spaced on [-1, 1]
    Constants(usize),
    /// full enumeration of the Lipschitz cover
    Cover,
}

impl FromStr for FamilySpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad hypothesis family {s:?}; expected thresholds:N, constants:N or cover"));
        if s == "cover" {
            return Ok(FamilySpec::Cover);
        }
        let (name, size) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = size.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match name {
            "thresholds" => Ok(FamilySpec::Thresholds(n)),
            "constants" => Ok(FamilySpec::Constants(n)),
            _ => Err(bad()),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn threshold_family(n: usize) -> Vec<Hypothesis> {
    let mut out = Vec::with_capacity(2 * n);
    for orientation in [1i8, -1] {
        for theta in linspace(-3.0, 3.0, n) {
            out.push(Hypothesis::Threshold { theta, orientation });
        }
    }
    out
}

pub fn constant_family(n: usize) -> Vec<Hypothesis> {
    linspace(-1.0, 1.0, n)
        .into_iter()
        .map(|value| Hypothesis::Constant { value })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    pub checker: String,
    pub accept: bool,
    /// estimated distance from `g` to the class
    pub distance: f64,
    pub witness: String,
}

/// Decides whether an explicit `g` on `R^l`, extended trivially to `R^k`,
/// is epsilon-close to a class. Must not query the function under test.
pub trait ClassChecker {
    fn name(&self) -> &str;
    fn check(&self, g: &Hypothesis, ell: usize, k: usize, epsilon: f64) -> Result<ClassCheck>;
}

/// The class of halfspaces `sign(<a, z> - theta)` with unit `a`, closed
/// under linear invariance. Distance is `E|g - h|` estimated on a fixed
/// Gaussian sample, minimized over a grid of directions and all thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClassChecker {
    pub samples: usize,
    pub seed: u64,
    /// random directions tried when `k > 2`
    pub directions: usize,
}

impl Default for ThresholdClassChecker {
    fn default() -> Self {
        ThresholdClassChecker {
            samples: 20_000,
            seed: 0x7E57,
            directions: 500,
        }
    }
}

impl ThresholdClassChecker {
    fn direction_grid(&self, k: usize, s: &mut GaussianSampler) -> Vec<Vec<f64>> {
        match k {
            0 => vec![Vec::new()],
            1 => vec![vec![1.0], vec![-1.0]],
            2 => (0..360)
                .map(|i| {
                    let a = i as f64 * std::f64::consts::PI / 180.0;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            _ => {
                let mut dirs = Vec::new();
                for i in 0..k {
                    for sgn in [1.0, -1.0] {
                        let mut e = vec![0.0; k];
                        e[i] = sgn;
                        dirs.push(e);
                    }
                }
                dirs.extend((0..self.directions).map(|_| s.unit_vector(k)));
                dirs
            }
        }
    }
}

/// `min over theta of mean |g_i - sign(p_i - theta)|`, thresholds at +-inf included.
fn best_threshold(p: &[f64], g: &[f64]) -> (f64, f64) {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    // theta just above the first i sorted points: those get -1, the rest +1
    let plus: f64 = g.iter().map(|v| (v - 1.0).abs()).sum();
    let mut cost = plus;
    let mut best = (cost, f64::NEG_INFINITY);
    for (i, &j) in order.iter().enumerate() {
        cost += (g[j] + 1.0).abs() - (g[j] - 1.0).abs();
        let next = order.get(i + 1).map_or(f64::INFINITY, |&n| p[n]);
        if cost < best.0 && next > p[j] {
            let theta = if next.is_finite() { 0.5 * (p[j] + next) } else { f64::INFINITY };
            best = (cost, theta);
        }
    }
    (best.0 / m as f64, best.1)
}

impl ClassChecker for ThresholdClassChecker {
    fn name(&self) -> &str {
        "thresholds"
    }

    fn check(&self, g: &Hypothesis, ell: usize, k: usize, epsilon: f64) -> Result<ClassCheck> {
        if ell > k {
            return Err(Error::InvalidArgument(format!("l = {ell} exceeds k = {k}")));
        }
        let mut s = GaussianSampler::new(self.seed);
        let zs: Vec<Vec<f64>> = (0..self.samples).map(|_| s.normal_vec(k)).collect();
        let gv: Vec<f64> = zs.iter().map(|z| g.eval(&z[..ell])).collect();
        let mut best = (f64::INFINITY, String::new());
        for a in self.direction_grid(k, &mut s) {
            let p: Vec<f64> = zs.iter().map(|z| z.iter().zip(&a).map(|(x, y)| x * y).sum()).collect();
            let (d, theta) = best_threshold(&p, &gv);
            if d < best.0 {
                best = (d, format!("a = {a:?}, theta = {theta}"));
            }
        }
        Ok(ClassCheck {
            checker: self.name().to_string(),
            accept: best.0 <= epsilon,
            distance: best.0,
            witness: best.1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_parsing_and_sizes() {
        assert_eq!("thresholds:200".parse::<FamilySpec>().unwrap(), FamilySpec::Thresholds(200));
        assert_eq!("cover".parse::<FamilySpec>().unwrap(), FamilySpec::Cover);
        assert!("thresholds:".parse::<FamilySpec>().is_err());
        assert!("spheres:3".parse::<FamilySpec>().is_err());
        assert_eq!(threshold_family(200).len(), 400);
        let c = constant_family(3);
        assert_eq!(c[0].eval(&[]), -1.0);
        assert_eq!(c[1].eval(&[]), 0.0);
    }

    #[test]
    fn threshold_eval() {
        let h = Hypothesis::Threshold { theta: 0.5, orientation: -1 };
        assert_eq!(h.eval(&[0.0]), -1.0);
        assert_eq!(h.eval(&[-0.5]), 1.0);
        assert_eq!(h.eval(&[]), -1.0);
    }

    #[test]
    fn checker_accepts_members_and_rejects_far_functions() {
        let chk = ThresholdClassChecker::default();
        let member = Hypothesis::Threshold { theta: 0.3, orientation: 1 };
        let r = chk.check(&member, 1, 2, 0.05).unwrap();
        assert!(r.accept, "{r:?}");
        assert!(r.distance < 0.02);
        // a constant is a limit of thresholds
        let r = chk.check(&Hypothesis::Constant { value: 1.0 }, 0, 1, 0.05).unwrap();
        assert_eq!(r.distance, 0.0);
        // zero is at distance 1 from every +-1 function
        let r = chk.check(&Hypothesis::Constant { value: 0.0 }, 0, 2, 0.5).unwrap();
        assert!(!r.accept);
        assert!((r.distance - 1.0).abs() < 1e-12);
        assert!(chk.check(&member, 3, 2, 0.1).is_err());
    }
}
