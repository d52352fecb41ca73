//! Ground-truth test functions, including the striped adversarial families.
//!
//! Every zoo function returns exactly +1 or -1, with sign(0) = +1.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::oracle::Function;
use crate::sampler::GaussianSampler;
use crate::truth::normal_pdf;

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A single halfspace `sign(<u, x> - theta)` with unit normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSpec {
    pub u: Vec<f64>,
    pub theta: f64,
}

impl HalfspaceSpec {
    pub fn new(u: Vec<f64>, theta: f64) -> Result<Self> {
        let mut h = HalfspaceSpec { u, theta };
        h.normalize()?;
        Ok(h)
    }

    fn normalize(&mut self) -> Result<()> {
        let n = norm(&self.u);
        if !(n.is_finite() && n > 0.0) || !self.theta.is_finite() {
            return invalid("halfspace normal must be a finite nonzero vector");
        }
        if (n - 1.0).abs() > 1e-12 {
            for v in self.u.iter_mut() {
                *v /= n;
            }
        }
        Ok(())
    }

    #[inline]
    fn bit(&self, x: &[f64]) -> bool {
        dot(&self.u, x) - self.theta >= 0.0
    }
}

/// Tagged union of the functions used as test subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZooFunction {
    Halfspace {
        u: Vec<f64>,
        theta: f64,
    },
    /// `table[idx]` where bit i of idx is set iff halfspace i is +1.
    HalfspaceCombo {
        halfspaces: Vec<HalfspaceSpec>,
        table: Vec<i8>,
    },
    /// `table[idx]` where bit i of idx is set iff `x[coords[i]] >= 0`.
    SignLiftedJunta {
        dim: usize,
        coords: Vec<usize>,
        table: Vec<i8>,
    },
    /// `inner(rows * x)` with orthonormal rows.
    RotatedJunta {
        inner: Box<ZooFunction>,
        rows: Vec<Vec<f64>>,
    },
    /// D1: `bits[i-1]` on the stripe `a[i-1] < <x, theta> <= a[i]`, +1 off the strip.
    StripedOneJunta {
        theta: [f64; 2],
        breakpoints: Vec<f64>,
        bits: Vec<i8>,
    },
    /// D2: the D1 stripes, each cut by the line `<x, theta_perp> = cut`.
    CutStripedTwoJunta {
        theta: [f64; 2],
        breakpoints: Vec<f64>,
        bits: Vec<i8>,
        cut: f64,
    },
    /// `dim = 0` accepts points of any dimension.
    Constant {
        c: f64,
        #[serde(default)]
        dim: usize,
    },
}

/// Clockwise rotation by 90 degrees.
pub fn perp(theta: [f64; 2]) -> [f64; 2] {
    [theta[1], -theta[0]]
}

/// 1-based stripe index of projection `p`, or `None` off the strip (-1, 1].
#[inline]
pub fn stripe_of(breakpoints: &[f64], p: f64) -> Option<usize> {
    let s = breakpoints.len() - 1;
    if p <= breakpoints[0] || p > breakpoints[s] {
        return None;
    }
    // first index with a_j >= p; a_0 < p so it is at least 1
    Some(breakpoints.partition_point(|&a| a < p))
}

fn check_table(table: &[i8], bits: usize) -> Result<()> {
    if bits >= 24 {
        return invalid("Boolean table supports at most 23 inputs");
    }
    if table.len() != 1usize << bits {
        return invalid(format!(
            "table has {} entries, expected 2^{} = {}",
            table.len(),
            bits,
            1usize << bits
        ));
    }
    if table.iter().any(|&v| v != 1 && v != -1) {
        return invalid("table entries must be +1 or -1");
    }
    Ok(())
}

fn check_stripes(theta: &mut [f64; 2], breakpoints: &[f64], bits: &[i8]) -> Result<()> {
    let n = norm(theta);
    if !(n.is_finite() && n > 0.0) {
        return invalid("stripe direction must be nonzero");
    }
    if (n - 1.0).abs() > 1e-12 {
        theta[0] /= n;
        theta[1] /= n;
    }
    let s = bits.len();
    if s == 0 || breakpoints.len() != s + 1 {
        return invalid("need s >= 1 bits and s + 1 breakpoints");
    }
    if breakpoints[0] != -1.0 || breakpoints[s] != 1.0 {
        return invalid("breakpoints must start at -1 and end at 1");
    }
    if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return invalid("breakpoints must be strictly increasing");
    }
    if bits.iter().any(|&b| b != 1 && b != -1) {
        return invalid("stripe bits must be +1 or -1");
    }
    Ok(())
}

impl ZooFunction {
    /// Normalizes directions and checks structural invariants. Call after
    /// deserializing untrusted descriptions.
    pub fn validate(&mut self) -> Result<()> {
        match self {
            ZooFunction::Halfspace { u, theta } => {
                let mut h = HalfspaceSpec {
                    u: std::mem::take(u),
                    theta: *theta,
                };
                h.normalize()?;
                *u = h.u;
            }
            ZooFunction::HalfspaceCombo { halfspaces, table } => {
                if halfspaces.is_empty() {
                    return invalid("combo needs at least one halfspace");
                }
                let n = halfspaces[0].u.len();
                for h in halfspaces.iter_mut() {
                    if h.u.len() != n {
                        return invalid("combo halfspaces must share a dimension");
                    }
                    h.normalize()?;
                }
                check_table(table, halfspaces.len())?;
            }
            ZooFunction::SignLiftedJunta { dim, coords, table } => {
                if coords.iter().any(|&c| c >= *dim) {
                    return invalid("sign-lifted coordinate out of range");
                }
                let mut sorted = coords.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != coords.len() {
                    return invalid("sign-lifted coordinates must be distinct");
                }
                check_table(table, coords.len())?;
            }
            ZooFunction::RotatedJunta { inner, rows } => {
                inner.validate()?;
                if rows.len() != inner.dim() {
                    return invalid(format!(
                        "rotation has {} rows but inner function has dimension {}",
                        rows.len(),
                        inner.dim()
                    ));
                }
                if rows.is_empty() {
                    return invalid("rotation needs at least one row");
                }
                let n = rows[0].len();
                if rows.iter().any(|r| r.len() != n) || n < rows.len() {
                    return invalid("rotation rows must share a dimension >= their count");
                }
                for i in 0..rows.len() {
                    for j in 0..=i {
                        let want = if i == j { 1.0 } else { 0.0 };
                        if (dot(&rows[i], &rows[j]) - want).abs() > 1e-10 {
                            return invalid("rotation rows must be orthonormal within 1e-10");
                        }
                    }
                }
            }
            ZooFunction::StripedOneJunta {
                theta,
                breakpoints,
                bits,
            } => check_stripes(theta, breakpoints, bits)?,
            ZooFunction::CutStripedTwoJunta {
                theta,
                breakpoints,
                bits,
                cut,
            } => {
                check_stripes(theta, breakpoints, bits)?;
                if !cut.is_finite() {
                    return invalid("cut must be finite");
                }
            }
            ZooFunction::Constant { c, .. } => {
                if *c != 1.0 && *c != -1.0 {
                    return invalid("constant must be +1 or -1");
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut f: ZooFunction = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("zoo functions always serialize")
    }

    /// The smallest subspace the function depends on, as orthonormal rows.
    /// Harness-only ground truth.
    pub fn relevant_rows(&self) -> Vec<Vec<f64>> {
        match self {
            ZooFunction::Halfspace { u, .. } => vec![u.clone()],
            ZooFunction::HalfspaceCombo { halfspaces, .. } => {
                orthonormal_span(halfspaces.iter().map(|h| h.u.clone()).collect())
            }
            ZooFunction::SignLiftedJunta { dim, coords, .. } => coords
                .iter()
                .map(|&c| {
                    let mut e = vec![0.0; *dim];
                    e[c] = 1.0;
                    e
                })
                .collect(),
            ZooFunction::RotatedJunta { inner, rows } => {
                let inner_rows = inner.relevant_rows();
                inner_rows
                    .iter()
                    .map(|r| {
                        let mut v = vec![0.0; rows[0].len()];
                        for (coef, row) in r.iter().zip(rows) {
                            for (vi, ri) in v.iter_mut().zip(row) {
                                *vi += coef * ri;
                            }
                        }
                        v
                    })
                    .collect()
            }
            ZooFunction::StripedOneJunta { theta, .. } => vec![theta.to_vec()],
            ZooFunction::CutStripedTwoJunta { .. } => {
                vec![vec![1.0, 0.0], vec![0.0, 1.0]]
            }
            ZooFunction::Constant { .. } => Vec::new(),
        }
    }

    /// An upper bound on the Gaussian surface area. Harness-only ground truth.
    pub fn surface_area_bound(&self) -> f64 {
        match self {
            ZooFunction::Halfspace { theta, .. } => normal_pdf(*theta),
            ZooFunction::HalfspaceCombo { halfspaces, .. } => {
                halfspaces.iter().map(|h| normal_pdf(h.theta)).sum()
            }
            ZooFunction::SignLiftedJunta { coords, .. } => coords.len() as f64 * normal_pdf(0.0),
            ZooFunction::RotatedJunta { inner, .. } => inner.surface_area_bound(),
            ZooFunction::StripedOneJunta {
                breakpoints, bits, ..
            } => striped_boundary(breakpoints, bits),
            ZooFunction::CutStripedTwoJunta {
                breakpoints, cut, ..
            } => breakpoints.iter().map(|&a| normal_pdf(a)).sum::<f64>() + normal_pdf(*cut),
            ZooFunction::Constant { .. } => 0.0,
        }
    }
}

/// Exact surface area of a D1 function: the lines where the value changes.
fn striped_boundary(breakpoints: &[f64], bits: &[i8]) -> f64 {
    let s = bits.len();
    let mut total = 0.0;
    if bits[0] != 1 {
        total += normal_pdf(breakpoints[0]);
    }
    for i in 1..s {
        if bits[i - 1] != bits[i] {
            total += normal_pdf(breakpoints[i]);
        }
    }
    if bits[s - 1] != 1 {
        total += normal_pdf(breakpoints[s]);
    }
    total
}

fn orthonormal_span(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut v in vectors {
        for _ in 0..2 {
            for b in &basis {
                let d = dot(b, &v);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= d * bi;
                }
            }
        }
        let n = norm(&v);
        if n > 1e-9 {
            basis.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    basis
}

impl Function for ZooFunction {
    fn dim(&self) -> usize {
        match self {
            ZooFunction::Halfspace { u, .. } => u.len(),
            ZooFunction::HalfspaceCombo { halfspaces, .. } => halfspaces[0].u.len(),
            ZooFunction::SignLiftedJunta { dim, .. } => *dim,
            ZooFunction::RotatedJunta { rows, .. } => rows[0].len(),
            ZooFunction::StripedOneJunta { .. } | ZooFunction::CutStripedTwoJunta { .. } => 2,
            ZooFunction::Constant { dim, .. } => *dim,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ZooFunction::Halfspace { u, theta } => sign(dot(u, x) - theta),
            ZooFunction::HalfspaceCombo { halfspaces, table } => {
                let idx = halfspaces
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (i, h)| acc | (usize::from(h.bit(x)) << i));
                f64::from(table[idx])
            }
            ZooFunction::SignLiftedJunta { coords, table, .. } => {
                let idx = coords
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (i, &c)| acc | (usize::from(x[c] >= 0.0) << i));
                f64::from(table[idx])
            }
            ZooFunction::RotatedJunta { inner, rows } => {
                let mut buf = [0.0f64; 16];
                if rows.len() <= buf.len() {
                    for (b, r) in buf.iter_mut().zip(rows) {
                        *b = dot(r, x);
                    }
                    inner.eval(&buf[..rows.len()])
                } else {
                    let z: Vec<f64> = rows.iter().map(|r| dot(r, x)).collect();
                    inner.eval(&z)
                }
            }
            ZooFunction::StripedOneJunta {
                theta,
                breakpoints,
                bits,
            } => {
                let p = theta[0] * x[0] + theta[1] * x[1];
                match stripe_of(breakpoints, p) {
                    Some(i) => f64::from(bits[i - 1]),
                    None => 1.0,
                }
            }
            ZooFunction::CutStripedTwoJunta {
                theta,
                breakpoints,
                bits,
                cut,
            } => {
                let p = theta[0] * x[0] + theta[1] * x[1];
                match stripe_of(breakpoints, p) {
                    Some(i) => {
                        let tp = perp(*theta);
                        f64::from(bits[i - 1]) * sign(tp[0] * x[0] + tp[1] * x[1] - cut)
                    }
                    None => 1.0,
                }
            }
            ZooFunction::Constant { c, .. } => *c,
        }
    }
}

/// `sign(<u/|u|, x> - theta)`.
pub fn make_halfspace(u: Vec<f64>, theta: f64) -> Result<ZooFunction> {
    let h = HalfspaceSpec::new(u, theta)?;
    Ok(ZooFunction::Halfspace {
        u: h.u,
        theta: h.theta,
    })
}

/// Shared randomness of D1 and D2: direction, sorted breakpoints, stripe bits.
#[derive(Clone, Debug, PartialEq)]
pub struct StripeDraw {
    pub theta: [f64; 2],
    pub breakpoints: Vec<f64>,
    pub bits: Vec<i8>,
}

/// Draws the D1 randomness. The order of draws is fixed, so D2 built from
/// the same sampler state reuses exactly this prefix.
pub fn draw_stripes(s: usize, sampler: &mut GaussianSampler) -> Result<StripeDraw> {
    if s == 0 {
        return invalid("s must be at least 1");
    }
    let angle = sampler.uniform(0.0, std::f64::consts::TAU);
    let theta = [angle.cos(), angle.sin()];
    let mut breakpoints = Vec::with_capacity(s + 1);
    breakpoints.push(-1.0);
    for _ in 1..s {
        breakpoints.push(sampler.uniform(-1.0, 1.0));
    }
    breakpoints[1..].sort_unstable_by(f64::total_cmp);
    breakpoints.push(1.0);
    // duplicate uniforms have probability ~0; nudge to keep strict order
    for i in 1..s {
        if breakpoints[i] <= breakpoints[i - 1] {
            breakpoints[i] = f64::from_bits(breakpoints[i - 1].to_bits() + 1).min(1.0);
        }
    }
    let bits = (0..s).map(|_| sampler.sign()).collect();
    Ok(StripeDraw {
        theta,
        breakpoints,
        bits,
    })
}

pub fn sample_d1(s: usize, sampler: &mut GaussianSampler) -> Result<ZooFunction> {
    let d = draw_stripes(s, sampler)?;
    Ok(ZooFunction::StripedOneJunta {
        theta: d.theta,
        breakpoints: d.breakpoints,
        bits: d.bits,
    })
}

pub fn sample_d2(s: usize, sampler: &mut GaussianSampler) -> Result<ZooFunction> {
    let d = draw_stripes(s, sampler)?;
    let cut = sampler.uniform(-1.0, 1.0);
    Ok(ZooFunction::CutStripedTwoJunta {
        theta: d.theta,
        breakpoints: d.breakpoints,
        bits: d.bits,
        cut,
    })
}

/// Sign-lifted parity `prod_i sign(x[coords[i]])` in R^dim.
pub fn sign_lifted_parity(dim: usize, coords: Vec<usize>) -> Result<ZooFunction> {
    let k = coords.len();
    let table = (0..1usize << k)
        .map(|idx| {
            if (k as u32 - idx.count_ones()) % 2 == 0 {
                1
            } else {
                -1
            }
        })
        .collect();
    let mut f = ZooFunction::SignLiftedJunta { dim, coords, table };
    f.validate()?;
    Ok(f)
}

/// AND of halfspaces: +1 iff every halfspace is +1.
pub fn intersection(halfspaces: Vec<HalfspaceSpec>) -> Result<ZooFunction> {
    let k = halfspaces.len();
    let full = (1usize << k) - 1;
    let table = (0..1usize << k)
        .map(|idx| if idx == full { 1 } else { -1 })
        .collect();
    let mut f = ZooFunction::HalfspaceCombo { halfspaces, table };
    f.validate()?;
    Ok(f)
}

/// Intersection of `k` halfspaces with uniformly random normals in R^n.
pub fn random_intersection(
    k: usize,
    n: usize,
    theta: f64,
    sampler: &mut GaussianSampler,
) -> Result<ZooFunction> {
    let hs = (0..k)
        .map(|_| HalfspaceSpec::new(sampler.unit_vector(n), theta))
        .collect::<Result<Vec<_>>>()?;
    intersection(hs)
}

/// Embeds `inner` (on R^k) into R^n along a uniformly random k-frame.
pub fn randomly_rotated(
    inner: ZooFunction,
    n: usize,
    sampler: &mut GaussianSampler,
) -> Result<ZooFunction> {
    let k = inner.dim();
    if k == 0 || k > n {
        return invalid(format!("cannot embed a {k}-dimensional function in R^{n}"));
    }
    let rows = sampler.orthonormal_rows(k, n);
    let mut f = ZooFunction::RotatedJunta {
        inner: Box::new(inner),
        rows,
    };
    f.validate()?;
    Ok(f)
}

/// Zero-padding embedding of `inner` into the first coordinates of R^n.
pub fn zero_padded(inner: ZooFunction, n: usize) -> Result<ZooFunction> {
    if let ZooFunction::Constant { c, .. } = inner {
        return Ok(ZooFunction::Constant { c, dim: n });
    }
    let k = inner.dim();
    if k == 0 || k == n {
        return Ok(inner);
    }
    if k > n {
        return invalid(format!("cannot embed a {k}-dimensional function in R^{n}"));
    }
    let rows = (0..k)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut f = ZooFunction::RotatedJunta {
        inner: Box::new(inner),
        rows,
    };
    f.validate()?;
    Ok(f)
}
