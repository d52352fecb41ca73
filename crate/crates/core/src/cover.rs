//! Finite covers of Lipschitz functions on a Euclidean ball.
//!
//! A cover function is a table of values on a packing of the ball, each an
//! integer multiple of `delta / 100`, evaluated by nearest net point.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    pub ell: usize,
    pub t: f64,
    pub delta: f64,
    /// `C_t = c / sqrt(t)`
    pub c: f64,
    /// natural-log cap on the number of enumerated functions
    pub log_cap: f64,
    /// cap on grid candidates scanned while packing
    pub max_candidates: usize,
}

impl CoverSpec {
    pub fn new(ell: usize, t: f64, delta: f64) -> Self {
        CoverSpec {
            ell,
            t,
            delta,
            c: 1.0,
            log_cap: 1e7f64.ln(),
            max_candidates: 2_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return invalid("cover t must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid("cover delta must lie in (0,1)");
        }
        if !(self.c > 0.0) {
            return invalid("cover constant c must be positive");
        }
        Ok(())
    }

    pub fn c_t(&self) -> f64 {
        self.c / self.t.sqrt()
    }

    /// Lipschitz constant `L = 2 C_t` of the covered class.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.c_t()
    }

    pub fn radius(&self) -> f64 {
        (self.ell as f64).sqrt() * (100.0 / self.delta).ln()
    }

    pub fn unit(&self) -> f64 {
        self.delta / 100.0
    }

    /// Largest level `M`; values range over `{-M, ..., M} * delta / 100`.
    pub fn max_level(&self) -> i64 {
        (100.0 / self.delta + 1e-9).floor() as i64
    }

    /// Packing distance `delta / (2 L)`.
    pub fn separation(&self) -> f64 {
        self.delta / (2.0 * self.lipschitz())
    }

    /// Size bound `(C sqrt(l) log^2(1/delta) / (delta sqrt(t)))^l` on the
    /// natural log of the cover size.
    pub fn log_size_bound(&self, big_c: f64) -> f64 {
        let l = self.ell as f64;
        (big_c * l.sqrt() * (1.0 / self.delta).ln().powi(2) / (self.delta * self.t.sqrt())).powf(l)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Greedy maximal packing of the ball, scanning grid candidates by norm and
/// then lexicographically; accepted points are pairwise at least
/// `separation` apart.
pub fn build_net(spec: &CoverSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let ell = spec.ell;
    if ell == 0 {
        return Ok(vec![Vec::new()]);
    }
    let radius = spec.radius();
    let sep = spec.separation();
    let step = sep / 2.0;
    let half = (radius / step).floor() as i64;
    let per_axis = (2 * half + 1) as f64;
    let total = per_axis.powi(ell as i32);
    if total > spec.max_candidates as f64 {
        return Err(Error::CoverTooLarge {
            log_size: total.ln(),
            log_cap: (spec.max_candidates as f64).ln(),
        });
    }
    let mut cands: Vec<Vec<f64>> = Vec::with_capacity(total as usize);
    let mut idx = vec![-half; ell];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
        if norm(&p) <= radius {
            cands.push(p);
        }
        let mut d = 0;
        loop {
            if d == ell {
                break;
            }
            idx[d] += 1;
            if idx[d] <= half {
                break;
            }
            idx[d] = -half;
            d += 1;
        }
        if d == ell {
            break;
        }
    }
    cands.sort_by(|a, b| {
        norm(a)
            .total_cmp(&norm(b))
            .then_with(|| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut net: Vec<Vec<f64>> = Vec::new();
    for c in cands {
        if net.iter().all(|q| dist(q, &c) >= sep * (1.0 - 1e-12)) {
            net.push(c);
        }
    }
    Ok(net)
}

/// A function on `R^l`: value at the nearest net point, 0 outside the ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverFunction {
    pub ell: usize,
    pub radius: f64,
    pub unit: f64,
    pub lipschitz: f64,
    pub net: Vec<Vec<f64>>,
    /// value at `net[i]` is `levels[i] * unit`
    pub levels: Vec<i64>,
}

impl CoverFunction {
    pub fn values(&self) -> Vec<f64> {
        self.levels.iter().map(|&m| m as f64 * self.unit).collect()
    }

    /// Index of the nearest net point; ties go to the lexicographically
    /// smallest point.
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, p) in self.net.iter().enumerate() {
            let d = dist(p, z);
            let closer = d < bd
                || (d == bd
                    && p.iter()
                        .zip(&self.net[best])
                        .map(|(a, b)| a.total_cmp(b))
                        .find(|o| o.is_ne())
                        == Some(std::cmp::Ordering::Less));
            if closer {
                best = i;
                bd = d;
            }
        }
        best
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        if norm(z) > self.radius {
            return 0.0;
        }
        self.levels[self.nearest(z)] as f64 * self.unit
    }

    /// Every value is an exact integer multiple of `unit` within [-1, 1].
    pub fn check_multiples(&self) -> bool {
        self.values().iter().all(|&v| {
            let m = (v / self.unit).round();
            m * self.unit == v && v.abs() <= 1.0 + 1e-12
        })
    }

    /// `|g(p_i) - g(p_j)| <= 2 L |p_i - p_j|` on all net-point pairs.
    pub fn check_lipschitz(&self) -> bool {
        let v = self.values();
        for i in 0..self.net.len() {
            for j in 0..i {
                if (v[i] - v[j]).abs() > 2.0 * self.lipschitz * dist(&self.net[i], &self.net[j]) + 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    /// The cover element obtained by rounding `h` on the net to the nearest
    /// multiple of `unit` (clamped to [-1, 1]).
    pub fn round_from(spec: &CoverSpec, net: Vec<Vec<f64>>, h: impl Fn(&[f64]) -> f64) -> CoverFunction {
        let unit = spec.unit();
        let m = spec.max_level();
        let levels = net
            .iter()
            .map(|p| ((h(p) / unit).round() as i64).clamp(-m, m))
            .collect();
        CoverFunction {
            ell: spec.ell,
            radius: spec.radius(),
            unit,
            lipschitz: spec.lipschitz(),
            net,
            levels,
        }
    }
}

/// Lazily enumerated cover: all level tables on the net that are
/// 2L-Lipschitz across every pair of net points.
#[derive(Clone, Debug)]
pub struct Cover {
    pub spec: CoverSpec,
    pub net: Vec<Vec<f64>>,
    /// `max_gap[i][j]`: largest level gap between net points i and j (j < i)
    max_gap: Vec<Vec<i64>>,
    pub log_size_estimate: f64,
}

/// Builds the net and checks the enumeration size against the cap.
pub fn build_cover(spec: &CoverSpec) -> Result<Cover> {
    let net = build_net(spec)?;
    let m = spec.max_level();
    let unit = spec.unit();
    let lip = spec.lipschitz();
    let max_gap: Vec<Vec<i64>> = (0..net.len())
        .map(|i| {
            (0..i)
                .map(|j| {
                    let g = 2.0 * lip * dist(&net[i], &net[j]) / unit;
                    // exact multiples of unit: allow rounding noise in the division
                    (g + 1e-9).floor().min((2 * m) as f64) as i64
                })
                .collect()
        })
        .collect();
    let levels = (2 * m + 1) as f64;
    let mut log_size = levels.ln();
    for row in max_gap.iter().skip(1) {
        let g = row.iter().copied().min().unwrap_or(2 * m);
        log_size += ((2 * g + 1) as f64).min(levels).ln();
    }
    if log_size > spec.log_cap {
        return Err(Error::CoverTooLarge {
            log_size,
            log_cap: spec.log_cap,
        });
    }
    Ok(Cover {
        spec: spec.clone(),
        net,
        max_gap,
        log_size_estimate: log_size,
    })
}

impl Cover {
    pub fn iter(&self) -> CoverIter<'_> {
        let m = self.spec.max_level();
        CoverIter {
            cover: self,
            levels: Vec::with_capacity(self.net.len()),
            next_level: vec![-m; self.net.len()],
            done: self.net.is_empty(),
        }
    }

    fn bounds(&self, levels: &[i64]) -> (i64, i64) {
        let m = self.spec.max_level();
        let i = levels.len();
        let (mut lo, mut hi) = (-m, m);
        for (j, &lj) in levels.iter().enumerate() {
            let g = self.max_gap[i][j];
            lo = lo.max(lj - g);
            hi = hi.min(lj + g);
        }
        (lo, hi)
    }

    fn function(&self, levels: Vec<i64>) -> CoverFunction {
        CoverFunction {
            ell: self.spec.ell,
            radius: self.spec.radius(),
            unit: self.spec.unit(),
            lipschitz: self.spec.lipschitz(),
            net: self.net.clone(),
            levels,
        }
    }
}

/// Depth-first enumeration in lexicographic order of level tables.
pub struct CoverIter<'a> {
    cover: &'a Cover,
    levels: Vec<i64>,
    /// next level to try at each depth
    next_level: Vec<i64>,
    done: bool,
}

impl Iterator for CoverIter<'_> {
    type Item = CoverFunction;

    fn next(&mut self) -> Option<CoverFunction> {
        let depth = self.cover.net.len();
        while !self.done {
            let d = self.levels.len();
            let (lo, hi) = self.cover.bounds(&self.levels);
            let cand = self.next_level[d].max(lo);
            if cand > hi {
                // exhausted this depth: backtrack
                self.next_level[d] = -self.cover.spec.max_level();
                match self.levels.pop() {
                    Some(prev) => self.next_level[d - 1] = prev + 1,
                    None => self.done = true,
                }
                continue;
            }
            self.levels.push(cand);
            if d + 1 == depth {
                let out = self.cover.function(self.levels.clone());
                let last = self.levels.pop().expect("pushed above");
                self.next_level[d] = last + 1;
                return Some(out);
            }
        }
        None
    }
}
