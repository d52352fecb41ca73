//! Closed-form ground truth for halfspaces and their orthogonal combinations.
//!
//! Used by tests and the estimator bench; algorithms never read these.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

use crate::zoo::ZooFunction;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `sqrt(1 - e^{-2t})`, the fresh-noise weight of `P_t`.
pub fn noise_weight(t: f64) -> f64 {
    (-(-2.0 * t).exp_m1()).sqrt()
}

/// `E[sign(<u,x> - theta)]` under the standard Gaussian.
pub fn halfspace_mean(theta: f64) -> f64 {
    1.0 - 2.0 * normal_cdf(theta)
}

/// Standardized margin of `e^{-t} p + sqrt(1-e^{-2t}) Z` against `theta`.
fn margin(t: f64, p: f64, theta: f64) -> f64 {
    ((-t).exp() * p - theta) / noise_weight(t)
}

/// `P_t f(y)` for `f = sign(<u,.> - theta)` with `p = <u, y>`.
pub fn halfspace_pt(t: f64, p: f64, theta: f64) -> f64 {
    2.0 * normal_cdf(margin(t, p, theta)) - 1.0
}

/// Scalar `c` with `D P_t f(y) = c u` for the halfspace above.
pub fn halfspace_grad_coeff(t: f64, p: f64, theta: f64) -> f64 {
    2.0 * (-t).exp() * normal_pdf(margin(t, p, theta)) / noise_weight(t)
}

/// Degree-1 Hermite coefficient `E[f(x) <u,x>]` of the halfspace.
pub fn halfspace_w1(theta: f64) -> f64 {
    2.0 * normal_pdf(theta)
}

/// `Pr[f(x) != f(e^{-t}x + sqrt(1-e^{-2t})y)]` for a halfspace through the origin.
pub fn halfspace_noise_sensitivity(t: f64) -> f64 {
    (-t).exp().acos() / PI
}

/// `Pr[X > h, Y > k]` for standard normals with correlation `r`, via
/// Plackett's identity integrated in `s = sin(phi)` (smooth up to `|r| = 1`).
pub fn bivariate_upper(h: f64, k: f64, r: f64) -> f64 {
    let end = r.clamp(-1.0, 1.0).asin();
    let m = 2000;
    let step = end / m as f64;
    let g = |phi: f64| {
        let (sn, cs) = phi.sin_cos();
        // h^2 - 2 sn h k + k^2 = (h-k)^2 + 2 h k cs^2 / (1 + sn), stable as cs -> 0
        let d = h - k;
        let lead = if d == 0.0 { 0.0 } else { d * d / (2.0 * cs * cs) };
        (-lead - h * k / (1.0 + sn)).exp() / (2.0 * PI)
    };
    let mut acc = g(0.0) + g(end);
    for i in 1..m {
        acc += g(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    normal_cdf(-h) * normal_cdf(-k) + acc * step / 3.0
}

/// Noise sensitivity of `sign(<u,x> - theta)` at time t.
pub fn halfspace_noise_sensitivity_at(t: f64, theta: f64) -> f64 {
    let p = normal_cdf(-theta);
    (2.0 * (p - bivariate_upper(theta, theta, (-t).exp()))).max(0.0)
}

/// Ledoux upper bound on noise sensitivity: `2 sqrt(t) / sqrt(pi) * surface`.
pub fn ledoux_bound(t: f64, surface: f64) -> f64 {
    2.0 * t.sqrt() / PI.sqrt() * surface
}

/// A Boolean table over halfspaces with pairwise orthonormal normals; the
/// coordinates `<u_i, x>` are then independent, giving product formulas.
#[derive(Clone, Debug)]
pub struct OrthoCombo {
    pub normals: Vec<Vec<f64>>,
    pub thetas: Vec<f64>,
    /// bit i of the index is set iff halfspace i is +1
    pub table: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl OrthoCombo {
    /// Recognizes zoo functions with orthonormal halfspace structure.
    pub fn from_zoo(f: &ZooFunction) -> Option<OrthoCombo> {
        let combo = match f {
            ZooFunction::Halfspace { u, theta } => OrthoCombo {
                normals: vec![u.clone()],
                thetas: vec![*theta],
                table: vec![-1.0, 1.0],
            },
            ZooFunction::HalfspaceCombo { halfspaces, table } => OrthoCombo {
                normals: halfspaces.iter().map(|h| h.u.clone()).collect(),
                thetas: halfspaces.iter().map(|h| h.theta).collect(),
                table: table.iter().map(|&v| f64::from(v)).collect(),
            },
            ZooFunction::SignLiftedJunta { dim, coords, table } => OrthoCombo {
                normals: coords
                    .iter()
                    .map(|&c| {
                        let mut e = vec![0.0; *dim];
                        e[c] = 1.0;
                        e
                    })
                    .collect(),
                thetas: vec![0.0; coords.len()],
                table: table.iter().map(|&v| f64::from(v)).collect(),
            },
            ZooFunction::RotatedJunta { inner, rows } => {
                let inner = OrthoCombo::from_zoo(inner)?;
                // u_i in R^k maps to rows^T u_i in R^n
                let n = rows[0].len();
                let normals = inner
                    .normals
                    .iter()
                    .map(|u| {
                        let mut v = vec![0.0; n];
                        for (coef, row) in u.iter().zip(rows) {
                            for (vi, ri) in v.iter_mut().zip(row) {
                                *vi += coef * ri;
                            }
                        }
                        v
                    })
                    .collect();
                OrthoCombo {
                    normals,
                    thetas: inner.thetas,
                    table: inner.table,
                }
            }
            ZooFunction::Constant { c, .. } => OrthoCombo {
                normals: Vec::new(),
                thetas: Vec::new(),
                table: vec![*c],
            },
            _ => return None,
        };
        let k = combo.normals.len();
        for i in 0..k {
            for j in 0..i {
                if dot(&combo.normals[i], &combo.normals[j]).abs() > 1e-10 {
                    return None;
                }
            }
        }
        Some(combo)
    }

    /// Probability that halfspace i is +1 after noise, for each i.
    fn probs(&self, t: f64, y: &[f64]) -> Vec<f64> {
        self.normals
            .iter()
            .zip(&self.thetas)
            .map(|(u, &th)| normal_cdf(margin(t, dot(u, y), th)))
            .collect()
    }

    fn weighted_table(&self, q: &[f64], skip: Option<usize>) -> f64 {
        let k = self.normals.len();
        let mut total = 0.0;
        for (idx, &v) in self.table.iter().enumerate() {
            let mut w = v;
            for (i, &qi) in q.iter().enumerate().take(k) {
                if Some(i) == skip {
                    // derivative in q_i: +1 for set bits, -1 otherwise
                    w *= if idx >> i & 1 == 1 { 1.0 } else { -1.0 };
                } else {
                    w *= if idx >> i & 1 == 1 { qi } else { 1.0 - qi };
                }
            }
            total += w;
        }
        total
    }

    pub fn mean(&self) -> f64 {
        let q: Vec<f64> = self.thetas.iter().map(|&th| 1.0 - normal_cdf(th)).collect();
        self.weighted_table(&q, None)
    }

    pub fn pt(&self, t: f64, y: &[f64]) -> f64 {
        self.weighted_table(&self.probs(t, y), None)
    }

    /// `D P_t f(y)` as a vector in R^n.
    pub fn grad_pt(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let q = self.probs(t, y);
        let mut g = vec![0.0; n];
        for (i, (u, &th)) in self.normals.iter().zip(&self.thetas).enumerate() {
            let dq = (-t).exp() * normal_pdf(margin(t, dot(u, y), th)) / noise_weight(t);
            let c = self.weighted_table(&q, Some(i)) * dq;
            for (gi, ui) in g.iter_mut().zip(u) {
                *gi += c * ui;
            }
        }
        g
    }

    /// Degree-1 Hermite part `W_1(f)` as a vector: `E[f(x) x]`.
    pub fn w1(&self, n: usize) -> Vec<f64> {
        let q: Vec<f64> = self.thetas.iter().map(|&th| 1.0 - normal_cdf(th)).collect();
        let mut g = vec![0.0; n];
        for (i, (u, &th)) in self.normals.iter().zip(&self.thetas).enumerate() {
            let c = self.weighted_table(&q, Some(i)) * normal_pdf(th);
            for (gi, ui) in g.iter_mut().zip(u) {
                *gi += c * ui;
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{make_halfspace, sign_lifted_parity};
    use approx::assert_abs_diff_eq;

    #[test]
    fn bivariate_orthants() {
        // Sheppard: Pr[X > 0, Y > 0] = 1/4 + asin(r) / (2 pi)
        for r in [-0.9, -0.3, 0.0, 0.5, 0.99] {
            assert_abs_diff_eq!(bivariate_upper(0.0, 0.0, r), 0.25 + r.asin() / (2.0 * PI), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(bivariate_upper(0.7, -0.2, 0.0), normal_cdf(-0.7) * normal_cdf(0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(bivariate_upper(0.4, 0.4, 1.0), normal_cdf(-0.4), epsilon = 1e-6);
        assert_abs_diff_eq!(halfspace_noise_sensitivity_at(0.1, 0.0), halfspace_noise_sensitivity(0.1), epsilon = 1e-12);
    }

    #[test]
    fn cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-14);
        assert_abs_diff_eq!(halfspace_mean(1.0), -0.682_689_492_137_085_9, epsilon = 1e-14);
        assert_abs_diff_eq!(halfspace_noise_sensitivity(0.1), 0.139_992_250_565_474_1, epsilon = 1e-13);
    }

    #[test]
    fn halfspace_gradient_matches_finite_difference() {
        let (t, th) = (0.5, 0.3);
        for &p in &[-1.5, 0.0, 0.7, 2.0] {
            let h = 1e-5;
            let fd = (halfspace_pt(t, p + h, th) - halfspace_pt(t, p - h, th)) / (2.0 * h);
            assert_abs_diff_eq!(fd, halfspace_grad_coeff(t, p, th), epsilon = 1e-8);
        }
    }

    #[test]
    fn combo_matches_single_halfspace() {
        let f = make_halfspace(vec![0.6, 0.8, 0.0], 0.2).unwrap();
        let c = OrthoCombo::from_zoo(&f).unwrap();
        let y = [0.3, -1.0, 2.0];
        let p = 0.6 * 0.3 - 0.8;
        assert_abs_diff_eq!(c.pt(0.4, &y), halfspace_pt(0.4, p, 0.2), epsilon = 1e-14);
        let g = c.grad_pt(0.4, &y);
        let coeff = halfspace_grad_coeff(0.4, p, 0.2);
        assert_abs_diff_eq!(g[0], 0.6 * coeff, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 0.8 * coeff, epsilon = 1e-14);
        assert_abs_diff_eq!(c.mean(), halfspace_mean(0.2), epsilon = 1e-14);
        assert_abs_diff_eq!(c.w1(3)[1], 0.8 * halfspace_w1(0.2), epsilon = 1e-14);
    }

    #[test]
    fn parity_gradient_by_finite_difference() {
        let f = sign_lifted_parity(3, vec![0, 2]).unwrap();
        let c = OrthoCombo::from_zoo(&f).unwrap();
        let y = [0.4, 1.0, -0.3];
        let g = c.grad_pt(0.7, &y);
        for i in 0..3 {
            let h = 1e-5;
            let mut a = y;
            let mut b = y;
            a[i] += h;
            b[i] -= h;
            let fd = (c.pt(0.7, &a) - c.pt(0.7, &b)) / (2.0 * h);
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-8);
        }
        // parity has no degree-1 part
        assert!(c.w1(3).iter().all(|v| v.abs() < 1e-15));
    }
}
