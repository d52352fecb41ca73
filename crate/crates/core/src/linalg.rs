//! Small dense symmetric linear algebra: Jacobi eigensolver, PSD inverse
//! square roots, and implicit orthonormalization of Gram matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense symmetric matrix stored in full row-major form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Checks `|A_ij - A_ji| <= 1e-12 max|A|` and finiteness.
    pub fn new(order: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::raw(order, data)?;
        let tol = 1e-12 * m.max_abs();
        for i in 0..order {
            for j in 0..i {
                if (m.get(i, j) - m.get(j, i)).abs() > tol {
                    return invalid(format!("matrix is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(m)
    }

    /// Replaces `A` by `(A + A^T) / 2`.
    pub fn symmetrize(order: usize, data: Vec<f64>) -> Result<Self> {
        let mut m = Self::raw(order, data)?;
        for i in 0..order {
            for j in 0..i {
                let v = 0.5 * (m.get(i, j) + m.get(j, i));
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    fn raw(order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != order * order {
            return invalid(format!(
                "expected {} entries for order {order}, got {}",
                order * order,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix has non-finite entries");
        }
        Ok(SymMatrix { order, data })
    }

    pub fn zeros(order: usize) -> Self {
        SymMatrix {
            order,
            data: vec![0.0; order * order],
        }
    }

    pub fn identity(order: usize) -> Self {
        Self::diag(&vec![1.0; order])
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    /// Fills `i <= j` from `f(i, j)` and mirrors.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            for j in i..order {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Gram matrix `G_ij = <v_i, v_j>`.
    pub fn gram(vectors: &[Vec<f64>]) -> Self {
        Self::from_fn(vectors.len(), |i, j| dot(&vectors[i], &vectors[j]))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.order + j] = v;
        self.data[j * self.order + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.order.max(1)).map(|r| r.to_vec()).take(self.order).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(singular_values_sym(self)?.first().copied().unwrap_or(0.0))
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix {
            order: self.order,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    fn zip(&self, other: &SymMatrix, op: impl Fn(f64, f64) -> f64) -> Result<SymMatrix> {
        if self.order != other.order {
            return invalid("matrix orders differ");
        }
        Ok(SymMatrix {
            order: self.order,
            data: self.data.iter().zip(&other.data).map(|(a, b)| op(*a, *b)).collect(),
        })
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.order)
            .map(|row| dot(row, x))
            .collect()
    }

    /// Comma-separated rows, full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.order {
            for j in 0..self.order {
                if j > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{:e}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut data = Vec::new();
        let mut rows = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            rows += 1;
            for cell in line.split(',') {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad matrix entry {cell:?}: {e}")))?;
                data.push(v);
            }
        }
        Self::new(rows, data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// `vectors[i]` is the unit eigenvector for `values[i]`
    pub vectors: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps rows in order until the off-diagonal Frobenius norm is at most
/// 1e-12 of the total. Ties in the sorted eigenvalues keep the original
/// diagonal order.
pub fn eigh(a: &SymMatrix) -> Result<Spectrum> {
    let n = a.order;
    let mut m = a.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total = a.frobenius_norm();
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > 1e-12 * total {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off: off(&m),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = 0.5 * (m[q * n + q] - m[p * n + p]) / apq;
                let mut t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
                if theta < 0.0 {
                    t = -t;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let g = m[k * n + p];
                        let h = m[k * n + q];
                        let gp = g - s * (h + g * tau);
                        let hq = h + s * (g - h * tau);
                        m[k * n + p] = gp;
                        m[p * n + k] = gp;
                        m[k * n + q] = hq;
                        m[q * n + k] = hq;
                    }
                    let g = v[k * n + p];
                    let h = v[k * n + q];
                    v[k * n + p] = g - s * (h + g * tau);
                    v[k * n + q] = h + s * (g - h * tau);
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    Ok(Spectrum {
        values: idx.iter().map(|&i| m[i * n + i]).collect(),
        vectors: idx
            .iter()
            .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
            .collect(),
    })
}

/// Singular values of a symmetric matrix: sorted absolute eigenvalues.
pub fn singular_values_sym(a: &SymMatrix) -> Result<Vec<f64>> {
    let mut s: Vec<f64> = eigh(a)?.values.iter().map(|v| v.abs()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// `f(A) = V diag(f(lambda)) V^T`.
fn spectral_map(spec: &Spectrum, f: impl Fn(f64) -> f64) -> SymMatrix {
    let n = spec.values.len();
    let fl: Vec<f64> = spec.values.iter().map(|&l| f(l)).collect();
    SymMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| spec.vectors[k][i] * fl[k] * spec.vectors[k][j])
            .sum()
    })
}

/// `A^{-1/2}` for PSD `A`. Never clamps: an eigenvalue below `floor` is an error.
pub fn inv_sqrt_psd(a: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    if !(floor > 0.0) {
        return invalid(format!("floor must be positive, got {floor}"));
    }
    let spec = eigh(a)?;
    let lambda_min = spec.values.last().copied().unwrap_or(f64::INFINITY);
    if lambda_min < floor {
        return Err(Error::RankDeficient { lambda_min, floor });
    }
    Ok(spectral_map(&spec, |l| 1.0 / l.sqrt()))
}

/// `A^{1/2}` for PSD `A`; negative eigenvalues are an error.
pub fn sqrt_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let spec = eigh(a)?;
    let lambda_min = spec.values.last().copied().unwrap_or(0.0);
    if lambda_min < 0.0 {
        return Err(Error::RankDeficient {
            lambda_min,
            floor: 0.0,
        });
    }
    Ok(spectral_map(&spec, f64::sqrt))
}

/// Lower bound `(gamma / (2 l eta))^{l+1}` on the smallest singular value of
/// an (eta, gamma)-linearly independent family of `l` vectors, with
/// `|v_1| >= gamma`. The bound is not scale invariant: it needs `l eta >= 1`,
/// which holds for gradients of `P_t f` with `eta = t^{-1/2}` and `t <= 1`.
/// [`min_singular_lb_scaled`] holds at every scale.
pub fn min_singular_lb(ell: usize, eta: f64, gamma: f64) -> f64 {
    (gamma / (2.0 * ell as f64 * eta)).powi(ell as i32 + 1)
}

/// `(gamma / 2) kappa^l` with `kappa = gamma / (2 l eta)`; equals
/// `l eta` times [`min_singular_lb`].
pub fn min_singular_lb_scaled(ell: usize, eta: f64, gamma: f64) -> f64 {
    0.5 * gamma * (gamma / (2.0 * ell as f64 * eta)).powi(ell as i32)
}

/// Entrywise Gram accuracy `2 nu / (l^2 eta) (gamma / (2 l eta))^{3l+3}` that
/// makes the computed coefficients nu-accurate.
pub fn lambda_tol(ell: usize, nu: f64, eta: f64, gamma: f64) -> f64 {
    let l = ell as f64;
    2.0 * nu / (l * l * eta) * (gamma / (2.0 * l * eta)).powi(3 * ell as i32 + 3)
}

/// Coefficient bound `sqrt(2 l) (2 l eta / gamma)^{l+1}`.
pub fn xi_bound(ell: usize, eta: f64, gamma: f64) -> f64 {
    let l = ell as f64;
    (2.0 * l).sqrt() * (2.0 * l * eta / gamma).powi(ell as i32 + 1)
}

/// Coefficients `alpha` with `w_i = sum_j alpha_ij v_j` orthonormal, from an
/// estimated Gram `beta` of the `v_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthoCoeffs {
    pub alpha: SymMatrix,
    pub lambda_min: f64,
    pub floor: f64,
    pub xi_bound: f64,
    pub max_abs_alpha: f64,
}

/// `alpha_ij = beta^{-1/2}(j, i)` after symmetrizing `beta`.
///
/// The smallest eigenvalue of the symmetrized estimate must stay above half
/// the squared singular-value bound for (eta, gamma)-independent vectors;
/// otherwise the perturbation is too large for the guarantee to apply.
pub fn orthonormalize_coeffs(
    beta: &SymMatrix,
    ell: usize,
    eta: f64,
    gamma: f64,
    nu: f64,
) -> Result<OrthoCoeffs> {
    if beta.order() != ell {
        return invalid(format!("Gram has order {} but l = {ell}", beta.order()));
    }
    if !(eta >= gamma && gamma > 0.0) {
        return invalid(format!("need eta >= gamma > 0, got eta={eta}, gamma={gamma}"));
    }
    if !(nu > 0.0) {
        return invalid("nu must be positive");
    }
    let sym = SymMatrix::symmetrize(ell, beta.data.clone())?;
    if ell == 0 {
        return Ok(OrthoCoeffs {
            alpha: sym,
            lambda_min: f64::INFINITY,
            floor: 0.0,
            xi_bound: 0.0,
            max_abs_alpha: 0.0,
        });
    }
    let floor = 0.5 * min_singular_lb(ell, eta, gamma).powi(2);
    let spec = eigh(&sym)?;
    let lambda_min = *spec.values.last().expect("ell > 0");
    if lambda_min < floor {
        return Err(Error::PerturbationTooLarge { lambda_min, floor });
    }
    let inv = spectral_map(&spec, |l| 1.0 / l.sqrt());
    // alpha_ij = inv(j, i); inv is symmetric so this is a relabelling
    let alpha = SymMatrix::from_fn(ell, |i, j| inv.get(j, i));
    Ok(OrthoCoeffs {
        max_abs_alpha: alpha.max_abs(),
        alpha,
        lambda_min,
        floor,
        xi_bound: xi_bound(ell, eta, gamma),
    })
}

/// `w_i = sum_j alpha_ij v_j`.
pub fn combine(alpha: &SymMatrix, vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let l = alpha.order();
    (0..l)
        .map(|i| {
            let mut w = vec![0.0; vectors.first().map_or(0, Vec::len)];
            for (j, v) in vectors.iter().enumerate() {
                let a = alpha.get(i, j);
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk += a * vk;
                }
            }
            w
        })
        .collect()
}
