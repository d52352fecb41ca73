//! Seeded Gaussian and uniform draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// splitmix64 finalizer, used to derive independent child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic source of standard Gaussians and uniforms.
///
/// Every draw sequence is a pure function of the seed. `child(tag)` gives an
/// independent stream whose seed depends only on the parent seed and `tag`,
/// never on how many values the parent has produced.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        GaussianSampler {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, tag: u64) -> GaussianSampler {
        GaussianSampler::new(mix64(self.seed ^ mix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Child stream keyed by two tags, e.g. a matrix entry (i, j).
    pub fn child2(&self, a: u64, b: u64) -> GaussianSampler {
        self.child(mix64(a).wrapping_add(b.rotate_left(32)) ^ b)
    }

    /// The underlying generator, for distributions not wrapped here.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    pub fn fill_normal(&mut self, buf: &mut [f64]) {
        for v in buf.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normal(&mut v);
        v
    }

    /// Uniform on [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform on {0, .., n-1}.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform random sign in {-1, 1}.
    #[inline]
    pub fn sign(&mut self) -> i8 {
        if self.rng.random::<bool>() {
            1
        } else {
            -1
        }
    }

    /// Uniform point on the unit sphere in R^n.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v = self.normal_vec(n);
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|a| a / norm).collect();
            }
        }
    }

    /// Uniform k-frame in R^n (rows orthonormal), via Gram-Schmidt on Gaussians.
    pub fn orthonormal_rows(&mut self, k: usize, n: usize) -> Vec<Vec<f64>> {
        assert!(k <= n, "cannot fit {k} orthonormal rows in R^{n}");
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
        while rows.len() < k {
            let mut v = self.normal_vec(n);
            for _ in 0..2 {
                for r in &rows {
                    let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (vi, ri) in v.iter_mut().zip(r) {
                        *vi -= d * ri;
                    }
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                rows.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = GaussianSampler::new(7);
        let mut b = GaussianSampler::new(7);
        assert_eq!(a.normal_vec(32), b.normal_vec(32));
    }

    #[test]
    fn child_ignores_parent_position() {
        let a = GaussianSampler::new(3);
        let mut b = GaussianSampler::new(3);
        b.normal_vec(10);
        assert_eq!(a.child(5).normal_vec(4), b.child(5).normal_vec(4));
        assert_ne!(a.child(5).normal_vec(4), a.child(6).normal_vec(4));
        assert_ne!(a.child2(1, 2).normal_vec(4), a.child2(2, 1).normal_vec(4));
    }

    #[test]
    fn moments_are_standard() {
        let mut s = GaussianSampler::new(11);
        let n = 200_000;
        let v = s.normal_vec(n);
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn frames_are_orthonormal() {
        let mut s = GaussianSampler::new(1);
        let rows = s.orthonormal_rows(4, 9);
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }
}
