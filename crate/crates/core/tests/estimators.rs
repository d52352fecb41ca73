use junta_probe_core::estimators::{
    estimate, estimate_grad_inner, estimate_noise_sensitivity, EstimatorConfig, InnerNoise, Target,
};
use junta_probe_core::truth::{
    bivariate_upper, halfspace_noise_sensitivity_at, halfspace_pt, normal_cdf, normal_pdf, noise_weight, OrthoCombo,
};
use junta_probe_core::zoo::{make_halfspace, random_intersection};
use junta_probe_core::{Function, GaussianSampler, Oracle};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact mean of the J-kernel for `sign(<u, x> - theta)`: the covariance of
/// `f_{t,y1}` and `f_{t,y2}` under rho^2-correlated inputs, over `rho^2 T`.
fn j_kernel_mean(theta: f64, p1: f64, p2: f64, t: f64, rho: f64) -> f64 {
    let (a, b) = ((-t).exp(), noise_weight(t));
    let (h, k) = ((theta - a * p1) / b, (theta - a * p2) / b);
    let cov = 4.0 * (bivariate_upper(h, k, rho * rho) - normal_cdf(-h) * normal_cdf(-k));
    cov / (rho * rho * (2.0 * t).exp_m1())
}

#[test]
fn j_kernel_is_unbiased_for_its_exact_mean() {
    let mut s = GaussianSampler::new(21);
    let u = s.unit_vector(16);
    let theta = 0.3;
    let f = Oracle::new(make_halfspace(u.clone(), theta).unwrap());
    for (t, rho) in [(0.5, 0.5), (1.0986, 0.5), (0.3, 0.3)] {
        let (y1, y2) = (s.normal_vec(16), s.normal_vec(16));
        let cfg = EstimatorConfig::plain(1_000_000);
        let est = estimate_grad_inner(&f, t, &y1, &y2, InnerNoise::Correlation { rho }, &cfg, &mut s).unwrap();
        let want = j_kernel_mean(theta, dot(&u, &y1), dot(&u, &y2), t, rho);
        assert!(
            (est.mean - want).abs() <= 3.0 * est.std_error,
            "t={t} rho={rho}: mean {} vs {want} (se {})",
            est.mean,
            est.std_error
        );
    }
}

#[test]
fn j_kernel_mean_tends_to_gradient_inner_product() {
    let mut s = GaussianSampler::new(5);
    let u = s.unit_vector(8);
    let f = make_halfspace(u.clone(), -0.4).unwrap();
    let combo = OrthoCombo::from_zoo(&f).unwrap();
    for _ in 0..20 {
        let (y1, y2) = (s.normal_vec(8), s.normal_vec(8));
        let t = s.uniform(0.05, 2.0);
        let exact = dot(&combo.grad_pt(t, &y1), &combo.grad_pt(t, &y2));
        let limit = j_kernel_mean(-0.4, dot(&u, &y1), dot(&u, &y2), t, 1e-3);
        assert!((limit - exact).abs() <= 1e-5 * (1.0 + exact.abs()), "{limit} vs {exact}");
    }
}

#[test]
fn plain_estimators_hit_closed_forms() {
    let mut s = GaussianSampler::new(77);
    let u = s.unit_vector(16);
    let theta = 0.5;
    let fz = make_halfspace(u.clone(), theta).unwrap();
    let combo = OrthoCombo::from_zoo(&fz).unwrap();
    let f = Oracle::new(fz);
    let cfg = EstimatorConfig::plain(400_000);
    let x = s.normal_vec(16);
    let eta: f64 = 0.1;
    let checks = [
        (Target::Mean, combo.mean()),
        (Target::Pt { t: 0.4, x: &x }, halfspace_pt(0.4, dot(&u, &x), theta)),
        (Target::Degree1 { eta, x: &x }, (combo.pt(-eta.ln(), &x) - combo.mean()) / eta),
        (Target::NoiseSensitivity { t: 0.2 }, halfspace_noise_sensitivity_at(0.2, theta)),
    ];
    for (target, want) in checks {
        let name = format!("{target:?}");
        let est = estimate(&f, target, &cfg, &mut s).unwrap();
        assert!((est.mean - want).abs() <= 4.0 * est.std_error, "{name}: {} vs {want}", est.mean);
    }
}

#[test]
fn degree1_part_has_light_tails() {
    // f_{d,eta}(x) = (P_s f(x) - E f) / eta with e^{-s} = eta, against sqrt(2/pi) x_1
    let eta: f64 = 0.1;
    let s_eta = -eta.ln();
    let mut s = GaussianSampler::new(9);
    let xs: Vec<f64> = (0..10_000).map(|_| s.normal()).collect();
    for lambda in [2.0, 4.0, 8.0] {
        let bad = xs
            .iter()
            .filter(|&&x| {
                let f_d = (halfspace_pt(s_eta, x, 0.0) - 0.0) / eta;
                (f_d - (2.0 / std::f64::consts::PI).sqrt() * x).abs() > lambda * eta
            })
            .count();
        let rate = bad as f64 / xs.len() as f64;
        assert!(rate <= 1.2 / (lambda * lambda), "lambda {lambda}: {rate}");
    }
}

#[test]
fn gradient_norm_is_bounded_by_inverse_t() {
    let mut s = GaussianSampler::new(31);
    let f0 = random_intersection(2, 16, 0.0, &mut s).unwrap();
    let combo = OrthoCombo::from_zoo(&f0);
    let f = Oracle::new(f0);
    let t = 0.5 * 9f64.ln();
    let big_t = (2.0 * t).exp_m1();
    let cfg = EstimatorConfig::plain(200_000);
    for _ in 0..10 {
        let y = s.normal_vec(16);
        let est = estimate_grad_inner(&f, t, &y, &y, InnerNoise::Correlation { rho: 0.5 }, &cfg, &mut s).unwrap();
        assert!(est.value <= 1.0 / big_t + 4.0 * est.std_error, "{} > 1/T", est.value);
        if let Some(c) = &combo {
            let g = c.grad_pt(t, &y);
            assert!(dot(&g, &g) <= 1.0 / big_t);
        }
    }
}

#[test]
fn semigroup_residual_is_bounded_by_surface_area() {
    // E[(f - P_t f)^2] <= 8 s sqrt(t), with s the Gaussian surface area
    let mut s = GaussianSampler::new(41);
    for theta in [0.0, 0.7, -1.2] {
        let fz = make_halfspace(s.unit_vector(6), theta).unwrap();
        let surface = normal_pdf(theta);
        let combo = OrthoCombo::from_zoo(&fz).unwrap();
        let f = Oracle::new(fz.clone());
        for t in [1e-4, 1e-3, 1e-2, 0.1] {
            // exact: E[(f - P_t f)^2] = 4 NS_t - 2 NS_{2t}
            let exact = 4.0 * halfspace_noise_sensitivity_at(t, theta) - 2.0 * halfspace_noise_sensitivity_at(2.0 * t, theta);
            let bound = 8.0 * surface * t.sqrt();
            assert!(exact <= bound, "theta {theta} t {t}: {exact} > {bound}");
            let mut mc = 0.0;
            let m = 20_000;
            for _ in 0..m {
                let x = s.normal_vec(6);
                mc += (fz.eval(&x) - combo.pt(t, &x)).powi(2);
            }
            mc /= m as f64;
            assert!(mc <= bound, "monte carlo {mc} > {bound}");
            let cfg = EstimatorConfig::plain(200_000);
            let ns1 = estimate_noise_sensitivity(&f, t, &cfg, &mut s).unwrap();
            let ns2 = estimate_noise_sensitivity(&f, 2.0 * t, &cfg, &mut s).unwrap();
            let est = 4.0 * ns1.mean - 2.0 * ns2.mean;
            let se = 4.0 * ns1.std_error + 2.0 * ns2.std_error;
            assert!(est <= bound + 3.0 * se, "estimated {est} > {bound}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grad_inner_is_symmetric(seed in any::<u64>(), t in 0.05..2.0f64, rho in 0.1..0.9f64) {
        let mut s = GaussianSampler::new(seed);
        let f = Oracle::new(random_intersection(2, 5, 0.1, &mut s).unwrap());
        let (y1, y2) = (s.normal_vec(5), s.normal_vec(5));
        let cfg = EstimatorConfig::fixed(0.1, 0.1, 200, 3).unwrap();
        let inner = InnerNoise::Correlation { rho };
        let a = estimate_grad_inner(&f, t, &y1, &y2, inner, &cfg, &mut GaussianSampler::new(seed ^ 1)).unwrap();
        let b = estimate_grad_inner(&f, t, &y2, &y1, inner, &cfg, &mut GaussianSampler::new(seed ^ 1)).unwrap();
        prop_assert_eq!(a.value, b.value);
        prop_assert_eq!(a.queries, 200 * 3 * 4);
    }

    #[test]
    fn estimates_are_reproducible(seed in any::<u64>()) {
        let mut s = GaussianSampler::new(seed);
        let f = Oracle::new(make_halfspace(s.unit_vector(4), 0.2).unwrap());
        let x = s.normal_vec(4);
        let cfg = EstimatorConfig::fixed(0.1, 0.1, 100, 5).unwrap();
        let a = estimate(&f, Target::Pt { t: 0.3, x: &x }, &cfg, &mut GaussianSampler::new(seed)).unwrap();
        let b = estimate(&f, Target::Pt { t: 0.3, x: &x }, &cfg, &mut GaussianSampler::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bounded_kernels_stay_in_range(seed in any::<u64>(), t in 0.05..2.0f64) {
        let mut s = GaussianSampler::new(seed);
        let f = Oracle::new(random_intersection(3, 6, 0.0, &mut s).unwrap());
        let x = s.normal_vec(6);
        let cfg = EstimatorConfig::fixed(0.1, 0.1, 50, 3).unwrap();
        let pt = estimate(&f, Target::Pt { t, x: &x }, &cfg, &mut s).unwrap();
        prop_assert!(pt.value.abs() <= 1.0);
        let ns = estimate(&f, Target::NoiseSensitivity { t }, &cfg, &mut s).unwrap();
        prop_assert!((0.0..=1.0).contains(&ns.value));
    }
}
