use junta_probe_core::linalg::{singular_values_sym, SymMatrix};
use junta_probe_core::tester::{
    draw_anchors, test_linear_junta, test_rank, NoiseSensitivityGate, RankTestParams, SurfaceAreaGate,
};
use junta_probe_core::truth::OrthoCombo;
use junta_probe_core::zoo::{intersection, make_halfspace, randomly_rotated, sample_d1, sign_lifted_parity, HalfspaceSpec};
use junta_probe_core::{GaussianSampler, Oracle, Preset, ZooFunction};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotated_intersection(k: usize, n: usize, theta: f64, s: &mut GaussianSampler) -> ZooFunction {
    let hs = (0..k)
        .map(|i| {
            let mut u = vec![0.0; k];
            u[i] = 1.0;
            HalfspaceSpec::new(u, theta).unwrap()
        })
        .collect();
    randomly_rotated(intersection(hs).unwrap(), n, s).unwrap()
}

#[test]
fn exact_gram_of_a_junta_has_rank_k_and_survives_entrywise_noise() {
    let mut s = GaussianSampler::new(12);
    let eps: f64 = 0.25;
    for k in 1..=3 {
        for trial in 0..20 {
            let f = rotated_intersection(k, 16, s.uniform(-0.5, 0.5), &mut s);
            let combo = OrthoCombo::from_zoo(&f).unwrap();
            let r = 3 * k + trial % 4;
            let t = s.uniform(0.01, 1.0);
            let grads: Vec<Vec<f64>> = (0..r).map(|_| combo.grad_pt(t, &s.normal_vec(16))).collect();
            let a = SymMatrix::from_fn(r, |i, j| dot(&grads[i], &grads[j]));
            let sa = singular_values_sym(&a).unwrap();
            assert!(sa[k] <= 1e-12 * sa[0].max(1e-300), "k={k}: sigma_k+1 = {}", sa[k]);
            let kappa = eps * eps / (40.0 * r as f64);
            let mut e = SymMatrix::zeros(r);
            for i in 0..r {
                for j in i..r {
                    e.set(i, j, s.uniform(-kappa, kappa));
                }
            }
            let sb = singular_values_sym(&a.add(&e).unwrap()).unwrap();
            assert!(sb[k] <= e.spectral_norm().unwrap() + 1e-15);
            assert!(e.spectral_norm().unwrap() <= r as f64 * kappa);
            assert!(sb[k] <= eps * eps / 40.0 && eps * eps / 40.0 <= eps * eps / 16.0);
        }
    }
}

#[test]
fn rank_test_ledger_is_exact() {
    let mut s = GaussianSampler::new(2);
    let f = Oracle::new(rotated_intersection(2, 8, 0.0, &mut s));
    for (r, batch, blocks) in [(3, 100, 1), (5, 250, 3), (7, 64, 5)] {
        let p = RankTestParams::practical(2, 4.0, 0.25).unwrap().with_r(r).with_entry_samples(batch, blocks);
        let before = f.ledger().total();
        let v = test_rank(&f, &p, &GaussianSampler::new(r as u64)).unwrap();
        let want = (r * (r + 1) / 2) as u64 * batch * blocks as u64 * 4;
        assert_eq!(v.queries, want);
        assert_eq!(f.ledger().total() - before, want);
        assert_eq!(v.answer, v.sigma_k_plus_1 <= v.threshold);
        assert_eq!(v.threshold, 0.25 * 0.25 / 16.0);
    }
}

#[test]
fn gram_is_symmetric_and_uses_gaussian_anchors() {
    let mut s = GaussianSampler::new(3);
    let f = Oracle::new(rotated_intersection(1, 6, 0.2, &mut s));
    let p = RankTestParams::practical(1, 2.0, 0.25).unwrap().with_entry_samples(2000, 1);
    let v = test_rank(&f, &p, &GaussianSampler::new(9)).unwrap();
    let b = &v.gram.matrix;
    for i in 0..p.r {
        for j in 0..p.r {
            assert_eq!(b.get(i, j), b.get(j, i));
        }
    }
    assert_eq!(draw_anchors(6, p.r, &GaussianSampler::new(9)).len(), p.r);
}

/// One-sided comparison of two yes counts out of `m`: fails only if the
/// smaller r is ahead by more than the 95% one-sided pooled margin.
fn not_worse(yes_small: usize, yes_large: usize, m: usize) -> bool {
    let (a, b) = (yes_small as f64 / m as f64, yes_large as f64 / m as f64);
    let pool = 0.5 * (a + b);
    let se = (pool * (1.0 - pool) * 2.0 / m as f64).sqrt();
    a - b <= 1.645 * se
}

#[test]
fn yes_rate_does_not_drop_with_more_anchors() {
    // per-entry accuracy follows kappa = eps^2 / (40 r), so samples grow as r^2
    let eps = 0.5;
    let trials = 50;
    let mut rates = Vec::new();
    for r in [2usize, 3, 4] {
        let mut yes = 0;
        for trial in 0..trials {
            let mut s = GaussianSampler::new(1000 + trial);
            let f = Oracle::new(rotated_intersection(1, 4, 0.0, &mut s));
            let p = RankTestParams::practical(1, 2.0, eps)
                .unwrap()
                .with_r(r)
                .with_entry_samples(5_000 * (r * r) as u64, 1);
            yes += usize::from(test_rank(&f, &p, &GaussianSampler::new(trial)).unwrap().answer);
        }
        rates.push(yes);
    }
    for w in rates.windows(2) {
        assert!(not_worse(w[0], w[1], trials as usize), "yes counts {rates:?}");
    }
}

#[test]
fn xor_gradient_escapes_a_one_dimensional_subspace() {
    // W = span(e_1)^perp inside the junta space span(e_1, e_2), i.e. span(e_2)
    let f = sign_lifted_parity(16, vec![0, 1]).unwrap();
    let combo = OrthoCombo::from_zoo(&f).unwrap();
    let eps: f64 = 0.25;
    let surface = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    let paper_t = eps.powi(4) / (900.0 * surface * surface);
    let practical_t = RankTestParams::practical(2, 4.0, eps).unwrap().t;
    let mut s = GaussianSampler::new(4);
    for t in [paper_t, practical_t] {
        let hits = (0..1000)
            .filter(|_| {
                let g = combo.grad_pt(t, &s.normal_vec(16));
                g[1] * g[1] >= eps * eps / 8.0
            })
            .count();
        assert!(hits > 0, "t = {t}: no escaping gradient in 1000 draws");
    }
}

#[test]
fn constant_function_passes_at_every_rank() {
    let f = Oracle::new(ZooFunction::Constant { c: 1.0, dim: 5 });
    for k in 0..3 {
        let p = RankTestParams::practical(k.max(1), 1.0, 0.25).unwrap().with_entry_samples(1000, 1);
        let p = RankTestParams { k, ..p };
        let v = test_rank(&f, &p, &GaussianSampler::new(k as u64)).unwrap();
        assert!(v.answer);
        assert_eq!(v.sigma_k_plus_1, 0.0);
    }
}

#[test]
fn gate_accepts_small_surface_and_rejects_many_stripes() {
    let gate = NoiseSensitivityGate::default();
    let s = GaussianSampler::new(5);
    let h = Oracle::new(make_halfspace(vec![1.0, 0.0, 0.0], 0.0).unwrap());
    assert!(gate.test(&h, 1.0, 0.25, &s).unwrap().accept);
    let c = Oracle::new(ZooFunction::Constant { c: -1.0, dim: 3 });
    let v = gate.test(&c, 1.0, 0.25, &s).unwrap();
    assert!(v.accept && v.statistic == 0.0);
    let mut rejected = 0;
    for seed in 0..10 {
        let d1 = Oracle::new(sample_d1(200, &mut GaussianSampler::new(seed)).unwrap());
        rejected += usize::from(!gate.test(&d1, 5.0, 0.25, &GaussianSampler::new(seed)).unwrap().accept);
    }
    assert!(rejected >= 9, "gate rejected {rejected}/10 stripe functions");
}

#[test]
fn gate_rejection_skips_the_rank_stage() {
    let f = Oracle::new(sample_d1(200, &mut GaussianSampler::new(1)).unwrap());
    let p = RankTestParams::practical(1, 5.0, 0.25).unwrap();
    let v = test_linear_junta(&f, &NoiseSensitivityGate::default(), &p, &GaussianSampler::new(2)).unwrap();
    assert!(!v.answer);
    assert!(v.rank.is_none());
    // the whole rank budget is saved
    assert_eq!(v.queries, v.gate.queries);
    assert_eq!(f.ledger().total(), v.gate.queries);
}

#[test]
fn composed_tester_counts_both_stages() {
    let mut s = GaussianSampler::new(6);
    let f = Oracle::new(rotated_intersection(1, 8, 0.0, &mut s));
    let p = RankTestParams::new(Preset::Practical, 1, 1.0, 0.25).unwrap().with_entry_samples(20_000, 1);
    let v = test_linear_junta(&f, &NoiseSensitivityGate::default(), &p, &GaussianSampler::new(3)).unwrap();
    let rank = v.rank.as_ref().expect("gate accepts a halfspace");
    assert_eq!(v.queries, v.gate.queries + rank.queries);
    assert_eq!(v.gate.queries, 2 * v.gate.samples);
    assert_eq!(rank.queries as f64, p.expected_queries());
    assert_eq!(f.ledger().total(), v.queries);
}
