mod common;

use std::f64::consts::PI;

use common::*;
use ebgp::datagen::{f_swiss, f_swiss_ambient, gen_circle, gen_mixed_union, gen_swiss_roll, swiss_roll_point, CircleSpec, SWISS_U_RANGE, SWISS_V_RANGE};
use ebgp::estimators::{fit_predict, truncate_prediction, EstimatorConfig, Method, Prediction, RhoSpec};
use ebgp::eval::{aggregate_rows, fit_rate_slope, run_benchmark, Generator, Scenario};
use ebgp::kernel_gp::{gram_matrix, marginal_log_likelihood, posterior_predict, GPFit, KernelParams};
use ebgp::manifold_stats::{harmonic_affinity_stat, kernel_affinity_stat, knn_distance};
use ebgp::oracles::{g_epsilon_apply, rkhs_norm_squared, ParamManifold, Resolution};
use ebgp::priors::{
    adaptive_simpson, eb_log_prior, misspecified_rate_exponent, BandwidthLogDensity, EbSettings, EmpiricalBayesPrior, Normalized,
    RescaledGammaPrior,
};
use ebgp::sampler::{mh_sample_bandwidth, softmax_log, InitialBandwidth, MHConfig};
use ebgp::Mat;
use proptest::prelude::*;

fn points(n: usize, d: usize) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(0.0f64..1.0, n * d).prop_map(move |v| Mat::from_fn(n, d, |i, j| v[i * d + j]))
}

fn sized_points(n: std::ops::RangeInclusive<usize>, d: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Mat<f64>> {
    (n, d).prop_flat_map(|(n, d)| points(n, d))
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn circle_points(n: usize, seed: u64) -> Mat<f64> {
    gen_circle(n, CircleSpec::default(), 0.1, seed, None).unwrap().x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_symmetric_unit_diagonal_bounded_spectrum(x in sized_points(1..=25, 1..=4), t in 1e-3f64..10.0) {
        let k = gram_matrix(x.as_ref(), t).unwrap();
        let n = k.nrows();
        for i in 0..n {
            prop_assert_eq!(k[(i, i)], 1.0);
            for j in 0..n {
                prop_assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
        let eig = k.as_ref().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        for l in eig {
            prop_assert!(l >= -1e-10 && l <= n as f64 + 1e-10, "eigenvalue {l}");
        }
    }

    #[test]
    fn likelihood_permutation_invariant(
        (x, perm) in sized_points(2..=20, 1..=3).prop_flat_map(|x| { let n = x.nrows(); (Just(x), permutation(n)) }),
        t in 1e-2f64..2.0,
        s2 in 1e-3f64..1.0,
    ) {
        let y: Vec<f64> = (0..x.nrows()).map(|i| (3.0 * x[(i, 0)]).sin()).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let p = KernelParams::new(t, s2).unwrap();
        let a = marginal_log_likelihood(x.as_ref(), &y, p).unwrap();
        let b = marginal_log_likelihood(rows_permuted(&x, &perm).as_ref(), &yp, p).unwrap();
        prop_assert!(rel_close(a, b, 1e-10), "{a} vs {b}");
    }

    #[test]
    fn interpolation_as_noise_vanishes(n in 2usize..=10, shift in prop::collection::vec(-0.02f64..0.02, 10), t in 1e-3f64..5e-3) {
        let x = Mat::from_fn(n, 1, |i, _| 0.1 * i as f64 + shift[i]);
        let y: Vec<f64> = (0..n).map(|i| (5.0 * x[(i, 0)]).cos() + 0.3).collect();
        let fit = GPFit::new(x.as_ref(), &y, KernelParams::new(t, 1e-10).unwrap()).unwrap();
        let pred = posterior_predict(&fit, x.as_ref()).unwrap();
        for (p, v) in pred.iter().zip(&y) {
            prop_assert!((p - v).abs() <= 1e-4 * v.abs().max(1.0), "{p} vs {v}");
        }
    }

    #[test]
    fn factorized_solve_matches_dense_inverse(x in sized_points(1..=30, 1..=3), t in 1e-2f64..1.0, s2 in 1e-3f64..1.0) {
        let n = x.nrows();
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] - 0.5).collect();
        let fit = GPFit::new(x.as_ref(), &y, KernelParams::new(t, s2).unwrap()).unwrap();
        let mut kn = brute_kernel(&x, &x, t);
        for i in 0..n {
            kn[(i, i)] += s2;
        }
        let alpha = mat_vec(&dense_inverse(&kn), &y);
        prop_assert!(vec_rel_err(fit.alpha(), &alpha) <= 1e-8);
    }

    #[test]
    fn knn_radius_nondecreasing_in_k(x in sized_points(3..=30, 1..=3), i in 0usize..30) {
        let n = x.nrows();
        let i = i % n;
        let radii: Vec<f64> = (1..n).map(|k| knn_distance(x.as_ref(), i, k).unwrap()).collect();
        prop_assert!(radii.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn affinity_invariant_under_permutation_and_rigid_motion(
        (x, perm) in sized_points(2..=25, 2..=2).prop_flat_map(|x| { let n = x.nrows(); (Just(x), permutation(n)) }),
        angle in 0.0f64..(2.0 * PI),
        shift in (-3.0f64..3.0, -3.0f64..3.0),
        t in 1e-3f64..1.0,
    ) {
        let (c, s) = (angle.cos(), angle.sin());
        let moved = Mat::from_fn(x.nrows(), 2, |i, j| {
            let (a, b) = (x[(perm[i], 0)], x[(perm[i], 1)]);
            if j == 0 { c * a - s * b + shift.0 } else { s * a + c * b + shift.1 }
        });
        let a0 = kernel_affinity_stat(x.as_ref(), t).unwrap();
        let a1 = kernel_affinity_stat(moved.as_ref(), t).unwrap();
        prop_assert!(rel_close(a0, a1, 1e-9), "{a0} vs {a1}");
        let h0 = harmonic_affinity_stat(x.as_ref(), t).unwrap();
        let h1 = harmonic_affinity_stat(moved.as_ref(), t).unwrap();
        prop_assert!(rel_close(h0, h1, 1e-9), "{h0} vs {h1}");
    }

    #[test]
    fn harmonic_at_most_arithmetic(x in sized_points(2..=30, 1..=4), t in 1e-4f64..10.0) {
        let h = harmonic_affinity_stat(x.as_ref(), t).unwrap();
        let a = kernel_affinity_stat(x.as_ref(), t).unwrap();
        prop_assert!(h <= a * (1.0 + 1e-12), "{h} > {a}");
    }

    #[test]
    fn gamma_prior_integrates_to_one(rho in 0.5f64..4.0, a0 in 0.5f64..3.0, b0 in 0.5f64..3.0) {
        let g = RescaledGammaPrior::new(a0, b0, rho).unwrap();
        // substitute t = e^s: ∫ p(t) dt = ∫ p(e^s) e^s ds
        let total = adaptive_simpson(|s: f64| (g.log_density(s.exp()) + s).exp(), -60.0, 60.0, 1e-9).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-4, "total {total}");
    }

    #[test]
    fn misspecified_rate_monotone(s in 0.5f64..4.0, rho in 0.5f64..4.0, rp in 0.5f64..6.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let lo = rp * rho / (2.0 * s + rp);
        let (m1, m2) = (lo + (rp - lo) * f1.min(f2), lo + (rp - lo) * f1.max(f2));
        prop_assume!(m1 > lo);
        let r1 = misspecified_rate_exponent(rho, m1, rp, s).unwrap();
        let r2 = misspecified_rate_exponent(rho, m2, rp, s).unwrap();
        prop_assert!(r2 >= r1 - 1e-12, "not nondecreasing in rho_minus: {r1} -> {r2}");
        // raise rho_plus while keeping rho_minus feasible
        let rp2 = rp * 1.3;
        prop_assume!(m2 > rp2 * rho / (2.0 * s + rp2) && m2 <= rp2);
        let r3 = misspecified_rate_exponent(rho, m2, rp2, s).unwrap();
        prop_assert!(r3 <= r2 + 1e-12, "not nonincreasing in rho_plus: {r2} -> {r3}");
    }

    #[test]
    fn softmax_shift_invariant(w in prop::collection::vec(-50.0f64..50.0, 1..20), c in -1e3f64..1e3) {
        let a = softmax_log(&w).unwrap();
        let shifted: Vec<f64> = w.iter().map(|v| v + c).collect();
        let b = softmax_log(&shifted).unwrap();
        prop_assert!(vec_rel_err(&a, &b) < 1e-9);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_clamps(v in prop::collection::vec(-10.0f64..10.0, 0..30), m in 0.01f64..5.0) {
        let p = truncate_prediction(Prediction { test: Some(v.clone()), ..Default::default() }, m).unwrap();
        let t = p.truncated.unwrap();
        for (a, b) in t.iter().zip(&v) {
            prop_assert!(a.abs() <= m);
            if b.abs() <= m { prop_assert_eq!(a, b); } else { prop_assert_eq!(*a, m.copysign(*b)); }
        }
    }

    #[test]
    fn rate_slope_recovers_power_law(alpha in 0.0f64..=1.0, c in 0.01f64..100.0) {
        let ns = [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0];
        let e: Vec<f64> = ns.iter().map(|n: &f64| c * n.powf(-alpha)).collect();
        prop_assert!((fit_rate_slope(&ns, &e).unwrap().slope + alpha).abs() < 1e-10);
    }

    #[test]
    fn swiss_response_range_and_union_continuity(u in SWISS_U_RANGE.0..SWISS_U_RANGE.1, v in SWISS_V_RANGE.0..SWISS_V_RANGE.1) {
        let f = f_swiss(u, v);
        prop_assert!(f >= 0.0 && f <= 100.0 / 9.0 + PI / 3.0);
        // the union's ambient response agrees with the surface response on the surface
        let g = f_swiss_ambient(swiss_roll_point(u, v));
        prop_assert!((f - g).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn polarization_identity(c1 in prop::collection::vec(-1.0f64..1.0, 3), c2 in prop::collection::vec(-1.0f64..1.0, 3), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let m = ParamManifold::circle(1.0).unwrap();
        let eps = 1e-2;
        let res = Resolution::Auto;
        let g1 = |u: f64| c1[0] + c1[1] * u.cos() + c1[2] * (2.0 * u).sin();
        let g2 = |u: f64| c2[0] + c2[1] * u.sin() + c2[2] * (3.0 * u).cos();
        let n1 = rkhs_norm_squared(&m, &g1, eps, res).unwrap();
        let n2 = rkhs_norm_squared(&m, &g2, eps, res).unwrap();
        let plus = rkhs_norm_squared(&m, &|u| g1(u) + g2(u), eps, res).unwrap();
        let minus = rkhs_norm_squared(&m, &|u| g1(u) - g2(u), eps, res).unwrap();
        let inner = 0.25 * (plus - minus);
        let combo = rkhs_norm_squared(&m, &|u| a * g1(u) + b * g2(u), eps, res).unwrap();
        let expected = a * a * n1 + 2.0 * a * b * inner + b * b * n2;
        let scale = (a * a * n1).abs() + (2.0 * a * b * inner).abs() + (b * b * n2).abs();
        prop_assert!((combo - expected).abs() <= 1e-8 * scale.max(1e-12), "{combo} vs {expected}");
        prop_assert!(n1 >= 0.0 && n2 >= 0.0 && combo >= 0.0);
        let twice = rkhs_norm_squared(&m, &|u| 2.0 * g1(u), eps, res).unwrap();
        prop_assert!(rel_close(twice, 4.0 * n1, 1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn eb_prior_finite_exactly_on_support(seed in 0u64..1000, n in 20usize..80) {
        let x = circle_points(n, seed);
        let prior = EmpiricalBayesPrior::from_data(x.as_ref(), &EbSettings::default(), seed).unwrap();
        let lo = prior.gamma1 * prior.tn * prior.tn;
        for &t in &[lo * 0.5, lo, lo * (1.0 + 1e-9), (lo * 1.0f64).sqrt(), 0.5, 1.0, 1.0 + 1e-12, 2.0] {
            let v = eb_log_prior(t, &prior);
            prop_assert_eq!(v.is_finite(), t > lo && t <= 1.0, "t = {}, lo = {}, v = {}", t, lo, v);
        }
    }

    #[test]
    fn eb_density_ratio_independent_of_normalizer(seed in 0u64..1000, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let x = circle_points(60, seed);
        let prior = EmpiricalBayesPrior::from_data(x.as_ref(), &EbSettings::default(), seed).unwrap();
        let lo = prior.gamma1 * prior.tn * prior.tn;
        let (t1, t2) = (lo + (1.0 - lo) * f1.max(1e-6), lo + (1.0 - lo) * f2.max(1e-6));
        let raw = eb_log_prior(t1, &prior) - eb_log_prior(t2, &prior);
        let again = prior.log_density(t1) - prior.log_density(t2);
        let normed = Normalized::empirical_bayes(prior.clone()).unwrap();
        let via_norm = normed.log_density(t1) - normed.log_density(t2);
        prop_assert_eq!(raw, again);
        prop_assert!((raw - via_norm).abs() <= 1e-9 * raw.abs().max(1.0));
    }

    #[test]
    fn chain_reproducible_and_inside_eb_support(seed in 0u64..1000) {
        let ds = gen_circle(40, CircleSpec::default(), 0.1, seed, None).unwrap();
        let prior = EmpiricalBayesPrior::from_data(ds.x.as_ref(), &EbSettings::default(), seed).unwrap();
        let cfg = MHConfig { n_iter: 400, burn_in: 100, seed, ..MHConfig::default() };
        let a = mh_sample_bandwidth(ds.x.as_ref(), &ds.y, &prior, 0.01, &cfg).unwrap();
        let b = mh_sample_bandwidth(ds.x.as_ref(), &ds.y, &prior, 0.01, &cfg).unwrap();
        prop_assert_eq!(a.samples.iter().map(|t| t.to_bits()).collect::<Vec<_>>(), b.samples.iter().map(|t| t.to_bits()).collect::<Vec<_>>());
        let lo = prior.gamma1 * prior.tn * prior.tn;
        prop_assert!(a.samples.iter().all(|&t| t > lo && t <= 1.0));
        prop_assert_eq!(a.samples.len(), 300);
    }

    #[test]
    fn generators_deterministic_and_in_unit_cube(seed in any::<u64>(), n in 1usize..300) {
        let sets = [
            gen_swiss_roll(n, 0.1, seed).unwrap(),
            gen_mixed_union(n.max(2), 0.1, seed).unwrap(),
            gen_circle(n, CircleSpec { ambient_dim: 5, ..CircleSpec::default() }, 0.1, seed, None).unwrap(),
        ];
        let again = [
            gen_swiss_roll(n, 0.1, seed).unwrap(),
            gen_mixed_union(n.max(2), 0.1, seed).unwrap(),
            gen_circle(n, CircleSpec { ambient_dim: 5, ..CircleSpec::default() }, 0.1, seed, None).unwrap(),
        ];
        for (a, b) in sets.iter().zip(&again) {
            prop_assert_eq!(a, b);
            for i in 0..a.n() {
                for j in 0..a.dim() {
                    prop_assert!((0.0..=1.0).contains(&a.x[(i, j)]));
                }
            }
        }
    }

    #[test]
    fn predictions_linear_in_targets(seed in 0u64..1000, c in -3.0f64..3.0) {
        let ds = gen_swiss_roll(60, 0.1, seed).unwrap();
        let xt = gen_swiss_roll(20, 0.1, seed + 1).unwrap().x;
        let yc: Vec<f64> = ds.y.iter().map(|v| c * v).collect();
        for method in [Method::EbGp, Method::GammaGp, Method::KernelRidgeCv] {
            let mut cfg = EstimatorConfig::with_method(method);
            cfg.mh = MHConfig { n_iter: 20, burn_in: 5, proposal_step: 0.0, initial_t: InitialBandwidth::Value(0.05), ..MHConfig::default() };
            cfg.rho = RhoSpec::Value(2.0);
            cfg.cv_grid = vec![0.05];
            let a = fit_predict(ds.x.as_ref(), &ds.y, xt.as_ref(), &cfg).unwrap();
            let b = fit_predict(ds.x.as_ref(), &yc, xt.as_ref(), &cfg).unwrap();
            let scaled: Vec<f64> = a.test.unwrap().iter().map(|v| c * v).collect();
            let got = b.test.unwrap();
            prop_assert!(vec_rel_err(&got, &scaled) < 1e-9 || scaled.iter().all(|v| v.abs() < 1e-12), "{}", method);
        }
    }

    #[test]
    fn training_row_permutation_invariance(
        (seed, perm) in (0u64..1000, permutation(50)),
    ) {
        let ds = gen_swiss_roll(50, 0.1, seed).unwrap();
        let xt = gen_swiss_roll(15, 0.1, seed + 7).unwrap().x;
        let xp = rows_permuted(&ds.x, &perm);
        let yp: Vec<f64> = perm.iter().map(|&i| ds.y[i]).collect();
        for method in Method::ALL {
            let mut cfg = EstimatorConfig::with_method(method);
            cfg.mh = MHConfig { n_iter: 60, burn_in: 20, seed, ..MHConfig::default() };
            cfg.rho = RhoSpec::Value(2.0);
            // a single-bandwidth grid makes the validation split irrelevant
            cfg.cv_grid = vec![0.03];
            let a = fit_predict(ds.x.as_ref(), &ds.y, xt.as_ref(), &cfg).unwrap();
            let b = fit_predict(xp.as_ref(), &yp, xt.as_ref(), &cfg).unwrap();
            let unperm: Vec<f64> = {
                let mut v = vec![0.0; 50];
                for (k, &i) in perm.iter().enumerate() {
                    v[i] = b.train[k];
                }
                v
            };
            prop_assert!(vec_rel_err(&unperm, &a.train) < 1e-7, "{} train", method);
            match (a.test, b.test) {
                (Some(ta), Some(tb)) => prop_assert!(vec_rel_err(&tb, &ta) < 1e-7, "{} test", method),
                (None, None) => prop_assert_eq!(method, Method::SinglePoint),
                _ => prop_assert!(false),
            }
            if method == Method::SinglePoint {
                prop_assert_eq!(&a.train, &ds.y);
            }
        }
    }
}

#[test]
fn g_epsilon_stable_under_node_doubling() {
    let m = ParamManifold::circle(1.0).unwrap();
    let s = ParamManifold::segment(1.0).unwrap();
    let f = |u: f64| 1.0 + 0.3 * u.sin();
    for eps in [1e-2, 1e-3, 1e-4] {
        for (man, u0) in [(&m, 0.7), (&s, 0.4)] {
            let base = man.required_nodes(eps);
            let a = g_epsilon_apply(man, &f, u0, eps, Resolution::Nodes(base)).unwrap();
            let b = g_epsilon_apply(man, &f, u0, eps, Resolution::Nodes(2 * base)).unwrap();
            assert!(rel_close(a, b, 1e-6), "eps {eps}: {a} vs {b}");
        }
    }
}

fn pass_rates_over_seeds(check: impl Fn(&ebgp::datagen::Dataset, &CircleSpec) -> f64) -> Vec<f64> {
    let spec = CircleSpec::default();
    (0..10).map(|seed| check(&gen_circle(2000, spec, 0.0, 1000 + seed, None).unwrap(), &spec)).collect()
}

fn assert_within_two_points(name: &str, rates: &[f64]) {
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let worst = rates.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.02, "{name} pass rates {rates:?} deviate {worst:.3} from mean {mean:.3}");
}

#[test]
fn affinity_band_pass_rate_stable_across_seeds() {
    let grid = ebgp::priors::log_grid(1e-3, 1e-2, 20);
    let rates = pass_rates_over_seeds(|ds, spec| {
        let a = ebgp::oracles::affinity_band_check(ds.x.as_ref(), spec.density(), 1, &grid, 0.01).unwrap();
        a.rows.iter().filter(|r| r.pass).count() as f64 / a.rows.len() as f64
    });
    assert_within_two_points("affinity", &rates);
}

#[test]
fn knn_band_pass_rate_stable_across_seeds() {
    let rates = pass_rates_over_seeds(|ds, spec| ebgp::oracles::knn_band_check(ds.x.as_ref(), spec.density(), 1, 0.25).unwrap().pass_fraction);
    assert_within_two_points("knn", &rates);
}

#[test]
fn adding_a_method_keeps_other_cells() {
    let base = Scenario {
        generator: Generator::SwissRoll,
        methods: vec![Method::SinglePoint],
        n_list: vec![30, 60],
        repeats: 3,
        n_test: 50,
        record_wall_time: false,
        master_seed: 11,
        ..Scenario::default()
    };
    let wider = Scenario { methods: vec![Method::GpMedian, Method::SinglePoint], ..base.clone() };
    let a = run_benchmark(&base, 1).unwrap();
    let b = run_benchmark(&wider, 1).unwrap();
    let pick = |r: &ebgp::eval::BenchmarkReport| r.rows.iter().filter(|r| r.method == Method::SinglePoint).cloned().collect::<Vec<_>>();
    assert_eq!(pick(&a), pick(&b));
}

#[test]
fn aggregates_match_rows_and_ignore_order() {
    let sc = Scenario {
        methods: vec![Method::SinglePoint, Method::GpMedian],
        n_list: vec![25, 50],
        repeats: 4,
        n_test: 40,
        record_wall_time: false,
        ..Scenario::default()
    };
    let rep = run_benchmark(&sc, 1).unwrap();
    for agg in &rep.aggregates {
        let vals: Vec<f64> = rep.rows.iter().filter(|r| r.method == agg.method && r.n == agg.n).filter_map(|r| r.in_sample_error).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((agg.in_sample.unwrap().mean - mean).abs() <= 1e-12);
    }
    let mut rows = rep.rows.clone();
    rows.reverse();
    rows.rotate_left(3);
    let again = aggregate_rows(&rows);
    for (a, b) in rep.aggregates.iter().zip(&again) {
        assert_eq!((a.method, a.n, a.failures), (b.method, b.n, b.failures));
        let (x, y) = (a.in_sample.unwrap(), b.in_sample.unwrap());
        assert!((x.mean - y.mean).abs() <= 1e-12 && (x.std - y.std).abs() <= 1e-12);
    }
}

#[test]
fn identical_seed_gives_identical_report_bytes() {
    let sc = Scenario {
        methods: vec![Method::SinglePoint, Method::EbGp],
        n_list: vec![40],
        repeats: 2,
        n_test: 30,
        record_wall_time: false,
        estimator: EstimatorConfig { mh: MHConfig { n_iter: 50, burn_in: 10, ..MHConfig::default() }, ..EstimatorConfig::default() },
        ..Scenario::default()
    };
    let render = |threads| {
        let rep = run_benchmark(&sc, threads).unwrap();
        let (mut j, mut c) = (Vec::new(), Vec::new());
        rep.write_json(&mut j).unwrap();
        rep.write_csv(&mut c).unwrap();
        (j, c)
    };
    let first = render(1);
    assert_eq!(first, render(1));
    assert_eq!(first, render(2));
}
