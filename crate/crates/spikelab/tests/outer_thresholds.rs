//! Outer matching: χ quadratures, quasi-equilibria and thresholds.

use proptest::prelude::*;
use spikelab::core_problem::{cached_fold, schnakenberg_fold, CoreModel};
use spikelab::outer::{
    chi, chi_below_v_infty, critical_a, critical_f, first_threshold, gm_small_kappa,
    gm_small_kappa_h0, norep_bound, nucleation_threshold, outer_profile, replication_threshold,
    script_f_b, script_f_s, small_param_threshold, solve_quasi_equilibrium, CriticalAMode,
    OuterOptions, ThresholdKind,
};
use spikelab::ModelSpec;

fn sch(a: f64) -> ModelSpec {
    ModelSpec::schnakenberg(a, 1.0, 0.01, 2.0).unwrap()
}

fn bru(f: f64) -> ModelSpec {
    ModelSpec::brusselator(1.0, f, 0.01, 2.0).unwrap()
}

fn gm(kappa: f64) -> ModelSpec {
    ModelSpec::gm(kappa, 1.0, 0.01, 1.0).unwrap()
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

/// Five-point Gauss–Legendre on `[lo, hi]`.
fn gauss5(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const X: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    X.iter().zip(W).map(|(x, w)| w * f(c + r * x)).sum::<f64>() * r
}

/// Schnakenberg `χ(μ) = ∫_{v₀}^{μ} g(ξ)/√(𝒢(μ) − 𝒢(ξ)) dξ` with the
/// closed forms of `g` and `𝒢` written out here, after `ξ = μ − s²`, by
/// composite Simpson. Close to `μ` the difference of `𝒢` is integrated from
/// `𝒢′ = −(ξ − a − b)g` instead of subtracting nearly equal values.
fn chi_schnakenberg_oracle(a: f64, b: f64, mu: f64, v0: f64) -> f64 {
    let g = |x: f64| (2.0 * a - x) / x.powi(3);
    let big_g = |x: f64| -a * (a + b) / (x * x) + (3.0 * a + b) / x + x.ln();
    let delta_g = |xi: f64| {
        if mu - xi < 1e-2 * (mu - v0) {
            gauss5(|t| -(t - a - b) * g(t), xi, mu)
        } else {
            big_g(mu) - big_g(xi)
        }
    };
    let integrand = |s: f64| {
        if s == 0.0 {
            // ΔG ≈ 𝒢′(μ)s²; when g(μ) = 0 both vanish and the integrand tends to 0
            let g_mu = g(mu);
            if g_mu == 0.0 {
                0.0
            } else {
                2.0 * g_mu / (-(mu - a - b) * g_mu).sqrt()
            }
        } else {
            let xi = mu - s * s;
            2.0 * s * g(xi) / delta_g(xi).sqrt()
        }
    };
    let s_max = (mu - v0).sqrt();
    let n = 20_000;
    let h = s_max / n as f64;
    let mut sum = integrand(0.0) + integrand(s_max);
    for i in 1..n {
        sum += integrand(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

#[test]
fn chi_matches_an_independent_singular_form_quadrature() {
    for (a, mu, v0) in [
        (0.5, 1.0, 0.5 * 1.0001),
        (0.5, 0.8, 0.52),
        (0.2, 0.35, 0.21),
        (0.3, 0.6, 0.31),
    ] {
        let ours = chi(&sch(a), mu, v0).unwrap();
        let oracle = chi_schnakenberg_oracle(a, 1.0, mu, v0);
        assert!(
            (ours - oracle).abs() < 1e-6,
            "a={a} mu={mu}: {ours} vs {oracle}"
        );
    }
}

#[test]
fn chi_grows_without_bound_below_the_homogeneous_state() {
    let spec = sch(1.5);
    let values: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&d| chi_below_v_infty(&spec, d, 1.5 * 1.01).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[1] > w[0] + 0.1), "{values:?}");
    // the quasi-equilibrium exists for every D_L in the no-instability regime
    for length in [0.5, 2.0, 8.0, 30.0] {
        let s = solve_quasi_equilibrium(&spec, 1, length, &OuterOptions::default()).unwrap();
        assert!(s.converged && s.regime_hit.is_none(), "L={length}");
    }
}

#[test]
fn published_replication_thresholds() {
    let opts = OuterOptions::default();
    for (spec, k, expected) in [
        (sch(0.2), 1, 1.98),
        (sch(0.2), 2, 3.96),
        (bru(0.8), 1, 1.02),
    ] {
        let r = replication_threshold(&spec, k, &opts).unwrap();
        assert_eq!(r.kind, ThresholdKind::Replication);
        assert!(
            rel(r.l_crit, expected) < 0.01,
            "{:?} K={k}: {}",
            spec.kind(),
            r.l_crit
        );
    }
}

#[test]
fn published_nucleation_thresholds() {
    let opts = OuterOptions::default();
    for (spec, k, expected, tol) in [
        (sch(0.5), 1, 1.65, 0.01),
        (sch(0.5), 2, 3.26, 0.03),
        (bru(0.7), 1, 1.35, 0.01),
        (gm(0.5), 2, 7.8, 0.03),
    ] {
        let r = nucleation_threshold(&spec, k, &opts).unwrap();
        assert_eq!(r.kind, ThresholdKind::Nucleation);
        assert!(
            rel(r.l_crit, expected) < tol,
            "{:?} K={k}: {}",
            spec.kind(),
            r.l_crit
        );
    }
    let g1 = nucleation_threshold(&gm(0.5), 1, &opts).unwrap().l_crit;
    assert!((3.81..=3.89).contains(&g1), "GM L1 = {g1}");
}

#[test]
fn threshold_records_are_self_consistent() {
    let opts = OuterOptions::default();
    for spec in [sch(0.2), sch(0.5), bru(0.7), bru(0.8), gm(0.5)] {
        for k in [1, 2] {
            let r = first_threshold(&spec, k, &opts).unwrap();
            assert!(rel(r.d_l_crit, spec.big_d / (r.l_crit * r.l_crit)) < 1e-10);
            assert_eq!(r.k, k);
        }
    }
}

#[test]
fn thresholds_agree_on_the_critical_curve() {
    let spec = sch(0.2);
    let a_c = critical_a(1.0, spec.eps_over_sqrt_d(), CriticalAMode::Full).unwrap();
    // exactly on the curve rounding decides which mechanism applies
    let opts = OuterOptions::default();
    let rep = replication_threshold(&sch(a_c * (1.0 - 1e-6)), 1, &opts)
        .unwrap()
        .l_crit;
    let nuc = nucleation_threshold(&sch(a_c * (1.0 + 1e-6)), 1, &opts)
        .unwrap()
        .l_crit;
    assert!(
        rel(rep, nuc) < 1e-3,
        "replication {rep} vs nucleation {nuc}"
    );
}

#[test]
fn critical_values() {
    let e = 0.01 / 2f64.sqrt();
    let full = critical_a(1.0, e, CriticalAMode::Full).unwrap();
    assert!((full - 0.258).abs() < 0.003, "a_c = {full}");
    let b_c = schnakenberg_fold().unwrap().b_c;
    let hand = 1.0 / (2.0 * b_c * b_c + 3.0 - 4.0 * 2f64.ln());
    let closed = critical_a(1.0, e, CriticalAMode::ClosedForm).unwrap();
    assert!(rel(closed, hand) < 1e-12, "{closed} vs {hand}");
    assert!((hand - 0.2594).abs() < 5e-4);
    let f_c = critical_f().unwrap();
    assert!((f_c - 0.769).abs() < 0.005, "f_c = {f_c}");
}

#[test]
fn small_parameter_closed_forms() {
    let b_c = schnakenberg_fold().unwrap().b_c;
    let hand = 2f64.sqrt() / 0.2 * (0.2 * b_c).atanh();
    let r = small_param_threshold(&sch(0.2), 1).unwrap();
    assert!(rel(r.l_crit, hand) < 1e-3, "{} vs {hand}", r.l_crit);
    assert!((hand - 1.95).abs() < 0.01);

    let b_c8 = cached_fold(CoreModel::Brusselator { f: 0.8 }).unwrap().b_c;
    let a = 0.1;
    let spec = ModelSpec::brusselator(a, 0.8, 0.01, 2.0).unwrap();
    for k in [1, 2] {
        let hand = 2f64.sqrt() * k as f64 * (b_c8 * 0.2f64.sqrt()).atanh() / (a * 0.2f64.sqrt());
        let r = small_param_threshold(&spec, k).unwrap();
        assert!(rel(r.l_crit, hand) < 1e-3, "K={k}: {} vs {hand}", r.l_crit);
    }

    let h = gm_small_kappa_h0(1.0, 1.0, 0.01);
    assert!((h.h0 - 1f64.tanh() / 3.0).abs() < 1e-14);
    assert!((h.h0 - 0.2539).abs() < 1e-4);
}

#[test]
fn gm_quasi_equilibrium_agrees_with_the_small_kappa_form() {
    let spec = gm(0.5);
    let s = solve_quasi_equilibrium(&spec, 1, 3.0, &OuterOptions::default()).unwrap();
    let approx = gm_small_kappa(&spec, 1, 3.0).unwrap();
    let h0l = s.h0l.expect("GM solves report H0/eps_L");
    assert!(rel(h0l, approx.h_at_0) < 0.15, "{h0l} vs {}", approx.h_at_0);
    assert!(s.v0plus > 0.5);
}

#[test]
fn nucleation_near_threshold_approaches_the_upper_bound() {
    let spec = sch(0.5);
    let opts = OuterOptions::default();
    let l1 = nucleation_threshold(&spec, 1, &opts).unwrap().l_crit;
    let s = solve_quasi_equilibrium(&spec, 1, 0.999 * l1, &opts).unwrap();
    assert!(s.converged);
    assert!((s.mu - 1.0).abs() < 0.02, "mu = {}", s.mu);
}

#[test]
fn no_instability_bounds() {
    assert!((script_f_s(2.0) - (2.0 * 2f64.ln() - 1.0).sqrt()).abs() < 1e-15);
    // the quoted 0.386 is the value under the square root
    assert!((script_f_s(2.0).powi(2) - 0.3863).abs() < 1e-4);
    let fs: Vec<f64> = (1..50).map(|i| script_f_b(i as f64 * 0.01)).collect();
    assert!(fs.windows(2).all(|w| w[1] < w[0]));
    assert!(fs.iter().all(|&v| v < 1.0));
    assert!((script_f_b(1e-6) - 1.0).abs() < 1e-5);
    let bound = norep_bound(&bru(0.3)).unwrap();
    assert!(bound.no_replication && (bound.b_max - 1.0).abs() < 1e-6);
    assert!(norep_bound(&sch(1.5)).unwrap().no_replication);
}

#[test]
fn outer_profile_is_increasing() {
    let spec = sch(0.5);
    let s = solve_quasi_equilibrium(&spec, 1, 1.2, &OuterOptions::default()).unwrap();
    let x: Vec<f64> = (1..=50).map(|i| i as f64 / 50.0).collect();
    let v = outer_profile(&spec, &s, &x).unwrap();
    assert!(v.windows(2).all(|w| w[1] > w[0]));
    assert!((v[49] - s.mu).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn chi_is_increasing_in_mu(a in 0.1f64..0.9, t in 0.05f64..0.9) {
        let spec = sch(a);
        let v0 = a * 1.01;
        let mu = v0 + t * (2.0 * a - v0);
        let dmu = 1e-4 * a;
        prop_assert!(chi(&spec, mu + dmu, v0).unwrap() > chi(&spec, mu, v0).unwrap());
    }

    #[test]
    fn quasi_equilibrium_slope_increases_with_length(a in 0.1f64..0.24, l in 0.6f64..1.6) {
        let spec = sch(a);
        let opts = OuterOptions::default();
        let s1 = solve_quasi_equilibrium(&spec, 1, l, &opts);
        let s2 = solve_quasi_equilibrium(&spec, 1, l * 1.05, &opts);
        if let (Ok(s1), Ok(s2)) = (s1, s2) {
            prop_assert!(s2.mu > s1.mu);
            prop_assert!(s2.b.unwrap() > s1.b.unwrap());
        }
    }

    #[test]
    fn gm_core_amplitude_stays_above_kappa(kappa in 0.1f64..0.9, l in 0.5f64..3.0) {
        let spec = gm(kappa);
        if let Ok(s) = solve_quasi_equilibrium(&spec, 1, l, &OuterOptions::default()) {
            prop_assert!(s.v0plus > kappa);
        }
    }
}
