//! Properties of the outer reductions and the regime classifier.

use proptest::prelude::*;
use spikelab::models::{
    brusselator_from_physical, classify_regime_with, gm_from_physical, outer_reduction, Model,
    OuterReduction, RegimeOptions,
};
use spikelab::ModelSpec;

fn opts() -> RegimeOptions {
    RegimeOptions {
        a_c: None,
        f_c: Some(0.768),
        b_c: Some(1.3474),
    }
}

/// Central difference with a step scaled to the argument.
fn derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1e-3);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn schnakenberg_reaction_negative_and_first_integral_increasing(a in 0.01f64..0.99, t in 0.001f64..0.999) {
        let red = OuterReduction::new(Model::Schnakenberg { a, b: 1.0 });
        let xi = a * (1.0 + t);
        prop_assert!(red.r(xi) < 0.0);
        prop_assert!(red.big_g_prime(xi) > 0.0);
    }

    #[test]
    fn brusselator_reaction_negative_and_first_integral_increasing(
        a in 0.1f64..3.0, f in 0.501f64..0.999, t in 0.001f64..0.999,
    ) {
        let red = OuterReduction::new(Model::Brusselator { a, f });
        let xi = a * (1.0 + t);
        prop_assert!(red.r(xi) < 0.0);
        prop_assert!(red.big_g_prime(xi) > 0.0);
    }

    #[test]
    fn gm_reaction_negative_and_first_integral_increasing(kappa in 0.02f64..0.98, t in 0.001f64..0.999) {
        let red = OuterReduction::new(Model::Gm { kappa, tau: 1.0 });
        let xi = kappa * (1.0 + t);
        prop_assert!(red.r(xi) < 0.0);
        prop_assert!(red.big_g_prime(xi) > 0.0);
    }

    #[test]
    fn first_integral_derivative_matches_finite_difference(
        which in 0usize..3, p in 0.05f64..0.95, t in 0.05f64..0.95,
    ) {
        let model = match which {
            0 => Model::Schnakenberg { a: p, b: 1.0 },
            1 => Model::Brusselator { a: 1.0, f: 0.5 + 0.5 * p },
            _ => Model::Gm { kappa: p, tau: 1.0 },
        };
        let red = OuterReduction::new(model);
        let xi = red.wellposed_lo + t * (red.wellposed_hi - red.wellposed_lo);
        let fd = derivative(|x| red.big_g(x), xi);
        let exact = red.big_g_prime(xi);
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "fd {fd} exact {exact}");
    }

    #[test]
    fn model_spec_json_round_trips(which in 0usize..3, p in 0.05f64..0.95, eps in 0.001f64..0.05, d in 0.5f64..10.0) {
        let spec = match which {
            0 => ModelSpec::schnakenberg(p, 1.0, eps, d),
            1 => ModelSpec::brusselator(1.0, p, eps, d),
            _ => ModelSpec::gm(p, 1.0, eps, d),
        }
        .unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn classification_commutes_with_brusselator_conversion(
        e in 0.1f64..5.0, b in 0.05f64..8.0, d_u in 0.5f64..4.0, length in 0.5f64..2.0,
    ) {
        let converted = brusselator_from_physical(e, b, 1e-4, d_u, length).unwrap();
        let bp1 = b + 1.0;
        let direct = ModelSpec::brusselator(e / bp1.powf(1.5), b / bp1, converted.epsilon, converted.big_d).unwrap();
        prop_assert_eq!(
            classify_regime_with(&converted, &opts()).unwrap(),
            classify_regime_with(&direct, &opts()).unwrap()
        );
    }

    #[test]
    fn classification_commutes_with_gm_conversion(
        mu_a in 0.1f64..2.0, nu_a in 0.1f64..2.0, mu_h in 0.1f64..2.0, nu_h in 0.1f64..2.0, delta_a in 0.0f64..2.0,
    ) {
        let d_a = 1e-4 * mu_a;
        let converted = gm_from_physical(mu_a, nu_a, mu_h, nu_h, delta_a, d_a, mu_h).unwrap();
        let kappa = delta_a * nu_h / (mu_h * nu_a);
        prop_assume!(kappa > 0.0);
        let direct = ModelSpec::gm(kappa, mu_a / mu_h, 0.01, 1.0).unwrap();
        prop_assert_eq!(
            classify_regime_with(&converted, &opts()).unwrap(),
            classify_regime_with(&direct, &opts()).unwrap()
        );
    }
}

#[test]
fn gm_reaction_is_unbounded_near_the_lower_end() {
    let red = OuterReduction::new(Model::Gm {
        kappa: 0.4,
        tau: 1.0,
    });
    assert!(red.r(0.4 * (1.0 + 1e-9)) < -1e6);
}

#[test]
fn outer_reduction_validates_the_spec() {
    let spec = ModelSpec::schnakenberg(0.3, 1.0, 0.01, 2.0).unwrap();
    let red = outer_reduction(&spec).unwrap();
    assert_eq!(red.wellposed_lo, 0.3);
    assert_eq!(red.mu_max, 0.6);
}
