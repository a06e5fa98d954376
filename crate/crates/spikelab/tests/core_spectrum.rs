//! Core problem and core spectrum against published values and independent oracles.

use spikelab::core_problem::{
    cached_branch, cached_fold, continue_core_branch, farfield_constant, solve_core, BranchOptions,
    CoreGrid, CoreModel, CoreSolution, CoreTarget,
};
use spikelab::spectrum::{
    core_spectrum, coupled_eigenvalues, fold_mode_check, schur_reduced_eigenvalues,
};

const BRU_08: CoreModel = CoreModel::Brusselator { f: 0.8 };

fn gain(model: CoreModel) -> f64 {
    match model {
        CoreModel::Schnakenberg => 1.0,
        CoreModel::Brusselator { f } => f,
    }
}

/// Composite Simpson's rule on a uniform grid (falls back to a trapezoid
/// panel for an odd interval count).
fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    let m = n - n % 2;
    let mut s = values[0] + values[m];
    for (i, v) in values.iter().enumerate().take(m).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = s * h / 3.0;
    if m < n {
        total += 0.5 * h * (values[m] + values[n]);
    }
    total
}

/// Far-field intercept from the first-moment identity.
///
/// The substrate combination `W = U + sV` (with `s` the activator source in
/// the substrate equation) satisfies `W″ = (1 − f)UV²` with `W′(0) = 0`, so
/// `W(y) = W(0) + ∫₀^y (y − s)(1 − f)UV² ds` and, once `V` has decayed,
/// `W ~ By + W(0) − (1 − f)∫₀^∞ s UV² ds`.
fn c_from_moment(sol: &CoreSolution) -> f64 {
    let (weight, source) = match sol.model {
        CoreModel::Schnakenberg => (1.0, 0.0),
        CoreModel::Brusselator { f } => (1.0 - f, 1.0),
    };
    let moment: Vec<f64> = sol
        .y
        .iter()
        .zip(&sol.v)
        .zip(&sol.u)
        .map(|((y, v), u)| y * u * v * v)
        .collect();
    sol.u[0] + source * sol.v[0] - weight * simpson(&moment, sol.h())
}

fn flux(sol: &CoreSolution) -> f64 {
    let weight = match sol.model {
        CoreModel::Schnakenberg => 1.0,
        CoreModel::Brusselator { f } => 1.0 - f,
    };
    let integrand: Vec<f64> = sol.v.iter().zip(&sol.u).map(|(v, u)| u * v * v).collect();
    weight * simpson(&integrand, sol.h())
}

#[test]
fn schnakenberg_fold_matches_published_values() {
    let fold = cached_fold(CoreModel::Schnakenberg).unwrap();
    assert!((fold.b_c - 1.347).abs() < 0.005, "B_c = {}", fold.b_c);
    assert!(
        (fold.beta_c - 1.015).abs() < 0.01,
        "beta_c = {}",
        fold.beta_c
    );
    assert!((fold.c_c - 0.247).abs() < 0.01, "C_s = {}", fold.c_c);
}

#[test]
fn brusselator_folds_match_published_values() {
    let f08 = cached_fold(BRU_08).unwrap();
    assert!((f08.b_c - 0.685).abs() < 0.005, "B_c(0.8) = {}", f08.b_c);
    let f095 = cached_fold(CoreModel::Brusselator { f: 0.95 }).unwrap();
    assert!((f095.b_c - 0.245).abs() < 0.005, "B_c(0.95) = {}", f095.b_c);
    assert!((f095.c_c - 1.36).abs() < 0.02, "C_b(0.95) = {}", f095.c_c);
    let f06 = cached_fold(CoreModel::Brusselator { f: 0.6 }).unwrap();
    assert!(f06.b_c > f08.b_c, "B_c decreases with f");
}

#[test]
fn small_slope_limit_of_beta() {
    for model in [CoreModel::Schnakenberg, BRU_08] {
        let sol = solve_core(model, CoreTarget::B(1e-3), CoreGrid::default(), None).unwrap();
        let limit = 1.5 / gain(model);
        assert!(
            (sol.beta - limit).abs() < 1e-2,
            "{model:?}: beta = {} vs {limit}",
            sol.beta
        );
    }
}

#[test]
fn lower_branch_profile_is_a_volcano() {
    let fold = cached_fold(CoreModel::Schnakenberg).unwrap();
    let seed = fold.solution.as_deref();
    let sol = solve_core(
        CoreModel::Schnakenberg,
        CoreTarget::Beta(fold.beta_c - 0.05),
        CoreGrid::default(),
        seed,
    )
    .unwrap();
    assert!(sol.b < fold.b_c);
    assert!(sol.is_volcano());
    let vmax = sol.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(sol.v[0] < vmax);
}

#[test]
fn flux_identity_and_moment_oracle() {
    for (model, b) in [
        (CoreModel::Schnakenberg, 0.5),
        (CoreModel::Schnakenberg, 1.1),
        (BRU_08, 0.4),
        (BRU_08, 0.6),
    ] {
        let sol = solve_core(model, CoreTarget::B(b), CoreGrid::default(), None).unwrap();
        assert!(
            ((flux(&sol) - b) / b).abs() < 1e-4,
            "{model:?} B={b}: flux {}",
            flux(&sol)
        );
        let oracle = c_from_moment(&sol);
        assert!(
            (oracle - sol.c).abs() < 1e-3,
            "{model:?} B={b}: C {} vs moment {oracle}",
            sol.c
        );
        let ff = farfield_constant(&sol).unwrap();
        assert!((ff.c - sol.c).abs() < 1e-9);
    }
}

#[test]
fn far_field_constant_is_positive_on_primary_branches() {
    for f in [0.6, 0.7, 0.8, 0.9] {
        let branch = cached_branch(CoreModel::Brusselator { f }).unwrap();
        assert!(branch.primary().all(|s| s.c > 0.0), "f = {f}");
    }
    let branch = cached_branch(CoreModel::Schnakenberg).unwrap();
    assert!(branch.primary().all(|s| s.c > 0.0));
}

#[test]
fn fold_is_independent_of_truncation_length() {
    let h = CoreGrid::default().h();
    let fold_at = |y_max: f64| {
        let grid = CoreGrid {
            y_max,
            n: (y_max / h).round() as usize,
        };
        let opts = BranchOptions {
            grid,
            keep_solutions: false,
            ..Default::default()
        };
        continue_core_branch(CoreModel::Schnakenberg, &opts)
            .unwrap()
            .fold
            .unwrap()
            .b_c
    };
    let (short, long) = (fold_at(15.0), fold_at(20.0));
    assert!((short - long).abs() < 1e-4, "B_c {short} vs {long}");
}

#[test]
fn discretisation_residual_decreases_at_second_order() {
    // C converges at second order: the three-grid ratio of differences is ~4
    let c_at = |n: usize| {
        solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::B(0.8),
            CoreGrid { y_max: 16.0, n },
            None,
        )
        .unwrap()
        .c
    };
    let (c1, c2, c3) = (c_at(800), c_at(1600), c_at(3200));
    let ratio = (c1 - c2) / (c2 - c3);
    assert!((ratio - 4.0).abs() < 0.5, "convergence ratio {ratio}");
}

#[test]
fn zero_eigenvalue_and_dimple_mode_at_the_fold() {
    for model in [CoreModel::Schnakenberg, BRU_08] {
        let fold = cached_fold(model).unwrap();
        let sol = fold.solution.expect("fold profile is retained");
        let check = fold_mode_check(&sol, 1e-4).unwrap();
        assert!(
            check.lambda.norm() < 1e-3,
            "{model:?}: lambda = {}",
            check.lambda
        );
        assert!(
            check.similarity > 0.99,
            "{model:?}: similarity = {}",
            check.similarity
        );
        assert!(check.dimple);
        assert!(
            check.pair_residual < 1e-3,
            "{model:?}: pair residual {}",
            check.pair_residual
        );
    }
}

#[test]
fn primary_branch_is_stable_and_lower_branch_unstable() {
    let fold = cached_fold(CoreModel::Schnakenberg).unwrap();
    let seed = fold.solution.as_deref();
    let upper = solve_core(
        CoreModel::Schnakenberg,
        CoreTarget::Beta(1.2),
        CoreGrid::default(),
        None,
    )
    .unwrap();
    assert!(core_spectrum(&upper, 1).unwrap().leading().re < 0.0);
    let lower = solve_core(
        CoreModel::Schnakenberg,
        CoreTarget::Beta(fold.beta_c - 0.03),
        CoreGrid::default(),
        seed,
    )
    .unwrap();
    let lead = core_spectrum(&lower, 1).unwrap().leading();
    assert!(
        lead.re > 0.0 && lead.im.abs() < 1e-8,
        "lower branch leading {lead}"
    );
    for b in [0.2, 0.4, 0.6] {
        let sol = solve_core(BRU_08, CoreTarget::B(b), CoreGrid::default(), None).unwrap();
        assert!(
            core_spectrum(&sol, 1).unwrap().leading().re < 0.0,
            "Brusselator B={b}"
        );
    }
}

#[test]
fn eigenvalues_are_grid_converged_and_formulation_independent() {
    let at = |n: usize| {
        let sol = solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::Beta(1.2),
            CoreGrid { y_max: 16.0, n },
            None,
        )
        .unwrap();
        (core_spectrum(&sol, 2).unwrap(), sol)
    };
    let (coarse, _) = at(1600);
    let (fine, sol) = at(3200);
    for (a, b) in coarse.eigenvalues.iter().zip(&fine.eigenvalues) {
        assert!((a - b).norm() < 1e-4, "{a} vs {b}");
    }
    let coupled = coupled_eigenvalues(&sol, 0.1, 2).unwrap();
    let lead = fine.leading();
    let nearest = coupled
        .iter()
        .map(|l| (l - lead).norm())
        .fold(f64::INFINITY, f64::min);
    assert!(nearest < 1e-6, "coupled formulation differs by {nearest}");
    let reduced = schur_reduced_eigenvalues(&sol, 400).unwrap();
    let nearest = reduced
        .iter()
        .map(|l| (l - lead).norm())
        .fold(f64::INFINITY, f64::min);
    assert!(
        nearest < 1e-2,
        "coarse Schur-reduced spectrum differs by {nearest}"
    );
}
