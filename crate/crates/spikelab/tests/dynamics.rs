//! Growing-domain integration and steady continuation in `L`.

use proptest::prelude::*;
use spikelab::continuation::{
    one_spike_branch, steady_solve, ContinuationOptions, Stability, SteadyGuess, STEADY_TOL,
};
use spikelab::grid::{mirror_half, Mesh};
use spikelab::outer::{nucleation_threshold, OuterOptions};
use spikelab::pde::{
    count_spikes, simulate_growing, CountParams, EventKind, InitialCondition, SimConfig,
};
use spikelab::ModelSpec;

fn sch(a: f64) -> ModelSpec {
    ModelSpec::schnakenberg(a, 1.0, 0.01, 2.0).unwrap()
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-12))
        .fold(0.0, f64::max)
}

#[test]
fn steady_state_does_not_drift_on_a_static_domain() {
    let spec = sch(0.5);
    let mesh = Mesh::full(1024);
    let steady = steady_solve(&spec, mesh, 1.2, &SteadyGuess::Spikes(1)).unwrap();
    let mut cfg = SimConfig::new(spec, 1.2);
    cfg.l0 = 1.2;
    cfg.rho = Some(0.0);
    cfg.t_end = Some(50.0);
    cfg.n = 1024;
    cfg.init = InitialCondition::FromSteady {
        z: steady.z.as_ref().clone(),
    };
    let traj = simulate_growing(&cfg).unwrap();
    assert_eq!(traj.final_length, 1.2);
    assert!(traj.events.entries.is_empty());
    let drift = max_rel_diff(&traj.final_state, &steady.z);
    assert!(drift < 1e-6, "drift {drift}");
}

#[test]
fn single_spike_states_are_even() {
    let spec = sch(0.5);
    let full = steady_solve(&spec, Mesh::full(1024), 1.2, &SteadyGuess::Spikes(1)).unwrap();
    let half = steady_solve(&spec, Mesh::half(512), 1.2, &SteadyGuess::Spikes(1)).unwrap();
    let z = full.z.as_ref();
    let pts = z.len() / 2;
    let asym = (0..pts)
        .map(|i| (z[2 * i] - z[2 * (pts - 1 - i)]).abs())
        .fold(0.0, f64::max);
    let vmax = z.iter().step_by(2).cloned().fold(0.0, f64::max);
    assert!(asym / vmax < 1e-8, "asymmetry {asym}");
    let mirrored = mirror_half(&half.z);
    assert!(max_rel_diff(&mirrored, z) < 1e-8);
    assert!(full.residual < STEADY_TOL && half.residual < STEADY_TOL);
}

#[test]
fn homogeneous_states_in_the_no_instability_regimes() {
    let s = steady_solve(&sch(1.5), Mesh::half(1024), 2.0, &SteadyGuess::Homogeneous).unwrap();
    assert!(s
        .z
        .chunks(2)
        .all(|p| (p[0] - 2.5).abs() < 1e-12 && (p[1] - 1.0 / 6.25).abs() < 1e-12));
    let gm = ModelSpec::gm(1.5, 1.0, 0.01, 1.0).unwrap();
    let s = steady_solve(&gm, Mesh::half(1024), 3.0, &SteadyGuess::Homogeneous).unwrap();
    assert!(s.z.chunks(2).all(|p| (p[0] - 2.5).abs() < 1e-12));
    assert!(steady_solve(&sch(0.5), Mesh::half(1024), 2.0, &SteadyGuess::Homogeneous).is_err());
}

#[test]
fn one_spike_branch_folds_near_the_nucleation_threshold() {
    let spec = sch(0.5);
    let opts = ContinuationOptions {
        l_min: 1.4,
        l_max: 2.5,
        ..Default::default()
    };
    let branch = one_spike_branch(&spec, 1024, 1.5, &opts).unwrap();
    let fold = branch.first_fold().expect("fold");
    assert!((fold - 1.66).abs() < 0.03, "fold at {fold}");
    let asymptotic = nucleation_threshold(&spec, 1, &OuterOptions::default())
        .unwrap()
        .l_crit;
    assert!((fold - asymptotic).abs() / asymptotic < 0.05);
    assert!(branch.points.iter().all(|p| p.residual < STEADY_TOL));

    let fold_index = branch.folds[0].index;
    let lower = &branch.points[..fold_index];
    assert!(
        lower
            .windows(2)
            .all(|w| w[1].measures.mu > w[0].measures.mu),
        "mu monotone up to the fold"
    );
    assert!(lower
        .iter()
        .filter(|p| p.length < fold - 0.05)
        .all(|p| p.stability == Stability::Stable));
    let past = &branch.points[fold_index + 1..];
    assert!(past
        .iter()
        .filter(|p| p.length < fold - 0.05)
        .any(|p| p.stability == Stability::Unstable));
    let at_fold = &branch.points[fold_index];
    let smallest = at_fold.eigen.as_ref().map(|e| {
        e.eigenvalues
            .iter()
            .chain(&e.drift_modes)
            .map(|(re, im)| re.hypot(*im))
            .fold(f64::INFINITY, f64::min)
    });
    assert!(smallest.unwrap_or(0.0) < 1e-3);
}

#[test]
fn no_fold_without_an_instability() {
    let opts = ContinuationOptions {
        l_min: 0.5,
        l_max: 6.0,
        stability: false,
        ..Default::default()
    };
    let branch = one_spike_branch(&sch(1.5), 2048, 1.0, &opts).unwrap();
    assert!(branch.folds.is_empty(), "folds {:?}", branch.folds);
    let l_max = branch.points.iter().map(|p| p.length).fold(0.0, f64::max);
    assert!(l_max >= 6.0 - 1e-9);
}

#[test]
fn growing_run_nucleates_at_the_boundary_first() {
    let mut cfg = SimConfig::new(sch(0.5), 2.0);
    cfg.rho = Some(1e-3);
    cfg.n = 2048;
    let traj = simulate_growing(&cfg).unwrap();
    assert!(traj.stats.min_value > 0.0);
    let first = traj.events.entries.first().expect("an event");
    assert_eq!(first.kind, EventKind::NucleationBoundary);
    assert!(
        first.length > 1.64 && first.length < 1.9,
        "L = {}",
        first.length
    );
    assert!(traj.events.entries.windows(2).all(|w| w[0].t <= w[1].t));
    for s in &traj.snapshots {
        assert!(s.v.iter().chain(&s.u).all(|x| *x > 0.0 && x.is_finite()));
        assert_eq!((2.0 * s.spikes.count).fract(), 0.0);
    }
}

#[test]
fn dilution_hardly_moves_events_at_slow_growth() {
    let run = |dilution: bool| {
        let mut cfg = SimConfig::new(sch(0.5), 1.8);
        cfg.l0 = 1.5;
        cfg.rho = Some(1e-4);
        cfg.n = 2048;
        cfg.dilution = dilution;
        simulate_growing(&cfg).unwrap().events.entries[0].length
    };
    let (plain, diluted) = (run(false), run(true));
    assert!(
        (plain - diluted).abs() / plain < 0.01,
        "{plain} vs {diluted}"
    );
}

/// Background `a` plus sech² spikes of inner width `eps` at `centers`.
fn synthetic(x: &[f64], a: f64, eps: f64, centers: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            a + centers
                .iter()
                .map(|c| 20.0 / ((xi - c) / eps).cosh().powi(2))
                .sum::<f64>()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn separated_spikes_are_counted(k in 1usize..6, boundary in any::<bool>()) {
        let n = 4096;
        let x: Vec<f64> = (0..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        let eps = 0.005;
        let mut centers: Vec<f64> = (0..k).map(|j| -1.0 + (2 * j + 1) as f64 / k as f64).collect();
        if boundary {
            centers.push(-1.0);
            centers.push(1.0);
        }
        let v = synthetic(&x, 0.5, eps, &centers);
        let c = count_spikes(&x, &v, 0.5, eps, &CountParams::default());
        let expected = k as f64 + if boundary { 1.0 } else { 0.0 };
        prop_assert_eq!(c.count, expected);
        prop_assert_eq!(c.boundary.iter().filter(|b| **b).count(), if boundary { 2 } else { 0 });
    }

    #[test]
    fn close_humps_merge_into_one_spike(sep in 0.5f64..4.0) {
        let n = 4096;
        let x: Vec<f64> = (0..=n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        let eps = 0.005;
        let v = synthetic(&x, 0.5, eps, &[-sep * eps, sep * eps]);
        let c = count_spikes(&x, &v, 0.5, eps, &CountParams::default());
        prop_assert_eq!(c.count, 1.0);
    }
}
