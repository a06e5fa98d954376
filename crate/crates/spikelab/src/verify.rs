//! Reference checks shared by the test suite and `spikelab verify`.
//!
//! Every criterion bundles a handful of [`Check`]s: golden values with their
//! tolerances, invariants, and comparisons with small independent oracles
//! (an RK4 shooting solver for the core problem, a singular-form quadrature of
//! `χ`) that live here rather than in the solvers they check.

use crate::continuation::{
    one_spike_branch, one_spike_branch_both_ways, ContinuationOptions, SteadyBranch,
};
use crate::core_problem::{
    cached_fold, continue_core_branch, farfield_constant, schnakenberg_fold, solve_core,
    BranchOptions, CoreGrid, CoreModel, CoreTarget, TAIL_TOL,
};
use crate::error::{Result, SpikeError};
use crate::models::{Model, ModelSpec, OuterReduction};
use crate::numerics::logspace;
use crate::outer::{
    chi, critical_a, critical_f, first_threshold, gm_small_kappa, norep_bound, script_f_s,
    small_param_threshold, solve_quasi_equilibrium, CriticalAMode, OuterOptions, ThresholdKind,
};
use crate::pde::{simulate_growing, EventKind, SimConfig, SimTrajectory};
use crate::spectrum::fold_mode_check;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One comparison inside a criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub value: f64,
    /// Human-readable target, e.g. `1.347 ± 0.005` or `< 1e-6`.
    pub expected: String,
    pub passed: bool,
}

impl Check {
    pub fn within(label: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self {
            label: label.into(),
            value,
            expected: format!("{target} ± {tol}"),
            passed: (value - target).abs() <= tol,
        }
    }

    pub fn relative(label: impl Into<String>, value: f64, target: f64, rel: f64) -> Self {
        Self {
            label: label.into(),
            value,
            expected: format!("{target:.6} ± {}%", 100.0 * rel),
            passed: ((value - target) / target).abs() <= rel,
        }
    }

    pub fn range(label: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            value,
            expected: format!("[{lo}, {hi}]"),
            passed: (lo..=hi).contains(&value),
        }
    }

    pub fn below(label: impl Into<String>, value: f64, max: f64) -> Self {
        Self {
            label: label.into(),
            value,
            expected: format!("< {max:e}"),
            passed: value < max,
        }
    }

    pub fn above(label: impl Into<String>, value: f64, min: f64) -> Self {
        Self {
            label: label.into(),
            value,
            expected: format!("> {min}"),
            passed: value > min,
        }
    }

    /// A boolean property; `value` is 1 when it holds.
    pub fn holds(label: impl Into<String>, ok: bool, expected: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            value: ok as u8 as f64,
            expected: expected.into(),
            passed: ok,
        }
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Set when a solver error aborted the criterion.
    pub error: Option<String>,
    pub seconds: f64,
}

impl CriterionReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// `criterion 5 PASS (12/12 checks, 3.1 s) thresholds …`
    pub fn summary_line(&self) -> String {
        let ok = self.checks.iter().filter(|c| c.passed).count();
        let mut line = format!(
            "criterion {:>2} {} ({}/{} checks, {:.1} s) {}",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            ok,
            self.checks.len(),
            self.seconds,
            self.title
        );
        if let Some(e) = &self.error {
            line.push_str(&format!(" [error: {e}]"));
        }
        line
    }

    /// Summary line followed by one indented line per check and note.
    pub fn detail(&self) -> String {
        let mut s = self.summary_line() + "\n";
        for c in &self.checks {
            let value = if c.value != 0.0 && c.value.abs() < 1e-3 {
                format!("{:.3e}", c.value)
            } else {
                format!("{:.6}", c.value)
            };
            s.push_str(&format!(
                "    [{}] {}: {value} (expected {})\n",
                if c.passed { "ok" } else { "!!" },
                c.label,
                c.expected
            ));
        }
        for n in &self.notes {
            s.push_str(&format!("    note: {n}\n"));
        }
        s
    }
}

/// Named selections of criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// All ten criteria, including the growing-domain simulations (minutes).
    PaperGoldens,
    /// The criteria that finish in seconds (1–5 and 10).
    Quick,
}

impl Suite {
    pub fn ids(self) -> Vec<u8> {
        match self {
            Suite::PaperGoldens => (1..=10).collect(),
            Suite::Quick => vec![1, 2, 3, 4, 5, 10],
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "paper-goldens" => Some(Suite::PaperGoldens),
            "quick" => Some(Suite::Quick),
            _ => None,
        }
    }
}

/// Title of a criterion.
pub fn title(id: u8) -> &'static str {
    match id {
        1 => "Schnakenberg core fold B_c, beta_c, C_s",
        2 => "beta -> 1.5 as B -> 0 on the Schnakenberg primary branch",
        3 => "Brusselator core folds B_c(0.8), B_c(0.95), C_b",
        4 => "critical curves a_c(1) and f_c",
        5 => "asymptotic thresholds L_1, L_2",
        6 => "continuation folds of the one-spike branch",
        7 => "growing-domain simulations: event lengths and kinds",
        8 => "no-instability regimes and lemma bounds",
        9 => "invariants: first integral, chi monotonicity, flux, tail, fold mode, grid halving",
        10 => "cross-oracles: singular-form chi, shooting, small-parameter forms",
        _ => "unknown criterion",
    }
}

type Outcome = Result<(Vec<Check>, Vec<String>)>;

/// Run one criterion (1–10).
pub fn run_criterion(id: u8) -> CriterionReport {
    let start = Instant::now();
    let outcome: Outcome = match id {
        1 => core_fold_goldens(),
        2 => small_b_limit(),
        3 => brusselator_folds(),
        4 => critical_curves(),
        5 => threshold_goldens(),
        6 => continuation_folds(),
        7 => growing_domain(),
        8 => no_instability(),
        9 => invariants(),
        10 => cross_oracles(),
        _ => Err(SpikeError::InvalidParameter(format!("no criterion {id}"))),
    };
    let (checks, notes, error) = match outcome {
        Ok((c, n)) => (c, n, None),
        Err(e) => (Vec::new(), Vec::new(), Some(e.to_string())),
    };
    CriterionReport {
        id,
        title: title(id).into(),
        checks,
        notes,
        error,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Run a suite in order.
pub fn run_suite(suite: Suite) -> Vec<CriterionReport> {
    suite.ids().into_iter().map(run_criterion).collect()
}

/// Fixed-width pass/fail matrix.
pub fn matrix(reports: &[CriterionReport]) -> String {
    let mut s = String::from("criterion | result | checks | seconds | title\n");
    for r in reports {
        let ok = r.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!(
            "{:>9} | {:<6} | {:>6} | {:>7.1} | {}\n",
            r.id,
            if r.passed() { "PASS" } else { "FAIL" },
            format!("{ok}/{}", r.checks.len()),
            r.seconds,
            r.title
        ));
    }
    let passed = reports.iter().filter(|r| r.passed()).count();
    s.push_str(&format!("{passed}/{} criteria passed\n", reports.len()));
    s
}

// ---------------------------------------------------------------------------
// scenario tables

fn sch(a: f64) -> ModelSpec {
    ModelSpec::schnakenberg(a, 1.0, 0.01, 2.0).expect("valid Schnakenberg parameters")
}

fn bru(f: f64) -> ModelSpec {
    ModelSpec::brusselator(1.0, f, 0.01, 2.0).expect("valid Brusselator parameters")
}

fn gm(kappa: f64) -> ModelSpec {
    ModelSpec::gm(kappa, 1.0, 0.01, 1.0).expect("valid GM parameters")
}

/// One of the five threshold scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdScenario {
    pub name: &'static str,
    pub spec: ModelSpec,
    pub kind: ThresholdKind,
    /// Accepted `L₁` interval.
    pub l1: (f64, f64),
    /// Accepted `L₂` interval, where one is quoted.
    pub l2: Option<(f64, f64)>,
    /// `L` of the continuation fold quoted for the same parameters.
    pub fold: f64,
}

/// The five reference scenarios (ε = 0.01; D = 2, or D = 1 for GM).
pub fn threshold_scenarios() -> Vec<ThresholdScenario> {
    use ThresholdKind::*;
    vec![
        ThresholdScenario {
            name: "schnakenberg a=0.2",
            spec: sch(0.2),
            kind: Replication,
            l1: (1.92, 2.04),
            l2: Some((3.84, 4.08)),
            fold: 1.99,
        },
        ThresholdScenario {
            name: "schnakenberg a=0.5",
            spec: sch(0.5),
            kind: Nucleation,
            l1: (1.60, 1.70),
            l2: Some((3.16, 3.36)),
            fold: 1.66,
        },
        ThresholdScenario {
            name: "brusselator f=0.8",
            spec: bru(0.8),
            kind: Replication,
            l1: (0.99, 1.05),
            l2: None,
            fold: 1.02,
        },
        ThresholdScenario {
            name: "brusselator f=0.7",
            spec: bru(0.7),
            kind: Nucleation,
            l1: (1.31, 1.39),
            l2: None,
            fold: 1.35,
        },
        ThresholdScenario {
            name: "gm kappa=0.5",
            spec: gm(0.5),
            kind: Nucleation,
            l1: (3.70, 3.95),
            l2: Some((7.5, 8.1)),
            fold: 3.81,
        },
    ]
}

/// A growing-domain reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeScenario {
    pub name: &'static str,
    pub config: SimConfig,
    /// Kinds of the first two spike-generation events.
    pub kinds: [EventKind; 2],
}

fn sim(spec: ModelSpec, l0: f64, l_end: f64, n: usize) -> SimConfig {
    let mut cfg = SimConfig::new(spec, l_end);
    cfg.rho = Some(1e-4);
    cfg.l0 = l0;
    cfg.n = n;
    cfg
}

/// The five growing-domain runs at `ρ = 10⁻⁴`, each covering two events.
///
/// GM is run on 8192 intervals: at `L = 8.2` the 4096-interval grid would
/// resolve the inner width by fewer than six cells.
pub fn pde_scenarios() -> Vec<PdeScenario> {
    use EventKind::*;
    vec![
        PdeScenario {
            name: "schnakenberg a=0.2",
            config: sim(sch(0.2), 1.0, 4.3, 4096),
            kinds: [Replication, Replication],
        },
        PdeScenario {
            name: "schnakenberg a=0.5",
            config: sim(sch(0.5), 1.0, 3.6, 4096),
            kinds: [NucleationBoundary, NucleationInterior],
        },
        PdeScenario {
            name: "brusselator f=0.8",
            config: sim(bru(0.8), 0.7, 2.3, 4096),
            kinds: [Replication, Replication],
        },
        PdeScenario {
            name: "brusselator f=0.7",
            config: sim(bru(0.7), 1.0, 3.0, 4096),
            kinds: [NucleationBoundary, NucleationInterior],
        },
        PdeScenario {
            name: "gm kappa=0.5",
            config: sim(gm(0.5), 1.0, 8.2, 8192),
            kinds: [NucleationBoundary, NucleationInterior],
        },
    ]
}

/// Name, configuration and expected `(interior, boundary)` count sequence.
pub type FastScenario = (&'static str, SimConfig, Vec<(usize, usize)>);

/// The coarse overlay runs (`ε = 0.04`, `D = 4`, `ρ = ε²`, 2048 intervals)
/// with their expected sequences of `(interior, boundary)` spike counts.
pub fn fast_scenarios() -> Vec<FastScenario> {
    let cfg = |a: f64, l_end: f64| {
        let spec =
            ModelSpec::schnakenberg(a, 1.0, 0.04, 4.0).expect("valid Schnakenberg parameters");
        let mut c = SimConfig::new(spec, l_end);
        c.rho = Some(0.0016);
        c.n = 2048;
        c
    };
    vec![
        (
            "schnakenberg a=0.2 eps=0.04",
            cfg(0.2, 7.0),
            vec![(1, 0), (2, 0), (4, 0)],
        ),
        (
            "schnakenberg a=0.5 eps=0.04",
            cfg(0.5, 6.0),
            vec![(1, 0), (1, 2), (3, 2)],
        ),
    ]
}

/// Distinct consecutive `(interior, boundary)` counts along a trajectory.
pub fn count_sequence(traj: &SimTrajectory) -> Vec<(usize, usize)> {
    let mut seq: Vec<(usize, usize)> = Vec::new();
    for s in &traj.snapshots {
        let boundary = s.spikes.boundary.iter().filter(|b| **b).count();
        let state = (s.spikes.locations.len() - boundary, boundary);
        if seq.last() != Some(&state) {
            seq.push(state);
        }
    }
    seq
}

/// The three no-instability parameter sets.
pub fn no_instability_specs() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("schnakenberg a=1.5", sch(1.5)),
        ("brusselator f=0.3", bru(0.3)),
        ("gm kappa=1.5", gm(1.5)),
    ]
}

// ---------------------------------------------------------------------------
// criteria

fn core_fold_goldens() -> Outcome {
    let fold = schnakenberg_fold()?;
    Ok((
        vec![
            Check::within("B_c", fold.b_c, 1.347, 0.005),
            Check::within("beta_c", fold.beta_c, 1.015, 0.01),
            Check::within("C_s(B_c)", fold.c_c, 0.247, 0.01),
        ],
        Vec::new(),
    ))
}

fn small_b_limit() -> Outcome {
    let sol = solve_core(
        CoreModel::Schnakenberg,
        CoreTarget::B(1e-3),
        CoreGrid::default(),
        None,
    )?;
    Ok((
        vec![Check::within("beta(B=1e-3)", sol.beta, 1.5, 0.01)],
        Vec::new(),
    ))
}

fn brusselator_folds() -> Outcome {
    let f08 = cached_fold(CoreModel::Brusselator { f: 0.8 })?;
    let f095 = cached_fold(CoreModel::Brusselator { f: 0.95 })?;
    Ok((
        vec![
            Check::within("B_c(0.8)", f08.b_c, 0.685, 0.005),
            Check::within("B_c(0.95)", f095.b_c, 0.245, 0.005),
            Check::within("C_b(0.95)", f095.c_c, 1.36, 0.02),
        ],
        Vec::new(),
    ))
}

fn critical_curves() -> Outcome {
    let e = 0.01 / 2f64.sqrt();
    let full = critical_a(1.0, e, CriticalAMode::Full)?;
    let closed = critical_a(1.0, e, CriticalAMode::ClosedForm)?;
    Ok((
        vec![
            Check::within("a_c(1) full", full, 0.258, 0.004),
            Check::relative("a_c(1) closed form vs full", closed, full, 0.01),
            Check::within("f_c", critical_f()?, 0.769, 0.005),
        ],
        Vec::new(),
    ))
}

fn threshold_goldens() -> Outcome {
    let opts = OuterOptions::default();
    let mut checks = Vec::new();
    for sc in threshold_scenarios() {
        let r1 = first_threshold(&sc.spec, 1, &opts)?;
        checks.push(Check::holds(
            format!("{} kind", sc.name),
            r1.kind == sc.kind,
            format!("{:?}", sc.kind),
        ));
        checks.push(Check::range(
            format!("{} L1", sc.name),
            r1.l_crit,
            sc.l1.0,
            sc.l1.1,
        ));
        if let Some((lo, hi)) = sc.l2 {
            let r2 = first_threshold(&sc.spec, 2, &opts)?;
            checks.push(Check::range(format!("{} L2", sc.name), r2.l_crit, lo, hi));
        }
    }
    Ok((checks, Vec::new()))
}

/// Continuation start length for the one-spike branch.
fn fold_start(spec: &ModelSpec) -> f64 {
    match spec.model {
        Model::Brusselator { f, .. } if f > 0.75 => 0.7,
        Model::Gm { .. } => 2.5,
        _ => 1.0,
    }
}

fn first_fold(spec: &ModelSpec, n: usize) -> Result<f64> {
    let opts = ContinuationOptions {
        l_min: 0.3,
        l_max: 6.0,
        max_folds: Some(1),
        stability: false,
        ..Default::default()
    };
    one_spike_branch(spec, n, fold_start(spec), &opts)?
        .first_fold()
        .ok_or_else(|| SpikeError::NoSolution("no fold on the one-spike branch".into()))
}

fn continuation_folds() -> Outcome {
    let mut checks = Vec::new();
    for sc in threshold_scenarios() {
        let t = Instant::now();
        let fold = first_fold(&sc.spec, 2048)?;
        checks.push(Check::relative(
            format!("{} fold L", sc.name),
            fold,
            sc.fold,
            0.05,
        ));
        checks.push(Check::below(
            format!("{} seconds", sc.name),
            t.elapsed().as_secs_f64(),
            120.0,
        ));
    }
    Ok((checks, Vec::new()))
}

fn growing_domain() -> Outcome {
    let opts = OuterOptions::default();
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for sc in pde_scenarios() {
        let spec = sc.config.model;
        let targets = [
            first_threshold(&spec, 1, &opts)?.l_crit,
            first_threshold(&spec, 2, &opts)?.l_crit,
        ];
        let t = Instant::now();
        let traj = simulate_growing(&sc.config)?;
        let seconds = t.elapsed().as_secs_f64();
        let events = &traj.events.entries;
        checks.push(Check::holds(
            format!("{} event count", sc.name),
            events.len() == 2,
            "2 events",
        ));
        for (i, e) in events.iter().take(2).enumerate() {
            checks.push(Check::relative(
                format!("{} event {} L", sc.name, i + 1),
                e.length,
                targets[i],
                0.03,
            ));
            checks.push(Check::holds(
                format!("{} event {} kind {}", sc.name, i + 1, e.kind.as_str()),
                e.kind == sc.kinds[i],
                sc.kinds[i].as_str(),
            ));
        }
        checks.push(Check::below(
            format!("{} seconds", sc.name),
            seconds,
            1800.0,
        ));
        notes.push(format!(
            "{}: {} steps, {} rejected, {seconds:.1} s",
            sc.name, traj.stats.steps, traj.stats.rejected
        ));
    }
    for (name, cfg, expected) in fast_scenarios() {
        let t = Instant::now();
        let traj = simulate_growing(&cfg)?;
        let seconds = t.elapsed().as_secs_f64();
        let seq = count_sequence(&traj);
        checks.push(Check::holds(
            format!("{name} count sequence {seq:?}"),
            seq == expected,
            format!("{expected:?}"),
        ));
        checks.push(Check::below(format!("{name} seconds"), seconds, 300.0));
    }
    Ok((checks, notes))
}

/// `(L, is_left)` for every fold of a branch: a left fold is a local minimum
/// of `L` along the curve (the branch exists only to its right).
pub fn classify_folds(branch: &SteadyBranch) -> Vec<(f64, bool)> {
    branch
        .folds
        .iter()
        .map(|f| {
            let l = f.length;
            let neighbours: Vec<f64> = [f.index.checked_sub(3), Some(f.index + 3)]
                .into_iter()
                .flatten()
                .filter_map(|i| branch.points.get(i).map(|p| p.length))
                .collect();
            let left = !neighbours.is_empty() && neighbours.iter().all(|&x| x >= l);
            (l, left)
        })
        .collect()
}

fn no_instability() -> Outcome {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let opts = ContinuationOptions {
        l_min: 0.5,
        l_max: 6.0,
        ..Default::default()
    };
    let d_grid = logspace(1e-3, 0.5, 20);
    for (name, spec) in no_instability_specs() {
        let branch = one_spike_branch_both_ways(&spec, 2048, 2.0, &opts)?;
        let folds = classify_folds(&branch);
        let right: Vec<f64> = folds.iter().filter(|f| !f.1).map(|f| f.0).collect();
        checks.push(Check::holds(
            format!("{name} no fold ending the branch on [0.5, 6]"),
            right.is_empty(),
            "none",
        ));
        for (l, _) in folds.iter().filter(|f| f.1) {
            notes.push(format!(
                "{name}: the one-spike branch starts at an existence fold L = {l:.4}"
            ));
        }
        let l_span = branch
            .points
            .iter()
            .map(|p| p.length)
            .fold((f64::MAX, f64::MIN), |a, l| (a.0.min(l), a.1.max(l)));
        checks.push(Check::above(
            format!("{name} branch reaches L"),
            l_span.1,
            6.0 - 1e-9,
        ));
        let upper_unstable = upper_branch(&branch)
            .filter(|p| p.stability == crate::continuation::Stability::Unstable)
            .count();
        checks.push(Check::holds(
            format!("{name} upper branch has no unstable point"),
            upper_unstable == 0,
            "0 unstable",
        ));
        let mut solved = 0;
        for &d_l in &d_grid {
            let length = (spec.big_d / d_l).sqrt();
            if solve_quasi_equilibrium(&spec, 1, length, &OuterOptions::default())
                .is_ok_and(|s| s.converged)
            {
                solved += 1;
            }
        }
        checks.push(Check::holds(
            format!("{name} quasi-equilibria at 20 D_L in [1e-3, 0.5]"),
            solved == 20,
            "20/20",
        ));
    }
    let z: Vec<f64> = (0..=100_000).map(|i| 1.0 + i as f64 * 1e-5).collect();
    let (zmax, fmax) = z
        .iter()
        .map(|&z| (z, script_f_s(z)))
        .fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    checks.push(Check::within(
        "F_s max on (1, 2]",
        fmax,
        (2.0 * std::f64::consts::LN_2 - 1.0).sqrt(),
        1e-12,
    ));
    notes.push(format!("F_s attains its maximum at z = {zmax}"));
    let nb = norep_bound(&bru(0.3))?;
    checks.push(Check::within("F_b sup (f -> 0)", nb.b_max, 1.0, 1e-6));
    checks.push(Check::holds(
        "Brusselator f<1/2: sup F_b < min B_c",
        nb.no_replication,
        "B_max < B_c(1/2)",
    ));
    Ok((checks, notes))
}

/// Points of a both-ways branch after its last left fold (the stable side).
fn upper_branch(branch: &SteadyBranch) -> impl Iterator<Item = &crate::continuation::BranchPoint> {
    let start = classify_folds(branch)
        .iter()
        .zip(&branch.folds)
        .filter(|(c, _)| c.1)
        .map(|(_, f)| f.index)
        .max();
    // with no left fold the whole curve is the stable branch; otherwise the
    // side of the fold with the larger `u(0)v(0)` is the upper one
    let points = &branch.points;
    let range = match start {
        None => 0..points.len(),
        Some(i) => {
            let before = points[..i].iter().map(|p| p.measures.u0v0).sum::<f64>() / i.max(1) as f64;
            let after = points[i + 1..].iter().map(|p| p.measures.u0v0).sum::<f64>()
                / (points.len() - i - 1).max(1) as f64;
            if before > after {
                0..i
            } else {
                i + 1..points.len()
            }
        }
    };
    points[range].iter()
}

fn invariants() -> Outcome {
    let mut checks = Vec::new();
    let mut notes = Vec::new();

    // 𝒢′ = −R·g by central differences of 𝒢
    let mut worst: f64 = 0.0;
    for spec in [sch(0.5), sch(1.5), bru(0.7), gm(0.5), gm(1.5)] {
        let red = OuterReduction::new(spec.model);
        let (lo, hi) = (red.wellposed_lo, red.wellposed_hi);
        for k in 1..20 {
            let xi = lo + (hi - lo) * k as f64 / 20.0;
            let h = 1e-5 * xi;
            let fd = (red.big_g(xi + h) - red.big_g(xi - h)) / (2.0 * h);
            let exact = -red.r(xi) * red.g(xi);
            worst = worst.max((fd - exact).abs() / (1.0 + exact.abs()));
        }
    }
    checks.push(Check::below("G' = -R g (relative)", worst, 1e-6));

    // χ(μ) strictly increasing in μ
    for spec in [sch(0.5), bru(0.7), gm(0.5)] {
        let red = OuterReduction::new(spec.model);
        let v0 = red.wellposed_lo * 1.05;
        let values: Vec<f64> = (1..=20)
            .map(|k| chi(&spec, v0 + (red.mu_max - v0) * k as f64 / 20.0, v0))
            .collect::<Result<_>>()?;
        let increasing = values.windows(2).all(|w| w[1] > w[0]);
        checks.push(Check::holds(
            format!("chi increasing ({:?})", spec.kind()),
            increasing,
            "monotone",
        ));
    }

    // flux identities and tail linearity on both core models
    for model in [CoreModel::Schnakenberg, CoreModel::Brusselator { f: 0.8 }] {
        for b in [0.2, 0.5] {
            let sol = solve_core(model, CoreTarget::B(b), CoreGrid::default(), None)?;
            checks.push(Check::relative(
                format!("flux identity {model:?} B={b}"),
                sol.flux_identity(),
                b,
                1e-4,
            ));
            let ff = farfield_constant(&sol)?;
            checks.push(Check::below(
                format!("tail deviation {model:?} B={b}"),
                ff.deviation,
                TAIL_TOL,
            ));
            let longer = solve_core(
                model,
                CoreTarget::B(b),
                CoreGrid::default().with_y_max(20.0),
                Some(&sol),
            )?;
            checks.push(Check::within(
                format!("C independent of y_max {model:?} B={b}"),
                longer.c,
                sol.c,
                1e-3,
            ));
        }
    }

    // the fold eigenvalue and its dimple eigenfunction
    let fold = schnakenberg_fold()?;
    let sol = fold
        .solution
        .ok_or_else(|| SpikeError::NoSolution("fold profile not retained".into()))?;
    let fm = fold_mode_check(&sol, 1e-4)?;
    checks.push(Check::below("|lambda| at the fold", fm.lambda.norm(), 1e-3));
    checks.push(Check::above(
        "fold mode cosine similarity to V_beta",
        fm.similarity,
        0.99,
    ));
    checks.push(Check::holds(
        "fold mode has a dimple",
        fm.dimple,
        "interior sign change",
    ));

    // grid halving of the golden numbers
    let coarse = CoreGrid {
        y_max: 16.0,
        n: 1600,
    };
    let opts = BranchOptions {
        grid: coarse,
        keep_solutions: false,
        ..Default::default()
    };
    let f_s = continue_core_branch(CoreModel::Schnakenberg, &opts)?
        .fold
        .ok_or_else(|| {
            SpikeError::NoSolution("no fold on the coarse Schnakenberg core branch".into())
        })?;
    checks.push(Check::within(
        "B_c on the halved core grid",
        f_s.b_c,
        1.347,
        0.005,
    ));
    checks.push(Check::within(
        "beta_c on the halved core grid",
        f_s.beta_c,
        1.015,
        0.01,
    ));
    checks.push(Check::within(
        "C_s on the halved core grid",
        f_s.c_c,
        0.247,
        0.01,
    ));
    let f_b = continue_core_branch(CoreModel::Brusselator { f: 0.8 }, &opts)?
        .fold
        .ok_or_else(|| {
            SpikeError::NoSolution("no fold on the coarse Brusselator core branch".into())
        })?;
    checks.push(Check::within(
        "B_c(0.8) on the halved core grid",
        f_b.b_c,
        0.685,
        0.005,
    ));
    for sc in threshold_scenarios().into_iter().take(2) {
        let fine = first_fold(&sc.spec, 2048)?;
        let half = first_fold(&sc.spec, 1024)?;
        checks.push(Check::relative(
            format!("{} fold L on the halved grid", sc.name),
            half,
            sc.fold,
            0.05,
        ));
        notes.push(format!(
            "{}: fold L = {half:.5} (1024) vs {fine:.5} (2048)",
            sc.name
        ));
    }
    Ok((checks, notes))
}

fn cross_oracles() -> Outcome {
    let mut checks = Vec::new();
    let mut notes = Vec::new();

    for (spec, mu, v0) in [
        (sch(0.5), 1.0, 0.52),
        (sch(0.2), 0.35, 0.21),
        (bru(0.7), 2.0, 1.05),
        (gm(0.5), 1.0, 0.6),
    ] {
        let proper = chi(&spec, mu, v0)?;
        let singular = chi_singular_form(&OuterReduction::new(spec.model), mu, v0);
        checks.push(Check::below(
            format!("chi proper vs singular ({:?}, mu={mu})", spec.kind()),
            (proper - singular).abs(),
            1e-6,
        ));
    }

    for (model, b) in [
        (CoreModel::Schnakenberg, 0.5),
        (CoreModel::Schnakenberg, 1.2),
        (CoreModel::Brusselator { f: 0.8 }, 0.4),
    ] {
        let sol = solve_core(model, CoreTarget::B(b), CoreGrid::default(), None)?;
        let shot = shoot_core(model, b, sol.v[0] * 1.01, sol.u[0] * 0.99)?;
        checks.push(Check::within(
            format!("C shooting vs BVP {model:?} B={b}"),
            shot,
            sol.c,
            1e-3,
        ));
    }

    let opts = OuterOptions::default();
    for a in [0.1, 0.2] {
        let s = sch(a);
        let full = first_threshold(&s, 1, &opts)?.l_crit;
        let small = small_param_threshold(&s, 1)?.l_crit;
        checks.push(Check::relative(
            format!("Schnakenberg small-a threshold a={a}"),
            small,
            full,
            0.15,
        ));
        let b = ModelSpec::brusselator(a, 0.8, 0.01, 2.0)?;
        let full = first_threshold(&b, 1, &opts)?.l_crit;
        let small = small_param_threshold(&b, 1)?.l_crit;
        checks.push(Check::relative(
            format!("Brusselator small-a threshold a={a} f=0.8"),
            small,
            full,
            0.15,
        ));
        let g = gm(a);
        for length in [1.0, 3.0] {
            let full = solve_quasi_equilibrium(&g, 1, length, &opts)?
                .h0l
                .ok_or_else(|| SpikeError::NoSolution("GM solve without H0".into()))?;
            let small = gm_small_kappa(&g, 1, length)?.h_at_0;
            checks.push(Check::relative(
                format!("GM small-kappa H0 kappa={a} L={length}"),
                small,
                full,
                0.15,
            ));
        }
    }
    notes.push(
        "shooting oracle: RK4, h = 1e-3, Newton on (V(0), U(0)) from a 1% perturbed start".into(),
    );
    Ok((checks, notes))
}

// ---------------------------------------------------------------------------
// independent oracles

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn composite_gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &[(f64, f64)]) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let c = a + (p as f64 + 0.5) * w;
            rule.iter()
                .map(|(x, wt)| wt * f(c + 0.5 * w * x))
                .sum::<f64>()
                * 0.5
                * w
        })
        .sum()
}

/// `χ(μ) = ∫_{v₀}^{μ} g(ξ)/√(𝒢(μ) − 𝒢(ξ)) dξ` after `ξ = μ − s²`, with the
/// difference of `𝒢` integrated from `−R·g` close to `μ`. Panels double until
/// the result settles.
pub fn chi_singular_form(red: &OuterReduction, mu: f64, v0: f64) -> f64 {
    let rule = gauss_legendre(16);
    let width = mu - v0;
    let delta_g = |xi: f64| -> f64 {
        if mu - xi < 1e-2 * width {
            composite_gl(&|t| -red.r(t) * red.g(t), xi, mu, 1, &rule)
        } else {
            red.big_g(mu) - red.big_g(xi)
        }
    };
    let integrand = |s: f64| {
        let xi = mu - s * s;
        2.0 * s * red.g(xi) / delta_g(xi).sqrt()
    };
    let s_max = width.sqrt();
    let mut panels = 8;
    let mut prev = composite_gl(&integrand, 0.0, s_max, panels, &rule);
    loop {
        panels *= 2;
        let next = composite_gl(&integrand, 0.0, s_max, panels, &rule);
        if (next - prev).abs() < 1e-12 * next.abs().max(1.0) || panels >= 4096 {
            return next;
        }
        prev = next;
    }
}

/// Right-hand side of the core system `(V, V′, U, U′)`.
fn core_rhs(model: CoreModel, s: [f64; 4]) -> [f64; 4] {
    let (gain, source) = match model {
        CoreModel::Schnakenberg => (1.0, 0.0),
        CoreModel::Brusselator { f } => (f, 1.0),
    };
    let uv2 = s[2] * s[0] * s[0];
    [s[1], s[0] - gain * uv2, s[3], uv2 - source * s[0]]
}

fn rk4_core(model: CoreModel, v0: f64, u0: f64, y_end: f64, h: f64) -> [f64; 4] {
    let mut s = [v0, 0.0, u0, 0.0];
    let steps = (y_end / h).round() as usize;
    let add = |a: [f64; 4], k: [f64; 4], c: f64| {
        [
            a[0] + c * k[0],
            a[1] + c * k[1],
            a[2] + c * k[2],
            a[3] + c * k[3],
        ]
    };
    for _ in 0..steps {
        let k1 = core_rhs(model, s);
        let k2 = core_rhs(model, add(s, k1, 0.5 * h));
        let k3 = core_rhs(model, add(s, k2, 0.5 * h));
        let k4 = core_rhs(model, add(s, k3, h));
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

/// Far-field constant `C` of the core solution with slope `B`, by shooting
/// from `y = 0` with unknowns `(V(0), U(0))` and end conditions
/// `V′ + V = 0` (decay) and `U′ = B` at `y = Y`. The exponentially growing
/// activator mode makes long shots ill-conditioned, so `Y` is raised from 4 to
/// 10, each solve starting from the previous one.
pub fn shoot_core(model: CoreModel, b: f64, v0: f64, u0: f64) -> Result<f64> {
    const H: f64 = 1e-3;
    let source = if matches!(model, CoreModel::Brusselator { .. }) {
        1.0
    } else {
        0.0
    };
    let mut p = [v0, u0];
    let mut y_end = 4.0;
    loop {
        p = shoot_newton(model, b, source, p, y_end, H)?;
        if y_end >= 10.0 {
            break;
        }
        y_end += 1.0;
    }
    let s = rk4_core(model, p[0], p[1], y_end, H);
    // U + source·V is linear beyond the core
    let w = s[2] + source * s[0];
    let dw = s[3] + source * s[1];
    Ok(w - dw * y_end)
}

fn shoot_newton(
    model: CoreModel,
    b: f64,
    source: f64,
    start: [f64; 2],
    y_end: f64,
    h: f64,
) -> Result<[f64; 2]> {
    // the substrate slope still carries the decaying activator source
    let residual = |p: [f64; 2]| {
        let s = rk4_core(model, p[0], p[1], y_end, h);
        [s[1] + s[0], s[3] + source * s[1] - b]
    };
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let mut p = start;
    for _ in 0..60 {
        let r = residual(p);
        if !norm(r).is_finite() {
            break;
        }
        if norm(r) < 1e-11 {
            return Ok(p);
        }
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut q = p;
            let dp = 1e-7 * p[j].abs().max(1e-3);
            q[j] += dp;
            let rq = residual(q);
            for i in 0..2 {
                jac[i][j] = (rq[i] - r[i]) / dp;
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = [
            (r[0] * jac[1][1] - r[1] * jac[0][1]) / det,
            (jac[0][0] * r[1] - jac[1][0] * r[0]) / det,
        ];
        let mut lam = 1.0;
        loop {
            let q = [p[0] - lam * dx[0], p[1] - lam * dx[1]];
            if norm(residual(q)) < norm(r) || lam < 1e-4 {
                p = q;
                break;
            }
            lam *= 0.5;
        }
    }
    Err(SpikeError::NoSolution(format!(
        "shooting oracle did not converge at y = {y_end}"
    )))
}
