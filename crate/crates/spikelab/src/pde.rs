//! Method-of-lines integration of the Lagrangian systems on a slowly growing
//! domain `L(t) = L₀e^{ρt}`, spike counting and event classification.
//!
//! Time stepping uses the TR-BDF2 one-step scheme (a trapezoidal stage to
//! `t + γh` followed by a BDF2 stage, `γ = 2 − √2`) with full Newton
//! iterations on banded systems and an embedded third-derivative error
//! estimate filtered through the Newton matrix.

use crate::error::{Result, SpikeError};
use crate::grid::{background_scale, pattern_guess, Discretization, GuessKind, Mesh};
use crate::io::{colormap, write_file, Frame, Rgb, Svg};
use crate::models::ModelSpec;
use crate::numerics::BandMatrix;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const D: f64 = GAMMA / 2.0;
/// Local error constant of TR-BDF2: `LTE ≈ C h³ y‴`.
const ERR_CONST: f64 = (-3.0 * GAMMA * GAMMA + 4.0 * GAMMA - 2.0) / (12.0 * (2.0 - GAMMA));
const MAX_NEWTON: usize = 10;

/// A stiff system `M z′ = F(t, z)` with constant diagonal mass and banded Jacobian.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn mass(&self) -> Vec<f64>;
    fn rhs(&self, t: f64, z: &[f64]) -> Vec<f64>;
    fn jacobian(&self, t: f64, z: &[f64]) -> BandMatrix<f64>;
    /// Whether a state is admissible (e.g. strictly positive).
    fn admissible(&self, _z: &[f64]) -> bool {
        true
    }
}

/// Tolerances and step limits of [`TrBdf2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-6,
            h_init: 1e-3,
            h_max: f64::INFINITY,
        }
    }
}

/// Result of one attempted step.
#[derive(Debug, Clone)]
pub enum StepAttempt {
    /// Step taken; `err` is the weighted max-norm error (≤ 1).
    Accepted { z: Vec<f64>, f: Vec<f64>, err: f64 },
    /// Error test failed.
    Rejected { err: f64 },
    /// Newton failed, the Newton matrix was singular or the result inadmissible.
    Failed,
}

/// TR-BDF2 integrator state.
#[derive(Debug, Clone)]
pub struct TrBdf2 {
    pub opts: StepperOptions,
    mass: Vec<f64>,
}

fn weighted_max(x: &[f64], scale: &[f64]) -> f64 {
    x.iter()
        .zip(scale)
        .map(|(a, s)| (a / s).abs())
        .fold(0.0, f64::max)
}

impl TrBdf2 {
    pub fn new<S: OdeSystem>(sys: &S, opts: StepperOptions) -> Self {
        Self {
            opts,
            mass: sys.mass(),
        }
    }

    fn newton_matrix<S: OdeSystem>(
        &self,
        sys: &S,
        t: f64,
        z: &[f64],
        h: f64,
    ) -> Option<crate::numerics::BandLu<f64>> {
        let mut a = sys.jacobian(t, z).map(|x| -D * h * x);
        for (i, m) in self.mass.iter().enumerate() {
            a.add(i, i, *m);
        }
        a.factor().ok()
    }

    /// Solve `M x − dh F(t, x) = c` by full Newton from `x`.
    fn newton<S: OdeSystem>(
        &self,
        sys: &S,
        t: f64,
        h: f64,
        c: &[f64],
        mut x: Vec<f64>,
    ) -> Option<Vec<f64>> {
        for _ in 0..MAX_NEWTON {
            let f = sys.rhs(t, &x);
            let mut r: Vec<f64> = (0..x.len())
                .map(|i| self.mass[i] * x[i] - D * h * f[i] - c[i])
                .collect();
            let lu = self.newton_matrix(sys, t, &x, h)?;
            lu.solve_in_place(&mut r);
            if r.iter().any(|v| !v.is_finite()) {
                return None;
            }
            // Damp the update to keep the iterate admissible.
            let mut lambda = 1.0;
            let mut trial: Vec<f64>;
            loop {
                trial = x.iter().zip(&r).map(|(xi, di)| xi - lambda * di).collect();
                if sys.admissible(&trial) || lambda < 1.0 / 64.0 {
                    break;
                }
                lambda *= 0.5;
            }
            let scale: Vec<f64> = trial
                .iter()
                .map(|v| self.opts.atol + self.opts.rtol * v.abs())
                .collect();
            let size = lambda * weighted_max(&r, &scale);
            x = trial;
            if size < 1e-2 && lambda == 1.0 {
                return Some(x);
            }
        }
        None
    }

    /// Attempt a step of size `h` from `(t, z)` with `f = F(t, z)`.
    pub fn attempt<S: OdeSystem>(
        &self,
        sys: &S,
        t: f64,
        z: &[f64],
        f: &[f64],
        h: f64,
    ) -> StepAttempt {
        let n = z.len();
        let m = &self.mass;
        // Trapezoidal stage.
        let c1: Vec<f64> = (0..n).map(|i| m[i] * z[i] + D * h * f[i]).collect();
        let pred: Vec<f64> = (0..n).map(|i| z[i] + GAMMA * h * f[i] / m[i]).collect();
        let pred = if sys.admissible(&pred) {
            pred
        } else {
            z.to_vec()
        };
        let Some(zg) = self.newton(sys, t + GAMMA * h, h, &c1, pred) else {
            return StepAttempt::Failed;
        };
        // BDF2 stage.
        let w1 = 1.0 / (GAMMA * (2.0 - GAMMA));
        let w0 = (1.0 - GAMMA).powi(2) / (GAMMA * (2.0 - GAMMA));
        let c2: Vec<f64> = (0..n).map(|i| m[i] * (w1 * zg[i] - w0 * z[i])).collect();
        let pred: Vec<f64> = (0..n).map(|i| z[i] + (zg[i] - z[i]) / GAMMA).collect();
        let pred = if sys.admissible(&pred) {
            pred
        } else {
            zg.clone()
        };
        let Some(z1) = self.newton(sys, t + h, h, &c2, pred) else {
            return StepAttempt::Failed;
        };
        if !sys.admissible(&z1) {
            return StepAttempt::Failed;
        }
        // Error estimate `C h³ y‴`, filtered by the Newton matrix.
        let fg = sys.rhs(t + GAMMA * h, &zg);
        let f1 = sys.rhs(t + h, &z1);
        let mut est: Vec<f64> = (0..n)
            .map(|i| {
                ERR_CONST * 2.0 * h * ((f1[i] - fg[i]) / (1.0 - GAMMA) - (fg[i] - f[i]) / GAMMA)
            })
            .collect();
        let Some(lu) = self.newton_matrix(sys, t + h, &z1, h) else {
            return StepAttempt::Failed;
        };
        lu.solve_in_place(&mut est);
        let scale: Vec<f64> = (0..n)
            .map(|i| self.opts.atol + self.opts.rtol * z[i].abs().max(z1[i].abs()))
            .collect();
        let err = weighted_max(&est, &scale);
        if !err.is_finite() {
            return StepAttempt::Failed;
        }
        if err <= 1.0 {
            StepAttempt::Accepted { z: z1, f: f1, err }
        } else {
            StepAttempt::Rejected { err }
        }
    }

    /// Step-size factor after an error `err`.
    pub fn factor(err: f64) -> f64 {
        if err <= 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
        }
    }

    /// Integrate from `t0` to `t1`, returning the final state.
    pub fn integrate<S: OdeSystem>(
        &self,
        sys: &S,
        t0: f64,
        t1: f64,
        z0: Vec<f64>,
    ) -> Result<(Vec<f64>, usize)> {
        let mut t = t0;
        let mut z = z0;
        let mut f = sys.rhs(t, &z);
        let mut h = self.opts.h_init.min(t1 - t0);
        let mut steps = 0;
        while t < t1 {
            h = h.min(t1 - t).min(self.opts.h_max);
            match self.attempt(sys, t, &z, &f, h) {
                StepAttempt::Accepted { z: z1, f: f1, err } => {
                    t = if t1 - t - h <= 1e-12 * t1.abs().max(1.0) {
                        t1
                    } else {
                        t + h
                    };
                    z = z1;
                    f = f1;
                    steps += 1;
                    h *= Self::factor(err);
                }
                StepAttempt::Rejected { err } => h *= Self::factor(err).min(0.9),
                StepAttempt::Failed => h *= 0.25,
            }
            if h < 1e-12 * t.abs().max(1.0) {
                return Err(SpikeError::StepSizeUnderflow { t, h });
            }
        }
        Ok((z, steps))
    }
}

/// Initial condition of a growing-domain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    /// Asymptotic one-spike quasi-equilibrium at `L₀` (Gaussian fallback).
    CompositeOneSpike,
    /// Background plus a Gaussian bump of width `2ε_L` at `x = 0`.
    GaussianSeed,
    /// A given interleaved state `[v₀, u₀, …]` on the simulation mesh (a
    /// half-domain state is mirrored).
    FromSteady { z: Vec<f64> },
}

/// Configuration of [`simulate_growing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelSpec,
    /// Growth rate `ρ` (`L(t) = L₀e^{ρt}`); `None` means `ε²`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(rename = "L0", default = "one")]
    pub l0: f64,
    /// Stop once `L` reaches this value.
    #[serde(rename = "L_end")]
    pub l_end: f64,
    /// Stop at this time regardless of `L` (required when `ρ = 0`).
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Number of grid intervals on `[−1, 1]`.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub dilution: bool,
    #[serde(default = "default_init")]
    pub init: InitialCondition,
    /// Snapshot spacing in `L` (in `t` when `ρ = 0`: `t_end/100`).
    #[serde(default = "default_snapshot_dl")]
    pub snapshot_dl: f64,
    #[serde(default)]
    pub stepper: Option<StepperOptions>,
    /// Spike-count parameters.
    #[serde(default)]
    pub counting: CountParams,
}

fn one() -> f64 {
    1.0
}
fn default_n() -> usize {
    4096
}
fn default_init() -> InitialCondition {
    InitialCondition::CompositeOneSpike
}
fn default_snapshot_dl() -> f64 {
    0.01
}

impl SimConfig {
    /// Defaults: `ρ = ε²`, `L₀ = 1`, `n = 4096`, no dilution, composite start.
    pub fn new(model: ModelSpec, l_end: f64) -> Self {
        Self {
            model,
            rho: None,
            l0: 1.0,
            l_end,
            t_end: None,
            n: default_n(),
            dilution: false,
            init: default_init(),
            snapshot_dl: default_snapshot_dl(),
            stepper: None,
            counting: CountParams::default(),
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(self.model.epsilon * self.model.epsilon)
    }

    pub fn length_at(&self, t: f64) -> f64 {
        self.l0 * (self.rho() * t).exp()
    }

    /// Time at which `L` reaches `l_end` (or `t_end`).
    pub fn final_time(&self) -> f64 {
        let rho = self.rho();
        let by_length = if rho > 0.0 {
            (self.l_end / self.l0).ln() / rho
        } else {
            f64::INFINITY
        };
        self.t_end.map_or(by_length, |t| t.min(by_length))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(SpikeError::InvalidParameter(m));
        let rho = self.rho();
        if !(rho.is_finite() && rho >= 0.0) {
            return bad(format!("growth rate must be nonnegative, got {rho}"));
        }
        if rho == 0.0 && self.t_end.is_none() {
            return bad("a static domain (rho = 0) needs t_end".into());
        }
        if !(self.l0 > 0.0 && self.l0.is_finite()) {
            return bad(format!("L0 must be positive, got {}", self.l0));
        }
        if !(self.l_end >= self.l0) {
            return bad(format!(
                "L_end = {} must be at least L0 = {}",
                self.l_end, self.l0
            ));
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0) {
                return bad(format!("t_end must be positive, got {t}"));
            }
        }
        if !(self.snapshot_dl > 0.0) {
            return bad("snapshot spacing must be positive".into());
        }
        let mesh = Mesh::full(self.n);
        mesh.validate()?;
        let l_max = if rho > 0.0 { self.l_end } else { self.l0 };
        mesh.check_resolution(&self.model, l_max)
    }
}

/// Parameters of [`count_spikes`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountParams {
    /// A maximum counts if it exceeds the outer level by this many outer levels.
    pub amp_factor: f64,
    /// Required prominence as a fraction of the amplitude.
    pub prominence: f64,
    /// Maxima closer than this many `ε_L` are merged.
    pub merge_widths: f64,
    /// Maxima within this many cells of `x = ±1` are boundary half-spikes.
    pub boundary_cells: usize,
    /// New maxima within this many `ε_L` of an old one are replications.
    pub replication_widths: f64,
}

impl Default for CountParams {
    fn default() -> Self {
        Self {
            amp_factor: 2.5,
            prominence: 0.5,
            merge_widths: 10.0,
            boundary_cells: 3,
            replication_widths: 15.0,
        }
    }
}

/// Spikes found in a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCount {
    /// Interior spikes count 1, boundary spikes 1/2.
    pub count: f64,
    pub locations: Vec<f64>,
    pub boundary: Vec<bool>,
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s[s.len() / 2]
}

/// Count spikes of an activator profile `v` on `x` (uniform, covering
/// `[−1, 1]`). `outer_scale` is the background level of the model (see
/// [`background_scale`]) and `eps_l` the inner width.
pub fn count_spikes(
    x: &[f64],
    v: &[f64],
    outer_scale: f64,
    eps_l: f64,
    params: &CountParams,
) -> SpikeCount {
    let n = v.len();
    let mut found = SpikeCount {
        count: 0.0,
        locations: vec![],
        boundary: vec![],
    };
    if n < 3 || v.iter().any(|t| !t.is_finite()) {
        return found;
    }
    let base = median(v).max(outer_scale);
    // Candidate maxima with amplitude and prominence.
    let mut cands: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let left = if i == 0 { f64::NEG_INFINITY } else { v[i - 1] };
        let right = if i + 1 == n {
            f64::NEG_INFINITY
        } else {
            v[i + 1]
        };
        if !(v[i] > left && v[i] >= right) {
            continue;
        }
        let amp = v[i] - base;
        if amp <= params.amp_factor * base {
            continue;
        }
        // Prominence: descent to the lowest point before a higher value.
        let side = |iter: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            let mut low = v[i];
            for j in iter {
                if v[j] > v[i] {
                    break;
                }
                low = low.min(v[j]);
            }
            Some(low)
        };
        let l = if i > 0 { side(&mut (0..i).rev()) } else { None };
        let r = if i + 1 < n {
            side(&mut (i + 1..n))
        } else {
            None
        };
        let key = match (l, r) {
            (Some(a), Some(b)) => a.max(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => base,
        };
        if v[i] - key >= params.prominence * amp {
            cands.push((i, v[i]));
        }
    }
    // Merge clusters closer than the merge distance, keeping the tallest.
    let merge = params.merge_widths * eps_l;
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for c in cands {
        match kept.last_mut() {
            Some(last) if (x[c.0] - x[last.0]).abs() < merge => {
                if c.1 > last.1 {
                    *last = c;
                }
            }
            _ => kept.push(c),
        }
    }
    for (i, _) in kept {
        let at_edge = i < params.boundary_cells || i + params.boundary_cells >= n;
        found.count += if at_edge { 0.5 } else { 1.0 };
        found.locations.push(x[i]);
        found.boundary.push(at_edge);
    }
    found
}

/// Kinds of spike-generation events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Replication,
    #[serde(rename = "Nucleation_boundary")]
    NucleationBoundary,
    #[serde(rename = "Nucleation_interior")]
    NucleationInterior,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Replication => "Replication",
            EventKind::NucleationBoundary => "Nucleation_boundary",
            EventKind::NucleationInterior => "Nucleation_interior",
        }
    }
}

/// One change of the spike count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub count_before: f64,
    pub count_after: f64,
    pub kind: EventKind,
    /// More than one classification rule fired.
    pub ambiguous: bool,
}

/// Ordered list of events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub entries: Vec<Event>,
}

impl EventLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,L,kind,count_before,count_after,ambiguous\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{},{},{},{}",
                e.t,
                e.length,
                e.kind.as_str(),
                e.count_before,
                e.count_after,
                e.ambiguous
            );
        }
        s
    }

    pub fn kinds(&self) -> Vec<EventKind> {
        self.entries.iter().map(|e| e.kind).collect()
    }
}

/// A stored solution (single precision to keep long runs small).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub v: Vec<f32>,
    pub u: Vec<f32>,
    pub spikes: SpikeCount,
}

/// Integration statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub steps: usize,
    pub rejected: usize,
    pub newton_failures: usize,
    /// Smallest value of any component over all accepted steps.
    pub min_value: f64,
    pub wall_seconds: f64,
}

/// Output of [`simulate_growing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub config: SimConfig,
    pub x: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub events: EventLog,
    pub final_t: f64,
    #[serde(rename = "final_L")]
    pub final_length: f64,
    /// Final state in full precision (interleaved).
    pub final_state: Vec<f64>,
    pub stats: SimStats,
}

struct Growing<'a> {
    disc: &'a Discretization,
    cfg: &'a SimConfig,
}

impl OdeSystem for Growing<'_> {
    fn dim(&self) -> usize {
        self.disc.dim()
    }
    fn mass(&self) -> Vec<f64> {
        self.disc.mass()
    }
    fn rhs(&self, t: f64, z: &[f64]) -> Vec<f64> {
        self.disc.rhs(z, self.cfg.length_at(t), self.cfg.rho())
    }
    fn jacobian(&self, t: f64, z: &[f64]) -> BandMatrix<f64> {
        self.disc.jacobian(z, self.cfg.length_at(t), self.cfg.rho())
    }
    fn admissible(&self, z: &[f64]) -> bool {
        z.iter().all(|v| *v > 0.0 && v.is_finite())
    }
}

/// Resumable integration state, written periodically by [`simulate_growing_with`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub h: f64,
    pub z: Vec<f64>,
    pub next_mark: f64,
    pub snapshots: Vec<Snapshot>,
    pub stats: SimStats,
}

/// Periodic checkpointing of a run.
#[derive(Debug, Clone)]
pub struct CheckpointPolicy {
    pub path: PathBuf,
    pub every_seconds: f64,
}

fn initial_state(cfg: &SimConfig, disc: &Discretization) -> Result<Vec<f64>> {
    let mesh = disc.mesh;
    let centre = [0.0];
    Ok(match &cfg.init {
        InitialCondition::CompositeOneSpike => {
            pattern_guess(
                &cfg.model,
                &mesh,
                cfg.l0,
                &centre,
                1.0,
                GuessKind::Composite,
            )
            .0
        }
        InitialCondition::GaussianSeed => {
            pattern_guess(&cfg.model, &mesh, cfg.l0, &centre, 1.0, GuessKind::Gaussian).0
        }
        InitialCondition::FromSteady { z } => {
            let z = if z.len() == disc.dim() {
                z.clone()
            } else if z.len() == mesh.points() + 1 {
                crate::grid::mirror_half(z)
            } else {
                return Err(SpikeError::InvalidParameter(format!(
                    "initial state has {} entries; the mesh needs {}",
                    z.len(),
                    disc.dim()
                )));
            };
            if z.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(SpikeError::InvalidParameter(
                    "initial state must be positive and finite".into(),
                ));
            }
            z
        }
    })
}

fn snapshot(cfg: &SimConfig, disc: &Discretization, x: &[f64], t: f64, z: &[f64]) -> Snapshot {
    let length = cfg.length_at(t);
    let (v, u) = disc.split(z);
    let spikes = count_spikes(
        x,
        &v,
        background_scale(&cfg.model.model),
        cfg.model.eps_l(length),
        &cfg.counting,
    );
    Snapshot {
        t,
        length,
        v: v.iter().map(|a| *a as f32).collect(),
        u: u.iter().map(|a| *a as f32).collect(),
        spikes,
    }
}

/// Integrate a growing-domain run (see [`simulate_growing_with`]).
pub fn simulate_growing(cfg: &SimConfig) -> Result<SimTrajectory> {
    simulate_growing_with(cfg, None, None)
}

/// Integrate a growing-domain run, optionally resuming from a checkpoint and
/// writing checkpoints periodically.
pub fn simulate_growing_with(
    cfg: &SimConfig,
    resume: Option<Checkpoint>,
    checkpoints: Option<&CheckpointPolicy>,
) -> Result<SimTrajectory> {
    cfg.validate()?;
    let started = Instant::now();
    let mesh = Mesh::full(cfg.n);
    let disc = Discretization::new(cfg.model, mesh, cfg.dilution)?;
    let x = mesh.nodes();
    let sys = Growing { disc: &disc, cfg };
    let rho = cfg.rho();
    let t_final = cfg.final_time();
    // Snapshot marks are in L for growing domains and in t for static ones.
    let mark_of = |t: f64| if rho > 0.0 { cfg.length_at(t) } else { t };
    let mark_step = if rho > 0.0 {
        cfg.snapshot_dl
    } else {
        t_final / 100.0
    };
    let h_cap = |t: f64| {
        if rho > 0.0 {
            let l = cfg.length_at(t);
            ((l + mark_step) / l).ln() / rho
        } else {
            mark_step
        }
    };
    let opts = cfg.stepper.unwrap_or_default();
    let stepper = TrBdf2::new(&sys, opts);

    let (mut t, mut h, mut z, mut next_mark, mut snapshots, mut stats) = match resume {
        Some(c) => (c.t, c.h, c.z, c.next_mark, c.snapshots, c.stats),
        None => {
            let z = initial_state(cfg, &disc)?;
            let min = z.iter().copied().fold(f64::INFINITY, f64::min);
            let first = snapshot(cfg, &disc, &x, 0.0, &z);
            let stats = SimStats {
                min_value: min,
                ..Default::default()
            };
            (
                0.0,
                opts.h_init,
                z,
                mark_of(0.0) + mark_step,
                vec![first],
                stats,
            )
        }
    };
    if z.len() != disc.dim() {
        return Err(SpikeError::InvalidParameter(
            "checkpoint does not match the mesh".into(),
        ));
    }
    let mut f = sys.rhs(t, &z);
    let mut last_checkpoint = Instant::now();
    while t < t_final {
        h = h.min(h_cap(t)).min(opts.h_max).min(t_final - t);
        match stepper.attempt(&sys, t, &z, &f, h) {
            StepAttempt::Accepted { z: z1, f: f1, err } => {
                t = if t_final - t - h <= 1e-12 * t_final.max(1.0) {
                    t_final
                } else {
                    t + h
                };
                z = z1;
                f = f1;
                stats.steps += 1;
                stats.min_value = z.iter().copied().fold(stats.min_value, f64::min);
                h *= TrBdf2::factor(err);
                if mark_of(t) >= next_mark - 1e-12 || t >= t_final {
                    snapshots.push(snapshot(cfg, &disc, &x, t, &z));
                    while next_mark <= mark_of(t) + 1e-12 {
                        next_mark += mark_step;
                    }
                }
            }
            StepAttempt::Rejected { err } => {
                stats.rejected += 1;
                h *= TrBdf2::factor(err).min(0.9);
            }
            StepAttempt::Failed => {
                stats.newton_failures += 1;
                h *= 0.25;
            }
        }
        if h < 1e-10 * t.max(1.0) {
            return Err(SpikeError::StepSizeUnderflow { t, h });
        }
        if let Some(policy) = checkpoints {
            if last_checkpoint.elapsed().as_secs_f64() >= policy.every_seconds {
                let c = Checkpoint {
                    t,
                    h,
                    z: z.clone(),
                    next_mark,
                    snapshots: snapshots.clone(),
                    stats,
                };
                crate::io::write_json(&policy.path, &c)?;
                last_checkpoint = Instant::now();
            }
        }
    }
    stats.wall_seconds += started.elapsed().as_secs_f64();
    let events = detect_events_in(&snapshots, cfg);
    Ok(SimTrajectory {
        config: cfg.clone(),
        x,
        snapshots,
        events,
        final_t: t,
        final_length: cfg.length_at(t),
        final_state: z,
        stats,
    })
}

/// Classify the spike-count increases of a trajectory.
pub fn detect_events(traj: &SimTrajectory) -> EventLog {
    detect_events_in(&traj.snapshots, &traj.config)
}

fn detect_events_in(snapshots: &[Snapshot], cfg: &SimConfig) -> EventLog {
    let mut log = EventLog::default();
    for pair in snapshots.windows(2) {
        let (old, new) = (&pair[0].spikes, &pair[1].spikes);
        if new.count <= old.count {
            continue;
        }
        let eps_l = cfg.model.eps_l(pair[1].length);
        let near = cfg.counting.replication_widths * eps_l;
        // Greedily pair each old maximum with its nearest new one; the rest are new.
        let mut used = vec![false; new.locations.len()];
        for &xo in &old.locations {
            let best = new
                .locations
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .min_by(|p, q| (p.1 - xo).abs().partial_cmp(&(q.1 - xo).abs()).unwrap());
            if let Some((j, _)) = best {
                used[j] = true;
            }
        }
        let mut kinds = Vec::new();
        let mut ambiguous = false;
        for (j, &xn) in new.locations.iter().enumerate() {
            if used[j] {
                continue;
            }
            let close = old.locations.iter().any(|xo| (xn - xo).abs() < near);
            let kind = if new.boundary[j] {
                ambiguous |= close && !old.boundary.iter().any(|b| *b);
                EventKind::NucleationBoundary
            } else if close {
                EventKind::Replication
            } else {
                EventKind::NucleationInterior
            };
            kinds.push(kind);
        }
        let Some(&first) = kinds.first() else {
            continue;
        };
        ambiguous |= kinds.iter().any(|k| *k != first);
        log.entries.push(Event {
            t: pair[1].t,
            length: pair[1].length,
            count_before: old.count,
            count_after: new.count,
            kind: first,
            ambiguous,
        });
    }
    log
}

/// Options of [`export_heatmap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapOptions {
    /// Largest number of `x` columns written (the grid is subsampled).
    pub max_columns: usize,
    pub svg: bool,
}

impl Default for HeatmapOptions {
    fn default() -> Self {
        Self {
            max_columns: 1024,
            svg: true,
        }
    }
}

fn column_stride(n: usize, max_columns: usize) -> usize {
    n.div_ceil(max_columns.max(1)).max(1)
}

/// Heatmap CSV: header `L,x…`, one row per snapshot with the activator values.
pub fn heatmap_csv(traj: &SimTrajectory, opts: &HeatmapOptions) -> Result<String> {
    if traj.snapshots.is_empty() {
        return Err(SpikeError::InvalidParameter(
            "trajectory has no snapshots".into(),
        ));
    }
    let stride = column_stride(traj.x.len(), opts.max_columns);
    let cols: Vec<usize> = (0..traj.x.len()).step_by(stride).collect();
    let mut s = String::from("L");
    for &j in &cols {
        let _ = write!(s, ",{:.6}", traj.x[j]);
    }
    s.push('\n');
    for snap in &traj.snapshots {
        let _ = write!(s, "{:.6}", snap.length);
        for &j in &cols {
            let _ = write!(s, ",{:.6e}", snap.v[j]);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Heatmap raster with `x` horizontal and `L` increasing upwards.
pub fn heatmap_svg(traj: &SimTrajectory, opts: &HeatmapOptions) -> Result<String> {
    let snaps = &traj.snapshots;
    if snaps.is_empty() {
        return Err(SpikeError::InvalidParameter(
            "trajectory has no snapshots".into(),
        ));
    }
    let cols = 240.min(opts.max_columns).max(1);
    let stride = column_stride(traj.x.len(), cols);
    let vmax = snaps
        .iter()
        .flat_map(|s| s.v.iter())
        .fold(0.0f32, |m, v| m.max(*v)) as f64;
    let (l0, l1) = (
        snaps[0].length,
        snaps.last().unwrap().length.max(snaps[0].length + 1e-9),
    );
    let frame = Frame {
        x_range: (-1.0, 1.0),
        y_range: (l0, l1),
        left: 70.0,
        top: 20.0,
        width: 480.0,
        height: 480.0,
    };
    let mut svg = Svg::new(600.0, 560.0);
    let ncols = traj.x.len().div_ceil(stride);
    let cell_w = frame.width / ncols as f64;
    for (k, snap) in snaps.iter().enumerate() {
        let top = frame.py(snaps.get(k + 1).map_or(l1, |s| s.length));
        let bottom = frame.py(snap.length);
        let height = (bottom - top).max(0.5);
        // Merge runs of equal colour into one rectangle.
        let mut run: Option<(usize, Rgb)> = None;
        for c in 0..=ncols {
            let colour = (c < ncols).then(|| {
                let v = (c * stride..((c + 1) * stride).min(snap.v.len()))
                    .map(|j| snap.v[j])
                    .fold(0.0f32, f32::max);
                let q = ((v as f64 / vmax.max(1e-300)).sqrt() * 63.0).round() / 63.0;
                colormap(q)
            });
            match (run, colour) {
                (Some((start, rc)), Some(col)) if rc == col => {
                    let _ = start;
                }
                (prev, next) => {
                    if let Some((start, rc)) = prev {
                        svg.rect(
                            frame.left + start as f64 * cell_w,
                            top,
                            (c - start) as f64 * cell_w,
                            height,
                            rc,
                        );
                    }
                    run = next.map(|col| (c, col));
                }
            }
        }
    }
    svg.axes(&frame, "x", "L");
    Ok(svg.finish())
}

/// Write `heatmap.csv` (and `heatmap.svg`) into `dir`.
pub fn export_heatmap(
    traj: &SimTrajectory,
    dir: &Path,
    opts: &HeatmapOptions,
) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join("heatmap.csv")];
    write_file(&written[0], heatmap_csv(traj, opts)?)?;
    if opts.svg {
        let p = dir.join("heatmap.svg");
        write_file(&p, heatmap_svg(traj, opts)?)?;
        written.push(p);
    }
    Ok(written)
}

/// Write one `(x, v, u)` CSV per snapshot into `dir`.
pub fn export_snapshots(traj: &SimTrajectory, dir: &Path) -> Result<()> {
    for (k, snap) in traj.snapshots.iter().enumerate() {
        let mut s = format!("# t = {:.6}, L = {:.6}\nx,v,u\n", snap.t, snap.length);
        for (j, x) in traj.x.iter().enumerate() {
            let _ = writeln!(s, "{:.6},{:.6e},{:.6e}", x, snap.v[j], snap.u[j]);
        }
        write_file(dir.join(format!("snapshot_{k:05}.csv")), s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `y′ = λy` as a one-dimensional banded system.
    struct Linear(f64);

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn mass(&self) -> Vec<f64> {
            vec![1.0]
        }
        fn rhs(&self, _t: f64, z: &[f64]) -> Vec<f64> {
            vec![self.0 * z[0]]
        }
        fn jacobian(&self, _t: f64, _z: &[f64]) -> BandMatrix<f64> {
            let mut j = BandMatrix::zeros(1, 0, 0);
            j.set(0, 0, self.0);
            j
        }
    }

    #[test]
    fn error_estimate_tracks_the_true_local_error() {
        let sys = Linear(1.0);
        let stepper = TrBdf2::new(
            &sys,
            StepperOptions {
                rtol: 1.0,
                atol: 1.0,
                ..Default::default()
            },
        );
        for h in [0.05, 0.025] {
            let StepAttempt::Accepted { z, err, .. } =
                stepper.attempt(&sys, 0.0, &[1.0], &[1.0], h)
            else {
                panic!("step failed")
            };
            let true_err = z[0] - h.exp();
            // Leading-order estimate within 20 % of the true error.
            let est = err * (1.0 + 1.0 * z[0].abs().max(1.0));
            assert!(
                (est / true_err.abs() - 1.0).abs() < 0.2,
                "h={h}: est {est:e}, true {true_err:e}"
            );
        }
    }

    #[test]
    fn integrator_is_second_order_and_meets_tolerance() {
        let sys = Linear(-2.0);
        let stepper = TrBdf2::new(
            &sys,
            StepperOptions {
                rtol: 1e-8,
                atol: 1e-10,
                ..Default::default()
            },
        );
        let (z, _) = stepper.integrate(&sys, 0.0, 1.0, vec![1.0]).unwrap();
        assert!((z[0] - (-2.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn counts_interior_boundary_and_merged_maxima() {
        let n = 2001;
        let x: Vec<f64> = (0..n)
            .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
            .collect();
        let eps = 0.01;
        let bump = |c: f64, xx: f64| 50.0 * (-((xx - c) / eps).powi(2)).exp();
        let v: Vec<f64> = x
            .iter()
            .map(|&xx| 0.5 + bump(0.0, xx) + bump(-1.0, xx) + bump(1.0, xx))
            .collect();
        let c = count_spikes(&x, &v, 0.5, eps, &CountParams::default());
        assert_eq!(c.count, 2.0);
        assert_eq!(c.boundary, vec![true, false, true]);
        // Two humps 3ε apart merge into one spike.
        let v: Vec<f64> = x
            .iter()
            .map(|&xx| 0.5 + bump(-0.015, xx) + bump(0.015, xx))
            .collect();
        assert_eq!(
            count_spikes(&x, &v, 0.5, eps, &CountParams::default()).count,
            1.0
        );
        // Small ripples are not spikes.
        let v: Vec<f64> = x.iter().map(|&xx| 0.5 + 0.1 * (20.0 * xx).sin()).collect();
        assert_eq!(
            count_spikes(&x, &v, 0.5, eps, &CountParams::default()).count,
            0.0
        );
    }

    fn toy_snapshot(t: f64, length: f64, locations: Vec<f64>, boundary: Vec<bool>) -> Snapshot {
        let count = boundary.iter().map(|b| if *b { 0.5 } else { 1.0 }).sum();
        Snapshot {
            t,
            length,
            v: vec![1.0; 3],
            u: vec![1.0; 3],
            spikes: SpikeCount {
                count,
                locations,
                boundary,
            },
        }
    }

    #[test]
    fn events_are_classified_by_position() {
        let spec = ModelSpec::schnakenberg(0.2, 1.0, 0.01, 2.0).unwrap();
        let cfg = SimConfig::new(spec, 4.0);
        let snaps = vec![
            toy_snapshot(0.0, 1.0, vec![0.0], vec![false]),
            toy_snapshot(1.0, 2.0, vec![-0.004, 0.004], vec![false, false]),
            toy_snapshot(
                2.0,
                2.1,
                vec![-1.0, -0.004, 0.004, 1.0],
                vec![true, false, false, true],
            ),
            toy_snapshot(
                3.0,
                2.2,
                vec![-1.0, -0.5, -0.004, 0.004, 0.5, 1.0],
                vec![true, false, false, false, false, true],
            ),
        ];
        let log = detect_events_in(&snaps, &cfg);
        assert_eq!(
            log.kinds(),
            vec![
                EventKind::Replication,
                EventKind::NucleationBoundary,
                EventKind::NucleationInterior
            ]
        );
        assert_eq!(log.entries[1].count_before, 2.0);
        assert_eq!(log.entries[1].count_after, 3.0);
        assert!(log.to_csv().lines().count() == 4);
    }
}
