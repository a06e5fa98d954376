//! Steady states of the Lagrangian systems continued in the half-length `L`:
//! Newton solves, pseudo-arclength continuation with fold detection and
//! refinement, linear stability of every point, multi-branch atlases and
//! overlays of growing-domain trajectories.
//!
//! The discretisation is the one of [`crate::grid`], shared with the time
//! integrator, so steady states can seed simulations directly.

use crate::error::{Result, SpikeError};
use crate::grid::{
    half_spike_positions, homogeneous_state, mirror_half, pattern_guess, Discretization, GuessKind,
    Measures, Mesh,
};
use crate::io::{write_file, Frame, Rgb, Svg};
use crate::models::ModelSpec;
use crate::numerics::eig::shift_invert_arnoldi;
use crate::numerics::{BandLu, BandMatrix};
use crate::pde::{EventKind, SimTrajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;

/// Row-relative residual (see [`Discretization::residual`]) required of
/// every steady state.
pub const STEADY_TOL: f64 = 1e-9;
const MAX_NEWTON: usize = 30;

/// An immutable converged steady state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub mesh: Mesh,
    #[serde(rename = "L")]
    pub length: f64,
    /// Interleaved `[v₀, u₀, v₁, u₁, …]`.
    pub z: Arc<Vec<f64>>,
    pub residual: f64,
    pub measures: Measures,
}

impl SteadyState {
    /// The state on the full domain `[−1, 1]` (mirrored if on the half).
    pub fn full_domain(&self) -> (Mesh, Vec<f64>) {
        if self.mesh.is_half() {
            (Mesh::full(2 * self.mesh.intervals), mirror_half(&self.z))
        } else {
            (self.mesh, self.z.as_ref().clone())
        }
    }
}

/// Initial guess for [`steady_solve`].
#[derive(Debug, Clone, PartialEq)]
pub enum SteadyGuess {
    /// Spatially homogeneous state (if the model has one).
    Homogeneous,
    /// `K` equally spaced interior spikes (`K = 1` on the half domain means
    /// one spike at `x = 0`).
    Spikes(usize),
    /// Spikes at given positions with cells of half-width `ell`.
    Pattern { centers: Vec<f64>, ell: f64 },
    /// An explicit state on the mesh.
    State(Vec<f64>),
}

fn guess_state(disc: &Discretization, length: f64, guess: &SteadyGuess) -> Result<Vec<f64>> {
    let mesh = disc.mesh;
    let pts = mesh.points();
    Ok(match guess {
        SteadyGuess::Homogeneous => {
            let (v, u) = homogeneous_state(&disc.spec.model).ok_or_else(|| {
                SpikeError::NoSolution("model has no spatially homogeneous steady state".into())
            })?;
            (0..pts).flat_map(|_| [v, u]).collect()
        }
        SteadyGuess::Spikes(k) => {
            let k = (*k).max(1);
            let ell = 1.0 / k as f64;
            let centers: Vec<f64> = (0..k).map(|j| -1.0 + (2 * j + 1) as f64 * ell).collect();
            pattern_guess(
                &disc.spec,
                &mesh,
                length,
                &centers,
                ell,
                GuessKind::Composite,
            )
            .0
        }
        SteadyGuess::Pattern { centers, ell } => {
            pattern_guess(
                &disc.spec,
                &mesh,
                length,
                centers,
                *ell,
                GuessKind::Composite,
            )
            .0
        }
        SteadyGuess::State(z) => {
            if z.len() != disc.dim() {
                return Err(SpikeError::InvalidParameter(format!(
                    "initial state has {} entries; the mesh needs {}",
                    z.len(),
                    disc.dim()
                )));
            }
            z.clone()
        }
    })
}

/// Damped Newton for `F(z; L) = 0` from `z`.
fn newton(disc: &Discretization, length: f64, mut z: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let mut res = disc.residual(&z, length);
    for it in 0..MAX_NEWTON {
        if res < STEADY_TOL {
            return Ok((z, res));
        }
        let f = disc.rhs(&z, length, 0.0);
        let lu =
            disc.jacobian(&z, length, 0.0)
                .factor()
                .map_err(|_| SpikeError::NewtonDiverged {
                    iterations: it,
                    residual: res,
                })?;
        let mut dz = f;
        lu.solve_in_place(&mut dz);
        // Backtrack to stay positive and decrease the residual.
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a - lambda * d).collect();
            if trial.iter().all(|v| *v > 0.0 && v.is_finite()) {
                let r = disc.residual(&trial, length);
                if r < res || lambda < 1e-3 {
                    z = trial;
                    res = r;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return Err(SpikeError::NewtonDiverged {
                    iterations: it,
                    residual: res,
                });
            }
        }
    }
    if res < STEADY_TOL {
        Ok((z, res))
    } else {
        Err(SpikeError::NewtonDiverged {
            iterations: MAX_NEWTON,
            residual: res,
        })
    }
}

/// Newton-converged steady state at half-length `L` from an initial guess
/// (residual max-norm below [`STEADY_TOL`]).
pub fn steady_solve(
    spec: &ModelSpec,
    mesh: Mesh,
    length: f64,
    guess: &SteadyGuess,
) -> Result<SteadyState> {
    if !(length.is_finite() && length > 0.0) {
        return Err(SpikeError::InvalidParameter(format!(
            "L must be positive, got {length}"
        )));
    }
    let disc = Discretization::new(*spec, mesh, false)?;
    mesh.check_resolution(spec, length)?;
    let z0 = guess_state(&disc, length, guess)?;
    let (z, residual) = newton(&disc, length, z0)?;
    let measures = disc.measures(&z);
    Ok(SteadyState {
        mesh,
        length,
        z: Arc::new(z),
        residual,
        measures,
    })
}

/// Linear stability label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Unknown,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Unknown => "unknown",
        }
    }
}

/// Rightmost eigenvalues of the full-domain linearisation at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityInfo {
    /// `(Re λ, Im λ)`, sorted by decreasing real part.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Eigenvalues with `|λ| < 10⁻⁴ε`, excluded from the verdict.
    pub drift_modes: Vec<(f64, f64)>,
    pub stability: Stability,
    /// Sign of `det J` on the full domain (branch-point detection).
    pub det_sign: f64,
}

/// Rightmost eigenvalues of `J x = λ M x` on the full domain; stable iff
/// every eigenvalue other than near-zero drift modes has `Re λ < −10⁻⁶`.
pub fn branch_stability(spec: &ModelSpec, state: &SteadyState) -> Result<StabilityInfo> {
    let (mesh, z) = state.full_domain();
    let disc = Discretization::new(*spec, mesh, false)?;
    let jac = disc.jacobian(&z, state.length, 0.0);
    let mass = disc.mass();
    let det_sign = jac.clone().factor().map(|lu| lu.log_det().0).unwrap_or(0.0);
    // (λ, error bound); the bound is the Ritz residual scaled by |λ − σ|.
    let mut all: Vec<((f64, f64), f64)> = Vec::new();
    for (sigma, nev) in [(0.05, 10), (1.0, 4)] {
        let ritz = shift_invert_arnoldi(&jac, &mass, sigma, 50, nev, 4)
            .or_else(|_| shift_invert_arnoldi(&jac, &mass, sigma * 1.37 + 1e-3, 50, nev, 4))
            .map_err(|e| SpikeError::EigSolverFailure(e.to_string()))?;
        for r in ritz.iter().take(nev) {
            let l = (r.lambda.re, r.lambda.im);
            let bound = r.residual * (l.0 - sigma).hypot(l.1);
            if r.residual < 0.05
                && !all
                    .iter()
                    .any(|p| (p.0 .0 - l.0).abs() + (p.0 .1 - l.1).abs() < 1e-8 * (1.0 + l.0.abs()))
            {
                all.push((l, bound));
            }
        }
    }
    if all.is_empty() {
        return Err(SpikeError::EigSolverFailure(
            "no converged Ritz values".into(),
        ));
    }
    all.sort_by(|p, q| q.0 .0.partial_cmp(&p.0 .0).unwrap());
    let drift = 1e-4 * spec.epsilon;
    let (drift_modes, rest): (Vec<_>, Vec<_>) =
        all.into_iter().partition(|p| p.0 .0.hypot(p.0 .1) < drift);
    let stability = match rest.first() {
        Some(p) if p.0 .0 + p.1 < -1e-6 => Stability::Stable,
        Some(p) if p.0 .0 - p.1 > -1e-6 => Stability::Unstable,
        Some(_) => Stability::Unknown,
        None => Stability::Stable,
    };
    let eigenvalues = rest.into_iter().map(|p| p.0).collect();
    let drift_modes = drift_modes.into_iter().map(|p| p.0).collect();
    Ok(StabilityInfo {
        eigenvalues,
        drift_modes,
        stability,
        det_sign,
    })
}

/// Limits and step control for [`continue_in_l`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationOptions {
    #[serde(rename = "L_min")]
    pub l_min: f64,
    #[serde(rename = "L_max")]
    pub l_max: f64,
    pub ds: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_points: usize,
    /// Compute eigenvalues at every point.
    pub stability: bool,
    /// Keep the solution vectors of every point in memory.
    pub keep_solutions: bool,
    /// Required accuracy in `L` of refined folds.
    pub fold_tol: f64,
    /// Stop after this many folds (`None`: never).
    pub max_folds: Option<usize>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            l_min: 0.2,
            l_max: 6.0,
            ds: 0.02,
            ds_min: 1e-6,
            ds_max: 0.1,
            max_points: 2000,
            stability: true,
            keep_solutions: false,
            fold_tol: 1e-4,
            max_folds: None,
        }
    }
}

/// One accepted continuation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    #[serde(rename = "L")]
    pub length: f64,
    pub measures: Measures,
    pub stability: Stability,
    /// `dL/ds` of the oriented unit tangent.
    pub dl_ds: f64,
    pub residual: f64,
    pub is_fold: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen: Option<StabilityInfo>,
    #[serde(skip)]
    pub solution: Option<Arc<Vec<f64>>>,
}

/// A fold (saddle node) of `L` along the branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    #[serde(rename = "L")]
    pub length: f64,
    /// Index of the refined fold point in `points`.
    pub index: usize,
}

/// Where a branch came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: Option<String>,
    pub branch_point: Option<usize>,
    /// Construction of the starting guess.
    pub start: String,
}

/// Why continuation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LeftRange,
    MaxFolds,
    MaxPoints,
    StepFailure,
}

/// A continuation curve of steady states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyBranch {
    pub branch_id: String,
    pub lineage: Lineage,
    pub mesh: Mesh,
    pub points: Vec<BranchPoint>,
    pub folds: Vec<Fold>,
    /// Indices where `det J` changes sign without a fold (symmetry-breaking candidates).
    pub branch_points: Vec<usize>,
    pub stop: StopReason,
}

impl SteadyBranch {
    /// Branch CSV: `branch_id, L, measure_mu, measure_u0v0, l2norm_v, stability, is_fold`.
    pub fn to_csv(&self, header: bool) -> String {
        let mut s = String::new();
        if header {
            s.push_str("branch_id,L,measure_mu,measure_u0v0,l2norm_v,stability,is_fold\n");
        }
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{:.8},{:.8e},{:.8e},{:.8e},{},{}",
                self.branch_id,
                p.length,
                p.measures.mu,
                p.measures.u0v0,
                p.measures.l2_v,
                p.stability.as_str(),
                p.is_fold
            );
        }
        s
    }

    /// `L` of the first fold, if any.
    pub fn first_fold(&self) -> Option<f64> {
        self.folds.first().map(|f| f.length)
    }
}

/// Weighted inner product of the arclength constraint: field components are
/// scaled by their branch-local RMS so `L` and field changes count equally.
#[derive(Debug, Clone)]
struct Weights {
    w: Vec<f64>,
}

impl Weights {
    fn new(z: &[f64]) -> Self {
        let m = z.len() / 2;
        let rms = |c: usize| {
            (z.iter().skip(c).step_by(2).map(|x| x * x).sum::<f64>() / m as f64)
                .sqrt()
                .max(1e-12)
        };
        let (sv, su) = (rms(0), rms(1));
        let w = (0..z.len())
            .map(|i| 1.0 / (m as f64 * if i % 2 == 0 { sv * sv } else { su * su }))
            .collect();
        Self { w }
    }

    fn dot(&self, a: &[f64], al: f64, b: &[f64], bl: f64) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.w)
            .map(|((x, y), w)| x * y * w)
            .sum::<f64>()
            + al * bl
    }
}

/// Solve the bordered system `[J F_L; cᵀ d] [x; y] = [r; q]` by block
/// elimination with one step of iterative refinement.
fn bordered_solve(
    jac: &BandMatrix<f64>,
    lu: &BandLu<f64>,
    fl: &[f64],
    c: &[f64],
    d: f64,
    r: &[f64],
    q: f64,
) -> (Vec<f64>, f64) {
    let b = lu.solve(fl);
    let cb: f64 = c.iter().zip(&b).map(|(x, y)| x * y).sum();
    let denom = d - cb;
    let solve = |r: &[f64], q: f64| -> (Vec<f64>, f64) {
        let a = lu.solve(r);
        let ca: f64 = c.iter().zip(&a).map(|(x, y)| x * y).sum();
        let y = (q - ca) / denom;
        let x = a.iter().zip(&b).map(|(ai, bi)| ai - bi * y).collect();
        (x, y)
    };
    let (mut x, mut y) = solve(r, q);
    // residual of the full bordered system
    let jx = jac.matvec(&x);
    let r2: Vec<f64> = (0..x.len()).map(|i| r[i] - jx[i] - fl[i] * y).collect();
    let q2 = q - c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - d * y;
    let (dx, dy) = solve(&r2, q2);
    for (xi, di) in x.iter_mut().zip(&dx) {
        *xi += di;
    }
    y += dy;
    (x, y)
}

/// Current point of the continuation with its unit tangent.
#[derive(Debug, Clone)]
struct Point {
    z: Vec<f64>,
    l: f64,
    tz: Vec<f64>,
    tl: f64,
    residual: f64,
}

struct Tracker<'a> {
    disc: &'a Discretization,
    opts: &'a ContinuationOptions,
}

impl Tracker<'_> {
    /// Unit tangent at `(z, L)` oriented along `(pz, pl)`.
    fn tangent(
        &self,
        z: &[f64],
        l: f64,
        pz: &[f64],
        pl: f64,
        w: &Weights,
    ) -> Result<(Vec<f64>, f64)> {
        let jac = self.disc.jacobian(z, l, 0.0);
        let lu = jac
            .clone()
            .factor()
            .map_err(|e| SpikeError::StepFailure(format!("singular Jacobian: {e}")))?;
        let fl = self.disc.d_rhs_d_length(z, l);
        let c: Vec<f64> = pz.iter().zip(&w.w).map(|(a, b)| a * b).collect();
        let zero = vec![0.0; z.len()];
        let (tz, tl) = bordered_solve(&jac, &lu, &fl, &c, pl, &zero, 1.0);
        let nrm = w.dot(&tz, tl, &tz, tl).sqrt();
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(SpikeError::StepFailure("degenerate tangent".into()));
        }
        Ok((tz.iter().map(|x| x / nrm).collect(), tl / nrm))
    }

    /// Predictor–corrector step of length `ds` from `p`.
    fn step(&self, p: &Point, ds: f64, w: &Weights) -> Option<(Point, usize)> {
        let mut z: Vec<f64> = p.z.iter().zip(&p.tz).map(|(a, t)| a + ds * t).collect();
        let mut l = p.l + ds * p.tl;
        if z.iter().any(|v| !(*v > 0.0)) || !(l > 0.0) {
            return None;
        }
        let c: Vec<f64> = p.tz.iter().zip(&w.w).map(|(a, b)| a * b).collect();
        for it in 0..12 {
            let f = self.disc.rhs(&z, l, 0.0);
            let dz: Vec<f64> = z.iter().zip(&p.z).map(|(a, b)| a - b).collect();
            let n = w.dot(&p.tz, p.tl, &dz, l - p.l) - ds;
            let res = self.disc.residual(&z, l);
            if res < STEADY_TOL && n.abs() < 1e-10 {
                let (tz, tl) = self.tangent(&z, l, &p.tz, p.tl, w).ok()?;
                return Some((
                    Point {
                        z,
                        l,
                        tz,
                        tl,
                        residual: res,
                    },
                    it,
                ));
            }
            let jac = self.disc.jacobian(&z, l, 0.0);
            let lu = jac.clone().factor().ok()?;
            let fl = self.disc.d_rhs_d_length(&z, l);
            let (dx, dl) = bordered_solve(&jac, &lu, &fl, &c, p.tl, &f, n);
            z.iter_mut().zip(&dx).for_each(|(a, d)| *a -= d);
            l -= dl;
            if z.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(l > 0.0) {
                return None;
            }
        }
        None
    }

    /// Steady state at fixed `L = bound` between `p` and `q`, started from
    /// their linear interpolant.
    fn solve_at(&self, p: &Point, q: &Point, bound: f64, w: &Weights) -> Option<Point> {
        let t = (bound - p.l) / (q.l - p.l);
        let guess: Vec<f64> = p.z.iter().zip(&q.z).map(|(a, b)| a + t * (b - a)).collect();
        let (z, residual) = newton(self.disc, bound, guess).ok()?;
        let (tz, tl) = self.tangent(&z, bound, &q.tz, q.tl, w).ok()?;
        Some(Point {
            z,
            l: bound,
            tz,
            tl,
            residual,
        })
    }

    fn record(&self, p: &Point, is_fold: bool) -> Result<BranchPoint> {
        let measures = self.disc.measures(&p.z);
        let eigen = if self.opts.stability {
            let st = SteadyState {
                mesh: self.disc.mesh,
                length: p.l,
                z: Arc::new(p.z.clone()),
                residual: p.residual,
                measures,
            };
            Some(branch_stability(&self.disc.spec, &st)?)
        } else {
            None
        };
        Ok(BranchPoint {
            length: p.l,
            measures,
            stability: eigen.as_ref().map_or(Stability::Unknown, |e| e.stability),
            dl_ds: p.tl,
            residual: p.residual,
            is_fold,
            eigen,
            solution: self.opts.keep_solutions.then(|| Arc::new(p.z.clone())),
        })
    }

    /// Bisect on the step length between `p` (before the fold) and the step
    /// `ds_hi` that crossed it; returns the point of extreme `L`.
    fn refine_fold(&self, p: &Point, ds_hi: f64, w: &Weights) -> Option<Point> {
        let sign0 = p.tl.signum();
        let (mut lo, mut hi) = (0.0, ds_hi);
        let mut best: Option<Point> = None;
        let mut seen: Vec<f64> = vec![p.l];
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let (q, _) = self.step(p, mid, w)?;
            seen.push(q.l);
            let extreme = best.as_ref().map_or(true, |b| (q.l - b.l) * sign0 > 0.0);
            let crossed = q.tl.signum() != sign0;
            if extreme {
                best = Some(q.clone());
            }
            if crossed {
                hi = mid;
            } else {
                lo = mid;
            }
            let spread = seen
                .iter()
                .rev()
                .take(3)
                .fold(0.0f64, |m, x| m.max((x - q.l).abs()));
            if seen.len() >= 4 && spread < self.opts.fold_tol && (hi - lo) < 1e-3 * ds_hi.max(1e-9)
            {
                break;
            }
        }
        best
    }
}

/// Pseudo-arclength continuation in `L` from a converged state. `direction`
/// is the initial sign of `dL/ds`.
pub fn continue_in_l(
    spec: &ModelSpec,
    start: &SteadyState,
    direction: f64,
    opts: &ContinuationOptions,
    branch_id: &str,
    lineage: Lineage,
) -> Result<SteadyBranch> {
    let disc = Discretization::new(*spec, start.mesh, false)?;
    if start.residual >= STEADY_TOL {
        return Err(SpikeError::InvalidParameter(
            "continuation must start from a converged state".into(),
        ));
    }
    let tracker = Tracker { disc: &disc, opts };
    let z0 = start.z.as_ref().clone();
    let mut w = Weights::new(&z0);
    let zero = vec![0.0; z0.len()];
    let (tz, tl) = tracker.tangent(&z0, start.length, &zero, direction.signum(), &w)?;
    let mut p = Point {
        z: z0,
        l: start.length,
        tz,
        tl,
        residual: start.residual,
    };
    let mut points = vec![tracker.record(&p, false)?];
    let mut folds = Vec::new();
    let mut branch_points = Vec::new();
    let mut ds = opts.ds;
    let stop = loop {
        if points.len() >= opts.max_points {
            break StopReason::MaxPoints;
        }
        if opts.max_folds.is_some_and(|m| folds.len() >= m) {
            break StopReason::MaxFolds;
        }
        let Some((q, iters)) = tracker.step(&p, ds, &w) else {
            ds *= 0.5;
            if ds < opts.ds_min {
                break StopReason::StepFailure;
            }
            continue;
        };
        if q.l > opts.l_max || q.l < opts.l_min {
            // close the branch exactly on the range boundary when the last
            // step crossed it monotonically
            let bound = if q.l > opts.l_max {
                opts.l_max
            } else {
                opts.l_min
            };
            if q.tl.signum() == p.tl.signum() && disc.mesh.check_resolution(spec, bound).is_ok() {
                if let Some(end) = tracker.solve_at(&p, &q, bound, &w) {
                    points.push(tracker.record(&end, false)?);
                }
            }
            break StopReason::LeftRange;
        }
        if disc.mesh.check_resolution(spec, q.l).is_err() {
            break StopReason::LeftRange;
        }
        if q.tl.signum() != p.tl.signum() {
            // Fold between p and q.
            if let Some(f) = tracker.refine_fold(&p, ds, &w) {
                let rec = tracker.record(&f, true)?;
                folds.push(Fold {
                    length: f.l,
                    index: points.len(),
                });
                points.push(rec);
            }
        }
        let rec = tracker.record(&q, false)?;
        let prev_sign = points
            .last()
            .and_then(|b| b.eigen.as_ref())
            .map(|e| e.det_sign);
        if let (Some(a), Some(b)) = (prev_sign, rec.eigen.as_ref().map(|e| e.det_sign)) {
            let fold_between =
                points.last().is_some_and(|b| b.is_fold) || q.tl.signum() != p.tl.signum();
            if a * b < 0.0 && !fold_between {
                branch_points.push(points.len());
            }
        }
        points.push(rec);
        p = q;
        w = Weights::new(&p.z);
        ds = if iters <= 3 {
            (ds * 1.5).min(opts.ds_max)
        } else if iters > 6 {
            ds * 0.6
        } else {
            ds
        };
    };
    Ok(SteadyBranch {
        branch_id: branch_id.to_string(),
        lineage,
        mesh: start.mesh,
        points,
        folds,
        branch_points,
        stop,
    })
}

/// A fold location under grid refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldEstimate {
    /// Grid intervals of the coarse half-domain mesh.
    pub n: usize,
    pub coarse: f64,
    pub fine: f64,
    /// `(4L_{2n} − L_n)/3`.
    pub extrapolated: f64,
}

/// Continue the one-spike branch on the half domain `[0, 1]` with `n`
/// intervals from `L = start_length` in the direction of increasing `L`.
pub fn one_spike_branch(
    spec: &ModelSpec,
    n: usize,
    start_length: f64,
    opts: &ContinuationOptions,
) -> Result<SteadyBranch> {
    let mesh = Mesh::half(n);
    let start = steady_solve(
        spec,
        mesh,
        start_length,
        &SteadyGuess::Pattern {
            centers: vec![0.0],
            ell: 1.0,
        },
    )?;
    let lineage = Lineage {
        parent: None,
        branch_point: None,
        start: format!("one spike at L = {start_length}"),
    };
    continue_in_l(spec, &start, 1.0, opts, "one_spike", lineage)
}

/// Continue the one-spike branch from `L = start_length` in both directions
/// and join the two halves into one branch ordered from the lower end.
pub fn one_spike_branch_both_ways(
    spec: &ModelSpec,
    n: usize,
    start_length: f64,
    opts: &ContinuationOptions,
) -> Result<SteadyBranch> {
    let mesh = Mesh::half(n);
    let start = steady_solve(
        spec,
        mesh,
        start_length,
        &SteadyGuess::Pattern {
            centers: vec![0.0],
            ell: 1.0,
        },
    )?;
    let lineage = Lineage {
        parent: None,
        branch_point: None,
        start: format!("one spike at L = {start_length}"),
    };
    let up = continue_in_l(spec, &start, 1.0, opts, "one_spike", lineage.clone())?;
    let down = continue_in_l(spec, &start, -1.0, opts, "one_spike", lineage)?;
    let offset = down.points.len() - 1;
    let mut points: Vec<BranchPoint> = down.points.into_iter().rev().collect();
    points.extend(up.points.into_iter().skip(1));
    let mut folds: Vec<Fold> = down
        .folds
        .iter()
        .map(|f| Fold {
            length: f.length,
            index: offset - f.index,
        })
        .collect();
    folds.reverse();
    folds.extend(up.folds.iter().map(|f| Fold {
        length: f.length,
        index: f.index + offset,
    }));
    let mut branch_points: Vec<usize> = down.branch_points.iter().map(|i| offset - i).collect();
    branch_points.reverse();
    branch_points.extend(up.branch_points.iter().map(|i| i + offset));
    let stop = if up.stop == StopReason::LeftRange {
        down.stop
    } else {
        up.stop
    };
    Ok(SteadyBranch {
        points,
        folds,
        branch_points,
        stop,
        ..up
    })
}

/// First fold of the one-spike branch on `n` and `2n` half-domain grids with
/// Richardson extrapolation (second-order discretisation).
pub fn richardson_fold(
    spec: &ModelSpec,
    n: usize,
    start_length: f64,
    opts: &ContinuationOptions,
) -> Result<FoldEstimate> {
    let fold_opts = ContinuationOptions {
        max_folds: Some(1),
        stability: false,
        ..*opts
    };
    let fold = |m: usize| -> Result<f64> {
        one_spike_branch(spec, m, start_length, &fold_opts)?
            .first_fold()
            .ok_or_else(|| {
                SpikeError::NoSolution(format!(
                    "no fold on the one-spike branch for L <= {}",
                    opts.l_max
                ))
            })
    };
    let coarse = fold(n)?;
    let fine = fold(2 * n)?;
    Ok(FoldEstimate {
        n,
        coarse,
        fine,
        extrapolated: (4.0 * fine - coarse) / 3.0,
    })
}

/// Options of [`multi_branch_atlas`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtlasOptions {
    /// Full-domain grid intervals.
    pub n: usize,
    #[serde(rename = "L_range")]
    pub l_range: (f64, f64),
    pub max_half_spikes: usize,
    /// Also build the boundary-spike patterns (spikes at `x = ±1`) for even counts.
    pub boundary_patterns: bool,
    pub continuation: ContinuationOptions,
}

impl Default for AtlasOptions {
    fn default() -> Self {
        Self {
            n: 2048,
            l_range: (0.5, 6.0),
            max_half_spikes: 6,
            boundary_patterns: false,
            continuation: ContinuationOptions::default(),
        }
    }
}

/// One atlas entry (branch or the reason it could not be built).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub half_spikes: usize,
    pub boundary: bool,
    pub centers: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<SteadyBranch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Branches with successive half-spike counts `m = 1, …, max_half_spikes`
/// on the full domain. Pattern `m` has cells of half-width `2/m` with spikes at
/// `−1 + k·(2/m)`: odd `m` includes a boundary half-spike at `x = −1`; even `m`
/// is interior (and optionally the boundary variant with spikes at `±1`).
/// Each branch starts at the smallest `L` in the range where Newton converges
/// from the asymptotic guess and is continued in increasing `L`.
pub fn multi_branch_atlas(spec: &ModelSpec, opts: &AtlasOptions) -> Vec<AtlasEntry> {
    let mut jobs: Vec<(usize, bool)> = Vec::new();
    for m in 1..=opts.max_half_spikes {
        jobs.push((m, m % 2 == 1));
        if opts.boundary_patterns && m % 2 == 0 {
            jobs.push((m, true));
        }
    }
    jobs.par_iter()
        .map(|&(m, boundary)| {
            let centers = half_spike_positions(m, boundary);
            let ell = 2.0 / m as f64;
            let id = format!("{}{}", m, if boundary && m % 2 == 0 { "b" } else { "" });
            let result = atlas_branch(spec, opts, &centers, ell, &id, m);
            let (branch, error) = match result {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e.to_string())),
            };
            AtlasEntry {
                half_spikes: m,
                boundary,
                centers,
                branch,
                error,
            }
        })
        .collect()
}

fn atlas_branch(
    spec: &ModelSpec,
    opts: &AtlasOptions,
    centers: &[f64],
    ell: f64,
    id: &str,
    m: usize,
) -> Result<SteadyBranch> {
    let mesh = Mesh::full(opts.n);
    let (l0, l1) = opts.l_range;
    let mut last_err = SpikeError::NoSolution("empty L range".into());
    for k in 0..24 {
        let length = l0 + (l1 - l0) * k as f64 / 24.0;
        if mesh.check_resolution(spec, length).is_err() {
            break;
        }
        match steady_solve(
            spec,
            mesh,
            length,
            &SteadyGuess::Pattern {
                centers: centers.to_vec(),
                ell,
            },
        ) {
            Ok(start) => {
                let c = ContinuationOptions {
                    l_min: l0,
                    l_max: l1,
                    ..opts.continuation
                };
                let lineage = Lineage {
                    parent: None,
                    branch_point: None,
                    start: format!("{m} half-spikes at x = {centers:?}, L = {length:.3}"),
                };
                return continue_in_l(spec, &start, 1.0, &c, id, lineage);
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// One row of an overlay dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub source: String,
    #[serde(rename = "L")]
    pub length: f64,
    pub l2norm_v: f64,
    pub stability: Option<Stability>,
    /// Event kind for trajectory rows at a jump.
    pub event: Option<EventKind>,
}

/// Merged trajectory/branch dataset for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub rows: Vec<OverlayRow>,
    /// Trajectory `L` values where it leaves the branch it was tracking.
    pub jumps: Vec<(f64, Option<EventKind>)>,
}

fn l2_full(v: &[f32], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() - 1 {
        let (a, b) = (v[i] as f64, v[i + 1] as f64);
        s += 0.5 * (x[i + 1] - x[i]) * (a * a + b * b);
    }
    s.sqrt()
}

/// Overlay a trajectory on atlas branches in the `(L, ‖v‖₂)` plane. A jump is
/// recorded where the trajectory's distance to its current nearest branch
/// exceeds five times the trailing median distance; the event of the log
/// closest in `L` annotates it.
pub fn overlay(traj: &SimTrajectory, atlas: &[SteadyBranch]) -> Overlay {
    let mut rows = Vec::new();
    for b in atlas {
        for p in &b.points {
            rows.push(OverlayRow {
                source: format!("branch_{}", b.branch_id),
                length: p.length,
                l2norm_v: p.measures.l2_v,
                stability: Some(p.stability),
                event: None,
            });
        }
    }
    // Distance from a trajectory point to the nearest branch at the same L.
    let distance = |l: f64, y: f64| -> (f64, Option<usize>) {
        (0..atlas.len())
            .map(|k| (distance_to(atlas, k, l, y), Some(k)))
            .fold(
                (f64::INFINITY, None),
                |best, c| if c.0 < best.0 { c } else { best },
            )
    };
    let mut jumps = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut tracking: Option<usize> = None;
    for snap in &traj.snapshots {
        let y = l2_full(&snap.v, &traj.x);
        let (d, k) = distance(snap.length, y);
        let mut jumped = false;
        if let (Some(prev), Some(now)) = (tracking, k) {
            let mut trail: Vec<f64> = history.iter().rev().take(20).copied().collect();
            trail.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = trail.get(trail.len() / 2).copied().unwrap_or(0.0);
            if now != prev
                && trail.len() >= 3
                && d.is_finite()
                && distance_to(atlas, prev, snap.length, y) > 5.0 * med.max(1e-3)
            {
                jumped = true;
            }
        }
        let event = if jumped {
            traj.events
                .entries
                .iter()
                .min_by(|a, b| {
                    (a.length - snap.length)
                        .abs()
                        .partial_cmp(&(b.length - snap.length).abs())
                        .unwrap()
                })
                .map(|e| e.kind)
        } else {
            None
        };
        if jumped {
            jumps.push((snap.length, event));
            history.clear();
        }
        if k.is_some() {
            tracking = k;
            history.push(d);
        }
        rows.push(OverlayRow {
            source: "trajectory".into(),
            length: snap.length,
            l2norm_v: y,
            stability: None,
            event,
        });
    }
    Overlay { rows, jumps }
}

fn distance_to(atlas: &[SteadyBranch], k: usize, l: f64, y: f64) -> f64 {
    let b = &atlas[k];
    let mut best = f64::INFINITY;
    for s in b.points.windows(2) {
        let (p, q) = (&s[0], &s[1]);
        let (lo, hi) = (p.length.min(q.length), p.length.max(q.length));
        if l < lo || l > hi || hi - lo <= 0.0 {
            continue;
        }
        let t = (l - p.length) / (q.length - p.length);
        let yb = p.measures.l2_v + t * (q.measures.l2_v - p.measures.l2_v);
        best = best.min((y - yb).abs() / y.abs().max(1e-12));
    }
    best
}

impl Overlay {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,L,l2norm_v,stability,event\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.8},{:.8e},{},{}",
                r.source,
                r.length,
                r.l2norm_v,
                r.stability.map_or("", |x| x.as_str()),
                r.event.map_or("", |e| e.as_str())
            );
        }
        s
    }
}

/// Plot branches in the `(L, measure)` plane: solid stable, dashed unstable,
/// folds as red dots. `measure` picks `μ`, `u(0)v(0)` or `‖v‖₂`.
pub fn branches_svg(
    branches: &[SteadyBranch],
    measure: fn(&Measures) -> f64,
    y_label: &str,
    trajectory: Option<&[(f64, f64)]>,
) -> String {
    let mut xs: Vec<f64> = branches
        .iter()
        .flat_map(|b| b.points.iter().map(|p| p.length))
        .collect();
    let mut ys: Vec<f64> = branches
        .iter()
        .flat_map(|b| b.points.iter().map(|p| measure(&p.measures)))
        .collect();
    if let Some(t) = trajectory {
        xs.extend(t.iter().map(|p| p.0));
        ys.extend(t.iter().map(|p| p.1));
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    };
    let frame = Frame {
        x_range: range(&xs),
        y_range: range(&ys),
        left: 80.0,
        top: 20.0,
        width: 520.0,
        height: 380.0,
    };
    let mut svg = Svg::new(640.0, 460.0);
    let palette = [
        Rgb(31, 119, 180),
        Rgb(44, 160, 44),
        Rgb(148, 103, 189),
        Rgb(140, 86, 75),
        Rgb(23, 190, 207),
        Rgb(127, 127, 127),
    ];
    for (k, b) in branches.iter().enumerate() {
        let colour = palette[k % palette.len()];
        let mut seg: Vec<(f64, f64)> = Vec::new();
        let mut seg_stable = None;
        for p in &b.points {
            let xy = (frame.px(p.length), frame.py(measure(&p.measures)));
            let stable = p.stability == Stability::Stable;
            if seg_stable.is_some_and(|s: bool| s != stable) {
                seg.push(xy);
                svg.polyline(&seg, colour, 2.0, !seg_stable.unwrap());
                seg = vec![xy];
            } else {
                seg.push(xy);
            }
            seg_stable = Some(stable);
        }
        svg.polyline(&seg, colour, 2.0, !seg_stable.unwrap_or(true));
        for f in &b.folds {
            let p = &b.points[f.index];
            svg.circle(
                frame.px(p.length),
                frame.py(measure(&p.measures)),
                4.0,
                Rgb(214, 39, 40),
            );
        }
    }
    if let Some(t) = trajectory {
        let pts: Vec<(f64, f64)> = t
            .iter()
            .map(|(l, y)| (frame.px(*l), frame.py(*y)))
            .collect();
        svg.polyline(&pts, Rgb(230, 180, 0), 1.5, false);
    }
    svg.axes(&frame, "L", y_label);
    svg.finish()
}

/// Write the branch CSV of several branches.
pub fn write_branches_csv(path: &std::path::Path, branches: &[SteadyBranch]) -> Result<()> {
    let mut s = String::new();
    for (k, b) in branches.iter().enumerate() {
        s.push_str(&b.to_csv(k == 0));
    }
    write_file(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bordered_solve_matches_dense() {
        let mut j = BandMatrix::zeros(4, 2, 2);
        let dense = [
            [4.0, 1.0, 0.5, 0.0],
            [1.0, 3.0, 1.0, 0.2],
            [0.3, 1.0, 5.0, 1.0],
            [0.0, 0.1, 1.0, 2.0],
        ];
        for (i, row) in dense.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                if j.in_band(i, k) {
                    j.set(i, k, *v);
                }
            }
        }
        let fl = [1.0, -1.0, 0.5, 2.0];
        let c = [0.2, 0.1, -0.3, 0.4];
        let (x, y) = bordered_solve(
            &j,
            &j.clone().factor().unwrap(),
            &fl,
            &c,
            0.7,
            &[1.0, 2.0, 3.0, 4.0],
            0.5,
        );
        let jx = j.matvec(&x);
        for i in 0..4 {
            assert!((jx[i] + fl[i] * y - [1.0, 2.0, 3.0, 4.0][i]).abs() < 1e-12);
        }
        let q: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + 0.7 * y;
        assert!((q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_solve_is_exact() {
        let spec = ModelSpec::schnakenberg(1.5, 1.0, 0.05, 2.0).unwrap();
        let s = steady_solve(&spec, Mesh::half(64), 1.0, &SteadyGuess::Homogeneous).unwrap();
        assert!((s.z[0] - 2.5).abs() < 1e-12 && (s.z[1] - 1.0 / 6.25).abs() < 1e-12);
    }
}
