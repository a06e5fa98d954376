//! The half-line inner ("core") problems of a single spike:
//!
//! * Schnakenberg: `V″ − V + UV² = 0`, `U″ − UV² = 0`,
//! * Brusselator: `V″ − V + fUV² = 0`, `U″ + V − UV² = 0`,
//!
//! on `y ≥ 0` with `V′(0) = U′(0) = 0`, `V → 0` and `U ~ By + C` as `y → ∞`.
//!
//! The problem is truncated to `[0, y_max]` and discretised with second-order
//! central differences (ghost node at `y = 0`, Dirichlet `V(y_max) = 0`,
//! Robin `U′(y_max) = B`). Unknowns are interleaved `[V₀, U₀, V₁, U₁, …]` so
//! the Newton matrix is banded. Solutions are parameterised either by the far-
//! field slope `B` or by `β = U(0)V(0)`; the latter replaces the Robin row by the
//! pin `U₀V₀ = β` and stays regular at the fold of `B`.

use crate::error::{Result, SpikeError};
use crate::numerics::{BandMatrix, CubicSpline};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Residual tolerance for the (h²-scaled) discrete system.
pub const NEWTON_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 50;
/// Largest tail-fit deviation accepted by [`farfield_constant`].
pub const TAIL_TOL: f64 = 1e-3;

/// Which core problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CoreModel {
    Schnakenberg,
    Brusselator { f: f64 },
}

impl CoreModel {
    /// Coefficient of `UV²` in the activator equation.
    fn gain(&self) -> f64 {
        match self {
            CoreModel::Schnakenberg => 1.0,
            CoreModel::Brusselator { f } => *f,
        }
    }

    /// Coefficient of `V` in the substrate equation.
    fn source(&self) -> f64 {
        match self {
            CoreModel::Schnakenberg => 0.0,
            CoreModel::Brusselator { .. } => 1.0,
        }
    }

    pub fn f(&self) -> Option<f64> {
        match self {
            CoreModel::Schnakenberg => None,
            CoreModel::Brusselator { f } => Some(*f),
        }
    }

    /// Limit of `β` as `B → 0⁺` on the primary branch.
    pub fn beta_limit(&self) -> f64 {
        1.5 / self.gain()
    }

    fn validate(&self) -> Result<()> {
        if let CoreModel::Brusselator { f } = self {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(SpikeError::InvalidParameter(format!(
                    "Brusselator core requires 0 < f < 1 (f={f})"
                )));
            }
        }
        Ok(())
    }

    fn key(&self) -> u64 {
        match self {
            CoreModel::Schnakenberg => u64::MAX,
            CoreModel::Brusselator { f } => f.to_bits(),
        }
    }
}

/// Truncation and resolution of the half line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreGrid {
    pub y_max: f64,
    pub n: usize,
}

impl Default for CoreGrid {
    fn default() -> Self {
        Self {
            y_max: 16.0,
            n: 3200,
        }
    }
}

impl CoreGrid {
    pub fn h(&self) -> f64 {
        self.y_max / self.n as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.y_max >= 12.0) || self.n < 800 {
            return Err(SpikeError::InvalidParameter(format!(
                "core grid needs y_max >= 12 and n >= 800 (got y_max={}, n={})",
                self.y_max, self.n
            )));
        }
        Ok(())
    }

    /// Same spacing, different truncation length.
    pub fn with_y_max(&self, y_max: f64) -> Self {
        let n = (y_max / self.h()).round() as usize;
        Self { y_max, n }
    }
}

/// Which scalar is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoreTarget {
    /// Far-field slope `B` pinned (Robin condition at `y_max`).
    B(f64),
    /// `β = U(0)V(0)` pinned; `B` is an output.
    Beta(f64),
}

/// Discrete solution of a core problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoreSolution {
    pub model: CoreModel,
    pub grid: CoreGrid,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    /// Far-field slope.
    pub b: f64,
    /// Far-field intercept `C`.
    pub c: f64,
    /// Largest deviation of the tail from `By + C` over the fit window.
    pub tail_deviation: f64,
    pub beta: f64,
    /// Max-norm of the h²-scaled discrete residual.
    pub residual_norm: f64,
    pub newton_iterations: usize,
}

impl CoreSolution {
    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    /// `∫ U V² dy` by the trapezoid rule.
    pub fn flux_integral(&self) -> f64 {
        let w: Vec<f64> = self.u.iter().zip(&self.v).map(|(u, v)| u * v * v).collect();
        crate::numerics::quad::trapezoid(&w, self.h())
    }

    /// Flux identity value that should equal `B`: `∫UV²` (Schnakenberg) or
    /// `(1 − f)∫UV²` (Brusselator).
    pub fn flux_identity(&self) -> f64 {
        match self.model {
            CoreModel::Schnakenberg => self.flux_integral(),
            CoreModel::Brusselator { f } => (1.0 - f) * self.flux_integral(),
        }
    }

    /// One-sided slope of `U` at `y_max` including the Robin correction, i.e.
    /// the discrete `U′(y_max)`.
    pub fn end_slope(&self) -> f64 {
        let n = self.grid.n;
        let h = self.h();
        let s = self.model.source();
        (self.u[n] - self.u[n - 1]) / h
            - 0.5 * h * (s * self.v[n] - self.u[n] * self.v[n] * self.v[n])
    }

    /// Maximum of `V` and its location.
    pub fn v_max(&self) -> (f64, f64) {
        let (i, v) =
            self.v.iter().enumerate().fold(
                (0, f64::MIN),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        (self.y[i], v)
    }

    /// True for the double-humped profile with `V(0) < max V`.
    pub fn is_volcano(&self) -> bool {
        self.v_max().1 > self.v[0] * (1.0 + 1e-9)
    }

    /// CSV with columns `y,V0,U0`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,V0,U0\n");
        for i in 0..self.y.len() {
            s.push_str(&format!(
                "{:.10e},{:.12e},{:.12e}\n",
                self.y[i], self.v[i], self.u[i]
            ));
        }
        s
    }

    fn state(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.y.len());
        for i in 0..self.y.len() {
            z.push(self.v[i]);
            z.push(self.u[i]);
        }
        z
    }
}

/// Far-field fit of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarField {
    pub c: f64,
    pub deviation: f64,
}

/// Least-squares constant fit of the linearised tail over `[0.7, 0.9]·y_max`.
///
/// For Schnakenberg the fitted quantity is `U − By`. For the Brusselator the
/// substrate equation carries a `+V` source, so `U` alone approaches its
/// asymptote only as fast as `V` decays (∝ e^{−y}); the combination `U + V`
/// satisfies `(U + V)″ = (1 − f)UV²`, is linear up to `O(e^{−2y})` and has the
/// same limit, so it is fitted instead.
pub fn farfield_constant(sol: &CoreSolution) -> Result<FarField> {
    let ff = tail_fit(sol.model, &sol.y, &sol.v, &sol.u, sol.b);
    if ff.deviation > TAIL_TOL {
        return Err(SpikeError::TailNotLinear {
            deviation: ff.deviation,
        });
    }
    Ok(ff)
}

fn tail_fit(model: CoreModel, y: &[f64], v: &[f64], u: &[f64], b: f64) -> FarField {
    let y_max = *y.last().unwrap();
    let (lo, hi) = (0.7 * y_max, 0.9 * y_max);
    let q: Vec<f64> = (0..y.len())
        .filter(|&i| y[i] >= lo - 1e-12 && y[i] <= hi + 1e-12)
        .map(|i| {
            let extra = match model {
                CoreModel::Schnakenberg => 0.0,
                CoreModel::Brusselator { .. } => v[i],
            };
            u[i] + extra - b * y[i]
        })
        .collect();
    let c = q.iter().sum::<f64>() / q.len() as f64;
    let deviation = q.iter().fold(0.0f64, |m, x| m.max((x - c).abs()));
    FarField { c, deviation }
}

struct Layout {
    n: usize,
    beta_mode: bool,
}

impl Layout {
    fn dim(&self) -> usize {
        2 * (self.n + 1)
    }
    fn band(&self) -> (usize, usize) {
        if self.beta_mode {
            (3, 1)
        } else {
            (2, 2)
        }
    }
    fn vrow(&self, i: usize) -> usize {
        if self.beta_mode {
            2 * i + 1
        } else {
            2 * i
        }
    }
    fn urow(&self, i: usize) -> Option<usize> {
        if self.beta_mode {
            (i < self.n).then_some(2 * i + 2)
        } else {
            Some(2 * i + 1)
        }
    }
}

/// Residual (and optionally Jacobian) of the h²-scaled discrete system.
fn assemble(
    model: CoreModel,
    grid: CoreGrid,
    target: CoreTarget,
    z: &[f64],
    jac: Option<&mut BandMatrix<f64>>,
) -> Vec<f64> {
    let n = grid.n;
    let h = grid.h();
    let h2 = h * h;
    let layout = Layout {
        n,
        beta_mode: matches!(target, CoreTarget::Beta(_)),
    };
    let gain = model.gain();
    let src = model.source();
    let v = |i: usize| z[2 * i];
    let u = |i: usize| z[2 * i + 1];
    let cv = |i: usize| 2 * i;
    let cu = |i: usize| 2 * i + 1;
    let mut r = vec![0.0; layout.dim()];
    let mut jac = jac;
    if let Some(j) = jac.as_deref_mut() {
        for row in 0..layout.dim() {
            j.clear_row(row);
        }
    }
    for i in 0..=n {
        let (vi, ui) = (v(i), u(i));
        // activator rows
        let rv = layout.vrow(i);
        if i < n {
            let (lap, left, right) = if i == 0 {
                (2.0 * v(1) - 2.0 * vi, None, 2.0)
            } else {
                (v(i - 1) - 2.0 * vi + v(i + 1), Some(1.0), 1.0)
            };
            r[rv] = lap + h2 * (-vi + gain * ui * vi * vi);
            if let Some(j) = jac.as_deref_mut() {
                if let Some(l) = left {
                    j.add(rv, cv(i - 1), l);
                }
                j.add(rv, cv(i + 1), right);
                j.add(rv, cv(i), -2.0 + h2 * (-1.0 + 2.0 * gain * ui * vi));
                j.add(rv, cu(i), h2 * gain * vi * vi);
            }
        } else {
            r[rv] = vi;
            if let Some(j) = jac.as_deref_mut() {
                j.add(rv, cv(i), 1.0);
            }
        }
        // substrate rows
        if let Some(ru) = layout.urow(i) {
            let kin = h2 * (src * vi - ui * vi * vi);
            let dkin_dv = h2 * (src - 2.0 * ui * vi);
            let dkin_du = -h2 * vi * vi;
            if i == 0 {
                r[ru] = 2.0 * u(1) - 2.0 * ui + kin;
                if let Some(j) = jac.as_deref_mut() {
                    j.add(ru, cu(1), 2.0);
                    j.add(ru, cu(0), -2.0 + dkin_du);
                    j.add(ru, cv(0), dkin_dv);
                }
            } else if i < n {
                r[ru] = u(i - 1) - 2.0 * ui + u(i + 1) + kin;
                if let Some(j) = jac.as_deref_mut() {
                    j.add(ru, cu(i - 1), 1.0);
                    j.add(ru, cu(i + 1), 1.0);
                    j.add(ru, cu(i), -2.0 + dkin_du);
                    j.add(ru, cv(i), dkin_dv);
                }
            } else {
                let b = match target {
                    CoreTarget::B(b) => b,
                    CoreTarget::Beta(_) => unreachable!("Robin row only in B mode"),
                };
                r[ru] = 2.0 * u(n - 1) - 2.0 * ui + 2.0 * h * b + kin;
                if let Some(j) = jac.as_deref_mut() {
                    j.add(ru, cu(n - 1), 2.0);
                    j.add(ru, cu(n), -2.0 + dkin_du);
                    j.add(ru, cv(n), dkin_dv);
                }
            }
        }
    }
    if let CoreTarget::Beta(beta) = target {
        r[0] = u(0) * v(0) - beta;
        if let Some(j) = jac {
            j.add(0, cv(0), u(0));
            j.add(0, cu(0), v(0));
        }
    }
    r
}

fn max_abs(v: &[f64]) -> f64 {
    crate::numerics::max_abs(v)
}

/// Damped Newton iteration; returns the state, residual norm and iteration count.
fn newton(
    model: CoreModel,
    grid: CoreGrid,
    target: CoreTarget,
    mut z: Vec<f64>,
) -> Result<(Vec<f64>, f64, usize)> {
    let layout = Layout {
        n: grid.n,
        beta_mode: matches!(target, CoreTarget::Beta(_)),
    };
    let (kl, ku) = layout.band();
    let mut jac = BandMatrix::zeros(layout.dim(), kl, ku);
    let mut r = assemble(model, grid, target, &z, Some(&mut jac));
    let mut rn = max_abs(&r);
    for it in 0..MAX_NEWTON {
        let lu = jac
            .clone()
            .factor()
            .map_err(|_| SpikeError::NewtonDiverged {
                iterations: it,
                residual: rn,
            })?;
        let mut dz = r.clone();
        lu.solve_in_place(&mut dz);
        if rn < NEWTON_TOL {
            // one extra full step removes the remaining noise (quadratic
            // convergence), which keeps differences of nearby solutions clean
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a - d).collect();
            let rtn = max_abs(&assemble(model, grid, target, &trial, None));
            if rtn < rn {
                return Ok((trial, rtn, it + 1));
            }
            return Ok((z, rn, it));
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a - lambda * d).collect();
            let rt = assemble(model, grid, target, &trial, None);
            let rtn = max_abs(&rt);
            if rtn.is_finite() && (rtn < rn * (1.0 - 1e-4 * lambda) || rtn < NEWTON_TOL) {
                z = trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(SpikeError::NewtonDiverged {
                iterations: it + 1,
                residual: rn,
            });
        }
        r = assemble(model, grid, target, &z, Some(&mut jac));
        rn = max_abs(&r);
    }
    if rn < NEWTON_TOL {
        Ok((z, rn, MAX_NEWTON))
    } else {
        Err(SpikeError::NewtonDiverged {
            iterations: MAX_NEWTON,
            residual: rn,
        })
    }
}

fn finish(
    model: CoreModel,
    grid: CoreGrid,
    target: CoreTarget,
    z: Vec<f64>,
    rn: f64,
    iters: usize,
) -> CoreSolution {
    let n = grid.n;
    let y = crate::numerics::linspace(0.0, grid.y_max, n);
    let v: Vec<f64> = (0..=n).map(|i| z[2 * i]).collect();
    let u: Vec<f64> = (0..=n).map(|i| z[2 * i + 1]).collect();
    let mut sol = CoreSolution {
        model,
        grid,
        y,
        v,
        u,
        b: 0.0,
        c: 0.0,
        tail_deviation: 0.0,
        beta: z[0] * z[1],
        residual_norm: rn,
        newton_iterations: iters,
    };
    sol.b = match target {
        CoreTarget::B(b) => b,
        CoreTarget::Beta(_) => sol.end_slope(),
    };
    let ff = tail_fit(model, &sol.y, &sol.v, &sol.u, sol.b);
    sol.c = ff.c;
    sol.tail_deviation = ff.deviation;
    sol
}

/// Small-`B` asymptotic spike used to start Newton.
fn asymptotic_seed(model: CoreModel, grid: CoreGrid, b: f64) -> Vec<f64> {
    let gain = model.gain();
    let ubar = 3.0 * (1.0 - model.source() * gain) / (gain * gain * b);
    let ubar = if ubar > 0.0 { ubar } else { 3.0 / b };
    let h = grid.h();
    let mut z = Vec::with_capacity(2 * (grid.n + 1));
    for i in 0..=grid.n {
        let y = i as f64 * h;
        let s = 1.0 / (0.5 * y).cosh();
        z.push(1.5 * s * s / (gain * ubar));
        z.push(ubar + b * y);
    }
    let last = z.len() - 2;
    z[last] = 0.0;
    z
}

fn seed_state(grid: CoreGrid, seed: &CoreSolution) -> Vec<f64> {
    if seed.grid == grid {
        return seed.state();
    }
    // resample a seed from another grid; beyond its y_max extend linearly
    let h = grid.h();
    let mut z = Vec::with_capacity(2 * (grid.n + 1));
    for i in 0..=grid.n {
        let y = i as f64 * h;
        if y <= seed.grid.y_max {
            z.push(
                crate::numerics::spline::interp_uniform_cubic(&seed.v, 0.0, seed.h(), y).max(0.0),
            );
            z.push(crate::numerics::spline::interp_uniform_cubic(
                &seed.u,
                0.0,
                seed.h(),
                y,
            ));
        } else {
            z.push(0.0);
            z.push(seed.u[seed.grid.n] + seed.b * (y - seed.grid.y_max));
        }
    }
    let last = z.len() - 2;
    z[last] = 0.0;
    z
}

fn solve_raw(
    model: CoreModel,
    target: CoreTarget,
    grid: CoreGrid,
    seed: Option<&CoreSolution>,
    state: Option<Vec<f64>>,
) -> Result<CoreSolution> {
    let z0 = match (state, seed) {
        (Some(z), _) => z,
        (None, Some(s)) => seed_state(grid, s),
        (None, None) => {
            let b = match target {
                CoreTarget::B(b) => b,
                CoreTarget::Beta(_) => 0.05,
            };
            asymptotic_seed(model, grid, b)
        }
    };
    let (z, rn, it) = newton(model, grid, target, z0)?;
    let sol = finish(model, grid, target, z, rn, it);
    if sol.v.iter().any(|&x| x < -1e-12) || sol.u.iter().any(|&x| x <= 0.0) {
        return Err(SpikeError::NoSolution(
            "Newton converged to a non-positive profile".into(),
        ));
    }
    Ok(sol)
}

/// Solve the core problem for a pinned `B` or `β`.
///
/// Without a seed the small-`B` asymptotic spike is used, which is only
/// reliable for moderate `B` (or `β` near its small-`B` limit); an unseeded
/// `β` target that fails from there is reached by marching along the cached
/// branch instead.
pub fn solve_core(
    model: CoreModel,
    target: CoreTarget,
    grid: CoreGrid,
    seed: Option<&CoreSolution>,
) -> Result<CoreSolution> {
    model.validate()?;
    grid.validate()?;
    match target {
        CoreTarget::B(b) if !(b > 0.0 && b.is_finite()) => {
            return Err(SpikeError::InvalidParameter(format!(
                "B must be positive, got {b}"
            )))
        }
        CoreTarget::Beta(beta) if !(beta > 0.0 && beta.is_finite()) => {
            return Err(SpikeError::InvalidParameter(format!(
                "beta must be positive, got {beta}"
            )))
        }
        _ => {}
    }
    match solve_raw(model, target, grid, seed, None) {
        Ok(s) => Ok(s),
        Err(e) if seed.is_none() && matches!(target, CoreTarget::Beta(_)) => {
            let CoreTarget::Beta(beta) = target else {
                unreachable!()
            };
            march_to_beta(model, beta, grid).map_err(|_| e)
        }
        Err(e) => {
            if let CoreTarget::B(b) = target {
                if let Ok(branch) = cached_branch(model) {
                    if let Some(fold) = &branch.fold {
                        if b > fold.b_c {
                            return Err(SpikeError::NoSolution(format!(
                                "B = {b} exceeds the fold value B_c = {:.6}",
                                fold.b_c
                            )));
                        }
                    }
                }
            }
            Err(e)
        }
    }
}

/// Reach a pinned `β` far from the small-`B` limit by marching in `β` from
/// the cached branch: from an unseeded solve at the nearest primary sample's
/// `B`, or from the fold profile for targets on the lower branch.
fn march_to_beta(model: CoreModel, beta: f64, grid: CoreGrid) -> Result<CoreSolution> {
    const STEP: f64 = 0.02;
    let branch = cached_branch(model)?;
    let fold = branch
        .fold
        .as_ref()
        .ok_or_else(|| SpikeError::NoSolution("core branch has no fold".into()))?;
    let mut sol = if beta >= fold.beta_c {
        let near = branch
            .primary()
            .min_by(|p, q| (p.beta - beta).abs().total_cmp(&(q.beta - beta).abs()));
        let b = near.map(|s| s.b).unwrap_or(fold.b_c);
        solve_raw(model, CoreTarget::B(b), grid, None, None)?
    } else {
        let start = fold
            .solution
            .as_ref()
            .ok_or_else(|| SpikeError::NoSolution("fold profile not retained".into()))?;
        solve_raw(
            model,
            CoreTarget::Beta(fold.beta_c),
            grid,
            Some(start),
            None,
        )?
    };
    while (sol.beta - beta).abs() > 1e-12 {
        let next = if (beta - sol.beta).abs() <= STEP {
            beta
        } else {
            sol.beta + STEP * (beta - sol.beta).signum()
        };
        sol = solve_raw(model, CoreTarget::Beta(next), grid, Some(&sol), None)?;
    }
    Ok(sol)
}

/// One point on a core branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoreSample {
    pub b: f64,
    pub beta: f64,
    pub c: f64,
    #[serde(skip)]
    pub solution: Option<Arc<CoreSolution>>,
}

/// The fold (saddle node) of a core branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoreFold {
    pub b_c: f64,
    pub beta_c: f64,
    pub c_c: f64,
    #[serde(skip)]
    pub solution: Option<Arc<CoreSolution>>,
}

/// A traced branch of core solutions ordered by decreasing `β`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoreBranch {
    pub model: CoreModel,
    pub grid: CoreGrid,
    pub samples: Vec<CoreSample>,
    pub fold: Option<CoreFold>,
}

impl CoreBranch {
    /// CSV with columns `f,B,beta,C,is_fold`; the fold row is inserted in order.
    pub fn to_csv(&self) -> String {
        let f = self.model.f().map(|f| format!("{f}")).unwrap_or_default();
        let mut rows: Vec<(f64, f64, f64, bool)> = self
            .samples
            .iter()
            .map(|s| (s.b, s.beta, s.c, false))
            .collect();
        if let Some(fold) = &self.fold {
            rows.push((fold.b_c, fold.beta_c, fold.c_c, true));
        }
        rows.sort_by(|p, q| q.1.partial_cmp(&p.1).unwrap());
        let mut s = String::from("f,B,beta,C,is_fold\n");
        for (b, beta, c, is_fold) in rows {
            s.push_str(&format!(
                "{f},{b:.10},{beta:.10},{c:.10},{}\n",
                is_fold as u8
            ));
        }
        s
    }

    /// Samples on the primary (upper) branch, i.e. `β ≥ β_c`.
    pub fn primary(&self) -> impl Iterator<Item = &CoreSample> {
        let beta_c = self
            .fold
            .as_ref()
            .map(|f| f.beta_c)
            .unwrap_or(f64::NEG_INFINITY);
        self.samples.iter().filter(move |s| s.beta >= beta_c)
    }

    /// Samples past the fold (lower branch).
    pub fn lower(&self) -> impl Iterator<Item = &CoreSample> {
        let beta_c = self
            .fold
            .as_ref()
            .map(|f| f.beta_c)
            .unwrap_or(f64::NEG_INFINITY);
        self.samples.iter().filter(move |s| s.beta < beta_c)
    }

    /// Sample nearest to a given `β`.
    pub fn nearest(&self, beta: f64) -> Option<&CoreSample> {
        self.samples.iter().min_by(|p, q| {
            (p.beta - beta)
                .abs()
                .partial_cmp(&(q.beta - beta).abs())
                .unwrap()
        })
    }
}

/// Step control for [`continue_core_branch`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchOptions {
    pub grid: CoreGrid,
    /// Starting slope on the primary branch (small).
    pub b_start: f64,
    /// Stop once `β` falls below this value (after the fold). `None` stops
    /// at `0.75·β_c`.
    pub beta_min: Option<f64>,
    /// Step length in the `(B, β)` plane.
    pub ds: f64,
    /// Smallest step before declaring failure.
    pub ds_min: f64,
    pub max_samples: usize,
    /// Keep the full profiles of every sample.
    pub keep_solutions: bool,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self {
            grid: CoreGrid::default(),
            b_start: 0.02,
            beta_min: None,
            ds: 0.008,
            ds_min: 1e-6,
            max_samples: 2000,
            keep_solutions: true,
        }
    }
}

struct Tracer {
    model: CoreModel,
    grid: CoreGrid,
    states: Vec<(f64, f64, Vec<f64>)>, // (B, beta, state) of accepted points
}

impl Tracer {
    fn predict(&self, target: CoreTarget) -> Vec<f64> {
        let k = self.states.len();
        let (b1, beta1, z1) = &self.states[k - 1];
        if k < 2 {
            return z1.clone();
        }
        let (b0, beta0, z0) = &self.states[k - 2];
        let t = match target {
            CoreTarget::B(b) => (b - b1) / (b1 - b0),
            CoreTarget::Beta(beta) => (beta - beta1) / (beta1 - beta0),
        };
        if !t.is_finite() || t.abs() > 3.0 {
            return z1.clone();
        }
        z1.iter().zip(z0).map(|(a, b)| a + t * (a - b)).collect()
    }

    fn solve(&self, target: CoreTarget) -> Result<CoreSolution> {
        solve_raw(
            self.model,
            target,
            self.grid,
            None,
            Some(self.predict(target)),
        )
    }
}

/// Trace the single-spike core branch from small `B` through the fold of `B`
/// onto the lower (volcano) branch.
///
/// Near `B → 0` the branch is parameterised by `B` (where `β` is nearly
/// degenerate); once `|dβ/dB|` exceeds one the parameterisation switches to
/// `β`, which is regular through the fold. The fold is the maximum of
/// `B(β)`, located by a sign change of `dB/dβ` along the branch and refined by
/// bisection on the sign of a central difference until `|ΔB| < 10⁻⁵`.
pub fn continue_core_branch(model: CoreModel, opts: &BranchOptions) -> Result<CoreBranch> {
    model.validate()?;
    opts.grid.validate()?;
    let first = solve_raw(model, CoreTarget::B(opts.b_start), opts.grid, None, None)?;
    let mut tracer = Tracer {
        model,
        grid: opts.grid,
        states: vec![(first.b, first.beta, first.state())],
    };
    let mut samples = vec![sample_of(first, opts.keep_solutions)];
    let mut ds = opts.ds;
    let mut beta_mode = false;
    let mut fold: Option<CoreFold> = None;
    while samples.len() < opts.max_samples {
        let k = tracer.states.len();
        let (b1, beta1, _) = tracer.states[k - 1];
        let slope = if k >= 2 {
            let (b0, beta0, _) = tracer.states[k - 2];
            (beta1 - beta0) / (b1 - b0)
        } else {
            0.0
        };
        if !beta_mode && slope.abs() > 1.0 {
            beta_mode = true;
        }
        let target = if beta_mode {
            let db_dbeta = if slope != 0.0 { 1.0 / slope } else { 0.0 };
            CoreTarget::Beta(beta1 - ds / (1.0 + db_dbeta * db_dbeta).sqrt())
        } else {
            CoreTarget::B(b1 + ds / (1.0 + slope * slope).sqrt())
        };
        match tracer.solve(target) {
            Ok(sol) if sol.beta < beta1 && sol.b > 0.0 => {
                tracer.states.push((sol.b, sol.beta, sol.state()));
                let done_beta = sol.beta;
                samples.push(sample_of(sol, opts.keep_solutions));
                ds = (ds * 1.3).min(opts.ds);
                let m = tracer.states.len();
                if fold.is_none() && beta_mode && m >= 3 {
                    let (ba, _, _) = tracer.states[m - 3];
                    let (bb, _, _) = tracer.states[m - 2];
                    let (bc, _, _) = tracer.states[m - 1];
                    if bb >= ba && bb > bc {
                        let hi = tracer.states[m - 3].1;
                        let lo = tracer.states[m - 1].1;
                        fold = Some(refine_fold(&tracer, lo, hi)?);
                    }
                }
                if let Some(f) = &fold {
                    let stop = opts.beta_min.unwrap_or(0.75 * f.beta_c);
                    if done_beta < stop {
                        break;
                    }
                }
            }
            _ => {
                ds *= 0.5;
                if ds < opts.ds_min {
                    if fold.is_some() {
                        // lower branch ended before beta_min; keep what we have
                        break;
                    }
                    return Err(SpikeError::StepFailure(format!(
                        "core continuation stalled at B={b1:.6}, beta={beta1:.6}"
                    )));
                }
            }
        }
    }
    if fold.is_none() && samples.len() >= opts.max_samples {
        return Err(SpikeError::MaxPointsExceeded);
    }
    Ok(CoreBranch {
        model,
        grid: opts.grid,
        samples,
        fold,
    })
}

fn sample_of(sol: CoreSolution, keep: bool) -> CoreSample {
    CoreSample {
        b: sol.b,
        beta: sol.beta,
        c: sol.c,
        solution: keep.then(|| Arc::new(sol)),
    }
}

/// Bisection on the sign of `dB/dβ` inside `[lo, hi]` (β values).
fn refine_fold(tracer: &Tracer, mut lo: f64, mut hi: f64) -> Result<CoreFold> {
    let slope_at = |beta: f64| -> Result<(f64, CoreSolution)> {
        let d = 1e-5;
        let mid = tracer.solve(CoreTarget::Beta(beta))?;
        let z = mid.state();
        let plus = solve_raw(
            tracer.model,
            CoreTarget::Beta(beta + d),
            tracer.grid,
            None,
            Some(z.clone()),
        )?;
        let minus = solve_raw(
            tracer.model,
            CoreTarget::Beta(beta - d),
            tracer.grid,
            None,
            Some(z),
        )?;
        Ok(((plus.b - minus.b) / (2.0 * d), mid))
    };
    let mut best: Option<CoreSolution> = None;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (slope, sol) = slope_at(mid)?;
        // dB/dβ < 0 on the primary side (β above the fold)
        if slope < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        let done = best
            .as_ref()
            .map(|b| (b.b - sol.b).abs() < 1e-7)
            .unwrap_or(false)
            && (hi - lo) < 1e-4;
        best = Some(sol);
        if done || hi - lo < 1e-7 {
            break;
        }
    }
    let sol = best.expect("at least one bisection step");
    Ok(CoreFold {
        b_c: sol.b,
        beta_c: sol.beta,
        c_c: sol.c,
        solution: Some(Arc::new(sol)),
    })
}

/// Monotone `(β, B, C)` table on the primary branch for evaluating `C(B)`.
#[derive(Debug, Clone)]
pub struct FarFieldTable {
    pub model: CoreModel,
    pub b_c: f64,
    pub beta_c: f64,
    pub c_c: f64,
    beta: Vec<f64>,
    b_of_beta: CubicSpline,
    c_of_beta: CubicSpline,
    b_min: f64,
    c_at_b_min: f64,
    beta_at_b_min: f64,
}

impl FarFieldTable {
    /// Build from a branch with a located fold.
    pub fn from_branch(branch: &CoreBranch) -> Result<Self> {
        let fold = branch.fold.as_ref().ok_or_else(|| {
            SpikeError::NoSolution("branch has no fold; cannot build C(B) table".into())
        })?;
        let mut rows: Vec<(f64, f64, f64)> = branch
            .primary()
            .filter(|s| s.beta > fold.beta_c + 1e-9)
            .map(|s| (s.beta, s.b, s.c))
            .collect();
        rows.push((fold.beta_c, fold.b_c, fold.c_c));
        rows.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        rows.dedup_by(|p, q| (p.0 - q.0).abs() < 1e-12);
        if rows.len() < 4 {
            return Err(SpikeError::NoSolution(
                "too few primary-branch samples for C(B) table".into(),
            ));
        }
        let beta: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let c: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let last = rows.len() - 1;
        Ok(Self {
            model: branch.model,
            b_c: fold.b_c,
            beta_c: fold.beta_c,
            c_c: fold.c_c,
            b_min: b[last],
            c_at_b_min: c[last],
            beta_at_b_min: beta[last],
            beta: beta.clone(),
            b_of_beta: CubicSpline::new(beta.clone(), b),
            c_of_beta: CubicSpline::new(beta, c),
        })
    }

    /// Number of tabulated points.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// `β` on the primary branch with `B(β) = b`, for `0 < b ≤ B_c`.
    pub fn beta_of_b(&self, b: f64) -> Result<f64> {
        if !(b > 0.0) || b > self.b_c * (1.0 + 1e-12) {
            return Err(SpikeError::Domain {
                xi: b,
                lo: 0.0,
                hi: self.b_c,
            });
        }
        if b <= self.b_min {
            return Ok(self.beta_at_b_min);
        }
        let (mut lo, mut hi) = (self.beta_c, self.beta_at_b_min);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.b_of_beta.eval(mid) > b {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Far-field constant on the primary branch at slope `b`.
    ///
    /// Below the smallest tabulated slope the small-`B` scaling `C ∝ 1/B` is used.
    pub fn c_of_b(&self, b: f64) -> Result<f64> {
        if b > 0.0 && b < self.b_min {
            return Ok(self.c_at_b_min * self.b_min / b);
        }
        let beta = self.beta_of_b(b)?;
        Ok(self.c_of_beta.eval(beta))
    }
}

type BranchCell = Arc<OnceLock<std::result::Result<Arc<CoreBranch>, String>>>;

fn branch_cache() -> &'static Mutex<HashMap<u64, BranchCell>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, BranchCell>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Default-resolution branch of a core model, computed once per process.
pub fn cached_branch(model: CoreModel) -> Result<Arc<CoreBranch>> {
    model.validate()?;
    let cell = {
        let mut map = branch_cache().lock().unwrap_or_else(|p| p.into_inner());
        map.entry(model.key()).or_default().clone()
    };
    cell.get_or_init(|| {
        let opts = BranchOptions {
            keep_solutions: false,
            ..BranchOptions::default()
        };
        continue_core_branch(model, &opts)
            .map(Arc::new)
            .map_err(|e| e.to_string())
    })
    .clone()
    .map_err(SpikeError::NoSolution)
}

/// Fold of the default-resolution branch.
pub fn cached_fold(model: CoreModel) -> Result<CoreFold> {
    cached_branch(model)?
        .fold
        .clone()
        .ok_or_else(|| SpikeError::NoSolution("core branch has no fold".into()))
}

/// The Schnakenberg core fold `(B_c, β_c, C_s(B_c))`.
pub fn schnakenberg_fold() -> Result<CoreFold> {
    cached_fold(CoreModel::Schnakenberg)
}

/// Cached far-field table of a model.
pub fn cached_table(model: CoreModel) -> Result<Arc<FarFieldTable>> {
    type TableCell = Arc<OnceLock<std::result::Result<Arc<FarFieldTable>, String>>>;
    static TABLES: OnceLock<Mutex<HashMap<u64, TableCell>>> = OnceLock::new();
    let cell = {
        let mut map = TABLES
            .get_or_init(|| Mutex::new(HashMap::new()))
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        map.entry(model.key()).or_default().clone()
    };
    cell.get_or_init(|| {
        cached_branch(model)
            .and_then(|b| FarFieldTable::from_branch(&b))
            .map(Arc::new)
            .map_err(|e| e.to_string())
    })
    .clone()
    .map_err(SpikeError::NoSolution)
}

/// One row of the Brusselator fold table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcRow {
    pub f: f64,
    pub b_c: f64,
    pub c_b: f64,
    pub beta_c: f64,
}

/// Brusselator fold `B_c(f)` and `C_b(B_c, f)` over a grid of `f`.
pub fn bc_table(f_grid: &[f64]) -> Result<Vec<BcRow>> {
    use rayon::prelude::*;
    f_grid
        .par_iter()
        .map(|&f| {
            let fold = cached_fold(CoreModel::Brusselator { f })?;
            Ok(BcRow {
                f,
                b_c: fold.b_c,
                c_b: fold.c_c,
                beta_c: fold.beta_c,
            })
        })
        .collect()
}

/// CSV serialisation of a fold table.
pub fn bc_table_csv(rows: &[BcRow]) -> String {
    let mut s = String::from("f,B_c,C_b,beta_c\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.10},{:.10},{:.10}\n",
            r.f, r.b_c, r.c_b, r.beta_c
        ));
    }
    s
}

/// Discrete Jacobian of the `B`-pinned system at a solution (h²-scaled rows,
/// interleaved unknowns). Used for the fold eigenvector check.
pub fn b_pinned_jacobian(sol: &CoreSolution) -> BandMatrix<f64> {
    let layout = Layout {
        n: sol.grid.n,
        beta_mode: false,
    };
    let (kl, ku) = layout.band();
    let mut jac = BandMatrix::zeros(layout.dim(), kl, ku);
    assemble(
        sol.model,
        sol.grid,
        CoreTarget::B(sol.b),
        &sol.state(),
        Some(&mut jac),
    );
    jac
}

/// `∂(V, U)/∂β` by central differences of two `β`-pinned solves.
pub fn beta_derivative(sol: &CoreSolution, delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let plus = solve_raw(
        sol.model,
        CoreTarget::Beta(sol.beta + delta),
        sol.grid,
        Some(sol),
        None,
    )?;
    let minus = solve_raw(
        sol.model,
        CoreTarget::Beta(sol.beta - delta),
        sol.grid,
        Some(sol),
        None,
    )?;
    let dv = plus
        .v
        .iter()
        .zip(&minus.v)
        .map(|(p, m)| (p - m) / (2.0 * delta))
        .collect();
    let du = plus
        .u
        .iter()
        .zip(&minus.u)
        .map(|(p, m)| (p - m) / (2.0 * delta))
        .collect();
    Ok((dv, du))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_b_matches_asymptotics() {
        let sol = solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::B(0.02),
            CoreGrid::default(),
            None,
        )
        .unwrap();
        assert!(sol.residual_norm < NEWTON_TOL);
        assert!((sol.beta - 1.5).abs() < 0.01, "beta = {}", sol.beta);
        assert!((sol.c * sol.b - 3.0).abs() < 0.1, "C*B = {}", sol.c * sol.b);
    }

    #[test]
    fn beta_and_b_pinning_agree() {
        let grid = CoreGrid {
            y_max: 16.0,
            n: 1600,
        };
        let a = solve_core(CoreModel::Schnakenberg, CoreTarget::B(0.3), grid, None).unwrap();
        let b = solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::Beta(a.beta),
            grid,
            Some(&a),
        )
        .unwrap();
        assert!((a.b - b.b).abs() < 1e-8, "{} vs {}", a.b, b.b);
        assert!((a.c - b.c).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(solve_core(
            CoreModel::Brusselator { f: 1.2 },
            CoreTarget::B(0.1),
            CoreGrid::default(),
            None
        )
        .is_err());
        assert!(solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::B(0.1),
            CoreGrid {
                y_max: 8.0,
                n: 3200
            },
            None
        )
        .is_err());
        assert!(solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::B(-0.1),
            CoreGrid::default(),
            None
        )
        .is_err());
    }
}
