//! Spatial discretisation shared by the time integrator ([`crate::pde`]) and
//! steady-state continuation ([`crate::continuation`]).
//!
//! The Lagrangian systems on `x ∈ [−1, 1]` (or the symmetric half `[0, 1]`)
//! are written as `M z′ = F(z; L, ρ)` with
//!
//! * Schnakenberg: `v_t = ε_L²v_xx − v + a + uv²`, `u_t = D_L u_xx + b − uv²`;
//! * Brusselator: `v_t = ε_L²v_xx − v + a + fuv²`, `u_t = D_L u_xx + v − uv²`;
//! * GM: `𝒜_t = ε_L²𝒜_xx − 𝒜 + 𝒜²/𝓗 + κ`, `τ𝓗_t = D_L𝓗_xx − 𝓗 + 𝒜²`;
//!
//! where `ε_L = ε/L`, `D_L = D/L²` and the optional dilution terms `−ρv`,
//! `−ρu` (weighted by the mass, so `−τρ𝓗` for GM) account for `L′/L = ρ`.
//! Second-order central differences with Neumann ghost nodes; the unknowns
//! are interleaved `[v₀, u₀, v₁, u₁, …]` so the Jacobian has bandwidth 2.

use crate::core_problem::{solve_core, CoreGrid, CoreModel, CoreTarget};
use crate::error::{Result, SpikeError};
use crate::models::{Model, ModelSpec};
use crate::numerics::spline::interp_linear;
use crate::numerics::BandMatrix;
use crate::outer::{
    gm_gamma, gm_small_kappa_h0, outer_profile, solve_quasi_equilibrium_cell, OuterOptions,
};
use serde::{Deserialize, Serialize};

/// Smallest number of grid cells across a spike core (`2ε_L`) before a
/// computation is refused.
pub const MIN_CELLS_PER_WIDTH: f64 = 6.0;

/// Uniform grid on `[x0, x1]` with `intervals + 1` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub x0: f64,
    pub x1: f64,
    pub intervals: usize,
}

impl Mesh {
    /// The full domain `[−1, 1]`.
    pub fn full(intervals: usize) -> Self {
        Self {
            x0: -1.0,
            x1: 1.0,
            intervals,
        }
    }

    /// The symmetric half `[0, 1]` (Neumann at `x = 0` encodes evenness).
    pub fn half(intervals: usize) -> Self {
        Self {
            x0: 0.0,
            x1: 1.0,
            intervals,
        }
    }

    pub fn is_half(&self) -> bool {
        self.x0 == 0.0
    }

    pub fn points(&self) -> usize {
        self.intervals + 1
    }

    pub fn h(&self) -> f64 {
        (self.x1 - self.x0) / self.intervals as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.intervals {
            self.x1
        } else {
            self.x0 + i as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points()).map(|i| self.x(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals < 8 || !(self.x1 > self.x0) {
            return Err(SpikeError::InvalidParameter(format!(
                "mesh needs at least 8 intervals on a nonempty interval (got {} on [{}, {}])",
                self.intervals, self.x0, self.x1
            )));
        }
        Ok(())
    }

    /// Refuse lengths at which the core width `2ε_L` is resolved by fewer
    /// than [`MIN_CELLS_PER_WIDTH`] cells.
    pub fn check_resolution(&self, spec: &ModelSpec, length: f64) -> Result<()> {
        let cells = 2.0 * spec.eps_l(length) / self.h();
        if cells < MIN_CELLS_PER_WIDTH {
            return Err(SpikeError::ResolutionExceeded { cells, length });
        }
        Ok(())
    }
}

/// Local reaction terms `(f_v, f_u)` and their partial derivatives.
#[derive(Debug, Clone, Copy)]
struct Kinetics {
    fv: f64,
    fu: f64,
    fv_v: f64,
    fv_u: f64,
    fu_v: f64,
    fu_u: f64,
    /// Sums of the magnitudes of the terms of `f_v` and `f_u`.
    sv: f64,
    su: f64,
}

fn kinetics(model: &Model, v: f64, u: f64) -> Kinetics {
    match *model {
        Model::Schnakenberg { a, b } => Kinetics {
            fv: -v + a + u * v * v,
            fu: b - u * v * v,
            fv_v: -1.0 + 2.0 * u * v,
            fv_u: v * v,
            fu_v: -2.0 * u * v,
            fu_u: -v * v,
            sv: v.abs() + a + (u * v * v).abs(),
            su: b + (u * v * v).abs(),
        },
        Model::Brusselator { a, f } => Kinetics {
            fv: -v + a + f * u * v * v,
            fu: v - u * v * v,
            fv_v: -1.0 + 2.0 * f * u * v,
            fv_u: f * v * v,
            fu_v: 1.0 - 2.0 * u * v,
            fu_u: -v * v,
            sv: v.abs() + a + (f * u * v * v).abs(),
            su: v.abs() + (u * v * v).abs(),
        },
        Model::Gm { kappa, .. } => {
            let r = v / u;
            Kinetics {
                fv: -v + v * r + kappa,
                fu: -u + v * v,
                fv_v: -1.0 + 2.0 * r,
                fv_u: -r * r,
                fu_v: 2.0 * v,
                fu_u: -1.0,
                sv: v.abs() + (v * r).abs() + kappa,
                su: u.abs() + v * v,
            }
        }
    }
}

/// The discretised system `M z′ = F(z; L, ρ)` on a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub spec: ModelSpec,
    pub mesh: Mesh,
    /// Include the dilution terms `−ρv`, `−ρu`.
    pub dilution: bool,
}

impl Discretization {
    pub fn new(spec: ModelSpec, mesh: Mesh, dilution: bool) -> Result<Self> {
        spec.validate()?;
        mesh.validate()?;
        Ok(Self {
            spec,
            mesh,
            dilution,
        })
    }

    /// Number of unknowns (two per node).
    pub fn dim(&self) -> usize {
        2 * self.mesh.points()
    }

    /// Mass of the second component (`τ` for GM, else 1).
    pub fn tau(&self) -> f64 {
        match self.spec.model {
            Model::Gm { tau, .. } => tau,
            _ => 1.0,
        }
    }

    /// Diagonal of the mass matrix.
    pub fn mass(&self) -> Vec<f64> {
        let tau = self.tau();
        (0..self.dim())
            .map(|k| if k % 2 == 0 { 1.0 } else { tau })
            .collect()
    }

    fn diffusivities(&self, length: f64) -> (f64, f64) {
        let e = self.spec.eps_l(length);
        (e * e, self.spec.d_l(length))
    }

    /// Discrete Laplacian of component `c` (0 = v, 1 = u) at node `i`.
    fn laplacian(&self, z: &[f64], i: usize, c: usize) -> f64 {
        let n = self.mesh.intervals;
        let h2 = self.mesh.h() * self.mesh.h();
        let at = |j: usize| z[2 * j + c];
        if i == 0 {
            2.0 * (at(1) - at(0)) / h2
        } else if i == n {
            2.0 * (at(n - 1) - at(n)) / h2
        } else {
            (at(i - 1) - 2.0 * at(i) + at(i + 1)) / h2
        }
    }

    /// `F(z; L, ρ)`; `rho` only enters through the dilution terms.
    pub fn rhs(&self, z: &[f64], length: f64, rho: f64) -> Vec<f64> {
        let (dv, du) = self.diffusivities(length);
        let dil = if self.dilution { rho } else { 0.0 };
        let tau = self.tau();
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.mesh.points() {
            let (v, u) = (z[2 * i], z[2 * i + 1]);
            let k = kinetics(&self.spec.model, v, u);
            out[2 * i] = dv * self.laplacian(z, i, 0) + k.fv - dil * v;
            out[2 * i + 1] = du * self.laplacian(z, i, 1) + k.fu - dil * tau * u;
        }
        out
    }

    /// Row-relative residual `max_i |F_i| / (1 + S_i)` of a steady state,
    /// where `S_i` sums the magnitudes of the terms of row `i`; unlike the
    /// absolute residual it does not stall at the rounding level of the
    /// `d/h²` diffusion terms.
    pub fn residual(&self, z: &[f64], length: f64) -> f64 {
        let (dv, du) = self.diffusivities(length);
        let n = self.mesh.intervals;
        let h2 = self.mesh.h() * self.mesh.h();
        let f = self.rhs(z, length, 0.0);
        let mut worst = 0.0f64;
        for i in 0..=n {
            let k = kinetics(&self.spec.model, z[2 * i], z[2 * i + 1]);
            for (c, d, kin) in [(0usize, dv, k.sv), (1usize, du, k.su)] {
                let at = |j: usize| z[2 * j + c].abs();
                let diff = if i == 0 {
                    2.0 * (at(1) + at(0))
                } else if i == n {
                    2.0 * (at(n - 1) + at(n))
                } else {
                    at(i - 1) + 2.0 * at(i) + at(i + 1)
                };
                let scale = 1.0 + d * diff / h2 + kin;
                worst = worst.max(f[2 * i + c].abs() / scale);
            }
        }
        worst
    }

    /// `∂F/∂z` as a band matrix (`kl = ku = 2`).
    pub fn jacobian(&self, z: &[f64], length: f64, rho: f64) -> BandMatrix<f64> {
        let (dv, du) = self.diffusivities(length);
        let dil = if self.dilution { rho } else { 0.0 };
        let tau = self.tau();
        let n = self.mesh.intervals;
        let h2 = self.mesh.h() * self.mesh.h();
        let mut j = BandMatrix::zeros(self.dim(), 2, 2);
        for i in 0..=n {
            let (v, u) = (z[2 * i], z[2 * i + 1]);
            let k = kinetics(&self.spec.model, v, u);
            let (rv, ru) = (2 * i, 2 * i + 1);
            j.add(rv, rv, k.fv_v - dil - 2.0 * dv / h2);
            j.add(rv, ru, k.fv_u);
            j.add(ru, rv, k.fu_v);
            j.add(ru, ru, k.fu_u - dil * tau - 2.0 * du / h2);
            for (c, d) in [(0usize, dv), (1usize, du)] {
                let row = 2 * i + c;
                if i == 0 {
                    j.add(row, 2 + c, 2.0 * d / h2);
                } else if i == n {
                    j.add(row, 2 * (n - 1) + c, 2.0 * d / h2);
                } else {
                    j.add(row, 2 * (i - 1) + c, d / h2);
                    j.add(row, 2 * (i + 1) + c, d / h2);
                }
            }
        }
        j
    }

    /// `∂F/∂L` (through `ε_L² = ε²/L²` and `D_L = D/L²`).
    pub fn d_rhs_d_length(&self, z: &[f64], length: f64) -> Vec<f64> {
        let (dv, du) = self.diffusivities(length);
        let s = -2.0 / length;
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.mesh.points() {
            out[2 * i] = s * dv * self.laplacian(z, i, 0);
            out[2 * i + 1] = s * du * self.laplacian(z, i, 1);
        }
        out
    }

    /// Split an interleaved state into `(v, u)`.
    pub fn split(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            z.iter().step_by(2).copied().collect(),
            z.iter().skip(1).step_by(2).copied().collect(),
        )
    }

    /// Branch measures of a state (see [`Measures`]).
    pub fn measures(&self, z: &[f64]) -> Measures {
        let (v, u) = self.split(z);
        let nodes = self.mesh.nodes();
        let at0 = |f: &[f64]| interp_linear(&nodes, f, 0.0);
        let h = self.mesh.h();
        let mut int = 0.0;
        for i in 0..self.mesh.intervals {
            int += 0.5 * h * (v[i] * v[i] + v[i + 1] * v[i + 1]);
        }
        if self.mesh.is_half() {
            int *= 2.0;
        }
        Measures {
            mu: *v.last().unwrap(),
            u0v0: at0(&u) * at0(&v),
            l2_v: int.sqrt(),
        }
    }
}

/// Scalar summaries of a state on `[−1, 1]`: `μ = v(1)`, `u(0)v(0)` and the
/// `L²` norm of `v` over the full domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub mu: f64,
    pub u0v0: f64,
    pub l2_v: f64,
}

/// Mirror a half-domain state on `[0, 1]` to the full domain `[−1, 1]`.
pub fn mirror_half(z: &[f64]) -> Vec<f64> {
    let m = z.len() / 2;
    let mut out = Vec::with_capacity(2 * (2 * m - 1));
    for i in (1..m).rev() {
        out.extend_from_slice(&z[2 * i..2 * i + 2]);
    }
    out.extend_from_slice(z);
    out
}

/// Spatially homogeneous steady state `(v, u)` if the model has one.
pub fn homogeneous_state(model: &Model) -> Option<(f64, f64)> {
    match *model {
        Model::Schnakenberg { a, b } if a > b => {
            let v = a + b;
            Some((v, b / (v * v)))
        }
        Model::Brusselator { a, f } if f < 0.5 => {
            let v = a / (1.0 - f);
            Some((v, 1.0 / v))
        }
        Model::Gm { kappa, .. } if kappa > 1.0 => {
            let v = 1.0 + kappa;
            Some((v, v * v))
        }
        _ => None,
    }
}

/// Background level of the activator used for spike detection: `a` for the
/// Schnakenberg/Brusselator models and `κ` (at least 1) for GM.
pub fn background_scale(model: &Model) -> f64 {
    match *model {
        Model::Schnakenberg { a, .. } | Model::Brusselator { a, .. } => a,
        Model::Gm { kappa, .. } => kappa.max(1.0),
    }
}

/// Spike positions on `[−1, 1]` of a pattern of `m` half-spikes: cells of
/// half-width `w = 2/m`, spikes at `−1 + kw`. With `boundary = true` spikes sit
/// at both ends (requires `m` even or odd accordingly); otherwise the first
/// spike is at `−1 + w`.
pub fn half_spike_positions(m: usize, boundary: bool) -> Vec<f64> {
    let m = m.max(1);
    let w = 2.0 / m as f64;
    let start = if boundary { 0 } else { 1 };
    (start..=m)
        .step_by(2)
        .map(|k| -1.0 + k as f64 * w)
        .collect()
}

/// Initial guess for a steady pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessKind {
    /// Outer quasi-equilibrium profile plus scaled core profile.
    Composite,
    /// Background plus a Gaussian bump of width `2ε_L` per spike.
    Gaussian,
}

/// Build a pattern with spikes at `centers` (cells of half-width `ell`) on the
/// mesh. `Composite` falls back to `Gaussian` when the asymptotic construction
/// is unavailable (no quasi-equilibrium, or no core solution); the kind
/// actually used is returned.
pub fn pattern_guess(
    spec: &ModelSpec,
    mesh: &Mesh,
    length: f64,
    centers: &[f64],
    ell: f64,
    kind: GuessKind,
) -> (Vec<f64>, GuessKind) {
    if kind == GuessKind::Composite {
        if let Ok(z) = composite(spec, mesh, length, centers, ell) {
            return (z, GuessKind::Composite);
        }
    }
    (
        gaussian(spec, mesh, length, centers, ell),
        GuessKind::Gaussian,
    )
}

/// Distance from `x` to the nearest centre, clipped to `ell`.
fn distance(x: f64, centers: &[f64], ell: f64) -> f64 {
    centers
        .iter()
        .map(|c| (x - c).abs())
        .fold(f64::INFINITY, f64::min)
        .min(ell)
}

fn blend(y: f64) -> f64 {
    0.5 * (1.0 - (y - 5.0).tanh())
}

fn composite(
    spec: &ModelSpec,
    mesh: &Mesh,
    length: f64,
    centers: &[f64],
    ell: f64,
) -> Result<Vec<f64>> {
    let eps_l = spec.eps_l(length);
    let d_l = spec.d_l(length);
    let nodes = mesh.nodes();
    let dists: Vec<f64> = nodes.iter().map(|&x| distance(x, centers, ell)).collect();
    let mut z = vec![0.0; 2 * nodes.len()];
    if let Model::Gm { kappa, .. } = spec.model {
        let (h0l, outer_a): (f64, Box<dyn Fn(f64) -> f64>) = if kappa > 0.0 {
            let sol = solve_quasi_equilibrium_cell(spec, ell, length, &OuterOptions::default())?;
            let table = outer_table(spec, &sol, ell)?;
            (
                sol.h0l.unwrap_or(0.0),
                Box::new(move |d| interp_linear(&table.0, &table.1, d)),
            )
        } else {
            (gm_small_kappa_h0(ell, d_l, eps_l).h_at_0, Box::new(|_| 0.0))
        };
        let gamma = if kappa > 0.0 {
            gm_gamma(kappa, h0l)
        } else {
            0.0
        };
        let s = (1.0 - 2.0 * gamma).max(1e-6);
        for (i, &d) in dists.iter().enumerate() {
            let y = d / eps_l;
            let w0 = 1.5 * s / (0.5 * s.sqrt() * y).cosh().powi(2);
            let a_out = outer_a(d);
            let a = a_out + h0l * w0;
            let h = if kappa > 0.0 && a_out > kappa {
                a_out * a_out / (a_out - kappa)
            } else {
                h0l * ((ell - d) / d_l.sqrt()).cosh() / (ell / d_l.sqrt()).cosh()
            };
            z[2 * i] = a;
            z[2 * i + 1] = h.max(1e-12);
        }
        return Ok(z);
    }
    let sol = solve_quasi_equilibrium_cell(spec, ell, length, &OuterOptions::default())?;
    let b = sol
        .b
        .ok_or_else(|| SpikeError::NoSolution("outer solve returned no slope".into()))?;
    let (core_model, a, gain) = match spec.model {
        Model::Schnakenberg { a, .. } => (CoreModel::Schnakenberg, a, 1.0),
        Model::Brusselator { a, f } => (CoreModel::Brusselator { f }, a, f),
        Model::Gm { .. } => unreachable!(),
    };
    let core = solve_core(core_model, CoreTarget::B(b), CoreGrid::default(), None)?;
    let table = outer_table(spec, &sol, ell)?;
    let scale = d_l.sqrt() / eps_l;
    let y_end = *core.y.last().unwrap();
    for (i, &d) in dists.iter().enumerate() {
        let y = d / eps_l;
        let v_out = interp_linear(&table.0, &table.1, d);
        let (vc, uc) = if y <= y_end {
            (
                interp_linear(&core.y, &core.v, y),
                interp_linear(&core.y, &core.u, y),
            )
        } else {
            (0.0, core.b * y + core.c)
        };
        let u_out = (v_out - a) / (gain * v_out * v_out);
        let w = blend(y);
        z[2 * i] = v_out + scale * vc;
        z[2 * i + 1] = (w * uc / scale + (1.0 - w) * u_out).max(1e-12);
    }
    Ok(z)
}

/// The outer activator profile sampled on `[0, ℓ]` (distance from the spike).
fn outer_table(
    spec: &ModelSpec,
    sol: &crate::outer::OuterSolve,
    ell: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d: Vec<f64> = (0..=200).map(|i| ell * i as f64 / 200.0).collect();
    let v = outer_profile(spec, sol, &d)?;
    Ok((d, v))
}

fn gaussian(spec: &ModelSpec, mesh: &Mesh, length: f64, centers: &[f64], ell: f64) -> Vec<f64> {
    let eps_l = spec.eps_l(length);
    let d_l = spec.d_l(length);
    let width = 2.0 * eps_l;
    let nodes = mesh.nodes();
    let mut z = vec![0.0; 2 * nodes.len()];
    for (i, &x) in nodes.iter().enumerate() {
        let d = distance(x, centers, ell);
        let bump = (-(d / width).powi(2)).exp();
        let (v, u) = match spec.model {
            Model::Schnakenberg { a, .. } | Model::Brusselator { a, .. } => {
                let amp = 1.5 * d_l.sqrt() / eps_l;
                (a + amp * bump, eps_l / d_l.sqrt())
            }
            Model::Gm { kappa, .. } => {
                let h0 = (3.0 * ell / d_l.sqrt()).max(1.0) / eps_l;
                (kappa + h0 * 1.5 * bump, h0.max(1.0))
            }
        };
        z[2 * i] = v;
        z[2 * i + 1] = u;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sch() -> ModelSpec {
        ModelSpec::schnakenberg(0.5, 1.0, 0.01, 2.0).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for spec in [
            sch(),
            ModelSpec::brusselator(1.0, 0.7, 0.05, 2.0).unwrap(),
            ModelSpec::gm(0.5, 2.0, 0.05, 1.0).unwrap(),
        ] {
            let disc = Discretization::new(spec, Mesh::full(20), true).unwrap();
            let z: Vec<f64> = (0..disc.dim())
                .map(|k| 1.0 + 0.3 * ((k as f64) * 0.7).sin().abs())
                .collect();
            let (len, rho) = (1.3, 0.01);
            let jac = disc.jacobian(&z, len, rho);
            let f0 = disc.rhs(&z, len, rho);
            for col in 0..disc.dim() {
                let mut zp = z.clone();
                let dz = 1e-7;
                zp[col] += dz;
                let f1 = disc.rhs(&zp, len, rho);
                for row in 0..disc.dim() {
                    let fd = (f1[row] - f0[row]) / dz;
                    let an = if jac.in_band(row, col) {
                        jac.get(row, col)
                    } else {
                        0.0
                    };
                    assert!(
                        (fd - an).abs() < 1e-4 * (1.0 + an.abs()),
                        "{row},{col}: {fd} vs {an}"
                    );
                }
            }
            let dl = disc.d_rhs_d_length(&z, len);
            let fl = disc.rhs(&z, len + 1e-7, rho);
            for row in 0..disc.dim() {
                let fd = (fl[row] - f0[row]) / 1e-7;
                assert!((fd - dl[row]).abs() < 1e-4 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn homogeneous_states_are_zeros_of_the_kinetics() {
        for model in [
            Model::Schnakenberg { a: 1.5, b: 1.0 },
            Model::Brusselator { a: 1.0, f: 0.3 },
            Model::Gm {
                kappa: 1.5,
                tau: 1.0,
            },
        ] {
            let (v, u) = homogeneous_state(&model).unwrap();
            let k = kinetics(&model, v, u);
            assert!(k.fv.abs() < 1e-14 && k.fu.abs() < 1e-14);
        }
        assert!(homogeneous_state(&Model::Schnakenberg { a: 0.5, b: 1.0 }).is_none());
    }

    #[test]
    fn mirror_and_positions() {
        let z = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            mirror_half(&z),
            vec![5.0, 6.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        );
        assert_eq!(half_spike_positions(2, false), vec![0.0]);
        assert_eq!(half_spike_positions(2, true), vec![-1.0, 1.0]);
        assert_eq!(half_spike_positions(1, true), vec![-1.0]);
        let p = half_spike_positions(4, false);
        assert_eq!(p, vec![-0.5, 0.5]);
    }

    #[test]
    fn composite_guess_is_positive_and_peaked() {
        let spec = sch();
        let mesh = Mesh::full(2048);
        let (z, kind) = pattern_guess(&spec, &mesh, 1.0, &[0.0], 1.0, GuessKind::Composite);
        assert_eq!(kind, GuessKind::Composite);
        let disc = Discretization::new(spec, mesh, false).unwrap();
        let (v, u) = disc.split(&z);
        assert!(v.iter().chain(&u).all(|x| *x > 0.0));
        let imax = v
            .iter()
            .enumerate()
            .max_by(|p, q| p.1.partial_cmp(q.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(imax, 1024);
    }
}
