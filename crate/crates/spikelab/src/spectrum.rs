//! Linearised stability of core solutions.
//!
//! Perturbing a core solution by `e^{λt}(Φ, N)` gives
//!
//! ```text
//! Φ″ − Φ + 2gUVΦ + gV²N = λΦ,        N″ + (s − 2UV)Φ − V²N = 0,
//! ```
//!
//! with `g = 1, s = 0` (Schnakenberg) or `g = f, s = 1` (Brusselator),
//! `Φ′(0) = N′(0) = 0`, `Φ → 0` and `N′ → 0` at infinity (the far-field slope
//! of `N` must vanish, only an additive constant is free). On the truncated
//! grid this is exactly the Jacobian of the `B`-pinned discrete core system —
//! the linearised Robin row is a Neumann row — with mass on the `Φ` rows only.
//!
//! Eigenvalues are located with a dense solve of the Schur-reduced problem
//! (eliminate `N` through its λ-free equation) on a coarse copy of the grid
//! and then polished by shifted inverse iteration on the full banded problem.
//! Only `λ = O(1)` eigenvalues are meaningful here: `O(ε)` drift eigenvalues of
//! the full system are not represented by the core problem.

use crate::core_problem::{
    b_pinned_jacobian, beta_derivative, CoreBranch, CoreModel, CoreSolution,
};
use crate::error::{Result, SpikeError};
use crate::numerics::{eig, BandMatrix};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Coarse grid spacing used for the dense eigenvalue location step.
const COARSE_H: f64 = 0.04;
/// Pivot-ratio threshold below which the `N` operator is declared singular.
const SLAVE_PIVOT_TOL: f64 = 1e-13;
/// Note attached to every result about what the eigenvalues mean.
pub const EIGEN_NOTE: &str =
    "O(1) core eigenvalues only; O(eps) drift eigenvalues of the full system are not represented";

/// One eigenpair of the core linearisation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoreMode {
    pub lambda: Complex64,
    /// `Φ` on the core grid, scaled so that `max |Φ| = 1` with `Φ` real at the maximum.
    pub phi: Vec<Complex64>,
    pub n: Vec<Complex64>,
    /// Max-norm of the unscaled eigen-residual relative to `max |Φ|`.
    pub residual: f64,
}

/// Leading eigenvalues of the core linearisation at one branch point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenResult {
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    /// Sorted by descending real part.
    pub eigenvalues: Vec<Complex64>,
    #[serde(skip)]
    pub modes: Vec<CoreMode>,
    #[serde(skip)]
    pub y: Vec<f64>,
    pub note: String,
}

#[derive(Serialize)]
struct EigenJson<'a> {
    #[serde(rename = "B")]
    b: f64,
    beta: f64,
    eigenvalues: Vec<[f64; 2]>,
    residuals: Vec<f64>,
    note: &'a str,
}

impl EigenResult {
    /// Leading (rightmost) eigenvalue.
    pub fn leading(&self) -> Complex64 {
        self.eigenvalues[0]
    }

    /// JSON object `{B, beta, eigenvalues: [[re, im], …], residuals, note}`.
    pub fn to_json(&self) -> String {
        let j = EigenJson {
            b: self.b,
            beta: self.beta,
            eigenvalues: self.eigenvalues.iter().map(|l| [l.re, l.im]).collect(),
            residuals: self.modes.iter().map(|m| m.residual).collect(),
            note: &self.note,
        };
        serde_json::to_string_pretty(&j).expect("eigen result serialises")
    }

    /// CSV of mode `k`: `y, Phi0_re, Phi0_im, N0_re, N0_im`.
    pub fn mode_csv(&self, k: usize) -> String {
        let m = &self.modes[k];
        let mut s = String::from("y,Phi0_re,Phi0_im,N0_re,N0_im\n");
        for (i, y) in self.y.iter().enumerate() {
            s.push_str(&format!(
                "{y:.6},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                m.phi[i].re, m.phi[i].im, m.n[i].re, m.n[i].im
            ));
        }
        s
    }
}

fn coefficients(model: CoreModel) -> (f64, f64) {
    match model {
        CoreModel::Schnakenberg => (1.0, 0.0),
        CoreModel::Brusselator { f } => (f, 1.0),
    }
}

/// Eigenvalues of the Schur-reduced problem on a uniform grid of `nc`
/// intervals over `[0, y_max]`, with the core profile sampled by cubic
/// interpolation. Dense; intended for `nc` up to a few hundred.
pub fn schur_reduced_eigenvalues(sol: &CoreSolution, nc: usize) -> Result<Vec<Complex64>> {
    let y_max = sol.grid.y_max;
    let hc = y_max / nc as f64;
    let h = sol.h();
    let sample =
        |vals: &[f64], y: f64| crate::numerics::spline::interp_uniform_cubic(vals, 0.0, h, y);
    let vv: Vec<f64> = (0..=nc)
        .map(|i| sample(&sol.v, i as f64 * hc).max(0.0))
        .collect();
    let uu: Vec<f64> = (0..=nc).map(|i| sample(&sol.u, i as f64 * hc)).collect();
    let (g, s) = coefficients(sol.model);
    let ih2 = 1.0 / (hc * hc);
    // Φ unknowns 0..nc (Φ_nc = 0), N unknowns 0..=nc
    let np = nc;
    let nn = nc + 1;
    let mut a_pp = DMatrix::<f64>::zeros(np, np);
    let mut a_pn = DMatrix::<f64>::zeros(np, nn);
    let mut a_np = DMatrix::<f64>::zeros(nn, np);
    let mut a_nn = DMatrix::<f64>::zeros(nn, nn);
    for i in 0..np {
        let (vi, ui) = (vv[i], uu[i]);
        if i == 0 {
            a_pp[(0, 1.min(np - 1))] += 2.0 * ih2;
        } else {
            a_pp[(i, i - 1)] += ih2;
            if i + 1 < np {
                a_pp[(i, i + 1)] += ih2;
            }
        }
        a_pp[(i, i)] += -2.0 * ih2 - 1.0 + 2.0 * g * ui * vi;
        a_pn[(i, i)] = g * vi * vi;
    }
    for i in 0..nn {
        let (vi, ui) = (vv[i], uu[i]);
        if i == 0 {
            a_nn[(0, 1)] += 2.0 * ih2;
        } else if i == nn - 1 {
            a_nn[(i, i - 1)] += 2.0 * ih2;
        } else {
            a_nn[(i, i - 1)] += ih2;
            a_nn[(i, i + 1)] += ih2;
        }
        a_nn[(i, i)] += -2.0 * ih2 - vi * vi;
        if i < np {
            a_np[(i, i)] = s - 2.0 * ui * vi;
        }
    }
    let lu = a_nn.lu();
    let x = lu.solve(&a_np).ok_or(SpikeError::SingularSlaveOperator)?;
    let reduced = a_pp - a_pn * x;
    let mut ev = eig::dense_eigenvalues(&reduced);
    ev.sort_by(|p, q| q.re.partial_cmp(&p.re).unwrap());
    Ok(ev)
}

/// Mass vector of the banded core problem: `h²` on interior `Φ` rows.
fn core_mass(sol: &CoreSolution) -> Vec<f64> {
    let n = sol.grid.n;
    let h2 = sol.h() * sol.h();
    let mut m = vec![0.0; 2 * (n + 1)];
    for i in 0..n {
        m[2 * i] = h2;
    }
    m
}

/// Check that the `N` operator `N″ − V²N` (Neumann at both ends) is regular.
fn check_slave(sol: &CoreSolution) -> Result<()> {
    let n = sol.grid.n;
    let h2 = sol.h() * sol.h();
    let mut s = BandMatrix::zeros(n + 1, 1, 1);
    for i in 0..=n {
        let vi = sol.v[i];
        s.set(i, i, -2.0 - h2 * vi * vi);
        if i == 0 {
            s.set(0, 1, 2.0);
        } else if i == n {
            s.set(n, n - 1, 2.0);
        } else {
            s.set(i, i - 1, 1.0);
            s.set(i, i + 1, 1.0);
        }
    }
    let lu = s.factor().map_err(|_| SpikeError::SingularSlaveOperator)?;
    if lu.pivot_ratio() < SLAVE_PIVOT_TOL {
        return Err(SpikeError::SingularSlaveOperator);
    }
    Ok(())
}

/// Eigenvalues of the coupled generalized problem on the full core grid by
/// shift-and-invert Arnoldi (no Schur reduction). Used to cross-check the
/// reduced formulation.
pub fn coupled_eigenvalues(sol: &CoreSolution, sigma: f64, count: usize) -> Result<Vec<Complex64>> {
    let a = b_pinned_jacobian(sol);
    let mass = core_mass(sol);
    let ritz = eig::shift_invert_arnoldi(&a, &mass, sigma, 60, count, 6)
        .map_err(|e| SpikeError::EigSolverFailure(e.to_string()))?;
    Ok(ritz.into_iter().map(|r| r.lambda).collect())
}

fn residual_of(
    a: &BandMatrix<Complex64>,
    mass: &[f64],
    h2: f64,
    lambda: Complex64,
    x: &[Complex64],
) -> f64 {
    let ax = a.matvec(x);
    let scale = x.iter().step_by(2).fold(0.0f64, |m, v| m.max(v.norm()));
    ax.iter()
        .zip(x)
        .zip(mass)
        .fold(0.0f64, |m, ((axi, xi), mi)| {
            m.max((*axi - lambda * *xi * *mi).norm())
        })
        / h2
        / scale.max(1e-300)
}

fn polish(
    sol: &CoreSolution,
    a: &BandMatrix<f64>,
    ac: &BandMatrix<Complex64>,
    mass: &[f64],
    guess: Complex64,
) -> Result<CoreMode> {
    let n = sol.grid.n;
    let start: Vec<Complex64> = (0..2 * (n + 1))
        .map(|i| {
            Complex64::new(
                1.0 + 0.3 * (0.37 * i as f64).sin(),
                0.05 * (0.11 * i as f64).cos(),
            )
        })
        .collect();
    // tiny offset keeps the first factorisation regular when the guess is exact
    let shift = guess + Complex64::new(1e-7, 0.0);
    let (lambda, mut x) = eig::inverse_iteration(a, mass, shift, &start, 40)
        .map_err(|e| SpikeError::EigSolverFailure(e.to_string()))?;
    // normalise: Φ real and positive at its largest entry
    let (imax, pmax) =
        x.iter()
            .step_by(2)
            .enumerate()
            .fold((0, Complex64::new(0.0, 0.0)), |acc, (i, v)| {
                if v.norm() > acc.1.norm() {
                    (i, *v)
                } else {
                    acc
                }
            });
    let _ = imax;
    if pmax.norm() > 0.0 {
        let scale = pmax.norm() / pmax;
        let inv = 1.0 / pmax.norm();
        for v in x.iter_mut() {
            *v = *v * scale * inv;
        }
    }
    let residual = residual_of(ac, mass, sol.h() * sol.h(), lambda, &x);
    let phi = x.iter().step_by(2).copied().collect();
    let nn = x.iter().skip(1).step_by(2).copied().collect();
    Ok(CoreMode {
        lambda,
        phi,
        n: nn,
        residual,
    })
}

/// The `n_eigs` rightmost eigenvalues (and modes) of the core linearisation.
pub fn core_spectrum(sol: &CoreSolution, n_eigs: usize) -> Result<EigenResult> {
    if n_eigs == 0 {
        return Err(SpikeError::InvalidParameter(
            "n_eigs must be at least 1".into(),
        ));
    }
    check_slave(sol)?;
    let nc = ((sol.grid.y_max / COARSE_H).round() as usize)
        .min(sol.grid.n)
        .max(64);
    let coarse = schur_reduced_eigenvalues(sol, nc)?;
    let a = b_pinned_jacobian(sol);
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mass = core_mass(sol);
    let mut modes: Vec<CoreMode> = Vec::new();
    for guess in coarse.iter() {
        if modes.len() >= n_eigs {
            break;
        }
        if guess.im < -1e-9 {
            continue; // conjugate of a pair already handled
        }
        let mut mode = polish(sol, &a, &ac, &mass, *guess)?;
        if guess.im.abs() <= 1e-9 {
            mode.lambda.im = 0.0;
        }
        let is_pair = mode.lambda.im.abs() > 1e-9;
        if is_pair {
            let conj = CoreMode {
                lambda: mode.lambda.conj(),
                phi: mode.phi.iter().map(|v| v.conj()).collect(),
                n: mode.n.iter().map(|v| v.conj()).collect(),
                residual: mode.residual,
            };
            modes.push(mode);
            if modes.len() < n_eigs {
                modes.push(conj);
            }
        } else {
            modes.push(mode);
        }
    }
    modes.sort_by(|p, q| {
        q.lambda
            .re
            .partial_cmp(&p.lambda.re)
            .unwrap()
            .then(q.lambda.im.partial_cmp(&p.lambda.im).unwrap())
    });
    Ok(EigenResult {
        b: sol.b,
        beta: sol.beta,
        eigenvalues: modes.iter().map(|m| m.lambda).collect(),
        y: sol.y.clone(),
        modes,
        note: EIGEN_NOTE.into(),
    })
}

/// One entry of a stability scan along a core branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilityPoint {
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    pub re_lambda_max: f64,
    pub im_lambda_max: f64,
}

/// Leading eigenvalue at (at most `max_points` evenly strided) branch samples
/// that carry a stored solution. Samples are processed in parallel.
pub fn stability_scan(branch: &CoreBranch, max_points: usize) -> Result<Vec<StabilityPoint>> {
    use rayon::prelude::*;
    let with_sol: Vec<_> = branch
        .samples
        .iter()
        .filter(|s| s.solution.is_some())
        .collect();
    if with_sol.len() < 10 {
        return Err(SpikeError::InvalidParameter(format!(
            "stability scan needs at least 10 stored branch solutions, found {}",
            with_sol.len()
        )));
    }
    let stride = with_sol.len().div_ceil(max_points.max(10));
    let picked: Vec<_> = with_sol.into_iter().step_by(stride.max(1)).collect();
    picked
        .par_iter()
        .map(|s| {
            let sol = s.solution.as_ref().expect("filtered");
            let er = core_spectrum(sol, 1)?;
            Ok(StabilityPoint {
                b: s.b,
                beta: s.beta,
                re_lambda_max: er.leading().re,
                im_lambda_max: er.leading().im,
            })
        })
        .collect()
}

/// CSV of a stability scan: `B, beta, re_lambda, im_lambda`.
pub fn stability_csv(scan: &[StabilityPoint]) -> String {
    let mut s = String::from("B,beta,re_lambda,im_lambda\n");
    for p in scan {
        s.push_str(&format!(
            "{:.10},{:.10},{:.10e},{:.10e}\n",
            p.b, p.beta, p.re_lambda_max, p.im_lambda_max
        ));
    }
    s
}

/// `β` values bracketing the sign change of `Re λ_max` in a scan (ordered as
/// `(stable side, unstable side)`), if any.
pub fn stability_bracket(scan: &[StabilityPoint]) -> Option<(f64, f64)> {
    scan.windows(2)
        .find(|w| (w[0].re_lambda_max < 0.0) != (w[1].re_lambda_max < 0.0))
        .map(|w| {
            if w[0].re_lambda_max < 0.0 {
                (w[0].beta, w[1].beta)
            } else {
                (w[1].beta, w[0].beta)
            }
        })
}

/// Cosine similarity between two real grid functions.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Diagnostics of the zero eigenvalue at a fold of the core branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FoldModeCheck {
    pub lambda: Complex64,
    /// `|cos∠(Re Φ, V_β)|`.
    pub similarity: f64,
    /// Unscaled interior residual of `(V_β, U_β)` as an eigenpair with `λ = 0`, relative to `max |V_β|`.
    pub pair_residual: f64,
    /// `|U_β′(y_max)|` relative to `max |V_β|` (the `N′ → 0` condition; equals `dB/dβ`).
    pub far_field_slope: f64,
    /// True when `Φ` has an interior sign change (dimple shape).
    pub dimple: bool,
}

/// Compare the leading mode at `sol` with `V_β` obtained by differencing two
/// nearby `β`-pinned solutions.
pub fn fold_mode_check(sol: &CoreSolution, delta: f64) -> Result<FoldModeCheck> {
    let er = core_spectrum(sol, 1)?;
    let phi: Vec<f64> = er.modes[0].phi.iter().map(|v| v.re).collect();
    let (dv, du) = beta_derivative(sol, delta)?;
    let similarity = cosine_similarity(&phi, &dv).abs();
    let a = b_pinned_jacobian(sol);
    let z: Vec<f64> = dv.iter().zip(&du).flat_map(|(v, u)| [*v, *u]).collect();
    let az = a.matvec(&z);
    let h2 = sol.h() * sol.h();
    let scale = crate::numerics::max_abs(&dv);
    // interior rows only: the far-field row carries the boundary condition,
    // whose mismatch is reported in natural units as `far_field_slope`
    let n = sol.grid.n;
    let pair_residual = crate::numerics::max_abs(&az[..2 * n]) / h2 / scale;
    let far_field_slope = (du[n] - du[n - 1]).abs() / sol.h() / scale;
    let dimple = phi
        .windows(2)
        .any(|w| w[0] * w[1] < 0.0 && w[0].abs() > 1e-8);
    Ok(FoldModeCheck {
        lambda: er.leading(),
        similarity,
        pair_residual,
        far_field_slope,
        dimple,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_problem::{solve_core, CoreGrid, CoreTarget};

    #[test]
    fn slave_operator_is_regular_for_a_spike() {
        let sol = solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::B(0.5),
            CoreGrid {
                y_max: 16.0,
                n: 1600,
            },
            None,
        )
        .unwrap();
        check_slave(&sol).unwrap();
    }

    #[test]
    fn json_has_expected_keys() {
        let sol = solve_core(
            CoreModel::Schnakenberg,
            CoreTarget::B(0.5),
            CoreGrid {
                y_max: 16.0,
                n: 1600,
            },
            None,
        )
        .unwrap();
        let er = core_spectrum(&sol, 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&er.to_json()).unwrap();
        assert!(v.get("B").is_some() && v.get("beta").is_some());
        assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 2);
        assert!(er.mode_csv(0).starts_with("y,Phi0_re"));
    }
}
