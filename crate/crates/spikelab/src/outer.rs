//! Outer problem: the χ quadratures, the inner/outer matching system, the
//! replication and nucleation thresholds, the critical curves `a_c(b)` and
//! `f_c`, small-parameter closed forms, no-replication bounds and phase
//! diagrams.
//!
//! On a half-cell `0 < x < ℓ` the outer field increases monotonically from
//! `v(0⁺)` to `μ = v(ℓ)` and satisfies `χ[v(x)] = √(2/D_L)·x`. Integrating by
//! parts turns the weakly singular quadrature for `χ(μ)` into
//!
//! `χ(μ) = −2√(𝒢(μ)−𝒢(v₀))/R(v₀) + 2∫_{v₀}^{μ} √(𝒢(μ)−𝒢(ξ))·R′(ξ)/R(ξ)² dξ`,
//!
//! whose integrand is continuous. In the no-instability regimes `R` vanishes
//! at `v_∞` and `χ(μ)` diverges logarithmically as `μ → v_∞`; there every
//! quantity is expressed through the offset `t = v_∞ − ξ`, so that `μ` may
//! sit arbitrarily close to `v_∞` without cancellation.

use crate::core_problem::{
    bc_table, cached_fold, cached_table, schnakenberg_fold, BcRow, CoreModel, FarFieldTable,
};
use crate::error::{FailedConstraint, Result, SpikeError};
use crate::io::{Frame, Rgb, Svg};
use crate::models::{
    classify_regime_with, Model, ModelKind, ModelSpec, OuterReduction, Regime, RegimeBoundary,
    RegimeOptions, RegimeVerdict, F_C_FALLBACK,
};
use crate::numerics::{brent, integrate, CubicSpline};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

/// Absolute tolerance of every χ quadrature.
pub const CHI_TOL: f64 = 1e-11;

/// Smallest distance `v_∞ − μ` used when solving in the no-instability regimes.
/// (`𝒢(μ)−𝒢(ξ)` scales like `δ²` there and must not underflow.)
const MIN_GAP: f64 = 1e-120;

/// Below this fraction of the well-posed interval `𝒢(μ) − 𝒢(ξ)` is integrated
/// from `𝒢′` instead of differenced.
const DIFFERENCE_CUTOFF: f64 = 1e-2;

/// How `v(0⁺)` (or `𝒜(0⁺)`) is computed from the core far field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum V0Mode {
    /// Include the `O(ε/√D)` far-field correction `a²C(B)ε/√D` (`f a²C ε/√D` for the Brusselator).
    #[default]
    Corrected,
    /// `v(0⁺) = a`.
    LeadingOrder,
}

/// Options shared by the outer solvers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OuterOptions {
    pub v0_mode: V0Mode,
}

/// Right end `μ` of the outer interval, with its distance to `v_∞` when one exists.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Level {
    mu: f64,
    gap: Option<f64>,
}

/// `ρ` in `R(v_∞ − t) = −t·ρ(v_∞ − t)`.
fn rho(red: &OuterReduction, xi: f64) -> f64 {
    match red.model() {
        Model::Schnakenberg { .. } => 1.0,
        Model::Brusselator { f, .. } => 1.0 - f,
        Model::Gm { kappa, .. } => xi * xi / (xi - kappa),
    }
}

fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, abs: f64, rel: f64) -> Result<f64> {
    let r = integrate(f, a, b, abs, rel);
    // a requested tolerance at the roundoff floor may stall subdivision;
    // an error estimate within a few hundred ulps of the value is accepted
    let floor = 256.0 * f64::EPSILON * r.value.abs();
    if r.converged || (r.value.is_finite() && r.error <= floor.max(abs)) {
        Ok(r.value)
    } else {
        Err(SpikeError::QuadratureFailure { error: r.error })
    }
}

/// Evaluation context of the outer problem for one model.
struct Outer {
    red: OuterReduction,
    width: f64,
}

impl Outer {
    fn new(model: Model) -> Self {
        let red = OuterReduction::new(model);
        Self {
            width: red.wellposed_hi - red.wellposed_lo,
            red,
        }
    }

    fn v_inf(&self) -> Option<f64> {
        self.red.v_infty
    }

    /// `𝒢(μ) − 𝒢(x)` without cancellation for `x` near `μ`.
    fn delta_g(&self, x: f64, level: Level) -> Result<f64> {
        if let (Some(vinf), Some(gap)) = (self.v_inf(), level.gap) {
            let t = vinf - x;
            if t > gap {
                return self.delta_g_offset(vinf, gap, t);
            }
        }
        let mu = level.mu;
        if (mu - x).abs() < DIFFERENCE_CUTOFF * self.width {
            quad(|s| self.red.big_g_prime(s), x, mu, 0.0, 1e-14)
        } else {
            Ok(self.red.big_g(mu) - self.red.big_g(x))
        }
    }

    /// `∫_δ^t 𝒢′(v_∞ − s) ds` with `𝒢′(v_∞ − s) = s·ρ·g`.
    fn delta_g_offset(&self, vinf: f64, gap: f64, t: f64) -> Result<f64> {
        let red = &self.red;
        quad(
            |s| {
                let xi = vinf - s;
                s * rho(red, xi) * red.g(xi)
            },
            gap,
            t,
            0.0,
            1e-14,
        )
    }

    /// `χ` from `v₀` up to `v₁ ≤ μ` (the full `χ(μ)` when `v₁ = μ`).
    fn chi(&self, v0: f64, v1: f64, level: Level) -> Result<f64> {
        if let (Some(vinf), Some(gap)) = (self.v_inf(), level.gap) {
            // v₁ = μ must map to t₁ = δ exactly: recomputing it from μ costs a
            // rounding error that the √(t₁ − δ) boundary term would amplify
            let t1 = if v1 >= level.mu {
                gap
            } else {
                (vinf - v1).max(gap)
            };
            return self.chi_offset(vinf, gap, vinf - v0, t1);
        }
        let red = &self.red;
        let edge = |v: f64| -> Result<f64> {
            if v >= level.mu {
                Ok(0.0)
            } else {
                Ok(2.0 * self.delta_g(v, level)?.max(0.0).sqrt() / red.r(v))
            }
        };
        let boundary = edge(v1)? - edge(v0)?;
        let integrand = |xi: f64| {
            let dg = self.delta_g(xi, level).unwrap_or(f64::NAN).max(0.0);
            let r = red.r(xi);
            dg.sqrt() * red.r_prime(xi) / (r * r)
        };
        Ok(boundary + 2.0 * quad(integrand, v0, v1, CHI_TOL, 1e-12)?)
    }

    /// Offset form of [`Outer::chi`]: `t₀ = v_∞ − v₀ ≥ t₁ = v_∞ − v₁ ≥ δ`.
    fn chi_offset(&self, vinf: f64, gap: f64, t0: f64, t1: f64) -> Result<f64> {
        let red = &self.red;
        let edge = |t: f64| -> Result<f64> {
            if t <= gap {
                Ok(0.0)
            } else {
                let dg = self.delta_g_offset(vinf, gap, t)?.max(0.0);
                Ok(-2.0 * dg.sqrt() / (t * rho(red, vinf - t)))
            }
        };
        let boundary = edge(t1)? - edge(t0)?;
        // t = e^w: the integrand tends to a constant for δ ≪ t, so the
        // logarithmic divergence is integrated on a uniform footing.
        let integrand = |w: f64| {
            let t = w.exp();
            let xi = vinf - t;
            let dg = self
                .delta_g_offset(vinf, gap, t)
                .unwrap_or(f64::NAN)
                .max(0.0);
            let p = rho(red, xi);
            dg.sqrt() * red.r_prime(xi) / (t * p * p)
        };
        Ok(boundary + 2.0 * quad(integrand, t1.ln(), t0.ln(), CHI_TOL, 1e-12)?)
    }

    fn level(&self, mu: f64) -> Level {
        Level {
            mu,
            gap: self.v_inf().map(|v| v - mu),
        }
    }

    fn level_from_gap(&self, gap: f64) -> Level {
        let vinf = self.v_inf().expect("offset levels need v_inf");
        Level {
            mu: vinf - gap,
            gap: Some(gap),
        }
    }
}

fn check_chi_args(out: &Outer, mu: f64, v0plus: f64) -> Result<()> {
    out.red.check(v0plus)?;
    out.red.check(mu)?;
    if !(v0plus < mu) {
        return Err(SpikeError::Domain {
            xi: v0plus,
            lo: out.red.wellposed_lo,
            hi: mu,
        });
    }
    if let Some(vinf) = out.v_inf() {
        if mu >= vinf {
            return Err(SpikeError::Domain {
                xi: mu,
                lo: out.red.wellposed_lo,
                hi: vinf,
            });
        }
    }
    Ok(())
}

/// `χ(μ)` for a given `v(0⁺)`, from the integrated-by-parts (proper) form.
///
/// Requires `lo < v0plus < μ ≤ μ_max`, and `μ < v_∞` when the model has a
/// homogeneous outer state.
pub fn chi(spec: &ModelSpec, mu: f64, v0plus: f64) -> Result<f64> {
    spec.validate()?;
    let out = Outer::new(spec.model);
    check_chi_args(&out, mu, v0plus)?;
    out.chi(v0plus, mu, out.level(mu))
}

/// `χ(v_∞ − δ)` for the no-instability regimes, accurate for any `δ > 0`.
pub fn chi_below_v_infty(spec: &ModelSpec, delta: f64, v0plus: f64) -> Result<f64> {
    spec.validate()?;
    let out = Outer::new(spec.model);
    let vinf = out.v_inf().ok_or_else(|| {
        SpikeError::RegimeMismatch("model has no homogeneous outer state v_inf".into())
    })?;
    out.red.check(v0plus)?;
    if !(delta > 0.0 && delta < vinf - v0plus) {
        return Err(SpikeError::Domain {
            xi: vinf - delta,
            lo: v0plus,
            hi: vinf,
        });
    }
    out.chi_offset(vinf, delta, vinf - v0plus, delta)
}

/// Leading-order coefficient of `χ(v_∞ − δ) ≈ c·ln(1/δ)` as `δ → 0`:
/// `c = 2·√(ρ g / 2)·R′/ρ²` evaluated at `v_∞`.
pub fn chi_log_slope(spec: &ModelSpec) -> Result<f64> {
    let out = Outer::new(spec.model);
    let vinf = out.v_inf().ok_or_else(|| {
        SpikeError::RegimeMismatch("model has no homogeneous outer state v_inf".into())
    })?;
    let p = rho(&out.red, vinf);
    Ok(2.0 * (p * out.red.g(vinf) / 2.0).sqrt() * out.red.r_prime(vinf) / (p * p))
}

/// Core model whose far field closes the matching system.
pub fn core_model_of(spec: &ModelSpec) -> Option<CoreModel> {
    match spec.model {
        Model::Schnakenberg { .. } => Some(CoreModel::Schnakenberg),
        Model::Brusselator { f, .. } => Some(CoreModel::Brusselator { f }),
        Model::Gm { .. } => None,
    }
}

/// Prefactor `P` in `B² = P·[𝒢(μ) − 𝒢(v₀)]`: 2 for Schnakenberg, `2/f²` for the Brusselator.
pub fn slope_prefactor(spec: &ModelSpec) -> f64 {
    match spec.model {
        Model::Brusselator { f, .. } => 2.0 / (f * f),
        _ => 2.0,
    }
}

/// `v(0⁺)` from the core far-field constant `C`.
pub fn v0plus_from_c(spec: &ModelSpec, c: f64, mode: V0Mode) -> f64 {
    let e = spec.eps_over_sqrt_d();
    match (spec.model, mode) {
        (Model::Schnakenberg { a, .. }, V0Mode::Corrected) => a + a * a * c * e,
        (Model::Brusselator { a, f }, V0Mode::Corrected) => a + a * a * f * c * e,
        (Model::Schnakenberg { a, .. } | Model::Brusselator { a, .. }, V0Mode::LeadingOrder) => a,
        (Model::Gm { kappa, .. }, _) => kappa,
    }
}

/// GM: `γ(H₀,L) = (1 − √(1 − 4κ/H₀,L))/2`, the root below 1/2.
pub fn gm_gamma(kappa: f64, h0l: f64) -> f64 {
    let z = 4.0 * kappa / h0l;
    // 1 − √(1−z) written without cancellation
    0.5 * z / (1.0 + (1.0 - z).sqrt())
}

/// Matched slope at a given level.
#[derive(Debug, Clone, Copy)]
enum Slope {
    Found {
        b: f64,
        v0: f64,
    },
    /// The matching would need `B > B_c`.
    BeyondFold,
    /// `μ` does not exceed `v(0⁺)` for any admissible `B`.
    NoRoot,
}

/// Schnakenberg / Brusselator matching: `B² = P·[𝒢(μ) − 𝒢(v₀(C(B)))]`.
struct Matching<'a> {
    spec: &'a ModelSpec,
    out: &'a Outer,
    table: Arc<FarFieldTable>,
    prefactor: f64,
    mode: V0Mode,
}

impl<'a> Matching<'a> {
    fn new(spec: &'a ModelSpec, out: &'a Outer, opts: &OuterOptions) -> Result<Self> {
        let core =
            core_model_of(spec).expect("matching is defined for Schnakenberg and Brusselator");
        Ok(Self {
            spec,
            out,
            table: cached_table(core)?,
            prefactor: slope_prefactor(spec),
            mode: opts.v0_mode,
        })
    }

    fn b_c(&self) -> f64 {
        self.table.b_c
    }

    fn v0(&self, b: f64) -> Result<f64> {
        match self.mode {
            V0Mode::LeadingOrder => Ok(v0plus_from_c(self.spec, 0.0, V0Mode::LeadingOrder)),
            V0Mode::Corrected => Ok(v0plus_from_c(
                self.spec,
                self.table.c_of_b(b.min(self.b_c()))?,
                self.mode,
            )),
        }
    }

    fn residual(&self, b: f64, level: Level) -> Result<f64> {
        let v0 = self.v0(b)?;
        let dg = if v0 < level.mu {
            self.out.delta_g(v0, level)?
        } else {
            self.out.red.big_g(level.mu) - self.out.red.big_g(v0)
        };
        Ok(b * b - self.prefactor * dg)
    }

    /// Largest root of the matching residual in `(0, B_c]`.
    fn slope(&self, level: Level) -> Result<Slope> {
        let a = self.out.red.wellposed_lo;
        if level.mu <= a {
            return Ok(Slope::NoRoot);
        }
        let b0 = (self.prefactor * self.out.delta_g(a, level)?).sqrt();
        if self.mode == V0Mode::LeadingOrder {
            return Ok(if b0 > self.b_c() {
                Slope::BeyondFold
            } else {
                Slope::Found { b: b0, v0: a }
            });
        }
        let top = b0.min(self.b_c());
        let h_top = self.residual(top, level)?;
        if h_top < 0.0 {
            return Ok(Slope::BeyondFold);
        }
        if h_top == 0.0 {
            return Ok(Slope::Found {
                b: top,
                v0: self.v0(top)?,
            });
        }
        let mut hi = top;
        for _ in 0..80 {
            let lo = hi * 0.8;
            if self.residual(lo, level)? < 0.0 {
                let mut err = None;
                let b = brent(
                    |b| {
                        self.residual(b, level).unwrap_or_else(|e| {
                            err.get_or_insert(e);
                            0.0
                        })
                    },
                    lo,
                    hi,
                    1e-15 * hi,
                    200,
                )
                .map_err(|e| SpikeError::BracketFailure(format!("matching slope: {e}")))?;
                if let Some(e) = err {
                    return Err(e);
                }
                return Ok(Slope::Found { b, v0: self.v0(b)? });
            }
            hi = lo;
        }
        Ok(Slope::NoRoot)
    }
}

/// GM matching: `3H²/√2·(ε/√D)·√(1−2γ) = √(𝒢(μ) − 𝒢(γH))`.
struct GmMatching<'a> {
    out: &'a Outer,
    kappa: f64,
    e: f64,
}

impl GmMatching<'_> {
    fn residual(&self, h: f64, level: Level) -> Result<f64> {
        let gamma = gm_gamma(self.kappa, h);
        let a0 = gamma * h;
        let lhs =
            3.0 * h * h / std::f64::consts::SQRT_2 * self.e * (1.0 - 2.0 * gamma).max(0.0).sqrt();
        let dg = if a0 < level.mu {
            self.out.delta_g(a0, level)?
        } else {
            self.out.red.big_g(level.mu) - self.out.red.big_g(a0)
        };
        Ok(lhs - dg.signum() * dg.abs().sqrt())
    }

    /// Largest root `H₀,L > 4κ`, or `None`.
    fn solve(&self, level: Level) -> Result<Option<f64>> {
        let h_min = 4.0 * self.kappa * (1.0 + 1e-12);
        let mut hi = (4.0 / (3.0 * self.e)).max(8.0 * self.kappa);
        let mut grow = 0;
        while self.residual(hi, level)? <= 0.0 {
            hi *= 2.0;
            grow += 1;
            if grow > 60 {
                return Err(SpikeError::BracketFailure(
                    "GM matching residual never positive".into(),
                ));
            }
        }
        loop {
            let lo = (hi * 0.9).max(h_min);
            if self.residual(lo, level)? < 0.0 {
                let mut err = None;
                let h = brent(
                    |h| {
                        self.residual(h, level).unwrap_or_else(|e| {
                            err.get_or_insert(e);
                            0.0
                        })
                    },
                    lo,
                    hi,
                    1e-14 * hi,
                    200,
                )
                .map_err(|e| SpikeError::BracketFailure(format!("GM matching: {e}")))?;
                return match err {
                    Some(e) => Err(e),
                    None => Ok(Some(h)),
                };
            }
            if lo <= h_min {
                return Ok(None);
            }
            hi = lo;
        }
    }
}

/// A solved quasi-equilibrium on one half-cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterSolve {
    /// `v(ℓ)` (or `𝒜(ℓ)`).
    pub mu: f64,
    /// `v_∞ − μ` when the model has a homogeneous outer state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_gap: Option<f64>,
    /// Matched far-field slope (Schnakenberg / Brusselator).
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    pub v0plus: f64,
    /// GM only: `H₀/ε_L`.
    #[serde(rename = "H0L", skip_serializing_if = "Option::is_none")]
    pub h0l: Option<f64>,
    pub ell: f64,
    #[serde(rename = "D_L")]
    pub d_l: f64,
    pub converged: bool,
    /// Constraint that limits this branch as `L` grows (`None` in the no-instability regimes).
    pub regime_hit: Option<FailedConstraint>,
    /// Largest residual of the matching system.
    pub residual: f64,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(SpikeError::InvalidParameter(
            "number of spikes K must be at least 1".into(),
        ))
    } else {
        Ok(())
    }
}

/// Solve the coupled inner/outer matching system for a `K`-spike pattern on
/// `|x| ≤ L`, i.e. half-cell `ℓ = 1/K` and `D_L = D/L²`.
pub fn solve_quasi_equilibrium(
    spec: &ModelSpec,
    k: usize,
    length: f64,
    opts: &OuterOptions,
) -> Result<OuterSolve> {
    check_k(k)?;
    solve_quasi_equilibrium_cell(spec, 1.0 / k as f64, length, opts)
}

/// As [`solve_quasi_equilibrium`] for an arbitrary half-cell `ℓ` (in units of
/// `L`); the matching target is `χ(μ) = √(2/D_L)·ℓ`.
pub fn solve_quasi_equilibrium_cell(
    spec: &ModelSpec,
    ell: f64,
    length: f64,
    opts: &OuterOptions,
) -> Result<OuterSolve> {
    spec.validate()?;
    if !(length.is_finite() && length > 0.0) {
        return Err(SpikeError::InvalidParameter(format!(
            "L must be positive, got {length}"
        )));
    }
    if !(ell.is_finite() && ell > 0.0) {
        return Err(SpikeError::InvalidParameter(format!(
            "half-cell width must be positive, got {ell}"
        )));
    }
    let d_l = spec.d_l(length);
    let target = (2.0 / d_l).sqrt() * ell;
    let out = Outer::new(spec.model);
    match spec.model {
        Model::Gm { kappa, .. } => {
            if kappa <= 0.0 {
                return Err(SpikeError::RegimeMismatch(
                    "GM with kappa = 0 has no outer nonlinearity; use gm_small_kappa".into(),
                ));
            }
            let m = GmMatching {
                out: &out,
                kappa,
                e: spec.eps_over_sqrt_d(),
            };
            let eval = |level: Level| -> Result<Option<(f64, f64, f64)>> {
                let Some(h) = m.solve(level)? else {
                    return Ok(None);
                };
                let a0 = gm_gamma(kappa, h) * h;
                if a0 >= level.mu {
                    return Ok(None);
                }
                Ok(Some((h, a0, out.chi(a0, level.mu, level)?)))
            };
            let (level, regime_hit) =
                locate_level(&out, target, |lv| Ok(eval(lv)?.map(|r| r.2)), None)?;
            let (h, a0, chi_val) = eval(level)?.ok_or_else(|| matching_fold(target))?;
            let residual = (chi_val - target).abs().max(m.residual(h, level)?.abs());
            if residual > FOLD_JUMP {
                return Err(matching_fold(target));
            }
            Ok(OuterSolve {
                mu: level.mu,
                mu_gap: level.gap,
                b: None,
                v0plus: a0,
                h0l: Some(h),
                ell,
                d_l,
                converged: residual < 1e-9,
                regime_hit,
                residual,
            })
        }
        _ => {
            let m = Matching::new(spec, &out, opts)?;
            let eval = |level: Level| -> Result<Option<(f64, f64, f64)>> {
                match m.slope(level)? {
                    Slope::Found { b, v0 } if v0 < level.mu => {
                        Ok(Some((b, v0, out.chi(v0, level.mu, level)?)))
                    }
                    Slope::Found { .. } | Slope::NoRoot => Ok(None),
                    Slope::BeyondFold => {
                        let v0 = m.v0(m.b_c())?;
                        Ok(Some((m.b_c(), v0, out.chi(v0, level.mu, level)?)))
                    }
                }
            };
            // In the replication regime the branch ends where B reaches B_c.
            let ceiling = if out.v_inf().is_none() {
                match m.slope(out.level(out.red.mu_max))? {
                    Slope::BeyondFold => Some(replication_mu(&m)?),
                    _ => None,
                }
            } else {
                None
            };
            let (level, regime_hit) =
                locate_level(&out, target, |lv| Ok(eval(lv)?.map(|r| r.2)), ceiling)?;
            let (b, v0, chi_val) = eval(level)?.ok_or_else(|| matching_fold(target))?;
            let residual = (chi_val - target).abs().max(m.residual(b, level)?.abs());
            if residual > FOLD_JUMP {
                return Err(matching_fold(target));
            }
            Ok(OuterSolve {
                mu: level.mu,
                mu_gap: level.gap,
                b: Some(b),
                v0plus: v0,
                h0l: None,
                ell,
                d_l,
                converged: residual < 1e-9,
                regime_hit,
                residual,
            })
        }
    }
}

/// A residual this large after root finding means the root search stopped at
/// the jump where the matched branch folds, not at a solution.
const FOLD_JUMP: f64 = 1e-6;

fn matching_fold(target: f64) -> SpikeError {
    SpikeError::NoSolution(format!(
        "matching system has no solution with chi = {target:.4}: its solution branch folds at a larger chi \
         (L too small for the asymptotic matching)"
    ))
}

/// Find the level with `χ = target` given `χ` as a function of the level
/// (`None` where no matched solution exists, which counts as `χ = 0`).
fn locate_level(
    out: &Outer,
    target: f64,
    chi_at: impl Fn(Level) -> Result<Option<f64>>,
    ceiling: Option<f64>,
) -> Result<(Level, Option<FailedConstraint>)> {
    let err = std::cell::RefCell::new(None);
    let f = |level: Level| -> f64 {
        match chi_at(level) {
            Ok(c) => c.unwrap_or(0.0) - target,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let take = || err.borrow_mut().take().map_or(Ok(()), Err);
    if let Some(vinf) = out.v_inf() {
        let w_hi = (vinf - out.red.wellposed_lo).ln();
        let w_lo = MIN_GAP.ln();
        let f_lo = f(out.level_from_gap(MIN_GAP));
        take()?;
        if f_lo < 0.0 {
            return Err(SpikeError::BracketFailure(format!(
                "chi below the target {target:.4} even at v_inf - mu = {MIN_GAP:e}; D_L too small for double precision"
            )));
        }
        let w = brent(|w| f(out.level_from_gap(w.exp())), w_lo, w_hi, 1e-13, 300)
            .map_err(|e| SpikeError::BracketFailure(format!("outer level: {e}")))?;
        take()?;
        return Ok((out.level_from_gap(w.exp()), None));
    }
    let (top, hit) = match ceiling {
        Some(mu_rep) => (mu_rep, FailedConstraint::ReplicationBound),
        None => (out.red.mu_max, FailedConstraint::NucleationBound),
    };
    let f_top = f(out.level(top));
    take()?;
    if f_top < 0.0 {
        return Err(SpikeError::NoQuasiEquilibrium { constraint: hit });
    }
    let lo = out.red.wellposed_lo * (1.0 + 1e-9);
    let mu = brent(|mu| f(out.level(mu)), lo, top, 1e-14 * top, 300)
        .map_err(|e| SpikeError::BracketFailure(format!("outer level: {e}")))?;
    take()?;
    Ok((out.level(mu), Some(hit)))
}

/// `μ` at which the matched slope reaches `B_c`.
fn replication_mu(m: &Matching<'_>) -> Result<f64> {
    let out = m.out;
    let b_c = m.b_c();
    let v0 = m.v0(b_c)?;
    let g = |mu: f64| -> f64 {
        let level = out.level(mu);
        m.prefactor * out.delta_g(v0, level).unwrap_or(f64::NAN) - b_c * b_c
    };
    let hi = out.red.mu_max;
    if !(v0 < hi) || g(hi) < 0.0 {
        return Err(SpikeError::RegimeMismatch(
            "B stays below B_c up to mu_max: nucleation occurs before replication".into(),
        ));
    }
    brent(g, v0, hi, 1e-15 * hi, 300)
        .map_err(|e| SpikeError::BracketFailure(format!("replication mu: {e}")))
}

/// Which instability a threshold describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Replication,
    Nucleation,
}

impl ThresholdKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThresholdKind::Replication => "replication",
            ThresholdKind::Nucleation => "nucleation",
        }
    }
}

/// How a threshold was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Full,
    SmallParam,
}

/// A critical domain length for `K` spikes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    #[serde(rename = "K")]
    pub k: usize,
    pub kind: ThresholdKind,
    #[serde(rename = "D_L_crit")]
    pub d_l_crit: f64,
    #[serde(rename = "L_crit")]
    pub l_crit: f64,
    pub mu_at_crit: Option<f64>,
    #[serde(rename = "B_at_crit")]
    pub b_at_crit: Option<f64>,
    #[serde(rename = "H0L_at_crit", skip_serializing_if = "Option::is_none")]
    pub h0l_at_crit: Option<f64>,
    pub v0plus: Option<f64>,
    /// `χ(μ_at_crit)`; `L_crit = K·√(D/2)·χ`.
    pub chi: Option<f64>,
    pub method: ThresholdMethod,
}

impl ThresholdResult {
    fn full(spec: &ModelSpec, k: usize, kind: ThresholdKind, chi: f64, mu: f64, v0: f64) -> Self {
        let l_crit = k as f64 * (spec.big_d / 2.0).sqrt() * chi;
        Self {
            k,
            kind,
            d_l_crit: spec.big_d / (l_crit * l_crit),
            l_crit,
            mu_at_crit: Some(mu),
            b_at_crit: None,
            h0l_at_crit: None,
            v0plus: Some(v0),
            chi: Some(chi),
            method: ThresholdMethod::Full,
        }
    }

    fn small(spec: &ModelSpec, k: usize, l_crit: f64) -> Self {
        Self {
            k,
            kind: ThresholdKind::Replication,
            d_l_crit: spec.big_d / (l_crit * l_crit),
            l_crit,
            mu_at_crit: None,
            b_at_crit: None,
            h0l_at_crit: None,
            v0plus: None,
            chi: None,
            method: ThresholdMethod::SmallParam,
        }
    }
}

/// CSV table of thresholds.
pub fn thresholds_csv(rows: &[ThresholdResult]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
    let mut s =
        String::from("K,kind,method,D_L_crit,L_crit,mu_at_crit,B_at_crit,H0L_at_crit,v0plus,chi\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.12},{:.12},{},{},{},{},{}\n",
            r.k,
            r.kind.as_str(),
            match r.method {
                ThresholdMethod::Full => "full",
                ThresholdMethod::SmallParam => "small_param",
            },
            r.d_l_crit,
            r.l_crit,
            opt(r.mu_at_crit),
            opt(r.b_at_crit),
            opt(r.h0l_at_crit),
            opt(r.v0plus),
            opt(r.chi)
        ));
    }
    s
}

fn require_no_v_inf(out: &Outer, what: &str) -> Result<()> {
    if out.v_inf().is_some() {
        Err(SpikeError::RegimeMismatch(format!(
            "{what} does not occur: the outer problem has a homogeneous state v_inf"
        )))
    } else {
        Ok(())
    }
}

/// Spike self-replication threshold: `B = B_c`, `μ` from the matching
/// condition, `L = K·√(D/2)·χ(μ)`.
pub fn replication_threshold(
    spec: &ModelSpec,
    k: usize,
    opts: &OuterOptions,
) -> Result<ThresholdResult> {
    spec.validate()?;
    check_k(k)?;
    if spec.kind() == ModelKind::Gm {
        return Err(SpikeError::RegimeMismatch(
            "GM spikes do not self-replicate in this regime".into(),
        ));
    }
    let out = Outer::new(spec.model);
    require_no_v_inf(&out, "replication")?;
    let m = Matching::new(spec, &out, opts)?;
    let mu = replication_mu(&m)?;
    let v0 = m.v0(m.b_c())?;
    let chi_val = out.chi(v0, mu, out.level(mu))?;
    let mut r = ThresholdResult::full(spec, k, ThresholdKind::Replication, chi_val, mu, v0);
    r.b_at_crit = Some(m.b_c());
    Ok(r)
}

/// Spike nucleation threshold: `μ = μ_max`, `L = K·√(D/2)·χ(μ_max)`.
pub fn nucleation_threshold(
    spec: &ModelSpec,
    k: usize,
    opts: &OuterOptions,
) -> Result<ThresholdResult> {
    spec.validate()?;
    check_k(k)?;
    let out = Outer::new(spec.model);
    require_no_v_inf(&out, "nucleation")?;
    let mu = out.red.mu_max;
    let level = out.level(mu);
    match spec.model {
        Model::Gm { kappa, .. } => {
            if kappa <= 0.0 {
                return Err(SpikeError::RegimeMismatch(
                    "GM with kappa = 0 does not nucleate".into(),
                ));
            }
            let m = GmMatching {
                out: &out,
                kappa,
                e: spec.eps_over_sqrt_d(),
            };
            let h = m.solve(level)?.ok_or_else(|| {
                SpikeError::NoSolution("no GM matching solution at mu = 2 kappa".into())
            })?;
            let a0 = gm_gamma(kappa, h) * h;
            let chi_val = out.chi(a0, mu, level)?;
            let mut r = ThresholdResult::full(spec, k, ThresholdKind::Nucleation, chi_val, mu, a0);
            r.h0l_at_crit = Some(h);
            Ok(r)
        }
        _ => {
            let m = Matching::new(spec, &out, opts)?;
            match m.slope(level)? {
                Slope::Found { b, v0 } if v0 < mu => {
                    let chi_val = out.chi(v0, mu, level)?;
                    let mut r =
                        ThresholdResult::full(spec, k, ThresholdKind::Nucleation, chi_val, mu, v0);
                    r.b_at_crit = Some(b);
                    Ok(r)
                }
                Slope::BeyondFold => Err(SpikeError::RegimeMismatch(
                    "B(mu_max) exceeds B_c: self-replication occurs before nucleation".into(),
                )),
                _ => Err(SpikeError::NoSolution(
                    "no matched outer solution at mu = mu_max".into(),
                )),
            }
        }
    }
}

/// Threshold of whichever mechanism the model undergoes first.
pub fn first_threshold(spec: &ModelSpec, k: usize, opts: &OuterOptions) -> Result<ThresholdResult> {
    match nucleation_threshold(spec, k, opts) {
        Err(SpikeError::RegimeMismatch(_)) if spec.kind() != ModelKind::Gm => {
            replication_threshold(spec, k, opts)
        }
        other => other,
    }
}

/// Mode of [`critical_a`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalAMode {
    /// Matching condition at `B = B_c`, `μ = 2a` with corrected `v(0⁺)`.
    Full,
    /// `b/(2B_c² + 3 − 4 log 2)`.
    ClosedForm,
}

/// Schnakenberg replication/nucleation boundary `a_c(b)`.
pub fn critical_a(b: f64, eps_over_sqrt_d: f64, mode: CriticalAMode) -> Result<f64> {
    if !(b.is_finite() && b > 0.0) {
        return Err(SpikeError::InvalidParameter(format!(
            "b must be positive, got {b}"
        )));
    }
    if !(eps_over_sqrt_d.is_finite() && (0.0..0.5).contains(&eps_over_sqrt_d)) {
        return Err(SpikeError::InvalidParameter(format!(
            "eps/sqrt(D) must lie in [0, 0.5), got {eps_over_sqrt_d}"
        )));
    }
    let fold = schnakenberg_fold()?;
    match mode {
        CriticalAMode::ClosedForm => Ok(crate::models::a_c_closed_form(b, fold.b_c)),
        CriticalAMode::Full => {
            let (b_c, c_c) = (fold.b_c, fold.c_c);
            let q = |a: f64| -> f64 {
                let red = OuterReduction::new(Model::Schnakenberg { a, b });
                let v0 = a + a * a * c_c * eps_over_sqrt_d;
                if v0 >= 2.0 * a {
                    return -b_c * b_c;
                }
                2.0 * (red.big_g(2.0 * a) - red.big_g(v0)) - b_c * b_c
            };
            brent(q, 1e-4 * b, b, 1e-15 * b, 300)
                .map_err(|e| SpikeError::BracketFailure(format!("a_c: {e}")))
        }
    }
}

/// Residual of the `f_c` condition `B_c²f²/2 + 3/4 − f − (1−f) log 2`.
pub fn critical_f_residual(f: f64, b_c: f64) -> f64 {
    b_c * b_c * f * f / 2.0 + 0.75 - f - (1.0 - f) * std::f64::consts::LN_2
}

/// Default `f` grid of the Brusselator fold table.
pub fn default_f_grid() -> Vec<f64> {
    (0..8).map(|i| 0.6 + 0.05 * i as f64).collect()
}

/// Brusselator fold table `B_c(f)` on [`default_f_grid`], computed once.
pub fn cached_bc_table() -> Result<Arc<Vec<BcRow>>> {
    static TABLE: OnceLock<std::result::Result<Arc<Vec<BcRow>>, String>> = OnceLock::new();
    TABLE
        .get_or_init(|| {
            bc_table(&default_f_grid())
                .map(Arc::new)
                .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(SpikeError::NoSolution)
}

/// Cubic interpolant of `B_c(f)` through a fold table.
pub fn bc_spline(rows: &[BcRow]) -> CubicSpline {
    CubicSpline::new(
        rows.iter().map(|r| r.f).collect(),
        rows.iter().map(|r| r.b_c).collect(),
    )
}

/// Root `f_c ∈ (1/2, 1)` of the `f_c` condition with `B_c(f)` interpolated from a fold table.
pub fn critical_f_from_table(rows: &[BcRow]) -> Result<f64> {
    if rows.len() < 3 {
        return Err(SpikeError::BracketFailure(
            "fold table needs at least three rows".into(),
        ));
    }
    let spline = bc_spline(rows);
    let (lo, hi) = spline.domain();
    brent(
        |f| critical_f_residual(f, spline.eval(f)),
        lo.max(0.5),
        hi.min(1.0),
        1e-15,
        300,
    )
    .map_err(|e| SpikeError::BracketFailure(format!("f_c: {e}")))
}

/// Brusselator critical `f_c`: replication for `f > f_c`, nucleation for `1/2 < f < f_c`.
pub fn critical_f() -> Result<f64> {
    critical_f_from_table(&cached_bc_table()?)
}

/// [`critical_f`] computed once per process, falling back to 0.769.
pub fn cached_critical_f() -> f64 {
    static F_C: OnceLock<f64> = OnceLock::new();
    *F_C.get_or_init(|| critical_f().unwrap_or(F_C_FALLBACK))
}

/// Small-`a` closed-form replication threshold (linearised outer problem).
///
/// Schnakenberg: `L = √D·K·atanh(aB_c/b)/a`; Brusselator:
/// `L = √D·K·atanh(B_c√(1−f))/(a√(1−f))`.
pub fn small_param_threshold(spec: &ModelSpec, k: usize) -> Result<ThresholdResult> {
    spec.validate()?;
    check_k(k)?;
    let sd = spec.big_d.sqrt();
    let kf = k as f64;
    let l_crit = match spec.model {
        Model::Schnakenberg { a, b } => {
            let arg = a * schnakenberg_fold()?.b_c / b;
            if arg >= 1.0 {
                return Err(SpikeError::RegimeMismatch(format!(
                    "a B_c / b = {arg:.4} >= 1: a is not small"
                )));
            }
            sd * kf * arg.atanh() / a
        }
        Model::Brusselator { a, f } => {
            let s = (1.0 - f).sqrt();
            let value = cached_fold(CoreModel::Brusselator { f })?.b_c * s;
            if value >= 1.0 {
                return Err(SpikeError::PrefactorOutOfRange { value });
            }
            sd * kf * value.atanh() / (a * s)
        }
        Model::Gm { .. } => {
            return Err(SpikeError::RegimeMismatch(
                "GM has no small-parameter threshold; use gm_small_kappa for H0".into(),
            ))
        }
    };
    let mut r = ThresholdResult::small(spec, k, l_crit);
    if let Model::Schnakenberg { .. } = spec.model {
        r.b_at_crit = Some(schnakenberg_fold()?.b_c);
    } else if let Model::Brusselator { f, .. } = spec.model {
        r.b_at_crit = Some(cached_fold(CoreModel::Brusselator { f })?.b_c);
    }
    Ok(r)
}

/// Small-`κ` GM core amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmSmallKappa {
    /// `H₀ ≈ (√D_L/3)·tanh(ℓ/√D_L)`.
    #[serde(rename = "H0")]
    pub h0: f64,
    /// `𝓗(0) = H₀/ε_L ≈ (√D/(3ε))·tanh(ℓ/√D_L)`.
    #[serde(rename = "H_at_0")]
    pub h_at_0: f64,
}

/// Small-`κ` GM approximations of `H₀` and `𝓗(0)` from `ℓ` and `D_L`.
pub fn gm_small_kappa_h0(ell: f64, d_l: f64, eps_l: f64) -> GmSmallKappa {
    let s = d_l.sqrt();
    let h0 = s / 3.0 * (ell / s).tanh();
    GmSmallKappa {
        h0,
        h_at_0: h0 / eps_l,
    }
}

/// [`gm_small_kappa_h0`] for a model, `K` spikes and half-length `L`.
pub fn gm_small_kappa(spec: &ModelSpec, k: usize, length: f64) -> Result<GmSmallKappa> {
    spec.validate()?;
    check_k(k)?;
    if spec.kind() != ModelKind::Gm {
        return Err(SpikeError::RegimeMismatch(
            "small-kappa H0 applies to GM only".into(),
        ));
    }
    Ok(gm_small_kappa_h0(
        1.0 / k as f64,
        spec.d_l(length),
        spec.eps_l(length),
    ))
}

/// `𝓕_s(z) = √2·(−1 + 1/z + log z)^{1/2}`, `z = (a+b)/a`.
pub fn script_f_s(z: f64) -> f64 {
    let inner = -1.0 + 1.0 / z + z.ln();
    std::f64::consts::SQRT_2 * inner.max(0.0).sqrt()
}

/// `𝓕_b(f) = √2·[(1−f)/f²·(−f − log(1−f))]^{1/2}`.
pub fn script_f_b(f: f64) -> f64 {
    // −f − log(1−f) = Σ_{k≥2} f^k/k, summed directly when f is small
    let tail = if f < 1e-2 {
        let mut term = f;
        let mut sum = 0.0;
        for k in 2..40 {
            term *= f;
            sum += term / k as f64;
        }
        sum
    } else {
        -f - (-f).ln_1p()
    };
    std::f64::consts::SQRT_2 * ((1.0 - f) / (f * f) * tail).sqrt()
}

/// Outcome of [`norep_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoRepBound {
    /// Supremum of the attainable core slope `B`.
    #[serde(rename = "B_max")]
    pub b_max: f64,
    /// Smallest fold value `B_c` over the parameter range.
    #[serde(rename = "B_c_min")]
    pub b_c_min: f64,
    /// `B_max < B_c_min`.
    pub no_replication: bool,
}

/// Upper bound on the matched slope in the no-instability regimes, compared with `B_c`.
pub fn norep_bound(spec: &ModelSpec) -> Result<NoRepBound> {
    spec.validate()?;
    let (b_max, b_c_min) = match spec.model {
        Model::Schnakenberg { a, b } if b < a => (script_f_s(2.0), schnakenberg_fold()?.b_c),
        Model::Brusselator { f, .. } if f < 0.5 => {
            // limit f → 0⁺ by Richardson extrapolation (𝓕_b is smooth in f)
            let h = 1e-4;
            let b_max = 2.0 * script_f_b(h / 2.0) - script_f_b(h);
            // B_c(f) decreases in f, so its minimum on (0, 1/2) is at f = 1/2
            (b_max, cached_fold(CoreModel::Brusselator { f: 0.5 })?.b_c)
        }
        _ => return Err(SpikeError::RegimeMismatch(
            "no-replication bound applies to Schnakenberg with b < a or Brusselator with f < 1/2"
                .into(),
        )),
    };
    Ok(NoRepBound {
        b_max,
        b_c_min,
        no_replication: b_max < b_c_min,
    })
}

/// Outer profile `v(x)` on `0 ≤ x ≤ ℓ` obtained by inverting `χ[v(x)] = √(2/D_L)·x`.
pub fn outer_profile(spec: &ModelSpec, solve: &OuterSolve, x_grid: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if !solve.converged {
        return Err(SpikeError::NoSolution(
            "outer profile needs a converged quasi-equilibrium".into(),
        ));
    }
    let out = Outer::new(spec.model);
    let level = Level {
        mu: solve.mu,
        gap: solve.mu_gap.or_else(|| out.v_inf().map(|v| v - solve.mu)),
    };
    let v0 = solve.v0plus;
    let scale = (2.0 / solve.d_l).sqrt();
    x_grid
        .iter()
        .map(|&x| {
            if !(0.0..=solve.ell * (1.0 + 1e-12)).contains(&x) {
                return Err(SpikeError::Domain {
                    xi: x,
                    lo: 0.0,
                    hi: solve.ell,
                });
            }
            let target = scale * x;
            if x <= 0.0 {
                return Ok(v0);
            }
            if x >= solve.ell {
                return Ok(level.mu);
            }
            let mut err = None;
            let mut g = |v: f64| match out.chi(v0, v, level) {
                Ok(c) => c - target,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            };
            let v = match (out.v_inf(), level.gap) {
                (Some(vinf), Some(gap)) => {
                    // bracket in the offset t = v_inf − v on a log scale
                    let w = brent(
                        |w| g(vinf - w.exp()),
                        gap.ln(),
                        (vinf - v0).ln(),
                        1e-14,
                        300,
                    )
                    .map_err(|e| SpikeError::BracketFailure(format!("outer profile: {e}")))?;
                    vinf - w.exp()
                }
                _ => brent(&mut g, v0, level.mu, 1e-15 * level.mu, 300)
                    .map_err(|e| SpikeError::BracketFailure(format!("outer profile: {e}")))?,
            };
            match err {
                Some(e) => Err(e),
                None => Ok(v),
            }
        })
        .collect()
}

/// Family of a phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum PhaseFamily {
    /// `(a, b)` plane.
    Schnakenberg,
    /// `(f, a)` plane.
    Brusselator,
    /// `κ` bar.
    Gm,
}

/// Parameter grid of a phase diagram: `nx × ny` cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// `ε` and `D` used by the full `a_c(b)` curve.
    pub epsilon: f64,
    #[serde(rename = "D")]
    pub big_d: f64,
}

impl PhaseGrid {
    /// Default grid of a family (the ranges of the classic phase plots).
    pub fn default_for(family: PhaseFamily, nx: usize, ny: usize) -> Self {
        let (x_range, y_range) = match family {
            PhaseFamily::Schnakenberg => ((0.02, 2.0), (0.1, 2.0)),
            PhaseFamily::Brusselator => ((0.05, 0.98), (0.1, 2.0)),
            PhaseFamily::Gm => ((0.02, 2.0), (0.0, 1.0)),
        };
        Self {
            x_range,
            y_range,
            nx,
            ny,
            epsilon: 0.01,
            big_d: 2.0,
        }
    }

    fn centre(range: (f64, f64), n: usize, i: usize) -> f64 {
        range.0 + (range.1 - range.0) * (i as f64 + 0.5) / n as f64
    }
}

/// One classified cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub x: f64,
    pub y: f64,
    pub regime: Option<Regime>,
    pub boundary: Option<RegimeBoundary>,
}

/// A regime boundary drawn over the cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurve {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Classification grid with its boundary curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub family: PhaseFamily,
    pub x_label: String,
    pub y_label: String,
    pub grid: PhaseGrid,
    pub cells: Vec<PhaseCell>,
    pub curves: Vec<BoundaryCurve>,
    /// Brusselator `f_c` used for the cells.
    pub f_c: Option<f64>,
}

fn regime_name(r: Option<Regime>) -> &'static str {
    match r {
        Some(Regime::Replication) => "replication",
        Some(Regime::Nucleation) => "nucleation",
        Some(Regime::NoInstability) => "no_instability",
        None => "marginal",
    }
}

fn regime_colour(r: Option<Regime>) -> Rgb {
    match r {
        Some(Regime::Replication) => Rgb(231, 138, 95),
        Some(Regime::Nucleation) => Rgb(110, 160, 214),
        Some(Regime::NoInstability) => Rgb(200, 200, 200),
        None => Rgb(90, 90, 90),
    }
}

/// Classify every cell of a parameter grid and trace the regime boundaries.
pub fn phase_diagram(family: PhaseFamily, grid: &PhaseGrid) -> Result<PhaseDiagram> {
    use rayon::prelude::*;
    if grid.nx == 0 || grid.ny == 0 {
        return Err(SpikeError::InvalidParameter(
            "phase grid needs at least one cell per axis".into(),
        ));
    }
    let e = grid.epsilon / grid.big_d.sqrt();
    let xs: Vec<f64> = (0..grid.nx)
        .map(|i| PhaseGrid::centre(grid.x_range, grid.nx, i))
        .collect();
    let ys: Vec<f64> = (0..grid.ny)
        .map(|j| PhaseGrid::centre(grid.y_range, grid.ny, j))
        .collect();
    let spec_at = |x: f64, y: f64| -> Result<ModelSpec> {
        match family {
            PhaseFamily::Schnakenberg => ModelSpec::schnakenberg(x, y, grid.epsilon, grid.big_d),
            PhaseFamily::Brusselator => ModelSpec::brusselator(y, x, grid.epsilon, grid.big_d),
            PhaseFamily::Gm => ModelSpec::gm(x, 1.0, grid.epsilon, grid.big_d),
        }
    };
    let f_c = match family {
        PhaseFamily::Brusselator => Some(cached_critical_f()),
        _ => None,
    };
    // a_c(b) from the full matching solve, one per row
    let a_c_rows: Vec<Option<f64>> = match family {
        PhaseFamily::Schnakenberg => ys
            .iter()
            .map(|&b| critical_a(b, e, CriticalAMode::Full).map(Some))
            .collect::<Result<_>>()?,
        _ => vec![None; ys.len()],
    };
    let cells: Vec<PhaseCell> = (0..grid.ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            let xs = &xs;
            let (y, a_c) = (ys[j], a_c_rows[j]);
            xs.iter().map(move |&x| (x, y, a_c)).collect::<Vec<_>>()
        })
        .map(|(x, y, a_c)| -> Result<PhaseCell> {
            let spec = spec_at(x, y)?;
            let opts = RegimeOptions {
                a_c,
                f_c,
                b_c: None,
            };
            let verdict = classify_regime_with(&spec, &opts)?;
            let boundary = match verdict {
                RegimeVerdict::Marginal { boundary } => Some(boundary),
                RegimeVerdict::Definite { .. } => None,
            };
            Ok(PhaseCell {
                x,
                y,
                regime: verdict.regime(),
                boundary,
            })
        })
        .collect::<Result<_>>()?;
    let fine = |range: (f64, f64)| crate::numerics::linspace(range.0, range.1, 100);
    let mut curves = Vec::new();
    match family {
        PhaseFamily::Schnakenberg => {
            let pts = fine(grid.y_range)
                .into_iter()
                .map(|b| critical_a(b, e, CriticalAMode::Full).map(|a| (a, b)))
                .collect::<Result<Vec<_>>>()?;
            curves.push(BoundaryCurve {
                name: "a_c(b)".into(),
                points: pts,
            });
            curves.push(BoundaryCurve {
                name: "a=b".into(),
                points: fine(grid.y_range).into_iter().map(|b| (b, b)).collect(),
            });
        }
        PhaseFamily::Brusselator => {
            let fc = f_c.expect("set for the Brusselator");
            curves.push(BoundaryCurve {
                name: "f=f_c".into(),
                points: vec![(fc, grid.y_range.0), (fc, grid.y_range.1)],
            });
            curves.push(BoundaryCurve {
                name: "f=1/2".into(),
                points: vec![(0.5, grid.y_range.0), (0.5, grid.y_range.1)],
            });
        }
        PhaseFamily::Gm => {
            curves.push(BoundaryCurve {
                name: "kappa=1".into(),
                points: vec![(1.0, grid.y_range.0), (1.0, grid.y_range.1)],
            });
        }
    }
    let (x_label, y_label) = match family {
        PhaseFamily::Schnakenberg => ("a", "b"),
        PhaseFamily::Brusselator => ("f", "a"),
        PhaseFamily::Gm => ("kappa", ""),
    };
    Ok(PhaseDiagram {
        family,
        x_label: x_label.into(),
        y_label: y_label.into(),
        grid: *grid,
        cells,
        curves,
        f_c,
    })
}

impl PhaseDiagram {
    /// Cell containing `(x, y)`.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<&PhaseCell> {
        let g = &self.grid;
        let fx = (x - g.x_range.0) / (g.x_range.1 - g.x_range.0);
        let fy = (y - g.y_range.0) / (g.y_range.1 - g.y_range.0);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let i = ((fx * g.nx as f64) as usize).min(g.nx - 1);
        let j = ((fy * g.ny as f64) as usize).min(g.ny - 1);
        self.cells.get(j * g.nx + i)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},{},regime,boundary\n",
            self.x_label,
            if self.y_label.is_empty() {
                "y"
            } else {
                &self.y_label
            }
        );
        for c in &self.cells {
            let boundary = c.boundary.map(|b| format!("{b:?}")).unwrap_or_default();
            s.push_str(&format!(
                "{:.6},{:.6},{},{}\n",
                c.x,
                c.y,
                regime_name(c.regime),
                boundary
            ));
        }
        s
    }

    /// Raster of regime colours with the boundary polylines on top.
    pub fn to_svg(&self) -> String {
        let g = &self.grid;
        let frame = Frame {
            x_range: g.x_range,
            y_range: g.y_range,
            left: 70.0,
            top: 20.0,
            width: 480.0,
            height: 360.0,
        };
        let mut svg = Svg::new(640.0, 440.0);
        let (cw, ch) = (frame.width / g.nx as f64, frame.height / g.ny as f64);
        for (idx, c) in self.cells.iter().enumerate() {
            let (i, j) = (idx % g.nx, idx / g.nx);
            let x = frame.left + i as f64 * cw;
            let y = frame.top + frame.height - (j as f64 + 1.0) * ch;
            svg.rect(x, y, cw + 0.5, ch + 0.5, regime_colour(c.regime));
        }
        for (k, curve) in self.curves.iter().enumerate() {
            let pts: Vec<(f64, f64)> = curve
                .points
                .iter()
                .filter(|(x, y)| {
                    (g.x_range.0..=g.x_range.1).contains(x)
                        && (g.y_range.0..=g.y_range.1).contains(y)
                })
                .map(|&(x, y)| (frame.px(x), frame.py(y)))
                .collect();
            svg.polyline(&pts, Rgb(0, 0, 0), 2.0, k % 2 == 1);
            if let Some(&(x, y)) = pts.last() {
                svg.text(x + 4.0, y + 12.0, 12.0, "start", &curve.name);
            }
        }
        svg.axes(&frame, &self.x_label, &self.y_label);
        for (k, r) in [
            Some(Regime::Replication),
            Some(Regime::Nucleation),
            Some(Regime::NoInstability),
        ]
        .into_iter()
        .enumerate()
        {
            let y = 40.0 + 20.0 * k as f64;
            svg.rect(560.0, y - 10.0, 12.0, 12.0, regime_colour(r));
            svg.text(576.0, y, 11.0, "start", regime_name(r));
        }
        svg.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_is_the_small_root() {
        let (k, h) = (0.5, 33.5);
        let g = gm_gamma(k, h);
        assert!(g < 0.5);
        assert!((g * g - g + k / h).abs() < 1e-15);
    }

    #[test]
    fn script_f_values() {
        assert_eq!(script_f_s(1.0), 0.0);
        let expect = (2.0 * std::f64::consts::LN_2 - 1.0).sqrt();
        assert!((script_f_s(2.0) - expect).abs() < 1e-14);
        // the series and closed branches agree at the switch point
        let f: f64 = 1e-2;
        let closed = std::f64::consts::SQRT_2 * ((1.0 - f) / (f * f) * (-f - (-f).ln_1p())).sqrt();
        assert!((script_f_b(f) - closed).abs() < 1e-10);
    }

    #[test]
    fn chi_rejects_bad_arguments() {
        let spec = ModelSpec::schnakenberg(0.5, 1.0, 0.01, 2.0).unwrap();
        assert!(matches!(
            chi(&spec, 1.2, 0.6),
            Err(SpikeError::Domain { .. })
        ));
        assert!(matches!(
            chi(&spec, 0.7, 0.8),
            Err(SpikeError::Domain { .. })
        ));
        assert!(matches!(
            chi(&spec, 0.9, 0.4),
            Err(SpikeError::Domain { .. })
        ));
    }

    #[test]
    fn offset_and_direct_chi_agree_away_from_v_infty() {
        // a > b: v_inf = a + b lies inside (a, 2a)
        let spec = ModelSpec::schnakenberg(1.5, 1.0, 0.01, 2.0).unwrap();
        let out = Outer::new(spec.model);
        let (v0, mu) = (1.6, 2.2);
        let plain = out.chi(v0, mu, Level { mu, gap: None }).unwrap();
        let offset = chi(&spec, mu, v0).unwrap();
        assert!((plain - offset).abs() < 1e-9, "{plain} vs {offset}");
    }
}
