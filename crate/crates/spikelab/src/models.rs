//! The three reaction–diffusion systems, their dimensionless parameters, the
//! closed-form outer reductions `g`, `R`, `𝒢`, conversions from physical
//! parameters and the prediction of which spike-generating mechanism occurs.

use crate::error::{Result, SpikeError};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Relative half-width of the band around a regime boundary in which the
/// classification is reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-3;

/// Fallback for the Brusselator critical `f` when no fold table is available.
pub const F_C_FALLBACK: f64 = 0.769;

/// Which model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Schnakenberg,
    Brusselator,
    Gm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Schnakenberg => "schnakenberg",
            ModelKind::Brusselator => "brusselator",
            ModelKind::Gm => "gm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = SpikeError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "schnakenberg" | "sch" => Ok(ModelKind::Schnakenberg),
            "brusselator" | "bru" => Ok(ModelKind::Brusselator),
            "gm" | "gierer-meinhardt" | "gierer_meinhardt" => Ok(ModelKind::Gm),
            other => Err(SpikeError::InvalidParameter(format!(
                "unknown model kind '{other}'"
            ))),
        }
    }
}

/// Kinetic parameters of one of the three models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    /// `v_t = ε²v_xx − v + a + uv²`, `u_t = D u_xx + b − uv²`.
    Schnakenberg { a: f64, b: f64 },
    /// `v_t = ε²v_xx − v + a + f uv²`, `u_t = D u_xx + v − uv²`.
    Brusselator { a: f64, f: f64 },
    /// `𝒜_t = ε²𝒜_xx − 𝒜 + 𝒜²/𝓗 + κ`, `τ𝓗_t = D𝓗_xx − 𝓗 + 𝒜²`.
    Gm { kappa: f64, tau: f64 },
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Schnakenberg { .. } => ModelKind::Schnakenberg,
            Model::Brusselator { .. } => ModelKind::Brusselator,
            Model::Gm { .. } => ModelKind::Gm,
        }
    }
}

/// A model together with the inner width `ε` and inhibitor diffusivity `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub model: Model,
    pub epsilon: f64,
    pub big_d: f64,
}

impl ModelSpec {
    /// Validated constructor.
    pub fn new(model: Model, epsilon: f64, big_d: f64) -> Result<Self> {
        let spec = Self {
            model,
            epsilon,
            big_d,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn schnakenberg(a: f64, b: f64, epsilon: f64, big_d: f64) -> Result<Self> {
        Self::new(Model::Schnakenberg { a, b }, epsilon, big_d)
    }

    pub fn brusselator(a: f64, f: f64, epsilon: f64, big_d: f64) -> Result<Self> {
        Self::new(Model::Brusselator { a, f }, epsilon, big_d)
    }

    pub fn gm(kappa: f64, tau: f64, epsilon: f64, big_d: f64) -> Result<Self> {
        Self::new(Model::Gm { kappa, tau }, epsilon, big_d)
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    /// The small parameter `ε/√D` of the semi-strong regime.
    pub fn eps_over_sqrt_d(&self) -> f64 {
        self.epsilon / self.big_d.sqrt()
    }

    /// True when `ε/√D` is too large for the asymptotic reductions to be meaningful.
    pub fn outside_semi_strong(&self) -> bool {
        self.eps_over_sqrt_d() >= 0.5
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpikeError::InvalidParameter(m));
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.epsilon) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !finite_pos(self.big_d) {
            return bad(format!("D must be positive, got {}", self.big_d));
        }
        if self.outside_semi_strong() {
            return bad(format!(
                "epsilon/sqrt(D) = {:.4} is not small (>= 0.5); outside the semi-strong regime",
                self.eps_over_sqrt_d()
            ));
        }
        match self.model {
            Model::Schnakenberg { a, b } => {
                if !finite_pos(a) || !finite_pos(b) {
                    return bad(format!("Schnakenberg requires a, b > 0 (a={a}, b={b})"));
                }
            }
            Model::Brusselator { a, f } => {
                if !finite_pos(a) {
                    return bad(format!("Brusselator requires a > 0 (a={a})"));
                }
                if !(f > 0.0 && f < 1.0) {
                    return bad(format!("Brusselator requires 0 < f < 1 (f={f})"));
                }
            }
            Model::Gm { kappa, tau } => {
                if !(kappa.is_finite() && kappa >= 0.0) {
                    return bad(format!("GM requires kappa >= 0 (kappa={kappa})"));
                }
                if !finite_pos(tau) {
                    return bad(format!("GM requires tau > 0 (tau={tau})"));
                }
            }
        }
        Ok(())
    }

    /// Scaled inner width `ε_L = ε/L` on a domain of half-length `L`.
    pub fn eps_l(&self, length: f64) -> f64 {
        self.epsilon / length
    }

    /// Scaled diffusivity `D_L = D/L²`.
    pub fn d_l(&self, length: f64) -> f64 {
        self.big_d / (length * length)
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    kind: ModelKind,
    params: ParamsRepr,
    epsilon: f64,
    #[serde(rename = "D")]
    big_d: f64,
}

impl Serialize for ModelSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let params = match self.model {
            Model::Schnakenberg { a, b } => ParamsRepr {
                a: Some(a),
                b: Some(b),
                ..Default::default()
            },
            Model::Brusselator { a, f } => ParamsRepr {
                a: Some(a),
                f: Some(f),
                ..Default::default()
            },
            Model::Gm { kappa, tau } => ParamsRepr {
                kappa: Some(kappa),
                tau: Some(tau),
                ..Default::default()
            },
        };
        SpecRepr {
            kind: self.kind(),
            params,
            epsilon: self.epsilon,
            big_d: self.big_d,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let r = SpecRepr::deserialize(d)?;
        let p = &r.params;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| D::Error::custom(format!("missing parameter '{name}'")))
        };
        let forbid = |v: Option<f64>, name: &str| {
            if v.is_some() {
                Err(D::Error::custom(format!(
                    "parameter '{name}' does not apply to model '{}'",
                    r.kind
                )))
            } else {
                Ok(())
            }
        };
        let model = match r.kind {
            ModelKind::Schnakenberg => {
                forbid(p.f, "f")?;
                forbid(p.kappa, "kappa")?;
                forbid(p.tau, "tau")?;
                Model::Schnakenberg {
                    a: need(p.a, "a")?,
                    b: need(p.b, "b")?,
                }
            }
            ModelKind::Brusselator => {
                forbid(p.b, "b")?;
                forbid(p.kappa, "kappa")?;
                forbid(p.tau, "tau")?;
                Model::Brusselator {
                    a: need(p.a, "a")?,
                    f: need(p.f, "f")?,
                }
            }
            ModelKind::Gm => {
                forbid(p.a, "a")?;
                forbid(p.b, "b")?;
                forbid(p.f, "f")?;
                Model::Gm {
                    kappa: need(p.kappa, "kappa")?,
                    tau: p.tau.unwrap_or(1.0),
                }
            }
        };
        ModelSpec::new(model, r.epsilon, r.big_d).map_err(D::Error::custom)
    }
}

/// Closed-form outer-problem reduction of a model.
///
/// For Schnakenberg and Brusselator the outer flux function is
/// `g(v) = (2a − v)/v³`; for GM it is `f(𝒜) = 𝒜(2κ − 𝒜)/(𝒜 − κ)²`. In every
/// case `𝒢′ = −R·g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterReduction {
    model: Model,
    /// Lower end of the well-posed interval (open).
    pub wellposed_lo: f64,
    /// Upper end of the well-posed interval (closed), equal to `mu_max`.
    pub wellposed_hi: f64,
    /// Homogeneous outer state, present in the no-instability regimes.
    pub v_infty: Option<f64>,
    pub mu_max: f64,
}

/// Build the outer reduction of a model.
pub fn outer_reduction(model: &ModelSpec) -> Result<OuterReduction> {
    model.validate()?;
    Ok(OuterReduction::new(model.model))
}

impl OuterReduction {
    pub fn new(model: Model) -> Self {
        let (lo, hi) = match model {
            Model::Schnakenberg { a, .. } | Model::Brusselator { a, .. } => (a, 2.0 * a),
            Model::Gm { kappa, .. } => (kappa, 2.0 * kappa),
        };
        let mut red = Self {
            model,
            wellposed_lo: lo,
            wellposed_hi: hi,
            v_infty: None,
            mu_max: hi,
        };
        let candidate = match model {
            Model::Schnakenberg { a, b } => Some(a + b),
            Model::Brusselator { a, f } => Some(a / (1.0 - f)),
            Model::Gm { kappa, .. } => Some(1.0 + kappa),
        };
        red.v_infty = candidate.filter(|&v| v > lo && v < hi && red.r_prime(v) > 0.0);
        red
    }

    pub fn model(&self) -> Model {
        self.model
    }

    /// Check `ξ ∈ (lo, hi]`, the domain of every evaluator.
    pub fn check(&self, xi: f64) -> Result<()> {
        if xi > self.wellposed_lo && xi <= self.wellposed_hi * (1.0 + 1e-12) && xi.is_finite() {
            Ok(())
        } else {
            Err(SpikeError::Domain {
                xi,
                lo: self.wellposed_lo,
                hi: self.wellposed_hi,
            })
        }
    }

    /// Outer flux function `g` (or `f` for GM).
    pub fn g(&self, xi: f64) -> f64 {
        match self.model {
            Model::Schnakenberg { a, .. } | Model::Brusselator { a, .. } => {
                (2.0 * a - xi) / (xi * xi * xi)
            }
            Model::Gm { kappa, .. } => {
                let d = xi - kappa;
                xi * (2.0 * kappa - xi) / (d * d)
            }
        }
    }

    /// Reaction term `R` of the outer problem.
    pub fn r(&self, xi: f64) -> f64 {
        match self.model {
            Model::Schnakenberg { a, b } => xi - a - b,
            Model::Brusselator { a, f } => (1.0 - f) * xi - a,
            Model::Gm { kappa, .. } => xi * xi - xi * xi / (xi - kappa),
        }
    }

    pub fn r_prime(&self, xi: f64) -> f64 {
        match self.model {
            Model::Schnakenberg { .. } => 1.0,
            Model::Brusselator { f, .. } => 1.0 - f,
            Model::Gm { .. } => 2.0 * xi + self.g(xi),
        }
    }

    /// First integral `𝒢`.
    pub fn big_g(&self, xi: f64) -> f64 {
        match self.model {
            Model::Schnakenberg { a, b } => -a * (a + b) / (xi * xi) + (3.0 * a + b) / xi + xi.ln(),
            Model::Brusselator { a, f } => {
                -a * a / (xi * xi) + a * (3.0 - 2.0 * f) / xi + (1.0 - f) * xi.ln()
            }
            Model::Gm { kappa: k, .. } => {
                let xi = xi.max(k * (1.0 + 1e-12));
                let d = xi - k;
                -k.powi(4) / (2.0 * d * d) + k.powi(3) * (k - 2.0) / d
                    - 2.0 * k.powi(3) * d.ln()
                    - k * (k + 1.0) * xi
                    + xi.powi(3) / 3.0
                    - xi * xi / 2.0
            }
        }
    }

    /// `𝒢′ = −R·g`.
    pub fn big_g_prime(&self, xi: f64) -> f64 {
        -self.r(xi) * self.g(xi)
    }
}

/// The spike-generating mechanism predicted for increasing `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Replication,
    Nucleation,
    NoInstability,
}

/// Regime boundary that a marginal classification sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeBoundary {
    /// Schnakenberg `a = b`.
    AEqualsB,
    /// Schnakenberg `a = a_c(b)`.
    ACritical,
    /// Brusselator `f = 1/2`.
    FHalf,
    /// Brusselator `f = f_c`.
    FCritical,
    /// GM `κ = 1`.
    KappaOne,
}

/// Result of [`classify_regime`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RegimeVerdict {
    Definite { regime: Regime },
    Marginal { boundary: RegimeBoundary },
}

impl RegimeVerdict {
    pub fn regime(&self) -> Option<Regime> {
        match self {
            RegimeVerdict::Definite { regime } => Some(*regime),
            RegimeVerdict::Marginal { .. } => None,
        }
    }
}

/// Knobs for [`classify_regime_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegimeOptions {
    /// Schnakenberg `a_c(b)`; `None` uses the closed form `b/(2B_c² + 3 − 4 log 2)`.
    pub a_c: Option<f64>,
    /// Brusselator `f_c`; `None` uses the cached root computed from the fold table.
    pub f_c: Option<f64>,
    /// Schnakenberg core fold used by the closed form.
    pub b_c: Option<f64>,
}

/// Closed form `a_c = b/(2B_c² + 3 − 4 log 2)`.
pub fn a_c_closed_form(b: f64, b_c: f64) -> f64 {
    b / (2.0 * b_c * b_c + 3.0 - 4.0 * std::f64::consts::LN_2)
}

fn near(x: f64, boundary: f64) -> bool {
    (x / boundary - 1.0).abs() < MARGINAL_BAND
}

/// Classify with the default options (closed-form `a_c`, cached `f_c`).
pub fn classify_regime(model: &ModelSpec) -> Result<RegimeVerdict> {
    classify_regime_with(model, &RegimeOptions::default())
}

/// Classify the spike-generating mechanism of a model.
pub fn classify_regime_with(model: &ModelSpec, opts: &RegimeOptions) -> Result<RegimeVerdict> {
    model.validate()?;
    let def = |regime| Ok(RegimeVerdict::Definite { regime });
    let marg = |boundary| Ok(RegimeVerdict::Marginal { boundary });
    match model.model {
        Model::Schnakenberg { a, b } => {
            if near(a, b) {
                return marg(RegimeBoundary::AEqualsB);
            }
            if a > b {
                return def(Regime::NoInstability);
            }
            let a_c = match opts.a_c {
                Some(v) => v,
                None => {
                    let b_c = match opts.b_c {
                        Some(v) => v,
                        None => crate::core_problem::schnakenberg_fold()?.b_c,
                    };
                    a_c_closed_form(b, b_c)
                }
            };
            if near(a, a_c) {
                marg(RegimeBoundary::ACritical)
            } else if a < a_c {
                def(Regime::Replication)
            } else {
                def(Regime::Nucleation)
            }
        }
        Model::Brusselator { f, .. } => {
            if near(f, 0.5) {
                return marg(RegimeBoundary::FHalf);
            }
            if f < 0.5 {
                return def(Regime::NoInstability);
            }
            let f_c = match opts.f_c {
                Some(v) => v,
                None => crate::outer::cached_critical_f(),
            };
            if near(f, f_c) {
                marg(RegimeBoundary::FCritical)
            } else if f < f_c {
                def(Regime::Nucleation)
            } else {
                def(Regime::Replication)
            }
        }
        Model::Gm { kappa, .. } => {
            if near(kappa, 1.0) {
                marg(RegimeBoundary::KappaOne)
            } else if kappa > 0.0 && kappa < 1.0 {
                def(Regime::Nucleation)
            } else {
                def(Regime::NoInstability)
            }
        }
    }
}

/// Physical Brusselator parameters → dimensionless model.
///
/// `a = E/(B+1)^{3/2}`, `f = B/(B+1)`, `D = D_u/((B+1)L²)`, `ε² = D_v/((B+1)L²)`.
pub fn brusselator_from_physical(
    e: f64,
    b: f64,
    d_v: f64,
    d_u: f64,
    length: f64,
) -> Result<ModelSpec> {
    for (name, v) in [
        ("E", e),
        ("B", b),
        ("D_v", d_v),
        ("D_u", d_u),
        ("L", length),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(SpikeError::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let bp1 = b + 1.0;
    let a = e / bp1.powf(1.5);
    let f = b / bp1;
    let big_d = d_u / (bp1 * length * length);
    let epsilon = (d_v / (bp1 * length * length)).sqrt();
    ModelSpec::brusselator(a, f, epsilon, big_d)
}

/// Alternative Brusselator scaling in which the time constant `τ` of the
/// activator equation is absorbed by `V = (ετ)^{1/2} v`, `U = (ετ)^{-1/2} u`:
/// gives `D = D_u/τ` and `a = √(ε/τ)` with `ε` and `f` unchanged.
pub fn brusselator_from_tau_scaling(epsilon: f64, d_u: f64, tau: f64, f: f64) -> Result<ModelSpec> {
    for (name, v) in [("epsilon", epsilon), ("D_u", d_u), ("tau", tau)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(SpikeError::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    ModelSpec::brusselator((epsilon / tau).sqrt(), f, epsilon, d_u / tau)
}

/// Physical GM parameters → dimensionless model.
///
/// `τ = μ_a/μ_h`, `D = D_h/μ_h`, `ε² = D_a/μ_a`, `κ = δ_a ν_h/(μ_h ν_a)`.
pub fn gm_from_physical(
    mu_a: f64,
    nu_a: f64,
    mu_h: f64,
    nu_h: f64,
    delta_a: f64,
    d_a: f64,
    d_h: f64,
) -> Result<ModelSpec> {
    for (name, v) in [
        ("mu_a", mu_a),
        ("nu_a", nu_a),
        ("mu_h", mu_h),
        ("nu_h", nu_h),
        ("D_a", d_a),
        ("D_h", d_h),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(SpikeError::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if !(delta_a.is_finite() && delta_a >= 0.0) {
        return Err(SpikeError::InvalidParameter(format!(
            "delta_a must be non-negative, got {delta_a}"
        )));
    }
    let tau = mu_a / mu_h;
    let big_d = d_h / mu_h;
    let epsilon = (d_a / mu_a).sqrt();
    let kappa = delta_a * nu_h / (mu_h * nu_a);
    ModelSpec::gm(kappa, tau, epsilon, big_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sch(a: f64, b: f64) -> ModelSpec {
        ModelSpec::schnakenberg(a, b, 0.01, 2.0).unwrap()
    }

    #[test]
    fn closed_form_evaluations() {
        let r = OuterReduction::new(Model::Schnakenberg { a: 0.5, b: 1.0 });
        assert!((r.g(0.5) - 4.0).abs() < 1e-15);
        let r = OuterReduction::new(Model::Schnakenberg { a: 1.0, b: 1.0 });
        let expect = -0.75 + 0.25 + std::f64::consts::LN_2;
        assert!((r.big_g(2.0) - r.big_g(1.0) - expect).abs() < 1e-14);
        assert!((expect - 0.19315).abs() < 1e-5);
        let r = OuterReduction::new(Model::Brusselator { a: 0.7, f: 0.3 });
        assert!((r.r(0.7) + 0.7 * 0.3).abs() < 1e-15);
        let r = OuterReduction::new(Model::Gm {
            kappa: 0.5,
            tau: 1.0,
        });
        assert!((r.r(1.0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn v_infty_presence() {
        assert_eq!(
            OuterReduction::new(Model::Schnakenberg { a: 1.5, b: 1.0 }).v_infty,
            Some(2.5)
        );
        assert_eq!(
            OuterReduction::new(Model::Schnakenberg { a: 0.2, b: 1.0 }).v_infty,
            None
        );
        let bru = OuterReduction::new(Model::Brusselator { a: 1.0, f: 0.3 })
            .v_infty
            .unwrap();
        assert!((bru - 1.0 / 0.7).abs() < 1e-14);
        assert_eq!(
            OuterReduction::new(Model::Gm {
                kappa: 1.5,
                tau: 1.0
            })
            .v_infty,
            Some(2.5)
        );
        assert_eq!(
            OuterReduction::new(Model::Gm {
                kappa: 0.5,
                tau: 1.0
            })
            .v_infty,
            None
        );
    }

    #[test]
    fn domain_check() {
        let r = OuterReduction::new(Model::Schnakenberg { a: 0.5, b: 1.0 });
        assert!(r.check(0.5).is_err());
        assert!(r.check(0.75).is_ok());
        assert!(r.check(1.0).is_ok());
        assert!(r.check(1.01).is_err());
    }

    #[test]
    fn regimes() {
        let opts = RegimeOptions {
            b_c: Some(1.347),
            f_c: Some(0.769),
            a_c: None,
        };
        let cls = |m: &ModelSpec| classify_regime_with(m, &opts).unwrap().regime();
        assert_eq!(cls(&sch(0.2, 1.0)), Some(Regime::Replication));
        assert_eq!(cls(&sch(0.5, 1.0)), Some(Regime::Nucleation));
        assert_eq!(cls(&sch(1.5, 1.0)), Some(Regime::NoInstability));
        let bru = |f| ModelSpec::brusselator(1.0, f, 0.01, 2.0).unwrap();
        assert_eq!(cls(&bru(0.7)), Some(Regime::Nucleation));
        assert_eq!(cls(&bru(0.8)), Some(Regime::Replication));
        assert_eq!(cls(&bru(0.3)), Some(Regime::NoInstability));
        let gm = |k| ModelSpec::gm(k, 1.0, 0.01, 1.0).unwrap();
        assert_eq!(cls(&gm(1.5)), Some(Regime::NoInstability));
        assert_eq!(cls(&gm(0.5)), Some(Regime::Nucleation));
        assert_eq!(
            classify_regime_with(&gm(1.0), &opts).unwrap(),
            RegimeVerdict::Marginal {
                boundary: RegimeBoundary::KappaOne
            }
        );
        assert_eq!(
            classify_regime_with(&sch(1.0, 1.0), &opts).unwrap(),
            RegimeVerdict::Marginal {
                boundary: RegimeBoundary::AEqualsB
            }
        );
        assert_eq!(
            classify_regime_with(&bru(0.5), &opts).unwrap(),
            RegimeVerdict::Marginal {
                boundary: RegimeBoundary::FHalf
            }
        );
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let m = ModelSpec::brusselator(1.0, 0.8, 0.01, 2.0).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(
            s,
            r#"{"kind":"brusselator","params":{"a":1.0,"f":0.8},"epsilon":0.01,"D":2.0}"#
        );
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ModelSpec>(
            r#"{"kind":"gm","params":{"kappa":0.5},"epsilon":0.01,"D":1,"x":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ModelSpec>(
            r#"{"kind":"brusselator","params":{"a":1,"f":1.2},"epsilon":0.01,"D":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ModelSpec>(
            r#"{"kind":"schnakenberg","params":{"a":1,"f":0.2},"epsilon":0.01,"D":1}"#
        )
        .is_err());
        let gm: ModelSpec =
            serde_json::from_str(r#"{"kind":"gm","params":{"kappa":0.5},"epsilon":0.01,"D":1}"#)
                .unwrap();
        assert_eq!(
            gm.model,
            Model::Gm {
                kappa: 0.5,
                tau: 1.0
            }
        );
    }

    #[test]
    fn rejects_large_eps_over_sqrt_d() {
        assert!(ModelSpec::schnakenberg(0.2, 1.0, 0.6, 1.0).is_err());
    }

    #[test]
    fn physical_conversions() {
        let m = brusselator_from_physical(1.0, 1.0, 2e-4, 2.0, 1.0).unwrap();
        match m.model {
            Model::Brusselator { a, f } => {
                assert!((f - 0.5).abs() < 1e-15);
                assert!((a - 2f64.powf(-1.5)).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert!((m.big_d - 1.0).abs() < 1e-15);
        assert!((m.epsilon - 0.01).abs() < 1e-15);

        let t = brusselator_from_tau_scaling(0.01, 0.02, 0.001, 0.95).unwrap();
        assert!((t.big_d - 20.0).abs() < 1e-12);
        match t.model {
            Model::Brusselator { a, .. } => assert!((a - 10f64.sqrt()).abs() < 1e-12),
            _ => unreachable!(),
        }
        let tiny = brusselator_from_physical(1.0, 1e-9, 1e-4, 1.0, 1.0).unwrap();
        match tiny.model {
            Model::Brusselator { f, .. } => assert!(f < 1e-8),
            _ => unreachable!(),
        }

        let g = gm_from_physical(0.01, 0.01, 0.02, 0.02, 0.001, 0.01, 1.0).unwrap();
        assert_eq!(
            g.model,
            Model::Gm {
                kappa: 0.1,
                tau: 0.5
            }
        );
        assert!((g.epsilon * g.epsilon / g.big_d - 0.02).abs() < 1e-15);
        let g = gm_from_physical(0.5, 1.0, 1.0, 1.0, 0.005, 0.01, 1.0).unwrap();
        match g.model {
            Model::Gm { kappa, tau } => {
                assert!((kappa - 0.005).abs() < 1e-15, "kappa = {kappa}");
                assert_eq!(tau, 0.5);
            }
            _ => unreachable!(),
        }
        assert!((g.epsilon * g.epsilon / g.big_d - 0.02).abs() < 1e-15);
        let g = gm_from_physical(1.0, 1.0, 1.0, 1.0, 0.0, 0.01, 1.0).unwrap();
        assert_eq!(
            g.model,
            Model::Gm {
                kappa: 0.0,
                tau: 1.0
            }
        );
    }
}
