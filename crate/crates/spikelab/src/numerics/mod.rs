//! Numerical building blocks shared by the solvers: banded LU, adaptive
//! quadrature, splines, scalar root finding and eigenvalue iterations.

pub mod banded;
pub mod eig;
pub mod quad;
pub mod roots;
pub mod spline;

pub use banded::{BandLu, BandMatrix, Scalar, SingularMatrix};
pub use quad::{integrate, QuadResult};
pub use roots::{brent, RootError};
pub use spline::CubicSpline;

/// Uniformly spaced grid `[a, b]` with `n` intervals (`n + 1` points).
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| if i == n { b } else { a + h * i as f64 })
        .collect()
}

/// Logarithmically spaced values from `a` to `b` inclusive (`count` ≥ 2).
pub fn logspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Max-norm of a slice.
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
