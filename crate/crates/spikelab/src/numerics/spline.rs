//! Natural cubic splines and grid interpolation helpers.

use serde::{Deserialize, Serialize};

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    /// Build the spline; panics if fewer than two knots or knots not increasing.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(x.len() >= 2, "need at least two knots");
        assert!(
            x.windows(2).all(|w| w[1] > w[0]),
            "knots must be strictly increasing"
        );
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 2..n - 1 {
                let h0 = x[i] - x[i - 1];
                let w = h0 / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 {
                    upper[i] * m[i + 1]
                } else {
                    0.0
                };
                m[i] = (rhs[i] - next) / diag[i];
            }
        }
        Self { x, y, m }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Evaluate (linear extrapolation beyond the ends of the natural spline).
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// First derivative.
    pub fn deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }
}

/// Piecewise-linear interpolation on increasing knots (clamped at the ends).
pub fn interp_linear(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let i = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return y[i],
        Err(i) => i - 1,
    };
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] * (1.0 - w) + y[i + 1] * w
}

/// Local cubic (four-point Lagrange) interpolation on a uniform grid starting
/// at `x0` with spacing `h`; clamps outside the grid.
pub fn interp_uniform_cubic(values: &[f64], x0: f64, h: f64, t: f64) -> f64 {
    let n = values.len();
    let s = (t - x0) / h;
    if s <= 0.0 {
        return values[0];
    }
    if s >= (n - 1) as f64 {
        return values[n - 1];
    }
    if n < 4 {
        let i = (s.floor() as usize).min(n - 2);
        let w = s - i as f64;
        return values[i] * (1.0 - w) + values[i + 1] * w;
    }
    let i = (s.floor() as usize).clamp(1, n - 3);
    let u = s - i as f64;
    let (p0, p1, p2, p3) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    // Lagrange weights for nodes -1, 0, 1, 2
    let w0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
    let w1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
    let w2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
    let w3 = (u + 1.0) * u * (u - 1.0) / 6.0;
    w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_knots_and_smooth_function() {
        let x: Vec<f64> = (0..41).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = CubicSpline::new(x.clone(), y.clone());
        for (a, b) in x.iter().zip(&y) {
            assert!((s.eval(*a) - b).abs() < 1e-14);
        }
        for k in 0..100 {
            let t = 0.2 + k as f64 * 0.035;
            assert!((s.eval(t) - t.sin()).abs() < 1e-5);
            assert!((s.deriv(t) - t.cos()).abs() < 1e-3);
        }
    }

    #[test]
    fn two_knot_spline_is_linear() {
        let s = CubicSpline::new(vec![0.0, 2.0], vec![1.0, 5.0]);
        assert!((s.eval(1.0) - 3.0).abs() < 1e-15);
        assert!((s.deriv(0.3) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_cubic_exact_for_cubics() {
        let f = |x: f64| 2.0 * x * x * x - x + 0.5;
        let v: Vec<f64> = (0..10).map(|i| f(1.0 + 0.5 * i as f64)).collect();
        for k in 0..30 {
            let t = 1.0 + 0.15 * k as f64;
            assert!((interp_uniform_cubic(&v, 1.0, 0.5, t) - f(t)).abs() < 1e-11);
        }
    }

    #[test]
    fn linear_clamps() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 10.0, 0.0];
        assert_eq!(interp_linear(&x, &y, -1.0), 0.0);
        assert_eq!(interp_linear(&x, &y, 0.5), 5.0);
        assert_eq!(interp_linear(&x, &y, 1.0), 10.0);
    }
}
