//! Banded matrices with partial-pivoting LU factorisation.
//!
//! Storage follows the LAPACK `gbtrf` idea: every row keeps `kl` extra
//! super-diagonals of room so that row interchanges never fall outside the
//! band. The scalar type is generic so the same code serves the real Newton
//! systems and the complex shifted eigenvalue solves.

use num_complex::Complex64;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Scalar field usable by the banded solver.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    /// Magnitude used for pivot selection.
    fn modulus(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandMatrix<T: Scalar> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            j + self.kl >= i && j <= i + self.ku + self.kl,
            "({i},{j}) outside band"
        );
        i * self.width + (j + self.kl - i)
    }

    /// Whether `(i, j)` lies inside the declared band.
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            T::zero()
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(
            self.in_band(i, j),
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            self.in_band(i, j),
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Zero every stored entry of row `i`.
    pub fn clear_row(&mut self, i: usize) {
        let start = i * self.width;
        for v in &mut self.data[start..start + self.width] {
            *v = T::zero();
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::zero(); self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut acc = T::zero();
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                acc += self.data[self.slot(i, j)] * *xj;
            }
            *yi = acc;
        }
        y
    }

    /// Copy into a matrix over another scalar type (used to build complex
    /// shifted systems from real Jacobians).
    pub fn map<S: Scalar>(&self, f: impl Fn(T) -> S) -> BandMatrix<S> {
        BandMatrix {
            n: self.n,
            kl: self.kl,
            ku: self.ku,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Dense copy (row-major), intended for small matrices and tests.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// LU factorisation with partial pivoting; consumes the matrix.
    pub fn factor(mut self) -> Result<BandLu<T>, SingularMatrix> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        let mut piv = vec![0usize; n];
        let mut lower = vec![T::zero(); n * kl.max(1)];
        let mut swaps = 0usize;
        let mut scale = 0.0f64;
        for v in &self.data {
            scale = scale.max(v.modulus());
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].modulus();
            for i in k + 1..=last_row {
                let m = self.data[self.slot(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if !(best > scale * 1e-300) || !best.is_finite() {
                return Err(SingularMatrix { column: k });
            }
            piv[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                swaps += 1;
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = T::zero();
                lower[k * kl + (i - k - 1)] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=last_col {
                    let akj = self.data[self.slot(k, j)];
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * akj;
                }
            }
        }
        Ok(BandLu {
            a: self,
            lower,
            piv,
            swaps,
        })
    }
}

/// Raised when elimination meets a (numerically) zero pivot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularMatrix {
    pub column: usize,
}

impl std::fmt::Display for SingularMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "banded matrix is singular at column {}", self.column)
    }
}

impl std::error::Error for SingularMatrix {}

/// Factorised banded matrix.
#[derive(Clone, Debug)]
pub struct BandLu<T: Scalar> {
    a: BandMatrix<T>,
    lower: Vec<T>,
    piv: Vec<usize>,
    swaps: usize,
}

impl<T: Scalar> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.a.n
    }

    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.a.n;
        let kl = self.a.kl;
        let reach = kl + self.a.ku;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk == T::zero() {
                continue;
            }
            let last_row = (k + kl).min(n - 1);
            for i in k + 1..=last_row {
                b[i] -= self.lower[k * kl + (i - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + reach).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=last_col {
                acc -= self.a.data[self.a.slot(k, j)] * b[j];
            }
            b[k] = acc / self.a.data[self.a.slot(k, k)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Diagonal of U (the pivots).
    pub fn pivots(&self) -> Vec<T> {
        (0..self.a.n)
            .map(|k| self.a.data[self.a.slot(k, k)])
            .collect()
    }

    /// Number of row interchanges performed.
    pub fn swaps(&self) -> usize {
        self.swaps
    }
}

impl BandLu<f64> {
    /// Sign of the determinant (+1 or -1) and log of its magnitude.
    pub fn log_det(&self) -> (f64, f64) {
        let mut sign = if self.swaps % 2 == 0 { 1.0 } else { -1.0 };
        let mut logabs = 0.0;
        for p in self.pivots() {
            if p < 0.0 {
                sign = -sign;
            }
            logabs += p.abs().ln();
        }
        (sign, logabs)
    }

    /// Smallest pivot magnitude relative to the largest, a cheap conditioning proxy.
    pub fn pivot_ratio(&self) -> f64 {
        let p = self.pivots();
        let mx = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mn = p.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        mn / mx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    fn sample(n: usize, kl: usize, ku: usize) -> BandMatrix<f64> {
        let mut m = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // deliberately weak diagonal so pivoting is exercised
                let v = ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 0.3 } else { 0.0 };
                m.set(i, j, v);
            }
        }
        m
    }

    #[test]
    fn solves_against_dense_product() {
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (40, 3, 2), (57, 2, 4), (30, 0, 3)] {
            let m = sample(n, kl, ku);
            let dense = m.to_dense();
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 1.0).collect();
            let b = dense_mul(&dense, &x);
            assert_eq!(m.matvec(&x).len(), n);
            let lu = m.factor().expect("nonsingular");
            let got = lu.solve(&b);
            for (g, e) in got.iter().zip(&x) {
                assert!((g - e).abs() < 1e-9, "n={n} kl={kl} ku={ku}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn complex_solve() {
        let n = 20;
        let m = sample(n, 2, 1).map(|v| Complex64::new(v, 0.0));
        let mut shifted = m.clone();
        for i in 0..n {
            shifted.add(i, i, Complex64::new(0.0, 0.7));
        }
        let x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(i as f64, 1.0 - i as f64))
            .collect();
        let b = shifted.matvec(&x);
        let got = shifted.factor().unwrap().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).norm() < 1e-9);
        }
    }

    #[test]
    fn determinant_sign_of_permutation() {
        let mut m = BandMatrix::zeros(2, 1, 1);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        let (s, l) = m.factor().unwrap().log_det();
        assert_eq!(s, -1.0);
        assert!(l.abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let m: BandMatrix<f64> = BandMatrix::zeros(3, 1, 1);
        assert!(m.factor().is_err());
    }
}
