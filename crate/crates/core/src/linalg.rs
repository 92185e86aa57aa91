//! Dense complex linear algebra.
//!
//! Everything in the simulator is built from small dense Hermitian systems
//! (N×N per AP, L×L per UE), so a plain row-major matrix type with a
//! Cholesky factorization covers all of it.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative pivot threshold for Cholesky: a pivot must exceed this times
/// the matching diagonal entry of the input.
pub const PIVOT_RTOL: f64 = 1e-14;

/// Norm below which a vector is treated as zero.
pub const ZERO_NORM: f64 = 1e-300;

#[derive(Clone, PartialEq)]
pub struct ComplexVector {
    data: Vec<C64>,
}

impl ComplexVector {
    pub fn from_vec(data: Vec<C64>) -> Self {
        debug_assert!(!data.is_empty(), "vectors must be non-empty");
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_vec(vec![C64::new(0.0, 0.0); len])
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self::from_vec(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.data.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `selfᴴ other`.
    pub fn dot(&self, other: &ComplexVector) -> C64 {
        dot(&self.data, &other.data)
    }

    pub fn scaled(&self, s: C64) -> ComplexVector {
        Self::from_vec(self.data.iter().map(|z| z * s).collect())
    }

    pub fn sub(&self, other: &ComplexVector) -> ComplexVector {
        Self::from_vec(self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect())
    }

    /// Returns the unit vector in the direction of `self`, with the global
    /// phase fixed so that the largest-magnitude entry is real and positive.
    pub fn normalized(&self) -> Result<ComplexVector> {
        let n = self.norm();
        if !(n > ZERO_NORM) {
            return Err(Error::ZeroVector);
        }
        let mut out = self.scaled(C64::new(1.0 / n, 0.0));
        out.fix_phase();
        Ok(out)
    }

    /// Rotates the vector so its largest-magnitude entry (first one on ties)
    /// is real and positive.
    pub fn fix_phase(&mut self) {
        let mut best = 0;
        let mut best_mag = -1.0;
        for (i, z) in self.data.iter().enumerate() {
            let m = z.norm_sqr();
            if m > best_mag {
                best_mag = m;
                best = i;
            }
        }
        let pivot = self.data[best];
        let mag = pivot.norm();
        if mag > 0.0 {
            let rot = pivot.conj() / mag;
            for z in &mut self.data {
                *z *= rot;
            }
            self.data[best] = C64::new(mag, 0.0);
        }
    }
}

impl fmt::Debug for ComplexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.data).finish()
    }
}

impl Index<usize> for ComplexVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for ComplexVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

impl From<Vec<C64>> for ComplexVector {
    fn from(data: Vec<C64>) -> Self {
        Self::from_vec(data)
    }
}

pub(crate) fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(s, 0.0);
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// `x yᴴ`
    pub fn outer(x: &[C64], y: &[C64]) -> Self {
        Self::from_fn(x.len(), y.len(), |r, c| x[r] * y[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)].norm())
            .fold(0.0, f64::max)
    }

    /// True when `M = Mᴴ` entrywise within `rtol` relative to the largest entry.
    pub fn is_hermitian(&self, rtol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tol = rtol * scale.max(f64::MIN_POSITIVE);
        (0..self.rows).all(|r| (r..self.cols).all(|c| (self[(r, c)] - self[(c, r)].conj()).norm() <= tol))
    }

    pub fn matvec(&self, x: &[C64]) -> Result<ComplexVector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok(ComplexVector::from_vec(
            (0..self.rows)
                .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other[(k, c)];
                }
            }
        }
        Ok(out)
    }

    pub fn scale_mut(&mut self, s: C64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut m = self.clone();
        m.scale_mut(s);
        m
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, s: C64, other: &ComplexMatrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self += s · x yᴴ`
    pub fn add_outer(&mut self, s: C64, x: &[C64], y: &[C64]) {
        debug_assert_eq!((self.rows, self.cols), (x.len(), y.len()));
        for (r, xr) in x.iter().enumerate() {
            let sx = s * xr;
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (dst, yc) in row.iter_mut().zip(y) {
                *dst += sx * yc.conj();
            }
        }
    }

    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += C64::new(s, 0.0);
        }
    }

    pub fn sub(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let mut m = self.clone();
        m.add_scaled(C64::new(-1.0, 0.0), other);
        m
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `A = L Lᴴ` of a Hermitian positive
/// definite matrix. Only the lower triangle of `A` is read.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: ComplexMatrix,
}

impl Cholesky {
    pub fn factor(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                actual: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            // pivots are judged against their own diagonal entry so that
            // rows of wildly different scale (near and far APs) still factor
            let ajj = a[(j, j)].re;
            let mut d = ajj;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > PIVOT_RTOL * ajj) || d <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &ComplexMatrix {
        &self.lower
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Result<ComplexVector> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        Ok(ComplexVector::from_vec(y))
    }

    /// `bᴴ A⁻¹ b`, computed as `‖L⁻¹ b‖²`.
    pub fn inverse_quadratic_form(&self, b: &[C64]) -> Result<f64> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        Ok(y.iter().map(|z| z.norm_sqr()).sum())
    }

    /// `L w`, used to color white Gaussian samples.
    pub fn lower_mul(&self, w: &[C64], out: &mut [C64]) {
        let l = &self.lower;
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..=i).map(|k| l[(i, k)] * w[k]).sum();
        }
    }
}

/// Solves `A x = b` for Hermitian positive definite `A`.
pub fn cholesky_solve(a: &ComplexMatrix, b: &ComplexVector) -> Result<ComplexVector> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            actual: b.len(),
        });
    }
    Cholesky::factor(a)?.solve(b.as_slice())
}

/// `xᴴ M x`
pub fn quadratic_form(x: &ComplexVector, m: &ComplexMatrix) -> Result<C64> {
    if !m.is_square() || m.rows() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            actual: x.len(),
        });
    }
    let mx = m.matvec(x.as_slice())?;
    Ok(x.dot(&mx))
}

/// Unit vector maximizing `(aᴴ g gᴴ a) / (aᴴ B a)`.
///
/// With a rank-one numerator the maximizer is `B⁻¹ g`; the achieved
/// generalized eigenvalue is `gᴴ B⁻¹ g`.
pub fn rank1_rayleigh_maximizer(g: &ComplexVector, b: &ComplexMatrix) -> Result<ComplexVector> {
    if b.rows() != g.len() {
        return Err(Error::DimensionMismatch {
            expected: b.rows(),
            actual: g.len(),
        });
    }
    if !(g.norm() > ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    Cholesky::factor(b)?.solve(g.as_slice())?.normalized()
}

/// `(aᴴ A a) / (aᴴ B a)` for Hermitian `A`, `B`.
pub fn rayleigh_quotient(a: &ComplexVector, num: &ComplexMatrix, den: &ComplexMatrix) -> Result<f64> {
    Ok(quadratic_form(a, num)?.re / quadratic_form(a, den)?.re)
}
