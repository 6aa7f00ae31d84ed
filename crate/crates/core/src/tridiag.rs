//! Symmetric tridiagonal matrices and their banded Cholesky factorization.

use crate::error::{Result, SlqError};
use nalgebra::{DMatrix, DVector};

/// Symmetric tridiagonal matrix. `off[i]` is the entry at `(i, i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(SlqError::InvalidArgument(format!(
                "tridiagonal shape mismatch: {} diagonal, {} off-diagonal entries",
                diag.len(),
                off.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = self.diag[i] * v[i];
            if i > 0 {
                acc += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                acc += self.off[i] * v[i + 1];
            }
            out[i] = acc;
        }
        out
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: f64, other: &SymTridiag) -> SymTridiag {
        SymTridiag {
            diag: self.diag.iter().zip(&other.diag).map(|(a, b)| a + s * b).collect(),
            off: self.off.iter().zip(&other.off).map(|(a, b)| a + s * b).collect(),
        }
    }

    /// Bilinear form `uᵀ A v`.
    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&self.mul(v))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// `A = L Lᵀ` with `L` lower bidiagonal.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SymTridiag) -> Result<Self> {
        let n = a.dim();
        let mut diag = Vec::with_capacity(n);
        let mut sub = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut pivot = a.diag[i];
            if i > 0 {
                let l = a.off[i - 1] / diag[i - 1];
                sub.push(l);
                pivot -= l * l;
            }
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(SlqError::Internal(format!("banded Cholesky: non-positive pivot {pivot:e} at row {i}")));
            }
            diag.push(pivot.sqrt());
        }
        Ok(Self { diag, sub })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(rhs.len(), n);
        // L y = b
        for i in 0..n {
            if i > 0 {
                rhs[i] -= self.sub[i - 1] * rhs[i - 1];
            }
            rhs[i] /= self.diag[i];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            if i + 1 < n {
                rhs[i] -= self.sub[i] * rhs[i + 1];
            }
            rhs[i] /= self.diag[i];
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut out = rhs.clone();
        self.solve_in_place(out.as_mut_slice());
        out
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rhs.clone();
        for mut col in out.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        out
    }
}
