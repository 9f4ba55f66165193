use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Mat, Vector};

/// Relative tolerance used for symmetry and positivity checks.
pub const SPD_TOLERANCE: f64 = 1e-12;

/// A symmetric positive definite matrix, validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<f64>>")]
pub struct SpdMatrix {
    inner: Mat,
}

impl SpdMatrix {
    /// Validates symmetry (relative tolerance 1e-12) and strict positive
    /// definiteness (smallest eigenvalue above 1e-12 times the largest entry).
    pub fn new(m: Mat) -> Result<Self> {
        Self::named(m, "matrix")
    }

    /// Same as [`SpdMatrix::new`] but error messages carry `what`.
    pub fn named(m: Mat, what: &str) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                what: format!("{what} (square)"),
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Domain(format!("{what} is empty")));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{what} has non-finite entries")));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > SPD_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Domain(format!(
                "{what} is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let sym = symmetrize(&m);
        let min_eig = min_eigenvalue(&sym);
        if !(min_eig > SPD_TOLERANCE * scale) {
            return Err(Error::NotSpd {
                what: what.to_string(),
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self { inner: sym })
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Mat::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.inner
    }

    pub fn into_inner(self) -> Mat {
        self.inner
    }

    /// Lower-triangular Cholesky factor `L` with `L L^T = self`.
    pub fn cholesky_factor(&self) -> Mat {
        Cholesky::new(self.inner.clone())
            .expect("validated SPD matrix must admit a Cholesky factorization")
            .l()
    }

    pub fn inverse(&self) -> Mat {
        let inv = Cholesky::new(self.inner.clone())
            .expect("validated SPD matrix must admit a Cholesky factorization")
            .inverse();
        symmetrize(&inv)
    }

    pub fn eigenvalues(&self) -> Vector {
        SymmetricEigen::new(self.inner.clone()).eigenvalues
    }

    /// Ratio of the largest to the smallest eigenvalue.
    pub fn condition_number(&self) -> f64 {
        let ev = self.eigenvalues();
        ev.max() / ev.min()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.inner * factor)
    }

    /// Quadratic form `v^T self v`.
    pub fn quadratic_form(&self, v: &Vector) -> f64 {
        v.dot(&(&self.inner * v))
    }

    /// Whether `self <= other` in the Loewner order, within `tol` on the
    /// smallest eigenvalue of `other - self`.
    pub fn loewner_le(&self, other: &SpdMatrix, tol: f64) -> bool {
        min_eigenvalue(&symmetrize(&(other.matrix() - self.matrix()))) >= -tol
    }
}

impl From<SpdMatrix> for Vec<Vec<f64>> {
    fn from(m: SpdMatrix) -> Self {
        crate::numerics::to_rows(&m.inner)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = crate::numerics::from_rows(&rows).map_err(serde::de::Error::custom)?;
        SpdMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(sym: &Mat) -> f64 {
    SymmetricEigen::new(sym.clone()).eigenvalues.min()
}

/// Block-diagonal matrix assembled from square blocks.
pub fn block_diagonal(blocks: &[&Mat]) -> Mat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
