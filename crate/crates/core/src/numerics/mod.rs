//! Numerical building blocks shared by every other module.

pub mod gaussian;
pub mod kron;
pub mod lp;
pub mod qcqp;
pub mod spd;

pub use gaussian::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_upper_quantile};
pub use kron::{assemble_block_kronecker_system, assemble_block_matrix, kron, KronSolution, KronTerm};
pub use lp::{LinearProgram, LpOutcome};
pub use qcqp::{
    solve_qcqp, solve_qcqp_with, ConeConstraint, QcqpInstance, QuadraticConstraint, SolveReport,
    SolveStatus, SolverOptions,
};
pub use spd::{block_diagonal, min_eigenvalue, symmetrize, SpdMatrix};

use crate::error::{Error, Result};
use crate::{Mat, Vector};

/// Row-major nested vectors from a matrix.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Matrix from row-major nested vectors; all rows must share a length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension {
                what: format!("row {i}"),
                expected: ncols,
                found: r.len(),
            });
        }
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Column-major vectorization.
pub fn vec_of(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &[f64], nrows: usize, ncols: usize) -> Mat {
    Mat::from_column_slice(nrows, ncols, v)
}

/// Row vector (1 x n matrix) from a slice.
pub fn row(values: &[f64]) -> Mat {
    Mat::from_row_slice(1, values.len(), values)
}
