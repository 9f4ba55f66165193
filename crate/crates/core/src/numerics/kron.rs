//! Dense assembly and solution of block systems whose blocks are sums of
//! Kronecker products.

use crate::error::{Error, Result};
use crate::{Mat, Vector};

/// One `left ⊗ right` term of a block.
#[derive(Debug, Clone)]
pub struct KronTerm {
    pub left: Mat,
    pub right: Mat,
}

impl KronTerm {
    pub fn new(left: Mat, right: Mat) -> Self {
        Self { left, right }
    }

    fn shape(&self) -> (usize, usize) {
        (
            self.left.nrows() * self.right.nrows(),
            self.left.ncols() * self.right.ncols(),
        )
    }
}

/// Solution of a block Kronecker system with diagnostics.
#[derive(Debug, Clone)]
pub struct KronSolution {
    pub solution: Vector,
    pub residual: f64,
    pub condition: f64,
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

// Row heights and column widths of a block grid; every row and column needs
// at least one term so its size is known.
fn block_sizes(grid: &[Vec<Vec<KronTerm>>]) -> Result<(Vec<usize>, Vec<usize>)> {
    let nr = grid.len();
    if nr == 0 {
        return Err(Error::Domain("empty block grid".into()));
    }
    let nc = grid[0].len();
    if nc != nr {
        return Err(Error::Dimension {
            what: "block grid columns (square grid)".into(),
            expected: nr,
            found: nc,
        });
    }
    let mut heights = vec![None; nr];
    let mut widths = vec![None; nc];
    for (r, cells) in grid.iter().enumerate() {
        if cells.len() != nc {
            return Err(Error::Dimension {
                what: format!("block grid row {r}"),
                expected: nc,
                found: cells.len(),
            });
        }
        for (c, terms) in cells.iter().enumerate() {
            for t in terms {
                let (h, w) = t.shape();
                for (slot, val, what) in [
                    (&mut heights[r], h, "block row height"),
                    (&mut widths[c], w, "block column width"),
                ] {
                    match slot {
                        None => *slot = Some(val),
                        Some(prev) if *prev != val => {
                            return Err(Error::Dimension {
                                what: format!("{what} at block ({r}, {c})"),
                                expected: *prev,
                                found: val,
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    let unwrap = |v: Vec<Option<usize>>, what: &str| -> Result<Vec<usize>> {
        v.into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Domain(format!("{what} {i} has no terms"))))
            .collect()
    };
    Ok((unwrap(heights, "block row")?, unwrap(widths, "block column")?))
}

/// Dense matrix of a block grid where block `(r, c)` is the sum of its terms.
pub fn assemble_block_matrix(grid: &[Vec<Vec<KronTerm>>]) -> Result<Mat> {
    let (heights, widths) = block_sizes(grid)?;
    let total_r: usize = heights.iter().sum();
    let total_c: usize = widths.iter().sum();
    let mut out = Mat::zeros(total_r, total_c);
    let mut r0 = 0;
    for (r, cells) in grid.iter().enumerate() {
        let mut c0 = 0;
        for (c, terms) in cells.iter().enumerate() {
            let mut view = out.view_mut((r0, c0), (heights[r], widths[c]));
            for t in terms {
                view += kron(&t.left, &t.right);
            }
            c0 += widths[c];
        }
        r0 += heights[r];
    }
    Ok(out)
}

/// Assembles the block grid and solves it against `rhs`.
///
/// Uses LU with two rounds of iterative refinement. Fails with the condition
/// estimate when the matrix is numerically singular or the residual target
/// `||Ax - b|| <= 1e-9 (1 + ||b||)` is missed.
pub fn assemble_block_kronecker_system(
    grid: &[Vec<Vec<KronTerm>>],
    rhs: &Vector,
) -> Result<KronSolution> {
    let a = assemble_block_matrix(grid)?;
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            what: "assembled block system (square)".into(),
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if rhs.len() != a.nrows() {
        return Err(Error::Dimension {
            what: "block system right-hand side".into(),
            expected: a.nrows(),
            found: rhs.len(),
        });
    }
    solve_dense(&a, rhs)
}

pub(crate) fn solve_dense(a: &Mat, rhs: &Vector) -> Result<KronSolution> {
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < 1e15) {
        return Err(Error::Singular { condition });
    }
    let lu = a.clone().lu();
    let mut x = lu.solve(rhs).ok_or(Error::Singular { condition })?;
    for _ in 0..2 {
        let r = rhs - a * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let residual = (a * &x - rhs).norm();
    if !(residual <= 1e-9 * (1.0 + rhs.norm())) {
        return Err(Error::Singular { condition });
    }
    Ok(KronSolution {
        solution: x,
        residual,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let g = random(rng, n, n);
        &g * g.transpose() + Mat::identity(n, n) * 0.5
    }

    // Element-wise expansion of a ⊗ b with explicit loops.
    fn naive_kron(a: &Mat, b: &Mat) -> Mat {
        let (p, q) = (b.nrows(), b.ncols());
        let mut out = Mat::zeros(a.nrows() * p, a.ncols() * q);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                for k in 0..p {
                    for l in 0..q {
                        out[(i * p + k, j * q + l)] = a[(i, j)] * b[(k, l)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_block() {
        let grid = vec![vec![vec![KronTerm::new(
            Mat::identity(2, 2),
            Mat::identity(2, 2),
        )]]];
        let b = Vector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let x = assemble_block_kronecker_system(&grid, &b).unwrap();
        assert_eq!(x.solution, b);
    }

    #[test]
    fn scaled_block() {
        let grid = vec![vec![vec![KronTerm::new(
            Mat::identity(2, 2) * 2.0,
            Mat::identity(1, 1),
        )]]];
        let b = Vector::from_vec(vec![4.0, -1.0]);
        let x = assemble_block_kronecker_system(&grid, &b).unwrap();
        assert!((x.solution - &b / 2.0).norm() < 1e-15);
    }

    #[test]
    fn singular_reports_condition() {
        let grid = vec![vec![vec![KronTerm::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            Mat::identity(1, 1),
        )]]];
        let err = assemble_block_kronecker_system(&grid, &Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn two_by_two_grid_matches_naive_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2;
        // Two-landmark style grid: C_i ⊗ H^{-1} sums and cross terms.
        let c1 = random_spd(&mut rng, n);
        let c2 = random_spd(&mut rng, n);
        let hinv = random_spd(&mut rng, n);
        let p = random(&mut rng, n, n);
        let grid = vec![
            vec![
                vec![KronTerm::new(c1.clone(), hinv.clone()), KronTerm::new(c2.clone(), hinv.clone())],
                vec![KronTerm::new(c1.clone(), &hinv * &p)],
            ],
            vec![
                vec![KronTerm::new(c1.clone(), p.transpose() * &hinv)],
                vec![
                    KronTerm::new(c1.clone(), p.transpose() * &hinv * &p),
                    KronTerm::new(c2.clone(), Mat::identity(n, n)),
                ],
            ],
        ];
        let dim = 2 * n * n;
        let b = Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let sol = assemble_block_kronecker_system(&grid, &b).unwrap();

        let m = n * n;
        let mut a = Mat::zeros(dim, dim);
        let blocks: [[Mat; 2]; 2] = [
            [
                naive_kron(&c1, &hinv) + naive_kron(&c2, &hinv),
                naive_kron(&c1, &(&hinv * &p)),
            ],
            [
                naive_kron(&c1, &(p.transpose() * &hinv)),
                naive_kron(&c1, &(p.transpose() * &hinv * &p)) + naive_kron(&c2, &Mat::identity(n, n)),
            ],
        ];
        for (r, brow) in blocks.iter().enumerate() {
            for (c, blk) in brow.iter().enumerate() {
                for i in 0..m {
                    for j in 0..m {
                        a[(r * m + i, c * m + j)] = blk[(i, j)];
                    }
                }
            }
        }
        let direct = a.clone().lu().solve(&b).unwrap();
        assert!((sol.solution - &direct).norm() <= 1e-9 * (1.0 + direct.norm()));
        assert!((&a * &direct - &b).norm() <= 1e-9 * (1.0 + b.norm()));
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let grid = vec![vec![vec![
            KronTerm::new(Mat::identity(2, 2), Mat::identity(1, 1)),
            KronTerm::new(Mat::identity(3, 3), Mat::identity(1, 1)),
        ]]];
        assert!(assemble_block_matrix(&grid).is_err());
    }
}
