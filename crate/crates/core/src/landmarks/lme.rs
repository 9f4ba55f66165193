//! Sequential construction of mutually uncorrelated virtual landmarks.
//!
//! Level `l` minimizes the variance of the control along `kbar2`,
//! `kbar2 (sum_i W_i S_i W_i^T) kbar2^T + eps sum_i ||W_i||_F^2`, subject to
//! `sum_i W_i = I` and `sum_i (W_i^j)^T S_i W_i = 0` for every earlier level
//! `j`. Stationarity gives `W_i = -Q_i^{-1} A_i^T mu` with
//! `Q_i = S_i ⊗ H + eps I` and `H = kbar2^T kbar2`, so the multipliers solve
//! a block system whose blocks are sums of Kronecker products.

use crate::error::{check_dim, Error, Result};
use crate::numerics::{assemble_block_kronecker_system, symmetrize, unvec, vec_of, KronTerm};
use crate::{Mat, Vector};

use super::{common_dim, fuse_min_variance, Landmark, VirtualLandmark};

const RIDGE_ATTEMPTS: usize = 8;
const KKT_TOL: f64 = 1e-8;

/// Intermediate quantities of one level.
#[derive(Debug, Clone)]
pub struct LmeInternals {
    /// `kbar2^T kbar2 + eps I`.
    pub h: Mat,
    pub ridge: f64,
    /// Inverse covariance of each landmark.
    pub precisions: Vec<Mat>,
    /// `projections[j][i] = S_i W_i^j` for each earlier level `j`.
    pub projections: Vec<Vec<Mat>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmeDiagnostics {
    /// `max |sum_i W_i - I|` relative to the largest weight entry (at least 1).
    pub weight_sum_residual: f64,
    /// Largest entry of `sum_i (W_i^j)^T S_i W_i` over earlier levels, relative
    /// to `sum_i |W_i^j| |S_i| |W_i|` (at least 1).
    pub uncorrelation_residual: f64,
    /// Largest entry of the noise cross-covariance `sum_i W_i^j S_i W_i^T`.
    pub cross_covariance: f64,
    /// Relative norm of the objective gradient outside the constraint span.
    pub stationarity: f64,
    pub condition: f64,
}

impl LmeDiagnostics {
    /// Whether the constraint and stationarity residuals are all below `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.weight_sum_residual <= tol && self.uncorrelation_residual <= tol && self.stationarity <= tol
    }
}

#[derive(Debug, Clone)]
pub struct LmeStep {
    pub weights: Vec<Mat>,
    pub internals: LmeInternals,
    pub diagnostics: LmeDiagnostics,
}

/// `1e-8 trace(kbar2^T kbar2) / n`, falling back to `1e-8` for a zero row.
pub fn default_ridge(kbar2: &Vector) -> f64 {
    let t = kbar2.norm_squared() / kbar2.len().max(1) as f64;
    if t > 0.0 {
        1e-8 * t
    } else {
        1e-8
    }
}

/// Weights of the next uncorrelated virtual landmark given the weight sets
/// of all earlier levels.
pub fn lme_next_weights(
    landmarks: &[Landmark],
    prior: &[Vec<Mat>],
    kbar2: &Vector,
    ridge: Option<f64>,
) -> Result<LmeStep> {
    let n = common_dim(landmarks)?;
    let count = landmarks.len();
    check_dim("controller row", n, kbar2.len())?;
    let level = prior.len() + 1;
    if level > count {
        return Err(Error::TooManyVirtualLandmarks {
            requested: level,
            available: count,
        });
    }
    for (j, set) in prior.iter().enumerate() {
        check_dim(&format!("weight count at level {}", j + 1), count, set.len())?;
        let sum = set.iter().fold(Mat::zeros(n, n), |a, w| a + w);
        if (sum - Mat::identity(n, n)).amax() > KKT_TOL * weight_scale(set) {
            return Err(Error::Domain(format!("weights at level {} do not sum to identity", j + 1)));
        }
    }
    let base = ridge.unwrap_or_else(|| default_ridge(kbar2));
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::Domain(format!("ridge must be positive, got {base}")));
    }
    let hmat = kbar2 * kbar2.transpose();
    let precisions: Vec<Mat> = landmarks.iter().map(|l| l.covariance.inverse()).collect();
    let projections: Vec<Vec<Mat>> = prior
        .iter()
        .map(|set| set.iter().zip(landmarks).map(|(w, l)| l.covariance.matrix() * w).collect())
        .collect();
    let internals = |eps: f64| LmeInternals {
        h: &hmat + Mat::identity(n, n) * eps,
        ridge: eps,
        precisions: precisions.clone(),
        projections: projections.clone(),
    };

    if level == 1 {
        let weights = fuse_min_variance(landmarks)?.weights;
        let diagnostics = diagnose(landmarks, prior, &weights, &hmat, base, 1.0);
        return Ok(LmeStep {
            weights,
            internals: internals(base),
            diagnostics,
        });
    }

    // The rank-one objective leaves the system conditioned like
    // |kbar2|^2 / eps; the ridge grows tenfold until the residual target holds.
    let mut eps = base;
    let mut last = Error::Singular { condition: f64::INFINITY };
    for _ in 0..RIDGE_ATTEMPTS {
        // The structured solve squares the constraint conditioning; the
        // null-space solve of the same problem backs it up at deep levels.
        for solver in [solve_level, solve_level_nullspace] {
            match solver(landmarks, &projections, kbar2, eps) {
                Ok((weights, condition)) => {
                    let diagnostics = diagnose(landmarks, prior, &weights, &hmat, eps, condition);
                    if diagnostics.within(KKT_TOL) {
                        return Ok(LmeStep {
                            weights,
                            internals: internals(eps),
                            diagnostics,
                        });
                    }
                    last = Error::Singular { condition };
                }
                Err(e @ Error::Singular { .. }) => last = e,
                Err(e) => return Err(e),
            }
        }
        eps *= 10.0;
    }
    let Error::Singular { condition } = last else { unreachable!() };
    Err(Error::Infeasible(format!(
        "uncorrelation constraints at level {level} are rank deficient (condition {condition:.3e})"
    )))
}

fn solve_level(landmarks: &[Landmark], projections: &[Vec<Mat>], kbar2: &Vector, eps: f64) -> Result<(Vec<Mat>, f64)> {
    let n = kbar2.len();
    let count = landmarks.len();
    let level = projections.len() + 1;
    // eps Q_i^{-1} = I ⊗ I + M_i ⊗ u u^T with u = kbar2 / |kbar2| and M_i
    // sharing the eigenvectors of S_i.
    let h = kbar2.norm_squared();
    let u = if h > 0.0 { kbar2 / h.sqrt() } else { Vector::zeros(n) };
    let uu = &u * u.transpose();
    let shrink: Vec<Mat> = landmarks
        .iter()
        .map(|l| {
            let eig = l.covariance.matrix().clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|s| -s * h / (s * h + eps));
            symmetrize(&(&eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()))
        })
        .collect();
    // Constraint maps per landmark: level 0 is the weight sum, level j the
    // uncorrelation with prior level j, each acting as W -> P^T W. The
    // uncorrelation rows have zero right-hand side, so each is rescaled to
    // unit magnitude; deep prior weights otherwise swamp the weight-sum rows.
    let row_scale: Vec<f64> = projections
        .iter()
        .map(|set| set.iter().map(|p| p.amax()).fold(0.0, f64::max))
        .map(|m| if m > 0.0 { 1.0 / m } else { 1.0 })
        .collect();
    let constraint = |r: usize, i: usize| -> Mat {
        if r == 0 {
            Mat::identity(n, n)
        } else {
            &projections[r - 1][i] * row_scale[r - 1]
        }
    };
    let grid: Vec<Vec<Vec<KronTerm>>> = (0..level)
        .map(|r| {
            (0..level)
                .map(|s| {
                    (0..count)
                        .flat_map(|i| {
                            let pr = constraint(r, i);
                            let ps = constraint(s, i);
                            [
                                KronTerm::new(Mat::identity(n, n), pr.transpose() * &ps),
                                KronTerm::new(shrink[i].clone(), pr.transpose() * &uu * &ps),
                            ]
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut rhs = Vector::zeros(level * n * n);
    rhs.rows_mut(0, n * n).copy_from(&(-vec_of(&Mat::identity(n, n))));
    let sol = assemble_block_kronecker_system(&grid, &rhs)?;
    let multipliers: Vec<Mat> = (0..level)
        .map(|r| unvec(sol.solution.rows(r * n * n, n * n).as_slice(), n, n))
        .collect();
    let weights: Vec<Mat> = (0..count)
        .map(|i| {
            let x = (0..level).fold(Mat::zeros(n, n), |a, r| a + constraint(r, i) * &multipliers[r]);
            -(&x + &uu * &x * &shrink[i])
        })
        .collect();
    Ok((weights, sol.condition))
}

/// Same ridge-regularized problem through an SVD of the equilibrated
/// constraint matrix and a Cholesky solve on the reduced Hessian.
fn solve_level_nullspace(
    landmarks: &[Landmark],
    projections: &[Vec<Mat>],
    kbar2: &Vector,
    eps: f64,
) -> Result<(Vec<Mat>, f64)> {
    let n = kbar2.len();
    let nn = n * n;
    let count = landmarks.len();
    let level = projections.len() + 1;
    let vars = count * nn;
    let mut c = Mat::zeros(level * nn, vars);
    let mut d = Vector::zeros(level * nn);
    d.rows_mut(0, nn).copy_from(&vec_of(&Mat::identity(n, n)));
    for i in 0..count {
        c.view_mut((0, i * nn), (nn, nn)).copy_from(&Mat::identity(nn, nn));
        for (r, set) in projections.iter().enumerate() {
            let scale = set.iter().map(|p| p.amax()).fold(0.0, f64::max);
            let p = if scale > 0.0 { &set[i] / scale } else { set[i].clone() };
            c.view_mut(((r + 1) * nn, i * nn), (nn, nn))
                .copy_from(&Mat::identity(n, n).kronecker(&p.transpose()));
        }
    }
    let svd = c.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let smax = svd.singular_values.max();
    let tol = 1e-12 * smax.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&x| x > tol).count();
    let smin = svd.singular_values.iter().copied().filter(|&x| x > tol).fold(f64::INFINITY, f64::min);
    let condition = if rank > 0 { smax / smin } else { f64::INFINITY };
    let mut particular = Vector::zeros(vars);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > tol {
            particular += v_t.row(k).transpose() * (u.column(k).dot(&d) / s);
        }
    }
    if (&c * &particular - &d).amax() > 1e-9 * (1.0 + particular.amax()) {
        return Err(Error::Singular { condition });
    }
    // Full SVD of a wide matrix only returns min(rows, cols) right vectors,
    // so the null space comes from the eigenvectors of C^T C.
    let free = vars - rank;
    let mut weights = particular;
    if free > 0 {
        let gram = symmetrize(&(c.transpose() * &c));
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..vars).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let z = Mat::from_fn(vars, free, |r, k| eig.eigenvectors[(r, order[k])]);
        let hmat = kbar2 * kbar2.transpose();
        let mut q = Mat::zeros(vars, vars);
        for (i, l) in landmarks.iter().enumerate() {
            let block = l.covariance.matrix().kronecker(&hmat) + Mat::identity(nn, nn) * eps;
            q.view_mut((i * nn, i * nn), (nn, nn)).copy_from(&block);
        }
        let reduced = symmetrize(&(z.transpose() * &q * &z));
        let chol = reduced.cholesky().ok_or(Error::Singular { condition })?;
        let y = chol.solve(&(-(z.transpose() * (&q * &weights))));
        weights += z * y;
    }
    let out = (0..count).map(|i| unvec(weights.rows(i * nn, nn).as_slice(), n, n)).collect();
    Ok((out, condition))
}

fn weight_scale(weights: &[Mat]) -> f64 {
    weights.iter().map(|w| w.amax()).fold(1.0, f64::max)
}

fn diagnose(
    landmarks: &[Landmark],
    prior: &[Vec<Mat>],
    weights: &[Mat],
    hmat: &Mat,
    eps: f64,
    condition: f64,
) -> LmeDiagnostics {
    let n = hmat.nrows();
    let count = landmarks.len();
    let sum = weights.iter().fold(Mat::zeros(n, n), |a, w| a + w);
    let mut uncorrelation: f64 = 0.0;
    let mut cross: f64 = 0.0;
    for set in prior {
        let mut u = Mat::zeros(n, n);
        let mut c = Mat::zeros(n, n);
        let mut magnitude = 0.0;
        for ((wj, w), l) in set.iter().zip(weights).zip(landmarks) {
            u += wj.transpose() * l.covariance.matrix() * w;
            c += wj * l.covariance.matrix() * w.transpose();
            magnitude += wj.norm() * l.covariance.matrix().norm() * w.norm();
        }
        uncorrelation = uncorrelation.max(u.amax() / magnitude.max(1.0));
        cross = cross.max(c.amax());
    }

    // Least-squares multipliers for the stacked constraint Jacobian.
    let nn = n * n;
    let rows = (prior.len() + 1) * nn;
    let mut jac = Mat::zeros(rows, count * nn);
    let mut grad = Vector::zeros(count * nn);
    let row_scale: Vec<f64> = prior
        .iter()
        .map(|set| {
            let m = set.iter().zip(landmarks).map(|(w, l)| (l.covariance.matrix() * w).amax()).fold(0.0, f64::max);
            if m > 0.0 { 1.0 / m } else { 1.0 }
        })
        .collect();
    for (i, l) in landmarks.iter().enumerate() {
        let s = l.covariance.matrix();
        jac.view_mut((0, i * nn), (nn, nn)).copy_from(&Mat::identity(nn, nn));
        for (j, set) in prior.iter().enumerate() {
            let p = s * &set[i] * row_scale[j];
            let block = Mat::identity(n, n).kronecker(&p.transpose());
            jac.view_mut(((j + 1) * nn, i * nn), (nn, nn)).copy_from(&block);
        }
        let g = (hmat * &weights[i] * s + &weights[i] * eps) * 2.0;
        grad.rows_mut(i * nn, nn).copy_from(&vec_of(&g));
    }
    let jt = jac.transpose();
    let svd = jt.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    let stationarity = match svd.solve(&grad, tol) {
        Ok(mu) => {
            let gn = grad.norm();
            if gn > 0.0 {
                (&grad - &jt * mu).norm() / gn
            } else {
                0.0
            }
        }
        Err(_) => f64::INFINITY,
    };
    LmeDiagnostics {
        weight_sum_residual: (sum - Mat::identity(n, n)).amax() / weight_scale(weights),
        uncorrelation_residual: uncorrelation,
        cross_covariance: cross,
        stationarity,
        condition,
    }
}

/// The first `count` uncorrelated virtual landmarks for control row `kbar2`.
pub fn lme_sequence(
    landmarks: &[Landmark],
    kbar2: &Vector,
    count: usize,
    ridge: Option<f64>,
) -> Result<Vec<VirtualLandmark>> {
    if count == 0 {
        return Err(Error::Domain("at least one virtual landmark must be requested".into()));
    }
    if count > landmarks.len() {
        return Err(Error::TooManyVirtualLandmarks {
            requested: count,
            available: landmarks.len(),
        });
    }
    // Deep levels degenerate as the ridge vanishes, so a rank-deficient level
    // restarts the whole sequence with a larger ridge.
    let mut eps = ridge.unwrap_or_else(|| default_ridge(kbar2));
    let mut attempt = 0;
    loop {
        match sequence_with_ridge(landmarks, kbar2, count, eps) {
            Err(Error::Infeasible(_)) if attempt + 1 < RIDGE_ATTEMPTS => {
                attempt += 1;
                eps *= 10.0;
            }
            other => return other,
        }
    }
}

fn sequence_with_ridge(landmarks: &[Landmark], kbar2: &Vector, count: usize, eps: f64) -> Result<Vec<VirtualLandmark>> {
    let mut prior: Vec<Vec<Mat>> = Vec::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let step = lme_next_weights(landmarks, &prior, kbar2, Some(eps))?;
        out.push(VirtualLandmark::from_weights(landmarks, step.weights.clone())?);
        prior.push(step.weights);
    }
    Ok(out)
}
