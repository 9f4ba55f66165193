//! Small dense linear programs solved by the two-phase simplex method with
//! Bland's anti-cycling rule.
//!
//! All decision variables are free. Problems are stated as
//! `maximize c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq`.

use crate::{Mat, Vector};

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vector,
    pub a_ub: Mat,
    pub b_ub: Vector,
    pub a_eq: Mat,
    pub b_eq: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vector, value: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&Vector, f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, *value)),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn new(objective: Vector, a_ub: Mat, b_ub: Vector) -> Self {
        let n = objective.len();
        Self {
            objective,
            a_ub,
            b_ub,
            a_eq: Mat::zeros(0, n),
            b_eq: Vector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a_eq: Mat, b_eq: Vector) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn solve(&self) -> LpOutcome {
        let n = self.objective.len();
        let m_ub = self.a_ub.nrows();
        let m_eq = self.a_eq.nrows();
        let m = m_ub + m_eq;
        assert_eq!(self.a_ub.ncols(), n, "A_ub column count");
        assert_eq!(self.a_eq.ncols(), n, "A_eq column count");

        // Columns: x+ (n), x- (n), slacks (m_ub), artificials (m), rhs.
        let n_struct = 2 * n + m_ub;
        let cols = n_struct + m;
        let mut t = Mat::zeros(m + 1, cols + 1);
        for i in 0..m {
            let (arow, b) = if i < m_ub {
                (self.a_ub.row(i), self.b_ub[i])
            } else {
                (self.a_eq.row(i - m_ub), self.b_eq[i - m_ub])
            };
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[(i, j)] = sign * arow[j];
                t[(i, n + j)] = -sign * arow[j];
            }
            if i < m_ub {
                t[(i, 2 * n + i)] = sign;
            }
            t[(i, n_struct + i)] = 1.0;
            t[(i, cols)] = sign * b;
        }
        let mut basis: Vec<usize> = (n_struct..cols).collect();

        // Phase I: minimize the sum of artificials.
        let mut cost = vec![0.0; cols];
        for c in cost.iter_mut().skip(n_struct) {
            *c = 1.0;
        }
        set_objective_row(&mut t, &basis, &cost);
        match run_simplex(&mut t, &mut basis, cols) {
            Phase::Optimal => {}
            Phase::Unbounded => return LpOutcome::Infeasible,
            Phase::Limit => return LpOutcome::IterationLimit,
        }
        let scale = 1.0 + self.b_ub.iter().chain(self.b_eq.iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
        if t[(m, cols)].abs() > FEAS_TOL * scale {
            return LpOutcome::Infeasible;
        }

        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut keep = vec![true; m];
        for i in 0..m {
            if basis[i] >= n_struct {
                if let Some(j) = (0..n_struct).find(|&j| t[(i, j)].abs() > PIVOT_TOL) {
                    pivot(&mut t, &mut basis, i, j);
                } else {
                    keep[i] = false;
                }
            }
        }
        let rows: Vec<usize> = (0..m).filter(|&i| keep[i]).collect();
        let mut t2 = Mat::zeros(rows.len() + 1, n_struct + 1);
        let mut basis2 = Vec::with_capacity(rows.len());
        for (k, &i) in rows.iter().enumerate() {
            for j in 0..n_struct {
                t2[(k, j)] = t[(i, j)];
            }
            t2[(k, n_struct)] = t[(i, cols)];
            basis2.push(basis[i]);
        }

        // Phase II: minimize -c^T x.
        let mut cost2 = vec![0.0; n_struct];
        for j in 0..n {
            cost2[j] = -self.objective[j];
            cost2[n + j] = self.objective[j];
        }
        set_objective_row(&mut t2, &basis2, &cost2);
        match run_simplex(&mut t2, &mut basis2, n_struct) {
            Phase::Optimal => {}
            Phase::Unbounded => return LpOutcome::Unbounded,
            Phase::Limit => return LpOutcome::IterationLimit,
        }
        let mut x = Vector::zeros(n);
        for (k, &b) in basis2.iter().enumerate() {
            let v = t2[(k, n_struct)];
            if b < n {
                x[b] += v;
            } else if b < 2 * n {
                x[b - n] -= v;
            }
        }
        let value = self.objective.dot(&x);
        LpOutcome::Optimal { x, value }
    }
}

enum Phase {
    Optimal,
    Unbounded,
    Limit,
}

// Objective row holds reduced costs; its rhs entry is minus the objective value.
fn set_objective_row(t: &mut Mat, basis: &[usize], cost: &[f64]) {
    let last = t.nrows() - 1;
    let rhs = t.ncols() - 1;
    for j in 0..cost.len() {
        t[(last, j)] = cost[j];
    }
    t[(last, rhs)] = 0.0;
    for (i, &b) in basis.iter().enumerate() {
        let cb = cost[b];
        if cb != 0.0 {
            for j in 0..=rhs {
                let v = t[(i, j)];
                t[(last, j)] -= cb * v;
            }
        }
    }
}

fn run_simplex(t: &mut Mat, basis: &mut [usize], ncols: usize) -> Phase {
    let last = t.nrows() - 1;
    let rhs = t.ncols() - 1;
    let max_iter = 50 * (t.nrows() + ncols) + 1000;
    for _ in 0..max_iter {
        // Bland: smallest index with negative reduced cost.
        let Some(enter) = (0..ncols).find(|&j| t[(last, j)] < -PIVOT_TOL) else {
            return Phase::Optimal;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..last {
            let a = t[(i, enter)];
            if a > PIVOT_TOL {
                let ratio = t[(i, rhs)] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((row, _)) = leave else {
            return Phase::Unbounded;
        };
        pivot(t, basis, row, enter);
    }
    Phase::Limit
}

fn pivot(t: &mut Mat, basis: &mut [usize], row: usize, col: usize) {
    let ncols = t.ncols();
    let p = t[(row, col)];
    for j in 0..ncols {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..ncols {
                    let v = t[(row, j)];
                    t[(i, j)] -= f * v;
                }
            }
        }
    }
    basis[row] = col;
}
