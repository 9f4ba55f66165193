//! Dense convex QCQP solver.
//!
//! Problems have the form
//!
//! ```text
//! minimize    z^T P0 z + q0^T z + c0
//! subject to  z^T Pj z + qj^T z + cj <= 0          (Pj PSD)
//!             ||Lk z + lk|| <= ak^T z + ck          (second-order cones)
//!             E z = e,   z_i >= 0 for masked i
//! ```
//!
//! Equalities are eliminated through a nullspace basis, and the reduced
//! problem is solved by a primal log-barrier method with damped Newton
//! centering steps. A phase-I problem finds a strictly feasible start or a
//! certificate that none exists.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use super::spd::{min_eigenvalue, symmetrize};
use crate::error::{Error, Result};
use crate::{Mat, Vector};

/// `z^T quad z + linear^T z + constant <= 0`; `quad = None` means linear.
#[derive(Debug, Clone)]
pub struct QuadraticConstraint {
    pub name: String,
    pub quad: Option<Mat>,
    pub linear: Vector,
    pub constant: f64,
}

impl QuadraticConstraint {
    pub fn new(name: impl Into<String>, quad: Option<Mat>, linear: Vector, constant: f64) -> Self {
        Self {
            name: name.into(),
            quad,
            linear,
            constant,
        }
    }

    pub fn value(&self, z: &Vector) -> f64 {
        let mut v = self.linear.dot(z) + self.constant;
        if let Some(p) = &self.quad {
            v += z.dot(&(p * z));
        }
        v
    }
}

/// `||lhs z + lhs_offset|| <= rhs^T z + rhs_offset`.
#[derive(Debug, Clone)]
pub struct ConeConstraint {
    pub name: String,
    pub lhs: Mat,
    pub lhs_offset: Vector,
    pub rhs: Vector,
    pub rhs_offset: f64,
}

impl ConeConstraint {
    /// Signed violation `||lhs z + lhs_offset|| - (rhs^T z + rhs_offset)`.
    pub fn value(&self, z: &Vector) -> f64 {
        (&self.lhs * z + &self.lhs_offset).norm() - (self.rhs.dot(z) + self.rhs_offset)
    }
}

#[derive(Debug, Clone)]
pub struct QcqpInstance {
    pub objective_quad: Mat,
    pub objective_linear: Vector,
    pub objective_constant: f64,
    pub quadratic_constraints: Vec<QuadraticConstraint>,
    pub cone_constraints: Vec<ConeConstraint>,
    pub eq_matrix: Mat,
    pub eq_rhs: Vector,
    pub nonnegative: Vec<bool>,
}

impl QcqpInstance {
    /// Unconstrained instance with zero objective over `dim` variables.
    pub fn new(dim: usize) -> Self {
        Self {
            objective_quad: Mat::zeros(dim, dim),
            objective_linear: Vector::zeros(dim),
            objective_constant: 0.0,
            quadratic_constraints: Vec::new(),
            cone_constraints: Vec::new(),
            eq_matrix: Mat::zeros(0, dim),
            eq_rhs: Vector::zeros(0),
            nonnegative: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.objective_linear.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        z.dot(&(&self.objective_quad * z)) + self.objective_linear.dot(z) + self.objective_constant
    }

    /// Checks dimensions, finiteness and the convexity certificate (every
    /// quadratic term PSD).
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let check = |what: &str, expected: usize, found: usize| crate::error::check_dim(what, expected, found);
        check("objective quadratic rows", n, self.objective_quad.nrows())?;
        check("objective quadratic columns", n, self.objective_quad.ncols())?;
        check("nonnegativity mask", n, self.nonnegative.len())?;
        check("equality matrix columns", n, self.eq_matrix.ncols())?;
        check("equality right-hand side", self.eq_matrix.nrows(), self.eq_rhs.len())?;
        ensure_psd("objective", &self.objective_quad)?;
        for c in &self.quadratic_constraints {
            check(&format!("constraint `{}` linear term", c.name), n, c.linear.len())?;
            if let Some(p) = &c.quad {
                check(&format!("constraint `{}` quadratic rows", c.name), n, p.nrows())?;
                check(&format!("constraint `{}` quadratic columns", c.name), n, p.ncols())?;
                ensure_psd(&c.name, p)?;
            }
            if !c.constant.is_finite() || c.linear.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("constraint `{}` has non-finite data", c.name)));
            }
        }
        for c in &self.cone_constraints {
            check(&format!("cone `{}` columns", c.name), n, c.lhs.ncols())?;
            check(&format!("cone `{}` offset", c.name), c.lhs.nrows(), c.lhs_offset.len())?;
            check(&format!("cone `{}` rhs", c.name), n, c.rhs.len())?;
        }
        let finite = |m: &Mat| m.iter().all(|v| v.is_finite());
        if !finite(&self.objective_quad)
            || self.objective_linear.iter().any(|v| !v.is_finite())
            || !finite(&self.eq_matrix)
            || self.eq_rhs.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Domain("QCQP instance has non-finite data".into()));
        }
        Ok(())
    }

    /// Most violated inequality or equality at `z` as `(name, violation)`;
    /// the violation is nonpositive when `z` is feasible.
    pub fn max_violation(&self, z: &Vector) -> (String, f64) {
        let mut worst = ("none".to_string(), f64::NEG_INFINITY);
        let mut consider = |name: &str, v: f64| {
            if v > worst.1 {
                worst = (name.to_string(), v);
            }
        };
        for c in &self.quadratic_constraints {
            consider(&c.name, c.value(z));
        }
        for c in &self.cone_constraints {
            consider(&c.name, c.value(z));
        }
        for (i, &nn) in self.nonnegative.iter().enumerate() {
            if nn {
                consider(&format!("nonnegativity[{i}]"), -z[i]);
            }
        }
        if self.eq_matrix.nrows() > 0 {
            let r = (&self.eq_matrix * z - &self.eq_rhs).amax();
            consider("equalities", r);
        }
        worst
    }
}

fn ensure_psd(name: &str, p: &Mat) -> Result<()> {
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Domain(format!("quadratic term of `{name}` is not symmetric")));
    }
    if p.nrows() > 0 {
        let ev = min_eigenvalue(&symmetrize(p));
        if ev < -1e-10 * scale {
            return Err(Error::NotSpd {
                what: format!("quadratic term of `{name}` (convexity certificate)"),
                min_eigenvalue: ev,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub solution: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Largest constraint value at the returned point (nonpositive if feasible).
    pub max_violation: f64,
    pub most_violated: String,
    /// Lower bound on the phase-I optimum when infeasibility was declared.
    pub infeasibility_bound: Option<f64>,
}

impl SolveReport {
    pub fn solution_vector(&self) -> Vector {
        Vector::from_column_slice(&self.solution)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Barrier parameter growth factor per outer round.
    pub mu: f64,
    /// Radius of the implicit safeguard ball `||z|| <= R (1 + ||z0||)` that
    /// keeps barrier subproblems bounded.
    pub bound_radius: f64,
    /// Phase-I optimum above this value declares infeasibility.
    pub infeasibility_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 800,
            mu: 20.0,
            bound_radius: 1e6,
            infeasibility_threshold: 1e-6,
        }
    }
}

pub fn solve_qcqp(instance: &QcqpInstance, tolerance: f64) -> Result<SolveReport> {
    solve_qcqp_with(
        instance,
        &SolverOptions {
            tolerance,
            ..SolverOptions::default()
        },
    )
}

// Smooth convex constraints in reduced coordinates.
#[derive(Debug, Clone)]
enum Barrier {
    Lin { q: Vector, r: f64 },
    Quad { p: Mat, q: Vector, r: f64 },
    Cone { l: Mat, l0: Vector, a: Vector, c: f64 },
}

impl Barrier {
    fn degree(&self) -> f64 {
        match self {
            Barrier::Cone { .. } => 2.0,
            _ => 1.0,
        }
    }

    // Constraint value; strictly negative inside.
    fn value(&self, w: &Vector) -> f64 {
        match self {
            Barrier::Lin { q, r } => q.dot(w) + r,
            Barrier::Quad { p, q, r } => w.dot(&(p * w)) + q.dot(w) + r,
            Barrier::Cone { l, l0, a, c } => (l * w + l0).norm() - (a.dot(w) + c),
        }
    }

    fn phi(&self, w: &Vector) -> Option<f64> {
        match self {
            Barrier::Cone { l, l0, a, c } => {
                let s = a.dot(w) + c;
                let u = l * w + l0;
                let d = s * s - u.norm_squared();
                (s > 0.0 && d > 0.0).then(|| -d.ln())
            }
            _ => {
                let g = self.value(w);
                (g < 0.0).then(|| -(-g).ln())
            }
        }
    }

    fn accumulate(&self, w: &Vector, grad: &mut Vector, hess: &mut Mat) {
        match self {
            Barrier::Lin { q, r } => {
                let g = q.dot(w) + r;
                *grad += q / (-g);
                hess.ger(1.0 / (g * g), q, q, 1.0);
            }
            Barrier::Quad { p, q, r } => {
                let pw = p * w;
                let g = w.dot(&pw) + q.dot(w) + r;
                let dg = pw * 2.0 + q;
                *grad += &dg / (-g);
                hess.ger(1.0 / (g * g), &dg, &dg, 1.0);
                *hess += p * (2.0 / (-g));
            }
            Barrier::Cone { l, l0, a, c } => {
                let s = a.dot(w) + c;
                let u = l * w + l0;
                let d = s * s - u.norm_squared();
                let dd = a * (2.0 * s) - l.transpose() * &u * 2.0;
                *grad += &dd / (-d);
                hess.ger(1.0 / (d * d), &dd, &dd, 1.0);
                // -Hess(d)/d with Hess(d) = 2 a a^T - 2 L^T L.
                hess.ger(-2.0 / d, a, a, 1.0);
                *hess += l.transpose() * l * (2.0 / d);
            }
        }
    }

    fn barrier_grad(&self, w: &Vector) -> Vector {
        match self {
            Barrier::Lin { q, r } => q / (-(q.dot(w) + r)),
            Barrier::Quad { p, q, r } => {
                let pw = p * w;
                let g = w.dot(&pw) + q.dot(w) + r;
                (pw * 2.0 + q) / (-g)
            }
            Barrier::Cone { l, l0, a, c } => {
                let s = a.dot(w) + c;
                let u = l * w + l0;
                let d = s * s - u.norm_squared();
                (a * (2.0 * s) - l.transpose() * &u * 2.0) / (-d)
            }
        }
    }

    // Appends one trailing coordinate `s` and relaxes the constraint by it.
    fn relaxed(&self) -> Barrier {
        let ext = |v: &Vector, last: f64| {
            let mut out = Vector::zeros(v.len() + 1);
            out.rows_mut(0, v.len()).copy_from(v);
            out[v.len()] = last;
            out
        };
        match self {
            Barrier::Lin { q, r } => Barrier::Lin { q: ext(q, -1.0), r: *r },
            Barrier::Quad { p, q, r } => {
                let n = p.nrows();
                let mut p2 = Mat::zeros(n + 1, n + 1);
                p2.view_mut((0, 0), (n, n)).copy_from(p);
                Barrier::Quad { p: p2, q: ext(q, -1.0), r: *r }
            }
            Barrier::Cone { l, l0, a, c } => {
                let mut l2 = Mat::zeros(l.nrows(), l.ncols() + 1);
                l2.view_mut((0, 0), (l.nrows(), l.ncols())).copy_from(l);
                Barrier::Cone { l: l2, l0: l0.clone(), a: ext(a, 1.0), c: *c }
            }
        }
    }
}

struct Reduced {
    p: Mat,
    q: Vector,
    c: f64,
    cons: Vec<Barrier>,
}

impl Reduced {
    fn objective(&self, w: &Vector) -> f64 {
        w.dot(&(&self.p * w)) + self.q.dot(w) + self.c
    }

    fn degree(&self) -> f64 {
        self.cons.iter().map(Barrier::degree).sum()
    }

    fn merit(&self, w: &Vector, t: f64) -> Option<f64> {
        let mut v = t * self.objective(w);
        for c in &self.cons {
            v += c.phi(w)?;
        }
        Some(v)
    }
}

// Damped Newton minimization of t f0 + barrier from a strictly feasible w.
// Newton steps per centering round, and the squared Newton decrement at
// which a round counts as centered.
const CENTERING_STEPS: usize = 200;
const CENTERING_DECREMENT: f64 = 1e-12;

fn center(
    prob: &Reduced,
    mut w: Vector,
    t: f64,
    iters: &mut usize,
    max_iters: usize,
    mut stop: impl FnMut(&Vector) -> bool,
) -> Vector {
    let n = w.len();
    let start = *iters;
    loop {
        let obj_grad = &prob.p * &w * 2.0 + &prob.q;
        let mut grad = &obj_grad * t;
        let mut hess = &prob.p * (2.0 * t);
        for c in &prob.cons {
            c.accumulate(&w, &mut grad, &mut hess);
        }
        let done = |w: Vector| w;
        if *iters >= max_iters || *iters - start >= CENTERING_STEPS || stop(&w) {
            return done(w);
        }
        let step = newton_direction(&hess, &grad, n);
        let decrement = -grad.dot(&step);
        if !(decrement > CENTERING_DECREMENT) {
            return done(w);
        }
        let f0 = match prob.merit(&w, t) {
            Some(v) => v,
            None => return done(w),
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-14 {
            let cand = &w + &step * alpha;
            if let Some(fc) = prob.merit(&cand, t) {
                let slack = 1e-14 * f0.abs().max(1.0);
                if fc <= f0 - 0.25 * alpha * decrement + slack {
                    accepted = Some(cand);
                    break;
                }
            }
            alpha *= 0.5;
        }
        *iters += 1;
        match accepted {
            Some(cand) => {
                let moved = (&cand - &w).norm();
                w = cand;
                if decrement < 1e-16 || moved <= 1e-15 * (1.0 + w.norm()) {
                    return done(w);
                }
            }
            None => return done(w),
        }
    }
}

/// Stationarity and complementarity of `w` for the barrier weight `t`.
///
/// Multiplier estimates from the barrier, `mu_j = 1 / (t (-g_j))`, lose
/// relative accuracy as slacks shrink, so the multipliers of the nearly
/// active constraints are refitted by least squares (clipped at zero) and
/// the smaller of the two stationarity residuals is reported.
fn kkt_measure(prob: &Reduced, w: &Vector, t: f64) -> (f64, f64) {
    let gf = &prob.p * w * 2.0 + &prob.q;
    let scale = 1.0 + gf.norm();
    let contributions: Vec<Vector> = prob.cons.iter().map(|c| c.barrier_grad(w) / t).collect();
    let mut est = gf.clone();
    for v in &contributions {
        est += v;
    }
    let active: Vec<usize> = (0..contributions.len())
        .filter(|&j| contributions[j].norm() >= 1e-6 * scale)
        .collect();
    let degree = prob.degree();
    let mut stationarity = est.norm();
    let mut complementarity = degree / t;
    if !active.is_empty() {
        let k = w.len();
        let mut v = Mat::zeros(k, active.len());
        for (col, &j) in active.iter().enumerate() {
            v.set_column(col, &contributions[j]);
        }
        let svd = v.clone().svd(true, true);
        if let Ok(c) = svd.solve(&(-&gf), 1e-12) {
            let c = c.map(|x| x.max(0.0));
            let refined = (&gf + &v * &c).norm();
            if refined < stationarity {
                stationarity = refined;
                // Refitted multipliers are c_j mu_j with mu_j (-g_j) = 1 / t.
                let inactive = (contributions.len() - active.len()) as f64;
                complementarity = (c.sum() + inactive) / t;
            }
        }
    }
    (stationarity / scale, complementarity)
}

fn newton_direction(hess: &Mat, grad: &Vector, n: usize) -> Vector {
    let h = symmetrize(hess);
    if let Some(ch) = Cholesky::new(h.clone()) {
        return -ch.solve(grad);
    }
    let scale = (h.trace().abs() / n.max(1) as f64).max(1e-300);
    let mut reg = 1e-12 * scale;
    for _ in 0..20 {
        let hr = &h + Mat::identity(n, n) * reg;
        if let Some(ch) = Cholesky::new(hr) {
            return -ch.solve(grad);
        }
        reg *= 100.0;
    }
    -grad.clone()
}

/// Solves a convex QCQP instance; errors only on malformed instances.
pub fn solve_qcqp_with(instance: &QcqpInstance, opts: &SolverOptions) -> Result<SolveReport> {
    instance.validate()?;
    let n = instance.dim();
    let tol = opts.tolerance;

    // Equality elimination: z = z0 + Z w.
    let (z0, zbasis) = nullspace_parametrization(&instance.eq_matrix, &instance.eq_rhs)?;
    let k = zbasis.ncols();
    let radius = opts.bound_radius * (1.0 + z0.norm());

    let zt = zbasis.transpose();
    let reduce_quad = |p: Option<&Mat>, q: &Vector, r: f64| -> Barrier {
        match p {
            Some(p) => {
                let pz0 = p * &z0;
                Barrier::Quad {
                    p: symmetrize(&(&zt * p * &zbasis)),
                    q: &zt * (&pz0 * 2.0 + q),
                    r: z0.dot(&pz0) + q.dot(&z0) + r,
                }
            }
            None => Barrier::Lin {
                q: &zt * q,
                r: q.dot(&z0) + r,
            },
        }
    };
    let mut cons = Vec::new();
    for c in &instance.quadratic_constraints {
        cons.push(reduce_quad(c.quad.as_ref(), &c.linear, c.constant));
    }
    for (i, &nn) in instance.nonnegative.iter().enumerate() {
        if nn {
            let mut e = Vector::zeros(n);
            e[i] = -1.0;
            cons.push(reduce_quad(None, &e, 0.0));
        }
    }
    for c in &instance.cone_constraints {
        cons.push(Barrier::Cone {
            l: &c.lhs * &zbasis,
            l0: &c.lhs * &z0 + &c.lhs_offset,
            a: &zt * &c.rhs,
            c: c.rhs.dot(&z0) + c.rhs_offset,
        });
    }
    let n_original = cons.len();
    let p0 = &instance.objective_quad;
    let pz0 = p0 * &z0;
    let reduced = Reduced {
        p: symmetrize(&(&zt * p0 * &zbasis)),
        q: &zt * (&pz0 * 2.0 + &instance.objective_linear),
        c: instance.objective(&z0),
        cons: {
            let mut all = cons.clone();
            all.push(Barrier::Quad {
                p: Mat::identity(k, k),
                q: Vector::zeros(k),
                r: -radius * radius,
            });
            all
        },
    };

    let lift = |w: &Vector| -> Vector { &z0 + &zbasis * w };
    let finish = |status: SolveStatus, z: Vector, kkt: f64, iterations: usize, bound: Option<f64>| {
        let (name, viol) = instance.max_violation(&z);
        SolveReport {
            status,
            objective_value: instance.objective(&z),
            solution: z.iter().copied().collect(),
            kkt_residual: kkt,
            iterations,
            max_violation: viol,
            most_violated: name,
            infeasibility_bound: bound,
        }
    };

    let mut iters = 0usize;
    let w_start = Vector::zeros(k);

    if k == 0 {
        let z = z0.clone();
        let (_, viol) = instance.max_violation(&z);
        let status = if viol <= tol { SolveStatus::Optimal } else { SolveStatus::Infeasible };
        let bound = (status == SolveStatus::Infeasible).then_some(viol);
        return Ok(finish(status, z, 0.0, 0, bound));
    }

    // Phase I when the start is not strictly feasible.
    let worst = cons[..n_original]
        .iter()
        .map(|c| c.value(&w_start))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w = w_start;
    if worst >= 0.0 {
        let mut p1 = Reduced {
            p: Mat::zeros(k + 1, k + 1),
            q: {
                let mut e = Vector::zeros(k + 1);
                e[k] = 1.0;
                e
            },
            c: 0.0,
            cons: cons.iter().map(Barrier::relaxed).collect(),
        };
        let mut ball = Mat::identity(k + 1, k + 1);
        ball[(k, k)] = 0.0;
        p1.cons.push(Barrier::Quad {
            p: ball,
            q: Vector::zeros(k + 1),
            r: -radius * radius,
        });
        let mut floor = Vector::zeros(k + 1);
        floor[k] = -1.0;
        p1.cons.push(Barrier::Lin { q: floor, r: -1.0 });

        let mut v = Vector::zeros(k + 1);
        v[k] = worst.abs() * 0.1 + worst + 1.0;
        let m1 = p1.degree();
        let mut t = 1.0;
        let mut found = false;
        let mut bound = None;
        loop {
            v = center(&p1, v, t, &mut iters, opts.max_iterations, |v| v[k] < 0.0);
            let s = v[k];
            if s < 0.0 {
                found = true;
                break;
            }
            let lower = s - m1 / t;
            if lower > opts.infeasibility_threshold {
                bound = Some(lower);
                break;
            }
            if m1 / t < tol * 1e-2 {
                bound = Some(lower.max(0.0));
                break;
            }
            if iters >= opts.max_iterations {
                break;
            }
            t *= opts.mu;
        }
        let z = lift(&v.rows(0, k).into_owned());
        if !found {
            return Ok(match bound {
                Some(b) => finish(SolveStatus::Infeasible, z, m1 / t, iters, Some(b)),
                None => finish(SolveStatus::MaxIterations, z, f64::MAX, iters, None),
            });
        }
        w = v.rows(0, k).into_owned();
    }

    // Phase II.
    let mut t = 1.0;
    let mut best;
    loop {
        w = center(&reduced, w, t, &mut iters, opts.max_iterations, |_| false);
        let f = reduced.objective(&w);
        let (stationarity, complementarity) = kkt_measure(&reduced, &w, t);
        let gap = complementarity / (1.0 + f.abs());
        best = stationarity.max(gap);
        if gap <= tol && stationarity <= tol {
            break;
        }
        if iters >= opts.max_iterations {
            break;
        }
        if t > 1e18 {
            break;
        }
        t *= opts.mu;
    }
    let z = lift(&w);
    let eq_res = if instance.eq_matrix.nrows() > 0 {
        (&instance.eq_matrix * &z - &instance.eq_rhs).norm() / (1.0 + instance.eq_rhs.norm())
    } else {
        0.0
    };
    let kkt = best.max(eq_res);
    let (_, viol) = instance.max_violation(&z);
    let status = if kkt <= tol && viol <= tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    Ok(finish(status, z, kkt, iters, None))
}

/// Particular solution and orthonormal nullspace basis of `E z = e`.
fn nullspace_parametrization(e: &Mat, rhs: &Vector) -> Result<(Vector, Mat)> {
    let n = e.ncols();
    let p = e.nrows();
    if p == 0 {
        return Ok((Vector::zeros(n), Mat::identity(n, n)));
    }
    // Pad to at least n rows so the SVD returns the full right basis.
    let rows = p.max(n);
    let mut padded = Mat::zeros(rows, n);
    padded.view_mut((0, 0), (p, n)).copy_from(e);
    let svd = padded.svd(true, true);
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let u = svd.u.as_ref().expect("requested U");
    let smax = svd.singular_values.max();
    let thr = 1e-10 * smax.max(1e-300);
    let mut padded_rhs = Vector::zeros(rows);
    padded_rhs.rows_mut(0, p).copy_from(rhs);
    let mut z0 = Vector::zeros(n);
    let mut null_rows = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            let coef = u.column(i).dot(&padded_rhs) / s;
            z0 += vt.row(i).transpose() * coef;
        } else {
            null_rows.push(i);
        }
    }
    let residual = (e * &z0 - rhs).norm();
    if residual > 1e-9 * (1.0 + rhs.norm()) {
        return Err(Error::Infeasible(format!(
            "equality constraints are inconsistent (residual {residual:.3e})"
        )));
    }
    let mut zb = Mat::zeros(n, null_rows.len());
    for (j, &i) in null_rows.iter().enumerate() {
        zb.set_column(j, &vt.row(i).transpose());
    }
    Ok((z0, zb))
}
