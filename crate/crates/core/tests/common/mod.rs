//! Random problem generators and an independent vertex-form feasibility
//! oracle shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use chance_nav_core::numerics::{LinearProgram, LpOutcome};
use chance_nav_core::safety::LinearSystem;
use chance_nav_core::synthesis::ExitSpec;
use chance_nav_core::{
    ChanceSpec, ConvexCell, Landmark, Mat, OutputFeedbackController, SpdMatrix, SynthesisProblem,
    TighteningMode, Vector,
};
use rand::Rng;

pub fn random_spd<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> SpdMatrix {
    let q = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let d = Vector::from_fn(n, |_, _| rng.random_range(lo..hi));
    SpdMatrix::new(&q * Mat::from_diagonal(&d) * q.transpose()).unwrap()
}

pub fn random_landmarks<R: Rng>(rng: &mut R, count: usize, n: usize, lo: f64, hi: f64) -> Vec<Landmark> {
    (0..count)
        .map(|i| {
            let pos = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            Landmark::new(format!("l{i}"), pos, random_spd(rng, n, lo, hi)).unwrap()
        })
        .collect()
}

/// Polygon circumscribing a circle around `center`, with jittered tangent
/// directions so that no angular gap reaches pi.
pub fn random_polygon<R: Rng>(rng: &mut R, faces: usize) -> ConvexCell {
    let center = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let offset = rng.random_range(0.0..2.0 * PI);
    let mut a = Mat::zeros(faces, 2);
    let mut b = Vector::zeros(faces);
    for k in 0..faces {
        let theta = offset + 2.0 * PI * (k as f64 + rng.random_range(-0.2..0.2)) / faces as f64;
        let (s, c) = theta.sin_cos();
        let r = rng.random_range(1.0..2.5);
        a[(k, 0)] = c;
        a[(k, 1)] = s;
        b[k] = -r - (c * center[0] + s * center[1]);
    }
    ConvexCell::new("random", a, b).unwrap()
}

/// Random 2D single-cell design problem in variance mode.
pub fn random_problem<R: Rng>(rng: &mut R, eta0: Option<f64>) -> SynthesisProblem {
    let faces = rng.random_range(3..=6);
    let cell = random_polygon(rng, faces);
    let a = if rng.random_bool(0.5) {
        Mat::zeros(2, 2)
    } else {
        Mat::from_fn(2, 2, |_, _| rng.random_range(-0.3..0.3))
    };
    let system = LinearSystem::new(a, Mat::identity(2, 2)).unwrap();
    let count = rng.random_range(1..=3);
    let scale = 10f64.powf(rng.random_range(-3.0..0.0));
    let landmarks: Vec<Landmark> = (0..count)
        .map(|i| {
            let pos = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            Landmark::new(format!("l{i}"), pos, random_spd(rng, 2, 0.2 * scale, scale)).unwrap()
        })
        .collect();
    let exit = ExitSpec {
        face: 0,
        gains: vec![rng.random_range(0.2..1.0)],
        margin: rng.random_range(0.0..0.3),
    };
    let eta0 = eta0.unwrap_or_else(|| rng.random_range(0.02..0.3));
    let spec = ChanceSpec::new(eta0, TighteningMode::Variance).unwrap();
    SynthesisProblem::for_cell(system, cell, Some(exit), landmarks, spec).unwrap()
}

/// Uniform samples from the interior of a cell by rejection from its
/// bounding box.
pub fn sample_cell<R: Rng>(rng: &mut R, cell: &ConvexCell, count: usize) -> Vec<Vector> {
    let verts = cell.enumerate_vertices().unwrap();
    let n = cell.dim();
    let lo: Vec<f64> = (0..n).map(|j| verts.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..n).map(|j| verts.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = Vector::from_fn(n, |j, _| rng.random_range(lo[j]..hi[j]));
        if cell.max_face_value(&x).unwrap() < 0.0 {
            out.push(x);
        }
    }
    out
}

/// One vertex instance of one condition, written straight from the
/// measurement model: with `u = sum_i K_i (Y_i - v + noise_i) + k`, the
/// condition `a.v + b.u + d - margin >= 0` has mean
/// `a.v + b.(sum_i K_i (Y_i - v) + k) + d - margin` and variance
/// `sum_i (K_i^T b)^T Sigma_i (K_i^T b)`. The surrogate is
/// `variance / eta0 - mean`.
#[derive(Clone)]
struct Piece {
    a_bar: Vector,
    b_bar: Vector,
    d: f64,
    v: Vector,
}

/// Max over conditions and cell vertices of the variance-mode surrogate, as
/// a function of `z = [vec_row(K_1), ..., vec_row(K_N), k]`.
pub struct VertexOracle {
    pieces: Vec<Piece>,
    positions: Vec<Vector>,
    covariances: Vec<Mat>,
    eta0: f64,
    m: usize,
    n: usize,
}

pub enum Verdict {
    Feasible { witness: f64 },
    Infeasible { lower_bound: f64 },
    Inconclusive { lower: f64, upper: f64 },
}

impl VertexOracle {
    pub fn new(problem: &SynthesisProblem) -> Self {
        assert_eq!(problem.spec.mode(), TighteningMode::Variance);
        let vertices = problem.cell.enumerate_vertices().unwrap();
        let mut pieces = Vec::new();
        for f in problem.forms().unwrap() {
            for v in &vertices {
                pieces.push(Piece {
                    a_bar: f.form.a_bar.clone(),
                    b_bar: f.form.b_bar.clone(),
                    d: f.form.d - f.form.margin,
                    v: v.clone(),
                });
            }
        }
        Self {
            pieces,
            positions: problem.landmarks.iter().map(|l| l.position.clone()).collect(),
            covariances: problem.landmarks.iter().map(|l| l.covariance.matrix().clone()).collect(),
            eta0: problem.spec.eta0(),
            m: problem.input_dim(),
            n: problem.state_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m * self.n * self.positions.len() + self.m
    }

    pub fn controller(&self, z: &Vector, ids: Vec<String>) -> OutputFeedbackController {
        let (m, n) = (self.m, self.n);
        let blocks = (0..self.positions.len())
            .map(|i| Mat::from_row_slice(m, n, &z.as_slice()[i * m * n..(i + 1) * m * n]))
            .collect();
        let bias = Vector::from_column_slice(&z.as_slice()[m * n * self.positions.len()..]);
        OutputFeedbackController::new(blocks, bias, ids).unwrap()
    }

    fn gain(&self, z: &Vector, i: usize) -> Mat {
        let mn = self.m * self.n;
        Mat::from_row_slice(self.m, self.n, &z.as_slice()[i * mn..(i + 1) * mn])
    }

    /// Value, gradient and Hessian of one piece.
    fn piece(&self, p: &Piece, z: &Vector, want_hess: bool) -> (f64, Vector, Option<Mat>) {
        let (m, n) = (self.m, self.n);
        let nl = self.positions.len();
        let dim = self.dim();
        let mut val = 0.0;
        let mut grad = Vector::zeros(dim);
        let mut hess = want_hess.then(|| Mat::zeros(dim, dim));
        let mut mean = p.a_bar.dot(&p.v) + p.d;
        for i in 0..nl {
            let k = self.gain(z, i);
            let kb = k.transpose() * &p.b_bar;
            let s = &self.covariances[i];
            val += kb.dot(&(s * &kb)) / self.eta0;
            let disp = &self.positions[i] - &p.v;
            mean += p.b_bar.dot(&(&k * &disp));
            let sk = s * &kb;
            for r in 0..m {
                for c in 0..n {
                    let idx = i * m * n + r * n + c;
                    grad[idx] = 2.0 * p.b_bar[r] * sk[c] / self.eta0 - p.b_bar[r] * disp[c];
                }
            }
            if let Some(h) = hess.as_mut() {
                for r in 0..m {
                    for c in 0..n {
                        for r2 in 0..m {
                            for c2 in 0..n {
                                h[(i * m * n + r * n + c, i * m * n + r2 * n + c2)] +=
                                    2.0 * p.b_bar[r] * p.b_bar[r2] * s[(c, c2)] / self.eta0;
                            }
                        }
                    }
                }
            }
        }
        let bias = z.rows(m * n * nl, m);
        mean += p.b_bar.dot(&bias);
        for r in 0..m {
            grad[m * n * nl + r] = -p.b_bar[r];
        }
        (val - mean, grad, hess)
    }

    pub fn value(&self, z: &Vector) -> f64 {
        self.pieces
            .iter()
            .map(|p| self.piece(p, z, false).0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Newton's method on the soft maximum `log(sum exp(beta g_j)) / beta`
    /// with increasing `beta`; returns the best point found.
    fn smooth_descent(&self, stop_below: f64) -> Vector {
        let dim = self.dim();
        let mut z = Vector::zeros(dim);
        let mut best = (self.value(&z), z.clone());
        for beta in [1.0, 10.0, 1e2, 1e3, 1e4, 1e5] {
            for _ in 0..60 {
                let evals: Vec<_> = self.pieces.iter().map(|p| self.piece(p, &z, true)).collect();
                let gmax = evals.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = evals.iter().map(|e| (beta * (e.0 - gmax)).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut grad = Vector::zeros(dim);
                let mut hess = Mat::zeros(dim, dim);
                for (e, wi) in evals.iter().zip(&w) {
                    let p = wi / total;
                    grad += &e.1 * p;
                    hess += e.2.as_ref().unwrap() * p + &e.1 * e.1.transpose() * (beta * p);
                }
                hess -= &grad * grad.transpose() * beta;
                let reg = 1e-10 * (1.0 + hess.diagonal().amax());
                hess += Mat::identity(dim, dim) * reg;
                let Some(ch) = hess.clone().cholesky() else { break };
                let step = -ch.solve(&grad);
                let dec = -grad.dot(&step);
                if !(dec > 1e-14) {
                    break;
                }
                let soft = |z: &Vector| {
                    let vals: Vec<f64> = self.pieces.iter().map(|p| self.piece(p, z, false).0).collect();
                    let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    mx + vals.iter().map(|v| (beta * (v - mx)).exp()).sum::<f64>().ln() / beta
                };
                let f0 = soft(&z);
                let mut t = 1.0;
                while t > 1e-12 {
                    let cand = &z + &step * t;
                    if soft(&cand) <= f0 - 0.25 * t * dec {
                        z = cand;
                        break;
                    }
                    t *= 0.5;
                }
                if t <= 1e-12 {
                    break;
                }
                let v = self.value(&z);
                if v < best.0 {
                    best = (v, z.clone());
                }
                if best.0 < stop_below {
                    return best.1;
                }
            }
        }
        best.1
    }

    /// Decides whether the minimum of the max-surrogate over a box of radius
    /// `radius` is below `-tol` (feasible) or above `tol` (infeasible).
    pub fn decide(&self, radius: f64, tol: f64, max_rounds: usize) -> Verdict {
        let dim = self.dim();
        let start = self.smooth_descent(-tol);
        let mut upper = self.value(&start);
        if upper < -tol {
            return Verdict::Feasible { witness: upper };
        }
        // Kelley cutting planes in (z, t); every cut under-estimates the
        // maximum, so any subset of them yields a valid lower bound.
        let mut cuts: Vec<(Vector, f64)> = Vec::new();
        let add_cuts = |z: &Vector, cuts: &mut Vec<(Vector, f64)>| {
            let mut evals: Vec<(f64, Vector)> = self
                .pieces
                .iter()
                .map(|p| {
                    let (v, g, _) = self.piece(p, z, false);
                    (v, g)
                })
                .collect();
            evals.sort_by(|a, b| b.0.total_cmp(&a.0));
            for (v, g) in evals.into_iter().take(8) {
                // g_j(z) + grad.(y - z) <= t  <=>  grad.y - t <= grad.z - g_j(z)
                cuts.push((g.clone(), g.dot(z) - v));
            }
        };
        add_cuts(&start, &mut cuts);
        add_cuts(&Vector::zeros(dim), &mut cuts);
        let mut lower = f64::NEG_INFINITY;
        let max_cuts = 40 * (dim + 1);
        for _ in 0..max_rounds {
            if cuts.len() > max_cuts {
                cuts.drain(0..cuts.len() - max_cuts);
            }
            let rows = cuts.len() + 2 * dim;
            let mut a = Mat::zeros(rows, dim + 1);
            let mut b = Vector::zeros(rows);
            for (r, (g, rhs)) in cuts.iter().enumerate() {
                for j in 0..dim {
                    a[(r, j)] = g[j];
                }
                a[(r, dim)] = -1.0;
                b[r] = *rhs;
            }
            for j in 0..dim {
                let r = cuts.len() + 2 * j;
                a[(r, j)] = 1.0;
                b[r] = radius;
                a[(r + 1, j)] = -1.0;
                b[r + 1] = radius;
            }
            let mut c = Vector::zeros(dim + 1);
            c[dim] = -1.0;
            let (y, value) = match LinearProgram::new(c, a, b).solve() {
                LpOutcome::Optimal { x, value } => (x, value),
                _ => break,
            };
            let model_min = -value;
            // Dropped cuts can only lower the model, so this stays valid.
            lower = lower.max(model_min);
            let z = y.rows(0, dim).into_owned();
            upper = upper.min(self.value(&z));
            if upper < -tol {
                return Verdict::Feasible { witness: upper };
            }
            if lower > tol {
                return Verdict::Infeasible { lower_bound: lower };
            }
            add_cuts(&z, &mut cuts);
        }
        Verdict::Inconclusive { lower, upper }
    }
}

/// Noise cross-covariance `sum_i A_i Sigma_i B_i^T` of two weight sets.
pub fn cross_covariance(a: &[Mat], b: &[Mat], landmarks: &[Landmark]) -> Mat {
    let n = landmarks[0].dim();
    a.iter()
        .zip(b)
        .zip(landmarks)
        .fold(Mat::zeros(n, n), |acc, ((wa, wb), l)| acc + wa * l.covariance.matrix() * wb.transpose())
}
