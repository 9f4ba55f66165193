use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{ConvexCell, Halfspace};
use crate::landmarks::{fuse_min_variance, Landmark, VirtualLandmark};
use crate::numerics::{
    solve_qcqp, ConeConstraint, QcqpInstance, QuadraticConstraint, SolveReport, SolveStatus, SpdMatrix,
};
use crate::safety::{
    build_constraint_coefficients, clf_exit_form, ecbf_matrices, ChanceSpec, LinearBarrierForm,
    LinearSystem, TighteningMode, WallBarrier,
};
use crate::{Mat, Vector};

use super::controller::{remix_controller, OutputFeedbackController};

/// Surrogate values above this at a cell vertex fail certification.
pub const VERTEX_TOLERANCE: f64 = 1e-6;
const SOLVER_TOLERANCE: f64 = 1e-8;
const FACE_MATCH_TOL: f64 = 1e-9;

/// Exit condition: leave the cell through face `face` with Lyapunov gains
/// and a minimum progress rate `margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSpec {
    pub face: usize,
    pub gains: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub system: LinearSystem,
    pub cell: ConvexCell,
    pub walls: Vec<WallBarrier>,
    pub exit: Option<ExitSpec>,
    pub landmarks: Vec<Landmark>,
    pub spec: ChanceSpec,
    /// Weight on `||K||_F^2`.
    pub objective_weight: f64,
    /// Extra slack demanded from every wall condition.
    pub wall_margin: f64,
}

/// A named affine condition entering the design problem.
#[derive(Debug, Clone)]
pub struct NamedForm {
    pub name: String,
    pub form: LinearBarrierForm,
}

impl SynthesisProblem {
    pub fn new(
        system: LinearSystem,
        cell: ConvexCell,
        walls: Vec<WallBarrier>,
        exit: Option<ExitSpec>,
        landmarks: Vec<Landmark>,
        spec: ChanceSpec,
    ) -> Result<Self> {
        let problem = Self {
            system,
            cell,
            walls,
            exit,
            landmarks,
            spec,
            objective_weight: 1.0,
            wall_margin: 0.0,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Walls on every face except the exit, with default gains.
    pub fn for_cell(
        system: LinearSystem,
        cell: ConvexCell,
        exit: Option<ExitSpec>,
        landmarks: Vec<Landmark>,
        spec: ChanceSpec,
    ) -> Result<Self> {
        let exit_face = exit.as_ref().map(|e| e.face);
        let walls = (0..cell.num_faces())
            .filter(|f| Some(*f) != exit_face)
            .map(|f| WallBarrier::from_cell_face(&system, &cell.face(f), None))
            .collect::<Result<Vec<_>>>()?;
        Self::new(system, cell, walls, exit, landmarks, spec)
    }

    pub fn with_objective_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("objective weight must be positive, got {weight}")));
        }
        self.objective_weight = weight;
        Ok(self)
    }

    pub fn with_wall_margin(mut self, margin: f64) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::Config(format!("wall margin must be nonnegative, got {margin}")));
        }
        self.wall_margin = margin;
        Ok(self)
    }

    /// The same problem over a single virtual landmark.
    pub fn with_landmarks(&self, landmarks: Vec<Landmark>) -> Result<Self> {
        let mut p = self.clone();
        p.landmarks = landmarks;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.system.state_dim();
        check_dim("cell dimension", n, self.cell.dim())?;
        if self.landmarks.is_empty() {
            return Err(Error::Domain("synthesis needs at least one landmark".into()));
        }
        for l in &self.landmarks {
            check_dim(&format!("landmark `{}` dimension", l.id), n, l.dim())?;
        }
        let exit_face = match &self.exit {
            Some(e) => {
                if e.face >= self.cell.num_faces() {
                    return Err(Error::Config(format!(
                        "exit face {} is not a face of cell `{}`",
                        e.face,
                        self.cell.id()
                    )));
                }
                if !(e.margin >= 0.0 && e.margin.is_finite()) {
                    return Err(Error::Config(format!("exit margin must be nonnegative, got {}", e.margin)));
                }
                Some(e.face)
            }
            None => None,
        };
        for (w, wall) in self.walls.iter().enumerate() {
            check_dim("wall normal", n, wall.normal.len())?;
            let face = self.wall_face(wall).ok_or_else(|| {
                Error::Config(format!("wall {w} does not match any face of cell `{}`", self.cell.id()))
            })?;
            if Some(face) == exit_face {
                return Err(Error::Config(format!("wall {w} lies on the exit face {face}")));
            }
        }
        if !(self.objective_weight > 0.0) {
            return Err(Error::Config("objective weight must be positive".into()));
        }
        Ok(())
    }

    /// Face index whose negation is `wall`.
    pub fn wall_face(&self, wall: &WallBarrier) -> Option<usize> {
        let h = Halfspace::new(wall.normal.clone(), wall.offset).negated();
        (0..self.cell.num_faces()).find(|&f| {
            let face = self.cell.face(f);
            let scale = 1.0 + face.offset.abs();
            face.normal.iter().zip(&h.normal).all(|(a, b)| (a - b).abs() <= FACE_MATCH_TOL)
                && (face.offset - h.offset).abs() <= FACE_MATCH_TOL * scale
        })
    }

    /// All conditions the controller must satisfy, walls first.
    pub fn forms(&self) -> Result<Vec<NamedForm>> {
        let mut out = Vec::new();
        for wall in &self.walls {
            let face = self.wall_face(wall).expect("validated wall");
            out.push(NamedForm {
                name: format!("wall[face {face}]"),
                form: ecbf_matrices(&self.system, wall)?.with_margin(self.wall_margin),
            });
        }
        if let Some(e) = &self.exit {
            out.push(NamedForm {
                name: format!("exit[face {}]", e.face),
                form: clf_exit_form(&self.system, &self.cell.face(e.face), &e.gains)?.with_margin(e.margin),
            });
        }
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn landmark_ids(&self) -> Vec<String> {
        self.landmarks.iter().map(|l| l.id.clone()).collect()
    }
}

/// Variable layout `[vec K_1, ..., vec K_N, k, lambda_1, ..., lambda_C]`
/// with column-major `vec`.
#[derive(Debug, Clone, Copy)]
pub struct VariableLayout {
    pub m: usize,
    pub n: usize,
    pub blocks: usize,
    pub faces: usize,
    pub constraints: usize,
}

impl VariableLayout {
    pub fn gain_index(&self, block: usize, row: usize, col: usize) -> usize {
        block * self.m * self.n + row + col * self.m
    }

    pub fn bias_index(&self, row: usize) -> usize {
        self.blocks * self.m * self.n + row
    }

    pub fn multiplier_index(&self, constraint: usize, face: usize) -> usize {
        self.blocks * self.m * self.n + self.m + constraint * self.faces + face
    }

    pub fn dim(&self) -> usize {
        self.multiplier_index(self.constraints, 0)
    }

    pub fn controller(&self, z: &Vector, ids: Vec<String>) -> Result<OutputFeedbackController> {
        let blocks = (0..self.blocks)
            .map(|i| Mat::from_fn(self.m, self.n, |r, c| z[self.gain_index(i, r, c)]))
            .collect();
        let bias = Vector::from_fn(self.m, |r, _| z[self.bias_index(r)]);
        OutputFeedbackController::new(blocks, bias, ids)
    }
}

pub fn layout_of(problem: &SynthesisProblem) -> Result<VariableLayout> {
    Ok(VariableLayout {
        m: problem.input_dim(),
        n: problem.state_dim(),
        blocks: problem.landmarks.len(),
        faces: problem.cell.num_faces(),
        constraints: problem.forms()?.len(),
    })
}

/// Robust design problem: for each condition, the tightened surrogate must
/// hold at every state of the cell, which by LP duality over the cell
/// becomes
///
/// ```text
/// K2 Gamma K2^T - k3 - b_x^T lambda <= 0,   A_x^T lambda + K1^T = 0,   lambda >= 0
/// ```
///
/// with `A_x x + b_x <= 0` the cell. The objective is `w ||K||_F^2`.
pub fn assemble_synthesis_qcqp(problem: &SynthesisProblem) -> Result<QcqpInstance> {
    problem.validate()?;
    let forms = problem.forms()?;
    let lay = layout_of(problem)?;
    let (m, n, nb, nf) = (lay.m, lay.n, lay.blocks, lay.faces);
    let dim = lay.dim();
    let mut inst = QcqpInstance::new(dim);
    for i in 0..nb {
        for r in 0..m {
            for c in 0..n {
                let j = lay.gain_index(i, r, c);
                inst.objective_quad[(j, j)] = problem.objective_weight;
            }
        }
    }
    let covs: Vec<&Mat> = problem.landmarks.iter().map(|l| l.covariance.matrix()).collect();
    let sigma_bar = SpdMatrix::named(crate::numerics::block_diagonal(&covs), "stacked measurement covariance")?;
    let mut eq_rows: Vec<(Vector, f64)> = Vec::new();
    for (ci, NamedForm { name, form }) in forms.iter().enumerate() {
        let b_bar = &form.b_bar;
        // K2 = S z over the stacked gain entries.
        let mut s = Mat::zeros(nb * n, dim);
        // k3 = t3 . z + d - margin.
        let mut t3 = Vector::zeros(dim);
        for (i, l) in problem.landmarks.iter().enumerate() {
            for c in 0..n {
                for r in 0..m {
                    let j = lay.gain_index(i, r, c);
                    s[(i * n + c, j)] = b_bar[r];
                    t3[j] = b_bar[r] * l.position[c];
                }
            }
        }
        for r in 0..m {
            t3[lay.bias_index(r)] = b_bar[r];
        }
        let d = form.d - form.margin;
        let mut lam = Vector::zeros(dim);
        for f in 0..nf {
            lam[lay.multiplier_index(ci, f)] = problem.cell.b()[f];
        }
        match problem.spec.mode() {
            TighteningMode::Variance => {
                let gamma = sigma_bar.matrix() / problem.spec.eta0();
                let quad = s.transpose() * gamma * &s;
                let quad = (&quad + quad.transpose()) * 0.5;
                inst.quadratic_constraints.push(QuadraticConstraint::new(
                    name.clone(),
                    Some(quad),
                    -&t3 - &lam,
                    -d,
                ));
            }
            TighteningMode::StdDev => {
                let lhs = sigma_bar.cholesky_factor().transpose() * &s * problem.spec.quantile();
                inst.cone_constraints.push(ConeConstraint {
                    name: name.clone(),
                    lhs_offset: Vector::zeros(lhs.nrows()),
                    lhs,
                    rhs: &t3 + &lam,
                    rhs_offset: d,
                });
            }
        }
        // A_x^T lambda - sum_i (I (x) b_bar^T) vec K_i = -a_bar.
        for c in 0..n {
            let mut row = Vector::zeros(dim);
            for f in 0..nf {
                row[lay.multiplier_index(ci, f)] = problem.cell.a()[(f, c)];
            }
            for i in 0..nb {
                for r in 0..m {
                    row[lay.gain_index(i, r, c)] = -b_bar[r];
                }
            }
            eq_rows.push((row, -form.a_bar[c]));
        }
        for f in 0..nf {
            inst.nonnegative[lay.multiplier_index(ci, f)] = true;
        }
    }
    inst.eq_matrix = Mat::from_fn(eq_rows.len(), dim, |r, c| eq_rows[r].0[c]);
    inst.eq_rhs = Vector::from_iterator(eq_rows.len(), eq_rows.iter().map(|(_, v)| *v));
    Ok(inst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub name: String,
    pub sigma_k_sq: f64,
    /// Largest surrogate value over the cell vertices.
    pub max_surrogate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexReport {
    pub max_violation: f64,
    pub worst_constraint: String,
    pub worst_vertex: Vec<f64>,
    pub constraints: Vec<ConstraintAudit>,
}

impl VertexReport {
    pub fn certified(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Evaluates every tightened surrogate at every vertex of the cell.
pub fn verify_at_vertices(controller: &OutputFeedbackController, problem: &SynthesisProblem) -> Result<VertexReport> {
    let vertices = problem.cell.enumerate_vertices()?;
    let mut report = VertexReport {
        max_violation: f64::NEG_INFINITY,
        worst_constraint: String::new(),
        worst_vertex: Vec::new(),
        constraints: Vec::new(),
    };
    for NamedForm { name, form } in problem.forms()? {
        let coeffs = build_constraint_coefficients(&form, &problem.landmarks, controller, &problem.spec)?;
        let mut worst = f64::NEG_INFINITY;
        for v in &vertices {
            let s = coeffs.surrogate(v);
            if s > worst {
                worst = s;
            }
            if s > report.max_violation {
                report.max_violation = s;
                report.worst_constraint = name.clone();
                report.worst_vertex = v.iter().copied().collect();
            }
        }
        report.constraints.push(ConstraintAudit {
            name,
            sigma_k_sq: coeffs.sigma_k_sq(),
            max_surrogate: worst,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Synthesized {
    pub controller: OutputFeedbackController,
    pub solve: SolveReport,
    pub verification: VertexReport,
}

/// Solves the design problem and certifies the result at the cell vertices.
pub fn synthesize(problem: &SynthesisProblem) -> Result<Synthesized> {
    let instance = assemble_synthesis_qcqp(problem)?;
    let solve = solve_qcqp(&instance, SOLVER_TOLERANCE)?;
    if solve.status == SolveStatus::Infeasible {
        return Err(Error::SynthesisInfeasible {
            constraint: solve.most_violated.clone(),
            violation: solve.infeasibility_bound.unwrap_or(solve.max_violation),
        });
    }
    let lay = layout_of(problem)?;
    let controller = lay.controller(&solve.solution_vector(), problem.landmark_ids())?;
    let verification = verify_at_vertices(&controller, problem)?;
    if !verification.certified(VERTEX_TOLERANCE) {
        return Err(Error::SynthesisInfeasible {
            constraint: verification.worst_constraint.clone(),
            violation: verification.max_violation,
        });
    }
    Ok(Synthesized {
        controller,
        solve,
        verification,
    })
}

/// Refreshes the inverse-variance fusion after new covariances arrive and
/// moves a single-block controller onto the new virtual landmark without
/// solving again.
pub fn update_on_new_covariance(
    controller: &OutputFeedbackController,
    old_virtual: &VirtualLandmark,
    sources: &[Landmark],
    new_covariances: &[SpdMatrix],
) -> Result<(VirtualLandmark, OutputFeedbackController)> {
    check_dim("controller blocks (single virtual landmark)", 1, controller.num_blocks())?;
    check_dim("new covariance count", sources.len(), new_covariances.len())?;
    let updated = sources
        .iter()
        .zip(new_covariances)
        .map(|(l, c)| Landmark::new(l.id.clone(), l.position.clone(), c.clone()))
        .collect::<Result<Vec<_>>>()?;
    let fresh = fuse_min_variance(&updated)?;
    let id = controller.landmark_ids[0].clone();
    let remixed = remix_controller(controller, &[old_virtual.as_landmark(id.clone())], &fresh, &id)?;
    Ok((fresh, remixed))
}
