//! Convex polytopic cells, their adjacency graph and cell-level routing.

mod cell;

pub use cell::{ConvexCell, Halfspace, CONTAINMENT_TOL};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::numerics::{LinearProgram, LpOutcome};
use crate::{Mat, Vector};

/// Minimum inscribed (d-1)-ball radius for two cells to count as adjacent.
pub const ADJACENCY_RADIUS: f64 = 1e-6;
// Slack granted to the neighbor's faces when testing a shared facet.
const FACE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyEdge {
    pub to: String,
    /// Face index in the source cell that carries the shared facet.
    pub face: usize,
    /// Radius of the largest (d-1)-ball inside the shared facet.
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct Environment {
    cells: Vec<ConvexCell>,
    index: BTreeMap<String, usize>,
    pub landmarks_per_cell: BTreeMap<String, Vec<String>>,
    adjacency: BTreeMap<String, Vec<AdjacencyEdge>>,
}

impl Environment {
    pub fn new(cells: Vec<ConvexCell>, landmarks_per_cell: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, c) in cells.iter().enumerate() {
            if index.insert(c.id().to_string(), i).is_some() {
                return Err(Error::Config(format!("duplicate cell id `{}`", c.id())));
            }
        }
        if let Some(d) = cells.first().map(ConvexCell::dim) {
            for c in &cells {
                crate::error::check_dim(&format!("cell `{}` dimension", c.id()), d, c.dim())?;
            }
        }
        for id in landmarks_per_cell.keys() {
            if !index.contains_key(id) {
                return Err(Error::UnknownCell(id.clone()));
            }
        }
        let mut adjacency: BTreeMap<String, Vec<AdjacencyEdge>> =
            cells.iter().map(|c| (c.id().to_string(), Vec::new())).collect();
        for from in &cells {
            for to in &cells {
                if from.id() == to.id() {
                    continue;
                }
                if let Some((face, radius)) = shared_facet(from, to) {
                    adjacency.get_mut(from.id()).expect("cell present").push(AdjacencyEdge {
                        to: to.id().to_string(),
                        face,
                        radius,
                    });
                }
            }
        }
        Ok(Self {
            cells,
            index,
            landmarks_per_cell,
            adjacency,
        })
    }

    pub fn cells(&self) -> &[ConvexCell] {
        &self.cells
    }

    pub fn cell(&self, id: &str) -> Result<&ConvexCell> {
        self.index
            .get(id)
            .map(|&i| &self.cells[i])
            .ok_or_else(|| Error::UnknownCell(id.to_string()))
    }

    pub fn neighbors(&self, id: &str) -> Result<&[AdjacencyEdge]> {
        self.adjacency
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownCell(id.to_string()))
    }

    /// Face of `from` shared with `to`, if the cells are adjacent.
    pub fn shared_face(&self, from: &str, to: &str) -> Result<Option<usize>> {
        Ok(self.neighbors(from)?.iter().find(|e| e.to == to).map(|e| e.face))
    }

    pub fn landmarks_of(&self, id: &str) -> Result<&[String]> {
        self.cell(id)?;
        Ok(self.landmarks_per_cell.get(id).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Fewest-hop route from `start` to `goal` by A*; among shortest routes
    /// the lexicographically smallest sequence of ids is returned.
    pub fn plan_route(&self, start: &str, goal: &str) -> Result<Vec<String>> {
        let goal_cell = self.cell(goal)?;
        self.cell(start)?;
        let centers: BTreeMap<&str, Vector> = self.cells.iter().map(|c| (c.id(), c.center())).collect();
        // Scaling by the longest edge keeps the heuristic consistent with
        // unit edge costs.
        let longest = self
            .adjacency
            .iter()
            .flat_map(|(from, edges)| edges.iter().map(move |e| (from.as_str(), e.to.as_str())))
            .map(|(a, b)| (&centers[a] - &centers[b]).norm())
            .fold(0.0_f64, f64::max);
        let goal_center = &centers[goal_cell.id()];
        let h = |id: &str| -> f64 {
            if longest > 0.0 {
                (&centers[id] - goal_center).norm() / longest
            } else {
                0.0
            }
        };

        #[derive(PartialEq, PartialOrd)]
        struct Key(f64);
        impl Eq for Key {}
        impl Ord for Key {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.0.total_cmp(&other.0)
            }
        }

        let mut open = BinaryHeap::new();
        let mut closed = BTreeSet::new();
        open.push(Reverse((Key(h(start)), vec![start.to_string()])));
        while let Some(Reverse((_, path))) = open.pop() {
            let node = path.last().expect("nonempty path").clone();
            if !closed.insert(node.clone()) {
                continue;
            }
            if node == goal {
                return Ok(path);
            }
            let g = (path.len() - 1) as f64;
            for e in &self.adjacency[&node] {
                if closed.contains(&e.to) {
                    continue;
                }
                let mut next = path.clone();
                next.push(e.to.clone());
                open.push(Reverse((Key(g + 1.0 + h(&e.to)), next)));
            }
        }
        Err(Error::Unreachable {
            from: start.to_string(),
            to: goal.to_string(),
        })
    }
}

/// Largest face of `from` whose hyperplane carries a full-dimensional patch
/// of `to`'s boundary, with the radius of the inscribed (d-1)-ball.
fn shared_facet(from: &ConvexCell, to: &ConvexCell) -> Option<(usize, f64)> {
    let n = from.dim();
    let mut best: Option<(usize, f64)> = None;
    for f in 0..from.num_faces() {
        let af = from.a().row(f).transpose();
        let proj = Mat::identity(n, n) - &af * af.transpose();
        let rows = from.num_faces() - 1 + to.num_faces() + 1;
        // Variables (x, r): x on the face hyperplane, a ball of radius r in
        // the hyperplane inside both cells.
        let mut a_ub = Mat::zeros(rows, n + 1);
        let mut b_ub = Vector::zeros(rows);
        let mut r = 0;
        for (cell, slack) in [(from, 0.0), (to, FACE_MATCH_TOL)] {
            for j in 0..cell.num_faces() {
                if std::ptr::eq(cell, from) && j == f {
                    continue;
                }
                let aj = cell.a().row(j).transpose();
                a_ub.view_mut((r, 0), (1, n)).copy_from(&aj.transpose());
                a_ub[(r, n)] = (&proj * &aj).norm();
                b_ub[r] = -cell.b()[j] + slack;
                r += 1;
            }
        }
        // Cap the radius so one-dimensional facets (points) stay bounded.
        a_ub[(r, n)] = 1.0;
        b_ub[r] = 1.0;
        let mut a_eq = Mat::zeros(1, n + 1);
        a_eq.view_mut((0, 0), (1, n)).copy_from(&af.transpose());
        let b_eq = Vector::from_element(1, -from.b()[f]);
        let mut c = Vector::zeros(n + 1);
        c[n] = 1.0;
        let lp = LinearProgram::new(c, a_ub, b_ub).with_equalities(a_eq, b_eq);
        if let LpOutcome::Optimal { x, .. } = lp.solve() {
            let radius = x[n];
            if radius > ADJACENCY_RADIUS && best.is_none_or(|(_, r)| radius > r) {
                best = Some((f, radius));
            }
        }
    }
    best
}
