use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{LinearProgram, LpOutcome};
use crate::{Mat, Vector};

/// Containment tolerance for `A x + b <= 0`.
pub const CONTAINMENT_TOL: f64 = 1e-9;
const DEDUP_TOL: f64 = 1e-7;
const DUPLICATE_TOL: f64 = 1e-9;

/// Affine function `h(x) = normal . x + offset`.
///
/// As a cell face the admissible side is `h(x) <= 0`; as a barrier or
/// Lyapunov function the convention is stated where it is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.normal.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + self.offset
    }

    /// Normal as a `1 x n` row matrix.
    pub fn normal_row(&self) -> Mat {
        Mat::from_row_slice(1, self.normal.len(), &self.normal)
    }

    /// The same set written with the opposite sign, `-h(x)`.
    pub fn negated(&self) -> Self {
        Self {
            normal: self.normal.iter().map(|v| -v).collect(),
            offset: -self.offset,
        }
    }
}

/// Bounded convex polytope `{x : A x + b <= 0}` with unit-norm face rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexCell {
    id: String,
    a: Mat,
    b: Vector,
}

impl ConvexCell {
    /// Normalizes rows to unit normals and checks that the cell is nonempty,
    /// bounded and free of duplicate faces.
    pub fn new(id: impl Into<String>, a: Mat, b: Vector) -> Result<Self> {
        let id = id.into();
        check_dim(&format!("cell `{id}` offsets"), a.nrows(), b.len())?;
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(Error::Domain(format!("cell `{id}` has no faces")));
        }
        let mut a = a;
        let mut b = b;
        for i in 0..a.nrows() {
            let norm = a.row(i).norm();
            if !(norm > 0.0) || !norm.is_finite() || !b[i].is_finite() {
                return Err(Error::Domain(format!("cell `{id}` face {i} has a zero or non-finite normal")));
            }
            a.row_mut(i).scale_mut(1.0 / norm);
            b[i] /= norm;
        }
        for (i, j) in (0..a.nrows()).tuple_combinations() {
            let same_normal = (a.row(i) - a.row(j)).amax() <= DUPLICATE_TOL;
            if same_normal && (b[i] - b[j]).abs() <= DUPLICATE_TOL {
                return Err(Error::DuplicateFace {
                    cell: id,
                    first: i,
                    second: j,
                });
            }
        }
        let cell = Self { id, a, b };
        let (_, radius) = cell.chebyshev_ball().ok_or_else(|| Error::Unbounded(cell.id.clone()))?;
        if !(radius > CONTAINMENT_TOL) {
            return Err(Error::EmptyCell(cell.id.clone()));
        }
        cell.check_bounded()?;
        Ok(cell)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_faces(&self) -> usize {
        self.a.nrows()
    }

    /// Normalized face matrix `A_x`.
    pub fn a(&self) -> &Mat {
        &self.a
    }

    /// Normalized offsets `b_x`.
    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn face(&self, i: usize) -> Halfspace {
        Halfspace::new(self.a.row(i).iter().copied().collect(), self.b[i])
    }

    /// Largest face value `max_j (A_j x + b_j)`; nonpositive inside.
    pub fn max_face_value(&self, x: &Vector) -> Result<f64> {
        check_dim("point dimension", self.dim(), x.len())?;
        Ok((&self.a * x + &self.b).max())
    }

    pub fn contains(&self, x: &Vector) -> Result<bool> {
        Ok(self.max_face_value(x)? <= CONTAINMENT_TOL)
    }

    /// Center and radius of the largest inscribed ball, or `None` if the LP
    /// is unbounded. A negative radius means the cell is empty.
    pub fn chebyshev_ball(&self) -> Option<(Vector, f64)> {
        let n = self.dim();
        let m = self.num_faces();
        // Variables (x, r): A x + r <= -b (unit rows), r <= 1e6.
        let mut a_ub = Mat::zeros(m + 1, n + 1);
        let mut b_ub = Vector::zeros(m + 1);
        for i in 0..m {
            a_ub.view_mut((i, 0), (1, n)).copy_from(&self.a.row(i));
            a_ub[(i, n)] = 1.0;
            b_ub[i] = -self.b[i];
        }
        a_ub[(m, n)] = 1.0;
        b_ub[m] = 1e6;
        let mut c = Vector::zeros(n + 1);
        c[n] = 1.0;
        match LinearProgram::new(c, a_ub, b_ub).solve() {
            LpOutcome::Optimal { x, .. } => {
                let r = x[n];
                (r < 1e6 * (1.0 - 1e-12)).then(|| (x.rows(0, n).into_owned(), r))
            }
            LpOutcome::Infeasible => Some((Vector::zeros(n), -1.0)),
            _ => None,
        }
    }

    /// Chebyshev center of the cell.
    pub fn center(&self) -> Vector {
        self.chebyshev_ball().map(|(c, _)| c).unwrap_or_else(|| Vector::zeros(self.dim()))
    }

    fn check_bounded(&self) -> Result<()> {
        let n = self.dim();
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut c = Vector::zeros(n);
                c[k] = sign;
                let lp = LinearProgram::new(c, self.a.clone(), -&self.b);
                match lp.solve() {
                    LpOutcome::Optimal { .. } => {}
                    LpOutcome::Unbounded => return Err(Error::Unbounded(self.id.clone())),
                    LpOutcome::Infeasible => return Err(Error::EmptyCell(self.id.clone())),
                    LpOutcome::IterationLimit => {
                        return Err(Error::Domain(format!(
                            "boundedness probe did not terminate for cell `{}`",
                            self.id
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Vertices by intersecting every `d`-subset of faces and keeping the
    /// feasible, well-conditioned intersections (deduplicated at 1e-7).
    pub fn enumerate_vertices(&self) -> Result<Vec<Vector>> {
        let d = self.dim();
        let m = self.num_faces();
        if d > 4 {
            return Err(Error::Domain(format!(
                "vertex enumeration supports dimension <= 4, cell `{}` has {d}",
                self.id
            )));
        }
        let mut out: Vec<Vector> = Vec::new();
        for subset in (0..m).combinations(d) {
            let mut sa = Mat::zeros(d, d);
            let mut sb = Vector::zeros(d);
            for (r, &i) in subset.iter().enumerate() {
                sa.set_row(r, &self.a.row(i));
                sb[r] = -self.b[i];
            }
            let sv = sa.clone().singular_values();
            if sv.min() <= 1e-10 * sv.max() {
                continue;
            }
            let Some(x) = sa.lu().solve(&sb) else { continue };
            if (&self.a * &x + &self.b).max() > CONTAINMENT_TOL {
                continue;
            }
            if out.iter().all(|v| (v - &x).norm() > DEDUP_TOL) {
                out.push(x);
            }
        }
        if out.is_empty() {
            return Err(Error::Unbounded(self.id.clone()));
        }
        Ok(out)
    }

    /// 2D vertices in counter-clockwise order (for drawing).
    pub fn polygon(&self) -> Result<Vec<Vector>> {
        let mut verts = self.enumerate_vertices()?;
        if self.dim() != 2 {
            return Ok(verts);
        }
        let c = verts.iter().fold(Vector::zeros(2), |acc, v| acc + v) / verts.len() as f64;
        verts.sort_by(|p, q| {
            let ap = (p[1] - c[1]).atan2(p[0] - c[0]);
            let aq = (q[1] - c[1]).atan2(q[0] - c[0]);
            ap.total_cmp(&aq)
        });
        Ok(verts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn unit_square() -> ConvexCell {
        ConvexCell::new(
            "sq",
            Mat::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            Vector::from_element(4, -1.0),
        )
        .unwrap()
    }

    #[test]
    fn square_containment() {
        let sq = unit_square();
        assert!(sq.contains(&Vector::from_vec(vec![0.0, 0.0])).unwrap());
        assert!(!sq.contains(&Vector::from_vec(vec![2.0, 0.0])).unwrap());
        assert!(sq.contains(&Vector::from_vec(vec![1.0, 0.0])).unwrap());
        assert!(sq.contains(&Vector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn rows_are_normalized() {
        let cell = ConvexCell::new(
            "c",
            Mat::from_row_slice(4, 2, &[2.0, 0.0, -3.0, 0.0, 0.0, 5.0, 0.0, -1.0]),
            Vector::from_vec(vec![-2.0, -3.0, -5.0, -1.0]),
        )
        .unwrap();
        assert_eq!(cell, unit_square_with_id("c"));
    }

    fn unit_square_with_id(id: &str) -> ConvexCell {
        let mut c = unit_square();
        c.id = id.to_string();
        c
    }

    #[test]
    fn square_vertices() {
        let v = unit_square().enumerate_vertices().unwrap();
        assert_eq!(v.len(), 4);
        for s in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            assert!(v.iter().any(|p| (p - Vector::from_vec(s.to_vec())).norm() < 1e-12));
        }
    }

    #[test]
    fn triangle_vertices() {
        let tri = ConvexCell::new(
            "tri",
            Mat::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            Vector::from_vec(vec![0.0, 0.0, -1.0]),
        )
        .unwrap();
        let v = tri.enumerate_vertices().unwrap();
        assert_eq!(v.len(), 3);
        for s in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] {
            assert!(v.iter().any(|p| (p - Vector::from_vec(s.to_vec())).norm() < 1e-12));
        }
    }

    #[test]
    fn rejects_unbounded_empty_and_duplicates() {
        let open = ConvexCell::new(
            "open",
            Mat::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0]),
            Vector::from_element(3, -1.0),
        );
        assert!(matches!(open, Err(Error::Unbounded(_))));
        let empty = ConvexCell::new(
            "empty",
            Mat::from_row_slice(2, 1, &[1.0, -1.0]),
            Vector::from_vec(vec![1.0, 1.0]),
        );
        assert!(matches!(empty, Err(Error::EmptyCell(_))));
        let dup = ConvexCell::new(
            "dup",
            Mat::from_row_slice(5, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 2.0, 0.0]),
            Vector::from_vec(vec![-1.0, -1.0, -1.0, -1.0, -2.0]),
        );
        assert!(matches!(dup, Err(Error::DuplicateFace { first: 0, second: 4, .. })));
    }

    fn random_polygon(rng: &mut ChaCha8Rng) -> ConvexCell {
        // Six tangent halfplanes of the unit circle at random angles.
        loop {
            let mut angles: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let rows: Vec<f64> = angles.iter().flat_map(|t| [t.cos(), t.sin()]).collect();
            let a = Mat::from_row_slice(6, 2, &rows);
            if let Ok(c) = ConvexCell::new("p", a, Vector::from_element(6, -1.0)) {
                return c;
            }
        }
    }

    // Sutherland-Hodgman clipping of a large square by each halfplane; an
    // independent construction of the polygon's vertices.
    fn clip_oracle(cell: &ConvexCell) -> Vec<Vector> {
        let mut poly: Vec<[f64; 2]> = vec![[-1e3, -1e3], [1e3, -1e3], [1e3, 1e3], [-1e3, 1e3]];
        for i in 0..cell.num_faces() {
            let (a0, a1, b) = (cell.a()[(i, 0)], cell.a()[(i, 1)], cell.b()[i]);
            let f = |p: &[f64; 2]| a0 * p[0] + a1 * p[1] + b;
            let mut next = Vec::new();
            for k in 0..poly.len() {
                let p = poly[k];
                let q = poly[(k + 1) % poly.len()];
                let (fp, fq) = (f(&p), f(&q));
                if fp <= 0.0 {
                    next.push(p);
                }
                if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
                    let s = fp / (fp - fq);
                    next.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
                }
            }
            poly = next;
        }
        let mut out: Vec<Vector> = Vec::new();
        for p in poly {
            let v = Vector::from_vec(p.to_vec());
            if out.iter().all(|o| (o - &v).norm() > 1e-9) {
                out.push(v);
            }
        }
        out
    }

    fn hausdorff(a: &[Vector], b: &[Vector]) -> f64 {
        let d = |x: &[Vector], y: &[Vector]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        d(a, b).max(d(b, a))
    }

    #[test]
    fn random_hexagons_match_clipping_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let cell = random_polygon(&mut rng);
            let v = cell.enumerate_vertices().unwrap();
            let oracle = clip_oracle(&cell);
            assert!(hausdorff(&v, &oracle) < 1e-6);
        }
    }

    #[test]
    fn random_hexagon_matches_sampling_hull() {
        // Rejection sampling: every vertex is approached by sampled interior
        // points and no sample lies outside the vertex hull's bounding box.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cell = random_polygon(&mut rng);
        let v = cell.enumerate_vertices().unwrap();
        let (lo, hi) = v.iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
        let mut nearest = vec![f64::INFINITY; v.len()];
        let mut accepted = 0;
        for _ in 0..1_000_000 {
            let p = Vector::from_vec(vec![rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])]);
            if cell.contains(&p).unwrap() {
                accepted += 1;
                for (k, q) in v.iter().enumerate() {
                    nearest[k] = nearest[k].min((q - &p).norm());
                }
            }
        }
        assert!(accepted > 1000);
        assert!(nearest.iter().all(|&d| d < 0.05), "{nearest:?}");
    }

    #[test]
    fn box_3d_and_degenerate_pyramid() {
        let cube = ConvexCell::new(
            "cube",
            Mat::from_row_slice(
                6,
                3,
                &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
            ),
            Vector::from_element(6, -1.0),
        )
        .unwrap();
        assert_eq!(cube.enumerate_vertices().unwrap().len(), 8);
        // Square pyramid: apex lies on four faces, never crashes.
        let pyr = ConvexCell::new(
            "pyr",
            Mat::from_row_slice(
                5,
                3,
                &[1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0],
            ),
            Vector::from_vec(vec![-1.0, -1.0, -1.0, -1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(pyr.enumerate_vertices().unwrap().len(), 5);
    }

    proptest::proptest! {
        #[test]
        fn vertices_satisfy_all_faces(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = random_polygon(&mut rng);
            for v in cell.enumerate_vertices().unwrap() {
                let vals = cell.a() * &v + cell.b();
                proptest::prop_assert!(vals.max() <= 1e-9);
                let active = vals.iter().filter(|x| x.abs() <= 1e-9).count();
                proptest::prop_assert!(active >= cell.dim());
            }
        }

        #[test]
        fn linear_maximum_attained_at_vertex(seed in 0u64..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = random_polygon(&mut rng);
            let verts = cell.enumerate_vertices().unwrap();
            let samples: Vec<Vector> = (0..10_000)
                .map(|_| Vector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]))
                .filter(|p| cell.contains(p).unwrap())
                .collect();
            for _ in 0..50 {
                let c = Vector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                let vmax = verts.iter().map(|v| c.dot(v)).fold(f64::MIN, f64::max);
                let smax = samples.iter().map(|p| c.dot(p)).fold(f64::MIN, f64::max);
                proptest::prop_assert!(vmax >= smax - 1e-12);
            }
        }
    }
}
