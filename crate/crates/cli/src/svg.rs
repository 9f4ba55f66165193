//! Minimal deterministic SVG writer for cells, landmarks and trajectories.

use std::fmt::Write as _;

use chance_nav_core::{ConvexCell, Mat, Vector};
use nalgebra::SymmetricEigen;

pub const PHYSICAL_COLOR: &str = "#1f4fd1";
pub const VIRTUAL_COLOR: &str = "#d1241f";
const TRAJECTORY_COLOR: &str = "#2e7d32";
const WIDTH: f64 = 640.0;
const MARGIN: f64 = 30.0;

/// First two coordinates; 1D points sit on the horizontal axis.
pub fn planar(v: &Vector) -> [f64; 2] {
    [v[0], if v.len() > 1 { v[1] } else { 0.0 }]
}

fn planar_cov(m: &Mat) -> [[f64; 2]; 2] {
    if m.nrows() > 1 {
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
    } else {
        [[m[(0, 0)], 0.0], [0.0, 0.0]]
    }
}

pub struct Marker {
    pub label: String,
    pub position: Vector,
    pub covariance: Mat,
    pub color: &'static str,
}

pub struct Path {
    pub points: Vec<[f64; 2]>,
    pub exit_time: Option<f64>,
    pub collided: bool,
}

#[derive(Default)]
pub struct Pane {
    pub title: String,
    pub cells: Vec<(Vec<[f64; 2]>, Option<[[f64; 2]; 2]>)>,
    pub markers: Vec<Marker>,
    pub paths: Vec<Path>,
    pub notes: Vec<String>,
}

impl Pane {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Self::default()
        }
    }

    /// Adds a cell outline; `exit` highlights that face.
    pub fn cell(&mut self, cell: &ConvexCell, exit: Option<usize>) -> anyhow::Result<()> {
        let poly: Vec<[f64; 2]> = cell.polygon()?.iter().map(planar).collect();
        let exit_seg = match exit {
            Some(f) => {
                let face = cell.face(f);
                let on: Vec<[f64; 2]> = cell
                    .polygon()?
                    .iter()
                    .filter(|v| face.value(v).abs() < 1e-7)
                    .map(planar)
                    .collect();
                (on.len() >= 2).then(|| [on[0], on[on.len() - 1]])
            }
            None => None,
        };
        self.cells.push((poly, exit_seg));
        Ok(())
    }

    fn base_bounds(&self) -> Option<[f64; 4]> {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut grow = |p: [f64; 2]| {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        };
        for (poly, _) in &self.cells {
            poly.iter().for_each(|p| grow(*p));
        }
        for p in &self.paths {
            p.points.iter().for_each(|q| grow(*q));
        }
        b[0].is_finite().then_some(b)
    }

    /// Plot bounds and the markers that fit. Markers far outside the cells
    /// (deep sequence levels can sit kilometers away) are left off the plot.
    fn layout(&self) -> ([f64; 4], Vec<&Marker>, Vec<&Marker>) {
        let base = self.base_bounds();
        let (mut shown, mut hidden) = (Vec::new(), Vec::new());
        for m in &self.markers {
            let p = planar(&m.position);
            let near = base.is_none_or(|b| {
                let (sx, sy) = ((b[2] - b[0]).max(1.0), (b[3] - b[1]).max(1.0));
                p[0] >= b[0] - sx && p[0] <= b[2] + sx && p[1] >= b[1] - sy && p[1] <= b[3] + sy
            });
            if near {
                shown.push(m);
            } else {
                hidden.push(m);
            }
        }
        let mut b = base.unwrap_or([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]);
        for m in &shown {
            let c = planar_cov(&m.covariance);
            let r = 2.0 * c[0][0].max(c[1][1]).max(0.0).sqrt();
            let p = planar(&m.position);
            b[0] = b[0].min(p[0] - r);
            b[1] = b[1].min(p[1] - r);
            b[2] = b[2].max(p[0] + r);
            b[3] = b[3].max(p[1] + r);
        }
        if !b[0].is_finite() {
            b = [-1.0, -1.0, 1.0, 1.0];
        }
        (b, shown, hidden)
    }
}

fn ellipse(out: &mut String, tf: &dyn Fn([f64; 2]) -> [f64; 2], scale: f64, m: &Marker, k: f64, dash: bool) {
    let c = planar_cov(&m.covariance);
    let eig = SymmetricEigen::new(nalgebra::Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]));
    let (i, j) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let rx = k * eig.eigenvalues[i].max(0.0).sqrt() * scale;
    let ry = k * eig.eigenvalues[j].max(0.0).sqrt() * scale;
    let v = eig.eigenvectors.column(i);
    // Screen y points down, so the rotation flips sign.
    let angle = -v[1].atan2(v[0]).to_degrees();
    let p = tf(planar(&m.position));
    let _ = writeln!(
        out,
        r#"<ellipse cx="{:.3}" cy="{:.3}" rx="{:.3}" ry="{:.3}" transform="rotate({:.3} {:.3} {:.3})" fill="none" stroke="{}" stroke-width="1"{}/>"#,
        p[0],
        p[1],
        rx,
        ry,
        angle + 0.0,
        p[0],
        p[1],
        m.color,
        if dash { r#" stroke-dasharray="4 3""# } else { "" }
    );
}

fn render_pane(out: &mut String, pane: &Pane, x0: f64) -> f64 {
    let (b, shown, hidden) = pane.layout();
    let mut notes = pane.notes.clone();
    for m in &hidden {
        let p = planar(&m.position);
        notes.push(format!("{} off plot at ({:.2}, {:.2})", m.label, p[0], p[1]));
    }
    let span_x = (b[2] - b[0]).max(1e-9);
    let span_y = (b[3] - b[1]).max(1e-9);
    let scale = (WIDTH - 2.0 * MARGIN) / span_x.max(span_y);
    let height = span_y * scale + 2.0 * MARGIN + 20.0 + 14.0 * notes.len() as f64;
    let top = MARGIN + 20.0;
    let tf = move |p: [f64; 2]| [x0 + MARGIN + (p[0] - b[0]) * scale, top + (b[3] - p[1]) * scale];
    let _ = writeln!(out, r#"<g>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="14">{}</text>"#,
        x0 + MARGIN,
        MARGIN,
        escape(&pane.title)
    );
    for (poly, exit) in &pane.cells {
        let pts: Vec<String> = poly
            .iter()
            .map(|p| {
                let q = tf(*p);
                format!("{:.3},{:.3}", q[0], q[1])
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#f2f2f2" stroke="#444444" stroke-width="1.5"/>"##,
            pts.join(" ")
        );
        if let Some([a, c]) = exit {
            let (p, q) = (tf(*a), tf(*c));
            let _ = writeln!(
                out,
                r##"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#2e7d32" stroke-width="3"/>"##,
                p[0], p[1], q[0], q[1]
            );
        }
    }
    for path in &pane.paths {
        let pts: Vec<String> = path
            .points
            .iter()
            .map(|p| {
                let q = tf(*p);
                format!("{:.3},{:.3}", q[0], q[1])
            })
            .collect();
        let color = if path.collided { "#ff6f00" } else { TRAJECTORY_COLOR };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-opacity="0.6"/>"#,
            pts.join(" ")
        );
        if let (Some(t), Some(last)) = (path.exit_time, path.points.last()) {
            let q = tf(*last);
            let _ = writeln!(
                out,
                r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="9">{t:.2} s</text>"#,
                q[0] + 3.0,
                q[1] - 3.0
            );
        }
    }
    for m in shown {
        ellipse(out, &tf, scale, m, 1.0, false);
        ellipse(out, &tf, scale, m, 2.0, true);
        let p = tf(planar(&m.position));
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="4" fill="{}"/>"#,
            p[0], p[1], m.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="10" fill="{}">{}</text>"#,
            p[0] + 6.0,
            p[1] - 6.0,
            m.color,
            escape(&m.label)
        );
    }
    for (i, note) in notes.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="11">{}</text>"#,
            x0 + MARGIN,
            height - MARGIN + 14.0 * i as f64 + 10.0,
            escape(note)
        );
    }
    let _ = writeln!(out, "</g>");
    height
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders panes side by side.
pub fn render(panes: &[Pane]) -> String {
    let mut body = String::new();
    let mut height: f64 = 0.0;
    for (i, p) in panes.iter().enumerate() {
        height = height.max(render_pane(&mut body, p, i as f64 * WIDTH));
    }
    let width = WIDTH * panes.len().max(1) as f64;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_axes_follow_eigenvectors() {
        let mut out = String::new();
        let m = Marker {
            label: "a".into(),
            position: Vector::from_vec(vec![0.0, 0.0]),
            covariance: Mat::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]),
            color: PHYSICAL_COLOR,
        };
        ellipse(&mut out, &|p| p, 10.0, &m, 2.0, false);
        assert!(out.contains(r#"rx="40.000" ry="20.000""#), "{out}");
        assert!(out.contains("rotate(0.000"), "{out}");
    }

    #[test]
    fn render_is_deterministic_and_escaped() {
        let mut p = Pane::new("a<b");
        p.markers.push(Marker {
            label: "l&0".into(),
            position: Vector::from_vec(vec![1.0, 2.0]),
            covariance: Mat::identity(2, 2),
            color: VIRTUAL_COLOR,
        });
        let a = render(std::slice::from_ref(&p));
        assert_eq!(a, render(&[p]));
        assert!(a.contains("a&lt;b") && a.contains("l&amp;0"));
        assert!(a.starts_with("<svg"));
    }
}
