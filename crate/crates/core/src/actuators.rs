//! Indicator-function actuators on uniformly partitioned rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Axis-aligned open box `(x[0], x[1]) x (y[0], y[1])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn new(x: [f64; 2], y: [f64; 2]) -> Self {
        Self { x, y }
    }

    pub fn area(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.y[1] - self.y[0])
    }

    fn overlap_area(&self, other: &Rect) -> f64 {
        let w = self.x[1].min(other.x[1]) - self.x[0].max(other.x[0]);
        let h = self.y[1].min(other.y[1]) - self.y[0].max(other.y[0]);
        w.max(0.0) * h.max(0.0)
    }
}

/// A parent rectangle and how many equal pieces to cut it into per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorRegion {
    pub rect: Rect,
    pub subdivisions: [usize; 2],
}

/// The actuator family `{1_{R_i}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorSet {
    regions: Vec<ActuatorRegion>,
    supports: Vec<Rect>,
}

impl ActuatorSet {
    /// Partitions every region into `d1 * d2` congruent sub-rectangles.
    /// Actuators are numbered region by region, `x` index fastest.
    pub fn rectangular(regions: &[ActuatorRegion]) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::InvalidActuators("no actuator regions given".into()));
        }
        for (k, r) in regions.iter().enumerate() {
            let Rect { x, y } = r.rect;
            let inside = [x, y].iter().all(|iv| 0.0 <= iv[0] && iv[0] < iv[1] && iv[1] <= 1.0);
            if !inside || ![x[0], x[1], y[0], y[1]].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidActuators(format!(
                    "region {k} {:?} is not a nondegenerate box inside the unit square",
                    r.rect
                )));
            }
            if r.subdivisions.contains(&0) {
                return Err(Error::InvalidActuators(format!(
                    "region {k} has a zero subdivision count"
                )));
            }
            for (l, other) in regions.iter().enumerate().take(k) {
                if r.rect.overlap_area(&other.rect) > 0.0 {
                    return Err(Error::InvalidActuators(format!("regions {l} and {k} overlap")));
                }
            }
        }

        let mut supports = Vec::new();
        for r in regions {
            let [d1, d2] = r.subdivisions;
            let Rect { x, y } = r.rect;
            let piece = |iv: [f64; 2], d: usize, k: usize| {
                let w = (iv[1] - iv[0]) / d as f64;
                let hi = if k + 1 == d { iv[1] } else { iv[0] + (k + 1) as f64 * w };
                [iv[0] + k as f64 * w, hi]
            };
            for k2 in 0..d2 {
                for k1 in 0..d1 {
                    supports.push(Rect::new(piece(x, d1, k1), piece(y, d2, k2)));
                }
            }
        }
        Ok(Self {
            regions: regions.to_vec(),
            supports,
        })
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn regions(&self) -> &[ActuatorRegion] {
        &self.regions
    }

    pub fn supports(&self) -> &[Rect] {
        &self.supports
    }

    /// `N * max_i ||Phi_i||_H^2`; for indicators the squared norm is the area.
    pub fn c_u(&self) -> f64 {
        let max_area = self.supports.iter().map(Rect::area).fold(0.0, f64::max);
        self.len() as f64 * max_area
    }

    /// Fraction of the unit square covered by the actuator supports.
    pub fn coverage_fraction(&self) -> f64 {
        self.supports.iter().map(Rect::area).sum()
    }

    /// Assembles the load matrix `((1_{R_i}, phi_j))_{j,i}`.
    pub fn assemble_loads(&self, mesh: &Mesh) -> ActuatorLoads {
        let n_nodes = mesh.num_nodes();
        let mut full = vec![0.0; n_nodes * self.len()];
        for (i, rect) in self.supports.iter().enumerate() {
            let col = &mut full[i * n_nodes..(i + 1) * n_nodes];
            for (t, tri) in mesh.triangles().iter().enumerate() {
                let verts = mesh.triangle_vertices(t);
                let (lo_x, hi_x) = min_max(verts.iter().map(|v| v[0]));
                let (lo_y, hi_y) = min_max(verts.iter().map(|v| v[1]));
                if hi_x <= rect.x[0] || lo_x >= rect.x[1] || hi_y <= rect.y[0] || lo_y >= rect.y[1] {
                    continue;
                }
                let poly = clip_to_rect(&verts, rect);
                let (area, centroid) = polygon_area_centroid(&poly);
                if area <= 0.0 {
                    continue;
                }
                let bary = barycentric(&verts, centroid);
                for a in 0..3 {
                    col[tri[a]] += area * bary[a];
                }
            }
        }
        let interior = mesh.interior_nodes();
        let n_dofs = interior.len();
        let mut dofs = vec![0.0; n_dofs * self.len()];
        for i in 0..self.len() {
            for (d, &node) in interior.iter().enumerate() {
                dofs[i * n_dofs + d] = full[i * n_nodes + node];
            }
        }
        ActuatorLoads {
            n_nodes,
            n_dofs,
            n_actuators: self.len(),
            full,
            dofs,
        }
    }
}

/// How an actuator shape enters the discrete equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActuatorScaling {
    /// Load vector `(1_R, phi_j)`.
    #[default]
    Galerkin,
    /// Galerkin load divided by the cell area `hx * hy`, which approximates
    /// injecting the nodal values of `1_R` without a mass matrix.
    Nodal,
}

impl ActuatorScaling {
    pub fn gain(&self, mesh: &Mesh) -> f64 {
        match self {
            ActuatorScaling::Galerkin => 1.0,
            ActuatorScaling::Nodal => {
                let [hx, hy] = mesh.spacing();
                1.0 / (hx * hy)
            }
        }
    }
}

/// Column-major load matrix of an [`ActuatorSet`], on all nodes and on the
/// interior dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorLoads {
    n_nodes: usize,
    n_dofs: usize,
    n_actuators: usize,
    full: Vec<f64>,
    dofs: Vec<f64>,
}

impl ActuatorLoads {
    /// The same loads multiplied by `gain`, i.e. actuators `gain * 1_{R_i}`.
    pub fn scaled(&self, gain: f64) -> Self {
        let mut out = self.clone();
        out.full.iter_mut().chain(out.dofs.iter_mut()).for_each(|v| *v *= gain);
        out
    }

    pub fn num_actuators(&self) -> usize {
        self.n_actuators
    }

    pub fn num_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Column `i` over all mesh nodes (before Dirichlet elimination).
    pub fn full_column(&self, i: usize) -> &[f64] {
        &self.full[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    /// Column `i` over interior dofs.
    pub fn column(&self, i: usize) -> &[f64] {
        &self.dofs[i * self.n_dofs..(i + 1) * self.n_dofs]
    }

    /// `out += scale * B u`
    pub fn apply_add(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n_actuators);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let s = scale * ui;
            for (o, b) in out.iter_mut().zip(self.column(i)) {
                *o += s * b;
            }
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        self.apply_add(u, 1.0, &mut out);
        out
    }

    /// `B^T p`
    pub fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        (0..self.n_actuators)
            .map(|i| crate::sparse::dot(self.column(i), p))
            .collect()
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Sutherland-Hodgman clipping of a convex polygon by the four half-planes
/// of `rect`.
fn clip_to_rect(tri: &[[f64; 2]; 3], rect: &Rect) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = tri.to_vec();
    // (axis, bound, keep_greater)
    let planes = [
        (0, rect.x[0], true),
        (0, rect.x[1], false),
        (1, rect.y[0], true),
        (1, rect.y[1], false),
    ];
    for (axis, bound, keep_greater) in planes {
        if poly.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_greater { p[axis] >= bound } else { p[axis] <= bound };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for k in 0..poly.len() {
            let cur = poly[k];
            let prev = poly[(k + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let s = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut q = [prev[0] + s * (cur[0] - prev[0]), prev[1] + s * (cur[1] - prev[1])];
                q[axis] = bound;
                out.push(q);
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
    }
    poly
}

fn polygon_area_centroid(poly: &[[f64; 2]]) -> (f64, [f64; 2]) {
    if poly.len() < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let mut a2 = 0.0;
    let (mut cx, mut cy) = (0.0, 0.0);
    for k in 0..poly.len() {
        let p = poly[k];
        let q = poly[(k + 1) % poly.len()];
        let cross = p[0] * q[1] - q[0] * p[1];
        a2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    if a2.abs() < 1e-300 {
        return (0.0, [0.0, 0.0]);
    }
    (0.5 * a2, [cx / (3.0 * a2), cy / (3.0 * a2)])
}

fn barycentric(tri: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = *tri;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}
