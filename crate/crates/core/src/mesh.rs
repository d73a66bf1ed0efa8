//! Uniform triangulation of the unit square.

use crate::error::{Error, Result};

/// Structured P1 mesh of `(0,1)^2`.
///
/// Node `(i, j)` sits at `(i/(nx-1), j/(ny-1))` and has index `i + j*nx`.
/// Each lattice cell is cut along its `(i,j)-(i+1,j+1)` diagonal into two
/// counter-clockwise triangles.
#[derive(Debug, Clone)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
}

impl Mesh {
    pub fn uniform(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 nodes per axis, got {nx}x{ny}"
            )));
        }
        let hx = 1.0 / (nx - 1) as f64;
        let hy = 1.0 / (ny - 1) as f64;
        let mut nodes = Vec::with_capacity(nx * ny);
        let mut boundary = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                // exact endpoints so boundary coordinates are exactly 0 or 1
                let x = if i == nx - 1 { 1.0 } else { i as f64 * hx };
                let y = if j == ny - 1 { 1.0 } else { j as f64 * hy };
                nodes.push([x, y]);
                boundary.push(i == 0 || j == 0 || i == nx - 1 || j == ny - 1);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let sw = i + j * nx;
                let se = sw + 1;
                let nw = sw + nx;
                let ne = nw + 1;
                triangles.push([sw, se, ne]);
                triangles.push([sw, ne, nw]);
            }
        }
        let mut interior = Vec::new();
        let mut dof_of_node = vec![None; nx * ny];
        for (n, &b) in boundary.iter().enumerate() {
            if !b {
                dof_of_node[n] = Some(interior.len());
                interior.push(n);
            }
        }
        Ok(Self {
            nx,
            ny,
            nodes,
            triangles,
            boundary,
            interior,
            dof_of_node,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Lattice spacing `[hx, hy]`.
    pub fn spacing(&self) -> [f64; 2] {
        [1.0 / (self.nx - 1) as f64, 1.0 / (self.ny - 1) as f64]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// `true` for Dirichlet nodes.
    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Node indices of the unknowns, in increasing order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn num_dofs(&self) -> usize {
        self.interior.len()
    }

    pub fn dof_of_node(&self) -> &[Option<usize>] {
        &self.dof_of_node
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area of triangle `t` (positive for counter-clockwise).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangle_vertices(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    /// Expands an interior dof vector to all nodes, with zeros on the boundary.
    pub fn extend_to_nodes(&self, dofs: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (&n, &v) in self.interior.iter().zip(dofs) {
            full[n] = v;
        }
        full
    }

    /// Gradients of the three barycentric (hat) functions on triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p, q, r] = self.triangle_vertices(t);
        let two_area = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
        [
            [(q[1] - r[1]) / two_area, (r[0] - q[0]) / two_area],
            [(r[1] - p[1]) / two_area, (p[0] - r[0]) / two_area],
            [(p[1] - q[1]) / two_area, (q[0] - p[0]) / two_area],
        ]
    }
}
