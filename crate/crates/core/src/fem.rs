//! P1 finite element assembly on [`Mesh`] and the discrete function-space norms.
//!
//! Full-node matrices (boundary rows included) are returned by the
//! `assemble_*` functions; [`SpatialOperators`] holds the versions restricted
//! to interior dofs, which is where homogeneous Dirichlet conditions are
//! imposed.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{BandedLu, CsrMatrix};

/// Time- and space-dependent coefficients of
/// `y_t - nu*Lap(y) + a y + div(b y) = f`.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn reaction(&self, t: f64, x: [f64; 2]) -> f64;
    fn convection(&self, t: f64, x: [f64; 2]) -> [f64; 2];
}

/// The exponentially unstable benchmark:
/// `a(t,x) = -2.8 - 0.8|sin(t + x1)|`, `b(t,x) = (-0.01(x1+x2), 0.2 x1 x2 cos t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BenchmarkCoefficients;

impl Coefficients for BenchmarkCoefficients {
    fn reaction(&self, t: f64, x: [f64; 2]) -> f64 {
        -2.8 - 0.8 * (t + x[0]).sin().abs()
    }

    fn convection(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        [-0.01 * (x[0] + x[1]), 0.2 * x[0] * x[1] * t.cos()]
    }
}

/// Spatially and temporally constant coefficients.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantCoefficients {
    pub reaction: f64,
    pub convection: [f64; 2],
}

impl Coefficients for ConstantCoefficients {
    fn reaction(&self, _t: f64, _x: [f64; 2]) -> f64 {
        self.reaction
    }

    fn convection(&self, _t: f64, _x: [f64; 2]) -> [f64; 2] {
        self.convection
    }
}

/// Edge-midpoint rule: exact for quadratics, weight `area/3` per point.
/// Entry `k` holds the barycentric coordinates of midpoint `k`.
const MIDPOINT_BARY: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

fn midpoint(v: &[[f64; 2]; 3], bary: &[f64; 3]) -> [f64; 2] {
    [
        bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
        bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
    ]
}

fn check_finite(value: f64, t: f64, x: [f64; 2]) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteCoefficient {
            value,
            t,
            x1: x[0],
            x2: x[1],
        })
    }
}

/// Loops over triangles and scatters 3x3 element matrices. With `dofs`
/// given, only interior rows/columns are kept and renumbered.
fn assemble_elements<F>(mesh: &Mesh, dofs: Option<&[Option<usize>]>, mut element: F) -> Result<CsrMatrix>
where
    F: FnMut(usize) -> Result<[[f64; 3]; 3]>,
{
    let n = dofs.map_or(mesh.num_nodes(), |_| mesh.num_dofs());
    let mut triplets = Vec::with_capacity(9 * mesh.triangles().len());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let ke = element(t)?;
        for a in 0..3 {
            let row = match dofs {
                Some(map) => match map[tri[a]] {
                    Some(r) => r,
                    None => continue,
                },
                None => tri[a],
            };
            for b in 0..3 {
                let col = match dofs {
                    Some(map) => match map[tri[b]] {
                        Some(c) => c,
                        None => continue,
                    },
                    None => tri[b],
                };
                triplets.push((row, col, ke[a][b]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

fn mass_element(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let s = mesh.signed_area(t) / 12.0;
    [[2.0 * s, s, s], [s, 2.0 * s, s], [s, s, 2.0 * s]]
}

fn stiffness_element(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let area = mesh.signed_area(t);
    let g = mesh.hat_gradients(t);
    let mut ke = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            ke[a][b] = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    ke
}

fn reaction_element(mesh: &Mesh, coeffs: &dyn Coefficients, t: f64, tri: usize) -> Result<[[f64; 3]; 3]> {
    let verts = mesh.triangle_vertices(tri);
    let w = mesh.signed_area(tri) / 3.0;
    let mut ke = [[0.0; 3]; 3];
    for bary in &MIDPOINT_BARY {
        let x = midpoint(&verts, bary);
        let a = check_finite(coeffs.reaction(t, x), t, x)?;
        for i in 0..3 {
            for j in 0..3 {
                ke[i][j] += w * a * bary[i] * bary[j];
            }
        }
    }
    Ok(ke)
}

fn convection_element(mesh: &Mesh, coeffs: &dyn Coefficients, t: f64, tri: usize) -> Result<[[f64; 3]; 3]> {
    let verts = mesh.triangle_vertices(tri);
    let w = mesh.signed_area(tri) / 3.0;
    let g = mesh.hat_gradients(tri);
    let mut ke = [[0.0; 3]; 3];
    for bary in &MIDPOINT_BARY {
        let x = midpoint(&verts, bary);
        let b = coeffs.convection(t, x);
        check_finite(b[0], t, x)?;
        check_finite(b[1], t, x)?;
        for i in 0..3 {
            let b_dot_grad = b[0] * g[i][0] + b[1] * g[i][1];
            for j in 0..3 {
                // weak form of div(b y): -(b y, grad phi_i)
                ke[i][j] -= w * bary[j] * b_dot_grad;
            }
        }
    }
    Ok(ke)
}

/// Exact P1 mass matrix over all nodes.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    assemble_elements(mesh, None, |t| Ok(mass_element(mesh, t))).expect("mesh indices in range")
}

/// Exact P1 stiffness matrix `(grad phi_j, grad phi_i)` over all nodes.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    assemble_elements(mesh, None, |t| Ok(stiffness_element(mesh, t))).expect("mesh indices in range")
}

/// `(a(t) phi_j, phi_i)` over all nodes, edge-midpoint quadrature.
pub fn assemble_reaction(mesh: &Mesh, coeffs: &dyn Coefficients, t: f64) -> Result<CsrMatrix> {
    assemble_elements(mesh, None, |tri| reaction_element(mesh, coeffs, t, tri))
}

/// `-(b(t) phi_j, grad phi_i)` over all nodes, edge-midpoint quadrature.
pub fn assemble_convection(mesh: &Mesh, coeffs: &dyn Coefficients, t: f64) -> Result<CsrMatrix> {
    assemble_elements(mesh, None, |tri| convection_element(mesh, coeffs, t, tri))
}

/// Nodal interpolant of `f` restricted to the interior dofs (boundary values
/// are dropped, i.e. set to zero).
pub fn project_function<F>(mesh: &Mesh, f: F) -> Result<Vec<f64>>
where
    F: Fn([f64; 2]) -> f64,
{
    mesh.interior_nodes()
        .iter()
        .map(|&n| {
            let x = mesh.nodes()[n];
            let v = f(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidArgument(format!(
                    "non-finite value {v} at ({}, {})",
                    x[0], x[1]
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SobolevNorm {
    /// `L^2(Omega)`
    H,
    /// `H^1_0(Omega)`, the gradient seminorm
    V,
    /// dual of `V`, through the stiffness Riesz map
    #[serde(rename = "vprime")]
    VPrime,
}

/// Mass/stiffness matrices on interior dofs plus the data needed to assemble
/// the time-dependent part of the spatial operator.
pub struct SpatialOperators {
    mesh: Mesh,
    nu: f64,
    coefficients: Arc<dyn Coefficients>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    stiffness_lu: BandedLu,
}

impl fmt::Debug for SpatialOperators {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialOperators")
            .field("nx", &self.mesh.nx())
            .field("ny", &self.mesh.ny())
            .field("dofs", &self.mesh.num_dofs())
            .field("nu", &self.nu)
            .field("coefficients", &self.coefficients)
            .finish()
    }
}

impl SpatialOperators {
    pub fn new(mesh: Mesh, nu: f64, coefficients: Arc<dyn Coefficients>) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("diffusion must be positive, got {nu}")));
        }
        if mesh.num_dofs() == 0 {
            return Err(Error::InvalidMesh("mesh has no interior nodes".into()));
        }
        let map = mesh.dof_of_node().to_vec();
        let mass = assemble_elements(&mesh, Some(&map), |t| Ok(mass_element(&mesh, t)))?;
        let stiffness = assemble_elements(&mesh, Some(&map), |t| Ok(stiffness_element(&mesh, t)))?;
        let stiffness_lu = BandedLu::factor(&stiffness)?;
        Ok(Self {
            mesh,
            nu,
            coefficients,
            mass,
            stiffness,
            stiffness_lu,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coefficients.as_ref()
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_dofs()
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Interior reaction matrix at time `t`.
    pub fn reaction(&self, t: f64) -> Result<CsrMatrix> {
        let map = self.mesh.dof_of_node();
        assemble_elements(&self.mesh, Some(map), |tri| {
            reaction_element(&self.mesh, self.coefficients.as_ref(), t, tri)
        })
    }

    /// Interior convection matrix at time `t`.
    pub fn convection(&self, t: f64) -> Result<CsrMatrix> {
        let map = self.mesh.dof_of_node();
        assemble_elements(&self.mesh, Some(map), |tri| {
            convection_element(&self.mesh, self.coefficients.as_ref(), t, tri)
        })
    }

    /// `A(t) = nu K + A_reac(t) + A_conv(t)` on interior dofs.
    pub fn operator_at(&self, t: f64) -> Result<CsrMatrix> {
        let map = self.mesh.dof_of_node();
        let coeffs = self.coefficients.as_ref();
        let variable = assemble_elements(&self.mesh, Some(map), |tri| {
            let r = reaction_element(&self.mesh, coeffs, t, tri)?;
            let c = convection_element(&self.mesh, coeffs, t, tri)?;
            let mut ke = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    ke[i][j] = r[i][j] + c[i][j];
                }
            }
            Ok(ke)
        })?;
        variable.lincomb(1.0, &self.stiffness, self.nu)
    }

    /// `sqrt(f^T K^{-1} f)` for a load vector `f` (dual pairing with hats).
    pub fn dual_norm_of_load(&self, load: &[f64]) -> f64 {
        let z = self.stiffness_lu.solve(load);
        crate::sparse::dot(load, &z).max(0.0).sqrt()
    }

    pub fn norm(&self, v: &[f64], kind: SobolevNorm) -> f64 {
        match kind {
            SobolevNorm::H => self.mass.quad_form(v).max(0.0).sqrt(),
            SobolevNorm::V => self.stiffness.quad_form(v).max(0.0).sqrt(),
            SobolevNorm::VPrime => self.dual_norm_of_load(&self.mass.mul_vec(v)),
        }
    }

    pub fn h_norm(&self, v: &[f64]) -> f64 {
        self.norm(v, SobolevNorm::H)
    }

    pub fn v_norm(&self, v: &[f64]) -> f64 {
        self.norm(v, SobolevNorm::V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sinsin(x: [f64; 2]) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin()
    }

    fn ops(n: usize, coeffs: Arc<dyn Coefficients>) -> SpatialOperators {
        SpatialOperators::new(Mesh::uniform(n, n).unwrap(), 0.1, coeffs).unwrap()
    }

    #[test]
    fn mass_integrates_constants() {
        for n in [2, 3, 9, 33] {
            let mesh = Mesh::uniform(n, n).unwrap();
            let m = assemble_mass(&mesh);
            let ones = vec![1.0; mesh.num_nodes()];
            assert!((m.quad_form(&ones) - 1.0).abs() < 1e-12);
            let c = vec![-2.5; mesh.num_nodes()];
            assert!((m.quad_form(&c) - 6.25).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_kills_constants() {
        let mesh = Mesh::uniform(9, 7).unwrap();
        let k = assemble_stiffness(&mesh);
        let kc = k.mul_vec(&vec![3.0; mesh.num_nodes()]);
        assert!(kc.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_by_two_stiffness_by_hand() {
        // Nodes 0=(0,0) 1=(1,0) 2=(0,1) 3=(1,1); triangles (0,1,3), (0,3,2).
        // Hand assembly of the two right triangles with legs of length 1.
        let k = assemble_stiffness(&Mesh::uniform(2, 2).unwrap()).to_dense();
        let expected = [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn matrices_are_symmetric_and_definite_on_small_meshes() {
        for n in 3..=9 {
            let op = ops(n, Arc::new(ConstantCoefficients::default()));
            assert!(op.mass().symmetry_defect() < 1e-14);
            assert!(op.stiffness().symmetry_defect() < 1e-14);
            for mat in [op.mass(), op.stiffness()] {
                let dense = mat.to_dense();
                assert!(smallest_eigenvalue_sym(&dense) > 0.0);
            }
        }
    }

    /// Smallest eigenvalue of a small symmetric matrix via cyclic Jacobi.
    fn smallest_eigenvalue_sym(a: &[Vec<f64>]) -> f64 {
        let n = a.len();
        let mut a = a.to_vec();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn sine_mode_norms_match_analytic_values() {
        let op = ops(33, Arc::new(ConstantCoefficients::default()));
        let y = project_function(op.mesh(), sinsin).unwrap();
        let h2 = op.h_norm(&y).powi(2);
        let v2 = op.v_norm(&y).powi(2);
        assert!((h2 - 0.25).abs() < 1e-3, "{h2}");
        assert!((v2 / (PI * PI / 2.0) - 1.0).abs() < 0.01, "{v2}");
        // y is (close to) the first Dirichlet eigenfunction: ||y||_V' = ||y||_H / sqrt(2 pi^2)
        let vp = op.norm(&y, SobolevNorm::VPrime);
        let expected = op.h_norm(&y) / (2.0 * PI * PI).sqrt();
        assert!((vp / expected - 1.0).abs() < 0.01, "{vp} vs {expected}");
    }

    #[test]
    fn zero_vector_has_zero_norms() {
        let op = ops(5, Arc::new(ConstantCoefficients::default()));
        let z = vec![0.0; op.num_dofs()];
        for kind in [SobolevNorm::H, SobolevNorm::V, SobolevNorm::VPrime] {
            assert_eq!(op.norm(&z, kind), 0.0);
        }
    }

    #[test]
    fn norm_errors_decrease_under_refinement() {
        let mut last = (f64::INFINITY, f64::INFINITY);
        for n in [9, 17, 33] {
            let op = ops(n, Arc::new(ConstantCoefficients::default()));
            let y = project_function(op.mesh(), sinsin).unwrap();
            let eh = (op.h_norm(&y).powi(2) - 0.25).abs();
            let ev = (op.v_norm(&y).powi(2) - PI * PI / 2.0).abs();
            assert!(eh < last.0 && ev < last.1, "n={n}: {eh} {ev}");
            last = (eh, ev);
        }
    }

    #[test]
    fn smallest_generalized_eigenvalue_is_close_to_two_pi_squared() {
        // inverse iteration on K x = lambda M x
        let op = ops(33, Arc::new(ConstantCoefficients::default()));
        let lu = BandedLu::factor(op.stiffness()).unwrap();
        let mut x = vec![1.0; op.num_dofs()];
        let mut lambda = 0.0;
        for _ in 0..50 {
            let mut z = op.mass().mul_vec(&x);
            lu.solve_in_place(&mut z);
            let nrm = op.mass().quad_form(&z).sqrt();
            x = z.iter().map(|v| v / nrm).collect();
            lambda = op.stiffness().quad_form(&x) / op.mass().quad_form(&x);
        }
        let target = 2.0 * PI * PI;
        assert!((lambda / target - 1.0).abs() < 0.01, "{lambda}");
    }

    #[test]
    fn projection_of_initial_state() {
        let mesh = Mesh::uniform(33, 33).unwrap();
        let y0 = project_function(&mesh, |x| 3.0 * sinsin(x)).unwrap();
        let full = mesh.extend_to_nodes(&y0);
        let center = 16 + 16 * 33;
        assert_eq!(mesh.nodes()[center], [0.5, 0.5]);
        assert!((full[center] - 3.0).abs() < 1e-14);
        for (n, &b) in mesh.boundary_mask().iter().enumerate() {
            if b {
                assert_eq!(full[n], 0.0);
            }
        }
        assert!(project_function(&mesh, |_| 0.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(project_function(&mesh, |_| f64::NAN).is_err());
    }

    #[test]
    fn reaction_with_unit_coefficient_is_mass() {
        let mesh = Mesh::uniform(6, 5).unwrap();
        let one = ConstantCoefficients { reaction: 1.0, convection: [0.0; 2] };
        let r = assemble_reaction(&mesh, &one, 0.3).unwrap().to_dense();
        let m = assemble_mass(&mesh).to_dense();
        for i in 0..r.len() {
            for j in 0..r.len() {
                assert!((r[i][j] - m[i][j]).abs() < 1e-15);
            }
        }
        let zero = ConstantCoefficients::default();
        assert!(assemble_reaction(&mesh, &zero, 0.0).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(assemble_convection(&mesh, &zero, 0.0).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[derive(Debug)]
    struct Poisoned;
    impl Coefficients for Poisoned {
        fn reaction(&self, _t: f64, x: [f64; 2]) -> f64 {
            if x[0] > 0.5 { f64::NAN } else { 0.0 }
        }
        fn convection(&self, _t: f64, _x: [f64; 2]) -> [f64; 2] {
            [f64::INFINITY, 0.0]
        }
    }

    #[test]
    fn non_finite_coefficients_are_rejected() {
        let mesh = Mesh::uniform(4, 4).unwrap();
        assert!(matches!(
            assemble_reaction(&mesh, &Poisoned, 0.0),
            Err(Error::NonFiniteCoefficient { .. })
        ));
        assert!(assemble_convection(&mesh, &Poisoned, 0.0).is_err());
    }

    #[test]
    fn constant_convection_annihilates_constants_in_interior_rows() {
        let mesh = Mesh::uniform(7, 7).unwrap();
        let b = ConstantCoefficients { reaction: 0.0, convection: [0.3, -1.1] };
        let c = assemble_convection(&mesh, &b, 0.0).unwrap();
        let c1 = c.mul_vec(&vec![1.0; mesh.num_nodes()]);
        for &n in mesh.interior_nodes() {
            assert!(c1[n].abs() < 1e-14, "row {n}: {}", c1[n]);
        }
    }

    #[test]
    fn operator_combines_parts() {
        let op = ops(6, Arc::new(BenchmarkCoefficients));
        let t = 0.7;
        let a = op.operator_at(t).unwrap().to_dense();
        let r = op.reaction(t).unwrap().to_dense();
        let c = op.convection(t).unwrap().to_dense();
        let k = op.stiffness().to_dense();
        for i in 0..a.len() {
            for j in 0..a.len() {
                let e = 0.1 * k[i][j] + r[i][j] + c[i][j];
                assert!((a[i][j] - e).abs() < 1e-14);
            }
        }
    }
}
