//! Crank-Nicolson integration of the controlled state equation and of its
//! exact discrete adjoint.
//!
//! One step `[t_j, t_j + dt]` solves
//! `(M + dt/2 A(t_mid)) y_{j+1} = (M - dt/2 A(t_mid)) y_j + dt/2 B (u_j + u_{j+1})`
//! with `A(t) = nu K + A_reac(t) + A_conv(t)` sampled at the interval midpoint.
//! Controls are nodal values, piecewise linear in time. The adjoint sweep is
//! the algebraic transpose of this recursion for the trapezoidal objective,
//! so reduced gradients are exact for the discrete problem.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::actuators::ActuatorLoads;
use crate::error::{Error, Result};
use crate::fem::SpatialOperators;
use crate::sparse::{dot, BandedLu, CsrMatrix};

/// Uniform grid `t0 + j*dt`, `j = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// Grid over `[t0, t0 + horizon]`; `horizon` must be a whole number of steps.
    pub fn new(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid horizon {horizon} at t0={t0}")));
        }
        let steps = whole_steps(horizon, dt).ok_or_else(|| {
            Error::GridMismatch(format!("horizon {horizon} is not a multiple of dt={dt}"))
        })?;
        Ok(Self { t0, dt, steps })
    }

    pub fn with_steps(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid grid t0={t0}, dt={dt}")));
        }
        Ok(Self { t0, dt, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }

    /// Trapezoidal quadrature weight of node `j`.
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// Index of the first step on the global lattice `k * dt`, if aligned.
    fn global_offset(&self) -> Option<i64> {
        let s = self.t0 / self.dt;
        let r = s.round();
        ((s - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r as i64)
    }
}

/// Number of `dt` steps in `span`, if `span` is a whole multiple of `dt`.
pub(crate) fn whole_steps(span: f64, dt: f64) -> Option<usize> {
    let m = (span / dt).round();
    if m < 1.0 || (m * dt - span).abs() > 1e-12 * span.abs().max(1.0) {
        None
    } else {
        Some(m as usize)
    }
}

/// Nodal control values `u(t_j) in R^N`, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl ControlTrajectory {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.num_nodes() * dim],
        }
    }

    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() * dim {
            return Err(Error::GridMismatch(format!(
                "{} control values for {} nodes x {dim} actuators",
                values.len(),
                grid.num_nodes()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    /// Evaluates `f(t_j)` at every node.
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(grid: TimeGrid, dim: usize, f: F) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.num_nodes() * dim);
        for j in 0..grid.num_nodes() {
            values.extend(f(grid.time(j)));
        }
        Self::from_values(grid, dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn node_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dim..(j + 1) * self.dim]
    }

    fn check_compatible(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "control dimension mismatch");
        assert_eq!(self.grid.steps, other.grid.steps, "control grid mismatch");
    }

    /// Trapezoidal `L^2(t0, t0+T; R^N)` inner product.
    pub fn inner(&self, other: &Self) -> f64 {
        self.check_compatible(other);
        (0..self.grid.num_nodes())
            .map(|j| self.grid.weight(j) * dot(self.node(j), other.node(j)))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        self.check_compatible(x);
        self.values.iter_mut().zip(&x.values).for_each(|(s, v)| *s += a * v);
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Interior-dof state vectors at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl StateTrajectory {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.num_nodes() * dim],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn node_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.grid.steps)
    }
}

/// Which pointwise control norm enters the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlNorm {
    L1,
    L2,
}

impl ControlNorm {
    /// `|u|_*^2`
    pub fn squared(&self, u: &[f64]) -> f64 {
        match self {
            ControlNorm::L1 => {
                let s: f64 = u.iter().map(|v| v.abs()).sum();
                s * s
            }
            ControlNorm::L2 => dot(u, u),
        }
    }
}

struct StepMatrices {
    /// `M + dt/2 A(t_mid)`, factored
    lhs: BandedLu,
    /// `M - dt/2 A(t_mid)`
    rhs: CsrMatrix,
}

/// Spatial operators, actuators and time step of the semi-discrete system,
/// with factorized Crank-Nicolson step matrices cached by global step index.
pub struct ControlledSystem {
    ops: Arc<SpatialOperators>,
    loads: Arc<ActuatorLoads>,
    dt: f64,
    cache: Mutex<BTreeMap<i64, Arc<StepMatrices>>>,
}

impl std::fmt::Debug for ControlledSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlledSystem")
            .field("ops", &self.ops)
            .field("actuators", &self.loads.num_actuators())
            .field("dt", &self.dt)
            .finish()
    }
}

impl ControlledSystem {
    pub fn new(ops: Arc<SpatialOperators>, loads: Arc<ActuatorLoads>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if loads.num_dofs() != ops.num_dofs() {
            return Err(Error::InvalidArgument(format!(
                "actuator loads have {} dofs, operators {}",
                loads.num_dofs(),
                ops.num_dofs()
            )));
        }
        Ok(Self {
            ops,
            loads,
            dt,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn ops(&self) -> &SpatialOperators {
        &self.ops
    }

    pub fn loads(&self) -> &ActuatorLoads {
        &self.loads
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn num_dofs(&self) -> usize {
        self.ops.num_dofs()
    }

    pub fn num_controls(&self) -> usize {
        self.loads.num_actuators()
    }

    /// Grid over `[t0, t0 + horizon]` with this system's step.
    pub fn grid(&self, t0: f64, horizon: f64) -> Result<TimeGrid> {
        TimeGrid::new(t0, horizon, self.dt)
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<i64> {
        if (grid.dt() - self.dt).abs() > 1e-15 * self.dt {
            return Err(Error::GridMismatch(format!(
                "grid step {} differs from system step {}",
                grid.dt(),
                self.dt
            )));
        }
        grid.global_offset().ok_or_else(|| {
            Error::GridMismatch(format!("start time {} is not a multiple of dt", grid.t0()))
        })
    }

    fn step(&self, global: i64) -> Result<Arc<StepMatrices>> {
        if let Some(s) = self.cache.lock().unwrap().get(&global) {
            return Ok(Arc::clone(s));
        }
        let t_mid = (global as f64 + 0.5) * self.dt;
        let a = self.ops.operator_at(t_mid)?;
        let m = self.ops.mass();
        let lhs = BandedLu::factor(&m.lincomb(1.0, &a, 0.5 * self.dt)?)?;
        let rhs = m.lincomb(1.0, &a, -0.5 * self.dt)?;
        let step = Arc::new(StepMatrices { lhs, rhs });
        self.cache.lock().unwrap().insert(global, Arc::clone(&step));
        Ok(step)
    }

    /// Drops cached step matrices for intervals starting before `t`.
    pub fn evict_before(&self, t: f64) {
        let first = (t / self.dt).floor() as i64;
        let mut cache = self.cache.lock().unwrap();
        *cache = cache.split_off(&first);
    }

    pub fn cached_steps(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// Forward Crank-Nicolson sweep from `y0` under control `u`.
    pub fn solve_state(&self, u: &ControlTrajectory, y0: &[f64]) -> Result<StateTrajectory> {
        let grid = *u.grid();
        let offset = self.check_grid(&grid)?;
        let n = self.num_dofs();
        if y0.len() != n {
            return Err(Error::GridMismatch(format!("initial state has {} dofs, expected {n}", y0.len())));
        }
        if u.dim() != self.num_controls() {
            return Err(Error::GridMismatch(format!(
                "control has {} components, system has {} actuators",
                u.dim(),
                self.num_controls()
            )));
        }
        let mut y = StateTrajectory::zeros(grid, n);
        y.node_mut(0).copy_from_slice(y0);
        let half_dt = 0.5 * self.dt;
        let mut rhs = vec![0.0; n];
        for j in 0..grid.steps() {
            let step = self.step(offset + j as i64)?;
            step.rhs.mul_vec_into(y.node(j), &mut rhs);
            self.loads.apply_add(u.node(j), half_dt, &mut rhs);
            self.loads.apply_add(u.node(j + 1), half_dt, &mut rhs);
            step.lhs.solve_in_place(&mut rhs);
            y.node_mut(j + 1).copy_from_slice(&rhs);
        }
        Ok(y)
    }

    /// Backward sweep of the discrete adjoint for the tracking term
    /// `sum_j w_j 1/2 y_j^T K y_j`. The result satisfies `p_m = 0` and the
    /// smooth reduced gradient is `-B^T` applied to time averages of `p`
    /// (see [`ControlledSystem::smooth_gradient`]).
    pub fn solve_adjoint(&self, y: &StateTrajectory) -> Result<StateTrajectory> {
        let grid = *y.grid();
        let offset = self.check_grid(&grid)?;
        let n = self.num_dofs();
        if y.dim() != n {
            return Err(Error::GridMismatch(format!("state has {} dofs, expected {n}", y.dim())));
        }
        let m = grid.steps();
        let k = self.ops.stiffness();
        let mut p = StateTrajectory::zeros(grid, n);
        let mut rhs = vec![0.0; n];
        let mut ky = vec![0.0; n];
        for node in (1..=m).rev() {
            if node < m {
                let step = self.step(offset + node as i64)?;
                step.rhs.tr_mul_vec_into(p.node(node), &mut rhs);
            } else {
                rhs.iter_mut().for_each(|v| *v = 0.0);
            }
            k.mul_vec_into(y.node(node), &mut ky);
            let w = grid.weight(node);
            rhs.iter_mut().zip(&ky).for_each(|(r, q)| *r -= w * q);
            self.step(offset + node as i64 - 1)?.lhs.solve_transpose_in_place(&mut rhs);
            p.node_mut(node - 1).copy_from_slice(&rhs);
        }
        Ok(p)
    }

    /// Gradient of the tracking term with respect to the nodal controls, in
    /// the trapezoidal `L^2` representation: `-B^T p_0` at the first node,
    /// `-B^T (p_{j-1} + p_j)/2` inside, `-B^T p_{m-1}` at the last node.
    pub fn smooth_gradient(&self, p: &StateTrajectory) -> ControlTrajectory {
        let grid = *p.grid();
        let m = grid.steps();
        let nu = self.num_controls();
        let mut g = ControlTrajectory::zeros(grid, nu);
        for j in 0..=m {
            let bt = if j == 0 {
                self.loads.apply_transpose(p.node(0))
            } else if j == m {
                self.loads.apply_transpose(p.node(m - 1))
            } else {
                let a = self.loads.apply_transpose(p.node(j - 1));
                let b = self.loads.apply_transpose(p.node(j));
                a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
            };
            g.node_mut(j).iter_mut().zip(&bt).for_each(|(gi, v)| *gi = -v);
        }
        g
    }

    /// Trapezoidal `1/2 int ||y||_V^2`.
    pub fn tracking_cost(&self, y: &StateTrajectory) -> f64 {
        let grid = y.grid();
        (0..grid.num_nodes())
            .map(|j| grid.weight(j) * 0.5 * self.ops.stiffness().quad_form(y.node(j)))
            .sum()
    }
}

/// Trapezoidal `(beta/2) int |u|_*^2`.
pub fn control_cost(u: &ControlTrajectory, beta: f64, norm: ControlNorm) -> f64 {
    let grid = u.grid();
    (0..grid.num_nodes())
        .map(|j| grid.weight(j) * 0.5 * beta * norm.squared(u.node(j)))
        .sum()
}

/// `J = int 1/2 ||y||_V^2 + beta/2 |u|_*^2 dt` with trapezoidal weights.
pub fn objective_eval(
    ops: &SpatialOperators,
    y: &StateTrajectory,
    u: &ControlTrajectory,
    beta: f64,
    norm: ControlNorm,
) -> Result<f64> {
    if y.grid().steps() != u.grid().steps() || (y.grid().dt() - u.grid().dt()).abs() > 1e-15 {
        return Err(Error::GridMismatch("state and control grids differ".into()));
    }
    let grid = y.grid();
    let track: f64 = (0..grid.num_nodes())
        .map(|j| grid.weight(j) * 0.5 * ops.stiffness().quad_form(y.node(j)))
        .sum();
    Ok(track + control_cost(u, beta, norm))
}
