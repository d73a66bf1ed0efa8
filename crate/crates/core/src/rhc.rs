//! Receding horizon loop.
//!
//! Window `k` solves the open-loop problem on `[t_k, t_k + T]` from the
//! current state, keeps its control on `[t_k, t_k + delta)` and its state on
//! `[t_k, t_k + delta]`, and hands the state at `t_k + delta` to the next
//! window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{solve_ocp, OcpProblem, OcpSolution, SolverOptions};
use crate::timestepping::{whole_steps, ControlNorm, ControlTrajectory, ControlledSystem, StateTrajectory, TimeGrid};

/// Perturbation of the state handed to each window. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    /// Each handed-off dof is perturbed by a uniform sample of `[-amplitude, amplitude]`.
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhcConfig {
    /// Prediction horizon `T`.
    pub horizon: f64,
    /// Sampling time `delta`.
    pub delta: f64,
    /// Final time `T_inf`.
    pub t_inf: f64,
    pub beta: f64,
    pub norm: ControlNorm,
    pub dt: f64,
    pub solver: SolverOptions,
    /// Permits `T == delta`, where the loop still runs but no decrease of
    /// the value function can be expected.
    pub allow_horizon_eq_delta: bool,
    pub noise: Option<MeasurementNoise>,
}

impl Default for RhcConfig {
    /// The l2 benchmark: `T = 1.5`, `delta = 0.25`, `T_inf = 10`, `beta = 1000`, `dt = 0.0125`.
    fn default() -> Self {
        Self {
            horizon: 1.5,
            delta: 0.25,
            t_inf: 10.0,
            beta: 1000.0,
            norm: ControlNorm::L2,
            dt: 0.0125,
            solver: SolverOptions::default(),
            allow_horizon_eq_delta: false,
            noise: None,
        }
    }
}

impl RhcConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("horizon", self.horizon),
            ("delta", self.delta),
            ("t_inf", self.t_inf),
            ("beta", self.beta),
            ("dt", self.dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive and finite, got {v}")));
            }
        }
        let eq = (self.horizon - self.delta).abs() <= 1e-12 * self.delta;
        if self.horizon < self.delta && !eq {
            return Err(Error::config("horizon", format!("T={} is shorter than delta={}", self.horizon, self.delta)));
        }
        if eq && !self.allow_horizon_eq_delta {
            return Err(Error::config(
                "horizon",
                format!("T equals delta={}; set allow_horizon_eq_delta to run it", self.delta),
            ));
        }
        for (key, v) in [("delta", self.delta), ("horizon", self.horizon), ("t_inf", self.t_inf)] {
            if whole_steps(v, self.dt).is_none() {
                return Err(Error::config(key, format!("{v} is not a multiple of dt={}", self.dt)));
            }
        }
        if whole_steps(self.t_inf, self.delta).is_none() {
            return Err(Error::config("t_inf", format!("{} is not a multiple of delta={}", self.t_inf, self.delta)));
        }
        if let Some(noise) = &self.noise {
            if !(noise.amplitude >= 0.0 && noise.amplitude.is_finite()) {
                return Err(Error::config("noise.amplitude", "must be nonnegative"));
            }
        }
        self.solver.validate()
    }

    pub fn steps_per_window(&self) -> usize {
        whole_steps(self.horizon, self.dt).unwrap_or(0)
    }

    pub fn steps_per_sample(&self) -> usize {
        whole_steps(self.delta, self.dt).unwrap_or(0)
    }

    pub fn num_windows(&self) -> usize {
        whole_steps(self.t_inf, self.delta).unwrap_or(0)
    }
}

/// Outcome of one open-loop solve inside the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowSummary {
    pub index: usize,
    pub t_start: f64,
    /// Achieved open-loop objective, an upper bound of `V_T(t_k, y_rh(t_k))`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    /// Cost of the kept piece over `[t_k, t_k + delta]`.
    pub kept_cost: f64,
}

#[derive(Debug, Clone)]
pub struct RhcResult {
    pub y_rh: StateTrajectory,
    pub u_rh: ControlTrajectory,
    pub windows: Vec<WindowSummary>,
    /// Set when a window failed; trajectories are then valid only up to the
    /// start of that window.
    pub failure: Option<String>,
    beta: f64,
    norm: ControlNorm,
}

impl RhcResult {
    pub fn grid(&self) -> &TimeGrid {
        self.y_rh.grid()
    }

    /// Window objectives in window order.
    pub fn window_values(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.objective).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.windows.iter().map(|w| w.iterations).sum()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn norm(&self) -> ControlNorm {
        self.norm
    }
}

/// Trapezoidal cost of the first `keep` steps of a window solution.
fn kept_cost(system: &ControlledSystem, sol: &OcpSolution, keep: usize, beta: f64, norm: ControlNorm) -> f64 {
    let k = system.ops().stiffness();
    let dt = system.dt();
    (0..=keep)
        .map(|j| {
            let w = if j == 0 || j == keep { 0.5 * dt } else { dt };
            w * 0.5 * (k.quad_form(sol.y_star.node(j)) + beta * norm.squared(sol.u_star.node(j)))
        })
        .sum()
}

/// Shifts `u` left by `shift` nodes and pads with zeros, on `grid`.
pub fn shifted_warm_start(u: &ControlTrajectory, shift: usize, grid: TimeGrid) -> ControlTrajectory {
    let mut out = ControlTrajectory::zeros(grid, u.dim());
    let available = u.grid().num_nodes().saturating_sub(shift);
    for j in 0..available.min(grid.num_nodes()) {
        out.node_mut(j).copy_from_slice(u.node(j + shift));
    }
    out
}

/// Runs the receding horizon loop from `y0` at time 0.
///
/// Solver errors inside a window stop the loop; the partial result is
/// returned with `failure` set. Windows that hit the iteration limit keep
/// their best iterate and are flagged through `converged`.
pub fn rhc_run(system: &ControlledSystem, y0: &[f64], config: &RhcConfig) -> Result<RhcResult> {
    config.validate()?;
    if (config.dt - system.dt()).abs() > 1e-15 * config.dt {
        return Err(Error::config("dt", format!("{} differs from the system step {}", config.dt, system.dt())));
    }
    if y0.len() != system.num_dofs() {
        return Err(Error::GridMismatch(format!("y0 has {} dofs, expected {}", y0.len(), system.num_dofs())));
    }
    let keep = config.steps_per_sample();
    let windows = config.num_windows();
    let grid = system.grid(0.0, config.t_inf)?;
    let mut y_rh = StateTrajectory::zeros(grid, system.num_dofs());
    let mut u_rh = ControlTrajectory::zeros(grid, system.num_controls());
    y_rh.node_mut(0).copy_from_slice(y0);

    let mut noise_rng = config.noise.map(|n| (n.amplitude, ChaCha8Rng::seed_from_u64(n.seed)));
    let mut state = y0.to_vec();
    let mut warm: Option<ControlTrajectory> = None;
    let mut summaries = Vec::with_capacity(windows);
    let mut failure = None;

    for k in 0..windows {
        let t_k = grid.time(k * keep);
        let problem = match OcpProblem::new(system, t_k, config.horizon, &state, config.beta, config.norm) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(format!("window {k} at t={t_k}: {e}"));
                break;
            }
        };
        let initial = warm.take().map(|u| shifted_warm_start(&u, keep, problem.grid));
        let sol = match solve_ocp(&problem, initial, &config.solver) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(format!("window {k} at t={t_k}: {e}"));
                break;
            }
        };
        let base = k * keep;
        for j in 0..keep {
            u_rh.node_mut(base + j).copy_from_slice(sol.u_star.node(j));
            y_rh.node_mut(base + j + 1).copy_from_slice(sol.y_star.node(j + 1));
        }
        if k + 1 == windows {
            u_rh.node_mut(base + keep).copy_from_slice(sol.u_star.node(keep));
        }
        summaries.push(WindowSummary {
            index: k,
            t_start: t_k,
            objective: sol.objective,
            iterations: sol.iterations,
            converged: sol.converged,
            final_residual: sol.final_residual,
            kept_cost: kept_cost(system, &sol, keep, config.beta, config.norm),
        });

        state.copy_from_slice(sol.y_star.node(keep));
        if let Some((amp, rng)) = noise_rng.as_mut() {
            if *amp > 0.0 {
                state.iter_mut().for_each(|v| *v += rng.gen_range(-*amp..=*amp));
            }
        }
        warm = Some(sol.u_star);
        system.evict_before(grid.time(base + keep));
    }

    Ok(RhcResult {
        y_rh,
        u_rh,
        windows: summaries,
        failure,
        beta: config.beta,
        norm: config.norm,
    })
}

/// Uncontrolled trajectory on `[0, t_inf]`, integrated in chunks of
/// `chunk` so the step-matrix cache stays small.
pub fn simulate_uncontrolled(system: &ControlledSystem, y0: &[f64], t_inf: f64, chunk: f64) -> Result<StateTrajectory> {
    let grid = system.grid(0.0, t_inf)?;
    let per = whole_steps(chunk, system.dt())
        .ok_or_else(|| Error::InvalidArgument(format!("chunk {chunk} is not a multiple of dt")))?;
    let mut y = StateTrajectory::zeros(grid, system.num_dofs());
    y.node_mut(0).copy_from_slice(y0);
    let mut start = 0;
    while start < grid.steps() {
        let steps = per.min(grid.steps() - start);
        let sub = TimeGrid::with_steps(grid.time(start), system.dt(), steps)?;
        let u = ControlTrajectory::zeros(sub, system.num_controls());
        let piece = system.solve_state(&u, y.node(start))?;
        for j in 1..=steps {
            y.node_mut(start + j).copy_from_slice(piece.node(j));
        }
        start += steps;
        system.evict_before(grid.time(start));
    }
    Ok(y)
}

/// The five columns of the performance tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceMetrics {
    /// `J_{T_inf}(u_rh; y0)`, summed over the kept window pieces.
    pub cost: f64,
    /// `||y_rh||_{L^2(0, T_inf; V)}`
    pub state_l2v: f64,
    pub final_v_norm: f64,
    pub final_h_norm: f64,
    pub total_iterations: usize,
}

pub fn performance_metrics(system: &ControlledSystem, result: &RhcResult) -> PerformanceMetrics {
    let y = &result.y_rh;
    PerformanceMetrics {
        cost: result.windows.iter().map(|w| w.kept_cost).sum(),
        state_l2v: l2v_norm(system, y),
        final_v_norm: system.ops().v_norm(y.last()),
        final_h_norm: system.ops().h_norm(y.last()),
        total_iterations: result.total_iterations(),
    }
}

/// `||y||_{L^2(V)}` of any state trajectory, trapezoidal in time.
pub fn l2v_norm(system: &ControlledSystem, y: &StateTrajectory) -> f64 {
    let grid = y.grid();
    (0..grid.num_nodes())
        .map(|j| grid.weight(j) * system.ops().stiffness().quad_form(y.node(j)))
        .sum::<f64>()
        .sqrt()
}

/// Least-squares fit `ln ||y(t)||_H^2 ~ intercept - zeta t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub zeta_hat: f64,
    pub log_intercept: f64,
    /// `exp(intercept) / ||y(0)||_H^2`, the constant in
    /// `||y(t)||_H^2 <= c e^{-zeta t} ||y(0)||_H^2`.
    pub c_hat: f64,
    pub samples: usize,
}

/// Fits the samples `(t, ||y(t)||_H)` with `t >= t_from`, stopping at the
/// first exactly zero norm.
pub fn decay_fit_samples(times: &[f64], h_norms: &[f64], t_from: f64) -> Result<DecayFit> {
    if times.len() != h_norms.len() || times.is_empty() {
        return Err(Error::InvalidArgument("decay fit needs matching nonempty samples".into()));
    }
    let prefix = h_norms.iter().position(|&v| !(v > 0.0)).unwrap_or(h_norms.len());
    let pts: Vec<(f64, f64)> = times[..prefix]
        .iter()
        .zip(&h_norms[..prefix])
        .filter(|(t, _)| **t >= t_from)
        .map(|(&t, &h)| (t, (h * h).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs two positive samples after t={t_from}, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let slope = sxy / sxx;
    let intercept = lm - slope * tm;
    let h0 = h_norms[0];
    Ok(DecayFit {
        zeta_hat: -slope,
        log_intercept: intercept,
        c_hat: if h0 > 0.0 { intercept.exp() / (h0 * h0) } else { f64::NAN },
        samples: pts.len(),
    })
}

/// Decay fit of a state trajectory over the second half of its interval.
pub fn decay_rate_fit(system: &ControlledSystem, y: &StateTrajectory) -> Result<DecayFit> {
    let grid = y.grid();
    let times: Vec<f64> = (0..grid.num_nodes()).map(|j| grid.time(j)).collect();
    let norms: Vec<f64> = (0..grid.num_nodes()).map(|j| system.ops().h_norm(y.node(j))).collect();
    decay_fit_samples(&times, &norms, grid.t0() + 0.5 * grid.horizon())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityProfile {
    /// Fraction of time nodes where actuator `i` is exactly zero.
    pub zero_fraction: Vec<f64>,
    /// Fraction of all (actuator, node) entries that are exactly zero.
    pub overall_zero_fraction: f64,
}

impl SparsityProfile {
    /// Actuators that are zero on at least `fraction` of the nodes.
    pub fn count_inactive(&self, fraction: f64) -> usize {
        self.zero_fraction.iter().filter(|&&f| f >= fraction).count()
    }
}

pub fn sparsity_profile(u: &ControlTrajectory) -> SparsityProfile {
    let nodes = u.grid().num_nodes();
    let dim = u.dim();
    let mut zeros = vec![0usize; dim];
    for j in 0..nodes {
        for (i, v) in u.node(j).iter().enumerate() {
            if *v == 0.0 {
                zeros[i] += 1;
            }
        }
    }
    let total: usize = zeros.iter().sum();
    SparsityProfile {
        zero_fraction: zeros.iter().map(|&z| z as f64 / nodes as f64).collect(),
        overall_zero_fraction: if dim == 0 { 1.0 } else { total as f64 / (nodes * dim) as f64 },
    }
}
