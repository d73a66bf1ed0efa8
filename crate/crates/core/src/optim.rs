//! Solvers for the finite-horizon open-loop problem
//!
//! ```text
//! min_u  J(u) = F(u) + G(u),   F(u) = 1/2 int ||y(u)||_V^2,   G(u) = beta/2 int |u|_*^2
//! ```
//!
//! For the l2 cost the whole objective is a smooth quadratic and is
//! minimized by a Barzilai-Borwein gradient method. For the squared-l1 cost
//! a proximal gradient method is used, with the BB step of `F` as the trial
//! step and a nonmonotone (trailing-max) sufficient decrease test.
//! All inner products are the trapezoidal `L^2(t0, t0+T; R^N)` product.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{prox_sql1_into, ProxParams};
use crate::timestepping::{
    control_cost, ControlNorm, ControlTrajectory, ControlledSystem, StateTrajectory, TimeGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// l2 stop: control-space norm of the reduced gradient.
    pub grad_tol: f64,
    /// l1 stop: `||u_{j+1} - u_j|| / ||u_{j+1}||`.
    pub rel_change_tol: f64,
    /// Window length of the nonmonotone acceptance test.
    pub memory: usize,
    pub sufficient_decrease: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub step_min: f64,
    pub step_max: f64,
    /// Bisection tolerance inside the squared-l1 prox.
    pub prox_tol: f64,
    /// Keep one [`IterRecord`] per iteration.
    pub record_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: 1e-5,
            rel_change_tol: 1e-4,
            memory: 10,
            sufficient_decrease: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 50,
            step_min: 1e-8,
            step_max: 1e8,
            prox_tol: ProxParams::DEFAULT_TOL,
            record_history: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("rel_change_tol", self.rel_change_tol),
            ("sufficient_decrease", self.sufficient_decrease),
            ("step_min", self.step_min),
            ("step_max", self.step_max),
            ("prox_tol", self.prox_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("solver.{key}"), format!("must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 || self.memory == 0 || self.max_backtracks == 0 {
            return Err(Error::config("solver", "max_iters, memory and max_backtracks must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::config("solver.backtrack_factor", "must lie in (0, 1)"));
        }
        if self.step_min > self.step_max {
            return Err(Error::config("solver.step_min", "exceeds step_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
}

/// Writes `iter,objective,residual,step` rows.
pub fn write_history_csv<W: Write>(records: &[IterRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,objective,residual,step")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.iter, r.objective, r.residual, r.step)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub u_star: ControlTrajectory,
    pub y_star: StateTrajectory,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient norm (l2) or relative change (l1) at exit.
    pub final_residual: f64,
    /// Last accepted step length.
    pub last_step: f64,
    pub history: Vec<IterRecord>,
}

/// One open-loop problem on `[t0, t0 + T]` from state `y0`.
#[derive(Debug, Clone, Copy)]
pub struct OcpProblem<'a> {
    pub system: &'a ControlledSystem,
    pub grid: TimeGrid,
    pub y0: &'a [f64],
    pub beta: f64,
    pub norm: ControlNorm,
}

/// State, objective and gradient at one control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: StateTrajectory,
    /// `F(u)`
    pub smooth: f64,
    /// `F(u) + G(u)`
    pub objective: f64,
    /// `F'(u)`, plus `beta u` for the l2 cost.
    pub gradient: ControlTrajectory,
}

impl<'a> OcpProblem<'a> {
    pub fn new(
        system: &'a ControlledSystem,
        t0: f64,
        horizon: f64,
        y0: &'a [f64],
        beta: f64,
        norm: ControlNorm,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            system,
            grid: system.grid(t0, horizon)?,
            y0,
            beta,
            norm,
        })
    }

    pub fn zero_control(&self) -> ControlTrajectory {
        ControlTrajectory::zeros(self.grid, self.system.num_controls())
    }

    pub fn control_cost(&self, u: &ControlTrajectory) -> f64 {
        control_cost(u, self.beta, self.norm)
    }

    /// State solve and `F(u)`.
    pub fn smooth_value(&self, u: &ControlTrajectory) -> Result<(StateTrajectory, f64)> {
        let y = self.system.solve_state(u, self.y0)?;
        let f = self.system.tracking_cost(&y);
        Ok((y, f))
    }

    pub fn objective(&self, u: &ControlTrajectory) -> Result<f64> {
        Ok(self.smooth_value(u)?.1 + self.control_cost(u))
    }

    /// Gradient of `F` only, from an already computed state.
    pub fn smooth_gradient_at(&self, y: &StateTrajectory) -> Result<ControlTrajectory> {
        let p = self.system.solve_adjoint(y)?;
        Ok(self.system.smooth_gradient(&p))
    }

    /// Full evaluation; the gradient includes `beta u` for the l2 cost.
    pub fn reduced_gradient(&self, u: &ControlTrajectory) -> Result<Evaluation> {
        let (state, smooth) = self.smooth_value(u)?;
        let mut gradient = self.smooth_gradient_at(&state)?;
        if self.norm == ControlNorm::L2 {
            gradient.axpy(self.beta, u);
        }
        Ok(Evaluation {
            objective: smooth + self.control_cost(u),
            state,
            smooth,
            gradient,
        })
    }

    /// Pointwise prox of `alpha G`.
    pub fn prox(&self, v: &ControlTrajectory, alpha: f64, tol: f64) -> Result<ControlTrajectory> {
        let mut out = v.clone();
        match self.norm {
            ControlNorm::L2 => {
                let c = 1.0 / (1.0 + alpha * self.beta);
                out.values_mut().iter_mut().for_each(|x| *x *= c);
            }
            ControlNorm::L1 => {
                let p = ProxParams::with_tol(alpha, self.beta, tol)?;
                for j in 0..v.grid().num_nodes() {
                    prox_sql1_into(v.node(j), &p, out.node_mut(j));
                }
            }
        }
        Ok(out)
    }

    /// `||u - prox_{alpha G}(u - alpha F'(u))|| / ||u||`; zero when both
    /// sides vanish.
    pub fn fixed_point_residual(&self, u: &ControlTrajectory, alpha: f64) -> Result<f64> {
        let (y, _) = self.smooth_value(u)?;
        let g = self.smooth_gradient_at(&y)?;
        let mut v = u.clone();
        v.axpy(-alpha, &g);
        let z = self.prox(&v, alpha, ProxParams::DEFAULT_TOL)?;
        let d = u.sub(&z).norm();
        let n = u.norm();
        Ok(if d == 0.0 { 0.0 } else { d / n })
    }
}

/// Safeguarded BB1 step `<s,s>/<s,dg>`, clamped to `[step_min, step_max]`;
/// falls back to `step_max` when the curvature estimate is not positive.
pub fn bb_stepsize(s: &ControlTrajectory, g_diff: &ControlTrajectory, opts: &SolverOptions) -> f64 {
    let ss = s.inner(s);
    let sy = s.inner(g_diff);
    if ss == 0.0 || !(sy > 0.0) {
        return opts.step_max;
    }
    (ss / sy).clamp(opts.step_min, opts.step_max)
}

/// Initial step `<d, d> / <d, H d>` with `d` the current gradient, probing
/// the Hessian of the quadratic through one extra gradient evaluation.
fn initial_step<F>(u: &ControlTrajectory, g: &ControlTrajectory, opts: &SolverOptions, grad: F) -> Result<f64>
where
    F: Fn(&ControlTrajectory) -> Result<ControlTrajectory>,
{
    if g.is_zero() {
        return Ok(1.0f64.clamp(opts.step_min, opts.step_max));
    }
    let mut probe = u.clone();
    probe.axpy(1.0, g);
    let hg = grad(&probe)?.sub(g);
    Ok(bb_stepsize(g, &hg, opts))
}

/// Solves the open-loop problem with whichever method fits `problem.norm`.
pub fn solve_ocp(
    problem: &OcpProblem<'_>,
    initial: Option<ControlTrajectory>,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    match problem.norm {
        ControlNorm::L2 => solve_ocp_l2(problem, initial, opts),
        ControlNorm::L1 => solve_ocp_l1(problem, initial, opts),
    }
}

fn check_initial(problem: &OcpProblem<'_>, initial: Option<ControlTrajectory>) -> Result<ControlTrajectory> {
    match initial {
        None => Ok(problem.zero_control()),
        Some(u) => {
            if u.grid().steps() != problem.grid.steps() || u.dim() != problem.system.num_controls() {
                return Err(Error::GridMismatch("initial guess does not match the problem grid".into()));
            }
            Ok(ControlTrajectory::from_values(problem.grid, u.dim(), u.values().to_vec())?)
        }
    }
}

/// Barzilai-Borwein gradient method for the l2 cost.
pub fn solve_ocp_l2(
    problem: &OcpProblem<'_>,
    initial: Option<ControlTrajectory>,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    opts.validate()?;
    if problem.norm != ControlNorm::L2 {
        return Err(Error::InvalidArgument("solve_ocp_l2 needs the l2 control cost".into()));
    }
    let mut u = check_initial(problem, initial)?;
    let mut ev = problem.reduced_gradient(&u)?;
    let mut gnorm = ev.gradient.norm();
    let mut history = Vec::new();
    let mut iterations = 1;
    let mut step = 0.0;

    let mut best = (u.clone(), ev.state.clone(), ev.objective, gnorm);
    if opts.record_history {
        history.push(IterRecord { iter: 0, objective: ev.objective, residual: gnorm, step });
    }
    let mut converged = gnorm <= opts.grad_tol;

    if !converged {
        step = initial_step(&u, &ev.gradient, opts, |v| Ok(problem.reduced_gradient(v)?.gradient))?;
        while iterations <= opts.max_iters {
            let mut u_next = u.clone();
            u_next.axpy(-step, &ev.gradient);
            let ev_next = problem.reduced_gradient(&u_next)?;
            iterations += 1;

            let s = u_next.sub(&u);
            let dg = ev_next.gradient.sub(&ev.gradient);
            let taken = step;
            step = bb_stepsize(&s, &dg, opts);

            u = u_next;
            ev = ev_next;
            gnorm = ev.gradient.norm();
            if opts.record_history {
                history.push(IterRecord {
                    iter: iterations - 1,
                    objective: ev.objective,
                    residual: gnorm,
                    step: taken,
                });
            }
            if ev.objective < best.2 || gnorm <= opts.grad_tol {
                best = (u.clone(), ev.state.clone(), ev.objective, gnorm);
            }
            if gnorm <= opts.grad_tol {
                converged = true;
                break;
            }
        }
    }

    let (u_star, y_star, objective, final_residual) = if converged {
        (u, ev.state, ev.objective, gnorm)
    } else {
        best
    };
    Ok(OcpSolution {
        u_star,
        y_star,
        objective,
        iterations,
        converged,
        final_residual,
        last_step: step,
        history,
    })
}

/// Proximal gradient method with nonmonotone backtracking for the
/// squared-l1 cost.
pub fn solve_ocp_l1(
    problem: &OcpProblem<'_>,
    initial: Option<ControlTrajectory>,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    opts.validate()?;
    if problem.norm != ControlNorm::L1 {
        return Err(Error::InvalidArgument("solve_ocp_l1 needs the l1 control cost".into()));
    }
    let mut u = check_initial(problem, initial)?;
    let (mut y, mut smooth) = problem.smooth_value(&u)?;
    let mut grad = problem.smooth_gradient_at(&y)?;
    let mut objective = smooth + problem.control_cost(&u);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(opts.memory);
    window.push_back(objective);

    let mut history = Vec::new();
    if opts.record_history {
        history.push(IterRecord { iter: 0, objective, residual: f64::NAN, step: 0.0 });
    }
    let mut step = initial_step(&u, &grad, opts, |v| {
        let (yv, _) = problem.smooth_value(v)?;
        problem.smooth_gradient_at(&yv)
    })?;
    let mut iterations = 1;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut accepted_step = 0.0;

    while iterations <= opts.max_iters {
        let reference = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut v = u.clone();
            v.axpy(-alpha, &grad);
            let u_trial = problem.prox(&v, alpha, opts.prox_tol)?;
            let d = u_trial.sub(&u);
            let dd = d.inner(&d);
            let (y_trial, f_trial) = problem.smooth_value(&u_trial)?;
            let j_trial = f_trial + problem.control_cost(&u_trial);
            if j_trial <= reference - 0.5 * opts.sufficient_decrease / alpha * dd {
                accepted = Some((u_trial, y_trial, f_trial, j_trial, d));
                break;
            }
            alpha *= opts.backtrack_factor;
        }
        let Some((u_next, y_next, f_next, j_next, d)) = accepted else {
            break;
        };
        iterations += 1;
        accepted_step = alpha;

        let g_next = problem.smooth_gradient_at(&y_next)?;
        let dg = g_next.sub(&grad);
        step = bb_stepsize(&d, &dg, opts);

        let dn = d.norm();
        let un = u_next.norm();
        residual = if dn == 0.0 { 0.0 } else { dn / un };

        u = u_next;
        y = y_next;
        smooth = f_next;
        objective = j_next;
        grad = g_next;
        if window.len() == opts.memory {
            window.pop_front();
        }
        window.push_back(objective);
        if opts.record_history {
            history.push(IterRecord { iter: iterations - 1, objective, residual, step: alpha });
        }
        if residual <= opts.rel_change_tol {
            converged = true;
            break;
        }
    }
    let _ = smooth;

    Ok(OcpSolution {
        u_star: u,
        y_star: y,
        objective,
        iterations,
        converged,
        final_residual: residual,
        last_step: accepted_step,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
}

/// Compares `<grad, d>` against central differences of the objective along
/// random directions at random controls. With `smooth_only` the control
/// cost is left out (the l1 case); otherwise the l2 objective is checked.
pub fn finite_difference_gradcheck(
    problem: &OcpProblem<'_>,
    trials: usize,
    seed: u64,
    smooth_only: bool,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = problem.system.num_controls();
    let mut max_rel_error = 0.0f64;
    let value = |u: &ControlTrajectory| -> Result<f64> {
        let (_, f) = problem.smooth_value(u)?;
        Ok(if smooth_only { f } else { f + control_cost(u, problem.beta, ControlNorm::L2) })
    };
    for _ in 0..trials {
        let mut random = || {
            let vals = (0..problem.grid.num_nodes() * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ControlTrajectory::from_values(problem.grid, n, vals)
        };
        let u = random()?;
        let d = random()?;
        let rel = directional_error(problem, &u, &d, smooth_only, &value)?;
        max_rel_error = max_rel_error.max(rel);
    }
    Ok(GradCheckReport { trials, max_rel_error })
}

/// Relative mismatch between the adjoint directional derivative and the
/// central difference along `d`; zero for a zero direction.
pub fn directional_error<V>(
    problem: &OcpProblem<'_>,
    u: &ControlTrajectory,
    d: &ControlTrajectory,
    smooth_only: bool,
    value: &V,
) -> Result<f64>
where
    V: Fn(&ControlTrajectory) -> Result<f64>,
{
    let (y, _) = problem.smooth_value(u)?;
    let mut g = problem.smooth_gradient_at(&y)?;
    if !smooth_only {
        g.axpy(problem.beta, u);
    }
    let analytic = g.inner(d);
    let h = 1e-3;
    let mut up = u.clone();
    up.axpy(h, d);
    let mut um = u.clone();
    um.axpy(-h, d);
    let fd = (value(&up)? - value(&um)?) / (2.0 * h);
    let scale = analytic.abs().max(fd.abs());
    Ok(if scale == 0.0 { 0.0 } else { (analytic - fd).abs() / scale })
}
