use rhc_core::experiment::{Experiment, ExperimentConfig, InitialState, MeshConfig};
use rhc_core::optim::{solve_ocp, OcpProblem};
use rhc_core::rhc::{
    performance_metrics, rhc_run, shifted_warm_start, simulate_uncontrolled, sparsity_profile, MeasurementNoise,
    RhcConfig,
};
use rhc_core::timestepping::{ControlNorm, ControlTrajectory};

fn small(norm: ControlNorm, initial_state: InitialState) -> (Experiment, RhcConfig) {
    let mut cfg = ExperimentConfig { mesh: MeshConfig { nx: 9, ny: 9 }, initial_state, ..Default::default() };
    cfg.rhc = RhcConfig { horizon: 0.5, delta: 0.25, t_inf: 1.5, norm, ..cfg.rhc };
    cfg.validate().unwrap();
    (Experiment::new(&cfg).unwrap(), cfg.rhc)
}

#[test]
fn loop_replays_window_by_window() {
    for norm in [ControlNorm::L2, ControlNorm::L1] {
        let (exp, rhc) = small(norm, InitialState::PaperDefault);
        let result = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
        assert!(result.failure.is_none());
        let keep = rhc.steps_per_sample();
        let mut warm: Option<ControlTrajectory> = None;
        for k in 0..rhc.num_windows() {
            let start = result.y_rh.node(k * keep).to_vec();
            let t_k = result.grid().time(k * keep);
            let problem = OcpProblem::new(&exp.system, t_k, rhc.horizon, &start, rhc.beta, norm).unwrap();
            let initial = warm.take().map(|u| shifted_warm_start(&u, keep, problem.grid));
            let sol = solve_ocp(&problem, initial, &rhc.solver).unwrap();
            assert_eq!(sol.objective, result.windows[k].objective, "window {k}");
            for j in 0..=keep {
                assert_eq!(sol.y_star.node(j), result.y_rh.node(k * keep + j), "state at node {j} of window {k}");
            }
            for j in 0..keep {
                assert_eq!(sol.u_star.node(j), result.u_rh.node(k * keep + j), "control at node {j} of window {k}");
            }
            warm = Some(sol.u_star);
        }
    }
}

#[test]
fn concatenated_control_is_no_better_than_window_optimum() {
    let (exp, rhc) = small(ControlNorm::L2, InitialState::PaperDefault);
    let result = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
    let keep = rhc.steps_per_sample();
    let span = rhc.steps_per_window();
    for (k, w) in result.windows.iter().enumerate() {
        let first = k * keep;
        if first + span > result.grid().steps() {
            break;
        }
        let t_k = result.grid().time(first);
        let start = result.y_rh.node(first).to_vec();
        let problem = OcpProblem::new(&exp.system, t_k, rhc.horizon, &start, rhc.beta, rhc.norm).unwrap();
        let values: Vec<f64> = (0..=span).flat_map(|j| result.u_rh.node(first + j).to_vec()).collect();
        let u = ControlTrajectory::from_values(problem.grid, exp.system.num_controls(), values).unwrap();
        let j = problem.objective(&u).unwrap();
        let tol = w.final_residual * w.final_residual / (2.0 * rhc.beta) + 1e-12 * w.objective;
        assert!(j >= w.objective - tol, "window {k}: {j} < {}", w.objective);
    }
}

#[test]
fn zero_initial_state_stays_at_rest() {
    for norm in [ControlNorm::L2, ControlNorm::L1] {
        let (exp, rhc) = small(norm, InitialState::Zero);
        let result = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
        assert!(result.u_rh.is_zero());
        assert!(result.window_values().iter().all(|v| *v == 0.0));
        let m = performance_metrics(&exp.system, &result);
        assert_eq!(
            [m.cost, m.state_l2v, m.final_v_norm, m.final_h_norm],
            [0.0; 4]
        );
        assert_eq!(sparsity_profile(&result.u_rh).overall_zero_fraction, 1.0);
    }
}

#[test]
fn control_beats_doing_nothing() {
    let (exp, rhc) = small(ControlNorm::L2, InitialState::PaperDefault);
    let result = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
    let free = simulate_uncontrolled(&exp.system, &exp.y0, rhc.t_inf, 0.5).unwrap();
    let ops = exp.system.ops();
    let (c, f) = (ops.h_norm(result.y_rh.last()), ops.h_norm(free.last()));
    assert!(c < f, "{c} vs {f}");
}

#[test]
fn noise_is_seeded() {
    let (exp, mut rhc) = small(ControlNorm::L2, InitialState::PaperDefault);
    rhc.noise = Some(MeasurementNoise { amplitude: 1e-3, seed: 5 });
    let a = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
    let b = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
    assert_eq!(a.u_rh.values(), b.u_rh.values());
    rhc.noise = None;
    let clean = rhc_run(&exp.system, &exp.y0, &rhc).unwrap();
    assert_ne!(a.u_rh.values(), clean.u_rh.values());
}

#[test]
fn mismatched_step_is_rejected() {
    let (exp, mut rhc) = small(ControlNorm::L2, InitialState::PaperDefault);
    rhc.dt = 0.025;
    assert!(rhc_run(&exp.system, &exp.y0, &rhc).is_err());
}
