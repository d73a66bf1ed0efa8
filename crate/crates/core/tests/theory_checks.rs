use rhc_core::experiment::{Experiment, ExperimentConfig, MeshConfig};
use rhc_core::fem::{BenchmarkCoefficients, Coefficients};
use rhc_core::mesh::Mesh;
use rhc_core::rhc::simulate_uncontrolled;
use rhc_core::theory::{
    alpha_horizon, coefficient_bounds, gamma1, gamma2_eval, observability_residual, zeta_rate, Gamma2Params, Tracking,
};
use rhc_core::timestepping::{ControlNorm, StateTrajectory};

#[test]
fn coefficient_bound_matches_dense_sampling() {
    let times: Vec<f64> = (0..64).map(|k| k as f64 * 2.0 * std::f64::consts::PI / 64.0).collect();
    let mesh = Mesh::uniform(33, 33).unwrap();
    let bound = coefficient_bounds(&mesh, &BenchmarkCoefficients, &times, 2.0).unwrap();

    let n = 400;
    let mut a_norm = 0.0f64;
    let mut b_sup = 0.0f64;
    for &t in &times {
        let mut sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                sq += BenchmarkCoefficients.reaction(t, x).powi(2);
            }
        }
        a_norm = a_norm.max((sq / (n * n) as f64).sqrt());
        for i in 0..=n {
            for j in 0..=n {
                let b = BenchmarkCoefficients.convection(t, [i as f64 / n as f64, j as f64 / n as f64]);
                b_sup = b_sup.max(b[0].hypot(b[1]));
            }
        }
    }
    assert!((2.8..=3.6).contains(&bound.a_norm));
    assert!((bound.n_ab - (a_norm + b_sup)).abs() <= 0.01 * (a_norm + b_sup), "{} vs {}", bound.n_ab, a_norm + b_sup);
}

fn calibrated_chat(nx: usize) -> f64 {
    let cfg = ExperimentConfig { mesh: MeshConfig { nx, ny: nx }, ..Default::default() };
    let exp = Experiment::new(&cfg).unwrap();
    let y = simulate_uncontrolled(&exp.system, &exp.y0, 1.0, 1.0).unwrap();
    let times: Vec<f64> = (0..16).map(|k| k as f64 * 0.4).collect();
    let n_ab = coefficient_bounds(exp.system.ops().mesh(), &BenchmarkCoefficients, &times, 2.0).unwrap().n_ab;
    let check = observability_residual(exp.system.ops(), &y, None, n_ab).unwrap();
    assert!(check.lhs <= check.rhs(check.min_chat) * (1.0 + 1e-12));
    check.min_chat
}

#[test]
fn observability_calibration_is_stable_under_refinement() {
    let coarse = calibrated_chat(17);
    let fine = calibrated_chat(33);
    assert!(fine > 0.0 && fine.is_finite());
    assert!((coarse - fine).abs() <= 0.2 * fine, "{coarse} vs {fine}");
}

#[test]
fn observability_of_zero_trajectory() {
    let cfg = ExperimentConfig { mesh: MeshConfig { nx: 5, ny: 5 }, ..Default::default() };
    let exp = Experiment::new(&cfg).unwrap();
    let y = StateTrajectory::zeros(exp.system.grid(0.0, 0.5).unwrap(), exp.system.num_dofs());
    let check = observability_residual(exp.system.ops(), &y, None, 1.0).unwrap();
    assert_eq!((check.lhs, check.rhs(1.0), check.min_chat), (0.0, 0.0, 0.0));
}

#[test]
fn gamma1_grows_with_horizon_and_weight() {
    let horizons = [0.1, 0.25, 0.5, 1.0, 2.0, 8.0, 64.0];
    let values: Vec<f64> = horizons.iter().map(|&t| gamma1(t, 1.0, 0.5, 100.0, 1.0, 1.0).unwrap()).collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
    let limit = 1.0 / (2.0 * (1.0 + 0.5));
    assert!(values.iter().all(|v| *v < limit));
    let small = gamma1(1.0, 1.0, 0.5, 0.1, 1.0, 1.0).unwrap();
    let large = gamma1(1.0, 1.0, 0.5, 0.2, 1.0, 1.0).unwrap();
    assert!((large - 2.0 * small).abs() <= 1e-15);
}

#[test]
fn gamma2_is_bounded_and_splits_by_the_switching_gap() {
    let p = Gamma2Params {
        theta1: 1.3,
        theta2: 0.7,
        c4: 0.9,
        lambda: 2.0,
        c5: 4.0,
        nu: 0.1,
        beta: 3.0,
        num_actuators: 5,
    };
    let mut last = 0.0;
    for k in 0..50 {
        let t = 0.2 * k as f64;
        let l1 = gamma2_eval(t, &p, ControlNorm::L1, Tracking::H).unwrap();
        let l2 = gamma2_eval(t, &p, ControlNorm::L2, Tracking::H).unwrap();
        let gap = p.beta * p.c4 * 4.0 * p.theta2 * (1.0 - (-p.lambda * t).exp()) / (2.0 * p.lambda);
        assert!((l1 - l2 - gap).abs() <= 1e-12);
        assert!(l1 >= last);
        assert!(l1 <= (p.theta1 + p.beta * 5.0 * p.c4 * p.theta2) / (2.0 * p.lambda));
        last = l1;
    }
}

#[test]
fn alpha_degrades_as_sampling_shrinks() {
    let values: Vec<f64> =
        [0.5, 0.1, 0.01, 0.001].iter().map(|&d| alpha_horizon(1.0, d, 1.0, 1.0).unwrap().alpha).collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]));
    assert!(values[3] < -100.0);
}

#[test]
fn zeta_inverts_eta() {
    for (alpha, g1, g2) in [(0.3, 0.5, 1.0), (0.9, 0.1, 0.2), (0.01, 2.0, 3.0)] {
        let r = zeta_rate(alpha, 0.25, g1, g2).unwrap();
        assert!(((-r.zeta * 0.25).exp() - r.eta).abs() <= 1e-12);
    }
}
