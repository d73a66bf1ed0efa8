//! Experiment configuration, single runs, horizon sweeps and the constants
//! report, with deterministic CSV/JSON output.
//!
//! Configs are JSON documents; every key is optional and defaults to the
//! four-actuator l2 benchmark on the 33x33 mesh.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuators::{ActuatorRegion, ActuatorScaling, ActuatorSet, Rect};
use crate::error::{Error, Result};
use crate::fem::{project_function, BenchmarkCoefficients, Coefficients, ConstantCoefficients, SpatialOperators};
use crate::mesh::Mesh;
use crate::rhc::{
    decay_rate_fit, performance_metrics, rhc_run, simulate_uncontrolled, sparsity_profile, DecayFit,
    PerformanceMetrics, RhcConfig, RhcResult, SparsityProfile, WindowSummary,
};
use crate::theory::{
    alpha_horizon, coefficient_bounds, gamma1, gamma2_eval, observability_residual, zeta_rate, CoefficientBound,
    Gamma2Params, ObservabilityCheck, TheoryConstants, Tracking,
};
use crate::timestepping::{ControlNorm, ControlledSystem};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

pub const STATE_CSV: &str = "state.csv";
pub const CONTROLS_CSV: &str = "controls.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TABLE_CSV: &str = "table.csv";
pub const SWEEP_JSON: &str = "sweep.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientPreset {
    /// `a = -2.8 - 0.8|sin(t + x1)|`, `b = (-0.01(x1 + x2), 0.2 x1 x2 cos t)`.
    #[default]
    PaperDefault,
    /// `a = 0`, `b = 0`.
    Heat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `3 sin(pi x1) sin(pi x2)`
    #[default]
    PaperDefault,
    /// `sin(pi x1) sin(pi x2)`
    Eigenmode,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorLayout {
    /// Four actuators covering 8% of the domain.
    #[default]
    Ex1,
    /// Thirteen actuators covering 13% of the domain.
    Ex2,
    Custom(Vec<ActuatorRegion>),
}

impl ActuatorLayout {
    pub fn regions(&self) -> Vec<ActuatorRegion> {
        let region = |x: [f64; 2], y: [f64; 2], d: [usize; 2]| ActuatorRegion {
            rect: Rect::new(x, y),
            subdivisions: d,
        };
        match self {
            ActuatorLayout::Ex1 => vec![
                region([0.2, 0.4], [0.6, 0.8], [2, 1]),
                region([0.6, 0.8], [0.2, 0.4], [2, 1]),
            ],
            ActuatorLayout::Ex2 => vec![
                region([0.1, 0.4], [0.1, 0.4], [3, 3]),
                region([0.6, 0.8], [0.6, 0.8], [2, 2]),
            ],
            ActuatorLayout::Custom(r) => r.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { nx: 33, ny: 33 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: CoefficientPreset,
    pub nu: f64,
    pub mesh: MeshConfig,
    pub initial_state: InitialState,
    pub actuators: ActuatorLayout,
    pub actuator_scaling: ActuatorScaling,
    pub rhc: RhcConfig,
    /// Horizons for `sweep`, in output order.
    pub sweep: Vec<f64>,
    /// Used by the CLI when `--out` is not given.
    pub output_dir: Option<PathBuf>,
    pub theory: TheoryConstants,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: CoefficientPreset::PaperDefault,
            nu: 0.1,
            mesh: MeshConfig::default(),
            initial_state: InitialState::PaperDefault,
            actuators: ActuatorLayout::Ex1,
            actuator_scaling: ActuatorScaling::Nodal,
            rhc: RhcConfig::default(),
            sweep: Vec::new(),
            output_dir: None,
            theory: TheoryConstants::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Errors name the offending key.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            Error::config(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.nx < 3 || self.mesh.ny < 3 {
            return Err(Error::config("mesh", "needs at least 3 nodes per axis for an interior dof"));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::config("nu", format!("must be positive, got {}", self.nu)));
        }
        ActuatorSet::rectangular(&self.actuators.regions()).map_err(|e| Error::config("actuators", e.to_string()))?;
        self.rhc.validate().map_err(|e| prefix_config("rhc", e))?;
        for (i, &t) in self.sweep.iter().enumerate() {
            self.rhc_config_for(t)
                .validate()
                .map_err(|e| Error::config(format!("sweep[{i}]"), e.to_string()))?;
        }
        self.theory.validate().map_err(|e| prefix_config("theory", e))?;
        Ok(())
    }

    pub fn coefficients(&self) -> Arc<dyn Coefficients> {
        match self.preset {
            CoefficientPreset::PaperDefault => Arc::new(BenchmarkCoefficients),
            CoefficientPreset::Heat => Arc::new(ConstantCoefficients::default()),
        }
    }

    /// The loop configuration with the horizon replaced.
    pub fn rhc_config_for(&self, horizon: f64) -> RhcConfig {
        RhcConfig { horizon, ..self.rhc }
    }
}

fn prefix_config(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => Error::config(format!("{prefix}.{key}"), message),
        Error::Constant { name, message } => Error::config(format!("{prefix}.{name}"), message),
        other => Error::config(prefix, other.to_string()),
    }
}

/// Everything a run needs, built from a config.
#[derive(Debug)]
pub struct Experiment {
    pub system: ControlledSystem,
    pub actuators: ActuatorSet,
    /// Factor applied to the Galerkin actuator loads.
    pub actuator_gain: f64,
    pub y0: Vec<f64>,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mesh = Mesh::uniform(cfg.mesh.nx, cfg.mesh.ny)?;
        let actuators = ActuatorSet::rectangular(&cfg.actuators.regions())?;
        let gain = cfg.actuator_scaling.gain(&mesh);
        let loads = Arc::new(actuators.assemble_loads(&mesh).scaled(gain));
        let y0 = match cfg.initial_state {
            InitialState::PaperDefault => project_function(&mesh, |x| 3.0 * (PI * x[0]).sin() * (PI * x[1]).sin())?,
            InitialState::Eigenmode => project_function(&mesh, |x| (PI * x[0]).sin() * (PI * x[1]).sin())?,
            InitialState::Zero => vec![0.0; mesh.num_dofs()],
        };
        let ops = Arc::new(SpatialOperators::new(mesh, cfg.nu, cfg.coefficients())?);
        let system = ControlledSystem::new(ops, loads, cfg.rhc.dt)?;
        Ok(Self { system, actuators, actuator_gain: gain, y0 })
    }
}

/// `summary.json`
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub horizon: f64,
    pub delta: f64,
    pub t_inf: f64,
    pub beta: f64,
    pub norm: ControlNorm,
    pub num_actuators: usize,
    pub initial_h_norm: f64,
    pub metrics: PerformanceMetrics,
    pub decay_fit: Option<DecayFit>,
    /// Positive fitted decay rate and final H-norm below the initial one.
    pub stabilized: bool,
    pub sparsity: SparsityProfile,
    pub windows: Vec<WindowSummary>,
    pub failure: Option<String>,
}

/// Output of one run, held in memory until written.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub state_csv: String,
    pub controls_csv: String,
}

/// Shortest decimal representation that parses back to `x`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        ryu::Buffer::new().format_finite(x).to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn summarize(exp: &Experiment, config: &RhcConfig, result: &RhcResult) -> RunSummary {
    let ops = exp.system.ops();
    let initial_h_norm = ops.h_norm(&exp.y0);
    let metrics = performance_metrics(&exp.system, result);
    let decay_fit = decay_rate_fit(&exp.system, &result.y_rh).ok();
    let stabilized = if initial_h_norm == 0.0 {
        metrics.final_h_norm == 0.0
    } else {
        decay_fit.is_some_and(|f| f.zeta_hat > 0.0) && metrics.final_h_norm < initial_h_norm
    };
    RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        horizon: config.horizon,
        delta: config.delta,
        t_inf: config.t_inf,
        beta: config.beta,
        norm: config.norm,
        num_actuators: exp.system.num_controls(),
        initial_h_norm,
        metrics,
        decay_fit,
        stabilized,
        sparsity: sparsity_profile(&result.u_rh),
        windows: result.windows.clone(),
        failure: result.failure.clone(),
    }
}

/// `t,h_norm,v_norm` per time node.
pub fn state_csv(exp: &Experiment, result: &RhcResult) -> String {
    let ops = exp.system.ops();
    let grid = result.y_rh.grid();
    let mut out = String::from("t,h_norm,v_norm\n");
    for j in 0..grid.num_nodes() {
        let y = result.y_rh.node(j);
        let _ = writeln!(out, "{},{},{}", fmt_f64(grid.time(j)), fmt_f64(ops.h_norm(y)), fmt_f64(ops.v_norm(y)));
    }
    out
}

/// `t,u_1,...,u_N` per time node.
pub fn controls_csv(result: &RhcResult) -> String {
    let u = &result.u_rh;
    let mut out = String::from("t");
    for i in 1..=u.dim() {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for j in 0..u.grid().num_nodes() {
        out.push_str(&fmt_f64(u.grid().time(j)));
        for v in u.node(j) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Runs the loop at `horizon` and renders all artifacts.
pub fn run_horizon(cfg: &ExperimentConfig, horizon: f64) -> Result<RunArtifacts> {
    let rhc = cfg.rhc_config_for(horizon);
    let exp = Experiment::new(cfg)?;
    let result = rhc_run(&exp.system, &exp.y0, &rhc)?;
    Ok(RunArtifacts {
        summary: summarize(&exp, &rhc, &result),
        state_csv: state_csv(&exp, &result),
        controls_csv: controls_csv(&result),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_horizon(cfg, cfg.rhc.horizon)
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_run(artifacts: &RunArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(dir, STATE_CSV, artifacts.state_csv.as_bytes())?;
    write_atomic(dir, CONTROLS_CSV, artifacts.controls_csv.as_bytes())?;
    write_atomic(dir, SUMMARY_JSON, to_json(&artifacts.summary)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub horizon: f64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.summary.as_ref().is_some_and(|s| s.failure.is_some())
    }
}

/// Runs every horizon of `cfg.sweep`; rows keep the configured order and a
/// failing row does not stop the others.
pub fn run_sweep(cfg: &ExperimentConfig) -> Vec<SweepRow> {
    cfg.sweep
        .par_iter()
        .map(|&horizon| match run_horizon(cfg, horizon) {
            Ok(a) => SweepRow { horizon, summary: Some(a.summary), error: None },
            Err(e) => SweepRow { horizon, summary: None, error: Some(e.to_string()) },
        })
        .collect()
}

pub const TABLE_HEADER: &str =
    "horizon,cost,state_l2v,final_v_norm,final_h_norm,total_iterations,zeta_hat,stabilized,overall_zero_fraction,error";

pub fn sweep_table_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for row in rows {
        let error = row
            .error
            .clone()
            .or_else(|| row.summary.as_ref().and_then(|s| s.failure.clone()))
            .unwrap_or_default()
            .replace([',', '\n'], " ");
        match &row.summary {
            Some(s) => {
                let m = &s.metrics;
                let zeta = s.decay_fit.map(|f| fmt_f64(f.zeta_hat)).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    fmt_f64(row.horizon),
                    fmt_f64(m.cost),
                    fmt_f64(m.state_l2v),
                    fmt_f64(m.final_v_norm),
                    fmt_f64(m.final_h_norm),
                    m.total_iterations,
                    zeta,
                    s.stabilized,
                    fmt_f64(s.sparsity.overall_zero_fraction),
                    error
                );
            }
            None => {
                let _ = writeln!(out, "{},,,,,,,,,{}", fmt_f64(row.horizon), error);
            }
        }
    }
    out
}

pub fn write_sweep(rows: &[SweepRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(dir, SWEEP_JSON, to_json(&rows)?.as_bytes())?;
    write_atomic(dir, TABLE_CSV, sweep_table_csv(rows).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gamma2Table {
    pub h_l1: Option<f64>,
    pub h_l2: Option<f64>,
    pub v_l1: Option<f64>,
    pub v_l2: Option<f64>,
}

/// Output of the `theory` command. Quantities that cannot be evaluated are
/// `null` and explained in `errors`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub horizon: f64,
    pub delta: f64,
    pub beta: f64,
    pub nu: f64,
    pub norm: ControlNorm,
    pub num_actuators: usize,
    pub actuator_gain: f64,
    /// `N max ||gain 1_{R_i}||_H^2`
    pub c_u: f64,
    /// `N max |R_i|`
    pub c_u_unscaled: f64,
    pub coefficient_bound: CoefficientBound,
    pub c_hat_nu: Option<f64>,
    /// `supplied` or `calibrated` (smallest value that makes the inequality
    /// hold on the uncontrolled trajectory over `[0, T]`).
    pub c_hat_source: String,
    pub observability: Option<ObservabilityCheck>,
    pub i_hv_prime: f64,
    pub alpha_ell: f64,
    pub c5: f64,
    pub gamma1_t: Option<f64>,
    pub gamma1_delta: Option<f64>,
    pub gamma2: Gamma2Table,
    /// V-tracking value for the configured norm, used for `alpha`.
    pub gamma2_t: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub zeta: Option<f64>,
    pub errors: BTreeMap<String, String>,
}

pub fn theory_report(cfg: &ExperimentConfig) -> Result<TheoryReport> {
    let exp = Experiment::new(cfg)?;
    let consts = &cfg.theory;
    let rhc = &cfg.rhc;
    let ops = exp.system.ops();
    let mut errors = BTreeMap::new();
    let record = |errors: &mut BTreeMap<String, String>, key: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.insert(key.to_string(), e.to_string());
            None
        }
    };

    let times: Vec<f64> = (0..consts.time_samples)
        .map(|k| consts.sample_period * k as f64 / consts.time_samples as f64)
        .collect();
    let bound = coefficient_bounds(ops.mesh(), ops.coefficients(), &times, consts.r)?;
    let c_u_unscaled = exp.actuators.c_u();
    let c_u = c_u_unscaled * exp.actuator_gain * exp.actuator_gain;

    let (c_hat_nu, c_hat_source, observability) = match consts.c_hat_nu {
        Some(c) => (Some(c), "supplied".to_string(), None),
        None => {
            let y = simulate_uncontrolled(&exp.system, &exp.y0, rhc.horizon, rhc.horizon)?;
            let check = observability_residual(ops, &y, None, bound.n_ab)?;
            let c = (check.min_chat > 0.0 && check.min_chat.is_finite()).then_some(check.min_chat);
            if c.is_none() {
                errors.insert(
                    "c_hat_nu".into(),
                    format!("calibration gave {}; supply theory.c_hat_nu", check.min_chat),
                );
            }
            (c, "calibrated".to_string(), Some(check))
        }
    };

    let g1 = |t: f64| -> Result<f64> {
        let c = c_hat_nu.ok_or_else(|| Error::constant("c_hat_nu", "not available"))?;
        gamma1(t, c, bound.n_ab, rhc.beta, consts.i_hv_prime, c_u)
    };
    let gamma1_t = record(&mut errors, "gamma1_t", g1(rhc.horizon));
    let gamma1_delta = record(&mut errors, "gamma1_delta", g1(rhc.delta));

    let c5 = consts.c5_or_default(bound.n_ab, cfg.nu, c_u);
    let params = Gamma2Params {
        theta1: consts.theta1,
        theta2: consts.theta2,
        c4: consts.c4,
        lambda: consts.lambda,
        c5,
        nu: cfg.nu,
        beta: rhc.beta,
        num_actuators: exp.actuators.len(),
    };
    let mut g2 = |key: &str, norm, tracking| record(&mut errors, key, gamma2_eval(rhc.horizon, &params, norm, tracking));
    let gamma2 = Gamma2Table {
        h_l1: g2("gamma2.h_l1", ControlNorm::L1, Tracking::H),
        h_l2: g2("gamma2.h_l2", ControlNorm::L2, Tracking::H),
        v_l1: g2("gamma2.v_l1", ControlNorm::L1, Tracking::V),
        v_l2: g2("gamma2.v_l2", ControlNorm::L2, Tracking::V),
    };
    let gamma2_t = match rhc.norm {
        ControlNorm::L1 => gamma2.v_l1,
        ControlNorm::L2 => gamma2.v_l2,
    };
    let alpha_ell = consts.alpha_ell_or_default(rhc.beta);
    let horizon_alpha = gamma2_t.and_then(|g| match alpha_horizon(rhc.horizon, rhc.delta, g, alpha_ell) {
        Ok(a) => Some(a),
        Err(e) => {
            errors.insert("alpha".into(), e.to_string());
            None
        }
    });
    let decay = match (horizon_alpha, gamma1_delta, gamma2_t) {
        (Some(a), Some(g1d), Some(g2t)) => match zeta_rate(a.alpha, rhc.delta, g1d, g2t) {
            Ok(d) => Some(d),
            Err(e) => {
                errors.insert("zeta".into(), e.to_string());
                None
            }
        },
        _ => None,
    };

    Ok(TheoryReport {
        horizon: rhc.horizon,
        delta: rhc.delta,
        beta: rhc.beta,
        nu: cfg.nu,
        norm: rhc.norm,
        num_actuators: exp.actuators.len(),
        actuator_gain: exp.actuator_gain,
        c_u,
        c_u_unscaled,
        coefficient_bound: bound,
        c_hat_nu,
        c_hat_source,
        observability,
        i_hv_prime: consts.i_hv_prime,
        alpha_ell,
        c5,
        gamma1_t,
        gamma1_delta,
        gamma2,
        gamma2_t,
        theta1: horizon_alpha.map(|a| a.theta1),
        theta2: horizon_alpha.map(|a| a.theta2),
        alpha: horizon_alpha.map(|a| a.alpha),
        eta: decay.map(|d| d.eta),
        zeta: decay.map(|d| d.zeta),
        errors,
    })
}

pub fn theory_report_json(report: &TheoryReport) -> Result<String> {
    to_json(report)
}
