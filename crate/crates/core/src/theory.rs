//! Evaluators for the constants of the stability analysis.
//!
//! Constants that have no closed form (`c_hat_nu`, `Theta1`, `Theta2`, `c4`,
//! `lambda`, `c5`) are inputs. The formulas are evaluated as stated; no
//! claim is made that the supplied constants are certified.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Coefficients, SpatialOperators};
use crate::mesh::Mesh;
use crate::timestepping::{ControlNorm, ControlTrajectory, ControlledSystem, StateTrajectory};

/// Which norm the running cost tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tracking {
    H,
    V,
}

/// Supplied constants. `None` entries fall back to derived defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConstants {
    /// Observability constant; calibrated from an uncontrolled run when absent.
    pub c_hat_nu: Option<f64>,
    /// `||f||_{V'} <= i ||f||_H`
    pub i_hv_prime: f64,
    /// Poincare constant `||y||_H^2 <= c_p ||y||_V^2`.
    pub c_p: f64,
    /// Lower bound of the running cost; `min(1/(2 c_p), beta/2)` when absent.
    pub alpha_ell: Option<f64>,
    pub theta1: f64,
    pub theta2: f64,
    pub c4: f64,
    pub lambda: f64,
    /// `c^2 N(a,b)^2 / nu + C_U` with `c = 1` when absent.
    pub c5: Option<f64>,
    /// Exponent of the `L^r` norm of `a` in `N(a,b)`.
    pub r: f64,
    /// Number of time samples used for the coefficient bounds.
    pub time_samples: usize,
    /// Period over which the coefficients are sampled.
    pub sample_period: f64,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        Self {
            c_hat_nu: None,
            i_hv_prime: 1.0 / (2.0 * PI * PI).sqrt(),
            c_p: 1.0 / (2.0 * PI * PI),
            alpha_ell: None,
            theta1: 1.0,
            theta2: 1.0,
            c4: 1.0,
            lambda: 1.0,
            c5: None,
            r: 2.0,
            time_samples: 64,
            sample_period: 2.0 * PI,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::constant(name, format!("must be positive and finite, got {v}")))
    }
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.c_hat_nu {
            positive("c_hat_nu", c)?;
        }
        if let Some(a) = self.alpha_ell {
            positive("alpha_ell", a)?;
        }
        if let Some(c) = self.c5 {
            positive("c5", c)?;
        }
        for (name, v) in [
            ("i_hv_prime", self.i_hv_prime),
            ("c_p", self.c_p),
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("c4", self.c4),
            ("lambda", self.lambda),
            ("sample_period", self.sample_period),
        ] {
            positive(name, v)?;
        }
        if self.r < 2.0 {
            return Err(Error::constant("r", format!("must be at least the dimension 2, got {}", self.r)));
        }
        if self.time_samples == 0 {
            return Err(Error::constant("time_samples", "must be positive"));
        }
        Ok(())
    }

    pub fn alpha_ell_or_default(&self, beta: f64) -> f64 {
        self.alpha_ell.unwrap_or_else(|| (1.0 / (2.0 * self.c_p)).min(0.5 * beta))
    }

    pub fn c5_or_default(&self, n_ab: f64, nu: f64, c_u: f64) -> f64 {
        self.c5.unwrap_or(n_ab * n_ab / nu + c_u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientBound {
    /// `sup_t ||a(t)||_{L^r}` over the samples.
    pub a_norm: f64,
    /// `sup |b|` over the samples.
    pub b_sup: f64,
    /// `N(a,b)`
    pub n_ab: f64,
}

/// Sampled `N(a,b) = sup_t ||a(t)||_{L^r} + sup_{t,x} |b(t,x)|`. The spatial
/// norm uses the edge-midpoint rule on `mesh`; `|b|` is sampled at vertices
/// and edge midpoints.
pub fn coefficient_bounds(mesh: &Mesh, coeffs: &dyn Coefficients, times: &[f64], r: f64) -> Result<CoefficientBound> {
    if !(r >= 2.0) {
        return Err(Error::InvalidArgument(format!("r must be at least 2, got {r}")));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("coefficient bounds need time samples".into()));
    }
    let nodes = mesh.nodes();
    let mut a_norm = 0.0f64;
    let mut b_sup = 0.0f64;
    for &t in times {
        let mut integral = 0.0;
        for (k, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.signed_area(k);
            let p = tri.map(|i| nodes[i]);
            let mids = [
                [(p[0][0] + p[1][0]) / 2.0, (p[0][1] + p[1][1]) / 2.0],
                [(p[1][0] + p[2][0]) / 2.0, (p[1][1] + p[2][1]) / 2.0],
                [(p[2][0] + p[0][0]) / 2.0, (p[2][1] + p[0][1]) / 2.0],
            ];
            for x in mids {
                let a = checked(coeffs.reaction(t, x), t, x)?;
                integral += area / 3.0 * a.abs().powf(r);
                let b = coeffs.convection(t, x);
                b_sup = b_sup.max(checked(b[0].hypot(b[1]), t, x)?);
            }
            for x in p {
                let b = coeffs.convection(t, x);
                b_sup = b_sup.max(checked(b[0].hypot(b[1]), t, x)?);
            }
        }
        a_norm = a_norm.max(integral.powf(1.0 / r));
    }
    Ok(CoefficientBound { a_norm, b_sup, n_ab: a_norm + b_sup })
}

fn checked(v: f64, t: f64, x: [f64; 2]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteCoefficient { value: v, t, x1: x[0], x2: x[1] })
    }
}

/// `min{ T / (2 c_hat (T + 1 + T N)), beta / (2 i C_U) }`
pub fn gamma1(t: f64, c_hat_nu: f64, n_ab: f64, beta: f64, i_hv_prime: f64, c_u: f64) -> Result<f64> {
    positive("T", t)?;
    positive("c_hat_nu", c_hat_nu)?;
    positive("beta", beta)?;
    positive("i_hv_prime", i_hv_prime)?;
    positive("C_U", c_u)?;
    if !(n_ab >= 0.0 && n_ab.is_finite()) {
        return Err(Error::constant("N_ab", format!("must be nonnegative, got {n_ab}")));
    }
    let observe = t / (2.0 * c_hat_nu * (t + 1.0 + t * n_ab));
    let control = beta / (2.0 * i_hv_prime * c_u);
    Ok(observe.min(control))
}

/// Inputs of the `gamma2` evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gamma2Params {
    pub theta1: f64,
    pub theta2: f64,
    pub c4: f64,
    pub lambda: f64,
    pub c5: f64,
    pub nu: f64,
    pub beta: f64,
    pub num_actuators: usize,
}

/// Upper bound `V_T <= gamma2(T) ||y0||_H^2`.
///
/// H-tracking: `(Theta1 + beta n c4 Theta2)/(2 lambda) (1 - e^{-lambda T})`.
/// V-tracking: `1/(2 nu) (1 + (c5 Theta1 + (1 + nu n beta) c4 Theta2)/lambda (1 - e^{-lambda T}))`.
/// `n` is the number of actuators for the l1 cost and 1 for the l2 cost.
pub fn gamma2_eval(t: f64, p: &Gamma2Params, norm: ControlNorm, tracking: Tracking) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::constant("T", format!("must be nonnegative, got {t}")));
    }
    for (name, v) in [
        ("theta1", p.theta1),
        ("theta2", p.theta2),
        ("c4", p.c4),
        ("lambda", p.lambda),
        ("c5", p.c5),
        ("nu", p.nu),
        ("beta", p.beta),
    ] {
        positive(name, v)?;
    }
    if p.num_actuators == 0 {
        return Err(Error::constant("num_actuators", "must be positive"));
    }
    let n = match norm {
        ControlNorm::L1 => p.num_actuators as f64,
        ControlNorm::L2 => 1.0,
    };
    let decay = -(-p.lambda * t).exp_m1();
    Ok(match tracking {
        Tracking::H => (p.theta1 + p.beta * n * p.c4 * p.theta2) / (2.0 * p.lambda) * decay,
        Tracking::V => {
            let inner = p.c5 * p.theta1 + (1.0 + p.nu * n * p.beta) * p.c4 * p.theta2;
            (1.0 + inner / p.lambda * decay) / (2.0 * p.nu)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonAlpha {
    pub alpha: f64,
    pub theta1: f64,
    pub theta2: f64,
}

/// `alpha = 1 - theta2 (theta1 - 1)` with `theta1 = 1 + gamma2/(alpha_ell (T - delta))`
/// and `theta2 = gamma2 / (alpha_ell delta)`.
pub fn alpha_horizon(t: f64, delta: f64, gamma2_t: f64, alpha_ell: f64) -> Result<HorizonAlpha> {
    positive("delta", delta)?;
    positive("gamma2", gamma2_t)?;
    positive("alpha_ell", alpha_ell)?;
    if !(t > delta) || !t.is_finite() {
        return Err(Error::constant("T", format!("alpha needs T > delta, got T={t}, delta={delta}")));
    }
    let theta1 = 1.0 + gamma2_t / (alpha_ell * (t - delta));
    let theta2 = gamma2_t / (alpha_ell * delta);
    Ok(HorizonAlpha {
        alpha: 1.0 - gamma2_t * gamma2_t / (alpha_ell * alpha_ell * delta * (t - delta)),
        theta1,
        theta2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRate {
    pub eta: f64,
    pub zeta: f64,
}

/// `eta = 1 - alpha gamma1(delta) / gamma2(T)` and `zeta = |ln eta| / delta`;
/// an error unless `eta` lies in `(0, 1)`.
pub fn zeta_rate(alpha: f64, delta: f64, gamma1_delta: f64, gamma2_t: f64) -> Result<DecayRate> {
    positive("delta", delta)?;
    positive("gamma1", gamma1_delta)?;
    positive("gamma2", gamma2_t)?;
    let eta = 1.0 - alpha * gamma1_delta / gamma2_t;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::constant("eta", format!("must lie in (0, 1), got {eta}")));
    }
    Ok(DecayRate { eta, zeta: eta.ln().abs() / delta })
}

/// Both sides of the observability inequality
/// `||y0||_H^2 <= c_hat (1 + 1/T + N) int ||y||_V^2 + int ||f||_{V'}^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservabilityCheck {
    pub lhs: f64,
    /// `int ||y||_V^2`
    pub state_term: f64,
    /// `int ||f||_{V'}^2`
    pub forcing_term: f64,
    /// `1 + 1/T + N`
    pub factor: f64,
    /// Smallest `c_hat` for which the inequality holds on this trajectory.
    pub min_chat: f64,
}

impl ObservabilityCheck {
    pub fn rhs(&self, c_hat: f64) -> f64 {
        c_hat * self.factor * self.state_term + self.forcing_term
    }
}

/// Evaluates the inequality on a computed trajectory. `forcing` holds the
/// load vectors `B u(t_j)` on the same grid, or is absent for `f = 0`.
pub fn observability_residual(
    ops: &SpatialOperators,
    y: &StateTrajectory,
    forcing: Option<&StateTrajectory>,
    n_ab: f64,
) -> Result<ObservabilityCheck> {
    let grid = y.grid();
    if let Some(f) = forcing {
        if f.grid().num_nodes() != grid.num_nodes() || f.dim() != y.dim() {
            return Err(Error::GridMismatch("forcing does not match the state trajectory".into()));
        }
    }
    let h0 = ops.h_norm(y.node(0));
    let lhs = h0 * h0;
    let mut state_term = 0.0;
    let mut forcing_term = 0.0;
    for j in 0..grid.num_nodes() {
        let w = grid.weight(j);
        state_term += w * ops.stiffness().quad_form(y.node(j));
        if let Some(f) = forcing {
            forcing_term += w * ops.dual_norm_of_load(f.node(j)).powi(2);
        }
    }
    let factor = 1.0 + 1.0 / grid.horizon() + n_ab;
    let excess = lhs - forcing_term;
    let min_chat = if excess <= 0.0 {
        0.0
    } else if state_term > 0.0 {
        excess / (factor * state_term)
    } else {
        f64::INFINITY
    };
    Ok(ObservabilityCheck { lhs, state_term, forcing_term, factor, min_chat })
}

/// Load vectors `B u(t_j)` of a control trajectory.
pub fn forcing_of(system: &ControlledSystem, u: &ControlTrajectory) -> StateTrajectory {
    let mut f = StateTrajectory::zeros(*u.grid(), system.num_dofs());
    for j in 0..u.grid().num_nodes() {
        system.loads().apply_add(u.node(j), 1.0, f.node_mut(j));
    }
    f
}

/// `|(beta/2) int |u|_1^2 - (beta/2) int |u|_2^2 - beta int sum_{i<j} |u_i u_j||`
/// with the trapezoidal rule.
pub fn sql1_identity_check(u: &ControlTrajectory, beta: f64) -> f64 {
    let grid = u.grid();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut cross = 0.0;
    for j in 0..grid.num_nodes() {
        let w = grid.weight(j);
        let v = u.node(j);
        l1 += w * ControlNorm::L1.squared(v);
        l2 += w * ControlNorm::L2.squared(v);
        let mut c = 0.0;
        for a in 0..v.len() {
            for b in a + 1..v.len() {
                c += (v[a] * v[b]).abs();
            }
        }
        cross += w * c;
    }
    (0.5 * beta * l1 - 0.5 * beta * l2 - beta * cross).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::ConstantCoefficients;
    use crate::timestepping::TimeGrid;

    fn g2() -> Gamma2Params {
        Gamma2Params { theta1: 1.3, theta2: 0.7, c4: 2.0, lambda: 0.9, c5: 1.1, nu: 0.1, beta: 3.0, num_actuators: 4 }
    }

    #[test]
    fn gamma1_arithmetic() {
        assert_eq!(gamma1(1.0, 1.0, 0.0, 2.0, 1.0, 1.0).unwrap(), 0.25);
        let short = gamma1(0.25, 1.0, 0.5, 2.0, 1.0, 1.0).unwrap();
        let long = gamma1(1.0, 1.0, 0.5, 2.0, 1.0, 1.0).unwrap();
        assert!(short < long);
        assert!(gamma1(0.0, 1.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(gamma1(1.0, 1.0, -1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn gamma2_variants() {
        let p = g2();
        assert_eq!(gamma2_eval(0.0, &p, ControlNorm::L1, Tracking::H).unwrap(), 0.0);
        assert!((gamma2_eval(0.0, &p, ControlNorm::L2, Tracking::V).unwrap() - 5.0).abs() < 1e-12);
        for t in [0.1, 1.0, 7.0] {
            let l1 = gamma2_eval(t, &p, ControlNorm::L1, Tracking::H).unwrap();
            let l2 = gamma2_eval(t, &p, ControlNorm::L2, Tracking::H).unwrap();
            let gap = p.beta * p.c4 * 3.0 * p.theta2 * (1.0 - (-p.lambda * t).exp()) / (2.0 * p.lambda);
            assert!((l1 - l2 - gap).abs() < 1e-12);
        }
        let bad = Gamma2Params { lambda: 0.0, ..p };
        let err = gamma2_eval(1.0, &bad, ControlNorm::L2, Tracking::H).unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn alpha_and_zeta_arithmetic() {
        assert_eq!(alpha_horizon(3.0, 1.0, 1.0, 1.0).unwrap().alpha, 0.5);
        let a = alpha_horizon(2.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(a.alpha, 0.0);
        assert_eq!((a.theta1, a.theta2), (2.0, 1.0));
        assert!(alpha_horizon(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(alpha_horizon(2.0, 1e-6, 1.0, 1.0).unwrap().alpha < -1e5);

        let z = zeta_rate(0.5, 0.25, 1.0, 1.0).unwrap();
        assert_eq!(z.eta, 0.5);
        assert!((z.zeta - 2.0f64.ln() / 0.25).abs() < 1e-12);
        assert!(zeta_rate(0.0, 0.25, 1.0, 1.0).is_err());
        let z = zeta_rate(0.75, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(z.eta, 0.25);
        assert!(((-z.zeta * 0.5).exp() - z.eta).abs() < 1e-12);
    }

    #[test]
    fn coefficient_bounds_of_constants() {
        let mesh = Mesh::uniform(5, 5).unwrap();
        let zero = ConstantCoefficients { reaction: 0.0, convection: [0.0, 0.0] };
        assert_eq!(coefficient_bounds(&mesh, &zero, &[0.0], 2.0).unwrap().n_ab, 0.0);
        let c = ConstantCoefficients { reaction: -1.0, convection: [0.0, 0.0] };
        assert!((coefficient_bounds(&mesh, &c, &[0.0, 1.0], 2.0).unwrap().n_ab - 1.0).abs() < 1e-12);
        assert!(coefficient_bounds(&mesh, &c, &[0.0], 1.5).is_err());
    }

    #[test]
    fn identity_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 0.25).unwrap();
        let u = ControlTrajectory::from_fn(grid, 2, |_| vec![1.0, 2.0]).unwrap();
        assert!(sql1_identity_check(&u, 1.0) <= 1e-12);
        let l1 = crate::timestepping::control_cost(&u, 1.0, ControlNorm::L1);
        let l2 = crate::timestepping::control_cost(&u, 1.0, ControlNorm::L2);
        assert!((l1 - 4.5).abs() < 1e-12 && (l2 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn constants_validation() {
        assert!(TheoryConstants::default().validate().is_ok());
        let err = TheoryConstants { theta2: -1.0, ..Default::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("theta2"));
        assert!(TheoryConstants { r: 1.0, ..Default::default() }.validate().is_err());
        let c = TheoryConstants::default();
        assert!((c.alpha_ell_or_default(1000.0) - PI * PI).abs() < 1e-12);
        assert_eq!(c.alpha_ell_or_default(2.0), 1.0);
    }
}
