//! Proximal maps of `g(x) = beta/2 |x|_1^2` and `beta/2 |x|_2^2` on `R^N`.
//!
//! For `x != 0` the squared-l1 prox is `x_i lambda_i / (lambda_i + s)` with
//! `s = alpha*beta`, `lambda_i = [sqrt(s/2)|x_i|/sqrt(mu) - s]_+`, and `mu`
//! the positive root of `psi(mu) = sum_i lambda_i(mu) - 1`. `psi` is
//! continuous and non-increasing, tends to `+inf` as `mu -> 0+` and to `-1`
//! as `mu -> inf`, so the root is bracketed and found by bisection.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    /// Step length multiplying `g`.
    pub alpha: f64,
    pub beta: f64,
    /// Bisection stops once `|psi(mu)| <= tol`.
    pub tol: f64,
}

impl ProxParams {
    pub const DEFAULT_TOL: f64 = 1e-10;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_tol(alpha, beta, Self::DEFAULT_TOL)
    }

    pub fn with_tol(alpha: f64, beta: f64, tol: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("tol", tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("prox parameter {name} must be positive, got {v}")));
            }
        }
        Ok(Self { alpha, beta, tol })
    }

    fn s(&self) -> f64 {
        self.alpha * self.beta
    }
}

#[inline]
fn lambda(abs_x: f64, inv_sqrt_mu: f64, s: f64) -> f64 {
    ((s / 2.0).sqrt() * abs_x * inv_sqrt_mu - s).max(0.0)
}

/// `psi(mu) = sum_i [sqrt(s/2)|x_i|/sqrt(mu) - s]_+ - 1`.
pub fn psi(mu: f64, x: &[f64], p: &ProxParams) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("psi needs mu > 0, got {mu}")));
    }
    Ok(psi_unchecked(mu, x, p.s()))
}

fn psi_unchecked(mu: f64, x: &[f64], s: f64) -> f64 {
    let inv = 1.0 / mu.sqrt();
    x.iter().map(|v| lambda(v.abs(), inv, s)).sum::<f64>() - 1.0
}

/// Root of [`psi`] by bisection on `log(mu)`.
pub fn find_mu_star(x: &[f64], p: &ProxParams) -> Result<f64> {
    let max_abs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Err(Error::InvalidArgument("find_mu_star needs x != 0".into()));
    }
    let s = p.s();
    let n = x.len() as f64;
    let mut hi = 0.5 * s * max_abs * max_abs * n * n;
    let mut lo = hi * 1e-16;
    // psi(hi) < 0 and psi(lo) > 0 are expected after at most a few adjustments
    let mut guard = 0;
    while psi_unchecked(hi, x, s) >= 0.0 {
        hi *= 2.0;
        guard += 1;
        assert!(guard < 2100, "upper bracket for mu not found");
    }
    while psi_unchecked(lo, x, s) <= 0.0 {
        lo *= 0.5;
        guard += 1;
        assert!(guard < 4200 && lo > 0.0, "lower bracket for mu not found");
    }

    let mut mid = (lo * hi).sqrt();
    for _ in 0..400 {
        mid = (lo * hi).sqrt();
        let v = psi_unchecked(mid, x, s);
        if v.abs() <= p.tol {
            return Ok(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(mid)
}

/// Proximal map of `alpha * beta/2 |.|_1^2`. Components with `lambda_i = 0`
/// are exactly zero.
pub fn prox_sql1(x: &[f64], p: &ProxParams) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    prox_sql1_into(x, p, &mut out);
    out
}

pub fn prox_sql1_into(x: &[f64], p: &ProxParams, out: &mut [f64]) {
    if x.iter().all(|&v| v == 0.0) {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = p.s();
    let mu = find_mu_star(x, p).expect("x is nonzero");
    let inv = 1.0 / mu.sqrt();
    for (o, &xi) in out.iter_mut().zip(x) {
        let l = lambda(xi.abs(), inv, s);
        *o = if l > 0.0 { l * xi / (l + s) } else { 0.0 };
    }
}

/// Number of nonzero components of [`prox_sql1`].
pub fn active_set_size(x: &[f64], p: &ProxParams) -> usize {
    if x.iter().all(|&v| v == 0.0) {
        return 0;
    }
    let mu = find_mu_star(x, p).expect("x is nonzero");
    let inv = 1.0 / mu.sqrt();
    x.iter().filter(|v| lambda(v.abs(), inv, p.s()) > 0.0).count()
}

/// Proximal map of `alpha * beta/2 |.|_2^2`.
pub fn prox_sql2(x: &[f64], p: &ProxParams) -> Vec<f64> {
    let c = 1.0 / (1.0 + p.s());
    x.iter().map(|v| c * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, beta: f64) -> ProxParams {
        ProxParams::new(alpha, beta).unwrap()
    }

    #[test]
    fn psi_values() {
        let p = params(1.0, 1.0);
        assert_eq!(psi(0.3, &[0.0, 0.0], &p).unwrap(), -1.0);
        assert!(psi(1.0 / 8.0, &[1.0], &p).unwrap().abs() < 1e-15);
        assert!(psi(0.0, &[1.0], &p).is_err());
        assert!(psi(-1.0, &[1.0], &p).is_err());
    }

    #[test]
    fn mu_star_closed_form_in_one_dimension() {
        let mu = find_mu_star(&[1.0], &params(1.0, 1.0)).unwrap();
        assert!((mu - 0.125).abs() < 1e-10, "{mu}");
        assert!(find_mu_star(&[0.0, 0.0], &params(1.0, 1.0)).is_err());
    }

    #[test]
    fn mu_star_scales_quadratically() {
        let p = params(0.3, 2.0);
        let x = [0.4, -1.3, 0.05, 2.2];
        let mu = find_mu_star(&x, &p).unwrap();
        let c = 3.7;
        let xs: Vec<f64> = x.iter().map(|v| c * v).collect();
        let mus = find_mu_star(&xs, &p).unwrap();
        assert!((mus / (c * c * mu) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn prox_basic_cases() {
        let p = params(0.7, 1.3);
        assert_eq!(prox_sql1(&[0.0, 0.0, 0.0], &p), vec![0.0; 3]);
        let one = prox_sql1(&[3.0], &p);
        assert!((one[0] - 3.0 / (1.0 + 0.7 * 1.3)).abs() < 1e-9);
        assert_eq!(active_set_size(&[3.0], &p), 1);
        assert_eq!(active_set_size(&[0.0, 0.0], &p), 0);

        let q = params(1.0, 1.0);
        assert_eq!(prox_sql2(&[2.0, -4.0], &q), vec![1.0, -2.0]);
        assert_eq!(prox_sql2(&[0.0], &q), vec![0.0]);
    }

    #[test]
    fn small_component_is_zeroed_under_strong_penalty() {
        let p = params(1.0, 50.0);
        let z = prox_sql1(&[1.0, 1e-3], &p);
        assert!(z[0] > 0.0);
        assert_eq!(z[1], 0.0);
        assert_eq!(active_set_size(&[1.0, 1e-3], &p), 1);
    }

    #[test]
    fn invalid_params() {
        assert!(ProxParams::new(0.0, 1.0).is_err());
        assert!(ProxParams::new(1.0, -1.0).is_err());
        assert!(ProxParams::with_tol(1.0, 1.0, 0.0).is_err());
    }
}
