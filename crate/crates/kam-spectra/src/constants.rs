//! Closed-form evaluation of every explicit constant of the iteration:
//! the loss schedule (alpha_l, sigma_l), the product function Phi and its
//! partial products phi_l, the limit phi_inf, the threshold solution xi,
//! the prefactor A, the admissible size eps_star, the convolution factor
//! q(delta), and the polynomial-exponential sup bound.
//!
//! Powers like (4/sigma)^(4d+2gamma) overflow for small sigma, so products
//! are assembled in log space throughout.

use serde::Serialize;

use crate::error::{KamError, Result};

/// q(delta) = ((1 + e^-delta)/(1 - e^-delta))^d, the l1 convolution sum.
pub fn q_factor(delta: f64, d: usize) -> f64 {
    if delta.is_infinite() {
        return 1.0;
    }
    let e = (-delta).exp();
    ((1.0 + e) / (1.0 - e)).powi(d as i32)
}

/// sup_{r > 0} r^{2 gamma} e^{-delta r} = (2 gamma / (e delta))^{2 gamma}.
pub fn sup_poly_exp(gamma: f64, delta: f64) -> f64 {
    (2.0 * gamma / (std::f64::consts::E * delta)).powf(2.0 * gamma)
}

/// All derived constants for one (c, gamma, d, alpha) configuration.
#[derive(Clone, Debug, Serialize)]
pub struct KamConstants {
    pub c: f64,
    pub gamma: f64,
    pub d: usize,
    pub alpha: f64,
    /// sigma = min(1, alpha/2).
    pub sigma: f64,
    pub phi_inf: f64,
    pub xi: f64,
    pub a_const: f64,
    pub eps_star: f64,
    pub v_alpha_norm: f64,
}

impl KamConstants {
    pub fn new(c: f64, gamma: f64, d: usize, alpha: f64, v_alpha_norm: f64) -> Result<Self> {
        if c < 1.0 {
            return Err(KamError::Domain(format!("c must be >= 1, got {c}")));
        }
        if gamma <= 0.0 || alpha <= 0.0 || d == 0 {
            return Err(KamError::Domain(
                "gamma, alpha must be positive and d >= 1".into(),
            ));
        }
        if v_alpha_norm <= 0.0 {
            return Err(KamError::Domain(format!(
                "perturbation norm must be positive, got {v_alpha_norm}"
            )));
        }
        let sigma = (alpha / 2.0).min(1.0);
        let xi = xi_value(c, gamma, d, sigma);
        let a_const = a_value(c, gamma, d);
        let eps_star = xi / (4.0 * c * v_alpha_norm);
        Ok(KamConstants {
            c,
            gamma,
            d,
            alpha,
            sigma,
            phi_inf: phi_infinity(c, gamma, d, sigma),
            xi,
            a_const,
            eps_star,
            v_alpha_norm,
        })
    }

    /// Per-step losses: sigma_l = sigma / 2^{l+2} and
    /// alpha_l = alpha - 2 sum_{nu < l} sigma_nu = alpha - sigma (1 - 2^-l).
    pub fn schedule(&self, ell: u32) -> (f64, f64) {
        let sigma_ell = self.sigma / 2f64.powi(ell as i32 + 2);
        let alpha_ell = self.alpha - self.sigma * (1.0 - 2f64.powi(-(ell as i32)));
        (alpha_ell, sigma_ell)
    }

    /// Partial product phi_l; phi_0 = 1.
    pub fn phi(&self, ell: u32) -> f64 {
        phi_partial(self.c, self.gamma, self.d, self.sigma, ell)
    }

    /// ln(xi phi_l / 4c), the base of the per-step norm threshold.
    pub fn ln_step_base(&self, ell: u32) -> f64 {
        self.xi.ln() + self.phi(ell).ln() - (4.0 * self.c).ln()
    }

    /// ln(xi phi_inf / 4c), the base of the accumulated-transform threshold.
    pub fn ln_tail_base(&self) -> f64 {
        self.xi.ln() + self.phi_inf.ln() - (4.0 * self.c).ln()
    }

    /// Verify the three threshold inequalities the closed-form xi solves
    /// (first strict, the others up to relative slack).
    pub fn verify_xi_system(&self) -> bool {
        verify_xi_system(self.c, self.gamma, self.d, self.sigma, self.xi)
    }
}

/// Phi(x) = 12 c^2 (2 gamma / e)^{2 gamma} x^{-4d - 2 gamma}.
pub fn big_phi(x: f64, c: f64, gamma: f64, d: usize) -> Result<f64> {
    if x <= 0.0 {
        return Err(KamError::Domain(format!("Phi needs x > 0, got {x}")));
    }
    Ok(ln_big_phi(x, c, gamma, d).exp())
}

fn ln_big_phi(x: f64, c: f64, gamma: f64, d: usize) -> f64 {
    (12.0 * c * c).ln() + 2.0 * gamma * (2.0 * gamma / std::f64::consts::E).ln()
        - (4.0 * d as f64 + 2.0 * gamma) * x.ln()
}

/// phi_l = prod_{nu < l} Phi(sigma_nu)^{1/2^{nu+1}} with sigma_nu = sigma/2^{nu+2}.
pub fn phi_partial(c: f64, gamma: f64, d: usize, sigma: f64, ell: u32) -> f64 {
    let mut ln_sum = 0.0;
    for nu in 0..ell {
        let sigma_nu = sigma / 2f64.powi(nu as i32 + 2);
        ln_sum += ln_big_phi(sigma_nu, c, gamma, d) / 2f64.powi(nu as i32 + 1);
    }
    ln_sum.exp()
}

/// phi_inf = 12 c^2 (2 gamma / e)^{2 gamma} (8 / sigma)^{4d + 2 gamma},
/// the limit of the partial products: with sigma_nu = sigma / 2^{nu+2} the
/// exponent sums are sum 1/2^{nu+1} = 1 and sum nu/2^{nu+1} = 1, so the
/// splitting 2^{(nu+2)E} = 2^{2E} 2^{nu E} contributes 2^{2E} * 2^E = 8^E.
pub fn phi_infinity(c: f64, gamma: f64, d: usize, sigma: f64) -> f64 {
    let ln = (12.0 * c * c).ln()
        + 2.0 * gamma * (2.0 * gamma / std::f64::consts::E).ln()
        + (4.0 * d as f64 + 2.0 * gamma) * (8.0 / sigma).ln();
    ln.exp()
}

fn min_branch(c: f64, gamma: f64, d: usize) -> f64 {
    let g = (2.0 * gamma / std::f64::consts::E).powf(2.0 * gamma);
    let k = 2f64.powf(4.0 * (2.0 * d as f64 + gamma)) * 3.0 * c * g;
    let first = k / (1.0 + k);
    let second = 1.0 - 3f64.powi(d as i32) / 2f64.powi(6 * d as i32 - 1);
    first.min(second)
}

/// The largest solution of the threshold system, xi = 4c t_max / phi_inf
/// with t_max the min of the two branch bounds.
pub fn xi_value(c: f64, gamma: f64, d: usize, sigma: f64) -> f64 {
    let exponent = 4.0 * d as f64 + 2.0 * gamma;
    let ln_prefactor = exponent * sigma.ln()
        - ((3.0 * c).ln()
            + 2.0 * gamma * (2.0 * gamma / std::f64::consts::E).ln()
            + exponent * 8f64.ln());
    ln_prefactor.exp() * min_branch(c, gamma, d)
}

/// The sigma-free prefactor of the admissible perturbation size,
/// A = xi / (4 c sigma^{4d+2gamma}).
pub fn a_value(c: f64, gamma: f64, d: usize) -> f64 {
    let exponent = 4.0 * d as f64 + 2.0 * gamma;
    let ln_prefactor = -((12.0 * c * c).ln()
        + 2.0 * gamma * (2.0 * gamma / std::f64::consts::E).ln()
        + exponent * 8f64.ln());
    ln_prefactor.exp() * min_branch(c, gamma, d)
}

/// Check the three inequalities that define xi: with t = xi phi_inf / 4c,
///   t < 1,
///   t/(1-t) / (2^{2(4d+2g)} 12 c^2 (2g/e)^{2g}) <= 1/(4c),
///   3^d / (2^{6d-1} (1-t)) <= 1.
pub fn verify_xi_system(c: f64, gamma: f64, d: usize, sigma: f64, xi: f64) -> bool {
    let t = xi * phi_infinity(c, gamma, d, sigma) / (4.0 * c);
    if t >= 1.0 {
        return false;
    }
    let g = (2.0 * gamma / std::f64::consts::E).powf(2.0 * gamma);
    let pref = 2f64.powf(2.0 * (4.0 * d as f64 + 2.0 * gamma)) * 12.0 * c * c * g;
    // borderline equalities reached through exp/ln round-trips need a
    // slightly wider slack than machine epsilon
    let second = (t / (1.0 - t)) / pref <= (1.0 + 1e-9) / (4.0 * c);
    let third = 3f64.powi(d as i32) / (2f64.powi(6 * d as i32 - 1) * (1.0 - t)) <= 1.0 + 1e-9;
    second && third
}
