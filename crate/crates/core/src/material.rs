//! Barotropic pressure and viscosity laws of power type:
//!
//! ```text
//! p(rho)  = c1 * rho^gamma
//! mu(rho) = mu_star + c2 * rho^beta
//! ```
//!
//! together with the derived potential energy density `e(rho)`, the
//! viscous potential `U(rho) = int_1^rho mu(s)/s ds`, and the acoustic
//! signal speed in mass coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("density {0} outside the domain of {1}")]
    Domain(f64, &'static str),
}

/// Power-law pressure and viscosity parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialLaw {
    pub gamma: f64,
    pub c1: f64,
    pub beta: f64,
    pub c2: f64,
    pub mu_star: f64,
}

impl Default for MaterialLaw {
    /// `p = rho^2`, `mu = 1`.
    fn default() -> Self {
        Self {
            gamma: 2.0,
            c1: 1.0,
            beta: 0.0,
            c2: 0.0,
            mu_star: 1.0,
        }
    }
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), MaterialError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(MaterialError::InvalidParameter { name, value, reason })
    }
}

impl MaterialLaw {
    pub fn new(gamma: f64, c1: f64, beta: f64, c2: f64, mu_star: f64) -> Result<Self, MaterialError> {
        let law = Self {
            gamma,
            c1,
            beta,
            c2,
            mu_star,
        };
        law.validate()?;
        Ok(law)
    }

    /// Constant viscosity `mu` with pressure `c1 * rho^gamma`.
    pub fn constant_viscosity(gamma: f64, c1: f64, mu: f64) -> Result<Self, MaterialError> {
        Self::new(gamma, c1, 0.0, 0.0, mu)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        check("gamma", self.gamma, self.gamma >= 1.0, "must be >= 1")?;
        check("c1", self.c1, self.c1 >= 0.0, "must be >= 0")?;
        check("beta", self.beta, self.beta >= 0.0, "must be >= 0")?;
        check("c2", self.c2, self.c2 >= 0.0, "must be >= 0")?;
        check("mu_star", self.mu_star, self.mu_star > 0.0, "must be > 0")?;
        Ok(())
    }

    /// True when the viscosity does not depend on density.
    pub fn is_constant_viscosity(&self) -> bool {
        self.c2 == 0.0
    }

    fn nonnegative(rho: f64, what: &'static str) -> Result<f64, MaterialError> {
        if rho >= 0.0 && rho.is_finite() {
            Ok(rho)
        } else {
            Err(MaterialError::Domain(rho, what))
        }
    }

    pub fn pressure(&self, rho: f64) -> Result<f64, MaterialError> {
        Self::nonnegative(rho, "pressure").map(|r| self.p(r))
    }

    pub fn viscosity(&self, rho: f64) -> Result<f64, MaterialError> {
        Self::nonnegative(rho, "viscosity").map(|r| self.mu(r))
    }

    pub fn potential_energy(&self, rho: f64) -> Result<f64, MaterialError> {
        Self::nonnegative(rho, "potential energy").map(|r| self.e(r))
    }

    /// `U(rho) = int_1^rho mu(s)/s ds`; singular at vacuum.
    pub fn viscous_potential(&self, rho: f64) -> Result<f64, MaterialError> {
        if rho > 0.0 && rho.is_finite() {
            Ok(self.visc_potential(rho))
        } else {
            Err(MaterialError::Domain(rho, "viscous potential"))
        }
    }

    /// Characteristic speed `rho * sqrt(p'(rho))` in mass coordinates.
    pub fn lagrangian_signal_speed(&self, rho: f64) -> Result<f64, MaterialError> {
        if rho > 0.0 && rho.is_finite() {
            Ok(self.signal_speed(rho))
        } else {
            Err(MaterialError::Domain(rho, "signal speed"))
        }
    }

    // Unchecked kernels used by the stepper and diagnostics, where the
    // density is known to be a finite nonnegative number.

    #[inline]
    pub(crate) fn p(&self, rho: f64) -> f64 {
        if self.c1 == 0.0 {
            0.0
        } else {
            self.c1 * rho.powf(self.gamma)
        }
    }

    #[inline]
    pub(crate) fn dp(&self, rho: f64) -> f64 {
        if self.c1 == 0.0 {
            0.0
        } else if self.gamma == 1.0 {
            self.c1
        } else {
            self.c1 * self.gamma * rho.powf(self.gamma - 1.0)
        }
    }

    #[inline]
    pub(crate) fn mu(&self, rho: f64) -> f64 {
        if self.c2 == 0.0 {
            self.mu_star
        } else if self.beta == 0.0 {
            self.mu_star + self.c2
        } else {
            self.mu_star + self.c2 * rho.powf(self.beta)
        }
    }

    #[inline]
    pub(crate) fn e(&self, rho: f64) -> f64 {
        self.e_offset(rho - 1.0)
    }

    /// `e(1 + a)`, keeping full relative precision for small `a`.
    pub(crate) fn e_offset(&self, a: f64) -> f64 {
        if self.c1 == 0.0 {
            0.0
        } else if self.gamma == 1.0 {
            self.c1 * xlogx_remainder(a)
        } else {
            self.c1 * binomial_remainder(self.gamma, a) / (self.gamma - 1.0)
        }
    }

    /// `p(1 + a) - p(1)`.
    #[inline]
    pub(crate) fn p_offset(&self, a: f64) -> f64 {
        if self.c1 == 0.0 {
            0.0
        } else {
            self.c1 * (self.gamma * a.ln_1p()).exp_m1()
        }
    }

    /// `p(1 + a) - p(1) - p'(1) a`.
    pub(crate) fn p_defect(&self, a: f64) -> f64 {
        if self.c1 == 0.0 {
            0.0
        } else {
            self.c1 * binomial_remainder(self.gamma, a)
        }
    }

    #[inline]
    pub(crate) fn visc_potential(&self, rho: f64) -> f64 {
        let ln = rho.ln();
        if self.c2 == 0.0 {
            self.mu_star * ln
        } else if self.beta == 0.0 {
            (self.mu_star + self.c2) * ln
        } else {
            self.mu_star * ln + self.c2 * (rho.powf(self.beta) - 1.0) / self.beta
        }
    }

    #[inline]
    pub(crate) fn signal_speed(&self, rho: f64) -> f64 {
        rho * self.dp(rho).sqrt()
    }

    /// Largest viscosity over densities in `[0, rho_max]`.
    pub fn viscosity_ceiling(&self, rho_max: f64) -> f64 {
        self.mu(rho_max.max(0.0))
    }
}

/// `(1 + a)^g - 1 - g a` for `a >= -1`, summed as a series near `a = 0`.
fn binomial_remainder(g: f64, a: f64) -> f64 {
    if a.abs() >= 0.5 {
        return (1.0 + a).powf(g) - 1.0 - g * a;
    }
    let mut term = 0.5 * g * (g - 1.0) * a * a;
    let mut sum = term;
    for k in 3..200 {
        term *= (g - (k - 1) as f64) / k as f64 * a;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `(1 + a) ln(1 + a) - a` for `a >= -1`, with the limit 1 at `a = -1`.
fn xlogx_remainder(a: f64) -> f64 {
    if a == -1.0 {
        return 1.0;
    }
    if a.abs() >= 0.5 {
        return (1.0 + a) * a.ln_1p() - a;
    }
    // sum_{k >= 2} (-1)^k a^k / (k (k - 1))
    let mut power = a * a;
    let mut sum = 0.0;
    for k in 2..200 {
        let term = power / (k * (k - 1)) as f64;
        sum += if k % 2 == 0 { term } else { -term };
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        power *= a;
    }
    sum
}
