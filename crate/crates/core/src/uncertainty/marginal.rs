use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use super::UncertaintyError;

/// Standard normal cdf.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
pub fn norm_inv(u: f64) -> f64 {
    if !(u > 0.0 && u < 1.0) {
        return if u == 0.0 {
            f64::NEG_INFINITY
        } else if u == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    // work in the lower tail, where the cdf is evaluated without cancellation
    let q = if u > 0.5 { 1.0 - u } else { u };
    let mut x = -SQRT_2 * erfc_inv(2.0 * q);
    for _ in 0..2 {
        let f = norm_cdf(x) - q;
        let d = norm_pdf(x);
        if d == 0.0 {
            break;
        }
        // Halley step
        let r = f / d;
        x -= r / (1.0 + 0.5 * x * r);
    }
    if u > 0.5 { -x } else { x }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Univariate marginal distribution of one uncertain input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Marginal {
    Gaussian { mean: f64, std: f64 },
    Weibull { shape: f64, scale: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<(), UncertaintyError> {
        let ok = match *self {
            Marginal::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            Marginal::Weibull { shape, scale } => {
                shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(UncertaintyError::Parameter(format!("invalid marginal {self:?}")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, std } => norm_cdf((x - mean) / std),
            Marginal::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, std } => norm_pdf((x - mean) / std) / std,
            Marginal::Weibull { shape, scale } => {
                if x < 0.0 {
                    return 0.0;
                }
                let z = x / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(shape)).exp()
            }
        }
    }

    /// Quantile function; `u` must lie in the open unit interval.
    pub fn inv_cdf(&self, u: f64) -> Result<f64, UncertaintyError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(UncertaintyError::Domain { what: "marginal quantile level", value: u });
        }
        Ok(match *self {
            Marginal::Gaussian { mean, std } => mean + std * norm_inv(u),
            Marginal::Weibull { shape, scale } => scale * (-(-u).ln_1p()).powf(1.0 / shape),
        })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Gaussian { mean, .. } => mean,
            Marginal::Weibull { shape, scale } => scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape),
        }
    }
}
