//! Registry of smooth scalar nonlinearities with hand-coded derivatives up to
//! order four. Everything here must be C^4 with bounded derivatives, which is
//! what the limiting-kernel recursions require. Derivatives are analytic
//! expressions rather than numerical differences so the kernel tables are
//! bit-stable.

use crate::gaussmoments::QuadRule;
use crate::{Error, Result};

/// A scalar nonlinearity evaluable together with its first four derivatives.
///
/// `NormalizedSoftplus` carries the post-composition factor `c` chosen so that
/// `E[(c·softplus)(Z)^2] = 1` for `Z ~ N(0,1)`; the factor is computed by 1D
/// Gauss-Hermite quadrature at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlin {
    Softplus,
    NormalizedSoftplus { scale: f64 },
    Arctan,
    Erf,
    Tanh,
    Identity,
}

/// Looks up a nonlinearity by its config name.
///
/// Note on naming: the "smooth ReLU" of common usage is softplus
/// `ln(1 + e^x)` here, and the normalized variant rescales it so the second
/// Gaussian moment is exactly one.
pub fn make_nonlin(name: &str) -> Result<Nonlin> {
    match name {
        "softplus" => Ok(Nonlin::Softplus),
        "normalized_softplus" => {
            // 80 nodes is far beyond what this smooth integrand needs.
            let rule = QuadRule::gauss_hermite(80)?;
            let second_moment = rule.normal_expect(|x| softplus_k(0, x).powi(2));
            Ok(Nonlin::NormalizedSoftplus { scale: 1.0 / second_moment.sqrt() })
        }
        "arctan" => Ok(Nonlin::Arctan),
        "erf" => Ok(Nonlin::Erf),
        "tanh" => Ok(Nonlin::Tanh),
        "identity" => Ok(Nonlin::Identity),
        other => Err(Error::Config(format!("unknown nonlinearity '{other}'"))),
    }
}

impl Nonlin {
    pub fn id(&self) -> &'static str {
        match self {
            Nonlin::Softplus => "softplus",
            Nonlin::NormalizedSoftplus { .. } => "normalized_softplus",
            Nonlin::Arctan => "arctan",
            Nonlin::Erf => "erf",
            Nonlin::Tanh => "tanh",
            Nonlin::Identity => "identity",
        }
    }

    /// Post-composition factor (1 except for normalized variants).
    pub fn scale(&self) -> f64 {
        match self {
            Nonlin::NormalizedSoftplus { scale } => *scale,
            _ => 1.0,
        }
    }

    /// k-th derivative at `x`, k in 0..=4.
    pub fn eval_k(&self, k: usize, x: f64) -> f64 {
        assert!(k <= 4, "derivative order {k} out of range");
        match self {
            Nonlin::Softplus => softplus_k(k, x),
            Nonlin::NormalizedSoftplus { scale } => scale * softplus_k(k, x),
            Nonlin::Arctan => arctan_k(k, x),
            Nonlin::Erf => erf_k(k, x),
            Nonlin::Tanh => tanh_k(k, x),
            Nonlin::Identity => match k {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_k(k: usize, x: f64) -> f64 {
    if k == 0 {
        // max(x,0) + ln(1 + e^{-|x|}) avoids overflow on both tails.
        return x.max(0.0) + (-x.abs()).exp().ln_1p();
    }
    let s = sigmoid(x);
    let v = s * (1.0 - s);
    match k {
        1 => s,
        2 => v,
        3 => v * (1.0 - 2.0 * s),
        4 => v * (1.0 - 6.0 * s + 6.0 * s * s),
        _ => unreachable!(),
    }
}

fn arctan_k(k: usize, x: f64) -> f64 {
    let d = 1.0 / (1.0 + x * x);
    match k {
        0 => x.atan(),
        1 => d,
        2 => -2.0 * x * d * d,
        3 => (6.0 * x * x - 2.0) * d * d * d,
        4 => 24.0 * x * (1.0 - x * x) * d * d * d * d,
        _ => unreachable!(),
    }
}

fn erf_k(k: usize, x: f64) -> f64 {
    if k == 0 {
        return libm::erf(x);
    }
    let g = std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp();
    match k {
        1 => g,
        2 => -2.0 * x * g,
        3 => (4.0 * x * x - 2.0) * g,
        4 => (12.0 * x - 8.0 * x * x * x) * g,
        _ => unreachable!(),
    }
}

fn tanh_k(k: usize, x: f64) -> f64 {
    let t = x.tanh();
    let u = 1.0 - t * t;
    match k {
        0 => t,
        1 => u,
        2 => -2.0 * t * u,
        3 => u * (6.0 * t * t - 2.0),
        4 => 8.0 * t * u * (2.0 - 3.0 * t * t),
        _ => unreachable!(),
    }
}

pub const ALL_NAMES: [&str; 6] =
    ["softplus", "normalized_softplus", "arctan", "erf", "tanh", "identity"];
