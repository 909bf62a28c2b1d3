//! Magnetization laws.
//!
//! A law is the pair `μ(s)` (the permeability response to a field of
//! strength `s`) and its primitive `M(s) = ∫₀ˢ t·μ(t) dt`. Two laws are
//! provided: a linear law with constant `μ > 1`, and the Langevin law
//!
//! ```text
//! μ(s) = 1 + (Mₛ/s)·(coth(γs) − 1/(γs)),   μ(0) = 1 + Mₛγ/3
//! ```
//!
//! Every law satisfies `½s² ≤ M(s) ≤ (C_M/2)s²` with the growth constant
//! `C_M` returned by [`MagnetizationLaw::growth_constant`], and `M` is convex.

use crate::error::{Error, Result};

/// Below this value of `x = γ|s|` the Langevin ratio is evaluated by its
/// Taylor series; `coth x − 1/x` cancels catastrophically near zero.
const SERIES_CUTOFF: f64 = 0.1;

/// Above this value of `x = γs`, `ln sinh x` is rewritten to avoid overflow.
const LOG_SINH_CUTOFF: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnetizationLaw {
    /// `μ(s) ≡ mu`, `M(s) = mu·s²/2`.
    Linear { mu: f64 },
    /// Langevin law with saturation magnetization `saturation` (Mₛ) and
    /// Langevin parameter `gamma` (γ).
    Langevin { saturation: f64, gamma: f64 },
}

impl MagnetizationLaw {
    pub fn linear(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "linear law needs mu > 1, got {mu}"
            )));
        }
        Ok(Self::Linear { mu })
    }

    pub fn langevin(saturation: f64, gamma: f64) -> Result<Self> {
        if !(saturation.is_finite() && saturation > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "langevin law needs Ms > 0, got {saturation}"
            )));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "langevin law needs gamma > 0, got {gamma}"
            )));
        }
        Ok(Self::Langevin { saturation, gamma })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Self::Linear { .. })
    }

    /// `μ(s)`. Even in `s`.
    pub fn mu(&self, s: f64) -> f64 {
        let s = s.abs();
        match *self {
            Self::Linear { mu } => mu,
            Self::Langevin { saturation, gamma } => 1.0 + saturation * gamma * langevin_ratio(gamma * s),
        }
    }

    /// `dμ/ds`. Odd in `s`.
    pub fn mu_derivative(&self, s: f64) -> f64 {
        match *self {
            Self::Linear { .. } => 0.0,
            Self::Langevin { saturation, gamma } => {
                saturation * gamma * gamma * langevin_ratio_derivative(gamma * s.abs()) * s.signum()
            }
        }
    }

    /// `M(s) = ∫₀ˢ t·μ(t) dt`, extended evenly to `s < 0`.
    pub fn primitive(&self, s: f64) -> f64 {
        let s = s.abs();
        match *self {
            Self::Linear { mu } => 0.5 * mu * s * s,
            Self::Langevin { saturation, gamma } => {
                0.5 * s * s + saturation / gamma * log_sinhc(gamma * s)
            }
        }
    }

    /// `M'(s) = s·μ(s)`.
    pub fn primitive_derivative(&self, s: f64) -> f64 {
        s * self.mu(s)
    }

    /// `M''(s) = μ(s) + s·μ'(s)`; nonnegative because `M` is convex.
    pub fn primitive_second_derivative(&self, s: f64) -> f64 {
        self.mu(s) + s * self.mu_derivative(s)
    }

    /// The constant `C_M > 1` with `M(s) ≤ (C_M/2)s²`.
    pub fn growth_constant(&self) -> f64 {
        match *self {
            Self::Linear { mu } => mu,
            Self::Langevin { saturation, gamma } => 1.0 + gamma * saturation / 3.0,
        }
    }

    /// `p₀ = M(1) + μ(1)(μ(1)/2 − 1)`: the pressure constant that makes a flat
    /// interface in a uniform unit field an equilibrium.
    pub fn pressure_constant(&self) -> f64 {
        let mu1 = self.mu(1.0);
        self.primitive(1.0) + mu1 * (0.5 * mu1 - 1.0)
    }
}

/// `(coth x − 1/x)/x` for `x ≥ 0`.
fn langevin_ratio(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        let x2 = x * x;
        // Bernoulli-number series; the x¹⁰ term is below 1e-18 at the cutoff.
        1.0 / 3.0
            + x2 * (-1.0 / 45.0
                + x2 * (2.0 / 945.0
                    + x2 * (-1.0 / 4725.0 + x2 * (2.0 / 93555.0 + x2 * (-1382.0 / 638512875.0)))))
    } else {
        (1.0 / x.tanh() - 1.0 / x) / x
    }
}

fn langevin_ratio_derivative(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        let x2 = x * x;
        x * (-2.0 / 45.0
            + x2 * (8.0 / 945.0
                + x2 * (-6.0 / 4725.0 + x2 * (16.0 / 93555.0 + x2 * (-13820.0 / 638512875.0)))))
    } else {
        let sh = x.sinh();
        let csch2 = if sh.is_finite() { 1.0 / (sh * sh) } else { 0.0 };
        (2.0 / x - 1.0 / x.tanh() - x * csch2) / (x * x)
    }
}

/// `ln(sinh(x)/x)` for `x ≥ 0`, with the limit value 0 at `x = 0`.
fn log_sinhc(x: f64) -> f64 {
    if x < 1.0 {
        // sinh(x)/x − 1 = Σ_{k≥1} x^{2k}/(2k+1)!
        let x2 = x * x;
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..=12 {
            term *= x2 / ((2 * k) as f64 * (2 * k + 1) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum.ln_1p()
    } else if x <= LOG_SINH_CUTOFF {
        (x.sinh() / x).ln()
    } else {
        x + (-(-2.0 * x).exp()).ln_1p() - std::f64::consts::LN_2 - x.ln()
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

/// Weight `χμ/2 + (1−χ)/2` of the quadratic part of the linear-law integrand.
fn primal_weight(fluid: bool, mu: f64) -> f64 {
    if fluid {
        0.5 * mu
    } else {
        0.5
    }
}

/// The linear-law integrand `f_χ(ξ) = (χμ/2 + (1−χ)/2)|ξ|² − μ·ξ_z`.
///
/// The last component of `xi` is the vertical one.
pub fn linear_integrand(fluid: bool, mu: f64, xi: &[f64]) -> f64 {
    primal_weight(fluid, mu) * norm_sq(xi) - mu * xi[xi.len() - 1]
}

/// `∇f_χ(ξ) = (χμ + 1 − χ)ξ − (0,…,0,μ)`.
pub fn linear_integrand_gradient(fluid: bool, mu: f64, xi: &[f64]) -> Vec<f64> {
    let k = 2.0 * primal_weight(fluid, mu);
    let mut out: Vec<f64> = xi.iter().map(|c| k * c).collect();
    let last = out.len() - 1;
    out[last] -= mu;
    out
}

/// Convex conjugate of [`linear_integrand`]:
/// `f*_χ(p) = (χ/(2μ) + (1−χ)/2)·|p + (0,…,0,μ)|²`.
pub fn linear_conjugate(fluid: bool, mu: f64, p: &[f64]) -> f64 {
    let weight = if fluid { 0.5 / mu } else { 0.5 };
    let last = p.len() - 1;
    let shifted: f64 = p
        .iter()
        .enumerate()
        .map(|(i, &c)| if i == last { c + mu } else { c })
        .map(|c| c * c)
        .sum();
    weight * shifted
}
