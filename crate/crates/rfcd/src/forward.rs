//! Ornstein–Uhlenbeck forward-process scalars and sampling.

use crate::config::SigmaSpec;
use crate::error::{Error, Result};
use ndarray::Array1;

/// Scalars of the forward process at a fixed time t.
#[derive(Debug, Clone, Copy)]
pub struct ForwardParams {
    pub t: f64,
    /// Δ_t = 1 − e^{−2t}, the noise variance injected up to time t.
    pub delta_var: f64,
    /// Γ_t with Γ_t² = e^{−2t}·Tr(Σ)/d + Δ_t, the typical per-coordinate
    /// standard deviation of x_t. Equals 1 exactly for Σ = I.
    pub gamma_t: f64,
}

pub fn forward_params(t: f64, sigma: &SigmaSpec, d: usize) -> Result<ForwardParams> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::validation(format!("time must be ≥ 0, got {t}")));
    }
    let delta_var = -(-2.0 * t).exp_m1(); // 1 − e^{−2t} without cancellation
    let gamma_sq = (-2.0 * t).exp() * sigma.trace_over_d(d) + delta_var;
    Ok(ForwardParams { t, delta_var, gamma_t: gamma_sq.sqrt() })
}

/// x_t = e^{−t}·x0 + √Δ_t·ξ.
pub fn sample_forward(x0: &Array1<f64>, t: f64, xi: &Array1<f64>) -> Result<Array1<f64>> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::validation(format!("time must be ≥ 0, got {t}")));
    }
    if x0.iter().chain(xi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite input to sample_forward"));
    }
    let decay = (-t).exp();
    let noise = (-(-2.0 * t).exp_m1()).sqrt();
    Ok(x0 * decay + xi * noise)
}
