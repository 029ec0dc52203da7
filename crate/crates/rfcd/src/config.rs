//! Experiment configuration: every scalar hyperparameter of a run.

use crate::activation::Activation;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Data covariance specification. Only isotropic and diagonal covariances
/// are supported; the reference experiments use Σ = I exclusively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    /// Σ = c·I with c > 0.
    Isotropic(f64),
    /// Σ = diag(v), v of length d with positive entries.
    Diagonal(Vec<f64>),
}

impl SigmaSpec {
    /// Tr(Σ)/d — the per-coordinate signal variance.
    pub fn trace_over_d(&self, d: usize) -> f64 {
        match self {
            SigmaSpec::Isotropic(c) => *c,
            SigmaSpec::Diagonal(v) => v.iter().sum::<f64>() / d as f64,
        }
    }

    /// Per-coordinate standard deviations, broadcast to length d.
    pub fn std_devs(&self, d: usize) -> Vec<f64> {
        match self {
            SigmaSpec::Isotropic(c) => vec![c.sqrt(); d],
            SigmaSpec::Diagonal(v) => v.iter().map(|x| x.sqrt()).collect(),
        }
    }

    pub fn is_unit_isotropic(&self) -> bool {
        matches!(self, SigmaSpec::Isotropic(c) if (*c - 1.0).abs() < 1e-15)
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            SigmaSpec::Isotropic(c) => {
                if !c.is_finite() || *c <= 0.0 {
                    return Err(Error::validation("sigma_spec isotropic scale must be positive"));
                }
            }
            SigmaSpec::Diagonal(v) => {
                if v.len() != d {
                    return Err(Error::validation(format!(
                        "sigma_spec diagonal length {} != d = {}",
                        v.len(),
                        d
                    )));
                }
                if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                    return Err(Error::validation("sigma_spec diagonal entries must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Which formula defines the isotropic shift β of the one-step curvature.
///
/// `Theorem` is the final-statement form β = a0·a1²·Δt²·t'²·Tr(U⁻¹S)/d;
/// `PfDrift` is β = a0·Δt²·κ², i.e. a0·E‖δx‖²/d under the one-step
/// displacement convention δx = Δt(−x − s_φ(x)). Reports always carry both
/// values; the Monte Carlo oracle adjudicates which one the empirical
/// bottom cluster matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaConvention {
    Theorem,
    PfDrift,
}

/// All scalar hyperparameters of a run. Parsed from a single JSON document
/// with exactly these field names; unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Ambient dimension.
    pub d: usize,
    /// Feature ratio p/d; p = psi_p·d must be a positive integer.
    pub psi_p: f64,
    /// Sample ratio n/d; n = psi_n·d must be a positive integer.
    pub psi_n: f64,
    /// Diffusion time t' > 0 of the teacher.
    pub t_prime: f64,
    /// One-step size Δt ≥ 0.
    pub dt_step: f64,
    pub activation: Activation,
    pub sigma_spec: SigmaSpec,
    /// Ridge γ ≥ 0 used by the mode diagnostics.
    pub ridge_gamma: f64,
    /// Mem/Gen eigenvalue threshold.
    pub lambda_th: f64,
    /// Monte Carlo budget for the teacher constants (a_t, b_t, v_t, s_t², μ1).
    pub mc_constants: usize,
    /// Monte Carlo budget for the flow moments (η, υ).
    pub mc_flow: usize,
    /// Spectral discard threshold: eigenvalues with |λ| below this are
    /// treated as exact-zero underflow and dropped from spectra.
    pub atom_eps: f64,
    pub beta_convention: BetaConvention,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 100,
            psi_p: 32.0,
            psi_n: 4.0,
            t_prime: 0.01,
            dt_step: 1e-3,
            activation: Activation::Tanh,
            sigma_spec: SigmaSpec::Isotropic(1.0),
            ridge_gamma: 2.0,
            lambda_th: 2.0,
            mc_constants: 200_000,
            mc_flow: 50_000,
            atom_eps: 1e-50,
            beta_convention: BetaConvention::Theorem,
            seed: 0,
        }
    }
}

fn ratio_to_count(ratio: f64, d: usize, name: &str) -> Result<usize> {
    let raw = ratio * d as f64;
    let rounded = raw.round();
    if !(raw.is_finite() && (raw - rounded).abs() <= 1e-9 * raw.abs().max(1.0)) {
        return Err(Error::validation(format!(
            "{name}·d = {raw} is not an integer (ratio {ratio}, d {d})"
        )));
    }
    if rounded < 1.0 {
        return Err(Error::validation(format!("{name}·d must be ≥ 1, got {rounded}")));
    }
    Ok(rounded as usize)
}

impl ExperimentConfig {
    /// Feature count p = psi_p·d. Call `validate` first; this panics on
    /// non-integral ratios only in debug builds and truncates otherwise.
    pub fn p(&self) -> usize {
        (self.psi_p * self.d as f64).round() as usize
    }

    /// Sample count n = psi_n·d.
    pub fn n(&self) -> usize {
        (self.psi_n * self.d as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::validation("d must be ≥ 1"));
        }
        ratio_to_count(self.psi_p, self.d, "psi_p")?;
        ratio_to_count(self.psi_n, self.d, "psi_n")?;
        if !(self.t_prime.is_finite() && self.t_prime > 0.0) {
            return Err(Error::validation("t_prime must be > 0"));
        }
        if !(self.dt_step.is_finite() && self.dt_step >= 0.0) {
            return Err(Error::validation("dt_step must be ≥ 0"));
        }
        if !(self.ridge_gamma.is_finite() && self.ridge_gamma >= 0.0) {
            return Err(Error::validation("ridge_gamma must be ≥ 0"));
        }
        if !self.lambda_th.is_finite() {
            return Err(Error::validation("lambda_th must be finite"));
        }
        if self.mc_constants < 1 || self.mc_flow < 1 {
            return Err(Error::validation("sample counts must be ≥ 1"));
        }
        if !(self.atom_eps.is_finite() && self.atom_eps >= 0.0) {
            return Err(Error::validation("atom_eps must be ≥ 0"));
        }
        self.sigma_spec.validate(self.d)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
