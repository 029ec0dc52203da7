//! One-step flow moments (η, υ) of the teacher score field and the
//! deterministic feature-increment coefficients a1, a0 and shift β.

use crate::activation::Activation;
use crate::config::{BetaConvention, ExperimentConfig};
use crate::error::{Error, Result};
use crate::features::RandomFeatures;
use crate::forward::forward_params;
use crate::moments::{gaussian_moment, MomentMethod};
use crate::rng::{self, purpose, substream, McAcc};
use crate::teacher::{TeacherCurvature, TeacherScoreMap};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

/// Rows per Monte Carlo chunk when samples are d-vectors.
const VEC_CHUNK: usize = 256;
/// κ² at or below this is treated as a degenerate one-step flow.
const KAPPA2_TOL: f64 = 1e-10;
/// Quadrature size for the coefficient moments.
const COEFF_NODES: usize = 200;
/// Above this p, the trace behind the theorem-convention β switches to a
/// Hutchinson estimate.
const TRACE_EXACT_MAX_P: usize = 4096;
/// Probe count for the Hutchinson fallback.
const HUTCHINSON_PROBES: usize = 256;

/// Moments of the score field under x ~ p_{t'}:
/// η = E[xᵀs_φ(x)]/d and υ = E[‖s_φ(x)‖²]/d.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowConstants {
    pub eta: f64,
    pub upsilon: f64,
    pub gamma_flow: f64,
    pub kappa2: f64,
    pub eta_stderr: f64,
    pub upsilon_stderr: f64,
    pub kappa2_stderr: f64,
}

/// Estimate (η, υ) by fresh draws of x_{t'} pushed through the score map.
pub fn estimate_flow_constants(
    score: &TeacherScoreMap,
    config: &ExperimentConfig,
) -> Result<FlowConstants> {
    config.validate()?;
    if config.mc_flow < 1 {
        return Err(Error::validation("mc_flow must be ≥ 1"));
    }
    let d = config.d;
    let fp = forward_params(config.t_prime, &config.sigma_spec, d)?;
    let stds = config.sigma_spec.std_devs(d);
    let decay = (-fp.t).exp();
    let noise = fp.delta_var.sqrt();
    let act = config.activation;

    // Materialize the factorization before fanning out.
    score.curvature.solve_b(&score.features)?;

    let plan = rng::chunk_plan(config.mc_flow, VEC_CHUNK);
    let partials: Vec<Result<(McAcc, McAcc, McAcc)>> = plan
        .par_iter()
        .map(|&(idx, m)| {
            let mut stream = substream(config.seed, purpose::FLOW_MOMENTS, idx);
            let mut x = Array2::<f64>::zeros((m, d));
            for r in 0..m {
                for c in 0..d {
                    let z0: f64 = stream.sample(StandardNormal);
                    let xi: f64 = stream.sample(StandardNormal);
                    x[(r, c)] = decay * stds[c] * z0 + noise * xi;
                }
            }
            let s = score.score_batch(&x, act)?;
            let mut eta_acc = McAcc::default();
            let mut ups_acc = McAcc::default();
            let mut kap_acc = McAcc::default();
            for r in 0..m {
                let mut dot = 0.0;
                let mut nrm = 0.0;
                for c in 0..d {
                    dot += x[(r, c)] * s[(r, c)];
                    nrm += s[(r, c)] * s[(r, c)];
                }
                let eta_i = dot / d as f64;
                let ups_i = nrm / d as f64;
                if !(eta_i.is_finite() && ups_i.is_finite()) {
                    return Err(Error::numerical("non-finite flow moment sample"));
                }
                eta_acc.push(eta_i);
                ups_acc.push(ups_i);
                kap_acc.push(1.0 + 2.0 * eta_i + ups_i);
            }
            Ok((eta_acc, ups_acc, kap_acc))
        })
        .collect();

    let mut eta_acc = McAcc::default();
    let mut ups_acc = McAcc::default();
    let mut kap_acc = McAcc::default();
    for part in partials {
        let (e, u, k) = part?;
        eta_acc = eta_acc.merge(e);
        ups_acc = ups_acc.merge(u);
        kap_acc = kap_acc.merge(k);
    }

    let eta = eta_acc.mean();
    let upsilon = ups_acc.mean();
    let kappa2 = kap_acc.mean();
    let kappa2_stderr = kap_acc.stderr();
    if kappa2 <= KAPPA2_TOL || kappa2 <= 4.0 * kappa2_stderr {
        return Err(Error::numerical(format!(
            "degenerate one-step flow: κ² = {kappa2:.3e} (± {kappa2_stderr:.1e}) is \
             indistinguishable from 0 and the coefficient closed forms divide by it"
        )));
    }
    Ok(FlowConstants {
        eta,
        upsilon,
        gamma_flow: 1.0 + eta,
        kappa2,
        eta_stderr: eta_acc.stderr(),
        upsilon_stderr: ups_acc.stderr(),
        kappa2_stderr,
    })
}

/// Deterministic limits of the feature-increment regression coefficients,
/// plus the isotropic shift β once computed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CdCoefficients {
    pub a1: f64,
    pub a0: f64,
    pub beta: f64,
    pub convention: BetaConvention,
    /// (γ, κ²) snapshot the coefficients were evaluated at.
    pub gamma_flow: f64,
    pub kappa2: f64,
}

impl CdCoefficients {
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// a1 = −[γ²·E[σ'(G)G²] + (κ²−γ²)·E[σ'(G)]]/κ² and
/// a0 = [γ²·E[σ'(G)²G²] + (κ²−γ²)·E[σ'(G)²]]/κ² − a1² (clamped at 0),
/// with G a standard normal. β starts at 0 and is filled by `beta_shift`.
pub fn cd_coefficients(
    flow: &FlowConstants,
    activation: Activation,
    config: &ExperimentConfig,
) -> Result<CdCoefficients> {
    let (gamma, kappa2) = (flow.gamma_flow, flow.kappa2);
    if !(kappa2.is_finite() && kappa2 > KAPPA2_TOL) {
        return Err(Error::numerical(format!(
            "degenerate one-step flow: κ² = {kappa2:.3e}"
        )));
    }
    if let Activation::Identity = activation {
        return Ok(CdCoefficients {
            a1: -1.0,
            a0: 0.0,
            beta: 0.0,
            convention: config.beta_convention,
            gamma_flow: gamma,
            kappa2,
        });
    }
    let method = MomentMethod::Quadrature { nodes: COEFF_NODES };
    let e1 = gaussian_moment(|g| activation.sigma_prime(g), 1.0, method)?.value;
    let e2 = gaussian_moment(|g| activation.sigma_prime(g) * g * g, 1.0, method)?.value;
    let e3 = gaussian_moment(|g| activation.sigma_prime(g).powi(2), 1.0, method)?.value;
    let e4 = gaussian_moment(|g| activation.sigma_prime(g).powi(2) * g * g, 1.0, method)?.value;
    let g2 = gamma * gamma;
    let a1 = -(g2 * e2 + (kappa2 - g2) * e1) / kappa2;
    let a0_raw = (g2 * e4 + (kappa2 - g2) * e3) / kappa2 - a1 * a1;
    if a0_raw < -1e-10 {
        return Err(Error::numerical(format!(
            "a0 = {a0_raw:.3e} is negative beyond clamp tolerance; flow moments inconsistent"
        )));
    }
    Ok(CdCoefficients {
        a1,
        a0: a0_raw.max(0.0),
        beta: 0.0,
        convention: config.beta_convention,
        gamma_flow: gamma,
        kappa2,
    })
}

/// The isotropic shift β with its provenance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BetaShift {
    pub value: f64,
    pub convention: BetaConvention,
    /// Tr(U⁻¹S), recorded only for the theorem convention.
    pub trace_uinv_s: Option<f64>,
    /// Whether the trace was Hutchinson-estimated rather than exact.
    pub hutchinson: bool,
}

/// β under the config's convention (see `beta_shift_for`).
pub fn beta_shift(
    coeffs: &CdCoefficients,
    curvature: &TeacherCurvature,
    features: &RandomFeatures,
    config: &ExperimentConfig,
) -> Result<BetaShift> {
    beta_shift_for(config.beta_convention, coeffs, curvature, features, config)
}

/// theorem: β = a0·a1²·Δt²·t'²·Tr(U⁻¹S)/d, trace via factorization solves
/// against the nonzero column space of S (Hutchinson above p = 4096,
/// flagged). pf_drift: β = a0·Δt²·κ², i.e. a0 times the mean squared
/// one-step displacement per coordinate.
pub fn beta_shift_for(
    convention: BetaConvention,
    coeffs: &CdCoefficients,
    curvature: &TeacherCurvature,
    features: &RandomFeatures,
    config: &ExperimentConfig,
) -> Result<BetaShift> {
    let dt = config.dt_step;
    match convention {
        BetaConvention::PfDrift => Ok(BetaShift {
            value: coeffs.a0 * dt * dt * coeffs.kappa2,
            convention,
            trace_uinv_s: None,
            hutchinson: false,
        }),
        BetaConvention::Theorem => {
            let p = curvature.p();
            let (trace, hutch) = if p > TRACE_EXACT_MAX_P {
                (trace_uinv_s_hutchinson(curvature, features, config.seed)?, true)
            } else {
                (curvature.trace_uinv_s(features)?, false)
            };
            let t = config.t_prime;
            let value =
                coeffs.a0 * coeffs.a1 * coeffs.a1 * dt * dt * t * t * trace / config.d as f64;
            Ok(BetaShift { value, convention, trace_uinv_s: Some(trace), hutchinson: hutch })
        }
    }
}

/// Rademacher-probe estimate of Tr(U⁻¹S): mean of zᵀU⁻¹Sz over probes.
fn trace_uinv_s_hutchinson(
    curvature: &TeacherCurvature,
    features: &RandomFeatures,
    seed: u64,
) -> Result<f64> {
    let p = curvature.p();
    let factor = curvature.factor()?;
    let mut stream = substream(seed, purpose::HUTCHINSON, 0);
    let mut acc = 0.0;
    let mut z = ndarray::Array1::<f64>::zeros(p);
    for _ in 0..HUTCHINSON_PROBES {
        for v in z.iter_mut() {
            *v = if stream.gen::<bool>() { 1.0 } else { -1.0 };
        }
        let sz = features.b.dot(&features.b.t().dot(&z));
        let w = factor.solve_vec(&sz)?;
        acc += z.dot(&w);
    }
    Ok(acc / HUTCHINSON_PROBES as f64)
}
