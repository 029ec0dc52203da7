//! Gaussian-equivalent teacher: scalar constants, the equivalent curvature
//! matrix U, and the closed-form teacher score map.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::RandomFeatures;
use crate::forward::{forward_params, ForwardParams};
use crate::linalg::{check_alloc, symmetrize, SymFactor};
use crate::moments::GaussHermite;
use crate::rng::{self, purpose, substream};
use ndarray::{Array1, Array2, Axis};
use once_cell::sync::OnceCell;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Nodes of the inner conditional-expectation quadrature (per outer draw).
const INNER_NODES: usize = 64;
/// Number of blocks used for block standard errors of derived constants.
const STDERR_BLOCKS: usize = 32;
/// Negative-variance amounts within this relative tolerance of zero are
/// clamped silently; larger clamps are recorded as warnings.
const CLAMP_TOL: f64 = 1e-8;

/// Scalar Gaussian-equivalence constants of the teacher at time t'.
#[derive(Debug, Clone, Serialize)]
pub struct TeacherConstants {
    pub a_t: f64,
    pub b_t: f64,
    pub v_t: f64,
    pub s_t2: f64,
    pub mu1: f64,
    pub a_t_stderr: f64,
    pub b_t_stderr: f64,
    pub v_t_stderr: f64,
    pub s_t2_stderr: f64,
    pub mu1_stderr: f64,
    /// Clamp events and estimation-quality notes; escalated to errors
    /// under strict mode by the caller.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
struct ConstAcc {
    n: u64,
    z0: f64,
    z0_sq: f64,
    m: f64,
    m_sq: f64,
    m_z0: f64,
    f2: f64,
    bt: f64,
    mu1: f64,
}

impl ConstAcc {
    fn merge(mut self, o: &ConstAcc) -> ConstAcc {
        self.n += o.n;
        self.z0 += o.z0;
        self.z0_sq += o.z0_sq;
        self.m += o.m;
        self.m_sq += o.m_sq;
        self.m_z0 += o.m_z0;
        self.f2 += o.f2;
        self.bt += o.bt;
        self.mu1 += o.mu1;
        self
    }
}

struct DerivedConstants {
    a_t: f64,
    b_t: f64,
    v_t2: f64,
    s_t2: f64,
    mu1: f64,
}

fn derive(acc: &ConstAcc, fp: &ForwardParams) -> DerivedConstants {
    let n = acc.n as f64;
    let decay = (-fp.t).exp();
    let mean_z0 = acc.z0 / n;
    let var_z0 = (acc.z0_sq / n - mean_z0 * mean_z0).max(f64::MIN_POSITIVE);
    let mean_m = acc.m / n;
    let var_m = acc.m_sq / n - mean_m * mean_m;
    let cov = acc.m_z0 / n - mean_m * mean_z0;
    let a_t = cov / (decay * var_z0);
    let v_t2 = var_m - (decay * a_t).powi(2) * var_z0;
    let b_t = fp.delta_var.sqrt() * (acc.bt / n);
    let s_t2 = acc.f2 / n - var_m - b_t * b_t;
    let mu1 = acc.mu1 / n;
    DerivedConstants { a_t, b_t, v_t2, s_t2, mu1 }
}

/// Clamp a variance-like quantity at zero, recording a warning when the
/// clamped amount is beyond roundoff relative to `scale`.
fn clamp_variance(value: f64, scale: f64, name: &str, warnings: &mut Vec<String>) -> f64 {
    if value >= 0.0 {
        return value;
    }
    if -value > CLAMP_TOL * scale.abs().max(f64::MIN_POSITIVE) {
        warnings.push(format!(
            "{name} estimated at {value:.3e} (scale {scale:.3e}); clamped to 0 — consider a larger mc_constants budget"
        ));
    }
    0.0
}

/// Estimate (a_t, b_t, v_t, s_t², μ1) by chunked Monte Carlo.
///
/// The outer draws are the scalar data surrogate Z0 ~ N(0, Tr(Σ)/d); the
/// conditional mean over the forward noise is integrated by an inner
/// 64-node quadrature. b_t and μ1 come from two further substreams that
/// are independent of each other and of the main stream, so the
/// b_t = (√Δ/Γ)·μ1 identity is a genuine cross-check between two
/// estimators (μ1 uses the integration-by-parts partner E[σ(Γu)·u]).
pub fn estimate_teacher_constants(config: &ExperimentConfig) -> Result<TeacherConstants> {
    config.validate()?;
    let fp = forward_params(config.t_prime, &config.sigma_spec, config.d)?;
    let var_z0 = config.sigma_spec.trace_over_d(config.d);
    let inner = GaussHermite::new(INNER_NODES)?;
    let act = config.activation;
    let decay = (-fp.t).exp();
    let noise = fp.delta_var.sqrt();
    let gamma = fp.gamma_t;
    let z0_std = var_z0.sqrt();

    let plan = rng::chunk_plan(config.mc_constants, rng::MC_CHUNK);
    let partials: Vec<Result<ConstAcc>> = plan
        .par_iter()
        .map(|&(idx, m)| {
            let mut main = substream(config.seed, purpose::CONSTANTS_MAIN, idx);
            let mut bt_stream = substream(config.seed, purpose::CONSTANTS_BT, idx);
            let mut mu1_stream = substream(config.seed, purpose::CONSTANTS_MU1, idx);
            let mut acc = ConstAcc::default();
            for _ in 0..m {
                let z0 = z0_std * main.sample::<f64, _>(StandardNormal);
                let center = decay * z0;
                let mut m_val = 0.0;
                let mut f2_val = 0.0;
                for (&x, &w) in inner.nodes.iter().zip(&inner.weights) {
                    let f = act.sigma(center + noise * x);
                    m_val += w * f;
                    f2_val += w * f * f;
                }
                if !(m_val.is_finite() && f2_val.is_finite()) {
                    return Err(Error::numerical(format!(
                        "non-finite feature moment at z0 = {z0}"
                    )));
                }
                acc.n += 1;
                acc.z0 += z0;
                acc.z0_sq += z0 * z0;
                acc.m += m_val;
                acc.m_sq += m_val * m_val;
                acc.m_z0 += m_val * z0;
                acc.f2 += f2_val;

                let u: f64 = bt_stream.sample(StandardNormal);
                acc.bt += act.sigma_prime(gamma * u);
                let u2: f64 = mu1_stream.sample(StandardNormal);
                acc.mu1 += act.sigma(gamma * u2) * u2;
            }
            Ok(acc)
        })
        .collect();

    let mut chunk_accs = Vec::with_capacity(partials.len());
    for part in partials {
        chunk_accs.push(part?);
    }
    let total = chunk_accs.iter().fold(ConstAcc::default(), |a, b| a.merge(b));
    let full = derive(&total, &fp);

    // Block standard errors of the derived constants.
    let blocks = rng::block_partials(&chunk_accs, STDERR_BLOCKS, |a, b| a.merge(b));
    let per_block: Vec<DerivedConstants> = blocks.iter().map(|b| derive(b, &fp)).collect();
    let se = |f: &dyn Fn(&DerivedConstants) -> f64| -> f64 {
        let vals: Vec<f64> = per_block.iter().map(|d| f(d)).collect();
        rng::block_stats(&vals).1
    };

    let mut warnings = Vec::new();
    let scale = total.f2 / total.n as f64;
    let v_t2 = clamp_variance(full.v_t2, scale, "v_t²", &mut warnings);
    let s_t2 = clamp_variance(full.s_t2, scale, "s_t²", &mut warnings);

    Ok(TeacherConstants {
        a_t: full.a_t,
        b_t: full.b_t,
        v_t: v_t2.sqrt(),
        s_t2,
        mu1: full.mu1,
        a_t_stderr: se(&|d| d.a_t),
        b_t_stderr: se(&|d| d.b_t),
        v_t_stderr: se(&|d| d.v_t2.max(0.0).sqrt()),
        s_t2_stderr: se(&|d| d.s_t2),
        mu1_stderr: se(&|d| d.mu1),
        warnings,
    })
}

/// The Gaussian-equivalent teacher curvature U (p×p) with its provenance
/// and lazily cached factorization artifacts.
pub struct TeacherCurvature {
    pub u: Array2<f64>,
    pub seed: u64,
    pub constants: TeacherConstants,
    factor: OnceCell<SymFactor>,
    /// K = U⁻¹B, shared by the score map, the trace of U⁻¹S, and the
    /// non-isotropic channel.
    solve_b: OnceCell<Array2<f64>>,
}

impl TeacherCurvature {
    pub fn p(&self) -> usize {
        self.u.nrows()
    }

    /// Cholesky handle (U is positive definite whenever s_t² > 0).
    pub fn factor(&self) -> Result<&SymFactor> {
        self.factor.get_or_try_init(|| SymFactor::new(&self.u))
    }

    /// K = U⁻¹·B, computed once.
    pub fn solve_b(&self, features: &RandomFeatures) -> Result<&Array2<f64>> {
        self.solve_b.get_or_try_init(|| {
            let f = self.factor()?;
            f.solve_mat(&features.b)
        })
    }

    /// Tr(U⁻¹S) = Σ_{ij} B_ij·K_ij, exact via the cached solves.
    pub fn trace_uinv_s(&self, features: &RandomFeatures) -> Result<f64> {
        let k = self.solve_b(features)?;
        Ok((&features.b * k).sum())
    }
}

/// Assemble U = (1/n)GGᵀ + b_t²·S + s_t²·I from seeded draws of the
/// training surrogate X' (d×n) and the equivalent noise Ω (p×n).
pub fn build_teacher_curvature(
    features: &RandomFeatures,
    constants: &TeacherConstants,
    config: &ExperimentConfig,
) -> Result<TeacherCurvature> {
    config.validate()?;
    let n = config.n();
    let (p, d) = (features.p(), features.d());
    if n == 0 {
        return Err(Error::validation("n must be ≥ 1"));
    }
    for (name, v) in [
        ("a_t", constants.a_t),
        ("b_t", constants.b_t),
        ("v_t", constants.v_t),
        ("s_t2", constants.s_t2),
        ("mu1", constants.mu1),
    ] {
        if !v.is_finite() {
            return Err(Error::numerical(format!("teacher constant {name} is not finite")));
        }
    }
    check_alloc(p, n, "equivalent feature block G")?;
    check_alloc(p, p, "teacher curvature U")?;

    let fp = forward_params(config.t_prime, &config.sigma_spec, config.d)?;
    let stds = config.sigma_spec.std_devs(d);

    // X' columns in fixed chunks.
    const COL_CHUNK: usize = 16;
    let n_chunks = n.div_ceil(COL_CHUNK);
    let xp_blocks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let cols = COL_CHUNK.min(n - chunk * COL_CHUNK);
            let mut rng = substream(config.seed, purpose::TRAIN_XPRIME, chunk as u64);
            let mut out = Vec::with_capacity(cols * d);
            for _ in 0..cols {
                for std in stds.iter().take(d) {
                    out.push(std * rng.sample::<f64, _>(StandardNormal));
                }
            }
            out
        })
        .collect();
    let mut xp = Array2::<f64>::zeros((d, n));
    {
        let mut col = 0usize;
        for block in xp_blocks {
            for chunk_col in block.chunks(d) {
                for (r, &v) in chunk_col.iter().enumerate() {
                    xp[(r, col)] = v;
                }
                col += 1;
            }
        }
    }

    let om_blocks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let cols = COL_CHUNK.min(n - chunk * COL_CHUNK);
            let mut rng = substream(config.seed, purpose::EQUIV_OMEGA, chunk as u64);
            (0..cols * p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let mut omega = Array2::<f64>::zeros((p, n));
    {
        let mut col = 0usize;
        for block in om_blocks {
            for chunk_col in block.chunks(p) {
                for (r, &v) in chunk_col.iter().enumerate() {
                    omega[(r, col)] = v;
                }
                col += 1;
            }
        }
    }

    let decay = (-fp.t).exp();
    let mut g = features.b.dot(&xp);
    g.mapv_inplace(|x| decay * constants.a_t * x);
    g.scaled_add(constants.v_t, &omega);

    let mut u = g.dot(&g.t()) / n as f64;
    u.scaled_add(constants.b_t * constants.b_t, &features.s);
    let mut diag = u.diag_mut();
    diag += constants.s_t2;
    symmetrize(&mut u);

    Ok(TeacherCurvature {
        u,
        seed: config.seed,
        constants: constants.clone(),
        factor: OnceCell::new(),
        solve_b: OnceCell::new(),
    })
}

/// The closed-form teacher score s_φ(x) = −μ1·Bᵀ·U⁻¹·h(x), h(x) = σ(Bx).
pub struct TeacherScoreMap {
    pub features: Arc<RandomFeatures>,
    pub curvature: Arc<TeacherCurvature>,
    pub mu1: f64,
    pub forward: ForwardParams,
}

impl TeacherScoreMap {
    pub fn new(
        features: Arc<RandomFeatures>,
        curvature: Arc<TeacherCurvature>,
        config: &ExperimentConfig,
    ) -> Result<Self> {
        let forward = forward_params(config.t_prime, &config.sigma_spec, config.d)?;
        let mu1 = curvature.constants.mu1;
        Ok(TeacherScoreMap { features, curvature, mu1, forward })
    }

    pub fn activation_features(&self, x: &Array1<f64>, act: crate::activation::Activation) -> Array1<f64> {
        let mut h = self.features.b.dot(x);
        h.mapv_inplace(|v| act.sigma(v));
        h
    }

    /// Score at a single point.
    pub fn score(&self, x: &Array1<f64>, act: crate::activation::Activation) -> Result<Array1<f64>> {
        let h = self.activation_features(x, act);
        let k = self.curvature.solve_b(&self.features)?;
        let mut s = k.t().dot(&h);
        s.mapv_inplace(|v| -self.mu1 * v);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite teacher score"));
        }
        Ok(s)
    }

    /// Scores for a batch of rows (m×d in, m×d out).
    pub fn score_batch(&self, x_rows: &Array2<f64>, act: crate::activation::Activation) -> Result<Array2<f64>> {
        let mut h = x_rows.dot(&self.features.b.t());
        h.mapv_inplace(|v| act.sigma(v));
        let k = self.curvature.solve_b(&self.features)?;
        let mut s = h.dot(k);
        s.mapv_inplace(|v| -self.mu1 * v);
        Ok(s)
    }

    /// Converged teacher top layer A_φ = −(√p/√Δ_t')·Vᵀ·U⁻¹ with
    /// V = μ1·(√Δ_t'/Γ_t')·B, so that s_φ(x) = (1/√p)·A_φ·h(x) for
    /// unit-trace isotropic data.
    pub fn top_layer(&self) -> Result<Array2<f64>> {
        let p = self.features.p() as f64;
        let k = self.curvature.solve_b(&self.features)?;
        let scale = -(p.sqrt() * self.mu1 / self.forward.gamma_t);
        Ok(k.t().mapv(|v| scale * v))
    }
}

/// Mean and mean-square of per-coordinate teacher features, for the
/// Tr(U)/p cross-check: returns (Tr(U)/p, E[F²] estimate, stderr).
pub fn trace_cross_check(curvature: &TeacherCurvature, config: &ExperimentConfig) -> Result<(f64, f64, f64)> {
    let p = curvature.p();
    let tr_over_p = curvature.u.diag().sum() / p as f64;
    // E[F²] from the constants stream definition: quadrature outer+inner.
    let fp = forward_params(config.t_prime, &config.sigma_spec, config.d)?;
    let var_z0 = config.sigma_spec.trace_over_d(config.d);
    let outer = GaussHermite::new(128)?;
    let inner = GaussHermite::new(INNER_NODES)?;
    let decay = (-fp.t).exp();
    let noise = fp.delta_var.sqrt();
    let act = config.activation;
    let ef2 = outer.integrate(var_z0, |z0| {
        inner
            .nodes
            .iter()
            .zip(&inner.weights)
            .map(|(&x, &w)| {
                let f = act.sigma(decay * z0 + noise * x);
                w * f * f
            })
            .sum()
    });
    Ok((tr_over_p, ef2, 0.0))
}

/// Mean squared feature norm E‖h‖²/p over the forward ensemble via the
/// diagonal of U's population target — used only by tests.
pub fn mean_row_energy(u: &Array2<f64>) -> f64 {
    u.sum_axis(Axis(0)).sum() / (u.nrows() * u.ncols()) as f64
}
