//! Brute-force Monte Carlo oracles: empirical feature increments Δh, the
//! empirical one-step curvature, empirical (a1, a0) from the bivariate
//! increment law, the exact second-moment decomposition check, and the
//! closed-form-vs-empirical spectrum comparison that adjudicates the two
//! isotropic-shift conventions.

use crate::activation::Activation;
use crate::config::{BetaConvention, ExperimentConfig};
use crate::error::{Error, Result};
use crate::features::RandomFeatures;
use crate::linalg::{check_alloc, sym_eigh, symmetrize};
use crate::operators::CdOperators;
use crate::rng::{purpose, substream};
use crate::teacher::TeacherScoreMap;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Matrix-valued oracles stay cheap below this width.
pub const ORACLE_MATRIX_CAP: usize = 512;
/// Decomposition check cap (it accumulates p×p second moments per chunk).
pub const DECOMPOSITION_CAP: usize = 256;
/// Block count for scalar-pair standard errors.
const PAIR_BLOCKS: usize = 100;
/// Samples per chunk in the decomposition check.
const DECOMPOSITION_CHUNK: usize = 2048;
/// Training points processed per parallel window (merged in index order).
const POINT_WINDOW: usize = 8;

/// One teacher increment at a training point: the forward sample, the
/// one-step Euler target, and the induced feature-space displacement.
pub struct IncrementSample {
    pub x_nu: Array1<f64>,
    pub xi: Array1<f64>,
    pub x_t: Array1<f64>,
    pub x_hat: Array1<f64>,
    /// x_hat − x_t = Δt·(−x_t − s_φ(x_t)).
    pub delta_x: Array1<f64>,
    /// W·delta_x/√d.
    pub delta_g: Array1<f64>,
    /// h(x_t) − h(x_hat).
    pub delta_h: Array1<f64>,
}

pub fn sample_increment(
    x_nu: &Array1<f64>,
    teacher: &TeacherScoreMap,
    config: &ExperimentConfig,
    stream: &mut ChaCha8Rng,
) -> Result<IncrementSample> {
    let d = x_nu.len();
    let xi = Array1::from_iter((0..d).map(|_| stream.sample::<f64, _>(rand_distr::StandardNormal)));
    let decay = (-teacher.forward.t).exp();
    let noise = teacher.forward.delta_var.sqrt();
    let x_t = Array1::from_iter(
        x_nu.iter().zip(xi.iter()).map(|(&x0, &z)| decay * x0 + noise * z),
    );
    let score = teacher.score(&x_t, config.activation)?;
    let delta_x = Array1::from_iter(
        x_t.iter()
            .zip(score.iter())
            .map(|(&xt, &s)| config.dt_step * (-xt - s)),
    );
    let x_hat = &x_t + &delta_x;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let delta_g = teacher.features.w.dot(&delta_x).mapv(|v| v * inv_sqrt_d);
    let h_t = teacher.activation_features(&x_t, config.activation);
    let h_hat = teacher.activation_features(&x_hat, config.activation);
    let delta_h = &h_t - &h_hat;
    Ok(IncrementSample { x_nu: x_nu.clone(), xi, x_t, x_hat, delta_x, delta_g, delta_h })
}

/// Training points for the oracle, drawn i.i.d. N(0, Σ) once per run.
pub fn oracle_dataset(config: &ExperimentConfig) -> Result<Array2<f64>> {
    let (n, d) = (config.n(), config.d);
    check_alloc(n, d, "oracle dataset")?;
    let stds = config.sigma_spec.std_devs(d);
    let mut stream = substream(config.seed, purpose::ORACLE_DATASET, 0);
    let mut buf = Vec::with_capacity(n * d);
    for _ in 0..n {
        for std in stds.iter().take(d) {
            buf.push(std * stream.sample::<f64, _>(rand_distr::StandardNormal));
        }
    }
    Array2::from_shape_vec((n, d), buf)
        .map_err(|e| Error::validation(format!("dataset shape: {e}")))
}

/// Empirical one-step curvature (1/n)·Σ_ν mean over `reps` of Δh·Δhᵀ,
/// symmetric PSD by construction. Intended for small scale; widths above
/// the cap need `allow_large`.
pub fn empirical_u_cd(
    teacher: &TeacherScoreMap,
    config: &ExperimentConfig,
    reps: usize,
    allow_large: bool,
) -> Result<Array2<f64>> {
    let p = teacher.features.p();
    let n = config.n();
    if reps == 0 {
        return Err(Error::validation("reps must be positive"));
    }
    if p > ORACLE_MATRIX_CAP && !allow_large {
        return Err(Error::resource(format!(
            "empirical curvature at p = {p} exceeds the p ≤ {ORACLE_MATRIX_CAP} oracle cap \
             (override with allow_large)"
        )));
    }
    check_alloc(p, p, "empirical curvature")?;
    check_alloc(reps, p, "increment batch")?;
    let dataset = oracle_dataset(config)?;
    let mut u = Array2::<f64>::zeros((p, p));
    let points: Vec<usize> = (0..n).collect();
    for window in points.chunks(POINT_WINDOW) {
        let partials: Vec<Array2<f64>> = window
            .par_iter()
            .map(|&nu| point_increment_moment(nu, &dataset.row(nu).to_owned(), teacher, config, reps))
            .collect::<Result<Vec<_>>>()?;
        for part in partials {
            u += &part;
        }
    }
    u.mapv_inplace(|v| v / n as f64);
    symmetrize(&mut u);
    Ok(u)
}

/// mean over reps of Δh·Δhᵀ at one training point, with the per-point
/// substream drawing ξ in the same order as repeated `sample_increment`
/// calls on that stream.
fn point_increment_moment(
    nu: usize,
    x_nu: &Array1<f64>,
    teacher: &TeacherScoreMap,
    config: &ExperimentConfig,
    reps: usize,
) -> Result<Array2<f64>> {
    let d = x_nu.len();
    let mut stream = substream(config.seed, purpose::ORACLE_INCREMENTS, nu as u64);
    let mut buf = Vec::with_capacity(reps * d);
    for _ in 0..reps * d {
        buf.push(stream.sample::<f64, _>(rand_distr::StandardNormal));
    }
    let xi = Array2::from_shape_vec((reps, d), buf)
        .map_err(|e| Error::validation(format!("batch shape: {e}")))?;
    let decay = (-teacher.forward.t).exp();
    let noise = teacher.forward.delta_var.sqrt();
    let mut x_t = xi;
    for mut row in x_t.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = decay * x_nu[j] + noise * *v;
        }
    }
    let score = teacher.score_batch(&x_t, config.activation)?;
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite teacher score in oracle batch"));
    }
    let dt = config.dt_step;
    let mut x_hat = x_t.clone();
    x_hat.zip_mut_with(&score, |xh, &s| *xh += dt * (-*xh - s));
    let bt = teacher.features.b.t();
    let mut h = x_t.dot(&bt);
    h.mapv_inplace(|v| config.activation.sigma(v));
    let mut h_hat = x_hat.dot(&bt);
    h_hat.mapv_inplace(|v| config.activation.sigma(v));
    let dh = &h - &h_hat;
    Ok(dh.t().dot(&dh).mapv(|v| v / reps as f64))
}

/// Second-moment description of a (g, Δg) pair: Γ_d² = ‖x‖²/d,
/// Δ_d² = ‖δx‖²/d, c_d = xᵀδx/d.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairLaw {
    pub gamma_d2: f64,
    pub delta_d2: f64,
    pub c_d: f64,
}

impl PairLaw {
    pub fn from_vectors(x: &Array1<f64>, delta_x: &Array1<f64>) -> Result<PairLaw> {
        if x.is_empty() || x.len() != delta_x.len() {
            return Err(Error::validation(format!(
                "point/displacement lengths {} vs {}",
                x.len(),
                delta_x.len()
            )));
        }
        let d = x.len() as f64;
        Ok(PairLaw {
            gamma_d2: x.dot(x) / d,
            delta_d2: delta_x.dot(delta_x) / d,
            c_d: x.dot(delta_x) / d,
        })
    }

    /// The law induced by one Euler step of size Δt against a score field
    /// with contraction γ and squared drift magnitude κ²: E[g²] = 1,
    /// E[Δg²] = Δt²·κ², E[g·Δg] = −Δt·γ.
    pub fn from_flow(gamma_flow: f64, kappa2: f64, dt: f64) -> PairLaw {
        PairLaw { gamma_d2: 1.0, delta_d2: dt * dt * kappa2, c_d: -dt * gamma_flow }
    }

    /// (aa, bb, cc) with g = aa·Z1, Δg = bb·Z1 + cc·Z2 for independent
    /// standard normals.
    fn mixing(&self) -> Result<(f64, f64, f64)> {
        if !(self.gamma_d2 > 0.0 && self.gamma_d2.is_finite()) {
            return Err(Error::validation(format!(
                "pair law needs Γ_d² > 0, got {}",
                self.gamma_d2
            )));
        }
        if !(self.delta_d2 > 0.0 && self.delta_d2.is_finite()) {
            return Err(Error::validation(format!(
                "pair law needs a nonzero perturbation, got Δ_d² = {}",
                self.delta_d2
            )));
        }
        let aa = self.gamma_d2.sqrt();
        let bb = self.c_d / aa;
        let cc = (self.delta_d2 - bb * bb).max(0.0).sqrt();
        Ok((aa, bb, cc))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmpiricalCoefficients {
    pub a1: f64,
    pub a0: f64,
    pub a1_stderr: f64,
    pub a0_stderr: f64,
    pub samples: usize,
}

/// a1 = E[ΔhΔg]/E[Δg²] and a0 = E[Δh²]/E[Δg²] − a1² by direct sampling of
/// the bivariate pair law, with block standard errors.
pub fn empirical_a1_a0(
    x: &Array1<f64>,
    delta_x: &Array1<f64>,
    activation: Activation,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalCoefficients> {
    empirical_a1_a0_from_law(&PairLaw::from_vectors(x, delta_x)?, activation, samples, seed)
}

pub fn empirical_a1_a0_from_law(
    law: &PairLaw,
    activation: Activation,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalCoefficients> {
    if samples < PAIR_BLOCKS * 10 {
        return Err(Error::validation(format!(
            "need at least {} samples for block errors, got {samples}",
            PAIR_BLOCKS * 10
        )));
    }
    let (aa, bb, cc) = law.mixing()?;
    let per = samples / PAIR_BLOCKS;
    let rem = samples % PAIR_BLOCKS;
    let blocks: Vec<(f64, f64)> = (0..PAIR_BLOCKS)
        .into_par_iter()
        .map(|k| {
            let m = per + usize::from(k < rem);
            let mut stream = substream(seed, purpose::ORACLE_PAIRS, k as u64);
            let (mut s_hg, mut s_gg, mut s_hh) = (0.0, 0.0, 0.0);
            for _ in 0..m {
                let z1: f64 = stream.sample(rand_distr::StandardNormal);
                let z2: f64 = stream.sample(rand_distr::StandardNormal);
                let g = aa * z1;
                let dg = bb * z1 + cc * z2;
                let dh = activation.sigma(g) - activation.sigma(g + dg);
                s_hg += dh * dg;
                s_gg += dg * dg;
                s_hh += dh * dh;
            }
            let a1 = s_hg / s_gg;
            let a0 = s_hh / s_gg - a1 * a1;
            (a1, a0)
        })
        .collect();
    let (a1, a1_stderr) = mean_stderr(blocks.iter().map(|b| b.0));
    let (a0, a0_stderr) = mean_stderr(blocks.iter().map(|b| b.1));
    Ok(EmpiricalCoefficients { a1, a0, a1_stderr, a0_stderr, samples })
}

fn mean_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct IncrementDecompositionReport {
    /// ‖M1 − (a1²·M2 + a0·E[Δg²]·I)‖_F / ‖M1‖_F.
    pub frob_rel_error: f64,
    /// Split-half Frobenius discrepancy of M1, the pure-MC noise scale.
    pub noise_floor: f64,
    pub a1_hat: f64,
    pub a0_hat: f64,
    pub p: usize,
    pub samples: usize,
}

/// Checks the exact decomposition E[ΔhΔhᵀ] = a1²·E[ΔgΔgᵀ] + a0·E[Δg²]·I
/// over the feature-row ensemble. For Gaussian rows the coordinates of
/// (g, Δg) = (Wx/√d, Wδx/√d) are i.i.d. bivariate normal with the Gram of
/// (x, δx), so the ensemble is sampled directly from that law.
pub fn validate_increment_decomposition(
    x: &Array1<f64>,
    delta_x: &Array1<f64>,
    features: &RandomFeatures,
    activation: Activation,
    samples: usize,
    seed: u64,
    allow_large: bool,
) -> Result<IncrementDecompositionReport> {
    let p = features.p();
    if p > DECOMPOSITION_CAP && !allow_large {
        return Err(Error::resource(format!(
            "decomposition check at p = {p} exceeds the p ≤ {DECOMPOSITION_CAP} cap \
             (override with allow_large)"
        )));
    }
    if samples < 2 * DECOMPOSITION_CHUNK {
        return Err(Error::validation(format!(
            "need at least {} samples for the split-half floor, got {samples}",
            2 * DECOMPOSITION_CHUNK
        )));
    }
    check_alloc(p, p, "decomposition second moments")?;
    check_alloc(DECOMPOSITION_CHUNK, p, "decomposition chunk")?;
    let (aa, bb, cc) = PairLaw::from_vectors(x, delta_x)?.mixing()?;

    struct ChunkMoments {
        m1: Array2<f64>,
        m2: Array2<f64>,
        s_hg: f64,
        s_gg: f64,
        s_hh: f64,
        count: usize,
        first_half: bool,
    }

    let n_chunks = samples.div_ceil(DECOMPOSITION_CHUNK);
    let half = samples / 2;
    let chunks: Vec<ChunkMoments> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let start = k * DECOMPOSITION_CHUNK;
            let m = DECOMPOSITION_CHUNK.min(samples - start);
            let mut stream = substream(seed, purpose::DECOMPOSITION_ROWS, k as u64);
            let mut draw = |len: usize| {
                let mut buf = Vec::with_capacity(len);
                for _ in 0..len {
                    buf.push(stream.sample::<f64, _>(rand_distr::StandardNormal));
                }
                buf
            };
            let z1 = Array2::from_shape_vec((m, p), draw(m * p)).expect("chunk shape");
            let z2 = Array2::from_shape_vec((m, p), draw(m * p)).expect("chunk shape");
            let g = z1.mapv(|v| aa * v);
            let mut dg = z1.mapv(|v| bb * v);
            dg.scaled_add(cc, &z2);
            let mut dh = g.clone();
            dh.zip_mut_with(&dg, |h, &step| {
                *h = activation.sigma(*h) - activation.sigma(*h + step)
            });
            let s_hg = (&dh * &dg).sum();
            let s_gg = (&dg * &dg).sum();
            let s_hh = (&dh * &dh).sum();
            ChunkMoments {
                m1: dh.t().dot(&dh),
                m2: dg.t().dot(&dg),
                s_hg,
                s_gg,
                s_hh,
                count: m,
                first_half: start < half,
            }
        })
        .collect();

    let mut m1_sum = Array2::<f64>::zeros((p, p));
    let mut m2_sum = Array2::<f64>::zeros((p, p));
    let mut m1_first = Array2::<f64>::zeros((p, p));
    let (mut s_hg, mut s_gg, mut s_hh) = (0.0, 0.0, 0.0);
    let mut first_count = 0usize;
    for c in &chunks {
        m1_sum += &c.m1;
        m2_sum += &c.m2;
        s_hg += c.s_hg;
        s_gg += c.s_gg;
        s_hh += c.s_hh;
        if c.first_half {
            m1_first += &c.m1;
            first_count += c.count;
        }
    }
    let n = samples as f64;
    let m1 = m1_sum.mapv(|v| v / n);
    let m2 = m2_sum.mapv(|v| v / n);
    let a1_hat = s_hg / s_gg;
    let eg2 = s_gg / (n * p as f64);
    let a0_hat = s_hh / s_gg - a1_hat * a1_hat;
    let mut rhs = m2.mapv(|v| a1_hat * a1_hat * v);
    for i in 0..p {
        rhs[(i, i)] += a0_hat * eg2;
    }
    let m1_norm = frobenius(&m1);
    let frob_rel_error = frobenius(&(&m1 - &rhs)) / m1_norm;
    let m1a = m1_first.mapv(|v| v / first_count as f64);
    let m1b = (&m1_sum - &m1_first).mapv(|v| v / (samples - first_count) as f64);
    let noise_floor = frobenius(&(&m1a - &m1b)) / (2.0 * m1_norm);
    if !(frob_rel_error.is_finite() && noise_floor.is_finite()) {
        return Err(Error::numerical("non-finite decomposition residual"));
    }
    Ok(IncrementDecompositionReport { frob_rel_error, noise_floor, a1_hat, a0_hat, p, samples })
}

/// The standard probe geometry for the decomposition check: a generic
/// point x and a small displacement δx = 1e-3·(−0.2·x + √0.16·z) with
/// fresh z, i.e. mild contraction plus independent drift.
pub fn default_displacement_pair(d: usize, seed: u64) -> (Array1<f64>, Array1<f64>) {
    let mut stream = substream(seed, purpose::DECOMPOSITION_ROWS, u64::MAX);
    let x = Array1::from_iter((0..d).map(|_| stream.sample::<f64, _>(rand_distr::StandardNormal)));
    let z = Array1::from_iter((0..d).map(|_| stream.sample::<f64, _>(rand_distr::StandardNormal)));
    let dx = Array1::from_iter(
        x.iter()
            .zip(z.iter())
            .map(|(&xv, &zv)| 1e-3 * (-0.2 * xv + (0.16f64).sqrt() * zv)),
    );
    (x, dx)
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumComparison {
    /// |Tr(emp) − Tr(closed)| / Tr(closed); sign follows the denominator.
    pub trace_gap: f64,
    /// |λ_emp[p−k] − λ_cl[p−k]| / λ_cl[p−k] for k = 1..=top_k.
    pub top_gaps: Vec<f64>,
    /// Mean of the p−d smallest empirical eigenvalues.
    pub bottom_cluster_mean: f64,
    pub bottom_count: usize,
    pub beta_theorem: f64,
    pub beta_pf_drift: f64,
    pub bottom_to_beta_theorem: f64,
    pub bottom_to_beta_pf_drift: f64,
    /// Convention whose β the bottom cluster sits closest to (log-ratio).
    pub selected_convention: BetaConvention,
    pub empirical_min: f64,
    pub empirical_max: f64,
    /// λ_min ≥ −1e−10·|λ_max| for the empirical matrix.
    pub psd_ok: bool,
}

pub fn compare_spectra(
    closed: &CdOperators,
    empirical: &Array2<f64>,
    top_k: usize,
    d: usize,
    beta_theorem: f64,
    beta_pf_drift: f64,
) -> Result<SpectrumComparison> {
    let p = closed.p();
    if empirical.nrows() != p || empirical.ncols() != p {
        return Err(Error::validation(format!(
            "spectrum comparison dimension mismatch: closed {p}, empirical {}×{}",
            empirical.nrows(),
            empirical.ncols()
        )));
    }
    if top_k == 0 || top_k > p {
        return Err(Error::validation(format!("top_k must be in 1..={p}, got {top_k}")));
    }
    if d >= p {
        return Err(Error::validation(format!(
            "bottom cluster needs d < p (got d = {d}, p = {p})"
        )));
    }
    let lc = &closed.eig()?.lambdas;
    let (le, _) = sym_eigh(empirical)?;
    let tc = closed.trace();
    let te = empirical.diag().sum();
    let trace_gap = rel_gap(te, tc);
    let top_gaps: Vec<f64> = (1..=top_k).map(|k| rel_gap(le[p - k], lc[p - k])).collect();
    let bottom_count = p - d;
    let bottom_cluster_mean = le.iter().take(bottom_count).sum::<f64>() / bottom_count as f64;
    let bottom_to_beta_theorem = bottom_cluster_mean / beta_theorem;
    let bottom_to_beta_pf_drift = bottom_cluster_mean / beta_pf_drift;
    let selected_convention = if convention_distance(bottom_cluster_mean, beta_pf_drift)
        < convention_distance(bottom_cluster_mean, beta_theorem)
    {
        BetaConvention::PfDrift
    } else {
        BetaConvention::Theorem
    };
    let empirical_min = le[0];
    let empirical_max = le[p - 1];
    let psd_ok = empirical_min >= -1e-10 * empirical_max.abs();
    Ok(SpectrumComparison {
        trace_gap,
        top_gaps,
        bottom_cluster_mean,
        bottom_count,
        beta_theorem,
        beta_pf_drift,
        bottom_to_beta_theorem,
        bottom_to_beta_pf_drift,
        selected_convention,
        empirical_min,
        empirical_max,
        psd_ok,
    })
}

/// |e − c|/c with the sign carried by the reference c; exact agreement is
/// 0 even when c = 0, and a zero reference falls back to the empirical
/// scale so the gap stays finite.
fn rel_gap(e: f64, c: f64) -> f64 {
    if e == c {
        0.0
    } else if c != 0.0 {
        (e - c).abs() / c
    } else {
        (e - c).abs() / e
    }
}

/// Distance of the observed bottom cluster from a candidate β, measured
/// multiplicatively when possible and absolutely otherwise.
fn convention_distance(bottom: f64, beta: f64) -> f64 {
    let ratio = bottom / beta;
    if ratio.is_finite() && ratio > 0.0 {
        ratio.ln().abs()
    } else if (bottom - beta).is_finite() {
        f64::MAX * 0.5 + (bottom - beta).abs()
    } else {
        f64::MAX
    }
}
