//! One-step distillation operators: the non-isotropic channel
//! A = S − μ1²·S·(U+γI)⁻¹·S, the curvature U_cd = Δt²a1²A + βI with its
//! exact structured spectrum, and the closed-form student gradient flow of
//! the quadratic objective L(B) = (1/p)·Tr(B·U_cd·Bᵀ).

use crate::config::ExperimentConfig;
use crate::diagnostics::{eigendecompose, EigSystem};
use crate::error::{Error, Result};
use crate::features::RandomFeatures;
use crate::flow::CdCoefficients;
use crate::linalg::{check_alloc, symmetrize, SymFactor};
use crate::teacher::TeacherCurvature;
use ndarray::{Array1, Array2};
use ndarray_linalg::cholesky::{Cholesky, UPLO};
use once_cell::sync::OnceCell;

/// A = S − μ1²·S·(U+γI)⁻¹·S, assembled through the feature factor
/// B (S = BBᵀ) as B·(I − μ1²·Bᵀ(U+γI)⁻¹B)·Bᵀ, which needs only d
/// factorization solves instead of p.
pub fn build_a(
    features: &RandomFeatures,
    curvature: &TeacherCurvature,
    mu1: f64,
    ridge: f64,
) -> Result<Array2<f64>> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::validation(format!("ridge must be ≥ 0, got {ridge}")));
    }
    let p = features.p();
    check_alloc(p, p, "non-isotropic channel A")?;
    let m = inner_channel(features, curvature, mu1, ridge)?;
    let mut a = features.b.dot(&m).dot(&features.b.t());
    symmetrize(&mut a);
    Ok(a)
}

/// I − μ1²·Bᵀ(U+γI)⁻¹B (d×d), the curvature-screened core of A.
fn inner_channel(
    features: &RandomFeatures,
    curvature: &TeacherCurvature,
    mu1: f64,
    ridge: f64,
) -> Result<Array2<f64>> {
    let d = features.d();
    let k = if ridge == 0.0 {
        curvature.solve_b(features)?.clone()
    } else {
        let mut shifted = curvature.u.clone();
        for i in 0..curvature.p() {
            shifted[(i, i)] += ridge;
        }
        SymFactor::new(&shifted)?.solve_mat(&features.b)?
    };
    let mut m = Array2::<f64>::eye(d);
    m.scaled_add(-mu1 * mu1, &features.b.t().dot(&k));
    symmetrize(&mut m);
    Ok(m)
}

/// Closed-form one-step curvature and its provenance.
pub struct CdOperators {
    pub a: Array2<f64>,
    pub u_cd: Array2<f64>,
    pub ridge_used: f64,
    pub coeffs_used: CdCoefficients,
    eig: OnceCell<EigSystem>,
}

impl CdOperators {
    pub fn p(&self) -> usize {
        self.u_cd.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.u_cd.diag().sum()
    }

    /// Dense eigensystem of U_cd, computed once on demand.
    pub fn eig(&self) -> Result<&EigSystem> {
        self.eig.get_or_try_init(|| eigendecompose(&self.u_cd))
    }
}

/// U_cd = Δt²·a1²·A + β·I; `coeffs` must already carry β (see beta_shift).
pub fn assemble_u_cd(
    a: Array2<f64>,
    coeffs: &CdCoefficients,
    config: &ExperimentConfig,
    ridge_used: f64,
) -> Result<CdOperators> {
    if a.nrows() != a.ncols() {
        return Err(Error::validation("A must be square"));
    }
    for (name, v) in [("a1", coeffs.a1), ("a0", coeffs.a0), ("beta", coeffs.beta)] {
        if !v.is_finite() {
            return Err(Error::numerical(format!("coefficient {name} is not finite")));
        }
    }
    let dt = config.dt_step;
    let scale = dt * dt * coeffs.a1 * coeffs.a1;
    let mut u_cd = a.mapv(|v| scale * v);
    for i in 0..u_cd.nrows() {
        u_cd[(i, i)] += coeffs.beta;
    }
    symmetrize(&mut u_cd);
    Ok(CdOperators { a, u_cd, ridge_used, coeffs_used: *coeffs, eig: OnceCell::new() })
}

/// Exact spectrum of U_cd split into the ker(S) atom at β (multiplicity
/// p−d) and the d-dimensional bulk Δt²a1²ν_j + β, where ν_j are the
/// eigenvalues of the screened Gram form Lᵀ(I − μ1²Bᵀ(U+γI)⁻¹B)L with
/// BᵀB = LLᵀ. This route represents the atom exactly — a dense eigensolve
/// cannot resolve it to a relative tolerance below its own roundoff.
pub struct StructuredCdSpectrum {
    pub beta: f64,
    pub atom_multiplicity: usize,
    pub bulk: Array1<f64>,
    pub nu: Array1<f64>,
}

impl StructuredCdSpectrum {
    /// All p eigenvalues, ascending.
    pub fn full_spectrum(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(self.atom_multiplicity + self.bulk.len());
        all.extend(std::iter::repeat(self.beta).take(self.atom_multiplicity));
        all.extend(self.bulk.iter().cloned());
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all
    }
}

pub fn cd_spectrum_structured(
    features: &RandomFeatures,
    curvature: &TeacherCurvature,
    coeffs: &CdCoefficients,
    mu1: f64,
    config: &ExperimentConfig,
    ridge: f64,
) -> Result<StructuredCdSpectrum> {
    let (p, d) = (features.p(), features.d());
    if p < d {
        return Err(Error::validation(format!(
            "structured spectrum needs p ≥ d (got p = {p}, d = {d})"
        )));
    }
    let m = inner_channel(features, curvature, mu1, ridge)?;
    let gram = features.b.t().dot(&features.b);
    let l = gram
        .cholesky(UPLO::Lower)
        .map_err(|e| Error::numerical(format!("feature Gram not positive definite: {e}")))?;
    let mut t = l.t().dot(&m).dot(&l);
    symmetrize(&mut t);
    let (nu, _) = crate::linalg::sym_eigh(&t)?;
    let dt = config.dt_step;
    let scale = dt * dt * coeffs.a1 * coeffs.a1;
    let bulk = nu.mapv(|v| scale * v + coeffs.beta);
    Ok(StructuredCdSpectrum { beta: coeffs.beta, atom_multiplicity: p - d, bulk, nu })
}

/// Student top layer under gradient flow of the quadratic objective.
pub struct StudentFlowState {
    /// Initial top layer (d×p); the flow is always taken from here.
    pub b0: Array2<f64>,
    /// Top layer at `tau`.
    pub b_tau: Array2<f64>,
    /// Absolute flow time measured from b0.
    pub tau: f64,
    /// ‖(B(τ)·V)_{:,i}‖² per U_cd eigenmode i.
    pub mode_energies: Array1<f64>,
}

pub fn student_flow_init(b0: Array2<f64>, ops: &CdOperators) -> Result<StudentFlowState> {
    student_gradient_flow_from(b0, ops, 0.0)
}

/// B(τ) = B0·exp(−(2/p)·τ·U_cd) through the eigenbasis; mode energies decay
/// by exp(−(4/p)·λ_i·τ). τ is absolute (measured from the initial layer).
pub fn student_gradient_flow(
    state: &StudentFlowState,
    ops: &CdOperators,
    tau: f64,
) -> Result<StudentFlowState> {
    student_gradient_flow_from(state.b0.clone(), ops, tau)
}

fn student_gradient_flow_from(
    b0: Array2<f64>,
    ops: &CdOperators,
    tau: f64,
) -> Result<StudentFlowState> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::validation(format!("flow time must be ≥ 0, got {tau}")));
    }
    let p = ops.p();
    if b0.ncols() != p {
        return Err(Error::validation(format!(
            "student layer has {} columns, operator expects {p}",
            b0.ncols()
        )));
    }
    let eig = ops.eig()?;
    let p0 = b0.dot(&eig.vectors);
    let rate = 2.0 * tau / p as f64;
    let scales = eig.lambdas.mapv(|l| (-rate * l).exp());
    let mut pt = p0.clone();
    for (mut col, &s) in pt.columns_mut().into_iter().zip(scales.iter()) {
        col.mapv_inplace(|v| v * s);
    }
    let mode_energies = Array1::from_iter(
        pt.columns().into_iter().map(|c| c.dot(&c)),
    );
    let b_tau = pt.dot(&eig.vectors.t());
    Ok(StudentFlowState { b0, b_tau, tau, mode_energies })
}

/// L = (1/p)·Tr(B·U_cd·Bᵀ) evaluated directly.
pub fn quadratic_loss(b: &Array2<f64>, u_cd: &Array2<f64>) -> f64 {
    let p = u_cd.nrows() as f64;
    (&b.dot(u_cd) * b).sum() / p
}

/// The same loss from the eigen-decomposed energies: Σ_i λ_i·e_i/p.
pub fn quadratic_loss_from_energies(state: &StudentFlowState, lambdas: &Array1<f64>) -> f64 {
    let p = lambdas.len() as f64;
    state
        .mode_energies
        .iter()
        .zip(lambdas.iter())
        .map(|(&e, &l)| l * e)
        .sum::<f64>()
        / p
}
