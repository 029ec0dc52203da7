//! Scalar Gaussian moments E_{Z~N(0,v)}[f(Z)] by Monte Carlo or
//! Gauss–Hermite quadrature.
//!
//! Quadrature is the high-precision oracle path (exact for polynomials of
//! degree < 2·nodes, deterministic, zero reported error); Monte Carlo is
//! the path the reference setup actually prescribes for estimated
//! constants. Both are deterministic given their inputs.

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// How to estimate a Gaussian expectation.
#[derive(Debug, Clone, Copy)]
pub enum MomentMethod {
    Mc { count: usize, seed: u64 },
    Quadrature { nodes: usize },
}

/// An estimate with its standard error (0 for quadrature).
#[derive(Debug, Clone, Copy)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Gauss–Hermite rule for the standard normal weight: E[f(Z)] ≈ Σ w_i f(x_i).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Build an n-point rule by eigendecomposition of the Jacobi matrix of
    /// the (probabilists') Hermite recurrence: diagonal 0, off-diagonal √k.
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::validation("quadrature needs ≥ 1 node"));
        }
        let mut jacobi = Array2::<f64>::zeros((n, n));
        for k in 1..n {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let (vals, vecs) = jacobi
            .eigh(UPLO::Lower)
            .map_err(|e| Error::numerical(format!("quadrature eigensolve: {e}")))?;
        let nodes = vals.to_vec();
        let weights = (0..n).map(|i| vecs[(0, i)] * vecs[(0, i)]).collect();
        Ok(GaussHermite { nodes, weights })
    }

    /// E_{Z~N(0,v)}[f(Z)].
    pub fn integrate(&self, v: f64, f: impl Fn(f64) -> f64) -> f64 {
        let s = v.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(s * x))
            .sum()
    }
}

/// Shared estimator for all scalar Gaussian expectations.
pub fn gaussian_moment(
    f: impl Fn(f64) -> f64 + Sync,
    variance: f64,
    method: MomentMethod,
) -> Result<MomentEstimate> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::validation(format!("variance must be ≥ 0, got {variance}")));
    }
    match method {
        MomentMethod::Quadrature { nodes } => {
            let rule = GaussHermite::new(nodes)?;
            let value = rule.integrate(variance, &f);
            if !value.is_finite() {
                return Err(Error::numerical("non-finite quadrature value"));
            }
            Ok(MomentEstimate { value, stderr: 0.0 })
        }
        MomentMethod::Mc { count, seed } => {
            if count < 1 {
                return Err(Error::validation("Monte Carlo needs ≥ 1 sample"));
            }
            let s = variance.sqrt();
            let plan = rng::chunk_plan(count, rng::MC_CHUNK);
            let partials: Vec<Result<rng::McAcc>> = plan
                .par_iter()
                .map(|&(idx, m)| {
                    let mut stream = rng::substream(seed, purpose::GAUSS_MOMENT, idx);
                    let mut acc = rng::McAcc::default();
                    for _ in 0..m {
                        let z: f64 = stream.sample(StandardNormal);
                        let y = f(s * z);
                        if !y.is_finite() {
                            return Err(Error::numerical(format!(
                                "non-finite sample f({}) in gaussian_moment",
                                s * z
                            )));
                        }
                        acc.push(y);
                    }
                    Ok(acc)
                })
                .collect();
            let mut total = rng::McAcc::default();
            for part in partials {
                total = total.merge(part?);
            }
            Ok(MomentEstimate { value: total.mean(), stderr: total.stderr() })
        }
    }
}
