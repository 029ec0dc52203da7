//! Spectral diagnostics: eigendecomposition, density/atom reports, the
//! Mem/Gen partition, per-mode visibility and response statistics, and the
//! ridge-sweep selection of the minimal sufficient regularization.

use crate::error::{Error, Result};
use crate::features::RandomFeatures;
use crate::linalg::{check_alloc, relative_asymmetry, sym_eigh};
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

/// Negative eigenvalues above this are treated as roundoff and clamped to 0;
/// below it, a spectrum declared positive semidefinite is rejected.
const NEG_CLAMP: f64 = -1e-10;
/// Relative spread within which equal-value clusters count as one atom.
const ATOM_SPREAD: f64 = 1e-9;
/// Symmetry tolerance for eigendecomposition input.
const SYM_TOL: f64 = 1e-8;
/// Upper bound on automatically chosen histogram bins.
const MAX_BINS: usize = 512;

/// Ascending eigenvalues with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigSystem {
    pub lambdas: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigSystem {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Full symmetric eigendecomposition, ascending order.
pub fn eigendecompose(m: &Array2<f64>) -> Result<EigSystem> {
    if m.nrows() != m.ncols() {
        return Err(Error::validation(format!(
            "eigendecomposition needs a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = relative_asymmetry(m);
    if asym > SYM_TOL {
        return Err(Error::validation(format!(
            "matrix asymmetry {asym:.3e} exceeds {SYM_TOL:.0e}"
        )));
    }
    let (lambdas, vectors) = sym_eigh(m)?;
    Ok(EigSystem { lambdas, vectors })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralAtom {
    pub value: f64,
    pub multiplicity: usize,
}

/// Histogram plus atom report of a spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub total: usize,
    /// Count of nonzero eigenvalues with |λ| below the discard threshold.
    pub discarded: usize,
    pub atoms: Vec<SpectralAtom>,
    /// bin_edges has binned_densities.len()+1 entries (empty when no bulk).
    pub bin_edges: Vec<f64>,
    /// Densities normalized against the total count: ∫ρ = binned/total.
    pub densities: Vec<f64>,
    pub binned: usize,
}

impl SpectrumReport {
    /// Fraction of the spectrum represented in bins and atoms together;
    /// equals the kept (non-discarded) fraction.
    pub fn accounted_fraction(&self) -> f64 {
        let atom_mass: usize = self.atoms.iter().map(|a| a.multiplicity).sum();
        (self.binned + atom_mass) as f64 / self.total.max(1) as f64
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Density/atom report of an eigenvalue list.
///
/// Pipeline: clamp roundoff-negatives to 0 (reject real negatives when the
/// operator is declared PSD via `psd_expected`); discard nonzero values with
/// |λ| < atom_eps; detect atoms as clusters of ≥ max(2, p/100) values within
/// 1e−9 relative spread (exact ties for zero); histogram the rest with
/// Freedman–Diaconis bins unless `bins` overrides.
pub fn spectral_density(
    lambdas: &[f64],
    bins: Option<usize>,
    atom_eps: f64,
    psd_expected: bool,
) -> Result<SpectrumReport> {
    if let Some(0) = bins {
        return Err(Error::validation("bins must be ≥ 1"));
    }
    if !(atom_eps.is_finite() && atom_eps > 0.0) {
        return Err(Error::validation(format!("atom_eps must be > 0, got {atom_eps}")));
    }
    let total = lambdas.len();
    let mut kept = Vec::with_capacity(total);
    let mut discarded = 0usize;
    for &raw in lambdas {
        if !raw.is_finite() {
            return Err(Error::numerical("non-finite eigenvalue in spectrum"));
        }
        let v = if raw < 0.0 {
            if raw >= NEG_CLAMP {
                0.0
            } else if psd_expected {
                return Err(Error::numerical(format!(
                    "eigenvalue {raw:.6e} negative beyond roundoff in a spectrum declared PSD"
                )));
            } else {
                raw
            }
        } else {
            raw
        };
        if v != 0.0 && v.abs() < atom_eps {
            discarded += 1;
        } else {
            kept.push(v);
        }
    }
    kept.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Atom scan over the sorted kept values.
    let min_cluster = 2.max(total / 100);
    let mut atoms = Vec::new();
    let mut rest = Vec::with_capacity(kept.len());
    let mut i = 0usize;
    while i < kept.len() {
        let mut j = i + 1;
        while j < kept.len() {
            let spread = kept[j] - kept[i];
            let scale = kept[i].abs().max(kept[j].abs());
            if spread <= ATOM_SPREAD * scale {
                j += 1;
            } else {
                break;
            }
        }
        let run = j - i;
        if run >= min_cluster {
            let value = kept[i..j].iter().sum::<f64>() / run as f64;
            atoms.push(SpectralAtom { value, multiplicity: run });
        } else {
            rest.extend_from_slice(&kept[i..j]);
        }
        i = j;
    }

    let binned = rest.len();
    let (bin_edges, densities) = if rest.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let lo = rest[0];
        let hi = rest[rest.len() - 1];
        let span = hi - lo;
        let n_bins = match bins {
            Some(b) => b,
            None if span <= 0.0 => 1,
            None => {
                let iqr = quantile(&rest, 0.75) - quantile(&rest, 0.25);
                let width = 2.0 * iqr / (rest.len() as f64).cbrt();
                if width <= 0.0 {
                    1
                } else {
                    ((span / width).ceil() as usize).clamp(1, MAX_BINS)
                }
            }
        };
        // Widen a zero-span single bin so the density is well defined.
        let (lo, hi) = if span <= 0.0 {
            (lo - 0.5 * lo.abs().max(1e-300), hi + 0.5 * hi.abs().max(1e-300))
        } else {
            (lo, hi)
        };
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0usize; n_bins];
        for &v in &rest {
            let idx = (((v - lo) / width) as usize).min(n_bins - 1);
            counts[idx] += 1;
        }
        let edges: Vec<f64> = (0..=n_bins).map(|k| lo + width * k as f64).collect();
        let dens: Vec<f64> =
            counts.iter().map(|&c| c as f64 / (total as f64 * width)).collect();
        (edges, dens)
    };

    Ok(SpectrumReport { total, discarded, atoms, bin_edges, densities, binned })
}

/// Mem = {i : λ_i < λ_th}, Gen = {i : λ_i ≥ λ_th}.
pub fn partition_mem_gen(lambdas: &Array1<f64>, lambda_th: f64) -> (Vec<usize>, Vec<usize>) {
    let mut mem = Vec::new();
    let mut gen = Vec::new();
    for (i, &l) in lambdas.iter().enumerate() {
        if l < lambda_th {
            mem.push(i);
        } else {
            gen.push(i);
        }
    }
    (mem, gen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModeLabel {
    Mem,
    Gen,
}

impl ModeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModeLabel::Mem => "Mem",
            ModeLabel::Gen => "Gen",
        }
    }
}

/// Shared precomputation for mode diagnostics at any ridge: the visibility
/// row P = VᵀB, per-mode visibility a_i = ‖u_iᵀB‖², and the expansion
/// matrix Y = PPᵀ with Y[k,i] = v_kᵀ(Su_i).
pub struct ModeBasis {
    pub lambdas: Array1<f64>,
    pub a: Array1<f64>,
    pub y: Array2<f64>,
}

pub fn mode_basis(eig: &EigSystem, features: &RandomFeatures) -> Result<ModeBasis> {
    let p = eig.len();
    if features.p() != p {
        return Err(Error::validation(format!(
            "eigensystem size {p} does not match feature count {}",
            features.p()
        )));
    }
    check_alloc(p, p, "mode-expansion matrix Y")?;
    let pmat = eig.vectors.t().dot(&features.b);
    let a = Array1::from_iter(pmat.rows().into_iter().map(|r| r.dot(&r)));
    let y = pmat.dot(&pmat.t());
    Ok(ModeBasis { lambdas: eig.lambdas.clone(), a, y })
}

/// Per-mode diagnostics at a fixed ridge.
pub struct ModeDiagnostics {
    pub lambda_u: Array1<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub alpha: Array1<f64>,
    pub labels: Vec<ModeLabel>,
    pub frac_bmem: Array1<f64>,
    /// fracBmem denominators that were exactly zero (value reported as 0).
    pub flagged_zero: Vec<bool>,
    pub mem: Vec<usize>,
    pub gen: Vec<usize>,
    pub ridge: f64,
    pub mu1: f64,
}

/// Diagnostics from a prebuilt basis; a_i = u_iᵀSu_i,
/// b_i = (Su_i)ᵀ(U+γI)⁻¹(Su_i), α_i = a_i − μ1²·b_i, and fracBmem_i the
/// Mem-share of the resolvent-weighted expansion of Su_i.
pub fn mode_diagnostics_from_basis(
    basis: &ModeBasis,
    mu1: f64,
    ridge: f64,
    lambda_th: f64,
) -> Result<ModeDiagnostics> {
    let p = basis.lambdas.len();
    let lam_min = basis.lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(ridge.is_finite() && lam_min + ridge > 0.0) {
        return Err(Error::numerical(format!(
            "resolvent not positive definite: λ_min + γ = {:.6e}",
            lam_min + ridge
        )));
    }
    let (mem, gen) = partition_mem_gen(&basis.lambdas, lambda_th);
    let weights: Vec<f64> = basis.lambdas.iter().map(|&l| 1.0 / (l + ridge)).collect();
    let is_mem: Vec<bool> = basis.lambdas.iter().map(|&l| l < lambda_th).collect();

    let per_mode: Vec<(f64, f64, bool)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let col = basis.y.column(i);
            let mut denom = 0.0;
            let mut num = 0.0;
            for k in 0..p {
                let term = weights[k] * col[k] * col[k];
                denom += term;
                if is_mem[k] {
                    num += term;
                }
            }
            if denom == 0.0 {
                (0.0, 0.0, true)
            } else {
                (denom, num / denom, false)
            }
        })
        .collect();

    let b = Array1::from_iter(per_mode.iter().map(|t| t.0));
    let frac_bmem = Array1::from_iter(per_mode.iter().map(|t| t.1));
    let flagged_zero: Vec<bool> = per_mode.iter().map(|t| t.2).collect();
    let alpha = &basis.a - &(b.mapv(|v| mu1 * mu1 * v));
    let labels: Vec<ModeLabel> = is_mem
        .iter()
        .map(|&m| if m { ModeLabel::Mem } else { ModeLabel::Gen })
        .collect();

    Ok(ModeDiagnostics {
        lambda_u: basis.lambdas.clone(),
        a: basis.a.clone(),
        b,
        alpha,
        labels,
        frac_bmem,
        flagged_zero,
        mem,
        gen,
        ridge,
        mu1,
    })
}

/// Convenience entry building the basis internally.
pub fn mode_diagnostics(
    eig: &EigSystem,
    features: &RandomFeatures,
    mu1: f64,
    ridge: f64,
    lambda_th: f64,
) -> Result<ModeDiagnostics> {
    let basis = mode_basis(eig, features)?;
    mode_diagnostics_from_basis(&basis, mu1, ridge, lambda_th)
}

/// Σ_{i∈Mem} max(α_i,0) / Σ_i max(α_i,0); None when no positive mass exists.
pub fn share_mem_plus(diag: &ModeDiagnostics) -> Option<f64> {
    let pos = |i: &usize| diag.alpha[*i].max(0.0);
    let num: f64 = diag.mem.iter().map(pos).sum();
    let den: f64 = num + diag.gen.iter().map(pos).sum::<f64>();
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

pub(crate) fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone, Serialize)]
pub struct RidgeSweepReport {
    pub grid: Vec<f64>,
    pub medians: Vec<f64>,
    pub tau: f64,
    pub gamma_star: Option<f64>,
    pub monotone: bool,
}

/// Median Gen fracBmem along an ascending γ grid; γ* is the smallest grid
/// point whose median is ≤ τ.
pub fn ridge_sweep(
    basis: &ModeBasis,
    mu1: f64,
    grid: &[f64],
    tau: f64,
    lambda_th: f64,
) -> Result<RidgeSweepReport> {
    if grid.is_empty() {
        return Err(Error::validation("ridge grid must be non-empty"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid[0] < 0.0 {
        return Err(Error::validation("ridge grid must be ascending and non-negative"));
    }
    let (_, gen) = partition_mem_gen(&basis.lambdas, lambda_th);
    if gen.is_empty() {
        return Err(Error::validation(format!(
            "Gen partition is empty at λ_th = {lambda_th}; nothing to sweep"
        )));
    }
    let mut medians = Vec::with_capacity(grid.len());
    for &g in grid {
        let diag = mode_diagnostics_from_basis(basis, mu1, g, lambda_th)?;
        let vals: Vec<f64> = diag.gen.iter().map(|&i| diag.frac_bmem[i]).collect();
        medians.push(median(&vals).expect("Gen set checked non-empty"));
    }
    let gamma_star = grid
        .iter()
        .zip(&medians)
        .find(|(_, &m)| m <= tau)
        .map(|(&g, _)| g);
    let monotone = medians.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    Ok(RidgeSweepReport { grid: grid.to_vec(), medians, tau, gamma_star, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::features::make_random_features;
    use crate::rng::substream;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_symmetric(p: usize, seed: u64) -> Array2<f64> {
        let mut stream = substream(seed, 99, 0);
        let mut m = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            for j in 0..=i {
                let v: f64 = stream.sample(StandardNormal);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn eigendecompose_orders_and_reconstructs() {
        let m = ndarray::arr2(&[[2.0, 0.0], [0.0, 1.0]]);
        let eig = eigendecompose(&m).unwrap();
        assert!((eig.lambdas[0] - 1.0).abs() < 1e-14);
        assert!((eig.lambdas[1] - 2.0).abs() < 1e-14);

        let m = random_symmetric(50, 7);
        let eig = eigendecompose(&m).unwrap();
        let lam = Array2::from_diag(&eig.lambdas);
        let rec = eig.vectors.dot(&lam).dot(&eig.vectors.t());
        let num = (&rec - &m).mapv(|v| v * v).sum().sqrt();
        let den = m.mapv(|v| v * v).sum().sqrt();
        assert!(num <= 1e-8 * den, "reconstruction error {}", num / den);
        // Orthonormality.
        let vtv = eig.vectors.t().dot(&eig.vectors);
        let eye = Array2::<f64>::eye(50);
        assert!((&vtv - &eye).mapv(f64::abs).iter().cloned().fold(0.0, f64::max) < 1e-10);
    }

    #[test]
    fn eigendecompose_rejects_asymmetry() {
        let mut m = random_symmetric(6, 1);
        m[(0, 1)] += 1.0;
        let err = eigendecompose(&m).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn all_equal_spectrum_is_one_atom() {
        let rep = spectral_density(&vec![3.5; 40], None, 1e-50, true).unwrap();
        assert_eq!(rep.atoms.len(), 1);
        assert_eq!(rep.atoms[0].multiplicity, 40);
        assert!((rep.atoms[0].value - 3.5).abs() < 1e-15);
        assert!(rep.densities.is_empty());
        assert_eq!(rep.binned, 0);
        assert!((rep.accounted_fraction() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_spectrum_is_an_atom_at_zero() {
        let rep = spectral_density(&vec![0.0; 16], None, 1e-50, true).unwrap();
        assert_eq!(rep.discarded, 0);
        assert_eq!(rep.atoms.len(), 1);
        assert_eq!(rep.atoms[0].value, 0.0);
        assert_eq!(rep.atoms[0].multiplicity, 16);
    }

    #[test]
    fn roundoff_negatives_clamp_and_real_negatives_reject_when_psd() {
        let vals = vec![-1e-12, 0.5, 0.6, 0.7];
        let rep = spectral_density(&vals, Some(2), 1e-50, true).unwrap();
        assert_eq!(rep.binned + rep.atoms.iter().map(|a| a.multiplicity).sum::<usize>(), 4);

        let bad = vec![-1e-3, 0.5, 0.6, 0.7];
        let err = spectral_density(&bad, Some(2), 1e-50, true).unwrap_err();
        assert_eq!(err.exit_code(), 3);

        // Indefinite spectra keep their negative bulk.
        let rep = spectral_density(&bad, Some(2), 1e-50, false).unwrap();
        assert_eq!(rep.binned, 4);
        assert!((rep.accounted_fraction() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn atom_with_bulk_and_discards() {
        let mut vals = vec![1e-60; 3]; // nonzero underflow junk → discarded
        vals.extend(vec![2.0; 10]); // atom
        vals.extend((0..20).map(|i| 5.0 + 0.1 * i as f64)); // bulk
        let rep = spectral_density(&vals, None, 1e-50, true).unwrap();
        assert_eq!(rep.discarded, 3);
        assert_eq!(rep.atoms.len(), 1);
        assert_eq!(rep.atoms[0].multiplicity, 10);
        assert_eq!(rep.binned, 20);
        let integral: f64 = rep
            .densities
            .iter()
            .zip(rep.bin_edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum();
        assert!((integral - 20.0 / 33.0).abs() < 1e-12);
        let kept_fraction = (33.0 - 3.0) / 33.0;
        assert!((rep.accounted_fraction() - kept_fraction).abs() < 1e-12);
    }

    #[test]
    fn near_ties_within_relative_spread_cluster() {
        let base = 7.0;
        let mut vals: Vec<f64> = (0..12).map(|i| base * (1.0 + 1e-11 * i as f64)).collect();
        vals.extend([1.0, 2.0, 3.0]);
        let rep = spectral_density(&vals, Some(3), 1e-50, true).unwrap();
        assert_eq!(rep.atoms.len(), 1);
        assert_eq!(rep.atoms[0].multiplicity, 12);
    }

    #[test]
    fn partition_cases() {
        let lam = ndarray::arr1(&[0.5, 3.0]);
        let (mem, gen) = partition_mem_gen(&lam, 2.0);
        assert_eq!(mem, vec![0]);
        assert_eq!(gen, vec![1]);
        let (mem, gen) = partition_mem_gen(&lam, 0.1);
        assert!(mem.is_empty());
        assert_eq!(gen.len(), 2);
    }

    #[test]
    fn commuting_identity_case() {
        // S = I, U = I, γ = 0 → a_i = b_i = 1, α_i = 1 − μ1².
        let d = 6;
        let eye = Array2::<f64>::eye(d);
        let f = RandomFeatures {
            w: eye.mapv(|v| v * (d as f64).sqrt()),
            b: eye.clone(),
            s: eye.clone(),
            seed: 0,
        };
        let eig = eigendecompose(&eye).unwrap();
        let mu1 = 0.6;
        let diag = mode_diagnostics(&eig, &f, mu1, 0.0, 0.5).unwrap();
        for i in 0..d {
            assert!((diag.a[i] - 1.0).abs() < 1e-12);
            assert!((diag.b[i] - 1.0).abs() < 1e-12);
            assert!((diag.alpha[i] - (1.0 - mu1 * mu1)).abs() < 1e-12);
            assert_eq!(diag.labels[i], ModeLabel::Gen);
        }
    }

    #[test]
    fn kernel_modes_are_flagged_zero() {
        // B has a single nonzero row → modes 1,2 lie in ker(S).
        let mut b = Array2::<f64>::zeros((3, 1));
        b[(0, 0)] = 1.0;
        let s = b.dot(&b.t());
        let f = RandomFeatures { w: b.clone(), b: b.clone(), s, seed: 0 };
        let eig = eigendecompose(&Array2::<f64>::eye(3)).unwrap();
        let diag = mode_diagnostics(&eig, &f, 0.5, 0.0, 2.0).unwrap();
        for i in 1..3 {
            assert_eq!(diag.a[i], 0.0);
            assert_eq!(diag.b[i], 0.0);
            assert_eq!(diag.alpha[i], 0.0);
            assert_eq!(diag.frac_bmem[i], 0.0);
            assert!(diag.flagged_zero[i]);
        }
        assert!(!diag.flagged_zero[0]);
    }

    #[test]
    fn alpha_is_the_exact_linear_combination() {
        let cfg = ExperimentConfig {
            d: 10,
            psi_p: 3.0,
            psi_n: 2.0,
            seed: 21,
            ..Default::default()
        };
        let f = make_random_features(&cfg).unwrap();
        let m = {
            let mut m = f.s.clone();
            for i in 0..f.p() {
                m[(i, i)] += 0.3;
            }
            m
        };
        let eig = eigendecompose(&m).unwrap();
        let diag = mode_diagnostics(&eig, &f, 0.7, 0.5, 1.0).unwrap();
        for i in 0..f.p() {
            let expect = diag.a[i] - 0.7 * 0.7 * diag.b[i];
            assert_eq!(diag.alpha[i], expect, "alpha not bit-identical at mode {i}");
        }
    }

    #[test]
    fn large_ridge_limit_is_projector_ratio() {
        let cfg = ExperimentConfig {
            d: 8,
            psi_p: 4.0,
            psi_n: 2.0,
            seed: 31,
            ..Default::default()
        };
        let f = make_random_features(&cfg).unwrap();
        let mut m = f.s.clone();
        for i in 0..f.p() {
            m[(i, i)] += 0.05;
        }
        let eig = eigendecompose(&m).unwrap();
        let lambda_th = crate::diagnostics::median(&eig.lambdas.to_vec()).unwrap();
        let basis = mode_basis(&eig, &f).unwrap();
        let diag = mode_diagnostics_from_basis(&basis, 0.6, 1e9, lambda_th).unwrap();
        for i in 0..f.p() {
            let col = basis.y.column(i);
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..f.p() {
                den += col[k] * col[k];
                if basis.lambdas[k] < lambda_th {
                    num += col[k] * col[k];
                }
            }
            if den > 0.0 {
                let limit = num / den;
                assert!(
                    (diag.frac_bmem[i] - limit).abs() < 1e-6,
                    "mode {i}: {} vs {}",
                    diag.frac_bmem[i],
                    limit
                );
            }
        }
    }

    #[test]
    fn share_mem_plus_cases() {
        let mk = |alpha: Vec<f64>, mem: Vec<usize>, gen: Vec<usize>| ModeDiagnostics {
            lambda_u: Array1::zeros(alpha.len()),
            a: Array1::zeros(alpha.len()),
            b: Array1::zeros(alpha.len()),
            alpha: Array1::from(alpha.clone()),
            labels: vec![ModeLabel::Mem; alpha.len()],
            frac_bmem: Array1::zeros(alpha.len()),
            flagged_zero: vec![false; alpha.len()],
            mem,
            gen,
            ridge: 0.0,
            mu1: 0.5,
        };
        assert_eq!(share_mem_plus(&mk(vec![1.0, -1.0], vec![0], vec![1])), Some(1.0));
        assert_eq!(share_mem_plus(&mk(vec![0.0, 2.0], vec![0], vec![1])), Some(0.0));
        assert_eq!(share_mem_plus(&mk(vec![-1.0, -2.0], vec![0], vec![1])), None);
    }

    #[test]
    fn ridge_sweep_validation_and_monotonicity() {
        let cfg = ExperimentConfig {
            d: 12,
            psi_p: 4.0,
            psi_n: 2.0,
            seed: 41,
            ..Default::default()
        };
        let f = make_random_features(&cfg).unwrap();
        let mut m = f.s.clone();
        for i in 0..f.p() {
            m[(i, i)] += 0.02;
        }
        let eig = eigendecompose(&m).unwrap();
        let lambda_th = crate::diagnostics::median(&eig.lambdas.to_vec()).unwrap();
        let basis = mode_basis(&eig, &f).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.0, 4.0];
        let rep = ridge_sweep(&basis, 0.6, &grid, 1.0, lambda_th).unwrap();
        assert_eq!(rep.gamma_star, Some(0.0), "τ=1 admits the first grid point");
        assert!(rep.monotone, "medians {:?} not monotone", rep.medians);

        let err = ridge_sweep(&basis, 0.6, &[1.0, 0.5], 0.1, lambda_th).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = ridge_sweep(&basis, 0.6, &grid, 0.1, f64::INFINITY).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn median_behavior() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
