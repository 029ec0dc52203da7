//! The frozen random-feature ensemble shared by teacher and student.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::linalg::{check_alloc, symmetrize};
use crate::rng::{purpose, substream};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Rows of W generated per substream chunk. Fixed: part of the
/// reproducibility contract.
const ROW_CHUNK: usize = 64;

/// Frozen first-layer weights W (p×d), the scaled features B = W/√d, and
/// the Gram operator S = WWᵀ/d = BBᵀ.
#[derive(Debug)]
pub struct RandomFeatures {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    pub s: Array2<f64>,
    pub seed: u64,
}

impl RandomFeatures {
    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }
}

/// Draw W from the seeded generator and cache S. Bit-identical for equal
/// seeds regardless of thread count.
pub fn make_random_features(config: &ExperimentConfig) -> Result<RandomFeatures> {
    config.validate()?;
    let (p, d) = (config.p(), config.d);
    check_alloc(p, d, "feature matrix W")?;
    check_alloc(p, p, "feature Gram S")?;

    let n_chunks = p.div_ceil(ROW_CHUNK);
    let blocks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let rows = ROW_CHUNK.min(p - chunk * ROW_CHUNK);
            let mut rng = substream(config.seed, purpose::FEATURES_W, chunk as u64);
            (0..rows * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();

    let mut data = Vec::with_capacity(p * d);
    for block in blocks {
        data.extend_from_slice(&block);
    }
    let w = Array2::from_shape_vec((p, d), data).expect("shape construction");
    let b = &w / (d as f64).sqrt();
    let mut s = b.dot(&b.t());
    symmetrize(&mut s);
    Ok(RandomFeatures { w, b, s, seed: config.seed })
}
