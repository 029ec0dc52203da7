//! Deterministic random-number contract.
//!
//! Every stochastic quantity in the crate draws from a substream keyed by
//! (seed, purpose, chunk). Substreams are independent ChaCha8 generators
//! whose keys come from SplitMix64 mixing, so any chunk can be generated
//! on any thread in any order and the merged result is bit-identical to a
//! sequential run. Monte Carlo loops must follow the pattern in
//! [`chunk_plan`]: fixed chunk size, one substream per chunk index,
//! per-chunk partials merged in ascending chunk order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separating the independent randomness consumers.
pub mod purpose {
    pub const FEATURES_W: u64 = 1;
    pub const TRAIN_XPRIME: u64 = 2;
    pub const EQUIV_OMEGA: u64 = 3;
    pub const CONSTANTS_MAIN: u64 = 4;
    pub const CONSTANTS_BT: u64 = 5;
    pub const CONSTANTS_MU1: u64 = 6;
    pub const FLOW_MOMENTS: u64 = 7;
    pub const ORACLE_DATASET: u64 = 8;
    pub const ORACLE_INCREMENTS: u64 = 9;
    pub const ORACLE_PAIRS: u64 = 10;
    pub const DECOMPOSITION_ROWS: u64 = 11;
    pub const DYNAMICS_B0: u64 = 12;
    pub const HUTCHINSON: u64 = 13;
    pub const GAUSS_MOMENT: u64 = 14;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for (seed, purpose, chunk).
pub fn substream(seed: u64, purpose: u64, chunk: u64) -> ChaCha8Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= purpose.wrapping_mul(0xA076_1D64_78BD_642F);
    let b = splitmix64(&mut state);
    state ^= chunk.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Fixed Monte Carlo chunk size. Changing this changes every sampled
/// stream, so it is part of the reproducibility contract.
pub const MC_CHUNK: usize = 4096;

/// Split `total` samples into (chunk_index, count) pieces of size
/// `chunk_size` (last piece possibly short).
pub fn chunk_plan(total: usize, chunk_size: usize) -> Vec<(u64, usize)> {
    assert!(chunk_size > 0);
    let mut plan = Vec::with_capacity(total.div_ceil(chunk_size));
    let mut done = 0usize;
    let mut idx = 0u64;
    while done < total {
        let m = chunk_size.min(total - done);
        plan.push((idx, m));
        done += m;
        idx += 1;
    }
    plan
}

/// Running scalar accumulator: count, sum, sum of squares.
#[derive(Debug, Clone, Copy, Default)]
pub struct McAcc {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl McAcc {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(mut self, other: McAcc) -> McAcc {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        self
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        let var = (self.sumsq / n - self.mean().powi(2)).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Group per-chunk partials into at most `k` contiguous blocks and return
/// the per-block aggregates. Used for block standard errors of derived
/// (non-linear) statistics.
pub fn block_partials<T: Clone>(partials: &[T], k: usize, merge: impl Fn(T, &T) -> T) -> Vec<T> {
    assert!(!partials.is_empty());
    let k = k.min(partials.len()).max(1);
    let per = partials.len().div_ceil(k);
    partials
        .chunks(per)
        .map(|group| {
            let mut acc = group[0].clone();
            for item in &group[1..] {
                acc = merge(acc, item);
            }
            acc
        })
        .collect()
}

/// Mean and standard error of a slice of per-block estimates.
pub fn block_stats(estimates: &[f64]) -> (f64, f64) {
    let k = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / k;
    if estimates.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}
