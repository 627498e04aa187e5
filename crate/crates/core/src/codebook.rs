//! The pool of random `k`-bit codes from which new labels take their active core.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitcode::PackedCode;
use crate::error::{Error, Result};
use crate::par;

/// Capacity used when nothing is known about the number of labels.
pub const DEFAULT_CAPACITY: usize = 1024;

/// Largest number of codes a `k`-bit codebook can hold once complements are
/// excluded, i.e. 2^(k-1). Saturates for very wide codes.
pub fn max_capacity(k: usize) -> u128 {
    if k == 0 {
        0
    } else if k > 127 {
        u128::MAX
    } else {
        1u128 << (k - 1)
    }
}

/// Four codes per anticipated label, or [`DEFAULT_CAPACITY`], clamped to what
/// `k` bits can hold.
pub fn default_capacity(k: usize, anticipated_labels: Option<usize>) -> usize {
    let wanted = anticipated_labels
        .map(|l| l.saturating_mul(4).max(1))
        .unwrap_or(DEFAULT_CAPACITY) as u128;
    wanted.min(max_capacity(k)) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    seed: u64,
    pool: Vec<PackedCode>,
    drawn: usize,
}

impl Codebook {
    /// Rejection-samples `capacity` distinct `k`-bit codes, none of which is
    /// the complement of another. Deterministic in `seed`.
    pub fn generate(k: usize, capacity: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig(
                "codebook bit length k must be >= 1".into(),
            ));
        }
        if capacity == 0 || capacity as u128 > max_capacity(k) {
            return Err(Error::Capacity {
                k,
                capacity,
                max: max_capacity(k),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_words = k.div_ceil(64);
        let mut seen: HashSet<PackedCode> = HashSet::with_capacity(capacity * 2);
        let mut pool = Vec::with_capacity(capacity);
        while pool.len() < capacity {
            let words: Vec<u64> = (0..n_words).map(|_| rng.random()).collect();
            let code = PackedCode::from_words(k, words)?;
            if seen.contains(&code) {
                continue;
            }
            let comp = code.complement();
            if seen.contains(&comp) {
                continue;
            }
            seen.insert(comp);
            seen.insert(code.clone());
            pool.push(code);
        }
        Ok(Codebook {
            k,
            seed,
            pool,
            drawn: 0,
        })
    }

    /// Rebuilds a codebook from stored parts, re-checking the invariants.
    pub fn from_parts(k: usize, seed: u64, pool: Vec<PackedCode>, drawn: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pool.len());
        for code in &pool {
            if code.len() != k {
                return Err(Error::dim(k, code.len()));
            }
            if seen.contains(code) || seen.contains(&code.complement()) {
                return Err(Error::InvalidInput(
                    "codebook pool contains a duplicate or complementary pair".into(),
                ));
            }
            seen.insert(code.clone());
        }
        Ok(Codebook {
            k,
            seed,
            pool,
            drawn,
        })
    }

    /// Removes and returns a uniformly chosen code.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PackedCode> {
        if self.pool.is_empty() {
            return Err(Error::CodebookExhausted { drawn: self.drawn });
        }
        let idx = rng.random_range(0..self.pool.len());
        self.drawn += 1;
        Ok(self.pool.remove(idx))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pool(&self) -> &[PackedCode] {
        &self.pool
    }

    pub fn remaining(&self) -> usize {
        self.pool.len()
    }

    /// Number of codes handed out so far.
    pub fn drawn(&self) -> usize {
        self.drawn
    }

    pub fn separation_stats(&self) -> Result<SeparationStats> {
        separation_stats(&self.pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationStats {
    pub min: u32,
    pub mean: f64,
    pub pairs: u64,
}

/// Exact minimum and mean Hamming distance over all unordered pairs.
pub fn separation_stats(codes: &[PackedCode]) -> Result<SeparationStats> {
    if codes.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "separation statistics need at least 2 codes, got {}",
            codes.len()
        )));
    }
    let rows = par::map_range(codes.len(), |i| {
        let mut min = u32::MAX;
        let mut sum = 0u64;
        for other in &codes[i + 1..] {
            let d = codes[i].hamming(other).expect("codebook entries share k");
            min = min.min(d);
            sum += d as u64;
        }
        (min, sum)
    });
    let min = rows.iter().map(|r| r.0).min().unwrap_or(0);
    let sum: u64 = rows.iter().map(|r| r.1).sum();
    let pairs = (codes.len() as u64) * (codes.len() as u64 - 1) / 2;
    Ok(SeparationStats {
        min,
        mean: sum as f64 / pairs as f64,
        pairs,
    })
}

/// Probability that `k` columns of a random `rho x k` binary matrix are all
/// distinct: prod_{i<k} (2^rho - i) / 2^rho. Zero when k > 2^rho.
pub fn unique_bipartition_probability(rho: u32, k: usize) -> f64 {
    let space = 2f64.powi(rho as i32);
    if (k as f64) > space {
        return 0.0;
    }
    // Sum of logs keeps the product accurate when 2^rho is huge.
    let log_p: f64 = (0..k).map(|i| (-(i as f64) / space).ln_1p()).sum();
    log_p.exp()
}
