//! Zipf-distributed key ranks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZipfError {
    #[error("keyspace must hold at least one key")]
    EmptyKeyspace,
    #[error("skew must be finite and >= 0, got {0}")]
    BadSkew(f64),
}

/// `sum_{k=1..n} k^-s`.
pub fn harmonic(n: u64, s: f64) -> f64 {
    (1..=n).map(|k| (k as f64).powf(-s)).sum()
}

/// Rank sampler over `1..=n` with `P(k) = k^-s / H`, by inverse CDF.
#[derive(Debug, Clone)]
pub struct ZipfGenerator {
    s: f64,
    h: f64,
    cdf: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ZipfGenerator {
    pub fn new(n: u64, s: f64, seed: u64) -> Result<Self, ZipfError> {
        if n == 0 {
            return Err(ZipfError::EmptyKeyspace);
        }
        if !s.is_finite() || s < 0.0 {
            return Err(ZipfError::BadSkew(s));
        }
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).powf(-s);
            cdf.push(acc);
        }
        let h = acc;
        for c in &mut cdf {
            *c /= h;
        }
        *cdf.last_mut().expect("n >= 1") = 1.0;
        Ok(ZipfGenerator {
            s,
            h,
            cdf,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn n(&self) -> u64 {
        self.cdf.len() as u64
    }

    pub fn skew(&self) -> f64 {
        self.s
    }

    pub fn normalization(&self) -> f64 {
        self.h
    }

    pub fn probability(&self, rank: u64) -> f64 {
        if rank == 0 || rank > self.n() {
            return 0.0;
        }
        (rank as f64).powf(-self.s) / self.h
    }

    /// Next rank in `1..=n`.
    pub fn next_rank(&mut self) -> u64 {
        let u: f64 = self.rng.gen();
        self.cdf.partition_point(|&c| c <= u) as u64 + 1
    }
}
