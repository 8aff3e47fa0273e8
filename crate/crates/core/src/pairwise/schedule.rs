use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which ordered pairs enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PairSchedule {
    /// Each row is paired with the next `kn` rows, wrapping modulo `n`,
    /// after an optional seeded shuffle of the row order.
    Modulo {
        n: usize,
        kn: usize,
        shuffle_seed: Option<u64>,
    },
    /// Every unordered pair once.
    Complete { n: usize },
}

impl PairSchedule {
    pub fn modulo(n: usize, kn: usize, shuffle_seed: Option<u64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter("pairing needs at least 2 observations".into()));
        }
        if kn == 0 {
            return Err(Error::Parameter("K_n must be at least 1".into()));
        }
        if kn > n - 1 {
            return Err(Error::Parameter(format!("K_n must be ≤ n−1 (K_n = {kn}, n = {n})")));
        }
        Ok(PairSchedule::Modulo { n, kn, shuffle_seed })
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter("pairing needs at least 2 observations".into()));
        }
        Ok(PairSchedule::Complete { n })
    }

    pub fn n(&self) -> usize {
        match *self {
            PairSchedule::Modulo { n, .. } | PairSchedule::Complete { n } => n,
        }
    }

    /// Pairs per anchor row in modulo mode.
    pub fn kn(&self) -> Option<usize> {
        match *self {
            PairSchedule::Modulo { kn, .. } => Some(kn),
            PairSchedule::Complete { .. } => None,
        }
    }

    /// Divisor of the objective: `n * kn`, or `n (n - 1) / 2`.
    pub fn normalizer(&self) -> f64 {
        match *self {
            PairSchedule::Modulo { n, kn, .. } => (n * kn) as f64,
            PairSchedule::Complete { n } => (n * (n - 1)) as f64 / 2.0,
        }
    }

    /// Row order after the optional shuffle.
    pub fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        if let PairSchedule::Modulo {
            shuffle_seed: Some(seed),
            ..
        } = *self
        {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }

    /// The ordered pairs. In modulo mode they come grouped by anchor: the
    /// `k`-th pair of anchor position `a` sits at index `a * kn + k - 1`.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        match *self {
            PairSchedule::Modulo { n, kn, .. } => {
                let order = self.order();
                let mut pairs = Vec::with_capacity(n * kn);
                for a in 0..n {
                    for k in 1..=kn {
                        pairs.push((order[a] as u32, order[(a + k) % n] as u32));
                    }
                }
                pairs
            }
            PairSchedule::Complete { n } => {
                let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
                for i in 0..n {
                    for j in (i + 1)..n {
                        pairs.push((i as u32, j as u32));
                    }
                }
                pairs
            }
        }
    }
}
