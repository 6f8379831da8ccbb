//! Categorical distributions over a vocabulary and the vector operations the
//! estimator and metrics are built from.

use serde::Serialize;
use thiserror::Error;

use crate::vocab::TokenId;

/// Absolute tolerance on `sum(probs) == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("cannot build a distribution from zero samples")]
    EmptySampleSet,
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("vocabulary mismatch: {left} vs {right} symbols")]
    VocabMismatch { left: usize, right: usize },
    #[error("smoothing weight {0} is outside [0, 1]")]
    InvalidSmoothing(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(String),
}

/// A probability vector over a vocabulary.
///
/// Components lie in `[0, 1]` and sum to one within
/// [`NORMALIZATION_TOLERANCE`]. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistError> {
        if probs.len() < 2 {
            return Err(DistError::InvalidDistribution(format!("need at least 2 components, got {}", probs.len())));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(DistError::InvalidDistribution(format!("component {i} = {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DistError::InvalidDistribution(format!("components sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Result<Self, DistError> {
        if size < 2 {
            return Err(DistError::InvalidDistribution(format!("uniform over {size} symbols")));
        }
        Ok(Self { probs: vec![1.0 / size as f64; size] })
    }

    pub fn one_hot(size: usize, index: TokenId) -> Result<Self, DistError> {
        if (index as usize) >= size {
            return Err(DistError::TokenOutOfRange { id: index, vocab_size: size });
        }
        let mut probs = vec![0.0; size.max(2)];
        probs[index as usize] = 1.0;
        Self::new(probs)
    }

    /// The sample mean of one-hot draws, given per-symbol counts.
    ///
    /// `probs[v] = counts[v] / total`; `total` must equal the sum of `counts`.
    pub fn from_counts(counts: &[u64], total: u64) -> Result<Self, DistError> {
        if total == 0 {
            return Err(DistError::EmptySampleSet);
        }
        if counts.len() < 2 {
            return Err(DistError::InvalidCounts(format!("{} components", counts.len())));
        }
        let sum = counts.iter().try_fold(0u64, |acc, &c| acc.checked_add(c));
        match sum {
            Some(s) if s == total => {}
            Some(s) => return Err(DistError::InvalidCounts(format!("counts sum to {s}, expected {total}"))),
            None => return Err(DistError::InvalidCounts("count overflow".into())),
        }
        let denom = total as f64;
        Ok(Self { probs: counts.iter().map(|&c| c as f64 / denom).collect() })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }

    /// Largest-probability index; ties resolve to the lowest index.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// `max_v |self[v] - other[v]|`.
    pub fn sup_norm_distance(&self, other: &Self) -> Result<f64, DistError> {
        sup_norm(&self.probs, &other.probs)
    }

    /// Mixture with the uniform distribution: `(1 - eta) * d + eta / |V|`.
    pub fn smooth(&self, eta: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(DistError::InvalidSmoothing(eta));
        }
        let floor = eta / self.probs.len() as f64;
        let keep = 1.0 - eta;
        Ok(Self { probs: self.probs.iter().map(|&p| keep * p + floor).collect() })
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
    }
}

/// Componentwise sup-norm distance between two raw probability slices.
pub fn sup_norm(a: &[f64], b: &[f64]) -> Result<f64, DistError> {
    if a.len() != b.len() {
        return Err(DistError::VocabMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Precomputed cumulative sums for inverse-CDF sampling.
///
/// Sampling rule: draw `u` in `(0, 1]` and return the first index whose
/// cumulative sum (accumulated left to right in `f64`) is `>= u`. If rounding
/// leaves the final cumulative sum below `u`, the last index with positive
/// mass is returned. Zero-mass indices are never selected.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl InverseCdf {
    pub fn new(dist: &CategoricalDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = dist
            .probs()
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = dist.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Self { cumulative, last_positive }
    }

    #[inline]
    pub fn sample(&self, u: f64) -> TokenId {
        let i = self.cumulative.partition_point(|&c| c < u);
        if i >= self.cumulative.len() {
            self.last_positive as TokenId
        } else {
            i as TokenId
        }
    }
}
