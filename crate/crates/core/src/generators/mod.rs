//! The stochastic next-token generator contract and its implementations.
//!
//! A [`Generator`] is a black box `G_t`: given a gold prefix it returns
//! independent next-token samples. Whatever makes it stochastic (an internal
//! softmax, a noise vector fed as initial state) stays behind the trait.
//! Some generators also expose their exact next-token distribution, which
//! lets the harness score them without sampling.

mod external;
mod markov;
pub mod protocol;
mod spec;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::dist::{CategoricalDistribution, DistError, InverseCdf};
use crate::seed::{derive, SplitMix64};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

pub use external::{make_external_generator, ExternalGenerator, DEFAULT_BATCH_LIMIT};
pub use markov::{make_markov_generator, train_markov, MarkovGenerator, MarkovModel};
pub use spec::GeneratorSpec;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("corpus of length {len} is too short for a model of order {order}")]
    CorpusTooShort { len: usize, order: usize },
    #[error("bridge protocol error: {message}{}", .line.as_deref().map(|l| format!(" (line: {l})")).unwrap_or_default())]
    BridgeProtocol { message: String, line: Option<String> },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("generator does not support {0}")]
    UnsupportedCapability(&'static str),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("failed to start generator process: {0}")]
    Spawn(#[source] std::io::Error),
}

impl GeneratorError {
    pub(crate) fn protocol(message: impl Into<String>, line: Option<&str>) -> Self {
        Self::BridgeProtocol { message: message.into(), line: line.map(str::to_owned) }
    }
}

/// A black-box stochastic next-token sampler.
///
/// `sample_next(prefix, count, seed)` must return exactly `count` valid token
/// ids and must be a pure function of its arguments.
pub trait Generator: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn sample_next(&self, prefix: &[TokenId], count: usize, seed: u64) -> Result<Vec<TokenId>, GeneratorError>;

    /// Adds the tokens of `sample_next(prefix, count, seed)` to `counts`.
    fn sample_counts(
        &self,
        prefix: &[TokenId],
        count: usize,
        seed: u64,
        counts: &mut [u64],
    ) -> Result<(), GeneratorError> {
        for t in self.sample_next(prefix, count, seed)? {
            let slot = counts
                .get_mut(t as usize)
                .ok_or(DistError::TokenOutOfRange { id: t, vocab_size: self.vocab().len() })?;
            *slot += 1;
        }
        Ok(())
    }

    fn supports_true_dist(&self) -> bool {
        false
    }

    /// The exact next-token distribution, when the generator exposes one.
    fn true_next_dist(&self, _prefix: &[TokenId]) -> Result<CategoricalDistribution, GeneratorError> {
        Err(GeneratorError::UnsupportedCapability("true_next_dist"))
    }
}

/// A distribution together with its sampling table.
#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub(crate) dist: CategoricalDistribution,
    table: InverseCdf,
}

impl Row {
    pub(crate) fn new(dist: CategoricalDistribution) -> Self {
        let table = InverseCdf::new(&dist);
        Self { dist, table }
    }

    pub(crate) fn draw(&self, count: usize, seed: u64) -> Vec<TokenId> {
        let mut rng = SplitMix64::new(seed);
        (0..count).map(|_| self.table.sample(rng.next_unit())).collect()
    }

    pub(crate) fn draw_counts(&self, count: usize, seed: u64, counts: &mut [u64]) {
        let mut rng = SplitMix64::new(seed);
        for _ in 0..count {
            counts[self.table.sample(rng.next_unit()) as usize] += 1;
        }
    }
}

/// Draws i.i.d. from one fixed distribution, ignoring the prefix.
#[derive(Debug, Clone)]
pub struct FixedGenerator {
    vocab: Vocabulary,
    row: Row,
}

impl FixedGenerator {
    pub fn new(vocab: Vocabulary, dist: CategoricalDistribution) -> Result<Self, GeneratorError> {
        if dist.len() != vocab.len() {
            return Err(DistError::VocabMismatch { left: dist.len(), right: vocab.len() }.into());
        }
        Ok(Self { vocab, row: Row::new(dist) })
    }

    /// Always emits `token`.
    pub fn constant(vocab: Vocabulary, token: TokenId) -> Result<Self, GeneratorError> {
        let dist = CategoricalDistribution::one_hot(vocab.len(), token)?;
        Self::new(vocab, dist)
    }

    pub fn dist(&self) -> &CategoricalDistribution {
        &self.row.dist
    }
}

impl Generator for FixedGenerator {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn sample_next(&self, _prefix: &[TokenId], count: usize, seed: u64) -> Result<Vec<TokenId>, GeneratorError> {
        Ok(self.row.draw(count, seed))
    }

    fn sample_counts(
        &self,
        _prefix: &[TokenId],
        count: usize,
        seed: u64,
        counts: &mut [u64],
    ) -> Result<(), GeneratorError> {
        check_counts_len(counts, &self.vocab)?;
        self.row.draw_counts(count, seed, counts);
        Ok(())
    }

    fn supports_true_dist(&self) -> bool {
        true
    }

    fn true_next_dist(&self, _prefix: &[TokenId]) -> Result<CategoricalDistribution, GeneratorError> {
        Ok(self.row.dist.clone())
    }
}

/// Uniform next-token sampler over `vocab`, independent of the prefix.
pub fn make_uniform_generator(vocab: Vocabulary) -> FixedGenerator {
    let dist = CategoricalDistribution::uniform(vocab.len()).expect("vocabulary has at least 2 symbols");
    FixedGenerator { vocab, row: Row::new(dist) }
}

pub(crate) fn check_counts_len(counts: &[u64], vocab: &Vocabulary) -> Result<(), GeneratorError> {
    if counts.len() != vocab.len() {
        return Err(DistError::VocabMismatch { left: counts.len(), right: vocab.len() }.into());
    }
    Ok(())
}

/// Free-running generation: each token is sampled conditioned on the
/// previously generated ones (the last `window` of them).
///
/// Token `i` is drawn with seed `derive(seed, i)`. Used to synthesize text
/// from oracle generators; evaluation itself never feeds samples back.
pub fn generate_text<G: Generator + ?Sized>(
    gen: &G,
    start: &[TokenId],
    len: usize,
    window: usize,
    seed: u64,
) -> Result<TokenSequence, GeneratorError> {
    let mut out: Vec<TokenId> = start.to_vec();
    out.reserve(len);
    for i in 0..len {
        let from = out.len().saturating_sub(window);
        let next = gen.sample_next(&out[from..], 1, derive(seed, i as u64))?;
        out.push(next[0]);
    }
    Ok(TokenSequence::from_ids_unchecked(out.split_off(start.len())))
}
