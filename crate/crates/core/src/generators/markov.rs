use std::collections::HashMap;

use super::{check_counts_len, Generator, GeneratorError, Row};
use crate::dist::{CategoricalDistribution, DistError};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

/// Order-`k` Markov chain over token ids.
///
/// Contexts never seen in training fall back to `fallback`, which is uniform
/// for `k > 0` and the smoothed unigram distribution for `k = 0`.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    order: usize,
    vocab_size: usize,
    transitions: HashMap<Vec<TokenId>, Row>,
    fallback: Row,
}

impl MarkovModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn fallback(&self) -> &CategoricalDistribution {
        &self.fallback.dist
    }

    pub fn transition(&self, context: &[TokenId]) -> Option<&CategoricalDistribution> {
        self.transitions.get(context).map(|r| &r.dist)
    }

    /// Every stored context with its distribution.
    pub fn contexts(&self) -> impl Iterator<Item = (&[TokenId], &CategoricalDistribution)> {
        self.transitions.iter().map(|(c, r)| (c.as_slice(), &r.dist))
    }

    fn row(&self, prefix: &[TokenId]) -> &Row {
        if self.order == 0 || prefix.len() < self.order {
            return &self.fallback;
        }
        self.transitions.get(&prefix[prefix.len() - self.order..]).unwrap_or(&self.fallback)
    }

    /// Next-token distribution after `prefix`.
    pub fn next_dist(&self, prefix: &[TokenId]) -> &CategoricalDistribution {
        &self.row(prefix).dist
    }
}

/// Fits an order-`order` chain by counting, with additive smoothing:
/// `p(v | c) = (count(c -> v) + pseudo_count) / (count(c) + pseudo_count * |V|)`.
pub fn train_markov(
    corpus: &TokenSequence,
    vocab_size: usize,
    order: usize,
    pseudo_count: f64,
) -> Result<MarkovModel, GeneratorError> {
    if !(pseudo_count >= 0.0 && pseudo_count.is_finite()) {
        return Err(DistError::InvalidCounts(format!("pseudo count {pseudo_count}")).into());
    }
    if vocab_size < 2 {
        return Err(DistError::InvalidVocabulary(format!("{vocab_size} symbols")).into());
    }
    let ids = corpus.ids();
    if ids.len() <= order {
        return Err(GeneratorError::CorpusTooShort { len: ids.len(), order });
    }
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(DistError::TokenOutOfRange { id: bad, vocab_size }.into());
    }

    let normalize = |counts: &[u64]| -> Result<Row, GeneratorError> {
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + pseudo_count * vocab_size as f64;
        let probs = counts.iter().map(|&c| (c as f64 + pseudo_count) / denom).collect();
        Ok(Row::new(CategoricalDistribution::new(probs)?))
    };

    if order == 0 {
        let mut counts = vec![0u64; vocab_size];
        for &t in ids {
            counts[t as usize] += 1;
        }
        return Ok(MarkovModel { order, vocab_size, transitions: HashMap::new(), fallback: normalize(&counts)? });
    }

    let mut table: HashMap<&[TokenId], Vec<u64>> = HashMap::new();
    for window in ids.windows(order + 1) {
        let (context, next) = window.split_at(order);
        table.entry(context).or_insert_with(|| vec![0; vocab_size])[next[0] as usize] += 1;
    }
    let transitions = table
        .into_iter()
        .map(|(c, counts)| Ok((c.to_vec(), normalize(&counts)?)))
        .collect::<Result<_, GeneratorError>>()?;
    Ok(MarkovModel {
        order,
        vocab_size,
        transitions,
        fallback: Row::new(CategoricalDistribution::uniform(vocab_size)?),
    })
}

/// In-process generator backed by a [`MarkovModel`].
#[derive(Debug, Clone)]
pub struct MarkovGenerator {
    model: MarkovModel,
    vocab: Vocabulary,
}

impl MarkovGenerator {
    pub fn model(&self) -> &MarkovModel {
        &self.model
    }
}

pub fn make_markov_generator(model: MarkovModel, vocab: Vocabulary) -> Result<MarkovGenerator, GeneratorError> {
    if model.vocab_size != vocab.len() {
        return Err(DistError::VocabMismatch { left: model.vocab_size, right: vocab.len() }.into());
    }
    Ok(MarkovGenerator { model, vocab })
}

impl Generator for MarkovGenerator {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn sample_next(&self, prefix: &[TokenId], count: usize, seed: u64) -> Result<Vec<TokenId>, GeneratorError> {
        Ok(self.model.row(prefix).draw(count, seed))
    }

    fn sample_counts(
        &self,
        prefix: &[TokenId],
        count: usize,
        seed: u64,
        counts: &mut [u64],
    ) -> Result<(), GeneratorError> {
        check_counts_len(counts, &self.vocab)?;
        self.model.row(prefix).draw_counts(count, seed, counts);
        Ok(())
    }

    fn supports_true_dist(&self) -> bool {
        true
    }

    fn true_next_dist(&self, prefix: &[TokenId]) -> Result<CategoricalDistribution, GeneratorError> {
        Ok(self.model.next_dist(prefix).clone())
    }
}
