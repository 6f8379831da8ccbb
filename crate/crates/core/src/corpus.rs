//! Character corpora over the text8 charset and the 90/5/5 split.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vocab::{TokenId, TokenSequence, Vocabulary};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("byte 0x{byte:02x} at offset {offset} is outside the charset (a-z and space)")]
    Format { offset: usize, byte: u8 },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("requested {requested} positions but the split only has {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("unknown split {0:?} (expected train, validation, test or all)")]
    UnknownSplit(String),
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
    /// The whole corpus.
    All,
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "valid" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(CorpusError::UnknownSplit(s.to_owned())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
            Self::All => "all",
        })
    }
}

/// A tokenized character corpus with train/validation/test boundaries.
///
/// Train is the first `floor(0.9 L)` tokens, validation the next
/// `floor(0.05 L)`, test the remainder.
#[derive(Debug, Clone)]
pub struct CharCorpus {
    vocab: Vocabulary,
    data: TokenSequence,
    train_end: usize,
    validation_end: usize,
}

fn byte_to_id(b: u8) -> Option<TokenId> {
    match b {
        b'a'..=b'z' => Some((b - b'a') as TokenId),
        b' ' => Some(26),
        _ => None,
    }
}

impl CharCorpus {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        if bytes.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let ids = bytes
            .iter()
            .enumerate()
            .map(|(offset, &byte)| byte_to_id(byte).ok_or(CorpusError::Format { offset, byte }))
            .collect::<Result<Vec<_>, _>>()?;
        let len = ids.len();
        let train_end = len * 9 / 10;
        let validation_end = train_end + len / 20;
        Ok(Self { vocab: Vocabulary::text8(), data: TokenSequence::from_ids_unchecked(ids), train_end, validation_end })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn data(&self) -> &TokenSequence {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train_end,
            Split::Validation => self.train_end..self.validation_end,
            Split::Test => self.validation_end..self.data.len(),
            Split::All => 0..self.data.len(),
        }
    }

    /// The tokens of `split` as a standalone sequence.
    pub fn split(&self, split: Split) -> TokenSequence {
        TokenSequence::from_ids_unchecked(self.data.ids()[self.split_range(split)].to_vec())
    }

    /// The source bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.ids().iter().map(|&id| if id == 26 { b' ' } else { b'a' + id as u8 }).collect()
    }
}

pub fn load_char_corpus(path: impl AsRef<Path>) -> Result<CharCorpus, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    CharCorpus::from_bytes(&bytes)
}

/// Draws `count` distinct positions of `split` uniformly without replacement.
///
/// Positions index the split as a standalone sequence and range over
/// `1..len`, so each has at least one token of history. Returned in sampling
/// order.
pub fn sample_positions(corpus: &CharCorpus, split: Split, count: usize, seed: u64) -> Result<Vec<usize>, CorpusError> {
    let available = corpus.split_range(split).len().saturating_sub(1);
    if count > available {
        return Err(CorpusError::SubsetTooLarge { requested: count, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, available, count).into_iter().map(|i| i + 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizes_with_fixed_order() {
        let c = CharCorpus::from_bytes(b"abc abc").unwrap();
        assert_eq!(c.data().ids(), &[0, 1, 2, 26, 0, 1, 2]);
    }

    #[test]
    fn split_sizes_for_100_chars() {
        let c = CharCorpus::from_bytes(&[b'q'; 100]).unwrap();
        assert_eq!(c.split(Split::Train).len(), 90);
        assert_eq!(c.split(Split::Validation).len(), 5);
        assert_eq!(c.split(Split::Test).len(), 5);
    }

    #[test]
    fn rejects_foreign_bytes() {
        match CharCorpus::from_bytes(b"hello World") {
            Err(CorpusError::Format { offset: 6, byte: b'W' }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(CharCorpus::from_bytes(b"abc\n"), Err(CorpusError::Format { offset: 3, .. })));
        assert!(matches!(CharCorpus::from_bytes(b""), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_char_corpus("/nonexistent/text8"), Err(CorpusError::Io { .. })));
    }

    #[test]
    fn exhaustive_sampling_is_a_permutation() {
        let c = CharCorpus::from_bytes(&[b'a'; 200]).unwrap();
        let n = c.split(Split::Train).len() - 1;
        let mut p = sample_positions(&c, Split::Train, n, 3).unwrap();
        assert_ne!(p, (1..=n).collect::<Vec<_>>(), "expected shuffled order");
        p.sort_unstable();
        assert_eq!(p, (1..=n).collect::<Vec<_>>());
        assert!(matches!(sample_positions(&c, Split::Train, n + 1, 3), Err(CorpusError::SubsetTooLarge { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = CharCorpus::from_bytes(&[b'a'; 5000]).unwrap();
        assert_eq!(
            sample_positions(&c, Split::Train, 64, 11).unwrap(),
            sample_positions(&c, Split::Train, 64, 11).unwrap()
        );
    }

    /// P(overlap >= k) for two independent uniform `m`-subsets of `n` items.
    fn hypergeometric_tail(n: usize, m: usize, k: usize) -> f64 {
        let ln_choose =
            |a: usize, b: usize| -> f64 { (0..b).map(|i| ((a - i) as f64).ln() - ((i + 1) as f64).ln()).sum() };
        (k..=m).map(|j| (ln_choose(m, j) + ln_choose(n - m, m - j) - ln_choose(n, m)).exp()).sum()
    }

    #[test]
    fn different_seeds_rarely_overlap() {
        let n = 10_000;
        assert!(1.0 - hypergeometric_tail(n, 64, 5) > 0.99);
        // Validation split of a 200,020-char corpus has 10,001 tokens.
        let c = CharCorpus::from_bytes(&vec![b'e'; 200_020]).unwrap();
        assert_eq!(c.split_range(Split::Validation).len() - 1, n);
        let a = sample_positions(&c, Split::Validation, 64, 1).unwrap();
        let b = sample_positions(&c, Split::Validation, 64, 2).unwrap();
        let overlap = a.iter().filter(|p| b.contains(p)).count();
        assert!(overlap < 5, "overlap {overlap}");
    }

    proptest! {
        #[test]
        fn bytes_round_trip_and_splits_partition(text in "[a-z ]{1,400}") {
            let c = CharCorpus::from_bytes(text.as_bytes()).unwrap();
            prop_assert_eq!(c.to_bytes(), text.as_bytes());
            let mut joined = c.split(Split::Train).into_ids();
            joined.extend(c.split(Split::Validation).into_ids());
            joined.extend(c.split(Split::Test).into_ids());
            prop_assert_eq!(joined.as_slice(), c.data().ids());
            prop_assert_eq!(c.split_range(Split::Train).len(), text.len() * 9 / 10);
            prop_assert_eq!(c.split_range(Split::Validation).len(), text.len() / 20);
        }
    }
}
