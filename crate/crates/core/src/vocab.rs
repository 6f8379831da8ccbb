//! Vocabularies and token sequences.

use std::collections::HashMap;
use std::fmt;

use crate::dist::DistError;

/// Index of a symbol inside a [`Vocabulary`].
pub type TokenId = u32;

/// Bijective mapping between symbols and dense indices `0..len`.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<I, S>(symbols: I) -> Result<Self, DistError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.len() < 2 {
            return Err(DistError::InvalidVocabulary(format!("need at least 2 symbols, got {}", symbols.len())));
        }
        if symbols.len() > TokenId::MAX as usize {
            return Err(DistError::InvalidVocabulary("too many symbols".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i as TokenId).is_some() {
                return Err(DistError::InvalidVocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// The 27-symbol character set of text8: `'a'..='z'` followed by space.
    ///
    /// The order is fixed; protocol handshakes and frozen regression values
    /// depend on it.
    pub fn text8() -> Self {
        let symbols = ('a'..='z').chain(std::iter::once(' ')).map(String::from);
        Self::new(symbols).expect("text8 charset is a valid vocabulary")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    /// Always false; a vocabulary holds at least two symbols.
    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.symbols.len()
    }
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary").field("symbols", &self.symbols).finish()
    }
}

/// A sequence of vocabulary indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    /// Wraps `ids`, checking each against `vocab`.
    pub fn new(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self, DistError> {
        if let Some(&bad) = ids.iter().find(|&&id| !vocab.contains_id(id)) {
            return Err(DistError::TokenOutOfRange { id: bad, vocab_size: vocab.len() });
        }
        Ok(Self(ids))
    }

    /// Wraps `ids` without validation.
    pub fn from_ids_unchecked(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    /// Maps each symbol of `text` (one `char` per token) through `vocab`.
    pub fn from_chars(text: &str, vocab: &Vocabulary) -> Result<Self, DistError> {
        let mut buf = [0u8; 4];
        text.chars()
            .map(|c| vocab.index_of(c.encode_utf8(&mut buf)).ok_or_else(|| DistError::UnknownSymbol(c.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    /// Teacher-forced history for predicting the token at `position`: the
    /// gold tokens strictly before it, truncated to the last `window`.
    pub fn history(&self, position: usize, window: usize) -> &[TokenId] {
        let end = position.min(self.0.len());
        &self.0[end.saturating_sub(window)..end]
    }

    /// Concatenates the symbols of every token.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        self.0.iter().filter_map(|&id| vocab.symbol(id)).collect()
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}
