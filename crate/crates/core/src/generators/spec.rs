use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::{
    make_external_generator, make_markov_generator, make_uniform_generator, train_markov, Generator, GeneratorError,
};
use crate::corpus::load_char_corpus;
use crate::vocab::Vocabulary;

const DEFAULT_PSEUDO_COUNT: f64 = 0.1;

/// Parsed generator spec string.
///
/// ```text
/// builtin:uniform
/// builtin:markov:order=<k>:train=<path>[:pseudo=<x>]
/// external:cmd=<shell command>
/// ```
///
/// Markov options are `:`-separated, so the training path cannot contain
/// `:`. Everything after `external:cmd=` is the command, verbatim.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Uniform,
    Markov { order: usize, train: PathBuf, pseudo_count: f64 },
    External { command: String },
}

impl FromStr for GeneratorSpec {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| GeneratorError::InvalidSpec(format!("{msg}: {s:?}"));
        if s == "builtin:uniform" {
            return Ok(Self::Uniform);
        }
        if let Some(command) = s.strip_prefix("external:cmd=") {
            if command.trim().is_empty() {
                return Err(bad("empty command"));
            }
            return Ok(Self::External { command: command.to_owned() });
        }
        if let Some(opts) = s.strip_prefix("builtin:markov:") {
            let (mut order, mut train, mut pseudo_count) = (None, None, DEFAULT_PSEUDO_COUNT);
            for opt in opts.split(':') {
                let (key, value) = opt.split_once('=').ok_or_else(|| bad("expected key=value"))?;
                match key {
                    "order" => order = Some(value.parse().map_err(|_| bad("order must be a non-negative integer"))?),
                    "train" if !value.is_empty() => train = Some(PathBuf::from(value)),
                    "pseudo" => {
                        pseudo_count = value
                            .parse::<f64>()
                            .ok()
                            .filter(|p| *p >= 0.0 && p.is_finite())
                            .ok_or_else(|| bad("pseudo must be a non-negative number"))?
                    }
                    _ => return Err(bad(&format!("unknown option `{key}`"))),
                }
            }
            return Ok(Self::Markov {
                order: order.ok_or_else(|| bad("missing order=<k>"))?,
                train: train.ok_or_else(|| bad("missing train=<path>"))?,
                pseudo_count,
            });
        }
        Err(bad("expected builtin:uniform, builtin:markov:..., or external:cmd=..."))
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "builtin:uniform"),
            Self::Markov { order, train, pseudo_count } => {
                write!(f, "builtin:markov:order={order}:train={}:pseudo={pseudo_count}", train.display())
            }
            Self::External { command } => write!(f, "external:cmd={command}"),
        }
    }
}

impl GeneratorSpec {
    /// Instantiates the generator over `vocab`.
    pub fn build(&self, vocab: &Vocabulary, batch_limit: usize) -> Result<Box<dyn Generator>, GeneratorError> {
        Ok(match self {
            Self::Uniform => Box::new(make_uniform_generator(vocab.clone())),
            Self::Markov { order, train, pseudo_count } => {
                let corpus = load_char_corpus(train)?;
                if corpus.vocab() != vocab {
                    return Err(GeneratorError::VocabMismatch("training corpus vocabulary differs".into()));
                }
                let model = train_markov(corpus.data(), vocab.len(), *order, *pseudo_count)?;
                Box::new(make_markov_generator(model, vocab.clone())?)
            }
            Self::External { command } => Box::new(make_external_generator(command, vocab.clone(), batch_limit)?),
        })
    }
}
