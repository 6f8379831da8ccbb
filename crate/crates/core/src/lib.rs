//! Language-model evaluation for black-box stochastic sequence generators.
//!
//! A generator that can only be sampled still defines a next-token
//! distribution at every prefix. Averaging `N` one-hot draws estimates it,
//! and the estimate can then be scored like any language model (average
//! cross-entropy, bits per character, perplexity). [`planner`] picks `N`
//! either from a concentration bound or empirically from convergence curves.

pub mod approximator;
pub mod cli;
pub mod corpus;
pub mod dist;
pub mod exec;
pub mod generators;
pub mod metrics;
pub mod planner;
pub mod seed;
pub mod vocab;

pub use approximator::{
    approximate_curve, approximate_step, approximate_step_with, ConvergenceCurve, Probe, StepEstimate,
};
pub use corpus::{load_char_corpus, sample_positions, CharCorpus, Split};
pub use dist::CategoricalDistribution;
pub use exec::Execution;
pub use generators::{Generator, GeneratorSpec};
pub use metrics::{evaluate, evaluate_true, log_loss, EvalConfig, EvalReport};
pub use planner::{hoeffding_bound_n, select_n_empirical, BoundQuery, EmpiricalPlan, EmpiricalSelection};
pub use vocab::{TokenId, TokenSequence, Vocabulary};
