//! Cross-entropy metrics over a gold sequence under teacher forcing.
//!
//! For a test sequence `t_1..t_n` and a model `q`,
//! `ACE = −(1/n) Σ log2 q(t_i | t_1..t_{i−1})`; bits per character is ACE
//! itself and perplexity is `2^ACE`. Here `q` is either the Monte-Carlo
//! estimate of a generator's next-token distribution (smoothed towards
//! uniform by `eta`) or, when the generator exposes it, the exact one.

use serde::Serialize;
use thiserror::Error;

use crate::approximator::{approximate_step, ApproxError, Probe};
use crate::dist::{CategoricalDistribution, DistError};
use crate::exec::Execution;
use crate::generators::{Generator, GeneratorError};
use crate::seed::position_seed;
use crate::vocab::{TokenId, TokenSequence};

pub const DEFAULT_N_SAMPLES: usize = 2000;
pub const DEFAULT_SMOOTHING_ETA: f64 = 1e-3;
pub const DEFAULT_PREFIX_WINDOW: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no positions to evaluate")]
    NoPositions,
    #[error("gold sequence must hold at least 2 tokens, got {0}")]
    GoldTooShort(usize),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("gold token {gold} has probability 0 at position {position}; smooth the estimate first")]
    ZeroProbabilityGold { position: usize, gold: TokenId },
    #[error("generator does not expose its next-token distribution")]
    UnsupportedCapability,
    #[error("generator failed at position {position}: {source}")]
    Generator {
        position: usize,
        #[source]
        source: GeneratorError,
    },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Evaluation knobs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    /// Monte-Carlo samples per position.
    pub n_samples: usize,
    /// Weight of the uniform mixture applied to each estimate.
    pub smoothing_eta: f64,
    /// Gold history fed to the generator, in tokens.
    pub prefix_window: usize,
    pub seed: u64,
    /// First target position (clamped to 1, the first with history).
    pub start: usize,
    /// One past the last target position; the sequence end when `None`.
    pub end: Option<usize>,
    pub stride: usize,
    /// Keep per-position losses in the serialized report.
    #[serde(skip)]
    pub record_per_position: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_N_SAMPLES,
            smoothing_eta: DEFAULT_SMOOTHING_ETA,
            prefix_window: DEFAULT_PREFIX_WINDOW,
            seed: crate::seed::DEFAULT_SEED,
            start: 1,
            end: None,
            stride: 1,
            record_per_position: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_samples == 0 {
            return Err(EvalError::InvalidConfig("n_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing_eta) {
            return Err(EvalError::InvalidConfig(format!("eta must be in [0, 1], got {}", self.smoothing_eta)));
        }
        if self.prefix_window == 0 {
            return Err(EvalError::InvalidConfig("prefix_window must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(EvalError::InvalidConfig("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Target positions evaluated on a gold sequence of length `len`.
    pub fn positions(&self, len: usize) -> Vec<usize> {
        let end = self.end.map_or(len, |e| e.min(len));
        (self.start.max(1)..end).step_by(self.stride).collect()
    }
}

/// Loss at one evaluated position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositionLoss {
    pub t: usize,
    pub loss_bits: f64,
    /// Gold-token probability before smoothing.
    pub raw_gold_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ace: f64,
    pub bpc: f64,
    pub perplexity: f64,
    pub token_count: usize,
    pub zero_gold_events: usize,
    pub n_used: usize,
    pub eta_used: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_position_log_losses: Option<Vec<f64>>,
    #[serde(skip)]
    pub positions: Vec<PositionLoss>,
}

impl EvalReport {
    fn from_losses(positions: Vec<PositionLoss>, n_used: usize, eta_used: f64, record: bool) -> Self {
        let token_count = positions.len();
        let ace = positions.iter().map(|p| p.loss_bits).sum::<f64>() / token_count as f64;
        Self {
            ace,
            bpc: ace,
            perplexity: ace.exp2(),
            token_count,
            zero_gold_events: positions.iter().filter(|p| p.raw_gold_prob == 0.0).count(),
            n_used,
            eta_used,
            per_position_log_losses: record.then(|| positions.iter().map(|p| p.loss_bits).collect()),
            positions,
        }
    }

    /// `t,loss_bits,raw_gold_prob` CSV with a header row.
    pub fn per_position_csv(&self) -> String {
        let mut out = String::from("t,loss_bits,raw_gold_prob\n");
        for p in &self.positions {
            out.push_str(&format!("{},{},{}\n", p.t, p.loss_bits, p.raw_gold_prob));
        }
        out
    }
}

/// `−log2 dist[gold]`.
pub fn log_loss(dist: &CategoricalDistribution, gold: TokenId) -> Result<f64, EvalError> {
    if gold as usize >= dist.len() {
        return Err(DistError::TokenOutOfRange { id: gold, vocab_size: dist.len() }.into());
    }
    bits(dist.prob(gold)).ok_or(EvalError::ZeroProbabilityGold { position: 0, gold })
}

fn bits(p: f64) -> Option<f64> {
    (p > 0.0).then(|| 0.0 - p.log2())
}

fn check_gold<G: Generator + ?Sized>(gen: &G, gold: &TokenSequence, cfg: &EvalConfig) -> Result<Vec<usize>, EvalError> {
    cfg.validate()?;
    if gold.len() < 2 {
        return Err(EvalError::GoldTooShort(gold.len()));
    }
    let vocab_size = gen.vocab().len();
    if let Some(&bad) = gold.ids().iter().find(|&&t| t as usize >= vocab_size) {
        return Err(DistError::TokenOutOfRange { id: bad, vocab_size }.into());
    }
    let positions = cfg.positions(gold.len());
    if positions.is_empty() {
        return Err(EvalError::NoPositions);
    }
    Ok(positions)
}

/// Scores `gold` with the Monte-Carlo estimate of `gen`'s next-token
/// distribution at each position.
///
/// Position `t` conditions on the gold tokens before it (at most
/// `prefix_window` of them), draws `n_samples` with the stream seed
/// `position_seed(cfg.seed, t)`, smooths with `eta`, and scores `gold[t]`.
/// The report is identical for every `exec`.
pub fn evaluate<G: Generator + ?Sized>(
    gen: &G,
    gold: &TokenSequence,
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    let positions = check_gold(gen, gold, cfg)?;
    let floor = cfg.smoothing_eta / gen.vocab().len() as f64;
    let keep = 1.0 - cfg.smoothing_eta;
    let losses = exec.try_map_range::<_, EvalError, _>(positions.len(), |i| {
        let t = positions[i];
        let probe = Probe { position: t, prefix: gold.history(t, cfg.prefix_window) };
        let estimate = approximate_step(gen, probe, cfg.n_samples, position_seed(cfg.seed, t as u64))?;
        let target = gold.ids()[t];
        let raw = estimate.prob(target);
        // Same arithmetic as `CategoricalDistribution::smooth`.
        let smoothed = keep * raw + floor;
        let loss_bits = bits(smoothed).ok_or(EvalError::ZeroProbabilityGold { position: t, gold: target })?;
        Ok(PositionLoss { t, loss_bits, raw_gold_prob: raw })
    })?;
    Ok(EvalReport::from_losses(losses, cfg.n_samples, cfg.smoothing_eta, cfg.record_per_position))
}

/// Scores `gold` with the generator's exact next-token distribution. No
/// sampling or smoothing; `n_samples`, `smoothing_eta` and `seed` are unused.
pub fn evaluate_true<G: Generator + ?Sized>(
    gen: &G,
    gold: &TokenSequence,
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    if !gen.supports_true_dist() {
        return Err(EvalError::UnsupportedCapability);
    }
    let positions = check_gold(gen, gold, cfg)?;
    let losses = exec.try_map_range::<_, EvalError, _>(positions.len(), |i| {
        let t = positions[i];
        let dist = gen
            .true_next_dist(gold.history(t, cfg.prefix_window))
            .map_err(|source| EvalError::Generator { position: t, source })?;
        let target = gold.ids()[t];
        let p = dist.prob(target);
        let loss_bits = bits(p).ok_or(EvalError::ZeroProbabilityGold { position: t, gold: target })?;
        Ok(PositionLoss { t, loss_bits, raw_gold_prob: p })
    })?;
    Ok(EvalReport::from_losses(losses, 0, 0.0, cfg.record_per_position))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{make_markov_generator, make_uniform_generator, train_markov, FixedGenerator};
    use crate::vocab::Vocabulary;
    use std::sync::Mutex;

    fn text(s: &str) -> TokenSequence {
        TokenSequence::from_chars(s, &Vocabulary::text8()).unwrap()
    }

    #[test]
    fn log_loss_examples() {
        assert_eq!(log_loss(&CategoricalDistribution::one_hot(27, 4).unwrap(), 4).unwrap(), 0.0);
        let u = CategoricalDistribution::uniform(27).unwrap();
        assert!((log_loss(&u, 9).unwrap() - 4.7549).abs() < 1e-4);
        let d = CategoricalDistribution::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(log_loss(&d, 0).unwrap(), 2.0);
        assert!(matches!(
            log_loss(&CategoricalDistribution::one_hot(3, 0).unwrap(), 1),
            Err(EvalError::ZeroProbabilityGold { gold: 1, .. })
        ));
    }

    #[test]
    fn uniform_generator_scores_log2_v() {
        let g = make_uniform_generator(Vocabulary::text8());
        let gold = text("the cat sat on the mat and then it sat on the hat");
        let cfg = EvalConfig { n_samples: 100, ..Default::default() };
        let r = evaluate(&g, &gold, &cfg, Execution::Sequential).unwrap();
        assert_eq!(r.token_count, gold.len() - 1);
        assert!(r.bpc.is_finite());
        let t = evaluate_true(&g, &gold, &cfg, Execution::Sequential).unwrap();
        assert!((t.bpc - 27f64.log2()).abs() < 1e-12);
        assert_eq!(r.perplexity, r.bpc.exp2());
    }

    #[test]
    fn alternating_oracle_costs_only_the_smoothing_penalty() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        let gold = TokenSequence::from_chars(&"ab".repeat(200), &v).unwrap();
        let m = train_markov(&gold, 2, 1, 0.0).unwrap();
        let g = make_markov_generator(m, v).unwrap();
        let cfg = EvalConfig { n_samples: 50, ..Default::default() };
        let r = evaluate(&g, &gold, &cfg, Execution::Sequential).unwrap();
        let penalty = -(1.0 - 1e-3 + 1e-3 / 2.0f64).log2();
        assert!((r.bpc - penalty).abs() < 1e-12);
        assert!(r.bpc < 0.01);
        assert_eq!(r.zero_gold_events, 0);
        assert_eq!(evaluate_true(&g, &gold, &cfg, Execution::Sequential).unwrap().bpc, 0.0);
    }

    #[test]
    fn zero_mass_gold_is_counted_and_smoothed() {
        let g = FixedGenerator::constant(Vocabulary::text8(), 0).unwrap();
        let gold = text("aab");
        let cfg = EvalConfig { n_samples: 10, record_per_position: true, ..Default::default() };
        let r = evaluate(&g, &gold, &cfg, Execution::Sequential).unwrap();
        assert_eq!(r.token_count, 2);
        assert_eq!(r.zero_gold_events, 1);
        let losses = r.per_position_log_losses.as_ref().unwrap();
        assert!((losses[1] - -(1e-3f64 / 27.0).log2()).abs() < 1e-12);
        let raw = EvalConfig { smoothing_eta: 0.0, ..cfg };
        assert!(matches!(
            evaluate(&g, &gold, &raw, Execution::Sequential),
            Err(EvalError::ZeroProbabilityGold { position: 2, gold: 1 })
        ));
        assert!(matches!(
            evaluate_true(&g, &gold, &raw, Execution::Sequential),
            Err(EvalError::ZeroProbabilityGold { position: 2, .. })
        ));
    }

    #[test]
    fn positions_respect_range_and_stride() {
        let cfg = EvalConfig { start: 0, end: Some(10), stride: 3, ..Default::default() };
        assert_eq!(cfg.positions(100), vec![1, 4, 7]);
        let cfg = EvalConfig { start: 95, end: Some(1000), ..Default::default() };
        assert_eq!(cfg.positions(100), (95..100).collect::<Vec<_>>());
        let g = make_uniform_generator(Vocabulary::text8());
        let cfg = EvalConfig { start: 50, ..Default::default() };
        assert!(matches!(evaluate(&g, &text("abc"), &cfg, Execution::Sequential), Err(EvalError::NoPositions)));
        assert!(matches!(
            evaluate(&g, &text("a"), &EvalConfig::default(), Execution::Sequential),
            Err(EvalError::GoldTooShort(1))
        ));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            EvalConfig { n_samples: 0, ..Default::default() },
            EvalConfig { smoothing_eta: 1.5, ..Default::default() },
            EvalConfig { prefix_window: 0, ..Default::default() },
            EvalConfig { stride: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn capability_is_required_for_true_scores() {
        struct SampleOnly(FixedGenerator);
        impl Generator for SampleOnly {
            fn vocab(&self) -> &Vocabulary {
                self.0.vocab()
            }
            fn sample_next(&self, p: &[TokenId], c: usize, s: u64) -> Result<Vec<TokenId>, GeneratorError> {
                self.0.sample_next(p, c, s)
            }
        }
        let g = SampleOnly(make_uniform_generator(Vocabulary::text8()));
        assert!(matches!(
            evaluate_true(&g, &text("abc"), &EvalConfig::default(), Execution::Sequential),
            Err(EvalError::UnsupportedCapability)
        ));
        assert!(evaluate(&g, &text("abc"), &EvalConfig { n_samples: 5, ..Default::default() }, Execution::Sequential)
            .is_ok());
    }

    /// Records every prefix it is asked about.
    struct Recorder {
        inner: FixedGenerator,
        seen: Mutex<Vec<Vec<TokenId>>>,
    }

    impl Generator for Recorder {
        fn vocab(&self) -> &Vocabulary {
            self.inner.vocab()
        }
        fn sample_next(&self, prefix: &[TokenId], count: usize, seed: u64) -> Result<Vec<TokenId>, GeneratorError> {
            self.seen.lock().unwrap().push(prefix.to_vec());
            self.inner.sample_next(prefix, count, seed)
        }
    }

    #[test]
    fn generator_only_ever_sees_gold_history() {
        let gold = text("teacher forcing keeps the history gold at every step of the loop");
        let g = Recorder { inner: make_uniform_generator(Vocabulary::text8()), seen: Mutex::new(Vec::new()) };
        let window = 5;
        let cfg = EvalConfig { n_samples: 3000, prefix_window: window, ..Default::default() };
        evaluate(&g, &gold, &cfg, Execution::Parallel).unwrap();
        let seen = g.seen.into_inner().unwrap();
        // Every call's prefix is exactly the gold window before some target.
        let expected: Vec<&[TokenId]> = (1..gold.len()).map(|t| gold.history(t, window)).collect();
        assert!(seen.len() >= expected.len());
        for prefix in &seen {
            assert!(expected.iter().any(|e| e == &prefix.as_slice()), "non-gold prefix {prefix:?}");
        }
        for e in expected {
            assert!(seen.iter().any(|p| p.as_slice() == e));
        }
    }

    #[test]
    fn execution_mode_does_not_change_report() {
        let g = make_uniform_generator(Vocabulary::text8());
        let gold = text(&"lorem ipsum dolor sit amet ".repeat(20));
        let cfg = EvalConfig { n_samples: 300, ..Default::default() };
        let a = evaluate(&g, &gold, &cfg, Execution::Sequential).unwrap();
        let b = evaluate(&g, &gold, &cfg, Execution::Parallel).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.positions, b.positions);
    }
}
