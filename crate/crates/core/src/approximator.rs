//! Monte-Carlo approximation of a generator's next-token distribution.
//!
//! The estimate after `N` draws is the mean of `N` one-hot samples,
//! `G̃_N = (1/N) Σ g_n`. Internally it is kept as integer counts; the
//! floating distribution is derived on demand, so estimates from shards of
//! the same sample stream merge exactly.

use serde::Serialize;
use thiserror::Error;

use crate::dist::{sup_norm, CategoricalDistribution, DistError};
use crate::exec::Execution;
use crate::generators::{Generator, GeneratorError};
use crate::seed::jump;
use crate::vocab::TokenId;

/// Draws per generator call. Batch `b` of a step uses the stream seed
/// `jump(seed, b * SAMPLE_BATCH)`, so the union of all batches is exactly the
/// first `N` draws of the step's stream, however the batches are scheduled.
pub const SAMPLE_BATCH: usize = 1024;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("sample count must be positive")]
    ZeroSamples,
    #[error("alpha must be positive and n_max ({n_max}) at least 2 * alpha ({alpha})")]
    InvalidCurve { n_max: usize, alpha: usize },
    #[error("generator failed at position {position}: {source}")]
    Generator {
        position: usize,
        #[source]
        source: GeneratorError,
    },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// An evaluation position with its teacher-forced history.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    /// Index of the token being predicted.
    pub position: usize,
    /// Gold tokens before `position`, possibly truncated.
    pub prefix: &'a [TokenId],
}

/// Running one-hot mean over a stream of sampled tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunningEstimate {
    counts: Vec<u64>,
    n: u64,
}

impl RunningEstimate {
    pub fn new(vocab_size: usize) -> Self {
        Self { counts: vec![0; vocab_size], n: 0 }
    }

    #[inline]
    pub fn push(&mut self, token: TokenId) {
        self.counts[token as usize] += 1;
        self.n += 1;
    }

    /// Adds another estimate's draws.
    pub fn merge(&mut self, other: &Self) -> Result<(), DistError> {
        if other.counts.len() != self.counts.len() {
            return Err(DistError::VocabMismatch { left: self.counts.len(), right: other.counts.len() });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dist(&self) -> Result<CategoricalDistribution, DistError> {
        CategoricalDistribution::from_counts(&self.counts, self.n)
    }

    /// `counts[v] / n` without building the full distribution.
    pub fn prob(&self, token: TokenId) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.counts.get(token as usize).map_or(0.0, |&c| c as f64 / self.n as f64)
    }

    fn probs(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// The estimate `G̃_{t,N}` for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEstimate {
    pub position: usize,
    pub n_used: u64,
    estimate: RunningEstimate,
}

impl StepEstimate {
    pub fn dist(&self) -> CategoricalDistribution {
        self.estimate.dist().expect("step estimates hold at least one draw")
    }

    pub fn counts(&self) -> &[u64] {
        self.estimate.counts()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.estimate.prob(token)
    }
}

/// Averages `n` samples of the generator's next token after `probe.prefix`.
pub fn approximate_step<G: Generator + ?Sized>(
    gen: &G,
    probe: Probe<'_>,
    n: usize,
    seed: u64,
) -> Result<StepEstimate, ApproxError> {
    approximate_step_with(gen, probe, n, seed, Execution::Sequential)
}

/// [`approximate_step`] with the sample batches scheduled by `exec`.
pub fn approximate_step_with<G: Generator + ?Sized>(
    gen: &G,
    probe: Probe<'_>,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<StepEstimate, ApproxError> {
    if n == 0 {
        return Err(ApproxError::ZeroSamples);
    }
    let vocab_size = gen.vocab().len();
    let batches = n.div_ceil(SAMPLE_BATCH);
    let at = |source| ApproxError::Generator { position: probe.position, source };
    let estimate = if batches == 1 || !exec.is_parallel() {
        let mut counts = vec![0u64; vocab_size];
        for b in 0..batches {
            let offset = b * SAMPLE_BATCH;
            let len = SAMPLE_BATCH.min(n - offset);
            gen.sample_counts(probe.prefix, len, jump(seed, offset as u64), &mut counts).map_err(at)?;
        }
        RunningEstimate { counts, n: n as u64 }
    } else {
        let shards = exec.try_map_range::<_, ApproxError, _>(batches, |b| {
            let offset = b * SAMPLE_BATCH;
            let len = SAMPLE_BATCH.min(n - offset);
            let mut counts = vec![0u64; vocab_size];
            gen.sample_counts(probe.prefix, len, jump(seed, offset as u64), &mut counts).map_err(at)?;
            Ok(RunningEstimate { counts, n: len as u64 })
        })?;
        let mut total = RunningEstimate::new(vocab_size);
        for shard in &shards {
            total.merge(shard)?;
        }
        total
    };
    if estimate.counts.iter().sum::<u64>() != estimate.n {
        return Err(at(GeneratorError::protocol("generator returned the wrong number of samples", None)));
    }
    Ok(StepEstimate { position: probe.position, n_used: n as u64, estimate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: u64,
    pub error: f64,
}

/// `‖G̃_{N-α} − G̃_N‖_∞` at `N = 2α, 3α, …`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCurve {
    pub alpha: u64,
    pub points: Vec<CurvePoint>,
}

impl ConvergenceCurve {
    /// First `N` whose error is strictly below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<u64> {
        self.points.iter().find(|p| p.error < threshold).map(|p| p.n)
    }

    /// `n,error` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,error\n");
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.n, p.error));
        }
        out
    }
}

/// Walks one sample stream of length `n_max`, snapshotting every `alpha`
/// draws and recording the sup-norm change between consecutive snapshots.
///
/// The stream is the same one [`approximate_step`] draws from with `seed`,
/// so the snapshot at `N` is exactly `approximate_step(.., N, seed)`.
pub fn approximate_curve<G: Generator + ?Sized>(
    gen: &G,
    probe: Probe<'_>,
    n_max: usize,
    alpha: usize,
    seed: u64,
) -> Result<ConvergenceCurve, ApproxError> {
    if alpha == 0 || n_max < 2 * alpha {
        return Err(ApproxError::InvalidCurve { n_max, alpha });
    }
    let vocab_size = gen.vocab().len();
    let mut running = RunningEstimate::new(vocab_size);
    let mut previous: Option<Vec<f64>> = None;
    let mut points = Vec::with_capacity(n_max / alpha);
    let total = n_max - n_max % alpha;
    let mut offset = 0;
    while offset < total {
        let len = SAMPLE_BATCH.min(total - offset);
        let tokens = gen
            .sample_next(probe.prefix, len, jump(seed, offset as u64))
            .map_err(|source| ApproxError::Generator { position: probe.position, source })?;
        if tokens.len() != len {
            return Err(ApproxError::Generator {
                position: probe.position,
                source: GeneratorError::protocol("generator returned the wrong number of samples", None),
            });
        }
        for t in tokens {
            if t as usize >= vocab_size {
                return Err(DistError::TokenOutOfRange { id: t, vocab_size }.into());
            }
            running.push(t);
            if running.n.is_multiple_of(alpha as u64) {
                let current = running.probs();
                if let Some(prev) = &previous {
                    points.push(CurvePoint { n: running.n, error: sup_norm(prev, &current)? });
                }
                previous = Some(current);
            }
        }
        offset += len;
    }
    Ok(ConvergenceCurve { alpha: alpha as u64, points })
}
