//! Choosing the number of Monte-Carlo samples `N`.
//!
//! Two routes:
//!
//! * **Analytic.** Each coordinate `X_v` of the estimate is a mean of `N`
//!   Bernoulli(`p_v`) indicators, so Chernoff-Hoeffding gives
//!   `Pr(|X_v − p_v| > γ) < 2·exp(−2Nγ²)`. A union bound over the vocabulary
//!   bounds the probability that *any* coordinate is off by more than `γ` by
//!   `2|V|·exp(−2Nγ²)`; requiring that to be below `ε` yields
//!   `N > ln(2|V|/ε) / (2γ²)`.
//! * **Empirical.** The sequence `G̃_N` converges in sup norm, so pick the
//!   smallest `N` (on a grid of multiples of `α`) where the change over the
//!   last `α` draws, averaged over a subset of evaluation positions, falls
//!   below `γ′`.

use serde::Serialize;
use thiserror::Error;

use crate::approximator::{approximate_curve, ApproxError, ConvergenceCurve, CurvePoint, Probe};
use crate::exec::Execution;
use crate::generators::Generator;
use crate::seed::position_seed;

pub const DEFAULT_ALPHA: usize = 10;
pub const DEFAULT_GAMMA_PRIME: f64 = 1e-3;
pub const DEFAULT_N_MAX: usize = 10_000;
pub const DEFAULT_SUBSET_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid bound query: {0}")]
    InvalidBoundQuery(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no evaluation positions given")]
    NoPositions,
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

/// Accuracy `γ`, failure probability `ε`, and vocabulary size for the
/// analytic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundQuery {
    pub gamma: f64,
    pub epsilon: f64,
    pub vocab_size: usize,
}

impl BoundQuery {
    pub fn new(gamma: f64, epsilon: f64, vocab_size: usize) -> Result<Self, PlanError> {
        let q = Self { gamma, epsilon, vocab_size };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PlanError::InvalidBoundQuery(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(PlanError::InvalidBoundQuery(format!("epsilon must be in (0, 1), got {}", self.epsilon)));
        }
        if self.vocab_size < 2 {
            return Err(PlanError::InvalidBoundQuery(format!(
                "vocab size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Smallest integer `N` with `N > ln(2|V|/ε) / (2γ²)`; at least 1.
pub fn hoeffding_bound_n(q: &BoundQuery) -> Result<u64, PlanError> {
    q.validate()?;
    let x = (2.0 * q.vocab_size as f64 / q.epsilon).ln() / (2.0 * q.gamma * q.gamma);
    if x <= 0.0 {
        return Ok(1);
    }
    Ok(x.floor() as u64 + 1)
}

/// Per-coordinate tail bound `2·exp(−2Nγ²)`. Multiply by `|V|` for the
/// union bound over the vocabulary.
pub fn hoeffding_violation_probability(gamma: f64, n: u64) -> f64 {
    2.0 * (-2.0 * n as f64 * gamma * gamma).exp()
}

/// Union bound `2|V|·exp(−2Nγ²)` on the probability that any coordinate
/// deviates by more than `γ`.
pub fn union_violation_probability(gamma: f64, n: u64, vocab_size: usize) -> f64 {
    vocab_size as f64 * hoeffding_violation_probability(gamma, n)
}

/// Parameters of the empirical criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalPlan {
    pub alpha: usize,
    pub gamma_prime: f64,
    pub n_max: usize,
    pub subset_size: usize,
}

impl Default for EmpiricalPlan {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma_prime: DEFAULT_GAMMA_PRIME,
            n_max: DEFAULT_N_MAX,
            subset_size: DEFAULT_SUBSET_SIZE,
        }
    }
}

impl EmpiricalPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.alpha == 0 {
            return Err(PlanError::InvalidPlan("alpha must be positive".into()));
        }
        if self.n_max < 2 * self.alpha {
            return Err(PlanError::InvalidPlan(format!(
                "n_max ({}) must be at least 2 * alpha ({})",
                self.n_max, self.alpha
            )));
        }
        if !(self.gamma_prime > 0.0 && self.gamma_prime.is_finite()) {
            return Err(PlanError::InvalidPlan(format!("gamma' must be positive, got {}", self.gamma_prime)));
        }
        if self.subset_size == 0 {
            return Err(PlanError::InvalidPlan("subset size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStatus {
    Converged,
    NotConverged,
}

/// Outcome of [`select_n_empirical`]. `NotConverged` is a result, not an
/// error; the full averaged curve is kept either way.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalSelection {
    pub status: SelectionStatus,
    pub chosen_n: Option<u64>,
    pub plan: EmpiricalPlan,
    pub positions_used: usize,
    pub curve: ConvergenceCurve,
}

/// Runs one convergence curve per probe (seeded by its position) and picks
/// the smallest `N` whose position-averaged error is below `γ′`.
///
/// Probes beyond `plan.subset_size` are ignored.
pub fn select_n_empirical<G: Generator + ?Sized>(
    gen: &G,
    probes: &[Probe<'_>],
    plan: &EmpiricalPlan,
    seed: u64,
    exec: Execution,
) -> Result<EmpiricalSelection, PlanError> {
    plan.validate()?;
    if probes.is_empty() {
        return Err(PlanError::NoPositions);
    }
    let probes = &probes[..probes.len().min(plan.subset_size)];
    let curves = exec.try_map_range(probes.len(), |i| {
        let probe = probes[i];
        approximate_curve(gen, probe, plan.n_max, plan.alpha, position_seed(seed, probe.position as u64))
    })?;
    let curve = average_curves(&curves);
    let chosen_n = curve.first_below(plan.gamma_prime);
    Ok(EmpiricalSelection {
        status: if chosen_n.is_some() { SelectionStatus::Converged } else { SelectionStatus::NotConverged },
        chosen_n,
        plan: *plan,
        positions_used: probes.len(),
        curve,
    })
}

/// Pointwise arithmetic mean of curves on the same grid, summed in input
/// order.
pub fn average_curves(curves: &[ConvergenceCurve]) -> ConvergenceCurve {
    let Some(first) = curves.first() else {
        return ConvergenceCurve { alpha: 0, points: Vec::new() };
    };
    let k = curves.len() as f64;
    let points = first
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| CurvePoint { n: p.n, error: curves.iter().map(|c| c.points[i].error).sum::<f64>() / k })
        .collect();
    ConvergenceCurve { alpha: first.alpha, points }
}

/// Least-squares slope of `ln(error)` against `ln(N)` over points with
/// `lo <= N <= hi` and positive error.
pub fn log_log_slope(curve: &ConvergenceCurve, lo: u64, hi: u64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.n >= lo && p.n <= hi && p.error > 0.0)
        .map(|p| ((p.n as f64).ln(), p.error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
