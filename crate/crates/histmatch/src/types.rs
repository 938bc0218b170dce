use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer per-group counts for one candidate histogram.
///
/// The vector length is fixed for the lifetime of a query (one entry per
/// group of the x-axis attribute); `total` is always the sum of `counts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramCounts {
    counts: Vec<u64>,
    total: u64,
}

impl HistogramCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn zeros(num_groups: usize) -> Self {
        Self { counts: vec![0; num_groups], total: 0 }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn increment(&mut self, group: usize) {
        self.counts[group] += 1;
        self.total += 1;
    }

    pub fn add_assign(&mut self, other: &HistogramCounts) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
        self.total += other.total;
    }

    pub fn clear(&mut self) {
        self.counts.fill(0);
        self.total = 0;
    }
}

/// A normalized histogram: entries in [0, 1] summing to 1 (tolerance 1e-9).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

pub const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

impl Distribution {
    /// Wraps a probability vector, checking the sum-to-one invariant.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0 + DISTRIBUTION_SUM_TOLERANCE).contains(p)) {
            return Err(Error::InvalidQuery("distribution entries must lie in [0, 1]".into()));
        }
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
            return Err(Error::InvalidQuery(format!(
                "distribution entries sum to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_groups: usize) -> Self {
        Self { probs: vec![1.0 / num_groups as f64; num_groups] }
    }

    /// Normalizes an arbitrary non-negative weight vector with positive sum.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidQuery("target weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroTotal);
        }
        Ok(Self { probs: weights.iter().map(|w| w / sum).collect() })
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
}

/// How the visual target is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum TargetSpec {
    /// Uniform over the groups of the x attribute.
    Uniform,
    /// Explicit non-negative weights, one per group; normalized internally.
    Explicit(Vec<f64>),
    /// A named value of the candidate attribute; its exact histogram is
    /// computed by a bitmap-restricted scan before the match query begins.
    Candidate(String),
}

/// A top-k similarity query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuerySpec {
    /// Grouping attribute (histogram x axis).
    pub x_attribute: String,
    /// Candidate attribute; each of its values induces one histogram.
    pub z_attribute: String,
    pub target: TargetSpec,
    pub k: usize,
    /// Approximation tolerance for the separation and reconstruction guarantees.
    pub epsilon: f64,
    /// Upper bound on the probability that either guarantee is violated.
    pub delta: f64,
    /// Selectivity threshold below which candidates may be pruned.
    pub sigma: f64,
    /// Whether a named target candidate competes in the output.
    pub include_target_candidate: bool,
}

impl QuerySpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidQuery("k must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidQuery("epsilon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidQuery("delta must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::InvalidQuery("sigma must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-candidate sampling state, exposed for diagnostics and tests.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateState {
    /// Dictionary code of the candidate attribute value.
    pub candidate_id: u32,
    /// Samples accumulated across completed rounds.
    pub n_accum: u64,
    pub counts_accum: HistogramCounts,
    /// Fresh samples taken in the current round.
    pub n_round: u64,
    pub counts_round: HistogramCounts,
    /// Distance of the accumulated estimate from the target (None until sampled).
    pub tau_accum: Option<f64>,
    /// Distance of the round estimate from the target (None until sampled).
    pub tau_round: Option<f64>,
    /// Estimated samples needed this round.
    pub budget: u64,
    pub pruned: bool,
    /// All of this candidate's tuples have been consumed; its statistics are exact.
    pub exhausted: bool,
}

/// One candidate in the query output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatchedCandidate {
    pub candidate_id: u32,
    /// Estimated (or exact, when exhausted) per-group counts.
    pub histogram: HistogramCounts,
    /// Normalized l1 distance of the estimate from the target.
    pub distance: f64,
    /// Total samples backing the estimate.
    pub n_samples: u64,
    pub exhausted: bool,
}

/// Run diagnostics reported alongside every result.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    /// Identification rounds executed.
    pub rounds: u64,
    /// Rows attributed to candidate histograms.
    pub tuples_sampled: u64,
    /// All rows of blocks that were read (including rows of pruned candidates).
    pub rows_scanned: u64,
    pub blocks_read: u64,
    pub blocks_skipped: u64,
    pub pruned_candidates: u64,
    /// Candidates flagged for having no fresh samples at test time.
    pub missing_tau_flags: u64,
    /// Blocks read by the exact pass that resolves a named target candidate.
    pub target_scan_blocks: u64,
    pub elapsed_ms: u64,
    /// The entire surviving candidate set was consumed; the result is exact.
    pub exact: bool,
}

/// The query output: top-k candidates ordered by (distance, id).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatchResult {
    pub matched: Vec<MatchedCandidate>,
    pub diagnostics: Diagnostics,
}

impl MatchResult {
    pub fn matched_ids(&self) -> Vec<u32> {
        self.matched.iter().map(|m| m.candidate_id).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.matched.is_empty()
    }
}
