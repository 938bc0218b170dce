//! histmatch: given a large tabular dataset and a target histogram, find the
//! k candidate histograms closest to the target under normalized l1
//! distance, reading only a fraction of the data.
//!
//! The search runs in three stages over a pre-shuffled, block-partitioned,
//! dictionary-encoded column store: (1) prune candidates too rare to matter,
//! via an exact hypergeometric underrepresentation test under a
//! Holm-Bonferroni correction; (2) identify the top-k through rounds of
//! fresh-sample hypothesis tests with a halving error schedule; (3) top up
//! the winners until their histograms are reliable. Outputs satisfy a
//! separation guarantee (nothing meaningfully closer was left out) and a
//! reconstruction guarantee (returned histograms are close to exact), each
//! at the query tolerance, jointly with probability greater than 1 - delta.
//!
//! Per-attribute-value bitmaps (one bit per block) let the sampler skip
//! blocks that contain no tuples of any candidate that still needs samples.

pub mod distance;
pub mod engine;
pub mod error;
pub mod eval;
pub mod stats;
pub mod storage;
pub mod types;

pub use distance::{l1_distance, normalize, split_point, top_k_select};
pub use engine::{
    active_candidates, histsim_run, mark_lookahead, stage1_prune, ActivePhase, ExecutionMode,
    Mark, MarkArray, RunConfig, SamplingPolicy, Stage1Outcome, StartBlock,
};
pub use error::{Error, Result};
pub use eval::{
    check_guarantees, delta_d, monte_carlo_verify, run_baseline, synth_generate, BaselinePolicy,
    CampaignSummary, GuaranteeReport, PlantedDistances, SelectivityProfile, SynthSpec, SynthTruth,
};
pub use stats::{
    deviation_epsilon, deviation_pvalue, holm_bonferroni, hypergeom_log_pmf, round_pvalues,
    samples_needed, simultaneous_reject, stage3_samples_needed, underrepresentation_pvalue,
};
pub use storage::{build_bitmap_index, ingest_csv, scan_groupby, BitmapIndex, Dataset, Dictionary};
pub use types::{
    CandidateState, Diagnostics, Distribution, HistogramCounts, MatchResult, MatchedCandidate,
    QuerySpec, TargetSpec,
};
