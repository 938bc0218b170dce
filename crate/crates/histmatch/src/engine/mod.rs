//! The adaptive sampling engine: staged pruning, identification, and
//! reconstruction over block-partitioned storage, with bitmap-driven block
//! skipping and an optional dedicated sampling worker.

mod machine;
mod sampler;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::distance::l1_counts_vs_probs;
use crate::error::{Error, Result};
use crate::stats;
use crate::storage::{BitmapIndex, Dataset};
use crate::types::{
    CandidateState, Diagnostics, Distribution, HistogramCounts, MatchResult, MatchedCandidate,
    QuerySpec, TargetSpec,
};

use machine::{io_worker_loop, run_machine, MachineParams, SingleContext, TwoWorker};
use sampler::IoState;

/// Block selection policy for the sampling phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPolicy {
    /// Read every block in sequence; never skips.
    SequentialScan,
    /// Bitmap-driven skipping decided synchronously per block.
    AnyActiveSync,
    /// Bitmap-driven skipping with batched lookahead marking; marks lag the
    /// freshest counts by one batch so the reader never idles on decisions.
    AnyActiveLookahead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecutionMode {
    /// Run sampling and statistics serially; bit-reproducible per seed.
    SingleContext,
    /// Run sampling on a dedicated worker thread, statistics on the caller.
    TwoWorker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartBlock {
    /// Derive the scan start position from the run seed.
    SeededRandom,
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Rows consumed by the pruning stage.
    pub m: u64,
    /// Blocks marked per lookahead batch.
    pub lookahead: usize,
    pub policy: SamplingPolicy,
    pub execution_mode: ExecutionMode,
    pub rng_seed: u64,
    pub start_block: StartBlock,
}

pub const DEFAULT_STAGE1_SAMPLES: u64 = 500_000;
pub const DEFAULT_LOOKAHEAD: usize = 1024;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_STAGE1_SAMPLES,
            lookahead: DEFAULT_LOOKAHEAD,
            policy: SamplingPolicy::AnyActiveLookahead,
            execution_mode: ExecutionMode::SingleContext,
            rng_seed: 0,
            start_block: StartBlock::SeededRandom,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidQuery("stage-1 sample count must be at least 1".into()));
        }
        if self.lookahead < 1 {
            return Err(Error::InvalidQuery("lookahead must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Read,
    Skip,
}

/// Read/skip marks for one batch of blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkArray {
    pub batch_start: usize,
    pub marks: Vec<Mark>,
}

/// Marks a batch of blocks: a block is marked Read iff some active candidate
/// has its presence bit set there. The loop runs candidate-outer and
/// block-inner, skipping blocks already marked, so each candidate's bitmap is
/// streamed once per batch.
pub fn mark_lookahead(
    bitmaps: &BitmapIndex,
    active: &[u32],
    batch_start: usize,
    batch_len: usize,
) -> MarkArray {
    let blocks = bitmaps.block_count();
    let start = batch_start.min(blocks);
    let len = batch_len.min(blocks - start);
    let mut marks = vec![Mark::Skip; len];
    for &cand in active {
        let bitmap = bitmaps.bitmap(cand);
        for (i, mark) in marks.iter_mut().enumerate() {
            if *mark == Mark::Read {
                continue;
            }
            if bitmap.get(start + i) {
                *mark = Mark::Read;
            }
        }
    }
    MarkArray { batch_start: start, marks }
}

/// Which sampling phase an active-set query refers to.
#[derive(Debug, Clone, Copy)]
pub enum ActivePhase {
    /// Identification rounds: fresh samples counted against round budgets.
    Identify,
    /// Reconstruction: total accumulated samples counted against a floor.
    Reconstruct { threshold: u64 },
}

/// Candidates that still need samples in the given phase. Callers pass the
/// states of the relevant candidate set (survivors for identification, the
/// matched set for reconstruction); pruned and exhausted candidates are
/// never active.
pub fn active_candidates(states: &[CandidateState], phase: ActivePhase) -> Vec<u32> {
    states
        .iter()
        .filter(|s| !s.pruned && !s.exhausted)
        .filter(|s| match phase {
            ActivePhase::Identify => s.n_round < s.budget,
            ActivePhase::Reconstruct { threshold } => s.n_accum < threshold,
        })
        .map(|s| s.candidate_id)
        .collect()
}

/// Outcome of running only the pruning stage.
#[derive(Debug, Clone)]
pub struct Stage1Outcome {
    pub surviving: Vec<u32>,
    pub pruned: Vec<u32>,
    /// Stage-1 observation count per candidate code.
    pub n_obs: Vec<u64>,
    /// Rows actually consumed (block granularity can overshoot the target).
    pub m_actual: u64,
    pub pvalues: BTreeMap<u32, f64>,
}

fn start_block_for(config: &RunConfig, n_blocks: usize) -> usize {
    match config.start_block {
        StartBlock::Fixed(b) => b % n_blocks,
        StartBlock::SeededRandom => {
            ChaCha12Rng::seed_from_u64(config.rng_seed).gen_range(0..n_blocks)
        }
    }
}

struct QueryContext {
    z_idx: usize,
    x_idx: usize,
    num_groups: usize,
    num_cands: usize,
    target: Vec<f64>,
    target_scan_blocks: u64,
    excluded: Option<u32>,
}

fn prepare(dataset: &Dataset, bitmaps: &BitmapIndex, query: &QuerySpec) -> Result<QueryContext> {
    query.validate()?;
    let z_idx = dataset.attr_index(&query.z_attribute)?;
    let x_idx = dataset.attr_index(&query.x_attribute)?;
    if bitmaps.attribute() != query.z_attribute {
        return Err(Error::InvalidQuery(format!(
            "bitmap index covers '{}', query needs '{}'",
            bitmaps.attribute(),
            query.z_attribute
        )));
    }
    if bitmaps.block_count() != dataset.block_count() {
        return Err(Error::InvalidQuery("bitmap index does not match dataset blocks".into()));
    }
    let num_groups = dataset.dictionary_at(x_idx).len();
    let num_cands = dataset.dictionary_at(z_idx).len();
    let (target, target_scan_blocks) =
        resolve_target(dataset, bitmaps, query, z_idx, x_idx, num_groups)?;
    let excluded = match (&query.target, query.include_target_candidate) {
        (TargetSpec::Candidate(name), false) => {
            Some(dataset.dictionary_at(z_idx).code_of(name).expect("resolved above"))
        }
        _ => None,
    };
    Ok(QueryContext { z_idx, x_idx, num_groups, num_cands, target, target_scan_blocks, excluded })
}

/// Resolves the target spec into a normalized distribution. A named
/// candidate triggers one exact bitmap-restricted pass; its block cost is
/// reported in the run diagnostics.
fn resolve_target(
    dataset: &Dataset,
    bitmaps: &BitmapIndex,
    query: &QuerySpec,
    z_idx: usize,
    x_idx: usize,
    num_groups: usize,
) -> Result<(Vec<f64>, u64)> {
    match &query.target {
        TargetSpec::Uniform => Ok((Distribution::uniform(num_groups).probs().to_vec(), 0)),
        TargetSpec::Explicit(weights) => {
            if weights.len() != num_groups {
                return Err(Error::LengthMismatch { left: weights.len(), right: num_groups });
            }
            Ok((Distribution::from_weights(weights)?.probs().to_vec(), 0))
        }
        TargetSpec::Candidate(name) => {
            let code = dataset
                .dictionary_at(z_idx)
                .code_of(name)
                .ok_or_else(|| Error::UnknownCandidate(name.clone()))?;
            let zcol = dataset.column_at(z_idx);
            let xcol = dataset.column_at(x_idx);
            let bitmap = bitmaps.bitmap(code);
            let mut counts = vec![0u64; num_groups];
            let mut total = 0u64;
            let mut blocks = 0u64;
            for b in 0..dataset.block_count() {
                if !bitmap.get(b) {
                    continue;
                }
                blocks += 1;
                for row in dataset.block_rows(b) {
                    if zcol[row] == code {
                        counts[xcol[row] as usize] += 1;
                        total += 1;
                    }
                }
            }
            if total == 0 {
                return Err(Error::ZeroTotal);
            }
            let probs = counts.iter().map(|c| *c as f64 / total as f64).collect();
            Ok((probs, blocks))
        }
    }
}

/// Runs the full staged search and returns the top-k result with
/// diagnostics. The output satisfies the separation and reconstruction
/// guarantees at the query's epsilon with probability greater than
/// 1 - delta; if the surviving candidate set is consumed before the
/// statistics terminate, the result equals the exact scan answer and is
/// flagged exact.
pub fn histsim_run(
    dataset: &Dataset,
    bitmaps: &BitmapIndex,
    query: &QuerySpec,
    config: &RunConfig,
) -> Result<MatchResult> {
    let started = Instant::now();
    config.validate()?;
    let ctx = prepare(dataset, bitmaps, query)?;
    let universe: Vec<bool> = (0..ctx.num_cands as u32).map(|c| ctx.excluded != Some(c)).collect();
    let io = IoState::new(
        dataset,
        bitmaps,
        ctx.z_idx,
        ctx.x_idx,
        ctx.num_groups,
        config.policy,
        config.lookahead,
        start_block_for(config, dataset.block_count()),
        universe,
    );
    let params = MachineParams {
        query,
        target: &ctx.target,
        num_groups: ctx.num_groups,
        num_cands: ctx.num_cands,
        n_rows: dataset.row_count() as u64,
        m_target: config.m,
        excluded: ctx.excluded,
    };

    let out = match config.execution_mode {
        ExecutionMode::SingleContext => {
            let mut driver = SingleContext::new(io);
            run_machine(&mut driver, &params)?
        }
        ExecutionMode::TwoWorker => std::thread::scope(|scope| {
            let (dir_tx, dir_rx) = mpsc::channel();
            let (snap_tx, snap_rx) = mpsc::channel();
            scope.spawn(move || io_worker_loop(io, dir_rx, snap_tx));
            let mut driver = TwoWorker { tx: dir_tx, rx: snap_rx };
            run_machine(&mut driver, &params)
        })?,
    };

    let mut matched: Vec<MatchedCandidate> = out
        .matched
        .iter()
        .map(|&c| MatchedCandidate {
            candidate_id: c,
            histogram: HistogramCounts::new(out.accum_counts[c as usize].clone()),
            distance: out.taus[c as usize],
            n_samples: out.accum_n[c as usize],
            exhausted: out.exhausted[c as usize],
        })
        .collect();
    matched.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.candidate_id.cmp(&b.candidate_id)));

    let diagnostics = Diagnostics {
        rounds: out.rounds,
        tuples_sampled: out.counters.tuples_attributed,
        rows_scanned: out.counters.rows_scanned,
        blocks_read: out.counters.blocks_read,
        blocks_skipped: out.counters.blocks_skipped,
        pruned_candidates: out.pruned.iter().filter(|p| **p).count() as u64,
        missing_tau_flags: out.missing_tau_flags,
        target_scan_blocks: ctx.target_scan_blocks,
        elapsed_ms: started.elapsed().as_millis() as u64,
        exact: out.exact,
    };
    Ok(MatchResult { matched, diagnostics })
}

/// Runs only the pruning stage (useful for measuring its precision and
/// power in isolation).
pub fn stage1_prune(
    dataset: &Dataset,
    bitmaps: &BitmapIndex,
    query: &QuerySpec,
    config: &RunConfig,
) -> Result<Stage1Outcome> {
    config.validate()?;
    let ctx = prepare(dataset, bitmaps, query)?;
    let universe: Vec<bool> = (0..ctx.num_cands as u32).map(|c| ctx.excluded != Some(c)).collect();
    let mut io = IoState::new(
        dataset,
        bitmaps,
        ctx.z_idx,
        ctx.x_idx,
        ctx.num_groups,
        config.policy,
        config.lookahead,
        start_block_for(config, dataset.block_count()),
        universe.clone(),
    );
    let m_actual = io.run_stage1(config.m);
    let snap = io.snapshot();
    let mut n_obs = vec![0u64; ctx.num_cands];
    for (c, n, _) in &snap.partials {
        n_obs[*c as usize] = *n;
    }
    let tested: Vec<u32> = (0..ctx.num_cands as u32).filter(|&c| universe[c as usize]).collect();
    let obs: Vec<u64> = tested.iter().map(|&c| n_obs[c as usize]).collect();
    let (pvalues, pruned) = machine::stage1_test(
        dataset.row_count() as u64,
        query.sigma,
        query.delta,
        &tested,
        &obs,
        m_actual,
    );
    let surviving =
        tested.iter().copied().filter(|c| !pruned.contains(c)).collect();
    Ok(Stage1Outcome { surviving, pruned, n_obs, m_actual, pvalues })
}

/// Resolves a query's target into a normalized distribution over the
/// grouping attribute, along with the block cost of the exact pass when the
/// target is a named candidate.
pub fn resolve_target_distribution(
    dataset: &Dataset,
    bitmaps: &BitmapIndex,
    query: &QuerySpec,
) -> Result<(Vec<f64>, u64)> {
    let z_idx = dataset.attr_index(&query.z_attribute)?;
    let x_idx = dataset.attr_index(&query.x_attribute)?;
    let num_groups = dataset.dictionary_at(x_idx).len();
    resolve_target(dataset, bitmaps, query, z_idx, x_idx, num_groups)
}

/// Computes the distance of an estimated histogram from a target
/// distribution (convenience for verification code).
pub fn distance_to_target(hist: &HistogramCounts, target: &[f64]) -> Result<f64> {
    if hist.total() == 0 {
        return Err(Error::ZeroTotal);
    }
    if hist.len() != target.len() {
        return Err(Error::LengthMismatch { left: hist.len(), right: target.len() });
    }
    Ok(l1_counts_vs_probs(hist.counts(), hist.total(), target))
}

/// Re-exported statistical helper: the per-candidate sample floor used by
/// the reconstruction stage.
pub fn stage3_threshold(query: &QuerySpec, num_groups: usize) -> u64 {
    stats::stage3_samples_needed(query.epsilon, num_groups, query.k, query.delta)
}
