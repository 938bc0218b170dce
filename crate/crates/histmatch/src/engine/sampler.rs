//! Block-level sampling: sequential scans, bitmap-driven block selection
//! with lookahead marking, tuple accounting, and exhaustion tracking.
//!
//! A block is consumed at most once for the whole run. When a block is read,
//! every in-universe candidate absorbs its rows, so each candidate's sample
//! is exactly its tuples inside the consumed block set; with a pre-shuffled
//! dataset that is a uniform without-replacement sample no matter how blocks
//! are chosen, as long as choices only depend on data already seen.

use crate::engine::{mark_lookahead, Mark, SamplingPolicy};
use crate::storage::{BitmapIndex, Bitset, Dataset};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct IoCounters {
    pub rows_scanned: u64,
    pub tuples_attributed: u64,
    pub blocks_read: u64,
    pub blocks_skipped: u64,
}

/// Round-partial counts handed from the sampler to the statistics side at
/// the end of each I/O phase.
#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    /// (candidate, fresh sample count, fresh per-group counts); only
    /// candidates touched this phase appear.
    pub partials: Vec<(u32, u64, Vec<u64>)>,
    pub exhausted: Vec<bool>,
    /// Cumulative counters since the start of the run.
    pub counters: IoCounters,
}

pub(crate) struct IoState<'a> {
    zcol: &'a [u32],
    xcol: &'a [u32],
    bitmaps: &'a BitmapIndex,
    rows_per_block: usize,
    row_count: usize,
    n_blocks: usize,
    lookahead: usize,
    policy: SamplingPolicy,

    consumed: Bitset,
    consumed_blocks: usize,
    cursor: usize,

    universe: Vec<bool>,
    budgets: Vec<u64>,
    partial_n: Vec<u64>,
    partial_counts: Vec<Vec<u64>>,
    exhausted: Vec<bool>,
    unconsumed_blocks: Vec<u32>,
    last_seen_block: Vec<u32>,
    active_remaining: usize,

    counters: IoCounters,
}

const NO_BLOCK: u32 = u32::MAX;

struct MarkedBatch {
    start: usize,
    marks: Vec<Mark>,
}

impl<'a> IoState<'a> {
    pub fn new(
        dataset: &'a Dataset,
        bitmaps: &'a BitmapIndex,
        z_idx: usize,
        x_idx: usize,
        num_groups: usize,
        policy: SamplingPolicy,
        lookahead: usize,
        start_block: usize,
        universe: Vec<bool>,
    ) -> Self {
        let num_cands = universe.len();
        let n_blocks = dataset.block_count();
        let unconsumed_blocks: Vec<u32> =
            (0..num_cands).map(|c| bitmaps.bitmap(c as u32).count_ones() as u32).collect();
        // A candidate with no blocks at all has nothing left to consume.
        let exhausted: Vec<bool> = unconsumed_blocks.iter().map(|&u| u == 0).collect();
        Self {
            zcol: dataset.column_at(z_idx),
            xcol: dataset.column_at(x_idx),
            bitmaps,
            rows_per_block: dataset.rows_per_block(),
            row_count: dataset.row_count(),
            n_blocks,
            lookahead: lookahead.max(1),
            policy,
            consumed: Bitset::new(n_blocks),
            consumed_blocks: 0,
            cursor: start_block % n_blocks,
            universe,
            budgets: vec![0; num_cands],
            partial_n: vec![0; num_cands],
            partial_counts: vec![vec![0; num_groups]; num_cands],
            exhausted,
            unconsumed_blocks,
            last_seen_block: vec![NO_BLOCK; num_cands],
            active_remaining: 0,
            counters: IoCounters::default(),
        }
    }

    #[inline]
    fn is_active(&self, c: usize) -> bool {
        self.universe[c] && !self.exhausted[c] && self.partial_n[c] < self.budgets[c]
    }

    fn recount_active(&mut self) {
        self.active_remaining = (0..self.universe.len()).filter(|&c| self.is_active(c)).count();
    }

    fn process_block(&mut self, block: usize) {
        debug_assert!(!self.consumed.get(block));
        self.consumed.set(block);
        self.consumed_blocks += 1;
        self.counters.blocks_read += 1;
        let start = block * self.rows_per_block;
        let end = (start + self.rows_per_block).min(self.row_count);
        self.counters.rows_scanned += (end - start) as u64;
        for row in start..end {
            let z = self.zcol[row] as usize;
            if !self.universe[z] {
                continue;
            }
            let was_active = self.is_active(z);
            if self.last_seen_block[z] != block as u32 {
                self.last_seen_block[z] = block as u32;
                self.unconsumed_blocks[z] -= 1;
                if self.unconsumed_blocks[z] == 0 {
                    self.exhausted[z] = true;
                }
            }
            self.partial_n[z] += 1;
            self.partial_counts[z][self.xcol[row] as usize] += 1;
            self.counters.tuples_attributed += 1;
            if was_active && !self.is_active(z) {
                self.active_remaining -= 1;
            }
        }
    }

    fn next_unconsumed_sequential(&mut self) -> usize {
        debug_assert!(self.consumed_blocks < self.n_blocks);
        loop {
            let b = self.cursor;
            self.cursor = (self.cursor + 1) % self.n_blocks;
            if !self.consumed.get(b) {
                return b;
            }
        }
    }

    /// Sequential scan consuming whole blocks until at least `m_target` rows
    /// have been scanned (or the dataset is fully consumed). Returns the
    /// number of rows actually scanned by this phase.
    pub fn run_stage1(&mut self, m_target: u64) -> u64 {
        let before = self.counters.rows_scanned;
        while self.counters.rows_scanned - before < m_target
            && self.consumed_blocks < self.n_blocks
        {
            let b = self.next_unconsumed_sequential();
            self.process_block(b);
        }
        self.counters.rows_scanned - before
    }

    pub fn set_budgets(&mut self, budgets: Vec<u64>) {
        debug_assert_eq!(budgets.len(), self.budgets.len());
        self.budgets = budgets;
        self.recount_active();
    }

    pub fn apply_prune(&mut self, pruned: &[u32]) {
        for &c in pruned {
            self.universe[c as usize] = false;
        }
    }

    pub fn restrict_universe(&mut self, keep: &[u32]) {
        for u in self.universe.iter_mut() {
            *u = false;
        }
        for &c in keep {
            self.universe[c as usize] = true;
        }
    }

    /// Samples until every in-universe, non-exhausted candidate meets its
    /// budget, using the configured block selection policy.
    pub fn run_budgeted(&mut self) {
        match self.policy {
            SamplingPolicy::SequentialScan => {
                while self.active_remaining > 0 {
                    let b = self.next_unconsumed_sequential();
                    self.process_block(b);
                }
            }
            SamplingPolicy::AnyActiveSync => self.run_any_active(1, false),
            SamplingPolicy::AnyActiveLookahead => self.run_any_active(self.lookahead, true),
        }
    }

    /// Block selection restricted to blocks holding tuples of some active
    /// candidate. In pipelined mode the next batch is marked before the
    /// previous batch is consumed, so marks lag the counts by one batch; in
    /// synchronous mode every batch is marked fresh.
    fn run_any_active(&mut self, batch_len: usize, pipelined: bool) {
        if self.active_remaining == 0 {
            return;
        }
        let mut pending = self.mark_next_batch(batch_len);
        loop {
            let next = if pipelined { Some(self.mark_next_batch(batch_len)) } else { None };
            if self.consume_marked(&pending) {
                return; // budgets met mid-batch; cursor rewound past last visit
            }
            if self.active_remaining == 0 {
                // Met exactly at a batch boundary; rewind before any
                // marked-but-unvisited blocks.
                self.cursor = (pending.start + pending.marks.len()) % self.n_blocks;
                return;
            }
            pending = match next {
                Some(batch) => batch,
                None => self.mark_next_batch(batch_len),
            };
        }
    }

    fn mark_next_batch(&mut self, batch_len: usize) -> MarkedBatch {
        let start = self.cursor;
        let len = batch_len.min(self.n_blocks - start).max(1);
        let active: Vec<u32> = (0..self.universe.len())
            .filter(|&c| self.is_active(c))
            .map(|c| c as u32)
            .collect();
        let marks = mark_lookahead(self.bitmaps, &active, start, len).marks;
        self.cursor = (start + len) % self.n_blocks;
        MarkedBatch { start, marks }
    }

    /// Returns true when all budgets were met partway through the batch.
    fn consume_marked(&mut self, batch: &MarkedBatch) -> bool {
        for (i, mark) in batch.marks.iter().enumerate() {
            let pos = batch.start + i;
            if self.consumed.get(pos) {
                continue;
            }
            match mark {
                Mark::Read => {
                    self.process_block(pos);
                    if self.active_remaining == 0 {
                        self.cursor = (pos + 1) % self.n_blocks;
                        return true;
                    }
                }
                Mark::Skip => self.counters.blocks_skipped += 1,
            }
        }
        false
    }

    /// Drains the round partials and reports exhaustion and I/O counters.
    pub fn snapshot(&mut self) -> Snapshot {
        let mut partials = Vec::new();
        for c in 0..self.partial_n.len() {
            if self.partial_n[c] > 0 {
                let len = self.partial_counts[c].len();
                let counts = std::mem::replace(&mut self.partial_counts[c], vec![0; len]);
                partials.push((c as u32, self.partial_n[c], counts));
                self.partial_n[c] = 0;
            }
        }
        Snapshot { partials, exhausted: self.exhausted.clone(), counters: self.counters }
    }
}
