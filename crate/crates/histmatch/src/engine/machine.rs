//! The staged identification state machine, generic over how I/O phases are
//! executed (inline, or on a dedicated sampling worker).
//!
//! Per identification round: fold the previous round's partials, fix the
//! hypotheses (matching set, split point, per-candidate budgets), run one
//! I/O phase, then test the fresh partials against the hypotheses. The
//! per-round error budget starts at delta/3 and halves every round, so the
//! whole stage spends at most delta/3.

use std::collections::BTreeMap;
use std::sync::mpsc;

use crate::distance::{l1_counts_vs_probs, split_point_values, top_k_select};
use crate::engine::sampler::{IoCounters, IoState, Snapshot};
use crate::error::Result;
use crate::stats;
use crate::types::QuerySpec;

pub(crate) trait IoDriver {
    fn run_stage1(&mut self, m_target: u64) -> Snapshot;
    fn apply_prune(&mut self, pruned: Vec<u32>);
    fn restrict_universe(&mut self, keep: Vec<u32>);
    fn run_budgeted(&mut self, budgets: Vec<u64>) -> Snapshot;
    fn finish(&mut self);
}

/// Executes every I/O phase inline; bit-reproducible for a fixed seed.
pub(crate) struct SingleContext<'a> {
    io: IoState<'a>,
}

impl<'a> SingleContext<'a> {
    pub fn new(io: IoState<'a>) -> Self {
        Self { io }
    }
}

impl IoDriver for SingleContext<'_> {
    fn run_stage1(&mut self, m_target: u64) -> Snapshot {
        self.io.run_stage1(m_target);
        self.io.snapshot()
    }

    fn apply_prune(&mut self, pruned: Vec<u32>) {
        self.io.apply_prune(&pruned);
    }

    fn restrict_universe(&mut self, keep: Vec<u32>) {
        self.io.restrict_universe(&keep);
    }

    fn run_budgeted(&mut self, budgets: Vec<u64>) -> Snapshot {
        self.io.set_budgets(budgets);
        self.io.run_budgeted();
        self.io.snapshot()
    }

    fn finish(&mut self) {}
}

pub(crate) enum Directive {
    Stage1(u64),
    Prune(Vec<u32>),
    Restrict(Vec<u32>),
    Budgets(Vec<u64>),
    Finish,
}

/// Statistics-side handle to a sampling worker running on its own thread.
/// Directives flow one way, drained round partials flow back; the worker
/// never waits on test results while it still has budgets to satisfy.
pub(crate) struct TwoWorker {
    pub tx: mpsc::Sender<Directive>,
    pub rx: mpsc::Receiver<Snapshot>,
}

impl IoDriver for TwoWorker {
    fn run_stage1(&mut self, m_target: u64) -> Snapshot {
        self.tx.send(Directive::Stage1(m_target)).expect("sampling worker alive");
        self.rx.recv().expect("sampling worker alive")
    }

    fn apply_prune(&mut self, pruned: Vec<u32>) {
        self.tx.send(Directive::Prune(pruned)).expect("sampling worker alive");
    }

    fn restrict_universe(&mut self, keep: Vec<u32>) {
        self.tx.send(Directive::Restrict(keep)).expect("sampling worker alive");
    }

    fn run_budgeted(&mut self, budgets: Vec<u64>) -> Snapshot {
        self.tx.send(Directive::Budgets(budgets)).expect("sampling worker alive");
        self.rx.recv().expect("sampling worker alive")
    }

    fn finish(&mut self) {
        let _ = self.tx.send(Directive::Finish);
    }
}

/// Body of the sampling worker thread: marks and consumes blocks per the
/// posted budgets, then hands a consistent snapshot of the round partials
/// back once all budgets are met.
pub(crate) fn io_worker_loop(
    mut io: IoState,
    rx: mpsc::Receiver<Directive>,
    tx: mpsc::Sender<Snapshot>,
) {
    while let Ok(directive) = rx.recv() {
        match directive {
            Directive::Stage1(m) => {
                io.run_stage1(m);
                if tx.send(io.snapshot()).is_err() {
                    break;
                }
            }
            Directive::Prune(pruned) => io.apply_prune(&pruned),
            Directive::Restrict(keep) => io.restrict_universe(&keep),
            Directive::Budgets(budgets) => {
                io.set_budgets(budgets);
                io.run_budgeted();
                if tx.send(io.snapshot()).is_err() {
                    break;
                }
            }
            Directive::Finish => break,
        }
    }
}

pub(crate) struct MachineParams<'a> {
    pub query: &'a QuerySpec,
    pub target: &'a [f64],
    pub num_groups: usize,
    pub num_cands: usize,
    pub n_rows: u64,
    pub m_target: u64,
    /// Candidate excluded from competition (a named target, when the query
    /// asks to keep it out of its own results).
    pub excluded: Option<u32>,
}

pub(crate) struct MachineOutput {
    /// Matched candidate ids (ordering finalized by the caller).
    pub matched: Vec<u32>,
    pub accum_n: Vec<u64>,
    pub accum_counts: Vec<Vec<u64>>,
    pub taus: Vec<f64>,
    pub exhausted: Vec<bool>,
    pub pruned: Vec<bool>,
    pub rounds: u64,
    pub missing_tau_flags: u64,
    pub counters: IoCounters,
    pub exact: bool,
}

struct Accum {
    n: Vec<u64>,
    counts: Vec<Vec<u64>>,
}

impl Accum {
    fn fold(&mut self, snap: &Snapshot) {
        for (c, n, counts) in &snap.partials {
            let c = *c as usize;
            self.n[c] += n;
            for (a, b) in self.counts[c].iter_mut().zip(counts) {
                *a += *b;
            }
        }
    }

    /// Distance of the accumulated estimate, +inf before any samples.
    fn tau(&self, c: usize, target: &[f64]) -> f64 {
        if self.n[c] == 0 {
            f64::INFINITY
        } else {
            l1_counts_vs_probs(&self.counts[c], self.n[c], target)
        }
    }

    /// Distance with a round partial folded in on the fly (used for
    /// candidates that exhausted mid-round: accumulated plus fresh counts
    /// together are their exact histogram).
    fn tau_with_partial(&self, c: usize, partial: Option<&(u64, Vec<u64>)>, target: &[f64]) -> f64 {
        match partial {
            None => self.tau(c, target),
            Some((pn, pcounts)) => {
                let total = self.n[c] + pn;
                debug_assert!(total > 0);
                let inv = 1.0 / total as f64;
                self.counts[c]
                    .iter()
                    .zip(pcounts)
                    .zip(target)
                    .map(|((a, b), q)| ((a + b) as f64 * inv - q).abs())
                    .sum()
            }
        }
    }
}

/// The underrepresentation screen: hypergeometric lower-tail P-values fed
/// into a Holm-Bonferroni procedure at level delta/3.
pub(crate) fn stage1_test(
    n_rows: u64,
    sigma: f64,
    delta: f64,
    candidate_ids: &[u32],
    n_obs: &[u64],
    m_actual: u64,
) -> (BTreeMap<u32, f64>, Vec<u32>) {
    let pvals = stats::underrepresentation_pvalues(n_rows, sigma, m_actual, n_obs);
    let pv_map: BTreeMap<u32, f64> =
        candidate_ids.iter().copied().zip(pvals.iter().copied()).collect();
    let rejected = stats::holm_bonferroni(&pv_map, delta / 3.0);
    (pv_map, rejected.into_iter().collect())
}

pub(crate) fn run_machine<D: IoDriver>(driver: &mut D, p: &MachineParams) -> Result<MachineOutput> {
    let nc = p.num_cands;
    let g = p.num_groups;
    let k = p.query.k;
    let epsilon = p.query.epsilon;
    let half = epsilon / 2.0;

    let mut accum = Accum { n: vec![0; nc], counts: vec![vec![0; g]; nc] };
    let mut pruned = vec![false; nc];
    let eligible: Vec<bool> = (0..nc as u32).map(|c| p.excluded != Some(c)).collect();

    // Stage 1: prune rare candidates.
    let snap = driver.run_stage1(p.m_target);
    let m_actual = snap.counters.rows_scanned;
    let mut exhausted = snap.exhausted.clone();
    let mut counters = snap.counters;
    accum.fold(&snap);

    let tested: Vec<u32> =
        (0..nc as u32).filter(|&c| eligible[c as usize]).collect();
    let obs: Vec<u64> = tested.iter().map(|&c| accum.n[c as usize]).collect();
    let (_stage1_pvalues, rejected) =
        stage1_test(p.n_rows, p.query.sigma, p.query.delta, &tested, &obs, m_actual);
    for &c in &rejected {
        pruned[c as usize] = true;
    }
    driver.apply_prune(rejected);

    // A candidate that is exhausted with zero samples has no tuples at all;
    // its distance is undefined, so it never competes.
    let a_ids: Vec<usize> = (0..nc)
        .filter(|&c| eligible[c] && !pruned[c] && !(exhausted[c] && accum.n[c] == 0))
        .collect();
    if a_ids.is_empty() {
        driver.finish();
        return Ok(MachineOutput {
            matched: Vec::new(),
            accum_n: accum.n,
            accum_counts: accum.counts,
            taus: vec![f64::INFINITY; nc],
            exhausted,
            pruned,
            rounds: 0,
            missing_tau_flags: 0,
            counters,
            exact: false,
        });
    }

    // Stage 2: identify the top-k among the survivors.
    let mut rounds = 0u64;
    let mut missing_tau_flags = 0u64;
    let mut pending: Option<Snapshot> = None;
    let mut taus = vec![f64::INFINITY; nc];
    let mut exact = false;

    let matched: Vec<u32> = if a_ids.len() <= k {
        // Nothing to separate: every survivor is output.
        a_ids.iter().map(|&c| c as u32).collect()
    } else {
        let mut delta_upper = p.query.delta / 3.0;
        loop {
            rounds += 1;
            delta_upper *= 0.5;
            if let Some(snap) = pending.take() {
                accum.fold(&snap);
            }
            for &c in &a_ids {
                taus[c] = accum.tau(c, p.target);
            }

            if a_ids.iter().all(|&c| exhausted[c]) {
                // Whole surviving set consumed: distances are exact and the
                // selection is final.
                let tau_map: BTreeMap<u32, f64> =
                    a_ids.iter().map(|&c| (c as u32, taus[c])).collect();
                exact = true;
                break top_k_select(&tau_map, k);
            }

            let finite: BTreeMap<u32, f64> = a_ids
                .iter()
                .filter(|&&c| taus[c].is_finite())
                .map(|&c| (c as u32, taus[c]))
                .collect();
            let m_set = top_k_select(&finite, k);
            let in_matching: Vec<bool> = {
                let mut v = vec![false; nc];
                for &c in &m_set {
                    v[c as usize] = true;
                }
                v
            };
            let max_matching =
                m_set.iter().map(|&c| taus[c as usize]).fold(f64::NEG_INFINITY, f64::max);
            let min_complement = a_ids
                .iter()
                .filter(|&&c| !in_matching[c] && taus[c].is_finite())
                .map(|&c| taus[c])
                .fold(f64::INFINITY, f64::min);

            let bootstrap = m_set.is_empty() || !min_complement.is_finite();
            let mut budgets = vec![0u64; nc];
            let split = if bootstrap {
                // Not enough information to pose hypotheses yet; force one
                // sample from every unexplored candidate and retry.
                for &c in &a_ids {
                    if accum.n[c] == 0 && !exhausted[c] {
                        budgets[c] = 1;
                    }
                }
                f64::NAN
            } else {
                let s = split_point_values(max_matching, min_complement);
                for &c in &a_ids {
                    if exhausted[c] {
                        continue;
                    }
                    let slack = if in_matching[c] {
                        s + half - taus[c]
                    } else if taus[c].is_finite() {
                        taus[c] - (s - half)
                    } else {
                        f64::INFINITY
                    };
                    budgets[c] = stats::samples_needed(slack, g, delta_upper)
                        .expect("round slack is at least epsilon/2");
                }
                s
            };

            let snap = driver.run_budgeted(budgets);
            exhausted = snap.exhausted.clone();

            if bootstrap {
                pending = Some(snap);
                continue;
            }

            let partials: BTreeMap<u32, (u64, Vec<u64>)> = snap
                .partials
                .iter()
                .map(|(c, n, counts)| (*c, (*n, counts.clone())))
                .collect();
            let round_cands: Vec<stats::RoundCandidate> = a_ids
                .iter()
                .map(|&c| {
                    let partial = partials.get(&(c as u32));
                    if exhausted[c] {
                        stats::RoundCandidate {
                            candidate_id: c as u32,
                            in_matching: in_matching[c],
                            tau_round: Some(accum.tau_with_partial(c, partial, p.target)),
                            n_round: partial.map(|(n, _)| *n).unwrap_or(0),
                            exhausted: true,
                        }
                    } else {
                        let (n_round, tau_round) = match partial {
                            Some((n, counts)) => {
                                (*n, Some(l1_counts_vs_probs(counts, *n, p.target)))
                            }
                            None => (0, None),
                        };
                        stats::RoundCandidate {
                            candidate_id: c as u32,
                            in_matching: in_matching[c],
                            tau_round,
                            n_round,
                            exhausted: false,
                        }
                    }
                })
                .collect();
            let tested = stats::round_pvalues(&stats::RoundTestInput {
                split,
                epsilon,
                num_groups: g,
                candidates: &round_cands,
            });
            missing_tau_flags += tested.missing_tau.len() as u64;
            let pvals: Vec<f64> = tested.pvalues.values().copied().collect();
            pending = Some(snap);
            if stats::simultaneous_reject(&pvals, delta_upper) {
                break m_set;
            }
        }
    };

    if let Some(snap) = pending.take() {
        accum.fold(&snap);
    }

    // Stage 3: top up the matched candidates until their histograms are
    // reliable at the query tolerance.
    let threshold = stats::stage3_samples_needed(epsilon, g, k, p.query.delta);
    driver.restrict_universe(matched.clone());
    let mut budgets = vec![0u64; nc];
    for &c in &matched {
        if !exhausted[c as usize] {
            budgets[c as usize] = threshold.saturating_sub(accum.n[c as usize]);
        }
    }
    let snap = driver.run_budgeted(budgets);
    exhausted = snap.exhausted.clone();
    counters = snap.counters;
    accum.fold(&snap);
    for &c in &matched {
        taus[c as usize] = accum.tau(c as usize, p.target);
    }
    if !exact {
        exact = a_ids.iter().all(|&c| exhausted[c]);
    }
    driver.finish();

    Ok(MachineOutput {
        matched,
        accum_n: accum.n,
        accum_counts: accum.counts,
        taus,
        exhausted,
        pruned,
        rounds,
        missing_tau_flags,
        counters,
        exact,
    })
}
