//! Statistical bounds and tests backing the sampling engine.
//!
//! Everything here is pure and reentrant. P-value computations run in
//! log-space so they stay finite for group counts up to 1e4 and sample
//! counts up to 1e9.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::LN_2;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// l1 deviation bound: with probability > 1 - `delta_i`, an empirical
/// distribution built from `n` samples over `num_groups` groups lies within
/// this distance of the truth.
pub fn deviation_epsilon(n: u64, num_groups: usize, delta_i: f64) -> Result<f64> {
    if !(delta_i > 0.0 && delta_i <= 1.0) {
        return Err(Error::InvalidProbability(delta_i));
    }
    debug_assert!(n >= 1);
    Ok((2.0 / n as f64 * (num_groups as f64 * LN_2 + (1.0 / delta_i).ln())).sqrt())
}

/// Inverts the deviation bound into a P-value: the probability that an
/// empirical distribution from `n` samples deviates from the truth by more
/// than `eps` is at most `2^num_groups * exp(-eps^2 * n / 2)`.
///
/// `eps <= 0` carries no evidence (returns 1); `eps = +inf` marks a null
/// hypothesis that cannot hold (returns 0).
pub fn deviation_pvalue(n: u64, num_groups: usize, eps: f64) -> f64 {
    if eps == f64::INFINITY {
        return 0.0;
    }
    if eps <= 0.0 || eps.is_nan() {
        return 1.0;
    }
    let ln_p = num_groups as f64 * LN_2 - eps * eps * n as f64 / 2.0;
    if ln_p >= 0.0 {
        1.0
    } else {
        ln_p.exp()
    }
}

fn ceil_to_u64_at_least_one(value: f64) -> u64 {
    if !value.is_finite() {
        if value == f64::INFINITY {
            return u64::MAX;
        }
        return 1;
    }
    if value >= u64::MAX as f64 {
        return u64::MAX;
    }
    (value.ceil() as u64).max(1)
}

/// Samples needed for the deviation P-value at slack `eps_prime` to drop to
/// `delta_upper`. Inverse of [`deviation_pvalue`]; clamped to at least 1.
pub fn samples_needed(eps_prime: f64, num_groups: usize, delta_upper: f64) -> Result<u64> {
    if !(eps_prime > 0.0) {
        return Err(Error::NonPositiveEpsilon(eps_prime));
    }
    if !(delta_upper > 0.0 && delta_upper < 1.0) {
        return Err(Error::InvalidProbability(delta_upper));
    }
    let need = 2.0 * (num_groups as f64 * LN_2 - delta_upper.ln()) / (eps_prime * eps_prime);
    Ok(ceil_to_u64_at_least_one(need))
}

/// Per-candidate sample floor for the reconstruction stage: enough samples
/// that each of the k output histograms misses its truth by more than
/// `epsilon` with probability at most `delta / (3k)`.
pub fn stage3_samples_needed(epsilon: f64, num_groups: usize, k: usize, delta: f64) -> u64 {
    debug_assert!(epsilon > 0.0);
    let need =
        2.0 / (epsilon * epsilon) * (num_groups as f64 * LN_2 + (3.0 * k as f64 / delta).ln());
    ceil_to_u64_at_least_one(need)
}

/// Log of the hypergeometric pmf: drawing `j` successes in `m` draws without
/// replacement from a population of `n_pop` containing `k_succ` successes.
pub fn hypergeom_log_pmf(n_pop: u64, k_succ: u64, m_draws: u64, j: u64) -> Result<f64> {
    if k_succ > n_pop || m_draws > n_pop {
        return Err(Error::OutOfSupport { observed: j, lo: 0, hi: 0 });
    }
    let lo = m_draws.saturating_sub(n_pop - k_succ);
    let hi = m_draws.min(k_succ);
    if j < lo || j > hi {
        return Err(Error::OutOfSupport { observed: j, lo, hi });
    }
    Ok(ln_choose(k_succ, j) + ln_choose(n_pop - k_succ, m_draws - j) - ln_choose(n_pop, m_draws))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Ceiling of `sigma * n` with a snap for selectivities that are exact in
/// decimal but not in binary (e.g. 0.01 * 1e6).
fn ceil_sigma_population(n_pop: u64, sigma: f64) -> u64 {
    let x = sigma * n_pop as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
    k as u64
}

/// Lower-tail hypergeometric CDF used as the P-value of the
/// underrepresentation test: how surprising it is to observe `n_obs` or fewer
/// tuples for a candidate in `m` uniform draws, under the null hypothesis
/// that the candidate covers at least a `sigma` fraction of the population.
pub fn underrepresentation_pvalue(n_pop: u64, sigma: f64, m_draws: u64, n_obs: u64) -> f64 {
    debug_assert!(m_draws <= n_pop);
    underrepresentation_pvalues(n_pop, sigma, m_draws, &[n_obs])[0]
}

/// Batch form of [`underrepresentation_pvalue`]: one shared sweep of the
/// hypergeometric tail serves every requested observation count, so a whole
/// candidate set costs one pass over the largest tail. Results are aligned
/// with the input order.
pub fn underrepresentation_pvalues(
    n_pop: u64,
    sigma: f64,
    m_draws: u64,
    n_obs: &[u64],
) -> Vec<f64> {
    let mut out = vec![1.0; n_obs.len()];
    let k_succ = ceil_sigma_population(n_pop, sigma);
    if k_succ == 0 || n_obs.is_empty() {
        return out;
    }
    let m_draws = m_draws.min(n_pop);
    let lo = m_draws.saturating_sub(n_pop - k_succ);
    let hi = m_draws.min(k_succ);

    // Candidates sorted by observation count share the running tail sum.
    let mut order: Vec<usize> = (0..n_obs.len()).collect();
    order.sort_by_key(|&i| n_obs[i]);

    let mut log_pmf = hypergeom_log_pmf(n_pop, k_succ, m_draws, lo).expect("lo is in support");
    let mut log_cdf = log_pmf;
    let mut j = lo;
    for idx in order {
        let target = n_obs[idx];
        if target < lo {
            // Impossible under the null: even the forced minimum exceeds it.
            out[idx] = 0.0;
            continue;
        }
        if target >= hi {
            out[idx] = 1.0;
            continue;
        }
        while j < target {
            // pmf(j+1) = pmf(j) * (K-j)(m-j) / ((j+1)(N-K-m+j+1)); the
            // denominator term stays positive for j >= lo, but must be
            // evaluated in an order that cannot underflow.
            let num = (k_succ - j) as f64 * (m_draws - j) as f64;
            let den = (j + 1) as f64 * (n_pop - k_succ + j + 1 - m_draws) as f64;
            log_pmf += num.ln() - den.ln();
            log_cdf = log_add_exp(log_cdf, log_pmf);
            j += 1;
        }
        out[idx] = log_cdf.exp().clamp(0.0, 1.0);
    }
    out
}

/// Holm-Bonferroni step-down procedure at family-wise level `level`.
///
/// P-values are sorted ascending (ties by candidate id); the minimal index j
/// with p_(j) > level / (n - j + 1) stops rejection, and every hypothesis
/// before it is rejected. Returns the rejected candidate ids.
pub fn holm_bonferroni(pvalues: &BTreeMap<u32, f64>, level: f64) -> BTreeSet<u32> {
    let mut sorted: Vec<(u32, f64)> = pvalues.iter().map(|(id, p)| (*id, *p)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = sorted.len();
    let mut rejected = BTreeSet::new();
    for (rank, (id, p)) in sorted.into_iter().enumerate() {
        let threshold = level / (n - rank) as f64;
        if p > threshold {
            break;
        }
        rejected.insert(id);
    }
    rejected
}

/// All-or-nothing simultaneous rejection: every null is rejected iff every
/// P-value is at most `delta_upper`. An empty family rejects vacuously.
pub fn simultaneous_reject(pvalues: &[f64], delta_upper: f64) -> bool {
    pvalues.iter().all(|p| *p <= delta_upper)
}

/// Per-candidate inputs for one identification round's hypothesis tests.
#[derive(Debug, Clone)]
pub struct RoundCandidate {
    pub candidate_id: u32,
    /// Whether the candidate currently sits in the matching set.
    pub in_matching: bool,
    /// Distance estimate from this round's fresh samples; for an exhausted
    /// candidate, its exact distance.
    pub tau_round: Option<f64>,
    /// Fresh samples taken this round.
    pub n_round: u64,
    pub exhausted: bool,
}

/// Inputs shared by all candidates in one round.
#[derive(Debug, Clone)]
pub struct RoundTestInput<'a> {
    /// Split point separating matching from non-matching distances.
    pub split: f64,
    /// Query-level tolerance.
    pub epsilon: f64,
    pub num_groups: usize,
    pub candidates: &'a [RoundCandidate],
}

/// Output of [`round_pvalues`].
#[derive(Debug, Clone)]
pub struct RoundPvalues {
    pub pvalues: BTreeMap<u32, f64>,
    /// Non-exhausted candidates that had no fresh samples (P-value 1 by
    /// convention; flagged, not fatal).
    pub missing_tau: Vec<u32>,
}

/// Computes the per-candidate P-values for one round.
///
/// Matching candidates test the null "true distance >= split + eps/2" with
/// slack `split + eps/2 - tau_round`; non-matching candidates test
/// "true distance <= split - eps/2" with slack `tau_round - (split - eps/2)`,
/// or infinite slack when `split - eps/2 < 0` (distances cannot be negative,
/// so the null is impossible). Exhausted candidates are decided with
/// certainty against their exact distance.
pub fn round_pvalues(input: &RoundTestInput) -> RoundPvalues {
    let s = input.split;
    let half = input.epsilon / 2.0;
    let mut pvalues = BTreeMap::new();
    let mut missing_tau = Vec::new();
    for cand in input.candidates {
        let p = if cand.exhausted {
            let tau = cand.tau_round.expect("exhausted candidate has an exact distance");
            let null_holds = if cand.in_matching { tau >= s + half } else { tau <= s - half };
            if null_holds {
                1.0
            } else {
                0.0
            }
        } else if cand.n_round == 0 || cand.tau_round.is_none() {
            missing_tau.push(cand.candidate_id);
            1.0
        } else {
            let tau = cand.tau_round.unwrap();
            let slack = if cand.in_matching {
                s + half - tau
            } else if s - half >= 0.0 {
                tau - (s - half)
            } else {
                f64::INFINITY
            };
            deviation_pvalue(cand.n_round, input.num_groups, slack)
        };
        pvalues.insert(cand.candidate_id, p);
    }
    RoundPvalues { pvalues, missing_tau }
}

/// Exact binomial upper-tail probability P(X >= observed) for X ~ Bin(n, p).
/// Used to check that observed guarantee-violation rates are consistent with
/// a target rate.
pub fn binomial_tail_ge(n: u64, p: f64, observed: u64) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    if observed > n {
        return 0.0;
    }
    let lp = p.ln();
    let lq = (1.0 - p).ln();
    let mut acc = f64::NEG_INFINITY;
    for i in observed..=n {
        let term = ln_choose(n, i) + i as f64 * lp + (n - i) as f64 * lq;
        acc = log_add_exp(acc, term);
    }
    acc.exp().clamp(0.0, 1.0)
}
