//! Normalized l1 distance, top-k selection, and split-point computation.
//!
//! Distances are always taken between normalized histograms, so comparing a
//! candidate against a target is insensitive to absolute counts. The distance
//! coincides with twice the total variation distance and lies in [0, 2].

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::types::{Distribution, HistogramCounts};

/// Normalizes raw counts into a distribution.
pub fn normalize(counts: &HistogramCounts) -> Result<Distribution> {
    if counts.total() == 0 {
        return Err(Error::ZeroTotal);
    }
    let total = counts.total() as f64;
    Distribution::new(counts.counts().iter().map(|c| *c as f64 / total).collect())
}

/// Normalized l1 distance between two raw count vectors.
pub fn l1_distance(a: &HistogramCounts, b: &HistogramCounts) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.total() == 0 || b.total() == 0 {
        return Err(Error::ZeroTotal);
    }
    Ok(l1_counts_vs_counts(a.counts(), a.total(), b.counts(), b.total()))
}

/// Distance between raw counts and an already-normalized reference.
/// The counts total must be positive.
pub fn l1_counts_vs_probs(counts: &[u64], total: u64, probs: &[f64]) -> f64 {
    debug_assert_eq!(counts.len(), probs.len());
    debug_assert!(total > 0);
    let inv = 1.0 / total as f64;
    counts
        .iter()
        .zip(probs)
        .map(|(c, p)| (*c as f64 * inv - p).abs())
        .sum()
}

fn l1_counts_vs_counts(a: &[u64], ta: u64, b: &[u64], tb: u64) -> f64 {
    let ia = 1.0 / ta as f64;
    let ib = 1.0 / tb as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 * ia - *y as f64 * ib).abs())
        .sum()
}

/// l1 distance between two distributions.
pub fn l1_probs(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Selects the `min(k, |taus|)` candidate ids with smallest distance.
///
/// Ties break toward the smaller candidate id; the result is sorted by
/// (distance, id), so the output is independent of map iteration order.
pub fn top_k_select(taus: &BTreeMap<u32, f64>, k: usize) -> Vec<u32> {
    let mut entries: Vec<(u32, f64)> = taus.iter().map(|(id, t)| (*id, *t)).collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    entries.truncate(k.min(entries.len()));
    entries.into_iter().map(|(id, _)| id).collect()
}

/// Midpoint between the furthest matching candidate and the closest
/// non-matching active candidate.
pub fn split_point(
    taus: &BTreeMap<u32, f64>,
    matching: &BTreeSet<u32>,
    active: &BTreeSet<u32>,
) -> Result<f64> {
    let max_matching = matching
        .iter()
        .filter_map(|id| taus.get(id))
        .fold(f64::NEG_INFINITY, |acc, t| acc.max(*t));
    let min_complement = active
        .iter()
        .filter(|id| !matching.contains(id))
        .filter_map(|id| taus.get(id))
        .fold(f64::INFINITY, |acc, t| acc.min(*t));
    if !min_complement.is_finite() || !max_matching.is_finite() {
        return Err(Error::EmptyComplement);
    }
    Ok(split_point_values(max_matching, min_complement))
}

/// The split point given the two boundary distances directly.
pub fn split_point_values(max_matching_tau: f64, min_complement_tau: f64) -> f64 {
    0.5 * (max_matching_tau + min_complement_tau)
}
