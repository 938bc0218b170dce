//! Columnar, dictionary-encoded, block-partitioned storage.
//!
//! A dataset holds one dense u32 code column per attribute, all row-aligned,
//! plus a bidirectional dictionary per attribute. Rows are grouped into
//! fixed-size blocks; a random permutation applied at ingestion makes any
//! content-independent block order a uniform without-replacement sample.

mod bitmap;
mod bitset;
mod ingest;
mod persist;

use std::collections::{BTreeMap, HashMap};

pub use bitmap::{build_bitmap_index, BitmapIndex};
pub use bitset::Bitset;
pub use ingest::{ingest_csv, BinSpec, IngestOptions};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::types::HistogramCounts;

pub const DEFAULT_ROWS_PER_BLOCK: usize = 256;

/// Bidirectional map between raw attribute strings and dense u32 codes,
/// assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionary {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn encode(&mut self, value: &str) -> u32 {
        if let Some(code) = self.index.get(value) {
            return *code;
        }
        let code = self.values.len() as u32;
        self.values.push(value.to_string());
        self.index.insert(value.to_string(), code);
        code
    }

    pub fn code_of(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn decode(&self, code: u32) -> &str {
        &self.values[code as usize]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub(crate) fn from_values(values: Vec<String>) -> Self {
        let index =
            values.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect();
        Self { values, index }
    }
}

/// Immutable columnar table, shuffled once at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<String>,
    dictionaries: Vec<Dictionary>,
    columns: Vec<Vec<u32>>,
    row_count: usize,
    rows_per_block: usize,
    shuffle_seed: u64,
}

impl Dataset {
    pub fn from_columns(
        schema: Vec<String>,
        dictionaries: Vec<Dictionary>,
        columns: Vec<Vec<u32>>,
        rows_per_block: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        if schema.len() != dictionaries.len() || schema.len() != columns.len() {
            return Err(Error::SchemaMismatch("schema/dictionary/column arity".into()));
        }
        let row_count = columns.first().map(|c| c.len()).unwrap_or(0);
        if row_count == 0 {
            return Err(Error::EmptyDataset);
        }
        if columns.iter().any(|c| c.len() != row_count) {
            return Err(Error::SchemaMismatch("columns are not row-aligned".into()));
        }
        Ok(Self { schema, dictionaries, columns, row_count, rows_per_block, shuffle_seed })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn rows_per_block(&self) -> usize {
        self.rows_per_block
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed
    }

    pub fn block_count(&self) -> usize {
        self.row_count.div_ceil(self.rows_per_block)
    }

    /// Row range covered by a block; the final block may be partial.
    pub fn block_rows(&self, block_idx: usize) -> std::ops::Range<usize> {
        let start = block_idx * self.rows_per_block;
        start..(start + self.rows_per_block).min(self.row_count)
    }

    pub fn attr_index(&self, attribute: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))
    }

    pub fn dictionary(&self, attribute: &str) -> Result<&Dictionary> {
        Ok(&self.dictionaries[self.attr_index(attribute)?])
    }

    pub fn dictionary_at(&self, idx: usize) -> &Dictionary {
        &self.dictionaries[idx]
    }

    pub fn column(&self, attribute: &str) -> Result<&[u32]> {
        Ok(&self.columns[self.attr_index(attribute)?])
    }

    pub fn column_at(&self, idx: usize) -> &[u32] {
        &self.columns[idx]
    }

    /// Code slices for the requested attributes over one block's row range.
    pub fn read_block(&self, block_idx: usize, attributes: &[&str]) -> Result<Vec<&[u32]>> {
        if block_idx >= self.block_count() {
            return Err(Error::OutOfRange { index: block_idx, blocks: self.block_count() });
        }
        let range = self.block_rows(block_idx);
        attributes
            .iter()
            .map(|a| self.column(a).map(|col| &col[range.clone()]))
            .collect()
    }

    /// Applies one shared uniform permutation to every column.
    pub fn shuffle(&mut self, seed: u64) {
        let mut perm: Vec<u32> = (0..self.row_count as u32).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        for col in self.columns.iter_mut() {
            let shuffled: Vec<u32> = perm.iter().map(|&i| col[i as usize]).collect();
            *col = shuffled;
        }
        self.shuffle_seed = seed;
    }

    pub fn save(&self, path: &std::path::Path, bitmaps: &[BitmapIndex]) -> Result<()> {
        persist::save(self, bitmaps, path)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, Vec<BitmapIndex>)> {
        persist::load(path)
    }
}

/// Exact per-candidate histograms via a full scan; candidates whose
/// selectivity falls below `sigma` are excluded. This is both the exact
/// baseline and the ground-truth oracle for verification.
pub fn scan_groupby(
    dataset: &Dataset,
    x_attr: &str,
    z_attr: &str,
    sigma: f64,
) -> Result<BTreeMap<u32, HistogramCounts>> {
    let x_idx = dataset.attr_index(x_attr)?;
    let z_idx = dataset.attr_index(z_attr)?;
    let num_groups = dataset.dictionaries[x_idx].len();
    let num_cands = dataset.dictionaries[z_idx].len();
    let xcol = &dataset.columns[x_idx];
    let zcol = &dataset.columns[z_idx];

    let mut counts = vec![vec![0u64; num_groups]; num_cands];
    for (z, x) in zcol.iter().zip(xcol) {
        counts[*z as usize][*x as usize] += 1;
    }

    let threshold = sigma * dataset.row_count as f64;
    let mut out = BTreeMap::new();
    for (cand, groups) in counts.into_iter().enumerate() {
        let hist = HistogramCounts::new(groups);
        if (hist.total() as f64) < threshold {
            continue;
        }
        out.insert(cand as u32, hist);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(zs: &[&str], xs: &[&str], rows_per_block: usize) -> Dataset {
        let mut zd = Dictionary::default();
        let mut xd = Dictionary::default();
        let zcol: Vec<u32> = zs.iter().map(|v| zd.encode(v)).collect();
        let xcol: Vec<u32> = xs.iter().map(|v| xd.encode(v)).collect();
        Dataset::from_columns(
            vec!["z".into(), "x".into()],
            vec![zd, xd],
            vec![zcol, xcol],
            rows_per_block,
            0,
        )
        .unwrap()
    }

    #[test]
    fn dictionary_round_trip() {
        let mut d = Dictionary::default();
        for v in ["b", "a", "b", "c"] {
            d.encode(v);
        }
        assert_eq!(d.len(), 3);
        for code in 0..d.len() as u32 {
            let raw = d.decode(code);
            assert_eq!(d.code_of(raw), Some(code));
        }
        assert_eq!(d.values(), &["b", "a", "c"]);
    }

    #[test]
    fn block_geometry_and_read() {
        let ds = tiny_dataset(
            &["a", "a", "b", "b", "a", "b", "a", "a", "b", "a"],
            &["0", "1", "0", "0", "1", "1", "0", "1", "0", "1"],
            4,
        );
        assert_eq!(ds.block_count(), 3);
        assert_eq!(ds.read_block(0, &["z"]).unwrap()[0].len(), 4);
        assert_eq!(ds.read_block(2, &["z"]).unwrap()[0].len(), 2, "final partial block");
        assert!(matches!(
            ds.read_block(3, &["z"]),
            Err(Error::OutOfRange { index: 3, blocks: 3 })
        ));
    }

    #[test]
    fn shuffle_is_deterministic_and_preserves_rows() {
        let zs = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let xs = ["0", "1", "2", "3", "4", "5", "6", "7"];
        let mut d1 = tiny_dataset(&zs, &xs, 4);
        let mut d2 = d1.clone();
        d1.shuffle(99);
        d2.shuffle(99);
        assert_eq!(d1, d2);

        // The row pairing survives: z code i is always aligned with x code i.
        let z = d1.column("z").unwrap();
        let x = d1.column("x").unwrap();
        for (a, b) in z.iter().zip(x) {
            assert_eq!(a, b);
        }
        // Multiset preserved.
        let mut sorted = z.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<u32>>());
        // Not the identity for this seed.
        assert_ne!(z, &(0..8).collect::<Vec<u32>>()[..]);
    }

    #[test]
    fn shuffle_single_row_is_identity() {
        let mut d = tiny_dataset(&["a"], &["0"], 4);
        let before = d.clone();
        d.shuffle(7);
        assert_eq!(d.column("z").unwrap(), before.column("z").unwrap());
    }

    #[test]
    fn scan_groupby_hand_example() {
        let ds = tiny_dataset(&["a", "a", "b", "b"], &["0", "1", "0", "0"], 4);
        let hists = scan_groupby(&ds, "x", "z", 0.0).unwrap();
        assert_eq!(hists[&0].counts(), &[1, 1]);
        assert_eq!(hists[&1].counts(), &[2, 0]);

        // Both candidates sit at selectivity 0.5.
        let hists = scan_groupby(&ds, "x", "z", 0.6).unwrap();
        assert!(hists.is_empty());
    }

    #[test]
    fn scan_groupby_matches_brute_force() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(1..200);
            let zs: Vec<String> = (0..n).map(|_| format!("z{}", rng.gen_range(0..6))).collect();
            let xs: Vec<String> = (0..n).map(|_| format!("x{}", rng.gen_range(0..4))).collect();
            let zrefs: Vec<&str> = zs.iter().map(|s| s.as_str()).collect();
            let xrefs: Vec<&str> = xs.iter().map(|s| s.as_str()).collect();
            let ds = tiny_dataset(&zrefs, &xrefs, 7);
            let hists = scan_groupby(&ds, "x", "z", 0.0).unwrap();

            let zd = ds.dictionary("z").unwrap();
            let xd = ds.dictionary("x").unwrap();
            for (cand, hist) in &hists {
                for group in 0..xd.len() {
                    let expect = zs
                        .iter()
                        .zip(&xs)
                        .filter(|(z, x)| {
                            zd.code_of(z) == Some(*cand)
                                && xd.code_of(x) == Some(group as u32)
                        })
                        .count() as u64;
                    assert_eq!(hist.counts()[group], expect);
                }
            }
        }
    }

    #[test]
    fn scan_groupby_unknown_attribute() {
        let ds = tiny_dataset(&["a"], &["0"], 4);
        assert!(matches!(
            scan_groupby(&ds, "nope", "z", 0.0),
            Err(Error::UnknownAttribute(_))
        ));
    }
}
