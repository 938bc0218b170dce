//! Per-attribute-value presence bitmaps, one bit per block.
//!
//! A set bit is exact in both directions: bit v of block b is 1 iff block b
//! contains at least one row whose code for the indexed attribute is v. The
//! sampling engine consults these to skip blocks that cannot contribute.

use crate::error::Result;
use crate::storage::{Bitset, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct BitmapIndex {
    attribute: String,
    bitmaps: Vec<Bitset>,
}

impl BitmapIndex {
    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    /// Presence bitmap for one attribute-value code.
    pub fn bitmap(&self, code: u32) -> &Bitset {
        &self.bitmaps[code as usize]
    }

    pub fn num_values(&self) -> usize {
        self.bitmaps.len()
    }

    pub fn block_count(&self) -> usize {
        self.bitmaps.first().map(|b| b.len()).unwrap_or(0)
    }

    pub(crate) fn from_parts(attribute: String, bitmaps: Vec<Bitset>) -> Self {
        Self { attribute, bitmaps }
    }
}

/// Builds the exact presence bitmap index for one attribute.
pub fn build_bitmap_index(dataset: &Dataset, attribute: &str) -> Result<BitmapIndex> {
    let attr_idx = dataset.attr_index(attribute)?;
    let col = dataset.column_at(attr_idx);
    let num_values = dataset.dictionary_at(attr_idx).len();
    let blocks = dataset.block_count();
    let mut bitmaps = vec![Bitset::new(blocks); num_values];
    for block in 0..blocks {
        for row in dataset.block_rows(block) {
            bitmaps[col[row] as usize].set(block);
        }
    }
    Ok(BitmapIndex { attribute: attribute.to_string(), bitmaps })
}
