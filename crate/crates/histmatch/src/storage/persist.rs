//! Single-file binary persistence for a dataset plus its bitmap indexes.
//!
//! Layout (all integers little-endian, fixed width):
//!   magic "HMDS", u32 version,
//!   u64 row_count, u32 rows_per_block, u64 shuffle_seed,
//!   u32 attr_count,
//!   per attribute: name, dictionary values (length-prefixed strings),
//!   per attribute: row_count u32 codes,
//!   u32 indexed_attr_count,
//!   per indexed attribute: u32 attr index, per dictionary value the bitmap
//!   words (block_count bits padded to u64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::storage::{BitmapIndex, Bitset, Dataset, Dictionary};

const MAGIC: &[u8; 4] = b"HMDS";
const VERSION: u32 = 1;

pub fn save(dataset: &Dataset, bitmaps: &[BitmapIndex], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.row_count() as u64).to_le_bytes())?;
    w.write_all(&(dataset.rows_per_block() as u32).to_le_bytes())?;
    w.write_all(&dataset.shuffle_seed().to_le_bytes())?;
    w.write_all(&(dataset.schema().len() as u32).to_le_bytes())?;
    for (i, attr) in dataset.schema().iter().enumerate() {
        write_string(&mut w, attr)?;
        let dict = dataset.dictionary_at(i);
        w.write_all(&(dict.len() as u32).to_le_bytes())?;
        for value in dict.values() {
            write_string(&mut w, value)?;
        }
    }
    for i in 0..dataset.schema().len() {
        for code in dataset.column_at(i) {
            w.write_all(&code.to_le_bytes())?;
        }
    }
    w.write_all(&(bitmaps.len() as u32).to_le_bytes())?;
    for index in bitmaps {
        let attr_idx = dataset.attr_index(index.attribute())? as u32;
        w.write_all(&attr_idx.to_le_bytes())?;
        for code in 0..index.num_values() as u32 {
            for word in index.bitmap(code).words() {
                w.write_all(&word.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Dataset, Vec<BitmapIndex>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::CorruptFile(format!("unsupported version {version}")));
    }
    let row_count = read_u64(&mut r)? as usize;
    let rows_per_block = read_u32(&mut r)? as usize;
    let shuffle_seed = read_u64(&mut r)?;
    let attr_count = read_u32(&mut r)? as usize;

    let mut schema = Vec::with_capacity(attr_count);
    let mut dictionaries = Vec::with_capacity(attr_count);
    for _ in 0..attr_count {
        schema.push(read_string(&mut r)?);
        let dict_len = read_u32(&mut r)? as usize;
        let mut values = Vec::with_capacity(dict_len);
        for _ in 0..dict_len {
            values.push(read_string(&mut r)?);
        }
        dictionaries.push(Dictionary::from_values(values));
    }
    let mut columns = Vec::with_capacity(attr_count);
    for _ in 0..attr_count {
        let mut col = vec![0u32; row_count];
        let mut buf = vec![0u8; row_count * 4];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            col[i] = u32::from_le_bytes(chunk.try_into().unwrap());
        }
        columns.push(col);
    }
    let dataset =
        Dataset::from_columns(schema, dictionaries, columns, rows_per_block, shuffle_seed)?;

    let block_count = dataset.block_count();
    let words_per_bitmap = block_count.div_ceil(64);
    let indexed = read_u32(&mut r)? as usize;
    let mut bitmaps = Vec::with_capacity(indexed);
    for _ in 0..indexed {
        let attr_idx = read_u32(&mut r)? as usize;
        if attr_idx >= dataset.schema().len() {
            return Err(Error::CorruptFile("bitmap attribute out of range".into()));
        }
        let num_values = dataset.dictionary_at(attr_idx).len();
        let mut sets = Vec::with_capacity(num_values);
        for _ in 0..num_values {
            let mut words = vec![0u64; words_per_bitmap];
            for w in words.iter_mut() {
                *w = read_u64(&mut r)?;
            }
            sets.push(Bitset::from_words(words, block_count));
        }
        bitmaps.push(BitmapIndex::from_parts(dataset.schema()[attr_idx].clone(), sets));
    }
    Ok((dataset, bitmaps))
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::CorruptFile("string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::CorruptFile("non-utf8 string".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
