//! CSV ingestion: header-driven schema, missing-value filtering, optional
//! numeric binning, dictionary encoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::storage::{Dataset, Dictionary};

/// Tokens treated as missing values; rows containing one in any ingested
/// column are dropped.
const NA_TOKENS: [&str; 5] = ["", "N/A", "NA", "n/a", "null"];

/// Maps a numeric column into `bins` equal-width categorical bins over
/// `[min, max]`. Values outside the range or unparseable count as missing.
#[derive(Debug, Clone)]
pub struct BinSpec {
    pub attribute: String,
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl BinSpec {
    /// Parses "attr:min:max:bins".
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::SchemaMismatch(format!(
                "bin spec '{text}' must be attr:min:max:bins"
            )));
        }
        let min: f64 = parts[1]
            .parse()
            .map_err(|_| Error::SchemaMismatch(format!("bad bin min in '{text}'")))?;
        let max: f64 = parts[2]
            .parse()
            .map_err(|_| Error::SchemaMismatch(format!("bad bin max in '{text}'")))?;
        let bins: usize = parts[3]
            .parse()
            .map_err(|_| Error::SchemaMismatch(format!("bad bin count in '{text}'")))?;
        if !(max > min) || bins == 0 {
            return Err(Error::SchemaMismatch(format!("degenerate bin spec '{text}'")));
        }
        Ok(Self { attribute: parts[0].to_string(), min, max, bins })
    }

    fn label_for(&self, raw: &str) -> Option<String> {
        let v: f64 = raw.trim().parse().ok()?;
        if !(self.min..=self.max).contains(&v) {
            return None;
        }
        let width = (self.max - self.min) / self.bins as f64;
        let idx = (((v - self.min) / width) as usize).min(self.bins - 1);
        Some(format!("bin{idx}"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Columns to ingest; empty means every header column.
    pub schema: Vec<String>,
    pub bins: Vec<BinSpec>,
    pub rows_per_block: usize,
}

#[derive(Debug)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub rows_kept: usize,
    pub rows_dropped: usize,
}

/// Reads a CSV file into an (unshuffled) dataset, dropping rows with missing
/// or unbinnable values in any ingested column.
pub fn ingest_csv(path: &Path, options: &IngestOptions) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let schema: Vec<String> =
        if options.schema.is_empty() { headers.clone() } else { options.schema.clone() };
    let mut col_positions = Vec::with_capacity(schema.len());
    for attr in &schema {
        let pos = headers
            .iter()
            .position(|h| h == attr)
            .ok_or_else(|| Error::SchemaMismatch(format!("column '{attr}' not in header")))?;
        col_positions.push(pos);
    }
    let bin_for: Vec<Option<&BinSpec>> = schema
        .iter()
        .map(|attr| options.bins.iter().find(|b| &b.attribute == attr))
        .collect();

    let mut dictionaries: Vec<Dictionary> = vec![Dictionary::default(); schema.len()];
    let mut columns: Vec<Vec<u32>> = vec![Vec::new(); schema.len()];
    let mut dropped = 0usize;

    let mut codes = vec![0u32; schema.len()];
    for record in reader.records() {
        let record = record?;
        let mut ok = true;
        for (i, &pos) in col_positions.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("");
            if NA_TOKENS.contains(&raw.trim()) {
                ok = false;
                break;
            }
            let value = match bin_for[i] {
                Some(spec) => match spec.label_for(raw) {
                    Some(label) => label,
                    None => {
                        ok = false;
                        break;
                    }
                },
                None => raw.trim().to_string(),
            };
            codes[i] = dictionaries[i].encode(&value);
        }
        if ok {
            for (col, code) in columns.iter_mut().zip(&codes) {
                col.push(*code);
            }
        } else {
            dropped += 1;
        }
    }

    let rows = columns.first().map(|c| c.len()).unwrap_or(0);
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let rows_per_block = if options.rows_per_block == 0 {
        super::DEFAULT_ROWS_PER_BLOCK
    } else {
        options.rows_per_block
    };
    let dataset = Dataset::from_columns(schema, dictionaries, columns, rows_per_block, 0)?;
    Ok(IngestReport { dataset, rows_kept: rows, rows_dropped: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn basic_ingest() {
        let f = write_csv("z,x\na,0\nb,1\na,1\n");
        let report = ingest_csv(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!(report.rows_kept, 3);
        assert_eq!(report.rows_dropped, 0);
        assert_eq!(report.dataset.row_count(), 3);
        assert_eq!(report.dataset.schema(), &["z", "x"]);
        // First-appearance dictionary order.
        assert_eq!(report.dataset.dictionary("z").unwrap().values(), &["a", "b"]);
    }

    #[test]
    fn na_rows_dropped() {
        let f = write_csv("z,x\na,0\nb,N/A\na,1\n");
        let report = ingest_csv(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!(report.rows_kept, 2);
        assert_eq!(report.rows_dropped, 1);
    }

    #[test]
    fn empty_file_is_error() {
        let f = write_csv("z,x\n");
        assert!(matches!(
            ingest_csv(f.path(), &IngestOptions::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn missing_schema_column() {
        let f = write_csv("z,x\na,0\n");
        let options =
            IngestOptions { schema: vec!["z".into(), "y".into()], ..Default::default() };
        assert!(matches!(ingest_csv(f.path(), &options), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn binning_maps_and_drops() {
        let f = write_csv("z,v\na,0.5\nb,9.9\nc,17.0\nd,oops\n");
        let options = IngestOptions {
            bins: vec![BinSpec::parse("v:0:10:5").unwrap()],
            ..Default::default()
        };
        let report = ingest_csv(f.path(), &options).unwrap();
        // 17.0 is out of range and "oops" unparseable: both dropped.
        assert_eq!(report.rows_kept, 2);
        assert_eq!(report.rows_dropped, 2);
        let dict = report.dataset.dictionary("v").unwrap();
        assert_eq!(dict.values(), &["bin0", "bin4"]);
    }

    #[test]
    fn bin_spec_parse_errors() {
        assert!(BinSpec::parse("v:0:10").is_err());
        assert!(BinSpec::parse("v:10:0:5").is_err());
        assert!(BinSpec::parse("v:0:10:0").is_err());
    }
}
