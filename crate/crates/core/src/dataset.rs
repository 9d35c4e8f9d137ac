//! Categorical dataset ingestion, schemas, one-hot encoding, and relaxed
//! synthetic datasets.
//!
//! A schema fixes, per feature, an ordered list of category labels. Records
//! are stored as category indices. The relaxed synthetic dataset lives in
//! `[0,1]^{d'}` where `d'` is the total one-hot width; after projection each
//! feature block of each row lies on the probability simplex.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category label used for empty cells so every record stays usable.
pub const MISSING_CATEGORY: &str = "(missing)";

/// One categorical feature: a name and its ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub categories: Vec<String>,
}

/// Ordered feature list with derived one-hot layout.
///
/// Invariants: at least one feature, every cardinality at least 2, no
/// duplicate categories within a feature, no duplicate feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    features: Vec<Feature>,
    /// Block start offsets, length `d + 1`; the last entry is `d_prime`.
    offsets: Vec<usize>,
    /// Per-feature category label -> index lookup.
    lookup: Vec<HashMap<String, u32>>,
}

impl Schema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema(
                "schema must contain at least one feature".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for f in &features {
            if !names.insert(f.name.clone()) {
                return Err(Error::Schema(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
            if f.categories.len() < 2 {
                return Err(Error::Schema(format!(
                    "feature {:?} has {} category(ies); a feature needs at least 2",
                    f.name,
                    f.categories.len()
                )));
            }
            let distinct: BTreeSet<&String> = f.categories.iter().collect();
            if distinct.len() != f.categories.len() {
                return Err(Error::Schema(format!(
                    "feature {:?} has duplicate categories",
                    f.name
                )));
            }
        }
        let mut offsets = Vec::with_capacity(features.len() + 1);
        let mut acc = 0usize;
        for f in &features {
            offsets.push(acc);
            acc += f.categories.len();
        }
        offsets.push(acc);
        let lookup = features
            .iter()
            .map(|f| {
                f.categories
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.clone(), i as u32))
                    .collect()
            })
            .collect();
        Ok(Self {
            features,
            offsets,
            lookup,
        })
    }

    /// Number of features `d`.
    pub fn d(&self) -> usize {
        self.features.len()
    }

    /// One-hot width `d' = sum of cardinalities`.
    pub fn d_prime(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn cardinality(&self, feature: usize) -> usize {
        self.features[feature].categories.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.categories.len()).collect()
    }

    /// Start of feature `f`'s one-hot block.
    pub fn block_offset(&self, feature: usize) -> usize {
        self.offsets[feature]
    }

    /// All block offsets, length `d + 1` with a trailing `d_prime` sentinel.
    pub fn block_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn category_index(&self, feature: usize, label: &str) -> Option<u32> {
        self.lookup[feature].get(label).copied()
    }

    /// Persist as a JSON sidecar so privacy-relevant runs always execute
    /// against a fixed, declared schema.
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = SchemaDoc {
            features: self.features.clone(),
        };
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Parse(format!("schema serialization failed: {e}")))?;
        fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let doc: SchemaDoc = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("bad schema file {path:?}: {e}")))?;
        Schema::new(doc.features)
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    features: Vec<Feature>,
}

/// The sensitive dataset: `n` records of category indices under a schema.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Schema,
    /// Row-major `n x d` category indices.
    values: Vec<u32>,
    n: usize,
}

impl Dataset {
    pub fn from_records(schema: Schema, records: Vec<Vec<u32>>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Schema(
                "dataset must contain at least one record".into(),
            ));
        }
        let d = schema.d();
        let mut values = Vec::with_capacity(records.len() * d);
        for (i, rec) in records.iter().enumerate() {
            if rec.len() != d {
                return Err(Error::Schema(format!(
                    "record {i} has {} fields, schema has {d}",
                    rec.len()
                )));
            }
            for (j, &v) in rec.iter().enumerate() {
                if (v as usize) >= schema.cardinality(j) {
                    return Err(Error::Schema(format!(
                        "record {i} feature {j}: index {v} exceeds cardinality {}",
                        schema.cardinality(j)
                    )));
                }
            }
            values.extend_from_slice(rec);
        }
        let n = records.len();
        Ok(Self { schema, values, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn record(&self, i: usize) -> &[u32] {
        let d = self.schema.d();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn records(&self) -> impl Iterator<Item = &[u32]> {
        self.values.chunks_exact(self.schema.d())
    }
}

/// Load a delimited text table with a header row.
///
/// With `schema: None` the schema is inferred: every value is treated as a
/// categorical string, categories are ordered lexicographically (stable
/// under record shuffling), and empty cells become [`MISSING_CATEGORY`].
/// With a supplied schema, any value absent from it is an error.
pub fn load_dataset(path: &Path, schema: Option<&Schema>, delimiter: u8) -> Result<Dataset> {
    let raw = read_table(path, delimiter)?;
    let schema = match schema {
        Some(s) => {
            if s.d() != raw.header.len() {
                return Err(Error::Schema(format!(
                    "supplied schema has {} features, table has {} columns",
                    s.d(),
                    raw.header.len()
                )));
            }
            s.clone()
        }
        None => infer_schema(&raw)?,
    };
    let d = schema.d();
    let mut records = Vec::with_capacity(raw.rows.len());
    for (i, row) in raw.rows.iter().enumerate() {
        let mut rec = Vec::with_capacity(d);
        for (j, cell) in row.iter().enumerate() {
            match schema.category_index(j, cell) {
                Some(v) => rec.push(v),
                None => {
                    return Err(Error::Schema(format!(
                        "row {i}, column {:?}: value {cell:?} not in schema",
                        schema.features()[j].name
                    )))
                }
            }
        }
        records.push(rec);
    }
    Dataset::from_records(schema, records)
}

/// Write a dataset back out as delimited text (header plus category labels),
/// the inverse of [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, path: &Path, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("cannot open {path:?} for writing: {e}")))?;
    let schema = dataset.schema();
    wtr.write_record(schema.features().iter().map(|f| f.name.as_str()))
        .map_err(|e| Error::Parse(format!("write failed: {e}")))?;
    for rec in dataset.records() {
        wtr.write_record(
            rec.iter()
                .enumerate()
                .map(|(j, &v)| schema.features()[j].categories[v as usize].as_str()),
        )
        .map_err(|e| Error::Parse(format!("write failed: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path, delimiter: u8) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("cannot read {path:?}: {e}")))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("bad header in {path:?}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() {
        return Err(Error::Parse(format!("{path:?} has an empty header row")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("bad record in {path:?}: {e}")))?;
        let row: Vec<String> = rec
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    MISSING_CATEGORY.to_string()
                } else {
                    cell.to_string()
                }
            })
            .collect();
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "{path:?}: record with {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!(
            "{path:?} contains a header but no records"
        )));
    }
    Ok(RawTable { header, rows })
}

fn infer_schema(raw: &RawTable) -> Result<Schema> {
    let d = raw.header.len();
    let mut cats: Vec<BTreeSet<String>> = vec![BTreeSet::new(); d];
    for row in &raw.rows {
        for (j, cell) in row.iter().enumerate() {
            cats[j].insert(cell.clone());
        }
    }
    let features = raw
        .header
        .iter()
        .zip(cats)
        .map(|(name, set)| Feature {
            name: name.clone(),
            categories: set.into_iter().collect(),
        })
        .collect();
    Schema::new(features)
}

/// A one-hot encoded record: one bit per one-hot coordinate, exactly one set
/// bit per feature block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotRecord {
    pub bits: Vec<u8>,
}

/// One-hot encode a record: block `j` carries a 1 exactly at the offset of
/// the record's category index.
pub fn one_hot(record: &[u32], schema: &Schema) -> OneHotRecord {
    let mut bits = vec![0u8; schema.d_prime()];
    for (j, &v) in record.iter().enumerate() {
        bits[schema.block_offset(j) + v as usize] = 1;
    }
    OneHotRecord { bits }
}

/// Invert [`one_hot`]. Errors if any block does not contain exactly one 1.
pub fn decode_one_hot(rec: &OneHotRecord, schema: &Schema) -> Result<Vec<u32>> {
    if rec.bits.len() != schema.d_prime() {
        return Err(Error::Schema(format!(
            "one-hot record has width {}, schema d' is {}",
            rec.bits.len(),
            schema.d_prime()
        )));
    }
    let mut out = Vec::with_capacity(schema.d());
    for j in 0..schema.d() {
        let start = schema.block_offset(j);
        let block = &rec.bits[start..start + schema.cardinality(j)];
        let ones: Vec<usize> = block
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect();
        if ones.len() != 1 {
            return Err(Error::Schema(format!(
                "one-hot block {j} has {} set bits",
                ones.len()
            )));
        }
        out.push(ones[0] as u32);
    }
    Ok(out)
}

/// The relaxed synthetic dataset: an `n' x d'` real matrix in `[0,1]`,
/// block-partitioned to mirror the schema's one-hot layout. Feature blocks
/// are stored contiguously in row-major order so per-block simplex
/// projection walks memory linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedDataset {
    n_prime: usize,
    d_prime: usize,
    /// Row-major `n' x d'` values.
    values: Vec<f64>,
    /// Block offsets, length `d + 1` with trailing `d_prime`.
    block_offsets: Vec<usize>,
}

impl RelaxedDataset {
    pub fn new(n_prime: usize, block_offsets: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let d_prime = *block_offsets
            .last()
            .ok_or_else(|| Error::Schema("block offsets must be non-empty".into()))?;
        if values.len() != n_prime * d_prime {
            return Err(Error::LengthMismatch(format!(
                "expected {} values for {n_prime} x {d_prime}, got {}",
                n_prime * d_prime,
                values.len()
            )));
        }
        Ok(Self {
            n_prime,
            d_prime,
            values,
            block_offsets,
        })
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime
    }

    pub fn d_prime(&self) -> usize {
        self.d_prime
    }

    /// Block offsets, length `d + 1` with trailing `d_prime`.
    pub fn block_offsets(&self) -> &[usize] {
        &self.block_offsets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_prime..(i + 1) * self.d_prime]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.d_prime..(i + 1) * self.d_prime]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.d_prime)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Dump as a delimited numeric table, one synthetic row per line.
    pub fn save(&self, path: &Path, delimiter: u8) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_path(path)
            .map_err(|e| Error::Parse(format!("cannot open {path:?} for writing: {e}")))?;
        let header: Vec<String> = (0..self.d_prime).map(|c| format!("c{c}")).collect();
        wtr.write_record(&header)
            .map_err(|e| Error::Parse(format!("write failed: {e}")))?;
        for row in self.rows() {
            wtr.write_record(row.iter().map(|v| format!("{v}")))
                .map_err(|e| Error::Parse(format!("write failed: {e}")))?;
        }
        wtr.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Initialize a relaxed dataset with i.i.d. Uniform[0,1] entries. Callers
/// apply `projection::project_rows` before first use to restore the
/// per-block simplex invariant.
pub fn init_relaxed(n_prime: usize, schema: &Schema, rng: &mut impl Rng) -> RelaxedDataset {
    assert!(n_prime >= 1, "n_prime must be at least 1");
    let d_prime = schema.d_prime();
    let values: Vec<f64> = (0..n_prime * d_prime).map(|_| rng.gen::<f64>()).collect();
    RelaxedDataset {
        n_prime,
        d_prime,
        values,
        block_offsets: schema.block_offsets().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{derived_rng, STREAM_INIT};
    use std::io::Write;

    fn toy_schema(cards: &[usize]) -> Schema {
        let features = cards
            .iter()
            .enumerate()
            .map(|(i, &t)| Feature {
                name: format!("f{i}"),
                categories: (0..t).map(|c| format!("v{c}")).collect(),
            })
            .collect();
        Schema::new(features).unwrap()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn schema_layout() {
        let s = toy_schema(&[2, 3, 4]);
        assert_eq!(s.d(), 3);
        assert_eq!(s.d_prime(), 9);
        assert_eq!(s.block_offsets(), &[0, 2, 5, 9]);
    }

    #[test]
    fn schema_rejects_degenerate_features() {
        let f = vec![Feature {
            name: "a".into(),
            categories: vec!["only".into()],
        }];
        assert!(Schema::new(f).is_err());
        let f = vec![Feature {
            name: "a".into(),
            categories: vec!["x".into(), "x".into()],
        }];
        assert!(Schema::new(f).is_err());
        assert!(Schema::new(vec![]).is_err());
    }

    #[test]
    fn toy_file_inference() {
        // one column, values {a, b, a}: d=1, t=2, records [0, 1, 0]
        let f = write_temp("col\na\nb\na\n");
        let ds = load_dataset(f.path(), None, b',').unwrap();
        assert_eq!(ds.schema().d(), 1);
        assert_eq!(ds.schema().cardinality(0), 2);
        assert_eq!(ds.n(), 3);
        let recs: Vec<u32> = ds.records().map(|r| r[0]).collect();
        assert_eq!(recs, vec![0, 1, 0]);
    }

    #[test]
    fn inference_is_lexicographic_and_shuffle_stable() {
        let a = load_dataset(write_temp("c\nzebra\napple\nmango\n").path(), None, b',').unwrap();
        let b = load_dataset(write_temp("c\napple\nmango\nzebra\n").path(), None, b',').unwrap();
        assert_eq!(a.schema(), b.schema());
        assert_eq!(
            a.schema().features()[0].categories,
            vec![
                "apple".to_string(),
                "mango".to_string(),
                "zebra".to_string()
            ]
        );
    }

    #[test]
    fn missing_cells_become_category() {
        let ds = load_dataset(write_temp("a,b\nx,1\n,2\nx,1\n").path(), None, b',').unwrap();
        assert!(ds.schema().category_index(0, MISSING_CATEGORY).is_some());
    }

    #[test]
    fn load_rejects_unknown_value_under_supplied_schema() {
        let schema = toy_schema(&[2]);
        let f = write_temp("f0\nv0\nv9\n");
        let err = load_dataset(f.path(), Some(&schema), b',').unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn load_rejects_empty_table_and_missing_file() {
        assert!(load_dataset(write_temp("h1,h2\n").path(), None, b',').is_err());
        assert!(load_dataset(Path::new("/nonexistent/x.csv"), None, b',').is_err());
    }

    #[test]
    fn constant_column_rejected() {
        let err = load_dataset(write_temp("a,b\nx,1\nx,2\n").path(), None, b',').unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn alternate_delimiter() {
        let ds = load_dataset(write_temp("a|b\nx|1\ny|2\n").path(), None, b'|').unwrap();
        assert_eq!(ds.schema().d(), 2);
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn save_load_roundtrip_idempotent() {
        let src = write_temp("a,b\nx,1\ny,2\nx,2\n");
        let ds = load_dataset(src.path(), None, b',').unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&ds, out.path(), b',').unwrap();
        let ds2 = load_dataset(out.path(), None, b',').unwrap();
        assert_eq!(ds.schema(), ds2.schema());
        let r1: Vec<Vec<u32>> = ds.records().map(|r| r.to_vec()).collect();
        let r2: Vec<Vec<u32>> = ds2.records().map(|r| r.to_vec()).collect();
        assert_eq!(r1, r2);
    }

    #[test]
    fn schema_sidecar_roundtrip() {
        let s = toy_schema(&[2, 3]);
        let f = tempfile::NamedTempFile::new().unwrap();
        s.save(f.path()).unwrap();
        let s2 = Schema::load(f.path()).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn one_hot_examples() {
        let s1 = toy_schema(&[3]);
        assert_eq!(one_hot(&[1], &s1).bits, vec![0, 1, 0]);
        let s2 = toy_schema(&[2, 2]);
        assert_eq!(one_hot(&[0, 1], &s2).bits, vec![1, 0, 0, 1]);
    }

    #[test]
    fn one_hot_roundtrip_exhaustive_2_3_4() {
        let s = toy_schema(&[2, 3, 4]);
        let mut count = 0;
        for a in 0..2u32 {
            for b in 0..3u32 {
                for c in 0..4u32 {
                    let rec = vec![a, b, c];
                    let enc = one_hot(&rec, &s);
                    assert_eq!(enc.bits.iter().map(|&x| x as usize).sum::<usize>(), s.d());
                    assert_eq!(decode_one_hot(&enc, &s).unwrap(), rec);
                    count += 1;
                }
            }
        }
        assert_eq!(count, 24);
    }

    #[test]
    fn init_relaxed_range_and_determinism() {
        let s = toy_schema(&[2, 3]);
        let a = init_relaxed(50, &s, &mut derived_rng(11, STREAM_INIT));
        assert!(a.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let b = init_relaxed(50, &s, &mut derived_rng(11, STREAM_INIT));
        assert_eq!(a, b);
        let c = init_relaxed(50, &s, &mut derived_rng(12, STREAM_INIT));
        assert_ne!(a, c);
    }
}
