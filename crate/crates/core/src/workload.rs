//! r-of-k threshold workloads: implicit consistent-query enumeration and
//! streaming true-answer evaluation on the sensitive dataset.
//!
//! A workload never materializes its query vector. Queries are addressed by
//! a canonical global index: thresholds in workload order, and within a
//! threshold the target tuples in mixed-radix order with the *last* feature
//! of `S` varying fastest. Evaluation streams threshold by threshold with a
//! bounded per-threshold answer buffer, so memory never scales with
//! `m x n`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{binomial, for_each_combination, inclusion_exclusion_weight};
use crate::dataset::{Dataset, Schema};
use crate::error::{Error, Result};

/// Default cap on the per-threshold answer buffer, in queries.
pub const DEFAULT_BATCH_CAP: usize = 1 << 20;

/// Largest projected-tuple space for which subset histograms use a dense
/// table instead of a hash map.
const DENSE_HIST_LIMIT: u64 = 1 << 22;

/// An r-of-k threshold: at least `r` of the features in `S` must match the
/// target. `S` is held in canonical ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Threshold {
    r: usize,
    features: Vec<usize>,
}

impl Threshold {
    /// Build a threshold; `features` may arrive in any order and is
    /// canonicalized ascending. Requires `1 <= r <= k` and distinct features.
    pub fn new(r: usize, mut features: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Workload(
                "threshold needs at least one feature".into(),
            ));
        }
        features.sort_unstable();
        if features.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Workload(
                "threshold features must be distinct".into(),
            ));
        }
        if r < 1 || r > features.len() {
            return Err(Error::Workload(format!(
                "r = {r} out of range for k = {}",
                features.len()
            )));
        }
        Ok(Self { r, features })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    /// Feature indices, ascending.
    pub fn features(&self) -> &[usize] {
        &self.features
    }

    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        match self.features.last() {
            Some(&f) if f >= schema.d() => Err(Error::Workload(format!(
                "threshold feature {f} out of range for d = {}",
                schema.d()
            ))),
            _ => Ok(()),
        }
    }
}

/// A non-empty list of thresholds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    thresholds: Vec<Threshold>,
}

impl Workload {
    pub fn new(thresholds: Vec<Threshold>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Workload("workload must be non-empty".into()));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn validate_against(&self, schema: &Schema) -> Result<()> {
        self.thresholds
            .iter()
            .try_for_each(|t| t.validate_against(schema))
    }

    /// Serialize as a JSON list of `{r, k, features}` entries.
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc: Vec<ThresholdDoc> = self
            .thresholds
            .iter()
            .map(|t| ThresholdDoc {
                r: t.r,
                k: t.k(),
                features: t.features.clone(),
            })
            .collect();
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Parse(format!("workload serialization failed: {e}")))?;
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
        let doc: Vec<ThresholdDoc> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("bad workload file {path:?}: {e}")))?;
        let thresholds = doc
            .into_iter()
            .map(|t| {
                let thr = Threshold::new(t.r, t.features)?;
                if thr.k() != t.k {
                    return Err(Error::Workload(format!(
                        "entry declares k = {}, has {} features",
                        t.k,
                        thr.k()
                    )));
                }
                Ok(thr)
            })
            .collect::<Result<Vec<_>>>()?;
        Workload::new(thresholds)
    }
}

#[derive(Serialize, Deserialize)]
struct ThresholdDoc {
    r: usize,
    k: usize,
    features: Vec<usize>,
}

/// A concrete query: a threshold plus a target tuple `y`, one category index
/// per feature of `S`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistentQuery {
    pub threshold: Threshold,
    pub targets: Vec<u32>,
}

/// Answers to every consistent query of a workload, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerVector {
    pub values: Vec<f64>,
}

impl AnswerVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &AnswerVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(format!(
                "answer vectors of length {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Number of consistent queries of a single threshold, with overflow
/// detection (full spaces reach 10^7 and beyond).
pub fn threshold_query_count(threshold: &Threshold, schema: &Schema) -> Result<u64> {
    threshold.validate_against(schema)?;
    let mut acc: u64 = 1;
    for &f in threshold.features() {
        acc = acc
            .checked_mul(schema.cardinality(f) as u64)
            .ok_or_else(|| {
                Error::CountOverflow(format!(
                    "query count exceeds u64 for threshold {threshold:?}"
                ))
            })?;
    }
    Ok(acc)
}

/// Total number of consistent queries of a workload.
pub fn consistent_query_count(workload: &Workload, schema: &Schema) -> Result<u64> {
    let mut total: u64 = 0;
    for t in workload.thresholds() {
        total = total
            .checked_add(threshold_query_count(t, schema)?)
            .ok_or_else(|| Error::CountOverflow("workload query count exceeds u64".into()))?;
    }
    Ok(total)
}

/// Decode a global query index into its consistent query: bijective
/// mixed-radix decoding, thresholds in workload order, last feature of `S`
/// varying fastest.
pub fn query_at(workload: &Workload, schema: &Schema, index: u64) -> Result<ConsistentQuery> {
    let count = consistent_query_count(workload, schema)?;
    if index >= count {
        return Err(Error::QueryIndexOutOfRange { index, count });
    }
    let mut rem = index;
    for t in workload.thresholds() {
        let c = threshold_query_count(t, schema)?;
        if rem < c {
            let mut targets = vec![0u32; t.k()];
            let mut x = rem;
            for (slot, &f) in t.features().iter().enumerate().rev() {
                let card = schema.cardinality(f) as u64;
                targets[slot] = (x % card) as u32;
                x /= card;
            }
            return Ok(ConsistentQuery {
                threshold: t.clone(),
                targets,
            });
        }
        rem -= c;
    }
    unreachable!("index checked against total count");
}

/// Inverse of [`query_at`]. If the workload contains duplicate thresholds the
/// first occurrence wins.
pub fn index_of(workload: &Workload, schema: &Schema, query: &ConsistentQuery) -> Result<u64> {
    let mut base: u64 = 0;
    for t in workload.thresholds() {
        let c = threshold_query_count(t, schema)?;
        if *t == query.threshold {
            if query.targets.len() != t.k() {
                return Err(Error::Workload("target tuple length differs from k".into()));
            }
            let mut offset: u64 = 0;
            for (slot, &f) in t.features().iter().enumerate() {
                let card = schema.cardinality(f) as u64;
                let y = query.targets[slot] as u64;
                if y >= card {
                    return Err(Error::Workload(format!(
                        "target {y} out of range for feature {f}"
                    )));
                }
                offset = offset * card + y;
            }
            return Ok(base + offset);
        }
        base += c;
    }
    Err(Error::Workload(
        "query's threshold not present in workload".into(),
    ))
}

/// Evaluate the r-of-k predicate: 1 iff at least `r` of the record's values
/// match the target on the threshold's features.
pub fn evaluate_predicate(record: &[u32], query: &ConsistentQuery) -> bool {
    let matches = query
        .threshold
        .features()
        .iter()
        .zip(&query.targets)
        .filter(|(&f, &y)| record[f] == y)
        .count();
    matches >= query.threshold.r()
}

/// Subset histogram: counts of records whose projection onto a feature
/// subset equals each tuple. Dense for small projected spaces, hashed
/// otherwise.
enum Hist {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

impl Hist {
    fn get(&self, key: u64) -> u32 {
        match self {
            Hist::Dense(v) => v[key as usize],
            Hist::Sparse(m) => m.get(&key).copied().unwrap_or(0),
        }
    }
}

struct SubsetHist {
    /// Positions (into the threshold's feature list) this subset covers.
    positions: Vec<usize>,
    /// Mixed-radix strides matching `positions`, last position fastest.
    strides: Vec<u64>,
    weight: i64,
    hist: Hist,
}

/// Per-threshold evaluation plan for true answers, built once per threshold
/// from one pass over the records per subset.
struct ThresholdCounter {
    subsets: Vec<SubsetHist>,
    cards: Vec<u64>,
    n: usize,
}

impl ThresholdCounter {
    fn build(dataset: &Dataset, threshold: &Threshold) -> Result<Self> {
        let schema = dataset.schema();
        threshold.validate_against(schema)?;
        let k = threshold.k();
        let r = threshold.r();
        let feats = threshold.features();
        let cards: Vec<u64> = feats
            .iter()
            .map(|&f| schema.cardinality(f) as u64)
            .collect();
        // Project records onto S once.
        let n = dataset.n();
        let mut proj = vec![0u32; n * k];
        for (i, rec) in dataset.records().enumerate() {
            for (slot, &f) in feats.iter().enumerate() {
                proj[i * k + slot] = rec[f];
            }
        }
        let mut subsets = Vec::new();
        for size in r..=k {
            let weight = inclusion_exclusion_weight(size, r);
            for_each_combination(k, size, |members| {
                let positions: Vec<usize> = members.to_vec();
                let mut strides = vec![0u64; size];
                let mut acc = 1u64;
                for (j, &pos) in positions.iter().enumerate().rev() {
                    strides[j] = acc;
                    acc = acc.saturating_mul(cards[pos]);
                }
                let space = acc;
                let mut hist = if space <= DENSE_HIST_LIMIT {
                    Hist::Dense(vec![0u32; space as usize])
                } else {
                    Hist::Sparse(HashMap::new())
                };
                for i in 0..n {
                    let row = &proj[i * k..(i + 1) * k];
                    let mut key = 0u64;
                    for (j, &pos) in positions.iter().enumerate() {
                        key += strides[j] * row[pos] as u64;
                    }
                    match &mut hist {
                        Hist::Dense(v) => v[key as usize] += 1,
                        Hist::Sparse(m) => *m.entry(key).or_insert(0) += 1,
                    }
                }
                subsets.push(SubsetHist {
                    positions,
                    strides,
                    weight,
                    hist,
                });
            });
        }
        Ok(Self { subsets, cards, n })
    }

    /// Fill `out` with answers for queries `[start, start + out.len())` of
    /// this threshold (local indices). Match counts accumulate in exact
    /// integer arithmetic, so each answer is exactly count / n.
    fn answers_range(&self, start: u64, out: &mut [f64]) {
        let k = self.cards.len();
        let mut digits = decode_digits(start, &self.cards);
        let n = self.n as f64;
        for slot in out.iter_mut() {
            let mut count: i64 = 0;
            for s in &self.subsets {
                let mut key = 0u64;
                for (j, &pos) in s.positions.iter().enumerate() {
                    key += s.strides[j] * digits[pos] as u64;
                }
                count += s.weight * s.hist.get(key) as i64;
            }
            debug_assert!(count >= 0 && count <= self.n as i64);
            *slot = count as f64 / n;
            advance_digits(&mut digits, &self.cards, k);
        }
    }
}

/// Decode a local query index into mixed-radix digits (last fastest).
pub(crate) fn decode_digits(index: u64, cards: &[u64]) -> Vec<u32> {
    let mut digits = vec![0u32; cards.len()];
    let mut x = index;
    for slot in (0..cards.len()).rev() {
        digits[slot] = (x % cards[slot]) as u32;
        x /= cards[slot];
    }
    digits
}

/// Increment mixed-radix digits in place (last digit fastest).
pub(crate) fn advance_digits(digits: &mut [u32], cards: &[u64], k: usize) {
    for slot in (0..k).rev() {
        digits[slot] += 1;
        if (digits[slot] as u64) < cards[slot] {
            return;
        }
        digits[slot] = 0;
    }
}

/// Stream true answers threshold by threshold. `sink` receives
/// `(global_start_index, batch)` chunks whose length never exceeds
/// `batch_cap`; memory stays proportional to the batch plus one threshold's
/// subset histograms, never to `m x n`.
pub fn true_answers_streamed(
    dataset: &Dataset,
    workload: &Workload,
    batch_cap: usize,
    mut sink: impl FnMut(u64, &[f64]),
) -> Result<()> {
    if batch_cap == 0 {
        return Err(Error::Config("batch cap must be positive".into()));
    }
    let schema = dataset.schema();
    consistent_query_count(workload, schema)?;
    let mut global: u64 = 0;
    let mut buf: Vec<f64> = Vec::new();
    for t in workload.thresholds() {
        let total = threshold_query_count(t, schema)?;
        let counter = ThresholdCounter::build(dataset, t)?;
        let mut local: u64 = 0;
        while local < total {
            let len = ((total - local).min(batch_cap as u64)) as usize;
            buf.clear();
            buf.resize(len, 0.0);
            debug_assert!(buf.len() <= batch_cap);
            counter.answers_range(local, &mut buf);
            sink(global + local, &buf);
            local += len as u64;
        }
        global += total;
    }
    Ok(())
}

/// True answers for every consistent query of the workload: the normalized
/// count of each predicate over all records.
pub fn true_answers(dataset: &Dataset, workload: &Workload) -> Result<AnswerVector> {
    let m = consistent_query_count(workload, dataset.schema())?;
    let mut values = vec![0.0; m as usize];
    true_answers_streamed(dataset, workload, DEFAULT_BATCH_CAP, |start, batch| {
        values[start as usize..start as usize + batch.len()].copy_from_slice(batch);
    })?;
    Ok(AnswerVector { values })
}

/// True answers for the consistent queries of a single threshold.
pub fn threshold_true_answers(dataset: &Dataset, threshold: &Threshold) -> Result<Vec<f64>> {
    let total = threshold_query_count(threshold, dataset.schema())?;
    let counter = ThresholdCounter::build(dataset, threshold)?;
    let mut out = vec![0.0; total as usize];
    counter.answers_range(0, &mut out);
    Ok(out)
}

/// Sample a workload of `size` distinct feature sets drawn uniformly among
/// all k-subsets of the schema's features (without replacement), each
/// canonicalized ascending and given the same `(r, k)`.
pub fn sample_uniform_workload(
    r: usize,
    k: usize,
    size: usize,
    schema: &Schema,
    rng: &mut impl Rng,
) -> Result<Workload> {
    let d = schema.d();
    if k > d {
        return Err(Error::Workload(format!("k = {k} exceeds d = {d}")));
    }
    if r < 1 || r > k {
        return Err(Error::Workload(format!("r = {r} out of range for k = {k}")));
    }
    let limit = binomial(d as u64, k as u64);
    if (size as u64) > limit {
        return Err(Error::Workload(format!(
            "requested {size} distinct feature sets, only {limit} k-subsets exist"
        )));
    }
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(size);
    let mut thresholds = Vec::with_capacity(size);
    while thresholds.len() < size {
        let mut feats: Vec<usize> = rand::seq::index::sample(rng, d, k).into_vec();
        feats.sort_unstable();
        if seen.insert(feats.clone()) {
            thresholds.push(Threshold::new(r, feats)?);
        }
    }
    Workload::new(thresholds)
}
