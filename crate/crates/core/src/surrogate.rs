//! Differentiable surrogate queries on relaxed datasets.
//!
//! Every r-of-k threshold query has an equivalent extended differentiable
//! query: a polynomial over the one-hot coordinates that agrees with the
//! boolean predicate exactly on one-hot rows and is differentiable
//! everywhere on `[0,1]^{d'}`. Three forms are implemented:
//!
//! * the product query `prod_{i in T} x_i` (marginals),
//! * the generalized product query with negated factors `(1 - x_i)`,
//! * the polynomial threshold query, via its inclusion-exclusion expansion
//!   over subsets of the target coordinates, with the complement transform
//!   (`r' = k - r + 1` on `1 - x`) applied whenever `r <= k/2` to halve the
//!   number of partition sizes evaluated.
//!
//! Gradients are computed analytically -- each surrogate is a polynomial, so
//! the derivative is exact and needs no automatic differentiation.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::combinatorics::{for_each_combination, inclusion_exclusion_terms, InclExclTerm};
use crate::dataset::{RelaxedDataset, Schema};
use crate::error::{Error, Result};
use crate::workload::{
    advance_digits, consistent_query_count, decode_digits, threshold_query_count, AnswerVector,
    ConsistentQuery, Threshold, Workload,
};

/// Rows processed per parallel task. Fixed so that parallel reductions
/// combine partial sums in a deterministic order.
const ROW_CHUNK: usize = 64;

/// Largest threshold arity supported by the polynomial expansion; keeps all
/// inclusion-exclusion coefficients exactly representable.
pub const MAX_K: usize = 16;

/// Distinct one-hot coordinate indices, at most one per feature block when
/// built from a consistent query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureIndexSet {
    coords: Vec<usize>,
}

impl FeatureIndexSet {
    pub fn new(mut coords: Vec<usize>) -> Result<Self> {
        coords.sort_unstable();
        if coords.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Workload(
                "feature index set has duplicate coordinates".into(),
            ));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn disjoint_from(&self, other: &FeatureIndexSet) -> bool {
        // both sorted; merge scan
        let (mut i, mut j) = (0, 0);
        while i < self.coords.len() && j < other.coords.len() {
            match self.coords[i].cmp(&other.coords[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }
}

/// The evaluation plan for one polynomial threshold query: the `k` target
/// coordinates, the original `r`, whether the complement transform was
/// applied, and the `r'` actually evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyThresholdSpec {
    coords: Vec<usize>,
    r: usize,
    negated: bool,
    effective_r: usize,
}

impl PolyThresholdSpec {
    /// Build a spec from target coordinates and threshold `r`. Applies the
    /// complement transform exactly when `r <= k/2` (boundary included).
    pub fn new(coords: FeatureIndexSet, r: usize) -> Result<Self> {
        let k = coords.len();
        if k == 0 || k > MAX_K {
            return Err(Error::Workload(format!(
                "threshold arity {k} outside supported 1..={MAX_K}"
            )));
        }
        if r < 1 || r > k {
            return Err(Error::Workload(format!("r = {r} out of range for k = {k}")));
        }
        let negated = 2 * r <= k;
        let effective_r = if negated { k - r + 1 } else { r };
        debug_assert!(!negated || 2 * effective_r > k);
        Ok(Self {
            coords: coords.coords,
            r,
            negated,
            effective_r,
        })
    }

    pub fn from_query(query: &ConsistentQuery, schema: &Schema) -> Result<Self> {
        let coords = target_coordinates(query, schema)?;
        Self::new(coords, query.threshold.r())
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn k(&self) -> usize {
        self.coords.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn negated(&self) -> bool {
        self.negated
    }

    pub fn effective_r(&self) -> usize {
        self.effective_r
    }
}

/// Map a consistent query to its one-hot target coordinates: feature `f_i`
/// with target `y_i` contributes coordinate `block_offset(f_i) + y_i`.
pub fn target_coordinates(query: &ConsistentQuery, schema: &Schema) -> Result<FeatureIndexSet> {
    query.threshold.validate_against(schema)?;
    if query.targets.len() != query.threshold.k() {
        return Err(Error::Workload("target tuple length differs from k".into()));
    }
    let mut coords = Vec::with_capacity(query.threshold.k());
    for (&f, &y) in query.threshold.features().iter().zip(&query.targets) {
        if (y as usize) >= schema.cardinality(f) {
            return Err(Error::Workload(format!(
                "target {y} out of range for feature {f}"
            )));
        }
        coords.push(schema.block_offset(f) + y as usize);
    }
    FeatureIndexSet::new(coords)
}

/// Product query: the product of the selected coordinates. The empty set
/// yields 1 (empty product).
pub fn product_query(row: &[f64], set: &FeatureIndexSet) -> f64 {
    set.coords.iter().map(|&c| row[c]).product()
}

/// Generalized product query: positive factors from `t_plus`, negated
/// factors `(1 - x)` from `t_minus`. The sets must be disjoint.
pub fn generalized_product(
    row: &[f64],
    t_plus: &FeatureIndexSet,
    t_minus: &FeatureIndexSet,
) -> Result<f64> {
    if !t_plus.disjoint_from(t_minus) {
        return Err(Error::Workload(
            "generalized product sets must be disjoint".into(),
        ));
    }
    let pos: f64 = t_plus.coords.iter().map(|&c| row[c]).product();
    let neg: f64 = t_minus.coords.iter().map(|&c| 1.0 - row[c]).product();
    Ok(pos * neg)
}

/// Inclusion-exclusion polynomial threshold evaluation over explicit
/// coordinates, with no complement transform:
/// `sum_{i=r}^{k} (-1)^(i-r) C(i-1, i-r) sum_{|T_i|=i} prod_{c in T_i} x_c`.
pub fn poly_threshold_direct(row: &[f64], coords: &[usize], r: usize) -> f64 {
    let k = coords.len();
    let mut vals = [0.0f64; MAX_K];
    for (j, &c) in coords.iter().enumerate() {
        vals[j] = row[c];
    }
    eval_terms(&vals[..k], &inclusion_exclusion_terms(k, r))
}

/// Partition-sum form: the sum of generalized product queries over all
/// partitions `(T+, T-)` of the coordinates with `|T+| >= r`. Kept as an
/// independent route for cross-checking the inclusion-exclusion form.
pub fn poly_threshold_by_partitions(row: &[f64], coords: &[usize], r: usize) -> f64 {
    let k = coords.len();
    let mut total = 0.0;
    for size in r..=k {
        for_each_combination(k, size, |members| {
            let mut term = 1.0;
            let mut mi = 0;
            for (pos, &c) in coords.iter().enumerate() {
                if mi < members.len() && members[mi] == pos {
                    term *= row[c];
                    mi += 1;
                } else {
                    term *= 1.0 - row[c];
                }
            }
            total += term;
        });
    }
    total
}

/// Evaluate a polynomial threshold query on one relaxed row. On one-hot rows
/// this equals the boolean r-of-k predicate exactly; on general relaxed rows
/// the value may leave `[0,1]` and is deliberately not clamped (clamping
/// would zero gradients during optimization).
pub fn poly_threshold(row: &[f64], spec: &PolyThresholdSpec) -> f64 {
    let terms = inclusion_exclusion_terms(spec.k(), spec.effective_r);
    poly_threshold_with_terms(row, spec, &terms)
}

fn poly_threshold_with_terms(row: &[f64], spec: &PolyThresholdSpec, terms: &[InclExclTerm]) -> f64 {
    let k = spec.k();
    let mut vals = [0.0f64; MAX_K];
    if spec.negated {
        for (j, &c) in spec.coords.iter().enumerate() {
            vals[j] = 1.0 - row[c];
        }
        1.0 - eval_terms(&vals[..k], terms)
    } else {
        for (j, &c) in spec.coords.iter().enumerate() {
            vals[j] = row[c];
        }
        eval_terms(&vals[..k], terms)
    }
}

fn eval_terms(vals: &[f64], terms: &[InclExclTerm]) -> f64 {
    let mut acc = 0.0;
    for t in terms {
        let mut prod = t.coeff;
        for &m in &t.members {
            prod *= vals[m as usize];
        }
        acc += prod;
    }
    acc
}

/// Gradient of the polynomial in `vals` (the transformed coordinates),
/// accumulated into `grad` scaled by `scale`. Uses prefix/suffix products
/// per term so a term of size s costs O(s).
fn accumulate_term_gradient(vals: &[f64], terms: &[InclExclTerm], scale: f64, grad: &mut [f64]) {
    let mut prefix = [0.0f64; MAX_K + 1];
    let mut suffix = [0.0f64; MAX_K + 1];
    for t in terms {
        let s = t.members.len();
        prefix[0] = 1.0;
        for i in 0..s {
            prefix[i + 1] = prefix[i] * vals[t.members[i] as usize];
        }
        suffix[s] = 1.0;
        for i in (0..s).rev() {
            suffix[i] = suffix[i + 1] * vals[t.members[i] as usize];
        }
        for i in 0..s {
            grad[t.members[i] as usize] += scale * t.coeff * prefix[i] * suffix[i + 1];
        }
    }
}

fn term_cache_for(specs: &[PolyThresholdSpec]) -> HashMap<(usize, usize), Vec<InclExclTerm>> {
    let mut cache = HashMap::new();
    for s in specs {
        cache
            .entry((s.k(), s.effective_r))
            .or_insert_with(|| inclusion_exclusion_terms(s.k(), s.effective_r));
    }
    cache
}

/// Mean of each surrogate query over all relaxed rows. Row chunks evaluate
/// in parallel; partial sums combine in fixed order so results are
/// deterministic.
pub fn surrogate_answers(relaxed: &RelaxedDataset, specs: &[PolyThresholdSpec]) -> Vec<f64> {
    if specs.is_empty() {
        return Vec::new();
    }
    let cache = term_cache_for(specs);
    let n = relaxed.n_prime();
    let d_prime = relaxed.d_prime();
    let values = relaxed.values();
    let partials: Vec<Vec<f64>> = values
        .par_chunks(ROW_CHUNK * d_prime)
        .map(|chunk| {
            let mut acc = vec![0.0; specs.len()];
            for row in chunk.chunks_exact(d_prime) {
                for (q, spec) in specs.iter().enumerate() {
                    let terms = &cache[&(spec.k(), spec.effective_r)];
                    acc[q] += poly_threshold_with_terms(row, spec, terms);
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; specs.len()];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n as f64;
    }
    out
}

/// Squared-error loss against target answers, with its exact analytic
/// gradient with respect to every relaxed entry:
/// `loss = sum_q (mean_row phi_q - target_q)^2`.
pub fn loss_and_gradient(
    relaxed: &RelaxedDataset,
    specs: &[PolyThresholdSpec],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if specs.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} queries vs {} targets",
            specs.len(),
            targets.len()
        )));
    }
    let n = relaxed.n_prime();
    let d_prime = relaxed.d_prime();
    let means = surrogate_answers(relaxed, specs);
    let residuals: Vec<f64> = means.iter().zip(targets).map(|(m, t)| m - t).collect();
    let loss: f64 = residuals.iter().map(|e| e * e).sum();

    let cache = term_cache_for(specs);
    // 2 e_q / n' folded into the per-query scale; gradient rows are disjoint
    // so row-parallel accumulation is exact.
    let scales: Vec<f64> = residuals.iter().map(|e| 2.0 * e / n as f64).collect();
    let mut grad = vec![0.0; n * d_prime];
    let values = relaxed.values();
    grad.par_chunks_mut(ROW_CHUNK * d_prime)
        .zip(values.par_chunks(ROW_CHUNK * d_prime))
        .for_each(|(grad_chunk, row_chunk)| {
            let mut vals = [0.0f64; MAX_K];
            let mut local = [0.0f64; MAX_K];
            for (grow, row) in grad_chunk
                .chunks_exact_mut(d_prime)
                .zip(row_chunk.chunks_exact(d_prime))
            {
                for (q, spec) in specs.iter().enumerate() {
                    if scales[q] == 0.0 {
                        continue;
                    }
                    let k = spec.k();
                    let terms = &cache[&(spec.k(), spec.effective_r)];
                    if spec.negated {
                        for (j, &c) in spec.coords.iter().enumerate() {
                            vals[j] = 1.0 - row[c];
                        }
                    } else {
                        for (j, &c) in spec.coords.iter().enumerate() {
                            vals[j] = row[c];
                        }
                    }
                    local[..k].fill(0.0);
                    // d phi / d x_c equals the inner polynomial's gradient at
                    // the transformed point for both branches: the two sign
                    // flips of the complement transform cancel.
                    accumulate_term_gradient(&vals[..k], terms, scales[q], &mut local[..k]);
                    for (j, &c) in spec.coords.iter().enumerate() {
                        grow[c] += local[j];
                    }
                }
            }
        });
    Ok((loss, grad))
}

/// Streaming surrogate evaluator for every consistent query of one
/// threshold, in canonical target order. Queries of a threshold share their
/// coordinate layout, so per row only the `k` addressed entries are read.
pub struct ThresholdSurrogate {
    offsets: Vec<usize>,
    cards: Vec<u64>,
    negated: bool,
    terms: Vec<InclExclTerm>,
}

impl ThresholdSurrogate {
    pub fn new(threshold: &Threshold, schema: &Schema) -> Result<Self> {
        threshold.validate_against(schema)?;
        let k = threshold.k();
        if k > MAX_K {
            return Err(Error::Workload(format!(
                "threshold arity {k} outside supported 1..={MAX_K}"
            )));
        }
        let r = threshold.r();
        let negated = 2 * r <= k;
        let effective_r = if negated { k - r + 1 } else { r };
        Ok(Self {
            offsets: threshold
                .features()
                .iter()
                .map(|&f| schema.block_offset(f))
                .collect(),
            cards: threshold
                .features()
                .iter()
                .map(|&f| schema.cardinality(f) as u64)
                .collect(),
            negated,
            terms: inclusion_exclusion_terms(k, effective_r),
        })
    }

    /// Mean surrogate answers for local query indices
    /// `[start, start + out.len())`, averaged over all relaxed rows.
    pub fn answers_range(&self, relaxed: &RelaxedDataset, start: u64, out: &mut [f64]) {
        let k = self.offsets.len();
        let d_prime = relaxed.d_prime();
        let n = relaxed.n_prime();
        let values = relaxed.values();
        let batch = out.len();
        let partials: Vec<Vec<f64>> = values
            .par_chunks(ROW_CHUNK * d_prime)
            .map(|chunk| {
                let mut acc = vec![0.0; batch];
                let mut digits = decode_digits(start, &self.cards);
                let mut vals = [0.0f64; MAX_K];
                for row in chunk.chunks_exact(d_prime) {
                    digits.copy_from_slice(&decode_digits(start, &self.cards));
                    for slot in acc.iter_mut() {
                        if self.negated {
                            for j in 0..k {
                                vals[j] = 1.0 - row[self.offsets[j] + digits[j] as usize];
                            }
                            *slot += 1.0 - eval_terms(&vals[..k], &self.terms);
                        } else {
                            for j in 0..k {
                                vals[j] = row[self.offsets[j] + digits[j] as usize];
                            }
                            *slot += eval_terms(&vals[..k], &self.terms);
                        }
                        advance_digits(&mut digits, &self.cards, k);
                    }
                }
                acc
            })
            .collect();
        out.fill(0.0);
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        let inv = 1.0 / n as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
}

/// Stream surrogate answers for every consistent query of a workload in
/// canonical order, with per-threshold buffers capped at `batch_cap`.
pub fn workload_surrogate_answers_streamed(
    relaxed: &RelaxedDataset,
    workload: &Workload,
    schema: &Schema,
    batch_cap: usize,
    mut sink: impl FnMut(u64, &[f64]),
) -> Result<()> {
    if batch_cap == 0 {
        return Err(Error::Config("batch cap must be positive".into()));
    }
    let mut global: u64 = 0;
    let mut buf: Vec<f64> = Vec::new();
    for t in workload.thresholds() {
        let total = threshold_query_count(t, schema)?;
        let eval = ThresholdSurrogate::new(t, schema)?;
        let mut local: u64 = 0;
        while local < total {
            let len = ((total - local).min(batch_cap as u64)) as usize;
            buf.clear();
            buf.resize(len, 0.0);
            debug_assert!(buf.len() <= batch_cap);
            eval.answers_range(relaxed, local, &mut buf);
            sink(global + local, &buf);
            local += len as u64;
        }
        global += total;
    }
    Ok(())
}

/// Collected form of [`workload_surrogate_answers_streamed`].
pub fn workload_surrogate_answers(
    relaxed: &RelaxedDataset,
    workload: &Workload,
    schema: &Schema,
    batch_cap: usize,
) -> Result<AnswerVector> {
    let m = consistent_query_count(workload, schema)?;
    let mut values = vec![0.0; m as usize];
    workload_surrogate_answers_streamed(relaxed, workload, schema, batch_cap, |start, batch| {
        values[start as usize..start as usize + batch.len()].copy_from_slice(batch);
    })?;
    Ok(AnswerVector { values })
}
