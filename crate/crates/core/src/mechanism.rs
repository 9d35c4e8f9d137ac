//! The end-to-end mechanism: private query selection, measurement, and
//! relaxed projection, plus the trivial baselines.
//!
//! The non-adaptive branch (`T = 1, K = all`) measures every query with the
//! Gaussian mechanism at `rho / m` and runs one projection over all of them.
//! The adaptive branch runs `T` rounds; each round selects `K` new
//! high-error queries (iteratively by report-noisy-max, or in one shot by
//! top-K Gumbel selection), measures them, and re-projects over everything
//! selected so far. Noisy answers are retained across rounds. All sensitive
//! data reads flow through the three privacy mechanisms and are tagged in an
//! access log so tests can verify no read happens outside them.

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha20Rng;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{init_relaxed, Dataset, RelaxedDataset, Schema};
use crate::error::{Error, Result};
use crate::privacy::{
    eps_delta_to_rho, gaussian_mechanism, oneshot_top_k, report_noisy_max, BudgetLedger, DpParams,
    ErrorGapVector, ZcdpBudget,
};
use crate::projection::{project_rows, relaxed_projection_observed, OptimizerConfig};
use crate::seeding::{derived_rng, STREAM_INIT, STREAM_NOISE};
use crate::surrogate::{workload_surrogate_answers, PolyThresholdSpec};
use crate::workload::{
    consistent_query_count, query_at, true_answers_streamed, AnswerVector, Workload,
    DEFAULT_BATCH_CAP,
};

pub const MECH_GAUSSIAN: &str = "gaussian_mechanism";
pub const MECH_RNM: &str = "report_noisy_max";
pub const MECH_ONESHOT: &str = "oneshot_top_k";

/// Queries selected per adaptive round: a count, or the whole workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Count(usize),
    All,
}

impl Serialize for KChoice {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KChoice::Count(n) => ser.serialize_u64(*n as u64),
            KChoice::All => ser.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct KVisitor;
        impl<'de> Visitor<'de> for KVisitor {
            type Value = KChoice;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive integer or the string \"all\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<KChoice, E> {
                Ok(KChoice::Count(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<KChoice, E> {
                if v < 1 {
                    return Err(E::custom("K must be at least 1"));
                }
                Ok(KChoice::Count(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<KChoice, E> {
                if v.eq_ignore_ascii_case("all") {
                    Ok(KChoice::All)
                } else {
                    v.parse::<usize>().map(KChoice::Count).map_err(E::custom)
                }
            }
        }
        de.deserialize_any(KVisitor)
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            KChoice::Count(n) => write!(f, "{n}"),
            KChoice::All => f.write_str("all"),
        }
    }
}

/// How each adaptive round picks its K queries. Both modes have identical
/// output distributions; oneshot needs a single pass over the gaps and is
/// the default. The iterative mode is kept for the equivalence tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Iterative,
    Oneshot,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            SelectionMode::Iterative => f.write_str("iterative"),
            SelectionMode::Oneshot => f.write_str("oneshot"),
        }
    }
}

/// Full mechanism configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapConfig {
    pub rounds_t: usize,
    pub per_round_k: KChoice,
    pub n_prime: usize,
    pub optimizer: OptimizerConfig,
    pub selection: SelectionMode,
    pub seed: u64,
    #[serde(default = "default_batch_cap")]
    pub batch_cap: usize,
}

fn default_batch_cap() -> usize {
    DEFAULT_BATCH_CAP
}

impl Default for RapConfig {
    fn default() -> Self {
        Self {
            rounds_t: 1,
            per_round_k: KChoice::All,
            n_prime: 1000,
            optimizer: OptimizerConfig::default(),
            selection: SelectionMode::Oneshot,
            seed: 0,
            batch_cap: DEFAULT_BATCH_CAP,
        }
    }
}

impl RapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds_t < 1 {
            return Err(Error::Config("rounds_t must be at least 1".into()));
        }
        if self.n_prime < 1 {
            return Err(Error::Config("n_prime must be at least 1".into()));
        }
        if self.batch_cap < 1 {
            return Err(Error::Config("batch_cap must be at least 1".into()));
        }
        match self.per_round_k {
            KChoice::All if self.rounds_t != 1 => Err(Error::Config(
                "K = all is only legal in the non-adaptive branch (T = 1)".into(),
            )),
            KChoice::Count(0) => Err(Error::Config("per-round K must be at least 1".into())),
            _ => self.optimizer.validate(),
        }
    }
}

/// Selected queries with their retained noisy answers, ordered by global
/// query index.
#[derive(Debug, Clone, Default)]
pub struct SelectedQueries {
    entries: BTreeMap<u64, (PolyThresholdSpec, f64)>,
}

impl SelectedQueries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, index: u64) -> bool {
        self.entries.contains_key(&index)
    }

    pub fn insert(&mut self, index: u64, spec: PolyThresholdSpec, noisy_answer: f64) -> Result<()> {
        if self.entries.insert(index, (spec, noisy_answer)).is_some() {
            return Err(Error::Workload(format!("query {index} selected twice")));
        }
        Ok(())
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    /// Specs and targets in index order, ready for the projection step.
    pub fn specs_and_targets(&self) -> (Vec<PolyThresholdSpec>, Vec<f64>) {
        let mut specs = Vec::with_capacity(self.entries.len());
        let mut targets = Vec::with_capacity(self.entries.len());
        for (spec, ans) in self.entries.values() {
            specs.push(spec.clone());
            targets.push(*ans);
        }
        (specs, targets)
    }
}

/// Which privacy mechanism a sensitive-data read served.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataAccess {
    GaussianMechanism,
    ReportNoisyMax,
    OneshotTopK,
}

/// Log of every sensitive-data read performed by a run, tagged with the
/// mechanism it fed and the number of query answers touched.
#[derive(Debug, Clone, Default)]
pub struct AccessLog {
    pub reads: Vec<(DataAccess, u64)>,
}

/// The only gateway to true answers during a run. Answers are computed once
/// and cached; every read must name the privacy mechanism consuming it.
struct GuardedAnswers<'a> {
    dataset: &'a Dataset,
    workload: &'a Workload,
    batch_cap: usize,
    cache: Option<Vec<f64>>,
    log: AccessLog,
}

impl<'a> GuardedAnswers<'a> {
    fn new(dataset: &'a Dataset, workload: &'a Workload, batch_cap: usize) -> Self {
        Self {
            dataset,
            workload,
            batch_cap,
            cache: None,
            log: AccessLog::default(),
        }
    }

    fn answers(&mut self, purpose: DataAccess, queries_touched: u64) -> Result<&[f64]> {
        if self.cache.is_none() {
            let m = consistent_query_count(self.workload, self.dataset.schema())?;
            let mut values = vec![0.0; m as usize];
            true_answers_streamed(
                self.dataset,
                self.workload,
                self.batch_cap,
                |start, batch| {
                    values[start as usize..start as usize + batch.len()].copy_from_slice(batch);
                },
            )?;
            self.cache = Some(values);
        }
        self.log.reads.push((purpose, queries_touched));
        Ok(self.cache.as_ref().unwrap())
    }
}

/// Mechanism output: the synthetic dataset, answers to the full workload
/// (clamped to `[0,1]` for reporting), and the budget ledger.
#[derive(Debug, Clone)]
pub struct RapOutput {
    pub synthetic: RelaxedDataset,
    pub answers: AnswerVector,
    pub budget_ledger: BudgetLedger,
}

impl RapOutput {
    /// Write the answers as a CSV column keyed by canonical query index.
    pub fn save_answers(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(file, "query_index,answer").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        for (i, v) in self.answers.values.iter().enumerate() {
            writeln!(file, "{i},{v}").map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        }
        Ok(())
    }

    /// Write the budget ledger as CSV rows of (mechanism, rho).
    pub fn save_ledger(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(file, "mechanism,rho").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        for entry in self.budget_ledger.entries() {
            writeln!(file, "{},{}", entry.mechanism, entry.rho).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        }
        Ok(())
    }
}

/// Per-iteration hook for training-progress logging.
pub trait RapObserver {
    fn on_rp_iteration(
        &mut self,
        round: usize,
        iteration: usize,
        loss: f64,
        synthetic: &RelaxedDataset,
    );
}

/// Observer that ignores everything.
pub struct NoopObserver;

impl RapObserver for NoopObserver {
    fn on_rp_iteration(&mut self, _: usize, _: usize, _: f64, _: &RelaxedDataset) {}
}

/// Run the full mechanism.
pub fn rap(
    dataset: &Dataset,
    workload: &Workload,
    params: &DpParams,
    config: &RapConfig,
) -> Result<RapOutput> {
    rap_observed(dataset, workload, params, config, &mut NoopObserver).map(|(out, _)| out)
}

/// Run the full mechanism, returning the instrumented access log alongside
/// the output.
pub fn rap_instrumented(
    dataset: &Dataset,
    workload: &Workload,
    params: &DpParams,
    config: &RapConfig,
) -> Result<(RapOutput, AccessLog)> {
    rap_observed(dataset, workload, params, config, &mut NoopObserver)
}

/// Run the full mechanism with a per-iteration observer.
pub fn rap_observed(
    dataset: &Dataset,
    workload: &Workload,
    params: &DpParams,
    config: &RapConfig,
    observer: &mut dyn RapObserver,
) -> Result<(RapOutput, AccessLog)> {
    config.validate()?;
    let schema = dataset.schema();
    workload.validate_against(schema)?;
    let m = consistent_query_count(workload, schema)?;
    let n = dataset.n();
    let rho = eps_delta_to_rho(params);

    let mut rng_noise: ChaCha20Rng = derived_rng(config.seed, STREAM_NOISE);
    let mut relaxed = init_relaxed(
        config.n_prime,
        schema,
        &mut derived_rng(config.seed, STREAM_INIT),
    );
    project_rows(&mut relaxed)?;

    let mut guard = GuardedAnswers::new(dataset, workload, config.batch_cap);
    let mut ledger = BudgetLedger::new();

    match config.per_round_k {
        KChoice::All => {
            // Non-adaptive: measure everything, project once.
            let each = ZcdpBudget::new(rho.rho() / m as f64)?;
            let answers = guard.answers(DataAccess::GaussianMechanism, m)?;
            let mut noisy = Vec::with_capacity(m as usize);
            for &a in answers {
                noisy.push(gaussian_mechanism(a, n, &each, &mut rng_noise));
                ledger.record(MECH_GAUSSIAN, each.rho());
            }
            let specs = specs_for_workload(workload, schema)?;
            relaxed_projection_observed(
                &mut relaxed,
                &specs,
                &noisy,
                &config.optimizer,
                |it, loss, cur| observer.on_rp_iteration(0, it, loss, cur),
            )?;
        }
        KChoice::Count(k) => {
            // Adaptive: cap the round count so every round selects at least
            // one query and the whole budget is spent.
            let t_eff = (config.rounds_t as u64).min(m.div_ceil(k as u64)) as usize;
            let rho_round = rho.rho() / t_eff as f64;
            let mut selected = SelectedQueries::new();
            for round in 0..t_eff {
                let remaining = m - selected.len() as u64;
                let k_r = (k as u64).min(remaining) as usize;
                adaptive_select_guarded(
                    &mut guard,
                    &relaxed,
                    &mut selected,
                    k_r,
                    k,
                    rho_round,
                    config.selection,
                    &mut rng_noise,
                    &mut ledger,
                )?;
                let (specs, targets) = selected.specs_and_targets();
                relaxed_projection_observed(
                    &mut relaxed,
                    &specs,
                    &targets,
                    &config.optimizer,
                    |it, loss, cur| observer.on_rp_iteration(round, it, loss, cur),
                )?;
            }
        }
    }

    let mut answers = workload_surrogate_answers(&relaxed, workload, schema, config.batch_cap)?;
    for v in &mut answers.values {
        *v = v.clamp(0.0, 1.0);
    }
    debug_assert!((ledger.total() - rho.rho()).abs() < 1e-9 * rho.rho().max(1.0));
    Ok((
        RapOutput {
            synthetic: relaxed,
            answers,
            budget_ledger: ledger,
        },
        guard.log,
    ))
}

/// One adaptive-selection round on raw inputs: compute the error gaps over
/// unselected queries, pick `k_new` of them privately, measure each with the
/// Gaussian mechanism, and add them to `selected`.
///
/// `scale_k` is the configured per-round K; when the final round is capped
/// (`k_new < scale_k`) the per-pick selection scale stays at the configured
/// K and the unused selection budget is folded into the round's measurement
/// budget, so the round still consumes exactly `round_budget`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_select(
    dataset: &Dataset,
    relaxed: &RelaxedDataset,
    workload: &Workload,
    selected: &mut SelectedQueries,
    k_new: usize,
    scale_k: usize,
    round_budget: f64,
    mode: SelectionMode,
    rng: &mut ChaCha20Rng,
    ledger: &mut BudgetLedger,
) -> Result<Vec<u64>> {
    let mut guard = GuardedAnswers::new(dataset, workload, DEFAULT_BATCH_CAP);
    adaptive_select_guarded(
        &mut guard,
        relaxed,
        selected,
        k_new,
        scale_k,
        round_budget,
        mode,
        rng,
        ledger,
    )
}

#[allow(clippy::too_many_arguments)]
fn adaptive_select_guarded(
    guard: &mut GuardedAnswers,
    relaxed: &RelaxedDataset,
    selected: &mut SelectedQueries,
    k_new: usize,
    scale_k: usize,
    round_budget: f64,
    mode: SelectionMode,
    rng: &mut ChaCha20Rng,
    ledger: &mut BudgetLedger,
) -> Result<Vec<u64>> {
    let schema = guard.dataset.schema();
    let workload = guard.workload;
    let m = consistent_query_count(workload, schema)?;
    let remaining = m - selected.len() as u64;
    if remaining == 0 {
        return Err(Error::Workload("no unselected queries remain".into()));
    }
    if k_new == 0 || (k_new as u64) > remaining || k_new > scale_k {
        return Err(Error::Config(format!(
            "k_new = {k_new} invalid for {remaining} remaining queries and configured K = {scale_k}"
        )));
    }
    let n = guard.dataset.n();
    let purpose = match mode {
        SelectionMode::Iterative => DataAccess::ReportNoisyMax,
        SelectionMode::Oneshot => DataAccess::OneshotTopK,
    };

    // Gap vector over unselected queries. The synthetic dataset is fixed for
    // the whole round, so the gaps are computed once and iterative selection
    // removes chosen entries instead of recomputing.
    let mut gaps = ErrorGapVector::new();
    {
        let mut estimates = vec![0.0; m as usize];
        let batch_cap = guard.batch_cap;
        crate::surrogate::workload_surrogate_answers_streamed(
            relaxed,
            workload,
            schema,
            batch_cap,
            |start, batch| {
                estimates[start as usize..start as usize + batch.len()].copy_from_slice(batch);
            },
        )?;
        let truth = guard.answers(purpose, remaining)?;
        for i in 0..m {
            if !selected.contains(i) {
                gaps.push(i, (truth[i as usize] - estimates[i as usize]).abs());
            }
        }
    }

    let sel_each = round_budget / (2.0 * scale_k as f64);
    let picked: Vec<u64> = match mode {
        SelectionMode::Iterative => {
            let mut out = Vec::with_capacity(k_new);
            for _ in 0..k_new {
                let idx = report_noisy_max(&gaps, n, &ZcdpBudget::new(sel_each)?, rng)?;
                ledger.record(MECH_RNM, sel_each);
                gaps.remove_index(idx);
                out.push(idx);
            }
            out.sort_unstable();
            out
        }
        SelectionMode::Oneshot => {
            let sel_budget = sel_each * k_new as f64;
            let out = oneshot_top_k(&gaps, k_new, n, &ZcdpBudget::new(sel_budget)?, rng)?;
            ledger.record(MECH_ONESHOT, sel_budget);
            out
        }
    };

    // Measurement; any selection budget unused by a capped round is folded in.
    let gm_each = round_budget / k_new as f64 - sel_each;
    let gm_budget = ZcdpBudget::new(gm_each)?;
    for &idx in &picked {
        let a_i = guard.answers(DataAccess::GaussianMechanism, 1)?[idx as usize];
        let noisy = gaussian_mechanism(a_i, n, &gm_budget, rng);
        ledger.record(MECH_GAUSSIAN, gm_each);
        let query = query_at(workload, schema, idx)?;
        selected.insert(idx, PolyThresholdSpec::from_query(&query, schema)?, noisy)?;
    }
    Ok(picked)
}

/// Materialize the surrogate specs of every consistent query, in canonical
/// order. Memory scales with `m`; intended for the non-adaptive branch at
/// moderate workload sizes.
pub fn specs_for_workload(workload: &Workload, schema: &Schema) -> Result<Vec<PolyThresholdSpec>> {
    let m = consistent_query_count(workload, schema)?;
    let mut specs = Vec::with_capacity(m as usize);
    for i in 0..m {
        let q = query_at(workload, schema, i)?;
        specs.push(PolyThresholdSpec::from_query(&q, schema)?);
    }
    Ok(specs)
}

/// Baseline answering 0 for every query.
pub fn baseline_all_zero(workload: &Workload, schema: &Schema) -> Result<AnswerVector> {
    let m = consistent_query_count(workload, schema)?;
    Ok(AnswerVector {
        values: vec![0.0; m as usize],
    })
}

/// Baseline answering every query directly with the Gaussian mechanism at
/// `rho / m`, clamped to `[0,1]` for reporting.
pub fn baseline_gm(
    dataset: &Dataset,
    workload: &Workload,
    params: &DpParams,
    seed: u64,
) -> Result<(AnswerVector, BudgetLedger)> {
    let schema = dataset.schema();
    workload.validate_against(schema)?;
    let m = consistent_query_count(workload, schema)?;
    let rho = eps_delta_to_rho(params);
    let each = ZcdpBudget::new(rho.rho() / m as f64)?;
    let n = dataset.n();
    let mut rng = derived_rng(seed, STREAM_NOISE);
    let mut ledger = BudgetLedger::new();
    let mut values = vec![0.0; m as usize];
    true_answers_streamed(dataset, workload, DEFAULT_BATCH_CAP, |start, batch| {
        for (off, &a) in batch.iter().enumerate() {
            values[start as usize + off] = a;
        }
    })?;
    for v in &mut values {
        *v = gaussian_mechanism(*v, n, &each, &mut rng).clamp(0.0, 1.0);
        ledger.record(MECH_GAUSSIAN, each.rho());
    }
    Ok((AnswerVector { values }, ledger))
}

/// Single-run present-error statistic: the max absolute answer error. The
/// expectation over mechanism randomness is estimated by averaging this
/// over independently seeded trials.
pub fn present_error(truth: &AnswerVector, estimate: &AnswerVector) -> Result<f64> {
    truth.max_abs_diff(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Feature;
    use crate::seeding::STREAM_WORKLOAD;
    use crate::workload::{true_answers, Threshold};
    use rand::Rng;

    fn schema(cards: &[usize]) -> Schema {
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

    fn random_dataset(cards: &[usize], n: usize, seed: u64) -> Dataset {
        let s = schema(cards);
        let mut rng = derived_rng(seed, STREAM_WORKLOAD);
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| cards.iter().map(|&t| rng.gen_range(0..t as u32)).collect())
            .collect();
        Dataset::from_records(s, rows).unwrap()
    }

    fn small_config(t: usize, k: KChoice, seed: u64) -> RapConfig {
        RapConfig {
            rounds_t: t,
            per_round_k: k,
            n_prime: 60,
            optimizer: OptimizerConfig {
                max_iterations: 250,
                patience: 25,
                ..OptimizerConfig::default()
            },
            selection: SelectionMode::Oneshot,
            seed,
            batch_cap: DEFAULT_BATCH_CAP,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = RapConfig {
            rounds_t: 4,
            ..RapConfig::default()
        };
        assert!(c.validate().is_err(), "T > 1 with K = all is infeasible");
        c.per_round_k = KChoice::Count(0);
        assert!(c.validate().is_err());
        c.per_round_k = KChoice::Count(2);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn kchoice_serde() {
        assert_eq!(serde_json::to_string(&KChoice::All).unwrap(), "\"all\"");
        assert_eq!(serde_json::to_string(&KChoice::Count(16)).unwrap(), "16");
        assert_eq!(
            serde_json::from_str::<KChoice>("\"all\"").unwrap(),
            KChoice::All
        );
        assert_eq!(
            serde_json::from_str::<KChoice>("7").unwrap(),
            KChoice::Count(7)
        );
    }

    #[test]
    fn non_adaptive_noiseless_recovers_true_answers() {
        // huge epsilon: GM is exact, so the projection target is the truth
        let ds = random_dataset(&[2, 2], 40, 3);
        let w = Workload::new(vec![Threshold::new(1, vec![0]).unwrap()]).unwrap();
        let params = DpParams::new(1e6, 1e-9).unwrap();
        let out = rap(&ds, &w, &params, &small_config(1, KChoice::All, 5)).unwrap();
        let truth = true_answers(&ds, &w).unwrap();
        let err = present_error(&truth, &out.answers).unwrap();
        assert!(err < 1e-3, "noiseless non-adaptive error {err}");
    }

    #[test]
    fn ledger_sums_to_rho_in_both_branches() {
        let ds = random_dataset(&[2, 3, 2], 60, 4);
        let w = Workload::new(vec![
            Threshold::new(2, vec![0, 1]).unwrap(),
            Threshold::new(1, vec![1, 2]).unwrap(),
        ])
        .unwrap();
        let params = DpParams::new(0.5, 1e-6).unwrap();
        let rho = eps_delta_to_rho(&params).rho();

        let non_adaptive = rap(&ds, &w, &params, &small_config(1, KChoice::All, 6)).unwrap();
        assert!((non_adaptive.budget_ledger.total() - rho).abs() <= 1e-12);

        let adaptive = rap(&ds, &w, &params, &small_config(3, KChoice::Count(2), 6)).unwrap();
        assert!((adaptive.budget_ledger.total() - rho).abs() <= 1e-12);
    }

    #[test]
    fn adaptive_selects_min_tk_m_distinct_queries() {
        let ds = random_dataset(&[2, 2, 2], 50, 7);
        // m = 3 thresholds x 4 = 12 queries; T = 4, K = 8 selects min(32, 12)
        let w = Workload::new(vec![
            Threshold::new(2, vec![0, 1]).unwrap(),
            Threshold::new(2, vec![0, 2]).unwrap(),
            Threshold::new(2, vec![1, 2]).unwrap(),
        ])
        .unwrap();
        let params = DpParams::new(1.0, 1e-6).unwrap();
        for seed in 0..5 {
            let out = rap(&ds, &w, &params, &small_config(4, KChoice::Count(8), seed)).unwrap();
            let gm_calls = out
                .budget_ledger
                .entries()
                .iter()
                .filter(|e| e.mechanism == MECH_GAUSSIAN)
                .count();
            assert_eq!(
                gm_calls, 12,
                "must select exactly min(TK, m) distinct queries"
            );
        }
    }

    #[test]
    fn rap_is_deterministic_given_seed() {
        let ds = random_dataset(&[3, 2], 80, 8);
        let w = Workload::new(vec![Threshold::new(1, vec![0, 1]).unwrap()]).unwrap();
        let params = DpParams::new(1.0, 1e-6).unwrap();
        let cfg = small_config(2, KChoice::Count(2), 42);
        let a = rap(&ds, &w, &params, &cfg).unwrap();
        let b = rap(&ds, &w, &params, &cfg).unwrap();
        assert_eq!(a.answers.values, b.answers.values);
        assert_eq!(a.synthetic.values(), b.synthetic.values());
        let c = rap(&ds, &w, &params, &small_config(2, KChoice::Count(2), 43)).unwrap();
        assert_ne!(a.answers.values, c.answers.values);
    }

    #[test]
    fn reported_answers_in_unit_interval() {
        let ds = random_dataset(&[2, 3], 30, 9);
        let w = Workload::new(vec![Threshold::new(1, vec![0, 1]).unwrap()]).unwrap();
        let params = DpParams::new(0.1, 1e-6).unwrap();
        let out = rap(&ds, &w, &params, &small_config(2, KChoice::Count(3), 1)).unwrap();
        assert!(out.answers.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(out.answers.values.len(), 6);
    }

    #[test]
    fn k1_iterative_and_oneshot_coincide_per_seed() {
        // with K = 1 both modes draw one Gumbel per gap at the same scale
        // and take the argmax, so at equal seeds the selections are identical
        let ds = random_dataset(&[2, 2, 3], 40, 10);
        let w = Workload::new(vec![Threshold::new(1, vec![0, 2]).unwrap()]).unwrap();
        let schema = ds.schema().clone();
        let mut relaxed = init_relaxed(10, &schema, &mut derived_rng(0, STREAM_INIT));
        project_rows(&mut relaxed).unwrap();
        for seed in 0..20 {
            let pick = |mode: SelectionMode| {
                let mut selected = SelectedQueries::new();
                let mut ledger = BudgetLedger::new();
                let mut rng = derived_rng(seed, STREAM_NOISE);
                adaptive_select(
                    &ds,
                    &relaxed,
                    &w,
                    &mut selected,
                    1,
                    1,
                    0.2,
                    mode,
                    &mut rng,
                    &mut ledger,
                )
                .unwrap()
            };
            assert_eq!(pick(SelectionMode::Iterative), pick(SelectionMode::Oneshot));
        }
    }

    #[test]
    fn noiseless_selection_picks_largest_gaps() {
        // diagonal cells carry strictly separated answers, everything else 0
        let s = schema(&[4, 4]);
        let mut rows = Vec::new();
        for (v, copies) in [(0u32, 40usize), (1, 30), (2, 20), (3, 10)] {
            rows.extend(std::iter::repeat_n(vec![v, v], copies));
        }
        let ds = Dataset::from_records(s.clone(), rows).unwrap();
        let w = Workload::new(vec![Threshold::new(2, vec![0, 1]).unwrap()]).unwrap();
        // uniform synthetic rows: every estimate is 1/16, so the largest
        // gaps are the diagonal cells 0.4, 0.3, 0.2 at indices 0, 5, 10
        let mut relaxed = init_relaxed(10, &s, &mut derived_rng(0, STREAM_INIT));
        project_rows(&mut relaxed).unwrap();
        let uniform = vec![0.25f64; 8];
        for i in 0..relaxed.n_prime() {
            relaxed.row_mut(i).copy_from_slice(&uniform);
        }
        for seed in 0..50 {
            let mut selected = SelectedQueries::new();
            let mut ledger = BudgetLedger::new();
            let mut rng = derived_rng(seed, STREAM_NOISE);
            let picked = adaptive_select(
                &ds,
                &relaxed,
                &w,
                &mut selected,
                3,
                3,
                1e12,
                SelectionMode::Oneshot,
                &mut rng,
                &mut ledger,
            )
            .unwrap();
            assert_eq!(picked, vec![0, 5, 10]);
        }
    }

    #[test]
    fn baselines() {
        let ds = random_dataset(&[2, 2], 50, 12);
        let w = Workload::new(vec![Threshold::new(2, vec![0, 1]).unwrap()]).unwrap();
        let zeros = baseline_all_zero(&w, ds.schema()).unwrap();
        assert!(zeros.values.iter().all(|&v| v == 0.0));
        let truth = true_answers(&ds, &w).unwrap();
        let max_true = truth.values.iter().cloned().fold(0.0, f64::max);
        assert_eq!(present_error(&truth, &zeros).unwrap(), max_true);

        let params = DpParams::new(1e6, 1e-9).unwrap();
        let (gm, ledger) = baseline_gm(&ds, &w, &params, 0).unwrap();
        let rho = eps_delta_to_rho(&params).rho();
        assert!((ledger.total() - rho).abs() <= 1e-9 * rho);
        for (a, b) in gm.values.iter().zip(&truth.values) {
            assert!((a - b).abs() < 1e-3, "huge-budget GM must match truth");
        }
    }

    #[test]
    fn present_error_examples() {
        let a = AnswerVector {
            values: vec![0.2, 0.9],
        };
        let b = AnswerVector {
            values: vec![0.25, 0.5],
        };
        assert!((present_error(&a, &b).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(present_error(&a, &a).unwrap(), 0.0);
        let short = AnswerVector { values: vec![0.1] };
        assert!(present_error(&a, &short).is_err());
    }

    #[test]
    fn access_log_covers_only_mechanism_reads() {
        let ds = random_dataset(&[2, 2, 2], 40, 13);
        let w = Workload::new(vec![
            Threshold::new(1, vec![0, 1]).unwrap(),
            Threshold::new(2, vec![1, 2]).unwrap(),
        ])
        .unwrap();
        let params = DpParams::new(1.0, 1e-6).unwrap();
        let (out, log) =
            rap_instrumented(&ds, &w, &params, &small_config(2, KChoice::Count(2), 14)).unwrap();
        assert!(!log.reads.is_empty());
        // 2 rounds: one selection read each, plus one GM read per measured query
        let selection_reads = log
            .reads
            .iter()
            .filter(|(p, _)| matches!(p, DataAccess::OneshotTopK | DataAccess::ReportNoisyMax))
            .count();
        let gm_reads = log
            .reads
            .iter()
            .filter(|(p, _)| matches!(p, DataAccess::GaussianMechanism))
            .count();
        assert_eq!(selection_reads, 2);
        assert_eq!(gm_reads, 4);
        assert_eq!(log.reads.len(), selection_reads + gm_reads);
        assert!((out.budget_ledger.total() - eps_delta_to_rho(&params).rho()).abs() <= 1e-12);
    }
}
