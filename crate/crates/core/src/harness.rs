//! Experiment harness: configuration, grid execution, seeding, timing,
//! per-iteration training logs, and CSV result emission.
//!
//! A grid is the Cartesian product of the config's list-valued fields. Each
//! cell runs `trials` independent repetitions; trial seeds derive from the
//! root seed by XOR with the trial index, so any cell reproduces in
//! isolation and execution order cannot affect row contents.

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::generalization::{
    drift, estimate_future_error, make_distribution, sample_iid_workload, AnswerSource,
    DistributionKind, DriftParams, ThresholdDistributionSpec,
};
use crate::mechanism::{
    baseline_all_zero, baseline_gm, present_error, rap_observed, KChoice, RapConfig, RapObserver,
    SelectionMode,
};
use crate::privacy::DpParams;
use crate::projection::OptimizerConfig;
use crate::seeding::{derived_rng, STREAM_DRIFT, STREAM_FUTURE, STREAM_WORKLOAD};
use crate::surrogate::{workload_surrogate_answers, ThresholdSurrogate};
use crate::workload::{
    sample_uniform_workload, threshold_query_count, threshold_true_answers, true_answers,
    AnswerVector, Threshold, Workload, DEFAULT_BATCH_CAP,
};

/// How delta is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaMode {
    /// `delta = 1 / n^2` from the loaded dataset.
    AutoNSquared,
    Explicit(f64),
}

impl DeltaMode {
    pub fn resolve(&self, n: usize) -> f64 {
        match self {
            DeltaMode::AutoNSquared => 1.0 / ((n as f64) * (n as f64)),
            DeltaMode::Explicit(v) => *v,
        }
    }
}

impl Serialize for DeltaMode {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DeltaMode::AutoNSquared => ser.serialize_str("auto"),
            DeltaMode::Explicit(v) => ser.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaMode {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = DeltaMode;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a float in (0,1)")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<DeltaMode, E> {
                Ok(DeltaMode::Explicit(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<DeltaMode, E> {
                Ok(DeltaMode::Explicit(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<DeltaMode, E> {
                if v.eq_ignore_ascii_case("auto") {
                    Ok(DeltaMode::AutoNSquared)
                } else {
                    v.parse::<f64>().map(DeltaMode::Explicit).map_err(E::custom)
                }
            }
        }
        de.deserialize_any(V)
    }
}

/// Which mechanism a cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Rap,
    Gm,
    All0,
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            MechanismKind::Rap => f.write_str("RAP"),
            MechanismKind::Gm => f.write_str("GM"),
            MechanismKind::All0 => f.write_str("All-0"),
        }
    }
}

/// Full experiment description; list-valued fields span the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub schema_path: Option<PathBuf>,
    pub delimiter: char,
    pub mechanisms: Vec<MechanismKind>,
    pub epsilons: Vec<f64>,
    pub delta: DeltaMode,
    pub workload_sizes: Vec<usize>,
    pub r: usize,
    pub k: usize,
    pub rounds: Vec<usize>,
    pub selections: Vec<KChoice>,
    pub n_prime: usize,
    pub optimizer: OptimizerConfig,
    pub selection_mode: SelectionMode,
    /// `None` runs the prespecified setting (uniform workloads without
    /// replacement); `Some` runs the partial-knowledge setting with i.i.d.
    /// historical workloads from this feature distribution.
    pub distribution: Option<DistributionKind>,
    pub gammas: Vec<f64>,
    pub historical_workload_size: usize,
    pub future_samples: usize,
    pub trials: usize,
    pub root_seed: u64,
    pub batch_cap: usize,
    pub log_training: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_path: PathBuf::new(),
            schema_path: None,
            delimiter: ',',
            mechanisms: vec![MechanismKind::Rap, MechanismKind::Gm, MechanismKind::All0],
            epsilons: vec![1.0],
            delta: DeltaMode::AutoNSquared,
            workload_sizes: vec![16],
            r: 3,
            k: 3,
            rounds: vec![1],
            selections: vec![KChoice::All],
            n_prime: 1000,
            optimizer: OptimizerConfig::default(),
            selection_mode: SelectionMode::Oneshot,
            distribution: None,
            gammas: vec![0.0],
            historical_workload_size: 64,
            future_samples: 100,
            trials: 5,
            root_seed: 0,
            batch_cap: DEFAULT_BATCH_CAP,
            log_training: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty()
            || self.epsilons.is_empty()
            || self.workload_sizes.is_empty()
            || self.rounds.is_empty()
            || self.selections.is_empty()
            || self.gammas.is_empty()
        {
            return Err(Error::Config("grid lists must be non-empty".into()));
        }
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.r < 1 || self.r > self.k {
            return Err(Error::Config(format!(
                "r = {} out of range for k = {}",
                self.r, self.k
            )));
        }
        for &t in &self.rounds {
            for &k_sel in &self.selections {
                if t != 1 && k_sel == KChoice::All {
                    return Err(Error::Config(
                        "grid contains T > 1 with K = all, which is infeasible".into(),
                    ));
                }
            }
        }
        self.optimizer.validate()?;
        if let Some(kind) = self.distribution {
            make_distribution(kind, self.k.max(2))?;
            if self.future_samples < 2 {
                return Err(Error::Config("future_samples must be at least 2".into()));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("bad config {path:?}: {e}")))?;
        Ok(cfg)
    }
}

/// One fully instantiated grid cell.
#[derive(Debug, Clone)]
pub struct CellConfig {
    pub mechanism: MechanismKind,
    pub epsilon: f64,
    pub delta: DeltaMode,
    pub workload_size: usize,
    pub r: usize,
    pub k: usize,
    pub rounds_t: usize,
    pub per_round_k: KChoice,
    pub n_prime: usize,
    pub optimizer: OptimizerConfig,
    pub selection_mode: SelectionMode,
    pub distribution: Option<DistributionKind>,
    pub gamma: f64,
    pub future_samples: usize,
    pub trials: usize,
    pub root_seed: u64,
    pub batch_cap: usize,
    pub log_training: bool,
}

/// One result row: a self-describing record of a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mechanism: String,
    pub epsilon: f64,
    pub delta: f64,
    pub workload_size: usize,
    pub r: usize,
    pub k: usize,
    pub rounds_t: usize,
    pub per_round_k: String,
    pub n_prime: usize,
    pub selection_mode: String,
    pub distribution: String,
    pub gamma: f64,
    pub trial: usize,
    pub seed: u64,
    pub query_count: u64,
    pub err_present: f64,
    pub err_future: Option<f64>,
    pub err_future_ci95: Option<f64>,
    pub runtime_ms: f64,
    pub peak_query_buffer: u64,
    pub budget_ledger_total: f64,
    pub status: String,
}

/// One record of the training-progress log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLogRecord {
    pub trial: usize,
    pub round: usize,
    pub iteration: usize,
    pub loss: f64,
    pub err_present: f64,
    pub err_future: Option<f64>,
}

fn distribution_label(kind: Option<DistributionKind>) -> String {
    match kind {
        None => "none".to_string(),
        Some(DistributionKind::Uniform) => "uniform".to_string(),
        Some(DistributionKind::Zipf { s }) => format!("zipf(s={s})"),
        Some(DistributionKind::Geometric { p }) => format!("geometric(p={p})"),
    }
}

/// Observer computing per-iteration loss, present error, and future error
/// on a fixed pre-sampled future workload (fixed so the curve is comparable
/// across iterations).
struct TrainingLogger<'a> {
    trial: usize,
    dataset: &'a Dataset,
    workload: &'a Workload,
    truth: &'a AnswerVector,
    batch_cap: usize,
    /// Pre-sampled future thresholds with their true answers.
    future: Vec<(Threshold, Vec<f64>)>,
    records: Vec<TrainingLogRecord>,
}

impl RapObserver for TrainingLogger<'_> {
    fn on_rp_iteration(
        &mut self,
        round: usize,
        iteration: usize,
        loss: f64,
        synthetic: &crate::dataset::RelaxedDataset,
    ) {
        let schema = self.dataset.schema();
        let err_present =
            workload_surrogate_answers(synthetic, self.workload, schema, self.batch_cap)
                .and_then(|mut est| {
                    for v in &mut est.values {
                        *v = v.clamp(0.0, 1.0);
                    }
                    present_error(self.truth, &est)
                })
                .unwrap_or(f64::NAN);
        let err_future = if self.future.is_empty() {
            None
        } else {
            let mut acc = 0.0;
            for (t, truth) in &self.future {
                let total = truth.len();
                let eval = ThresholdSurrogate::new(t, schema).expect("pre-validated threshold");
                let mut est = vec![0.0; total];
                eval.answers_range(synthetic, 0, &mut est);
                let linf = truth
                    .iter()
                    .zip(&est)
                    .map(|(a, b)| (a - b.clamp(0.0, 1.0)).abs())
                    .fold(0.0, f64::max);
                acc += linf;
            }
            Some(acc / self.future.len() as f64)
        };
        self.records.push(TrainingLogRecord {
            trial: self.trial,
            round,
            iteration,
            loss,
            err_present,
            err_future,
        });
    }
}

struct NoLog;

impl RapObserver for NoLog {
    fn on_rp_iteration(&mut self, _: usize, _: usize, _: f64, _: &crate::dataset::RelaxedDataset) {}
}

/// Run every trial of one cell. A failing trial produces an error row, not
/// a panic; training logs are returned when the cell asks for them.
pub fn run_cell(dataset: &Dataset, cell: &CellConfig) -> (Vec<ResultRow>, Vec<TrainingLogRecord>) {
    let mut rows = Vec::with_capacity(cell.trials);
    let mut logs = Vec::new();
    for trial in 0..cell.trials {
        let seed = cell.root_seed ^ trial as u64;
        match run_trial(dataset, cell, trial, seed, &mut logs) {
            Ok(row) => rows.push(row),
            Err(e) => rows.push(error_row(dataset, cell, trial, seed, &e)),
        }
    }
    (rows, logs)
}

fn base_row(dataset: &Dataset, cell: &CellConfig, trial: usize, seed: u64) -> ResultRow {
    ResultRow {
        mechanism: cell.mechanism.to_string(),
        epsilon: cell.epsilon,
        delta: cell.delta.resolve(dataset.n()),
        workload_size: cell.workload_size,
        r: cell.r,
        k: cell.k,
        rounds_t: cell.rounds_t,
        per_round_k: cell.per_round_k.to_string(),
        n_prime: cell.n_prime,
        selection_mode: cell.selection_mode.to_string(),
        distribution: distribution_label(cell.distribution),
        gamma: cell.gamma,
        trial,
        seed,
        query_count: 0,
        err_present: f64::NAN,
        err_future: None,
        err_future_ci95: None,
        runtime_ms: 0.0,
        peak_query_buffer: 0,
        budget_ledger_total: 0.0,
        status: "ok".to_string(),
    }
}

fn error_row(
    dataset: &Dataset,
    cell: &CellConfig,
    trial: usize,
    seed: u64,
    err: &Error,
) -> ResultRow {
    let mut row = base_row(dataset, cell, trial, seed);
    row.status = format!("error: {err}");
    row
}

fn run_trial(
    dataset: &Dataset,
    cell: &CellConfig,
    trial: usize,
    seed: u64,
    logs: &mut Vec<TrainingLogRecord>,
) -> Result<ResultRow> {
    let schema = dataset.schema();
    let delta = cell.delta.resolve(dataset.n());
    let params = DpParams::new(cell.epsilon, delta)?;

    // Workload: prespecified (uniform, without replacement) or historical
    // (i.i.d. from the feature distribution).
    let (workload, future_spec) = match cell.distribution {
        None => {
            let w = sample_uniform_workload(
                cell.r,
                cell.k,
                cell.workload_size,
                schema,
                &mut derived_rng(seed, STREAM_WORKLOAD),
            )?;
            (w, None)
        }
        Some(kind) => {
            let historical = make_distribution(kind, schema.d())?;
            let spec = ThresholdDistributionSpec::new(historical.clone(), cell.r, cell.k)?;
            let w = sample_iid_workload(
                &spec,
                cell.workload_size,
                &mut derived_rng(seed, STREAM_WORKLOAD),
            )?;
            let future_features = drift(
                &historical,
                &DriftParams::new(cell.gamma)?,
                &mut derived_rng(seed, STREAM_DRIFT),
            )?;
            let future = ThresholdDistributionSpec::new(future_features, cell.r, cell.k)?;
            (w, Some(future))
        }
    };

    let truth = true_answers(dataset, &workload)?;
    let peak_buffer = workload
        .thresholds()
        .iter()
        .map(|t| threshold_query_count(t, schema).unwrap_or(u64::MAX))
        .max()
        .unwrap_or(0)
        .min(cell.batch_cap as u64);

    let mut row = base_row(dataset, cell, trial, seed);
    row.query_count = truth.len() as u64;
    row.peak_query_buffer = peak_buffer;

    let started = Instant::now();
    let (answers, ledger_total, synthetic) = match cell.mechanism {
        MechanismKind::All0 => (baseline_all_zero(&workload, schema)?, 0.0, None),
        MechanismKind::Gm => {
            let (ans, ledger) = baseline_gm(dataset, &workload, &params, seed)?;
            (ans, ledger.total(), None)
        }
        MechanismKind::Rap => {
            let rap_config = RapConfig {
                rounds_t: cell.rounds_t,
                per_round_k: cell.per_round_k,
                n_prime: cell.n_prime,
                optimizer: cell.optimizer,
                selection: cell.selection_mode,
                seed,
                batch_cap: cell.batch_cap,
            };
            let out = if cell.log_training {
                let future = match &future_spec {
                    None => Vec::new(),
                    Some(spec) => {
                        let mut rng = derived_rng(seed, STREAM_FUTURE);
                        let mut pre = Vec::with_capacity(cell.future_samples);
                        for _ in 0..cell.future_samples {
                            let t = crate::generalization::sample_threshold(spec, &mut rng)?;
                            let answers = threshold_true_answers(dataset, &t)?;
                            pre.push((t, answers));
                        }
                        pre
                    }
                };
                let mut logger = TrainingLogger {
                    trial,
                    dataset,
                    workload: &workload,
                    truth: &truth,
                    batch_cap: cell.batch_cap,
                    future,
                    records: Vec::new(),
                };
                let (out, _) = rap_observed(dataset, &workload, &params, &rap_config, &mut logger)?;
                logs.append(&mut logger.records);
                out
            } else {
                let (out, _) = rap_observed(dataset, &workload, &params, &rap_config, &mut NoLog)?;
                out
            };
            let total = out.budget_ledger.total();
            (out.answers.clone(), total, Some(out.synthetic))
        }
    };
    row.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    row.budget_ledger_total = ledger_total;
    row.err_present = present_error(&truth, &answers)?;

    if let Some(spec) = &future_spec {
        let source = match cell.mechanism {
            MechanismKind::All0 => Some(AnswerSource::AllZero),
            MechanismKind::Rap => synthetic.as_ref().map(AnswerSource::Synthetic),
            // the GM baseline answers only the prespecified queries and
            // cannot answer unseen future queries
            MechanismKind::Gm => None,
        };
        if let Some(source) = source {
            let (mean, half) = estimate_future_error(
                source,
                dataset,
                spec,
                cell.future_samples,
                &mut derived_rng(seed, STREAM_FUTURE),
            )?;
            row.err_future = Some(mean);
            row.err_future_ci95 = Some(half);
        }
    }
    Ok(row)
}

/// Per-(epsilon, workload size, gamma) summary: the adaptivity setting with
/// minimal mean present error, ties broken by smaller T then smaller K.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub epsilon: f64,
    pub workload_size: usize,
    pub gamma: f64,
    pub best_t: usize,
    pub best_k: String,
    pub mean_err_present: f64,
}

/// Grid outcome: every row (in deterministic cell order) plus the summary.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryCell>,
    pub training_logs: Vec<TrainingLogRecord>,
}

/// Run the whole grid. Rows stream through `on_row` as they complete.
pub fn run_grid(
    dataset: &Dataset,
    config: &ExperimentConfig,
    mut on_row: impl FnMut(&ResultRow),
) -> Result<GridOutcome> {
    config.validate()?;
    let workload_sizes: Vec<usize> = if config.distribution.is_none() {
        config.workload_sizes.clone()
    } else {
        vec![config.historical_workload_size]
    };
    let gammas: Vec<f64> = if config.distribution.is_none() {
        vec![0.0]
    } else {
        config.gammas.clone()
    };

    let mut rows = Vec::new();
    let mut training_logs = Vec::new();
    for &mechanism in &config.mechanisms {
        let adaptivity: Vec<(usize, KChoice)> = match mechanism {
            MechanismKind::Rap => {
                let mut v = Vec::new();
                for &t in &config.rounds {
                    for &k_sel in &config.selections {
                        v.push((t, k_sel));
                    }
                }
                v
            }
            // baselines have no adaptivity axis
            _ => vec![(0, KChoice::Count(0))],
        };
        for &epsilon in &config.epsilons {
            for &workload_size in &workload_sizes {
                for &gamma in &gammas {
                    for &(rounds_t, per_round_k) in &adaptivity {
                        let cell = CellConfig {
                            mechanism,
                            epsilon,
                            delta: config.delta,
                            workload_size,
                            r: config.r,
                            k: config.k,
                            rounds_t,
                            per_round_k,
                            n_prime: config.n_prime,
                            optimizer: config.optimizer,
                            selection_mode: config.selection_mode,
                            distribution: config.distribution,
                            gamma,
                            future_samples: config.future_samples,
                            trials: config.trials,
                            root_seed: config.root_seed,
                            batch_cap: config.batch_cap,
                            log_training: config.log_training && mechanism == MechanismKind::Rap,
                        };
                        let (cell_rows, mut cell_logs) = run_cell(dataset, &cell);
                        for row in &cell_rows {
                            on_row(row);
                        }
                        rows.extend(cell_rows);
                        training_logs.append(&mut cell_logs);
                    }
                }
            }
        }
    }
    let summary = summarize(&rows);
    Ok(GridOutcome {
        rows,
        summary,
        training_logs,
    })
}

/// Reduce RAP rows to the best (T, K) per (epsilon, workload size, gamma).
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryCell> {
    use std::collections::BTreeMap;
    type AdaptivityStats = BTreeMap<(usize, String), (f64, usize)>;
    // key: (eps bits, workload, gamma bits) -> (t, k) -> (sum, count)
    let mut acc: BTreeMap<(u64, usize, u64), AdaptivityStats> = BTreeMap::new();
    for row in rows {
        if row.mechanism != MechanismKind::Rap.to_string() || row.status != "ok" {
            continue;
        }
        let key = (
            row.epsilon.to_bits(),
            row.workload_size,
            row.gamma.to_bits(),
        );
        let slot = acc
            .entry(key)
            .or_default()
            .entry((row.rounds_t, row.per_round_k.clone()))
            .or_insert((0.0, 0));
        slot.0 += row.err_present;
        slot.1 += 1;
    }
    let mut out = Vec::new();
    for ((eps_bits, workload_size, gamma_bits), settings) in acc {
        let mut best: Option<(f64, usize, String)> = None;
        for ((t, k), (sum, count)) in settings {
            let mean = sum / count as f64;
            let k_rank = k.parse::<u64>().unwrap_or(u64::MAX); // "all" sorts last
            let better = match &best {
                None => true,
                Some((bm, bt, bk)) => {
                    let bk_rank = bk.parse::<u64>().unwrap_or(u64::MAX);
                    mean < *bm || (mean == *bm && (t < *bt || (t == *bt && k_rank < bk_rank)))
                }
            };
            if better {
                best = Some((mean, t, k));
            }
        }
        if let Some((mean, t, k)) = best {
            out.push(SummaryCell {
                epsilon: f64::from_bits(eps_bits),
                workload_size,
                gamma: f64::from_bits(gamma_bits),
                best_t: t,
                best_k: k,
                mean_err_present: mean,
            });
        }
    }
    out
}

/// Append rows to a CSV file; the header is written when the file is new or
/// empty (fixed column order, one header row always present).
pub fn write_result_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let existing = std::fs::metadata(path)
        .map(|m| m.len() > 0)
        .unwrap_or(false);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(!existing)
        .from_writer(file);
    for row in rows {
        wtr.serialize(row)
            .map_err(|e| Error::Parse(format!("row serialization failed: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Write the training-progress log as CSV.
pub fn write_training_log(path: &Path, records: &[TrainingLogRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Error::Parse(format!("cannot open {path:?}: {e}")))?;
    for rec in records {
        wtr.serialize(rec)
            .map_err(|e| Error::Parse(format!("log serialization failed: {e}")))?;
    }
    wtr.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// One point of the drift/total-variation curve.
#[derive(Debug, Clone, Serialize)]
pub struct TvPoint {
    pub gamma: f64,
    pub mean_tv: f64,
    pub ci95: f64,
}

/// Mean total-variation distance between a feature distribution and its
/// drifted counterpart, across independent trials per gamma.
pub fn drift_tv_curve(
    kind: DistributionKind,
    d: usize,
    gammas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<TvPoint>> {
    if trials < 2 {
        return Err(Error::Config("tv curve needs at least 2 trials".into()));
    }
    let base = make_distribution(kind, d)?;
    let mut out = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let params = DriftParams::new(gamma)?;
        let mut tvs = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut rng = derived_rng(seed ^ trial as u64, STREAM_DRIFT);
            let drifted = drift(&base, &params, &mut rng)?;
            tvs.push(crate::generalization::total_variation(&base, &drifted)?);
        }
        let n = tvs.len() as f64;
        let mean = tvs.iter().sum::<f64>() / n;
        let var = tvs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        out.push(TvPoint {
            gamma,
            mean_tv: mean,
            ci95: 1.96 * (var / n).sqrt(),
        });
    }
    Ok(out)
}

/// Write the TV curve as CSV.
pub fn write_tv_curve(path: &Path, points: &[TvPoint]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    writeln!(file, "gamma,mean_tv,ci95").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    for p in points {
        writeln!(file, "{},{},{}", p.gamma, p.mean_tv, p.ci95).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}
