//! Command-line driver for the private query-answering engine.
//!
//! Subcommands:
//! * `encode`     — infer a schema from a delimited table and persist it.
//! * `run`        — run one mechanism cell and emit result rows.
//! * `grid`       — run a full experiment grid from a JSON config file.
//! * `future-eval`— partial-knowledge experiment with drifting queries.
//! * `drift-tv`   — emit the total-variation-vs-gamma curve.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rap_core::dataset::{load_dataset, Schema};
use rap_core::generalization::DistributionKind;
use rap_core::harness::{
    drift_tv_curve, run_cell, run_grid, write_result_rows, write_training_log, write_tv_curve,
    CellConfig, DeltaMode, ExperimentConfig, MechanismKind, ResultRow,
};
use rap_core::mechanism::{KChoice, SelectionMode};
use rap_core::projection::OptimizerConfig;
use rap_core::workload::DEFAULT_BATCH_CAP;

#[derive(Parser)]
#[command(
    name = "rap",
    about = "Differentially private answering of r-of-k threshold workloads",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer a schema from a delimited table and write the JSON sidecar.
    Encode {
        /// Input table (delimited text with a header row).
        #[arg(long)]
        data: PathBuf,
        /// Where to write the schema sidecar.
        #[arg(long)]
        schema_out: PathBuf,
        #[arg(long, default_value = ",")]
        delimiter: char,
    },
    /// Run a single experiment cell.
    Run(RunArgs),
    /// Run a full experiment grid described by a JSON config file.
    Grid {
        /// JSON file with an experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Results CSV (appended; header written when new).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-iteration training log CSV (requires log_training in config).
        #[arg(long)]
        training_log: Option<PathBuf>,
        /// Override the dataset path from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override the root seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Partial-knowledge experiment: historical workload in, future error out.
    FutureEval(FutureEvalArgs),
    /// Emit the total-variation-vs-gamma drift curve.
    DriftTv {
        #[arg(long, default_value_t = 14)]
        d: usize,
        #[arg(long, default_value = "geometric", value_parser = parse_kind_name)]
        distribution: String,
        /// Zipf exponent or geometric parameter.
        #[arg(long, default_value_t = 0.5)]
        param: f64,
        /// Comma-separated gamma values.
        #[arg(long, default_value = "0,0.05,0.1,0.2,0.5,1", value_delimiter = ',')]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of thresholds in the sampled workload.
    #[arg(long, default_value_t = 16)]
    workload_size: usize,
    /// Adaptive rounds T (use 1 with --k-select all for non-adaptive).
    #[arg(long, default_value_t = 1)]
    t: usize,
    /// Queries selected per round: an integer or "all".
    #[arg(long, default_value = "all", value_parser = parse_kchoice)]
    k_select: KChoice,
    /// Mechanism: rap, gm, or all0.
    #[arg(long, default_value = "rap", value_parser = parse_mechanism)]
    mechanism: MechanismKind,
    /// Dump the learned synthetic dataset to this CSV path.
    #[arg(long)]
    synthetic_out: Option<PathBuf>,
    /// Dump the workload answers (query_index, answer) to this CSV path.
    #[arg(long)]
    answers_out: Option<PathBuf>,
    /// Dump the budget ledger (mechanism, rho) to this CSV path.
    #[arg(long)]
    ledger_out: Option<PathBuf>,
    /// Per-iteration training log CSV.
    #[arg(long)]
    training_log: Option<PathBuf>,
}

#[derive(Args)]
struct FutureEvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Historical workload size |W_H|.
    #[arg(long, default_value_t = 64)]
    historical: usize,
    /// Future thresholds sampled to estimate future error |W_F|.
    #[arg(long, default_value_t = 100)]
    future: usize,
    /// Feature distribution: uniform, zipf, or geometric.
    #[arg(long, default_value = "geometric", value_parser = parse_kind_name)]
    distribution: String,
    /// Zipf exponent or geometric parameter.
    #[arg(long, default_value_t = 0.5)]
    param: f64,
    /// Comma-separated drift amounts.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    gammas: Vec<f64>,
    /// Comma-separated adaptive round counts for the RAP grid.
    #[arg(long, default_value = "1,4,16", value_delimiter = ',')]
    t_list: Vec<usize>,
    /// Comma-separated per-round selection counts for the RAP grid.
    #[arg(long, default_value = "4,16,64", value_delimiter = ',')]
    k_list: Vec<usize>,
}

/// Flags shared by `run` and `future-eval`.
#[derive(Args)]
struct CommonArgs {
    /// Input table (delimited text with a header row).
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar; inferred from the data when omitted.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = ",")]
    delimiter: char,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// "auto" for 1/n^2, or an explicit value.
    #[arg(long, default_value = "auto", value_parser = parse_delta)]
    delta: DeltaMode,
    #[arg(long, default_value_t = 3)]
    r: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    n_prime: usize,
    /// Selection mode: oneshot or iterative.
    #[arg(long, default_value = "oneshot", value_parser = parse_selection)]
    selection: SelectionMode,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BATCH_CAP)]
    batch_cap: usize,
    /// Optimizer learning rate.
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Optimizer iteration cap per projection call.
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    /// Non-improving iterations tolerated before stopping.
    #[arg(long, default_value_t = 50)]
    patience: usize,
    /// Results CSV (appended); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kchoice(s: &str) -> Result<KChoice, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(KChoice::All)
    } else {
        s.parse::<usize>()
            .map(KChoice::Count)
            .map_err(|e| e.to_string())
    }
}

fn parse_delta(s: &str) -> Result<DeltaMode, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(DeltaMode::AutoNSquared)
    } else {
        s.parse::<f64>()
            .map(DeltaMode::Explicit)
            .map_err(|e| e.to_string())
    }
}

fn parse_mechanism(s: &str) -> Result<MechanismKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "rap" => Ok(MechanismKind::Rap),
        "gm" => Ok(MechanismKind::Gm),
        "all0" | "all-0" => Ok(MechanismKind::All0),
        other => Err(format!(
            "unknown mechanism {other:?} (expected rap, gm, or all0)"
        )),
    }
}

fn parse_selection(s: &str) -> Result<SelectionMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "oneshot" => Ok(SelectionMode::Oneshot),
        "iterative" => Ok(SelectionMode::Iterative),
        other => Err(format!("unknown selection mode {other:?}")),
    }
}

fn parse_kind_name(s: &str) -> Result<String, String> {
    match s.to_ascii_lowercase().as_str() {
        "uniform" | "zipf" | "geometric" => Ok(s.to_ascii_lowercase()),
        other => Err(format!("unknown distribution {other:?}")),
    }
}

fn kind_from(name: &str, param: f64) -> Result<DistributionKind> {
    Ok(match name {
        "uniform" => DistributionKind::Uniform,
        "zipf" => DistributionKind::Zipf { s: param },
        "geometric" => DistributionKind::Geometric { p: param },
        other => bail!("unknown distribution {other:?}"),
    })
}

fn emit_rows(out: Option<&PathBuf>, rows: &[ResultRow]) -> Result<()> {
    match out {
        Some(path) => {
            write_result_rows(path, rows)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => {
            let mut wtr = csv::WriterBuilder::new().from_writer(std::io::stdout());
            for row in rows {
                wtr.serialize(row)?;
            }
            wtr.flush()?;
        }
    }
    Ok(())
}

fn load_with_schema(common: &CommonArgs) -> Result<rap_core::dataset::Dataset> {
    let schema = match &common.schema {
        Some(path) => {
            Some(Schema::load(path).with_context(|| format!("loading schema {}", path.display()))?)
        }
        None => None,
    };
    let ds = load_dataset(&common.data, schema.as_ref(), common.delimiter as u8)
        .with_context(|| format!("loading dataset {}", common.data.display()))?;
    Ok(ds)
}

fn optimizer_from(common: &CommonArgs) -> OptimizerConfig {
    OptimizerConfig {
        learning_rate: common.learning_rate,
        max_iterations: common.max_iterations,
        patience: common.patience,
        ..OptimizerConfig::default()
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Encode {
            data,
            schema_out,
            delimiter,
        } => {
            let ds = load_dataset(&data, None, delimiter as u8)
                .with_context(|| format!("loading dataset {}", data.display()))?;
            ds.schema().save(&schema_out)?;
            eprintln!(
                "inferred schema: d = {}, d' = {}, n = {}; wrote {}",
                ds.schema().d(),
                ds.schema().d_prime(),
                ds.n(),
                schema_out.display()
            );
            Ok(())
        }
        Command::Run(args) => {
            let ds = load_with_schema(&args.common)?;
            let c = &args.common;
            let cell = CellConfig {
                mechanism: args.mechanism,
                epsilon: c.epsilon,
                delta: c.delta,
                workload_size: args.workload_size,
                r: c.r,
                k: c.k,
                rounds_t: args.t,
                per_round_k: args.k_select,
                n_prime: c.n_prime,
                optimizer: optimizer_from(c),
                selection_mode: c.selection,
                distribution: None,
                gamma: 0.0,
                future_samples: 0,
                trials: c.trials,
                root_seed: c.seed,
                batch_cap: c.batch_cap,
                log_training: args.training_log.is_some(),
            };
            let (rows, logs) = run_cell(&ds, &cell);
            if let Some(path) = &args.training_log {
                write_training_log(path, &logs)?;
            }
            let wants_artifacts = args.synthetic_out.is_some()
                || args.answers_out.is_some()
                || args.ledger_out.is_some();
            if wants_artifacts {
                // rerun the first trial's mechanism to dump its artifacts
                if args.mechanism != MechanismKind::Rap {
                    bail!("--synthetic-out/--answers-out/--ledger-out require --mechanism rap");
                }
                let params = rap_core::privacy::DpParams::new(c.epsilon, c.delta.resolve(ds.n()))?;
                let w = rap_core::workload::sample_uniform_workload(
                    c.r,
                    c.k,
                    args.workload_size,
                    ds.schema(),
                    &mut rap_core::seeding::derived_rng(c.seed, rap_core::seeding::STREAM_WORKLOAD),
                )?;
                let out = rap_core::mechanism::rap(
                    &ds,
                    &w,
                    &params,
                    &rap_core::mechanism::RapConfig {
                        rounds_t: args.t,
                        per_round_k: args.k_select,
                        n_prime: c.n_prime,
                        optimizer: optimizer_from(c),
                        selection: c.selection,
                        seed: c.seed,
                        batch_cap: c.batch_cap,
                    },
                )?;
                if let Some(path) = &args.synthetic_out {
                    out.synthetic.save(path, c.delimiter as u8)?;
                    eprintln!("wrote synthetic dataset to {}", path.display());
                }
                if let Some(path) = &args.answers_out {
                    out.save_answers(path)?;
                    eprintln!("wrote answers to {}", path.display());
                }
                if let Some(path) = &args.ledger_out {
                    out.save_ledger(path)?;
                    eprintln!("wrote budget ledger to {}", path.display());
                }
            }
            emit_rows(c.out.as_ref(), &rows)
        }
        Command::Grid {
            config,
            out,
            training_log,
            data,
            seed,
        } => {
            let mut cfg = ExperimentConfig::from_json_file(&config)?;
            if let Some(data) = data {
                cfg.dataset_path = data;
            }
            if let Some(seed) = seed {
                cfg.root_seed = seed;
            }
            let schema = match &cfg.schema_path {
                Some(path) => Some(Schema::load(path)?),
                None => None,
            };
            let ds = load_dataset(&cfg.dataset_path, schema.as_ref(), cfg.delimiter as u8)
                .with_context(|| format!("loading dataset {}", cfg.dataset_path.display()))?;
            let outcome = run_grid(&ds, &cfg, |row| {
                eprintln!(
                    "cell {} eps={} |W|={} T={} K={} trial={}: err_P={:.5} [{}]",
                    row.mechanism,
                    row.epsilon,
                    row.workload_size,
                    row.rounds_t,
                    row.per_round_k,
                    row.trial,
                    row.err_present,
                    row.status
                );
            })?;
            if let Some(path) = &out {
                write_result_rows(path, &outcome.rows)?;
                eprintln!("wrote {} rows to {}", outcome.rows.len(), path.display());
            } else {
                emit_rows(None, &outcome.rows)?;
            }
            if let Some(path) = &training_log {
                write_training_log(path, &outcome.training_logs)?;
            }
            eprintln!("--- best (T, K) per cell by mean present error ---");
            for s in &outcome.summary {
                eprintln!(
                    "eps={} |W|={} gamma={}: T={} K={} mean err_P={:.5}",
                    s.epsilon, s.workload_size, s.gamma, s.best_t, s.best_k, s.mean_err_present
                );
            }
            Ok(())
        }
        Command::FutureEval(args) => {
            let ds = load_with_schema(&args.common)?;
            let c = &args.common;
            let kind = kind_from(&args.distribution, args.param)?;
            let cfg = ExperimentConfig {
                dataset_path: c.data.clone(),
                schema_path: c.schema.clone(),
                delimiter: c.delimiter,
                mechanisms: vec![MechanismKind::Rap, MechanismKind::All0],
                epsilons: vec![c.epsilon],
                delta: c.delta,
                workload_sizes: vec![args.historical],
                r: c.r,
                k: c.k,
                rounds: args.t_list.clone(),
                selections: args.k_list.iter().map(|&k| KChoice::Count(k)).collect(),
                n_prime: c.n_prime,
                optimizer: optimizer_from(c),
                selection_mode: c.selection,
                distribution: Some(kind),
                gammas: args.gammas.clone(),
                historical_workload_size: args.historical,
                future_samples: args.future,
                trials: c.trials,
                root_seed: c.seed,
                batch_cap: c.batch_cap,
                log_training: false,
            };
            let outcome = run_grid(&ds, &cfg, |row| {
                eprintln!(
                    "cell {} gamma={} T={} K={} trial={}: err_P={:.5} err_F={:?} [{}]",
                    row.mechanism,
                    row.gamma,
                    row.rounds_t,
                    row.per_round_k,
                    row.trial,
                    row.err_present,
                    row.err_future,
                    row.status
                );
            })?;
            emit_rows(c.out.as_ref(), &outcome.rows)?;
            eprintln!("--- best (T, K) per gamma by mean present error ---");
            for s in &outcome.summary {
                eprintln!(
                    "gamma={}: T={} K={} mean err_P={:.5}",
                    s.gamma, s.best_t, s.best_k, s.mean_err_present
                );
            }
            Ok(())
        }
        Command::DriftTv {
            d,
            distribution,
            param,
            gammas,
            trials,
            seed,
            out,
        } => {
            let kind = kind_from(&distribution, param)?;
            let points = drift_tv_curve(kind, d, &gammas, trials, seed)?;
            match out {
                Some(path) => {
                    write_tv_curve(&path, &points)?;
                    eprintln!("wrote {} points to {}", points.len(), path.display());
                }
                None => {
                    println!("gamma,mean_tv,ci95");
                    for p in &points {
                        println!("{},{},{}", p.gamma, p.mean_tv, p.ci95);
                    }
                }
            }
            Ok(())
        }
    }
}
