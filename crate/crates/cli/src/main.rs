//! `fedpae` experiment CLI.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input/data error,
//! 4 internal invariant violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use fedpae::data::{
    generate_synthetic, partition_dirichlet, split_shard, write_csv, write_dataset_cache, write_partition_json,
    Dataset, PartitionFile, PartitionSpec, SplitFractions, SyntheticSpec,
};
use fedpae::harness::{
    emit_report, emit_sweep, estimate_breakdown, estimate_fedavg_flops, find_reports, load_dataset_file,
    read_bench_dir, read_report, report_json, results_csv, round_json, CostModelParams, ExperimentConfig,
    ExperimentReport, Method,
};
use fedpae::rng::derive_seed;
use fedpae::selection::{exhaustive_oracle, VotingRule};
use fedpae::{FedPaeError, Result};

#[derive(Parser)]
#[command(
    name = "fedpae",
    version,
    about = "Peer-adaptive ensemble federated learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture dataset (.csv, otherwise binary cache).
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dirichlet-partition a dataset and split every client into train/val/test.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_client_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment, or a sweep when several alphas or seeds are given.
    Run {
        /// Experiment JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured alpha; repeat or comma-separate to sweep.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Overrides the master seed (and FEDPAE_SEED); repeat or comma-separate to sweep.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
    },
    /// Summarize results.json files found in a run or sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Exhaustively search a stored bench for the best size-k ensemble.
    Oracle {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Voting::Soft)]
        voting: Voting,
    },
    /// Evaluate the FLOPs cost model.
    Cost {
        #[arg(long)]
        params: PathBuf,
        /// Also estimate FedAvg with this architecture from the same table.
        #[arg(long)]
        fedavg_arch: Option<String>,
        #[arg(long, default_value_t = 500)]
        rounds: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Voting {
    Soft,
    Hard,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, field: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| FedPaeError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| FedPaeError::config(field, format!("{}: {e}", path.display())))
}

fn print_json(v: Value) {
    let mut v = v;
    round_json(&mut v);
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn gen(spec: &Path, out: &Path) -> Result<()> {
    let spec: SyntheticSpec = read_json(spec, "spec")?;
    let data: Dataset<f64> = generate_synthetic(&spec)?;
    if out.extension().is_some_and(|e| e == "csv") {
        write_csv(&data, out)?;
    } else {
        write_dataset_cache(&data, out)?;
    }
    info!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

fn partition(data: &Path, alpha: f64, clients: usize, seed: u64, min: usize, out: &Path) -> Result<()> {
    let dataset: Dataset<f64> = load_dataset_file(data)?;
    let spec = PartitionSpec {
        min_client_samples: min,
        ..PartitionSpec::new(alpha, clients, seed)
    };
    let parts = partition_dirichlet(&dataset, &spec)?;
    let shards = parts
        .iter()
        .enumerate()
        .map(|(c, idx)| {
            split_shard(
                c,
                idx,
                &dataset,
                SplitFractions::default(),
                derive_seed(seed, "split", c as u64, 0),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_partition_json(&PartitionFile::from_shards(alpha, seed, &shards), out)?;
    info!("wrote {} clients to {}", shards.len(), out.display());
    Ok(())
}

fn run(config: Option<&Path>, out: &Path, alphas: &[f64], seeds: &[u64]) -> Result<()> {
    let mut base = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    base.apply_env_seed()?;
    let alphas = if alphas.is_empty() {
        vec![base.alpha]
    } else {
        alphas.to_vec()
    };
    let seeds = if seeds.is_empty() {
        vec![base.master_seed]
    } else {
        seeds.to_vec()
    };
    let mut outcomes = Vec::new();
    for &alpha in &alphas {
        for &seed in &seeds {
            let config = ExperimentConfig {
                alpha,
                master_seed: seed,
                ..base.clone()
            };
            info!("running alpha {alpha}, master seed {seed}");
            let outcome = fedpae::harness::run_experiment::<f64>(&config)?;
            info!("finished in {:.1}s", outcome.runtime_seconds);
            outcomes.push((format!("alpha_{alpha}_seed_{seed}"), outcome));
        }
    }
    if let [(_, only)] = outcomes.as_slice() {
        emit_report(only, out)
    } else {
        emit_sweep(&outcomes, out)
    }
}

fn summary(r: &ExperimentReport) -> Value {
    let methods: serde_json::Map<String, Value> = r
        .methods
        .iter()
        .map(|m| {
            (
                m.method.name().to_string(),
                json!({"mean": m.summary.mean, "ci95": m.summary.ci95, "sd": m.summary.sd}),
            )
        })
        .collect();
    let changes: Vec<f64> = r.relative_changes(Method::Fedpae).into_iter().flatten().collect();
    let worst = changes.iter().copied().reduce(f64::min);
    json!({
        "alpha": r.alpha,
        "master_seed": r.master_seed,
        "n_clients": r.n_clients,
        "methods": methods,
        "mean_local_fraction": r.fedpae.mean_local_fraction,
        "worst_relative_change": worst,
        "fedpae_flops": r.cost.fedpae.total,
        "fedavg_flops": r.cost.fedavg_estimate,
    })
}

fn report(input: &Path, format: Format) -> Result<()> {
    let paths = find_reports(input)?;
    let reports = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    match format {
        Format::Csv => print!("{}", results_csv(&reports.iter().collect::<Vec<_>>())),
        Format::Json if reports.len() == 1 => print!("{}", report_json(&reports[0])),
        Format::Json => print_json(Value::Array(reports.iter().map(summary).collect())),
    }
    Ok(())
}

fn oracle(bench: &Path, k: usize, voting: Voting) -> Result<()> {
    let (manifest, matrix) = read_bench_dir::<f64>(bench)?;
    let is_local: Vec<bool> = manifest.models.iter().map(|d| d.is_local).collect();
    let voting = match voting {
        Voting::Soft => VotingRule::Soft,
        Voting::Hard => VotingRule::Hard,
    };
    let best = exhaustive_oracle(&matrix, &is_local, k, voting)?;
    let ids: Vec<String> = best
        .mask
        .selected()
        .iter()
        .map(|&i| manifest.models[i].id.to_string())
        .collect();
    print_json(json!({
        "client": manifest.client,
        "k": k,
        "masks_evaluated": best.masks_evaluated,
        "oracle_mask": best.mask.to_string(),
        "oracle_model_ids": ids,
        "oracle_val_accuracy": best.val_accuracy,
        "oracle_local_fraction": best.local_fraction,
        "chosen_mask": manifest.chosen_mask,
        "chosen_val_accuracy": manifest.val_accuracy,
        "ratio": if best.val_accuracy > 0.0 { manifest.val_accuracy / best.val_accuracy } else { 1.0 },
    }));
    Ok(())
}

fn cost(params: &Path, fedavg_arch: Option<&str>, rounds: usize) -> Result<()> {
    let p: CostModelParams = read_json(params, "params")?;
    let b = estimate_breakdown(&p)?;
    let mut out = json!({
        "training": b.training,
        "search": b.search,
        "front_evaluation": b.front_evaluation,
        "total": b.total,
    });
    if let Some(arch) = fedavg_arch {
        out["fedavg"] = json!({
            "architecture": arch,
            "rounds": rounds,
            "total": estimate_fedavg_flops(&p, arch, rounds as f64)?,
        });
    }
    print_json(out);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out } => gen(&spec, &out),
        Command::Partition {
            data,
            alpha,
            clients,
            seed,
            min_client_samples,
            out,
        } => partition(&data, alpha, clients, seed, min_client_samples, &out),
        Command::Run {
            config,
            out,
            alpha,
            seed,
        } => run(config.as_deref(), &out, &alpha, &seed),
        Command::Report { input, format } => report(&input, format),
        Command::Oracle { bench, k, voting } => oracle(&bench, k, voting),
        Command::Cost {
            params,
            fedavg_arch,
            rounds,
        } => cost(&params, fedavg_arch.as_deref(), rounds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors, matching the configuration-error code
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
