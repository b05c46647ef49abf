use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tpfl::config::{parse_config, DatasetName, ExperimentSelection, PartialConfig, RunConfig};
use tpfl::federation::Strategy;

#[derive(Parser)]
#[command(
    name = "tpfl",
    version,
    about = "Confidence-clustered federated Tsetlin Machine simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or all of the five experimental setups.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist, fashion_mnist or femnist.
    #[arg(long)]
    dataset: Option<DatasetName>,
    /// Directory holding *images-idx3-ubyte[.gz] / *labels-idx1-ubyte[.gz] pairs.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// 1-5 or `all`.
    #[arg(long)]
    experiment: Option<ExperimentSelection>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// Clauses per class.
    #[arg(long)]
    clauses: Option<usize>,
    /// Feedback threshold T.
    #[arg(long = "threshold-T")]
    threshold_t: Option<u32>,
    #[arg(long)]
    sensitivity: Option<f64>,
    /// TA states per action N.
    #[arg(long)]
    states: Option<u8>,
    /// Pixel booleanization threshold (strictly greater is 1).
    #[arg(long)]
    binarize_threshold: Option<u8>,
    #[arg(long)]
    alpha_iid: Option<f64>,
    #[arg(long)]
    alpha_noniid: Option<f64>,
    /// Scale of the global train/test/confidence pools (1.0 = 30000/15000/15000).
    #[arg(long)]
    fraction: Option<f64>,
    /// tpfl or global_average.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long = "out")]
    out_dir: Option<PathBuf>,
    /// Worker threads for client training; defaults to one per core.
    #[arg(long)]
    workers: Option<usize>,
    /// Score confidence with weighted clause votes.
    #[arg(long)]
    weighted_confidence: bool,
    #[arg(long)]
    bytes_per_weight: Option<usize>,
    /// Score confidence on the train set when a client's confidence set is empty.
    #[arg(long)]
    conf_fallback_to_train: bool,
}

impl RunArgs {
    fn overrides(&self) -> PartialConfig {
        PartialConfig {
            dataset: self.dataset,
            data_dir: self.data_dir.clone(),
            experiment: self.experiment,
            clients: self.clients,
            rounds: self.rounds,
            epochs: self.epochs,
            clauses: self.clauses,
            threshold_t: self.threshold_t,
            sensitivity: self.sensitivity,
            states: self.states,
            binarize_threshold: self.binarize_threshold,
            alpha_iid: self.alpha_iid,
            alpha_noniid: self.alpha_noniid,
            fraction: self.fraction,
            strategy: self.strategy,
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            workers: self.workers,
            weighted_confidence: self.weighted_confidence.then_some(true),
            bytes_per_weight: self.bytes_per_weight,
            conf_fallback_to_train: self.conf_fallback_to_train.then_some(true),
        }
    }
}

fn write_error_report(out_dir: &Path, err: &anyhow::Error) {
    let chain: Vec<String> = err.chain().map(ToString::to_string).collect();
    let report = serde_json::json!({ "error": err.to_string(), "chain": chain });
    let path = out_dir.join("error.json");
    if std::fs::create_dir_all(out_dir).is_ok() {
        if let Err(e) = std::fs::write(&path, format!("{report:#}\n")) {
            log::error!("could not write {}: {e}", path.display());
        }
    }
}

fn run(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let config =
        parse_config(args.config.as_deref(), args.overrides()).context("invalid configuration")?;
    tpfl::runner::run(&config).context("run failed")?;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(&args) {
            Ok(config) => {
                log::info!("reports written to {}", config.out_dir.display());
                ExitCode::SUCCESS
            }
            Err(err) => {
                let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
                write_error_report(&out_dir, &err);
                eprintln!("error: {err:#}");
                ExitCode::FAILURE
            }
        },
    }
}
