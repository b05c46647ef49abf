//! End-to-end execution of the requested experimental setups.

use std::fs;

use log::info;

use crate::config::RunConfig;
use crate::dataset::{load_dir, RawDataset, IMAGE_PIXELS};
use crate::error::{Error, Result};
use crate::exec::with_workers;
use crate::federation::Federation;
use crate::metrics::{emit_reports, ExperimentRun};
use crate::partition::{build_experiment_plan, ExperimentSpec, SplitSizes};
use crate::rng::{derive_seed, stream};

pub const CONFIG_ECHO_FILE: &str = "config.json";

pub fn load_dataset(config: &RunConfig) -> Result<RawDataset> {
    let dir = config.resolve_data_dir()?;
    load_dir(&dir)?.with_class_count(config.dataset.class_count())
}

/// Runs one experiment (1-5) on an already loaded dataset.
pub fn run_experiment(
    config: &RunConfig,
    dataset: &RawDataset,
    experiment: u8,
) -> Result<ExperimentRun> {
    let spec = ExperimentSpec {
        index: experiment,
        client_count: config.clients,
        dataset: config.dataset.as_str().to_owned(),
        seed: config.seed,
        alphas: (config.alpha_iid, config.alpha_noniid),
        splits: SplitSizes::FULL.scaled(config.fraction),
    };
    let plan = build_experiment_plan(&spec, dataset)?;
    let fed_seed = derive_seed(config.seed, stream::EXPERIMENT, u64::from(experiment));
    let fed_config = config.federation_config(IMAGE_PIXELS, fed_seed);
    let mut federation = Federation::new(fed_config, &plan, dataset)?;
    let reports = federation.run(|r| {
        info!(
            "experiment {experiment} round {}: mean accuracy {:.4}, {} clusters, {} B up / {} B down",
            r.round,
            r.mean_accuracy,
            r.cluster_count(),
            r.upload_bytes,
            r.download_bytes
        );
    })?;
    Ok(ExperimentRun {
        experiment,
        reports,
    })
}

/// Echoes the config into `out_dir`, runs every selected experiment on
/// `dataset` and writes the reports.
pub fn run_with_dataset(config: &RunConfig, dataset: &RawDataset) -> Result<Vec<ExperimentRun>> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let echo = config.out_dir.join(CONFIG_ECHO_FILE);
    fs::write(&echo, config.to_json()? + "\n").map_err(|e| Error::io(&echo, e))?;

    let runs = with_workers(config.workers, || {
        config
            .experiment
            .indices()
            .into_iter()
            .map(|e| run_experiment(config, dataset, e))
            .collect::<Result<Vec<_>>>()
    })?;
    emit_reports(&runs, &config.out_dir)?;
    Ok(runs)
}

pub fn run(config: &RunConfig) -> Result<Vec<ExperimentRun>> {
    let dataset = load_dataset(config)?;
    info!(
        "loaded {} samples, {} classes",
        dataset.len(),
        dataset.class_count()
    );
    run_with_dataset(config, &dataset)
}
