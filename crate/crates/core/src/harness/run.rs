use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use super::source::{build_tables, load_dataset, SimSource};
use super::spec::ExperimentSpec;
use crate::cues::CueTables;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::net::{
    bin_range, evaluate_indices, save_checkpoint, split_indices, train, Evaluation, History,
    Predictor,
};
use crate::scene::Dataset;

pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const SPEC_FILE: &str = "spec.toml";
pub const THREADS_ENV: &str = "CUEDEPTH_THREADS";

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Replace existing seed directories.
    pub force: bool,
    /// Write metrics, history and checkpoints under the spec's output
    /// directory.
    pub persist: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            force: false,
            persist: true,
        }
    }
}

#[derive(Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub history: History,
    pub val_indices: Vec<usize>,
    pub evaluation: Evaluation,
    pub predictor: Predictor,
}

#[derive(Debug)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: Error,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub name: String,
    pub results: Vec<SeedResult>,
    pub failures: Vec<SeedFailure>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn reports(&self) -> Vec<MetricsReport> {
        self.results.iter().map(|r| r.metrics).collect()
    }

    pub fn mean_rms(&self) -> f64 {
        self.results.iter().map(|r| r.metrics.rms).sum::<f64>() / self.results.len() as f64
    }
}

/// Number of seeds trained concurrently.
pub fn seed_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Refuses to touch an experiment whose seed directories already exist.
pub fn check_outputs(spec: &ExperimentSpec, force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    let existing: Vec<String> = spec
        .seeds
        .iter()
        .map(|&s| spec.seed_dir(s))
        .filter(|d| d.exists())
        .map(|d| d.display().to_string())
        .collect();
    if existing.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "outputs already exist (use --force to replace): {}",
            existing.join(", ")
        )))
    }
}

pub fn run_experiment(spec: &ExperimentSpec, opts: RunOptions) -> Result<RunOutcome> {
    spec.validate()?;
    if opts.persist {
        check_outputs(spec, opts.force)?;
    }
    let dataset = load_dataset(&spec.dataset)?;
    run_on_dataset(spec, &dataset, opts)
}

/// Trains every seed of `spec` on an already materialized dataset. Errors
/// that concern the whole experiment are returned; errors of one seed are
/// recorded and the other seeds continue.
pub fn run_on_dataset(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    opts: RunOptions,
) -> Result<RunOutcome> {
    spec.validate()?;
    if opts.persist {
        check_outputs(spec, opts.force)?;
    }
    let tables = build_tables(&spec.tables, &dataset.manifest.catalog, &spec.cues)?;
    let source = SimSource::new(dataset, spec.cues, &tables, spec.noise)?;
    if opts.persist {
        let root = spec.output.join(&spec.name);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let path = root.join(SPEC_FILE);
        fs::write(&path, spec.to_toml()).map_err(|e| Error::io(&path, e))?;
        write_semantic_table(&root, &tables)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(seed_threads().min(spec.seeds.len()))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(u64, Result<SeedResult>)> = pool.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| (seed, run_seed(spec, dataset, &source, seed, opts.persist)))
            .collect()
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(error) => {
                log::error!("{} seed {seed}: {error}", spec.name);
                failures.push(SeedFailure { seed, error });
            }
        }
    }
    Ok(RunOutcome {
        name: spec.name.clone(),
        results,
        failures,
    })
}

fn write_semantic_table(root: &Path, tables: &CueTables) -> Result<()> {
    let path = root.join("semantic_table.txt");
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    tables
        .semantic
        .write(BufWriter::new(f))
        .map_err(|e| Error::io(&path, e))
}

fn run_seed(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    source: &SimSource,
    seed: u64,
    persist: bool,
) -> Result<SeedResult> {
    let mut net = spec.net_for_seed(seed);
    net.depth_range = bin_range(dataset.manifest.camera.depth_range);
    let mut predictor = Predictor::new(net, spec.cues)?;
    let history = train(&mut predictor, source)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), net.train.val_fraction, seed);
    let eval_idx = if val_idx.is_empty() {
        log::warn!(
            "{} seed {seed}: empty validation split, reporting training metrics",
            spec.name
        );
        &train_idx
    } else {
        &val_idx
    };
    let evaluation = evaluate_indices(&predictor, source, eval_idx)?;
    let metrics = evaluation.metrics;
    if persist {
        let dir = spec.seed_dir(seed);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(METRICS_FILE);
        let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(HISTORY_FILE);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        history
            .write_csv(BufWriter::new(f))
            .map_err(|e| Error::io(&path, e))?;
        save_checkpoint(&predictor, &dir.join("checkpoint"))?;
    }
    Ok(SeedResult {
        seed,
        metrics,
        history,
        val_indices: val_idx,
        evaluation,
        predictor,
    })
}
