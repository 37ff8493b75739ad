use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cuedepth::cues::{build_cue_map, CueEmbedders, CueResolver};
use cuedepth::harness::{
    build_tables, dataset_catalog, default_base, ingest_external_sample, load_dataset, report,
    run_ablation_suite, run_experiment, ExperimentSpec, GenerateBlock, RunOptions, SimSource,
    SuitePreset,
};
use cuedepth::metrics::MetricsReport;
use cuedepth::net::{evaluate_indices, load_checkpoint, split_indices, Predictor};
use cuedepth::scene::{generate_dataset, MANIFEST_FILE};
use cuedepth::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cuedepth",
    version,
    about = "Size-cue depth estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset from a TOML manifest.
    Gen(GenArgs),
    /// Train every seed of an experiment spec.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation split of a spec's dataset.
    Eval(EvalArgs),
    /// Run an ablation suite from a preset or from spec files.
    Ablate(AblateArgs),
    /// Build the cue map (and optionally a prediction) for an externally
    /// segmented image.
    Ingest(IngestArgs),
    /// Summarize finished runs.
    Report(ReportArgs),
    /// Dump the cue maps of a spec's dataset.
    Embed(EmbedArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generation manifest (seed, count, preset and optional camera/catalog).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the spec's seeds; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Replaces the spec's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Spec naming the dataset and the semantic tables.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed whose validation split is used; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Writes the metrics JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("suite").required(true).args(["preset", "specs"])))]
struct AblateArgs {
    /// `paper-table2-mini` or `embedding-ablation`.
    #[arg(long)]
    preset: Option<SuitePreset>,
    /// Spec files, one per row; the first is the baseline.
    #[arg(long, num_args = 1..)]
    specs: Vec<PathBuf>,
    /// Base spec for a preset (dataset, network, seeds).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Semantic label raster.
    #[arg(long)]
    labels: PathBuf,
    /// JSON instance descriptor naming the instance raster.
    #[arg(long)]
    instances: PathBuf,
    /// Appearance raster, `[H, W]`, `[1, H, W]` or `[3, H, W]`.
    #[arg(long)]
    appearance: PathBuf,
    /// `id,name` CSV for the semantic labels.
    #[arg(long)]
    classes: PathBuf,
    /// Spec providing the cue configuration and semantic tables.
    #[arg(long)]
    config: PathBuf,
    /// Trained predictor; its cue configuration and embedders are used and a
    /// depth map is predicted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Embedder seed when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    dir: PathBuf,
    /// Writes one validation-loss SVG per experiment.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trained predictor whose embedders are used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Embedder seed when no checkpoint is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of samples to dump, from the start of the dataset.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Ingest(a) => ingest(a),
        Command::Report(a) => run_report(a),
        Command::Embed(a) => embed(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn fresh_dir(dir: &Path, marker: &str, force: bool) -> Result<()> {
    if dir.join(marker).exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists (use --force to replace)",
            dir.join(marker).display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn gen(a: GenArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.config).map_err(|e| io_err(&a.config, e))?;
    let mut block: GenerateBlock = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", a.config.display(), e.message())))?;
    if let Some(seed) = a.seed {
        block.seed = seed;
    }
    let manifest = block.manifest()?;
    fresh_dir(&a.out, MANIFEST_FILE, a.force)?;
    generate_dataset(&manifest, &a.out)?;
    println!("{} samples written to {}", manifest.count, a.out.display());
    Ok(true)
}

fn metrics_line(seed: u64, m: &MetricsReport) -> String {
    let values: Vec<String> = MetricsReport::NAMES
        .iter()
        .zip(m.values())
        .map(|(n, v)| format!("{n}={v:.4}"))
        .collect();
    format!("seed {seed}: {} T={}", values.join(" "), m.t)
}

fn train(a: TrainArgs) -> Result<bool> {
    let mut spec = ExperimentSpec::read(&a.config)?;
    if !a.seed.is_empty() {
        spec.seeds = a.seed;
    }
    if let Some(out) = a.out {
        spec.output = out;
    }
    let outcome = run_experiment(
        &spec,
        RunOptions {
            force: a.force,
            persist: true,
        },
    )?;
    for r in &outcome.results {
        println!("{}", metrics_line(r.seed, &r.metrics));
    }
    for f in &outcome.failures {
        println!("seed {}: failed: {}", f.seed, f.error);
    }
    Ok(outcome.succeeded())
}

fn eval(a: EvalArgs) -> Result<bool> {
    let spec = ExperimentSpec::read(&a.config)?;
    let predictor = load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&spec.dataset)?;
    let tables = build_tables(
        &spec.tables,
        &dataset.manifest.catalog,
        predictor.cue_config(),
    )?;
    let source = SimSource::new(&dataset, *predictor.cue_config(), &tables, spec.noise)?;
    let net = predictor.net_config();
    let seed = a.seed.unwrap_or(net.train.seed);
    let (_, val) = split_indices(dataset.len(), net.train.val_fraction, seed);
    if val.is_empty() {
        return Err(Error::Config("the validation split is empty".into()));
    }
    let evaluation = evaluate_indices(&predictor, &source, &val)?;
    let text = serde_json::to_string_pretty(&evaluation.metrics).expect("metrics serialize");
    println!("{text}");
    if let Some(out) = a.out {
        write(&out, &text)?;
    }
    Ok(true)
}

fn ablate(a: AblateArgs) -> Result<bool> {
    let mut specs = match a.preset {
        Some(preset) => {
            let mut base = match &a.config {
                Some(p) => ExperimentSpec::read(p)?,
                None => default_base(vec![0, 1, 2, 3, 4]),
            };
            if !a.seed.is_empty() {
                base.seeds = a.seed.clone();
            }
            if let Some(out) = &a.out {
                base.output = out.clone();
            }
            preset.specs(&base)?
        }
        None => a
            .specs
            .iter()
            .map(|p| ExperimentSpec::read(p))
            .collect::<Result<Vec<_>>>()?,
    };
    if a.preset.is_none() {
        for s in &mut specs {
            if !a.seed.is_empty() {
                s.seeds = a.seed.clone();
            }
            if let Some(out) = &a.out {
                s.output = out.clone();
            }
        }
    }
    let run = run_ablation_suite(
        &specs,
        RunOptions {
            force: a.force,
            persist: true,
        },
    )?;
    let dir = specs[0].output.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write(&dir.join("ablation.csv"), &run.table.to_csv())?;
    write(&dir.join("ablation_seeds.csv"), &run.table.seeds_csv())?;
    let text = run.table.render_text();
    write(&dir.join("ablation.txt"), &text)?;
    println!("{text}");
    Ok(run.succeeded())
}

fn embedders(
    checkpoint: Option<&Path>,
    spec: &ExperimentSpec,
    seed: u64,
) -> Result<(Option<Predictor>, CueEmbedders)> {
    match checkpoint {
        Some(dir) => {
            let p = load_checkpoint(dir)?;
            let e = p.embedders()?;
            Ok((Some(p), e))
        }
        None => Ok((None, CueEmbedders::new(&spec.cues, seed))),
    }
}

fn ingest(a: IngestArgs) -> Result<bool> {
    let spec = ExperimentSpec::read(&a.config)?;
    let (predictor, embedders) = embedders(a.checkpoint.as_deref(), &spec, a.seed)?;
    let cues = predictor.as_ref().map_or(spec.cues, |p| *p.cue_config());
    let sample = ingest_external_sample(&a.labels, &a.instances, &a.appearance, &a.classes)?;
    let catalog = dataset_catalog(&spec.dataset)?;
    let tables = build_tables(&spec.tables, &catalog, &cues)?;
    let resolver = CueResolver::new(cues, &tables, &sample.names)?;
    if !resolver.oov().is_empty() {
        log::warn!("classes without embeddings: {}", resolver.oov().join(", "));
    }
    fresh_dir(&a.out, "cues.cdt", a.force)?;
    let frame = sample.frame();
    build_cue_map(&frame, &resolver, &embedders)?.save(&a.out, "cues")?;
    if let Some(p) = &predictor {
        let inputs = resolver.inputs(&frame)?;
        let pred = p.predict(&[&inputs])?.remove(0);
        let path = a.out.join("depth.cdt");
        cuedepth_autodiff::io::save(&path, &pred.depth).map_err(|e| Error::File {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }
    println!("cue map written to {}", a.out.display());
    Ok(true)
}

fn run_report(a: ReportArgs) -> Result<bool> {
    let r = report(&a.dir)?;
    println!("{}", r.render_text());
    if a.plot {
        for p in r.write_plots()? {
            println!("plot: {}", p.display());
        }
    }
    Ok(true)
}

fn embed(a: EmbedArgs) -> Result<bool> {
    let spec = ExperimentSpec::read(&a.config)?;
    let (predictor, embedders) = embedders(a.checkpoint.as_deref(), &spec, a.seed)?;
    let cues = predictor.as_ref().map_or(spec.cues, |p| *p.cue_config());
    let dataset = load_dataset(&spec.dataset)?;
    let tables = build_tables(&spec.tables, &dataset.manifest.catalog, &cues)?;
    let source = SimSource::new(&dataset, cues, &tables, spec.noise)?;
    fresh_dir(&a.out, "00000.cues.cdt", a.force)?;
    let n = a.limit.unwrap_or(dataset.len()).min(dataset.len());
    for i in 0..n {
        source
            .cue_map(i, &embedders)?
            .save(&a.out, &format!("{i:05}.cues"))?;
    }
    println!("{n} cue maps written to {}", a.out.display());
    Ok(true)
}
