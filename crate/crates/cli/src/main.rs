//! `shadeforge`: synthetic shadow corpora, dataset complexity analysis,
//! training, evaluation, inference and ablations.

mod commands;
mod corpus;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgGroup, Args, Parser, Subcommand};

use shadeforge::complexity::{ComplexityConfig, Connectivity};
use shadeforge::corpus::CorpusManifest;
use shadeforge::model::{ModelConfig, Variant};
use shadeforge::synth::{GenConfig, GeneratorInfo};
use shadeforge::training::{latest_checkpoint, TrainConfig};

use corpus::CorpusSel;
use run::{
    overlay, read_config_file, section, usage, AblatePlan, AnalyzePlan, EvalPlan, GeneratePlan, Plan, Predictions,
    RemovePlan, RunRecord, TrainPlan, UsageError,
};

const THREADS_VAR: &str = "SHADEFORGE_THREADS";

#[derive(Parser)]
#[command(
    name = "shadeforge",
    version,
    about = "Shadow removal toolkit: generate, analyze, train, eval, remove, ablate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic triplet corpus.
    Generate(GenerateArgs),
    /// Dataset complexity: entropies, intrinsic dimension, wavelet energy, shadow statistics.
    Analyze(AnalyzeArgs),
    /// Train a model on a triplet corpus.
    Train(TrainArgs),
    /// Score predictions (from a checkpoint or a directory) against a corpus.
    Eval(EvalArgs),
    /// Remove the shadow from one image.
    Remove(RemoveArgs),
    /// Train and compare the architecture variants.
    Ablate(AblateArgs),
    /// Execute the command recorded in a run.json again.
    Rerun {
        /// Path to a run.json written by an earlier run.
        record: PathBuf,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus root (canonical layout unless --external is given).
    #[arg(long)]
    corpus: PathBuf,
    /// Read a third-party layout in place (istd_like).
    #[arg(long, value_name = "KIND")]
    external: Option<String>,
    /// Restrict an external layout to one split (train or test).
    #[arg(long)]
    split: Option<String>,
}

impl CorpusArgs {
    fn resolve(&self) -> Result<CorpusSel> {
        CorpusSel::new(self.corpus.clone(), self.external.as_deref(), self.split.clone())
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of triplets.
    #[arg(long, required_unless_present = "from_manifest")]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Canvas size as WIDTHxHEIGHT.
    #[arg(long)]
    canvas: Option<String>,
    /// Mask threshold on the per-channel difference.
    #[arg(long)]
    tau: Option<u8>,
    /// 1280x720 canvas with proportionally larger occluders.
    #[arg(long)]
    full: bool,
    /// JSON file overriding generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-render the corpus described by this manifest.
    #[arg(long, conflicts_with_all = ["n", "canvas", "tau", "full", "config"])]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output directory for report.json and the CSV arrays.
    #[arg(long)]
    report: PathBuf,
    /// Neighbours for the intrinsic dimension estimate.
    #[arg(long)]
    k: Option<usize>,
    /// Wavelet decomposition levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Smallest shadow component counted, in pixels.
    #[arg(long)]
    min_area: Option<usize>,
    /// Pixel connectivity for shadow components (4 or 8).
    #[arg(long)]
    connectivity: Option<u8>,
    /// Location map grid as WIDTHxHEIGHT.
    #[arg(long)]
    grid: Option<String>,
    /// Also write location_map.png.
    #[arg(long)]
    heatmap: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// JSON file with optional "model" and "train" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint root.
    #[arg(long)]
    ckpt: PathBuf,
    /// Continue from a step directory, or from the latest one under --ckpt.
    #[arg(long, num_args = 0..=1, value_name = "STEP_DIR")]
    resume: Option<Option<PathBuf>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training resolution (square).
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Architecture variant (baseline, attention, inception, msb, shau).
    #[arg(long)]
    variant: Option<String>,
    /// Feature maps of the first stage.
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Score the held-out split after every epoch.
    #[arg(long)]
    validate: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["ckpt", "pred_dir"])))]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Model archive, step directory or checkpoint root.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Directory of precomputed predictions named `<stem>.png`.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Report mean absolute LAB error in the table instead of RMSE.
    #[arg(long)]
    mae_lab: bool,
    /// Row label in the results table.
    #[arg(long)]
    method: Option<String>,
    /// Write the model's predictions here.
    #[arg(long, requires = "ckpt")]
    save_predictions: Option<PathBuf>,
}

#[derive(Args)]
struct RemoveArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Comma-separated variants; all five by default.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Training steps per variant.
    #[arg(long, default_value_t = 200)]
    steps: u64,
    #[arg(long, default_value_t = 8)]
    base: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out share used for scoring.
    #[arg(long, default_value_t = 0.25)]
    validation_fraction: f64,
    #[arg(long)]
    report: PathBuf,
    /// JSON file with optional "model" and "train" sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_dims(s: &str, what: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("{what} must look like WIDTHxHEIGHT, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h) = (
        w.trim().parse().map_err(|_| bad())?,
        h.trim().parse().map_err(|_| bad())?,
    );
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| {
        usage(format!(
            "unknown variant `{s}` (baseline, attention, inception, msb, shau)"
        ))
    })
}

fn resolve_generate(a: GenerateArgs) -> Result<Plan> {
    if let Some(path) = a.from_manifest {
        let bytes = std::fs::read(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let manifest: CorpusManifest = serde_json::from_slice(&bytes)
            .map_err(|e| usage(format!("{} is not a corpus manifest: {e}", path.display())))?;
        let info: GeneratorInfo = manifest
            .generator
            .clone()
            .and_then(|g| serde_json::from_value(g).ok())
            .ok_or_else(|| usage(format!("{} has no generator block", path.display())))?;
        return Ok(Plan::Generate(GeneratePlan {
            n: manifest.count,
            out: a.out,
            seed: info.seed,
            gen_config: info.gen_config,
            from_manifest: Some(path),
        }));
    }
    let n = a.n.unwrap_or(0);
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let file = read_config_file(a.config.as_deref())?;
    let base = if a.full {
        GenConfig::full_resolution()
    } else {
        GenConfig::default()
    };
    let mut gen_config = overlay(&base, file.as_ref())?;
    if let Some(c) = &a.canvas {
        (gen_config.width, gen_config.height) = parse_dims(c, "--canvas")?;
    }
    if let Some(t) = a.tau {
        gen_config.tau = t;
    }
    gen_config.validate()?;
    Ok(Plan::Generate(GeneratePlan {
        n,
        out: a.out,
        seed: a.seed,
        gen_config,
        from_manifest: None,
    }))
}

fn resolve_analyze(a: AnalyzeArgs) -> Result<Plan> {
    let file = read_config_file(a.config.as_deref())?;
    let mut config = overlay(&ComplexityConfig::default(), file.as_ref())?;
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(l) = a.levels {
        config.levels = l;
    }
    if let Some(m) = a.min_area {
        config.shadows.min_area = m;
    }
    if let Some(c) = a.connectivity {
        config.shadows.connectivity = match c {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            _ => return Err(usage("--connectivity must be 4 or 8")),
        };
    }
    if let Some(g) = &a.grid {
        (config.shadows.grid_width, config.shadows.grid_height) = parse_dims(g, "--grid")?;
    }
    if config.k < 2 {
        return Err(usage("--k must be at least 2"));
    }
    if config.levels == 0 {
        return Err(usage("--levels must be at least 1"));
    }
    Ok(Plan::Analyze(AnalyzePlan {
        corpus: a.corpus.resolve()?,
        report: a.report,
        config,
        heatmap: a.heatmap,
    }))
}

/// Model and training configuration from defaults, then the config file.
fn base_configs(path: Option<&std::path::Path>) -> Result<(ModelConfig, TrainConfig)> {
    let file = read_config_file(path)?;
    let model = overlay(&ModelConfig::default(), section(file.as_ref(), "model"))?;
    let mut train = overlay(&TrainConfig::default(), section(file.as_ref(), "train"))?;
    if section(file.as_ref(), "train")
        .and_then(|t| t.get("input_side"))
        .is_none()
    {
        train.input_side = model.input_side;
    }
    Ok((model, train))
}

fn finish_configs(model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    model.input_side = train.input_side;
    model.validate()?;
    train.validate()?;
    Ok(())
}

fn resolve_train(a: TrainArgs) -> Result<Plan> {
    let (mut model, mut train) = base_configs(a.config.as_deref())?;
    if let Some(v) = &a.variant {
        model = model.with_variant(parse_variant(v)?);
    }
    if let Some(b) = a.base {
        model.base_channels = b;
    }
    if let Some(d) = a.depth {
        model.depth = d;
    }
    if let Some(s) = a.seed {
        model.rng_seed = s;
        train.rng_seed = s;
    }
    if let Some(e) = a.epochs {
        train.epochs = e;
    }
    if let Some(lr) = a.lr {
        train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        train.batch_size = b;
    }
    if let Some(s) = a.side {
        train.input_side = s;
    }
    if let Some(f) = a.validation_fraction {
        train.validation_fraction = f;
    }
    if a.no_augment {
        train.augment.enabled = false;
    }
    finish_configs(&mut model, &mut train)?;
    let resume = match a.resume {
        None => None,
        Some(Some(dir)) => Some(dir),
        Some(None) => Some(
            latest_checkpoint(&a.ckpt)?
                .ok_or_else(|| usage(format!("no checkpoint to resume under {}", a.ckpt.display())))?,
        ),
    };
    Ok(Plan::Train(TrainPlan {
        corpus: a.corpus.resolve()?,
        ckpt: a.ckpt,
        model,
        train,
        resume,
        max_steps: a.max_steps,
        checkpoint_every: a.checkpoint_every,
        validate: a.validate,
    }))
}

fn resolve_eval(a: EvalArgs) -> Result<Plan> {
    let (predictions, default_method) = match (a.ckpt, a.pred_dir) {
        (Some(c), _) => (Predictions::Checkpoint(c), "SHAU".to_string()),
        (None, Some(d)) => {
            let name = d
                .file_name()
                .map_or("Predictions".into(), |n| n.to_string_lossy().into_owned());
            (Predictions::Directory(d), name)
        }
        (None, None) => return Err(usage("one of --ckpt or --pred-dir is required")),
    };
    Ok(Plan::Eval(EvalPlan {
        corpus: a.corpus.resolve()?,
        predictions,
        report: a.report,
        mae_lab: a.mae_lab,
        method: a.method.unwrap_or(default_method),
        save_predictions: a.save_predictions,
    }))
}

fn resolve_ablate(a: AblateArgs) -> Result<Plan> {
    let (mut model, mut train) = base_configs(a.config.as_deref())?;
    model.base_channels = a.base;
    model.depth = a.depth;
    train.input_side = a.side;
    train.validation_fraction = a.validation_fraction;
    train.augment.enabled = false;
    if let Some(b) = a.batch_size {
        train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        model.rng_seed = s;
        train.rng_seed = s;
    }
    finish_configs(&mut model, &mut train)?;
    let variants = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.iter().map(|v| parse_variant(v)).collect::<Result<_>>()?
    };
    for &v in &variants {
        model.clone().with_variant(v).validate()?;
    }
    if a.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    Ok(Plan::Ablate(AblatePlan {
        corpus: a.corpus.resolve()?,
        variants,
        steps: a.steps,
        model,
        train,
        report: a.report,
    }))
}

fn resolve(command: Command) -> Result<Plan> {
    match command {
        Command::Generate(a) => resolve_generate(a),
        Command::Analyze(a) => resolve_analyze(a),
        Command::Train(a) => resolve_train(a),
        Command::Eval(a) => resolve_eval(a),
        Command::Remove(a) => Ok(Plan::Remove(RemovePlan {
            image: a.image,
            mask: a.mask,
            ckpt: a.ckpt,
            out: a.out,
        })),
        Command::Ablate(a) => resolve_ablate(a),
        Command::Rerun { record } => Ok(RunRecord::read(&record)?.plan),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use shadeforge::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::Shape(_)
                | E::Validation(_)
                | E::EmptyRegion(_)
                | E::MissingFile(_)
                | E::Layout { .. } => 2,
                _ => 3,
            };
        }
    }
    3
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let plan = resolve(cli.command)?;
    let record = RunRecord::new(plan);
    let path = record.write()?;
    log::info!("run record {}", path.display());
    commands::execute(&record.plan)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
