//! Command-line surface. Machine-readable results go to the supplied writer
//! (stdout in the binary) as one JSON object per line; progress goes to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::coords::margin_for_factor;
use crate::error::Error;
use crate::field::{load_checkpoint, save_checkpoint, Variant};
use crate::metrics::MetricsReport;
use crate::nifti::import_nifti;
use crate::phantom::{generate, PhantomKind, PhantomSpec};
use crate::train::{infer_with_stats, train, TrainConfig};
use crate::tricubic::tricubic_upsample;
use crate::volume::{self, downsample, factor_for_scale, load_vvol, save_vvol, upsampled_affine, Volume3D};

#[derive(Debug, Parser)]
#[command(name = "tfsr", version, about = "Two-factor neural field volume super-resolution")]
pub struct Cli {
    /// Worker threads for batch parallelism (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic phantom volume.
    Phantom(PhantomArgs),
    /// Block-mean downsample a volume by an integer factor.
    Downsample(DownsampleArgs),
    /// Fit a field to a low-resolution volume.
    Train(TrainArgs),
    /// Sample a trained field on a target grid.
    Infer(InferArgs),
    /// Compare a prediction with a reference volume.
    Eval(EvalArgs),
    /// Tricubic up-sampling baseline.
    Baseline(BaselineArgs),
    /// Train and evaluate ablated variants of the field.
    Ablate(AblateArgs),
    /// Phantom, downsample, train, infer and evaluate in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Ellipsoids,
    SmoothBlobs,
    CheckerSmooth,
}

impl From<KindArg> for PhantomKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Ellipsoids => PhantomKind::Ellipsoids,
            KindArg::SmoothBlobs => PhantomKind::SmoothBlobs,
            KindArg::CheckerSmooth => PhantomKind::CheckerSmooth,
        }
    }
}

#[derive(Debug, Args)]
pub struct PhantomSource {
    #[arg(long, value_enum, default_value = "smooth-blobs")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Checker-smooth frequencies a,b,c.
    #[arg(long, value_delimiter = ',')]
    pub freq: Option<Vec<f64>>,
    /// Full phantom spec as JSON; overrides kind, size and freq.
    #[arg(long = "spec")]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub source: PhantomSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FactorArgs {
    /// Per-axis integer factor.
    #[arg(long, conflicts_with = "sigma")]
    pub factor: Option<usize>,
    /// Volumetric scale; mapped to a per-axis factor by its cube root.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub factor: FactorArgs,
    /// Min-max normalize to [0, 1] before downsampling.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    /// Training config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Intended up-sampling factor; pads the normalization box to fit that grid.
    #[arg(long)]
    pub factor: Option<usize>,
    /// Run log path; defaults to the checkpoint path with a `.json` suffix.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint path.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference volume supplying the target grid.
    #[arg(long, conflicts_with_all = ["lr", "factor"])]
    pub like: Option<PathBuf>,
    /// LR volume whose grid is refined by `--factor`.
    #[arg(long, requires = "factor")]
    pub lr: Option<PathBuf>,
    #[arg(long)]
    pub factor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "model")]
    pub method: String,
    #[arg(long, default_value = "")]
    pub config_hash: String,
    /// Crop the reference to the prediction's dims when it is larger.
    #[arg(long)]
    pub crop: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub factor: usize,
    /// Reference volume; when given a metrics report is printed.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// HR reference volume; a phantom is rendered when omitted.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub source: PhantomSource,
    #[arg(long)]
    pub factor: usize,
    /// Comma-separated variant tags.
    #[arg(long, default_value = "full,no-basis,no-coeff,no-periodic,no-oneblob")]
    pub variants: String,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Also write the rows to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub source: PhantomSource,
    #[arg(long)]
    pub factor: usize,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Output directory for all artifacts.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit code 2).
    Usage(String),
    /// Failure while running (exit code 1).
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::io("<stdout>", e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file not found: {}", path.display())))
    }
}

fn check_factor(k: usize) -> CliResult<usize> {
    if k == 0 {
        return Err(usage("factor must be a positive integer"));
    }
    Ok(k)
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Runtime(Error::Format(e.to_string())))?;
    writeln!(out, "{line}")?;
    Ok(())
}

/// Loads a volume from `.vvol` or NIfTI-1 (`.nii`).
pub fn load_volume(path: &Path) -> CliResult<Volume3D> {
    require_file(path)?;
    let is_nifti = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"));
    Ok(if is_nifti { import_nifti(path)? } else { load_vvol(path)? })
}

fn phantom_spec(src: &PhantomSource, seed: u64) -> CliResult<PhantomSpec> {
    let spec = match &src.spec {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            PhantomSpec::from_json(&text)?
        }
        None => {
            let mut spec = PhantomSpec::new(src.kind.into(), src.size, seed);
            if let Some(f) = &src.freq {
                let f: [f64; 3] = f
                    .as_slice()
                    .try_into()
                    .map_err(|_| usage(format!("--freq takes three values, got {}", f.len())))?;
                spec.frequencies = f;
            }
            spec.validate()?;
            spec
        }
    };
    Ok(spec)
}

fn train_config(opts: &TrainOpts) -> CliResult<TrainConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = opts.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_variants(list: &str) -> CliResult<Vec<Variant>> {
    let variants = list
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Variant>().map_err(|_| usage(format!("unknown variant: {t}"))))
        .collect::<CliResult<Vec<_>>>()?;
    if variants.is_empty() {
        return Err(usage("variant list is empty"));
    }
    Ok(variants)
}

/// HR reference trimmed to the extent covered by the LR blocks.
fn covered_truth(hr: &Volume3D, lr: &Volume3D, k: usize) -> CliResult<Volume3D> {
    let d = lr.dims();
    Ok(hr.crop([d[0] * k, d[1] * k, d[2] * k])?)
}

#[derive(Debug, Serialize)]
struct RunLog<'a> {
    config: &'a TrainConfig,
    config_hash: String,
    seed: u64,
    loss_history: &'a [f64],
    final_loss: f64,
    steps: usize,
    wall_seconds: f64,
    checkpoint: String,
}

fn run_training(lr: &Volume3D, cfg: &TrainConfig, ckpt: &Path, log: &Path) -> CliResult<crate::field::TwoFactorField> {
    eprintln!("training {} on {:?} ({} voxels)", cfg.variant, lr.dims(), lr.len());
    let start = Instant::now();
    let outcome = train(lr, cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let final_loss = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    eprintln!("done in {secs:.1}s, {} steps, final loss {final_loss:.3e}", outcome.steps);
    save_checkpoint(&outcome.field, ckpt)?;
    let record = RunLog {
        config: cfg,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        loss_history: &outcome.loss_history,
        final_loss,
        steps: outcome.steps,
        wall_seconds: secs,
        checkpoint: ckpt.display().to_string(),
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Runtime(Error::Format(e.to_string())))?;
    volume::write_file(log, text.as_bytes())?;
    Ok(outcome.field)
}

fn cmd_phantom(a: &PhantomArgs, out: &mut dyn Write) -> CliResult<()> {
    let spec = phantom_spec(&a.source, a.seed)?;
    let v = generate(&spec)?;
    save_vvol(&v, &a.out)?;
    let (lo, hi) = v.min_max();
    emit(out, &json!({ "kind": spec.kind, "dims": v.dims(), "min": lo, "max": hi, "out": a.out }))
}

fn cmd_downsample(a: &DownsampleArgs, out: &mut dyn Write) -> CliResult<()> {
    let k = match (a.factor.factor, a.factor.sigma) {
        (Some(k), _) => k,
        (None, Some(s)) => {
            let k = factor_for_scale(s);
            eprintln!("sigma {s} resolves to per-axis factor {k}");
            k
        }
        (None, None) => return Err(usage("one of --factor or --sigma is required")),
    };
    let k = check_factor(k)?;
    let mut v = load_volume(&a.input)?;
    if a.normalize {
        v = volume::normalize(&v)?;
    }
    let lr = downsample(&v, k)?;
    save_vvol(&lr, &a.out)?;
    emit(out, &json!({ "factor": k, "dims": lr.dims(), "out": a.out }))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = train_config(&a.opts)?;
    let lr = load_volume(&a.input)?;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(k) = a.factor {
        let k = check_factor(k)?;
        cfg.margin.get_or_insert(margin_for_factor(lr.dims(), k));
    }
    let log = a.log.clone().unwrap_or_else(|| a.out.with_extension("json"));
    let start = Instant::now();
    run_training(&lr, &cfg, &a.out, &log)?;
    emit(
        out,
        &json!({
            "checkpoint": a.out,
            "log": log,
            "config_hash": cfg.hash(),
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_infer(a: &InferArgs, out: &mut dyn Write) -> CliResult<()> {
    require_file(&a.input)?;
    let (dims, affine) = match (&a.like, &a.lr, a.factor) {
        (Some(like), _, _) => {
            let r = load_volume(like)?;
            (r.dims(), *r.affine())
        }
        (None, Some(lr), Some(k)) => {
            let k = check_factor(k)?;
            let lr = load_volume(lr)?;
            let d = lr.dims();
            ([d[0] * k, d[1] * k, d[2] * k], upsampled_affine(lr.affine(), k))
        }
        _ => return Err(usage("give either --like or --lr with --factor")),
    };
    let field = load_checkpoint(&a.input)?;
    let start = Instant::now();
    let inf = infer_with_stats(&field, dims, affine)?;
    save_vvol(&inf.volume, &a.out)?;
    emit(
        out,
        &json!({
            "dims": dims,
            "clamped_fraction": inf.clamped_fraction,
            "out": a.out,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let pred = load_volume(&a.pred)?;
    let mut truth = load_volume(&a.truth)?;
    if a.crop && truth.dims() != pred.dims() {
        truth = truth.crop(pred.dims())?;
    }
    let report = MetricsReport::evaluate(&a.method, &a.config_hash, &pred, &truth, 0.0)?;
    emit(out, &report)
}

fn cmd_baseline(a: &BaselineArgs, out: &mut dyn Write) -> CliResult<()> {
    let k = check_factor(a.factor)?;
    let lr = load_volume(&a.input)?;
    let start = Instant::now();
    let up = tricubic_upsample(&lr, k)?;
    let secs = start.elapsed().as_secs_f64();
    save_vvol(&up, &a.out)?;
    match &a.truth {
        Some(path) => {
            let truth = load_volume(path)?;
            let truth = if truth.dims() == up.dims() { truth } else { truth.crop(up.dims())? };
            emit(out, &MetricsReport::evaluate("tricubic", "", &up, &truth, secs)?)
        }
        None => emit(out, &json!({ "dims": up.dims(), "out": a.out, "wall_seconds": secs })),
    }
}

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: Variant,
    factor: usize,
    #[serde(flatten)]
    report: MetricsReport,
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> CliResult<()> {
    let variants = parse_variants(&a.variants)?;
    let k = check_factor(a.factor)?;
    let base = train_config(&a.opts)?;
    let hr = match &a.input {
        Some(path) => load_volume(path)?,
        None => generate(&phantom_spec(&a.source, base.seed)?)?,
    };
    let lr = downsample(&hr, k)?;
    let truth = covered_truth(&hr, &lr, k)?;
    let affine = upsampled_affine(lr.affine(), k);
    let mut rows = Vec::new();
    for variant in variants {
        let cfg = TrainConfig {
            variant,
            margin: base.margin.or(Some(margin_for_factor(lr.dims(), k))),
            ..base.clone()
        };
        eprintln!("ablation: {variant}");
        let start = Instant::now();
        let outcome = train(&lr, &cfg)?;
        let sr = infer_with_stats(&outcome.field, truth.dims(), affine)?.volume;
        let report = MetricsReport::evaluate(variant.tag(), &cfg.hash(), &sr, &truth, start.elapsed().as_secs_f64())?;
        let row = AblationRow {
            variant,
            factor: k,
            report,
        };
        emit(out, &row)?;
        rows.push(serde_json::to_string(&row).expect("row serializes"));
    }
    if let Some(path) = &a.out {
        let mut text = rows.join("\n");
        text.push('\n');
        volume::write_file(path, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs, out: &mut dyn Write) -> CliResult<()> {
    let k = check_factor(a.factor)?;
    let mut cfg = train_config(&a.opts)?;
    let spec = phantom_spec(&a.source, cfg.seed)?;
    let dir = &a.out;

    let hr = generate(&spec)?;
    save_vvol(&hr, dir.join("hr.vvol"))?;
    let lr = downsample(&hr, k)?;
    save_vvol(&lr, dir.join("lr.vvol"))?;
    let truth = covered_truth(&hr, &lr, k)?;
    let affine = upsampled_affine(lr.affine(), k);

    cfg.margin.get_or_insert(margin_for_factor(lr.dims(), k));
    let start = Instant::now();
    let field = run_training(&lr, &cfg, &dir.join("model.ckpt"), &dir.join("train_log.json"))?;
    let inf = infer_with_stats(&field, truth.dims(), affine)?;
    let model_secs = start.elapsed().as_secs_f64();
    if inf.clamped_fraction > 0.0 {
        eprintln!("clamped {:.2}% of query coordinates", 100.0 * inf.clamped_fraction);
    }
    save_vvol(&inf.volume, dir.join("sr.vvol"))?;

    let start = Instant::now();
    let baseline = tricubic_upsample(&lr, k)?;
    let base_secs = start.elapsed().as_secs_f64();
    save_vvol(&baseline, dir.join("tricubic.vvol"))?;

    let hash = cfg.hash();
    emit(out, &MetricsReport::evaluate("two-factor", &hash, &inf.volume, &truth, model_secs)?)?;
    emit(out, &MetricsReport::evaluate("tricubic", &hash, &baseline, &truth, base_secs)?)
}

/// Runs a parsed command, writing JSON lines to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    if let Some(n) = cli.threads {
        // the global pool can only be set once per process; later calls keep the first setting
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a, out),
        Command::Downsample(a) => cmd_downsample(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Infer(a) => cmd_infer(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Baseline(a) => cmd_baseline(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Pipeline(a) => cmd_pipeline(a, out),
    }
}
