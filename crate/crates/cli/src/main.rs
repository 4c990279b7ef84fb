use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cagan_core::data::{load_manifest, load_toy_ground_truth, synthesize_toy_dataset, DatasetManifest, ImageTensor, PairedDataset, Resolution, ToyDatasetSpec};
use cagan_core::error::CaganError;
use cagan_core::evaluation::{evaluate_toy, grid_render, load_generator, swap, ArticleSwapper, GridRequest, SwapIndices, SwapInputs};
use cagan_core::objectives::LossWeights;
use cagan_core::trainer::{train_loop, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};

#[derive(Parser, Debug)]
#[command(name = "cagan", version, about = "Article swapping with conditional analogy GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural toy dataset with ground-truth masks.
    SynthData(SynthArgs),
    /// Train a generator/discriminator pair.
    Train(TrainArgs),
    /// Paint a new article onto one person image.
    Swap(SwapArgs),
    /// Render a grid of swaps.
    Grid(GridArgs),
    /// Score a checkpoint on a toy dataset.
    Eval(EvalArgs),
}

fn parse_resolution(text: &str) -> Result<Resolution, String> {
    Resolution::parse_width_x_height(text).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// WIDTHxHEIGHT.
    #[arg(long, default_value = "64x48", value_parser = parse_resolution)]
    resolution: Resolution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stride-2 stages the resolution must support.
    #[arg(long, default_value_t = 4)]
    depth: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.0002)]
    lr: f64,
    #[arg(long = "gamma-i", default_value_t = 0.1)]
    gamma_i: f64,
    #[arg(long = "gamma-c", default_value_t = 1.0)]
    gamma_c: f64,
    /// WIDTHxHEIGHT.
    #[arg(long, default_value = "64x48", value_parser = parse_resolution)]
    resolution: Resolution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: u64,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    disc_channels: usize,
}

#[derive(Args, Debug)]
struct SwapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Person image at the checkpoint's resolution.
    #[arg(long)]
    human: PathBuf,
    /// Article the person currently wears.
    #[arg(long)]
    old_article: PathBuf,
    /// Article to paint on.
    #[arg(long)]
    new_article: PathBuf,
    /// Composite PNG.
    #[arg(long)]
    out: PathBuf,
    /// Optional alpha matte PNG.
    #[arg(long)]
    alpha_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GridMode {
    FixedHuman,
    FixedArticle,
    TripletRows,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: GridMode,
    /// Pair id of the fixed person or article (fixed-* modes).
    #[arg(long)]
    anchor: Option<String>,
    /// Comma-separated pair ids; `HUMAN:ARTICLE` entries in triplet-rows mode.
    #[arg(long, value_delimiter = ',', required = true)]
    items: Vec<String>,
    /// Append the alpha matte column (triplet-rows mode).
    #[arg(long)]
    alpha: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code: 1 for invalid input, 2 for runtime faults.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<CaganError> for Failure {
    fn from(e: CaganError) -> Self {
        Failure {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn init_logging() {
    let level = match std::env::var("CAGAN_LOG").ok().as_deref() {
        Some("quiet") => LevelFilter::Off,
        Some("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(usage(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn synth_data(args: SynthArgs) -> Result<(), Failure> {
    let spec = ToyDatasetSpec {
        count: args.count,
        resolution: args.resolution,
        seed: args.seed,
        depth: args.depth,
        ..ToyDatasetSpec::default()
    };
    spec.validate()?;
    let toy = synthesize_toy_dataset(&spec)?;
    let manifest = toy.write(&args.out)?;
    info!("wrote {} pairs to {}", manifest.len(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let config = TrainConfig {
        steps: args.steps,
        batch_size: args.batch,
        learning_rate: args.lr,
        weights: LossWeights {
            gamma_i: args.gamma_i,
            gamma_c: args.gamma_c,
        },
        resolution: args.resolution,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        data_root: args.data,
        generator_base_channels: args.base_channels,
        generator_depth: args.depth,
        discriminator_base_channels: args.disc_channels,
        ..TrainConfig::default()
    };
    config.validate()?;
    if let Some(resume) = &args.resume {
        if !resume.is_file() {
            return Err(usage(format!("checkpoint {} does not exist", resume.display())));
        }
    }
    let outcome = train_loop(&config, &args.out, args.resume.as_deref())?;
    info!(
        "finished {} steps; checkpoint {}",
        outcome.state.step(),
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn pair_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn swap_command(args: SwapArgs) -> Result<(), Failure> {
    ensure_parent(&args.out)?;
    if let Some(a) = &args.alpha_out {
        ensure_parent(a)?;
    }
    let generator = load_generator(&args.checkpoint)?;
    let x = ImageTensor::load_rgb_native(&args.human)?;
    let y_old = ImageTensor::load_rgb_native(&args.old_article)?;
    let y_new = ImageTensor::load_rgb_native(&args.new_article)?;
    let inputs = SwapInputs {
        human: pair_id(&args.human),
        old_article: pair_id(&args.old_article),
        new_article: pair_id(&args.new_article),
    };
    let indices = SwapIndices {
        human: 0,
        old_article: 0,
        new_article: 1,
    };
    let result = swap(&generator, &x, &y_old, &y_new, inputs, indices)?;
    result.composite.save_png(&args.out)?;
    if let Some(path) = &args.alpha_out {
        result.alpha.save_png(path)?;
    }
    Ok(())
}

fn lookup(manifest: &DatasetManifest, id: &str) -> Result<usize, Failure> {
    manifest
        .index_of(id)
        .ok_or_else(|| usage(format!("pair id `{id}` is not in the manifest")))
}

fn grid_request(args: &GridArgs, manifest: &DatasetManifest) -> Result<GridRequest, Failure> {
    let ids = |items: &[String]| items.iter().map(|id| lookup(manifest, id)).collect::<Result<Vec<_>, _>>();
    let anchor = || {
        args.anchor
            .as_deref()
            .ok_or_else(|| usage("--anchor is required in fixed-human and fixed-article modes"))
            .and_then(|id| lookup(manifest, id))
    };
    if args.alpha && !matches!(args.mode, GridMode::TripletRows) {
        return Err(usage("--alpha is only available in triplet-rows mode"));
    }
    Ok(match args.mode {
        GridMode::FixedHuman => GridRequest::FixedHuman {
            human: anchor()?,
            articles: ids(&args.items)?,
        },
        GridMode::FixedArticle => GridRequest::FixedArticle {
            article: anchor()?,
            humans: ids(&args.items)?,
        },
        GridMode::TripletRows => {
            let rows = args
                .items
                .iter()
                .map(|item| {
                    let (h, a) = item
                        .split_once(':')
                        .ok_or_else(|| usage(format!("triplet-rows item `{item}` must be HUMAN:ARTICLE")))?;
                    Ok((lookup(manifest, h)?, lookup(manifest, a)?))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            GridRequest::TripletRows {
                rows,
                alpha_column: args.alpha,
            }
        }
    })
}

fn load_model_and_data(checkpoint: &Path, data: &Path) -> Result<(cagan_core::networks::Generator<f32>, PairedDataset), Failure> {
    let generator = load_generator(checkpoint)?;
    let manifest = load_manifest(data)?;
    let dataset = PairedDataset::load(manifest, generator.resolution())?;
    Ok((generator, dataset))
}

fn grid(args: GridArgs) -> Result<(), Failure> {
    ensure_parent(&args.out)?;
    let manifest = load_manifest(&args.data)?;
    let request = grid_request(&args, &manifest)?;
    let (generator, data) = load_model_and_data(&args.checkpoint, &args.data)?;
    let layout = grid_render(&generator, &data, &request, &args.out)?;
    info!("wrote {}x{} grid to {}", layout.cols, layout.rows, args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    ensure_parent(&args.out)?;
    if args.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let (generator, data) = load_model_and_data(&args.checkpoint, &args.data)?;
    let truth = load_toy_ground_truth(data.manifest())?;
    let report = evaluate_toy(&generator, &data, &truth, args.samples, args.seed)?;
    report.write_json(&args.out)?;
    info!(
        "alpha_iou {:.4} color_swap_error {:.4} identity_leakage {:.4} cycle_error {:.4}",
        report.alpha_iou, report.color_swap_error, report.identity_leakage, report.cycle_error
    );
    Ok(())
}

fn run(argv: Vec<String>) -> Result<(), Failure> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return if code == 0 { Ok(()) } else { Err(Failure { code, message: String::new() }) };
        }
    };
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Swap(a) => swap_command(a),
        Command::Grid(a) => grid(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    init_logging();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
