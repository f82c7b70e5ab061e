//! `ispnet`: generate synthetic RAW data, train, evaluate, profile and run
//! learned ISP models.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use ispnet::bench::{profile, score_report, HD_HEIGHT, HD_WIDTH};
use ispnet::metrics::{mai_score, LossSpec, ScoreInputs};
use ispnet::models::{build_model, load_checkpoint, save_checkpoint, ModelGraph, ModelName};
use ispnet::raw_pipeline::{
    make_dataset, pack_bayer, write_scenes, BayerImage, BilinearBaseline, Manifest, PairSet, RgbImage, UnprocessConfig,
};
use ispnet::trainer::{evaluate, load_training_state, log_csv, train, LrSchedule, Predictor, Recipe, TrainRun};

#[derive(Parser)]
#[command(name = "ispnet", version, about = "Learned RAW-to-RGB ISP toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut patches from source images and synthesize RAW/RGB training pairs.
    Generate(GenerateArgs),
    /// Render procedural source scenes as PNG files.
    Scenes(ScenesArgs),
    /// Train a model on a pair manifest.
    Train(TrainArgs),
    /// Mean PSNR and SSIM of a model on a pair manifest.
    Eval(EvalArgs),
    /// Per-layer latency profile.
    Bench(BenchArgs),
    /// Challenge score from measured or given PSNR and runtime.
    Score(ScoreArgs),
    /// Convert one 16-bit RAW PNG into an 8-bit RGB PNG.
    Infer(InferArgs),
    /// Layer table and parameter count.
    Info(InfoArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    patch: usize,
    /// Read-noise variance; sampled from the seed when absent.
    #[arg(long)]
    noise_read: Option<f64>,
    /// Shot-noise gain; sampled from the seed when absent.
    #[arg(long)]
    noise_shot: Option<f64>,
}

#[derive(Args)]
struct ScenesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: smallnet, csanet, unet or a qualified name such as
    /// csanet-b32-n2. Defaults to the recipe's model.
    #[arg(long)]
    model: Option<String>,
    /// Preset: dhisp, aiisp or unet. Explicit flags override its values.
    #[arg(long, value_parser = parse_recipe)]
    recipe: Option<Recipe>,
    #[arg(long)]
    data: PathBuf,
    /// Held-out manifest used for best-checkpoint selection.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    /// constant, linear_decay or step_halve:K.
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<LrSchedule>,
    /// Comma list of kind:weight, e.g. charbonnier:1.0,ssim:0.5.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossSpec>,
    /// Random horizontal flips (on/off).
    #[arg(long)]
    flip: Option<bool>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    validate_every: usize,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Directory for the step log and periodic checkpoints.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Resume from `<DIR>/<STEM>.ckpt` and `<DIR>/<STEM>.adam`, given as
    /// `<DIR>/<STEM>`.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path, or `bilinear` for the fixed demosaic baseline.
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint path or architecture name.
    #[arg(long)]
    model: String,
    /// Full HD geometry, 1920x1088.
    #[arg(long)]
    hd: bool,
    #[arg(long, default_value_t = 256, conflicts_with = "hd")]
    height: usize,
    #[arg(long, default_value_t = 256, conflicts_with = "hd")]
    width: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Checkpoint path; the runtime is measured at 1920x1088.
    #[arg(long, requires = "data", conflicts_with_all = ["psnr", "runtime_ms"])]
    model: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Score a given PSNR instead of evaluating a model.
    #[arg(long, requires = "runtime_ms", allow_negative_numbers = true)]
    psnr: Option<f64>,
    #[arg(long, requires = "psnr")]
    runtime_ms: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InfoArgs {
    /// Checkpoint path or architecture name.
    #[arg(long)]
    model: String,
}

fn parse_recipe(s: &str) -> Result<Recipe, String> {
    s.parse().map_err(|e: ispnet::Error| e.to_string())
}

fn parse_schedule(s: &str) -> Result<LrSchedule, String> {
    s.parse().map_err(|e: ispnet::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossSpec, String> {
    s.parse().map_err(|e: ispnet::Error| e.to_string())
}

fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn print_config(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("[config] {k}={v}");
    }
}

/// Loads a checkpoint, or builds a freshly initialised model when `spec`
/// is not a file but a known architecture name.
fn open_model(spec: &str) -> ispnet::Result<ModelGraph> {
    let path = Path::new(spec);
    if path.exists() || spec.parse::<ModelName>().is_err() {
        load_checkpoint(path)
    } else {
        build_model(spec, 0)
    }
}

fn generate(a: GenerateArgs) -> ispnet::Result<()> {
    let mut cfg = UnprocessConfig::sample(a.seed);
    if let Some(v) = a.noise_read {
        cfg.noise_read = v;
    }
    if let Some(v) = a.noise_shot {
        cfg.noise_shot = v;
    }
    print_config(&[
        ("src", a.src.display().to_string()),
        ("out", a.out.display().to_string()),
        ("count", a.count.to_string()),
        ("seed", a.seed.to_string()),
        ("patch", a.patch.to_string()),
        ("wb_gains", format!("{},{}", cfg.wb_gains.0, cfg.wb_gains.1)),
        ("noise_read", cfg.noise_read.to_string()),
        ("noise_shot", cfg.noise_shot.to_string()),
    ]);
    let m = make_dataset(&a.src, &a.out, &cfg, a.patch, a.count)?;
    println!(
        "wrote {} pairs to {}",
        m.pairs.len(),
        a.out.join("manifest.txt").display()
    );
    Ok(())
}

fn scenes(a: ScenesArgs) -> ispnet::Result<()> {
    print_config(&[
        ("out", a.out.display().to_string()),
        ("count", a.count.to_string()),
        ("width", a.width.to_string()),
        ("height", a.height.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    write_scenes(&a.out, a.count, a.width, a.height, a.seed)?;
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> ispnet::Result<()> {
    let model_name = match (&a.model, a.recipe) {
        (Some(m), _) => m.clone(),
        (None, Some(r)) => r.model().to_string(),
        (None, None) => usage_error(ErrorKind::MissingRequiredArgument, "train needs --model or --recipe"),
    };
    if let Err(e) = model_name.parse::<ModelName>() {
        usage_error(ErrorKind::InvalidValue, e);
    }
    let mut cfg = a.recipe.unwrap_or(Recipe::Dhisp).config(a.steps, a.seed);
    if a.recipe.is_none() {
        cfg.lr_schedule = LrSchedule::Constant;
        cfg.lr_final = cfg.lr_initial;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.lr_initial = lr;
        if a.lr_final.is_none() && cfg.lr_schedule == LrSchedule::Constant {
            cfg.lr_final = lr;
        }
    }
    if let Some(lr) = a.lr_final {
        cfg.lr_final = lr;
    }
    if let Some(s) = a.schedule {
        cfg.lr_schedule = s;
    }
    if let Some(l) = a.loss {
        cfg.loss = l;
    }
    if let Some(f) = a.flip {
        cfg.augment_flip = f;
    }
    cfg.validate_every = a.validate_every;
    cfg.checkpoint_every = a.checkpoint_every;
    if let Err(e) = cfg.validate() {
        usage_error(ErrorKind::InvalidValue, e);
    }

    let (model, resume) = match &a.resume {
        Some(stem) => {
            let dir = stem.parent().unwrap_or(Path::new("."));
            let name = stem.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            let (m, s) = load_training_state(dir, name)?;
            (m, Some(s))
        }
        None => (build_model(&model_name, a.seed)?, None),
    };
    print_config(&[
        ("model", model.name().to_string()),
        ("recipe", a.recipe.map_or("none".into(), |r| r.name().to_string())),
        ("data", a.data.display().to_string()),
        ("val", a.val.as_ref().map_or("none".into(), |p| p.display().to_string())),
        ("out", a.out.display().to_string()),
        (
            "resume",
            a.resume.as_ref().map_or("none".into(), |p| p.display().to_string()),
        ),
    ]);
    for line in cfg.describe().lines() {
        println!("[config] {line}");
    }

    let data = PairSet::load_path(&a.data)?;
    let val = a.val.as_deref().map(PairSet::load_path).transpose()?;
    let every = (cfg.total_steps / 20).max(1);
    let mut report = |r: &ispnet::trainer::StepRecord| {
        if r.step % every == 0 || r.step + 1 == cfg.total_steps {
            println!(
                "step {:>6}  lr {:.3e}  loss {:.6}  {:.1}s",
                r.step, r.lr, r.loss, r.seconds
            );
        }
    };
    let (model, outcome) = train(
        model,
        &data,
        &cfg,
        TrainRun {
            validation: val.as_ref(),
            out_dir: a.run_dir.clone(),
            resume,
            on_step: Some(&mut report),
        },
    )?;
    for (step, p, s) in &outcome.validations {
        println!("validation step {step}: PSNR {p:.3} dB, SSIM {s:.4}");
    }
    if let Some(b) = outcome.best_step {
        println!("kept weights from step {b}");
    }
    if a.run_dir.is_none() && !outcome.log.is_empty() {
        std::fs::write(a.out.with_extension("log.csv"), log_csv(&outcome.log))?;
    }
    save_checkpoint(&model, &a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> ispnet::Result<()> {
    print_config(&[("model", a.model.clone()), ("data", a.data.display().to_string())]);
    let manifest = Manifest::read(&a.data)?;
    let data = PairSet::load(&manifest)?;
    let r = if a.model == "bilinear" {
        evaluate(&BilinearBaseline::new(manifest.config()?), &data)?
    } else {
        evaluate(&open_model(&a.model)?, &data)?
    };
    println!("pairs: {}", r.count);
    println!("PSNR {:.4} dB", r.psnr);
    println!("SSIM {:.6}", r.ssim);
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> ispnet::Result<()> {
    let (h, w) = if a.hd {
        (HD_HEIGHT, HD_WIDTH)
    } else {
        (a.height, a.width)
    };
    let model = open_model(&a.model)?;
    print_config(&[
        ("model", model.name().to_string()),
        ("height", h.to_string()),
        ("width", w.to_string()),
        ("runs", a.runs.to_string()),
        ("warmup", a.warmup.to_string()),
    ]);
    let report = profile(&model, h, w, a.runs, a.warmup)?;
    print!("{}", report.to_text());
    if let Some(p) = a.csv {
        std::fs::write(p, report.to_csv())?;
    }
    Ok(())
}

fn score_cmd(a: ScoreArgs) -> ispnet::Result<()> {
    if let (Some(p), Some(ms)) = (a.psnr, a.runtime_ms) {
        print_config(&[("psnr", p.to_string()), ("runtime_ms", ms.to_string())]);
        let score = mai_score(ScoreInputs::new(p, ms / 1e3)?);
        println!("PSNR {p:.2} dB, runtime {ms:.1} ms, Final Score {score:.2}");
        return Ok(());
    }
    let (Some(model), Some(data)) = (a.model, a.data) else {
        usage_error(
            ErrorKind::MissingRequiredArgument,
            "score needs --model and --data, or --psnr and --runtime-ms",
        )
    };
    let m = open_model(&model)?;
    print_config(&[
        ("model", m.name().to_string()),
        ("data", data.display().to_string()),
        ("height", HD_HEIGHT.to_string()),
        ("width", HD_WIDTH.to_string()),
        ("runs", a.runs.to_string()),
        ("warmup", a.warmup.to_string()),
    ]);
    let val = PairSet::load_path(&data)?;
    let report = score_report(&m, &val, profile(&m, HD_HEIGHT, HD_WIDTH, a.runs, a.warmup)?)?;
    print!("{}", report.to_text());
    Ok(())
}

fn infer_cmd(a: InferArgs) -> ispnet::Result<()> {
    let model = open_model(&a.model)?;
    print_config(&[
        ("model", model.name().to_string()),
        ("raw", a.raw.display().to_string()),
        ("out", a.out.display().to_string()),
    ]);
    let raw = BayerImage::read_png(&a.raw)?;
    let rgb = RgbImage::from_tensor(&Predictor::predict(&model, &pack_bayer(&raw))?)?;
    rgb.write_png(&a.out)?;
    println!("wrote {}x{} RGB to {}", rgb.width(), rgb.height(), a.out.display());
    Ok(())
}

fn info_cmd(a: InfoArgs) -> ispnet::Result<()> {
    let model = open_model(&a.model)?;
    print_config(&[("model", a.model.clone())]);
    print!("{}", model.summary());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Scenes(a) => scenes(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Info(a) => info_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
