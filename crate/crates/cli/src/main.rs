use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fmsr::config::{self, KeyValue};
use fmsr::data::{make_pairs, read_manifest, ImageU8};
use fmsr::eval::bench::{write_bench_csv, DEFAULT_SIZES};
use fmsr::eval::{bench_scaling, evaluate_dir, fit_exponent, model_erf, save_erf, self_ensemble, SelfEnsemble, Upscaler};
use fmsr::model::{build_model, Model, ModelConfig};
use fmsr::param::Module;
use fmsr::train::{checkpoint, train_loop, OptimState, TrainConfig};
use fmsr::{selftest, Tensor};

/// Frequency-aware Mamba super-resolution.
#[derive(Parser, Debug)]
#[command(name = "fmsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the HR images listed in a manifest.
    Train(TrainArgs),
    /// Super-resolve one PNG.
    Sr(SrArgs),
    /// Score a checkpoint on a directory of HR PNGs (Y-PSNR / Y-SSIM).
    Eval(EvalArgs),
    /// Time an FMB against multi-head self-attention over input sizes.
    Bench(BenchArgs),
    /// Write the effective receptive field of the central output pixel.
    Erf(ErfArgs),
    /// Run the gradient-check and invariant suites.
    Selftest,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key=value` file with model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Text file listing one HR image path per line.
    #[arg(long)]
    data: PathBuf,
    /// Directory for loss.csv and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Overrides one setting; applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for weight init and patch sampling [default: 0, or the config's].
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint, including its optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SrArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Average over the eight flips and rotations of the input.
    #[arg(long)]
    self_ensemble: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    hr_dir: PathBuf,
    /// Must match the checkpoint's scale.
    #[arg(long)]
    scale: usize,
    /// Border pixels excluded from the metrics.
    #[arg(long, default_value_t = 0)]
    shave: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    self_ensemble: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Square input sides.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    /// Timed runs per size; the median is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ErfArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Heatmap PNG; the raw grid is written next to it as CSV.
    #[arg(long)]
    out: PathBuf,
    /// Log-scale the heatmap.
    #[arg(long)]
    log: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `FMSR_THREADS` sizes the worker pool; one thread unless set.
fn init_threads() -> Result<()> {
    let n = match std::env::var("FMSR_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("FMSR_THREADS must be a positive integer, got {v:?}"))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(a) => train(a)?,
        Command::Sr(a) => sr(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Bench(a) => bench(a)?,
        Command::Erf(a) => erf(a)?,
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            return Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Merges the config file and `--set` overrides into `model` and `train`.
fn settings(args: &TrainArgs, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    let mut pairs = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        pairs = config::parse(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    config::apply(&pairs, &mut [model as &mut dyn KeyValue, train])?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let (mut model, mut state, cfg) = match &args.resume {
        Some(path) => {
            let loaded = checkpoint::load::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
            let (mut mcfg, mut cfg) = (loaded.model.config.clone(), loaded.train.clone());
            settings(&args, &mut mcfg, &mut cfg)?;
            if mcfg != loaded.model.config {
                bail!("model settings differ from the checkpoint being resumed");
            }
            let state = loaded.optim.unwrap_or_else(|| OptimState::new(&loaded.model));
            (loaded.model, state, cfg)
        }
        None => {
            let (mut mcfg, mut cfg) = (ModelConfig::default(), TrainConfig::default());
            settings(&args, &mut mcfg, &mut cfg)?;
            let model = build_model::<f32>(&mcfg, cfg.seed)?;
            let state = OptimState::new(&model);
            (model, state, cfg)
        }
    };
    cfg.validate()?;
    let mut images = Vec::new();
    for path in read_manifest(&args.data)? {
        let img = ImageU8::load(&path)?;
        images.push((path.display().to_string(), img.to_tensor::<f32>()));
    }
    let pairs = make_pairs(&images, model.scale())?;
    if pairs.is_empty() {
        bail!("no usable training images in {}", args.data.display());
    }
    log::info!(
        "training {} parameters on {} images for {} steps",
        model.count_params(),
        pairs.len(),
        cfg.total_steps()
    );
    let history = train_loop(&mut model, &mut state, &pairs, &cfg, Some(&args.out))?;
    if let Some(last) = history.last() {
        log::info!("step {} loss {:.6}", last.step, last.loss);
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(checkpoint::load::<f32>(path)
        .with_context(|| format!("loading {}", path.display()))?
        .model)
}

fn load_batch(path: &Path) -> Result<Tensor<f32>> {
    let img = ImageU8::load(path)?.to_tensor::<f32>();
    Ok(Tensor::stack(&[img])?)
}

fn sr(args: SrArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let lr = load_batch(&args.input)?;
    let out = if args.self_ensemble {
        self_ensemble(&model, &lr)?
    } else {
        model.upscale(&lr)?
    };
    ImageU8::from_tensor(&out)?.save(&args.output)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    if args.scale != model.scale() {
        bail!("--scale {} does not match the checkpoint's scale {}", args.scale, model.scale());
    }
    let report = if args.self_ensemble {
        evaluate_dir(&SelfEnsemble(&model), &args.hr_dir, args.shave)?
    } else {
        evaluate_dir(&model, &args.hr_dir, args.shave)?
    };
    report.write_csv(&args.out)?;
    match report.mean() {
        Some(m) => println!(
            "{} images: PSNR {:.3} dB, SSIM {:.4} (bicubic {:.3} dB, {:.4})",
            report.rows.len(),
            m.psnr,
            m.ssim,
            m.psnr_bicubic,
            m.ssim_bicubic
        ),
        None => println!("no images evaluated"),
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let records = bench_scaling(&args.sizes, args.runs, args.seed)?;
    write_bench_csv(&records, &args.out)?;
    for r in &records {
        println!("{:>4} {:<4} {:>9} params {:>14} flops {:>10.3} ms", r.size, r.block, r.params, r.flops, r.time_ms);
    }
    for block in ["fmb", "msa"] {
        match fit_exponent(&records, block) {
            Some(p) => println!("{block}: time ~ tokens^{p:.3}"),
            None => println!("{block}: need at least two sizes to fit an exponent"),
        }
    }
    Ok(())
}

fn erf(args: ErfArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let x = load_batch(&args.input)?;
    let raw = model_erf(&model, &x)?;
    save_erf(&raw, &args.out, args.log)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn bench_sizes_default_and_split() {
        let cli = Cli::try_parse_from(["fmsr", "bench", "--out", "b.csv"]).unwrap();
        let Command::Bench(a) = cli.command else { panic!() };
        assert_eq!(a.sizes, DEFAULT_SIZES);
        let cli = Cli::try_parse_from(["fmsr", "bench", "--sizes", "8,16", "--out", "b.csv"]).unwrap();
        let Command::Bench(a) = cli.command else { panic!() };
        assert_eq!(a.sizes, [8, 16]);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "channels=32\nlr0=0.001\nseed=5\n").unwrap();
        let cli = Cli::try_parse_from([
            "fmsr", "train", "--config", file.to_str().unwrap(), "--data", "m.txt", "--out", "o",
            "--set", "channels=16", "--seed", "9",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let (mut m, mut t) = (ModelConfig::default(), TrainConfig::default());
        settings(&a, &mut m, &mut t).unwrap();
        assert_eq!((m.channels, t.lr0, t.seed), (16, 1e-3, 9));

        let bad = Cli::try_parse_from(["fmsr", "train", "--data", "m", "--out", "o", "--set", "nope=1"]).unwrap();
        let Command::Train(a) = bad.command else { panic!() };
        assert!(settings(&a, &mut m, &mut t).is_err());
    }
}
