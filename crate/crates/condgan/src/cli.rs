//! Command-line surface: dataset export, training, sampling, figure strips,
//! gradient verification, and evaluation. Every command is deterministic
//! under a fixed seed and config, and `train` echoes its effective config
//! into the output directory so the run can be reproduced from there.

use crate::config::{RunConfig, RunMode};
use crate::data::{self, Dataset, Transform, ViewPoint};
use crate::error::{Error, Result};
use crate::generate::{self, blend, FrameSource};
use crate::gradcheck;
use crate::ppm;
use crate::tensor::Tensor;
use crate::train;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "condgan",
    version,
    about = "Conditional GAN on a procedural chair dataset"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

/// Flags shared by every command that reads a run configuration.
#[derive(Args, Debug)]
pub struct CommonArgs {
    /// JSON config file; absent fields keep their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one config field by dotted path, e.g. --set train.cadence=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Shorthand for --set train.seed=N.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Directory for everything this command writes.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl CommonArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("train.seed={seed}"));
        }
        let cfg = base.with_overrides(&overrides)?.normalized();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Render the full dataset to PPM images plus a CSV manifest.
    Dataset(DatasetArgs),
    /// Train a model; checkpoints and metrics land in the output directory.
    Train(TrainArgs),
    /// Generate one image from a trained checkpoint at a given condition.
    Sample(SampleArgs),
    /// Render one class rotating through equally spaced azimuths.
    Rotate(RotateArgs),
    /// Blend between two classes at a fixed view.
    Interpolate(InterpolateArgs),
    /// Check every analytic gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Score trained networks against the renderer's ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Training regime: gan-abs, gan-partial, or l2 (shorthand for --set mode=...).
    #[arg(long)]
    pub mode: Option<String>,

    /// Resume from this checkpoint's epoch boundary.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,

    /// Class id in [0, classes).
    #[arg(long, default_value_t = 0)]
    pub class: usize,

    /// View azimuth in radians (ignored in gan-partial mode).
    #[arg(long, default_value_t = 0.0)]
    pub azimuth: f64,

    /// View altitude in radians, within +/- pi/4 (ignored in gan-partial mode).
    #[arg(long, default_value_t = 0.0)]
    pub altitude: f64,

    /// Horizontal shift as an image fraction (ignored in gan-partial mode).
    #[arg(long, default_value_t = 0.0)]
    pub dx: f64,

    /// Vertical shift as an image fraction (ignored in gan-partial mode).
    #[arg(long, default_value_t = 0.0)]
    pub dy: f64,

    /// Log of the zoom factor (ignored in gan-partial mode).
    #[arg(long, default_value_t = 0.0)]
    pub log_scale: f64,
}

#[derive(Args, Debug)]
pub struct RotateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub class: usize,

    /// Number of equally spaced azimuths around the full circle.
    #[arg(long, default_value_t = 12)]
    pub steps: usize,

    #[arg(long, default_value_t = 0.0)]
    pub altitude: f64,

    /// Tile the frames as ROWSxCOLS instead of one horizontal strip.
    #[arg(long, value_name = "ROWSxCOLS", value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,

    /// Class at the left end of the blend.
    #[arg(long)]
    pub from: usize,

    /// Class at the right end of the blend.
    #[arg(long)]
    pub to: usize,

    /// Number of frames on the [0, 1] blend grid, endpoints included.
    #[arg(long, default_value_t = 8)]
    pub steps: usize,

    #[arg(long, default_value_t = 0.0)]
    pub azimuth: f64,

    #[arg(long, default_value_t = 0.0)]
    pub altitude: f64,

    /// Tile the frames as ROWSxCOLS instead of one horizontal strip.
    #[arg(long, value_name = "ROWSxCOLS", value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Plant a wrong gradient to prove the checks catch one.
    #[arg(long)]
    pub inject_bug: bool,

    /// Skip the miniature end-to-end models; check single ops only.
    #[arg(long)]
    pub ops_only: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once('x')
        .ok_or_else(|| format!("'{s}' is not ROWSxCOLS"))?;
    let rows: usize = r.parse().map_err(|_| format!("bad row count '{r}'"))?;
    let cols: usize = c.parse().map_err(|_| format!("bad column count '{c}'"))?;
    if rows == 0 || cols == 0 {
        return Err("grid dimensions must be positive".to_string());
    }
    Ok((rows, cols))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Dataset(args) => cmd_dataset(&args),
        Cmd::Train(args) => cmd_train(&args),
        Cmd::Sample(args) => cmd_sample(&args),
        Cmd::Rotate(args) => cmd_rotate(&args),
        Cmd::Interpolate(args) => cmd_interpolate(&args),
        Cmd::Gradcheck(args) => cmd_gradcheck(&args),
        Cmd::Eval(args) => cmd_eval(&args),
    }
}

// ---- commands ---------------------------------------------------------------

fn cmd_dataset(args: &DatasetArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let ds = Dataset::new(cfg.dataset)?;
    cfg.write_effective(&args.common.out)?;
    data::export(&ds, &args.common.out)?;
    println!(
        "wrote {} samples ({} train / {} test) to {}",
        ds.len(),
        ds.indices(data::Split::Train).len(),
        ds.indices(data::Split::Test).len(),
        args.common.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(mode) = &args.mode {
        cfg = cfg
            .with_overrides(&[format!("mode={mode}")])?
            .normalized();
        cfg.validate()?;
    }
    let out = &args.common.out;
    cfg.write_effective(out)?;
    let resume = args.resume.as_deref();
    let report = match cfg.mode {
        RunMode::GanAbs | RunMode::GanPartial => {
            let (_, report) =
                train::train_gan::<f32>(&cfg.train, &cfg.model, &cfg.dataset, out, resume)?;
            println!(
                "trained {} epochs: {} discriminator steps, {} generator steps",
                report.epochs_run, report.d_steps, report.g_steps
            );
            report
        }
        RunMode::L2 => {
            let (_, report) =
                train::train_l2::<f32>(&cfg.train, &cfg.model, &cfg.dataset, out, resume)?;
            println!(
                "trained {} epochs: {} generator steps",
                report.epochs_run, report.g_steps
            );
            report
        }
    };
    println!("wrote {}", report.metrics_path.display());
    println!("wrote {}", report.final_checkpoint.display());
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let frame = FrameSource::load(&cfg, &args.checkpoint)?;
    let view = ViewPoint {
        azimuth: args.azimuth,
        altitude: args.altitude,
    };
    let tr = Transform {
        dx: args.dx,
        dy: args.dy,
        log_scale: args.log_scale,
    };
    let c = blend(args.class, args.class, 0.0, &cfg)?;
    let (rgb, mask) = frame.render(&cfg, c, view, tr)?;
    std::fs::create_dir_all(&args.common.out)?;
    let rgb_path = args.common.out.join("sample_rgb.ppm");
    write_image(&rgb_path, &rgb)?;
    println!("wrote {}", rgb_path.display());
    if let Some(mask) = mask {
        let mask_path = args.common.out.join("sample_mask.ppm");
        let s = mask.shape().to_vec();
        ppm::write_ppm(&mask_path, s[2], s[1], &ppm::mask_bytes(&mask)?)?;
        println!("wrote {}", mask_path.display());
    }
    Ok(())
}

fn cmd_rotate(args: &RotateArgs) -> Result<()> {
    if args.steps < 2 {
        return Err(Error::config("rotation needs at least 2 steps"));
    }
    let cfg = args.common.load()?;
    let frame = FrameSource::load(&cfg, &args.checkpoint)?;
    if !frame.is_view_conditioned() {
        return Err(Error::config(
            "rotation needs view conditioning; this checkpoint is class-only",
        ));
    }
    let mut frames = Vec::with_capacity(args.steps);
    for j in 0..args.steps {
        let view = ViewPoint {
            azimuth: std::f64::consts::TAU * j as f64 / args.steps as f64,
            altitude: args.altitude,
        };
        let c = blend(args.class, args.class, 0.0, &cfg)?;
        let (rgb, _) = frame.render(&cfg, c, view, Transform::IDENTITY)?;
        frames.push(rgb);
    }
    write_strip(&args.common.out, "rotate.ppm", &frames, args.grid)
}

fn cmd_interpolate(args: &InterpolateArgs) -> Result<()> {
    if args.steps < 2 {
        return Err(Error::config("interpolation needs at least 2 steps"));
    }
    if args.from == args.to {
        return Err(Error::config("interpolation endpoints must differ"));
    }
    let cfg = args.common.load()?;
    let frame = FrameSource::load(&cfg, &args.checkpoint)?;
    let view = ViewPoint {
        azimuth: args.azimuth,
        altitude: args.altitude,
    };
    let mut frames = Vec::with_capacity(args.steps);
    for j in 0..args.steps {
        let lambda = j as f64 / (args.steps - 1) as f64;
        let c = blend(args.from, args.to, lambda, &cfg)?;
        let (rgb, _) = frame.render(&cfg, c, view, Transform::IDENTITY)?;
        frames.push(rgb);
    }
    write_strip(&args.common.out, "interpolate.ppm", &frames, args.grid)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let results = if args.ops_only {
        gradcheck::op_checks(args.inject_bug)?
    } else {
        gradcheck::run_suite(args.inject_bug)?
    };
    for r in &results {
        println!(
            "{} {:<40} max_rel_err {:.3e} (tol {:.0e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tol
        );
    }
    gradcheck::enforce(&results)?;
    println!("all {} gradient checks passed", results.len());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let report = generate::evaluate_checkpoint(&cfg, &args.checkpoint)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::create_dir_all(&args.common.out)?;
    let path = args.common.out.join("eval.json");
    std::fs::write(&path, &text)?;
    print!("{text}");
    println!("wrote {}", path.display());
    Ok(())
}

fn write_image(path: &Path, rgb: &Tensor<f32>) -> Result<()> {
    let s = rgb.shape().to_vec();
    ppm::write_ppm(path, s[2], s[1], &ppm::rgb_bytes(rgb)?)
}

fn write_strip(
    out: &Path,
    name: &str,
    frames: &[Tensor<f32>],
    grid: Option<(usize, usize)>,
) -> Result<()> {
    let (rows, cols) = grid.unwrap_or((1, frames.len()));
    let strip = ppm::tile_grid(frames, rows, cols)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    write_image(&path, &strip)?;
    println!("wrote {}", path.display());
    Ok(())
}
