//! Command-line surface. `--help` on each subcommand lists every default.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use illumsplat_core::check::{selfcheck, CheckScale, GradOp};
use illumsplat_core::loss::LossConfig;
use illumsplat_core::scene::ProbeSpec;
use illumsplat_core::shader::ShadingVariant;
use illumsplat_core::train::{TrainConfig, TrainSchedule};

use crate::checkpoint;
use crate::error::IoError;
use crate::exec::RayonExecutor;
use crate::image_io::save_png;
use crate::metrics::{write_line, MeanMetrics};
use crate::nerf::{save_split, LoadOptions};
use crate::pipeline::{checkpoint_of, evaluate, load_scene, render_view, train, RunError, SceneSource};

pub const CHECKPOINT_FILE: &str = "checkpoint.3igs";
pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "illumsplat",
    version,
    about = "Gaussian splatting with a factorized illumination field and neural specular shading"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a model and write a checkpoint plus a JSON-lines loss log.
    Train(TrainArgs),
    /// Render every view of a split from a checkpoint to PNG files.
    Render(RenderArgs),
    /// Per-view PSNR and SSIM of a checkpoint, as JSON lines.
    Eval(EvalArgs),
    /// Run the oracle and finite-difference suites and print a table.
    Selfcheck(SelfcheckArgs),
    /// Write the procedural probe scene to disk in the NeRF-synthetic layout.
    Probe(ProbeOut),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    OutgoingRadiance,
    NoIde,
}

impl From<VariantArg> for ShadingVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => ShadingVariant::Full,
            VariantArg::OutgoingRadiance => ShadingVariant::OutgoingRadiance,
            VariantArg::NoIde => ShadingVariant::NoIde,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// NeRF-synthetic scene directory (with transforms_train.json).
    #[arg(long, conflicts_with = "probe", required_unless_present = "probe")]
    pub scene: Option<PathBuf>,
    /// Use the in-memory procedural probe scene instead of a directory.
    #[arg(long)]
    pub probe: bool,
    #[command(flatten)]
    pub probe_spec: ProbeArgs,
    /// Background colour: "white", "black" or "r,g,b" in [0, 1].
    #[arg(long, default_value = "white", value_parser = parse_background)]
    pub background: [f32; 3],
    /// Half side of the cube that bounds the initial Gaussians and grid.
    #[arg(long, default_value_t = 1.5)]
    pub scene_half_extent: f32,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[arg(long, default_value_t = 0)]
    pub probe_seed: u64,
    #[arg(long, default_value_t = 200)]
    pub probe_gaussians: usize,
    #[arg(long, default_value_t = 20)]
    pub probe_train_views: usize,
    #[arg(long, default_value_t = 10)]
    pub probe_test_views: usize,
    #[arg(long, default_value_t = 64)]
    pub probe_resolution: usize,
}

impl ProbeArgs {
    pub fn spec(&self) -> ProbeSpec {
        ProbeSpec {
            seed: self.probe_seed,
            gaussians: self.probe_gaussians,
            train_views: self.probe_train_views,
            test_views: self.probe_test_views,
            resolution: self.probe_resolution,
            ..ProbeSpec::default()
        }
    }
}

impl SceneArgs {
    pub fn source(&self) -> SceneSource {
        match &self.scene {
            Some(dir) if !self.probe => SceneSource::Directory(
                dir.clone(),
                LoadOptions { background: self.background, scene_half_extent: self.scene_half_extent },
            ),
            _ => SceneSource::Probe(self.probe_spec.spec()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub iters: u32,
    /// Last diffuse-only iteration [default: iters / 10].
    #[arg(long)]
    pub specular_start: Option<u32>,
    /// Iteration at which the grid shrinks to the Gaussians [default: iters / 2].
    #[arg(long)]
    pub shrink_at: Option<u32>,
    /// Densification stops here [default: iters / 2].
    #[arg(long)]
    pub densify_until: Option<u32>,
    /// Mean screen-space gradient above which Gaussians densify
    /// [default: 2e-4; 1e-3 with --probe].
    #[arg(long)]
    pub densify_grad_threshold: Option<f64>,
    /// Grid nodes per axis [default: 32; 8 with --probe].
    #[arg(long)]
    pub grid_res: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub r_components: usize,
    #[arg(long, default_value_t = 24)]
    pub feature_dim: usize,
    /// Random initial Gaussians [default: 1000; 500 with --probe].
    #[arg(long)]
    pub init_gaussians: Option<usize>,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
    /// D-SSIM weight in the photometric loss.
    #[arg(long, default_value_t = 0.2)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Print a progress line every this many iterations (0 disables).
    #[arg(long, default_value_t = 500)]
    pub log_every: u32,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig, RunError> {
        let probe = self.scene.scene.is_none() || self.scene.probe;
        let variant = self.variant.into();
        let mut cfg = if probe {
            TrainConfig::probe(self.iters, variant, self.seed)
        } else {
            let mut c = TrainConfig { seed: self.seed, ..TrainConfig::default() };
            c.schedule = TrainSchedule::scaled(self.iters);
            c.shape.variant = variant;
            c
        };
        let s = &mut cfg.schedule;
        if let Some(v) = self.specular_start {
            s.specular_start = v;
        }
        if let Some(v) = self.shrink_at {
            s.shrink_at = v;
        }
        if let Some(v) = self.densify_until {
            s.densify_until = v;
        }
        if let Some(v) = self.densify_grad_threshold {
            s.grad_threshold = v;
        }
        if let Some(v) = self.grid_res {
            cfg.shape.grid_resolution = v;
        }
        if let Some(v) = self.init_gaussians {
            cfg.shape.initial_gaussians = v;
        }
        cfg.shape.components = self.r_components;
        cfg.shape.feature_dim = self.feature_dim;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(RunError::Config("--lambda must lie in [0, 1]".into()));
        }
        cfg.loss = LossConfig { lambda: self.lambda };
        cfg.schedule.validate().map_err(|e| RunError::Config(e.into()))?;
        if cfg.shape.grid_resolution < 2 || cfg.shape.components == 0 || cfg.shape.feature_dim == 0 {
            return Err(RunError::Config("grid-res must be >= 2; r-components and feature-dim > 0".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Metrics file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Acceptance-size suites instead of the quick ones.
    #[arg(long)]
    pub full: bool,
    /// Test hook: negate the analytic gradient of one operation.
    #[arg(long, value_parser = parse_grad_op)]
    pub inject_sign_flip: Option<GradOp>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeOut {
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_background(s: &str) -> Result<[f32; 3], String> {
    match s {
        "white" => Ok([1.0; 3]),
        "black" => Ok([0.0; 3]),
        _ => {
            let parts: Vec<f32> = s
                .split(',')
                .map(|p| p.trim().parse::<f32>().map_err(|e| format!("{p:?}: {e}")))
                .collect::<Result<_, _>>()?;
            match parts[..] {
                [r, g, b] if parts.iter().all(|v| (0.0..=1.0).contains(v)) => Ok([r, g, b]),
                _ => Err("expected white, black or three values in [0, 1]".into()),
            }
        }
    }
}

fn parse_grad_op(s: &str) -> Result<GradOp, String> {
    GradOp::from_name(s).or_else(|| GradOp::from_name(&format!("grad/{s}"))).ok_or_else(|| {
        let names: Vec<&str> = GradOp::ALL.iter().map(|o| o.name()).collect();
        format!("unknown operation; one of {}", names.join(", "))
    })
}

fn executor(workers: usize) -> Result<RayonExecutor, RunError> {
    RayonExecutor::new(workers).map_err(|e| RunError::Config(e.to_string()))
}

fn create(path: &std::path::Path) -> Result<BufWriter<File>, RunError> {
    Ok(BufWriter::new(File::create(path).map_err(IoError::io(path))?))
}

fn mkdir(path: &std::path::Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(IoError::io(path))?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), RunError> {
    let cfg = args.config()?;
    let exec = executor(args.workers)?;
    let dataset = load_scene(&args.scene.source())?;
    mkdir(&args.out)?;
    let log_path = args.out.join(LOG_FILE);
    let mut log = create(&log_path)?;
    let every = args.log_every;
    let trainer = train(&exec, cfg, &dataset, Some(&mut log), |r| {
        if every > 0 && r.iteration % every == 0 {
            eprintln!(
                "iter {:6}  loss {:.5}  psnr {:6.2}  gaussians {:6}{}",
                r.iteration,
                r.loss,
                r.psnr,
                r.gaussians,
                if r.specular { "" } else { "  (diffuse)" }
            );
        }
    })?;
    log.flush().map_err(IoError::io(&log_path))?;
    let ck_path = args.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ck_path, &checkpoint_of(&trainer))?;
    eprintln!("wrote {}", ck_path.display());
    Ok(())
}

fn split_views<'a>(
    dataset: &'a illumsplat_core::scene::Dataset<f32>,
    split: &str,
) -> Result<&'a [illumsplat_core::scene::View<f32>], RunError> {
    match split {
        "train" => Ok(&dataset.train),
        "test" => Ok(&dataset.test),
        other => Err(RunError::Config(format!("unknown split {other:?}; expected train or test"))),
    }
}

pub fn cmd_render(args: &RenderArgs) -> Result<(), RunError> {
    let exec = executor(args.workers)?;
    let ck = checkpoint::load(&args.checkpoint)?;
    let dataset = load_scene(&args.scene.source())?;
    let views = split_views(&dataset, &args.split)?;
    mkdir(&args.out)?;
    for (k, v) in views.iter().enumerate() {
        let img = render_view(&exec, &ck, v, args.scene.background);
        save_png(&args.out.join(format!("{}_{:03}.png", args.split, k)), &img)?;
    }
    eprintln!("rendered {} views to {}", views.len(), args.out.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), RunError> {
    let exec = executor(args.workers)?;
    let ck = checkpoint::load(&args.checkpoint)?;
    let dataset = load_scene(&args.scene.source())?;
    let views = split_views(&dataset, &args.split)?;
    let records = evaluate(&exec, &ck, views, &args.split, args.scene.background)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let io = |e| RunError::Data(IoError::Io { path: args.out.clone().unwrap_or_else(|| "<stdout>".into()), source: e });
    for r in &records {
        write_line(&mut out, r).map_err(io)?;
    }
    write_line(&mut out, &MeanMetrics::of(&args.split, &records)).map_err(io)?;
    out.flush().map_err(io)?;
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_selfcheck(args: &SelfcheckArgs) -> bool {
    let scale = if args.full { CheckScale::full() } else { CheckScale::quick() };
    let results = selfcheck(args.seed, scale, args.inject_sign_flip);
    println!("{:<24} {:>9} {:>8} {:>12} {:>10}  result", "check", "instances", "rejected", "max error", "tolerance");
    for r in &results {
        println!(
            "{:<24} {:>9} {:>8} {:>12.3e} {:>10.1e}  {}",
            r.name,
            r.instances,
            r.rejected,
            r.max_error,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    results.iter().all(|r| r.passed())
}

pub fn cmd_probe(args: &ProbeOut) -> Result<(), RunError> {
    let scene = illumsplat_core::scene::generate_probe_scene::<f32>(&args.probe.spec());
    save_split(&args.out, "train", &scene.dataset.train)?;
    save_split(&args.out, "test", &scene.dataset.test)?;
    eprintln!("wrote probe scene to {}", args.out.display());
    Ok(())
}

/// Dispatches a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Selfcheck(a) => {
            return if cmd_selfcheck(a) { 0 } else { 4 };
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
