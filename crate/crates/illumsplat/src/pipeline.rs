//! Train, render and evaluate entry points shared by the binary and tests.

use std::io::Write;
use std::path::PathBuf;

use illumsplat_core::exec::Executor;
use illumsplat_core::loss::{psnr, ssim};
use illumsplat_core::raster::ImageBuffer;
use illumsplat_core::render::{render, RenderOptions};
use illumsplat_core::scene::{generate_probe_scene, Dataset, ProbeSpec, View};
use illumsplat_core::train::{TrainConfig, Trainer};

use crate::checkpoint::Checkpoint;
use crate::error::IoError;
use crate::metrics::{write_line, StepLine, ViewMetrics};
use crate::nerf::{load_nerf_synthetic, LoadOptions};

/// Failure classes; each maps to one process exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] IoError),
    #[error("numerical failure: {0}")]
    Numerical(illumsplat_core::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data(_) => 3,
            RunError::Numerical(_) => 4,
        }
    }
}

impl From<illumsplat_core::Error> for RunError {
    fn from(e: illumsplat_core::Error) -> Self {
        use illumsplat_core::Error as E;
        match e {
            E::NonFiniteLoss { .. } => RunError::Numerical(e),
            E::ImageSizeMismatch => RunError::Data(IoError::Core(e)),
            other => RunError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum SceneSource {
    Directory(PathBuf, LoadOptions),
    Probe(ProbeSpec),
}

pub fn load_scene(source: &SceneSource) -> Result<Dataset<f32>, RunError> {
    match source {
        SceneSource::Directory(dir, opts) => Ok(load_nerf_synthetic(dir, opts)?),
        SceneSource::Probe(spec) => Ok(generate_probe_scene(spec).dataset),
    }
}

/// Runs the full schedule. Every step is logged to `log` as one JSON line;
/// `progress` sees every record.
pub fn train<E: Executor, W: Write>(
    exec: &E,
    config: TrainConfig,
    dataset: &Dataset<f32>,
    mut log: Option<&mut W>,
    mut progress: impl FnMut(&illumsplat_core::train::StepRecord),
) -> Result<Trainer<f32>, RunError> {
    config.schedule.validate().map_err(|e| RunError::Config(e.to_string()))?;
    if dataset.train.is_empty() && config.schedule.total_iters > 0 {
        return Err(RunError::Config("dataset has no training views".into()));
    }
    let mut trainer = Trainer::new(config, dataset)?;
    while !trainer.is_done() {
        let r = trainer.step(exec, dataset)?;
        if let Some(w) = log.as_deref_mut() {
            write_line(w, &StepLine::from(&r)).map_err(|e| IoError::Io { path: "<log>".into(), source: e })?;
        }
        progress(&r);
    }
    Ok(trainer)
}

pub fn checkpoint_of(trainer: &Trainer<f32>) -> Checkpoint {
    let it = trainer.state.iteration;
    Checkpoint {
        model: trainer.model.clone(),
        iteration: it,
        specular: it > 0 && trainer.config.schedule.specular_on(it),
        extent: trainer.extent,
        background: trainer.background,
    }
}

pub fn render_view<E: Executor>(exec: &E, ck: &Checkpoint, view: &View<f32>, background: [f32; 3]) -> ImageBuffer<f32> {
    render(exec, &ck.model, &view.camera, &RenderOptions::new(background, ck.specular))
}

/// Per-view PSNR and SSIM of a checkpoint against posed target images.
pub fn evaluate<E: Executor>(
    exec: &E,
    ck: &Checkpoint,
    views: &[View<f32>],
    split: &str,
    background: [f32; 3],
) -> Result<Vec<ViewMetrics>, RunError> {
    views
        .iter()
        .map(|v| {
            let img = render_view(exec, ck, v, background);
            Ok(ViewMetrics {
                split: split.to_string(),
                view: v.id,
                psnr: psnr(&img, &v.image)?,
                ssim: ssim(&img, &v.image)? as f64,
            })
        })
        .collect()
}
