//! JSON-lines records for training logs and evaluation output.

use std::io::Write;

use illumsplat_core::train::StepRecord;
use serde::Serialize;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StepLine {
    pub iteration: u32,
    pub view: usize,
    pub loss: f64,
    pub l1: f64,
    pub dssim: f64,
    pub psnr: f64,
    pub gaussians: usize,
    pub specular: bool,
    pub shader_grad_norm: f64,
    pub bbox_volume: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densify: Option<DensifyLine>,
    pub opacity_reset: bool,
    pub shrunk: bool,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct DensifyLine {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

impl From<&StepRecord> for StepLine {
    fn from(r: &StepRecord) -> Self {
        Self {
            iteration: r.iteration,
            view: r.view,
            loss: r.loss,
            l1: r.l1,
            dssim: r.dssim,
            psnr: r.psnr,
            gaussians: r.gaussians,
            specular: r.specular,
            shader_grad_norm: r.shader_grad_norm,
            bbox_volume: r.bbox_volume,
            densify: r.densify.map(|d| DensifyLine { cloned: d.cloned, split: d.split, pruned: d.pruned }),
            opacity_reset: r.opacity_reset,
            shrunk: r.shrunk,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ViewMetrics {
    pub split: String,
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MeanMetrics {
    pub split: String,
    pub views: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MeanMetrics {
    pub fn of(split: &str, views: &[ViewMetrics]) -> Self {
        let n = views.len().max(1) as f64;
        Self {
            split: split.to_string(),
            views: views.len(),
            mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
            mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        }
    }
}

pub fn write_line<W: Write, S: Serialize>(out: &mut W, record: &S) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}
