//! NeRF-synthetic ("Blender") datasets: a `transforms_<split>.json` manifest
//! with a horizontal field of view and camera-to-world matrices per frame.
//!
//! The manifest uses the OpenGL camera frame (x right, y up, looking down
//! -z), which is also the internal convention, so a pose converts by rigid
//! inversion alone.

use std::path::{Path, PathBuf};

use illumsplat_core::field::Aabb;
use illumsplat_core::gaussian::CameraView;
use illumsplat_core::scene::{Dataset, View};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::IoError;
use crate::image_io;

const RIGID_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub camera_angle_x: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub background: [f32; 3],
    /// Half side of the cube used as the initial grid and init volume.
    pub scene_half_extent: f32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { background: [1.0; 3], scene_half_extent: 1.5 }
    }
}

pub fn focal_from_fov(width: usize, fov_x: f64) -> f64 {
    width as f64 / (2.0 * (fov_x / 2.0).tan())
}

pub fn fov_from_focal(width: usize, fx: f64) -> f64 {
    2.0 * (width as f64 / (2.0 * fx)).atan()
}

/// Rotation block orthonormal with determinant +1 and last row `(0,0,0,1)`.
pub fn is_rigid(m: &[[f64; 4]; 4]) -> bool {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return false;
    }
    if m[3] != [0.0, 0.0, 0.0, 1.0] {
        return false;
    }
    for i in 0..3 {
        for j in 0..3 {
            let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (d - want).abs() > RIGID_TOLERANCE {
                return false;
            }
        }
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    (det - 1.0).abs() <= RIGID_TOLERANCE
}

/// Inverse of a rigid transform: `[Rᵀ | -Rᵀ t]`. Camera-to-world and
/// world-to-camera convert into each other with this same map.
pub fn invert_rigid(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
        out[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
    }
    out[3][3] = 1.0;
    out
}

pub fn camera_from_c2w(c2w: &[[f64; 4]; 4], fx: f64, width: usize, height: usize) -> CameraView<f32> {
    let w2c = invert_rigid(c2w);
    CameraView {
        world_to_camera: w2c.map(|r| r.map(|v| v as f32)),
        fx: fx as f32,
        fy: fx as f32,
        cx: width as f32 / 2.0,
        cy: height as f32 / 2.0,
        width,
        height,
        near: 0.01,
        far: 100.0,
    }
}

pub fn c2w_from_camera(camera: &CameraView<f32>) -> [[f64; 4]; 4] {
    invert_rigid(&camera.world_to_camera.map(|r| r.map(|v| v as f64)))
}

pub fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("transforms_{split}.json"))
}

fn image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

/// Loads every frame of one split. Images must share one resolution.
pub fn load_split(dir: &Path, split: &str, background: [f32; 3]) -> Result<Vec<View<f32>>, IoError> {
    let path = manifest_path(dir, split);
    let text = std::fs::read_to_string(&path).map_err(IoError::io(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| IoError::Manifest { path: path.clone(), msg: e.to_string() })?;
    if !(manifest.camera_angle_x > 0.0 && manifest.camera_angle_x < std::f64::consts::PI) {
        return Err(IoError::Manifest { path, msg: "camera_angle_x outside (0, pi)".into() });
    }
    for (k, f) in manifest.frames.iter().enumerate() {
        if !is_rigid(&f.transform_matrix) {
            return Err(IoError::NonRigid { path, frame: k });
        }
    }
    let images: Vec<_> = manifest
        .frames
        .par_iter()
        .map(|f| {
            let p = image_path(dir, &f.file_path);
            image_io::load_rgb(&p, background).map(|img| (p, img))
        })
        .collect::<Result<_, _>>()?;
    let Some((_, first)) = images.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width, first.height);
    let fx = focal_from_fov(w, manifest.camera_angle_x);
    let mut views = Vec::with_capacity(images.len());
    for (id, ((p, img), f)) in images.into_iter().zip(&manifest.frames).enumerate() {
        if (img.width, img.height) != (w, h) {
            return Err(IoError::ImageSize {
                path: p,
                expected: (w as u32, h as u32),
                got: (img.width as u32, img.height as u32),
            });
        }
        views.push(View { id, camera: camera_from_c2w(&f.transform_matrix, fx, w, h), image: img });
    }
    Ok(views)
}

/// Train split (required) and test split (optional).
pub fn load_nerf_synthetic(dir: &Path, opts: &LoadOptions) -> Result<Dataset<f32>, IoError> {
    let train = load_split(dir, "train", opts.background)?;
    let test = if manifest_path(dir, "test").exists() { load_split(dir, "test", opts.background)? } else { Vec::new() };
    if let (Some(a), Some(b)) = (train.first(), test.first()) {
        if a.image.width != b.image.width || a.image.height != b.image.height {
            return Err(IoError::ImageSize {
                path: manifest_path(dir, "test"),
                expected: (a.image.width as u32, a.image.height as u32),
                got: (b.image.width as u32, b.image.height as u32),
            });
        }
    }
    let scene_box = Aabb::cube(opts.scene_half_extent)?;
    Ok(Dataset::new(train, test, scene_box, opts.background)?)
}

/// Writes one split in the manifest format; every camera must share `fx`
/// and the image width.
pub fn save_split(dir: &Path, split: &str, views: &[View<f32>]) -> Result<(), IoError> {
    let sub = dir.join(split);
    std::fs::create_dir_all(&sub).map_err(IoError::io(&sub))?;
    let fov = views.first().map_or(0.7, |v| fov_from_focal(v.camera.width, v.camera.fx as f64));
    let mut frames = Vec::with_capacity(views.len());
    for (k, v) in views.iter().enumerate() {
        let name = format!("r_{k}");
        image_io::save_png(&sub.join(format!("{name}.png")), &v.image)?;
        frames.push(Frame { file_path: format!("./{split}/{name}"), transform_matrix: c2w_from_camera(&v.camera) });
    }
    let manifest = Manifest { camera_angle_x: fov, frames };
    let path = manifest_path(dir, split);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(IoError::io(&path))
}
