//! Posed image collections and the procedural probe scene.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::gaussian::{build_covariance, cov2d_to_conic, project_gaussian, CameraView, GaussianSet, COV2D_DILATION};
use crate::raster::{rasterize_reference, ImageBuffer, Splat, SplatList};
use crate::scalar::{dot3, logit, norm3, sub3, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct View<T> {
    pub id: usize,
    pub camera: CameraView<T>,
    pub image: ImageBuffer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub train: Vec<View<T>>,
    pub test: Vec<View<T>>,
    /// Region assumed to contain the scene; Gaussians are initialized in it
    /// and the illumination grid starts on it.
    pub scene_box: Aabb<T>,
    /// Radius of the camera rig, scaled by 1.1; sets spatial learning rates
    /// and the split threshold.
    pub extent: T,
    pub background: [T; 3],
}

impl<T: Real> Dataset<T> {
    /// Validates that images within each split share dimensions and match
    /// their cameras.
    pub fn new(train: Vec<View<T>>, test: Vec<View<T>>, scene_box: Aabb<T>, background: [T; 3]) -> Result<Self> {
        for split in [&train, &test] {
            if let Some(first) = split.first() {
                for v in split.iter() {
                    if !v.image.same_size(&first.image)
                        || v.image.width != v.camera.width
                        || v.image.height != v.camera.height
                    {
                        return Err(Error::ImageSizeMismatch);
                    }
                }
            }
        }
        let extent = camera_extent(train.iter().map(|v| &v.camera));
        Ok(Self { train, test, scene_box, extent, background })
    }

    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.train.first().map(|v| (v.image.width, v.image.height))
    }
}

/// `1.1 · max |c_i − mean(c)|` over camera centers; 1 when fewer than two
/// cameras.
pub fn camera_extent<'a, T: Real>(cams: impl Iterator<Item = &'a CameraView<T>>) -> T {
    let centers: Vec<[T; 3]> = cams.map(|c| c.center()).collect();
    if centers.len() < 2 {
        return T::one();
    }
    let n = T::lit(centers.len() as f64);
    let mut mean = [T::zero(); 3];
    for c in &centers {
        for k in 0..3 {
            mean[k] += c[k] / n;
        }
    }
    let r = centers.iter().fold(T::zero(), |m, c| m.max(norm3(sub3(*c, mean))));
    if r > T::zero() {
        T::lit(1.1) * r
    } else {
        T::one()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSpec {
    pub seed: u64,
    pub gaussians: usize,
    pub train_views: usize,
    pub test_views: usize,
    pub resolution: usize,
    /// Peak added by the view-dependent lobe.
    pub specular: f64,
    /// Lobe exponents are drawn log-uniformly from this range per Gaussian.
    pub sharpness: (f64, f64),
    /// Standard deviation of the per-Gaussian perturbation of the surface
    /// normal that orients each lobe; decorrelates neighbouring lobes.
    pub normal_jitter: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians: 200,
            train_views: 20,
            test_views: 10,
            resolution: 64,
            specular: 0.5,
            sharpness: (2.0, 24.0),
            normal_jitter: 0.5,
        }
    }
}

/// Per-Gaussian view-dependent appearance of the probe scene:
/// `clamp(base + tint · max(0, ω·axis)^k, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeMaterial {
    pub base: [f64; 3],
    pub tint: [f64; 3],
    pub axis: [f64; 3],
    pub exponent: f64,
}

impl ProbeMaterial {
    pub fn color(&self, omega: [f64; 3]) -> [f64; 3] {
        let lobe = num_traits::Float::powf(dot3(omega, self.axis).max(0.0), self.exponent);
        core::array::from_fn(|c| (self.base[c] + self.tint[c] * lobe).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScene<T> {
    pub dataset: Dataset<T>,
    pub truth: GaussianSet<T>,
    pub materials: Vec<ProbeMaterial>,
}

const PROBE_RADIUS: f64 = 0.7;
const PROBE_CAMERA_DISTANCE: f64 = 3.0;
const PROBE_FOV_X: f64 = 0.7;
const PROBE_OPACITY: f64 = 0.9;

/// Splats for an explicit per-Gaussian colour function `color(i, ω)`.
pub fn colored_splats<T: Real>(
    gaussians: &GaussianSet<T>,
    view: &CameraView<T>,
    mut color: impl FnMut(usize, [T; 3]) -> [T; 3],
) -> SplatList<T> {
    let mut list = SplatList::default();
    for i in 0..gaussians.len() {
        let Ok(cov) = build_covariance(gaussians.rotations[i], gaussians.log_scales[i]) else {
            continue;
        };
        let Some(p) = project_gaussian(gaussians.means[i], &cov, view, T::lit(COV2D_DILATION)) else {
            continue;
        };
        let Some(conic) = cov2d_to_conic(p.cov2d) else {
            continue;
        };
        list.splats.push(Splat {
            mean2d: p.mean2d,
            conic,
            color: color(i, p.view_dir),
            opacity: gaussians.opacity(i),
            depth: p.view_depth,
            source: i as u32,
        });
    }
    list.sort_by_depth();
    list
}

fn orbit_camera<T: Real>(k: usize, n: usize, phase: f64, res: usize) -> CameraView<T> {
    let golden = core::f64::consts::PI * (3.0 - num_traits::Float::sqrt(5.0));
    let t = (k as f64 + phase) / n.max(1) as f64;
    // elevations between -30° and +60°, azimuth on a golden-angle spiral
    let elev = (-30.0 + 90.0 * t).to_radians();
    let azim = golden * (k as f64 + phase) * 1.0;
    let d = PROBE_CAMERA_DISTANCE;
    let (se, ce) = (num_traits::Float::sin(elev), num_traits::Float::cos(elev));
    let (sa, ca) = (num_traits::Float::sin(azim), num_traits::Float::cos(azim));
    let eye = [d * ce * ca, d * se, d * ce * sa];
    let fx = res as f64 / (2.0 * num_traits::Float::tan(PROBE_FOV_X / 2.0));
    CameraView::look_at(eye.map(T::lit), [T::zero(); 3], [T::zero(), T::one(), T::zero()], T::lit(fx), res, res)
}

fn unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = core::array::from_fn(|_| StandardNormal.sample(rng));
        let n = norm3(v);
        if n > 1e-6 {
            return v.map(|c| c / n);
        }
    }
}

/// Quaternion rotating +z onto `n`.
fn quat_from_z(n: [f64; 3]) -> [f64; 4] {
    let w = 1.0 + n[2];
    if w < 1e-9 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let q = [w, -n[1], n[0], 0.0];
    let s = num_traits::Float::sqrt(q.iter().map(|c| c * c).sum::<f64>());
    q.map(|c| c / s)
}

/// Known Gaussians on a sphere with view-dependent lobes, rendered from an
/// orbit of cameras with the reference compositor over a white background.
pub fn generate_probe_scene<T: Real>(spec: &ProbeSpec) -> ProbeScene<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.gaussians;
    let mut truth = GaussianSet::zeros(n);
    let mut materials = Vec::with_capacity(n);
    let spacing = PROBE_RADIUS * num_traits::Float::sqrt(4.0 * core::f64::consts::PI / n.max(1) as f64);
    let light = {
        let a = [0.4, 0.8, 0.45];
        let l = norm3(a);
        a.map(|c| c / l)
    };
    let (klo, khi) = spec.sharpness;
    for i in 0..n {
        let normal = unit(&mut rng);
        truth.means[i] = normal.map(|c| T::lit(c * PROBE_RADIUS));
        truth.rotations[i] = quat_from_z(normal).map(T::lit);
        let tangential = num_traits::Float::ln(0.5 * spacing * rng.gen_range(0.8..1.2));
        let thin = num_traits::Float::ln(0.15 * spacing);
        truth.log_scales[i] = [tangential, tangential, thin].map(T::lit);
        truth.opacity_logits[i] = logit(T::lit(PROBE_OPACITY));
        let base: [f64; 3] = core::array::from_fn(|c| {
            let smooth = 0.5 + 0.25 * num_traits::Float::sin(2.5 * normal[c] + c as f64);
            (smooth + rng.gen_range(-0.08..0.08)).clamp(0.05, 0.8)
        });
        truth.diffuse_raw[i] = base.map(|b| logit(T::lit(b)));
        // mirror direction of the light about a perturbed normal
        let bump: [f64; 3] = core::array::from_fn(|c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            normal[c] + spec.normal_jitter * z
        });
        let bl = norm3(bump).max(1e-9);
        let bump = bump.map(|c| c / bl);
        let nl = dot3(bump, light);
        let axis = core::array::from_fn(|c| 2.0 * nl * bump[c] - light[c]);
        let hue = rng.gen_range(0.6..1.0);
        let exponent = num_traits::Float::exp(rng.gen_range(num_traits::Float::ln(klo)..=num_traits::Float::ln(khi)));
        materials.push(ProbeMaterial {
            base,
            tint: [spec.specular, spec.specular * hue, spec.specular * hue * hue],
            axis,
            exponent,
        });
    }

    let background = [T::one(); 3];
    let render_split = |count: usize, phase: f64, offset: usize| -> Vec<View<T>> {
        (0..count)
            .map(|k| {
                let camera = orbit_camera::<T>(k, count, phase, spec.resolution);
                let splats =
                    colored_splats(&truth, &camera, |i, w| materials[i].color(w.map(|c| c.as_f64())).map(T::lit));
                let (image, _) = rasterize_reference(&splats, &camera, background);
                View { id: offset + k, camera, image }
            })
            .collect()
    };
    let train = render_split(spec.train_views, 0.0, 0);
    let test = render_split(spec.test_views, 0.5, spec.train_views);
    let scene_box = Aabb::cube(T::one()).expect("unit cube");
    let dataset = Dataset::new(train, test, scene_box, background).expect("probe views share one size");
    ProbeScene { dataset, truth, materials }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_probe_is_background() {
        let spec = ProbeSpec { gaussians: 0, train_views: 2, test_views: 1, resolution: 16, ..Default::default() };
        let s = generate_probe_scene::<f64>(&spec);
        for v in s.dataset.train.iter().chain(&s.dataset.test) {
            assert!(v.image.data.iter().all(|&c| c == 1.0));
        }
    }

    #[test]
    fn probe_is_reproducible() {
        let spec = ProbeSpec { gaussians: 20, train_views: 3, test_views: 1, resolution: 16, ..Default::default() };
        assert_eq!(generate_probe_scene::<f32>(&spec), generate_probe_scene::<f32>(&spec));
    }

    #[test]
    fn quat_from_z_maps_axis() {
        let n = [0.3f64, -0.5, 0.81];
        let l = norm3(n);
        let n = n.map(|c| c / l);
        let q = quat_from_z(n);
        let r = crate::gaussian::rotation_matrix(q).unwrap();
        for k in 0..3 {
            assert!((r[k][2] - n[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn extent_of_ring() {
        let cams: Vec<CameraView<f64>> = (0..8).map(|k| orbit_camera(k, 8, 0.0, 8)).collect();
        let e = camera_extent(cams.iter());
        assert!(e > 0.0 && e <= 1.1 * 2.0 * PROBE_CAMERA_DISTANCE);
    }
}
