//! Full differentiable render of a model from one camera:
//! covariance and projection, illumination lookup, neural shading, tile
//! compositing, and the chained backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoding::{fourier_backward, fourier_encode, ide_backward, ide_encode, FOURIER_DIM, IDE_DIM};
use crate::exec::Executor;
use crate::field::{FieldGrad, IlluminationField};
use crate::gaussian::{
    build_covariance, build_covariance_backward, conic_backward, cov2d_to_conic, project_backward, project_gaussian,
    view_dir_backward, CameraView, GaussianSet, ProjectedGaussian, ProjectionGrad, COV2D_DILATION,
};
use crate::raster::{rasterize_backward, rasterize_with, ImageBuffer, RasterOutput, Splat, SplatList};
use crate::scalar::{sigmoid, Mat3, Real};
use crate::shader::{shade, shade_backward, NeuralShader, RadianceSample, ShaderTape, ShadingVariant};

/// Gaussians per work unit in the per-Gaussian passes. Fixed so results do
/// not depend on the worker count.
const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub gaussians: GaussianSet<T>,
    pub field: IlluminationField<T>,
    pub shader: NeuralShader<T>,
}

impl<T: Real> Model<T> {
    pub fn variant(&self) -> ShadingVariant {
        self.shader.variant
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.is_finite() && self.field.is_finite() && self.shader.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions<T> {
    pub background: [T; 3],
    /// When false (diffuse warm-up) the specular branch is skipped entirely.
    pub specular: bool,
    pub dilation: T,
}

impl<T: Real> RenderOptions<T> {
    pub fn new(background: [T; 3], specular: bool) -> Self {
        Self { background, specular, dilation: T::lit(COV2D_DILATION) }
    }
}

#[derive(Debug, Clone)]
struct Visible<T> {
    index: usize,
    cov: Mat3<T>,
    proj: ProjectedGaussian<T>,
    conic: [T; 3],
    opacity: T,
    radiance: RadianceSample<T>,
    tape: Option<ShaderTape<T>>,
}

/// Everything the backward pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct RenderCache<T> {
    visible: Vec<Visible<T>>,
    /// Gaussian index -> slot in `visible` (`u32::MAX` when culled).
    slot: Vec<u32>,
    pub splats: SplatList<T>,
    pub raster: RasterOutput<T>,
    options: RenderOptions<T>,
}

impl<T: Real> RenderCache<T> {
    pub fn visible_count(&self) -> usize {
        self.visible.len()
    }

    pub fn is_visible(&self, i: usize) -> bool {
        self.slot.get(i).is_some_and(|&s| s != u32::MAX)
    }
}

/// Gradients of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad<T> {
    pub gaussians: GaussianSet<T>,
    pub field: FieldGrad<T>,
    pub shader: NeuralShader<T>,
    /// Per Gaussian, `|dL/d mean2d|` in normalized device units (zero when
    /// culled); drives densification.
    pub screen_grad: Vec<T>,
    pub visible: Vec<bool>,
}

fn encode_direction<T: Real>(variant: ShadingVariant, dir: [T; 3], roughness: T, out: &mut Vec<T>) -> Option<()> {
    out.clear();
    match variant {
        ShadingVariant::NoIde => out.extend_from_slice(&fourier_encode(dir).ok()?),
        _ => out.extend_from_slice(&ide_encode(dir, roughness).ok()?.values),
    }
    Some(())
}

fn forward_one<T: Real>(
    model: &Model<T>,
    view: &CameraView<T>,
    opts: &RenderOptions<T>,
    i: usize,
    scratch: &mut (Vec<T>, Vec<T>, Vec<T>),
) -> Option<Visible<T>> {
    let g = &model.gaussians;
    let cov = build_covariance(g.rotations[i], g.log_scales[i]).ok()?;
    let proj = project_gaussian(g.means[i], &cov, view, opts.dilation)?;
    let conic = cov2d_to_conic(proj.cov2d)?;
    let opacity = g.opacity(i);
    let (spec, tape) = if opts.specular {
        let (scalars, light, enc) = scratch;
        scalars.resize(3 * model.field.components(), T::zero());
        light.resize(model.field.feature_dim(), T::zero());
        model.field.eval_into(g.means[i], scalars, light);
        encode_direction(model.variant(), proj.view_dir, g.roughness(i), enc)?;
        let mut tape = ShaderTape::default();
        let tint = g.tint(i);
        let c = model.shader.forward(&g.brdf[i], light, enc, tint, &mut tape).ok()?;
        (c, Some(tape))
    } else {
        ([T::zero(); 3], None)
    };
    let radiance = shade(g.diffuse_raw[i], spec, opts.specular);
    Some(Visible { index: i, cov, proj, conic, opacity, radiance, tape })
}

/// Renders `model` from `view`; returns the image and the cache for
/// [`render_backward`].
pub fn render_forward<T: Real, E: Executor>(
    exec: &E,
    model: &Model<T>,
    view: &CameraView<T>,
    opts: &RenderOptions<T>,
) -> (ImageBuffer<T>, RenderCache<T>) {
    let n = model.gaussians.len();
    let chunks = n.div_ceil(CHUNK);
    let parts = exec.map(chunks, |c| {
        let mut scratch = (Vec::new(), Vec::new(), Vec::new());
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .filter_map(|i| forward_one(model, view, opts, i, &mut scratch))
            .collect::<Vec<_>>()
    });
    let visible: Vec<Visible<T>> = parts.into_iter().flatten().collect();
    let mut slot = vec![u32::MAX; n];
    let mut splats = SplatList { splats: Vec::with_capacity(visible.len()) };
    for (k, v) in visible.iter().enumerate() {
        slot[v.index] = k as u32;
        splats.splats.push(Splat {
            mean2d: v.proj.mean2d,
            conic: v.conic,
            color: v.radiance.color,
            opacity: v.opacity,
            depth: v.proj.view_depth,
            source: v.index as u32,
        });
    }
    splats.sort_by_depth();
    let raster = rasterize_with(exec, &splats, view.width, view.height, opts.background);
    let image = raster.image.clone();
    (image, RenderCache { visible, slot, splats, raster, options: *opts })
}

/// Convenience forward that discards the cache.
pub fn render<T: Real, E: Executor>(
    exec: &E,
    model: &Model<T>,
    view: &CameraView<T>,
    opts: &RenderOptions<T>,
) -> ImageBuffer<T> {
    render_forward(exec, model, view, opts).0
}

struct GaussianGrad<T> {
    index: usize,
    mean: [T; 3],
    rotation: [T; 4],
    log_scale: [T; 3],
    opacity_logit: T,
    diffuse_raw: [T; 3],
    brdf: Vec<T>,
    tint_raw: [T; 3],
    roughness_raw: T,
    light: Vec<T>,
    screen: T,
}

fn backward_one<T: Real>(
    model: &Model<T>,
    view: &CameraView<T>,
    opts: &RenderOptions<T>,
    v: &Visible<T>,
    sg: &crate::raster::SplatGrad<T>,
    shader_grad: &mut NeuralShader<T>,
) -> GaussianGrad<T> {
    let g = &model.gaussians;
    let i = v.index;
    let one = T::one();
    let mut mean = [T::zero(); 3];
    let opacity_logit = sg.opacity * v.opacity * (one - v.opacity);
    let (diffuse_raw, d_spec) = shade_backward(&v.radiance, sg.color);

    let mut brdf = Vec::new();
    let mut tint_raw = [T::zero(); 3];
    let mut roughness_raw = T::zero();
    let mut light = Vec::new();
    if let (true, Some(tape)) = (opts.specular, v.tape.as_ref()) {
        let tint = g.tint(i);
        let gi = model.shader.backward(tape, tint, d_spec, shader_grad);
        for c in 0..3 {
            tint_raw[c] = gi.tint[c] * tint[c] * (one - tint[c]);
        }
        if model.variant().uses_brdf() {
            brdf = gi.brdf;
        }
        light = gi.light;
        let d_dir = match model.variant() {
            ShadingVariant::NoIde => {
                let mut up = [T::zero(); FOURIER_DIM];
                up.copy_from_slice(&gi.encoding);
                fourier_backward(v.proj.view_dir, &up).unwrap_or([T::zero(); 3])
            }
            _ => {
                let mut up = [T::zero(); IDE_DIM];
                up.copy_from_slice(&gi.encoding);
                let (d_dir, d_rough) =
                    ide_backward(v.proj.view_dir, g.roughness(i), &up).unwrap_or(([T::zero(); 3], T::zero()));
                roughness_raw = d_rough * sigmoid(g.roughness_raw[i]);
                d_dir
            }
        };
        let dm = view_dir_backward(g.means[i], view, d_dir);
        for k in 0..3 {
            mean[k] += dm[k];
        }
    }

    let d_cov2d = conic_backward(v.conic, sg.conic);
    let up = ProjectionGrad { mean2d: sg.mean2d, cov2d: d_cov2d, depth: T::zero() };
    let (dm, d_cov) = project_backward(g.means[i], &v.cov, view, &up);
    for k in 0..3 {
        mean[k] += dm[k];
    }
    let (rotation, log_scale) =
        build_covariance_backward(g.rotations[i], g.log_scales[i], &d_cov).unwrap_or(([T::zero(); 4], [T::zero(); 3]));
    let half = T::lit(0.5);
    let sx = sg.mean2d[0] * T::lit(view.width as f64) * half;
    let sy = sg.mean2d[1] * T::lit(view.height as f64) * half;
    GaussianGrad {
        index: i,
        mean,
        rotation,
        log_scale,
        opacity_logit,
        diffuse_raw,
        brdf,
        tint_raw,
        roughness_raw,
        light,
        screen: (sx * sx + sy * sy).sqrt(),
    }
}

/// Backpropagates `grad_image = dL/d(image)` through the render recorded in
/// `cache`.
pub fn render_backward<T: Real, E: Executor>(
    exec: &E,
    model: &Model<T>,
    view: &CameraView<T>,
    cache: &RenderCache<T>,
    grad_image: &[T],
) -> ModelGrad<T> {
    let opts = &cache.options;
    let splat_grads = rasterize_backward(exec, &cache.splats, &cache.raster, opts.background, grad_image);
    // re-index splat gradients by visible slot
    let mut by_slot = vec![crate::raster::SplatGrad::default(); cache.visible.len()];
    for (s, g) in cache.splats.splats.iter().zip(&splat_grads) {
        by_slot[cache.slot[s.source as usize] as usize] = *g;
    }

    let nv = cache.visible.len();
    let chunks = nv.div_ceil(CHUNK);
    let parts = exec.map(chunks, |c| {
        let mut sgrad = model.shader.zeros_like();
        let grads: Vec<GaussianGrad<T>> = (c * CHUNK..((c + 1) * CHUNK).min(nv))
            .map(|k| backward_one(model, view, opts, &cache.visible[k], &by_slot[k], &mut sgrad))
            .collect();
        (grads, sgrad)
    });

    let n = model.gaussians.len();
    let mut out = ModelGrad {
        gaussians: GaussianSet::zeros(n),
        field: FieldGrad::zeros_like(&model.field),
        shader: model.shader.zeros_like(),
        screen_grad: vec![T::zero(); n],
        visible: vec![false; n],
    };
    let mut scratch = vec![T::zero(); 3 * model.field.components()];
    for (grads, sgrad) in parts {
        out.shader.add_assign(&sgrad);
        for gg in grads {
            let i = gg.index;
            let gs = &mut out.gaussians;
            let mut mean = gg.mean;
            if !gg.light.is_empty() {
                let dp = model.field.backward_with_scratch(
                    model.gaussians.means[i],
                    &gg.light,
                    &mut out.field,
                    &mut scratch,
                );
                for k in 0..3 {
                    mean[k] += dp[k];
                }
            }
            gs.means[i] = mean;
            gs.rotations[i] = gg.rotation;
            gs.log_scales[i] = gg.log_scale;
            gs.opacity_logits[i] = gg.opacity_logit;
            gs.diffuse_raw[i] = gg.diffuse_raw;
            if !gg.brdf.is_empty() {
                gs.brdf[i].copy_from_slice(&gg.brdf);
            }
            gs.tint_raw[i] = gg.tint_raw;
            gs.roughness_raw[i] = gg.roughness_raw;
            out.screen_grad[i] = gg.screen;
            out.visible[i] = true;
        }
    }
    out
}
