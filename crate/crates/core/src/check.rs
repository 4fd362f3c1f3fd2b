//! Independent oracles for the differentiable operators: a dense-tensor
//! field, the untiled compositor, and central finite differences in f64.
//! Used by the self-check command and the test suites.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{fourier_backward, fourier_encode, ide_backward, ide_encode, FOURIER_DIM, IDE_DIM};
use crate::exec::Serial;
use crate::field::{Aabb, FieldGrad, IlluminationField};
use crate::gaussian::{
    build_covariance, build_covariance_backward, conic_backward, cov2d_to_conic, project_backward, project_gaussian,
    view_dir_backward, CameraView, GaussianSet, ProjectionGrad, BRDF_DIM,
};
use crate::loss::{dssim_loss, l1_loss};
use crate::raster::{
    rasterize, rasterize_backward, rasterize_reference, ImageBuffer, Splat, SplatList, MAX_ALPHA, MIN_ALPHA,
    MIN_TRANSMITTANCE,
};
use crate::render::{render_backward, render_forward, Model, RenderOptions};
use crate::scalar::{logit, softplus_inv};
use crate::shader::{NeuralShader, ShaderTape, ShadingVariant};

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Instances compared (after rejection).
    pub instances: usize,
    /// Instances discarded for lying too close to a non-smooth threshold.
    pub rejected: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_error.is_finite() && self.max_error < self.tolerance
    }
}

/// Backward operators covered by the finite-difference suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    Field,
    Covariance,
    Projection,
    Conic,
    ViewDirection,
    Ide,
    Fourier,
    Shader,
    Rasterizer,
    Dssim,
    L1,
    Render,
}

impl GradOp {
    pub const ALL: [GradOp; 12] = [
        GradOp::Field,
        GradOp::Covariance,
        GradOp::Projection,
        GradOp::Conic,
        GradOp::ViewDirection,
        GradOp::Ide,
        GradOp::Fourier,
        GradOp::Shader,
        GradOp::Rasterizer,
        GradOp::Dssim,
        GradOp::L1,
        GradOp::Render,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Field => "grad/field",
            GradOp::Covariance => "grad/covariance",
            GradOp::Projection => "grad/projection",
            GradOp::Conic => "grad/conic",
            GradOp::ViewDirection => "grad/view-direction",
            GradOp::Ide => "grad/ide",
            GradOp::Fourier => "grad/fourier",
            GradOp::Shader => "grad/shader",
            GradOp::Rasterizer => "grad/rasterizer",
            GradOp::Dssim => "grad/dssim",
            GradOp::L1 => "grad/l1",
            GradOp::Render => "grad/render",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s || o.name().trim_start_matches("grad/") == s)
    }
}

pub const GRAD_TOLERANCE: f64 = 1e-3;
pub const FIELD_ORACLE_TOLERANCE: f64 = 1e-6;
pub const RASTER_ORACLE_TOLERANCE: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let mut d = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        d += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let s = num_traits::Float::sqrt(na).max(num_traits::Float::sqrt(nb)).max(floor);
    num_traits::Float::sqrt(d) / s
}

/// Central differences of `f` at `x` along the listed coordinates.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let x0 = p[i];
            p[i] = x0 + h;
            let fp = f(&p);
            p[i] = x0 - h;
            let fm = f(&p);
            p[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn pick<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return all(n);
    }
    rand::seq::index::sample(rng, n, k).into_vec()
}

fn uniform<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn unit_quat<R: Rng>(rng: &mut R) -> [f64; 4] {
    loop {
        let q: [f64; 4] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>();
        if n > 0.05 && n <= 1.0 {
            let s = num_traits::Float::sqrt(n);
            return q.map(|v| v / s);
        }
    }
}

fn random_view<R: Rng>(rng: &mut R, w: usize, h: usize) -> CameraView<f64> {
    let az = rng.gen_range(0.0..core::f64::consts::TAU);
    let el = rng.gen_range(-1.0..1.0);
    let d = rng.gen_range(3.0..5.0);
    let (se, ce) = (num_traits::Float::sin(el), num_traits::Float::cos(el));
    let eye = [d * ce * num_traits::Float::cos(az), d * se, d * ce * num_traits::Float::sin(az)];
    let target: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-0.2..0.2));
    CameraView::look_at(eye, target, [0.0, 1.0, 0.0], rng.gen_range(0.8..1.4) * w as f64, w, h)
}

// ---------------------------------------------------------------- field oracle

/// Dense node tensor of a field: `features[((i·n + j)·n + k)·P + p]`.
pub struct DenseField {
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    n: usize,
    p: usize,
    features: Vec<f64>,
}

impl DenseField {
    /// Materializes every node value straight from the factor definition.
    pub fn from_field(f: &IlluminationField<f64>) -> Self {
        let n = f.resolution();
        let r_count = f.components();
        let p = f.feature_dim();
        let mut features = vec![0.0; n * n * n * p];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let base = ((i * n + j) * n + k) * p;
                    for r in 0..r_count {
                        let pl = r * n * n;
                        let terms = [
                            f.vec_x[r * n + i] * f.mat_yz[pl + j * n + k],
                            f.vec_y[r * n + j] * f.mat_xz[pl + i * n + k],
                            f.vec_z[r * n + k] * f.mat_xy[pl + i * n + j],
                        ];
                        for (a, t) in terms.iter().enumerate() {
                            let row = &f.basis[(3 * r + a) * p..(3 * r + a + 1) * p];
                            for q in 0..p {
                                features[base + q] += t * row[q];
                            }
                        }
                    }
                }
            }
        }
        Self { bbox_min: f.bbox().min(), bbox_max: f.bbox().max(), n, p, features }
    }

    /// Trilinear interpolation of the node tensor, clamping to the box.
    pub fn eval(&self, x: [f64; 3]) -> Vec<f64> {
        let cells = self.n - 1;
        let mut idx = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let q = x[a].clamp(self.bbox_min[a], self.bbox_max[a]);
            let u = (q - self.bbox_min[a]) / (self.bbox_max[a] - self.bbox_min[a]) * cells as f64;
            let c = (num_traits::Float::floor(u) as usize).min(cells - 1);
            idx[a] = c;
            t[a] = u - c as f64;
        }
        let mut out = vec![0.0; self.p];
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { t[a] } else { 1.0 - t[a] }).product();
            let (i, j, k) = (idx[0] + o[0], idx[1] + o[1], idx[2] + o[2]);
            let base = ((i * self.n + j) * self.n + k) * self.p;
            for q in 0..self.p {
                out[q] += w * self.features[base + q];
            }
        }
        out
    }
}

fn random_field<R: Rng>(rng: &mut R, max_res: usize, max_r: usize, max_p: usize) -> IlluminationField<f64> {
    let lo: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-2.0..0.0));
    let hi: [f64; 3] = core::array::from_fn(|a| lo[a] + rng.gen_range(0.5..3.0));
    let bbox = Aabb::new(lo, hi).expect("valid box");
    let res = rng.gen_range(2..=max_res);
    let r = rng.gen_range(1..=max_r);
    let p = rng.gen_range(1..=max_p);
    IlluminationField::random(bbox, res, r, p, 1.0, 1.0, rng).expect("valid shape")
}

/// Field evaluation against the dense-tensor oracle; points are sampled in
/// a box 20% larger than the field's so clamping is exercised.
pub fn check_field_oracle(seed: u64, fields: usize, points: usize, max_res: usize, max_r: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..fields {
        let f = random_field(&mut rng, max_res, max_r, 8);
        let dense = DenseField::from_field(&f);
        let (lo, hi) = (f.bbox().min(), f.bbox().max());
        for k in 0..points {
            let x: [f64; 3] = core::array::from_fn(|a| {
                let pad = 0.1 * (hi[a] - lo[a]);
                // every fourth point sits exactly on a node
                if k % 4 == 0 {
                    let n = f.resolution() - 1;
                    lo[a] + (hi[a] - lo[a]) * rng.gen_range(0..=n) as f64 / n as f64
                } else {
                    rng.gen_range(lo[a] - pad..hi[a] + pad)
                }
            });
            let got = f.eval(x).features;
            let want = dense.eval(x);
            worst = worst.max(relative_error(&got, &want, 1e-12));
            count += 1;
        }
    }
    CheckResult {
        name: "oracle/field-dense",
        instances: count,
        rejected: 0,
        max_error: worst,
        tolerance: FIELD_ORACLE_TOLERANCE,
    }
}

// ----------------------------------------------------------- raster oracle

/// Random depth-sorted splats over a `size × size` image.
pub fn random_splats<R: Rng>(rng: &mut R, count: usize, size: usize) -> SplatList<f64> {
    let s = size as f64;
    let mut list = SplatList::default();
    for i in 0..count {
        let sx = rng.gen_range(0.4..0.25 * s);
        let sy = rng.gen_range(0.4..0.25 * s);
        let th = rng.gen_range(0.0..core::f64::consts::PI);
        let (c, si) = (num_traits::Float::cos(th), num_traits::Float::sin(th));
        let cov =
            [c * c * sx * sx + si * si * sy * sy, c * si * (sx * sx - sy * sy), si * si * sx * sx + c * c * sy * sy];
        list.splats.push(Splat {
            mean2d: [rng.gen_range(-0.2 * s..1.2 * s), rng.gen_range(-0.2 * s..1.2 * s)],
            conic: cov2d_to_conic(cov).expect("positive definite"),
            color: core::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            opacity: rng.gen_range(0.0..1.0),
            depth: rng.gen_range(1.0..10.0),
            source: i as u32,
        });
    }
    list.sort_by_depth();
    list
}

/// Tiled compositor against the untiled reference on random scenes.
pub fn check_raster_oracle(seed: u64, scenes: usize, max_splats: usize, size: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view = CameraView::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], size as f64, size, size);
    let mut worst: f64 = 0.0;
    for _ in 0..scenes {
        let n = rng.gen_range(0..=max_splats);
        let splats = random_splats(&mut rng, n, size);
        let bg: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let tiled = rasterize(&splats, &view, bg);
        let (reference, _) = rasterize_reference(&splats, &view, bg);
        for (a, b) in tiled.image.data.iter().zip(&reference.data) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult {
        name: "oracle/raster-reference",
        instances: scenes,
        rejected: 0,
        max_error: worst,
        tolerance: RASTER_ORACLE_TOLERANCE,
    }
}

// ------------------------------------------------------- gradient suites

struct Instance {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
}

fn run_suite<R: Rng>(
    op: GradOp,
    instances: usize,
    rng: &mut R,
    flip: bool,
    mut gen: impl FnMut(&mut R) -> Option<Instance>,
) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut rejected = 0;
    while accepted < instances && rejected < 20 * instances + 100 {
        match gen(rng) {
            Some(mut inst) => {
                if flip {
                    inst.analytic.iter_mut().for_each(|v| *v = -*v);
                }
                worst = worst.max(relative_error(&inst.analytic, &inst.numeric, 1e-9));
                accepted += 1;
            }
            None => rejected += 1,
        }
    }
    CheckResult { name: op.name(), instances: accepted, rejected, max_error: worst, tolerance: GRAD_TOLERANCE }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn field_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let f = random_field(rng, 6, 3, 5);
    let (lo, hi) = (f.bbox().min(), f.bbox().max());
    let n = f.resolution() - 1;
    // keep the point away from cell faces, where the stencil switches
    let x: [f64; 3] = core::array::from_fn(|a| {
        let cell = rng.gen_range(0..n) as f64 + rng.gen_range(0.05..0.95);
        lo[a] + (hi[a] - lo[a]) * cell / n as f64
    });
    let up = uniform(rng, f.feature_dim(), -1.0, 1.0);
    let (g, dp) = f.backward(x, &up);

    let sizes: Vec<usize> = f.slices().iter().map(|s| s.len()).collect();
    let mut params: Vec<f64> = f.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let np = params.len();
    params.extend_from_slice(&x);
    let mut analytic: Vec<f64> = g.slices().iter().flat_map(|s| s.iter().copied()).collect();
    analytic.extend_from_slice(&dp);
    let coords = pick(rng, np, 40).into_iter().chain(np..np + 3).collect::<Vec<_>>();
    let mut work = f.clone();
    let numeric = central_difference(
        |v| {
            let mut off = 0;
            for (s, len) in work.slices_mut().into_iter().zip(&sizes) {
                s.copy_from_slice(&v[off..off + len]);
                off += len;
            }
            dot(&up, &work.eval([v[np], v[np + 1], v[np + 2]]).features)
        },
        &params,
        &coords,
        FD_STEP,
    );
    Some(Instance { analytic: coords.iter().map(|&i| analytic[i]).collect(), numeric })
}

fn sym_from6(v: &[f64]) -> [[f64; 3]; 3] {
    [[v[0], v[3], v[4]], [v[3], v[1], v[5]], [v[4], v[5], v[2]]]
}

fn grad6(g: &[[f64; 3]; 3]) -> [f64; 6] {
    [g[0][0], g[1][1], g[2][2], g[0][1] + g[1][0], g[0][2] + g[2][0], g[1][2] + g[2][1]]
}

fn covariance_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    // unnormalized quaternion exercises the normalization backward
    let q: [f64; 4] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    if q.iter().map(|v| v * v).sum::<f64>() < 0.1 {
        return None;
    }
    let ls: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-2.0..1.0));
    let w: [[f64; 3]; 3] = core::array::from_fn(|_| core::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
    let (dq, dls) = build_covariance_backward(q, ls, &w).ok()?;
    let x: Vec<f64> = q.iter().chain(&ls).copied().collect();
    let numeric = central_difference(
        |v| {
            let c = build_covariance([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]]).unwrap();
            (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| w[i][j] * c[i][j]).sum()
        },
        &x,
        &all(7),
        FD_STEP,
    );
    Some(Instance { analytic: dq.iter().chain(&dls).copied().collect(), numeric })
}

fn random_cov<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let ls: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-3.0..-0.5));
    build_covariance(unit_quat(rng), ls).unwrap()
}

fn projection_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let view = random_view(rng, 40, 30);
    let mean: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-0.8..0.8));
    let cov = random_cov(rng);
    project_gaussian(mean, &cov, &view, 0.3)?;
    let up = ProjectionGrad {
        mean2d: core::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        cov2d: core::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        depth: 0.0,
    };
    let (dm, dc) = project_backward(mean, &cov, &view, &up);
    let x: Vec<f64> =
        mean.iter().copied().chain([cov[0][0], cov[1][1], cov[2][2], cov[0][1], cov[0][2], cov[1][2]]).collect();
    let numeric = central_difference(
        |v| {
            let p = project_gaussian([v[0], v[1], v[2]], &sym_from6(&v[3..]), &view, 0.3).unwrap();
            dot(&up.mean2d, &p.mean2d) + dot(&up.cov2d, &p.cov2d)
        },
        &x,
        &all(9),
        FD_STEP,
    );
    Some(Instance { analytic: dm.iter().copied().chain(grad6(&dc)).collect(), numeric })
}

fn conic_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let a = rng.gen_range(0.5..20.0);
    let c = rng.gen_range(0.5..20.0);
    let b = rng.gen_range(-0.9..0.9) * num_traits::Float::sqrt(a * c);
    let cov = [a, b, c];
    let conic = cov2d_to_conic(cov)?;
    let g: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let analytic = conic_backward(conic, g).to_vec();
    let numeric = central_difference(|v| dot(&g, &cov2d_to_conic([v[0], v[1], v[2]]).unwrap()), &cov, &all(3), FD_STEP);
    Some(Instance { analytic, numeric })
}

fn view_dir_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let view = random_view(rng, 32, 32);
    let mean: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let g: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let cov = random_cov(rng);
    project_gaussian(mean, &cov, &view, 0.3)?;
    let analytic = view_dir_backward(mean, &view, g).to_vec();
    let numeric = central_difference(
        |v| dot(&g, &project_gaussian([v[0], v[1], v[2]], &cov, &view, 0.3).unwrap().view_dir),
        &mean,
        &all(3),
        FD_STEP,
    );
    Some(Instance { analytic, numeric })
}

fn ide_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let d: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-1.5..1.5));
    if d.iter().map(|v| v * v).sum::<f64>() < 0.05 {
        return None;
    }
    let r = num_traits::Float::exp(rng.gen_range(-4.0..1.0));
    let up: [f64; IDE_DIM] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let (dd, dr) = ide_backward(d, r, &up).ok()?;
    let x = [d[0], d[1], d[2], r];
    let numeric =
        central_difference(|v| dot(&up, &ide_encode([v[0], v[1], v[2]], v[3]).unwrap().values), &x, &all(4), FD_STEP);
    Some(Instance { analytic: vec![dd[0], dd[1], dd[2], dr], numeric })
}

fn fourier_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let d: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-1.5..1.5));
    if d.iter().map(|v| v * v).sum::<f64>() < 0.05 {
        return None;
    }
    let up: [f64; FOURIER_DIM] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let analytic = fourier_backward(d, &up).ok()?.to_vec();
    let numeric = central_difference(|v| dot(&up, &fourier_encode([v[0], v[1], v[2]]).unwrap()), &d, &all(3), FD_STEP);
    Some(Instance { analytic, numeric })
}

/// Smallest absolute hidden pre-activation of the shader on `input`.
fn relu_margin(shader: &NeuralShader<f64>, input: &[f64]) -> f64 {
    let [l1, l2, _] = &shader.layers;
    let mut h1 = vec![0.0; l1.outputs];
    l1.forward(input, &mut h1);
    let m1 = h1.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    h1.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut h2 = vec![0.0; l2.outputs];
    l2.forward(&h1, &mut h2);
    h2.iter().fold(m1, |m, v| m.min(v.abs()))
}

fn shader_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let variant = [ShadingVariant::Full, ShadingVariant::OutgoingRadiance, ShadingVariant::NoIde][rng.gen_range(0..3)];
    let p = rng.gen_range(1..8);
    let mut shader = NeuralShader::<f64>::random(variant, p, rng);
    for b in shader.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
        *b += rng.gen_range(-0.5..0.5);
    }
    let brdf = uniform(rng, BRDF_DIM, -1.0, 1.0);
    let light = uniform(rng, p, -1.0, 1.0);
    let enc = uniform(rng, variant.encoding_dim(), -1.0, 1.0);
    let tint: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let up: [f64; 3] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let mut tape = ShaderTape::default();
    shader.forward(&brdf, &light, &enc, tint, &mut tape).ok()?;
    if relu_margin(&shader, &tape.input) < 1e-4 {
        return None;
    }
    let mut grad = shader.zeros_like();
    let gi = shader.backward(&tape, tint, up, &mut grad);

    let sizes: Vec<usize> = shader.slices().iter().map(|s| s.len()).collect();
    let mut x: Vec<f64> = shader.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let mut analytic: Vec<f64> = grad.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let np = x.len();
    x.extend_from_slice(&brdf);
    x.extend_from_slice(&light);
    x.extend_from_slice(&enc);
    x.extend_from_slice(&tint);
    analytic.extend_from_slice(&gi.brdf);
    analytic.extend_from_slice(&gi.light);
    analytic.extend_from_slice(&gi.encoding);
    analytic.extend_from_slice(&gi.tint);
    let n_in = BRDF_DIM + p + variant.encoding_dim() + 3;
    let mut coords = pick(rng, np, 60);
    coords.extend((np..np + n_in).filter(|&i| variant.uses_brdf() || !(np..np + BRDF_DIM).contains(&i)));
    let mut work = shader.clone();
    let (b0, l0, e0) = (np, np + BRDF_DIM, np + BRDF_DIM + p);
    let t0 = e0 + variant.encoding_dim();
    let numeric = central_difference(
        |v| {
            let mut off = 0;
            for (s, len) in work.slices_mut().into_iter().zip(&sizes) {
                s.copy_from_slice(&v[off..off + len]);
                off += len;
            }
            let c = work.specular_color(&v[b0..l0], &v[l0..e0], &v[e0..t0], [v[t0], v[t0 + 1], v[t0 + 2]]).unwrap();
            dot(&up, &c)
        },
        &x,
        &coords,
        FD_STEP,
    );
    Some(Instance { analytic: coords.iter().map(|&i| analytic[i]).collect(), numeric })
}

/// True when every per-pixel compositing decision (skip, cap, stop) is at
/// least a relative `margin` away from its threshold.
pub fn raster_margins_ok(splats: &SplatList<f64>, w: usize, h: usize, margin: f64) -> bool {
    let near = |v: f64, t: f64| (v / t - 1.0).abs() < margin;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            for s in &splats.splats {
                let dx = px - s.mean2d[0];
                let dy = py - s.mean2d[1];
                let q = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                let raw = s.opacity * num_traits::Float::exp(q);
                if near(raw, MIN_ALPHA) || near(raw, MAX_ALPHA) {
                    return false;
                }
                let a = raw.min(MAX_ALPHA);
                if a < MIN_ALPHA {
                    continue;
                }
                let next = t * (1.0 - a);
                if near(next, MIN_TRANSMITTANCE) {
                    return false;
                }
                if next < MIN_TRANSMITTANCE {
                    break;
                }
                t = next;
            }
        }
    }
    true
}

fn pack_splats(s: &SplatList<f64>) -> Vec<f64> {
    s.splats.iter().flat_map(|p| p.mean2d.into_iter().chain(p.conic).chain(p.color).chain([p.opacity])).collect()
}

fn unpack_splats(base: &SplatList<f64>, v: &[f64]) -> SplatList<f64> {
    let mut out = base.clone();
    for (i, s) in out.splats.iter_mut().enumerate() {
        let c = &v[9 * i..9 * i + 9];
        s.mean2d = [c[0], c[1]];
        s.conic = [c[2], c[3], c[4]];
        s.color = [c[5], c[6], c[7]];
        s.opacity = c[8];
    }
    out
}

fn rasterizer_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let size = rng.gen_range(8..20);
    let n = rng.gen_range(1..8);
    let mut splats = random_splats(rng, n, size);
    for s in splats.splats.iter_mut() {
        s.opacity = rng.gen_range(0.05..0.95);
    }
    if !raster_margins_ok(&splats, size, size, 1e-3) {
        return None;
    }
    let view = CameraView::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], size as f64, size, size);
    let bg: [f64; 3] = core::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let gimg = uniform(rng, size * size * 3, -1.0, 1.0);
    let out = rasterize(&splats, &view, bg);
    let grads = rasterize_backward(&Serial, &splats, &out, bg, &gimg);
    let analytic: Vec<f64> =
        grads.iter().flat_map(|g| g.mean2d.into_iter().chain(g.conic).chain(g.color).chain([g.opacity])).collect();
    let x = pack_splats(&splats);
    let numeric = central_difference(
        |v| dot(&gimg, &rasterize(&unpack_splats(&splats, v), &view, bg).image.data),
        &x,
        &all(x.len()),
        FD_STEP,
    );
    Some(Instance { analytic, numeric })
}

fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize) -> ImageBuffer<f64> {
    ImageBuffer { width: w, height: h, data: uniform(rng, w * h * 3, 0.0, 1.0) }
}

fn dssim_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let (w, h) = (rng.gen_range(4..16), rng.gen_range(4..16));
    let a = random_image(rng, w, h);
    let mut b = random_image(rng, w, h);
    // correlate b with a so SSIM is away from zero
    for (bv, av) in b.data.iter_mut().zip(&a.data) {
        *bv = 0.5 * *bv + 0.5 * av;
    }
    let analytic = dssim_loss(&a, &b).ok()?.grad;
    let coords = pick(rng, a.data.len(), 60);
    let mut work = a.clone();
    let numeric = central_difference(
        |v| {
            work.data.copy_from_slice(v);
            dssim_loss(&work, &b).unwrap().value
        },
        &a.data,
        &coords,
        FD_STEP,
    );
    Some(Instance { analytic: coords.iter().map(|&i| analytic[i]).collect(), numeric })
}

fn l1_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let a = random_image(rng, 6, 5);
    let b = random_image(rng, 6, 5);
    if a.data.iter().zip(&b.data).any(|(x, y)| (x - y).abs() < 1e-4) {
        return None;
    }
    let analytic = l1_loss(&a, &b).ok()?.grad;
    let mut work = a.clone();
    let numeric = central_difference(
        |v| {
            work.data.copy_from_slice(v);
            l1_loss(&work, &b).unwrap().value
        },
        &a.data,
        &all(a.data.len()),
        FD_STEP,
    );
    Some(Instance { analytic, numeric })
}

/// A small random model around the origin seen by a random camera.
pub fn random_model<R: Rng>(rng: &mut R, variant: ShadingVariant, gaussians: usize) -> Model<f64> {
    let mut g = GaussianSet::zeros(gaussians);
    for i in 0..gaussians {
        g.means[i] = core::array::from_fn(|_| rng.gen_range(-0.6..0.6));
        g.rotations[i] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        g.log_scales[i] = core::array::from_fn(|_| rng.gen_range(-2.5..-1.2));
        g.opacity_logits[i] = logit(rng.gen_range(0.1..0.9));
        g.diffuse_raw[i] = core::array::from_fn(|_| rng.gen_range(-2.0..0.5));
        for b in g.brdf[i].iter_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        g.tint_raw[i] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        g.roughness_raw[i] = softplus_inv(rng.gen_range(0.05..1.0));
    }
    let bbox = Aabb::cube(1.0).unwrap();
    let field = IlluminationField::random(bbox, 4, 2, 3, 0.5, 0.5, rng).unwrap();
    let mut shader = NeuralShader::random(variant, 3, rng);
    for b in shader.layers[2].bias.iter_mut() {
        *b = rng.gen_range(-1.0..0.0);
    }
    Model { gaussians: g, field, shader }
}

fn model_params(m: &Model<f64>) -> Vec<f64> {
    let g = m.gaussians.slices();
    let f = m.field.slices();
    let s = m.shader.slices();
    g.iter().chain(f.iter()).chain(s.iter()).flat_map(|x| x.iter().copied()).collect()
}

fn set_model_params(m: &mut Model<f64>, v: &[f64]) {
    let mut off = 0;
    let mut put = |s: &mut [f64]| {
        s.copy_from_slice(&v[off..off + s.len()]);
        off += s.len();
    };
    for s in m.gaussians.slices_mut() {
        put(s);
    }
    for s in m.field.slices_mut() {
        put(s);
    }
    for s in m.shader.slices_mut() {
        put(s);
    }
}

fn grad_params(g: &crate::render::ModelGrad<f64>) -> Vec<f64> {
    let a = g.gaussians.slices();
    let f: [&[f64]; 7] = FieldGrad::slices(&g.field);
    let s = g.shader.slices();
    a.iter().chain(f.iter()).chain(s.iter()).flat_map(|x| x.iter().copied()).collect()
}

fn render_instance<R: Rng>(rng: &mut R) -> Option<Instance> {
    let variant = [ShadingVariant::Full, ShadingVariant::OutgoingRadiance, ShadingVariant::NoIde][rng.gen_range(0..3)];
    let count = rng.gen_range(1..5);
    let model = random_model(rng, variant, count);
    let view = random_view(rng, 16, 16);
    let opts = RenderOptions::new([1.0, 1.0, 1.0], rng.gen_bool(0.8));
    let (img, cache) = render_forward(&Serial, &model, &view, &opts);
    if cache.visible_count() == 0 || !raster_margins_ok(&cache.splats, 16, 16, 1e-3) {
        return None;
    }
    let gimg = uniform(rng, img.data.len(), -1.0, 1.0);
    let grad = render_backward(&Serial, &model, &view, &cache, &gimg);
    let analytic = grad_params(&grad);
    let x = model_params(&model);
    let coords = pick(rng, x.len(), 80);
    let mut work = model.clone();
    let mut f = |v: &[f64]| {
        set_model_params(&mut work, v);
        dot(&gimg, &render_forward(&Serial, &work, &view, &opts).0.data)
    };
    let numeric = central_difference(&mut f, &x, &coords, FD_STEP);
    // colour clamping and ReLU kinks are not enumerated here; reject the
    // instance when a smaller step disagrees, which flags a nearby kink
    let finer = central_difference(&mut f, &x, &coords, FD_STEP / 4.0);
    if relative_error(&numeric, &finer, 1e-9) > 1e-4 {
        return None;
    }
    Some(Instance { analytic: coords.iter().map(|&i| analytic[i]).collect(), numeric })
}

/// Finite-difference suite for one operator.
pub fn check_gradient(op: GradOp, seed: u64, instances: usize, flip_sign: bool) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (op as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let r = &mut rng;
    match op {
        GradOp::Field => run_suite(op, instances, r, flip_sign, field_instance),
        GradOp::Covariance => run_suite(op, instances, r, flip_sign, covariance_instance),
        GradOp::Projection => run_suite(op, instances, r, flip_sign, projection_instance),
        GradOp::Conic => run_suite(op, instances, r, flip_sign, conic_instance),
        GradOp::ViewDirection => run_suite(op, instances, r, flip_sign, view_dir_instance),
        GradOp::Ide => run_suite(op, instances, r, flip_sign, ide_instance),
        GradOp::Fourier => run_suite(op, instances, r, flip_sign, fourier_instance),
        GradOp::Shader => run_suite(op, instances, r, flip_sign, shader_instance),
        GradOp::Rasterizer => run_suite(op, instances, r, flip_sign, rasterizer_instance),
        GradOp::Dssim => run_suite(op, instances, r, flip_sign, dssim_instance),
        GradOp::L1 => run_suite(op, instances, r, flip_sign, l1_instance),
        GradOp::Render => run_suite(op, instances, r, flip_sign, render_instance),
    }
}

/// Sizes for [`selfcheck`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckScale {
    pub grad_instances: usize,
    pub field_fields: usize,
    pub field_points: usize,
    pub raster_scenes: usize,
}

impl CheckScale {
    pub fn quick() -> Self {
        Self { grad_instances: 20, field_fields: 20, field_points: 20, raster_scenes: 40 }
    }

    pub fn full() -> Self {
        Self { grad_instances: 100, field_fields: 100, field_points: 100, raster_scenes: 200 }
    }
}

/// Every oracle suite. `flip` negates the analytic gradient of one operator
/// before comparison, so the harness itself can be shown to detect errors.
pub fn selfcheck(seed: u64, scale: CheckScale, flip: Option<GradOp>) -> Vec<CheckResult> {
    let mut out = vec![
        check_field_oracle(seed, scale.field_fields, scale.field_points, 8, 4),
        check_raster_oracle(seed, scale.raster_scenes, 50, 32),
    ];
    for op in GradOp::ALL {
        out.push(check_gradient(op, seed, scale.grad_instances, flip == Some(op)));
    }
    out
}
