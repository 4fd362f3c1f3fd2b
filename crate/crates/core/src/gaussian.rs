//! Per-Gaussian parameters, covariance construction and perspective
//! projection (with analytic backward passes).
//!
//! Camera convention: right-handed camera space, the camera looks down `-z`
//! with `+y` up. Pixel coordinates grow right and down, so
//! `u = cx + fx * x / d` and `v = cy - fy * y / d` with depth `d = -z`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{dot3, mat_mul, mat_t_vec, mat_vec, norm3, sigmoid, softplus, sub3, transpose, Mat3, Real, Vec3};

pub const BRDF_DIM: usize = 48;

/// Screen-space dilation (px²) added to every projected covariance diagonal.
pub const COV2D_DILATION: f64 = 0.3;

/// Structure-of-arrays Gaussian parameters. The same layout is reused for
/// gradients and optimizer moments, so every array stays index-aligned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet<T> {
    pub means: Vec<[T; 3]>,
    /// Quaternions `(w, x, y, z)`; not required to be unit length.
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub diffuse_raw: Vec<[T; 3]>,
    pub brdf: Vec<[T; BRDF_DIM]>,
    pub tint_raw: Vec<[T; 3]>,
    pub roughness_raw: Vec<T>,
}

impl<T: Real> GaussianSet<T> {
    pub fn zeros(n: usize) -> Self {
        let z = T::zero();
        Self {
            means: alloc::vec![[z; 3]; n],
            rotations: alloc::vec![[z; 4]; n],
            log_scales: alloc::vec![[z; 3]; n],
            opacity_logits: alloc::vec![z; n],
            diffuse_raw: alloc::vec![[z; 3]; n],
            brdf: alloc::vec![[z; BRDF_DIM]; n],
            tint_raw: alloc::vec![[z; 3]; n],
            roughness_raw: alloc::vec![z; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Flat parameter groups, in checkpoint order.
    pub fn slices(&self) -> [&[T]; 8] {
        [
            self.means.as_flattened(),
            self.rotations.as_flattened(),
            self.log_scales.as_flattened(),
            &self.opacity_logits,
            self.diffuse_raw.as_flattened(),
            self.brdf.as_flattened(),
            self.tint_raw.as_flattened(),
            &self.roughness_raw,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 8] {
        [
            self.means.as_flattened_mut(),
            self.rotations.as_flattened_mut(),
            self.log_scales.as_flattened_mut(),
            &mut self.opacity_logits,
            self.diffuse_raw.as_flattened_mut(),
            self.brdf.as_flattened_mut(),
            self.tint_raw.as_flattened_mut(),
            &mut self.roughness_raw,
        ]
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(T::zero());
        }
    }

    /// Keeps entries whose `keep` flag is set, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        fn retain<V>(v: &mut Vec<V>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }
        assert_eq!(keep.len(), self.len());
        retain(&mut self.means, keep);
        retain(&mut self.rotations, keep);
        retain(&mut self.log_scales, keep);
        retain(&mut self.opacity_logits, keep);
        retain(&mut self.diffuse_raw, keep);
        retain(&mut self.brdf, keep);
        retain(&mut self.tint_raw, keep);
        retain(&mut self.roughness_raw, keep);
    }

    /// Appends a copy of entry `i` of `other`.
    pub fn push_from(&mut self, other: &Self, i: usize) {
        self.means.push(other.means[i]);
        self.rotations.push(other.rotations[i]);
        self.log_scales.push(other.log_scales[i]);
        self.opacity_logits.push(other.opacity_logits[i]);
        self.diffuse_raw.push(other.diffuse_raw[i]);
        self.brdf.push(other.brdf[i]);
        self.tint_raw.push(other.tint_raw[i]);
        self.roughness_raw.push(other.roughness_raw[i]);
    }

    /// Appends `n` all-zero entries (used for fresh optimizer moments).
    pub fn push_zeros(&mut self, n: usize) {
        let z = T::zero();
        for _ in 0..n {
            self.means.push([z; 3]);
            self.rotations.push([z; 4]);
            self.log_scales.push([z; 3]);
            self.opacity_logits.push(z);
            self.diffuse_raw.push([z; 3]);
            self.brdf.push([z; BRDF_DIM]);
            self.tint_raw.push([z; 3]);
            self.roughness_raw.push(z);
        }
    }

    pub fn opacity(&self, i: usize) -> T {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [T; 3] {
        let s = self.log_scales[i];
        [s[0].exp(), s[1].exp(), s[2].exp()]
    }

    pub fn diffuse(&self, i: usize) -> [T; 3] {
        self.diffuse_raw[i].map(sigmoid)
    }

    pub fn tint(&self, i: usize) -> [T; 3] {
        self.tint_raw[i].map(sigmoid)
    }

    pub fn roughness(&self, i: usize) -> T {
        softplus(self.roughness_raw[i])
    }

    /// Normalizes every quaternion in place; zero quaternions become identity.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > T::zero() && n.is_finite() {
                for c in q.iter_mut() {
                    *c /= n;
                }
            } else {
                *q = [T::one(), T::zero(), T::zero(), T::zero()];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView<T> {
    /// Row-major 4x4 rigid transform; the last row is `(0, 0, 0, 1)`.
    pub world_to_camera: [[T; 4]; 4],
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub near: T,
    pub far: T,
}

impl<T: Real> CameraView<T> {
    pub fn rotation(&self) -> Mat3<T> {
        let w = &self.world_to_camera;
        [[w[0][0], w[0][1], w[0][2]], [w[1][0], w[1][1], w[1][2]], [w[2][0], w[2][1], w[2][2]]]
    }

    pub fn translation(&self) -> Vec3<T> {
        let w = &self.world_to_camera;
        [w[0][3], w[1][3], w[2][3]]
    }

    /// Camera center in world space, `-Rᵀ t`.
    pub fn center(&self) -> Vec3<T> {
        let t = self.translation();
        let c = mat_t_vec(&self.rotation(), t);
        [-c[0], -c[1], -c[2]]
    }

    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        let r = mat_vec(&self.rotation(), p);
        let t = self.translation();
        [r[0] + t[0], r[1] + t[1], r[2] + t[2]]
    }

    /// Camera at `eye` looking at `target`, with `up` as the approximate up
    /// direction. Principal point at the image center.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, fx: T, width: usize, height: usize) -> Self {
        let fwd = normalize(sub3(target, eye));
        let right = normalize(cross(fwd, up));
        let cam_up = cross(right, fwd);
        // camera axes in world space: x = right, y = up, z = -forward
        let back = [-fwd[0], -fwd[1], -fwd[2]];
        let rot = [right, cam_up, back];
        let t = mat_vec(&rot, eye);
        let z = T::zero();
        Self {
            world_to_camera: [
                [rot[0][0], rot[0][1], rot[0][2], -t[0]],
                [rot[1][0], rot[1][1], rot[1][2], -t[1]],
                [rot[2][0], rot[2][1], rot[2][2], -t[2]],
                [z, z, z, T::one()],
            ],
            fx,
            fy: fx,
            cx: T::lit(width as f64) / T::lit(2.0),
            cy: T::lit(height as f64) / T::lit(2.0),
            width,
            height,
            near: T::lit(0.01),
            far: T::lit(100.0),
        }
    }
}

pub(crate) fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn normalize<T: Real>(a: Vec3<T>) -> Vec3<T> {
    let n = norm3(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian<T> {
    pub mean2d: [T; 2],
    /// Symmetric 2x2 covariance `(xx, xy, yy)` in px², dilation included.
    pub cov2d: [T; 3],
    pub view_depth: T,
    /// Unit vector from the Gaussian mean toward the camera center.
    pub view_dir: Vec3<T>,
}

fn quat_to_rotation<T: Real>(q: [T; 4]) -> Mat3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

fn normalize_quat<T: Real>(q: [T; 4]) -> Result<([T; 4], T)> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    Ok((q.map(|c| c / n), n))
}

/// Rotation matrix of the (internally normalized) quaternion.
pub fn rotation_matrix<T: Real>(q: [T; 4]) -> Result<Mat3<T>> {
    Ok(quat_to_rotation(normalize_quat(q)?.0))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn build_covariance<T: Real>(rotation: [T; 4], log_scale: [T; 3]) -> Result<Mat3<T>> {
    let r = rotation_matrix(rotation)?;
    let s = log_scale.map(|v| v.exp());
    let mut m = r;
    for row in m.iter_mut() {
        for k in 0..3 {
            row[k] *= s[k];
        }
    }
    Ok(mat_mul(&m, &transpose(&m)))
}

/// Backward of [`build_covariance`]. `grad_cov[i][j]` is `dL/dΣ_ij` with the
/// nine entries treated as independent outputs.
pub fn build_covariance_backward<T: Real>(
    rotation: [T; 4],
    log_scale: [T; 3],
    grad_cov: &Mat3<T>,
) -> Result<([T; 4], [T; 3])> {
    let (qn, qnorm) = normalize_quat(rotation)?;
    let r = quat_to_rotation(qn);
    let s = log_scale.map(|v| v.exp());
    let mut m = r;
    for row in m.iter_mut() {
        for k in 0..3 {
            row[k] *= s[k];
        }
    }
    // Σ = M Mᵀ  =>  dL/dM = (G + Gᵀ) M
    let mut gs = *grad_cov;
    for i in 0..3 {
        for j in 0..3 {
            gs[i][j] = grad_cov[i][j] + grad_cov[j][i];
        }
    }
    let dm = mat_mul(&gs, &m);
    let mut d_log_scale = [T::zero(); 3];
    let mut dr = [[T::zero(); 3]; 3];
    for k in 0..3 {
        let mut acc = T::zero();
        for i in 0..3 {
            acc += dm[i][k] * r[i][k];
            dr[i][k] = dm[i][k] * s[k];
        }
        d_log_scale[k] = acc * s[k];
    }

    let [w, x, y, z] = qn;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let dw = two * (-z * dr[0][1] + y * dr[0][2] + z * dr[1][0] - x * dr[1][2] - y * dr[2][0] + x * dr[2][1]);
    let dx = two * (y * dr[0][1] + z * dr[0][2] + y * dr[1][0] - w * dr[1][2] + z * dr[2][0] + w * dr[2][1])
        - four * x * (dr[1][1] + dr[2][2]);
    let dy = two * (x * dr[0][1] + w * dr[0][2] + x * dr[1][0] + z * dr[1][2] - w * dr[2][0] + z * dr[2][1])
        - four * y * (dr[0][0] + dr[2][2]);
    let dz = two * (-w * dr[0][1] + x * dr[0][2] + w * dr[1][0] + y * dr[1][2] + x * dr[2][0] + y * dr[2][1])
        - four * z * (dr[0][0] + dr[1][1]);
    let dqn = [dw, dx, dy, dz];
    // normalization: dq = (I - q̂q̂ᵀ) dq̂ / |q|
    let proj = qn[0] * dqn[0] + qn[1] * dqn[1] + qn[2] * dqn[2] + qn[3] * dqn[3];
    let d_rot = core::array::from_fn(|i| (dqn[i] - qn[i] * proj) / qnorm);
    Ok((d_rot, d_log_scale))
}

/// Projects a Gaussian; returns `None` when it lies outside the near/far
/// depth range (culled).
pub fn project_gaussian<T: Real>(
    mean: Vec3<T>,
    cov: &Mat3<T>,
    view: &CameraView<T>,
    dilation: T,
) -> Option<ProjectedGaussian<T>> {
    let t = view.to_camera(mean);
    let depth = -t[2];
    if !(depth > view.near && depth < view.far) {
        return None;
    }
    let inv_d = T::one() / depth;
    let mean2d = [view.cx + view.fx * t[0] * inv_d, view.cy - view.fy * t[1] * inv_d];
    let tm = screen_jacobian(t, view);
    let c = cov2d_of(&tm, cov);
    let cov2d = [c[0] + dilation, c[1], c[2] + dilation];
    let dir = sub3(view.center(), mean);
    let n = norm3(dir);
    let view_dir = if n > T::zero() { [dir[0] / n, dir[1] / n, dir[2] / n] } else { [T::zero(); 3] };
    Some(ProjectedGaussian { mean2d, cov2d, view_depth: depth, view_dir })
}

/// `J W_r` (2x3) at camera-space point `t`.
fn screen_jacobian<T: Real>(t: Vec3<T>, view: &CameraView<T>) -> [[T; 3]; 2] {
    let d = -t[2];
    let inv_d = T::one() / d;
    let inv_d2 = inv_d * inv_d;
    let j = [
        [view.fx * inv_d, T::zero(), view.fx * t[0] * inv_d2],
        [T::zero(), -view.fy * inv_d, -view.fy * t[1] * inv_d2],
    ];
    let w = view.rotation();
    let mut out = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            out[i][k] = j[i][0] * w[0][k] + j[i][1] * w[1][k] + j[i][2] * w[2][k];
        }
    }
    out
}

fn cov2d_of<T: Real>(tm: &[[T; 3]; 2], cov: &Mat3<T>) -> [T; 3] {
    let a = mat_t_vec(cov, tm[0]);
    let b = mat_t_vec(cov, tm[1]);
    [dot3(tm[0], a), dot3(tm[0], b), dot3(tm[1], b)]
}

/// Upstream gradients on a projected Gaussian. `cov2d` gradients are with
/// respect to the `(xx, xy, yy)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionGrad<T> {
    pub mean2d: [T; 2],
    pub cov2d: [T; 3],
    pub depth: T,
}

/// Backward of [`project_gaussian`] (excluding the view direction, see
/// [`view_dir_backward`]). Returns `dL/dmean` and `dL/dΣ`.
pub fn project_backward<T: Real>(
    mean: Vec3<T>,
    cov: &Mat3<T>,
    view: &CameraView<T>,
    up: &ProjectionGrad<T>,
) -> (Vec3<T>, Mat3<T>) {
    let t = view.to_camera(mean);
    let d = -t[2];
    if !(d > view.near && d < view.far) {
        return ([T::zero(); 3], [[T::zero(); 3]; 3]);
    }
    let w = view.rotation();
    let tm = screen_jacobian(t, view);
    let half = T::lit(0.5);
    let g = [[up.cov2d[0], up.cov2d[1] * half], [up.cov2d[1] * half, up.cov2d[2]]];

    // Σ' = T Σ Tᵀ
    let mut d_cov = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    acc += tm[a][i] * g[a][b] * tm[b][j];
                }
            }
            d_cov[i][j] = acc;
        }
    }
    // dL/dT = 2 G T Σ
    let mut d_tm = [[T::zero(); 3]; 2];
    let two = T::lit(2.0);
    for a in 0..2 {
        let gt = [
            g[a][0] * tm[0][0] + g[a][1] * tm[1][0],
            g[a][0] * tm[0][1] + g[a][1] * tm[1][1],
            g[a][0] * tm[0][2] + g[a][1] * tm[1][2],
        ];
        let row = mat_t_vec(cov, gt);
        for k in 0..3 {
            d_tm[a][k] = two * row[k];
        }
    }
    // T = J W  =>  dL/dJ = dL/dT Wᵀ
    let mut dj = [[T::zero(); 3]; 2];
    for a in 0..2 {
        for c in 0..3 {
            dj[a][c] = d_tm[a][0] * w[c][0] + d_tm[a][1] * w[c][1] + d_tm[a][2] * w[c][2];
        }
    }
    let (fx, fy) = (view.fx, view.fy);
    let inv_d = T::one() / d;
    let inv_d2 = inv_d * inv_d;
    let inv_d3 = inv_d2 * inv_d;
    let mut dt = [T::zero(); 3];
    // J entries as functions of t (d = -t_z)
    dt[2] += dj[0][0] * fx * inv_d2;
    dt[0] += dj[0][2] * fx * inv_d2;
    dt[2] += dj[0][2] * two * fx * t[0] * inv_d3;
    dt[2] += dj[1][1] * (-fy) * inv_d2;
    dt[1] += dj[1][2] * (-fy) * inv_d2;
    dt[2] += dj[1][2] * (-two) * fy * t[1] * inv_d3;
    // projected mean
    dt[0] += up.mean2d[0] * fx * inv_d;
    dt[2] += up.mean2d[0] * fx * t[0] * inv_d2;
    dt[1] += up.mean2d[1] * (-fy) * inv_d;
    dt[2] += up.mean2d[1] * (-fy) * t[1] * inv_d2;
    dt[2] -= up.depth;

    (mat_t_vec(&w, dt), d_cov)
}

/// Gradient of the view direction `normalize(center - mean)` with respect to
/// the mean.
pub fn view_dir_backward<T: Real>(mean: Vec3<T>, view: &CameraView<T>, grad_dir: Vec3<T>) -> Vec3<T> {
    let v = sub3(view.center(), mean);
    let n = norm3(v);
    if !(n > T::zero()) {
        return [T::zero(); 3];
    }
    let w = [v[0] / n, v[1] / n, v[2] / n];
    let p = dot3(w, grad_dir);
    core::array::from_fn(|i| -(grad_dir[i] - w[i] * p) / n)
}

/// Inverse of a symmetric 2x2 `(xx, xy, yy)` matrix; `None` if singular or
/// not positive-definite.
pub fn cov2d_to_conic<T: Real>(cov: [T; 3]) -> Option<[T; 3]> {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > T::zero()) || !(cov[0] > T::zero()) || !det.is_finite() {
        return None;
    }
    let inv = T::one() / det;
    Some([cov[2] * inv, -cov[1] * inv, cov[0] * inv])
}

/// Maps a gradient on the conic triple to a gradient on the covariance
/// triple.
pub fn conic_backward<T: Real>(conic: [T; 3], grad_conic: [T; 3]) -> [T; 3] {
    let half = T::lit(0.5);
    let c = [[conic[0], conic[1]], [conic[1], conic[2]]];
    let g = [[grad_conic[0], grad_conic[1] * half], [grad_conic[1] * half, grad_conic[2]]];
    // dΣ' = -C G C
    let mut cg = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cg[i][j] = c[i][0] * g[0][j] + c[i][1] * g[1][j];
        }
    }
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = -(cg[i][0] * c[0][j] + cg[i][1] * c[1][j]);
        }
    }
    [out[0][0], out[0][1] + out[1][0], out[1][1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn identity_covariance() {
        let s = build_covariance([1.0f64, 0.0, 0.0, 0.0], [0.0; 3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(s[i][j], if i == j { 1.0 } else { 0.0 }, 1e-14));
            }
        }
    }

    #[test]
    fn rotated_anisotropic_covariance() {
        // 90 degrees about z, scales (2, 1, 1) -> diag(1, 4, 1)
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let s = build_covariance([h, 0.0, 0.0, h], [2f64.ln(), 0.0, 0.0]).unwrap();
        let want = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] - want[i][j]).abs() < 1e-12, "{s:?}");
            }
        }
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert_eq!(build_covariance([0.0f64; 4], [0.0; 3]), Err(Error::ZeroQuaternion));
    }

    #[test]
    fn sign_flip_invariance() {
        let q = [0.3f64, -0.5, 0.2, 0.7];
        let nq = q.map(|v| -v);
        let ls = [0.1, -0.4, 0.3];
        assert_eq!(build_covariance(q, ls).unwrap(), build_covariance(nq, ls).unwrap());
    }

    fn axis_view(depth: f64) -> CameraView<f64> {
        let mut v = CameraView::look_at([0.0, 0.0, depth], [0.0; 3], [0.0, 1.0, 0.0], 100.0, 64, 64);
        v.fy = 100.0;
        v
    }

    #[test]
    fn on_axis_projection() {
        let v = axis_view(2.0);
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let p = project_gaussian([0.0; 3], &id, &v, 0.0).unwrap();
        assert!(close(p.cov2d[0], 2500.0, 1e-12));
        assert!(p.cov2d[1].abs() < 1e-9);
        assert!(close(p.cov2d[2], 2500.0, 1e-12));
        assert!(close(p.view_depth, 2.0, 1e-12));
        assert!(close(p.mean2d[0], 32.0, 1e-12));
        let p = project_gaussian([0.0; 3], &id, &v, 0.3).unwrap();
        assert!(close(p.cov2d[0], 2500.3, 1e-12));
        assert!(close(p.cov2d[2], 2500.3, 1e-12));
        assert!(close(p.view_dir[2], 1.0, 1e-12));
    }

    #[test]
    fn behind_camera_is_culled_with_zero_gradient() {
        let v = axis_view(2.0);
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(project_gaussian([0.0, 0.0, 3.0], &id, &v, 0.3).is_none());
        let up = ProjectionGrad { mean2d: [1.0, 1.0], cov2d: [1.0, 1.0, 1.0], depth: 1.0 };
        let (gm, gc) = project_backward([0.0, 0.0, 3.0], &id, &v, &up);
        assert_eq!(gm, [0.0; 3]);
        assert_eq!(gc, [[0.0; 3]; 3]);
    }

    #[test]
    fn zero_upstream_projection_gradient() {
        let v = axis_view(3.0);
        let cov = build_covariance([0.9, 0.1, -0.2, 0.3], [-1.0, -0.5, -2.0]).unwrap();
        let (gm, gc) = project_backward([0.1, 0.2, 0.3], &cov, &v, &ProjectionGrad::default());
        assert_eq!(gm, [0.0; 3]);
        assert_eq!(gc, [[0.0; 3]; 3]);
    }

    #[test]
    fn conic_inverts() {
        let c = cov2d_to_conic([4.0f64, 1.0, 2.0]).unwrap();
        // [[4,1],[1,2]]^-1 = [[2,-1],[-1,4]]/7
        assert!(close(c[0], 2.0 / 7.0, 1e-14));
        assert!(close(c[1], -1.0 / 7.0, 1e-14));
        assert!(close(c[2], 4.0 / 7.0, 1e-14));
        assert!(cov2d_to_conic([1.0f64, 2.0, 1.0]).is_none());
    }

    #[test]
    fn retain_and_push_keep_arrays_aligned() {
        let mut g = GaussianSet::<f32>::zeros(4);
        g.opacity_logits = alloc::vec![0.0, 1.0, 2.0, 3.0];
        g.retain_mask(&[true, false, true, false]);
        assert_eq!(g.opacity_logits, alloc::vec![0.0, 2.0]);
        let h = g.clone();
        g.push_from(&h, 1);
        g.push_zeros(2);
        for s in g.slices() {
            assert_eq!(s.len() % g.len(), 0);
        }
        assert_eq!(g.len(), 5);
        assert_eq!(g.opacity_logits[2], 2.0);
    }
}
