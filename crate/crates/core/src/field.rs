//! Vector-matrix factorized illumination grid.
//!
//! The dense feature volume `G[x][y][z][p]` is never materialized. It is the
//! sum over components `r` of three outer products, each an axis line factor
//! times the plane factor over the two remaining axes, projected through a
//! shared basis:
//!
//! ```text
//! s[3r+0] = vec_x[r](x) * mat_yz[r](y, z)
//! s[3r+1] = vec_y[r](y) * mat_xz[r](x, z)
//! s[3r+2] = vec_z[r](z) * mat_xy[r](x, y)
//! G(x, y, z)[p] = sum_k s[k] * basis[k][p]
//! ```
//!
//! Line factors are interpolated linearly and plane factors bilinearly, so the
//! result is exactly the trilinear interpolation of the dense node tensor.
//!
//! Grid nodes sit on the bounding-box faces (node `0` at `min`, node
//! `resolution - 1` at `max`). A coordinate that lands exactly on an interior
//! node belongs to the lower cell, which fixes the one-sided derivative used
//! by [`IlluminationField::backward_into`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    min: [T; 3],
    max: [T; 3],
}

impl<T: Real> Aabb<T> {
    pub fn new(min: [T; 3], max: [T; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a]) {
                return Err(Error::InvalidBbox);
            }
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: T) -> Result<Self> {
        Self::new([-half; 3], [half; 3])
    }

    pub fn min(&self) -> [T; 3] {
        self.min
    }

    pub fn max(&self) -> [T; 3] {
        self.max
    }

    pub fn extent(&self) -> [T; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn volume(&self) -> T {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn contains_box(&self, other: &Aabb<T>) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn contains_point(&self, p: [T; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Interpolation stencil along one axis.
#[derive(Debug, Clone, Copy)]
struct Stencil<T> {
    lo: usize,
    t: T,
    /// d(t)/d(world coordinate); zero when the coordinate was clamped.
    dt_dp: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationSample<T> {
    pub features: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationField<T> {
    bbox: Aabb<T>,
    resolution: usize,
    components: usize,
    feature_dim: usize,
    /// Line factors, `components x resolution`.
    pub vec_x: Vec<T>,
    pub vec_y: Vec<T>,
    pub vec_z: Vec<T>,
    /// Plane factors, `components x resolution x resolution`; `mat_yz` is
    /// indexed `[r][y][z]`, `mat_xz` `[r][x][z]`, `mat_xy` `[r][x][y]`.
    pub mat_yz: Vec<T>,
    pub mat_xz: Vec<T>,
    pub mat_xy: Vec<T>,
    /// `(3 * components) x feature_dim`, row-major; row `3r + a` is the basis
    /// vector of axis term `a` of component `r`.
    pub basis: Vec<T>,
}

/// Gradient buffers with the same layout as the field's trainable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad<T> {
    pub vec_x: Vec<T>,
    pub vec_y: Vec<T>,
    pub vec_z: Vec<T>,
    pub mat_yz: Vec<T>,
    pub mat_xz: Vec<T>,
    pub mat_xy: Vec<T>,
    pub basis: Vec<T>,
}

impl<T: Real> FieldGrad<T> {
    pub fn zeros_like(field: &IlluminationField<T>) -> Self {
        let line = field.components * field.resolution;
        let plane = line * field.resolution;
        Self {
            vec_x: vec![T::zero(); line],
            vec_y: vec![T::zero(); line],
            vec_z: vec![T::zero(); line],
            mat_yz: vec![T::zero(); plane],
            mat_xz: vec![T::zero(); plane],
            mat_xy: vec![T::zero(); plane],
            basis: vec![T::zero(); field.basis.len()],
        }
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(T::zero());
        }
    }

    /// Arrays in serialization order: x/y/z lines, yz/xz/xy planes, basis.
    pub fn slices(&self) -> [&[T]; 7] {
        [&self.vec_x, &self.vec_y, &self.vec_z, &self.mat_yz, &self.mat_xz, &self.mat_xy, &self.basis]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 7] {
        [
            &mut self.vec_x,
            &mut self.vec_y,
            &mut self.vec_z,
            &mut self.mat_yz,
            &mut self.mat_xz,
            &mut self.mat_xy,
            &mut self.basis,
        ]
    }
}

impl<T: Real> IlluminationField<T> {
    /// Field with all factors and the basis set to zero.
    pub fn zeros(bbox: Aabb<T>, resolution: usize, components: usize, feature_dim: usize) -> Result<Self> {
        if resolution < 2 || components == 0 || feature_dim == 0 {
            return Err(Error::InvalidFieldShape);
        }
        let line = components * resolution;
        let plane = line * resolution;
        Ok(Self {
            bbox,
            resolution,
            components,
            feature_dim,
            vec_x: vec![T::zero(); line],
            vec_y: vec![T::zero(); line],
            vec_z: vec![T::zero(); line],
            mat_yz: vec![T::zero(); plane],
            mat_xz: vec![T::zero(); plane],
            mat_xy: vec![T::zero(); plane],
            basis: vec![T::zero(); 3 * components * feature_dim],
        })
    }

    /// Factors drawn from `U(-amplitude, amplitude)`, basis from
    /// `U(-basis_amplitude, basis_amplitude)`.
    pub fn random<R: Rng + ?Sized>(
        bbox: Aabb<T>,
        resolution: usize,
        components: usize,
        feature_dim: usize,
        amplitude: f64,
        basis_amplitude: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut field = Self::zeros(bbox, resolution, components, feature_dim)?;
        let mut fill = |s: &mut [T], a: f64| {
            for v in s {
                *v = T::lit(rng.gen_range(-a..a));
            }
        };
        fill(&mut field.vec_x, amplitude);
        fill(&mut field.vec_y, amplitude);
        fill(&mut field.vec_z, amplitude);
        fill(&mut field.mat_yz, amplitude);
        fill(&mut field.mat_xz, amplitude);
        fill(&mut field.mat_xy, amplitude);
        fill(&mut field.basis, basis_amplitude);
        Ok(field)
    }

    /// Rebuilds a field from raw arrays, checking every length.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        bbox: Aabb<T>,
        resolution: usize,
        components: usize,
        feature_dim: usize,
        lines: [Vec<T>; 3],
        planes: [Vec<T>; 3],
        basis: Vec<T>,
    ) -> Result<Self> {
        let shape = Self::zeros(bbox, resolution, components, feature_dim)?;
        let line = components * resolution;
        let plane = line * resolution;
        for l in &lines {
            if l.len() != line {
                return Err(Error::DimensionMismatch { what: "field line factor", expected: line, got: l.len() });
            }
        }
        for p in &planes {
            if p.len() != plane {
                return Err(Error::DimensionMismatch { what: "field plane factor", expected: plane, got: p.len() });
            }
        }
        if basis.len() != shape.basis.len() {
            return Err(Error::DimensionMismatch {
                what: "field basis",
                expected: shape.basis.len(),
                got: basis.len(),
            });
        }
        let [vec_x, vec_y, vec_z] = lines;
        let [mat_yz, mat_xz, mat_xy] = planes;
        Ok(Self { vec_x, vec_y, vec_z, mat_yz, mat_xz, mat_xy, basis, ..shape })
    }

    pub fn bbox(&self) -> &Aabb<T> {
        &self.bbox
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn slices(&self) -> [&[T]; 7] {
        [&self.vec_x, &self.vec_y, &self.vec_z, &self.mat_yz, &self.mat_xz, &self.mat_xy, &self.basis]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 7] {
        [
            &mut self.vec_x,
            &mut self.vec_y,
            &mut self.vec_z,
            &mut self.mat_yz,
            &mut self.mat_xz,
            &mut self.mat_xy,
            &mut self.basis,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn stencil(&self, p: T, axis: usize) -> Stencil<T> {
        let lo_b = self.bbox.min[axis];
        let hi_b = self.bbox.max[axis];
        let cells = self.resolution - 1;
        let scale = T::lit(cells as f64) / (hi_b - lo_b);
        let (q, clamped) = if p < lo_b {
            (lo_b, true)
        } else if p > hi_b {
            (hi_b, true)
        } else if p.is_nan() {
            (lo_b, true)
        } else {
            (p, false)
        };
        let u = (q - lo_b) * scale;
        // lower-cell convention: an exact node k > 0 is the top of cell k-1
        let c = u.ceil().to_usize().unwrap_or(0);
        let lo = c.saturating_sub(1).min(cells - 1);
        let t = u - T::lit(lo as f64);
        Stencil { lo, t, dt_dp: if clamped { T::zero() } else { scale } }
    }

    fn stencils(&self, p: [T; 3]) -> [Stencil<T>; 3] {
        [self.stencil(p[0], 0), self.stencil(p[1], 1), self.stencil(p[2], 2)]
    }

    /// Plane arrays and their (row axis, column axis) per term.
    fn term_parts(&self, a: usize) -> (&[T], &[T], usize, usize, usize) {
        match a {
            0 => (&self.vec_x, &self.mat_yz, 0, 1, 2),
            1 => (&self.vec_y, &self.mat_xz, 1, 0, 2),
            _ => (&self.vec_z, &self.mat_xy, 2, 0, 1),
        }
    }

    /// Writes the `3 * components` per-term scalars for point `p`.
    fn component_scalars(&self, st: &[Stencil<T>; 3], scalars: &mut [T]) {
        let n = self.resolution;
        let one = T::one();
        for a in 0..3 {
            let (line, plane, la, ra, ca) = self.term_parts(a);
            let (sl, sr, sc) = (st[la], st[ra], st[ca]);
            for r in 0..self.components {
                let lb = r * n;
                let v = line[lb + sl.lo] * (one - sl.t) + line[lb + sl.lo + 1] * sl.t;
                let pb = r * n * n;
                let i0 = pb + sr.lo * n + sc.lo;
                let i1 = i0 + n;
                let m = (plane[i0] * (one - sc.t) + plane[i0 + 1] * sc.t) * (one - sr.t)
                    + (plane[i1] * (one - sc.t) + plane[i1 + 1] * sc.t) * sr.t;
                scalars[3 * r + a] = v * m;
            }
        }
    }

    /// Evaluates the feature vector at `p`; points outside the box are clamped
    /// onto it first.
    pub fn eval(&self, p: [T; 3]) -> IlluminationSample<T> {
        let mut scalars = vec![T::zero(); 3 * self.components];
        let mut features = vec![T::zero(); self.feature_dim];
        self.eval_into(p, &mut scalars, &mut features);
        IlluminationSample { features }
    }

    /// Allocation-free [`eval`](Self::eval). `scalars` must hold
    /// `3 * components` entries and `out` `feature_dim` entries.
    pub fn eval_into(&self, p: [T; 3], scalars: &mut [T], out: &mut [T]) {
        let st = self.stencils(p);
        self.component_scalars(&st, scalars);
        out.fill(T::zero());
        let pl = self.feature_dim;
        for (k, &s) in scalars.iter().enumerate() {
            let row = &self.basis[k * pl..(k + 1) * pl];
            for (o, &b) in out.iter_mut().zip(row) {
                *o += s * b;
            }
        }
    }

    /// Analytic gradient of `dot(upstream, eval(p))`: parameter gradients are
    /// accumulated into `grad`, the gradient with respect to `p` is returned.
    pub fn backward_into(&self, p: [T; 3], upstream: &[T], grad: &mut FieldGrad<T>) -> [T; 3] {
        let mut scalars = vec![T::zero(); 3 * self.components];
        self.backward_with_scratch(p, upstream, grad, &mut scalars)
    }

    pub fn backward_with_scratch(
        &self,
        p: [T; 3],
        upstream: &[T],
        grad: &mut FieldGrad<T>,
        scalars: &mut [T],
    ) -> [T; 3] {
        let st = self.stencils(p);
        self.component_scalars(&st, scalars);
        let pl = self.feature_dim;
        let n = self.resolution;
        let one = T::one();
        let mut d_point = [T::zero(); 3];

        for (k, &s) in scalars.iter().enumerate() {
            let row = &self.basis[k * pl..(k + 1) * pl];
            let grow = &mut grad.basis[k * pl..(k + 1) * pl];
            let mut ds = T::zero();
            for j in 0..pl {
                grow[j] += s * upstream[j];
                ds += row[j] * upstream[j];
            }
            if ds == T::zero() {
                continue;
            }
            let r = k / 3;
            let a = k % 3;
            let (line, plane, la, ra, ca) = self.term_parts(a);
            let (gline, gplane) = match a {
                0 => (&mut grad.vec_x, &mut grad.mat_yz),
                1 => (&mut grad.vec_y, &mut grad.mat_xz),
                _ => (&mut grad.vec_z, &mut grad.mat_xy),
            };
            let (sl, sr, sc) = (st[la], st[ra], st[ca]);
            let lb = r * n;
            let (l0, l1) = (line[lb + sl.lo], line[lb + sl.lo + 1]);
            let v = l0 * (one - sl.t) + l1 * sl.t;
            let i0 = r * n * n + sr.lo * n + sc.lo;
            let i1 = i0 + n;
            let (m00, m01, m10, m11) = (plane[i0], plane[i0 + 1], plane[i1], plane[i1 + 1]);
            let m_r0 = m00 * (one - sc.t) + m01 * sc.t;
            let m_r1 = m10 * (one - sc.t) + m11 * sc.t;
            let m = m_r0 * (one - sr.t) + m_r1 * sr.t;

            let dv = ds * m;
            gline[lb + sl.lo] += dv * (one - sl.t);
            gline[lb + sl.lo + 1] += dv * sl.t;
            let dm = ds * v;
            gplane[i0] += dm * (one - sr.t) * (one - sc.t);
            gplane[i0 + 1] += dm * (one - sr.t) * sc.t;
            gplane[i1] += dm * sr.t * (one - sc.t);
            gplane[i1 + 1] += dm * sr.t * sc.t;

            d_point[la] += dv * (l1 - l0) * sl.dt_dp;
            d_point[ra] += dm * (m_r1 - m_r0) * sr.dt_dp;
            let dm_dtc = (m01 - m00) * (one - sr.t) + (m11 - m10) * sr.t;
            d_point[ca] += dm * dm_dtc * sc.dt_dp;
        }
        d_point
    }

    /// Convenience wrapper returning freshly allocated parameter gradients.
    pub fn backward(&self, p: [T; 3], upstream: &[T]) -> (FieldGrad<T>, [T; 3]) {
        let mut grad = FieldGrad::zeros_like(self);
        let dp = self.backward_into(p, upstream, &mut grad);
        (grad, dp)
    }

    /// Resamples every factor onto a grid of the same resolution spanning
    /// `new_bbox`. Node values of the result equal the old field evaluated at
    /// the new node positions; the basis is kept.
    pub fn shrink_resample(&self, new_bbox: Aabb<T>) -> Result<Self> {
        if !self.bbox.contains_box(&new_bbox) {
            return Err(Error::BboxNotContained);
        }
        let n = self.resolution;
        let node = |axis: usize, i: usize| -> Stencil<T> {
            let lo = new_bbox.min[axis];
            let hi = new_bbox.max[axis];
            let x = if i == n - 1 { hi } else { lo + (hi - lo) * T::lit(i as f64) / T::lit((n - 1) as f64) };
            self.stencil(x, axis)
        };
        let nodes: [Vec<Stencil<T>>; 3] = core::array::from_fn(|axis| (0..n).map(|i| node(axis, i)).collect());

        let mut out = self.clone();
        out.bbox = new_bbox;
        let one = T::one();
        for a in 0..3 {
            let (line, plane, la, ra, ca) = self.term_parts(a);
            let mut new_line = vec![T::zero(); line.len()];
            let mut new_plane = vec![T::zero(); plane.len()];
            for r in 0..self.components {
                let lb = r * n;
                for (i, s) in nodes[la].iter().enumerate() {
                    new_line[lb + i] = line[lb + s.lo] * (one - s.t) + line[lb + s.lo + 1] * s.t;
                }
                let pb = r * n * n;
                for (i, sr) in nodes[ra].iter().enumerate() {
                    for (j, sc) in nodes[ca].iter().enumerate() {
                        let i0 = pb + sr.lo * n + sc.lo;
                        let i1 = i0 + n;
                        new_plane[pb + i * n + j] = (plane[i0] * (one - sc.t) + plane[i0 + 1] * sc.t) * (one - sr.t)
                            + (plane[i1] * (one - sc.t) + plane[i1 + 1] * sc.t) * sr.t;
                    }
                }
            }
            match a {
                0 => {
                    out.vec_x = new_line;
                    out.mat_yz = new_plane;
                }
                1 => {
                    out.vec_y = new_line;
                    out.mat_xz = new_plane;
                }
                _ => {
                    out.vec_z = new_line;
                    out.mat_xy = new_plane;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box() -> Aabb<f64> {
        Aabb::new([-1.0, -0.5, 0.0], [1.0, 1.5, 2.0]).unwrap()
    }

    #[test]
    fn constant_factors_give_three_r() {
        let mut f = IlluminationField::zeros(unit_box(), 5, 3, 4).unwrap();
        for s in f.slices_mut() {
            s.fill(1.0);
        }
        for p in [[0.0, 0.0, 0.0], [0.3, 1.2, 1.9], [5.0, -5.0, 0.5]] {
            let out = f.eval(p);
            for v in out.features {
                assert!((v - 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_shapes_rejected() {
        assert_eq!(Aabb::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]), Err(Error::InvalidBbox));
        assert_eq!(Aabb::new([0.0, 2.0, 0.0], [1.0, 1.0, 1.0]), Err(Error::InvalidBbox));
        assert!(IlluminationField::<f64>::zeros(unit_box(), 1, 2, 2).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = IlluminationField::random(unit_box(), 4, 2, 3, 1.0, 1.0, &mut rng).unwrap();
        let (g, dp) = f.backward([0.1, 0.2, 0.3], &[0.0; 3]);
        assert_eq!(dp, [0.0; 3]);
        for s in g.slices() {
            assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stencil_touches_two_line_and_four_plane_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = IlluminationField::random(unit_box(), 6, 1, 2, 1.0, 1.0, &mut rng).unwrap();
        let (g, _) = f.backward([0.13, 0.71, 1.37], &[1.0, -0.5]);
        let nz = |s: &[f64]| s.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nz(&g.vec_x), 2);
        assert_eq!(nz(&g.vec_y), 2);
        assert_eq!(nz(&g.mat_yz), 4);
        assert_eq!(nz(&g.mat_xy), 4);
    }

    #[test]
    fn outside_points_clamp_and_have_zero_point_gradient_on_clamped_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = IlluminationField::random(unit_box(), 4, 2, 3, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(f.eval([-3.0, 0.2, 0.4]), f.eval([-1.0, 0.2, 0.4]));
        let (_, dp) = f.backward([-3.0, 0.2, 0.4], &[1.0, 1.0, 1.0]);
        assert_eq!(dp[0], 0.0);
        assert!(dp[1] != 0.0);
    }

    #[test]
    fn shrink_to_same_box_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = IlluminationField::random(unit_box(), 5, 2, 3, 1.0, 1.0, &mut rng).unwrap();
        let g = f.shrink_resample(*f.bbox()).unwrap();
        for (a, b) in f.slices().iter().zip(g.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shrink_of_constant_field_stays_constant() {
        let mut f = IlluminationField::zeros(unit_box(), 5, 2, 3).unwrap();
        for s in f.slices_mut() {
            s.fill(0.5);
        }
        let nb = Aabb::new([-0.2, 0.0, 0.5], [0.7, 0.9, 1.1]).unwrap();
        let g = f.shrink_resample(nb).unwrap();
        for s in g.slices() {
            assert!(s.iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn shrink_rejects_outside_box() {
        let f = IlluminationField::zeros(unit_box(), 3, 1, 1).unwrap();
        let nb = Aabb::new([-2.0, 0.0, 0.5], [0.7, 0.9, 1.1]).unwrap();
        assert_eq!(f.shrink_resample(nb), Err(Error::BboxNotContained));
    }
}
