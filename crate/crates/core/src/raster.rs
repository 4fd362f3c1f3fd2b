//! Tile-based front-to-back alpha compositing, its analytic backward pass,
//! and a brute-force reference compositor.
//!
//! Per pixel `u` and depth-sorted splats `i`:
//!
//! ```text
//! a_i = min(0.99, opacity_i * exp(-0.5 * dᵀ conic_i d)),  d = u - mean2d_i
//! C   = Σ_i T_i a_i c_i + T_final * background,  T_i = Π_{j<i} (1 - a_j)
//! ```
//!
//! Splats with `a_i < 1/255` are skipped, and a pixel stops before the splat
//! that would push its transmittance below `1e-4`. Pixel centers sit at
//! `(x + 0.5, y + 0.5)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::exec::{Executor, Serial};
use crate::gaussian::CameraView;
use crate::scalar::Real;

pub const TILE_SIZE: usize = 16;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Row-major interleaved RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![T::zero(); width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> ImageBuffer<U> {
        ImageBuffer { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// One visible Gaussian in screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat<T> {
    pub mean2d: [T; 2],
    /// Inverse screen covariance `(xx, xy, yy)`.
    pub conic: [T; 3],
    pub color: [T; 3],
    pub opacity: T,
    pub depth: T,
    pub source: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplatList<T> {
    pub splats: Vec<Splat<T>>,
}

impl<T: Real> SplatList<T> {
    /// Stable ascending sort by depth, ties broken by source index.
    pub fn sort_by_depth(&mut self) {
        self.splats.sort_by(|a, b| a.depth.total_order(&b.depth).then(a.source.cmp(&b.source)));
    }

    pub fn is_sorted_by_depth(&self) -> bool {
        self.splats.windows(2).all(|w| w[0].depth.total_order(&w[1].depth).then(w[0].source.cmp(&w[1].source)).is_le())
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }
}

/// Gradient of the composited image with respect to one splat.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad<T> {
    pub mean2d: [T; 2],
    pub conic: [T; 3],
    pub color: [T; 3],
    pub opacity: T,
}

impl<T: Real> SplatGrad<T> {
    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Per-pixel blending records kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendState {
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Splat indices per tile, in compositing order.
    pub tile_lists: Vec<Vec<u32>>,
    /// Per pixel, the number of tile-list entries the forward loop consumed.
    pub consumed: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterOutput<T> {
    pub image: ImageBuffer<T>,
    /// Final transmittance per pixel (the weight given to the background).
    pub transmittance: Vec<T>,
    pub state: BlendState,
    /// Splats dropped for a non-finite or non-positive-definite conic.
    pub dropped: usize,
}

fn conic_is_valid<T: Real>(s: &Splat<T>) -> bool {
    let [a, b, c] = s.conic;
    let ok = s.conic.iter().chain(&s.mean2d).all(|v| v.is_finite())
        && s.opacity.is_finite()
        && s.color.iter().all(|v| v.is_finite());
    ok && a > T::zero() && a * c - b * b > T::zero()
}

#[inline]
fn power<T: Real>(s: &Splat<T>, px: T, py: T) -> (T, T, T) {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let half = T::lit(0.5);
    (-half * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy, dx, dy)
}

/// Pixel-space bounding box (inclusive) of the region where a splat can reach
/// the skip threshold, or `None` if it never can.
fn footprint<T: Real>(s: &Splat<T>, width: usize, height: usize) -> Option<[usize; 4]> {
    let min_alpha = T::lit(MIN_ALPHA);
    if !(s.opacity >= min_alpha) {
        return None;
    }
    // opacity * exp(-q/2) >= 1/255  <=>  q <= 2 ln(255 opacity)
    let k = T::lit(2.0) * (s.opacity / min_alpha).ln();
    let det = s.conic[0] * s.conic[2] - s.conic[1] * s.conic[1];
    let var_x = s.conic[2] / det;
    let var_y = s.conic[0] / det;
    let slack = T::one();
    let rx = (k * var_x).sqrt() + slack;
    let ry = (k * var_y).sqrt() + slack;
    let half = T::lit(0.5);
    let x0 = (s.mean2d[0] - rx - half).ceil();
    let x1 = (s.mean2d[0] + rx - half).floor();
    let y0 = (s.mean2d[1] - ry - half).ceil();
    let y1 = (s.mean2d[1] + ry - half).floor();
    let (w, h) = (T::lit(width as f64), T::lit(height as f64));
    if x1 < T::zero() || y1 < T::zero() || x0 >= w || y0 >= h || !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let clamp = |v: T, hi: usize| v.max(T::zero()).to_usize().unwrap_or(0).min(hi - 1);
    Some([clamp(x0, width), clamp(x1, width), clamp(y0, height), clamp(y1, height)])
}

/// Per-splat lower bound on the exponent below which `opacity · exp(q)` is
/// certainly under the skip threshold; lets tiles avoid most `exp` calls
/// without changing which splats are skipped.
fn skip_cuts<T: Real>(splats: &[Splat<T>], list: &[u32]) -> Vec<T> {
    let min_a = T::lit(MIN_ALPHA);
    let margin = T::lit(1e-3);
    list.iter()
        .map(|&si| {
            let op = splats[si as usize].opacity;
            if op < min_a {
                T::infinity()
            } else {
                (min_a / op).ln() - margin
            }
        })
        .collect()
}

struct TileResult<T> {
    color: Vec<T>,
    transmittance: Vec<T>,
    consumed: Vec<u32>,
}

fn tile_bounds(tile: usize, tiles_x: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, (x0 + TILE_SIZE).min(width), y0, (y0 + TILE_SIZE).min(height))
}

fn render_tile<T: Real>(
    splats: &[Splat<T>],
    list: &[u32],
    bounds: (usize, usize, usize, usize),
    background: [T; 3],
) -> TileResult<T> {
    let (x0, x1, y0, y1) = bounds;
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileResult {
        color: Vec::with_capacity(n * 3),
        transmittance: Vec::with_capacity(n),
        consumed: Vec::with_capacity(n),
    };
    let one = T::one();
    let half = T::lit(0.5);
    let (min_a, max_a, min_t) = (T::lit(MIN_ALPHA), T::lit(MAX_ALPHA), T::lit(MIN_TRANSMITTANCE));
    let cuts = skip_cuts(splats, list);
    for y in y0..y1 {
        for x in x0..x1 {
            let px = T::lit(x as f64) + half;
            let py = T::lit(y as f64) + half;
            let mut t = one;
            let mut c = [T::zero(); 3];
            let mut consumed = 0u32;
            for (j, &si) in list.iter().enumerate() {
                let s = &splats[si as usize];
                let (p, _, _) = power(s, px, py);
                if p < cuts[j] {
                    continue;
                }
                let alpha = (s.opacity * p.exp()).min(max_a);
                if alpha < min_a {
                    continue;
                }
                let test_t = t * (one - alpha);
                if test_t < min_t {
                    break;
                }
                for k in 0..3 {
                    c[k] += s.color[k] * alpha * t;
                }
                t = test_t;
                consumed = j as u32 + 1;
            }
            for k in 0..3 {
                out.color.push(c[k] + t * background[k]);
            }
            out.transmittance.push(t);
            out.consumed.push(consumed);
        }
    }
    out
}

/// Tiled forward compositing on the calling thread.
pub fn rasterize<T: Real>(splats: &SplatList<T>, view: &CameraView<T>, background: [T; 3]) -> RasterOutput<T> {
    rasterize_with(&Serial, splats, view.width, view.height, background)
}

/// Tiled forward compositing; tiles are distributed over `exec`. `splats`
/// must be depth-sorted.
pub fn rasterize_with<T: Real, E: Executor>(
    exec: &E,
    splats: &SplatList<T>,
    width: usize,
    height: usize,
    background: [T; 3],
) -> RasterOutput<T> {
    debug_assert!(splats.is_sorted_by_depth());
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    let mut dropped = 0;
    for (i, s) in splats.splats.iter().enumerate() {
        if !conic_is_valid(s) {
            dropped += 1;
            continue;
        }
        let Some([x0, x1, y0, y1]) = footprint(s, width, height) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tile_lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let results = exec.map(tiles_x * tiles_y, |tile| {
        let b = tile_bounds(tile, tiles_x, width, height);
        render_tile(&splats.splats, &tile_lists[tile], b, background)
    });

    let mut image = ImageBuffer::new(width, height);
    let mut transmittance = vec![T::zero(); width * height];
    let mut consumed = vec![0u32; width * height];
    for (tile, r) in results.into_iter().enumerate() {
        let (x0, x1, y0, y1) = tile_bounds(tile, tiles_x, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * width + x;
                image.data[p * 3..p * 3 + 3].copy_from_slice(&r.color[k * 3..k * 3 + 3]);
                transmittance[p] = r.transmittance[k];
                consumed[p] = r.consumed[k];
                k += 1;
            }
        }
    }
    RasterOutput {
        image,
        transmittance,
        state: BlendState { width, height, tiles_x, tiles_y, tile_lists, consumed },
        dropped,
    }
}

/// Reference compositor: every pixel walks the whole depth-sorted list, with
/// no tiling and no footprint culling.
pub fn rasterize_reference<T: Real>(
    splats: &SplatList<T>,
    view: &CameraView<T>,
    background: [T; 3],
) -> (ImageBuffer<T>, Vec<T>) {
    let (w, h) = (view.width, view.height);
    let mut order: Vec<&Splat<T>> = splats.splats.iter().filter(|s| conic_is_valid(s)).collect();
    order.sort_by(|a, b| a.depth.total_order(&b.depth).then(a.source.cmp(&b.source)));
    let mut image = ImageBuffer::new(w, h);
    let mut trans = vec![T::zero(); w * h];
    let one = T::one();
    for y in 0..h {
        for x in 0..w {
            let px = T::lit(x as f64 + 0.5);
            let py = T::lit(y as f64 + 0.5);
            let mut t = one;
            let mut c = [T::zero(); 3];
            for s in &order {
                let dx = px - s.mean2d[0];
                let dy = py - s.mean2d[1];
                let q = -T::lit(0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                let alpha = (s.opacity * q.exp()).min(T::lit(MAX_ALPHA));
                if alpha < T::lit(MIN_ALPHA) {
                    continue;
                }
                let next = t * (one - alpha);
                if next < T::lit(MIN_TRANSMITTANCE) {
                    break;
                }
                for k in 0..3 {
                    c[k] += s.color[k] * alpha * t;
                }
                t = next;
            }
            image.set_pixel(x, y, [c[0] + t * background[0], c[1] + t * background[1], c[2] + t * background[2]]);
            trans[y * w + x] = t;
        }
    }
    (image, trans)
}

/// Analytic backward of [`rasterize_with`]. `grad_image` is `dL/dC` with
/// the image layout. Returned gradients are indexed like `splats`.
pub fn rasterize_backward<T: Real, E: Executor>(
    exec: &E,
    splats: &SplatList<T>,
    out: &RasterOutput<T>,
    background: [T; 3],
    grad_image: &[T],
) -> Vec<SplatGrad<T>> {
    let st = &out.state;
    let per_tile = exec.map(st.tiles_x * st.tiles_y, |tile| {
        let list = &st.tile_lists[tile];
        let mut local = vec![SplatGrad::default(); list.len()];
        if list.is_empty() {
            return local;
        }
        let bounds = tile_bounds(tile, st.tiles_x, st.width, st.height);
        backward_tile(&splats.splats, list, bounds, st, out, background, grad_image, &mut local);
        local
    });
    let mut grads = vec![SplatGrad::default(); splats.len()];
    for (tile, local) in per_tile.iter().enumerate() {
        for (g, &si) in local.iter().zip(&st.tile_lists[tile]) {
            grads[si as usize].add(g);
        }
    }
    grads
}

#[allow(clippy::too_many_arguments)]
fn backward_tile<T: Real>(
    splats: &[Splat<T>],
    list: &[u32],
    bounds: (usize, usize, usize, usize),
    st: &BlendState,
    out: &RasterOutput<T>,
    background: [T; 3],
    grad_image: &[T],
    local: &mut [SplatGrad<T>],
) {
    let (x0, x1, y0, y1) = bounds;
    let one = T::one();
    let half = T::lit(0.5);
    let (min_a, max_a) = (T::lit(MIN_ALPHA), T::lit(MAX_ALPHA));
    let cuts = skip_cuts(splats, list);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = y * st.width + x;
            let dpix = [grad_image[3 * p], grad_image[3 * p + 1], grad_image[3 * p + 2]];
            if dpix.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let t_final = out.transmittance[p];
            let bg_dot = background[0] * dpix[0] + background[1] * dpix[1] + background[2] * dpix[2];
            let px = T::lit(x as f64) + half;
            let py = T::lit(y as f64) + half;
            let mut t = t_final;
            let mut accum = [T::zero(); 3];
            let mut last_alpha = T::zero();
            let mut last_color = [T::zero(); 3];
            // back to front
            for j in (0..st.consumed[p] as usize).rev() {
                let s = &splats[list[j] as usize];
                let (q, dx, dy) = power(s, px, py);
                if q < cuts[j] {
                    continue;
                }
                let g = q.exp();
                let raw = s.opacity * g;
                let alpha = raw.min(max_a);
                if alpha < min_a {
                    continue;
                }
                t /= one - alpha;
                let w = alpha * t;
                let lg = &mut local[j];
                let mut d_alpha = T::zero();
                for k in 0..3 {
                    lg.color[k] += w * dpix[k];
                    accum[k] = last_alpha * last_color[k] + (one - last_alpha) * accum[k];
                    d_alpha += (s.color[k] - accum[k]) * dpix[k];
                }
                d_alpha *= t;
                last_alpha = alpha;
                last_color = s.color;
                d_alpha -= t_final / (one - alpha) * bg_dot;
                if raw > max_a {
                    continue;
                }
                lg.opacity += g * d_alpha;
                let d_q = s.opacity * d_alpha * g;
                lg.mean2d[0] += d_q * (s.conic[0] * dx + s.conic[1] * dy);
                lg.mean2d[1] += d_q * (s.conic[1] * dx + s.conic[2] * dy);
                lg.conic[0] -= d_q * half * dx * dx;
                lg.conic[1] -= d_q * dx * dy;
                lg.conic[2] -= d_q * half * dy * dy;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(w: usize, h: usize) -> CameraView<f64> {
        CameraView::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, w, h)
    }

    fn splat(m: [f64; 2], conic: f64, opacity: f64, color: [f64; 3], depth: f64, source: u32) -> Splat<f64> {
        Splat { mean2d: m, conic: [conic, 0.0, conic], color, opacity, depth, source }
    }

    #[test]
    fn single_splat_half_over_white() {
        let v = view(4, 4);
        let list = SplatList { splats: alloc::vec![splat([1.5, 1.5], 1e6, 0.5, [1.0, 0.0, 0.0], 1.0, 0)] };
        let out = rasterize(&list, &v, [1.0; 3]);
        let px = out.image.pixel(1, 1);
        assert!((px[0] - 1.0).abs() < 1e-12 && (px[1] - 0.5).abs() < 1e-12 && (px[2] - 0.5).abs() < 1e-12);
        assert_eq!(out.image.pixel(0, 0), [1.0; 3]);
    }

    #[test]
    fn two_full_coverage_splats() {
        let v = view(8, 8);
        let mut list = SplatList {
            splats: alloc::vec![
                splat([4.0, 4.0], 1e-9, 1.0, [0.0, 0.0, 1.0], 2.0, 0),
                splat([4.0, 4.0], 1e-9, 0.5, [1.0, 0.0, 0.0], 1.0, 1),
            ],
        };
        list.sort_by_depth();
        let out = rasterize(&list, &v, [0.0; 3]);
        let px = out.image.pixel(3, 5);
        // back splat's alpha is capped at 0.99: 0.5 + 0.5 * 0.99 blue
        assert!((px[0] - 0.5).abs() < 1e-6);
        assert!((px[2] - 0.495).abs() < 1e-6);
    }

    #[test]
    fn empty_list_is_background() {
        let v = view(20, 17);
        let out = rasterize(&SplatList::default(), &v, [0.2, 0.3, 0.4]);
        let (r, _) = rasterize_reference(&SplatList::default(), &v, [0.2, 0.3, 0.4]);
        assert_eq!(out.image, ImageBuffer::filled(20, 17, [0.2, 0.3, 0.4]));
        assert_eq!(r, out.image);
    }

    #[test]
    fn opaque_cap_blends_background() {
        let v = view(5, 5);
        let list = SplatList { splats: alloc::vec![splat([2.5, 2.5], 1e-9, 1.0, [0.0, 1.0, 0.0], 1.0, 0)] };
        let (img, _) = rasterize_reference(&list, &v, [1.0, 0.0, 0.0]);
        let px = img.pixel(0, 4);
        assert!((px[0] - 0.01).abs() < 1e-9 && (px[1] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn non_finite_conic_is_dropped() {
        let v = view(4, 4);
        let list = SplatList { splats: alloc::vec![splat([1.5, 1.5], f64::NAN, 0.5, [1.0; 3], 1.0, 0)] };
        let out = rasterize(&list, &v, [0.0; 3]);
        assert_eq!(out.dropped, 1);
        assert_eq!(out.image, ImageBuffer::new(4, 4));
    }

    #[test]
    fn single_splat_color_gradient_closed_form() {
        let v = view(6, 6);
        let s = Splat {
            mean2d: [2.2, 3.1],
            conic: [0.3, 0.05, 0.2],
            color: [0.2, 0.5, 0.7],
            opacity: 0.6,
            depth: 1.0,
            source: 0,
        };
        let list = SplatList { splats: alloc::vec![s] };
        let out = rasterize(&list, &v, [0.0; 3]);
        let mut grad = alloc::vec![0.0; 6 * 6 * 3];
        grad[(4 * 6 + 1) * 3] = 1.0;
        let g = rasterize_backward(&Serial, &list, &out, [0.0; 3], &grad);
        let (q, _, _) = power(&s, 1.5, 4.5);
        let want = 0.6 * q.exp();
        assert!((g[0].color[0] - want).abs() < 1e-12);
        assert_eq!(g[0].color[1], 0.0);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let v = view(6, 6);
        let list = SplatList { splats: alloc::vec![splat([2.0, 2.0], 0.3, 0.6, [1.0; 3], 1.0, 0)] };
        let out = rasterize(&list, &v, [1.0; 3]);
        let g = rasterize_backward(&Serial, &list, &out, [1.0; 3], &[0.0; 108]);
        assert_eq!(g[0], SplatGrad::default());
    }
}
