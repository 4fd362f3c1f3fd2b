//! Photometric training loss `(1 - λ) L1 + λ (1 - SSIM)` and evaluation
//! metrics.
//!
//! SSIM uses an 11-tap Gaussian window (σ = 1.5) applied separably. Near the
//! image border the window is truncated and renormalized, so a constant image
//! has constant local statistics everywhere.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;
use crate::scalar::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.2 }
    }
}

/// A scalar loss and its gradient with respect to the first image.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss<T> {
    pub total: T,
    pub l1: T,
    pub dssim: T,
    pub grad: Vec<T>,
}

fn check_sizes<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<()> {
    if !a.same_size(b) || a.data.len() != b.data.len() {
        return Err(Error::ImageSizeMismatch);
    }
    Ok(())
}

/// Mean absolute difference; the subgradient at exact ties is zero.
pub fn l1_loss<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<LossValue<T>> {
    check_sizes(a, b)?;
    let n = T::lit(a.data.len().max(1) as f64);
    let mut sum = T::zero();
    let grad = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x - y;
            sum += d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(LossValue { value: sum / n, grad })
}

fn gaussian_taps<T: Real>() -> [T; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [T::zero(); SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = T::lit(libm_exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)));
    }
    let s: T = taps.iter().copied().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

fn libm_exp(v: f64) -> f64 {
    num_traits::Float::exp(v)
}

/// Truncated, renormalized 1D window along one axis of a `w x h` plane.
struct Window<T> {
    taps: [T; SSIM_WINDOW],
}

impl<T: Real> Window<T> {
    fn norm(&self, i: usize, n: usize) -> T {
        let r = SSIM_WINDOW / 2;
        let mut s = T::zero();
        for k in 0..SSIM_WINDOW {
            let j = i as isize + k as isize - r as isize;
            if j >= 0 && (j as usize) < n {
                s += self.taps[k];
            }
        }
        s
    }

    /// Filters along x (`stride = 1`, `len = w`, `lines = h`) or y
    /// (`stride = w`, `len = h`, `lines = w`).
    fn apply(&self, src: &[T], dst: &mut [T], w: usize, h: usize, along_x: bool) {
        let (len, lines) = if along_x { (w, h) } else { (h, w) };
        let r = SSIM_WINDOW / 2;
        let norms: Vec<T> = (0..len).map(|i| self.norm(i, len)).collect();
        for line in 0..lines {
            for i in 0..len {
                let mut acc = T::zero();
                for k in 0..SSIM_WINDOW {
                    let j = i as isize + k as isize - r as isize;
                    if j >= 0 && (j as usize) < len {
                        let idx = if along_x { line * w + j as usize } else { j as usize * w + line };
                        acc += self.taps[k] * src[idx];
                    }
                }
                let o = if along_x { line * w + i } else { i * w + line };
                dst[o] = acc / norms[i];
            }
        }
    }

    /// Transpose of [`apply`](Self::apply).
    fn adjoint(&self, src: &[T], dst: &mut [T], w: usize, h: usize, along_x: bool) {
        let (len, lines) = if along_x { (w, h) } else { (h, w) };
        let r = SSIM_WINDOW / 2;
        let norms: Vec<T> = (0..len).map(|i| self.norm(i, len)).collect();
        dst.fill(T::zero());
        for line in 0..lines {
            for i in 0..len {
                let o = if along_x { line * w + i } else { i * w + line };
                let g = src[o] / norms[i];
                for k in 0..SSIM_WINDOW {
                    let j = i as isize + k as isize - r as isize;
                    if j >= 0 && (j as usize) < len {
                        let idx = if along_x { line * w + j as usize } else { j as usize * w + line };
                        dst[idx] += self.taps[k] * g;
                    }
                }
            }
        }
    }

    fn blur(&self, src: &[T], w: usize, h: usize) -> Vec<T> {
        let mut tmp = vec![T::zero(); w * h];
        let mut out = vec![T::zero(); w * h];
        self.apply(src, &mut tmp, w, h, true);
        self.apply(&tmp, &mut out, w, h, false);
        out
    }

    fn blur_adjoint(&self, src: &[T], w: usize, h: usize) -> Vec<T> {
        let mut tmp = vec![T::zero(); w * h];
        let mut out = vec![T::zero(); w * h];
        self.adjoint(src, &mut tmp, w, h, false);
        self.adjoint(&tmp, &mut out, w, h, true);
        out
    }
}

fn channel<T: Real>(img: &ImageBuffer<T>, c: usize) -> Vec<T> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over all pixels and channels, optionally with its gradient with
/// respect to `a`.
fn ssim_impl<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>, want_grad: bool) -> (T, Option<Vec<T>>) {
    let (w, h) = (a.width, a.height);
    let win = Window { taps: gaussian_taps::<T>() };
    let c1 = T::lit(SSIM_C1);
    let c2 = T::lit(SSIM_C2);
    let two = T::lit(2.0);
    let n = T::lit((w * h * 3).max(1) as f64);
    let mut total = T::zero();
    let mut grad = if want_grad { Some(vec![T::zero(); a.data.len()]) } else { None };

    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<T> = x.iter().map(|v| *v * *v).collect();
        let yy: Vec<T> = y.iter().map(|v| *v * *v).collect();
        let xy: Vec<T> = x.iter().zip(&y).map(|(p, q)| *p * *q).collect();
        let mx = win.blur(&x, w, h);
        let my = win.blur(&y, w, h);
        let exx = win.blur(&xx, w, h);
        let eyy = win.blur(&yy, w, h);
        let exy = win.blur(&xy, w, h);

        let mut d_mx = vec![T::zero(); w * h];
        let mut d_exx = vec![T::zero(); w * h];
        let mut d_exy = vec![T::zero(); w * h];
        for p in 0..w * h {
            let a1 = two * mx[p] * my[p] + c1;
            let a2 = two * (exy[p] - mx[p] * my[p]) + c2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + c1;
            let b2 = (exx[p] - mx[p] * mx[p]) + (eyy[p] - my[p] * my[p]) + c2;
            let num = a1 * a2;
            let den = b1 * b2;
            total += num / den;
            if want_grad {
                let den2 = den * den;
                let dnum_dmx = two * my[p] * a2 - two * my[p] * a1;
                let dden_dmx = two * mx[p] * b2 - two * mx[p] * b1;
                d_mx[p] = (dnum_dmx * den - num * dden_dmx) / den2 / n;
                d_exy[p] = two * a1 / den / n;
                d_exx[p] = -num * b1 / den2 / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            let gm = win.blur_adjoint(&d_mx, w, h);
            let gxx = win.blur_adjoint(&d_exx, w, h);
            let gxy = win.blur_adjoint(&d_exy, w, h);
            for p in 0..w * h {
                g[3 * p + c] = gm[p] + two * x[p] * gxx[p] + y[p] * gxy[p];
            }
        }
    }
    (total / n, grad)
}

pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<T> {
    check_sizes(a, b)?;
    Ok(ssim_impl(a, b, false).0)
}

/// `1 - SSIM(a, b)` and its gradient with respect to `a`.
pub fn dssim_loss<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<LossValue<T>> {
    check_sizes(a, b)?;
    let (s, g) = ssim_impl(a, b, true);
    let grad = g.unwrap_or_default().into_iter().map(|v| -v).collect();
    Ok(LossValue { value: T::one() - s, grad })
}

pub fn total_loss<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>, cfg: &LossConfig) -> Result<TotalLoss<T>> {
    let l1 = l1_loss(a, b)?;
    let ds = dssim_loss(a, b)?;
    let lam = T::lit(cfg.lambda);
    let keep = T::one() - lam;
    let grad = l1.grad.iter().zip(&ds.grad).map(|(p, q)| keep * *p + lam * *q).collect();
    Ok(TotalLoss { total: keep * l1.value + lam * ds.value, l1: l1.value, dssim: ds.value, grad })
}

pub fn mse<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    check_sizes(a, b)?;
    let n = a.data.len().max(1) as f64;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(s / n)
}

/// `10 log10(1 / MSE)` on unit range, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * num_traits::Float::log10(1.0 / m)).min(PSNR_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize) -> f64) -> ImageBuffer<f64> {
        ImageBuffer { width: w, height: h, data: (0..w * h * 3).map(f).collect() }
    }

    #[test]
    fn l1_examples() {
        let z = ImageBuffer::<f64>::new(4, 3);
        let o = ImageBuffer::filled(4, 3, [1.0; 3]);
        assert_eq!(l1_loss(&z, &z).unwrap().value, 0.0);
        assert!(l1_loss(&z, &z).unwrap().grad.iter().all(|g| *g == 0.0));
        assert_eq!(l1_loss(&z, &o).unwrap().value, 1.0);
    }

    #[test]
    fn size_mismatch() {
        let a = ImageBuffer::<f64>::new(4, 3);
        let b = ImageBuffer::<f64>::new(3, 4);
        assert_eq!(l1_loss(&a, &b).unwrap_err(), Error::ImageSizeMismatch);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_is_exact() {
        let a = img(13, 9, |i| ((i * 37) % 101) as f64 / 100.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let d = dssim_loss(&a, &a).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn constant_images_closed_form() {
        let (u, v) = (0.3, 0.8);
        let a = ImageBuffer::filled(12, 12, [u; 3]);
        let b = ImageBuffer::filled(12, 12, [v; 3]);
        let want = (2.0 * u * v + SSIM_C1) * SSIM_C2 / ((u * u + v * v + SSIM_C1) * SSIM_C2);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn psnr_examples() {
        let a = ImageBuffer::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = ImageBuffer::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn lambda_endpoints() {
        let a = img(8, 8, |i| ((i * 13) % 17) as f64 / 16.0);
        let b = img(8, 8, |i| ((i * 7) % 11) as f64 / 10.0);
        let l1 = l1_loss(&a, &b).unwrap().value;
        let ds = dssim_loss(&a, &b).unwrap().value;
        assert_eq!(total_loss(&a, &b, &LossConfig { lambda: 0.0 }).unwrap().total, l1);
        assert_eq!(total_loss(&a, &b, &LossConfig { lambda: 1.0 }).unwrap().total, ds);
    }

    #[test]
    fn window_adjoint_is_transpose() {
        let win = Window { taps: gaussian_taps::<f64>() };
        let (w, h) = (7, 5);
        let x: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.91).cos()).collect();
        let bx = win.blur(&x, w, h);
        let aty = win.blur_adjoint(&y, w, h);
        let lhs: f64 = bx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
