//! View-direction encodings fed to the neural shader.
//!
//! [`ide_encode`] is the integrated directional encoding: real spherical
//! harmonics of degrees 1, 2 and 4, each degree scaled by
//! `exp(-l(l+1) * roughness / 2)`. [`fourier_encode`] is the plain sinusoidal
//! encoding used by the roughness-free variant.
//!
//! Both normalize the input direction internally, so their gradients are
//! tangent to the unit sphere.

use crate::error::{Error, Result};
use crate::scalar::{dot3, norm3, Real, Vec3};

pub const IDE_DIM: usize = 17;
pub const FOURIER_DIM: usize = 24;
pub const FOURIER_OCTAVES: usize = 4;

/// Spherical-harmonic degree of every IDE component.
pub const IDE_DEGREES: [u32; IDE_DIM] = [1, 1, 1, 2, 2, 2, 2, 2, 4, 4, 4, 4, 4, 4, 4, 4, 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalEncoding<T> {
    pub values: [T; IDE_DIM],
}

fn unit<T: Real>(dir: Vec3<T>) -> Result<(Vec3<T>, T)> {
    let n = norm3(dir);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::ZeroDirection);
    }
    Ok(([dir[0] / n, dir[1] / n, dir[2] / n], n))
}

/// Projects a gradient taken at the normalized direction back to the raw
/// input: `(I - ŵŵᵀ) g / |dir|`.
fn unnormalize_grad<T: Real>(w: Vec3<T>, norm: T, g: Vec3<T>) -> Vec3<T> {
    let p = dot3(w, g);
    core::array::from_fn(|i| (g[i] - w[i] * p) / norm)
}

/// Real spherical harmonics (degrees 1, 2, 4, orders `-l..=l`) at a unit
/// direction, with their Cartesian partial derivatives.
pub fn real_sh<T: Real>(d: Vec3<T>) -> ([T; IDE_DIM], [Vec3<T>; IDE_DIM]) {
    let [x, y, z] = d;
    let c = |v: f64| T::lit(v);
    let pi = core::f64::consts::PI;
    let k1 = c(libm_sqrt(3.0 / (4.0 * pi)));
    let k2a = c(0.5 * libm_sqrt(15.0 / pi));
    let k2b = c(0.25 * libm_sqrt(5.0 / pi));
    let k2c = c(0.25 * libm_sqrt(15.0 / pi));
    let k4m4 = c(0.75 * libm_sqrt(35.0 / pi));
    let k4m3 = c(0.75 * libm_sqrt(35.0 / (2.0 * pi)));
    let k4m2 = c(0.75 * libm_sqrt(5.0 / pi));
    let k4m1 = c(0.75 * libm_sqrt(5.0 / (2.0 * pi)));
    let k40 = c(3.0 / 16.0 * libm_sqrt(1.0 / pi));
    let k42 = c(3.0 / 8.0 * libm_sqrt(5.0 / pi));
    let k44 = c(3.0 / 16.0 * libm_sqrt(35.0 / pi));
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let z0 = T::zero();
    let n = |v: f64| T::lit(v);

    let vals = [
        k1 * y,
        k1 * z,
        k1 * x,
        k2a * x * y,
        k2a * y * z,
        k2b * (n(3.0) * z2 - n(1.0)),
        k2a * x * z,
        k2c * (x2 - y2),
        k4m4 * x * y * (x2 - y2),
        k4m3 * (n(3.0) * x2 - y2) * y * z,
        k4m2 * x * y * (n(7.0) * z2 - n(1.0)),
        k4m1 * y * z * (n(7.0) * z2 - n(3.0)),
        k40 * (n(35.0) * z2 * z2 - n(30.0) * z2 + n(3.0)),
        k4m1 * x * z * (n(7.0) * z2 - n(3.0)),
        k42 * (x2 - y2) * (n(7.0) * z2 - n(1.0)),
        k4m3 * (x2 - n(3.0) * y2) * x * z,
        k44 * (x2 * x2 - n(6.0) * x2 * y2 + y2 * y2),
    ];
    let grads = [
        [z0, k1, z0],
        [z0, z0, k1],
        [k1, z0, z0],
        [k2a * y, k2a * x, z0],
        [z0, k2a * z, k2a * y],
        [z0, z0, n(6.0) * k2b * z],
        [k2a * z, z0, k2a * x],
        [n(2.0) * k2c * x, -n(2.0) * k2c * y, z0],
        [k4m4 * (n(3.0) * x2 * y - y2 * y), k4m4 * (x2 * x - n(3.0) * x * y2), z0],
        [k4m3 * n(6.0) * x * y * z, k4m3 * (n(3.0) * x2 * z - n(3.0) * y2 * z), k4m3 * (n(3.0) * x2 * y - y2 * y)],
        [k4m2 * y * (n(7.0) * z2 - n(1.0)), k4m2 * x * (n(7.0) * z2 - n(1.0)), k4m2 * n(14.0) * x * y * z],
        [z0, k4m1 * z * (n(7.0) * z2 - n(3.0)), k4m1 * y * (n(21.0) * z2 - n(3.0))],
        [z0, z0, k40 * (n(140.0) * z2 * z - n(60.0) * z)],
        [k4m1 * z * (n(7.0) * z2 - n(3.0)), z0, k4m1 * x * (n(21.0) * z2 - n(3.0))],
        [
            k42 * n(2.0) * x * (n(7.0) * z2 - n(1.0)),
            -k42 * n(2.0) * y * (n(7.0) * z2 - n(1.0)),
            k42 * (x2 - y2) * n(14.0) * z,
        ],
        [k4m3 * (n(3.0) * x2 * z - n(3.0) * y2 * z), -k4m3 * n(6.0) * x * y * z, k4m3 * (x2 * x - n(3.0) * x * y2)],
        [k44 * (n(4.0) * x2 * x - n(12.0) * x * y2), k44 * (n(4.0) * y2 * y - n(12.0) * x2 * y), z0],
    ];
    (vals, grads)
}

fn libm_sqrt(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}

/// Per-degree attenuation `exp(-l(l+1) * roughness / 2)`.
pub fn ide_attenuation<T: Real>(degree: u32, roughness: T) -> T {
    let l = T::lit(degree as f64);
    (-(l * (l + T::one())) * roughness / T::lit(2.0)).exp()
}

pub fn ide_encode<T: Real>(dir: Vec3<T>, roughness: T) -> Result<DirectionalEncoding<T>> {
    if !(roughness > T::zero()) {
        return Err(Error::NonPositiveRoughness);
    }
    let (w, _) = unit(dir)?;
    let (sh, _) = real_sh(w);
    let mut values = sh;
    for (v, &l) in values.iter_mut().zip(&IDE_DEGREES) {
        *v *= ide_attenuation(l, roughness);
    }
    Ok(DirectionalEncoding { values })
}

/// Backward of [`ide_encode`]: gradients with respect to the raw direction
/// and the roughness.
pub fn ide_backward<T: Real>(dir: Vec3<T>, roughness: T, upstream: &[T; IDE_DIM]) -> Result<(Vec3<T>, T)> {
    let (w, norm) = unit(dir)?;
    let (sh, grads) = real_sh(w);
    let mut g_dir = [T::zero(); 3];
    let mut g_rough = T::zero();
    let half = T::lit(0.5);
    for k in 0..IDE_DIM {
        let l = T::lit(IDE_DEGREES[k] as f64);
        let a = ide_attenuation(IDE_DEGREES[k], roughness);
        let u = upstream[k];
        for (gd, gs) in g_dir.iter_mut().zip(grads[k]) {
            *gd += u * a * gs;
        }
        g_rough += u * sh[k] * a * (-(l * (l + T::one())) * half);
    }
    Ok((unnormalize_grad(w, norm, g_dir), g_rough))
}

/// `[sin(2^k π d_a), cos(2^k π d_a)]` for `k = 0..4` per axis `a`, laid out
/// axis-major: `(x: k0 sin, k0 cos, k1 sin, ...), (y: ...), (z: ...)`.
pub fn fourier_encode<T: Real>(dir: Vec3<T>) -> Result<[T; FOURIER_DIM]> {
    let (w, _) = unit(dir)?;
    let mut out = [T::zero(); FOURIER_DIM];
    for a in 0..3 {
        for k in 0..FOURIER_OCTAVES {
            let f = T::lit((1u32 << k) as f64) * T::PI();
            let (s, c) = (f * w[a]).sin_cos();
            out[a * 2 * FOURIER_OCTAVES + 2 * k] = s;
            out[a * 2 * FOURIER_OCTAVES + 2 * k + 1] = c;
        }
    }
    Ok(out)
}

pub fn fourier_backward<T: Real>(dir: Vec3<T>, upstream: &[T; FOURIER_DIM]) -> Result<Vec3<T>> {
    let (w, norm) = unit(dir)?;
    let mut g = [T::zero(); 3];
    for a in 0..3 {
        for k in 0..FOURIER_OCTAVES {
            let f = T::lit((1u32 << k) as f64) * T::PI();
            let (s, c) = (f * w[a]).sin_cos();
            let base = a * 2 * FOURIER_OCTAVES + 2 * k;
            g[a] += upstream[base] * f * c - upstream[base + 1] * f * s;
        }
    }
    Ok(unnormalize_grad(w, norm, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn y10_on_z_axis() {
        let (sh, _) = real_sh([0.0f64, 0.0, 1.0]);
        assert!((sh[1] - 0.4886025119029199).abs() < 1e-12);
        assert!((sh[1] - 0.48860).abs() < 1e-5);
    }

    #[test]
    fn small_roughness_approaches_plain_sh() {
        let d = [0.3f64, -0.4, 0.866];
        let n = norm3(d);
        let u = [d[0] / n, d[1] / n, d[2] / n];
        let (sh, _) = real_sh(u);
        let enc = ide_encode(d, 1e-9).unwrap();
        for k in 0..IDE_DIM {
            assert!((enc.values[k] - sh[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn large_roughness_vanishes() {
        let enc = ide_encode([0.2f64, 0.5, -0.3], 1e3).unwrap();
        assert!(enc.values.iter().all(|v| v.abs() < 1e-100));
    }

    #[test]
    fn zero_direction_rejected() {
        assert_eq!(ide_encode([0.0f64; 3], 0.5), Err(Error::ZeroDirection));
        assert_eq!(fourier_encode([0.0f64; 3]), Err(Error::ZeroDirection));
        assert_eq!(ide_encode([1.0f64, 0.0, 0.0], 0.0), Err(Error::NonPositiveRoughness));
    }

    #[test]
    fn fourier_x_axis() {
        let f = fourier_encode([1.0f64, 0.0, 0.0]).unwrap();
        assert_eq!(f.len(), FOURIER_DIM);
        assert!(f[0].abs() < 1e-12);
        assert!((f[1] + 1.0).abs() < 1e-12);
        // y and z components are zero: sin 0 = 0, cos 0 = 1
        assert_eq!(f[8], 0.0);
        assert_eq!(f[9], 1.0);
    }

    #[test]
    fn zero_upstream_ide_gradient() {
        let (gd, gr) = ide_backward([0.1f64, 0.7, 0.2], 0.4, &[0.0; IDE_DIM]).unwrap();
        assert_eq!(gd, [0.0; 3]);
        assert_eq!(gr, 0.0);
    }

    #[test]
    fn roughness_gradient_shrinks_magnitude() {
        // d/dr of 0.5*|enc|^2 is enc · d(enc)/dr, which must be <= 0
        let d = [0.3f64, 0.1, -0.9];
        for &r in &[0.01, 0.2, 1.0, 3.0] {
            let enc = ide_encode(d, r).unwrap();
            let (_, gr) = ide_backward(d, r, &enc.values).unwrap();
            assert!(gr <= 0.0, "roughness {r}: {gr}");
        }
    }
}
