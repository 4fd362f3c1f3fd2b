use illumsplat_core::encoding::{fourier_encode, ide_encode, real_sh, FOURIER_DIM, IDE_DIM};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Index ranges of the degree-1, 2 and 4 blocks.
const BLOCKS: [(usize, usize); 3] = [(0, 3), (3, 8), (8, 17)];

fn sph(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

#[test]
fn real_sh_is_orthonormal_on_the_sphere() {
    // midpoint in cos(theta), uniform in phi (exact for these band limits)
    let (nt, np) = (4000, 32);
    let mut gram = vec![0.0; IDE_DIM * IDE_DIM];
    for i in 0..nt {
        let z = -1.0 + (i as f64 + 0.5) * 2.0 / nt as f64;
        for j in 0..np {
            let phi = (j as f64 + 0.5) * std::f64::consts::TAU / np as f64;
            let (y, _) = real_sh(sph(z.acos(), phi));
            let w = 2.0 / nt as f64 * std::f64::consts::TAU / np as f64;
            for a in 0..IDE_DIM {
                for b in 0..IDE_DIM {
                    gram[a * IDE_DIM + b] += w * y[a] * y[b];
                }
            }
        }
    }
    for a in 0..IDE_DIM {
        for b in 0..IDE_DIM {
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((gram[a * IDE_DIM + b] - want).abs() < 1e-4, "({a},{b}) = {}", gram[a * IDE_DIM + b]);
        }
    }
}

#[test]
fn vanishing_roughness_gives_plain_sh() {
    let d: [f64; 3] = [0.3, -0.4, 0.866];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let (y, _) = real_sh(d.map(|v: f64| v / n));
    let e = ide_encode(d, 1e-12).unwrap();
    for (a, b) in e.values.iter().zip(y.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
}

fn rotate_z(d: [f64; 3], a: f64) -> [f64; 3] {
    [a.cos() * d[0] - a.sin() * d[1], a.sin() * d[0] + a.cos() * d[1], d[2]]
}

/// Rotating the direction about z mixes components only within a degree; the
/// per-degree mixing matrix is fitted numerically and must be orthogonal and
/// reproduce the encoding of fresh rotated directions.
#[test]
fn z_rotation_acts_degree_wise() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let roughness = 0.3;
    let mut dir = || sph(rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.0..std::f64::consts::TAU));
    for angle in [0.3, 1.1, 2.9] {
        let fit: Vec<[f64; 3]> = (0..60).map(|_| dir()).collect();
        let test: Vec<[f64; 3]> = (0..30).map(|_| dir()).collect();
        for (lo, hi) in BLOCKS {
            let m = hi - lo;
            let enc = |d: [f64; 3]| {
                DVector::from_iterator(m, ide_encode(d, roughness).unwrap().values[lo..hi].iter().copied())
            };
            let x = DMatrix::from_columns(&fit.iter().map(|&d| enc(d)).collect::<Vec<_>>());
            let y = DMatrix::from_columns(&fit.iter().map(|&d| enc(rotate_z(d, angle))).collect::<Vec<_>>());
            // least squares: M = Y Xᵀ (X Xᵀ)⁻¹
            let xxt = &x * x.transpose();
            let mtx = &y * x.transpose() * xxt.try_inverse().unwrap();
            let ortho = &mtx * mtx.transpose();
            assert!((ortho - DMatrix::identity(m, m)).norm() < 1e-8, "block {lo}..{hi} not orthogonal");
            for &d in &test {
                let pred = &mtx * enc(d);
                assert!((pred - enc(rotate_z(d, angle))).norm() < 1e-9);
            }
        }
    }
}

proptest! {
    #[test]
    fn block_norms_shrink_with_roughness(
        d in prop::array::uniform3(-1.0f64..1.0).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2),
        r in 1e-3f64..5.0,
        dr in 0.0f64..5.0,
    ) {
        let a = ide_encode(d, r).unwrap().values;
        let b = ide_encode(d, r + dr).unwrap().values;
        for (lo, hi) in BLOCKS {
            let na: f64 = a[lo..hi].iter().map(|v| v * v).sum();
            let nb: f64 = b[lo..hi].iter().map(|v| v * v).sum();
            prop_assert!(nb <= na * (1.0 + 1e-12));
        }
    }

    #[test]
    fn degree_norms_follow_addition_theorem(
        d in prop::array::uniform3(-1.0f64..1.0).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2),
    ) {
        let (y, _) = real_sh(d.map(|v| v / d.iter().map(|x| x * x).sum::<f64>().sqrt()));
        for ((lo, hi), l) in BLOCKS.iter().zip([1.0, 2.0, 4.0]) {
            let n: f64 = y[*lo..*hi].iter().map(|v| v * v).sum();
            prop_assert!((n - (2.0 * l + 1.0) / (4.0 * std::f64::consts::PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_is_scale_invariant(
        d in prop::array::uniform3(-1.0f64..1.0).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2),
        s in 0.1f64..10.0,
    ) {
        let a = fourier_encode(d).unwrap();
        let b = fourier_encode(d.map(|v| v * s)).unwrap();
        prop_assert_eq!(a.len(), FOURIER_DIM);
        for k in 0..FOURIER_DIM {
            prop_assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }
}
