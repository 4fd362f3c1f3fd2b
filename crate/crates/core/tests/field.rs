use illumsplat_core::check::{check_field_oracle, DenseField};
use illumsplat_core::field::{Aabb, FieldGrad, IlluminationField};
use illumsplat_core::gaussian::GaussianSet;
use illumsplat_core::train::{shrink_bbox, shrink_grid_event};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    illumsplat_core::check::relative_error(a, b, 1e-12)
}

fn field(seed: u64, res: usize, r: usize, p: usize) -> IlluminationField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bbox = Aabb::new([-1.0, -0.5, 0.0], [1.0, 1.5, 3.0]).unwrap();
    IlluminationField::random(bbox, res, r, p, 1.0, 1.0, &mut rng).unwrap()
}

#[test]
fn dense_tensor_oracle_random_fields() {
    let r = check_field_oracle(11, 100, 100, 8, 4);
    assert_eq!(r.instances, 10_000);
    assert!(r.passed(), "max rel err {:.3e}", r.max_error);
}

#[test]
fn node_query_equals_factor_product_sum() {
    let f = field(1, 4, 3, 5);
    let (lo, hi) = (f.bbox().min(), f.bbox().max());
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let node = [i, j, k];
                let x: [f64; 3] = std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * node[a] as f64 / 3.0);
                let mut want = vec![0.0; 5];
                for r in 0..3 {
                    let terms = [
                        f.vec_x[r * 4 + i] * f.mat_yz[r * 16 + j * 4 + k],
                        f.vec_y[r * 4 + j] * f.mat_xz[r * 16 + i * 4 + k],
                        f.vec_z[r * 4 + k] * f.mat_xy[r * 16 + i * 4 + j],
                    ];
                    for (a, t) in terms.iter().enumerate() {
                        let row = &f.basis[(3 * r + a) * 5..(3 * r + a + 1) * 5];
                        for (w, b) in want.iter_mut().zip(row) {
                            *w += t * b;
                        }
                    }
                }
                assert!(rel(&f.eval(x).features, &want) < 1e-12);
            }
        }
    }
}

#[test]
fn linear_in_basis_and_factors() {
    let f = field(2, 5, 2, 4);
    let x = [0.1, 0.3, 1.7];
    let base = f.eval(x).features;
    let mut g = f.clone();
    g.basis.iter_mut().for_each(|v| *v *= 2.5);
    let scaled: Vec<f64> = base.iter().map(|v| v * 2.5).collect();
    assert!(rel(&g.eval(x).features, &scaled) < 1e-12);
    let mut h = f.clone();
    h.vec_x.iter_mut().chain(h.mat_yz.iter_mut()).for_each(|v| *v = 0.0);
    let mut k = f.clone();
    k.vec_y.iter_mut().chain(k.vec_z.iter_mut()).for_each(|v| *v = 0.0);
    k.mat_xz.iter_mut().chain(k.mat_xy.iter_mut()).for_each(|v| *v = 0.0);
    let sum: Vec<f64> = h.eval(x).features.iter().zip(k.eval(x).features).map(|(a, b)| a + b).collect();
    assert!(rel(&sum, &base) < 1e-12);
}

#[test]
fn continuous_across_voxel_faces() {
    let f = field(3, 6, 3, 4);
    let (lo, hi) = (f.bbox().min(), f.bbox().max());
    let face = lo[1] + (hi[1] - lo[1]) * 2.0 / 5.0;
    for eps in [1e-3, 1e-5, 1e-7] {
        let a = f.eval([0.2, face - eps, 1.1]).features;
        let b = f.eval([0.2, face + eps, 1.1]).features;
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 200.0 * eps, "jump {d} at eps {eps}");
    }
}

#[test]
fn node_gradient_is_lower_cell_one_sided_limit() {
    let f = field(4, 5, 2, 3);
    let (lo, hi) = (f.bbox().min(), f.bbox().max());
    let up = [0.3, -1.2, 0.7];
    let mut x = [0.13, 0.0, 0.9];
    x[1] = lo[1] + (hi[1] - lo[1]) * 2.0 / 4.0;
    let (_, dp) = f.backward(x, &up);
    let val = |p: [f64; 3]| f.eval(p).features.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
    let h = 1e-7;
    let left = (val(x) - val([x[0], x[1] - h, x[2]])) / h;
    let right = (val([x[0], x[1] + h, x[2]]) - val(x)) / h;
    assert!((dp[1] - left).abs() < 1e-5 * left.abs().max(1.0), "{} vs left {left}", dp[1]);
    assert!((left - right).abs() > 1e-3, "test point should sit on a kink");
}

#[test]
fn gradient_stencil_is_sparse() {
    let f = field(5, 6, 3, 4);
    let (g, _) = f.backward([0.05, 0.61, 1.3], &[1.0, 0.5, -0.5, 2.0]);
    let nz = |s: &[f64]| s.iter().filter(|v| **v != 0.0).count();
    assert_eq!(nz(&g.vec_x), 2 * 3);
    assert_eq!(nz(&g.mat_yz), 4 * 3);
    let zero = FieldGrad::zeros_like(&f);
    let (gz, dz) = f.backward([0.05, 0.61, 1.3], &[0.0; 4]);
    assert_eq!(gz, zero);
    assert_eq!(dz, [0.0; 3]);
}

#[test]
fn shrink_matches_resampled_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let f = field(rng.gen(), 6, 3, 4);
        let (lo, hi) = (f.bbox().min(), f.bbox().max());
        let nlo: [f64; 3] = std::array::from_fn(|a| lo[a] + (hi[a] - lo[a]) * rng.gen_range(0.0..0.3));
        let nhi: [f64; 3] = std::array::from_fn(|a| nlo[a] + (hi[a] - lo[a]) * 0.5);
        let g = f.shrink_resample(Aabb::new(nlo, nhi).unwrap()).unwrap();
        let old = DenseField::from_field(&f);
        // new node values are the old field's values there; in between the
        // factorized field is trilinear in its node values
        let n = g.resolution() - 1;
        for _ in 0..100 {
            let x: [f64; 3] = std::array::from_fn(|a| rng.gen_range(nlo[a]..nhi[a]));
            let mut want = vec![0.0; 4];
            let u: [f64; 3] = std::array::from_fn(|a| (x[a] - nlo[a]) / (nhi[a] - nlo[a]) * n as f64);
            let c: [usize; 3] = std::array::from_fn(|a| (u[a].floor() as usize).min(n - 1));
            for corner in 0..8 {
                let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut w = 1.0;
                let mut node = [0.0; 3];
                for a in 0..3 {
                    let t = u[a] - c[a] as f64;
                    w *= if o[a] == 1 { t } else { 1.0 - t };
                    node[a] = nlo[a] + (nhi[a] - nlo[a]) * (c[a] + o[a]) as f64 / n as f64;
                }
                for (q, v) in old.eval(node).iter().enumerate() {
                    want[q] += w * v;
                }
            }
            assert!(rel(&g.eval(x).features, &want) < 1e-9);
        }
    }
}

#[test]
fn shrink_rejects_outside_box_and_keeps_basis() {
    let f = field(7, 4, 2, 3);
    assert!(f.shrink_resample(Aabb::new([-2.0, 0.0, 0.0], [0.0, 1.0, 1.0]).unwrap()).is_err());
    let g = f.shrink_resample(Aabb::new([-0.5, 0.0, 1.0], [0.5, 1.0, 2.0]).unwrap()).unwrap();
    assert_eq!(g.basis, f.basis);
}

fn gaussians_at(points: &[[f64; 3]]) -> GaussianSet<f64> {
    let mut g = GaussianSet::zeros(points.len());
    g.means.copy_from_slice(points);
    g
}

#[test]
fn shrink_event_to_one_octant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bbox = Aabb::cube(1.0).unwrap();
    let f = IlluminationField::random(bbox, 8, 2, 3, 0.1, 0.1, &mut rng).unwrap();
    let pts: Vec<[f64; 3]> = (0..300).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
    let g = gaussians_at(&pts);
    let b = shrink_bbox(&f, &g);
    let (mut lo, mut hi) = ([f64::MAX; 3], [f64::MIN; 3]);
    for p in &pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    for a in 0..3 {
        let pad = 0.05 * (hi[a] - lo[a]);
        assert!((b.min()[a] - (lo[a] - pad)).abs() < 1e-12);
        assert!((b.max()[a] - (hi[a] + pad).min(1.0)).abs() < 1e-12);
    }
    let ratio = f.bbox().volume() / b.volume();
    assert!(ratio >= 8.0 / 1.05f64.powi(3) * 0.99, "ratio {ratio}");
    let shrunk = shrink_grid_event(&f, &g).unwrap();
    assert!(shrunk.bbox().volume() < f.bbox().volume());
}

#[test]
fn shrink_event_with_filling_gaussians_keeps_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = IlluminationField::random(Aabb::cube(1.0).unwrap(), 4, 1, 2, 0.1, 0.1, &mut rng).unwrap();
    let mut pts: Vec<[f64; 3]> = (0..200).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    pts.push([-1.0; 3]);
    pts.push([1.0; 3]);
    assert_eq!(shrink_bbox(&f, &gaussians_at(&pts)), *f.bbox());
}

#[test]
fn shrink_event_with_coplanar_gaussians_keeps_valid_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = IlluminationField::random(Aabb::cube(1.0).unwrap(), 4, 1, 2, 0.1, 0.1, &mut rng).unwrap();
    let pts: Vec<[f64; 3]> = (0..50).map(|_| [rng.gen_range(-0.5..0.5), 0.25, rng.gen_range(-0.5..0.5)]).collect();
    let b = shrink_bbox(&f, &gaussians_at(&pts));
    assert!(b.max()[1] > b.min()[1]);
    assert!(b.contains_point([0.0, 0.25, 0.0]));
    assert!(f.bbox().contains_box(&b));
}
