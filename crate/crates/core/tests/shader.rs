use illumsplat_core::encoding::{fourier_encode, ide_encode};
use illumsplat_core::gaussian::BRDF_DIM;
use illumsplat_core::shader::{shade, shade_backward, NeuralShader, ShaderTape, ShadingVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: usize = 24;

fn vec_in(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let d: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if d.iter().map(|v| v * v).sum::<f64>() > 1e-2 {
            return d;
        }
    }
}

#[test]
fn outgoing_radiance_ignores_brdf_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = NeuralShader::<f64>::random(ShadingVariant::OutgoingRadiance, P, &mut rng);
    for _ in 0..50 {
        let light = vec_in(&mut rng, P);
        let enc = ide_encode(dir(&mut rng), 0.3).unwrap().values.to_vec();
        let a = s.specular_color(&vec_in(&mut rng, BRDF_DIM), &light, &enc, [1.0; 3]).unwrap();
        let b = s.specular_color(&vec_in(&mut rng, BRDF_DIM), &light, &enc, [1.0; 3]).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn no_ide_variant_has_no_roughness_input() {
    // the Fourier encoding takes only a direction, so roughness cannot enter
    assert!(!ShadingVariant::NoIde.uses_roughness());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = NeuralShader::<f64>::random(ShadingVariant::NoIde, P, &mut rng);
    let enc = fourier_encode(dir(&mut rng)).unwrap().to_vec();
    let ide = ide_encode([0.0, 0.0, 1.0], 0.1).unwrap().values.to_vec();
    assert!(s.specular_color(&vec_in(&mut rng, BRDF_DIM), &vec_in(&mut rng, P), &ide, [1.0; 3]).is_err());
    assert!(s.specular_color(&vec_in(&mut rng, BRDF_DIM), &vec_in(&mut rng, P), &enc, [1.0; 3]).is_ok());
}

#[test]
fn zeroed_light_columns_make_shader_blind_to_light() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in [ShadingVariant::Full, ShadingVariant::OutgoingRadiance, ShadingVariant::NoIde] {
        let mut s = NeuralShader::<f64>::random(variant, P, &mut rng);
        let offset = if variant.uses_brdf() { BRDF_DIM } else { 0 };
        let first = &mut s.layers[0];
        for o in 0..first.outputs {
            for i in offset..offset + P {
                first.weight[o * first.inputs + i] = 0.0;
            }
        }
        for _ in 0..20 {
            let brdf = vec_in(&mut rng, BRDF_DIM);
            let d = dir(&mut rng);
            let enc = match variant {
                ShadingVariant::NoIde => fourier_encode(d).unwrap().to_vec(),
                _ => ide_encode(d, 0.5).unwrap().values.to_vec(),
            };
            let tint = [0.7, 0.5, 0.9];
            let mut tape = ShaderTape::default();
            let a = s.forward(&brdf, &vec_in(&mut rng, P), &enc, tint, &mut tape).unwrap();
            let b = s.specular_color(&brdf, &vec_in(&mut rng, P), &enc, tint).unwrap();
            assert_eq!(a, b);
            let mut grad = s.zeros_like();
            let g = s.backward(&tape, tint, [1.0, -0.5, 0.25], &mut grad);
            assert!(g.light.iter().all(|v| *v == 0.0));
        }
    }
}

/// The output is a sigmoid of an affine-ReLU chain, so its local slope is
/// bounded by a quarter of the product of layer operator norms (bounded here
/// by Frobenius norms).
#[test]
fn light_sensitivity_respects_lipschitz_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = NeuralShader::<f64>::random(ShadingVariant::Full, P, &mut rng);
    let fro = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bound = 0.25 * s.layers.iter().map(|l| fro(&l.weight)).product::<f64>();
    for _ in 0..200 {
        let brdf = vec_in(&mut rng, BRDF_DIM);
        let enc = ide_encode(dir(&mut rng), 0.2).unwrap().values.to_vec();
        let l0 = vec_in(&mut rng, P);
        let step = vec_in(&mut rng, P);
        let eps = rng.gen_range(1e-3..0.5);
        let l1: Vec<f64> = l0.iter().zip(&step).map(|(a, b)| a + eps * b).collect();
        let dist = eps * fro(&step);
        let a = s.specular_color(&brdf, &l0, &enc, [1.0; 3]).unwrap();
        let b = s.specular_color(&brdf, &l1, &enc, [1.0; 3]).unwrap();
        let change = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt();
        assert!(change <= bound * dist * (1.0 + 1e-9));
    }
}

#[test]
fn specular_scales_linearly_with_tint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = NeuralShader::<f64>::random(ShadingVariant::Full, P, &mut rng);
    let brdf = vec_in(&mut rng, BRDF_DIM);
    let light = vec_in(&mut rng, P);
    let enc = ide_encode([0.1, 0.2, 0.9], 0.4).unwrap().values.to_vec();
    let a = s.specular_color(&brdf, &light, &enc, [1.0; 3]).unwrap();
    let b = s.specular_color(&brdf, &light, &enc, [0.5, 0.0, 0.25]).unwrap();
    assert_eq!(b, [a[0] * 0.5, 0.0, a[2] * 0.25]);
    assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn shade_clamps_and_blocks_gradient_at_the_limits() {
    let r = shade([10.0f64, 0.0, -10.0], [0.5, 0.1, -0.5], true);
    assert_eq!(r.color[0], 1.0);
    assert_eq!(r.color[2], 0.0);
    assert!((r.color[1] - 0.6).abs() < 1e-12);
    let (d_raw, d_spec) = shade_backward(&r, [1.0; 3]);
    assert_eq!(d_spec[0], 0.0);
    assert_eq!(d_spec[2], 0.0);
    assert_eq!(d_spec[1], 1.0);
    assert!((d_raw[1] - 0.25).abs() < 1e-12);

    let off = shade([0.0f64; 3], [0.3; 3], false);
    assert_eq!(off.color, [0.5; 3]);
    assert_eq!(off.specular, [0.0; 3]);
}
