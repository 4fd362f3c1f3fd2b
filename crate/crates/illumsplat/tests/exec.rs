use illumsplat::RayonExecutor;
use illumsplat_core::exec::{Executor, Serial};
use illumsplat_core::render::{render_backward, render_forward, RenderOptions};
use illumsplat_core::scene::{generate_probe_scene, ProbeSpec};
use illumsplat_core::shader::ShadingVariant;
use illumsplat_core::train::{TrainConfig, Trainer};

#[test]
fn map_preserves_index_order() {
    for workers in [1, 2, 4] {
        let exec = RayonExecutor::new(workers).unwrap();
        assert_eq!(exec.workers(), workers);
        let out = exec.map(1000, |i| i * i);
        assert!(out.iter().enumerate().all(|(i, v)| *v == i * i));
    }
}

#[test]
fn render_and_gradients_do_not_depend_on_worker_count() {
    let probe = generate_probe_scene::<f32>(&ProbeSpec {
        gaussians: 60,
        train_views: 2,
        test_views: 0,
        resolution: 40,
        ..ProbeSpec::default()
    });
    let mut t = Trainer::new(TrainConfig::probe(10, ShadingVariant::Full, 1), &probe.dataset).unwrap();
    t.model.gaussians.means.iter_mut().for_each(|m| m.iter_mut().for_each(|c| *c *= 0.8));
    let view = &probe.dataset.train[0];
    let opts = RenderOptions::new([1.0; 3], true);
    let (img0, cache0) = render_forward(&Serial, &t.model, &view.camera, &opts);
    let grad_image: Vec<f32> = img0.data.iter().zip(&view.image.data).map(|(a, b)| a - b).collect();
    let g0 = render_backward(&Serial, &t.model, &view.camera, &cache0, &grad_image);
    for workers in [1, 3, 8] {
        let exec = RayonExecutor::new(workers).unwrap();
        let (img, cache) = render_forward(&exec, &t.model, &view.camera, &opts);
        assert_eq!(img.data, img0.data);
        let g = render_backward(&exec, &t.model, &view.camera, &cache, &grad_image);
        assert_eq!(g, g0);
    }
}

#[test]
fn training_does_not_depend_on_worker_count() {
    let probe = generate_probe_scene::<f32>(&ProbeSpec {
        gaussians: 40,
        train_views: 3,
        test_views: 0,
        resolution: 24,
        ..ProbeSpec::default()
    });
    let run = |workers: usize| {
        let exec = RayonExecutor::new(workers).unwrap();
        let mut cfg = TrainConfig::probe(30, ShadingVariant::Full, 5);
        cfg.shape.initial_gaussians = 80;
        let mut t = Trainer::new(cfg, &probe.dataset).unwrap();
        let mut log = Vec::new();
        while !t.is_done() {
            log.push(t.step(&exec, &probe.dataset).unwrap());
        }
        (log, t.model)
    };
    let (a, ma) = run(1);
    let (b, mb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}
