use pointray::fit::{
    evaluate_views, fit, fit_pair_with_overlay, fit_with, make_sample, sample_loss, sample_window, Window,
};
use pointray::{
    render, Camera, DescriptorSet, FitConfig, FitDataset, HeadConfig, Image, OptimizerKind, PointCloud,
    RasterOptions, Scene, TargetKind, View,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn single_point(raw_alpha: f64) -> Scene {
    let cloud = PointCloud::new(vec![[0.0, 0.0, 2.0]]).unwrap();
    let desc = DescriptorSet::new(4, vec![0.01, 0.01, 0.01, raw_alpha]).unwrap();
    Scene::new(cloud, desc, "dot").unwrap()
}

fn one_view(width: usize, pixel: [f64; 4]) -> FitDataset {
    let camera = Camera::simple(10.0, width, width);
    let mut target = Image::new(width, width, 4);
    target.pixel_mut(width / 2, width / 2).copy_from_slice(&pixel);
    FitDataset::new(
        vec![View {
            id: "v".into(),
            camera,
            target,
        }],
        TargetKind::Rgba,
        None,
    )
    .unwrap()
}

fn base_cfg(iterations: usize) -> FitConfig {
    FitConfig {
        iterations,
        pyramid_levels: 0,
        max_ray_len: 8,
        ..FitConfig::default()
    }
}

#[test]
fn zero_iterations_leave_scene_unchanged() {
    let scene = single_point(0.5);
    let fitted = fit(scene.clone(), &one_view(4, [1.0, 0.0, 0.0, 1.0]), &base_cfg(0)).unwrap();
    assert_eq!(fitted.scene, scene);
    assert!(fitted.report.loss_curve.is_empty());
}

#[test]
fn single_point_reaches_target_pixel() {
    let data = one_view(4, [1.0, 0.0, 0.0, 1.0]);
    let cfg = FitConfig {
        learning_rate: 0.05,
        ..base_cfg(1500)
    };
    let fitted = fit(single_point(0.01), &data, &cfg).unwrap();
    assert_eq!(fitted.report.loss_curve.len(), 1500);
    let img = render(&fitted.scene, &data.views[0].camera, &RasterOptions::new(0, 8), &fitted.head).unwrap();
    for (got, want) in img.pixel(2, 2).iter().zip([1.0, 0.0, 0.0, 1.0]) {
        assert!((got - want).abs() < 0.02, "{:?}", img.pixel(2, 2));
    }
}

#[test]
fn plain_gradient_descends_monotonically() {
    let data = one_view(4, [0.6, 0.3, 0.1, 0.8]);
    let cfg = FitConfig {
        optimizer: OptimizerKind::PlainGradient,
        learning_rate: 0.5,
        beta: 0.0,
        ..base_cfg(300)
    };
    let curve = fit(single_point(0.05), &data, &cfg).unwrap().report.loss_curve;
    for w in curve[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
    }
    assert!(curve.last().unwrap() < &curve[0]);
}

#[test]
fn identical_seeds_give_identical_curves() {
    let data = one_view(8, [0.2, 0.9, 0.4, 0.7]);
    let cfg = FitConfig {
        use_jitter: true,
        ..base_cfg(50)
    };
    let a = fit(single_point(0.1), &data, &cfg).unwrap();
    let b = fit(single_point(0.1), &data, &cfg).unwrap();
    assert_eq!(a.report.loss_curve, b.report.loss_curve);
    assert_eq!(a.scene, b.scene);
}

#[test]
fn linear_head_fits_single_point() {
    let data = one_view(4, [0.3, 0.6, 0.9, 1.0]);
    let cfg = FitConfig {
        head: pointray::HeadMode::Linear,
        learning_rate: 0.05,
        head_learning_rate: 0.01,
        ..base_cfg(1500)
    };
    let fitted = fit(single_point(0.01), &data, &cfg).unwrap();
    let img = render(&fitted.scene, &data.views[0].camera, &RasterOptions::new(0, 8), &fitted.head).unwrap();
    for (got, want) in img.pixel(2, 2).iter().zip([0.3, 0.6, 0.9, 1.0]) {
        assert!((got - want).abs() < 0.05, "{:?}", img.pixel(2, 2));
    }
}

fn scattered_scene(n: usize, seed: u64) -> Scene {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..4.0);
            [rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z]
        })
        .collect();
    let mut desc = DescriptorSet::random(n, 6, &mut rng);
    for i in 0..n {
        let row = desc.row_mut(i);
        for v in &mut row[..5] {
            *v = rng.random::<f64>();
        }
        row[5] = rng.random_range(0.2..2.0);
    }
    Scene::new(PointCloud::new(pts).unwrap(), desc, "scatter").unwrap()
}

#[test]
fn crop_loss_matches_cropped_full_render() {
    let scene = scattered_scene(400, 1);
    let cam = Camera::simple(30.0, 32, 32);
    let target = Image::from_data(32, 32, 4, (0..32 * 32 * 4).map(|k| (k % 7) as f64 / 7.0 * 0.5).collect()).unwrap();
    let data = FitDataset::new(
        vec![View {
            id: "v".into(),
            camera: cam.clone(),
            target,
        }],
        TargetKind::Rgba,
        None,
    )
    .unwrap();
    let cfg = FitConfig {
        crop_size: Some((16, 8)),
        pyramid_levels: 2,
        ..FitConfig::default()
    };
    let head = HeadConfig::passthrough();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = RasterOptions::new(2, cfg.max_ray_len);
    let full = render(&scene, &cam, &opts, &head).unwrap();
    let mut distinct = std::collections::HashSet::new();
    for _ in 0..20 {
        let window = sample_window(&cam, &cfg, &mut rng);
        assert_eq!(window.x0 % 4, 0);
        assert_eq!(window.y0 % 4, 0);
        distinct.insert((window.x0, window.y0));
        let sample = make_sample(&data.views[0], &data, &window, None);
        let crop_loss = sample_loss(&scene, &head, &sample, &cfg).unwrap();
        let restricted = full.crop(window.x0, window.y0, window.width, window.height);
        let direct = pointray::loss::compute_loss(&restricted, &sample.target, cfg.loss_rgb, cfg.beta, None)
            .unwrap()
            .value;
        assert!((crop_loss - direct).abs() < 1e-6, "{crop_loss} vs {direct}");
    }
    assert!(distinct.len() > 1);
}

#[test]
fn zoom_scales_intrinsics() {
    let cam = Camera::simple(30.0, 32, 32);
    let w = Window {
        zoom: 2.0,
        x0: 8,
        y0: 4,
        width: 16,
        height: 16,
    };
    let z = w.camera(&cam);
    assert_eq!(z.focal, [60.0, 60.0]);
    assert_eq!(z.principal, [24.0, 28.0]);
    assert_eq!((z.width, z.height), (16, 16));
}

fn raster_target(scene: &Scene, cam: &Camera) -> Image {
    render(scene, cam, &RasterOptions::new(0, 8), &HeadConfig::passthrough()).unwrap()
}

#[test]
fn overlay_pair_reaches_small_loss() {
    let cam = Camera::simple(10.0, 4, 4);
    let truth_a = Scene::new(
        PointCloud::new(vec![[0.0, 0.0, 2.0]]).unwrap(),
        DescriptorSet::new(4, vec![0.7, 0.1, 0.1, 0.9]).unwrap(),
        "a",
    )
    .unwrap();
    let truth_b = Scene::new(
        PointCloud::new(vec![[0.0, 0.0, 3.0]]).unwrap(),
        DescriptorSet::new(4, vec![0.05, 0.4, 0.2, 0.5]).unwrap(),
        "b",
    )
    .unwrap();
    let dataset = |s: &Scene| {
        FitDataset::new(
            vec![View {
                id: s.label.clone(),
                camera: cam.clone(),
                target: raster_target(s, &cam),
            }],
            TargetKind::Rgba,
            None,
        )
        .unwrap()
    };
    let (da, db) = (dataset(&truth_a), dataset(&truth_b));
    let start = |s: &Scene| Scene {
        descriptors: DescriptorSet::new(4, vec![0.0, 0.0, 0.0, 0.05]).unwrap(),
        ..s.clone()
    };
    let cfg = FitConfig {
        use_overlay: true,
        learning_rate: 0.02,
        ..base_cfg(3000)
    };
    let fitted = fit_pair_with_overlay(start(&truth_a), start(&truth_b), &da, &db, &cfg).unwrap();
    let tail = &fitted.report.loss_curve[2900..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(mean < 1e-3, "tail loss {mean}");
    assert_eq!(fitted.report.views.len(), 2);
}

#[test]
fn overlay_with_empty_back_scene_fits_front() {
    let data = one_view(4, [0.5, 0.2, 0.1, 0.9]);
    let empty = Scene::empty(4);
    let empty_data = one_view(4, [0.0; 4]);
    let cfg = FitConfig {
        use_overlay: true,
        learning_rate: 0.05,
        ..base_cfg(1500)
    };
    let fitted = fit_pair_with_overlay(single_point(0.01), empty, &data, &empty_data, &cfg).unwrap();
    assert!(fitted.back.is_empty());
    let m = evaluate_views(&fitted.front, &fitted.head, &data, &RasterOptions::new(0, 8)).unwrap();
    assert!(m[0].psnr > 30.0, "{m:?}");
}

#[test]
fn overlay_requires_flag() {
    let data = one_view(4, [0.5, 0.2, 0.1, 0.9]);
    let err = fit_pair_with_overlay(single_point(0.1), single_point(0.1), &data, &data, &base_cfg(1)).unwrap_err();
    assert!(matches!(err.error, pointray::Error::InvalidArgument(_)));
}

#[test]
fn divergence_keeps_partial_report() {
    let data = one_view(4, [1.0, 0.0, 0.0, 1.0]);
    let cfg = FitConfig {
        optimizer: OptimizerKind::PlainGradient,
        learning_rate: 1e308,
        ..base_cfg(100)
    };
    let err = fit(single_point(0.5), &data, &cfg).unwrap_err();
    assert!(matches!(err.error, pointray::Error::Diverged { .. }), "{}", err.error);
    assert!(!err.report.loss_curve.is_empty());
}

#[test]
fn rgb_targets_fit_over_background() {
    let camera = Camera::simple(10.0, 4, 4);
    let mut target = Image::filled(4, 4, &[0.0, 0.0, 1.0]);
    target.pixel_mut(2, 2).copy_from_slice(&[1.0, 1.0, 0.0]);
    let data = FitDataset::new(
        vec![View {
            id: "v".into(),
            camera,
            target,
        }],
        TargetKind::Rgb,
        Some(pointray::Background::Solid([0.0, 0.0, 1.0])),
    )
    .unwrap();
    let cfg = FitConfig {
        learning_rate: 0.05,
        ..base_cfg(1500)
    };
    let mut seen = 0;
    let fitted = fit_with(single_point(0.01), None, &data, &cfg, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 1500);
    assert!(fitted.report.views[0].psnr > 30.0, "{:?}", fitted.report.views);
}
