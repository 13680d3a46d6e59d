use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointray::io::{self, ManifestEntry, NamedCamera, SceneManifest};
use pointray::{Camera, DescriptorSet, PointCloud};

const BIN: &str = env!("CARGO_BIN_EXE_pointray");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn pointray")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// Writes a scene directory with `scene.json`, a cloud and descriptors.
fn write_scene(dir: &Path, name: &str, points: Vec<[f64; 3]>, values: Vec<f64>, dim: usize) -> PathBuf {
    let cloud = PointCloud::new(points).unwrap();
    io::save_point_cloud(&cloud, dir.join(format!("{name}.ply")), false).unwrap();
    let entry = if cloud.is_empty() {
        ManifestEntry::new(format!("{name}.ply"), None)
    } else {
        io::save_descriptors(&DescriptorSet::new(dim, values).unwrap(), dir.join(format!("{name}.bin"))).unwrap();
        ManifestEntry::new(format!("{name}.ply"), Some(format!("{name}.bin").into()))
    };
    let path = dir.join(format!("{name}.json"));
    io::save_manifest(&SceneManifest::new(vec![entry]), &path).unwrap();
    path
}

fn cameras(dir: &Path, w: usize) -> PathBuf {
    let path = dir.join("cams.txt");
    io::save_cameras(
        &[
            NamedCamera { id: "front".into(), camera: Camera::simple(w as f64, w, w) },
            NamedCamera {
                id: "side".into(),
                camera: Camera::look_at([0.3, 0.1, -0.5], [0.0, 0.0, 2.0], [0.0, -1.0, 0.0], w as f64, w, w).unwrap(),
            },
        ],
        &path,
    )
    .unwrap();
    path
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = run(&["synth", "--out", s(&data), "--train-views", "4", "--heldout-views", "2", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    data
}

#[test]
fn fit_without_config_is_usage_error() {
    let o = run(&["fit", "--scene", "x.json", "--data", "d", "--out", "o"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn fit_tiny_scene_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    std::fs::write(dir.path().join("fit.cfg"), "iterations = 50\npyramid_levels = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "--json", "fit", "--scene", s(&data.join("scene.json")), "--data", s(&data.join("train")), "--config",
        s(&dir.path().join("fit.cfg")), "--out", s(&out), "--heldout", s(&data.join("heldout")), "--progress-every", "10",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["descriptors.bin", "cloud.ply", "scene.json", "head.json", "report.json", "config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.iter().filter(|v| v["event"] == "progress").count(), 6);
    assert_eq!(lines.last().unwrap()["event"], "done");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["loss_curve"].as_array().unwrap().len(), 50);
    assert_eq!(report["heldout"].as_array().unwrap().len(), 2);
    assert_eq!(io::load_descriptors(out.join("descriptors.bin")).unwrap().len(), 500);
}

#[test]
fn absurd_learning_rate_exits_numerical_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    std::fs::write(dir.path().join("fit.cfg"), "iterations = 50\npyramid_levels = 2\noptimizer = plain-gradient\nlearning_rate = 1e300\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "fit", "--scene", s(&data.join("scene.json")), "--data", s(&data.join("train")), "--config",
        s(&dir.path().join("fit.cfg")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[fit]"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "failed");
    assert!(!report["loss_curve"].as_array().unwrap().is_empty());
}

#[test]
fn missing_dataset_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fit.cfg"), "iterations = 1\n").unwrap();
    let scene = write_scene(dir.path(), "a", vec![[0.0, 0.0, 1.0]], vec![0.5; 4], 4);
    let o = run(&[
        "fit", "--scene", s(&scene), "--data", s(&dir.path().join("nope")), "--config",
        s(&dir.path().join("fit.cfg")), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[load dataset]"));
}

#[test]
fn empty_cloud_renders_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_scene(dir.path(), "empty", vec![], vec![], 8);
    let cams = cameras(dir.path(), 16);
    let out = dir.path().join("r");
    let o = run(&["render", "--scene", s(&scene), "--cameras", s(&cams), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for id in ["front", "side"] {
        let img = io::load_image(out.join(format!("{id}.png"))).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }
}

fn random_scene(dir: &Path, name: &str, n: usize, seed: u64, offset: [f64; 3]) -> PathBuf {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pts = (0..n)
        .map(|_| {
            let z = rng.random_range(1.5..3.0);
            [rng.random_range(-0.2..0.2) * z + offset[0], rng.random_range(-0.2..0.2) * z + offset[1], z + offset[2]]
        })
        .collect();
    let values = (0..n * 8)
        .map(|k| if k % 8 == 7 { rng.random_range(0.1..3.0) } else { rng.random::<f64>() })
        .collect();
    write_scene(dir, name, pts, values, 8)
}

#[test]
fn alpha_scale_one_equals_no_flag_and_lower_scale_dims() {
    let dir = tempfile::tempdir().unwrap();
    let scene = random_scene(dir.path(), "a", 2000, 1, [0.0; 3]);
    let cams = cameras(dir.path(), 32);
    let render = |tag: &str, extra: &[&str]| {
        let out = dir.path().join(tag);
        let mut args = vec!["render", "--scene", s(&scene), "--cameras", s(&cams), "--out", s(&out), "--levels", "0"];
        args.extend_from_slice(extra);
        assert_eq!(code(&run(&args)), 0);
        out
    };
    let (plain, one, dim) = (render("plain", &[]), render("one", &["--alpha-scale", "1.0"]), render("dim", &["--alpha-scale", "0.6"]));
    for id in ["front", "side"] {
        let f = format!("{id}.png");
        assert_eq!(std::fs::read(plain.join(&f)).unwrap(), std::fs::read(one.join(&f)).unwrap());
        let (a, b) = (io::load_image(plain.join(&f)).unwrap(), io::load_image(dim.join(&f)).unwrap());
        for (pa, pb) in a.data.chunks(4).zip(b.data.chunks(4)) {
            assert!(pb[3] <= pa[3]);
        }
    }
}

#[test]
fn compose_single_entry_matches_render() {
    let dir = tempfile::tempdir().unwrap();
    let scene = random_scene(dir.path(), "a", 1500, 2, [0.0; 3]);
    let cams = cameras(dir.path(), 32);
    let (r, c) = (dir.path().join("r"), dir.path().join("c"));
    assert_eq!(code(&run(&["render", "--scene", s(&scene), "--cameras", s(&cams), "--out", s(&r)])), 0);
    assert_eq!(code(&run(&["compose", "--manifest", s(&scene), "--cameras", s(&cams), "--out", s(&c)])), 0);
    for id in ["front", "side"] {
        let f = format!("{id}.png");
        assert_eq!(std::fs::read(r.join(&f)).unwrap(), std::fs::read(c.join(&f)).unwrap());
    }
}

fn two_entry_manifest(dir: &Path, a: &str, b: &str) -> PathBuf {
    let entry = |n: &str| ManifestEntry::new(format!("{n}.ply"), Some(format!("{n}.bin").into()));
    let path = dir.join("both.json");
    io::save_manifest(&SceneManifest::new(vec![entry(a), entry(b)]), &path).unwrap();
    path
}

#[test]
fn disjoint_clouds_compose_to_union_of_silhouettes() {
    let dir = tempfile::tempdir().unwrap();
    let a = random_scene(dir.path(), "left", 800, 3, [-0.6, 0.0, 0.0]);
    let b = random_scene(dir.path(), "right", 800, 4, [0.6, 0.0, 0.0]);
    let both = two_entry_manifest(dir.path(), "left", "right");
    let cams = cameras(dir.path(), 32);
    let render = |scene: &Path, tag: &str| {
        let out = dir.path().join(tag);
        assert_eq!(code(&run(&["compose", "--manifest", s(scene), "--cameras", s(&cams), "--out", s(&out), "--levels", "1"])), 0);
        io::load_image(out.join("front.png")).unwrap()
    };
    let (ia, ib, iab) = (render(&a, "a"), render(&b, "b"), render(&both, "ab"));
    let mut checked = 0;
    for ((pa, pb), pab) in ia.data.chunks(4).zip(ib.data.chunks(4)).zip(iab.data.chunks(4)) {
        if pa[3] == 0.0 || pb[3] == 0.0 {
            assert!(pab[3] >= pa[3].max(pb[3]));
            checked += 1;
        }
    }
    assert!(checked > 0);
    assert!(ia.data.chunks(4).any(|p| p[3] > 0.0) && ib.data.chunks(4).any(|p| p[3] > 0.0));
}

#[test]
fn overlapping_points_blend_front_to_back() {
    let dir = tempfile::tempdir().unwrap();
    // Far point listed first: depth order, not entry order, decides.
    let far = [0.25, 0.5, 0.75, 0.8f64];
    let near = [1.0, 0.0, 0.5, 0.4f64];
    write_scene(dir.path(), "far", vec![[0.0, 0.0, 3.0]], far.to_vec(), 4);
    write_scene(dir.path(), "near", vec![[0.0, 0.0, 1.5]], near.to_vec(), 4);
    let both = two_entry_manifest(dir.path(), "far", "near");
    let cams = dir.path().join("one.txt");
    io::save_cameras(&[NamedCamera { id: "v".into(), camera: Camera::simple(4.0, 4, 4) }], &cams).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["compose", "--manifest", s(&both), "--cameras", s(&cams), "--out", s(&out), "--levels", "0"])), 0);
    let img = io::load_image(out.join("v.png")).unwrap();
    let q = |v: f64| v as f32 as f64;
    let (an, af) = (q(near[3]).tanh(), q(far[3]).tanh());
    let a = 1.0 - (1.0 - an) * (1.0 - af);
    let expected: Vec<f64> = (0..3)
        .map(|c| (an * q(near[c]) + (1.0 - an) * af * q(far[c])) / a)
        .chain([a])
        .collect();
    let got = img.pixel(2, 2);
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!((g * 255.0).round(), (e * 255.0).round(), "{got:?} vs {expected:?}");
    }
}

#[test]
fn gradcheck_passes_and_tamper_fails() {
    let o = run(&["gradcheck", "--configs", "40", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
    let o = run(&["gradcheck", "--configs", "5", "--tamper"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[gradcheck]"));
}

#[test]
fn bench_json_schema_and_scaling() {
    let bench = |n: &str| -> serde_json::Value {
        let o = run(&["--json", "bench", "--points", n, "--canvas", "128", "--repeats", "3"]);
        assert_eq!(code(&o), 0);
        serde_json::from_str(String::from_utf8_lossy(&o.stdout).trim()).unwrap()
    };
    let small = bench("1000");
    let mut keys: Vec<&str> = small.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort();
    assert_eq!(
        keys,
        ["blend", "canvas", "event", "group", "points", "project", "ray_len", "repeats", "sort", "total"]
    );
    let large = bench("1000000");
    assert!(large["total"].as_f64().unwrap() > small["total"].as_f64().unwrap());
}

#[test]
fn fit_pair_with_overlay_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    std::fs::write(dir.path().join("fit.cfg"), "iterations = 20\npyramid_levels = 2\nuse_overlay = true\n").unwrap();
    let out = dir.path().join("out");
    let scene = data.join("scene.json");
    let train = data.join("train");
    let o = run(&[
        "fit", "--scene", s(&scene), "--scene", s(&scene), "--data", s(&train), "--data", s(&train), "--config",
        s(&dir.path().join("fit.cfg")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("scene0_descriptors.bin").exists() && out.join("scene1_descriptors.bin").exists());
    let o = run(&[
        "fit", "--scene", s(&scene), "--data", s(&train), "--config", s(&dir.path().join("fit.cfg")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 1);
}
