mod common;

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use gir::io::checkpoint::ENV_FILE;
use gir::io::{read_png, write_dataset, write_hdr, Checkpoint, Pfm};
use gir::optim::TrainView;
use gir::synthetic::{context_for, orbit_cameras, render_views, sky_env, sphere_scene};

fn gir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gir")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = gir(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flags_exit_with_usage() {
    let out = gir(&["render", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = gir(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gir(&["--help"]);
    let help = String::from_utf8_lossy(&out.stdout).to_string();
    for sub in ["train", "render", "relight", "edit-material", "export-buffers", "build-lut", "serve"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn render_writes_png_and_pfm_pair() {
    let dir = tempfile::tempdir().unwrap();
    let ck_dir = dir.path().join("ck");
    common::write_checkpoint(&ck_dir, &common::small_checkpoint());
    let out = dir.path().join("albedo.png");
    ok(&["render", "--checkpoint", s(&ck_dir), "--view", "1", "--mode", "albedo", "--out", s(&out)]);
    let (img, _) = read_png(&out).unwrap();
    let pfm = Pfm::load(out.with_extension("pfm")).unwrap();
    assert_eq!((img.width, img.height, pfm.width, pfm.channels), (48, 48, 48, 3));
    for (p, q) in img.pixels.iter().zip(pfm.to_rgb()) {
        assert!((p - q).abs().max() <= 0.5 / 255.0 + 1e-6);
    }
    let missing = gir(&["render", "--checkpoint", s(&dir.path().join("nope")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope"));
}

#[test]
fn relight_with_original_env_reproduces_render() {
    let dir = tempfile::tempdir().unwrap();
    let ck_dir = dir.path().join("ck");
    common::write_checkpoint(&ck_dir, &common::small_checkpoint());
    let base = dir.path().join("base.png");
    ok(&["render", "--checkpoint", s(&ck_dir), "--view", "0", "--out", s(&base)]);

    let same = dir.path().join("same");
    ok(&["relight", "--checkpoint", s(&ck_dir), "--env", s(&ck_dir.join(ENV_FILE)), "--views", "0", "--out-dir", s(&same)]);
    let other_env = dir.path().join("studio.hdr");
    write_hdr(&other_env, &gir::synthetic::studio_env(16)).unwrap();
    let other = dir.path().join("other");
    ok(&["relight", "--checkpoint", s(&ck_dir), "--env", s(&other_env), "--out-dir", s(&other)]);

    let (a, _) = read_png(&base).unwrap();
    let (b, _) = read_png(same.join("view_000.png")).unwrap();
    let (c, _) = read_png(other.join("view_000.png")).unwrap();
    assert!(other.join("view_003.png").exists());
    let max_diff = |x: &gir::frame::Image, y: &gir::frame::Image| x.pixels.iter().zip(&y.pixels).map(|(p, q)| (p - q).abs().max()).fold(0.0, f64::max);
    // RGBE storage of the original map perturbs radiance by under 1%.
    assert!(max_diff(&a, &b) <= 2.0 / 255.0 + 1e-9, "{}", max_diff(&a, &b));
    assert!(max_diff(&a, &c) > 0.1);
}

#[test]
fn edit_material_and_export_buffers() {
    let dir = tempfile::tempdir().unwrap();
    let ck_dir = dir.path().join("ck");
    let ck = common::small_checkpoint();
    common::write_checkpoint(&ck_dir, &ck);
    let edited = dir.path().join("edited");
    ok(&[
        "edit-material", "--checkpoint", s(&ck_dir), "--out", s(&edited), "--select", "metallic>0.5", "--d-roughness", "-0.3", "--albedo-tint", "1,0.5,0.5",
    ]);
    let back = Checkpoint::load(&edited).unwrap();
    for (a, b) in ck.scene.gaussians.iter().zip(&back.scene.gaussians) {
        if a.metallic > 0.5 {
            assert!((b.roughness - (a.roughness - 0.3).max(0.0)).abs() < 1e-12);
            assert!((b.albedo.y - 0.5 * a.albedo.y).abs() < 1e-12);
        } else {
            assert_eq!(a, b);
        }
    }
    let bad = gir(&["edit-material", "--checkpoint", s(&ck_dir), "--out", s(&edited), "--select", "shine>1"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = gir(&["edit-material", "--checkpoint", s(&ck_dir), "--out", s(&edited), "--albedo-tint", "1,2"]);
    assert_eq!(bad.status.code(), Some(2));

    let bufs = dir.path().join("bufs");
    ok(&["export-buffers", "--checkpoint", s(&ck_dir), "--view", "2", "--size", "32x24", "--out-dir", s(&bufs)]);
    for name in ["color", "alpha", "depth", "normal", "albedo", "roughness", "metallic"] {
        let pfm = Pfm::load(bufs.join(format!("{name}.pfm"))).unwrap();
        assert_eq!((pfm.width, pfm.height), (32, 24));
        assert!(bufs.join(format!("{name}.png")).exists());
    }
}

#[test]
fn build_lut_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lut.pfm");
    ok(&["build-lut", "--res", "16", "--out", s(&out)]);
    let pfm = Pfm::load(&out).unwrap();
    assert_eq!((pfm.width, pfm.height, pfm.channels), (16, 16, 3));
    let lut = gir::envlight::build_dfg_lut(16).unwrap();
    for (k, e) in lut.entries().iter().enumerate() {
        assert_eq!(pfm.data[3 * k], e[0] as f32);
        assert_eq!(pfm.data[3 * k + 1], e[1] as f32);
    }
}

#[test]
fn serve_on_port_zero_and_match_cli_render() {
    let dir = tempfile::tempdir().unwrap();
    let ck_dir = dir.path().join("ck");
    common::write_checkpoint(&ck_dir, &common::small_checkpoint());
    let cli_png = dir.path().join("v0.png");
    ok(&["render", "--checkpoint", s(&ck_dir), "--view", "0", "--out", s(&cli_png)]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_gir"))
        .args(["serve", "--checkpoint", s(&ck_dir), "--port", "0"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect(&line).to_string();
    let port: u16 = url.rsplit(':').next().unwrap().parse().unwrap();
    assert_ne!(port, 0);

    let client = reqwest::blocking::Client::new();
    let meta: serde_json::Value = client.get(format!("{url}/scene/meta")).send().unwrap().json().unwrap();
    assert_eq!(meta["gaussians"], 300);
    let png = client
        .post(format!("{url}/render"))
        .json(&serde_json::json!({"view": 0}))
        .send()
        .unwrap()
        .bytes()
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(png.to_vec(), std::fs::read(&cli_png).unwrap());
}

#[test]
fn train_from_dataset_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let truth = sphere_scene(150, 1.0, 4);
    let dfg = std::sync::Arc::new(gir::envlight::build_dfg_lut(16).unwrap());
    let ctx = context_for(&truth, &sky_env(16), gir::envlight::PrefilterSettings::training(), dfg, 0).unwrap();
    let views: Vec<TrainView> = render_views(&truth, &ctx, &orbit_cameras(4, 4.0, 24, 24, 0.7, 0.0).unwrap()).unwrap();
    write_dataset(&data, "train", &views).unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, serde_json::to_string(&common::small_config()).unwrap()).unwrap();
    let ck_dir = dir.path().join("ck");
    let out = ok(&[
        "train", "--data", s(&data), "--out", s(&ck_dir), "--config", s(&cfg), "--iterations", "6", "--init-count", "200", "--seed", "3",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote"));
    let ck = Checkpoint::load(&ck_dir).unwrap();
    assert_eq!(ck.cameras.len(), 4);
    assert_eq!(ck.config.iterations, 6);
    let log = std::fs::read_to_string(ck_dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let rec: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(rec["iteration"], 5);
    assert!(rec["loss"]["total"].as_f64().unwrap().is_finite());
}
