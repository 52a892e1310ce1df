//! End-to-end tests of the command-line surface: exit codes, file layout,
//! bitwise determinism of outputs, and the self-comparison identity.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_flowrecon")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("failed to launch binary")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("flowrecon_cli_{name}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.json");
    fs::write(
        &path,
        r#"{
  "coarse": {"iters": 8, "lr": 3e-3, "seed": 0},
  "fine": {"iters": 4, "lr": 1e-3, "seed": 0},
  "coarse_factor": 2,
  "weights": {"k": 2},
  "poisson": {"max_iters": 200, "tol": 1e-6}
}"#,
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_smoke() {
    let dir = tmp("pipeline");
    let gt = dir.join("gt");
    let rec = dir.join("rec");
    assert_ok(&run(&[
        "gen", "--scene", "plume", "--res", "8", "--frames", "6", "--out",
        gt.to_str().unwrap(), "--seed", "3",
    ]));
    for f in ["density.fvf", "velocity.fvf", "sdf.fvf", "scene.json"] {
        assert!(gt.join(f).exists(), "missing {f}");
    }
    let cfg = tiny_config(&dir);
    assert_ok(&run(&[
        "reconstruct", "--data", gt.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--out", rec.to_str().unwrap(),
    ]));
    for f in ["coarse.fvf", "fine.fvf", "full.fvf", "loss_history.csv", "run_meta.json"] {
        assert!(rec.join(f).exists(), "missing {f}");
    }
    let resim = dir.join("resim.fvf");
    assert_ok(&run(&[
        "resim", "--velocity", rec.join("full.fvf").to_str().unwrap(), "--density",
        gt.join("density.fvf").to_str().unwrap(), "--out", resim.to_str().unwrap(),
    ]));
    assert!(resim.exists());
    let tracer = dir.join("tracer.csv");
    assert_ok(&run(&[
        "trace", "--velocity", rec.join("full.fvf").to_str().unwrap(), "--plane",
        "axis=y,coord=0.1", "--count", "20", "--out", tracer.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(&tracer).unwrap();
    assert!(text.starts_with("frame,particle,x,y,z,alive"));
    // 20 particles, 6 velocity frames -> 7 recorded frames
    assert_eq!(text.lines().count(), 1 + 20 * 7);
    let metrics = dir.join("metrics.csv");
    assert_ok(&run(&[
        "eval", "--recon", rec.to_str().unwrap(), "--gt", gt.to_str().unwrap(), "--out",
        metrics.to_str().unwrap(), "--mask-sweep", "0,0.1,0.5",
    ]));
    assert!(metrics.exists());
    assert!(dir.join("metrics.mask_sweep.csv").exists());
    assert!(dir.join("metrics.meta.json").exists());
    let png = dir.join("slice.png");
    assert_ok(&run(&[
        "render", "--field", gt.join("density.fvf").to_str().unwrap(), "--axis", "z",
        "--index", "mid", "--frame", "2", "--out", png.to_str().unwrap(),
    ]));
    let bytes = fs::read(&png).unwrap();
    assert!(bytes.starts_with(&[0x89, b'P', b'N', b'G']));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn self_comparison_gives_zero_velocity_error() {
    let dir = tmp("selfcmp");
    let gt = dir.join("gt");
    assert_ok(&run(&[
        "gen", "--scene", "plume", "--res", "8", "--frames", "5", "--out",
        gt.to_str().unwrap(),
    ]));
    let metrics = dir.join("metrics.csv");
    assert_ok(&run(&[
        "eval", "--recon", gt.to_str().unwrap(), "--gt", gt.to_str().unwrap(), "--out",
        metrics.to_str().unwrap(),
    ]));
    let text = fs::read_to_string(&metrics).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let vel: f64 = cols[2].parse().unwrap();
        assert_eq!(vel, 0.0, "self-comparison velocity error must be zero: {line}");
    }
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_config_key_exits_2() {
    let dir = tmp("badcfg");
    let gt = dir.join("gt");
    assert_ok(&run(&[
        "gen", "--scene", "plume", "--res", "8", "--frames", "4", "--out",
        gt.to_str().unwrap(),
    ]));
    let cfg = dir.join("bad.json");
    fs::write(&cfg, r#"{"weights": {"lambda_vortex": 1.0}}"#).unwrap();
    let out = run(&[
        "reconstruct", "--data", gt.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--out", dir.join("rec").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn corrupt_field_file_exits_2() {
    let dir = tmp("badfield");
    let bad = dir.join("bad.fvf");
    fs::write(&bad, b"XXXX not a field file at all").unwrap();
    let out = run(&[
        "resim", "--velocity", bad.to_str().unwrap(), "--density", bad.to_str().unwrap(),
        "--out", dir.join("o.fvf").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_scene_exits_2() {
    let dir = tmp("badscene");
    let out = run(&[
        "gen", "--scene", "tornado", "--res", "8", "--frames", "4", "--out",
        dir.join("gt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn outputs_are_bitwise_deterministic() {
    let dir = tmp("determinism");
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out in [&a, &b] {
        assert_ok(&run(&[
            "gen", "--scene", "cylinder", "--res", "8", "--frames", "4", "--out",
            out.to_str().unwrap(), "--seed", "11",
        ]));
    }
    for f in ["density.fvf", "velocity.fvf", "sdf.fvf", "scene.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} must be bitwise identical across runs"
        );
    }
    // reconstruction determinism: same config, same data, same bytes
    let cfg = tiny_config(&dir);
    let (ra, rb) = (dir.join("ra"), dir.join("rb"));
    for out in [&ra, &rb] {
        assert_ok(&run(&[
            "reconstruct", "--data", a.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ]));
    }
    for f in ["coarse.fvf", "fine.fvf", "full.fvf", "loss_history.csv", "run_meta.json"] {
        assert_eq!(
            fs::read(ra.join(f)).unwrap(),
            fs::read(rb.join(f)).unwrap(),
            "{f} must be bitwise identical across runs"
        );
    }
    // PNG determinism
    let (p1, p2) = (dir.join("s1.png"), dir.join("s2.png"));
    for p in [&p1, &p2] {
        assert_ok(&run(&[
            "render", "--field", a.join("velocity.fvf").to_str().unwrap(), "--axis", "y",
            "--index", "mid", "--frame", "1", "--out", p.to_str().unwrap(),
        ]));
    }
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn lock_file_blocks_concurrent_writes() {
    let dir = tmp("lock");
    let gt = dir.join("gt");
    fs::create_dir_all(&gt).unwrap();
    fs::write(gt.join(".lock"), b"").unwrap();
    let out = run(&[
        "gen", "--scene", "plume", "--res", "8", "--frames", "4", "--out",
        gt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).ok();
}
