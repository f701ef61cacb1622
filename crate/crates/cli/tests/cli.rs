use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_RIG: [&str; 4] = ["--set", "camera.image_width=176", "--set", "camera.image_height=64"];

fn frustumocc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frustumocc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(SMALL_RIG)
        .env_remove("FRUSTUMOCC_THREADS")
        .output()
        .expect("binary runs")
}

/// Parses the P5 payload after the three header lines.
fn pgm_pixels(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    let mut newlines = 0;
    let start = bytes
        .iter()
        .position(|&b| {
            newlines += (b == b'\n') as usize;
            newlines == 3
        })
        .unwrap();
    bytes[start + 1..].to_vec()
}

fn stats_row(out: &Path) -> Vec<f64> {
    let csv = fs::read_to_string(out.join("stats.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("in_range_points,"));
    lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn forward_on_empty_scene_gives_zero_bev() {
    let dir = tempfile::tempdir().unwrap();
    let o = frustumocc(
        dir.path(),
        &["forward", "--set", "scene.box_count=0", "--set", "scene.require_visible=false"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(pgm_pixels(&dir.path().join("bev_heatmap.pgm")).iter().all(|&p| p == 0));
    let row = stats_row(dir.path());
    assert_eq!(row.len(), 8);
    assert_eq!(row[2], 0.0);
    assert!(dir.path().join("occupancy_cam5_midslice.pgm").exists());
}

#[test]
fn occupancy_terms_do_not_shrink_bev_support() {
    let base = tempfile::tempdir().unwrap();
    let full = tempfile::tempdir().unwrap();
    let depth_only = ["forward", "--set", "fusion.w_im=0", "--set", "fusion.w_ex=0"];
    assert!(frustumocc(base.path(), &depth_only).status.success());
    assert!(frustumocc(full.path(), &["forward"]).status.success());
    let (b, f) = (stats_row(base.path()), stats_row(full.path()));
    assert!(b[2] > 0.0);
    assert!(f[2] >= b[2], "depth-only {} cells, fused {}", b[2], f[2]);
}

#[test]
fn forward_repeats_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(frustumocc(a.path(), &["forward", "--seed", "11"]).status.success());
    assert!(frustumocc(b.path(), &["forward", "--seed", "11", "--threads", "2"]).status.success());
    for name in ["bev_heatmap.pgm", "occupancy_cam0_midslice.pgm", "stats.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(frustumocc(dir.path(), &["forward", "--set", "fusion.w_d=heavy"]).status.code(), Some(2));
    assert_eq!(frustumocc(dir.path(), &["forward", "--set", "camera.unknown=3"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"camera": {"depth_bins": 0}}"#).unwrap();
    assert_eq!(frustumocc(dir.path(), &["forward", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert_eq!(frustumocc(&blocker.join("sub"), &["forward"]).status.code(), Some(3));
}

#[test]
fn injected_fault_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let o = frustumocc(
        dir.path(),
        &["verify", "--set", "verify.inject_fault=true", "--set", r#"verify.suites=["AC1","AC7"]"#],
    );
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("AC1 FAIL"), "{stdout}");
    assert!(stdout.contains("AC7 PASS"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 2);
}

#[test]
fn clean_suites_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = frustumocc(dir.path(), &["verify", "--set", r#"verify.suites=["AC1","AC8"]"#]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn gen_scene_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    assert!(frustumocc(dir.path(), &["gen-scene", "--set", "scene.box_count=3"]).status.success());
    let json = fs::read_to_string(dir.path().join("scene.json")).unwrap();
    let doc = frustumocc_cli::artifacts::SceneDocument::from_json(&json).unwrap();
    assert_eq!(doc.scene.boxes.len(), 3);
    assert_eq!(doc.scene.cameras.len(), 6);
    assert_eq!(serde_json::to_string_pretty(&doc).unwrap() + "\n", json);
}

#[test]
fn bench_writes_matching_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let o = frustumocc(dir.path(), &["bench", "--set", "bench.points=[2000]", "--set", "bench.repeats=1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[4] == rows[0][4]));
}
