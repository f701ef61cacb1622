//! Orchestration behind the `frustumocc` binary.

pub mod artifacts;
pub mod bench;
pub mod config;
pub mod pipeline;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use frustumocc::synth::generate_scene;

pub use config::RunConfig;

/// Failures that map to dedicated exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Exit status for an error: configuration 2, I/O 3, everything else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Config(_) => EXIT_CONFIG,
                Failure::Verification(_) => EXIT_VERIFY,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VERIFY
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn config_error(e: frustumocc::Error) -> anyhow::Error {
    Failure::Config(e.to_string()).into()
}

/// Files written by a forward run, in write order.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts {
    pub files: Vec<PathBuf>,
    pub bev_nonzero_cells: usize,
}

pub fn cmd_forward(cfg: &RunConfig) -> anyhow::Result<ForwardArtifacts> {
    let scene = generate_scene(&cfg.scene, &cfg.camera, cfg.seed).map_err(config_error)?;
    let result = pipeline::run_forward(cfg, &scene)?;
    ensure_dir(&cfg.out)?;
    let mut files = Vec::new();
    let mut emit = |name: String, bytes: &[u8]| -> anyhow::Result<()> {
        let path = cfg.out.join(name);
        artifacts::write_file(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    emit("bev_heatmap.pgm".into(), &artifacts::bev_heatmap(&result.bev))?;
    for (k, cam) in result.cameras.iter().enumerate() {
        emit(format!("occupancy_cam{k}_midslice.pgm"), &artifacts::occupancy_midslice(&cam.labels))?;
    }
    emit("stats.csv".into(), artifacts::stats_csv(&result).as_bytes())?;
    Ok(ForwardArtifacts { files, bev_nonzero_cells: result.bev.nonzero_cells() })
}

pub fn cmd_gen_scene(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let scene = generate_scene(&cfg.scene, &cfg.camera, cfg.seed).map_err(config_error)?;
    let doc = artifacts::SceneDocument::new(scene, cfg.scene.clone(), cfg.camera.clone());
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("scene.json");
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    artifacts::write_file(&path, text.as_bytes())?;
    Ok(path)
}

/// Runs the selected suites, writes `verify_report.json` and
/// `overlap_sweep.csv`, and fails when any suite fails.
pub fn cmd_verify(cfg: &RunConfig) -> anyhow::Result<verify::VerifyReport> {
    ensure_dir(&cfg.out)?;
    let report = verify::run(cfg, &cfg.out.join("determinism"))?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    artifacts::write_file(&cfg.out.join("verify_report.json"), json.as_bytes())?;
    artifacts::write_file(&cfg.out.join("overlap_sweep.csv"), verify::overlap_sweep_csv()?.as_bytes())?;
    for c in &report.criteria {
        println!("{} {} {}: {}", c.id, if c.passed { "PASS" } else { "FAIL" }, c.name, c.summary);
    }
    if !report.passed {
        let failed: Vec<&str> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
        return Err(Failure::Verification(failed.join(", ")).into());
    }
    Ok(report)
}

/// Writes `bench.csv` and enforces the speed gate at ≥ 10⁶ points.
pub fn cmd_bench(cfg: &RunConfig) -> anyhow::Result<Vec<bench::BenchRow>> {
    let rows = bench::run(&cfg.bench, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    artifacts::write_file(&cfg.out.join("bench.csv"), bench::to_csv(&rows).as_bytes())?;
    print!("{}", bench::to_csv(&rows));
    bench::check_gate(&rows)?;
    Ok(rows)
}
