//! Verification suites with stable identifiers `AC1`..`AC9`.
//!
//! Each suite compares an optimized path against an independent route
//! (brute force, box-frame oracle, closed form, finite differences) and
//! reports pass/fail with the measured numbers.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use frustumocc::fusion::{
    fuse_weights, fuse_weights_grad, head_param_count, occupancy_heads, ConvHead, FusionParams, VolumeKind,
    WeightVolume,
};
use frustumocc::geom::{BoxSize, Frame, FrustumGrid, OrientedBox3D, Vec3, VolumeShape};
use frustumocc::gfp::{gfp_attend, gfp_attend_grad, overlap_sweep, AttentionConfig, AttentionScope, OccupancyTokenSet, OverlapRow};
use frustumocc::lift_splat::{
    voxel_pool, voxel_pool_grad, voxel_pool_naive, BevGrid, BevGridSpec, FeatureMap, LiftedFeatureVolume,
};
use frustumocc::losses::{depth_bce, focal_loss, focal_term, total_loss, FocalParams, LossWeights};
use frustumocc::occupancy::{label_frustum, label_frustum_naive, point_occupied_halfspace, point_occupied_oracle, OccupancyVolume};
use frustumocc::par;
use frustumocc::synth::{generate_scene, SceneConfig, UniformStream};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::pipeline::{depth_only_bev, run_forward};

pub const CRITERIA: [(&str, &str); 9] = [
    ("AC1", "half-space labeling agrees with the box-frame oracle"),
    ("AC2", "culled frustum labeling equals the per-point loop"),
    ("AC3", "ray-pair overlap matches the closed form"),
    ("AC4", "sorted voxel pooling equals the scatter loop and conserves mass"),
    ("AC5", "analytic gradients match central finite differences"),
    ("AC6", "depth-only fusion reproduces the occupancy-free pipeline"),
    ("AC7", "loss values match closed forms"),
    ("AC8", "head parameter counts match hand counts"),
    ("AC9", "forward artifacts are byte-identical across runs and thread counts"),
];

pub const AC1_PAIRS: usize = 10_000;
pub const AC1_MIN_FACE_DISTANCE: f64 = 1e-9;
pub const AC1_MAX_SECONDS: f64 = 1.0;
pub const AC2_SCENES: usize = 20;
pub const AC2_MAX_BOXES: usize = 10;
pub const AC2_MAX_SECONDS: f64 = 30.0;
pub const AC3_SPACING_FACTOR: f64 = 0.01;
pub const AC3_ERROR_BOUND: f64 = 2.0;
pub const AC4_CONFIGS: usize = 50;
pub const AC4_MAX_POINTS: usize = 1_000_000;
pub const AC5_STEP: f64 = 1e-5;
pub const AC5_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const AC5_ABS_FLOOR: f64 = 1e-6;
pub const AC5_PROBES: usize = 10;
pub const AC6_SCENES: usize = 5;
pub const AC7_FOCAL_REFERENCE: f64 = 0.0433217;
pub const AC7_FOCAL_TOL: f64 = 1e-6;
pub const AC7_TOTAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub metrics: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub parallel: bool,
    pub threads: usize,
    pub passed: bool,
    pub criteria: Vec<CriterionReport>,
}

fn report(id: &str, passed: bool, summary: String, metrics: Value) -> CriterionReport {
    let name = CRITERIA.iter().find(|(i, _)| *i == id).map(|(_, n)| *n).unwrap_or("");
    CriterionReport { id: id.into(), name: name.into(), passed, summary, metrics }
}

/// Runs the configured suites in id order. `workdir` receives the forward
/// runs of the determinism suite.
pub fn run(cfg: &RunConfig, workdir: &Path) -> anyhow::Result<VerifyReport> {
    for id in &cfg.verify.suites {
        if !CRITERIA.iter().any(|(c, _)| c == id) {
            return Err(crate::Failure::Config(format!("unknown verification suite `{id}`")).into());
        }
    }
    let mut criteria = Vec::new();
    for (id, _) in CRITERIA {
        if cfg.verify.suites.is_empty() || cfg.verify.suites.iter().any(|s| s == id) {
            criteria.push(run_criterion(id, cfg, workdir)?);
        }
    }
    Ok(VerifyReport {
        format: "frustumocc-verify".into(),
        version: 1,
        seed: cfg.seed,
        parallel: par::is_parallel(),
        threads: par::current_threads(),
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    })
}

pub fn run_criterion(id: &str, cfg: &RunConfig, workdir: &Path) -> anyhow::Result<CriterionReport> {
    match id {
        "AC1" => Ok(halfspace_oracle(cfg)?),
        "AC2" => Ok(frustum_labeling(cfg)?),
        "AC3" => Ok(overlap_identity()?),
        "AC4" => Ok(voxel_pooling(cfg)?),
        "AC5" => Ok(gradients(cfg)?),
        "AC6" => Ok(baseline_reduction(cfg)?),
        "AC7" => Ok(loss_values()?),
        "AC8" => Ok(head_overhead()?),
        "AC9" => determinism(cfg, workdir),
        other => Err(crate::Failure::Config(format!("unknown verification suite `{other}`")).into()),
    }
}

fn face_distance(p: Vec3, b: &OrientedBox3D) -> f64 {
    let local = b.to_local(p);
    let h = b.size.half();
    (h.x - local.x.abs()).abs().min((h.y - local.y.abs()).abs()).min((h.z - local.z.abs()).abs())
}

fn random_box(rng: &mut UniformStream) -> frustumocc::Result<OrientedBox3D> {
    let center = Vec3::new(rng.range([-20.0, 20.0]), rng.range([-20.0, 20.0]), rng.range([-2.0, 2.0]));
    let size = BoxSize::new(rng.range([0.3, 8.0]), rng.range([0.3, 4.0]), rng.range([0.3, 4.0]));
    OrientedBox3D::new(center, size, rng.range([-std::f64::consts::PI, std::f64::consts::PI]))
}

fn halfspace_oracle(cfg: &RunConfig) -> frustumocc::Result<CriterionReport> {
    let mut rng = UniformStream::new(cfg.seed, 101);
    let mut pairs = Vec::with_capacity(AC1_PAIRS);
    while pairs.len() < AC1_PAIRS {
        let b = random_box(&mut rng)?;
        // Points within 1.5 half-extents of the center: about 30 % inside.
        let (axes, half) = (b.axes(), b.size.half());
        let p = loop {
            let u = [rng.range([-1.5, 1.5]), rng.range([-1.5, 1.5]), rng.range([-1.5, 1.5])];
            let p = b.center + axes[0] * (u[0] * half.x) + axes[1] * (u[1] * half.y) + axes[2] * (u[2] * half.z);
            if face_distance(p, &b) >= AC1_MIN_FACE_DISTANCE {
                break p;
            }
        };
        pairs.push((b, p));
    }
    let inject = cfg.verify.inject_fault;
    let (elapsed, labels) = par::with_threads(1, || {
        let t = Instant::now();
        let labels: Vec<bool> = pairs.iter().map(|(b, p)| point_occupied_halfspace(*p, b)).collect();
        (t.elapsed().as_secs_f64(), labels)
    });
    let mut labels = labels;
    if inject {
        labels[0] = !labels[0];
    }
    let inside = pairs.iter().filter(|(b, p)| point_occupied_oracle(*p, b)).count();
    let disagreements = pairs.iter().zip(&labels).filter(|((b, p), &l)| point_occupied_oracle(*p, b) != l).count();
    let passed = disagreements == 0 && elapsed < AC1_MAX_SECONDS;
    Ok(report(
        "AC1",
        passed,
        format!("{disagreements} disagreements over {AC1_PAIRS} pairs ({inside} inside), {elapsed:.4} s single-threaded"),
        json!({ "pairs": AC1_PAIRS, "inside": inside, "disagreements": disagreements, "seconds": elapsed, "fault_injected": inject }),
    ))
}

fn frustum_labeling(cfg: &RunConfig) -> frustumocc::Result<CriterionReport> {
    let t = Instant::now();
    let mut mismatches = 0usize;
    let mut occupied = 0usize;
    let mut points = 0usize;
    let mut shape = None;
    for k in 0..AC2_SCENES {
        let scene_cfg = SceneConfig { box_count: 1 + k % AC2_MAX_BOXES, ..cfg.scene.clone() };
        let scene = generate_scene(&scene_cfg, &cfg.camera, cfg.seed.wrapping_add(200 + k as u64))?;
        for (c, cam) in scene.cameras.iter().enumerate() {
            let grid = cam.frustum();
            shape = Some(grid.shape());
            let naive = label_frustum_naive::<f32>(&grid, &scene.boxes, Frame::World)?;
            let mut fast = label_frustum::<f32>(&grid, &scene.boxes, Frame::World)?;
            if cfg.verify.inject_fault && k == 0 && c == 0 {
                fast.flip_label(0);
            }
            mismatches += naive.values().iter().zip(fast.values()).filter(|(a, b)| a != b).count();
            occupied += naive.count_occupied();
            points += naive.values().len();
        }
    }
    let elapsed = t.elapsed().as_secs_f64();
    let passed = mismatches == 0 && occupied > 0 && elapsed < AC2_MAX_SECONDS;
    let s = shape.unwrap_or(VolumeShape::new(0, 0, 0));
    Ok(report(
        "AC2",
        passed,
        format!(
            "{mismatches} mismatches over {points} points ({occupied} occupied), grid {}x{}x{}, {elapsed:.2} s",
            s.width, s.height, s.bins
        ),
        json!({
            "scenes": AC2_SCENES, "grid": [s.width, s.height, s.bins], "points": points,
            "occupied": occupied, "mismatches": mismatches, "seconds": elapsed,
            "fault_injected": cfg.verify.inject_fault,
        }),
    ))
}

fn worst_error(rows: &[OverlapRow]) -> (f64, f64) {
    let regime = rows.iter().filter(|r| r.analytic > 0.0);
    let abs = regime.clone().map(|r| r.abs_error).fold(0.0, f64::max);
    let rel = regime.map(|r| r.abs_error / r.bin_spacing).fold(0.0, f64::max);
    (abs, rel)
}

fn overlap_identity() -> frustumocc::Result<CriterionReport> {
    let coarse = overlap_sweep(AC3_SPACING_FACTOR)?;
    let fine = overlap_sweep(AC3_SPACING_FACTOR / 2.0)?;
    let within = coarse
        .iter()
        .filter(|r| r.analytic > 0.0)
        .all(|r| r.abs_error <= AC3_ERROR_BOUND * r.bin_spacing);
    let (coarse_abs, coarse_rel) = worst_error(&coarse);
    let (fine_abs, fine_rel) = worst_error(&fine);
    let halves = fine_abs <= 0.5 * coarse_abs;
    Ok(report(
        "AC3",
        within && halves,
        format!(
            "{} rows; worst error {coarse_abs:.3e} m ({coarse_rel:.3} spacings) at 0.01w, {fine_abs:.3e} m ({fine_rel:.3} spacings) at 0.005w; bound {}, halving {}",
            coarse.len(),
            if within { "met" } else { "violated" },
            if halves { "met" } else { "not met" },
        ),
        json!({
            "rows": coarse.len(),
            "worst_abs_error": coarse_abs, "worst_error_in_spacings": coarse_rel,
            "half_spacing_worst_abs_error": fine_abs, "half_spacing_worst_error_in_spacings": fine_rel,
            "error_ratio": if coarse_abs > 0.0 { fine_abs / coarse_abs } else { 0.0 },
            "bound_met": within, "halving_met": halves,
        }),
    ))
}

/// Sweep rows at 0.01·w and 0.005·w as CSV.
pub fn overlap_sweep_csv() -> frustumocc::Result<String> {
    let mut s = String::from("w,theta,D,bin_spacing,empirical,analytic,abs_error\n");
    for factor in [AC3_SPACING_FACTOR, AC3_SPACING_FACTOR / 2.0] {
        for r in overlap_sweep(factor)? {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.w, r.theta, r.d, r.bin_spacing, r.empirical, r.analytic, r.abs_error
            ));
        }
    }
    Ok(s)
}

/// Random frustum points spread over `cams` cameras totalling `points`.
fn random_grids(rng: &mut UniformStream, points: usize, cams: usize, bev: &BevGridSpec) -> frustumocc::Result<Vec<FrustumGrid>> {
    let half = 0.6 * (bev.x_max - bev.x_min).max(bev.y_max - bev.y_min);
    let (cx, cy) = (0.5 * (bev.x_min + bev.x_max), 0.5 * (bev.y_min + bev.y_max));
    let z = 1.2 * bev.z_min.abs().max(bev.z_max.abs());
    let mut grids = Vec::new();
    let mut left = points;
    for c in 0..cams {
        let share = if c + 1 == cams { left } else { points / cams };
        left -= share;
        let bins = 1 + (rng.next_f64() * 59.0) as usize;
        let shape = VolumeShape::new(1, share.div_ceil(bins).max(1), bins);
        let pts = (0..shape.len())
            .map(|_| Vec3::new(cx + rng.range([-half, half]), cy + rng.range([-half, half]), rng.range([-z, z])))
            .collect();
        grids.push(FrustumGrid::from_points(shape, Frame::World, pts)?);
    }
    Ok(grids)
}

fn voxel_pooling(cfg: &RunConfig) -> frustumocc::Result<CriterionReport> {
    let bev = cfg.bev;
    let mut rng = UniformStream::new(cfg.seed, 401);
    let mut unequal = 0usize;
    let mut mass_errors = 0usize;
    let mut total_points = 0usize;
    let mut largest = 0usize;
    for k in 0..AC4_CONFIGS {
        let points = if k == 0 { AC4_MAX_POINTS } else { (1e3 * 1e3f64.powf(rng.next_f64())) as usize };
        let cams = 1 + (rng.next_f64() * 3.0) as usize;
        let channels = 1 + (rng.next_f64() * 8.0) as usize;
        let grids = random_grids(&mut rng, points, cams, &bev)?;

        // 32-bit path: bit-exact equality.
        let vols: Vec<LiftedFeatureVolume<f32>> = grids
            .iter()
            .map(|g| {
                let v = (0..g.shape().len() * channels).map(|_| rng.next_f64() as f32).collect();
                LiftedFeatureVolume::from_values(g.shape(), channels, v)
            })
            .collect::<frustumocc::Result<_>>()?;
        let inputs: Vec<_> = vols.iter().zip(&grids).collect();
        let (a, sa) = voxel_pool_naive(&inputs, &bev)?;
        let (b, sb) = voxel_pool(&inputs, &bev)?;
        if sa != sb || a.values().iter().zip(b.values()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            unequal += 1;
        }

        // 64-bit path on a dyadic lattice: per-channel sums are exact.
        let vols64: Vec<LiftedFeatureVolume<f64>> = grids
            .iter()
            .map(|g| {
                let v = (0..g.shape().len() * channels).map(|_| (rng.next_f64() * 512.0).floor() / 256.0 - 1.0).collect();
                LiftedFeatureVolume::from_values(g.shape(), channels, v)
            })
            .collect::<frustumocc::Result<_>>()?;
        let inputs64: Vec<_> = vols64.iter().zip(&grids).collect();
        let (pooled, _) = voxel_pool(&inputs64, &bev)?;
        let mut expected = vec![0.0f64; channels];
        for (vol, grid) in &inputs64 {
            let s = grid.shape();
            for (i, p) in grid.points().iter().enumerate() {
                if bev.cell_of(*p).is_none() {
                    continue;
                }
                let (pixel, bin) = (i / s.bins, i % s.bins);
                for (c, e) in expected.iter_mut().enumerate() {
                    *e += vol.values()[vol.index(bin, c, pixel / s.width, pixel % s.width)];
                }
            }
        }
        if pooled.channel_sums() != expected {
            mass_errors += 1;
        }
        total_points += grids.iter().map(|g| g.shape().len()).sum::<usize>();
        largest = largest.max(points);
    }
    Ok(report(
        "AC4",
        unequal == 0 && mass_errors == 0,
        format!(
            "{unequal} unequal and {mass_errors} non-conserving of {AC4_CONFIGS} configurations ({total_points} points, max {largest}, {}x{} cells)",
            bev.cols(),
            bev.rows()
        ),
        json!({
            "configurations": AC4_CONFIGS, "unequal": unequal, "mass_errors": mass_errors,
            "total_points": total_points, "max_points": largest, "cells": [bev.cols(), bev.rows()],
        }),
    ))
}

/// Largest relative deviation between analytic gradients and central
/// differences of `loss` over the probed coordinates.
fn max_rel_error(x: &[f64], analytic: &[f64], probes: &[usize], loss: impl Fn(&[f64]) -> frustumocc::Result<f64>) -> frustumocc::Result<f64> {
    let mut worst = 0.0f64;
    for &k in probes {
        let (mut plus, mut minus) = (x.to_vec(), x.to_vec());
        plus[k] += AC5_STEP;
        minus[k] -= AC5_STEP;
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * AC5_STEP);
        let scale = analytic[k].abs().max(numeric.abs()).max(AC5_ABS_FLOOR);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    Ok(worst)
}

fn pick(rng: &mut UniformStream, n: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| ((rng.next_f64() * n as f64) as usize).min(n - 1)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gradients(cfg: &RunConfig) -> frustumocc::Result<CriterionReport> {
    let mut rng = UniformStream::new(cfg.seed, 501);
    let mut results: Vec<(&str, f64, usize)> = Vec::new();

    // Weight fusion: three mixing scalars followed by the three volumes.
    {
        let shape = VolumeShape::new(3, 4, 6);
        let n = shape.len();
        let mut x = vec![rng.range([0.5, 1.5]), rng.range([0.0, 1.0]), rng.range([0.0, 1.0])];
        x.extend((0..3 * n).map(|_| rng.next_f64()));
        let up: Vec<f64> = (0..n).map(|_| rng.range([-1.0, 1.0])).collect();
        let split = |x: &[f64]| -> frustumocc::Result<_> {
            Ok((
                FusionParams::new(x[0], x[1], x[2])?,
                WeightVolume::new_unchecked(VolumeKind::Depth, shape, x[3..3 + n].to_vec())?,
                WeightVolume::new_unchecked(VolumeKind::Occupancy, shape, x[3 + n..3 + 2 * n].to_vec())?,
                WeightVolume::new_unchecked(VolumeKind::Occupancy, shape, x[3 + 2 * n..].to_vec())?,
            ))
        };
        let loss = |x: &[f64]| -> frustumocc::Result<f64> {
            let (p, d, i, e) = split(x)?;
            Ok(dot(fuse_weights(&d, &i, &e, &p)?.values(), &up))
        };
        let (p, d, i, e) = split(&x)?;
        let g = fuse_weights_grad(&d, &i, &e, &p, &up)?;
        let mut analytic = vec![g.w_d, g.w_im, g.w_ex];
        analytic.extend(g.depth.iter().chain(&g.implicit).chain(&g.explicit));
        let mut probes = vec![0, 1, 2];
        probes.extend(pick(&mut rng, x.len() - 3, AC5_PROBES).into_iter().map(|k| k + 3));
        results.push(("fuse_weights_grad", max_rel_error(&x, &analytic, &probes, loss)?, probes.len()));
    }

    // Voxel pooling with respect to lifted features.
    {
        let shape = VolumeShape::new(4, 5, 6);
        let bev = BevGridSpec::square(6, 1.0, -1.0, 1.0)?;
        let pts = (0..shape.len())
            .map(|_| Vec3::new(rng.range([-4.0, 4.0]), rng.range([-4.0, 4.0]), rng.range([-1.2, 1.2])))
            .collect();
        let grid = FrustumGrid::from_points(shape, Frame::World, pts)?;
        let ch = 3;
        let x: Vec<f64> = (0..shape.len() * ch).map(|_| rng.range([-1.0, 1.0])).collect();
        let up: Vec<f64> = (0..ch * bev.cells()).map(|_| rng.range([-1.0, 1.0])).collect();
        let upstream = BevGrid::from_values(ch, bev.rows(), bev.cols(), up.clone())?;
        let loss = |x: &[f64]| -> frustumocc::Result<f64> {
            let v = LiftedFeatureVolume::from_values(shape, ch, x.to_vec())?;
            Ok(dot(voxel_pool(&[(&v, &grid)], &bev)?.0.values(), &up))
        };
        let v = LiftedFeatureVolume::from_values(shape, ch, x.clone())?;
        let g = voxel_pool_grad(&upstream, &[(&v, &grid)], &bev)?;
        let probes = pick(&mut rng, x.len(), AC5_PROBES);
        results.push(("voxel_pool_grad", max_rel_error(&x, g[0].values(), &probes, loss)?, probes.len()));
    }

    // Occupancy-keyed attention: tokens then values.
    {
        let (h, w, bins, ch) = (3, 4, 6, 3);
        let n = h * w;
        let cfg_attn = AttentionConfig { scope: AttentionScope::Windowed(3), ..AttentionConfig::default() };
        let mut x: Vec<f64> = (0..n * bins).map(|_| rng.range([0.05, 0.95])).collect();
        x.extend((0..n * ch).map(|_| rng.range([-1.0, 1.0])));
        let up: Vec<f64> = (0..n * ch).map(|_| rng.range([-1.0, 1.0])).collect();
        let split = |x: &[f64]| -> frustumocc::Result<_> {
            Ok((
                OccupancyTokenSet::new(bins, x[..n * bins].to_vec(), (0..n).collect())?,
                FeatureMap::new(ch, h, w, x[n * bins..].to_vec())?,
            ))
        };
        let loss = |x: &[f64]| -> frustumocc::Result<f64> {
            let (t, f) = split(x)?;
            Ok(dot(gfp_attend(&t, &f, &cfg_attn)?.values(), &up))
        };
        let (t, f) = split(&x)?;
        let g = gfp_attend_grad(&t, &f, &cfg_attn, &FeatureMap::new(ch, h, w, up.clone())?)?;
        let analytic: Vec<f64> = g.tokens.iter().chain(g.values.values()).copied().collect();
        let mut probes = pick(&mut rng, n * bins, AC5_PROBES);
        probes.extend(pick(&mut rng, n * ch, AC5_PROBES).into_iter().map(|k| k + n * bins));
        results.push(("gfp_attend_grad", max_rel_error(&x, &analytic, &probes, loss)?, probes.len()));
    }

    // Depth BCE.
    {
        let shape = VolumeShape::new(2, 4, 7);
        let x: Vec<f64> = (0..shape.len()).map(|_| rng.range([0.02, 0.98])).collect();
        let gt: Vec<Option<usize>> = (0..shape.pixels())
            .map(|p| (p % 3 != 1).then(|| (rng.next_f64() * shape.bins as f64) as usize))
            .collect();
        let loss = |x: &[f64]| -> frustumocc::Result<f64> {
            Ok(depth_bce(&WeightVolume::new_unchecked(VolumeKind::Depth, shape, x.to_vec())?, &gt)?.loss)
        };
        let g = depth_bce(&WeightVolume::new_unchecked(VolumeKind::Depth, shape, x.clone())?, &gt)?.grad;
        let probes = pick(&mut rng, x.len(), AC5_PROBES);
        results.push(("depth_bce", max_rel_error(&x, &g, &probes, loss)?, probes.len()));
    }

    // Focal loss.
    {
        let shape = VolumeShape::new(2, 3, 8);
        let x: Vec<f64> = (0..shape.len()).map(|_| rng.range([0.02, 0.98])).collect();
        let y: Vec<f64> = (0..shape.len()).map(|_| (rng.next_f64() < 0.3) as u8 as f64).collect();
        let gt = OccupancyVolume::labels(shape, y)?;
        let fp = FocalParams::default();
        let loss = |x: &[f64]| -> frustumocc::Result<f64> {
            Ok(focal_loss(&OccupancyVolume::probabilities(shape, x.to_vec())?, &gt, &fp)?.loss)
        };
        let g = focal_loss(&OccupancyVolume::probabilities(shape, x.clone())?, &gt, &fp)?.grad;
        let probes = pick(&mut rng, x.len(), AC5_PROBES);
        results.push(("focal_loss", max_rel_error(&x, &g, &probes, loss)?, probes.len()));
    }

    let passed = results.iter().all(|&(_, e, n)| e <= AC5_REL_TOL && n >= AC5_PROBES);
    let summary = results.iter().map(|(name, e, n)| format!("{name} {e:.2e} ({n} probes)")).collect::<Vec<_>>().join(", ");
    let metrics = results
        .iter()
        .map(|(name, e, n)| (name.to_string(), json!({ "max_rel_error": e, "probes": n })))
        .collect::<serde_json::Map<_, _>>();
    Ok(report("AC5", passed, summary, Value::Object(metrics)))
}

fn baseline_reduction(cfg: &RunConfig) -> frustumocc::Result<CriterionReport> {
    let mut reduced = cfg.clone();
    reduced.fusion = FusionParams::DEPTH_ONLY;
    reduced.pipeline.gfp = false;
    let mut identical = 0usize;
    let mut nonzero = Vec::new();
    for k in 0..AC6_SCENES {
        let scene = generate_scene(&cfg.scene, &cfg.camera, cfg.seed.wrapping_add(600 + k as u64))?;
        let full = run_forward(&reduced, &scene)?.bev;
        let base = depth_only_bev(&reduced, &scene)?;
        let same = full.values().len() == base.values().len()
            && full.values().iter().zip(base.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        identical += same as usize;
        nonzero.push(base.nonzero_cells());
    }
    let passed = identical == AC6_SCENES && nonzero.iter().any(|&n| n > 0);
    Ok(report(
        "AC6",
        passed,
        format!("{identical}/{AC6_SCENES} scenes bit-identical; nonzero BEV cells {nonzero:?}"),
        json!({ "scenes": AC6_SCENES, "identical": identical, "nonzero_cells": nonzero }),
    ))
}

fn loss_values() -> frustumocc::Result<CriterionReport> {
    let (focal, _) = focal_term(0.5, 1.0, &FocalParams::default());
    let single = focal_loss(
        &OccupancyVolume::probabilities(VolumeShape::new(1, 1, 1), vec![0.5f64])?,
        &OccupancyVolume::labels(VolumeShape::new(1, 1, 1), vec![1.0f64])?,
        &FocalParams::default(),
    )?
    .loss;
    let focal_ok = (focal - AC7_FOCAL_REFERENCE).abs() <= AC7_FOCAL_TOL && (single - AC7_FOCAL_REFERENCE).abs() <= AC7_FOCAL_TOL;

    let w = LossWeights::default();
    // (det, depth, exocc) → 1·det + 3·depth + 3000·exocc, evaluated by hand.
    let cases = [
        ((0.5, 0.1, 0.0001), 1.1),
        ((1.0, 1.0, 1.0), 3004.0),
        ((0.25, 0.5, 0.001), 4.75),
        ((2.0, 0.0, 0.0), 2.0),
        ((0.0, 0.0, 0.0), 0.0),
    ];
    let worst = cases
        .iter()
        .map(|&((a, b, c), expect)| (total_loss(a, b, c, &w) - expect).abs())
        .fold(0.0, f64::max);
    let weights_ok = (w.lambda1, w.lambda2, w.lambda3) == (1.0, 3.0, 3000.0);
    let passed = focal_ok && worst <= AC7_TOTAL_TOL && weights_ok;
    Ok(report(
        "AC7",
        passed,
        format!("focal {focal:.7} (reference {AC7_FOCAL_REFERENCE}); total loss worst deviation {worst:.1e} over {} cases", cases.len()),
        json!({ "focal": focal, "focal_volume": single, "total_loss_max_deviation": worst, "cases": cases.len() }),
    ))
}

fn head_overhead() -> frustumocc::Result<CriterionReport> {
    // Σ (c_in·c_out + c_out), counted by hand.
    let cases: [(Vec<ConvHead>, u64); 3] = [
        (occupancy_heads(80, 59), 9_558),
        (occupancy_heads(256, 59), 30_326),
        (vec![ConvHead::new(64, 32), ConvHead::new(32, 1)], 2_113),
    ];
    let mut counts = Vec::new();
    let mut passed = true;
    for (heads, expect) in &cases {
        let n = head_param_count(heads)?;
        passed &= n == *expect;
        counts.push(json!({ "heads": heads.iter().map(|h| [h.c_in, h.c_out]).collect::<Vec<_>>(), "count": n, "expected": expect }));
    }
    Ok(report(
        "AC8",
        passed,
        format!("counts {:?}", cases.iter().map(|(h, _)| head_param_count(h).unwrap_or(0)).collect::<Vec<_>>()),
        Value::Array(counts),
    ))
}

fn read_outputs(dir: &Path) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        files.push((name, fs::read(entry.path())?));
    }
    files.sort();
    Ok(files)
}

fn determinism(cfg: &RunConfig, workdir: &Path) -> anyhow::Result<CriterionReport> {
    let mut runs = Vec::new();
    for (label, threads) in [("threads1_a", 1usize), ("threads1_b", 1), ("threads4", 4)] {
        let mut c = cfg.clone();
        c.out = workdir.join(label);
        if c.out.exists() {
            fs::remove_dir_all(&c.out).with_context(|| format!("clearing {}", c.out.display()))?;
        }
        par::with_threads(threads, || crate::cmd_forward(&c))?;
        runs.push((label, read_outputs(&c.out)?));
    }
    let reference = &runs[0].1;
    let differing: Vec<&str> = runs[1..].iter().filter(|(_, files)| files != reference).map(|(l, _)| *l).collect();
    let passed = differing.is_empty() && !reference.is_empty();
    Ok(report(
        "AC9",
        passed,
        format!("{} files per run; runs differing from threads1_a: {differing:?}", reference.len()),
        json!({ "files": reference.iter().map(|(n, _)| n).collect::<Vec<_>>(), "differing_runs": differing }),
    ))
}
