//! Naive vs sorted voxel pooling timings over growing point counts.

use std::time::{Duration, Instant};

use frustumocc::geom::{Frame, FrustumGrid, Vec3, VolumeShape};
use frustumocc::lift_splat::{voxel_pool, voxel_pool_naive, BevGrid, BevGridSpec, LiftedFeatureVolume, PoolingPlan};
use frustumocc::synth::UniformStream;
use sha2::{Digest, Sha256};

use crate::config::BenchConfig;
use crate::Failure;

/// Point count from which the sorted path must not be slower than naive.
pub const GATE_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub implementation: &'static str,
    pub points: usize,
    pub cells: usize,
    pub ns_per_point: f64,
    pub checksum: String,
}

pub const CSV_HEADER: &str = "impl,points,cells,ns_per_point,checksum";

/// Uniform frustum points over a square somewhat larger than the grid, so a
/// share of them is dropped, with random `f32` features.
pub fn random_workload(points: usize, channels: usize, spec: &BevGridSpec, seed: u64) -> (FrustumGrid, LiftedFeatureVolume<f32>) {
    let mut rng = UniformStream::new(seed, points as u64);
    let half = 0.6 * (spec.x_max - spec.x_min).max(spec.y_max - spec.y_min);
    let (cx, cy) = (0.5 * (spec.x_min + spec.x_max), 0.5 * (spec.y_min + spec.y_max));
    let z = 1.2 * spec.z_min.abs().max(spec.z_max.abs());
    let shape = VolumeShape::new(1, 1, points);
    let pts = (0..points)
        .map(|_| Vec3::new(cx + rng.range([-half, half]), cy + rng.range([-half, half]), rng.range([-z, z])))
        .collect();
    let grid = FrustumGrid::from_points(shape, Frame::World, pts).expect("point count matches shape");
    let values = (0..points * channels).map(|_| rng.next_f64() as f32).collect();
    let vol = LiftedFeatureVolume::from_values(shape, channels, values).expect("value count matches shape");
    (grid, vol)
}

pub fn checksum(bev: &BevGrid<f32>) -> String {
    let mut h = Sha256::new();
    for v in bev.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn best_of<R>(repeats: usize, mut f: impl FnMut() -> R) -> (Duration, R) {
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let r = f();
        best = best.min(t.elapsed());
        last = Some(r);
    }
    (best, last.expect("at least one repeat"))
}

pub fn run(cfg: &BenchConfig, seed: u64) -> anyhow::Result<Vec<BenchRow>> {
    let spec = BevGridSpec::square(cfg.cells, 0.8, -10.0, 10.0)?;
    let cells = spec.cells();
    let mut rows = Vec::new();
    for &points in &cfg.points {
        let (grid, vol) = random_workload(points, cfg.channels, &spec, seed);
        let inputs = [(&vol, &grid)];
        let plan = PoolingPlan::build(&[&grid], &spec)?;

        let (naive, _) = voxel_pool_naive(&inputs, &spec)?;
        let (sorted, _) = voxel_pool(&inputs, &spec)?;
        let cached = plan.pool(&[&vol])?;
        let same = |a: &BevGrid<f32>, b: &BevGrid<f32>| a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same(&naive, &sorted) || !same(&naive, &cached) {
            return Err(Failure::Verification(format!("pooling outputs differ at {points} points")).into());
        }
        let sum = checksum(&naive);

        let timings = [
            ("naive", best_of(cfg.repeats, || voxel_pool_naive(&inputs, &spec)).0),
            ("sorted", best_of(cfg.repeats, || voxel_pool(&inputs, &spec)).0),
            ("sorted_cached_plan", best_of(cfg.repeats, || plan.pool(&[&vol])).0),
        ];
        for (name, t) in timings {
            rows.push(BenchRow {
                implementation: name,
                points,
                cells,
                ns_per_point: t.as_nanos() as f64 / points as f64,
                checksum: sum.clone(),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{:.3},{}\n", r.implementation, r.points, r.cells, r.ns_per_point, r.checksum));
    }
    s
}

/// The sorted path (plan build included) must be at least as fast as the
/// naive scatter for every row group with ≥ [`GATE_POINTS`] points.
pub fn check_gate(rows: &[BenchRow]) -> Result<(), Failure> {
    let find = |name: &str, points: usize| rows.iter().find(|r| r.implementation == name && r.points == points);
    for r in rows.iter().filter(|r| r.implementation == "naive" && r.points >= GATE_POINTS) {
        if let Some(sorted) = find("sorted", r.points) {
            if sorted.ns_per_point > r.ns_per_point {
                return Err(Failure::Verification(format!(
                    "sorted pooling slower than naive at {} points ({:.2} vs {:.2} ns/point)",
                    r.points, sorted.ns_per_point, r.ns_per_point
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_rows() {
        let cfg = BenchConfig { points: vec![1000, 4000], channels: 2, cells: 16, repeats: 1 };
        let rows = run(&cfg, 1).unwrap();
        assert_eq!(rows.len(), 6);
        for group in rows.chunks(3) {
            assert!(group.iter().all(|r| r.checksum == group[0].checksum && r.points == group[0].points));
        }
        let csv = to_csv(&rows);
        assert!(csv.starts_with("impl,points,cells,ns_per_point,checksum\nnaive,1000,256,"));
        check_gate(&rows).unwrap();
    }

    #[test]
    fn gate_flags_slow_sorted_path() {
        let row = |name, ns| BenchRow { implementation: name, points: GATE_POINTS, cells: 1, ns_per_point: ns, checksum: String::new() };
        assert!(check_gate(&[row("naive", 10.0), row("sorted", 5.0)]).is_ok());
        assert!(check_gate(&[row("naive", 10.0), row("sorted", 11.0)]).is_err());
    }
}
