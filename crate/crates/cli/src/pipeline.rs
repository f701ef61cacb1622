//! The forward pass over a synthetic scene: decoder stand-ins, occupancy
//! labels, optional attention, weight fusion, lifting and BEV pooling.

use frustumocc::fusion::{fuse_weights, WeightVolume};
use frustumocc::geom::{Frame, FrustumGrid};
use frustumocc::gfp::{gfp_attend, OccupancyTokenSet};
use frustumocc::lift_splat::{lift, voxel_pool_naive, BevGrid, LazyLift, PoolStats, PoolingPlan};
use frustumocc::losses::{depth_bce, focal_loss, total_loss, EPS};
use frustumocc::occupancy::{label_frustum, point_occupied_oracle, OccupancyVolume};
use frustumocc::synth::{
    depth_to_bins, implicit_occupancy_stand_in, procedural_features, pseudo_weight_volumes, render_depth_gt,
    sparsify_depth, Scene,
};
use frustumocc::geom::Vec3;
use frustumocc::lift_splat::FeatureMap;

use crate::config::RunConfig;

/// Per-camera tensors feeding the lift.
pub struct CameraTensors {
    pub grid: FrustumGrid,
    pub features: FeatureMap<f32>,
    pub depth: WeightVolume<f32>,
    pub explicit: OccupancyVolume<f32>,
    pub implicit: OccupancyVolume<f32>,
    pub labels: OccupancyVolume<f32>,
    /// Sparse depth supervision as bin indices.
    pub gt_bins: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSummary {
    pub depth: f64,
    pub exocc: f64,
    pub det_proxy: f64,
    pub total: f64,
}

pub struct ForwardResult {
    pub bev: BevGrid<f32>,
    pub stats: PoolStats,
    pub losses: LossSummary,
    pub cameras: Vec<CameraTensors>,
}

pub fn camera_tensors(cfg: &RunConfig, scene: &Scene, cam: usize) -> frustumocc::Result<CameraTensors> {
    let camera = &scene.cameras[cam];
    let grid = camera.frustum();
    let depth_gt = render_depth_gt(scene, cam)?;
    let (depth, explicit) = pseudo_weight_volumes(scene, cam, &cfg.pipeline.pseudo)?;
    let implicit = implicit_occupancy_stand_in(&explicit, cfg.pipeline.pseudo.floor)?;
    let labels = label_frustum::<f32>(&grid, &scene.boxes, Frame::World)?;
    let sparse = sparsify_depth(&depth_gt, cfg.pipeline.depth_keep_rate, scene.seed, cam);
    let gt_bins = depth_to_bins(&sparse, &camera.spec.depth_bins);
    let features = procedural_features(scene, cam, cfg.pipeline.channels, &depth_gt)?;
    Ok(CameraTensors { grid, features, depth, explicit, implicit, labels, gt_bins })
}

/// Full forward pass with the configured fusion and attention.
pub fn run_forward(cfg: &RunConfig, scene: &Scene) -> frustumocc::Result<ForwardResult> {
    let cameras = (0..scene.cameras.len())
        .map(|c| camera_tensors(cfg, scene, c))
        .collect::<frustumocc::Result<Vec<_>>>()?;

    let mut fused = Vec::with_capacity(cameras.len());
    let mut context = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let features = if cfg.pipeline.gfp {
            let tokens = OccupancyTokenSet::from_occupancy(&cam.explicit)?;
            gfp_attend(&tokens, &cam.features, &cfg.attention)?
        } else {
            cam.features.clone()
        };
        let o_im = WeightVolume::try_from(cam.implicit.clone())?;
        let o_ex = WeightVolume::try_from(cam.explicit.clone())?;
        fused.push(fuse_weights(&cam.depth, &o_im, &o_ex, &cfg.fusion)?);
        context.push(features);
    }

    let grids: Vec<&FrustumGrid> = cameras.iter().map(|c| &c.grid).collect();
    let plan = PoolingPlan::build(&grids, &cfg.bev)?;
    let sources = context
        .iter()
        .zip(&fused)
        .map(|(f, w)| LazyLift::new(f, w))
        .collect::<frustumocc::Result<Vec<_>>>()?;
    let source_refs: Vec<&LazyLift<f32>> = sources.iter().collect();
    let bev = plan.pool(&source_refs)?;
    let losses = losses(cfg, scene, &cameras, &bev)?;
    Ok(ForwardResult { bev, stats: plan.stats(), losses, cameras })
}

/// Depth-only reference: lift context features with the depth distribution
/// and pool them with the direct scatter loop. No occupancy enters.
pub fn depth_only_bev(cfg: &RunConfig, scene: &Scene) -> frustumocc::Result<BevGrid<f32>> {
    let mut lifted = Vec::new();
    let mut grids = Vec::new();
    for cam in 0..scene.cameras.len() {
        let depth_gt = render_depth_gt(scene, cam)?;
        let (depth, _) = pseudo_weight_volumes(scene, cam, &cfg.pipeline.pseudo)?;
        let features = procedural_features(scene, cam, cfg.pipeline.channels, &depth_gt)?;
        lifted.push(lift(&features, &depth)?);
        grids.push(scene.cameras[cam].frustum());
    }
    let inputs: Vec<_> = lifted.iter().zip(&grids).collect();
    Ok(voxel_pool_naive(&inputs, &cfg.bev)?.0)
}

fn losses(cfg: &RunConfig, scene: &Scene, cameras: &[CameraTensors], bev: &BevGrid<f32>) -> frustumocc::Result<LossSummary> {
    let mut depth_sum = 0.0;
    let mut supervised = 0usize;
    let mut exocc = 0.0;
    for cam in cameras {
        let n = cam.gt_bins.iter().filter(|b| b.is_some()).count();
        depth_sum += depth_bce(&cam.depth, &cam.gt_bins)?.loss * n as f64;
        supervised += n;
        exocc += focal_loss(&cam.explicit, &cam.labels, &cfg.focal)?.loss;
    }
    let depth = if supervised == 0 { 0.0 } else { depth_sum / supervised as f64 };
    let exocc = exocc / cameras.len().max(1) as f64;
    let det_proxy = footprint_bce(cfg, scene, bev);
    Ok(LossSummary { depth, exocc, det_proxy, total: total_loss(det_proxy, depth, exocc, &cfg.loss) })
}

/// Detection stand-in: BCE between the max-normalized BEV feature norm and
/// the ground-truth box footprints, averaged over cells.
fn footprint_bce(cfg: &RunConfig, scene: &Scene, bev: &BevGrid<f32>) -> f64 {
    let norms = bev.cell_norms();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let mut total = 0.0;
    for row in 0..bev.rows() {
        for col in 0..bev.cols() {
            let (x, y) = cfg.bev.cell_center(row, col);
            let target = scene
                .boxes
                .iter()
                .any(|b| point_occupied_oracle(Vec3::new(x, y, b.center.z), b));
            let heat = if max > 0.0 { norms[row * bev.cols() + col] / max } else { 0.0 };
            let p = heat.clamp(EPS, 1.0 - EPS);
            total -= if target { p.ln() } else { (1.0 - p).ln() };
        }
    }
    total / norms.len().max(1) as f64
}
