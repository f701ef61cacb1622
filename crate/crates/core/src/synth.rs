//! Seeded synthetic scenes: a camera ring, boxes on the ground plane,
//! ray-cast depth, procedural features and stand-in decoder outputs.
//!
//! # Random stream
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Uniform reals are `(next_u64() >> 11) · 2⁻⁵³`.
//! Per scene attempt, boxes are drawn in order; for each box the draws are
//! `x, y` (repeated until the center is at least `min_distance` from the
//! origin), then `length, width, height, yaw` with
//! `yaw = π − 2π·u ∈ (−π, π]`. Depth dropout and feature noise use separate
//! streams of the same generator (stream id `1 + camera`, `1001 + camera`)
//! so they never perturb scene geometry.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::WeightVolume;
use crate::geom::{
    build_frustum, BoxSize, CameraIntrinsics, DepthBins, Frame, FrustumGrid, FrustumSpec, OrientedBox3D,
    RigidTransform, Vec3, VolumeShape,
};
use crate::lift_splat::FeatureMap;
use crate::occupancy::{label_frustum, ray_occupancy_continuous, OccupancyVolume};
use crate::par;

/// Camera ring layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub count: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub stride: usize,
    pub depth_start: f64,
    pub depth_end: f64,
    pub depth_bins: usize,
    pub mount_height: f64,
    pub mount_radius: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            count: 6,
            image_width: 704,
            image_height: 256,
            fov_deg: 70.0,
            stride: 4,
            depth_start: 1.0,
            depth_end: 60.0,
            depth_bins: 59,
            mount_height: 1.5,
            mount_radius: 0.5,
        }
    }
}

impl RigConfig {
    pub fn frustum_spec(&self) -> Result<FrustumSpec> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::domain(format!("field of view must be in (0, 180) degrees, got {}", self.fov_deg)));
        }
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let f = 0.5 * w / (0.5 * self.fov_deg.to_radians()).tan();
        let k = CameraIntrinsics::new(f, f, 0.5 * w, 0.5 * h, self.image_width, self.image_height)?;
        let bins = DepthBins::uniform(self.depth_start, self.depth_end, self.depth_bins)?;
        FrustumSpec::new(k, bins, self.stride)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.count == 0 {
            return Err(Error::domain("at least one camera is required"));
        }
        let spec = self.frustum_spec()?;
        Ok((0..self.count).map(|k| Camera { spec: spec.clone(), pose: self.pose(k) }).collect())
    }

    /// Camera `k` of the ring: yaw `k · 360°/count`, outward-facing.
    pub fn pose(&self, k: usize) -> RigidTransform {
        let yaw = 2.0 * PI * k as f64 / self.count as f64;
        let pos = Vec3::new(self.mount_radius * yaw.cos(), self.mount_radius * yaw.sin(), self.mount_height);
        RigidTransform::level_camera(pos, yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub box_count: usize,
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    pub height_range: [f64; 2],
    /// Box centers lie in `[−extent, extent]²`.
    pub world_extent: f64,
    /// Minimum ground distance of box centers from the rig origin.
    pub min_distance: f64,
    /// Resample until some box center is seen by some camera.
    pub require_visible: bool,
    pub max_retries: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            box_count: 8,
            length_range: [3.5, 5.5],
            width_range: [1.6, 2.2],
            height_range: [1.4, 2.0],
            world_extent: 40.0,
            min_distance: 5.0,
            require_visible: true,
            max_retries: 100,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("length", self.length_range), ("width", self.width_range), ("height", self.height_range)] {
            if !(r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite()) {
                return Err(Error::domain(format!("invalid {name} range {r:?}")));
            }
        }
        if !(self.world_extent > 0.0) || !(self.min_distance >= 0.0) {
            return Err(Error::domain("world extent must be positive and min distance non-negative"));
        }
        if self.min_distance >= self.world_extent * std::f64::consts::SQRT_2 {
            return Err(Error::domain("min distance excludes the whole world extent"));
        }
        if self.require_visible && self.box_count == 0 {
            return Err(Error::domain("visibility requirement needs at least one box"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub spec: FrustumSpec,
    /// Camera → world.
    pub pose: RigidTransform,
}

impl Camera {
    pub fn frustum(&self) -> FrustumGrid {
        build_frustum(&self.spec, &self.pose)
    }

    pub fn shape(&self) -> VolumeShape {
        self.spec.shape()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    /// World-frame boxes.
    pub boxes: Vec<OrientedBox3D>,
    pub seed: u64,
}

/// Seeded uniform reals in `[0, 1)`.
pub struct UniformStream(ChaCha8Rng);

impl UniformStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, r: [f64; 2]) -> f64 {
        r[0] + (r[1] - r[0]) * self.next_f64()
    }
}

/// Whether the center of `b` projects into camera `cam`'s image in front
/// of its first depth bin.
pub fn box_visible(cam: &Camera, b: &OrientedBox3D) -> bool {
    let local = cam.pose.inverse().apply(b.center);
    let k = &cam.spec.intrinsics;
    local.z > cam.spec.depth_bins.centers()[0]
        && k.project(local).is_some_and(|(u, v)| u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64)
}

/// Builds a reproducible scene for `seed`.
pub fn generate_scene(cfg: &SceneConfig, rig: &RigConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let cameras = rig.cameras()?;
    let mut rng = UniformStream::new(seed, 0);
    let attempts = cfg.max_retries.max(1);
    for _ in 0..attempts {
        let mut boxes = Vec::with_capacity(cfg.box_count);
        for _ in 0..cfg.box_count {
            let (x, y) = loop {
                let x = rng.range([-cfg.world_extent, cfg.world_extent]);
                let y = rng.range([-cfg.world_extent, cfg.world_extent]);
                if x.hypot(y) >= cfg.min_distance {
                    break (x, y);
                }
            };
            let size = BoxSize::new(rng.range(cfg.length_range), rng.range(cfg.width_range), rng.range(cfg.height_range));
            let yaw = PI - 2.0 * PI * rng.next_f64();
            boxes.push(OrientedBox3D::new(Vec3::new(x, y, 0.5 * size.height), size, yaw)?);
        }
        let visible = !cfg.require_visible || boxes.iter().any(|b| cameras.iter().any(|c| box_visible(c, b)));
        if visible {
            return Ok(Scene { cameras, boxes, seed });
        }
    }
    Err(Error::Generation(format!("no visible box after {attempts} attempts")))
}

impl Scene {
    fn camera(&self, cam: usize) -> Result<&Camera> {
        self.cameras
            .get(cam)
            .ok_or_else(|| Error::domain(format!("camera index {cam} out of range ({} cameras)", self.cameras.len())))
    }
}

/// Depth (camera `z`) of the first box surface hit through each feature-cell
/// center of camera `cam`; `None` where the ray hits nothing.
///
/// Rays are cast with a direction whose camera-frame `z` is 1, so the
/// slab-method entry parameter is the camera depth itself.
pub fn render_depth_gt(scene: &Scene, cam: usize) -> Result<Vec<Option<f64>>> {
    let camera = scene.camera(cam)?;
    let shape = camera.shape();
    let origin = camera.pose.translation;
    Ok(par::map_range(shape.pixels(), |p| {
        let (u, v) = camera.spec.cell_center(p / shape.width, p % shape.width);
        let dir = camera.pose.apply_vector(camera.spec.intrinsics.ray(u, v));
        scene
            .boxes
            .iter()
            .filter_map(|b| ray_occupancy_continuous(origin, dir, b))
            .map(|(t_enter, _)| t_enter)
            .filter(|&t| t > 0.0)
            .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
    }))
}

/// Keeps each measured pixel with probability `keep_rate`.
pub fn sparsify_depth(depth: &[Option<f64>], keep_rate: f64, seed: u64, cam: usize) -> Vec<Option<f64>> {
    let mut rng = UniformStream::new(seed, 1 + cam as u64);
    depth
        .iter()
        .map(|d| {
            let keep = rng.next_f64() < keep_rate;
            d.filter(|_| keep)
        })
        .collect()
}

/// Nearest depth bin of every measured pixel.
pub fn depth_to_bins(depth: &[Option<f64>], bins: &DepthBins) -> Vec<Option<usize>> {
    depth.iter().map(|d| d.map(|d| bins.nearest(d))).collect()
}

/// Shaping of the stand-in decoder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoConfig {
    /// Depth logits are `−sharpness · (bin − depth)²` (per m²).
    pub sharpness: f64,
    /// Occupancy probabilities are mapped into `[floor, 1 − floor]`.
    pub floor: f64,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        Self { sharpness: 1.0, floor: 0.02 }
    }
}

/// Softmax over bins of `−sharpness · (bin − depth)²`; uniform where `None`.
pub fn depth_distribution(depth: &[Option<f64>], bins: &DepthBins, shape: VolumeShape, sharpness: f64) -> Result<WeightVolume<f32>> {
    if depth.len() != shape.pixels() || bins.len() != shape.bins {
        return Err(Error::shape((shape.pixels(), shape.bins), (depth.len(), bins.len())));
    }
    let mut values = vec![0.0f32; shape.len()];
    let centers = bins.centers();
    par::for_each_chunk_mut(&mut values, shape.bins, |p, out| match depth[p] {
        None => out.iter_mut().for_each(|v| *v = 1.0 / shape.bins as f32),
        Some(d) => {
            let logits: Vec<f64> = centers.iter().map(|&b| -sharpness * (b - d) * (b - d)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (o, e) in out.iter_mut().zip(&exps) {
                *o = (e / sum) as f32;
            }
        }
    });
    WeightVolume::depth(shape, values)
}

/// Blurs labels along the bin axis with a normalized box kernel of the
/// given radius and maps them into `[floor, 1 − floor]`.
pub fn soften_occupancy(labels: &OccupancyVolume<f32>, radius: usize, floor: f64) -> Result<OccupancyVolume<f32>> {
    let shape = labels.shape();
    let bins = shape.bins;
    let mut values = vec![0.0f32; shape.len()];
    let src = labels.values();
    let width = (2 * radius + 1) as f64;
    par::for_each_chunk_mut(&mut values, bins.max(1), |p, out| {
        let ray = &src[p * bins..(p + 1) * bins];
        for (k, o) in out.iter_mut().enumerate() {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius + 1).min(bins);
            let s: f64 = ray[lo..hi].iter().map(|&v| v as f64).sum::<f64>() / width;
            *o = (floor + (1.0 - 2.0 * floor) * s) as f32;
        }
    });
    OccupancyVolume::probabilities(shape, values)
}

/// Stand-ins for the depth decoder and explicit occupancy decoder outputs of
/// camera `cam`: a depth distribution peaked at the rendered depth and the
/// softened ground-truth occupancy labels.
pub fn pseudo_weight_volumes(
    scene: &Scene,
    cam: usize,
    cfg: &PseudoConfig,
) -> Result<(WeightVolume<f32>, OccupancyVolume<f32>)> {
    let camera = scene.camera(cam)?;
    let shape = camera.shape();
    let depth = render_depth_gt(scene, cam)?;
    let dist = depth_distribution(&depth, &camera.spec.depth_bins, shape, cfg.sharpness)?;
    let labels = label_frustum::<f32>(&camera.frustum(), &scene.boxes, Frame::World)?;
    Ok((dist, soften_occupancy(&labels, 1, cfg.floor)?))
}

/// Wider-blurred occupancy used where an implicit occupancy estimate is needed.
pub fn implicit_occupancy_stand_in(explicit: &OccupancyVolume<f32>, floor: f64) -> Result<OccupancyVolume<f32>> {
    soften_occupancy(explicit, 3, floor)
}

/// Smooth deterministic context features with seeded phases and noise on
/// pixels whose ray hits a box (`depth` is [`render_depth_gt`] output);
/// background pixels are zero.
pub fn procedural_features(scene: &Scene, cam: usize, channels: usize, depth: &[Option<f64>]) -> Result<FeatureMap<f32>> {
    let shape = scene.camera(cam)?.shape();
    if depth.len() != shape.pixels() {
        return Err(Error::shape(shape.pixels(), depth.len()));
    }
    let (h, w) = (shape.height, shape.width);
    let mut rng = UniformStream::new(scene.seed, 1001 + cam as u64);
    let phases: Vec<f64> = (0..channels).map(|_| 2.0 * PI * rng.next_f64()).collect();
    let mut values = Vec::with_capacity(channels * h * w);
    for (c, &phase) in phases.iter().enumerate() {
        let freq = 0.05 * (c + 1) as f64;
        for row in 0..h {
            for col in 0..w {
                let noise = rng.next_f64() - 0.5;
                let v = 1.0 + 0.5 * (freq * col as f64 + 0.1 * row as f64 + phase).sin() + 0.1 * noise;
                values.push(if depth[row * w + col].is_some() { v as f32 } else { 0.0 });
            }
        }
    }
    FeatureMap::new(channels, h, w, values)
}
