//! Feature lifting into the frustum and voxel pooling onto the BEV plane.
//!
//! Pooling sums every in-range frustum point's feature vector into the BEV
//! cell below it. Both pooling paths accumulate each cell in `f64` in the
//! canonical order (camera, pixel, bin) and round once at the end, so the
//! sorted, segment-parallel path reproduces the naive scatter loop bit for
//! bit regardless of thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::WeightVolume;
use crate::geom::{Frame, FrustumGrid, Vec3, VolumeShape};
use crate::par;
use crate::real::Real;

/// Image features laid out `(channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::shape(channels * height * width, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature values must be finite"));
        }
        Ok(Self { channels, height, width, values })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: T) -> Self {
        Self { channels, height, width, values: vec![v; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.values[self.index(c, row, col)]
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Anything that can be read as a lifted `(bin, channel, row, col)` volume.
pub trait LiftedSource<T: Real>: Sync {
    /// Spatial/bin extent; must match the paired frustum grid.
    fn volume_shape(&self) -> VolumeShape;
    fn channels(&self) -> usize;
    fn value(&self, bin: usize, c: usize, row: usize, col: usize) -> T;
}

/// Materialized outer product, laid out `(bin, channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedFeatureVolume<T = f32> {
    shape: VolumeShape,
    channels: usize,
    values: Vec<T>,
}

impl<T: Real> LiftedFeatureVolume<T> {
    pub fn from_values(shape: VolumeShape, channels: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.len() * channels {
            return Err(Error::shape(shape.len() * channels, values.len()));
        }
        Ok(Self { shape, channels, values })
    }

    pub fn zeros(shape: VolumeShape, channels: usize) -> Self {
        Self { shape, channels, values: vec![T::zero(); shape.len() * channels] }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, bin: usize, c: usize, row: usize, col: usize) -> usize {
        ((bin * self.channels + c) * self.shape.height + row) * self.shape.width + col
    }
}

impl<T: Real> LiftedSource<T> for LiftedFeatureVolume<T> {
    fn volume_shape(&self) -> VolumeShape {
        self.shape
    }

    fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn value(&self, bin: usize, c: usize, row: usize, col: usize) -> T {
        self.values[self.index(bin, c, row, col)]
    }
}

/// Lifted view computed on demand; identical values to [`lift`] without the
/// `bins × channels` memory.
#[derive(Debug, Clone, Copy)]
pub struct LazyLift<'a, T> {
    features: &'a FeatureMap<T>,
    weights: &'a WeightVolume<T>,
}

impl<'a, T: Real> LazyLift<'a, T> {
    pub fn new(features: &'a FeatureMap<T>, weights: &'a WeightVolume<T>) -> Result<Self> {
        check_lift_shapes(features, weights)?;
        Ok(Self { features, weights })
    }
}

impl<T: Real> LiftedSource<T> for LazyLift<'_, T> {
    fn volume_shape(&self) -> VolumeShape {
        self.weights.shape()
    }

    fn channels(&self) -> usize {
        self.features.channels
    }

    #[inline]
    fn value(&self, bin: usize, c: usize, row: usize, col: usize) -> T {
        self.weights.get(row, col, bin) * self.features.get(c, row, col)
    }
}

fn check_lift_shapes<T: Real>(features: &FeatureMap<T>, weights: &WeightVolume<T>) -> Result<()> {
    let s = weights.shape();
    if (features.height, features.width) != (s.height, s.width) {
        return Err(Error::shape((s.height, s.width), (features.height, features.width)));
    }
    Ok(())
}

/// Outer product `F[d, c, v, u] = weight[v, u, d] · feature[c, v, u]`.
pub fn lift<T: Real>(features: &FeatureMap<T>, weights: &WeightVolume<T>) -> Result<LiftedFeatureVolume<T>> {
    check_lift_shapes(features, weights)?;
    let shape = weights.shape();
    let channels = features.channels;
    let plane = shape.pixels();
    let mut out = LiftedFeatureVolume::zeros(shape, channels);
    // One chunk per (bin, channel) plane.
    par::for_each_chunk_mut(&mut out.values, plane.max(1), |plane_idx, chunk| {
        let (bin, c) = (plane_idx / channels, plane_idx % channels);
        let feat = &features.values[c * plane..(c + 1) * plane];
        for (p, dst) in chunk.iter_mut().enumerate() {
            *dst = weights.values()[p * shape.bins + bin] * feat[p];
        }
    });
    Ok(out)
}

/// Ground-plane raster that frustum points are pooled into.
///
/// Columns run along world `x`, rows along world `y`. A point is kept when
/// `x_min ≤ x < x_max`, `y_min ≤ y < y_max` and `z_min ≤ z < z_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell_size: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl BevGridSpec {
    /// Square grid of `cells × cells` cells of `cell_size` centered on the origin.
    pub fn square(cells: usize, cell_size: f64, z_min: f64, z_max: f64) -> Result<Self> {
        let half = cells as f64 * cell_size * 0.5;
        let s = Self { x_min: -half, x_max: half, y_min: -half, y_max: half, cell_size, z_min, z_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_max > self.x_min
            && self.y_max > self.y_min
            && self.z_max > self.z_min
            && self.cell_size > 0.0
            && [self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max, self.cell_size]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::domain(format!("invalid BEV grid spec {self:?}")));
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        (((self.x_max - self.x_min) / self.cell_size).ceil() as usize).max(1)
    }

    pub fn rows(&self) -> usize {
        (((self.y_max - self.y_min) / self.cell_size).ceil() as usize).max(1)
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Flat `row * cols + col` index of the cell containing `p`, if kept.
    #[inline]
    pub fn cell_of(&self, p: Vec3) -> Option<usize> {
        if !(p.z >= self.z_min && p.z < self.z_max) {
            return None;
        }
        if !(p.x >= self.x_min && p.x < self.x_max && p.y >= self.y_min && p.y < self.y_max) {
            return None;
        }
        let col = ((p.x - self.x_min) / self.cell_size) as usize;
        let row = ((p.y - self.y_min) / self.cell_size) as usize;
        let (rows, cols) = (self.rows(), self.cols());
        (row < rows && col < cols).then_some(row * cols + col)
    }

    /// World `(x, y)` of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell_size,
            self.y_min + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Pooled BEV features laid out `(channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid<T = f32> {
    channels: usize,
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> BevGrid<T> {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { channels, rows, cols, values: vec![T::zero(); channels * rows * cols] }
    }

    pub fn from_values(channels: usize, rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != channels * rows * cols {
            return Err(Error::shape(channels * rows * cols, values.len()));
        }
        Ok(Self { channels, rows, cols, values })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.values[(c * self.rows + row) * self.cols + col]
    }

    /// Cells where any channel is non-zero.
    pub fn nonzero_cells(&self) -> usize {
        let n = self.cells();
        (0..n)
            .filter(|&cell| (0..self.channels).any(|c| self.values[c * n + cell] != T::zero()))
            .count()
    }

    /// Per-cell L2 norm across channels, `(row, col)` order.
    pub fn cell_norms(&self) -> Vec<f64> {
        let n = self.cells();
        (0..n)
            .map(|cell| {
                (0..self.channels)
                    .map(|c| {
                        let v = self.values[c * n + cell].as_f64();
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Per-channel sum accumulated in `f64`, row-major order.
    pub fn channel_sums(&self) -> Vec<f64> {
        let n = self.cells();
        (0..self.channels)
            .map(|c| self.values[c * n..(c + 1) * n].iter().map(|&v| v.as_f64()).sum())
            .collect()
    }
}

/// Point accounting for one pooling call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PoolStats {
    pub in_range: usize,
    pub dropped: usize,
}

fn check_inputs<T: Real, S: LiftedSource<T>>(inputs: &[(&S, &FrustumGrid)]) -> Result<usize> {
    let mut channels = None;
    for (cam, (src, grid)) in inputs.iter().enumerate() {
        if grid.frame() != Frame::World {
            return Err(Error::domain(format!("camera {cam}: frustum grid must be in the world frame")));
        }
        if src.volume_shape() != grid.shape() {
            return Err(Error::shape(grid.shape(), src.volume_shape()));
        }
        match channels {
            None => channels = Some(src.channels()),
            Some(c) if c != src.channels() => return Err(Error::shape(c, src.channels())),
            _ => {}
        }
    }
    Ok(channels.unwrap_or(0))
}

/// Reference scatter loop over points in canonical order.
pub fn voxel_pool_naive<T: Real, S: LiftedSource<T>>(
    inputs: &[(&S, &FrustumGrid)],
    bev: &BevGridSpec,
) -> Result<(BevGrid<T>, PoolStats)> {
    bev.validate()?;
    let channels = check_inputs(inputs)?;
    let cells = bev.cells();
    let mut acc = vec![0.0f64; channels * cells];
    let mut stats = PoolStats::default();
    for (src, grid) in inputs {
        let s = grid.shape();
        for row in 0..s.height {
            for col in 0..s.width {
                for bin in 0..s.bins {
                    let Some(cell) = bev.cell_of(grid.point(row, col, bin)) else {
                        stats.dropped += 1;
                        continue;
                    };
                    stats.in_range += 1;
                    for c in 0..channels {
                        acc[c * cells + cell] += src.value(bin, c, row, col).as_f64();
                    }
                }
            }
        }
    }
    let values = acc.into_iter().map(T::from_f64).collect();
    Ok((BevGrid { channels, rows: bev.rows(), cols: bev.cols(), values }, stats))
}

/// One in-range frustum point: camera index and flat point index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    cam: u32,
    point: u32,
}

const DROPPED: u32 = u32::MAX;

/// Points grouped by destination cell in canonical order.
///
/// Depends only on geometry, so it can be built once and reused for every
/// feature batch pooled through the same cameras.
#[derive(Debug, Clone)]
pub struct PoolingPlan {
    bev: BevGridSpec,
    shapes: Vec<VolumeShape>,
    /// `offsets[cell]..offsets[cell + 1]` indexes `entries`.
    offsets: Vec<usize>,
    entries: Vec<Entry>,
    stats: PoolStats,
}

impl PoolingPlan {
    pub fn build(grids: &[&FrustumGrid], bev: &BevGridSpec) -> Result<Self> {
        bev.validate()?;
        for (cam, g) in grids.iter().enumerate() {
            if g.frame() != Frame::World {
                return Err(Error::domain(format!("camera {cam}: frustum grid must be in the world frame")));
            }
            if g.shape().len() >= DROPPED as usize {
                return Err(Error::domain("too many frustum points per camera"));
            }
        }
        let cells = bev.cells();
        let cell_ids: Vec<Vec<u32>> = grids
            .iter()
            .map(|g| {
                let pts = g.points();
                let mut ids = vec![DROPPED; pts.len()];
                par::for_each_chunk_mut(&mut ids, 4096, |chunk, out| {
                    let base = chunk * 4096;
                    for (i, id) in out.iter_mut().enumerate() {
                        if let Some(cell) = bev.cell_of(pts[base + i]) {
                            *id = cell as u32;
                        }
                    }
                });
                ids
            })
            .collect();

        // Stable counting sort by cell keeps (camera, pixel, bin) order within a cell.
        let mut offsets = vec![0usize; cells + 1];
        let mut stats = PoolStats::default();
        for &id in cell_ids.iter().flatten() {
            if id == DROPPED {
                stats.dropped += 1;
            } else {
                offsets[id as usize + 1] += 1;
                stats.in_range += 1;
            }
        }
        for i in 0..cells {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets[..cells].to_vec();
        let mut entries = vec![Entry { cam: 0, point: 0 }; stats.in_range];
        for (cam, ids) in cell_ids.iter().enumerate() {
            for (point, &id) in ids.iter().enumerate() {
                if id != DROPPED {
                    let slot = &mut cursor[id as usize];
                    entries[*slot] = Entry { cam: cam as u32, point: point as u32 };
                    *slot += 1;
                }
            }
        }
        Ok(Self {
            bev: *bev,
            shapes: grids.iter().map(|g| g.shape()).collect(),
            offsets,
            entries,
            stats,
        })
    }

    pub fn stats(&self) -> PoolStats {
        self.stats
    }

    pub fn bev(&self) -> &BevGridSpec {
        &self.bev
    }

    /// Sums every cell's segment; cells are processed in parallel.
    pub fn pool<T: Real, S: LiftedSource<T>>(&self, sources: &[&S]) -> Result<BevGrid<T>> {
        if sources.len() != self.shapes.len() {
            return Err(Error::shape(self.shapes.len(), sources.len()));
        }
        let mut channels = None;
        for (src, shape) in sources.iter().zip(&self.shapes) {
            if src.volume_shape() != *shape {
                return Err(Error::shape(*shape, src.volume_shape()));
            }
            match channels {
                None => channels = Some(src.channels()),
                Some(c) if c != src.channels() => return Err(Error::shape(c, src.channels())),
                _ => {}
            }
        }
        let channels = channels.unwrap_or(0);
        let (rows, cols) = (self.bev.rows(), self.bev.cols());
        let cells = rows * cols;
        if channels == 0 {
            return Ok(BevGrid::zeros(0, rows, cols));
        }

        const CELLS_PER_TASK: usize = 256;
        let mut cell_major = vec![T::zero(); cells * channels];
        par::for_each_chunk_mut(&mut cell_major, CELLS_PER_TASK * channels, |task, out| {
            let mut acc = vec![0.0f64; channels];
            let first_cell = task * CELLS_PER_TASK;
            for (k, dst) in out.chunks_mut(channels).enumerate() {
                let cell = first_cell + k;
                acc.iter_mut().for_each(|a| *a = 0.0);
                for e in &self.entries[self.offsets[cell]..self.offsets[cell + 1]] {
                    let src = sources[e.cam as usize];
                    let shape = self.shapes[e.cam as usize];
                    let point = e.point as usize;
                    let bin = point % shape.bins;
                    let pixel = point / shape.bins;
                    let (row, col) = (pixel / shape.width, pixel % shape.width);
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += src.value(bin, c, row, col).as_f64();
                    }
                }
                for (d, a) in dst.iter_mut().zip(&acc) {
                    *d = T::from_f64(*a);
                }
            }
        });

        let mut values = vec![T::zero(); channels * cells];
        par::for_each_chunk_mut(&mut values, cells, |c, plane| {
            for (cell, v) in plane.iter_mut().enumerate() {
                *v = cell_major[cell * channels + c];
            }
        });
        Ok(BevGrid { channels, rows, cols, values })
    }

    /// Gather backward: every in-range entry receives the upstream value of
    /// its destination cell; dropped entries receive zero.
    pub fn gather<T: Real>(&self, upstream: &BevGrid<T>, channels: usize) -> Result<Vec<LiftedFeatureVolume<T>>> {
        let (rows, cols) = (self.bev.rows(), self.bev.cols());
        if (upstream.channels, upstream.rows, upstream.cols) != (channels, rows, cols) {
            return Err(Error::shape((channels, rows, cols), (upstream.channels, upstream.rows, upstream.cols)));
        }
        let cells = rows * cols;
        let mut out: Vec<LiftedFeatureVolume<T>> =
            self.shapes.iter().map(|&s| LiftedFeatureVolume::zeros(s, channels)).collect();
        for cell in 0..cells {
            for e in &self.entries[self.offsets[cell]..self.offsets[cell + 1]] {
                let vol = &mut out[e.cam as usize];
                let shape = vol.shape;
                let point = e.point as usize;
                let bin = point % shape.bins;
                let pixel = point / shape.bins;
                let (row, col) = (pixel / shape.width, pixel % shape.width);
                for c in 0..channels {
                    let idx = vol.index(bin, c, row, col);
                    vol.values[idx] = upstream.values[c * cells + cell];
                }
            }
        }
        Ok(out)
    }
}

/// Sorted, segment-parallel pooling. Bit-identical to [`voxel_pool_naive`].
pub fn voxel_pool<T: Real, S: LiftedSource<T>>(
    inputs: &[(&S, &FrustumGrid)],
    bev: &BevGridSpec,
) -> Result<(BevGrid<T>, PoolStats)> {
    check_inputs(inputs)?;
    let grids: Vec<&FrustumGrid> = inputs.iter().map(|(_, g)| *g).collect();
    let plan = PoolingPlan::build(&grids, bev)?;
    let sources: Vec<&S> = inputs.iter().map(|(s, _)| *s).collect();
    Ok((plan.pool(&sources)?, plan.stats()))
}

/// Backward of voxel pooling with respect to each lifted volume.
pub fn voxel_pool_grad<T: Real, S: LiftedSource<T>>(
    upstream: &BevGrid<T>,
    inputs: &[(&S, &FrustumGrid)],
    bev: &BevGridSpec,
) -> Result<Vec<LiftedFeatureVolume<T>>> {
    let channels = check_inputs(inputs)?;
    let grids: Vec<&FrustumGrid> = inputs.iter().map(|(_, g)| *g).collect();
    PoolingPlan::build(&grids, bev)?.gather(upstream, channels)
}
