//! Point-level instance occupancy labels derived from 3-D boxes.

use crate::error::{Error, Result};
use crate::geom::{box_faces, Frame, FrustumGrid, OrientedBox3D, Vec3, VolumeShape};
use crate::par;
use crate::real::Real;

/// Whether an [`OccupancyVolume`] holds hard labels or predicted probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyMode {
    Label,
    Probability,
}

/// Per-frustum-point occupancy, laid out like [`VolumeShape`].
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVolume<T = f32> {
    shape: VolumeShape,
    mode: OccupancyMode,
    values: Vec<T>,
}

impl<T: Real> OccupancyVolume<T> {
    /// Binary labels; every entry must be exactly 0 or 1.
    pub fn labels(shape: VolumeShape, values: Vec<T>) -> Result<Self> {
        check_len(shape, values.len())?;
        if values.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::domain("label volume entries must be 0 or 1"));
        }
        Ok(Self { shape, mode: OccupancyMode::Label, values })
    }

    /// Probabilities; every entry must lie in `[0, 1]`.
    pub fn probabilities(shape: VolumeShape, values: Vec<T>) -> Result<Self> {
        check_len(shape, values.len())?;
        if values.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::domain("probability volume entries must lie in [0, 1]"));
        }
        Ok(Self { shape, mode: OccupancyMode::Probability, values })
    }

    pub fn zeros(shape: VolumeShape) -> Self {
        Self { shape, mode: OccupancyMode::Label, values: vec![T::zero(); shape.len()] }
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn mode(&self) -> OccupancyMode {
        self.mode
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, bin: usize) -> T {
        self.values[self.shape.index(row, col, bin)]
    }

    /// Number of entries equal to one.
    pub fn count_occupied(&self) -> usize {
        self.values.iter().filter(|&&v| v == T::one()).count()
    }

    /// Occupancy of the `bins`-long ray at `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> &[T] {
        let start = self.shape.index(row, col, 0);
        &self.values[start..start + self.shape.bins]
    }

    pub fn cast<U: Real>(&self) -> OccupancyVolume<U> {
        OccupancyVolume {
            shape: self.shape,
            mode: self.mode,
            values: self.values.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Flips the label at `index` (test fault injection).
    pub fn flip_label(&mut self, index: usize) {
        let v = &mut self.values[index];
        *v = T::one() - *v;
    }
}

fn check_len(shape: VolumeShape, len: usize) -> Result<()> {
    if shape.len() != len {
        return Err(Error::shape(shape.len(), len));
    }
    Ok(())
}

/// Face-normal half-space containment test.
///
/// For every face with outward normal `n` and a point `q` on it, the signed
/// distance `d = (p − q)·n` must be strictly negative; the point is occupied
/// when all six faces agree. Points on a face are not occupied.
pub fn point_occupied_halfspace(p: Vec3, b: &OrientedBox3D) -> bool {
    let mut inside_faces = 0;
    for face in box_faces(b) {
        let v = p - face.point;
        let d = v.dot(face.normal);
        if d < 0.0 {
            inside_faces += 1;
        }
    }
    inside_faces == 6
}

/// Box-frame containment: `|local coordinate| < half extent` on every axis.
pub fn point_occupied_oracle(p: Vec3, b: &OrientedBox3D) -> bool {
    let local = b.rotation().transpose().mul_vec(p - b.center);
    let h = b.size.half();
    local.x.abs() < h.x && local.y.abs() < h.y && local.z.abs() < h.z
}

/// Reference labeling: tests every grid point against every box.
pub fn label_frustum_naive<T: Real>(
    grid: &FrustumGrid,
    boxes: &[OrientedBox3D],
    boxes_frame: Frame,
) -> Result<OccupancyVolume<T>> {
    check_frame(grid, boxes_frame)?;
    let values = grid
        .points()
        .iter()
        .map(|&p| {
            if boxes.iter().any(|b| point_occupied_halfspace(p, b)) {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(OccupancyVolume { shape: grid.shape(), mode: OccupancyMode::Label, values })
}

/// Labels every frustum point inside any of `boxes` (union over instances).
///
/// Each pixel ray is clipped against every box's world bounds first so the
/// exact half-space test only runs on candidate bins. The result equals
/// [`label_frustum_naive`] entry for entry.
pub fn label_frustum<T: Real>(
    grid: &FrustumGrid,
    boxes: &[OrientedBox3D],
    boxes_frame: Frame,
) -> Result<OccupancyVolume<T>> {
    check_frame(grid, boxes_frame)?;
    let shape = grid.shape();
    let mut values = vec![T::zero(); shape.len()];
    if shape.is_empty() || boxes.is_empty() {
        return Ok(OccupancyVolume { shape, mode: OccupancyMode::Label, values });
    }
    let bounds: Vec<(Vec3, Vec3)> = boxes.iter().map(|b| b.aabb()).collect();
    let points = grid.points();
    let bins = shape.bins;
    par::for_each_chunk_mut(&mut values, bins, |pixel, out| {
        let ray = &points[pixel * bins..(pixel + 1) * bins];
        for (b, &(lo, hi)) in boxes.iter().zip(&bounds) {
            let Some((first, last)) = candidate_bins(ray, lo, hi) else {
                continue;
            };
            for k in first..=last {
                if out[k] == T::zero() && point_occupied_halfspace(ray[k], b) {
                    out[k] = T::one();
                }
            }
        }
    });
    Ok(OccupancyVolume { shape, mode: OccupancyMode::Label, values })
}

fn check_frame(grid: &FrustumGrid, boxes_frame: Frame) -> Result<()> {
    if grid.frame() != boxes_frame {
        return Err(Error::domain(format!(
            "grid is in {:?} frame but boxes are in {:?} frame",
            grid.frame(),
            boxes_frame
        )));
    }
    Ok(())
}

const AXIS_MARGIN: f64 = 1e-9;

/// Inclusive bin range of a collinear, ordered point run that may fall
/// inside the axis-aligned bounds `[lo, hi]`.
fn candidate_bins(ray: &[Vec3], lo: Vec3, hi: Vec3) -> Option<(usize, usize)> {
    let p0 = ray[0];
    let seg = ray[ray.len() - 1] - p0;
    let len2 = seg.dot(seg);
    if ray.len() == 1 || len2 == 0.0 {
        let inside = (0..3).all(|a| {
            let (p, l, h) = (p0.to_array()[a], lo.to_array()[a], hi.to_array()[a]);
            p >= l - AXIS_MARGIN && p <= h + AXIS_MARGIN
        });
        return inside.then_some((0, ray.len() - 1));
    }
    // Parametrize the run by λ ∈ [0, 1] and clip against the slabs.
    let (o, d, l, h) = (p0.to_array(), seg.to_array(), lo.to_array(), hi.to_array());
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < l[a] - AXIS_MARGIN || o[a] > h[a] + AXIS_MARGIN {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((l[a] - o[a]) * inv, (h[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    // Generous margin: points are tested exactly afterwards.
    const MARGIN: f64 = 1e-9;
    let (t0, t1) = (t0 - MARGIN, t1 + MARGIN);
    if t0 > t1 || t1 < 0.0 || t0 > 1.0 {
        return None;
    }
    let lambda = |p: &Vec3| (*p - p0).dot(seg) / len2;
    let first = ray.partition_point(|p| lambda(p) < t0);
    let end = ray.partition_point(|p| lambda(p) <= t1);
    (first < end).then(|| (first, end - 1))
}

/// Parameter interval `(t_enter, t_exit)` over which the ray
/// `origin + t·dir, t ≥ 0` lies inside `b` (slab method in the box frame).
///
/// `t` is measured in units of `|dir|`, so it is a distance for a unit
/// direction. An origin inside the box yields `t_enter = 0`. Grazing
/// contact gives a zero-length interval; a miss gives `None`.
pub fn ray_occupancy_continuous(origin: Vec3, dir: Vec3, b: &OrientedBox3D) -> Option<(f64, f64)> {
    let o = b.to_local(origin).to_array();
    let [ax, ay, az] = b.axes();
    let d = [dir.dot(ax), dir.dot(ay), dir.dot(az)];
    let h = b.size.half().to_array();
    let (mut t_enter, mut t_exit) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > h[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut ta, mut tb) = ((-h[a] - o[a]) * inv, (h[a] - o[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t_enter = t_enter.max(ta);
        t_exit = t_exit.min(tb);
        if t_enter > t_exit {
            return None;
        }
    }
    Some((t_enter, t_exit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{build_frustum, BoxSize, CameraIntrinsics, DepthBins, FrustumSpec, RigidTransform};

    fn unit_cube() -> OrientedBox3D {
        OrientedBox3D::axis_aligned(Vec3::ZERO, BoxSize::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn small_grid() -> FrustumGrid {
        let k = CameraIntrinsics::new(20.0, 20.0, 16.0, 8.0, 32, 16).unwrap();
        let spec = FrustumSpec::new(k, DepthBins::uniform(1.0, 20.0, 19).unwrap(), 4).unwrap();
        build_frustum(&spec, &RigidTransform::level_camera(Vec3::new(0.0, 0.0, 1.0), 0.0))
    }

    #[test]
    fn center_and_face_points() {
        let b = unit_cube();
        assert!(point_occupied_halfspace(Vec3::ZERO, &b));
        assert!(point_occupied_oracle(Vec3::ZERO, &b));
        let on_face = Vec3::new(0.5, 0.0, 0.0);
        assert!(!point_occupied_halfspace(on_face, &b));
        assert!(!point_occupied_oracle(on_face, &b));
        let outside = Vec3::new(0.0, 0.7, 0.0);
        assert!(!point_occupied_halfspace(outside, &b));
        assert!(!point_occupied_oracle(outside, &b));
    }

    #[test]
    fn empty_box_list_labels_nothing() {
        let g = small_grid();
        let v: OccupancyVolume = label_frustum(&g, &[], Frame::World).unwrap();
        assert_eq!(v.count_occupied(), 0);
        assert_eq!(v.mode(), OccupancyMode::Label);
    }

    #[test]
    fn enclosing_box_labels_everything() {
        let g = small_grid();
        let b = OrientedBox3D::new(Vec3::new(10.0, 0.0, 0.0), BoxSize::new(100.0, 100.0, 100.0), 0.4).unwrap();
        let v: OccupancyVolume = label_frustum(&g, &[b], Frame::World).unwrap();
        assert_eq!(v.count_occupied(), g.shape().len());
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let g = small_grid();
        let r: Result<OccupancyVolume> = label_frustum(&g, &[unit_cube()], Frame::Camera);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn culled_path_matches_naive_on_handpicked_boxes() {
        let g = small_grid();
        let boxes = [
            OrientedBox3D::new(Vec3::new(8.0, 0.5, 1.0), BoxSize::new(4.0, 2.0, 1.5), 0.3).unwrap(),
            OrientedBox3D::new(Vec3::new(14.0, -2.0, 0.8), BoxSize::new(3.0, 1.8, 1.6), -1.2).unwrap(),
        ];
        let a: OccupancyVolume = label_frustum(&g, &boxes, Frame::World).unwrap();
        let b: OccupancyVolume = label_frustum_naive(&g, &boxes, Frame::World).unwrap();
        assert_eq!(a, b);
        assert!(a.count_occupied() > 0);
    }

    #[test]
    fn slab_hand_case() {
        let (t0, t1) = ray_occupancy_continuous(Vec3::new(0.0, 0.0, -5.0), Vec3::Z, &unit_cube()).unwrap();
        assert!((t0 - 4.5).abs() < 1e-12 && (t1 - 5.5).abs() < 1e-12);
    }

    #[test]
    fn slab_miss_and_behind() {
        let b = unit_cube();
        assert!(ray_occupancy_continuous(Vec3::new(3.0, 0.0, -5.0), Vec3::Z, &b).is_none());
        assert!(ray_occupancy_continuous(Vec3::new(0.0, 0.0, 5.0), Vec3::Z, &b).is_none());
    }

    #[test]
    fn slab_grazing_is_zero_length() {
        let b = unit_cube();
        // Line x + y = 1 touches the square footprint only at the corner (0.5, 0.5).
        let dir = Vec3::new(1.0, -1.0, 0.0).normalized().unwrap();
        let origin = Vec3::new(0.5, 0.5, 0.0) - dir * 3.0;
        if let Some((a, c)) = ray_occupancy_continuous(origin, dir, &b) {
            assert!((c - a).abs() < 1e-9);
            assert!((a - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slab_normal_incidence_length_is_width() {
        let b = OrientedBox3D::new(Vec3::new(3.0, 1.0, 0.0), BoxSize::new(5.0, 2.5, 2.0), 0.7).unwrap();
        let [_, ay, _] = b.axes();
        let (t0, t1) = ray_occupancy_continuous(b.center - ay * 10.0, ay, &b).unwrap();
        assert!((t1 - t0 - 2.5).abs() < 1e-12);
    }

    #[test]
    fn origin_inside_box_enters_at_zero() {
        let (t0, t1) = ray_occupancy_continuous(Vec3::ZERO, Vec3::X, &unit_cube()).unwrap();
        assert_eq!(t0, 0.0);
        assert!((t1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn label_and_probability_validation() {
        let s = VolumeShape::new(1, 1, 2);
        assert!(OccupancyVolume::labels(s, vec![0.0f32, 0.5]).is_err());
        assert!(OccupancyVolume::labels(s, vec![0.0f32, 1.0]).is_ok());
        assert!(OccupancyVolume::probabilities(s, vec![0.0f32, 1.5]).is_err());
        assert!(OccupancyVolume::probabilities(s, vec![0.0f32]).is_err());
    }

    #[test]
    fn discretized_ray_count_converges() {
        let b = OrientedBox3D::new(Vec3::new(0.0, 0.0, 0.0), BoxSize::new(3.0, 1.3, 2.0), 0.4).unwrap();
        let origin = Vec3::new(-10.0, 0.2, 0.1);
        let dir = Vec3::new(1.0, 0.05, 0.0).normalized().unwrap();
        let (t0, t1) = ray_occupancy_continuous(origin, dir, &b).unwrap();
        for spacing in [0.1, 0.05, 0.01, 0.001] {
            let n = (20.0 / spacing) as usize;
            let count = (0..n)
                .filter(|&k| point_occupied_halfspace(origin + dir * ((k as f64 + 0.5) * spacing), &b))
                .count();
            let err = (count as f64 * spacing - (t1 - t0)).abs();
            assert!(err <= 2.0 * spacing, "spacing {spacing}: err {err}");
        }
    }
}
