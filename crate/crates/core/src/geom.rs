//! Linear algebra, pinhole cameras, oriented boxes and frustum lattices.
//!
//! Conventions used throughout the crate:
//!
//! * Camera frame: `x` right, `y` down, `z` forward (optical axis). Depth of
//!   a point is its camera-frame `z`.
//! * World frame: `z` up, ground plane at `z = 0`.
//! * [`Mat3`] is row-major: `m[r][c]`, and acts on column vectors.
//! * A [`RigidTransform`] attached to a camera maps camera → world.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    /// Rotation by `angle` radians about the world `z` axis.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation about an arbitrary unit axis (Rodrigues).
    pub fn rotation_axis_angle(axis: Vec3, angle: f64) -> Option<Self> {
        let k = axis.normalized()?;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Some(Mat3([
            [c + k.x * k.x * t, k.x * k.y * t - k.z * s, k.x * k.z * t + k.y * s],
            [k.y * k.x * t + k.z * s, c + k.y * k.y * t, k.y * k.z * t - k.x * s],
            [k.z * k.x * t - k.y * s, k.z * k.y * t + k.x * s, c + k.z * k.z * t],
        ]))
    }

    pub fn column(&self, c: usize) -> Vec3 {
        Vec3::new(self.0[0][c], self.0[1][c], self.0[2][c])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[r][k] * o.0[k][c]).sum();
            }
        }
        Mat3(out)
    }

    /// Max absolute deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul_mat(self);
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((p.0[r][c] - expect).abs());
            }
        }
        worst
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::domain(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("image size must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::domain(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera-frame ray through `(u, v)` scaled so that its `z` is 1.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v)
    }
}

/// Back-projects pixel `(u, v)` to the camera-frame point at `depth` (camera `z`).
pub fn unproject(k: &CameraIntrinsics, pixel: (f64, f64), depth: f64) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::domain(format!("depth must be positive, got {depth}")));
    }
    let (u, v) = pixel;
    if !k.contains_pixel(u, v) {
        return Err(Error::domain(format!("pixel ({u}, {v}) outside image")));
    }
    Ok(k.ray(u, v) * depth)
}

/// Camera → world placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    /// Fails unless `rotation` is a proper rotation to within 1e-9.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if rotation.orthonormality_error() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::domain("rotation is not orthonormal with determinant +1"));
        }
        if !translation.is_finite() {
            return Err(Error::domain("translation must be finite"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Mat3::IDENTITY, translation: t }
    }

    /// Pose of a level camera at `position` whose optical axis points along
    /// world heading `yaw` (radians from +x toward +y).
    pub fn level_camera(position: Vec3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let forward = Vec3::new(c, s, 0.0);
        let right = Vec3::new(s, -c, 0.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        Self {
            rotation: Mat3::from_columns(right, down, forward),
            translation: position,
        }
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.apply(other.translation),
        }
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxSize {
    pub fn new(length: f64, width: f64, height: f64) -> Self {
        Self { length, width, height }
    }

    pub fn half(&self) -> Vec3 {
        Vec3::new(self.length * 0.5, self.width * 0.5, self.height * 0.5)
    }
}

/// A box rotated about the vertical axis only.
///
/// `length` runs along the box's local `x`, `width` along local `y` and
/// `height` along world `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub center: Vec3,
    pub size: BoxSize,
    pub yaw: f64,
}

/// One face of a box: outward unit normal and a point on the face plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxFace {
    pub normal: Vec3,
    pub point: Vec3,
}

impl OrientedBox3D {
    /// The yaw is wrapped into `(−π, π]`.
    pub fn new(center: Vec3, size: BoxSize, yaw: f64) -> Result<Self> {
        let s = size;
        if !(s.length > 0.0 && s.width > 0.0 && s.height > 0.0)
            || !(s.length.is_finite() && s.width.is_finite() && s.height.is_finite())
        {
            return Err(Error::domain(format!("box extents must be positive, got {s:?}")));
        }
        if !center.is_finite() || !yaw.is_finite() {
            return Err(Error::domain("box center and yaw must be finite"));
        }
        Ok(Self { center, size, yaw: wrap_angle(yaw) })
    }

    pub fn axis_aligned(center: Vec3, size: BoxSize) -> Result<Self> {
        Self::new(center, size, 0.0)
    }

    /// Box-to-world rotation; columns are the local axes.
    pub fn rotation(&self) -> Mat3 {
        Mat3::rotation_z(self.yaw)
    }

    pub fn axes(&self) -> [Vec3; 3] {
        let (s, c) = self.yaw.sin_cos();
        [Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0), Vec3::Z]
    }

    /// World point expressed in box-local coordinates.
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let d = p - self.center;
        let [ax, ay, az] = self.axes();
        Vec3::new(d.dot(ax), d.dot(ay), d.dot(az))
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.size.half();
        let [ax, ay, az] = self.axes();
        let mut out = [Vec3::ZERO; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.center + ax * (sx * h.x) + ay * (sy * h.y) + az * (sz * h.z);
        }
        out
    }

    /// World-axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let cs = self.corners();
        let mut lo = cs[0];
        let mut hi = cs[0];
        for c in &cs[1..] {
            lo = Vec3::new(lo.x.min(c.x), lo.y.min(c.y), lo.z.min(c.z));
            hi = Vec3::new(hi.x.max(c.x), hi.y.max(c.y), hi.z.max(c.z));
        }
        (lo, hi)
    }
}

/// The six faces of `b` in the order `+x, −x, +y, −y, +z, −z` (box-local).
pub fn box_faces(b: &OrientedBox3D) -> [BoxFace; 6] {
    let h = b.size.half();
    let [ax, ay, az] = b.axes();
    let half = [h.x, h.y, h.z];
    let axes = [ax, ay, az];
    let mut faces = [BoxFace { normal: Vec3::ZERO, point: Vec3::ZERO }; 6];
    for k in 0..3 {
        faces[2 * k] = BoxFace { normal: axes[k], point: b.center + axes[k] * half[k] };
        faces[2 * k + 1] = BoxFace { normal: -axes[k], point: b.center - axes[k] * half[k] };
    }
    faces
}

/// Depth-bin centers along each pixel ray, in meters of camera `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DepthBins(Vec<f64>);

impl DepthBins {
    /// `count` bins of equal width covering `[start, end]`, represented by their centers.
    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        if !(start > 0.0 && end > start && end.is_finite()) {
            return Err(Error::domain(format!("invalid depth range [{start}, {end}]")));
        }
        let step = (end - start) / count as f64;
        Self::from_centers((0..count).map(|k| start + (k as f64 + 0.5) * step).collect())
    }

    pub fn from_centers(centers: Vec<f64>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::domain("at least two depth bins are required"));
        }
        if !(centers[0] > 0.0) || centers.iter().any(|d| !d.is_finite()) {
            return Err(Error::domain("depth bins must be positive and finite"));
        }
        if centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("depth bins must be strictly increasing"));
        }
        Ok(Self(centers))
    }

    pub fn centers(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the bin center closest to `depth` (lower index on ties).
    pub fn nearest(&self, depth: f64) -> usize {
        let c = &self.0;
        let hi = c.partition_point(|&b| b < depth);
        if hi == 0 {
            0
        } else if hi == c.len() {
            c.len() - 1
        } else if depth - c[hi - 1] <= c[hi] - depth {
            hi - 1
        } else {
            hi
        }
    }
}

impl TryFrom<Vec<f64>> for DepthBins {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_centers(v)
    }
}

impl From<DepthBins> for Vec<f64> {
    fn from(b: DepthBins) -> Self {
        b.0
    }
}

/// Everything needed to lay out one camera's frustum lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrustumSpec {
    pub intrinsics: CameraIntrinsics,
    pub depth_bins: DepthBins,
    /// Image pixels per feature cell along each axis.
    pub stride: usize,
}

impl FrustumSpec {
    pub fn new(intrinsics: CameraIntrinsics, depth_bins: DepthBins, stride: usize) -> Result<Self> {
        let s = Self { intrinsics, depth_bins, stride };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.stride == 0 {
            return Err(Error::domain("stride must be positive"));
        }
        let k = &self.intrinsics;
        if !k.width.is_multiple_of(self.stride) || !k.height.is_multiple_of(self.stride) {
            return Err(Error::domain(format!(
                "image {}x{} not divisible by stride {}",
                k.width, k.height, self.stride
            )));
        }
        if self.depth_bins.len() < 2 {
            return Err(Error::domain("at least two depth bins are required"));
        }
        Ok(())
    }

    pub fn shape(&self) -> VolumeShape {
        VolumeShape {
            height: self.intrinsics.height / self.stride,
            width: self.intrinsics.width / self.stride,
            bins: self.depth_bins.len(),
        }
    }

    /// Image-pixel coordinates of the center of feature cell `(row, col)`.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }
}

/// Extent of a per-camera volume: feature rows × feature columns × depth bins.
///
/// Volumes store entries with the bin index fastest:
/// `index = (row * width + col) * bins + bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VolumeShape {
    pub height: usize,
    pub width: usize,
    pub bins: usize,
}

impl VolumeShape {
    pub const fn new(height: usize, width: usize, bins: usize) -> Self {
        Self { height, width, bins }
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.bins
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, row: usize, col: usize, bin: usize) -> usize {
        (row * self.width + col) * self.bins + bin
    }
}

/// Which coordinate frame a set of points lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Camera,
    World,
}

/// Dense lattice of 3-D sample points, one per (feature cell, depth bin).
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumGrid {
    shape: VolumeShape,
    frame: Frame,
    points: Vec<Vec3>,
}

impl FrustumGrid {
    pub fn from_points(shape: VolumeShape, frame: Frame, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != shape.len() {
            return Err(Error::shape(shape.len(), points.len()));
        }
        Ok(Self { shape, frame, points })
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    #[inline]
    pub fn point(&self, row: usize, col: usize, bin: usize) -> Vec3 {
        self.points[self.shape.index(row, col, bin)]
    }

    /// Applies `t` to every point, retagging the frame.
    pub fn transformed(&self, t: &RigidTransform, frame: Frame) -> FrustumGrid {
        FrustumGrid {
            shape: self.shape,
            frame,
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
        }
    }
}

fn frustum_points(spec: &FrustumSpec, pose: &RigidTransform) -> Vec<Vec3> {
    let shape = spec.shape();
    let bins = spec.depth_bins.centers();
    let mut points = vec![Vec3::ZERO; shape.len()];
    let row_len = shape.width * shape.bins;
    crate::par::for_each_chunk_mut(&mut points, row_len, |row, chunk| {
        for col in 0..shape.width {
            let (u, v) = spec.cell_center(row, col);
            let ray = spec.intrinsics.ray(u, v);
            for (b, &depth) in bins.iter().enumerate() {
                chunk[col * shape.bins + b] = pose.apply(ray * depth);
            }
        }
    });
    points
}

/// Frustum lattice of `spec` placed in the world by the camera→world `pose`.
///
/// The point for cell `(row, col)` and bin `k` is
/// `pose ∘ unproject(cell_center(row, col), depth_bins[k])`.
pub fn build_frustum(spec: &FrustumSpec, pose: &RigidTransform) -> FrustumGrid {
    FrustumGrid {
        shape: spec.shape(),
        frame: Frame::World,
        points: frustum_points(spec, pose),
    }
}

/// Frustum lattice in the camera's own frame.
pub fn build_frustum_camera(spec: &FrustumSpec) -> FrustumGrid {
    FrustumGrid {
        shape: spec.shape(),
        frame: Frame::Camera,
        points: frustum_points(spec, &RigidTransform::IDENTITY),
    }
}
