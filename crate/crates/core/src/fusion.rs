//! Depth and occupancy weight volumes and their depth-occupancy fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::VolumeShape;
use crate::occupancy::OccupancyVolume;
use crate::real::Real;

/// Tolerance on per-pixel sums of a depth distribution.
pub const DEPTH_SUM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    /// Per-pixel distribution over depth bins.
    Depth,
    /// Independent per-bin probabilities.
    Occupancy,
    /// Weighted sum of the above; unconstrained apart from sign.
    Fused,
}

/// Per-pixel, per-bin scalar field with the layout of [`VolumeShape`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVolume<T = f32> {
    shape: VolumeShape,
    kind: VolumeKind,
    values: Vec<T>,
}

impl<T: Real> WeightVolume<T> {
    /// A depth distribution: non-negative with per-pixel sums of 1 (±1e-5).
    pub fn depth(shape: VolumeShape, values: Vec<T>) -> Result<Self> {
        check_len(shape, values.len())?;
        if values.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
            return Err(Error::domain("depth weights must be finite and non-negative"));
        }
        if shape.bins > 0 {
            for (pixel, ray) in values.chunks(shape.bins).enumerate() {
                let sum: f64 = ray.iter().map(|&v| v.as_f64()).sum();
                if (sum - 1.0).abs() > DEPTH_SUM_TOL {
                    return Err(Error::domain(format!("depth weights of pixel {pixel} sum to {sum}")));
                }
            }
        }
        Ok(Self { shape, kind: VolumeKind::Depth, values })
    }

    /// Occupancy probabilities in `[0, 1]`.
    pub fn occupancy(shape: VolumeShape, values: Vec<T>) -> Result<Self> {
        check_len(shape, values.len())?;
        if values.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::domain("occupancy weights must lie in [0, 1]"));
        }
        Ok(Self { shape, kind: VolumeKind::Occupancy, values })
    }

    /// Skips the per-kind value checks; only the length is verified.
    pub fn new_unchecked(kind: VolumeKind, shape: VolumeShape, values: Vec<T>) -> Result<Self> {
        check_len(shape, values.len())?;
        Ok(Self { shape, kind, values })
    }

    /// Uniform depth distribution.
    pub fn uniform_depth(shape: VolumeShape) -> Self {
        let v = T::one() / T::from_f64(shape.bins as f64);
        Self { shape, kind: VolumeKind::Depth, values: vec![v; shape.len()] }
    }

    pub fn shape(&self) -> VolumeShape {
        self.shape
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
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

    pub fn ray(&self, row: usize, col: usize) -> &[T] {
        let start = self.shape.index(row, col, 0);
        &self.values[start..start + self.shape.bins]
    }

    pub fn cast<U: Real>(&self) -> WeightVolume<U> {
        WeightVolume {
            shape: self.shape,
            kind: self.kind,
            values: self.values.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

impl<T: Real> TryFrom<OccupancyVolume<T>> for WeightVolume<T> {
    type Error = Error;

    /// Probability volumes become occupancy weights; labels are accepted too
    /// since 0/1 are valid probabilities.
    fn try_from(o: OccupancyVolume<T>) -> Result<Self> {
        let shape = o.shape();
        WeightVolume::occupancy(shape, o.into_values())
    }
}

fn check_len(shape: VolumeShape, len: usize) -> Result<()> {
    if shape.len() != len {
        return Err(Error::shape(shape.len(), len));
    }
    Ok(())
}

/// Trainable mixing scalars for depth, implicit and explicit occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    pub w_d: f64,
    pub w_im: f64,
    pub w_ex: f64,
}

impl Default for FusionParams {
    /// Depth-only: occupancy enters as a continuous perturbation from here.
    fn default() -> Self {
        Self::DEPTH_ONLY
    }
}

impl FusionParams {
    pub const DEPTH_ONLY: FusionParams = FusionParams { w_d: 1.0, w_im: 0.0, w_ex: 0.0 };

    pub fn new(w_d: f64, w_im: f64, w_ex: f64) -> Result<Self> {
        let p = Self { w_d, w_im, w_ex };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_d.is_finite() && self.w_im.is_finite() && self.w_ex.is_finite()) {
            return Err(Error::domain("fusion parameters must be finite"));
        }
        Ok(())
    }
}

fn check_inputs<T: Real>(
    d: &WeightVolume<T>,
    o_im: &WeightVolume<T>,
    o_ex: &WeightVolume<T>,
) -> Result<()> {
    if d.kind != VolumeKind::Depth {
        return Err(Error::domain(format!("expected a depth volume, got {:?}", d.kind)));
    }
    for o in [o_im, o_ex] {
        if o.kind != VolumeKind::Occupancy {
            return Err(Error::domain(format!("expected an occupancy volume, got {:?}", o.kind)));
        }
        if o.shape != d.shape {
            return Err(Error::shape(d.shape, o.shape));
        }
    }
    Ok(())
}

/// `S = w_d·D + w_im·O_im + w_ex·O_ex`, entrywise and without renormalization.
pub fn fuse_weights<T: Real>(
    d: &WeightVolume<T>,
    o_im: &WeightVolume<T>,
    o_ex: &WeightVolume<T>,
    params: &FusionParams,
) -> Result<WeightVolume<T>> {
    check_inputs(d, o_im, o_ex)?;
    params.validate()?;
    let (wd, wim, wex) = (T::from_f64(params.w_d), T::from_f64(params.w_im), T::from_f64(params.w_ex));
    let values = d
        .values
        .iter()
        .zip(&o_im.values)
        .zip(&o_ex.values)
        .map(|((&dv, &iv), &ev)| wd * dv + wim * iv + wex * ev)
        .collect();
    Ok(WeightVolume { shape: d.shape, kind: VolumeKind::Fused, values })
}

/// Gradients of a scalar loss through [`fuse_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrad<T> {
    pub w_d: f64,
    pub w_im: f64,
    pub w_ex: f64,
    pub depth: Vec<T>,
    pub implicit: Vec<T>,
    pub explicit: Vec<T>,
}

/// Backward of [`fuse_weights`] given `upstream = ∂L/∂S`.
///
/// Scalar gradients are accumulated in `f64` in index order.
pub fn fuse_weights_grad<T: Real>(
    d: &WeightVolume<T>,
    o_im: &WeightVolume<T>,
    o_ex: &WeightVolume<T>,
    params: &FusionParams,
    upstream: &[T],
) -> Result<FusionGrad<T>> {
    check_inputs(d, o_im, o_ex)?;
    if upstream.len() != d.values.len() {
        return Err(Error::shape(d.values.len(), upstream.len()));
    }
    let dot = |vol: &[T]| -> f64 { vol.iter().zip(upstream).map(|(&a, &g)| a.as_f64() * g.as_f64()).sum() };
    let scale = |w: f64| -> Vec<T> {
        let w = T::from_f64(w);
        upstream.iter().map(|&g| w * g).collect()
    };
    Ok(FusionGrad {
        w_d: dot(&d.values),
        w_im: dot(&o_im.values),
        w_ex: dot(&o_ex.values),
        depth: scale(params.w_d),
        implicit: scale(params.w_im),
        explicit: scale(params.w_ex),
    })
}

/// A 1×1 convolution with bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvHead {
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvHead {
    pub const fn new(c_in: usize, c_out: usize) -> Self {
        Self { c_in, c_out }
    }
}

impl From<(usize, usize)> for ConvHead {
    fn from((c_in, c_out): (usize, usize)) -> Self {
        Self { c_in, c_out }
    }
}

/// Parameters of a stack of 1×1 convolutions: `Σ (c_in·c_out + c_out)`.
pub fn head_param_count(heads: &[ConvHead]) -> Result<u64> {
    heads.iter().try_fold(0u64, |acc, h| {
        if h.c_in == 0 || h.c_out == 0 {
            return Err(Error::domain(format!("channel counts must be positive, got {h:?}")));
        }
        Ok(acc + (h.c_in as u64) * (h.c_out as u64) + h.c_out as u64)
    })
}

/// The two occupancy decoders (implicit and explicit) as single 1×1 heads
/// mapping `channels_in` context channels to one logit per depth bin.
pub fn occupancy_heads(channels_in: usize, bins: usize) -> Vec<ConvHead> {
    vec![ConvHead::new(channels_in, bins), ConvHead::new(channels_in, bins)]
}

/// Added parameters as a fraction of a baseline model's parameter count.
///
/// For example 150 000 extra parameters on a 75-million-parameter detector
/// is an overhead of 0.2 %.
pub fn overhead_fraction(extra: u64, baseline: u64) -> f64 {
    extra as f64 / baseline as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> VolumeShape {
        VolumeShape::new(2, 3, 4)
    }

    fn consts(v: f64) -> (WeightVolume<f64>, WeightVolume<f64>, WeightVolume<f64>) {
        let s = shape();
        let d = WeightVolume::new_unchecked(VolumeKind::Depth, s, vec![v; s.len()]).unwrap();
        let o = WeightVolume::occupancy(s, vec![v; s.len()]).unwrap();
        (d, o.clone(), o)
    }

    #[test]
    fn depth_only_params_reproduce_depth() {
        let s = shape();
        let vals: Vec<f32> = (0..s.len()).map(|i| ((i % 4) as f32 + 1.0) / 10.0).collect();
        let d = WeightVolume::depth(s, vals).unwrap();
        let o = WeightVolume::occupancy(s, vec![0.3f32; s.len()]).unwrap();
        let f = fuse_weights(&d, &o, &o, &FusionParams::DEPTH_ONLY).unwrap();
        assert_eq!(f.values(), d.values());
        assert_eq!(f.kind(), VolumeKind::Fused);
    }

    #[test]
    fn constant_field() {
        let (d, oi, oe) = consts(0.5);
        let f = fuse_weights(&d, &oi, &oe, &FusionParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn kind_and_shape_errors() {
        let (d, oi, _) = consts(0.5);
        let p = FusionParams::default();
        assert!(matches!(fuse_weights(&oi, &oi, &oi, &p), Err(Error::Domain(_))));
        let other = WeightVolume::occupancy(VolumeShape::new(1, 1, 4), vec![0.1; 4]).unwrap();
        assert!(matches!(fuse_weights(&d, &other, &oi, &p), Err(Error::Shape { .. })));
        assert!(fuse_weights_grad(&d, &oi, &oi, &p, &[0.0; 3]).is_err());
    }

    #[test]
    fn depth_constructor_checks_normalization() {
        let s = VolumeShape::new(1, 1, 2);
        assert!(WeightVolume::depth(s, vec![0.5f32, 0.5]).is_ok());
        assert!(WeightVolume::depth(s, vec![0.5f32, 0.6]).is_err());
        assert!(WeightVolume::depth(s, vec![1.5f32, -0.5]).is_err());
        assert!(WeightVolume::occupancy(s, vec![0.5f32, 1.1]).is_err());
    }

    #[test]
    fn grad_closed_form_and_zero_upstream() {
        let (d, oi, oe) = consts(0.5);
        let n = shape().len();
        let p = FusionParams::new(0.7, -0.2, 1.3).unwrap();
        let g = fuse_weights_grad(&d, &oi, &oe, &p, &vec![1.0; n]).unwrap();
        assert_eq!(g.w_d, 0.5 * n as f64);
        assert!(g.depth.iter().all(|&v| v == 0.7));
        assert!(g.implicit.iter().all(|&v| v == -0.2));
        let z = fuse_weights_grad(&d, &oi, &oe, &p, &vec![0.0; n]).unwrap();
        assert_eq!((z.w_d, z.w_im, z.w_ex), (0.0, 0.0, 0.0));
        assert!(z.depth.iter().chain(&z.implicit).chain(&z.explicit).all(|&v| v == 0.0));
    }

    #[test]
    fn param_counts() {
        assert_eq!(head_param_count(&[ConvHead::new(512, 118)]).unwrap(), 60534);
        assert_eq!(head_param_count(&[]).unwrap(), 0);
        assert_eq!(head_param_count(&[(256, 128).into(), (128, 64).into()]).unwrap(), 41152);
        assert!(head_param_count(&[ConvHead::new(0, 3)]).is_err());
        assert_eq!(occupancy_heads(80, 59).len(), 2);
        assert!((overhead_fraction(150_000, 75_000_000) - 0.002).abs() < 1e-15);
    }

    #[test]
    fn non_finite_params_rejected() {
        assert!(FusionParams::new(f64::NAN, 0.0, 0.0).is_err());
    }
}
