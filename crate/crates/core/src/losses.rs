//! Depth BCE, occupancy focal loss and the weighted training objective.
//!
//! Probabilities are clamped to `[EPS, 1 − EPS]` before logarithms; the
//! gradient of a clamped entry is zero. Both losses are means over the
//! supervised entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{VolumeKind, WeightVolume};
use crate::occupancy::{OccupancyMode, OccupancyVolume};
use crate::real::Real;

/// Probability clamp applied before taking logarithms.
pub const EPS: f64 = 1e-7;

/// A scalar loss and its gradient with respect to the prediction volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub grad: Vec<T>,
}

#[inline]
fn clamp(p: f64) -> (f64, bool) {
    if p < EPS {
        (EPS, true)
    } else if p > 1.0 - EPS {
        (1.0 - EPS, true)
    } else {
        (p, false)
    }
}

/// Elementwise binary cross entropy of one clamped probability.
pub fn bce(p: f64, y: f64) -> f64 {
    let (p, _) = clamp(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// One-hot BCE over all depth bins, averaged over supervised pixels.
///
/// `gt_bins[pixel]` is the ground-truth bin or `None` for pixels without a
/// depth measurement; those contribute neither loss nor gradient.
pub fn depth_bce<T: Real>(pred: &WeightVolume<T>, gt_bins: &[Option<usize>]) -> Result<LossGrad<T>> {
    if pred.kind() != VolumeKind::Depth {
        return Err(Error::domain(format!("depth loss needs a depth volume, got {:?}", pred.kind())));
    }
    let shape = pred.shape();
    if gt_bins.len() != shape.pixels() {
        return Err(Error::shape(shape.pixels(), gt_bins.len()));
    }
    if let Some(bad) = gt_bins.iter().flatten().find(|&&b| b >= shape.bins) {
        return Err(Error::domain(format!("ground-truth bin {bad} out of range (bins = {})", shape.bins)));
    }
    let supervised = gt_bins.iter().filter(|b| b.is_some()).count();
    let mut grad = vec![T::zero(); shape.len()];
    if supervised == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let norm = 1.0 / supervised as f64;
    let mut total = 0.0;
    for (pixel, gt) in gt_bins.iter().enumerate() {
        let Some(gt) = *gt else { continue };
        let ray = &pred.values()[pixel * shape.bins..(pixel + 1) * shape.bins];
        let g = &mut grad[pixel * shape.bins..(pixel + 1) * shape.bins];
        for (k, (&p, gk)) in ray.iter().zip(g.iter_mut()).enumerate() {
            let y = if k == gt { 1.0 } else { 0.0 };
            let (pc, clamped) = clamp(p.as_f64());
            total += -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
            if !clamped {
                *gk = T::from_f64(norm * (-y / pc + (1.0 - y) / (1.0 - pc)));
            }
        }
    }
    Ok(LossGrad { loss: total * norm, grad })
}

/// Focal-loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!("invalid focal parameters {self:?}")));
        }
        Ok(())
    }
}

/// Focal loss of a single probability against a 0/1 label, and `∂ℓ/∂p`.
///
/// `ℓ = −α_t (1 − p_t)^γ ln p_t` with `p_t = p, α_t = α` for positives and
/// `p_t = 1 − p, α_t = 1 − α` for negatives.
pub fn focal_term(p: f64, y: f64, fp: &FocalParams) -> (f64, f64) {
    let (pc, clamped) = clamp(p);
    let positive = y >= 0.5;
    let (pt, at, sign) = if positive { (pc, fp.alpha, 1.0) } else { (1.0 - pc, 1.0 - fp.alpha, -1.0) };
    let q = 1.0 - pt;
    let loss = -at * q.powf(fp.gamma) * pt.ln();
    if clamped {
        return (loss, 0.0);
    }
    // dℓ/dp_t = α_t [γ (1 − p_t)^(γ−1) ln p_t − (1 − p_t)^γ / p_t]
    let focal_slope = if fp.gamma == 0.0 { 0.0 } else { fp.gamma * q.powf(fp.gamma - 1.0) * pt.ln() };
    let dpt = at * (focal_slope - q.powf(fp.gamma) / pt);
    (loss, sign * dpt)
}

/// Mean focal loss of predicted occupancy against binary labels.
pub fn focal_loss<T: Real>(
    pred: &OccupancyVolume<T>,
    gt: &OccupancyVolume<T>,
    fp: &FocalParams,
) -> Result<LossGrad<T>> {
    fp.validate()?;
    if pred.shape() != gt.shape() {
        return Err(Error::shape(gt.shape(), pred.shape()));
    }
    if gt.mode() != OccupancyMode::Label {
        return Err(Error::domain("focal loss targets must be a label volume"));
    }
    let n = pred.values().len();
    if n == 0 {
        return Ok(LossGrad { loss: 0.0, grad: Vec::new() });
    }
    let norm = 1.0 / n as f64;
    let mut total = 0.0;
    let grad = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &y)| {
            let (l, g) = focal_term(p.as_f64(), y.as_f64(), fp);
            total += l;
            T::from_f64(g * norm)
        })
        .collect();
    Ok(LossGrad { loss: total * norm, grad })
}

/// Weights of the detection, depth and occupancy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 3.0, lambda3: 3000.0 }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda1, self.lambda2, self.lambda3].iter().all(|&l| l >= 0.0 && l.is_finite());
        if !ok {
            return Err(Error::domain(format!("loss weights must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }
}

/// `λ₁·det + λ₂·depth + λ₃·exocc`.
pub fn total_loss(det_proxy: f64, depth: f64, exocc: f64, w: &LossWeights) -> f64 {
    w.lambda1 * det_proxy + w.lambda2 * depth + w.lambda3 * exocc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::VolumeShape;

    #[test]
    fn focal_reference_value() {
        let (l, _) = focal_term(0.5, 1.0, &FocalParams::default());
        assert!((l - 0.0433217).abs() < 1e-6);
        assert!((l - 0.0625 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let fp = FocalParams { alpha: 0.5, gamma: 0.0 };
        for &(p, y) in &[(0.1, 0.0), (0.1, 1.0), (0.73, 1.0), (0.99, 0.0)] {
            let (l, _) = focal_term(p, y, &fp);
            assert!((l - 0.5 * bce(p, y)).abs() < 1e-10);
        }
    }

    #[test]
    fn focal_decreases_toward_perfect_positive() {
        let fp = FocalParams::default();
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let (l, _) = focal_term(p, 1.0, &fp);
            assert!(l < prev);
            prev = l;
        }
        assert!(focal_term(1.0, 1.0, &fp).0 < 1e-20);
    }

    #[test]
    fn depth_bce_uniform_hand_value() {
        let s = VolumeShape::new(1, 1, 4);
        let d = WeightVolume::<f64>::uniform_depth(s);
        let r = depth_bce(&d, &[Some(2)]).unwrap();
        let expect = -(0.25f64).ln() - 3.0 * (0.75f64).ln();
        assert!((r.loss - expect).abs() < 1e-12);
        assert!((r.loss - 2.2493).abs() < 1e-4);
    }

    #[test]
    fn depth_bce_perfect_prediction() {
        let s = VolumeShape::new(1, 2, 5);
        let mut v = vec![0.0f64; s.len()];
        v[2] = 1.0;
        v[5 + 4] = 1.0;
        let d = WeightVolume::depth(s, v).unwrap();
        let r = depth_bce(&d, &[Some(2), Some(4)]).unwrap();
        assert!(r.loss <= 5.0 * EPS * 1.01);
        assert!(r.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn depth_bce_unsupervised_and_errors() {
        let s = VolumeShape::new(1, 2, 3);
        let d = WeightVolume::<f32>::uniform_depth(s);
        let r = depth_bce(&d, &[None, None]).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));
        assert!(matches!(depth_bce(&d, &[Some(3), None]), Err(Error::Domain(_))));
        assert!(depth_bce(&d, &[None]).is_err());
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        assert!((total_loss(0.5, 0.1, 0.0001, &w) - 1.1).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w), 0.0);
        let det_only = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(0.37, 5.0, 9.0, &det_only), 0.37);
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn focal_volume_requires_labels() {
        let s = VolumeShape::new(1, 1, 2);
        let p = OccupancyVolume::probabilities(s, vec![0.5f32, 0.5]).unwrap();
        assert!(focal_loss(&p, &p, &FocalParams::default()).is_err());
        let y = OccupancyVolume::labels(s, vec![1.0f32, 0.0]).unwrap();
        let r = focal_loss(&p, &y, &FocalParams::default()).unwrap();
        assert!(r.loss > 0.0);
    }
}
