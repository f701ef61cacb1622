//! Geometry-aware feature propagation: self-attention whose keys and
//! queries are per-pixel occupancy vectors and whose values are image
//! features.
//!
//! For two parallel rays crossing one box, the dot product of their binary
//! occupancy vectors (times bin spacing) is the length of the overlap of
//! their in-box intervals, `w / cos θ − D · tan θ`. [`analytic_overlap`]
//! evaluates that closed form and [`empirical_overlap`] measures it by
//! discretizing real ray/box intersections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::WeightVolume;
use crate::geom::{BoxSize, OrientedBox3D, Vec3};
use crate::lift_splat::FeatureMap;
use crate::occupancy::{ray_occupancy_continuous, OccupancyVolume};
use crate::par;
use crate::real::Real;

/// One occupancy vector (over depth bins) per feature pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTokenSet<T = f32> {
    bins: usize,
    tokens: Vec<T>,
    /// Token index → flat pixel index `row * width + col`.
    pixels: Vec<usize>,
}

impl<T: Real> OccupancyTokenSet<T> {
    pub fn new(bins: usize, tokens: Vec<T>, pixels: Vec<usize>) -> Result<Self> {
        if bins == 0 || pixels.is_empty() {
            return Err(Error::domain("token set must be non-empty"));
        }
        if tokens.len() != bins * pixels.len() {
            return Err(Error::shape(bins * pixels.len(), tokens.len()));
        }
        if tokens.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::domain("occupancy tokens must lie in [0, 1]"));
        }
        Ok(Self { bins, tokens, pixels })
    }

    /// Tokens in pixel order from an occupancy volume.
    pub fn from_occupancy(o: &OccupancyVolume<T>) -> Result<Self> {
        let s = o.shape();
        Self::new(s.bins, o.values().to_vec(), (0..s.pixels()).collect())
    }

    /// Tokens in pixel order from an occupancy-kind weight volume.
    pub fn from_weights(w: &WeightVolume<T>) -> Result<Self> {
        let s = w.shape();
        Self::new(s.bins, w.values().to_vec(), (0..s.pixels()).collect())
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn tokens(&self) -> &[T] {
        &self.tokens
    }

    #[inline]
    pub fn token(&self, i: usize) -> &[T] {
        &self.tokens[i * self.bins..(i + 1) * self.bins]
    }
}

/// Which pixels each query attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScope {
    /// Every pixel of the image.
    Global,
    /// Pixels in the same feature row.
    PerRow,
    /// A `k × k` window centered on the query, clipped at the border.
    Windowed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Divide logits by `√bins`.
    InvSqrtBins,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub scope: AttentionScope,
    pub scale: ScaleMode,
    pub temperature: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { scope: AttentionScope::PerRow, scale: ScaleMode::InvSqrtBins, temperature: 1.0 }
    }
}

impl AttentionConfig {
    /// Raw dot-product logits within `scope`.
    pub fn unscaled(scope: AttentionScope) -> Self {
        Self { scope, scale: ScaleMode::None, temperature: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::domain("attention temperature must be positive"));
        }
        if let AttentionScope::Windowed(k) = self.scope {
            if k == 0 || k % 2 == 0 {
                return Err(Error::domain(format!("attention window must be odd and positive, got {k}")));
            }
        }
        Ok(())
    }

    /// Multiplier applied to every token dot product.
    pub fn logit_factor(&self, bins: usize) -> f64 {
        let scale = match self.scale {
            ScaleMode::InvSqrtBins => 1.0 / (bins as f64).sqrt(),
            ScaleMode::None => 1.0,
        };
        scale / self.temperature
    }
}

/// Rectangular pixel neighbourhoods; every scope here is symmetric
/// (`j ∈ scope(i) ⇔ i ∈ scope(j)`), which the backward pass relies on.
#[derive(Debug, Clone, Copy)]
struct Scoper {
    height: usize,
    width: usize,
    scope: AttentionScope,
}

impl Scoper {
    /// Row range and column range attended by pixel `p`.
    fn rect(&self, p: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (row, col) = (p / self.width, p % self.width);
        match self.scope {
            AttentionScope::Global => (0..self.height, 0..self.width),
            AttentionScope::PerRow => (row..row + 1, 0..self.width),
            AttentionScope::Windowed(k) => {
                let r = k / 2;
                (
                    row.saturating_sub(r)..(row + r + 1).min(self.height),
                    col.saturating_sub(r)..(col + r + 1).min(self.width),
                )
            }
        }
    }

    fn for_each(&self, p: usize, mut f: impl FnMut(usize)) {
        let (rows, cols) = self.rect(p);
        for r in rows {
            for c in cols.clone() {
                f(r * self.width + c);
            }
        }
    }
}

struct Prepared<'a, T> {
    scoper: Scoper,
    /// Pixel → token slice.
    token_of_pixel: Vec<&'a [T]>,
    factor: f64,
}

fn prepare<'a, T: Real>(
    tokens: &'a OccupancyTokenSet<T>,
    values: &FeatureMap<T>,
    cfg: &AttentionConfig,
) -> Result<Prepared<'a, T>> {
    cfg.validate()?;
    let (h, w) = (values.height(), values.width());
    let n = h * w;
    if n == 0 || tokens.is_empty() {
        return Err(Error::domain("attention scope is empty"));
    }
    if tokens.len() != n {
        return Err(Error::shape(n, tokens.len()));
    }
    let mut slot: Vec<Option<&[T]>> = vec![None; n];
    for (i, &p) in tokens.pixels.iter().enumerate() {
        match slot.get_mut(p) {
            Some(s @ None) => *s = Some(tokens.token(i)),
            _ => return Err(Error::domain(format!("token pixel map is not a permutation (pixel {p})"))),
        }
    }
    Ok(Prepared {
        scoper: Scoper { height: h, width: w, scope: cfg.scope },
        token_of_pixel: slot.into_iter().map(|s| s.expect("permutation checked")).collect(),
        factor: cfg.logit_factor(tokens.bins),
    })
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.as_f64() * y.as_f64()).sum()
}

impl<T: Real> Prepared<'_, T> {
    fn logit(&self, i: usize, j: usize) -> f64 {
        self.factor * dot(self.token_of_pixel[i], self.token_of_pixel[j])
    }

    /// Row maximum and softmax denominator for query `i`.
    fn row_stats(&self, i: usize) -> (f64, f64) {
        let mut max = f64::NEG_INFINITY;
        self.scoper.for_each(i, |j| max = max.max(self.logit(i, j)));
        let mut denom = 0.0;
        self.scoper.for_each(i, |j| denom += (self.logit(i, j) - max).exp());
        (max, denom)
    }
}

/// `out_i = Σ_j softmax_j(factor · ⟨O_i, O_j⟩) · f_j` over each query's scope.
///
/// Sums run in increasing pixel order in `f64`; results are deterministic.
pub fn gfp_attend<T: Real>(
    tokens: &OccupancyTokenSet<T>,
    values: &FeatureMap<T>,
    cfg: &AttentionConfig,
) -> Result<FeatureMap<T>> {
    let prep = prepare(tokens, values, cfg)?;
    let (h, w, ch) = (values.height(), values.width(), values.channels());
    let n = h * w;
    let vals = values.values();
    let mut pixel_major = vec![T::zero(); n * ch];
    par::for_each_chunk_mut(&mut pixel_major, ch.max(1), |i, out| {
        let (max, denom) = prep.row_stats(i);
        let mut acc = vec![0.0f64; ch];
        prep.scoper.for_each(i, |j| {
            let a = (prep.logit(i, j) - max).exp() / denom;
            for (c, s) in acc.iter_mut().enumerate() {
                *s += a * vals[c * n + j].as_f64();
            }
        });
        for (o, s) in out.iter_mut().zip(&acc) {
            *o = T::from_f64(*s);
        }
    });
    let mut out = vec![T::zero(); n * ch];
    if ch > 0 {
        par::for_each_chunk_mut(&mut out, n, |c, plane| {
            for (p, v) in plane.iter_mut().enumerate() {
                *v = pixel_major[p * ch + c];
            }
        });
    }
    FeatureMap::new(ch, h, w, out)
}

/// Attention weights of query pixel `i` over its scope, in pixel order.
pub fn attention_row<T: Real>(
    tokens: &OccupancyTokenSet<T>,
    values: &FeatureMap<T>,
    cfg: &AttentionConfig,
    i: usize,
) -> Result<Vec<(usize, f64)>> {
    let prep = prepare(tokens, values, cfg)?;
    if i >= values.height() * values.width() {
        return Err(Error::domain(format!("query pixel {i} out of range")));
    }
    let (max, denom) = prep.row_stats(i);
    let mut row = Vec::new();
    prep.scoper.for_each(i, |j| row.push((j, (prep.logit(i, j) - max).exp() / denom)));
    Ok(row)
}

/// Gradients of a scalar loss through [`gfp_attend`].
#[derive(Debug, Clone, PartialEq)]
pub struct GfpGrad<T> {
    /// Same layout as [`OccupancyTokenSet::tokens`].
    pub tokens: Vec<T>,
    pub values: FeatureMap<T>,
}

/// Softmax-attention backward given `upstream = ∂L/∂out`.
pub fn gfp_attend_grad<T: Real>(
    tokens: &OccupancyTokenSet<T>,
    values: &FeatureMap<T>,
    cfg: &AttentionConfig,
    upstream: &FeatureMap<T>,
) -> Result<GfpGrad<T>> {
    let prep = prepare(tokens, values, cfg)?;
    let (h, w, ch) = (values.height(), values.width(), values.channels());
    if (upstream.channels(), upstream.height(), upstream.width()) != (ch, h, w) {
        return Err(Error::shape((ch, h, w), (upstream.channels(), upstream.height(), upstream.width())));
    }
    let n = h * w;
    let bins = tokens.bins;
    let vals = values.values();
    let up = upstream.values();
    let g_dot_f = |i: usize, j: usize| -> f64 { (0..ch).map(|c| up[c * n + i].as_f64() * vals[c * n + j].as_f64()).sum() };

    // Per query: (max, denom, r_i = Σ_k a_ik ⟨g_i, f_k⟩).
    let stats: Vec<(f64, f64, f64)> = par::map_range(n, |i| {
        let (max, denom) = prep.row_stats(i);
        let mut r = 0.0;
        prep.scoper.for_each(i, |k| r += (prep.logit(i, k) - max).exp() / denom * g_dot_f(i, k));
        (max, denom, r)
    });
    let attn = |i: usize, j: usize| -> f64 {
        let (max, denom, _) = stats[i];
        (prep.logit(i, j) - max).exp() / denom
    };
    // ∂L/∂z_ij
    let dz = |i: usize, j: usize| -> f64 { attn(i, j) * (g_dot_f(i, j) - stats[i].2) };

    // Token gradients per pixel: query side plus key side.
    let mut token_grad_px = vec![T::zero(); n * bins];
    par::for_each_chunk_mut(&mut token_grad_px, bins, |p, out| {
        let mut acc = vec![0.0f64; bins];
        prep.scoper.for_each(p, |j| {
            let coeff = prep.factor * (dz(p, j) + dz(j, p));
            for (a, &o) in acc.iter_mut().zip(prep.token_of_pixel[j]) {
                *a += coeff * o.as_f64();
            }
        });
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = T::from_f64(*a);
        }
    });

    // Value gradients: ∂L/∂f_j = Σ_{i ∋ j} a_ij g_i.
    let mut value_grad_px = vec![T::zero(); n * ch];
    par::for_each_chunk_mut(&mut value_grad_px, ch.max(1), |j, out| {
        let mut acc = vec![0.0f64; ch];
        prep.scoper.for_each(j, |i| {
            let a = attn(i, j);
            for (c, s) in acc.iter_mut().enumerate() {
                *s += a * up[c * n + i].as_f64();
            }
        });
        for (o, s) in out.iter_mut().zip(&acc) {
            *o = T::from_f64(*s);
        }
    });

    let mut token_grad = vec![T::zero(); n * bins];
    for (i, &p) in tokens.pixels.iter().enumerate() {
        token_grad[i * bins..(i + 1) * bins].copy_from_slice(&token_grad_px[p * bins..(p + 1) * bins]);
    }
    let mut value_grad = vec![T::zero(); n * ch];
    for p in 0..n {
        for c in 0..ch {
            value_grad[c * n + p] = value_grad_px[p * ch + c];
        }
    }
    Ok(GfpGrad { tokens: token_grad, values: FeatureMap::new(ch, h, w, value_grad)? })
}

/// Closed-form overlap of two parallel rays' in-box intervals,
/// `max(0, w / cos θ − d_lateral · tan θ)`.
///
/// `theta` is the angle between the ray direction and the box edge of
/// length `w`; `d_lateral` is the perpendicular distance between the rays.
pub fn analytic_overlap(w: f64, theta: f64, d_lateral: f64) -> Result<f64> {
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(Error::domain(format!("theta must lie in [0, π/2), got {theta}")));
    }
    if !(w > 0.0) || !(d_lateral >= 0.0) || !w.is_finite() || !d_lateral.is_finite() {
        return Err(Error::domain(format!("need w > 0 and d_lateral ≥ 0, got w={w}, d={d_lateral}")));
    }
    Ok((w / theta.cos() - d_lateral * theta.tan()).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Normalizes `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Result<Self> {
        let dir = dir.normalized().ok_or_else(|| Error::domain("ray direction must be non-zero"))?;
        Ok(Self { origin, dir })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Overlap length of two parallel rays' occupancy, measured on shared bins.
///
/// Bins of width `bin_spacing` are laid along the common direction starting
/// at the foot of `ray_i`'s origin, with centers at `(k + ½)·bin_spacing`.
/// Each ray's binary occupancy vector marks the bin centers inside its
/// slab-method interval; the result is their dot product times the spacing.
pub fn empirical_overlap(b: &OrientedBox3D, ray_i: &Ray, ray_j: &Ray, bin_spacing: f64) -> Result<f64> {
    if !(bin_spacing > 0.0 && bin_spacing.is_finite()) {
        return Err(Error::domain("bin spacing must be positive"));
    }
    let di = ray_i.dir.normalized().ok_or_else(|| Error::domain("zero ray direction"))?;
    let dj = ray_j.dir.normalized().ok_or_else(|| Error::domain("zero ray direction"))?;
    if di.cross(dj).norm() > 1e-9 || di.dot(dj) <= 0.0 {
        return Err(Error::domain("rays are not parallel"));
    }
    let shift = (ray_j.origin - ray_i.origin).dot(di);
    let interval_i = ray_occupancy_continuous(ray_i.origin, di, b);
    let interval_j = ray_occupancy_continuous(ray_j.origin, di, b).map(|(a, c)| (a + shift, c + shift));
    let end = [interval_i, interval_j]
        .iter()
        .flatten()
        .map(|&(_, c)| c)
        .fold(0.0f64, f64::max);
    let bins = (end / bin_spacing).ceil() as usize + 1;
    let indicator = |iv: Option<(f64, f64)>| -> Vec<u8> {
        (0..bins)
            .map(|k| {
                let s = (k as f64 + 0.5) * bin_spacing;
                iv.is_some_and(|(a, c)| s >= a && s <= c) as u8
            })
            .collect()
    };
    let (oi, oj) = (indicator(interval_i), indicator(interval_j));
    let dot: usize = oi.iter().zip(&oj).map(|(&a, &c)| (a & c) as usize).sum();
    Ok(dot as f64 * bin_spacing)
}

/// Box and parallel ray pair realizing `(w, θ, d_lateral)`.
///
/// The box is `40w × w × w` at the origin, rotated by `yaw`. Ray `i` passes
/// through the center at angle `theta` to the width edge; ray `j` is offset
/// by `d_lateral` perpendicular to it in the ground plane. Both start `10w`
/// before the center.
pub fn overlap_configuration(w: f64, theta: f64, d_lateral: f64, yaw: f64) -> Result<(OrientedBox3D, Ray, Ray)> {
    analytic_overlap(w, theta, d_lateral)?;
    let b = OrientedBox3D::new(Vec3::ZERO, BoxSize::new(40.0 * w, w, w), yaw)?;
    let [ax, ay, _] = b.axes();
    let (s, c) = theta.sin_cos();
    let dir = ax * s + ay * c;
    let perp = ax * c - ay * s;
    let origin = -(dir * (10.0 * w));
    Ok((b, Ray::new(origin, dir)?, Ray::new(origin + perp * d_lateral, dir)?))
}

/// One row of the overlap-identity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapRow {
    pub w: f64,
    pub theta: f64,
    pub d: f64,
    pub bin_spacing: f64,
    pub empirical: f64,
    pub analytic: f64,
    pub abs_error: f64,
}

/// Widths used by the default sweep (meters).
pub const SWEEP_WIDTHS: [f64; 3] = [1.0, 2.0, 4.0];
/// Angles used by the default sweep (degrees).
pub const SWEEP_ANGLES_DEG: [f64; 5] = [0.0, 15.0, 30.0, 45.0, 60.0];
/// Lateral offsets of the default sweep, as fractions of `w`.
pub const SWEEP_OFFSETS: [f64; 3] = [0.0, 0.2, 0.5];

/// Evaluates both overlap routes over the full `(w, θ, D)` grid with
/// `bin_spacing = spacing_factor · w`.
pub fn overlap_sweep(spacing_factor: f64) -> Result<Vec<OverlapRow>> {
    let mut rows = Vec::new();
    for &w in &SWEEP_WIDTHS {
        for &deg in &SWEEP_ANGLES_DEG {
            let theta = deg.to_radians();
            for &frac in &SWEEP_OFFSETS {
                let d = frac * w;
                let spacing = spacing_factor * w;
                let (b, ri, rj) = overlap_configuration(w, theta, d, 0.0)?;
                let empirical = empirical_overlap(&b, &ri, &rj, spacing)?;
                let analytic = analytic_overlap(w, theta, d)?;
                rows.push(OverlapRow {
                    w,
                    theta,
                    d,
                    bin_spacing: spacing,
                    empirical,
                    analytic,
                    abs_error: (empirical - analytic).abs(),
                });
            }
        }
    }
    Ok(rows)
}
