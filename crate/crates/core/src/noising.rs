//! Curve noise: box shifting, box scaling, label flipping and decay-scaled
//! noise application.
//!
//! A curve is wrapped in its axis-aligned bounding box. Noise perturbs the box
//! and every point keeps its normalized position inside the box, so shifting
//! the box translates the curve and rescaling it changes the curve's angle and
//! length at once.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    min_bounding_rect, BoundingRect, ClassId, GeometryError, MapElement, Point2, Polyline,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise parameter: {0}")]
    InvalidParams(&'static str),
    #[error("cannot flip with one class")]
    SingleClass,
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("invalid threshold")]
    InvalidThreshold,
    #[error("invalid decay inputs: {0}")]
    InvalidDecayInput(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Deterministic random source. Same seed and same call order give the same
/// draws on every platform.
#[derive(Debug, Clone)]
pub struct RngState {
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for `stream` under the same seed. Used to give each
    /// frame or worker its own sequence.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Splits off a child generator; advances `self`.
    pub fn fork(&mut self) -> Self {
        Self::new(self.inner.next_u64())
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn open_unit(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.gen();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform draw in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.inner.gen()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

/// Maximum noise scales and label/decay settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Shift of the box center along x, relative to half the box width.
    pub max_shift_x: f64,
    /// Shift of the box center along y, relative to half the box height.
    pub max_shift_y: f64,
    /// Relative change of the box height.
    pub max_scale_h: f64,
    /// Relative change of the box width.
    pub max_scale_w: f64,
    pub label_flip_prob: f64,
    /// Decay scale used by [`decay_rate`].
    pub decay_scale: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            max_shift_x: 0.6,
            max_shift_y: 0.6,
            max_scale_h: 0.6,
            max_scale_w: 0.6,
            label_flip_prob: 0.5,
            decay_scale: 0.2,
        }
    }
}

impl NoiseParams {
    /// Default params with every position scale set to `lambda`.
    pub fn with_position_scale(lambda: f64) -> Self {
        Self {
            max_shift_x: lambda,
            max_shift_y: lambda,
            max_scale_h: lambda,
            max_scale_w: lambda,
            ..Self::default()
        }
    }

    pub fn zero_position() -> Self {
        Self::with_position_scale(0.0)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let scales = [
            self.max_shift_x,
            self.max_shift_y,
            self.max_scale_h,
            self.max_scale_w,
        ];
        if !scales.iter().all(|s| (0.0..1.0).contains(s)) {
            return Err(NoiseError::InvalidParams("noise scales must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(NoiseError::InvalidParams("label flip probability must lie in [0, 1]"));
        }
        if !(self.decay_scale.is_finite() && self.decay_scale > 0.0) {
            return Err(NoiseError::InvalidParams("decay scale must be positive"));
        }
        Ok(())
    }
}

/// Perturbation of a box: center shift and extent change, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseVector {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl NoiseVector {
    pub fn scaled(&self, k: f64) -> NoiseVector {
        NoiseVector {
            dx: self.dx * k,
            dy: self.dy * k,
            dw: self.dw * k,
            dh: self.dh * k,
        }
    }

    pub fn combined(&self, other: &NoiseVector) -> NoiseVector {
        NoiseVector {
            dx: self.dx + other.dx,
            dy: self.dy + other.dy,
            dw: self.dw + other.dw,
            dh: self.dh + other.dh,
        }
    }

    pub fn apply_to(&self, rect: &BoundingRect) -> BoundingRect {
        BoundingRect {
            x: rect.x + self.dx,
            y: rect.y + self.dy,
            w: rect.w + self.dw,
            h: rect.h + self.dh,
        }
    }

    /// Euclidean norm of the four components.
    pub fn magnitude(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy + self.dw * self.dw + self.dh * self.dh).sqrt()
    }

    /// Upper bound on how far any point inside the box moves under this noise.
    pub fn max_point_displacement(&self) -> f64 {
        let ex = self.dx.abs() + self.dw.abs() / 2.0;
        let ey = self.dy.abs() + self.dh.abs() / 2.0;
        ex.hypot(ey)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSource {
    /// Noise on the current-frame ground truth.
    Normal,
    /// Noise on a matched, ego-warped previous-frame ground truth.
    Stream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySample {
    pub element: MapElement,
    /// Index of the current-frame ground truth this sample must reconstruct.
    pub original_index: usize,
    pub noise: NoiseVector,
    pub decay: f64,
    pub source: NoiseSource,
}

/// Random box shift with `|dx| < max_shift_x * w / 2` and `|dy| < max_shift_y * h / 2`.
pub fn box_shift(
    rect: &BoundingRect,
    params: &NoiseParams,
    rng: &mut RngState,
) -> (BoundingRect, NoiseVector) {
    let half_x = params.max_shift_x * rect.w / 2.0;
    let half_y = params.max_shift_y * rect.h / 2.0;
    let dx = (2.0 * rng.open_unit() - 1.0) * half_x;
    let dy = (2.0 * rng.open_unit() - 1.0) * half_y;
    let noise = NoiseVector {
        dx,
        dy,
        dw: 0.0,
        dh: 0.0,
    };
    (noise.apply_to(rect), noise)
}

/// Random box rescale: `h'` in `[(1-l3)h, (1+l3)h]`, `w'` in `[(1-l4)w, (1+l4)w]`.
pub fn box_scale(
    rect: &BoundingRect,
    params: &NoiseParams,
    rng: &mut RngState,
) -> (BoundingRect, NoiseVector) {
    let new_h = rect.h * (1.0 + params.max_scale_h * (2.0 * rng.unit() - 1.0));
    let new_w = rect.w * (1.0 + params.max_scale_w * (2.0 * rng.unit() - 1.0));
    let noised = BoundingRect {
        x: rect.x,
        y: rect.y,
        w: new_w,
        h: new_h,
    };
    let noise = NoiseVector {
        dx: 0.0,
        dy: 0.0,
        dw: new_w - rect.w,
        dh: new_h - rect.h,
    };
    (noised, noise)
}

/// Moves every point so its position relative to `noised_rect` equals its
/// position relative to `rect`. A zero extent maps to the noised center.
pub fn apply_box_noise_to_points(
    poly: &Polyline,
    rect: &BoundingRect,
    noised_rect: &BoundingRect,
) -> Result<Polyline, GeometryError> {
    let normalize = |v: f64, center: f64, extent: f64| {
        if extent == 0.0 {
            0.0
        } else {
            (v - center) / extent
        }
    };
    let points = poly
        .points()
        .iter()
        .map(|p| {
            let u = normalize(p.x, rect.x, rect.w);
            let v = normalize(p.y, rect.y, rect.h);
            Point2::new(noised_rect.x + u * noised_rect.w, noised_rect.y + v * noised_rect.h)
        })
        .collect();
    Polyline::new(points)
}

/// With probability `p` replaces `class` by a uniformly chosen different class.
pub fn flip_label(
    class: ClassId,
    num_classes: usize,
    p: f64,
    rng: &mut RngState,
) -> Result<ClassId, NoiseError> {
    if class.0 >= num_classes {
        return Err(NoiseError::ClassOutOfRange {
            class: class.0,
            num_classes,
        });
    }
    if p <= 0.0 {
        return Ok(class);
    }
    if num_classes < 2 {
        return Err(NoiseError::SingleClass);
    }
    if !rng.bernoulli(p) {
        return Ok(class);
    }
    let pick = rng.index(num_classes - 1);
    Ok(ClassId(if pick >= class.0 { pick + 1 } else { pick }))
}

/// Fraction of the injected noise kept for an instance whose warped previous
/// curve already sits at Chamfer distance `distance` from its target:
/// `1 - distance * alpha / (gamma * delta)`, clamped to [0, 1].
pub fn decay_rate(distance: f64, delta: f64, alpha: f64, gamma: f64) -> Result<f64, NoiseError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(NoiseError::InvalidThreshold);
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(NoiseError::InvalidDecayInput("alpha must be positive"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(NoiseError::InvalidDecayInput("gamma must be positive"));
    }
    if distance.is_nan() || distance < 0.0 {
        return Err(NoiseError::InvalidDecayInput("distance must be non-negative"));
    }
    let raw = 1.0 - distance * alpha / (gamma * delta);
    Ok(raw.clamp(0.0, 1.0))
}

/// Draws shift and scale noise, scales the combined vector by `decay`, warps
/// the curve into the resulting box and possibly flips the label.
///
/// Draw order is fixed (shift, scale, label) so that samples are reproducible.
pub fn make_noisy_instance(
    element: &MapElement,
    decay: f64,
    params: &NoiseParams,
    num_classes: usize,
    original_index: usize,
    source: NoiseSource,
    rng: &mut RngState,
) -> Result<NoisySample, NoiseError> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(NoiseError::InvalidDecayInput("decay must lie in [0, 1]"));
    }
    let rect = min_bounding_rect(&element.polyline);
    let (_, shift) = box_shift(&rect, params, rng);
    let (_, scale) = box_scale(&rect, params, rng);
    let noise = shift.combined(&scale);
    let noised_rect = noise.scaled(decay).apply_to(&rect);
    let polyline = apply_box_noise_to_points(&element.polyline, &rect, &noised_rect)?;
    let class = flip_label(element.class, num_classes, params.label_flip_prob, rng)?;
    Ok(NoisySample {
        element: MapElement::new(class, polyline),
        original_index,
        noise,
        decay,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;

    fn rect(x: f64, y: f64, w: f64, h: f64) -> BoundingRect {
        BoundingRect { x, y, w, h }
    }

    #[test]
    fn zero_scales_leave_box_unchanged() {
        let params = NoiseParams::zero_position();
        let mut rng = RngState::new(1);
        let r = rect(1.0, 2.0, 4.0, 2.0);
        let (shifted, n) = box_shift(&r, &params, &mut rng);
        assert_eq!(shifted, r);
        assert_eq!(n.magnitude(), 0.0);
        let (scaled, n) = box_scale(&r, &params, &mut rng);
        assert_eq!(scaled, r);
        assert_eq!(n.magnitude(), 0.0);
    }

    #[test]
    fn shift_bound_and_scale_interval() {
        let params = NoiseParams::default();
        let mut rng = RngState::new(2);
        let r = rect(0.0, 0.0, 4.0, 2.0);
        for _ in 0..10_000 {
            let (s, n) = box_shift(&r, &params, &mut rng);
            assert!(n.dx.abs() < 1.2 && n.dy.abs() < 0.6);
            assert_eq!((s.w, s.h), (r.w, r.h));
            let (s, n) = box_scale(&r, &params, &mut rng);
            assert!((0.8..=3.2).contains(&s.h));
            assert!((1.6..=6.4).contains(&s.w));
            assert_eq!((s.x, s.y), (r.x, r.y));
            assert_eq!((n.dx, n.dy), (0.0, 0.0));
        }
    }

    #[test]
    fn zero_width_forces_zero_shift() {
        let mut rng = RngState::new(3);
        let (_, n) = box_shift(&rect(1.0, 2.0, 0.0, 2.0), &NoiseParams::default(), &mut rng);
        assert_eq!(n.dx, 0.0);
    }

    #[test]
    fn point_mapping_examples() {
        let poly = Polyline::from_xy(&[(-1.0, -1.0), (1.0, 1.0), (0.0, 0.5)]).unwrap();
        let r = min_bounding_rect(&poly);
        assert_eq!(apply_box_noise_to_points(&poly, &r, &r).unwrap(), poly);

        let shifted = rect(r.x + 1.0, r.y + 2.0, r.w, r.h);
        let out = apply_box_noise_to_points(&poly, &r, &shifted).unwrap();
        for (a, b) in out.points().iter().zip(poly.points()) {
            assert_eq!((a.x, a.y), (b.x + 1.0, b.y + 2.0));
        }

        let doubled = rect(0.0, 0.0, 4.0, 4.0);
        let out = apply_box_noise_to_points(&poly, &rect(0.0, 0.0, 2.0, 2.0), &doubled).unwrap();
        assert_eq!(out.points()[1], Point2::new(2.0, 2.0));
    }

    #[test]
    fn flip_label_contract() {
        let mut rng = RngState::new(4);
        for _ in 0..100 {
            assert_eq!(flip_label(ClassId(1), 3, 0.0, &mut rng).unwrap(), ClassId(1));
            let c = flip_label(ClassId(0), 3, 1.0, &mut rng).unwrap();
            assert!(c == ClassId(1) || c == ClassId(2));
        }
        assert_eq!(flip_label(ClassId(0), 1, 0.5, &mut rng), Err(NoiseError::SingleClass));
        assert_eq!(flip_label(ClassId(0), 1, 0.0, &mut rng), Ok(ClassId(0)));
        assert!(matches!(
            flip_label(ClassId(3), 3, 0.5, &mut rng),
            Err(NoiseError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn flip_fraction_near_half() {
        let mut rng = RngState::new(5);
        let flips = (0..10_000)
            .filter(|_| flip_label(ClassId(2), 3, 0.5, &mut rng).unwrap() != ClassId(2))
            .count();
        let frac = flips as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "flip fraction {frac}");
    }

    #[test]
    fn decay_examples() {
        assert_eq!(decay_rate(0.0, 0.3, 0.1, 0.2).unwrap(), 1.0);
        // root of the formula: D = gamma * delta / alpha
        assert!(decay_rate(0.2 * 0.3 / 0.1, 0.3, 0.1, 0.2).unwrap().abs() < 1e-15);
        assert!((decay_rate(0.3, 0.3, 0.1, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(decay_rate(100.0, 0.3, 0.1, 0.2).unwrap(), 0.0);
        assert_eq!(decay_rate(0.0, 0.0, 0.1, 0.2), Err(NoiseError::InvalidThreshold));
        assert_eq!(decay_rate(f64::INFINITY, 0.3, 0.1, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn noisy_instance_degenerate_settings() {
        let elem = MapElement::new(
            ClassId::LANE_DIVIDER,
            Polyline::from_xy(&[(0.0, 0.0), (3.0, 1.0), (6.0, -1.0)]).unwrap(),
        );
        let mut rng = RngState::new(6);
        let s = make_noisy_instance(&elem, 0.0, &NoiseParams::default(), 3, 0, NoiseSource::Normal, &mut rng)
            .unwrap();
        assert_eq!(s.element.polyline, elem.polyline);
        assert!(s.noise.magnitude() > 0.0);

        let s = make_noisy_instance(&elem, 1.0, &NoiseParams::zero_position(), 3, 0, NoiseSource::Normal, &mut rng)
            .unwrap();
        assert_eq!(s.element.polyline, elem.polyline);

        assert!(make_noisy_instance(&elem, 1.5, &NoiseParams::default(), 3, 0, NoiseSource::Normal, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_samples() {
        let elem = MapElement::new(
            ClassId::ROAD_BOUNDARY,
            Polyline::from_xy(&[(0.0, 0.0), (3.0, 1.0), (6.0, -1.0)]).unwrap(),
        );
        let run = || {
            let mut rng = RngState::new(99);
            (0..50)
                .map(|i| {
                    make_noisy_instance(&elem, 0.7, &NoiseParams::default(), 3, i, NoiseSource::Stream, &mut rng)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn params_validation() {
        assert!(NoiseParams::default().validate().is_ok());
        assert!(NoiseParams::with_position_scale(1.0).validate().is_err());
        let p = NoiseParams {
            decay_scale: 0.0,
            ..NoiseParams::default()
        };
        assert!(p.validate().is_err());
    }
}
