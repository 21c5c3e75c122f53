//! Planar primitives shared by every stage of the pipeline.
//!
//! Coordinates are meters in an ego frame with x pointing forward and y to the
//! left. Curves are ordered polylines; most of the pipeline works on curves
//! resampled to a fixed number of points (see [`DEFAULT_POINTS_PER_CURVE`]).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of points per curve used when nothing else is configured.
pub const DEFAULT_POINTS_PER_CURVE: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("degenerate curve")]
    DegenerateCurve,
    #[error("resample count must be at least 2, got {0}")]
    InvalidSampleCount(usize),
    #[error("perception range extents must be strictly positive")]
    InvalidRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Point at parameter `t` on the segment from `self` to `other`.
    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

/// An ordered curve with at least two points and positive arc length.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Polyline {
    points: Vec<Point2>,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        let poly = Polyline { points };
        if poly.length() <= 0.0 {
            return Err(GeometryError::DegenerateCurve);
        }
        Ok(poly)
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self, GeometryError> {
        Self::new(coords.iter().copied().map(Point2::from).collect())
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    /// Total arc length.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn reversed(&self) -> Polyline {
        let mut points = self.points.clone();
        points.reverse();
        Polyline { points }
    }

    pub fn midpoint(&self) -> Point2 {
        let rect = min_bounding_rect(self);
        Point2::new(rect.x, rect.y)
    }
}

impl<'de> Deserialize<'de> for Polyline {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let points = Vec::<Point2>::deserialize(de)?;
        Polyline::new(points).map_err(serde::de::Error::custom)
    }
}

/// Map class identifier. The benchmark classes are exposed as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl ClassId {
    pub const PED_CROSSING: ClassId = ClassId(0);
    pub const LANE_DIVIDER: ClassId = ClassId(1);
    pub const ROAD_BOUNDARY: ClassId = ClassId(2);

    /// Number of benchmark map classes.
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self.0
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "ped_crossing",
            1 => "divider",
            2 => "boundary",
            _ => "unknown",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One map instance: a class label and its curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub class: ClassId,
    pub polyline: Polyline,
}

impl MapElement {
    pub fn new(class: ClassId, polyline: Polyline) -> Self {
        Self { class, polyline }
    }

    pub fn points(&self) -> &[Point2] {
        self.polyline.points()
    }
}

/// Axis-aligned rectangle given by its center and extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingRect {
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        (p.x - self.x).abs() <= self.w / 2.0 + tol && (p.y - self.y).abs() <= self.h / 2.0 + tol
    }

    pub fn min_corner(&self) -> Point2 {
        Point2::new(self.x - self.w / 2.0, self.y - self.h / 2.0)
    }

    pub fn max_corner(&self) -> Point2 {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// Planar rigid motion: rotate by `theta`, then translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE2Transform {
    theta: f64,
    cos: f64,
    sin: f64,
    tx: f64,
    ty: f64,
}

impl Default for SE2Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE2Transform {
    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Self {
            theta,
            cos,
            sin,
            tx,
            ty,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn from_translation(tx: f64, ty: f64) -> Self {
        Self::new(0.0, tx, ty)
    }

    pub fn from_rotation(theta: f64) -> Self {
        Self::new(theta, 0.0, 0.0)
    }

    pub fn rotation(&self) -> f64 {
        self.theta
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.tx, self.ty)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            self.cos * p.x - self.sin * p.y + self.tx,
            self.sin * p.x + self.cos * p.y + self.ty,
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SE2Transform) -> SE2Transform {
        let t = self.apply(other.translation());
        SE2Transform::new(wrap_angle(self.theta + other.theta), t.x, t.y)
    }

    pub fn inverse(&self) -> SE2Transform {
        // R^T applied to -t
        let tx = -(self.cos * self.tx + self.sin * self.ty);
        let ty = -(-self.sin * self.tx + self.cos * self.ty);
        SE2Transform::new(-self.theta, tx, ty)
    }

    /// 3x3 homogeneous matrix.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.cos, -self.sin, self.tx],
            [self.sin, self.cos, self.ty],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Row-major flattening of [`SE2Transform::matrix`].
    pub fn flatten(&self) -> [f64; 9] {
        let m = self.matrix();
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn approx_eq(&self, other: &SE2Transform, tol: f64) -> bool {
        self.flatten()
            .iter()
            .zip(other.flatten().iter())
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Ego-centric rectangle `[-half_length, half_length] x [-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRange {
    pub half_length: f64,
    pub half_width: f64,
}

impl PerceptionRange {
    /// 60 x 30 m setting.
    pub const SMALL: PerceptionRange = PerceptionRange {
        half_length: 30.0,
        half_width: 15.0,
    };
    /// 100 x 50 m setting.
    pub const LARGE: PerceptionRange = PerceptionRange {
        half_length: 50.0,
        half_width: 25.0,
    };

    pub fn new(half_length: f64, half_width: f64) -> Result<Self, GeometryError> {
        let range = PerceptionRange {
            half_length,
            half_width,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.half_length) && ok(self.half_width) {
            Ok(())
        } else {
            Err(GeometryError::InvalidRange)
        }
    }

    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        p.x.abs() <= self.half_length + tol && p.y.abs() <= self.half_width + tol
    }
}

impl Default for PerceptionRange {
    fn default() -> Self {
        Self::SMALL
    }
}

/// Resamples `poly` to `n` points equally spaced in arc length.
pub fn resample_polyline(poly: &Polyline, n: usize) -> Result<Polyline, GeometryError> {
    if n < 2 {
        return Err(GeometryError::InvalidSampleCount(n));
    }
    let pts = poly.points();
    let mut cumulative = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].distance(w[1]);
        cumulative.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Err(GeometryError::DegenerateCurve);
    }

    let mut out = Vec::with_capacity(n);
    out.push(poly.first());
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 1 < pts.len() - 1 && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let t = if seg_len > 0.0 {
            ((target - cumulative[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(pts[seg].lerp(pts[seg + 1], t));
    }
    out.push(poly.last());
    Polyline::new(out)
}

/// Tightest axis-aligned rectangle around the points of `poly`.
pub fn min_bounding_rect(poly: &Polyline) -> BoundingRect {
    bounding_rect_of(poly.points())
}

pub(crate) fn bounding_rect_of(points: &[Point2]) -> BoundingRect {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    BoundingRect {
        x: (min_x + max_x) / 2.0,
        y: (min_y + max_y) / 2.0,
        w: max_x - min_x,
        h: max_y - min_y,
    }
}

pub fn apply_se2(t: &SE2Transform, poly: &Polyline) -> Polyline {
    Polyline {
        points: poly.points().iter().map(|&p| t.apply(p)).collect(),
    }
}

/// Transform taking coordinates in the previous ego frame to the current one.
///
/// Both poses map ego coordinates into the world frame.
pub fn relative_transform(pose_prev: &SE2Transform, pose_cur: &SE2Transform) -> SE2Transform {
    if pose_prev == pose_cur {
        return SE2Transform::identity();
    }
    pose_cur.inverse().compose(pose_prev)
}

/// Liang-Barsky clip of segment `a -> b` against the range rectangle.
/// Returns the parameter interval that lies inside.
fn clip_segment(a: Point2, b: Point2, range: &PerceptionRange) -> Option<(f64, f64)> {
    let d = b - a;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    let checks = [
        (-d.x, a.x + range.half_length),
        (d.x, range.half_length - a.x),
        (-d.y, a.y + range.half_width),
        (d.y, range.half_width - a.y),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

fn clamp_into(p: Point2, range: &PerceptionRange) -> Point2 {
    Point2::new(
        p.x.clamp(-range.half_length, range.half_length),
        p.y.clamp(-range.half_width, range.half_width),
    )
}

fn piece_length(points: &[Point2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Portion of `poly` inside `range`, with boundary crossings inserted exactly
/// on the rectangle edges. When the curve leaves and re-enters the range,
/// only the longest inside piece is kept.
pub fn clip_to_range(poly: &Polyline, range: &PerceptionRange) -> Option<Polyline> {
    let pts = poly.points();
    if pts.iter().all(|&p| range.contains(p, 0.0)) {
        return Some(poly.clone());
    }

    let mut pieces: Vec<Vec<Point2>> = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        match clip_segment(a, b, range) {
            Some((t0, t1)) => {
                let start = if t0 == 0.0 { a } else { clamp_into(a.lerp(b, t0), range) };
                let end = if t1 == 1.0 { b } else { clamp_into(a.lerp(b, t1), range) };
                if t0 > 0.0 || current.is_empty() {
                    if current.len() >= 2 {
                        pieces.push(std::mem::take(&mut current));
                    }
                    current.clear();
                    current.push(start);
                }
                if current.last() != Some(&end) {
                    current.push(end);
                }
                if t1 < 1.0 {
                    pieces.push(std::mem::take(&mut current));
                }
            }
            None => {
                if !current.is_empty() {
                    pieces.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }

    let mut best: Option<(f64, Vec<Point2>)> = None;
    for piece in pieces {
        if piece.len() < 2 {
            continue;
        }
        let len = piece_length(&piece);
        if len <= 0.0 {
            continue;
        }
        if best.as_ref().is_none_or(|(l, _)| len > *l) {
            best = Some((len, piece));
        }
    }
    best.and_then(|(_, points)| Polyline::new(points).ok())
}
