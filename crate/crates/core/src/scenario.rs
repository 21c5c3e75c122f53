//! Synthetic driving scenarios with exact ground truth.
//!
//! A world is a straight road corridor along the world x axis holding dashed
//! lane dividers, segmented road boundaries and rectangular pedestrian
//! crossings. The ego drives with constant speed and yaw rate; every frame
//! reports the world elements seen from the ego pose, clipped to the
//! perception range and resampled to a fixed point count.
//!
//! # Scenario file
//!
//! One frame per line, whitespace-separated, numbers in shortest round-trip
//! decimal form. Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! <index> <timestamp> <pose_x> <pose_y> <pose_yaw> <num_elements> { <class> <num_points> { <x> <y> }* }*
//! ```
//!
//! # Prediction file
//!
//! Same element grammar with a score after the class, keyed by frame index:
//!
//! ```text
//! <index> <num_elements> { <class> <score> <num_points> { <x> <y> }* }*
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_se2, clip_to_range, resample_polyline, wrap_angle, ClassId, MapElement,
    PerceptionRange, Point2, Polyline, SE2Transform, DEFAULT_POINTS_PER_CURVE,
};
use crate::metrics::ScoredPrediction;
use crate::noising::RngState;
use crate::streaming::FrameRecord;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_frames: usize,
    /// Seconds between frames; 0.5 gives 2 Hz.
    pub frame_interval: f64,
    /// Meters per second.
    pub speed: f64,
    /// Radians per second.
    pub yaw_rate: f64,
    pub range: PerceptionRange,
    pub n_points: usize,
    /// Divider pieces per meter of corridor.
    pub divider_density: f64,
    /// Boundary pieces per meter of corridor.
    pub boundary_density: f64,
    /// Crossings per meter of corridor.
    pub crossing_density: f64,
    /// Corridor length; derived from the trajectory when absent.
    pub corridor_length: Option<f64>,
    pub num_lanes: usize,
    pub lane_width: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_frames: 20,
            frame_interval: 0.5,
            speed: 10.0,
            yaw_rate: 0.0,
            range: PerceptionRange::SMALL,
            n_points: DEFAULT_POINTS_PER_CURVE,
            divider_density: 0.04,
            boundary_density: 0.03,
            crossing_density: 0.015,
            corridor_length: None,
            num_lanes: 3,
            lane_width: 3.5,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.num_frames < 1 {
            return Err(ScenarioError::InvalidConfig("num_frames must be at least 1"));
        }
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return Err(ScenarioError::InvalidConfig("frame_interval must be positive"));
        }
        if !self.speed.is_finite() || !self.yaw_rate.is_finite() {
            return Err(ScenarioError::InvalidConfig("speed and yaw rate must be finite"));
        }
        if self.range.validate().is_err() {
            return Err(ScenarioError::InvalidConfig("invalid perception range"));
        }
        if self.n_points < 2 {
            return Err(ScenarioError::InvalidConfig("n_points must be at least 2"));
        }
        let densities = [self.divider_density, self.boundary_density, self.crossing_density];
        if !densities.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return Err(ScenarioError::InvalidConfig("densities must be non-negative"));
        }
        if self.num_lanes < 1 || !(self.lane_width > 0.0) {
            return Err(ScenarioError::InvalidConfig("need at least one lane of positive width"));
        }
        if let Some(l) = self.corridor_length {
            if !(l.is_finite() && l > 0.0) {
                return Err(ScenarioError::InvalidConfig("corridor length must be positive"));
            }
        }
        Ok(())
    }

    /// Corridor length covering the whole trajectory plus the view range.
    pub fn corridor_length(&self) -> f64 {
        self.corridor_length.unwrap_or_else(|| {
            let travel = self.speed.abs() * self.frame_interval * self.num_frames.saturating_sub(1) as f64;
            travel + 2.0 * self.range.half_length + 40.0
        })
    }

    /// World x where the corridor starts.
    pub fn corridor_start(&self) -> f64 {
        -self.range.half_length - 20.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    /// Elements in world coordinates.
    pub elements: Vec<MapElement>,
    /// Corridor length in meters.
    pub extent: f64,
}

impl WorldMap {
    pub fn count(&self, class: ClassId) -> usize {
        self.elements.iter().filter(|e| e.class == class).count()
    }
}

/// Polyline along `y = y0 + amp * sin(...)` from `x_start` to `x_end`, one
/// vertex roughly every 2 m.
fn wavy_piece(x_start: f64, x_end: f64, y0: f64, amp: f64, phase: f64) -> Option<Polyline> {
    let len = x_end - x_start;
    let steps = ((len / 2.0).ceil() as usize).max(1);
    let points = (0..=steps)
        .map(|k| {
            let x = x_start + len * k as f64 / steps as f64;
            Point2::new(x, y0 + amp * (phase + x / 15.0).sin())
        })
        .collect();
    Polyline::new(points).ok()
}

/// Splits `count` pieces over a line of the corridor.
fn line_pieces(
    count: usize,
    start: f64,
    length: f64,
    y0: f64,
    max_amp: f64,
    rng: &mut RngState,
) -> Vec<Polyline> {
    if count == 0 {
        return Vec::new();
    }
    let seg = length / count as f64;
    let gap = (0.15 * seg).min(3.0);
    let stagger = rng.uniform(0.0, gap);
    (0..count)
        .filter_map(|j| {
            let a = start + j as f64 * seg + stagger;
            let b = (a + seg - gap).min(start + length);
            let amp = rng.uniform(0.0, max_amp);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            wavy_piece(a, b, y0, amp, phase)
        })
        .collect()
}

/// Distributes `total` pieces round-robin over `lines` lines.
fn per_line(total: usize, lines: usize) -> Vec<usize> {
    (0..lines).map(|l| total / lines + usize::from(l < total % lines)).collect()
}

fn count_for(density: f64, length: f64) -> usize {
    (density * length).ceil() as usize
}

pub fn generate_world(cfg: &ScenarioConfig, rng: &mut RngState) -> WorldMap {
    let length = cfg.corridor_length();
    let start = cfg.corridor_start();
    let road_half = cfg.num_lanes as f64 * cfg.lane_width / 2.0;
    let mut elements = Vec::new();

    let lane_lines: Vec<f64> = if cfg.num_lanes < 2 {
        vec![0.0]
    } else {
        (1..cfg.num_lanes).map(|k| -road_half + k as f64 * cfg.lane_width).collect()
    };
    let n_div = count_for(cfg.divider_density, length);
    for (&y, count) in lane_lines.iter().zip(per_line(n_div, lane_lines.len())) {
        for poly in line_pieces(count, start, length, y, 0.3, rng) {
            elements.push(MapElement::new(ClassId::LANE_DIVIDER, poly));
        }
    }

    let n_bound = count_for(cfg.boundary_density, length);
    let sides = [road_half + 0.5, -road_half - 0.5];
    for (&y, count) in sides.iter().zip(per_line(n_bound, 2)) {
        for poly in line_pieces(count, start, length, y, 0.6, rng) {
            elements.push(MapElement::new(ClassId::ROAD_BOUNDARY, poly));
        }
    }

    let n_cross = count_for(cfg.crossing_density, length);
    for i in 0..n_cross {
        let slot = length / n_cross as f64;
        let cx = start + (i as f64 + 0.5) * slot + rng.uniform(-0.2, 0.2) * slot;
        let depth = rng.uniform(3.0, 5.0);
        let skew = rng.uniform(-0.15, 0.15);
        let t = SE2Transform::new(skew, cx, 0.0);
        let corners = [
            (-depth / 2.0, -road_half),
            (depth / 2.0, -road_half),
            (depth / 2.0, road_half),
            (-depth / 2.0, road_half),
            (-depth / 2.0, -road_half),
        ];
        let points = corners.iter().map(|&(x, y)| t.apply(Point2::new(x, y))).collect();
        if let Ok(poly) = Polyline::new(points) {
            elements.push(MapElement::new(ClassId::PED_CROSSING, poly));
        }
    }

    WorldMap {
        elements,
        extent: length,
    }
}

/// World elements as seen from `pose`: moved into the ego frame, clipped to
/// `range` and resampled to `n_points`.
pub fn frame_ground_truth(
    world: &WorldMap,
    pose: &SE2Transform,
    range: &PerceptionRange,
    n_points: usize,
) -> Vec<MapElement> {
    let to_ego = pose.inverse();
    world
        .elements
        .iter()
        .filter_map(|e| {
            let local = apply_se2(&to_ego, &e.polyline);
            let clipped = clip_to_range(&local, range)?;
            let poly = resample_polyline(&clipped, n_points).ok()?;
            Some(MapElement::new(e.class, poly))
        })
        .collect()
}

/// Ego poses under constant speed and yaw rate, starting at the origin
/// heading along +x.
pub fn ego_trajectory(cfg: &ScenarioConfig) -> Vec<SE2Transform> {
    let dt = cfg.frame_interval;
    let (v, w) = (cfg.speed, cfg.yaw_rate);
    let (mut x, mut y, mut yaw) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut poses = Vec::with_capacity(cfg.num_frames);
    for _ in 0..cfg.num_frames {
        poses.push(SE2Transform::new(yaw, x, y));
        if w.abs() < 1e-12 {
            x += v * dt * yaw.cos();
            y += v * dt * yaw.sin();
        } else {
            let next = yaw + w * dt;
            x += v / w * (next.sin() - yaw.sin());
            y -= v / w * (next.cos() - yaw.cos());
            yaw = wrap_angle(next);
        }
    }
    poses
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Vec<FrameRecord>, ScenarioError> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let world = generate_world(cfg, &mut rng);
    Ok(ego_trajectory(cfg)
        .into_iter()
        .enumerate()
        .map(|(index, pose)| FrameRecord {
            index,
            timestamp: index as f64 * cfg.frame_interval,
            elements: frame_ground_truth(&world, &pose, &cfg.range, cfg.n_points),
            ego_pose: pose,
        })
        .collect())
}

fn push_points(out: &mut String, poly: &Polyline) {
    write!(out, " {}", poly.len()).unwrap();
    for p in poly.points() {
        write!(out, " {} {}", p.x, p.y).unwrap();
    }
}

pub fn format_frame(frame: &FrameRecord) -> String {
    let t = frame.ego_pose.translation();
    let mut out = format!(
        "{} {} {} {} {} {}",
        frame.index,
        frame.timestamp,
        t.x,
        t.y,
        frame.ego_pose.rotation(),
        frame.elements.len()
    );
    for e in &frame.elements {
        write!(out, " {}", e.class).unwrap();
        push_points(&mut out, &e.polyline);
    }
    out
}

pub fn write_scenario_to(frames: &[FrameRecord], mut w: impl Write) -> Result<(), ScenarioError> {
    writeln!(w, "# index timestamp pose_x pose_y pose_yaw num_elements {{class num_points {{x y}}}}")?;
    for f in frames {
        writeln!(w, "{}", format_frame(f))?;
    }
    Ok(())
}

pub fn write_scenario(frames: &[FrameRecord], path: &Path) -> Result<(), ScenarioError> {
    let mut buf = Vec::new();
    write_scenario_to(frames, &mut buf)?;
    Ok(std::fs::write(path, buf)?)
}

struct LineParser<'a> {
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl<'a> LineParser<'a> {
    fn err(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str, ScenarioError> {
        let line = self.line;
        self.tokens.next().ok_or_else(|| ScenarioError::Parse {
            line,
            message: format!("truncated record: missing {what}"),
        })
    }

    fn count(&mut self, what: &str) -> Result<usize, ScenarioError> {
        let t = self.token(what)?;
        t.parse().map_err(|_| self.err(format!("invalid {what} `{t}`")))
    }

    fn float(&mut self, what: &str) -> Result<f64, ScenarioError> {
        let t = self.token(what)?;
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(format!("invalid {what} `{t}`"))),
        }
    }

    fn polyline(&mut self) -> Result<Polyline, ScenarioError> {
        let n = self.count("point count")?;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.float("x coordinate")?;
            let y = self.float("y coordinate")?;
            points.push(Point2::new(x, y));
        }
        Polyline::new(points).map_err(|e| self.err(e.to_string()))
    }

    fn finish(&mut self) -> Result<(), ScenarioError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected trailing token `{t}`"))),
        }
    }
}

fn records(r: impl Read) -> impl Iterator<Item = Result<(usize, String), ScenarioError>> {
    BufReader::new(r)
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(e.into())),
            Ok(l) => {
                let trimmed = l.trim();
                (!trimmed.is_empty() && !trimmed.starts_with('#')).then(|| Ok((i + 1, l)))
            }
        })
}

pub fn parse_frame(line_no: usize, line: &str) -> Result<FrameRecord, ScenarioError> {
    let mut p = LineParser {
        line: line_no,
        tokens: line.split_whitespace(),
    };
    let index = p.count("frame index")?;
    let timestamp = p.float("timestamp")?;
    let x = p.float("pose x")?;
    let y = p.float("pose y")?;
    let yaw = p.float("pose yaw")?;
    let n = p.count("element count")?;
    let mut elements = Vec::with_capacity(n);
    for _ in 0..n {
        let class = ClassId(p.count("class")?);
        elements.push(MapElement::new(class, p.polyline()?));
    }
    p.finish()?;
    Ok(FrameRecord {
        index,
        timestamp,
        ego_pose: SE2Transform::new(yaw, x, y),
        elements,
    })
}

pub fn read_scenario_from(r: impl Read) -> Result<Vec<FrameRecord>, ScenarioError> {
    records(r)
        .map(|rec| rec.and_then(|(line, text)| parse_frame(line, &text)))
        .collect()
}

pub fn read_scenario(path: &Path) -> Result<Vec<FrameRecord>, ScenarioError> {
    read_scenario_from(std::fs::File::open(path)?)
}

/// Scored predictions for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub index: usize,
    pub predictions: Vec<ScoredPrediction>,
}

pub fn write_predictions_to(frames: &[PredictionFrame], mut w: impl Write) -> Result<(), ScenarioError> {
    writeln!(w, "# index num_elements {{class score num_points {{x y}}}}")?;
    for f in frames {
        let mut out = format!("{} {}", f.index, f.predictions.len());
        for p in &f.predictions {
            write!(out, " {} {}", p.element.class, p.score).unwrap();
            push_points(&mut out, &p.element.polyline);
        }
        writeln!(w, "{out}")?;
    }
    Ok(())
}

pub fn write_predictions(frames: &[PredictionFrame], path: &Path) -> Result<(), ScenarioError> {
    let mut buf = Vec::new();
    write_predictions_to(frames, &mut buf)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn read_predictions_from(r: impl Read) -> Result<Vec<PredictionFrame>, ScenarioError> {
    records(r)
        .map(|rec| {
            let (line, text) = rec?;
            let mut p = LineParser {
                line,
                tokens: text.split_whitespace(),
            };
            let index = p.count("frame index")?;
            let n = p.count("element count")?;
            let mut predictions = Vec::with_capacity(n);
            for _ in 0..n {
                let class = ClassId(p.count("class")?);
                let score = p.float("score")?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(p.err(format!("score {score} outside [0, 1]")));
                }
                predictions.push(ScoredPrediction {
                    element: MapElement::new(class, p.polyline()?),
                    score,
                });
            }
            p.finish()?;
            Ok(PredictionFrame { index, predictions })
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionFrame>, ScenarioError> {
    read_predictions_from(std::fs::File::open(path)?)
}
