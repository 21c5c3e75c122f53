//! Chamfer distances and adaptive temporal matching.
//!
//! Every current-frame curve looks for the closest (by symmetric Chamfer
//! distance) ego-warped previous-frame curve of the same class. The pair is
//! accepted when the distance is below a per-instance threshold proportional
//! to the mean extent of the current curve's bounding box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{min_bounding_rect, BoundingRect, MapElement, Point2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("degenerate instance")]
    DegenerateInstance,
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Tolerance degree: fraction of the mean box extent accepted as distance.
    pub alpha: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

impl MatchParams {
    pub fn new(alpha: f64) -> Result<Self, MatchError> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self { alpha })
        } else {
            Err(MatchError::InvalidTolerance(alpha))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub current_index: usize,
    /// Closest same-class previous curve, if any candidate existed.
    pub prev_index: Option<usize>,
    /// Chamfer distance to `prev_index`; `None` when there was no candidate.
    pub distance: Option<f64>,
    pub threshold: f64,
    pub matched: bool,
}

impl MatchResult {
    /// Distance with `+inf` standing in for "no candidate".
    pub fn distance_or_inf(&self) -> f64 {
        self.distance.unwrap_or(f64::INFINITY)
    }

    /// Index of the matched previous curve, only when the match was accepted.
    pub fn matched_prev(&self) -> Option<usize> {
        if self.matched {
            self.prev_index
        } else {
            None
        }
    }
}

/// Mean over `s1` of the distance to the nearest point of `s2`.
pub fn chamfer_directional(s1: &[Point2], s2: &[Point2]) -> Result<f64, MatchError> {
    if s1.is_empty() || s2.is_empty() {
        return Err(MatchError::EmptyPointSet);
    }
    let total: f64 = s1
        .iter()
        .map(|p| {
            s2.iter()
                .map(|q| p.distance(*q))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / s1.len() as f64)
}

/// Symmetric Chamfer distance: the sum of both directional terms.
pub fn chamfer(s1: &[Point2], s2: &[Point2]) -> Result<f64, MatchError> {
    Ok(chamfer_directional(s1, s2)? + chamfer_directional(s2, s1)?)
}

/// Matching threshold `alpha * (w + h) / 2` of a curve's bounding box.
pub fn adaptive_threshold(rect: &BoundingRect, alpha: f64) -> Result<f64, MatchError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(MatchError::InvalidTolerance(alpha));
    }
    let extent = rect.w + rect.h;
    if !(extent > 0.0) {
        return Err(MatchError::DegenerateInstance);
    }
    Ok(alpha * extent / 2.0)
}

/// One result per current element. Ties in distance go to the lowest previous
/// index; several current curves may claim the same previous one.
///
/// Inputs are expected to be resampled to a common point count.
pub fn adaptive_temporal_match(
    prev_warped: &[MapElement],
    current: &[MapElement],
    params: &MatchParams,
) -> Result<Vec<MatchResult>, MatchError> {
    current
        .iter()
        .enumerate()
        .map(|(i, cur)| {
            let threshold = adaptive_threshold(&min_bounding_rect(&cur.polyline), params.alpha)?;
            let mut best: Option<(usize, f64)> = None;
            for (j, prev) in prev_warped.iter().enumerate() {
                if prev.class != cur.class {
                    continue;
                }
                let d = chamfer(cur.points(), prev.points())?;
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            Ok(MatchResult {
                current_index: i,
                prev_index: best.map(|(j, _)| j),
                distance: best.map(|(_, d)| d),
                threshold,
                matched: best.is_some_and(|(_, d)| d < threshold),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ClassId, Polyline};

    fn pts(v: &[(f64, f64)]) -> Vec<Point2> {
        v.iter().copied().map(Point2::from).collect()
    }

    fn elem(class: ClassId, v: &[(f64, f64)]) -> MapElement {
        MapElement::new(class, Polyline::from_xy(v).unwrap())
    }

    #[test]
    fn chamfer_examples() {
        let a = pts(&[(0.0, 0.0)]);
        let b = pts(&[(3.0, 4.0)]);
        assert_eq!(chamfer_directional(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_directional(&a, &b).unwrap(), 5.0);
        assert_eq!(chamfer(&a, &b).unwrap(), 10.0);
        let two = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(chamfer_directional(&two, &a).unwrap(), 0.5);
        assert_eq!(chamfer(&[], &a), Err(MatchError::EmptyPointSet));
    }

    #[test]
    fn threshold_examples() {
        let r = BoundingRect { x: 0.0, y: 0.0, w: 4.0, h: 2.0 };
        assert!((adaptive_threshold(&r, 0.1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(adaptive_threshold(&r, 0.0), Err(MatchError::InvalidTolerance(0.0)));
        let flat = BoundingRect { x: 0.0, y: 0.0, w: 10.0, h: 0.0 };
        assert!((adaptive_threshold(&flat, 0.1).unwrap() - 0.5).abs() < 1e-15);
        let point = BoundingRect { x: 0.0, y: 0.0, w: 0.0, h: 0.0 };
        assert_eq!(adaptive_threshold(&point, 0.1), Err(MatchError::DegenerateInstance));
    }

    #[test]
    fn identical_frames_match_with_zero_distance() {
        let cur = vec![
            elem(ClassId::LANE_DIVIDER, &[(0.0, 0.0), (10.0, 0.0)]),
            elem(ClassId::ROAD_BOUNDARY, &[(0.0, 5.0), (10.0, 6.0)]),
        ];
        let res = adaptive_temporal_match(&cur, &cur, &MatchParams::default()).unwrap();
        for (i, r) in res.iter().enumerate() {
            assert!(r.matched);
            assert_eq!(r.prev_index, Some(i));
            assert_eq!(r.distance, Some(0.0));
        }
    }

    #[test]
    fn far_previous_is_rejected() {
        let cur = vec![elem(ClassId::LANE_DIVIDER, &[(0.0, 0.0), (2.0, 0.0), (4.0, 2.0)])];
        let prev = vec![elem(ClassId::LANE_DIVIDER, &[(10.0, 0.0), (12.0, 0.0), (14.0, 2.0)])];
        let res = adaptive_temporal_match(&prev, &cur, &MatchParams::default()).unwrap();
        assert_eq!(res[0].prev_index, Some(0));
        assert!(!res[0].matched);
        assert!(res[0].distance.unwrap() >= 10.0);
    }

    #[test]
    fn class_restricted_and_empty_previous() {
        let cur = vec![elem(ClassId::LANE_DIVIDER, &[(0.0, 0.0), (10.0, 0.0)])];
        let prev = vec![elem(ClassId::PED_CROSSING, &[(0.0, 0.0), (10.0, 0.0)])];
        let res = adaptive_temporal_match(&prev, &cur, &MatchParams::default()).unwrap();
        assert_eq!(res[0].prev_index, None);
        assert!(!res[0].matched);
        assert_eq!(res[0].distance_or_inf(), f64::INFINITY);

        let res = adaptive_temporal_match(&[], &cur, &MatchParams::default()).unwrap();
        assert_eq!(res.len(), 1);
        assert!(!res[0].matched);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cur = vec![elem(ClassId::LANE_DIVIDER, &[(0.0, 0.0), (10.0, 0.0)])];
        let prev = vec![
            elem(ClassId::LANE_DIVIDER, &[(0.0, 0.1), (10.0, 0.1)]),
            elem(ClassId::LANE_DIVIDER, &[(0.0, -0.1), (10.0, -0.1)]),
        ];
        let res = adaptive_temporal_match(&prev, &cur, &MatchParams::default()).unwrap();
        assert_eq!(res[0].prev_index, Some(0));
    }
}
