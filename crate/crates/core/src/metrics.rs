//! Chamfer-threshold average precision and the training loss terms.
//!
//! Predictions are assigned greedily in descending score order: each claims
//! the closest still-unclaimed ground-truth curve of its class, and counts as
//! a true positive when that Chamfer distance is below the threshold. AP is
//! the area under the all-point interpolated precision/recall curve, averaged
//! over the configured thresholds; mAP averages AP over classes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_to_range, resample_polyline, ClassId, MapElement, PerceptionRange};
use crate::matching::chamfer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("point count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(&'static str),
    #[error("{0} prediction frames for {1} ground-truth frames")]
    FrameCountMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Chamfer thresholds in meters, strictly increasing.
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassId>,
    pub range: PerceptionRange,
}

impl EvalConfig {
    /// 60 x 30 m range with thresholds {0.5, 1.0, 1.5} m.
    pub fn small_range() -> Self {
        Self {
            thresholds: vec![0.5, 1.0, 1.5],
            classes: vec![ClassId::PED_CROSSING, ClassId::LANE_DIVIDER, ClassId::ROAD_BOUNDARY],
            range: PerceptionRange::SMALL,
        }
    }

    /// 100 x 50 m range with thresholds {1.0, 1.5, 2.0} m.
    pub fn large_range() -> Self {
        Self {
            thresholds: vec![1.0, 1.5, 2.0],
            range: PerceptionRange::LARGE,
            ..Self::small_range()
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.thresholds.is_empty() {
            return Err(MetricsError::InvalidConfig("no thresholds"));
        }
        if !self.thresholds.iter().all(|t| t.is_finite() && *t > 0.0) {
            return Err(MetricsError::InvalidConfig("thresholds must be positive"));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::InvalidConfig("thresholds must be strictly increasing"));
        }
        if self.classes.is_empty() {
            return Err(MetricsError::InvalidConfig("no classes"));
        }
        if self.range.validate().is_err() {
            return Err(MetricsError::InvalidConfig("invalid range"));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::small_range()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub element: MapElement,
    pub score: f64,
}

fn curve_distance(a: &MapElement, b: &MapElement) -> f64 {
    chamfer(a.points(), b.points()).expect("polylines always hold points")
}

/// Prediction indices by descending score; equal scores keep input order.
fn ranking(preds: &[ScoredPrediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// True-positive flags aligned with `preds` (input order). Inputs are
/// expected to share one class.
pub fn instance_tp_fp(preds: &[ScoredPrediction], gts: &[MapElement], threshold: f64) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; preds.len()];
    for i in ranking(preds) {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(j, _)| !claimed[*j])
            .map(|(j, g)| (j, curve_distance(&preds[i].element, g)))
            .fold(None::<(usize, f64)>, |acc, (j, d)| match acc {
                Some((_, bd)) if bd <= d => acc,
                _ => Some((j, d)),
            });
        if let Some((j, d)) = best {
            if d < threshold {
                claimed[j] = true;
                flags[i] = true;
            }
        }
    }
    flags
}

/// All-point interpolated AP from `(score, is_tp)` pairs pooled over scenes.
///
/// With no ground truth, AP is 1 when there are also no predictions and 0
/// otherwise.
pub fn ap_from_ranked(detections: &[(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0));

    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in order {
        if detections[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // precision envelope, right to left
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP for a single scene at one threshold.
pub fn average_precision_at(preds: &[ScoredPrediction], gts: &[MapElement], threshold: f64) -> f64 {
    let flags = instance_tp_fp(preds, gts, threshold);
    let dets: Vec<(f64, bool)> = preds.iter().zip(flags).map(|(p, f)| (p.score, f)).collect();
    ap_from_ranked(&dets, gts.len())
}

/// AP for a single class-homogeneous scene, averaged over `cfg.thresholds`.
pub fn average_precision(preds: &[ScoredPrediction], gts: &[MapElement], cfg: &EvalConfig) -> f64 {
    let sum: f64 = cfg
        .thresholds
        .iter()
        .map(|&t| average_precision_at(preds, gts, t))
        .sum();
    sum / cfg.thresholds.len() as f64
}

/// Arithmetic mean of per-class APs; `None` when empty.
pub fn map_score(per_class_ap: &[f64]) -> Option<f64> {
    if per_class_ap.is_empty() {
        None
    } else {
        Some(per_class_ap.iter().sum::<f64>() / per_class_ap.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class: ClassId,
    pub name: String,
    pub num_gt: usize,
    pub num_pred: usize,
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassEval>,
    pub map: f64,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        write!(out, "{:<14}{:>6}{:>6}", "class", "gts", "preds").unwrap();
        for t in &self.thresholds {
            write!(out, "{:>10}", format!("AP@{t}")).unwrap();
        }
        writeln!(out, "{:>10}", "AP").unwrap();
        for c in &self.classes {
            write!(out, "{:<14}{:>6}{:>6}", c.name, c.num_gt, c.num_pred).unwrap();
            for ap in &c.ap_per_threshold {
                write!(out, "{:>10.4}", ap).unwrap();
            }
            writeln!(out, "{:>10.4}", c.ap).unwrap();
        }
        writeln!(out, "mAP {:.4}", self.map).unwrap();
        out
    }
}

fn restrict(element: &MapElement, range: &PerceptionRange) -> Option<MapElement> {
    let clipped = clip_to_range(&element.polyline, range)?;
    if clipped == element.polyline {
        return Some(element.clone());
    }
    let polyline = resample_polyline(&clipped, element.polyline.len()).ok()?;
    Some(MapElement::new(element.class, polyline))
}

/// Pools detections over all frames per class and threshold.
pub fn evaluate(
    preds_per_frame: &[Vec<ScoredPrediction>],
    gts_per_frame: &[Vec<MapElement>],
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    cfg.validate()?;
    if preds_per_frame.len() != gts_per_frame.len() {
        return Err(MetricsError::FrameCountMismatch(
            preds_per_frame.len(),
            gts_per_frame.len(),
        ));
    }
    let mut classes = Vec::with_capacity(cfg.classes.len());
    for &class in &cfg.classes {
        let mut pooled: Vec<Vec<(f64, bool)>> = vec![Vec::new(); cfg.thresholds.len()];
        let (mut num_gt, mut num_pred) = (0, 0);
        for (preds, gts) in preds_per_frame.iter().zip(gts_per_frame) {
            let gts: Vec<MapElement> = gts
                .iter()
                .filter(|g| g.class == class)
                .filter_map(|g| restrict(g, &cfg.range))
                .collect();
            let preds: Vec<ScoredPrediction> = preds
                .iter()
                .filter(|p| p.element.class == class)
                .filter_map(|p| {
                    restrict(&p.element, &cfg.range).map(|element| ScoredPrediction { element, score: p.score })
                })
                .collect();
            num_gt += gts.len();
            num_pred += preds.len();
            for (t, dets) in cfg.thresholds.iter().zip(pooled.iter_mut()) {
                let flags = instance_tp_fp(&preds, &gts, *t);
                dets.extend(preds.iter().zip(flags).map(|(p, f)| (p.score, f)));
            }
        }
        let ap_per_threshold: Vec<f64> = pooled.iter().map(|d| ap_from_ranked(d, num_gt)).collect();
        let ap = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;
        classes.push(ClassEval {
            class,
            name: class.name().to_string(),
            num_gt,
            num_pred,
            ap_per_threshold,
            ap,
        });
    }
    let aps: Vec<f64> = classes.iter().map(|c| c.ap).collect();
    Ok(EvalReport {
        thresholds: cfg.thresholds.clone(),
        map: map_score(&aps).unwrap_or(0.0),
        classes,
    })
}

const PROB_EPS: f64 = 1e-12;

/// Sigmoid focal loss for one probability.
pub fn focal_loss(prob: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Mean per-point L1 distance, taking the better of the two traversal
/// directions of `gt`.
pub fn line_loss(pred: &crate::geometry::Polyline, gt: &crate::geometry::Polyline) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::CountMismatch(pred.len(), gt.len()));
    }
    let l1 = |gt_points: &mut dyn Iterator<Item = &crate::geometry::Point2>| {
        let total: f64 = pred
            .points()
            .iter()
            .zip(gt_points)
            .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
            .sum();
        total / pred.len() as f64
    };
    let forward = l1(&mut gt.points().iter());
    let backward = l1(&mut gt.points().iter().rev());
    Ok(forward.min(backward))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub focal: f64,
    pub line: f64,
    pub trans: f64,
    pub dn_focal: f64,
    pub dn_line: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            focal: 4.0,
            line: 50.0,
            trans: 0.1,
            dn_focal: 4.0,
            dn_line: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MapLossTerms {
    pub focal: f64,
    pub line: f64,
    /// Opaque translation-loss value computed elsewhere.
    pub trans: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DenoiseLossTerms {
    pub focal: f64,
    pub line: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTotals {
    pub map: f64,
    pub denoise: f64,
    pub train: f64,
}

pub fn total_losses(map: &MapLossTerms, dn: &DenoiseLossTerms, w: &LossWeights) -> LossTotals {
    let map_total = w.focal * map.focal + w.line * map.line + w.trans * map.trans;
    let denoise = w.dn_focal * dn.focal + w.dn_line * dn.line;
    LossTotals {
        map: map_total,
        denoise,
        train: map_total + denoise,
    }
}
