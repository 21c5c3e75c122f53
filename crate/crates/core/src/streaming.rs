//! Frame-to-frame harness: query propagation, denoising batch assembly and
//! the per-frame pipeline.
//!
//! No decoder runs here. Per frame the harness warps the previous ground
//! truth into the current ego frame, matches it against the current ground
//! truth, noises matched instances starting from their warped previous curve
//! (with decayed noise) and unmatched ones from the current curve, builds a
//! query for every noisy sample and keeps the best-scoring queries as the
//! stream state for the next frame. Scores are synthetic: a candidate's score
//! is `1 / (1 + d)` with `d` its Chamfer distance to the nearest current
//! ground-truth curve.

use serde::{Deserialize, Serialize};

use crate::embedding::{DenseNetwork, EmbeddingError, QueryEmbedding, QueryNetworks};
use crate::geometry::{
    apply_se2, clip_to_range, relative_transform, resample_polyline, ClassId, MapElement,
    PerceptionRange, Polyline, SE2Transform, DEFAULT_POINTS_PER_CURVE,
};
use crate::matching::{adaptive_temporal_match, chamfer, MatchParams, MatchResult};
use crate::noising::{decay_rate, make_noisy_instance, NoiseParams, NoiseSource, NoisySample, RngState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub top_k: usize,
    /// Total number of denoising queries per frame.
    pub dn_query_budget: usize,
    pub n_points: usize,
    pub num_classes: usize,
    pub noise: NoiseParams,
    pub matching: MatchParams,
    pub range: PerceptionRange,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            top_k: 33,
            dn_query_budget: 60,
            n_points: DEFAULT_POINTS_PER_CURVE,
            num_classes: ClassId::COUNT,
            noise: NoiseParams::default(),
            matching: MatchParams::default(),
            range: PerceptionRange::SMALL,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.dn_query_budget < 1 {
            return Err(Error::Config("dn_query_budget must be at least 1".into()));
        }
        if self.n_points < 2 {
            return Err(Error::Config("n_points must be at least 2".into()));
        }
        self.noise.validate()?;
        MatchParams::new(self.matching.alpha)?;
        self.range.validate()?;
        Ok(())
    }
}

/// Queries carried between frames with their scores and reference curves.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamState {
    pub queries: Vec<QueryEmbedding>,
    pub scores: Vec<f64>,
    pub ref_points: Vec<Polyline>,
    pub frame_index: usize,
}

impl StreamState {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    fn check_aligned(&self) -> Result<()> {
        if self.scores.len() != self.queries.len() || self.ref_points.len() != self.queries.len() {
            return Err(Error::Config("stream state lists are misaligned".into()));
        }
        Ok(())
    }
}

/// Indices of the `k` highest scores, descending; equal scores keep index order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}

/// Keeps the `k` best queries and moves them into the next ego frame:
/// reference curves are transformed by `t`, queries get the residual update
/// `q + phi(concat(q, flatten(t)))`.
pub fn propagate_queries(
    state: &StreamState,
    t: &SE2Transform,
    phi: &DenseNetwork,
    k: usize,
) -> Result<StreamState> {
    state.check_aligned()?;
    let flat = t.flatten();
    let mut next = StreamState {
        frame_index: state.frame_index + 1,
        ..StreamState::default()
    };
    for i in top_k_indices(&state.scores, k) {
        let q = &state.queries[i].values;
        if phi.in_dim() != q.len() + flat.len() || phi.out_dim() != q.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: q.len() + flat.len(),
                actual: phi.in_dim(),
            }
            .into());
        }
        let mut input = Vec::with_capacity(q.len() + flat.len());
        input.extend_from_slice(q);
        input.extend_from_slice(&flat);
        let update = phi.forward(&input)?;
        let values = q.iter().zip(&update).map(|(a, b)| a + b).collect();
        next.queries.push(QueryEmbedding { values });
        next.scores.push(state.scores[i]);
        next.ref_points.push(apply_se2(t, &state.ref_points[i]));
    }
    Ok(next)
}

/// Denoising samples for one frame, `groups` copies of one sample per
/// current ground-truth element.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DnBatch {
    pub samples: Vec<NoisySample>,
    pub groups: usize,
    pub group_size: usize,
    pub target_indices: Vec<usize>,
}

/// Number of denoising groups for `gt_count` elements under `budget`.
pub fn dn_group_count(budget: usize, gt_count: usize) -> usize {
    if gt_count == 0 {
        0
    } else {
        (budget / gt_count).max(1)
    }
}

pub fn assemble_dn_batch(
    current_gt: &[MapElement],
    prev_gt_warped: &[MapElement],
    matches: &[MatchResult],
    cfg: &StreamConfig,
    rng: &mut RngState,
) -> Result<DnBatch> {
    if current_gt.is_empty() {
        return Ok(DnBatch::default());
    }
    if matches.len() != current_gt.len() {
        return Err(Error::Config(format!(
            "{} match results for {} ground-truth elements",
            matches.len(),
            current_gt.len()
        )));
    }

    // Source curve and decay per ground-truth element; identical across groups.
    let mut plan = Vec::with_capacity(current_gt.len());
    for (i, m) in matches.iter().enumerate() {
        if m.current_index != i {
            return Err(Error::Config("match results are not aligned with ground truth".into()));
        }
        match m.matched_prev() {
            Some(j) => {
                let source = prev_gt_warped.get(j).ok_or_else(|| {
                    Error::Config(format!("match refers to missing previous element {j}"))
                })?;
                let decay = decay_rate(
                    m.distance_or_inf(),
                    m.threshold,
                    cfg.matching.alpha,
                    cfg.noise.decay_scale,
                )?;
                plan.push((source, decay, NoiseSource::Stream));
            }
            None => plan.push((&current_gt[i], 1.0, NoiseSource::Normal)),
        }
    }

    let groups = dn_group_count(cfg.dn_query_budget, current_gt.len());
    let mut batch = DnBatch {
        samples: Vec::with_capacity(groups * current_gt.len()),
        groups,
        group_size: current_gt.len(),
        target_indices: Vec::with_capacity(groups * current_gt.len()),
    };
    for _ in 0..groups {
        for (i, &(source, decay, kind)) in plan.iter().enumerate() {
            let sample = make_noisy_instance(source, decay, &cfg.noise, cfg.num_classes, i, kind, rng)?;
            batch.samples.push(sample);
            batch.target_indices.push(i);
        }
    }
    Ok(batch)
}

/// Ground truth of one frame in its own ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    /// Ego pose in the world frame.
    pub ego_pose: SE2Transform,
    pub elements: Vec<MapElement>,
}

/// Previous-frame elements moved into the current ego frame, clipped to
/// `range` and resampled to `n_points`. Returns the surviving elements and
/// their indices in `prev`.
pub fn warp_previous(
    prev: &[MapElement],
    t: &SE2Transform,
    range: &PerceptionRange,
    n_points: usize,
) -> Result<(Vec<MapElement>, Vec<usize>)> {
    let mut warped = Vec::new();
    let mut sources = Vec::new();
    for (j, e) in prev.iter().enumerate() {
        let moved = apply_se2(t, &e.polyline);
        let Some(clipped) = clip_to_range(&moved, range) else {
            continue;
        };
        // untouched curves are kept bit-exact
        let polyline = if clipped.len() == n_points && clipped == moved {
            clipped
        } else {
            resample_polyline(&clipped, n_points)?
        };
        warped.push(MapElement::new(e.class, polyline));
        sources.push(j);
    }
    Ok((warped, sources))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub group: usize,
    pub target_index: usize,
    pub source: NoiseSource,
    pub original_class: ClassId,
    pub class: ClassId,
    pub decay: f64,
    pub noise: crate::noising::NoiseVector,
    pub points: Vec<[f64; 2]>,
    /// Euclidean norm of the built query.
    pub query_norm: f64,
}

/// Per-frame summary written as one JSON line by `sqd-run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_index: usize,
    pub timestamp: f64,
    /// Previous-to-current ego motion as (yaw, tx, ty); absent on the first frame.
    pub ego_motion: Option<[f64; 3]>,
    pub num_gt: usize,
    pub num_prev_warped: usize,
    /// Index into the previous frame's ground truth for every warped element.
    pub prev_sources: Vec<usize>,
    pub matched_count: usize,
    /// Fraction of current elements with an accepted match; absent without a
    /// previous frame or without current elements.
    pub matched_fraction: Option<f64>,
    /// Mean Chamfer distance over accepted matches.
    pub mean_distance: Option<f64>,
    /// Mean noise decay over accepted matches.
    pub mean_decay: Option<f64>,
    pub groups: usize,
    pub group_size: usize,
    pub num_samples: usize,
    pub num_stream: usize,
    pub num_normal: usize,
    /// Mean norm of the applied (decayed) noise vectors.
    pub mean_noise_magnitude: Option<f64>,
    pub max_noise_magnitude: Option<f64>,
    pub state_size: usize,
    pub matches: Vec<MatchResult>,
    pub samples: Vec<SampleRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn score_against(reference: &Polyline, gt: &[MapElement]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for e in gt {
        best = best.min(chamfer(reference.points(), e.points())?);
    }
    Ok(if best.is_finite() { 1.0 / (1.0 + best) } else { 0.0 })
}

/// Runs one frame of the pipeline and returns the next stream state with the
/// frame's report.
pub fn run_stream_frame(
    state: Option<&StreamState>,
    frame: &FrameRecord,
    prev_frame: Option<&FrameRecord>,
    cfg: &StreamConfig,
    nets: &QueryNetworks,
    rng: &mut RngState,
) -> Result<(StreamState, FrameReport)> {
    cfg.validate()?;
    nets.validate()?;
    if nets.config.n_points != cfg.n_points {
        return Err(Error::Config(format!(
            "networks expect {} points per curve, stream config has {}",
            nets.config.n_points, cfg.n_points
        )));
    }
    if let Some(e) = frame.elements.iter().find(|e| e.polyline.len() != cfg.n_points) {
        return Err(Error::Config(format!(
            "frame {} has a curve with {} points, expected {}",
            frame.index,
            e.polyline.len(),
            cfg.n_points
        )));
    }

    let transform = prev_frame.map(|p| relative_transform(&p.ego_pose, &frame.ego_pose));
    let (prev_warped, prev_sources) = match (prev_frame, &transform) {
        (Some(p), Some(t)) => warp_previous(&p.elements, t, &cfg.range, cfg.n_points)?,
        _ => (Vec::new(), Vec::new()),
    };

    let matches = adaptive_temporal_match(&prev_warped, &frame.elements, &cfg.matching)?;
    let batch = assemble_dn_batch(&frame.elements, &prev_warped, &matches, cfg, rng)?;

    let mut candidates = match state {
        Some(s) => {
            let t = transform.unwrap_or_default();
            propagate_queries(s, &t, &nets.propagation, cfg.top_k)?
        }
        None => StreamState::default(),
    };

    let mut samples = Vec::with_capacity(batch.samples.len());
    for (k, sample) in batch.samples.iter().enumerate() {
        let query = nets.build_query(sample.element.class, sample.element.points())?;
        let query_norm = query.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        samples.push(SampleRecord {
            group: k / batch.group_size,
            target_index: sample.original_index,
            source: sample.source,
            original_class: frame.elements[sample.original_index].class,
            class: sample.element.class,
            decay: sample.decay,
            noise: sample.noise,
            points: sample.element.points().iter().map(|p| [p.x, p.y]).collect(),
            query_norm,
        });
        candidates.queries.push(query);
        candidates.ref_points.push(sample.element.polyline.clone());
        candidates.scores.push(0.0);
    }
    for (score, reference) in candidates.scores.iter_mut().zip(&candidates.ref_points) {
        *score = score_against(reference, &frame.elements)?;
    }

    let keep = top_k_indices(&candidates.scores, cfg.top_k);
    let next_state = StreamState {
        queries: keep.iter().map(|&i| candidates.queries[i].clone()).collect(),
        scores: keep.iter().map(|&i| candidates.scores[i]).collect(),
        ref_points: keep.iter().map(|&i| candidates.ref_points[i].clone()).collect(),
        frame_index: frame.index,
    };

    let accepted: Vec<&MatchResult> = matches.iter().filter(|m| m.matched).collect();
    let decays: Vec<f64> = accepted
        .iter()
        .map(|m| decay_rate(m.distance_or_inf(), m.threshold, cfg.matching.alpha, cfg.noise.decay_scale))
        .collect::<std::result::Result<_, _>>()?;
    let applied: Vec<f64> = batch
        .samples
        .iter()
        .map(|s| s.noise.scaled(s.decay).magnitude())
        .collect();
    let num_stream = batch.samples.iter().filter(|s| s.source == NoiseSource::Stream).count();

    let report = FrameReport {
        frame_index: frame.index,
        timestamp: frame.timestamp,
        ego_motion: transform.map(|t| [t.rotation(), t.translation().x, t.translation().y]),
        num_gt: frame.elements.len(),
        num_prev_warped: prev_warped.len(),
        prev_sources,
        matched_count: accepted.len(),
        matched_fraction: (prev_frame.is_some() && !frame.elements.is_empty())
            .then(|| accepted.len() as f64 / frame.elements.len() as f64),
        mean_distance: mean(accepted.iter().map(|m| m.distance_or_inf())),
        mean_decay: mean(decays.iter().copied()),
        groups: batch.groups,
        group_size: batch.group_size,
        num_samples: batch.samples.len(),
        num_stream,
        num_normal: batch.samples.len() - num_stream,
        mean_noise_magnitude: mean(applied.iter().copied()),
        max_noise_magnitude: applied.iter().copied().reduce(f64::max),
        state_size: next_state.len(),
        matches,
        samples,
    };
    Ok((next_state, report))
}

/// Runs every frame in order. Frame `i` draws from its own random stream so
/// reports do not depend on how many draws earlier frames made.
pub fn run_scenario(
    frames: &[FrameRecord],
    cfg: &StreamConfig,
    nets: &QueryNetworks,
    seed: u64,
) -> Result<Vec<FrameReport>> {
    let mut state: Option<StreamState> = None;
    let mut reports = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| &frames[p]);
        let mut rng = RngState::for_stream(seed, frame.index as u64);
        let (next, report) = run_stream_frame(state.as_ref(), frame, prev, cfg, nets, &mut rng)?;
        state = Some(next);
        reports.push(report);
    }
    Ok(reports)
}
