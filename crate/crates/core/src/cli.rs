//! `sqd` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 internal error.
//! `SQD_SEED` supplies the default for `--seed`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingConfig, EmbeddingError, QueryNetworks};
use crate::geometry::{relative_transform, ClassId, MapElement, PerceptionRange};
use crate::matching::{adaptive_temporal_match, MatchParams, MatchResult};
use crate::metrics::{evaluate, EvalConfig, ScoredPrediction};
use crate::noising::{NoiseParams, NoiseSource, NoisySample, RngState};
use crate::render::{render_frame_svg, FrameLayers};
use crate::scenario::{generate_scenario, read_predictions, read_scenario, write_scenario, ScenarioConfig, ScenarioError};
use crate::streaming::{assemble_dn_batch, run_scenario, warp_previous, FrameRecord, FrameReport, StreamConfig};

pub const SEED_ENV: &str = "SQD_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Scenario(s) => s.into(),
            crate::Error::Embedding(EmbeddingError::Io(_) | EmbeddingError::Parse(_)) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "sqd", version, about = "Stream query denoising pipeline for vectorized HD maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-frame scenario file.
    GenScenario(GenScenarioArgs),
    /// Run the denoising pipeline over a scenario and write per-frame reports.
    SqdRun(SqdRunArgs),
    /// Run adaptive temporal matching between consecutive frames.
    Match(MatchArgs),
    /// Dump noisy denoising samples for one frame.
    Noise(NoiseArgs),
    /// Evaluate predictions against scenario ground truth.
    EvalAp(EvalApArgs),
    /// Render frames as SVG.
    RenderSvg(RenderSvgArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RangePreset {
    /// 60 x 30 m
    Small,
    /// 100 x 50 m
    Large,
}

#[derive(Debug, Clone, Args)]
pub struct RangeArgs {
    #[arg(long, value_enum, default_value_t = RangePreset::Small)]
    pub range: RangePreset,
}

impl RangeArgs {
    pub fn perception_range(&self) -> PerceptionRange {
        match self.range {
            RangePreset::Small => PerceptionRange::SMALL,
            RangePreset::Large => PerceptionRange::LARGE,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct NoiseFlags {
    /// Sets all four position noise scales at once.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub shift_x: Option<f64>,
    #[arg(long)]
    pub shift_y: Option<f64>,
    #[arg(long)]
    pub scale_h: Option<f64>,
    #[arg(long)]
    pub scale_w: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub flip_prob: f64,
    /// Noise decay scale.
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
}

impl NoiseFlags {
    pub fn params(&self) -> Result<NoiseParams, CliError> {
        let base = NoiseParams::with_position_scale(self.lambda.unwrap_or(0.6));
        let params = NoiseParams {
            max_shift_x: self.shift_x.unwrap_or(base.max_shift_x),
            max_shift_y: self.shift_y.unwrap_or(base.max_shift_y),
            max_scale_h: self.scale_h.unwrap_or(base.max_scale_h),
            max_scale_w: self.scale_w.unwrap_or(base.max_scale_w),
            label_flip_prob: self.flip_prob,
            decay_scale: self.gamma,
        };
        params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(params)
    }
}

fn match_params(alpha: f64) -> Result<MatchParams, CliError> {
    MatchParams::new(alpha).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Clone, Args)]
pub struct GenScenarioArgs {
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Seconds between frames.
    #[arg(long, default_value_t = 0.5)]
    pub interval: f64,
    /// Ego speed in m/s.
    #[arg(long, default_value_t = 10.0)]
    pub speed: f64,
    /// Ego yaw rate in rad/s.
    #[arg(long, default_value_t = 0.0)]
    pub yaw_rate: f64,
    #[arg(long, default_value_t = 20)]
    pub n_points: usize,
    #[arg(long, default_value_t = 0.04)]
    pub divider_density: f64,
    #[arg(long, default_value_t = 0.03)]
    pub boundary_density: f64,
    #[arg(long, default_value_t = 0.015)]
    pub crossing_density: f64,
    #[arg(long)]
    pub corridor_length: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub lanes: usize,
    #[arg(long, default_value_t = 3.5)]
    pub lane_width: f64,
    #[command(flatten)]
    pub range: RangeArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SqdRunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub noise: NoiseFlags,
    /// Matching tolerance degree.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Denoising queries per frame.
    #[arg(long, default_value_t = 60)]
    pub budget: usize,
    #[arg(long, default_value_t = 33)]
    pub top_k: usize,
    /// Decoder embedding width.
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    /// Directory holding network weight files; seeded weights when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Write the networks used for the run into this directory.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    #[command(flatten)]
    pub range: RangeArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Only match this frame against its predecessor.
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[command(flatten)]
    pub range: RangeArgs,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub frame: usize,
    /// Match report from `sqd match`; without it every sample uses decay 1.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseFlags,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 60)]
    pub budget: usize,
    #[command(flatten)]
    pub range: RangeArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalApArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Comma-separated Chamfer thresholds in meters; range preset defaults otherwise.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[command(flatten)]
    pub range: RangeArgs,
    /// Also write the report as a JSON line.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderSvgArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Frame reports from `sqd sqd-run`, used to draw noisy samples.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub frame: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[command(flatten)]
    pub range: RangeArgs,
    #[arg(long)]
    pub output_dir: PathBuf,
}

/// Matches of one frame against its predecessor, as written by `sqd match`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub frame_index: usize,
    pub prev_frame_index: Option<usize>,
    /// Previous-frame ground-truth index for every warped element.
    pub prev_sources: Vec<usize>,
    pub matched_count: usize,
    pub matches: Vec<MatchResult>,
}

/// One line of `sqd noise` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub frame_index: usize,
    pub group: usize,
    #[serde(flatten)]
    pub sample: NoisySample,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenScenario(a) => cmd_gen_scenario(&a),
        Command::SqdRun(a) => cmd_sqd_run(&a),
        Command::Match(a) => cmd_match(&a),
        Command::Noise(a) => cmd_noise(&a),
        Command::EvalAp(a) => cmd_eval_ap(&a),
        Command::RenderSvg(a) => cmd_render_svg(&a),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error");
            eprintln!("{first}");
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_scenario(path: &Path) -> Result<Vec<FrameRecord>, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("{}: no such file", path.display())));
    }
    read_scenario(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(buf, "{line}").map_err(|e| CliError::Internal(e.to_string()))?;
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Point count shared by every curve of the scenario.
fn scenario_point_count(frames: &[FrameRecord]) -> Result<usize, CliError> {
    let mut counts = frames.iter().flat_map(|f| f.elements.iter().map(|e| e.polyline.len()));
    let Some(n) = counts.next() else {
        return Ok(crate::geometry::DEFAULT_POINTS_PER_CURVE);
    };
    if counts.any(|c| c != n) {
        return Err(CliError::Input("scenario curves have differing point counts".into()));
    }
    Ok(n)
}

fn check_classes(frames: &[FrameRecord]) -> Result<(), CliError> {
    for f in frames {
        if let Some(e) = f.elements.iter().find(|e| e.class.0 >= ClassId::COUNT) {
            return Err(CliError::Input(format!("frame {}: unknown class {}", f.index, e.class)));
        }
    }
    Ok(())
}

pub fn cmd_gen_scenario(a: &GenScenarioArgs) -> Result<(), CliError> {
    let cfg = ScenarioConfig {
        num_frames: a.frames,
        frame_interval: a.interval,
        speed: a.speed,
        yaw_rate: a.yaw_rate,
        range: a.range.perception_range(),
        n_points: a.n_points,
        divider_density: a.divider_density,
        boundary_density: a.boundary_density,
        crossing_density: a.crossing_density,
        corridor_length: a.corridor_length,
        num_lanes: a.lanes,
        lane_width: a.lane_width,
        seed: a.seed.seed,
    };
    let frames = generate_scenario(&cfg)?;
    write_scenario(&frames, &a.output)?;
    Ok(())
}

pub fn cmd_sqd_run(a: &SqdRunArgs) -> Result<(), CliError> {
    let frames = load_scenario(&a.scenario)?;
    check_classes(&frames)?;
    let n_points = scenario_point_count(&frames)?;
    let cfg = StreamConfig {
        top_k: a.top_k,
        dn_query_budget: a.budget,
        n_points,
        num_classes: ClassId::COUNT,
        noise: a.noise.params()?,
        matching: match_params(a.alpha)?,
        range: a.range.perception_range(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let emb = EmbeddingConfig {
        dim: a.dim,
        n_points,
        num_classes: ClassId::COUNT,
        coord_normalizer: cfg.range,
        ..EmbeddingConfig::default()
    };
    emb.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let nets = match &a.weights {
        Some(dir) => QueryNetworks::load_dir(emb, dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?,
        None => QueryNetworks::seeded(emb, a.seed.seed).map_err(crate::Error::from)?,
    };
    if let Some(dir) = &a.save_weights {
        nets.save_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    let reports: Vec<FrameReport> = run_scenario(&frames, &cfg, &nets, a.seed.seed)?;
    write_lines(&a.output, &reports)
}

fn frame_pairs(frames: &[FrameRecord], only: Option<usize>) -> Result<Vec<usize>, CliError> {
    match only {
        None => Ok((0..frames.len()).collect()),
        Some(idx) => frames
            .iter()
            .position(|f| f.index == idx)
            .map(|p| vec![p])
            .ok_or_else(|| CliError::Input(format!("frame {idx} not in scenario"))),
    }
}

/// Warped previous elements and matches for the frame at position `pos`.
fn match_frame(
    frames: &[FrameRecord],
    pos: usize,
    params: &MatchParams,
    range: &PerceptionRange,
) -> Result<(Vec<MapElement>, Vec<usize>, Vec<MatchResult>), CliError> {
    let cur = &frames[pos];
    let n_points = scenario_point_count(frames)?;
    let (warped, sources) = match pos.checked_sub(1).map(|p| &frames[p]) {
        Some(prev) => {
            let t = relative_transform(&prev.ego_pose, &cur.ego_pose);
            warp_previous(&prev.elements, &t, range, n_points)?
        }
        None => (Vec::new(), Vec::new()),
    };
    let matches = adaptive_temporal_match(&warped, &cur.elements, params).map_err(crate::Error::from)?;
    Ok((warped, sources, matches))
}

pub fn cmd_match(a: &MatchArgs) -> Result<(), CliError> {
    let frames = load_scenario(&a.scenario)?;
    let params = match_params(a.alpha)?;
    let range = a.range.perception_range();
    let mut reports = Vec::new();
    for pos in frame_pairs(&frames, a.frame)? {
        let (_, prev_sources, matches) = match_frame(&frames, pos, &params, &range)?;
        reports.push(MatchReport {
            frame_index: frames[pos].index,
            prev_frame_index: pos.checked_sub(1).map(|p| frames[p].index),
            prev_sources,
            matched_count: matches.iter().filter(|m| m.matched).count(),
            matches,
        });
    }
    write_lines(&a.output, &reports)
}

pub fn cmd_noise(a: &NoiseArgs) -> Result<(), CliError> {
    let frames = load_scenario(&a.scenario)?;
    check_classes(&frames)?;
    let pos = frame_pairs(&frames, Some(a.frame))?[0];
    let cfg = StreamConfig {
        dn_query_budget: a.budget,
        n_points: scenario_point_count(&frames)?,
        noise: a.noise.params()?,
        matching: match_params(a.alpha)?,
        range: a.range.perception_range(),
        ..StreamConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let current = &frames[pos].elements;

    let (warped, matches) = match &a.matches {
        Some(path) => {
            let reports: Vec<MatchReport> = read_lines(path)?;
            let report = reports
                .into_iter()
                .find(|r| r.frame_index == a.frame)
                .ok_or_else(|| CliError::Input(format!("{}: no matches for frame {}", path.display(), a.frame)))?;
            let (warped, sources, _) = match_frame(&frames, pos, &cfg.matching, &cfg.range)?;
            if report.matches.len() != current.len() || report.prev_sources != sources {
                return Err(CliError::Input(format!(
                    "{}: match report does not fit frame {}",
                    path.display(),
                    a.frame
                )));
            }
            (warped, report.matches)
        }
        None => {
            let unmatched = adaptive_temporal_match(&[], current, &cfg.matching).map_err(crate::Error::from)?;
            (Vec::new(), unmatched)
        }
    };

    let mut rng = RngState::for_stream(a.seed.seed, frames[pos].index as u64);
    let batch = assemble_dn_batch(current, &warped, &matches, &cfg, &mut rng)?;
    let records: Vec<NoiseRecord> = batch
        .samples
        .into_iter()
        .enumerate()
        .map(|(k, sample)| NoiseRecord {
            frame_index: a.frame,
            group: k / batch.group_size.max(1),
            sample,
        })
        .collect();
    write_lines(&a.output, &records)
}

pub fn cmd_eval_ap(a: &EvalApArgs) -> Result<(), CliError> {
    let frames = load_scenario(&a.scenario)?;
    if !a.predictions.exists() {
        return Err(CliError::Input(format!("{}: no such file", a.predictions.display())));
    }
    let preds = read_predictions(&a.predictions)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.predictions.display())))?;
    let mut cfg = match a.range.range {
        RangePreset::Small => EvalConfig::small_range(),
        RangePreset::Large => EvalConfig::large_range(),
    };
    if let Some(t) = &a.thresholds {
        cfg.thresholds = t.clone();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    for p in &preds {
        if !frames.iter().any(|f| f.index == p.index) {
            return Err(CliError::Input(format!("predictions refer to unknown frame {}", p.index)));
        }
    }
    let gts: Vec<Vec<MapElement>> = frames.iter().map(|f| f.elements.clone()).collect();
    let per_frame: Vec<Vec<ScoredPrediction>> = frames
        .iter()
        .map(|f| {
            preds
                .iter()
                .filter(|p| p.index == f.index)
                .flat_map(|p| p.predictions.iter().cloned())
                .collect()
        })
        .collect();
    let report = evaluate(&per_frame, &gts, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    print!("{}", report.to_table());
    if let Some(path) = &a.output {
        write_lines(path, std::slice::from_ref(&report))?;
    }
    Ok(())
}

pub fn cmd_render_svg(a: &RenderSvgArgs) -> Result<(), CliError> {
    let frames = load_scenario(&a.scenario)?;
    let params = match_params(a.alpha)?;
    let range = a.range.perception_range();
    let reports: Vec<FrameReport> = match &a.reports {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&a.output_dir).map_err(|e| io_err(&a.output_dir, e))?;
    for pos in frame_pairs(&frames, a.frame)? {
        let frame = &frames[pos];
        let (warped, _, matches) = match_frame(&frames, pos, &params, &range)?;
        let samples: Vec<MapElement> = reports
            .iter()
            .filter(|r| r.frame_index == frame.index)
            .flat_map(|r| r.samples.iter())
            .filter_map(|s| {
                let pts = s.points.iter().map(|&[x, y]| crate::geometry::Point2::new(x, y)).collect();
                crate::geometry::Polyline::new(pts).ok().map(|p| MapElement::new(s.class, p))
            })
            .collect();
        let layers = FrameLayers {
            ground_truth: &frame.elements,
            prev_warped: &warped,
            samples: &samples,
            matches: &matches,
        };
        let svg = render_frame_svg(&format!("frame {} t={}", frame.index, frame.timestamp), &layers, &range);
        let path = a.output_dir.join(format!("frame_{:04}.svg", frame.index));
        fs::write(&path, svg).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Noise source tally of a noise dump, used by tests and scripts.
pub fn count_sources(records: &[NoiseRecord]) -> (usize, usize) {
    let stream = records.iter().filter(|r| r.sample.source == NoiseSource::Stream).count();
    (records.len() - stream, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["sqd", "bogus"]), 1);
        assert_eq!(main_with_args(["sqd", "gen-scenario", "--unknown-flag"]), 1);
        assert_eq!(main_with_args(["sqd", "--help"]), 0);
    }

    #[test]
    fn missing_input_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r.jsonl");
        let code = main_with_args([
            "sqd",
            "sqd-run",
            "--scenario",
            "/definitely/not/here.txt",
            "--output",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn noise_flags_override_lambda() {
        let flags = NoiseFlags {
            lambda: Some(0.3),
            shift_x: Some(0.1),
            shift_y: None,
            scale_h: None,
            scale_w: None,
            flip_prob: 0.5,
            gamma: 0.2,
        };
        let p = flags.params().unwrap();
        assert_eq!((p.max_shift_x, p.max_shift_y, p.max_scale_w), (0.1, 0.3, 0.3));
        let bad = NoiseFlags { lambda: Some(1.2), ..flags };
        assert!(matches!(bad.params(), Err(CliError::Usage(_))));
    }
}
