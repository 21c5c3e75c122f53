//! Stream query denoising for vectorized HD-map construction.
//!
//! The crate covers the data side of temporal map perception training:
//! noising map curves through their bounding boxes, matching ego-warped
//! previous-frame ground truth to the current frame, decaying injected noise
//! by the residual temporal misalignment, turning noised curves into decoder
//! queries, carrying queries between frames, and scoring predictions with
//! Chamfer-threshold average precision. Synthetic driving scenarios provide
//! ground truth for all of it.

pub mod cli;
pub mod embedding;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod noising;
pub mod render;
pub mod scenario;
pub mod streaming;

use thiserror::Error;

pub use embedding::{EmbeddingConfig, QueryEmbedding, QueryNetworks};
pub use geometry::{BoundingRect, ClassId, MapElement, PerceptionRange, Point2, Polyline, SE2Transform};
pub use matching::{MatchParams, MatchResult};
pub use noising::{NoiseParams, NoisySample, RngState};
pub use streaming::{FrameRecord, FrameReport, StreamConfig, StreamState};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Noise(#[from] noising::NoiseError),
    #[error(transparent)]
    Match(#[from] matching::MatchError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
