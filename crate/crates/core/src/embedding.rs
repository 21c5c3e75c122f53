//! Denoising query construction.
//!
//! A noised curve becomes a decoder query in three steps:
//!
//! 1. every point is encoded as `mlp_pt(concat(pe(x), pe(y)))` (`D/2` wide),
//! 2. the point embeddings are concatenated and reduced by `mlp_pos` into the
//!    instance position embedding (`D/2`),
//! 3. the class's content embedding (`D/2`) and the position embedding are
//!    concatenated and fused by `mlp_fuse` into the `D`-wide query.
//!
//! Networks here are evaluated, never trained. Their weights are either
//! seeded or loaded from the text format handled by [`DenseNetwork::parse`].
//!
//! # Weight file format
//!
//! Whitespace-separated tokens; `#` starts a comment that runs to end of line.
//!
//! ```text
//! dense <num_layers>
//! layer <in_dim> <out_dim> <relu|identity>
//! <out_dim * in_dim weights, row-major: row o holds the weights of output o>
//! <out_dim biases>
//! ...one `layer` block per layer
//! ```
//!
//! Content tables use the same conventions:
//!
//! ```text
//! table <num_classes> <dim>
//! <num_classes * dim values, one row per class>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ClassId, Point2, PerceptionRange};
use crate::noising::RngState;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("output dimension must be even, got {0}")]
    OddDimension(usize),
    #[error("invalid embedding config: {0}")]
    InvalidConfig(&'static str),
    #[error("expected {expected} points, got {actual}")]
    WrongPointCount { expected: usize, actual: usize },
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("weight file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Decoder embedding width `D`; must be divisible by 4.
    pub dim: usize,
    pub n_points: usize,
    pub num_classes: usize,
    pub pe_temperature: f64,
    /// Range used to normalize coordinates into [0, 1] before encoding.
    pub coord_normalizer: PerceptionRange,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            n_points: crate::geometry::DEFAULT_POINTS_PER_CURVE,
            num_classes: ClassId::COUNT,
            pe_temperature: 10_000.0,
            coord_normalizer: PerceptionRange::SMALL,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 || !self.dim.is_multiple_of(4) {
            return Err(EmbeddingError::InvalidConfig("dim must be a positive multiple of 4"));
        }
        if self.n_points < 2 {
            return Err(EmbeddingError::InvalidConfig("n_points must be at least 2"));
        }
        if self.num_classes < 1 {
            return Err(EmbeddingError::InvalidConfig("num_classes must be at least 1"));
        }
        if !(self.pe_temperature.is_finite() && self.pe_temperature > 0.0) {
            return Err(EmbeddingError::InvalidConfig("pe_temperature must be positive"));
        }
        if self.coord_normalizer.validate().is_err() {
            return Err(EmbeddingError::InvalidConfig("invalid coordinate normalizer"));
        }
        Ok(())
    }

    /// Width of one coordinate encoding.
    pub fn pe_dim(&self) -> usize {
        self.dim / 4
    }

    pub fn half_dim(&self) -> usize {
        self.dim / 2
    }

    /// Maps ego coordinates into [0, 1]^2 over the normalizer range.
    pub fn normalize(&self, p: Point2) -> (f64, f64) {
        let r = &self.coord_normalizer;
        (
            (p.x + r.half_length) / (2.0 * r.half_length),
            (p.y + r.half_width) / (2.0 * r.half_width),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    ReLU,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::ReLU => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// Affine layer followed by an activation. Weights are row-major
/// `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, EmbeddingError> {
        if weights.len() != in_dim * out_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: in_dim * out_dim,
                actual: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: out_dim,
                actual: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Parse("non-finite parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
        if input.len() != self.in_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.in_dim,
                actual: input.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
                self.activation.apply(dot + b)
            })
            .collect())
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, EmbeddingError> {
        if layers.is_empty() {
            return Err(EmbeddingError::EmptyNetwork);
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: w[0].out_dim,
                    actual: w[1].in_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Single affine layer with identity weights and zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::single(dim, dim, weights, vec![0.0; dim])
    }

    /// Single affine layer with zero weights and the given bias.
    pub fn constant(in_dim: usize, bias: Vec<f64>) -> Self {
        let out_dim = bias.len();
        Self::single(in_dim, out_dim, vec![0.0; in_dim * out_dim], bias)
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self::constant(in_dim, vec![0.0; out_dim])
    }

    /// Single affine layer with weights drawn uniformly from
    /// `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        let bias = (0..out_dim).map(|_| rng.uniform(-bound, bound)).collect();
        Self::single(in_dim, out_dim, weights, bias)
    }

    fn single(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            layers: vec![DenseLayer {
                in_dim,
                out_dim,
                weights,
                bias,
                activation: Activation::Identity,
            }],
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn expect_shape(&self, in_dim: usize, out_dim: usize) -> Result<(), EmbeddingError> {
        if self.in_dim() != in_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: in_dim,
                actual: self.in_dim(),
            });
        }
        if self.out_dim() != out_dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: out_dim,
                actual: self.out_dim(),
            });
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dense {}", self.layers.len()).unwrap();
        for layer in &self.layers {
            writeln!(
                out,
                "layer {} {} {}",
                layer.in_dim,
                layer.out_dim,
                layer.activation.name()
            )
            .unwrap();
            for row in layer.weights.chunks_exact(layer.in_dim.max(1)) {
                write_row(&mut out, row);
            }
            write_row(&mut out, &layer.bias);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut tokens = Tokens::new(text);
        tokens.keyword("dense")?;
        let num_layers = tokens.usize()?;
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            tokens.keyword("layer")?;
            let in_dim = tokens.usize()?;
            let out_dim = tokens.usize()?;
            let activation = match tokens.next()? {
                "relu" => Activation::ReLU,
                "identity" => Activation::Identity,
                other => return Err(EmbeddingError::Parse(format!("unknown activation `{other}`"))),
            };
            let weights = tokens.floats(in_dim * out_dim)?;
            let bias = tokens.floats(out_dim)?;
            layers.push(DenseLayer::new(in_dim, out_dim, weights, bias, activation)?);
        }
        tokens.finish()?;
        DenseNetwork::new(layers)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

fn write_row(out: &mut String, row: &[f64]) {
    let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

struct Tokens<'a> {
    iter: Box<dyn Iterator<Item = &'a str> + 'a>,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let iter = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        Self {
            iter: Box::new(iter),
        }
    }

    fn next(&mut self) -> Result<&'a str, EmbeddingError> {
        self.iter
            .next()
            .ok_or_else(|| EmbeddingError::Parse("unexpected end of file".into()))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), EmbeddingError> {
        match self.next()? {
            t if t == kw => Ok(()),
            t => Err(EmbeddingError::Parse(format!("expected `{kw}`, found `{t}`"))),
        }
    }

    fn usize(&mut self) -> Result<usize, EmbeddingError> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| EmbeddingError::Parse(format!("expected a count, found `{t}`")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, EmbeddingError> {
        (0..n)
            .map(|_| {
                let t = self.next()?;
                t.parse()
                    .map_err(|_| EmbeddingError::Parse(format!("expected a number, found `{t}`")))
            })
            .collect()
    }

    fn finish(&mut self) -> Result<(), EmbeddingError> {
        match self.iter.next() {
            None => Ok(()),
            Some(t) => Err(EmbeddingError::Parse(format!("trailing token `{t}`"))),
        }
    }
}

/// Learnable per-class content vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentTable {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl ContentTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Ok(Self { dim, rows })
    }

    pub fn seeded(num_classes: usize, dim: usize, rng: &mut RngState) -> Self {
        let rows = (0..num_classes)
            .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("table {} {}\n", self.rows.len(), self.dim);
        for row in &self.rows {
            write_row(&mut out, row);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut tokens = Tokens::new(text);
        tokens.keyword("table")?;
        let n = tokens.usize()?;
        let dim = tokens.usize()?;
        let rows = (0..n).map(|_| tokens.floats(dim)).collect::<Result<Vec<_>, _>>()?;
        tokens.finish()?;
        Ok(Self { dim, rows })
    }
}

/// Sinusoidal encoding: entries `2i` and `2i+1` are `sin` and `cos` of
/// `x / temperature^(2i / out_dim)`.
pub fn positional_encode(x: f64, out_dim: usize, temperature: f64) -> Result<Vec<f64>, EmbeddingError> {
    if !out_dim.is_multiple_of(2) {
        return Err(EmbeddingError::OddDimension(out_dim));
    }
    let mut out = Vec::with_capacity(out_dim);
    for i in 0..out_dim / 2 {
        let arg = x / temperature.powf(2.0 * i as f64 / out_dim as f64);
        let (s, c) = arg.sin_cos();
        out.push(s);
        out.push(c);
    }
    Ok(out)
}

/// Point position embedding of width `D/2`.
pub fn point_embedding(
    p: Point2,
    cfg: &EmbeddingConfig,
    mlp_pt: &DenseNetwork,
) -> Result<Vec<f64>, EmbeddingError> {
    mlp_pt.expect_shape(cfg.half_dim(), cfg.half_dim())?;
    let (u, v) = cfg.normalize(p);
    let mut input = positional_encode(u, cfg.pe_dim(), cfg.pe_temperature)?;
    input.extend(positional_encode(v, cfg.pe_dim(), cfg.pe_temperature)?);
    mlp_pt.forward(&input)
}

/// Instance position embedding of width `D/2`. Order-sensitive in `points`.
pub fn instance_pos_embedding(
    points: &[Point2],
    cfg: &EmbeddingConfig,
    mlp_pt: &DenseNetwork,
    mlp_pos: &DenseNetwork,
) -> Result<Vec<f64>, EmbeddingError> {
    if points.len() != cfg.n_points {
        return Err(EmbeddingError::WrongPointCount {
            expected: cfg.n_points,
            actual: points.len(),
        });
    }
    mlp_pos.expect_shape(cfg.n_points * cfg.half_dim(), cfg.half_dim())?;
    let mut concat = Vec::with_capacity(cfg.n_points * cfg.half_dim());
    for &p in points {
        concat.extend(point_embedding(p, cfg, mlp_pt)?);
    }
    mlp_pos.forward(&concat)
}

pub fn content_embedding(class: ClassId, table: &ContentTable) -> Result<&[f64], EmbeddingError> {
    table
        .rows
        .get(class.0)
        .map(Vec::as_slice)
        .ok_or(EmbeddingError::ClassOutOfRange {
            class: class.0,
            num_classes: table.num_classes(),
        })
}

/// Decoder query of width `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryEmbedding {
    pub values: Vec<f64>,
}

impl QueryEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn fuse_denoise_query(
    content: &[f64],
    pos: &[f64],
    mlp_fuse: &DenseNetwork,
) -> Result<QueryEmbedding, EmbeddingError> {
    if content.len() != pos.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: content.len(),
            actual: pos.len(),
        });
    }
    let dim = content.len() * 2;
    mlp_fuse.expect_shape(dim, dim)?;
    let mut concat = Vec::with_capacity(dim);
    concat.extend_from_slice(content);
    concat.extend_from_slice(pos);
    Ok(QueryEmbedding {
        values: mlp_fuse.forward(&concat)?,
    })
}

/// All networks used to build and propagate queries.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryNetworks {
    pub config: EmbeddingConfig,
    pub point: DenseNetwork,
    pub instance: DenseNetwork,
    pub fuse: DenseNetwork,
    pub content: ContentTable,
    /// Residual update used when carrying queries to the next frame; takes the
    /// query concatenated with the flattened 3x3 transform.
    pub propagation: DenseNetwork,
}

impl QueryNetworks {
    pub const FILES: [&'static str; 5] = [
        "point.txt",
        "instance.txt",
        "fuse.txt",
        "content.txt",
        "propagation.txt",
    ];

    pub fn seeded(config: EmbeddingConfig, seed: u64) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let half = config.half_dim();
        let nets = Self {
            point: DenseNetwork::seeded(half, half, &mut rng),
            instance: DenseNetwork::seeded(config.n_points * half, half, &mut rng),
            fuse: DenseNetwork::seeded(config.dim, config.dim, &mut rng),
            content: ContentTable::seeded(config.num_classes, half, &mut rng),
            propagation: DenseNetwork::seeded(config.dim + 9, config.dim, &mut rng),
            config,
        };
        Ok(nets)
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let cfg = &self.config;
        cfg.validate()?;
        let half = cfg.half_dim();
        self.point.expect_shape(half, half)?;
        self.instance.expect_shape(cfg.n_points * half, half)?;
        self.fuse.expect_shape(cfg.dim, cfg.dim)?;
        self.propagation.expect_shape(cfg.dim + 9, cfg.dim)?;
        if self.content.dim() != half {
            return Err(EmbeddingError::DimensionMismatch {
                expected: half,
                actual: self.content.dim(),
            });
        }
        if self.content.num_classes() < cfg.num_classes {
            return Err(EmbeddingError::InvalidConfig("content table has too few classes"));
        }
        Ok(())
    }

    pub fn build_query(&self, class: ClassId, points: &[Point2]) -> Result<QueryEmbedding, EmbeddingError> {
        let content = content_embedding(class, &self.content)?;
        let pos = instance_pos_embedding(points, &self.config, &self.point, &self.instance)?;
        fuse_denoise_query(content, &pos, &self.fuse)
    }

    /// Writes the five weight files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), EmbeddingError> {
        std::fs::create_dir_all(dir)?;
        let [pt, inst, fuse, content, prop] = Self::FILES;
        self.point.save(&dir.join(pt))?;
        self.instance.save(&dir.join(inst))?;
        self.fuse.save(&dir.join(fuse))?;
        std::fs::write(dir.join(content), self.content.to_text())?;
        self.propagation.save(&dir.join(prop))?;
        Ok(())
    }

    pub fn load_dir(config: EmbeddingConfig, dir: &Path) -> Result<Self, EmbeddingError> {
        let [pt, inst, fuse, content, prop] = Self::FILES;
        let nets = Self {
            config,
            point: DenseNetwork::load(&dir.join(pt))?,
            instance: DenseNetwork::load(&dir.join(inst))?,
            fuse: DenseNetwork::load(&dir.join(fuse))?,
            content: ContentTable::parse(&std::fs::read_to_string(dir.join(content))?)?,
            propagation: DenseNetwork::load(&dir.join(prop))?,
        };
        nets.validate()?;
        Ok(nets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EmbeddingConfig {
        EmbeddingConfig {
            dim: 16,
            n_points: 3,
            ..EmbeddingConfig::default()
        }
    }

    #[test]
    fn encoding_at_zero_alternates() {
        let pe = positional_encode(0.0, 8, 10_000.0).unwrap();
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(matches!(positional_encode(0.0, 7, 10_000.0), Err(EmbeddingError::OddDimension(7))));
    }

    #[test]
    fn encoding_closed_form() {
        // sin/cos of 0.5 / 10000^(2i/8), i = 0..4, evaluated independently
        let expected = [
            0.479425538604203,
            0.8775825618903728,
            0.04997916927067833,
            0.9987502603949663,
            0.004999979166692708,
            0.9999875000260416,
            0.0004999999791666669,
            0.9999998750000026,
        ];
        let pe = positional_encode(0.5, 8, 10_000.0).unwrap();
        for (a, b) in pe.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_and_constant_point_networks() {
        let cfg = small_cfg();
        let p = Point2::new(1.5, -2.0);
        let out = point_embedding(p, &cfg, &DenseNetwork::identity(8)).unwrap();
        let (u, v) = cfg.normalize(p);
        let mut pe = positional_encode(u, 4, cfg.pe_temperature).unwrap();
        pe.extend(positional_encode(v, 4, cfg.pe_temperature).unwrap());
        assert_eq!(out, pe);

        let bias: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let out = point_embedding(p, &cfg, &DenseNetwork::constant(8, bias.clone())).unwrap();
        assert_eq!(out, bias);

        assert!(point_embedding(p, &cfg, &DenseNetwork::identity(6)).is_err());
    }

    #[test]
    fn instance_embedding_checks_point_count_and_order() {
        let cfg = small_cfg();
        let mut rng = RngState::new(11);
        let pt = DenseNetwork::seeded(8, 8, &mut rng);
        let pos = DenseNetwork::seeded(24, 8, &mut rng);
        let pts = [Point2::new(0.0, 0.0), Point2::new(3.0, 1.0), Point2::new(-4.0, 2.0)];
        let a = instance_pos_embedding(&pts, &cfg, &pt, &pos).unwrap();
        let reversed = [pts[2], pts[1], pts[0]];
        let b = instance_pos_embedding(&reversed, &cfg, &pt, &pos).unwrap();
        assert_ne!(a, b);
        assert!(matches!(
            instance_pos_embedding(&pts[..2], &cfg, &pt, &pos),
            Err(EmbeddingError::WrongPointCount { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn content_lookup() {
        let table = ContentTable::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(content_embedding(ClassId(1), &table).unwrap(), &[3.0, 4.0]);
        assert_ne!(
            content_embedding(ClassId(0), &table).unwrap(),
            content_embedding(ClassId(1), &table).unwrap()
        );
        assert!(content_embedding(ClassId(2), &table).is_err());
    }

    #[test]
    fn fuse_identity_and_zero() {
        let c = vec![1.0, 2.0];
        let p = vec![3.0, 4.0];
        let q = fuse_denoise_query(&c, &p, &DenseNetwork::identity(4)).unwrap();
        assert_eq!(q.values, vec![1.0, 2.0, 3.0, 4.0]);
        let q = fuse_denoise_query(&[0.0; 2], &[0.0; 2], &DenseNetwork::zeros(4, 4)).unwrap();
        assert_eq!(q.values, vec![0.0; 4]);
        assert!(fuse_denoise_query(&c, &[1.0], &DenseNetwork::identity(3)).is_err());
    }

    #[test]
    fn relu_layer_and_stack_shapes() {
        let l1 = DenseLayer::new(2, 2, vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0], Activation::ReLU).unwrap();
        let l2 = DenseLayer::new(2, 1, vec![1.0, 1.0], vec![0.5], Activation::Identity).unwrap();
        let net = DenseNetwork::new(vec![l1.clone(), l2]).unwrap();
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![2.5]);
        let bad = DenseLayer::new(3, 1, vec![0.0; 3], vec![0.0], Activation::Identity).unwrap();
        assert!(DenseNetwork::new(vec![l1, bad]).is_err());
        assert!(DenseNetwork::new(vec![]).is_err());
    }

    #[test]
    fn weight_text_round_trip() {
        let mut rng = RngState::new(5);
        let net = DenseNetwork::seeded(5, 3, &mut rng);
        assert_eq!(DenseNetwork::parse(&net.to_text()).unwrap(), net);
        let table = ContentTable::seeded(3, 4, &mut rng);
        assert_eq!(ContentTable::parse(&table.to_text()).unwrap(), table);

        let text = "# two-layer\ndense 2\nlayer 1 1 relu\n2\n-1 # bias\nlayer 1 1 identity\n1 0\n";
        let net = DenseNetwork::parse(text).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![1.0]);
        assert!(DenseNetwork::parse("dense 1\nlayer 2 1 relu\n1").is_err());
        assert!(DenseNetwork::parse("dense 1\nlayer 1 1 tanh\n1 0").is_err());
    }

    #[test]
    fn seeded_networks_validate() {
        let nets = QueryNetworks::seeded(small_cfg(), 3).unwrap();
        nets.validate().unwrap();
        let pts = [Point2::new(0.0, 0.0), Point2::new(3.0, 1.0), Point2::new(-4.0, 2.0)];
        let q = nets.build_query(ClassId(2), &pts).unwrap();
        assert_eq!(q.dim(), 16);
        assert_eq!(nets.build_query(ClassId(2), &pts).unwrap(), q);
    }
}
