//! FoldingNet-style autoencoder with a spherical folding template.
//!
//! Encoder: per-point features (coordinates plus the flattened 3x3 covariance
//! of the point's kNN neighbourhood) pass through a shared MLP, then through
//! graph layers (neighbourhood max followed by linear + ReLU), a global max
//! pool and a codeword MLP.
//!
//! Decoder: the codeword is concatenated to every template point and folded
//! twice by 3-layer MLPs. The first layer of each fold is split into a
//! codeword block and a point block, `[c, p] W = c W_c + p W_p`, so the
//! codeword product is computed once per cloud instead of once per point.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Dense, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud, SeriesFrameSet, SphericalTemplate};
use crate::rng::{derive, seeded};
use crate::spatial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub knn_k: usize,
    /// Shared per-point MLP, starting at the 12 input features.
    pub point_mlp: Vec<usize>,
    /// Graph layer widths, starting at the per-point MLP output.
    pub graph_layers: Vec<usize>,
    /// Codeword MLP widths, starting at the pooled width.
    pub codeword_mlp: Vec<usize>,
    pub codeword_dim: usize,
    /// Coordinates are divided by this before entering the network.
    pub coordinate_scale: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            knn_k: 16,
            point_mlp: vec![POINT_FEATURES, 64, 64, 64],
            graph_layers: vec![64, 128, 1024],
            codeword_mlp: vec![1024, 512, 256],
            codeword_dim: 256,
            coordinate_scale: 1.0,
        }
    }
}

/// xyz plus the flattened local covariance.
pub const POINT_FEATURES: usize = 12;

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("encoder spec: {m}")));
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.point_mlp.first() != Some(&POINT_FEATURES) || self.point_mlp.len() < 2 {
            return bad(format!("point MLP must start at {POINT_FEATURES} and have a layer"));
        }
        if self.graph_layers.first() != self.point_mlp.last() || self.graph_layers.len() < 2 {
            return bad("graph layers must continue the point MLP".into());
        }
        if self.codeword_mlp.first() != self.graph_layers.last() || self.codeword_mlp.len() < 2 {
            return bad("codeword MLP must continue the graph layers".into());
        }
        if self.codeword_mlp.last() != Some(&self.codeword_dim) {
            return bad("codeword MLP must end at codeword_dim".into());
        }
        if !(self.coordinate_scale > 0.0) {
            return bad("coordinate_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSpec {
    pub template_size: usize,
    /// Hidden widths of each folding MLP; output width is always 3.
    pub fold_hidden: Vec<usize>,
    /// Decoder outputs are multiplied by this.
    pub coordinate_scale: f64,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        DecoderSpec {
            template_size: 2025,
            fold_hidden: vec![512, 512],
            coordinate_scale: 1.0,
        }
    }
}

const FOLDS: usize = 2;

impl DecoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.template_size < 4 {
            return Err(Error::invalid("decoder spec: template_size must be at least 4"));
        }
        if self.fold_hidden.is_empty() || self.fold_hidden.contains(&0) {
            return Err(Error::invalid("decoder spec: folds need non-empty hidden widths"));
        }
        if !(self.coordinate_scale > 0.0) {
            return Err(Error::invalid("decoder spec: coordinate_scale must be positive"));
        }
        Ok(())
    }
}

/// Latent descriptor of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codeword {
    pub values: Vec<f64>,
    pub frame_index: usize,
}

impl Codeword {
    pub fn distance(&self, other: &Codeword) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Reconstruction loss used for autoencoder training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Modified Chamfer distance over `k` neighbours.
    Mcd { k: usize },
    /// Plain Chamfer distance.
    Cd,
}

impl LossKind {
    pub fn neighbours(self) -> usize {
        match self {
            LossKind::Mcd { k } => k,
            LossKind::Cd => 1,
        }
    }
}

/// Uniform per-axis rotation range in degrees, `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRange {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl RotationRange {
    pub const NONE: RotationRange = RotationRange {
        min_deg: 0.0,
        max_deg: 0.0,
    };

    pub fn full() -> Self {
        RotationRange {
            min_deg: 0.0,
            max_deg: 360.0,
        }
    }

    pub fn symmetric(deg: f64) -> Self {
        RotationRange {
            min_deg: -deg,
            max_deg: deg,
        }
    }

    pub fn is_none(&self) -> bool {
        self.min_deg == 0.0 && self.max_deg == 0.0
    }

    /// Draws one angle per axis, in radians.
    pub fn sample(&self, rng: &mut crate::rng::Rng) -> [f64; 3] {
        if self.is_none() {
            return [0.0; 3];
        }
        let mut draw = || {
            let deg = if self.max_deg > self.min_deg {
                rng.random_range(self.min_deg..self.max_deg)
            } else {
                self.min_deg
            };
            deg * PI / 180.0
        };
        [draw(), draw(), draw()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub input_points: usize,
    pub rotation: RotationRange,
    pub jitter_sigma2: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 250,
            learning_rate: 1e-4,
            loss: LossKind::Mcd { k: 20 },
            input_points: 4096,
            rotation: RotationRange::full(),
            jitter_sigma2: 0.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.input_points == 0 {
            return Err(Error::invalid("train config: epochs and input_points must be >= 1"));
        }
        if self.loss.neighbours() == 0 {
            return Err(Error::invalid("train config: MCD needs k >= 1"));
        }
        if !(self.jitter_sigma2 >= 0.0) {
            return Err(Error::invalid("train config: jitter variance must be >= 0"));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }
}

/// Per-epoch mean loss and every individual step loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_means: Vec<f64>,
    pub steps: Vec<f64>,
}

/// Fresh autoencoder parameters (Kaiming-uniform weights, zero biases).
pub fn init_params(enc: &EncoderSpec, dec: &DecoderSpec, seed: u64) -> Result<ParamStore> {
    enc.validate()?;
    dec.validate()?;
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    for (i, w) in enc.point_mlp.windows(2).enumerate() {
        Dense::init(&mut store, &format!("enc.point{i}"), w[0], w[1], &mut rng)?;
    }
    for (i, w) in enc.graph_layers.windows(2).enumerate() {
        Dense::init(&mut store, &format!("enc.graph{i}"), w[0], w[1], &mut rng)?;
    }
    for (i, w) in enc.codeword_mlp.windows(2).enumerate() {
        Dense::init(&mut store, &format!("enc.code{i}"), w[0], w[1], &mut rng)?;
    }
    for fold in 0..FOLDS {
        let first = dec.fold_hidden[0];
        // One (codeword + 3) x first layer, stored as its two row blocks.
        let fan_in = enc.codeword_dim + 3;
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut block = |rows: usize| -> Result<Tensor> {
            Tensor::matrix(
                rows,
                first,
                (0..rows * first).map(|_| rng.random_range(-bound..bound)).collect(),
            )
        };
        let wc = block(enc.codeword_dim)?;
        let wp = block(3)?;
        store.insert(format!("dec.fold{fold}.in.code"), wc)?;
        store.insert(format!("dec.fold{fold}.in.point"), wp)?;
        store.insert(format!("dec.fold{fold}.in.b"), Tensor::zeros(1, first))?;
        let mut widths = dec.fold_hidden.clone();
        widths.push(3);
        for (i, w) in widths.windows(2).enumerate() {
            Dense::init(&mut store, &format!("dec.fold{fold}.h{i}"), w[0], w[1], &mut rng)?;
        }
    }
    Ok(store)
}

/// kNN neighbourhoods with the centre point first.
fn neighbourhoods(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let graph = spatial::knn_graph(cloud, k)?;
    Ok(graph
        .into_iter()
        .enumerate()
        .map(|(i, mut row)| {
            row.insert(0, i);
            row
        })
        .collect())
}

/// `n x 12` input features: scaled coordinates and local covariance.
fn point_features(cloud: &PointCloud, groups: &[Vec<usize>], scale: f64) -> Vec<f64> {
    let pts = cloud.points();
    let mut out = Vec::with_capacity(pts.len() * POINT_FEATURES);
    for (p, group) in pts.iter().zip(groups) {
        let inv = 1.0 / group.len() as f64;
        let mut mean = [0.0; 3];
        for &j in group {
            let q = pts[j].to_array();
            for a in 0..3 {
                mean[a] += q[a] * inv;
            }
        }
        let mut cov = [0.0; 9];
        for &j in group {
            let q = pts[j].to_array();
            let d = [
                (q[0] - mean[0]) / scale,
                (q[1] - mean[1]) / scale,
                (q[2] - mean[2]) / scale,
            ];
            for r in 0..3 {
                for c in 0..3 {
                    cov[r * 3 + c] += d[r] * d[c] * inv;
                }
            }
        }
        out.extend([p.x / scale, p.y / scale, p.z / scale]);
        out.extend(cov);
    }
    out
}

/// Records the encoder forward pass; returns the `1 x codeword_dim` codeword.
pub fn encode_on_tape(
    tape: &mut Tape,
    cloud: &PointCloud,
    spec: &EncoderSpec,
    params: &ParamStore,
) -> Result<Var> {
    spec.validate()?;
    if cloud.len() < spec.knn_k + 1 {
        return Err(Error::invalid(format!(
            "encoder needs at least {} points, got {}",
            spec.knn_k + 1,
            cloud.len()
        )));
    }
    let groups = neighbourhoods(cloud, spec.knn_k)?;
    let feats = point_features(cloud, &groups, spec.coordinate_scale);
    let mut h = tape.constant(Tensor::matrix(cloud.len(), POINT_FEATURES, feats)?)?;
    for i in 0..spec.point_mlp.len() - 1 {
        h = Dense::bind(params, &format!("enc.point{i}"))?.forward(tape, params, h, true)?;
    }
    for i in 0..spec.graph_layers.len() - 1 {
        let pooled = tape.reduce_max_rows(h, &groups)?;
        h = Dense::bind(params, &format!("enc.graph{i}"))?.forward(tape, params, pooled, true)?;
    }
    let mut code = tape.global_max_pool(h)?;
    let last = spec.codeword_mlp.len() - 2;
    for i in 0..=last {
        let layer = Dense::bind(params, &format!("enc.code{i}"))?;
        code = layer.forward(tape, params, code, i < last)?;
    }
    Ok(code)
}

pub fn encode(cloud: &PointCloud, spec: &EncoderSpec, params: &ParamStore) -> Result<Codeword> {
    let mut tape = Tape::new();
    let code = encode_on_tape(&mut tape, cloud, spec, params)?;
    Ok(Codeword {
        values: tape.value(code).data().to_vec(),
        frame_index: cloud.frame_index().unwrap_or(0),
    })
}

/// Records both folds; returns the `M x 3` reconstruction.
pub fn decode_on_tape(
    tape: &mut Tape,
    code: Var,
    template: &SphericalTemplate,
    spec: &DecoderSpec,
    params: &ParamStore,
) -> Result<Var> {
    spec.validate()?;
    if template.len() != spec.template_size {
        return Err(Error::shape(
            "decode",
            format!("template has {} points, spec expects {}", template.len(), spec.template_size),
        ));
    }
    let mut points = tape.constant(Tensor::matrix(template.len(), 3, template.to_flat())?)?;
    for fold in 0..FOLDS {
        let wc = tape.param_named(params, &format!("dec.fold{fold}.in.code"))?;
        let wp = tape.param_named(params, &format!("dec.fold{fold}.in.point"))?;
        let b = tape.param_named(params, &format!("dec.fold{fold}.in.b"))?;
        let code_row = tape.matmul(code, wc)?;
        let row = tape.add_broadcast(code_row, b)?;
        let mut h = tape.linear(points, wp, row, true)?;
        let depth = spec.fold_hidden.len();
        for i in 0..depth {
            let layer = Dense::bind(params, &format!("dec.fold{fold}.h{i}"))?;
            h = layer.forward(tape, params, h, i + 1 < depth)?;
        }
        points = h;
    }
    if spec.coordinate_scale != 1.0 {
        let s = tape.constant(Tensor::matrix(
            3,
            3,
            vec![spec.coordinate_scale, 0.0, 0.0, 0.0, spec.coordinate_scale, 0.0, 0.0, 0.0, spec.coordinate_scale],
        )?)?;
        points = tape.matmul(points, s)?;
    }
    Ok(points)
}

pub fn decode(
    code: &Codeword,
    template: &SphericalTemplate,
    spec: &DecoderSpec,
    params: &ParamStore,
) -> Result<PointCloud> {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::row(code.values.clone()))?;
    let out = decode_on_tape(&mut tape, c, template, spec, params)?;
    let cloud = PointCloud::from_flat(tape.value(out).data())?;
    Ok(if code.frame_index > 0 {
        cloud.with_frame_index(code.frame_index)
    } else {
        cloud
    })
}

/// Encodes then decodes one cloud.
pub fn reconstruct(
    cloud: &PointCloud,
    enc: &EncoderSpec,
    dec: &DecoderSpec,
    template: &SphericalTemplate,
    params: &ParamStore,
) -> Result<PointCloud> {
    let code = encode(cloud, enc, params)?;
    decode(&code, template, dec, params)
}

/// Trains from freshly initialised parameters.
pub fn train_autoencoder(
    series: &[SeriesFrameSet],
    enc: &EncoderSpec,
    dec: &DecoderSpec,
    cfg: &TrainConfig,
) -> Result<(ParamStore, LossTrace)> {
    train_autoencoder_with(series, enc, dec, cfg, |_, _| {})
}

/// As [`train_autoencoder`], calling `on_epoch(epoch, mean_loss)` after every
/// epoch.
pub fn train_autoencoder_with(
    series: &[SeriesFrameSet],
    enc: &EncoderSpec,
    dec: &DecoderSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ParamStore, LossTrace)> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::invalid("autoencoder training needs at least one series"));
    }
    let mut params = init_params(enc, dec, derive(cfg.rng_seed, 0))?;
    let template = geometry::make_spherical_template(dec.template_size)?;
    let frames: Vec<&PointCloud> = series.iter().flat_map(|s| s.frames()).collect();
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut order_rng = seeded(derive(cfg.rng_seed, 1));
    let mut aug_rng = seeded(derive(cfg.rng_seed, 2));
    let mut trace = LossTrace::default();
    let mut order: Vec<usize> = (0..frames.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &fi in &order {
            let sample_seed: u64 = aug_rng.random();
            let jitter_seed: u64 = aug_rng.random();
            let angles = cfg.rotation.sample(&mut aug_rng);
            let mut input = geometry::sample_fixed(frames[fi], cfg.input_points, sample_seed)?;
            input = geometry::rotate(&input, angles)?;
            input = geometry::jitter(&input, cfg.jitter_sigma2, jitter_seed)?;

            let mut tape = Tape::new();
            let code = encode_on_tape(&mut tape, &input, enc, &params)?;
            let recon = decode_on_tape(&mut tape, code, &template, dec, &params)?;
            let loss = tape.mcd_loss(recon, &input, cfg.loss.neighbours())?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            params.accumulate(&tape, &grads);
            adam_step(&mut params, &adam)?;
            trace.steps.push(value);
            total += value;
        }
        let mean = total / frames.len() as f64;
        trace.epoch_means.push(mean);
        on_epoch(epoch + 1, mean);
    }
    Ok((params, trace))
}

/// One codeword per frame, in frame order. Frame `t` is subsampled with a
/// seed derived from `(seed, t)`.
pub fn encode_series(
    series: &SeriesFrameSet,
    enc: &EncoderSpec,
    params: &ParamStore,
    n: usize,
    seed: u64,
) -> Result<Vec<Codeword>> {
    series
        .frames()
        .iter()
        .map(|frame| {
            let t = frame.frame_index().unwrap_or(0);
            let sample = geometry::sample_fixed(frame, n, derive(seed, t as u64))?;
            encode(&sample, enc, params)
        })
        .collect()
}

/// Samples `n` points from every frame and reconstructs each sample.
/// Returns `(samples, reconstructions)`, both indexed like the series.
pub fn reconstruct_series(
    series: &SeriesFrameSet,
    enc: &EncoderSpec,
    dec: &DecoderSpec,
    template: &SphericalTemplate,
    params: &ParamStore,
    n: usize,
    seed: u64,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let mut inputs = Vec::with_capacity(series.len());
    let mut outputs = Vec::with_capacity(series.len());
    for frame in series.frames() {
        let t = frame.frame_index().unwrap_or(0);
        let sample = geometry::sample_fixed(frame, n, derive(seed, t as u64))?;
        let recon = reconstruct(&sample, enc, dec, template, params)?;
        outputs.push(if t > 0 { recon.with_frame_index(t) } else { recon });
        inputs.push(sample);
    }
    Ok((inputs, outputs))
}

#[cfg(test)]
mod tests;
