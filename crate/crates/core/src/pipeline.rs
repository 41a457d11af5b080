//! Whole-pipeline configuration with named profiles.
//!
//! `paper` keeps the published training settings; `desk` shrinks the problem
//! (120 frames, 512 sampled points, 512-point template, 50 autoencoder
//! epochs) so the full pipeline runs on a single CPU. A JSON config names a
//! profile and overrides any subset of fields.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alignreg::{self, AlignmentSequence, RegTrainConfig, RegressionSpec};
use crate::autodiff::{load_checkpoint, save_checkpoint, ParamStore};
use crate::embed::TsneConfig;
use crate::error::{Error, Result};
use crate::foldnet::{self, Codeword, DecoderSpec, EncoderSpec, LossKind, LossTrace, RotationRange, TrainConfig};
use crate::geometry::{self, EmbryoSimSpec, SeriesFrameSet};
use crate::rng::derive;
use crate::warp::{self, WarpFamily, WarpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::invalid(format!("unknown profile {other:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub simulation: EmbryoSimSpec,
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
    pub autoencoder: TrainConfig,
    pub regression: RegressionSpec,
    pub regressor: RegTrainConfig,
    /// Re-encode rotated reference frames while training the regressor.
    pub augment_regressor: bool,
    /// Points sampled per frame when extracting codewords.
    pub encode_points: usize,
    pub warps: Vec<WarpSpec>,
    pub tsne: TsneConfig,
    pub rng_seed: u64,
}

fn four_warps() -> Vec<WarpSpec> {
    WarpFamily::ALL.iter().map(|&f| WarpSpec::new(f)).collect()
}

impl PipelineConfig {
    pub fn paper() -> Self {
        PipelineConfig {
            profile: Profile::Paper,
            data_dir: "data".into(),
            output_dir: "out".into(),
            checkpoint_dir: "checkpoints".into(),
            simulation: EmbryoSimSpec::default(),
            encoder: EncoderSpec::default(),
            decoder: DecoderSpec::default(),
            autoencoder: TrainConfig::default(),
            regression: RegressionSpec::default(),
            regressor: RegTrainConfig::default(),
            augment_regressor: true,
            encode_points: 4096,
            warps: four_warps(),
            tsne: TsneConfig::default(),
            rng_seed: 0,
        }
    }

    pub fn desk() -> Self {
        let scale = EmbryoSimSpec::default().radius;
        PipelineConfig {
            profile: Profile::Desk,
            simulation: EmbryoSimSpec {
                total_frames: 120,
                start_count: 1040,
                end_count: 4950,
                ..EmbryoSimSpec::default()
            },
            encoder: EncoderSpec {
                coordinate_scale: scale,
                ..EncoderSpec::default()
            },
            decoder: DecoderSpec {
                template_size: 512,
                coordinate_scale: scale,
                ..DecoderSpec::default()
            },
            autoencoder: TrainConfig {
                epochs: 50,
                learning_rate: 1e-4,
                loss: LossKind::Mcd { k: 20 },
                input_points: 512,
                rotation: RotationRange::NONE,
                jitter_sigma2: 0.0,
                rng_seed: 0,
            },
            regressor: RegTrainConfig {
                epochs: 300,
                learning_rate: 1e-4,
                ..RegTrainConfig::default()
            },
            augment_regressor: false,
            encode_points: 512,
            ..PipelineConfig::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => PipelineConfig::paper(),
            Profile::Desk => PipelineConfig::desk(),
        }
    }

    /// Profile defaults overlaid with the fields present in `overrides`.
    /// The profile is taken from `overrides["profile"]`, else `fallback`.
    pub fn from_value(overrides: &Value, fallback: Profile) -> Result<Self> {
        let profile = match overrides.get("profile") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::invalid(format!("config profile: {e}")))?,
            None => fallback,
        };
        let mut base = serde_json::to_value(PipelineConfig::for_profile(profile))
            .map_err(|e| Error::invalid(format!("config: {e}")))?;
        merge(&mut base, overrides);
        let cfg: PipelineConfig = serde_json::from_value(base).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Profile) -> Result<Self> {
        let value: Value = crate::io::read_json(path)?;
        PipelineConfig::from_value(&value, fallback)
    }

    /// Replaces every stage seed with one derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self.simulation.rng_seed = derive(seed, 1);
        self.autoencoder.rng_seed = derive(seed, 2);
        self.regressor.rng_seed = derive(seed, 3);
        for (i, w) in self.warps.iter_mut().enumerate() {
            w.rng_seed = derive(seed, 10 + i as u64);
        }
        self.tsne.seed = derive(seed, 4);
        self
    }

    /// Seed for codeword extraction (point subsampling).
    pub fn encode_seed(&self) -> u64 {
        derive(self.rng_seed, 5)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.autoencoder.validate()?;
        self.regression.validate()?;
        self.regressor.validate()?;
        for w in &self.warps {
            w.validate()?;
        }
        if self.encode_points <= self.encoder.knn_k {
            return Err(Error::invalid("encode_points must exceed the encoder's knn_k"));
        }
        if self.regression.input_dim() != self.encoder.codeword_dim {
            return Err(Error::invalid("regressor input width must equal the codeword length"));
        }
        Ok(())
    }
}

/// Model description stored in an autoencoder checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderMeta {
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
    pub training: TrainConfig,
}

/// Model description stored in a regressor checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorMeta {
    pub regression: RegressionSpec,
    pub training: RegTrainConfig,
    pub reference_t: usize,
}

/// Saves parameters with `meta` as the checkpoint's model description.
pub fn save_model<T: Serialize>(path: &Path, params: &ParamStore, meta: &T) -> Result<()> {
    let meta = serde_json::to_value(meta).map_err(|e| Error::invalid(format!("checkpoint metadata: {e}")))?;
    save_checkpoint(params, path, meta)
}

pub fn load_model<T: DeserializeOwned>(path: &Path) -> Result<(ParamStore, T)> {
    let (params, manifest) = load_checkpoint(path)?;
    let meta = serde_json::from_value(manifest.meta).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("checkpoint metadata does not describe this model: {e}"),
    })?;
    Ok((params, meta))
}

pub fn simulate(cfg: &PipelineConfig) -> Result<SeriesFrameSet> {
    geometry::simulate_embryo(&cfg.simulation)
}

pub fn train_autoencoder(
    cfg: &PipelineConfig,
    reference: &SeriesFrameSet,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(ParamStore, LossTrace)> {
    foldnet::train_autoencoder_with(
        std::slice::from_ref(reference),
        &cfg.encoder,
        &cfg.decoder,
        &cfg.autoencoder,
        on_epoch,
    )
}

pub fn encode(cfg: &PipelineConfig, series: &SeriesFrameSet, ae: &ParamStore) -> Result<Vec<Codeword>> {
    foldnet::encode_series(series, &cfg.encoder, ae, cfg.encode_points, cfg.encode_seed())
}

/// Trains the regressor on reference codewords. With `augment_regressor`
/// set, `reference` and `ae` re-encode transformed frames each step.
pub fn train_regressor(
    cfg: &PipelineConfig,
    codes: &[Codeword],
    reference: Option<(&SeriesFrameSet, &ParamStore)>,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(ParamStore, LossTrace)> {
    if !cfg.augment_regressor {
        return alignreg::train_regressor_with(codes, &cfg.regression, &cfg.regressor, None, on_epoch);
    }
    let (series, ae) =
        reference.ok_or_else(|| Error::invalid("augmented regressor training needs the reference series and encoder"))?;
    let mut augment = alignreg::reencoding_augmenter(series, &cfg.encoder, ae, cfg.encode_points);
    alignreg::train_regressor_with(codes, &cfg.regression, &cfg.regressor, Some(&mut augment), on_epoch)
}

pub fn align(cfg: &PipelineConfig, query: &[Codeword], reg: &ParamStore, reference_t: usize) -> Result<AlignmentSequence> {
    alignreg::predict_alignment(query, &cfg.regression, reg, reference_t)
}

/// Alignment error of one warped copy of the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpEvaluation {
    pub family: WarpFamily,
    pub error_frames: f64,
    pub error_minutes: f64,
    pub alignment: AlignmentSequence,
    pub ground_truth: Vec<f64>,
}

/// Warps the reference with every configured family, aligns each warped
/// series and scores the postprocessed alignment.
pub fn evaluate_warps(
    cfg: &PipelineConfig,
    reference: &SeriesFrameSet,
    ae: &ParamStore,
    reg: &ParamStore,
) -> Result<Vec<WarpEvaluation>> {
    let mpf = reference.minutes_per_frame();
    cfg.warps
        .iter()
        .map(|w| {
            let warped = warp::apply_warp(reference, w)?;
            let codes = encode(cfg, &warped.frames, ae)?;
            let alignment = align(cfg, &codes, reg, reference.len())?;
            let error_frames = alignreg::alignment_error(&alignment.postprocessed, &warped.ground_truth, 1.0)?;
            Ok(WarpEvaluation {
                family: w.family,
                error_frames,
                error_minutes: error_frames * mpf,
                alignment,
                ground_truth: warped.ground_truth,
            })
        })
        .collect()
}

/// Postprocessed alignment error, in frames, of the reference against itself.
pub fn self_alignment_error(cfg: &PipelineConfig, codes: &[Codeword], reg: &ParamStore) -> Result<f64> {
    let seq = align(cfg, codes, reg, codes.len())?;
    let truth: Vec<f64> = codes.iter().map(|c| c.frame_index as f64).collect();
    alignreg::alignment_error(&seq.postprocessed, &truth, 1.0)
}

fn merge(base: &mut Value, overrides: &Value) {
    match (base, overrides) {
        // Tagged enums are replaced whole so a variant switch drops stale fields.
        (Value::Object(b), Value::Object(o)) if !o.contains_key("kind") => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
