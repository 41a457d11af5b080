//! Codeword-to-frame-index regression, alignment prediction and monotone
//! postprocessing.
//!
//! A query embryo is aligned to a reference by regressing each of its frame
//! codewords onto the reference's frame index. The raw curve is not monotone;
//! [`postprocess_monotone`] replaces it by the mean of its running-max upper
//! envelope and reverse-running-min lower envelope.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Dense, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::foldnet::{self, Codeword, EncoderSpec, LossTrace, RotationRange};
use crate::geometry::{self, SeriesFrameSet};
use crate::rng::{derive, seeded};

/// Halving MLP from the codeword down to one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub widths: Vec<usize>,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            widths: vec![256, 128, 64, 32, 16, 8, 1],
        }
    }
}

impl RegressionSpec {
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 || w[w.len() - 1] != 1 || w[w.len() - 2] != 8 {
            return Err(Error::invalid("regression spec: must end with an 8 -> 1 layer"));
        }
        if w[..w.len() - 1].windows(2).any(|p| p[1] * 2 != p[0]) {
            return Err(Error::invalid("regression spec: hidden widths must halve"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Used only when an augmenter is supplied.
    pub rotation: RotationRange,
    pub center: bool,
    pub rng_seed: u64,
}

impl Default for RegTrainConfig {
    fn default() -> Self {
        RegTrainConfig {
            epochs: 700,
            learning_rate: 1e-5,
            rotation: RotationRange::symmetric(20.0),
            center: false,
            rng_seed: 0,
        }
    }
}

impl RegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("regression config: epochs must be >= 1"));
        }
        AdamConfig::with_learning_rate(self.learning_rate).validate()
    }
}

/// What an augmenter must re-encode: reference frame `frame_index`, sampled
/// with `seed`, rotated by `angles` (radians), optionally centred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRequest {
    pub frame_index: usize,
    pub angles: [f64; 3],
    pub center: bool,
    pub seed: u64,
}

/// Augmenter that re-encodes transformed frames of `series` with a trained
/// encoder.
pub fn reencoding_augmenter<'a>(
    series: &'a SeriesFrameSet,
    enc: &'a EncoderSpec,
    params: &'a ParamStore,
    points: usize,
) -> impl FnMut(&AugmentRequest) -> Result<Codeword> + 'a {
    move |req| {
        let frame = series
            .frame(req.frame_index)
            .ok_or_else(|| Error::invalid(format!("no reference frame {}", req.frame_index)))?;
        let mut cloud = geometry::sample_fixed(frame, points, req.seed)?;
        cloud = geometry::rotate(&cloud, req.angles)?;
        if req.center {
            cloud = geometry::center(&cloud)?;
        }
        foldnet::encode(&cloud, enc, params)
    }
}

pub fn init_params(spec: &RegressionSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    for (i, w) in spec.widths.windows(2).enumerate() {
        Dense::init(&mut store, &format!("reg.l{i}"), w[0], w[1], &mut rng)?;
    }
    Ok(store)
}

fn forward(tape: &mut Tape, spec: &RegressionSpec, params: &ParamStore, rows: usize, x: Vec<f64>) -> Result<Var> {
    let input = tape.constant(Tensor::matrix(rows, spec.input_dim(), x)?)?;
    regress_on_tape(tape, spec, params, input)
}

/// Records the regressor on `rows x input_dim` codewords; returns `rows x 1`.
pub fn regress_on_tape(tape: &mut Tape, spec: &RegressionSpec, params: &ParamStore, input: Var) -> Result<Var> {
    let mut h = input;
    let layers = spec.widths.len() - 1;
    for i in 0..layers {
        let layer = Dense::bind(params, &format!("reg.l{i}"))?;
        h = layer.forward(tape, params, h, i + 1 < layers)?;
    }
    Ok(h)
}

fn check_codes(codes: &[Codeword], dim: usize) -> Result<()> {
    if let Some(c) = codes.iter().find(|c| c.values.len() != dim) {
        return Err(Error::shape(
            "regressor",
            format!("codeword of frame {} has {} values, expected {dim}", c.frame_index, c.values.len()),
        ));
    }
    Ok(())
}

pub fn train_regressor(
    reference: &[Codeword],
    spec: &RegressionSpec,
    cfg: &RegTrainConfig,
) -> Result<(ParamStore, LossTrace)> {
    train_regressor_with(reference, spec, cfg, None, |_, _| {})
}

/// Trains with batch size 1 on targets `frame_index` (1..=T). With an
/// augmenter, every step uses a freshly re-encoded transformed frame in place
/// of the stored codeword.
pub fn train_regressor_with(
    reference: &[Codeword],
    spec: &RegressionSpec,
    cfg: &RegTrainConfig,
    mut augment: Option<&mut dyn FnMut(&AugmentRequest) -> Result<Codeword>>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ParamStore, LossTrace)> {
    spec.validate()?;
    cfg.validate()?;
    if reference.len() < 2 {
        return Err(Error::invalid("regressor needs at least 2 reference frames"));
    }
    let mut indices: Vec<usize> = reference.iter().map(|c| c.frame_index).collect();
    indices.sort_unstable();
    indices.dedup();
    if indices.len() != reference.len() {
        return Err(Error::invalid("reference codewords must have distinct frame indices"));
    }
    check_codes(reference, spec.input_dim())?;

    let mut params = init_params(spec, derive(cfg.rng_seed, 0))?;
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut order_rng = seeded(derive(cfg.rng_seed, 1));
    let mut aug_rng = seeded(derive(cfg.rng_seed, 2));
    let mut order: Vec<usize> = (0..reference.len()).collect();
    let mut trace = LossTrace::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &i in &order {
            let code = &reference[i];
            let input = match augment.as_mut() {
                Some(f) => {
                    let req = AugmentRequest {
                        frame_index: code.frame_index,
                        angles: cfg.rotation.sample(&mut aug_rng),
                        center: cfg.center,
                        seed: aug_rng.random(),
                    };
                    let c = f(&req)?;
                    check_codes(std::slice::from_ref(&c), spec.input_dim())?;
                    c.values
                }
                None => code.values.clone(),
            };
            let mut tape = Tape::new();
            let pred = forward(&mut tape, spec, &params, 1, input)?;
            let target = tape.constant(Tensor::matrix(1, 1, vec![code.frame_index as f64])?)?;
            let loss = tape.mse(pred, target)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            params.accumulate(&tape, &grads);
            adam_step(&mut params, &adam)?;
            trace.steps.push(value);
            total += value;
        }
        let mean = total / reference.len() as f64;
        trace.epoch_means.push(mean);
        on_epoch(epoch + 1, mean);
    }
    Ok((params, trace))
}

/// Raw and postprocessed predicted reference indices for one query series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSequence {
    pub raw: Vec<f64>,
    pub postprocessed: Vec<f64>,
    pub reference_t: usize,
}

/// Network outputs clamped to `[1, reference_t]`, with the monotone
/// postprocessing of the raw curve.
pub fn predict_alignment(
    query: &[Codeword],
    spec: &RegressionSpec,
    params: &ParamStore,
    reference_t: usize,
) -> Result<AlignmentSequence> {
    spec.validate()?;
    if query.is_empty() {
        return Err(Error::invalid("query series is empty"));
    }
    if reference_t < 1 {
        return Err(Error::invalid("reference length must be at least 1"));
    }
    check_codes(query, spec.input_dim())?;
    let x: Vec<f64> = query.iter().flat_map(|c| c.values.iter().copied()).collect();
    let mut tape = Tape::new();
    let out = forward(&mut tape, spec, params, query.len(), x)?;
    let hi = reference_t as f64;
    let raw: Vec<f64> = tape.value(out).data().iter().map(|v| v.clamp(1.0, hi)).collect();
    let postprocessed = postprocess_monotone(&raw)?;
    Ok(AlignmentSequence {
        raw,
        postprocessed,
        reference_t,
    })
}

/// Upper envelope (running max) and lower envelope (reverse running min).
pub fn monotone_envelopes(raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut upper = Vec::with_capacity(raw.len());
    let mut hi = f64::NEG_INFINITY;
    for &v in raw {
        hi = hi.max(v);
        upper.push(hi);
    }
    let mut lower = vec![0.0; raw.len()];
    let mut lo = f64::INFINITY;
    for (i, &v) in raw.iter().enumerate().rev() {
        lo = lo.min(v);
        lower[i] = lo;
    }
    (upper, lower)
}

/// Mean of the two monotone envelopes; non-decreasing.
pub fn postprocess_monotone(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot postprocess an empty sequence"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("alignment sequence has non-finite entries"));
    }
    let (upper, lower) = monotone_envelopes(raw);
    Ok(upper.iter().zip(&lower).map(|(u, l)| (u + l) / 2.0).collect())
}

/// Mean absolute index mismatch, in minutes.
pub fn alignment_error(predicted: &[f64], ground_truth: &[f64], minutes_per_frame: f64) -> Result<f64> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predicted vs {} ground truth",
            predicted.len(),
            ground_truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("alignment error of empty sequences"));
    }
    let sum: f64 = predicted.iter().zip(ground_truth).map(|(p, g)| (p - g).abs()).sum();
    Ok(sum / predicted.len() as f64 * minutes_per_frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let raw = [1.0, 3.0, 2.0, 4.0];
        let (u, l) = monotone_envelopes(&raw);
        assert_eq!(u, vec![1.0, 3.0, 3.0, 4.0]);
        assert_eq!(l, vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(postprocess_monotone(&raw).unwrap(), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn monotone_and_constant_inputs_unchanged() {
        let m = [1.0, 1.0, 2.5, 7.0, 7.0, 9.0];
        assert_eq!(postprocess_monotone(&m).unwrap(), m.to_vec());
        let c = [4.2; 5];
        assert_eq!(postprocess_monotone(&c).unwrap(), c.to_vec());
        assert!(postprocess_monotone(&[]).is_err());
    }

    #[test]
    fn error_metric() {
        let gt = [1.0, 2.0, 3.0];
        assert_eq!(alignment_error(&gt, &gt, 1.0).unwrap(), 0.0);
        assert_eq!(alignment_error(&[2.0, 3.0, 4.0], &gt, 1.0).unwrap(), 1.0);
        assert_eq!(alignment_error(&[2.0, 3.0, 4.0], &gt, 2.5).unwrap(), 2.5);
        assert!(alignment_error(&[1.0], &gt, 1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(RegressionSpec::default().validate().is_ok());
        assert!(RegressionSpec { widths: vec![256, 100, 8, 1] }.validate().is_err());
        assert!(RegressionSpec { widths: vec![32, 16, 8, 1] }.validate().is_ok());
        assert!(RegressionSpec { widths: vec![32, 16, 2] }.validate().is_err());
    }

    fn codes(t: usize, dim: usize) -> Vec<Codeword> {
        (1..=t)
            .map(|i| Codeword {
                values: (0..dim).map(|j| ((i * (j + 1)) as f64 * 0.37).sin() + i as f64 / t as f64).collect(),
                frame_index: i,
            })
            .collect()
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let spec = RegressionSpec { widths: vec![32, 16, 8, 1] };
        let ref_codes = codes(12, 32);
        let cfg = RegTrainConfig { epochs: 40, learning_rate: 1e-2, rng_seed: 5, ..Default::default() };
        let (p1, t1) = train_regressor(&ref_codes, &spec, &cfg).unwrap();
        let (p2, t2) = train_regressor(&ref_codes, &spec, &cfg).unwrap();
        assert_eq!(t1, t2);
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert_eq!(a.value(), b.value());
        }
        assert!(t1.epoch_means.last().unwrap() < &t1.epoch_means[0]);
        assert!(train_regressor(&ref_codes[..1], &spec, &cfg).is_err());
    }

    #[test]
    fn targets_are_frame_indices() {
        // Identical inputs: the MSE optimum is the mean target (T + 1) / 2.
        let spec = RegressionSpec { widths: vec![16, 8, 1] };
        let ref_codes: Vec<Codeword> = (1..=5)
            .map(|i| Codeword { values: vec![1.0; 16], frame_index: i })
            .collect();
        let cfg = RegTrainConfig { epochs: 400, learning_rate: 1e-2, rng_seed: 1, ..Default::default() };
        let (p, _) = train_regressor(&ref_codes, &spec, &cfg).unwrap();
        let out = predict_alignment(&ref_codes[..1], &spec, &p, 5).unwrap();
        assert!((out.raw[0] - 3.0).abs() < 0.05, "{}", out.raw[0]);
    }

    #[test]
    fn prediction_is_clamped() {
        let spec = RegressionSpec { widths: vec![16, 8, 1] };
        let mut p = init_params(&spec, 0).unwrap();
        p.set_value("reg.l1.b", vec![1e6]).unwrap();
        let q = vec![Codeword { values: vec![0.0; 16], frame_index: 1 }];
        let out = predict_alignment(&q, &spec, &p, 40).unwrap();
        assert_eq!(out.raw, vec![40.0]);
        p.set_value("reg.l1.b", vec![-1e6]).unwrap();
        assert_eq!(predict_alignment(&q, &spec, &p, 40).unwrap().raw, vec![1.0]);
        let bad = vec![Codeword { values: vec![0.0; 3], frame_index: 1 }];
        assert!(predict_alignment(&bad, &spec, &p, 40).is_err());
    }

    #[test]
    fn augmenter_replaces_codewords() {
        let spec = RegressionSpec { widths: vec![16, 8, 1] };
        let ref_codes: Vec<Codeword> = (1..=4)
            .map(|i| Codeword { values: vec![0.0; 16], frame_index: i })
            .collect();
        let cfg = RegTrainConfig { epochs: 2, learning_rate: 1e-3, ..Default::default() };
        let mut seen = Vec::new();
        let mut aug = |r: &AugmentRequest| -> Result<Codeword> {
            seen.push(r.frame_index);
            assert!(r.angles.iter().all(|a| a.abs() <= 20f64.to_radians()));
            Ok(Codeword { values: vec![r.frame_index as f64; 16], frame_index: r.frame_index })
        };
        train_regressor_with(&ref_codes, &spec, &cfg, Some(&mut aug), |_, _| {}).unwrap();
        seen.sort_unstable();
        assert_eq!(seen, vec![1, 1, 2, 2, 3, 3, 4, 4]);
    }

    proptest! {
        #[test]
        fn postprocessing_properties(raw in prop::collection::vec(-50.0f64..50.0, 1..80)) {
            let out = postprocess_monotone(&raw).unwrap();
            let (u, l) = monotone_envelopes(&raw);
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(postprocess_monotone(&out).unwrap(), out.clone());
            for i in 0..raw.len() {
                prop_assert!(l[i] <= out[i] && out[i] <= u[i]);
            }
        }

        #[test]
        fn error_is_symmetric_and_nonnegative(
            a in prop::collection::vec(1.0f64..100.0, 1..40),
            shift in -5.0f64..5.0,
        ) {
            let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let ab = alignment_error(&a, &b, 1.0).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, alignment_error(&b, &a, 1.0).unwrap());
            prop_assert_eq!(alignment_error(&a, &a, 1.0).unwrap(), 0.0);
        }
    }
}
