//! Synthetic time warps of a reference series with known ground truth.
//!
//! A warp function `f: [0, 1] -> [0, 1]` reparameterizes developmental time.
//! Warped frame `i` (1-based, of `T`) corresponds to reference index
//! `1 + f((i - 1) / (T - 1)) (T - 1)`; its cloud is the nearest reference
//! frame, jittered.

use std::f64::consts::FRAC_PI_2;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud, SeriesFrameSet};
use crate::rng::{derive, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpFamily {
    /// `sin(pi s / 2)`: fast early, slow late.
    Cos,
    /// `1 - cos(pi s / 2)`: slow early, fast late.
    Sin,
    /// Normalized cumulative sum of clipped Gaussian speed increments.
    Gaussian,
    /// `min(speed_factor s, 1)`.
    Faster,
}

impl WarpFamily {
    pub const ALL: [WarpFamily; 4] = [WarpFamily::Cos, WarpFamily::Sin, WarpFamily::Gaussian, WarpFamily::Faster];

    pub fn name(self) -> &'static str {
        match self {
            WarpFamily::Cos => "cos",
            WarpFamily::Sin => "sin",
            WarpFamily::Gaussian => "gaussian",
            WarpFamily::Faster => "faster",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpSpec {
    pub family: WarpFamily,
    pub speed_factor: f64,
    pub gaussian_sigma: f64,
    pub jitter_sigma2: f64,
    pub rng_seed: u64,
}

impl Default for WarpSpec {
    fn default() -> Self {
        WarpSpec {
            family: WarpFamily::Cos,
            speed_factor: 3.0,
            gaussian_sigma: 0.5,
            jitter_sigma2: 5.0,
            rng_seed: 0,
        }
    }
}

impl WarpSpec {
    pub fn new(family: WarpFamily) -> Self {
        WarpSpec {
            family,
            ..WarpSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed_factor > 0.0 && self.speed_factor.is_finite()) {
            return Err(Error::invalid("warp spec: speed_factor must be positive"));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::invalid("warp spec: gaussian_sigma must be >= 0"));
        }
        if !(self.jitter_sigma2 >= 0.0 && self.jitter_sigma2.is_finite()) {
            return Err(Error::invalid("warp spec: jitter_sigma2 must be >= 0"));
        }
        Ok(())
    }
}

/// Number of speed increments behind a Gaussian warp.
pub const GAUSSIAN_KNOTS: usize = 64;

/// A warp function with any random part already drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpFunction {
    family: WarpFamily,
    speed_factor: f64,
    /// Cumulative knot values `0 = c_0 <= ... <= c_K = 1` (Gaussian only).
    knots: Vec<f64>,
}

impl WarpFunction {
    pub fn new(spec: &WarpSpec) -> Result<Self> {
        spec.validate()?;
        let knots = if spec.family == WarpFamily::Gaussian {
            gaussian_knots(spec.gaussian_sigma, spec.rng_seed)?
        } else {
            Vec::new()
        };
        Ok(WarpFunction {
            family: spec.family,
            speed_factor: spec.speed_factor,
            knots,
        })
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("warp argument {s} outside [0, 1]")));
        }
        Ok(match self.family {
            WarpFamily::Cos => (FRAC_PI_2 * s).sin(),
            WarpFamily::Sin => 1.0 - (FRAC_PI_2 * s).cos(),
            WarpFamily::Faster => (self.speed_factor * s).min(1.0),
            WarpFamily::Gaussian => {
                let x = s * GAUSSIAN_KNOTS as f64;
                let j = (x.floor() as usize).min(GAUSSIAN_KNOTS - 1);
                let frac = x - j as f64;
                let (a, b) = (self.knots[j], self.knots[j + 1]);
                (a + frac * (b - a)).min(1.0)
            }
        })
    }
}

fn gaussian_knots(sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("warp spec: {e}")))?;
    let mut rng = seeded(derive(seed, 0));
    let mut knots = Vec::with_capacity(GAUSSIAN_KNOTS + 1);
    knots.push(0.0);
    let mut acc = 0.0;
    for _ in 0..GAUSSIAN_KNOTS {
        acc += (1.0 + normal.sample(&mut rng)).max(0.0);
        knots.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::invalid("gaussian warp drew no positive speed"));
    }
    for k in &mut knots {
        *k /= acc;
    }
    knots[GAUSSIAN_KNOTS] = 1.0;
    Ok(knots)
}

pub fn warp_function(spec: &WarpSpec, s: f64) -> Result<f64> {
    WarpFunction::new(spec)?.eval(s)
}

/// Reference index for each warped frame `1..=t`.
pub fn ground_truth(spec: &WarpSpec, t: usize) -> Result<Vec<f64>> {
    if t < 2 {
        return Err(Error::invalid("warping needs at least 2 frames"));
    }
    let f = WarpFunction::new(spec)?;
    let span = (t - 1) as f64;
    (1..=t)
        .map(|i| {
            let step = (i - 1) as f64;
            if spec.family == WarpFamily::Faster {
                // Exact on the linear ramp.
                Ok(1.0 + (spec.speed_factor * step).min(span))
            } else {
                Ok(1.0 + f.eval(step / span)? * span)
            }
        })
        .collect()
}

/// Warped series plus, for each of its frames, the reference index it
/// shows.
#[derive(Debug, Clone)]
pub struct WarpedSeries {
    pub frames: SeriesFrameSet,
    pub ground_truth: Vec<f64>,
    /// Reference frame each warped frame was copied from.
    pub source_frames: Vec<usize>,
}

pub fn apply_warp(reference: &SeriesFrameSet, spec: &WarpSpec) -> Result<WarpedSeries> {
    let t = reference.len();
    let ground_truth = ground_truth(spec, t)?;
    let mut frames = Vec::with_capacity(t);
    let mut source_frames = Vec::with_capacity(t);
    for (i, &g) in ground_truth.iter().enumerate() {
        let src = (g.round() as usize).clamp(1, t);
        let cloud = &reference.frames()[src - 1];
        let warped: PointCloud = geometry::jitter(cloud, spec.jitter_sigma2, derive(spec.rng_seed, i as u64 + 1))?;
        frames.push(warped);
        source_frames.push(src);
    }
    Ok(WarpedSeries {
        frames: SeriesFrameSet::new(frames, reference.minutes_per_frame())?,
        ground_truth,
        source_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{simulate_embryo, EmbryoSimSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(family: WarpFamily) -> WarpSpec {
        WarpSpec::new(family)
    }

    #[test]
    fn endpoints() {
        for family in WarpFamily::ALL {
            let s = spec(family);
            assert_eq!(warp_function(&s, 0.0).unwrap(), 0.0);
            assert_relative_eq!(warp_function(&s, 1.0).unwrap(), 1.0, epsilon = 1e-15);
            assert!(warp_function(&s, 1.5).is_err());
            assert!(warp_function(&s, -0.1).is_err());
        }
    }

    #[test]
    fn closed_forms() {
        let faster = spec(WarpFamily::Faster);
        assert_relative_eq!(warp_function(&faster, 0.2).unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(warp_function(&faster, 0.5).unwrap(), 1.0);
        let cos = warp_function(&spec(WarpFamily::Cos), 0.5).unwrap();
        assert_relative_eq!(cos, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert!(cos > 0.5);
        assert!(warp_function(&spec(WarpFamily::Sin), 0.5).unwrap() < 0.5);
    }

    #[test]
    fn faster_ground_truth_is_linear_then_saturates() {
        let gt = ground_truth(&spec(WarpFamily::Faster), 370).unwrap();
        assert_eq!(gt[40], 121.0);
        for (i, &g) in gt.iter().enumerate() {
            assert_eq!(g, (1.0 + 3.0 * i as f64).min(370.0));
        }
    }

    #[test]
    fn identity_warp_reproduces_reference() {
        let reference = simulate_embryo(&EmbryoSimSpec {
            total_frames: 6,
            start_count: 20,
            end_count: 40,
            ..Default::default()
        })
        .unwrap();
        let s = WarpSpec {
            family: WarpFamily::Faster,
            speed_factor: 1.0,
            jitter_sigma2: 0.0,
            ..Default::default()
        };
        let w = apply_warp(&reference, &s).unwrap();
        assert_eq!(w.ground_truth, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for (a, b) in w.frames.frames().iter().zip(reference.frames()) {
            assert_eq!(a.points(), b.points());
        }
    }

    #[test]
    fn zero_jitter_frames_are_reference_frames() {
        let reference = simulate_embryo(&EmbryoSimSpec {
            total_frames: 15,
            start_count: 20,
            end_count: 60,
            ..Default::default()
        })
        .unwrap();
        for family in WarpFamily::ALL {
            let s = WarpSpec { jitter_sigma2: 0.0, ..spec(family) };
            let w = apply_warp(&reference, &s).unwrap();
            assert_eq!(w.frames.len(), 15);
            for (frame, &src) in w.frames.frames().iter().zip(&w.source_frames) {
                assert_eq!(frame.points(), reference.frames()[src - 1].points());
                assert_eq!(frame.len(), reference.frames()[src - 1].len());
            }
        }
        let jittered = apply_warp(&reference, &spec(WarpFamily::Cos)).unwrap();
        assert_ne!(jittered.frames.frames()[3].points(), reference.frames()[jittered.source_frames[3] - 1].points());
    }

    #[test]
    fn gaussian_is_seeded() {
        let a = WarpSpec { rng_seed: 4, ..spec(WarpFamily::Gaussian) };
        let b = WarpSpec { rng_seed: 5, ..a.clone() };
        assert_eq!(ground_truth(&a, 50).unwrap(), ground_truth(&a, 50).unwrap());
        assert_ne!(ground_truth(&a, 50).unwrap(), ground_truth(&b, 50).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(WarpSpec { speed_factor: 0.0, ..Default::default() }.validate().is_err());
        assert!(WarpSpec { jitter_sigma2: -1.0, ..Default::default() }.validate().is_err());
        assert!(ground_truth(&WarpSpec::default(), 1).is_err());
    }

    proptest! {
        #[test]
        fn monotone_ground_truth(
            family in prop::sample::select(WarpFamily::ALL.to_vec()),
            factor in 0.2f64..5.0,
            sigma in 0.0f64..2.0,
            seed in 0u64..1000,
            t in 2usize..200,
        ) {
            let s = WarpSpec { family, speed_factor: factor, gaussian_sigma: sigma, rng_seed: seed, ..Default::default() };
            let f = WarpFunction::new(&s).unwrap();
            let grid: Vec<f64> = (0..=100).map(|i| f.eval(i as f64 / 100.0).unwrap()).collect();
            prop_assert!(grid.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(grid[0], 0.0);
            let gt = ground_truth(&s, t).unwrap();
            prop_assert!(gt.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(gt.iter().all(|&g| (1.0..=t as f64).contains(&g)));
        }
    }
}
