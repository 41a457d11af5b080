//! Point-cloud value types, rigid transforms and augmentations, fixed-size
//! sampling, the spherical folding template and a procedural epiboly
//! simulator.
//!
//! Coordinate convention: the animal pole sits on `+y`, epiboly spreads the
//! cell shell towards `-y`, and the prospective dorsal side is `+x`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn squared_distance(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(self, other: Point3) -> f64 {
        self.squared_distance(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub(crate) fn coord(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// One frame's unordered set of nucleus positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    frame_index: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(PointCloud {
            points,
            frame_index: None,
        })
    }

    pub fn with_frame_index(mut self, frame_index: usize) -> Self {
        self.frame_index = Some(frame_index);
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame_index(&self) -> Option<usize> {
        self.frame_index
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let sum = self
            .points
            .iter()
            .fold(Point3::ORIGIN, |acc, &p| acc + p);
        sum * (1.0 / n)
    }

    /// Row-major `n x 3` coordinate buffer.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "flat coordinate buffer of length {} is not a multiple of 3",
                flat.len()
            )));
        }
        PointCloud::new(
            flat.chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    fn map_points(&self, f: impl FnMut(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            frame_index: self.frame_index,
        }
    }
}

/// A time-ordered sequence of frames, indexed `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrameSet {
    frames: Vec<PointCloud>,
    minutes_per_frame: f64,
}

impl SeriesFrameSet {
    /// Frame indices are (re)assigned contiguously from 1.
    pub fn new(frames: Vec<PointCloud>, minutes_per_frame: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "a series needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(minutes_per_frame > 0.0 && minutes_per_frame.is_finite()) {
            return Err(Error::invalid("minutes_per_frame must be positive"));
        }
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.with_frame_index(i + 1))
            .collect();
        Ok(SeriesFrameSet {
            frames,
            minutes_per_frame,
        })
    }

    pub fn frames(&self) -> &[PointCloud] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn minutes_per_frame(&self) -> f64 {
        self.minutes_per_frame
    }

    /// Frame by its 1-based index.
    pub fn frame(&self, index: usize) -> Option<&PointCloud> {
        index.checked_sub(1).and_then(|i| self.frames.get(i))
    }
}

/// Draws exactly `n` points. Uniform without replacement when the cloud is
/// large enough, with replacement otherwise.
pub fn sample_fixed(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = seeded(seed);
    let len = cloud.len();
    let points = if len >= n {
        rand::seq::index::sample(&mut rng, len, n)
            .into_iter()
            .map(|i| cloud.points[i])
            .collect()
    } else {
        (0..n)
            .map(|_| cloud.points[rng.random_range(0..len)])
            .collect()
    };
    Ok(PointCloud {
        points,
        frame_index: cloud.frame_index,
    })
}

/// Rotation matrix for intrinsic rotations about x, then y, then z.
pub fn rotation_matrix(angles_xyz: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, c] = angles_xyz;
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
    // Intrinsic composition multiplies on the right.
    mat3_mul(&mat3_mul(&rx, &ry), &rz)
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn rotate(cloud: &PointCloud, angles_xyz: [f64; 3]) -> Result<PointCloud> {
    if angles_xyz.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("rotation angles must be finite"));
    }
    if angles_xyz == [0.0; 3] {
        return Ok(cloud.clone());
    }
    let r = rotation_matrix(angles_xyz);
    Ok(cloud.map_points(|p| {
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }))
}

/// Adds i.i.d. `N(0, sigma2)` noise to every coordinate.
pub fn jitter(cloud: &PointCloud, sigma2: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid(format!(
            "jitter variance must be finite and non-negative, got {sigma2}"
        )));
    }
    if sigma2 == 0.0 {
        return Ok(cloud.clone());
    }
    let sigma = sigma2.sqrt();
    let mut rng = seeded(seed);
    let mut noise = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z
    };
    Ok(cloud.map_points(|p| {
        let (dx, dy, dz) = (noise(), noise(), noise());
        Point3::new(p.x + dx, p.y + dy, p.z + dz)
    }))
}

pub fn center(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let c = cloud.centroid();
    Ok(cloud.map_points(|&p| p - c))
}

/// `M` near-evenly spread unit vectors: the fixed grid the decoder folds.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalTemplate {
    points: Vec<Point3>,
}

impl SphericalTemplate {
    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }
}

const RECENTER_PASSES: usize = 8;

/// Fibonacci-lattice sphere: latitudes at equal-area spacing, longitudes
/// advanced by the golden angle.
pub fn make_spherical_template(m: usize) -> Result<SphericalTemplate> {
    if m < 4 {
        return Err(Error::invalid(format!(
            "spherical template needs at least 4 points, got {m}"
        )));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let mut points: Vec<Point3> = (0..m)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            let p = Point3::new(r * phi.cos(), y, r * phi.sin());
            p * (1.0 / p.norm())
        })
        .collect();
    // Small lattices (m = 4, 7) are visibly lopsided; a few
    // subtract-centroid-and-renormalize passes balance them. Large lattices
    // move by a negligible amount.
    for _ in 0..RECENTER_PASSES {
        let n = points.len() as f64;
        let c = points.iter().fold(Point3::ORIGIN, |a, &p| a + p) * (1.0 / n);
        for p in &mut points {
            let q = *p - c;
            *p = q * (1.0 / q.norm());
        }
    }
    Ok(SphericalTemplate { points })
}

/// Parameters of the procedural epiboly simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbryoSimSpec {
    pub total_frames: usize,
    pub radius: f64,
    pub start_count: usize,
    pub end_count: usize,
    pub start_polar_extent: f64,
    pub end_polar_extent: f64,
    pub dorsal_bias_onset: f64,
    pub dorsal_bias_strength: f64,
    pub minutes_per_frame: f64,
    pub rng_seed: u64,
}

impl Default for EmbryoSimSpec {
    fn default() -> Self {
        EmbryoSimSpec {
            total_frames: 370,
            radius: 300.0,
            start_count: 4160,
            end_count: 19794,
            start_polar_extent: PI / 2.0,
            end_polar_extent: PI,
            dorsal_bias_onset: 0.7,
            dorsal_bias_strength: 3.0,
            minutes_per_frame: 1.0,
            rng_seed: 0,
        }
    }
}

/// Radial noise as a fraction of the shell radius.
const RADIAL_NOISE: f64 = 0.01;

impl EmbryoSimSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("embryo simulator: {m}")));
        if self.total_frames < 2 {
            return bad("total_frames must be at least 2");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive");
        }
        if self.start_count == 0 || self.start_count > self.end_count {
            return bad("need 1 <= start_count <= end_count");
        }
        if !(self.start_polar_extent > 0.0
            && self.start_polar_extent <= self.end_polar_extent
            && self.end_polar_extent <= PI)
        {
            return bad("need 0 < start_polar_extent <= end_polar_extent <= pi");
        }
        if !(0.0..=1.0).contains(&self.dorsal_bias_onset) {
            return bad("dorsal_bias_onset must lie in [0, 1]");
        }
        if !(self.dorsal_bias_strength >= 0.0 && self.dorsal_bias_strength.is_finite()) {
            return bad("dorsal_bias_strength must be non-negative");
        }
        if !(self.minutes_per_frame > 0.0 && self.minutes_per_frame.is_finite()) {
            return bad("minutes_per_frame must be positive");
        }
        Ok(())
    }

    /// Point count of frame `t` (1-based).
    pub fn count_at(&self, t: usize) -> usize {
        let s = self.progress(t);
        let span = (self.end_count - self.start_count) as f64;
        self.start_count + (s * span).round() as usize
    }

    pub fn polar_extent_at(&self, t: usize) -> f64 {
        let s = self.progress(t);
        self.start_polar_extent + s * (self.end_polar_extent - self.start_polar_extent)
    }

    /// Bias amplitude in front of `cos(angle to +x)`; zero before the onset.
    pub fn dorsal_bias_at(&self, t: usize) -> f64 {
        let phase = t as f64 / self.total_frames as f64 - self.dorsal_bias_onset;
        if phase > 0.0 {
            self.dorsal_bias_strength * phase
        } else {
            0.0
        }
    }

    fn progress(&self, t: usize) -> f64 {
        (t - 1) as f64 / (self.total_frames - 1) as f64
    }
}

/// Generates a synthetic series of a cell shell spreading from a hemispherical
/// cap over the whole sphere, with cell density drifting towards `+x` late in
/// the series.
///
/// Each cell `j` keeps its own random variates across frames (area fraction,
/// radial noise, azimuth proposals), so frames are coupled: a cell present at
/// frame `t` is present at every later frame and only moves down the shell as
/// the cap widens. This makes the count and the lowest `y` monotone in `t`.
pub fn simulate_embryo(spec: &EmbryoSimSpec) -> Result<SeriesFrameSet> {
    spec.validate()?;
    let mut rng = seeded(spec.rng_seed);
    let cells: Vec<(f64, f64)> = (0..spec.end_count)
        .map(|_| {
            let area: f64 = rng.random();
            let radial: f64 = StandardNormal.sample(&mut rng);
            (area, radial)
        })
        .collect();

    let frames = (1..=spec.total_frames)
        .map(|t| {
            let count = spec.count_at(t);
            let cos_extent = spec.polar_extent_at(t).cos();
            let bias = spec.dorsal_bias_at(t);
            let points = cells[..count]
                .iter()
                .enumerate()
                .map(|(j, &(area, radial))| {
                    // Uniform-by-area on the cap: cos(theta) uniform in [cos(extent), 1].
                    let cos_theta = 1.0 - area * (1.0 - cos_extent);
                    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
                    let phi = sample_azimuth(spec.rng_seed, j as u64, sin_theta, bias);
                    let r = spec.radius * (1.0 + RADIAL_NOISE * radial);
                    Point3::new(
                        r * sin_theta * phi.cos(),
                        r * cos_theta,
                        r * sin_theta * phi.sin(),
                    )
                })
                .collect();
            PointCloud::new(points)
        })
        .collect::<Result<Vec<_>>>()?;
    SeriesFrameSet::new(frames, spec.minutes_per_frame)
}

/// Azimuth by rejection against `w = max(0, 1 + bias * cos(angle to +x))`,
/// where `cos(angle to +x) = sin(theta) * cos(phi)`. Conditioning on `theta`
/// keeps the joint density proportional to `w` while `w` stays unclamped.
fn sample_azimuth(seed: u64, cell: u64, sin_theta: f64, bias: f64) -> f64 {
    let mut rng = seeded(derive(seed, cell));
    let w_max = 1.0 + bias * sin_theta;
    loop {
        let phi = rng.random::<f64>() * 2.0 * PI;
        if bias == 0.0 {
            return phi;
        }
        let w = (1.0 + bias * sin_theta * phi.cos()).max(0.0);
        if rng.random::<f64>() * w_max < w {
            return phi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seeded(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cloud_rejects_empty_and_nan() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyCloud)));
        let bad = vec![Point3::ORIGIN, Point3::new(f64::NAN, 0.0, 0.0)];
        assert!(matches!(
            PointCloud::new(bad),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn series_needs_two_frames() {
        let c = random_cloud(3, 1);
        assert!(SeriesFrameSet::new(vec![c.clone()], 1.0).is_err());
        let s = SeriesFrameSet::new(vec![c.clone(), c], 1.0).unwrap();
        assert_eq!(s.frame(2).unwrap().frame_index(), Some(2));
        assert!(s.frame(0).is_none());
    }

    #[test]
    fn sample_without_replacement_from_large_cloud() {
        let cloud = random_cloud(19794, 3);
        let s = sample_fixed(&cloud, 4096, 11).unwrap();
        assert_eq!(s.len(), 4096);
        let mut keys: Vec<[u64; 3]> = s
            .points()
            .iter()
            .map(|p| p.to_array().map(f64::to_bits))
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 4096);
        let all: std::collections::HashSet<[u64; 3]> = cloud
            .points()
            .iter()
            .map(|p| p.to_array().map(f64::to_bits))
            .collect();
        assert!(keys.iter().all(|k| all.contains(k)));
    }

    #[test]
    fn sample_of_exact_size_is_permutation() {
        let cloud = random_cloud(50, 4);
        let s = sample_fixed(&cloud, 50, 2).unwrap();
        let key = |c: &PointCloud| {
            let mut v: Vec<[u64; 3]> = c
                .points()
                .iter()
                .map(|p| p.to_array().map(f64::to_bits))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&s), key(&cloud));
    }

    #[test]
    fn sample_with_replacement_from_small_cloud() {
        let cloud = random_cloud(3, 5);
        let s = sample_fixed(&cloud, 5, 9).unwrap();
        assert_eq!(s.len(), 5);
        for p in s.points() {
            assert!(cloud.points().contains(p));
        }
        assert!(sample_fixed(&cloud, 0, 1).is_err());
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let cloud = random_cloud(20, 6);
        assert_eq!(rotate(&cloud, [0.0; 3]).unwrap(), cloud);
        let unit = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let r = rotate(&unit, [0.0, 0.0, PI / 2.0]).unwrap();
        let p = r.points()[0];
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 0.0, epsilon = 1e-12);
        assert!(rotate(&unit, [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rotation_order_is_x_then_y_then_z_intrinsic() {
        // Intrinsic x->y->z equals extrinsic z->y->x: z first on the vector.
        let unit = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let r = rotate(&unit, [PI / 2.0, 0.0, PI / 2.0]).unwrap();
        let p = r.points()[0];
        // Rz sends x to y, then Rx sends y to z.
        assert_abs_diff_eq!(p.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jitter_zero_and_determinism() {
        let cloud = random_cloud(30, 7);
        assert_eq!(jitter(&cloud, 0.0, 1).unwrap(), cloud);
        assert_eq!(jitter(&cloud, 5.0, 3).unwrap(), jitter(&cloud, 5.0, 3).unwrap());
        assert_ne!(jitter(&cloud, 5.0, 3).unwrap(), jitter(&cloud, 5.0, 4).unwrap());
        assert!(jitter(&cloud, -1.0, 3).is_err());
    }

    #[test]
    fn jitter_variance_matches() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN; 10_000]).unwrap();
        let j = jitter(&cloud, 5.0, 17).unwrap();
        for axis in 0..3 {
            let xs: Vec<f64> = j.points().iter().map(|p| p.coord(axis)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var =
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((4.5..=5.5).contains(&var), "axis {axis}: variance {var}");
        }
    }

    #[test]
    fn center_translates_centroid_to_origin() {
        let base = random_cloud(40, 8);
        let c = center(&base).unwrap();
        let shifted = PointCloud::new(
            c.points()
                .iter()
                .map(|&p| p + Point3::new(1.0, 2.0, 3.0))
                .collect(),
        )
        .unwrap();
        let recentered = center(&shifted).unwrap();
        for (a, b) in recentered.points().iter().zip(c.points()) {
            assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-12);
            assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-12);
            assert_abs_diff_eq!(a.z, b.z, epsilon = 1e-12);
        }
        assert!(c.centroid().norm() < 1e-9);
    }

    #[test]
    fn template_construction() {
        assert!(make_spherical_template(3).is_err());
        let t = make_spherical_template(2025).unwrap();
        assert_eq!(t.len(), 2025);
        let four = make_spherical_template(4).unwrap();
        let pts = four.points();
        let mut min_d = f64::INFINITY;
        for i in 0..4 {
            for j in i + 1..4 {
                min_d = min_d.min(pts[i].distance(pts[j]));
            }
        }
        assert!(min_d > 0.5, "min pairwise distance {min_d}");
        for m in [4, 5, 17, 256, 512, 2025] {
            let t = make_spherical_template(m).unwrap();
            for p in t.points() {
                assert_abs_diff_eq!(p.norm(), 1.0, epsilon = 1e-9);
            }
            let c = t.points().iter().fold(Point3::ORIGIN, |a, &p| a + p) * (1.0 / m as f64);
            assert!(c.norm() < 0.05, "m={m}: centroid norm {}", c.norm());
        }
    }

    fn small_spec() -> EmbryoSimSpec {
        EmbryoSimSpec {
            total_frames: 40,
            start_count: 400,
            end_count: 1900,
            rng_seed: 5,
            ..EmbryoSimSpec::default()
        }
    }

    #[test]
    fn simulator_first_frame_is_hemisphere() {
        let spec = EmbryoSimSpec::default();
        let series = simulate_embryo(&EmbryoSimSpec {
            total_frames: 3,
            ..spec.clone()
        })
        .unwrap();
        let first = &series.frames()[0];
        assert_eq!(first.len(), 4160);
        assert!(first.points().iter().all(|p| p.y >= -0.05 * spec.radius));
        let last = &series.frames()[2];
        assert_eq!(last.len(), 19794);
        let min_y = last.points().iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        assert!((min_y + spec.radius).abs() < 0.05 * spec.radius, "min y {min_y}");
    }

    #[test]
    fn simulator_monotone_and_biased() {
        let spec = small_spec();
        let series = simulate_embryo(&spec).unwrap();
        assert_eq!(series.len(), 40);
        let mut prev_count = 0;
        let mut prev_min_y = f64::INFINITY;
        for f in series.frames() {
            assert!(f.len() >= prev_count);
            let min_y = f.points().iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            assert!(min_y <= prev_min_y);
            prev_count = f.len();
            prev_min_y = min_y;
        }
        let first_x = series.frames()[0].centroid().x;
        let last_x = series.frames()[39].centroid().x;
        assert!(last_x > first_x, "centroid x {first_x} -> {last_x}");
        assert_eq!(simulate_embryo(&spec).unwrap(), series);
    }

    #[test]
    fn simulator_rejects_bad_spec() {
        let bad = [
            EmbryoSimSpec { total_frames: 1, ..small_spec() },
            EmbryoSimSpec { start_count: 2000, ..small_spec() },
            EmbryoSimSpec { end_polar_extent: 4.0, ..small_spec() },
            EmbryoSimSpec { dorsal_bias_onset: 1.5, ..small_spec() },
            EmbryoSimSpec { radius: 0.0, ..small_spec() },
        ];
        for spec in bad {
            assert!(simulate_embryo(&spec).is_err(), "{spec:?}");
        }
    }

    proptest! {
        #[test]
        fn rotation_is_isometry(seed in 0u64..1000, a in -7.0f64..7.0, b in -7.0f64..7.0, c in -7.0f64..7.0) {
            let cloud = random_cloud(100, seed);
            let r = rotate(&cloud, [a, b, c]).unwrap();
            let (p, q) = (cloud.points(), r.points());
            for i in 0..p.len() {
                for j in i + 1..p.len() {
                    let d0 = p[i].distance(p[j]);
                    let d1 = q[i].distance(q[j]);
                    prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1e-300));
                }
            }
        }

        #[test]
        fn center_is_idempotent(seed in 0u64..1000, n in 1usize..200) {
            let cloud = random_cloud(n, seed);
            let once = center(&cloud).unwrap();
            prop_assert!(once.centroid().norm() < 1e-9);
            let twice = center(&once).unwrap();
            for (a, b) in once.points().iter().zip(twice.points()) {
                prop_assert!(a.distance(*b) < 1e-9);
            }
        }

        #[test]
        fn sampling_is_deterministic(seed in 0u64..1000, n in 1usize..300) {
            let cloud = random_cloud(100, 42);
            prop_assert_eq!(sample_fixed(&cloud, n, seed).unwrap(), sample_fixed(&cloud, n, seed).unwrap());
        }
    }
}
