//! Centroid diagnostic: per-frame mean coordinates of input and
//! reconstruction, and how closely the reconstruction tracks the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Mean point of every cloud, in order.
pub fn centroid_curve(frames: &[PointCloud]) -> Vec<Point3> {
    frames.iter().map(PointCloud::centroid).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidTracking {
    /// Mean over frames of `|input.x - recon.x|`.
    pub error_x: f64,
    pub error_y: f64,
}

impl CentroidTracking {
    pub fn mean(&self) -> f64 {
        (self.error_x + self.error_y) / 2.0
    }
}

pub fn centroid_tracking(inputs: &[PointCloud], reconstructions: &[PointCloud]) -> Result<CentroidTracking> {
    if inputs.len() != reconstructions.len() || inputs.is_empty() {
        return Err(Error::invalid(format!(
            "need matching non-empty frame lists, got {} and {}",
            inputs.len(),
            reconstructions.len()
        )));
    }
    let a = centroid_curve(inputs);
    let b = centroid_curve(reconstructions);
    let n = a.len() as f64;
    Ok(CentroidTracking {
        error_x: a.iter().zip(&b).map(|(p, q)| (p.x - q.x).abs()).sum::<f64>() / n,
        error_y: a.iter().zip(&b).map(|(p, q)| (p.y - q.y).abs()).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&p| Point3::from(p)).collect()).unwrap()
    }

    #[test]
    fn tracking_error_by_hand() {
        let inputs = [cloud(&[[0.0, 0.0, 0.0], [2.0, 2.0, 0.0]]), cloud(&[[4.0, -1.0, 9.0]])];
        let recons = [cloud(&[[1.0, 1.0, 5.0]]), cloud(&[[3.0, 0.0, 0.0], [3.0, 1.0, 0.0]])];
        let curve = centroid_curve(&inputs);
        assert_eq!(curve[0], Point3::new(1.0, 1.0, 0.0));
        let t = centroid_tracking(&inputs, &recons).unwrap();
        assert_eq!(t.error_x, 0.5);
        assert_eq!(t.error_y, 0.75);
        assert_eq!(t.mean(), 0.625);
        assert!(centroid_tracking(&inputs, &recons[..1]).is_err());
    }
}
