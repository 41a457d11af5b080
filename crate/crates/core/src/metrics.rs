//! Chamfer distance and its k-neighbourhood ("point-to-region") variant.
//!
//! For clouds `A` (input) and `B` (reconstruction):
//!
//! ```text
//! CD(A, B)     = 1/|A| Σ_p min_q |p - q| + 1/|B| Σ_q min_p |q - p|
//! MCD_k(A, B)  = 1/|A| Σ_p 1/k Σ_{i<k} |p - q_i(p)| + 1/|B| Σ_q 1/k Σ_{j<k} |q - p_j(q)|
//! ```
//!
//! where `q_i(p)` is the `i`-th nearest point of `B` to `p`. Distances are
//! unsquared. `k` is clamped per direction to the size of the searched cloud.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::spatial::KdIndex;

/// Value of a Chamfer-family distance and its two directional terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub value: f64,
    /// Mean over input points of their distance to the reconstruction.
    pub term_in_to_out: f64,
    /// Mean over reconstruction points of their distance to the input.
    pub term_out_to_in: f64,
    pub k: usize,
}

impl MetricReport {
    fn from_terms(term_in_to_out: f64, term_out_to_in: f64, k: usize) -> Self {
        MetricReport {
            value: term_in_to_out + term_out_to_in,
            term_in_to_out,
            term_out_to_in,
            k,
        }
    }
}

pub fn chamfer(s_in: &PointCloud, s_out: &PointCloud) -> Result<MetricReport> {
    let in_index = KdIndex::build(s_in)?;
    let out_index = KdIndex::build(s_out)?;
    let forward = nearest_term(s_in.points(), &out_index)?;
    let backward = nearest_term(s_out.points(), &in_index)?;
    Ok(MetricReport::from_terms(forward, backward, 1))
}

pub fn modified_chamfer(s_in: &PointCloud, s_out: &PointCloud, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    let in_index = KdIndex::build(s_in)?;
    let out_index = KdIndex::build(s_out)?;
    let forward = region_term(s_in.points(), &out_index, k)?;
    let backward = region_term(s_out.points(), &in_index, k)?;
    Ok(MetricReport::from_terms(forward, backward, k))
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::invalid("neighbourhood size k must be at least 1"))
    } else {
        Ok(())
    }
}

fn nearest_term(from: &[Point3], to: &KdIndex) -> Result<f64> {
    let mut sum = 0.0;
    for &p in from {
        sum += to.knn(p, 1)?[0].distance;
    }
    Ok(sum / from.len() as f64)
}

fn region_term(from: &[Point3], to: &KdIndex, k: usize) -> Result<f64> {
    let k = k.min(to.len());
    let mut sum = 0.0;
    for &p in from {
        let local: f64 = to.knn(p, k)?.iter().map(|n| n.distance).sum();
        sum += local / k as f64;
    }
    Ok(sum / from.len() as f64)
}

/// Gradient of [`modified_chamfer`] with respect to every coordinate of
/// `s_out`, holding neighbour assignments fixed. Coincident pairs contribute
/// zero.
pub fn grad_wrt_out(s_in: &PointCloud, s_out: &PointCloud, k: usize) -> Result<Vec<[f64; 3]>> {
    Ok(modified_chamfer_with_grad(s_in, s_out, k)?.1)
}

/// Value and reconstruction-side gradient in one neighbour pass.
pub fn modified_chamfer_with_grad(
    s_in: &PointCloud,
    s_out: &PointCloud,
    k: usize,
) -> Result<(MetricReport, Vec<[f64; 3]>)> {
    let (report, grad, _) = mcd_with_assignment(s_in, s_out, k)?;
    Ok((report, grad))
}

/// As [`modified_chamfer_with_grad`], plus a hash of every neighbour
/// assignment in both directions.
pub(crate) fn mcd_with_assignment(
    s_in: &PointCloud,
    s_out: &PointCloud,
    k: usize,
) -> Result<(MetricReport, Vec<[f64; 3]>, u64)> {
    use std::hash::{Hash, Hasher};
    let mut assignment = std::collections::hash_map::DefaultHasher::new();
    check_k(k)?;
    let in_index = KdIndex::build(s_in)?;
    let out_index = KdIndex::build(s_out)?;
    let (pin, pout) = (s_in.points(), s_out.points());
    let mut grad = vec![[0.0; 3]; pout.len()];

    // Input -> reconstruction: each selected q receives (q - p)/|q - p|.
    let k_fwd = k.min(pout.len());
    let w_fwd = 1.0 / (pin.len() as f64 * k_fwd as f64);
    let mut forward = 0.0;
    for &p in pin {
        let hits = out_index.knn(p, k_fwd)?;
        let mut local = 0.0;
        for h in &hits {
            h.index.hash(&mut assignment);
            local += h.distance;
            accumulate_unit(&mut grad[h.index], pout[h.index], p, h.distance, w_fwd);
        }
        forward += local / k_fwd as f64;
    }
    forward /= pin.len() as f64;

    // Reconstruction -> input: each q receives Σ_j (q - p_j)/|q - p_j|.
    let k_bwd = k.min(pin.len());
    let w_bwd = 1.0 / (pout.len() as f64 * k_bwd as f64);
    let mut backward = 0.0;
    for (qi, &q) in pout.iter().enumerate() {
        let hits = in_index.knn(q, k_bwd)?;
        let mut local = 0.0;
        for h in &hits {
            h.index.hash(&mut assignment);
            local += h.distance;
            accumulate_unit(&mut grad[qi], q, pin[h.index], h.distance, w_bwd);
        }
        backward += local / k_bwd as f64;
    }
    backward /= pout.len() as f64;

    Ok((MetricReport::from_terms(forward, backward, k), grad, assignment.finish()))
}

fn accumulate_unit(g: &mut [f64; 3], q: Point3, p: Point3, dist: f64, weight: f64) {
    if dist == 0.0 {
        return;
    }
    let s = weight / dist;
    g[0] += s * (q.x - p.x);
    g[1] += s * (q.y - p.y);
    g[2] += s * (q.z - p.z);
}
