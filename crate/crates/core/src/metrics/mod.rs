//! Distances between point clouds used for training and evaluation.
//!
//! All reported values in [`MetricsReport`] are multiplied by
//! [`REPORT_SCALE`], the convention of the completion literature.

mod assignment;
mod sinkhorn;

pub use assignment::solve_assignment;
pub use sinkhorn::{sinkhorn_uniform, SinkhornPlan};

use serde::{Deserialize, Serialize};

use crate::error::{FscError, Result};
use crate::geom::{NeighborIndex, PointCloud, Vec3};

pub const REPORT_SCALE: f64 = 1000.0;

/// Training-time defaults for [`emd_approx`].
pub const TRAIN_EMD_EPS: f64 = 0.005;
pub const TRAIN_EMD_ITERS: usize = 200;
const SINKHORN_TOL: f64 = 1e-6;

fn l1(a: &Vec3, b: &Vec3) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()
}

fn check_nonempty(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(FscError::EmptyInput)
    } else {
        Ok(())
    }
}

/// For each point of `from`, the index of and squared distance to its nearest
/// neighbor in `to`.
pub fn nearest_neighbors(from: &[Vec3], to: &NeighborIndex) -> Vec<(usize, f64)> {
    from.iter()
        .map(|p| {
            let (j, d) = to.nearest(p).expect("target index is non-empty");
            let d2 = (to.points()[j] - p).norm_squared();
            debug_assert!((d * d - d2).abs() <= 1e-9 * (1.0 + d2));
            (j, d2)
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

fn directional_l2sq(from: &[Vec3], to: &[Vec3]) -> f64 {
    let index = NeighborIndex::new(to);
    mean(nearest_neighbors(from, &index).into_iter().map(|(_, d2)| d2), from.len())
}

fn directional_l2(from: &[Vec3], to: &[Vec3]) -> f64 {
    let index = NeighborIndex::new(to);
    mean(nearest_neighbors(from, &index).into_iter().map(|(_, d2)| d2.sqrt()), from.len())
}

/// Exact L1 nearest-neighbor distances. The L1 nearest point lies within
/// `sqrt(3)` times the L2 nearest distance, so an L2 ball of that radius
/// holds every candidate.
fn directional_l1(from: &[Vec3], to: &[Vec3]) -> f64 {
    let index = NeighborIndex::new(to);
    let total: f64 = from
        .iter()
        .map(|p| {
            let (j, d) = index.nearest(p).expect("target index is non-empty");
            let mut best = l1(p, &to[j]);
            if d > 0.0 {
                let r = d * 3f64.sqrt() * (1.0 + 1e-12) + f64::MIN_POSITIVE;
                for (k, _) in index.radius_search(p, r) {
                    best = best.min(l1(p, &to[k]));
                }
            }
            best
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance with L1 point distances.
pub fn chamfer_l1(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(directional_l1(a.points(), b.points()) + directional_l1(b.points(), a.points()))
}

/// Symmetric Chamfer distance with squared Euclidean point distances.
pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(directional_l2sq(a.points(), b.points()) + directional_l2sq(b.points(), a.points()))
}

/// Symmetric Chamfer distance with plain (unsquared) Euclidean point
/// distances; the reconstruction term of the completion loss.
pub fn chamfer_euclidean(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(directional_l2(a.points(), b.points()) + directional_l2(b.points(), a.points()))
}

/// A bijection from source to target points and its mean matched distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub mapping: Vec<usize>,
    pub cost: f64,
}

pub fn euclidean_cost_matrix(a: &[Vec3], b: &[Vec3]) -> Vec<f64> {
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            cost.push((p - q).norm());
        }
    }
    cost
}

/// Exact earth mover's distance between equal-size clouds: the minimum over
/// bijections of the mean matched Euclidean distance.
pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<(f64, Assignment)> {
    if a.len() != b.len() {
        return Err(FscError::SizeMismatch { left: a.len(), right: b.len() });
    }
    check_nonempty(a, b)?;
    let n = a.len();
    let cost = euclidean_cost_matrix(a.points(), b.points());
    let mapping = solve_assignment(&cost, n)?;
    let total: f64 = mapping.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    let c = total / n as f64;
    Ok((c, Assignment { mapping, cost: c }))
}

/// Result of [`emd_approx`].
#[derive(Debug, Clone)]
pub struct ApproxEmd {
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Row-major `n x n` plan with total mass 1.
    pub plan: Vec<f64>,
}

/// Entropy-regularized transport cost between equal-size clouds.
///
/// The returned cost is `<plan, C>` for the Sinkhorn plan, so it approaches
/// [`emd`] from above as `eps -> 0`. Gradients with respect to point
/// coordinates follow from holding the plan fixed.
pub fn emd_approx(a: &PointCloud, b: &PointCloud, eps: f64, iters: usize) -> Result<ApproxEmd> {
    if a.len() != b.len() {
        return Err(FscError::SizeMismatch { left: a.len(), right: b.len() });
    }
    check_nonempty(a, b)?;
    if !(eps > 0.0) {
        return Err(FscError::InvalidValue(format!("eps must be positive, got {eps}")));
    }
    let n = a.len();
    let cost = euclidean_cost_matrix(a.points(), b.points());
    let s = sinkhorn_uniform(&cost, n, n, eps, iters, SINKHORN_TOL);
    Ok(ApproxEmd { cost: s.cost, converged: s.converged, iterations: s.iterations, plan: s.plan })
}

/// Minimum matching distance: the smallest CD-l2 from `output` to any
/// reference, and the index achieving it (lowest index on ties).
pub fn mmd(output: &PointCloud, references: &[PointCloud]) -> Result<(f64, usize)> {
    if references.is_empty() {
        return Err(FscError::EmptyReferenceSet);
    }
    let mut best = (f64::INFINITY, 0);
    for (i, r) in references.iter().enumerate() {
        let d = chamfer_l2(output, r)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

/// Aggregated evaluation numbers, each already multiplied by
/// [`REPORT_SCALE`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cd_l1: Option<f64>,
    pub cd_l2: Option<f64>,
    pub emd: Option<f64>,
    pub mmd: Option<f64>,
    pub count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(p: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_xyz(p).unwrap()
    }

    #[test]
    fn golden_chamfer_values() {
        let o = cloud(&[[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l1(&o, &cloud(&[[1.0, 1.0, 1.0]])).unwrap(), 6.0);
        assert_eq!(chamfer_l2(&o, &cloud(&[[2.0, 0.0, 0.0]])).unwrap(), 8.0);
        assert_eq!(chamfer_euclidean(&o, &cloud(&[[2.0, 0.0, 0.0]])).unwrap(), 4.0);
        assert_eq!(chamfer_l1(&o, &o).unwrap(), 0.0);
    }

    #[test]
    fn empty_inputs_fail() {
        let o = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(chamfer_l1(&o, &PointCloud::default()), Err(FscError::EmptyInput)));
        assert!(matches!(mmd(&o, &[]), Err(FscError::EmptyReferenceSet)));
        assert!(matches!(emd(&o, &cloud(&[[0.0; 3], [1.0; 3]])), Err(FscError::SizeMismatch { .. })));
    }

    #[test]
    fn emd_of_permuted_pair_is_zero() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let (c, asg) = emd(&a, &b).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(asg.mapping, vec![1, 0]);
    }

    #[test]
    fn mmd_picks_self() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let far = cloud(&[[5.0, 0.0, 0.0]]);
        let (d, i) = mmd(&a, &[far.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!((d, i), (0.0, 1));
        assert_eq!(mmd(&a, &[far.clone()]).unwrap().0, chamfer_l2(&a, &far).unwrap());
    }
}
