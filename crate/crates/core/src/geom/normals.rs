use nalgebra::{Matrix3, SymmetricEigen};

use super::{NeighborIndex, PointCloud, Vec3};
use crate::error::{FscError, Result};

/// Relative eigenvalue threshold below which a neighborhood covariance is
/// treated as rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Output of [`estimate_normals`]: the cloud with normals attached and one
/// flag per point marking neighborhoods whose covariance had rank < 2.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub degenerate: Vec<bool>,
}

impl NormalEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// PCA normals from the `k` nearest neighbors (the point itself included),
/// oriented away from the cloud centroid. Rank-deficient neighborhoods get
/// `+z` and are flagged.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(FscError::InvalidValue(format!("normal estimation needs k >= 3, got {k}")));
    }
    if cloud.len() < k {
        return Err(FscError::InsufficientPoints { requested: k, available: cloud.len() });
    }
    let points = cloud.points();
    let index = NeighborIndex::new(points);
    let centroid = cloud.centroid().ok_or(FscError::EmptyInput)?;
    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::with_capacity(points.len());
    for p in points {
        let nn = index.knn(p, k)?;
        let mean = nn.iter().fold(Vec3::zeros(), |acc, &(i, _)| acc + points[i]) / k as f64;
        let mut cov = Matrix3::zeros();
        for &(i, _) in &nn {
            let d = points[i] - mean;
            cov += d * d.transpose();
        }
        cov /= k as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let largest = eig.eigenvalues[order[2]];
        let middle = eig.eigenvalues[order[1]];
        if !(largest > 0.0) || middle <= RANK_TOLERANCE * largest {
            normals.push(Vec3::z());
            degenerate.push(true);
            continue;
        }
        let mut n: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
        n /= n.norm();
        if n.dot(&(p - centroid)) < 0.0 {
            n = -n;
        }
        normals.push(n);
        degenerate.push(false);
    }
    let mut out = cloud.clone();
    out.set_normals(normals)?;
    Ok(NormalEstimate { cloud: out, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals_are_vertical() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                pts.push(Vec3::new(i as f64 * 0.1 + 0.013 * j as f64, j as f64 * 0.1, 0.0));
            }
        }
        let est = estimate_normals(&PointCloud::new(pts).unwrap(), 8).unwrap();
        assert_eq!(est.degenerate_count(), 0);
        for n in est.cloud.normals().unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn collinear_is_flagged() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let est = estimate_normals(&c, 3).unwrap();
        assert_eq!(est.degenerate, vec![true; 3]);
        assert!(est.cloud.normals().unwrap().iter().all(|n| *n == Vec3::z()));
    }

    #[test]
    fn rejects_small_k() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!(estimate_normals(&c, 2).is_err());
        assert!(matches!(estimate_normals(&c, 3), Err(FscError::InsufficientPoints { .. })));
    }
}
