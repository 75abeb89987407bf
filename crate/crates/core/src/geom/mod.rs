//! Point-cloud primitives shared by every other module.

mod index;
mod normals;
pub mod ply;

pub use index::NeighborIndex;
pub use normals::{estimate_normals, NormalEstimate};

use nalgebra::Vector3;
use rand::seq::index::sample;

use crate::error::{FscError, Result};
use crate::rng::rng_from;

pub type Vec3 = Vector3<f64>;

/// Tolerance on the Euclidean norm of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// An ordered list of 3D points with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    pub id: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(FscError::InvalidValue(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, normals: None, id: None })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn from_xyz(xyz: &[[f64; 3]]) -> Result<Self> {
        Self::new(xyz.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    /// Builds a cloud from a flat `x0 y0 z0 x1 ...` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(FscError::InvalidValue(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(FscError::SizeMismatch { left: self.points.len(), right: normals.len() });
        }
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|c| c.is_finite()) || (n.norm() - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(FscError::InvalidValue(format!("normal {i} is not a unit vector")));
            }
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    /// Selects points (and normals) by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            id: self.id.clone(),
        }
    }

    /// Applies `p -> (p - center) * scale` to every point; normals are kept.
    pub fn transformed(&self, center: &Vec3, scale: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| (p - center) * scale).collect(),
            normals: self.normals.clone(),
            id: self.id.clone(),
        }
    }
}

/// Inverse-transform data returned by [`normalize_unit`]:
/// `normalized = (original - centroid) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTransform {
    pub scale: f64,
    pub centroid: Vec3,
}

impl UnitTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.centroid) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.centroid
    }
}

/// Centers the cloud at its centroid and scales it so the farthest point sits
/// at distance 1.
pub fn normalize_unit(cloud: &PointCloud) -> Result<(PointCloud, UnitTransform)> {
    let centroid = cloud.centroid().ok_or(FscError::EmptyInput)?;
    let radius = cloud.points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    if !(radius > f64::EPSILON * (1.0 + centroid.norm())) {
        return Err(FscError::DegenerateExtent);
    }
    let t = UnitTransform { scale: 1.0 / radius, centroid };
    Ok((cloud.transformed(&centroid, t.scale), t))
}

/// Uniform sample of `n` points without replacement. The selected indices are
/// returned in ascending order, so the output preserves input order.
pub fn subsample_random(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(cloud.select(&subsample_indices(cloud.len(), n, seed)?))
}

pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(FscError::InvalidValue("sample size must be at least 1".into()));
    }
    if n > len {
        return Err(FscError::InsufficientPoints { requested: n, available: len });
    }
    let mut rng = rng_from(seed);
    let mut idx = sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Greedy max-min selection beginning at `start`. Output is in selection
/// order; ties on the farthest distance go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, start: usize) -> Result<PointCloud> {
    Ok(cloud.select(&farthest_point_indices(cloud.points(), n, start)?))
}

pub fn farthest_point_indices(points: &[Vec3], n: usize, start: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(FscError::InvalidValue("sample size must be at least 1".into()));
    }
    if n > points.len() {
        return Err(FscError::InsufficientPoints { requested: n, available: points.len() });
    }
    if start >= points.len() {
        return Err(FscError::InvalidValue(format!("start index {start} out of range")));
    }
    let mut selected = Vec::with_capacity(n);
    let mut chosen = vec![false; points.len()];
    let mut min_d2 = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..n {
        selected.push(current);
        chosen[current] = true;
        let c = points[current];
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if !chosen[i] && min_d2[i] > best_d {
                best_d = min_d2[i];
                best = Some(i);
            }
        }
        match best {
            Some(i) => current = i,
            None => break,
        }
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_corners() -> PointCloud {
        let mut pts = Vec::new();
        for &x in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-1.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn cube_normalizes_with_inverse_sqrt3() {
        let (out, t) = normalize_unit(&cube_corners()).unwrap();
        assert!((t.scale - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.centroid, Vec3::zeros());
        for p in out.points() {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_is_degenerate() {
        let c = PointCloud::from_xyz(&[[5.0, 5.0, 5.0]]).unwrap();
        assert!(matches!(normalize_unit(&c), Err(FscError::DegenerateExtent)));
        assert!(matches!(normalize_unit(&PointCloud::default()), Err(FscError::EmptyInput)));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(PointCloud::from_xyz(&[[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::from_xyz(&[[0.0, f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn normals_must_be_unit() {
        let pts = vec![Vec3::zeros()];
        assert!(PointCloud::with_normals(pts.clone(), vec![Vec3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(pts.clone(), vec![]).is_err());
        assert!(PointCloud::with_normals(pts, vec![Vec3::z()]).is_ok());
    }

    #[test]
    fn fps_picks_segment_ends() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let out = farthest_point_sample(&c, 2, 0).unwrap();
        assert_eq!(out.points(), &[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]);
        let all = farthest_point_indices(c.points(), 3, 0).unwrap();
        assert_eq!(all, vec![0, 2, 1]);
    }

    #[test]
    fn subsample_full_is_identity_and_errors_on_overdraw() {
        let c = cube_corners();
        assert_eq!(subsample_random(&c, 8, 3).unwrap(), c);
        assert!(matches!(
            subsample_random(&c, 9, 3),
            Err(FscError::InsufficientPoints { requested: 9, available: 8 })
        ));
    }
}
