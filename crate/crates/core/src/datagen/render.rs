use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::TriangleMesh;
use crate::error::{FscError, Result};
use crate::geom::{subsample_indices, PointCloud, Vec3};
use crate::rng::rng_from;

/// Orthographic depth camera looking at the surface centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Distance from the surface centroid to the eye.
    pub distance: f64,
    /// Half the image height, in multiples of the mesh radius.
    pub margin: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 160, height: 120, distance: 2.5, margin: 1.1 }
    }
}

/// Visible surface points of one rendered depth image, in scanline order.
#[derive(Debug, Clone)]
pub struct DepthView {
    pub points: Vec<Vec3>,
    pub pixel_size: f64,
    pub direction: Vec3,
}

struct Frame {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
}

impl Frame {
    fn looking_at(eye: Vec3, target: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let hint = if forward.z.abs() > 0.9 { Vec3::y() } else { Vec3::z() };
        let right = forward.cross(&hint).normalize();
        let up = right.cross(&forward);
        Self { eye, right, up, forward }
    }

    fn to_camera(&self, p: &Vec3) -> Vec3 {
        let d = p - self.eye;
        Vec3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }

    fn to_world(&self, x: f64, y: f64, z: f64) -> Vec3 {
        self.eye + self.right * x + self.up * y + self.forward * z
    }
}

/// Z-buffers `mesh` from `viewpoint` and back-projects every covered pixel.
pub fn render_depth(mesh: &TriangleMesh, viewpoint: &Vec3, camera: &CameraConfig) -> Result<DepthView> {
    if mesh.is_empty() {
        return Err(FscError::EmptyInput);
    }
    if camera.width == 0 || camera.height == 0 || !(camera.margin > 0.0) {
        return Err(FscError::Config(format!("invalid camera {camera:?}")));
    }
    let center = mesh.surface_centroid().ok_or(FscError::EmptyInput)?;
    let radius = mesh.radius_about(&center);
    if (viewpoint - center).norm() <= radius {
        return Err(FscError::InvalidValue(format!(
            "viewpoint {:?} lies inside the mesh bounding sphere (radius {radius})",
            viewpoint.as_slice()
        )));
    }
    let frame = Frame::looking_at(*viewpoint, center);
    let (w, h) = (camera.width, camera.height);
    let half_h = camera.margin * radius;
    let px = 2.0 * half_h / h as f64;
    let half_w = px * w as f64 / 2.0;
    let mut depth = vec![f64::INFINITY; w * h];

    for t in 0..mesh.triangles().len() {
        let c = mesh.corners(t).map(|p| frame.to_camera(&p));
        let area = (c[1].x - c[0].x) * (c[2].y - c[0].y) - (c[2].x - c[0].x) * (c[1].y - c[0].y);
        if area.abs() < 1e-18 {
            continue; // seen edge-on
        }
        let (xmin, xmax) = (c[0].x.min(c[1].x).min(c[2].x), c[0].x.max(c[1].x).max(c[2].x));
        let (ymin, ymax) = (c[0].y.min(c[1].y).min(c[2].y), c[0].y.max(c[1].y).max(c[2].y));
        let col = |x: f64| ((x + half_w) / px - 0.5).clamp(-1.0, w as f64);
        let row = |y: f64| ((half_h - y) / px - 0.5).clamp(-1.0, h as f64);
        let (i0, i1) = (col(xmin).ceil().max(0.0) as usize, col(xmax).floor().min(w as f64 - 1.0));
        let (j0, j1) = (row(ymax).ceil().max(0.0) as usize, row(ymin).floor().min(h as f64 - 1.0));
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        for j in j0..=j1 as usize {
            let y = half_h - (j as f64 + 0.5) * px;
            for i in i0..=i1 as usize {
                let x = -half_w + (i as f64 + 0.5) * px;
                let e = |a: &Vec3, b: &Vec3| (b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y);
                let l0 = e(&c[1], &c[2]) / area;
                let l1 = e(&c[2], &c[0]) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < -1e-12 || l1 < -1e-12 || l2 < -1e-12 {
                    continue;
                }
                let z = l0 * c[0].z + l1 * c[1].z + l2 * c[2].z;
                let slot = &mut depth[j * w + i];
                if z > 0.0 && z < *slot {
                    *slot = z;
                }
            }
        }
    }

    let mut points = Vec::new();
    for j in 0..h {
        for i in 0..w {
            let z = depth[j * w + i];
            if z.is_finite() {
                let x = -half_w + (i as f64 + 0.5) * px;
                let y = half_h - (j as f64 + 0.5) * px;
                points.push(frame.to_world(x, y, z));
            }
        }
    }
    Ok(DepthView { points, pixel_size: px, direction: frame.forward })
}

/// A partial view of exactly `n` points: visible pixels back-projected to
/// 3D, then subsampled, or padded by drawing visible points again when
/// fewer than `n` are visible.
pub fn render_partial(mesh: &TriangleMesh, viewpoint: &Vec3, n: usize, seed: u64) -> Result<PointCloud> {
    render_partial_with(mesh, viewpoint, n, seed, &CameraConfig::default())
}

pub fn render_partial_with(
    mesh: &TriangleMesh,
    viewpoint: &Vec3,
    n: usize,
    seed: u64,
    camera: &CameraConfig,
) -> Result<PointCloud> {
    let view = render_depth(mesh, viewpoint, camera)?;
    if view.points.is_empty() {
        return Err(FscError::EmptyView);
    }
    let m = view.points.len();
    let points = if m >= n {
        subsample_indices(m, n, seed)?.into_iter().map(|i| view.points[i]).collect()
    } else {
        let mut rng = rng_from(seed);
        let mut pts = view.points.clone();
        pts.extend((m..n).map(|_| view.points[rng.random_range(0..m)]));
        pts
    };
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::primitives::{box_mesh, ellipsoid};

    #[test]
    fn sphere_front_hemisphere() {
        let s = ellipsoid(Vec3::repeat(1.0), 32, 64);
        let p = render_partial(&s, &Vec3::new(0.0, 0.0, 2.5), 2048, 1).unwrap();
        assert_eq!(p.len(), 2048);
        assert!(p.points().iter().all(|q| q.z >= -0.05));
    }

    #[test]
    fn facing_plane_is_flat() {
        let b = box_mesh(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5));
        let view = render_depth(&b, &Vec3::new(0.0, 0.0, 2.5), &CameraConfig::default()).unwrap();
        assert!(view.points.iter().all(|q| (q.z - 0.5).abs() < 1e-9));
    }

    #[test]
    fn viewpoint_inside_rejected() {
        let b = box_mesh(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5));
        assert!(render_partial(&b, &Vec3::new(0.1, 0.0, 0.0), 10, 0).is_err());
    }

    #[test]
    fn pads_with_visible_points() {
        let b = box_mesh(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5));
        let cam = CameraConfig { width: 8, height: 6, ..CameraConfig::default() };
        let p = render_partial_with(&b, &Vec3::new(0.0, 0.0, 2.5), 100, 4, &cam).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p, render_partial_with(&b, &Vec3::new(0.0, 0.0, 2.5), 100, 4, &cam).unwrap());
    }
}
