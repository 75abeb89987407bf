use std::fs;
use std::path::Path;

use crate::error::{FscError, Result};
use crate::geom::ply::{self, PlyFormat};
use crate::geom::Vec3;

/// Triangles whose area is at or below this are dropped on construction.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

/// Indexed triangle mesh without zero-area faces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates indices and drops degenerate triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(FscError::InvalidValue(format!("non-finite mesh vertex {v:?}")));
        }
        for t in &triangles {
            if let Some(&i) = t.iter().find(|&&i| i >= vertices.len()) {
                return Err(FscError::InvalidValue(format!(
                    "triangle index {i} out of range for {} vertices",
                    vertices.len()
                )));
            }
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) > MIN_TRIANGLE_AREA)
            .collect();
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        triangle_area(&a, &b, &c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Option<Vec3> {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let w = triangle_area(&a, &b, &c);
            acc += (a + b + c) * (w / 3.0);
            total += w;
        }
        (total > 0.0).then(|| acc / total)
    }

    /// Largest distance from `center` to any referenced vertex.
    pub fn radius_about(&self, center: &Vec3) -> f64 {
        self.triangles
            .iter()
            .flatten()
            .map(|&i| (self.vertices[i] - center).norm())
            .fold(0.0, f64::max)
    }

    /// `(v - center) * scale` applied to every vertex.
    pub fn transformed(&self, center: &Vec3, scale: f64) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| (v - center) * scale).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Concatenates meshes into one.
    pub fn merge(parts: &[TriangleMesh]) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        for p in parts {
            let off = out.vertices.len();
            out.vertices.extend_from_slice(&p.vertices);
            out.triangles.extend(p.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
        }
        out
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn fan(face: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..face.len().saturating_sub(1)).map(move |k| [face[0], face[k], face[k + 1]])
}

/// Parses Wavefront OBJ text. Only `v` and `f` records are used; polygons
/// are fan-triangulated and negative (relative) indices are supported.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let err = |m: String| FscError::parse(path, format!("line {}: {m}", lineno + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xyz: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|e| err(format!("bad coordinate {s:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(err("vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|e| err(format!("bad face index {tok:?}: {e}")))?;
                    let idx = match i {
                        0 => return Err(err("face index 0".into())),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(err(format!("relative index {i} before first vertex")));
                            }
                            vertices.len() - back
                        }
                    };
                    face.push(idx);
                }
                if face.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                triangles.extend(fan(&face));
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| FscError::parse(path, e.to_string()))
}

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    ply::write_bytes(path, encode_obj(mesh).as_bytes())
}

pub fn write_mesh_ply(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    ply::write_mesh(path, &mesh.vertices, &mesh.triangles, format)
}

/// Reads an `.obj` or `.ply` mesh, chosen by extension.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => {
            let text = fs::read_to_string(path).map_err(|e| FscError::io(path, e))?;
            parse_obj(&text, path)
        }
        Some("ply") => {
            let data = ply::read_ply(path)?;
            let triangles = data.faces.iter().filter(|f| f.len() >= 3).flat_map(|f| fan(f).collect::<Vec<_>>()).collect();
            TriangleMesh::new(data.vertices, triangles).map_err(|e| FscError::parse(path, e.to_string()))
        }
        _ => Err(FscError::parse(path, "unsupported mesh extension (expected .obj or .ply)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_triangles_are_dropped() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::x() * 2.0];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.triangles().len(), 1);
        assert!((m.total_area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_index_rejected() {
        assert!(TriangleMesh::new(vec![Vec3::zeros()], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn obj_round_trip_with_quads_and_relative_indices() {
        let text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3/1 -2//2 -1\n";
        let m = parse_obj(text, Path::new("q.obj")).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        let again = parse_obj(&encode_obj(&m), Path::new("q.obj")).unwrap();
        assert_eq!(again, m);
    }
}
