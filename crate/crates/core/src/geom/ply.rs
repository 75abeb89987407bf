//! PLY reading and writing for point clouds and triangle meshes.
//!
//! Reads `ascii` and `binary_little_endian` files with a `vertex` element
//! carrying `x y z` and optionally `nx ny nz`, and an optional `face` element
//! with a `vertex_indices` list. Writes doubles.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{PointCloud, Vec3};
use crate::error::{FscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Raw contents of a PLY file.
#[derive(Debug, Clone, Default)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<Vec<usize>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| FscError::io(path, e))?;
    parse_ply(&bytes).map_err(|m| FscError::parse(path, m))
}

fn parse_ply(bytes: &[u8]) -> std::result::Result<PlyData, String> {
    let marker = b"end_header";
    let hpos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or("missing end_header")?;
    let mut body = hpos + marker.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..hpos]).map_err(|_| "header is not UTF-8")?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err("missing `ply` magic".into());
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _ver] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(format!("unsupported format `{other}`")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| format!("bad element count `{count}`"))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(c).ok_or(format!("bad type `{c}`"))?,
                    item: Scalar::parse(i).ok_or(format!("bad type `{i}`"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or("property before element")?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or(format!("bad type `{ty}`"))?,
                });
            }
            _ => return Err(format!("unrecognized header line `{line}`")),
        }
    }
    let format = format.ok_or("missing format line")?;

    let mut data = PlyData::default();
    let mut ascii_tokens = None;
    let mut cursor = Cursor { bytes, pos: body };
    if format == PlyFormat::Ascii {
        let text = std::str::from_utf8(&bytes[body..]).map_err(|_| "body is not UTF-8")?;
        ascii_tokens = Some(text.split_whitespace());
    }
    let mut next_value = |ty: Scalar| -> std::result::Result<f64, String> {
        match ascii_tokens.as_mut() {
            Some(toks) => {
                let t = toks.next().ok_or("unexpected end of data")?;
                t.parse::<f64>().map_err(|_| format!("bad number `{t}`"))
            }
            None => {
                let b = cursor.take(ty.size()).ok_or("unexpected end of data")?;
                Ok(ty.read_le(b))
            }
        }
    };

    for el in &elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let names: Vec<&str> = el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar { name, .. } | Property::List { name, .. } => name.as_str(),
            })
            .collect();
        let has_normals = ["nx", "ny", "nz"].iter().all(|n| names.contains(n));
        if is_vertex && !["x", "y", "z"].iter().all(|n| names.contains(n)) {
            return Err("vertex element lacks x/y/z".into());
        }
        let mut normals = Vec::new();
        for row in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut nxyz = [0.0; 3];
            for p in &el.props {
                match p {
                    Property::Scalar { name, ty } => {
                        let v = next_value(*ty)?;
                        let slot = match name.as_str() {
                            "x" => Some(&mut xyz[0]),
                            "y" => Some(&mut xyz[1]),
                            "z" => Some(&mut xyz[2]),
                            "nx" => Some(&mut nxyz[0]),
                            "ny" => Some(&mut nxyz[1]),
                            "nz" => Some(&mut nxyz[2]),
                            _ => None,
                        };
                        if let (true, Some(s)) = (is_vertex, slot) {
                            *s = v;
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = next_value(*count)?;
                        if !(n >= 0.0) || n.fract() != 0.0 {
                            return Err(format!("bad list length {n}"));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(next_value(*item)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            let face = items
                                .iter()
                                .map(|&v| {
                                    if v >= 0.0 && v.fract() == 0.0 {
                                        Ok(v as usize)
                                    } else {
                                        Err(format!("bad vertex index {v}"))
                                    }
                                })
                                .collect::<std::result::Result<Vec<_>, _>>()?;
                            data.faces.push(face);
                        }
                    }
                }
            }
            if is_vertex {
                if !xyz.iter().all(|c| c.is_finite()) {
                    return Err(format!("vertex {row} has a non-finite coordinate"));
                }
                data.vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                if has_normals {
                    let n = Vec3::new(nxyz[0], nxyz[1], nxyz[2]);
                    let len = n.norm();
                    if !len.is_finite() || len == 0.0 {
                        return Err(format!("vertex {row} has an invalid normal"));
                    }
                    normals.push(n / len);
                }
            }
        }
        if is_vertex && has_normals {
            data.normals = Some(normals);
        }
    }
    Ok(data)
}

/// Reads a point cloud, keeping normals when the file has them.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let data = read_ply(path)?;
    let mut cloud = PointCloud::new(data.vertices)?;
    if let Some(n) = data.normals {
        cloud.set_normals(n)?;
    }
    Ok(cloud)
}

fn header(out: &mut Vec<u8>, format: PlyFormat, n_vertices: usize, normals: bool, n_faces: usize) {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut h = format!("ply\nformat {fmt} 1.0\nelement vertex {n_vertices}\n");
    h.push_str("property double x\nproperty double y\nproperty double z\n");
    if normals {
        h.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if n_faces > 0 {
        h.push_str(&format!("element face {n_faces}\nproperty list uchar int vertex_indices\n"));
    }
    h.push_str("end_header\n");
    out.extend_from_slice(h.as_bytes());
}

fn push_f64(out: &mut Vec<u8>, format: PlyFormat, v: f64, last: bool) {
    match format {
        PlyFormat::Ascii => {
            out.extend_from_slice(format!("{v:?}").as_bytes());
            out.push(if last { b'\n' } else { b' ' });
        }
        PlyFormat::BinaryLittleEndian => out.extend_from_slice(&v.to_le_bytes()),
    }
}

pub fn encode_cloud(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let normals = cloud.normals();
    header(&mut out, format, cloud.len(), normals.is_some(), 0);
    for (i, p) in cloud.points().iter().enumerate() {
        let mut vals = vec![p.x, p.y, p.z];
        if let Some(n) = normals {
            vals.extend_from_slice(&[n[i].x, n[i].y, n[i].z]);
        }
        let last = vals.len() - 1;
        for (j, v) in vals.into_iter().enumerate() {
            push_f64(&mut out, format, v, j == last);
        }
    }
    out
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_bytes(path, &encode_cloud(cloud, format))
}

pub fn write_mesh(path: &Path, vertices: &[Vec3], triangles: &[[usize; 3]], format: PlyFormat) -> Result<()> {
    let mut out = Vec::new();
    header(&mut out, format, vertices.len(), false, triangles.len());
    for p in vertices {
        push_f64(&mut out, format, p.x, false);
        push_f64(&mut out, format, p.y, false);
        push_f64(&mut out, format, p.z, true);
    }
    for t in triangles {
        match format {
            PlyFormat::Ascii => out.extend_from_slice(format!("3 {} {} {}\n", t[0], t[1], t[2]).as_bytes()),
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                for &i in t {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    write_bytes(path, &out)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| FscError::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| FscError::io(path, e))?;
    f.write_all(bytes).map_err(|e| FscError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ascii_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\n\
                    end_header\n0 0 0 255\n1 2 3 0\n3 0 1 1\n";
        let d = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(d.vertices.len(), 2);
        assert_eq!(d.vertices[1], Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(d.faces, vec![vec![0, 1, 1]]);
        assert!(d.normals.is_none());
    }

    #[test]
    fn rejects_non_finite_and_truncation() {
        let nan = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                   property float z\nend_header\n0 nan 0\n";
        assert!(parse_ply(nan.as_bytes()).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n0 0 0\n";
        assert!(parse_ply(short.as_bytes()).is_err());
    }

    #[test]
    fn binary_roundtrip_with_normals() {
        let cloud = PointCloud::with_normals(
            vec![Vec3::new(0.1, -0.2, 0.3), Vec3::new(1e-300, 5.0, -7.25)],
            vec![Vec3::x(), -Vec3::z()],
        )
        .unwrap();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = encode_cloud(&cloud, fmt);
            let d = parse_ply(&bytes).unwrap();
            assert_eq!(d.vertices, cloud.points());
            assert_eq!(d.normals.as_deref(), cloud.normals());
        }
    }
}
