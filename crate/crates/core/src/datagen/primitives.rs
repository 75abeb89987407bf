//! Procedural meshes for the toy corpus.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::mesh::TriangleMesh;
use crate::error::FscError;
use crate::geom::Vec3;
use crate::rng::{derive_seed, rng_from};

const SEGMENTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Box,
    Cylinder,
    Torus,
    Sphere,
    LBracket,
    Lamp,
}

impl Category {
    pub const ALL: [Category; 6] =
        [Category::Box, Category::Cylinder, Category::Torus, Category::Sphere, Category::LBracket, Category::Lamp];

    pub fn name(self) -> &'static str {
        match self {
            Category::Box => "box",
            Category::Cylinder => "cylinder",
            Category::Torus => "torus",
            Category::Sphere => "sphere",
            Category::LBracket => "lbracket",
            Category::Lamp => "lamp",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = FscError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| FscError::Config(format!("unknown category {s:?}")))
    }
}

/// Axis-aligned box centered at `c` with half extents `h`.
pub fn box_mesh(c: Vec3, h: Vec3) -> TriangleMesh {
    let mut v = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
        v.push(c + Vec3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z));
    }
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let t = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh::new(v, t).expect("box indices are valid")
}

/// Surface of revolution about z through the `(radius, z)` profile. Zero
/// radius endpoints collapse to a pole.
pub fn revolve(profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
    let mut v = Vec::new();
    let mut t = Vec::new();
    for &(r, z) in profile {
        for s in 0..segments {
            let a = TAU * s as f64 / segments as f64;
            v.push(Vec3::new(r * a.cos(), r * a.sin(), z));
        }
    }
    for ring in 0..profile.len().saturating_sub(1) {
        for s in 0..segments {
            let a = ring * segments + s;
            let b = ring * segments + (s + 1) % segments;
            let (c, d) = (a + segments, b + segments);
            t.push([a, b, d]);
            t.push([a, d, c]);
        }
    }
    TriangleMesh::new(v, t).expect("revolve indices are valid")
}

/// Closed cylinder along z.
pub fn cylinder(radius: f64, z0: f64, z1: f64) -> TriangleMesh {
    revolve(&[(0.0, z0), (radius, z0), (radius, z1), (0.0, z1)], SEGMENTS)
}

pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriangleMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let w = TAU * j as f64 / nv as f64;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let mut t = Vec::new();
    for i in 0..nu {
        for j in 0..nv {
            let a = i * nv + j;
            let b = ((i + 1) % nu) * nv + j;
            let c = ((i + 1) % nu) * nv + (j + 1) % nv;
            let d = i * nv + (j + 1) % nv;
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    TriangleMesh::new(v, t).expect("torus indices are valid")
}

/// Ellipsoid with semi-axes `axes`, tessellated in latitude rings.
pub fn ellipsoid(axes: Vec3, rings: usize, segments: usize) -> TriangleMesh {
    let profile: Vec<(f64, f64)> = (0..=rings)
        .map(|k| {
            let phi = std::f64::consts::PI * k as f64 / rings as f64;
            (phi.sin(), -phi.cos())
        })
        .collect();
    let m = revolve(&profile, segments);
    let v = m.vertices().iter().map(|p| Vec3::new(p.x * axes.x, p.y * axes.y, p.z * axes.z)).collect();
    TriangleMesh::new(v, m.triangles().to_vec()).expect("ellipsoid indices are valid")
}

/// L-shaped profile in the xy-plane extruded along z.
pub fn lbracket(width: f64, height: f64, thickness: f64, depth: f64) -> TriangleMesh {
    let outline = [(0.0, 0.0), (width, 0.0), (width, thickness), (thickness, thickness), (thickness, height), (0.0, height)];
    let n = outline.len();
    let mut v = Vec::with_capacity(2 * n);
    for z in [-depth / 2.0, depth / 2.0] {
        for &(x, y) in &outline {
            v.push(Vec3::new(x, y, z));
        }
    }
    let mut t = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        t.push([i, j, j + n]);
        t.push([i, j + n, i + n]);
    }
    // the outline is star-shaped about vertex 0, so a fan covers each cap
    for off in [0, n] {
        t.push([off, off + 1, off + 2]);
        t.push([off, off + 2, off + 3]);
        t.push([off, off + 3, off + 4]);
        t.push([off, off + 4, off + 5]);
    }
    TriangleMesh::new(v, t).expect("bracket indices are valid")
}

/// Base disc, pole and open conical shade.
pub fn lamp(base_r: f64, pole_h: f64, shade_r0: f64, shade_r1: f64, shade_h: f64) -> TriangleMesh {
    let base = cylinder(base_r, 0.0, 0.06);
    let pole = revolve(&[(0.03, 0.06), (0.03, 0.06 + pole_h)], 16);
    let top = 0.06 + pole_h;
    let shade = revolve(&[(shade_r0, top - shade_h * 0.5), (shade_r1, top + shade_h * 0.5)], SEGMENTS);
    TriangleMesh::merge(&[base, pole, shade])
}

/// One randomized member of `category`, a pure function of `seed`.
pub fn generate(category: Category, seed: u64) -> TriangleMesh {
    let mut rng = rng_from(derive_seed(seed, category.name()));
    match category {
        Category::Box => {
            let h = Vec3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
            box_mesh(Vec3::zeros(), h)
        }
        Category::Cylinder => {
            let r = rng.random_range(0.15..0.6);
            let h = rng.random_range(0.4..1.6);
            cylinder(r, -h / 2.0, h / 2.0)
        }
        Category::Torus => {
            let major = rng.random_range(0.5..0.8);
            let minor = rng.random_range(0.08..0.3);
            torus(major, minor, SEGMENTS, 16)
        }
        Category::Sphere => {
            let axes = Vec3::new(rng.random_range(0.6..1.0), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0));
            ellipsoid(axes, 16, SEGMENTS)
        }
        Category::LBracket => {
            let w = rng.random_range(0.6..1.2);
            let h = rng.random_range(0.6..1.2);
            let t = rng.random_range(0.1..0.3);
            let d = rng.random_range(0.3..0.8);
            lbracket(w, h, t, d)
        }
        Category::Lamp => {
            let base_r = rng.random_range(0.2..0.35);
            let pole_h = rng.random_range(0.6..1.0);
            let r0 = rng.random_range(0.1..0.2);
            let r1 = rng.random_range(0.25..0.45);
            let sh = rng.random_range(0.2..0.4);
            lamp(base_r, pole_h, r0, r1, sh)
        }
    }
}
