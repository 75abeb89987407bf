//! Synthetic completion corpus: primitive meshes, uniform surface samples,
//! depth-rendered partial views and the nested resolution chain.

mod mesh;
pub mod primitives;
mod render;

pub use mesh::{encode_obj, parse_obj, read_mesh, triangle_area, write_mesh_ply, write_obj, TriangleMesh};
pub use render::{render_depth, render_partial, render_partial_with, CameraConfig, DepthView};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FscError, Result};
use crate::geom::ply::{read_cloud, write_cloud, PlyFormat};
use crate::geom::{farthest_point_sample, normalize_unit, subsample_random, PointCloud, Vec3};
use crate::rng::{derive_seed, derive_seed_n, rng_from};
use primitives::Category;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Area-proportional uniform sample of `n` surface points.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(FscError::EmptyInput);
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles().len());
    let mut total = 0.0;
    for t in 0..mesh.triangles().len() {
        total += mesh.area(t);
        cumulative.push(total);
    }
    let mut rng = rng_from(seed);
    let last = cumulative.len() - 1;
    let points = (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let t = cumulative.partition_point(|&c| c <= u).min(last);
            let [a, b, c] = mesh.corners(t);
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r)
        })
        .collect();
    PointCloud::new(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub gt_points: usize,
    pub partial_points: usize,
    /// Lower resolutions, strictly decreasing and below `partial_points`.
    pub levels: Vec<usize>,
    pub coarse_points: usize,
    pub seed: u64,
    pub split: SplitRatios,
    pub camera: CameraConfig,
    /// Each level is drawn from the previous one rather than from the full
    /// partial view.
    pub nested: bool,
    pub views_per_mesh: usize,
    pub binary_ply: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            gt_points: 16_384,
            partial_points: 2048,
            levels: vec![1024, 512, 256, 128, 64],
            coarse_points: 512,
            seed: 0,
            split: SplitRatios::default(),
            camera: CameraConfig::default(),
            nested: true,
            views_per_mesh: 1,
            binary_ply: true,
        }
    }
}

impl GenConfig {
    /// `partial_points` followed by `levels`.
    pub fn resolutions(&self) -> Vec<usize> {
        std::iter::once(self.partial_points).chain(self.levels.iter().copied()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let res = self.resolutions();
        if res.contains(&0) || self.gt_points == 0 || self.coarse_points == 0 || self.views_per_mesh == 0 {
            return Err(FscError::Config("point counts and views must be positive".into()));
        }
        if res.windows(2).any(|w| w[1] >= w[0]) {
            return Err(FscError::Config(format!("resolutions must strictly decrease: {res:?}")));
        }
        if self.coarse_points > self.gt_points {
            return Err(FscError::Config(format!(
                "coarse size {} exceeds ground-truth size {}",
                self.coarse_points, self.gt_points
            )));
        }
        let s = &self.split;
        if [s.train, s.val, s.test].iter().any(|r| !(*r >= 0.0)) || s.train + s.val + s.test <= 0.0 {
            return Err(FscError::Config(format!("invalid split ratios {s:?}")));
        }
        Ok(())
    }

    fn ply_format(&self) -> PlyFormat {
        if self.binary_ply {
            PlyFormat::BinaryLittleEndian
        } else {
            PlyFormat::Ascii
        }
    }
}

/// A named input mesh.
#[derive(Debug, Clone)]
pub struct MeshSource {
    pub id: String,
    pub category: String,
    pub mesh: TriangleMesh,
}

/// Ground truth, coarse target and partial inputs for one view of one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: String,
    pub category: String,
    pub gt: PointCloud,
    pub coarse_gt: PointCloud,
    pub partials: BTreeMap<usize, PointCloud>,
}

impl DatasetSample {
    pub fn partial(&self, resolution: usize) -> Result<&PointCloud> {
        self.partials
            .get(&resolution)
            .ok_or_else(|| FscError::Config(format!("sample {} has no partial at resolution {resolution}", self.id)))
    }

    pub fn load(root: &Path, entry: &SampleEntry) -> Result<Self> {
        let mut partials = BTreeMap::new();
        for (&r, rel) in &entry.partials {
            partials.insert(r, read_cloud(&root.join(rel))?);
        }
        Ok(Self {
            id: entry.id.clone(),
            category: entry.category.clone(),
            gt: read_cloud(&root.join(&entry.gt))?,
            coarse_gt: read_cloud(&root.join(&entry.coarse))?,
            partials,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub category: String,
    pub source: String,
    pub seed: u64,
    pub viewpoint: [f64; 3],
    pub gt: String,
    pub coarse: String,
    pub partials: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: GenConfig,
    pub splits: BTreeMap<String, Vec<SampleEntry>>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(FscError::InvalidValue(format!("manifest not found: {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| FscError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| FscError::parse(&path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(FscError::parse(&path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        crate::geom::ply::write_bytes(&path, text.as_bytes())
    }

    pub fn split(&self, name: &str) -> Result<&[SampleEntry]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| FscError::Config(format!("manifest has no split {name:?}")))
    }

    pub fn load_split(&self, root: &Path, name: &str) -> Result<Vec<DatasetSample>> {
        self.split(name)?.par_iter().map(|e| DatasetSample::load(root, e)).collect()
    }

    pub fn len(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn random_direction(seed: u64) -> Vec3 {
    let mut rng = rng_from(seed);
    loop {
        let v = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

struct Generated {
    sample: DatasetSample,
    seed: u64,
    viewpoint: Vec3,
}

/// Builds every view of one source mesh in memory.
fn generate_views(src: &MeshSource, config: &GenConfig) -> Result<Vec<Generated>> {
    let seed = derive_seed(config.seed, &src.id);
    let raw = sample_surface(&src.mesh, config.gt_points, derive_seed(seed, "gt"))?;
    let (gt, t) = normalize_unit(&raw)?;
    let mesh = src.mesh.transformed(&t.centroid, t.scale);
    let center = mesh.surface_centroid().ok_or(FscError::EmptyInput)?;
    let coarse_gt = farthest_point_sample(&gt, config.coarse_points, 0)?;

    (0..config.views_per_mesh)
        .map(|k| {
            let id = if config.views_per_mesh == 1 { src.id.clone() } else { format!("{}_v{k}", src.id) };
            let view_seed = derive_seed_n(derive_seed(seed, "view"), k as u64);
            let viewpoint = center + random_direction(view_seed) * config.camera.distance;
            let partial = render_partial_with(&mesh, &viewpoint, config.partial_points, derive_seed(view_seed, "render"), &config.camera)?;
            let mut partials = BTreeMap::new();
            let mut prev = partial.clone();
            for &r in &config.levels {
                let s = derive_seed_n(derive_seed(view_seed, "level"), r as u64);
                let next = if config.nested { subsample_random(&prev, r, s)? } else { subsample_random(&partial, r, s)? };
                partials.insert(r, next.clone());
                prev = next;
            }
            partials.insert(config.partial_points, partial);
            Ok(Generated {
                sample: DatasetSample {
                    id,
                    category: src.category.clone(),
                    gt: gt.clone(),
                    coarse_gt: coarse_gt.clone(),
                    partials,
                },
                seed: view_seed,
                viewpoint,
            })
        })
        .collect()
}

/// Deterministic shuffle of the sorted ids into train, val and test.
fn assign_splits(ids: &[String], ratios: &SplitRatios, seed: u64) -> BTreeMap<String, &'static str> {
    let mut order: Vec<&String> = ids.iter().collect();
    order.sort();
    order.shuffle(&mut rng_from(derive_seed(seed, "split")));
    let total = ratios.train + ratios.val + ratios.test;
    let n = order.len();
    let n_val = ((ratios.val / total) * n as f64).round() as usize;
    let n_test = (((ratios.test / total) * n as f64).round() as usize).min(n - n_val.min(n));
    let n_val = n_val.min(n);
    order
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_val {
                "val"
            } else if i < n_val + n_test {
                "test"
            } else {
                "train"
            };
            (id.clone(), split)
        })
        .collect()
}

/// Generates, writes and indexes the whole corpus under `root`.
pub fn build_dataset(sources: &[MeshSource], config: &GenConfig, root: &Path) -> Result<Manifest> {
    config.validate()?;
    if sources.is_empty() {
        return Err(FscError::EmptyInput);
    }
    let mut seen = BTreeSet::new();
    for s in sources {
        if !seen.insert(s.id.as_str()) {
            return Err(FscError::Config(format!("duplicate mesh id {:?}", s.id)));
        }
    }
    let ids: Vec<String> = sources.iter().map(|s| s.id.clone()).collect();
    let split_of = assign_splits(&ids, &config.split, config.seed);
    let format = config.ply_format();

    let entries: Vec<Vec<(String, SampleEntry)>> = sources
        .par_iter()
        .map(|src| {
            let split = split_of[&src.id];
            generate_views(src, config)?
                .into_iter()
                .map(|g| {
                    let dir = format!("{split}/{}", g.sample.id);
                    let rel = |name: &str| format!("{dir}/{name}");
                    write_cloud(&root.join(rel("gt.ply")), &g.sample.gt, format)?;
                    write_cloud(&root.join(rel("coarse.ply")), &g.sample.coarse_gt, format)?;
                    let mut partials = BTreeMap::new();
                    for (&r, cloud) in &g.sample.partials {
                        let name = rel(&format!("partial_{r}.ply"));
                        write_cloud(&root.join(&name), cloud, format)?;
                        partials.insert(r, name);
                    }
                    let entry = SampleEntry {
                        id: g.sample.id.clone(),
                        category: g.sample.category.clone(),
                        source: src.id.clone(),
                        seed: g.seed,
                        viewpoint: [g.viewpoint.x, g.viewpoint.y, g.viewpoint.z],
                        gt: rel("gt.ply"),
                        coarse: rel("coarse.ply"),
                        partials,
                    };
                    Ok((split.to_string(), entry))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut splits: BTreeMap<String, Vec<SampleEntry>> =
        ["train", "val", "test"].iter().map(|s| (s.to_string(), Vec::new())).collect();
    for (split, entry) in entries.into_iter().flatten() {
        splits.get_mut(&split).expect("known split").push(entry);
    }
    for list in splits.values_mut() {
        list.sort_by(|a, b| a.id.cmp(&b.id));
    }
    let manifest = Manifest { version: MANIFEST_VERSION, config: config.clone(), splits };
    manifest.save(root)?;
    Ok(manifest)
}

fn toy_member(k: usize, seed: u64) -> (Category, String, TriangleMesh) {
    let cat = Category::ALL[k % Category::ALL.len()];
    let index = k / Category::ALL.len();
    let mesh = primitives::generate(cat, derive_seed_n(seed, index as u64));
    (cat, format!("{}_{index:02}", cat.name()), mesh)
}

/// `count` randomized primitives, cycling through the categories.
pub fn toy_sources(count: usize, seed: u64) -> Vec<MeshSource> {
    (0..count)
        .map(|k| {
            let (cat, id, mesh) = toy_member(k, seed);
            MeshSource { id, category: cat.name().to_string(), mesh }
        })
        .collect()
}

/// Writes [`toy_sources`] as `<dir>/<category>/<id>.obj`.
pub fn write_toy_meshes(dir: &Path, count: usize, seed: u64) -> Result<Vec<PathBuf>> {
    (0..count)
        .map(|k| {
            let (cat, id, mesh) = toy_member(k, seed);
            let path = dir.join(cat.name()).join(format!("{id}.obj"));
            write_obj(&path, &mesh)?;
            Ok(path)
        })
        .collect()
}

fn is_mesh_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("obj" | "ply"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| FscError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| FscError::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Loads meshes from `dir`. Files inside a subdirectory take the
/// subdirectory name as category; top-level files use the part of the stem
/// before the first `_`.
pub fn load_mesh_dir(dir: &Path) -> Result<Vec<MeshSource>> {
    let mut sources = Vec::new();
    let stem = |p: &Path| p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            let category = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            for file in sorted_entries(&path)?.into_iter().filter(|p| p.is_file() && is_mesh_file(p)) {
                sources.push(MeshSource { id: stem(&file), category: category.clone(), mesh: read_mesh(&file)? });
            }
        } else if is_mesh_file(&path) {
            let id = stem(&path);
            let category = id.split('_').next().unwrap_or(&id).to_string();
            sources.push(MeshSource { id, category, mesh: read_mesh(&path)? });
        }
    }
    if sources.is_empty() {
        return Err(FscError::Config(format!("no .obj or .ply meshes under {}", dir.display())));
    }
    Ok(sources)
}
