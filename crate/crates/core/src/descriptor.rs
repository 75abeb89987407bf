//! FPFH shape descriptor and its Shannon entropy as an information measure
//! for sparse clouds.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FscError, Result};
use crate::geom::{estimate_normals, subsample_random, NeighborIndex, PointCloud, Vec3};

pub const DEFAULT_BINS: usize = 36;
pub const DEFAULT_VOXEL: f64 = 0.04;
/// Feature radius in unit-ball coordinates. It must exceed the voxel size,
/// otherwise neighboring voxel representatives rarely fall within reach.
pub const DEFAULT_RADIUS: f64 = 0.05;
pub const DEFAULT_NORMAL_K: usize = 10;
const NORMALIZED_TOLERANCE: f64 = 1e-9;

/// Where subset normals come from in [`retention_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalSource {
    /// Estimated once on the full cloud and carried along by subsampling
    /// and voxel averaging.
    #[default]
    Carried,
    /// Estimated from scratch on every subset.
    Reestimate,
}

/// Parameters of the entropy pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpfhParams {
    pub radius: f64,
    pub bins: usize,
    pub voxel: f64,
    pub normal_k: usize,
    pub normals: NormalSource,
}

impl Default for FpfhParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            bins: DEFAULT_BINS,
            voxel: DEFAULT_VOXEL,
            normal_k: DEFAULT_NORMAL_K,
            normals: NormalSource::default(),
        }
    }
}

/// Cloud-level FPFH: `3 * B` bins laid out as `[alpha | phi | theta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpfhHistogram {
    pub bins: Vec<f64>,
    pub bins_per_feature: usize,
    pub normalized: bool,
}

impl FpfhHistogram {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.bins.iter().all(|&b| b == 0.0)
    }

    /// Wraps externally computed bins; `normalized` is derived from the sum.
    pub fn from_bins(bins: Vec<f64>, bins_per_feature: usize) -> Result<Self> {
        if bins_per_feature == 0 || bins.len() != 3 * bins_per_feature {
            return Err(FscError::InvalidValue(format!(
                "histogram length {} is not 3 x {bins_per_feature}",
                bins.len()
            )));
        }
        let normalized = is_distribution(&bins);
        Ok(Self { bins, bins_per_feature, normalized })
    }
}

fn is_distribution(bins: &[f64]) -> bool {
    bins.iter().all(|&b| b >= 0.0 && b.is_finite()) && (bins.iter().sum::<f64>() - 1.0).abs() <= NORMALIZED_TOLERANCE
}

/// One representative per occupied voxel: the centroid of its members. The
/// grid is anchored at the origin; output is ordered by voxel coordinates.
/// Normals, when present, are averaged and renormalized; a voxel whose
/// normals cancel keeps its first member's normal.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) {
        return Err(FscError::InvalidValue(format!("voxel size must be positive, got {voxel}")));
    }
    struct Cell {
        sum: Vec3,
        count: usize,
        normal_sum: Vec3,
        first_normal: Vec3,
    }
    let normals = cloud.normals();
    let mut cells: BTreeMap<[i64; 3], Cell> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = [(p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64];
        let n = normals.map(|n| n[i]).unwrap_or_else(Vec3::zeros);
        let e = cells.entry(key).or_insert(Cell { sum: Vec3::zeros(), count: 0, normal_sum: Vec3::zeros(), first_normal: n });
        e.sum += p;
        e.count += 1;
        e.normal_sum += n;
    }
    let points = cells.values().map(|c| c.sum / c.count as f64).collect();
    if normals.is_none() {
        return PointCloud::new(points);
    }
    let normals = cells
        .values()
        .map(|c| {
            let len = c.normal_sum.norm();
            if len > 1e-12 {
                c.normal_sum / len
            } else {
                c.first_normal
            }
        })
        .collect();
    PointCloud::with_normals(points, normals)
}

/// Darboux-frame pair features `(alpha, phi, theta)` for an ordered pair,
/// with source and target swapped when that yields the smaller angle between
/// normal and connecting line. `None` for coincident points or parallel
/// configurations where the frame is undefined.
pub fn pair_features(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Option<(f64, f64, f64)> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / dist;
    let a2 = n2.dot(&dp) / dist;
    // a larger |cos| is a smaller angle; comparing cosines avoids acos rounding ties
    let (src_n, tgt_n, phi) = if a1.abs() < a2.abs() {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(src_n);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = src_n.cross(&v);
    let alpha = v.dot(tgt_n);
    let theta = w.dot(tgt_n).atan2(src_n.dot(tgt_n));
    Some((alpha, phi, theta))
}

fn bin_of(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * bins as f64).floor();
    if t < 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Simplified point feature histogram of one point over the given neighbors.
/// Each of the three sub-histograms sums to 1 when any pair is valid.
fn spfh(points: &[Vec3], normals: &[Vec3], i: usize, neighbors: &[usize], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; 3 * bins];
    let mut count = 0usize;
    for &j in neighbors {
        if let Some((alpha, phi, theta)) = pair_features(&points[i], &normals[i], &points[j], &normals[j]) {
            h[bin_of(alpha, -1.0, 1.0, bins)] += 1.0;
            h[bins + bin_of(phi, -1.0, 1.0, bins)] += 1.0;
            h[2 * bins + bin_of(theta, -PI, PI, bins)] += 1.0;
            count += 1;
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        h.iter_mut().for_each(|v| *v *= inv);
    }
    h
}

/// Cloud-level FPFH: per-point `SPFH(p) + (1/k) sum SPFH(p_i) / |p - p_i|`
/// over radius neighbors, summed over all points and normalized to 1.
/// If no point has a neighbor the histogram is all zeros and
/// `normalized == false`.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64, bins: usize) -> Result<FpfhHistogram> {
    if cloud.len() < 2 {
        return Err(FscError::InsufficientPoints { requested: 2, available: cloud.len() });
    }
    if !(radius > 0.0) {
        return Err(FscError::InvalidValue(format!("radius must be positive, got {radius}")));
    }
    if bins < 2 {
        return Err(FscError::InvalidValue(format!("need at least 2 bins, got {bins}")));
    }
    let normals = cloud.normals().ok_or(FscError::MissingNormals)?;
    let points = cloud.points();
    let index = NeighborIndex::new(points);
    let neighbors: Vec<Vec<(usize, f64)>> = (0..points.len())
        .map(|i| {
            let mut nb = index.radius_search(&points[i], radius);
            nb.retain(|&(j, d)| j != i && d > 0.0);
            nb
        })
        .collect();
    let spfhs: Vec<Vec<f64>> = (0..points.len())
        .map(|i| {
            let idx: Vec<usize> = neighbors[i].iter().map(|&(j, _)| j).collect();
            spfh(points, normals, i, &idx, bins)
        })
        .collect();

    let mut total = vec![0.0; 3 * bins];
    for i in 0..points.len() {
        let nb = &neighbors[i];
        let own = &spfhs[i];
        if nb.is_empty() {
            total.iter_mut().zip(own).for_each(|(t, v)| *t += v);
            continue;
        }
        let inv_k = 1.0 / nb.len() as f64;
        let mut fp = own.clone();
        for &(j, d) in nb {
            let w = inv_k / d;
            fp.iter_mut().zip(&spfhs[j]).for_each(|(f, s)| *f += w * s);
        }
        total.iter_mut().zip(&fp).for_each(|(t, v)| *t += v);
    }
    let sum: f64 = total.iter().sum();
    let normalized = sum > 0.0;
    if normalized {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(FpfhHistogram { bins: total, bins_per_feature: bins, normalized })
}

/// Shannon entropy in nats; empty bins contribute 0.
pub fn fpfh_entropy(hist: &FpfhHistogram) -> Result<f64> {
    if !hist.normalized || !is_distribution(&hist.bins) {
        return Err(FscError::NotNormalized { sum: hist.total() });
    }
    Ok(-hist.bins.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
}

/// Entropy of one cloud through the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Entropy in nats.
    pub entropy: f64,
    pub n_points: usize,
    pub bins: usize,
    pub radius: f64,
    pub voxel: f64,
}

/// voxel grid -> normals -> FPFH -> entropy. Normals already on the cloud
/// are used under [`NormalSource::Carried`]; otherwise they are estimated
/// with `k = min(normal_k, n - 1)`. Clouds too small to carry a single valid
/// pair score 0.
pub fn cloud_entropy(cloud: &PointCloud, params: &FpfhParams) -> Result<EntropyReport> {
    let vox = voxel_downsample(cloud, params.voxel)?;
    let report = |entropy| EntropyReport {
        entropy,
        n_points: cloud.len(),
        bins: params.bins,
        radius: params.radius,
        voxel: params.voxel,
    };
    let with_normals = match (params.normals, vox.normals()) {
        (NormalSource::Carried, Some(_)) if vox.len() >= 2 => vox,
        _ => {
            let k = params.normal_k.min(vox.len().saturating_sub(1));
            if k < 3 {
                return Ok(report(0.0));
            }
            estimate_normals(&vox, k)?.cloud
        }
    };
    let hist = compute_fpfh(&with_normals, params.radius, params.bins)?;
    if hist.is_zero() {
        return Ok(report(0.0));
    }
    Ok(report(fpfh_entropy(&hist)?))
}

/// Entropy retained by random subsets, relative to the full cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionCurve {
    pub sizes: Vec<usize>,
    pub mean_entropy: Vec<f64>,
    pub mean_fraction: Vec<f64>,
    pub stddev: Vec<f64>,
    pub full_entropy: f64,
    pub trials: usize,
    pub seed: u64,
}

impl RetentionCurve {
    /// Averages curves computed on several clouds with the same sizes.
    /// The spread is the standard deviation of the per-cloud mean fractions.
    pub fn average(curves: &[RetentionCurve]) -> Result<RetentionCurve> {
        let first = curves.first().ok_or(FscError::EmptyInput)?;
        if curves.iter().any(|c| c.sizes != first.sizes) {
            return Err(FscError::InvalidValue("curves have different sizes".into()));
        }
        let n = curves.len() as f64;
        let cols = first.sizes.len();
        let mean_of = |f: &dyn Fn(&RetentionCurve, usize) -> f64, j: usize| curves.iter().map(|c| f(c, j)).sum::<f64>() / n;
        let mean_entropy: Vec<f64> = (0..cols).map(|j| mean_of(&|c, j| c.mean_entropy[j], j)).collect();
        let mean_fraction: Vec<f64> = (0..cols).map(|j| mean_of(&|c, j| c.mean_fraction[j], j)).collect();
        let stddev = (0..cols)
            .map(|j| {
                let m = mean_fraction[j];
                (curves.iter().map(|c| (c.mean_fraction[j] - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        Ok(RetentionCurve {
            sizes: first.sizes.clone(),
            mean_entropy,
            mean_fraction,
            stddev,
            full_entropy: curves.iter().map(|c| c.full_entropy).sum::<f64>() / n,
            trials: first.trials,
            seed: first.seed,
        })
    }

    pub fn fraction_at(&self, size: usize) -> Option<f64> {
        self.sizes.iter().position(|&s| s == size).map(|i| self.mean_fraction[i])
    }
}

/// For every size, the mean over `trials` random subsets of
/// `S(subset) / S(cloud)`. Trial `t` subsamples with seed `seed + t`.
/// Under [`NormalSource::Carried`] a cloud without normals first gets them
/// estimated at full resolution.
pub fn retention_curve(
    cloud: &PointCloud,
    sizes: &[usize],
    trials: usize,
    seed: u64,
    params: &FpfhParams,
) -> Result<RetentionCurve> {
    if trials == 0 {
        return Err(FscError::InvalidValue("trials must be positive".into()));
    }
    if sizes.is_empty() {
        return Err(FscError::InvalidValue("no sizes requested".into()));
    }
    if sizes.windows(2).any(|w| w[0] < w[1]) {
        return Err(FscError::InvalidValue("sizes must be descending".into()));
    }
    if sizes[0] > cloud.len() {
        return Err(FscError::InsufficientPoints { requested: sizes[0], available: cloud.len() });
    }
    let owned;
    let cloud = match params.normals {
        NormalSource::Carried if cloud.normals().is_none() => {
            let k = params.normal_k.min(cloud.len().saturating_sub(1));
            owned = estimate_normals(cloud, k)?.cloud;
            &owned
        }
        _ => cloud,
    };
    let full = cloud_entropy(cloud, params)?.entropy;
    if !(full > 0.0) {
        return Err(FscError::InvalidValue("full cloud has zero FPFH entropy".into()));
    }
    let jobs: Vec<(usize, usize)> = sizes.iter().flat_map(|&s| (0..trials).map(move |t| (s, t))).collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let sub = subsample_random(cloud, s, seed.wrapping_add(t as u64))?;
            Ok(cloud_entropy(&sub, params)?.entropy)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut mean_entropy = Vec::with_capacity(sizes.len());
    let mut mean_fraction = Vec::with_capacity(sizes.len());
    let mut stddev = Vec::with_capacity(sizes.len());
    for chunk in values.chunks(trials) {
        let fr: Vec<f64> = chunk.iter().map(|s| s / full).collect();
        let m = fr.iter().sum::<f64>() / trials as f64;
        let var = fr.iter().map(|f| (f - m).powi(2)).sum::<f64>() / trials as f64;
        mean_entropy.push(chunk.iter().sum::<f64>() / trials as f64);
        mean_fraction.push(m);
        stddev.push(var.sqrt());
    }
    Ok(RetentionCurve {
        sizes: sizes.to_vec(),
        mean_entropy,
        mean_fraction,
        stddev,
        full_entropy: full,
        trials,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_closed_forms() {
        let uniform = FpfhHistogram::from_bins(vec![1.0 / 108.0; 108], 36).unwrap();
        assert!((fpfh_entropy(&uniform).unwrap() - 108f64.ln()).abs() < 1e-9);

        let mut one = vec![0.0; 108];
        one[17] = 1.0;
        assert_eq!(fpfh_entropy(&FpfhHistogram::from_bins(one, 36).unwrap()).unwrap(), 0.0);

        let mut h = vec![0.0; 6];
        h[0] = 0.5;
        h[1] = 0.25;
        h[2] = 0.25;
        let s = fpfh_entropy(&FpfhHistogram::from_bins(h, 2).unwrap()).unwrap();
        assert!((s - 1.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_is_rejected() {
        let h = FpfhHistogram::from_bins(vec![0.5; 6], 2).unwrap();
        assert!(!h.normalized);
        assert!(matches!(fpfh_entropy(&h), Err(FscError::NotNormalized { .. })));
    }

    #[test]
    fn voxel_merge_rules() {
        let c = PointCloud::from_xyz(&[[0.01, 0.01, 0.01], [0.03, 0.03, 0.03]]).unwrap();
        let v = voxel_downsample(&c, 0.1).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.points()[0] - Vec3::repeat(0.02)).norm() < 1e-15);

        let far = PointCloud::from_xyz(&[[0.05, 0.05, 0.05], [0.25, 0.35, 0.45]]).unwrap();
        assert_eq!(voxel_downsample(&far, 0.1).unwrap().points(), far.points());
    }

    #[test]
    fn fpfh_requires_normals_and_points() {
        let c = PointCloud::from_xyz(&[[0.0; 3], [0.1, 0.0, 0.0]]).unwrap();
        assert!(matches!(compute_fpfh(&c, 0.5, 4), Err(FscError::MissingNormals)));
        let single = PointCloud::from_xyz(&[[0.0; 3]]).unwrap();
        assert!(matches!(compute_fpfh(&single, 0.5, 4), Err(FscError::InsufficientPoints { .. })));
    }

    #[test]
    fn plane_theta_is_central() {
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                pts.push(Vec3::new(i as f64 * 0.05 + 0.01 * (j % 3) as f64, j as f64 * 0.05, 0.0));
            }
        }
        let n = pts.len();
        let c = PointCloud::with_normals(pts, vec![Vec3::z(); n]).unwrap();
        let h = compute_fpfh(&c, 0.12, 36).unwrap();
        let theta = &h.bins[72..108];
        let total: f64 = theta.iter().sum();
        assert!(theta[18] / total >= 0.9, "central mass {}", theta[18] / total);
    }

    #[test]
    fn pair_features_are_bounded() {
        let (a, p, t) = pair_features(
            &Vec3::zeros(),
            &Vec3::z(),
            &Vec3::new(1.0, 0.2, 0.1),
            &Vec3::new(0.0, 0.6, 0.8),
        )
        .unwrap();
        assert!(a.abs() <= 1.0 && p.abs() <= 1.0 && t.abs() <= PI);
        assert!(pair_features(&Vec3::zeros(), &Vec3::z(), &Vec3::zeros(), &Vec3::z()).is_none());
    }
}
