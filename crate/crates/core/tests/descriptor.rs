mod common;

use std::collections::HashSet;

use common::{fpfh_quadratic, random_cloud, rng};
use fsc_core::descriptor::{
    compute_fpfh, fpfh_entropy, retention_curve, voxel_downsample, FpfhHistogram, FpfhParams, NormalSource,
};
use fsc_core::geom::{estimate_normals, PointCloud, Vec3};
use nalgebra::Rotation3;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn sphere(n: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), y, r * t.sin())
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

#[test]
fn voxel_count_matches_hash_grid_recount() {
    let c = sphere(16384);
    let voxel = 0.04;
    let cells: HashSet<[i64; 3]> = c
        .points()
        .iter()
        .map(|p| [(p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64])
        .collect();
    assert_eq!(voxel_downsample(&c, voxel).unwrap().len(), cells.len());
}

#[test]
fn fpfh_matches_quadratic_reference() {
    let mut r = rng(17);
    for _ in 0..3 {
        let c = estimate_normals(&random_cloud(&mut r, 300), 10).unwrap().cloud;
        let pts: Vec<[f64; 3]> = c.points().iter().map(|p| [p.x, p.y, p.z]).collect();
        let nrm: Vec<[f64; 3]> = c.normals().unwrap().iter().map(|p| [p.x, p.y, p.z]).collect();
        let expect = fpfh_quadratic(&pts, &nrm, 0.35, 11);
        let got = compute_fpfh(&c, 0.35, 11).unwrap();
        assert!(got.normalized);
        for (a, b) in got.bins.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn fpfh_invariant_under_permutation_and_rotation() {
    let mut r = rng(5);
    let c = estimate_normals(&random_cloud(&mut r, 200), 10).unwrap().cloud;
    let base = compute_fpfh(&c, 0.4, 12).unwrap();

    let mut order: Vec<usize> = (0..c.len()).collect();
    order.shuffle(&mut r);
    let permuted = compute_fpfh(&c.select(&order), 0.4, 12).unwrap();

    let rot = Rotation3::from_euler_angles(0.7, -1.1, 2.3);
    let rp = c.points().iter().map(|p| rot * p).collect();
    let rn = c.normals().unwrap().iter().map(|n| rot * n).collect();
    let rotated = compute_fpfh(&PointCloud::with_normals(rp, rn).unwrap(), 0.4, 12).unwrap();

    for other in [&permuted, &rotated] {
        for (a, b) in base.bins.iter().zip(&other.bins) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn retention_of_full_size_is_one_and_repeatable() {
    let c = sphere(800);
    let params = FpfhParams { radius: 0.25, bins: 12, voxel: 0.02, normal_k: 10, normals: NormalSource::Carried };
    let full = retention_curve(&c, &[800], 3, 1, &params).unwrap();
    assert_eq!(full.mean_fraction, vec![1.0]);
    let a = retention_curve(&c, &[800, 200, 50], 4, 9, &params).unwrap();
    let b = retention_curve(&c, &[800, 200, 50], 4, 9, &params).unwrap();
    assert_eq!(a, b);
    assert!(a.mean_fraction.iter().all(|f| (0.0..=1.2).contains(f)));
}

proptest! {
    #[test]
    fn entropy_bounded_by_uniform(seed in 0u64..10_000, bins in 2usize..40) {
        let mut r = rng(seed);
        let raw: Vec<f64> = (0..3 * bins).map(|_| if r.random_bool(0.3) { 0.0 } else { r.random::<f64>() }).collect();
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 0.0);
        let h = FpfhHistogram::from_bins(raw.iter().map(|x| x / s).collect(), bins).unwrap();
        let e = fpfh_entropy(&h).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(e <= ((3 * bins) as f64).ln() + 1e-9);
    }
}

#[test]
fn uniform_histogram_attains_the_bound() {
    let h = FpfhHistogram::from_bins(vec![1.0 / 108.0; 108], 36).unwrap();
    assert!((fpfh_entropy(&h).unwrap() - 108f64.ln()).abs() <= 1e-9);
}
