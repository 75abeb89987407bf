mod common;

use std::collections::HashSet;

use common::{random_cloud, random_points, rng};
use fsc_core::geom::ply::{read_cloud, write_cloud, PlyFormat};
use fsc_core::geom::{
    estimate_normals, farthest_point_sample, normalize_unit, subsample_indices, subsample_random, NeighborIndex,
    PointCloud, Vec3,
};
use fsc_core::FscError;
use proptest::prelude::*;
use rand::seq::index::sample;

fn exhaustive_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn knn_and_radius_match_exhaustive_scan() {
    let mut r = rng(11);
    for (n, leaf) in [(1, 4), (17, 1), (500, 8), (2000, 16)] {
        let pts = random_points(&mut r, n);
        let index = NeighborIndex::with_leaf_size(&pts, leaf);
        for q in random_points(&mut r, 25) {
            for k in [1, 3.min(n), 8.min(n)] {
                let got: Vec<usize> = index.knn(&q, k).unwrap().iter().map(|x| x.0).collect();
                assert_eq!(got, exhaustive_knn(&pts, &q, k));
            }
            for radius in [0.05, 0.2, 0.7] {
                let expect: Vec<usize> = (0..n).filter(|&i| (pts[i] - q).norm_squared() <= radius * radius).collect();
                assert_eq!(index.radius_neighbors(&q, radius), expect);
            }
        }
    }
}

#[test]
fn radius_of_stored_point_excludes_itself() {
    let pts: Vec<Vec3> = (0..27).map(|i| Vec3::new((i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64)).collect();
    let index = NeighborIndex::new(&pts);
    let centre = 13;
    assert_eq!(index.radius_neighbors_of(centre, 1.0), vec![4, 10, 12, 14, 16, 22]);
}

#[test]
fn normalize_is_idempotent() {
    let mut r = rng(3);
    let c = random_cloud(&mut r, 300).transformed(&Vec3::new(4.0, -2.0, 1.0), 7.5);
    let (once, _) = normalize_unit(&c).unwrap();
    let (twice, _) = normalize_unit(&once).unwrap();
    for (a, b) in once.points().iter().zip(twice.points()) {
        assert!((a - b).norm() < 1e-9);
    }
    let radius = once.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
    assert!((radius - 1.0).abs() < 1e-12);
}

#[test]
fn sphere_normals_are_radial() {
    let n = 1000;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rr = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            Vec3::new(rr * t.cos(), y, rr * t.sin())
        })
        .collect();
    let est = estimate_normals(&PointCloud::new(pts.clone()).unwrap(), 12).unwrap();
    let normals = est.cloud.normals().unwrap();
    let within = pts.iter().zip(normals).filter(|(p, nrm)| p.normalize().dot(nrm) >= 10f64.to_radians().cos()).count();
    assert!(within as f64 >= 0.95 * n as f64, "{within} of {n} within 10 degrees");
    assert_eq!(est.degenerate_count(), 0);
}

#[test]
fn subsample_frequencies_are_uniform() {
    let (len, n, seeds) = (2048, 64, 1000u64);
    let mut hits = vec![0u32; len];
    for s in 0..seeds {
        for i in subsample_indices(len, n, s).unwrap() {
            hits[i] += 1;
        }
    }
    let p = n as f64 / len as f64;
    let mean = seeds as f64 * p;
    let sigma = (seeds as f64 * p * (1.0 - p)).sqrt();
    // a 5 sigma band keeps the family-wise false alarm rate over 2048 points small
    for (i, &h) in hits.iter().enumerate() {
        assert!((h as f64 - mean).abs() <= 5.0 * sigma, "point {i} drawn {h} times, expected {mean:.1}");
    }
    let within_3 = hits.iter().filter(|&&h| (h as f64 - mean).abs() <= 3.0 * sigma).count();
    assert!(within_3 as f64 >= 0.99 * len as f64);
}

#[test]
fn subsample_is_deterministic_and_checked() {
    let mut r = rng(5);
    let c = random_cloud(&mut r, 100);
    assert_eq!(subsample_random(&c, 30, 9).unwrap(), subsample_random(&c, 30, 9).unwrap());
    assert!(matches!(subsample_random(&c, 101, 9), Err(FscError::InsufficientPoints { .. })));
}

#[test]
fn fps_spreads_further_than_random_subsets() {
    let mut r = rng(8);
    let c = random_cloud(&mut r, 200);
    let min_pairwise = |pts: &[Vec3]| {
        let mut m = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                m = m.min((pts[i] - pts[j]).norm());
            }
        }
        m
    };
    let fps = min_pairwise(farthest_point_sample(&c, 16, 0).unwrap().points());
    for _ in 0..100 {
        let idx = sample(&mut r, 200, 16).into_vec();
        let random: Vec<Vec3> = idx.iter().map(|&i| c.points()[i]).collect();
        assert!(fps >= min_pairwise(&random));
    }
    assert_eq!(farthest_point_sample(&c, 200, 0).unwrap().len(), 200);
}

#[test]
fn ply_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(2);
    let c = estimate_normals(&random_cloud(&mut r, 50), 8).unwrap().cloud;
    for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
        let path = dir.path().join("c.ply");
        write_cloud(&path, &c, format).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.points(), c.points());
        // normals are renormalized on load
        for (a, b) in back.normals().unwrap().iter().zip(c.normals().unwrap()) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn fps_is_deterministic_and_distinct(seed in 0u64..1000, n in 1usize..40) {
        let mut r = rng(seed);
        let c = random_cloud(&mut r, 40);
        let a = farthest_point_sample(&c, n, 0).unwrap();
        prop_assert_eq!(&a, &farthest_point_sample(&c, n, 0).unwrap());
        let distinct: HashSet<[u64; 3]> =
            a.points().iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        prop_assert_eq!(distinct.len(), n);
    }
}
