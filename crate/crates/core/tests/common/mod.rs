//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use fsc_core::autodiff::{Graph, Tensor, Var};
use fsc_core::geom::{PointCloud, Vec3};
use fsc_core::model::{Bound, Layout, ModelConfig, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect()
}

pub fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(random_points(r, n)).unwrap()
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

/// Mean matched distance minimized over all `n!` bijections.
pub fn emd_brute_force(a: &[Vec3], b: &[Vec3]) -> f64 {
    fn go(a: &[Vec3], b: &[Vec3], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, i + 1, acc + (a[i] - b[j]).norm(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

fn chamfer_with(a: &[Vec3], b: &[Vec3], d: impl Fn(&Vec3, &Vec3) -> f64) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    one(a, b) + one(b, a)
}

pub fn chamfer_l1_exhaustive(a: &[Vec3], b: &[Vec3]) -> f64 {
    chamfer_with(a, b, |p, q| (p - q).abs().sum())
}

pub fn chamfer_l2_exhaustive(a: &[Vec3], b: &[Vec3]) -> f64 {
    chamfer_with(a, b, |p, q| (p - q).norm_squared())
}

fn bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((v - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// FPFH over all pairs, written from the Darboux-frame definition with plain
/// arrays. Neighbours are every other point within `radius`.
pub fn fpfh_quadratic(points: &[[f64; 3]], normals: &[[f64; 3]], radius: f64, bins: usize) -> Vec<f64> {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let n = points.len();
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, dot(sub(points[j], points[i]), sub(points[j], points[i])).sqrt()))
                .filter(|&(_, d)| d > 0.0 && d <= radius)
                .collect()
        })
        .collect();
    let spfh: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut h = vec![0.0; 3 * bins];
            let mut count = 0.0;
            for &(j, dist) in &neighbors[i] {
                let d = sub(points[j], points[i]);
                let (ni, nj) = (normals[i], normals[j]);
                let ci = dot(ni, d) / dist;
                let cj = dot(nj, d) / dist;
                // the source is the end whose normal is more aligned with the line
                let (u, t, line, phi) = if ci.abs() >= cj.abs() {
                    (ni, nj, d, ci)
                } else {
                    (nj, ni, [-d[0], -d[1], -d[2]], -cj)
                };
                let v = cross(line, u);
                let vl = dot(v, v).sqrt();
                if vl == 0.0 {
                    continue;
                }
                let v = [v[0] / vl, v[1] / vl, v[2] / vl];
                let w = cross(u, v);
                let alpha = dot(v, t);
                let theta = dot(w, t).atan2(dot(u, t));
                h[bin(alpha, -1.0, 1.0, bins)] += 1.0;
                h[bins + bin(phi, -1.0, 1.0, bins)] += 1.0;
                h[2 * bins + bin(theta, -PI, PI, bins)] += 1.0;
                count += 1.0;
            }
            if count > 0.0 {
                h.iter_mut().for_each(|x| *x /= count);
            }
            h
        })
        .collect();
    let mut total = vec![0.0; 3 * bins];
    for i in 0..n {
        let k = neighbors[i].len() as f64;
        for b in 0..3 * bins {
            let mut v = spfh[i][b];
            for &(j, d) in &neighbors[i] {
                v += spfh[j][b] / (k * d);
            }
            total[b] += v;
        }
    }
    let s: f64 = total.iter().sum();
    total.iter().map(|x| x / s).collect()
}

/// A small configuration for finite-difference checks.
pub fn micro_config() -> ModelConfig {
    let mut c = ModelConfig::tiny();
    c.n_coarse = 8;
    c.d1 = 8;
    c.d2 = 8;
    c.heads = 2;
    c.memory = 4;
    c.hidden = 8;
    c.decoder_hidden = 12;
    c.revision_hidden = 8;
    c.local_hidden = 6;
    c.fold_hidden = 8;
    c.critic_hidden = 8;
    c.ball_k = 4;
    c.ball_radius = 0.6;
    c.validate().unwrap();
    c
}

/// Every parameter drawn uniformly in `±1/sqrt(rows)`, so zero-initialized
/// heads take part in the check.
pub fn random_params(layout: &Layout, seed: u64) -> ParamSet {
    let mut r = rng(seed);
    let (names, tensors) = layout
        .specs()
        .iter()
        .map(|s| (s.name.clone(), random_tensor(&mut r, s.rows, s.cols, 1.0 / (s.rows as f64).sqrt())))
        .unzip();
    ParamSet::from_parts(names, tensors).unwrap()
}

pub struct GradReport {
    pub probes: usize,
    pub worst: f64,
}

/// Central differences against reverse mode on `sum(f(params, inputs) * R)`
/// for a fixed random `R`. Probes cycle over the parameters whose names
/// start with one of `prefixes` and then over the inputs.
pub fn grad_check(
    params: &ParamSet,
    prefixes: &[&str],
    inputs: &[Tensor],
    probes: usize,
    seed: u64,
    f: &dyn Fn(&mut Graph, &Bound, &[Var]) -> Var,
) -> GradReport {
    grad_check_step(params, prefixes, inputs, probes, seed, 1e-6, f)
}

/// [`grad_check`] with difference step `h`.
pub fn grad_check_step(
    params: &ParamSet,
    prefixes: &[&str],
    inputs: &[Tensor],
    probes: usize,
    seed: u64,
    h: f64,
    f: &dyn Fn(&mut Graph, &Bound, &[Var]) -> Var,
) -> GradReport {
    let mut r = rng(seed);
    let eval = |p: &ParamSet, xs: &[Tensor], w: Option<&Tensor>, grads: bool| {
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let xv: Vec<Var> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let out = f(&mut g, &b, &xv);
        let Some(w) = w else {
            return (Tensor::zeros(g.shape(out).0, g.shape(out).1), vec![]);
        };
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv);
        let loss = g.sum_all(prod);
        let value = Tensor::scalar(g.value(loss).item());
        if !grads {
            return (value, vec![]);
        }
        let mut wrt: Vec<Var> = b.vars().to_vec();
        wrt.extend(&xv);
        let gs = g.backward(loss, &wrt).iter().map(|v| v.map(|v| g.value(v).clone())).collect();
        (value, gs)
    };
    let (shape, _) = eval(params, inputs, None, false);
    let weights = random_tensor(&mut r, shape.rows(), shape.cols(), 1.0);
    let (_, all) = eval(params, inputs, Some(&weights), true);
    let (pg, xg) = all.split_at(params.len());

    let names = params.names();
    let targets: Vec<(bool, usize)> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(i, _)| (true, i))
        .chain((0..inputs.len()).map(|i| (false, i)))
        .collect();
    assert!(!targets.is_empty());
    let mut worst = 0.0f64;
    for k in 0..probes {
        let (is_param, ti) = targets[k % targets.len()];
        let len = if is_param { params.tensors()[ti].len() } else { inputs[ti].len() };
        let e = r.random_range(0..len);
        let shifted = |delta: f64| {
            let mut p = params.clone();
            let mut xs = inputs.to_vec();
            if is_param {
                p.tensors_mut()[ti].data_mut()[e] += delta;
            } else {
                xs[ti].data_mut()[e] += delta;
            }
            eval(&p, &xs, Some(&weights), false).0.item()
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let grads = if is_param { pg } else { xg };
        let analytic = grads[ti].as_ref().map_or(0.0, |t| t.data()[e]);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    GradReport { probes, worst }
}
