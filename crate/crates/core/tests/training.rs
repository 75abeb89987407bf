mod common;

use std::collections::HashMap;

use common::{micro_config, random_cloud, random_tensor, rng};
use fsc_core::autodiff::{Graph, Tensor};
use fsc_core::datagen::{build_dataset, toy_sources, DatasetSample, GenConfig, SplitRatios};
use fsc_core::geom::{PointCloud, Vec3};
use fsc_core::metrics::emd_approx;
use fsc_core::model::network::cloud_tensor;
use fsc_core::model::{critic_layout, forward, CriticKind, ModelConfig, ParamSet};
use fsc_core::training::eval::{Prediction, OVERALL};
use fsc_core::training::loss::{completion_loss_graph, mean_grads};
use fsc_core::training::{
    completion_loss, critic_losses, evaluate_samples, prepare_samples, select_batch, train_step, Adam, EvalOptions,
    LossConfig, TrainConfig, TrainSample, TrainState,
};

fn dataset(n_coarse: usize) -> (tempfile::TempDir, Vec<DatasetSample>) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        gt_points: 256,
        partial_points: 64,
        levels: vec![32, 16],
        coarse_points: n_coarse,
        seed: 5,
        split: SplitRatios { train: 1.0, val: 0.0, test: 0.0 },
        ..GenConfig::default()
    };
    let manifest = build_dataset(&toy_sources(6, 2), &cfg, dir.path()).unwrap();
    let samples = manifest.load_split(dir.path(), "train").unwrap();
    (dir, samples)
}

fn config(model: ModelConfig) -> TrainConfig {
    let mut c = TrainConfig::new(model, 20, 3);
    c.batch_size = 3;
    c.levels = vec![64, 32];
    c.real_feature_points = 128;
    c.optim.lr = 1e-3;
    c
}

fn setup() -> (tempfile::TempDir, Vec<TrainSample>, TrainConfig) {
    let model = micro_config();
    let (dir, samples) = dataset(model.n_coarse);
    let data = prepare_samples(samples, model.n_coarse).unwrap();
    (dir, data, config(model))
}

fn chamfer_euclidean_oracle(a: &PointCloud, b: &PointCloud) -> f64 {
    let dir = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    dir(a.points(), b.points()) + dir(b.points(), a.points())
}

#[test]
fn steps_are_deterministic() {
    let (_dir, data, cfg) = setup();
    let mut a = TrainState::new(cfg.clone()).unwrap();
    for step in 0..2 {
        let batch = select_batch(&cfg, step, &data).unwrap();
        train_step(&mut a, &batch).unwrap();
    }
    let mut b = a.clone();
    let batch = select_batch(&cfg, 2, &data).unwrap();
    let sa = train_step(&mut a, &batch).unwrap();
    let sb = train_step(&mut b, &batch).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.loss.to_bits(), sb.loss.to_bits());
    assert_ne!(a.generator, TrainState::new(cfg).unwrap().generator);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let (dir, data, cfg) = setup();
    let mut straight = TrainState::new(cfg.clone()).unwrap();
    for step in 0..4 {
        train_step(&mut straight, &select_batch(&cfg, step, &data).unwrap()).unwrap();
    }

    let mut first = TrainState::new(cfg.clone()).unwrap();
    for step in 0..2 {
        train_step(&mut first, &select_batch(&cfg, step, &data).unwrap()).unwrap();
    }
    let path = dir.path().join("state.ckpt");
    first.save(&path).unwrap();
    let mut resumed = TrainState::load(&path).unwrap();
    assert_eq!(resumed, first);
    for step in 2..4 {
        train_step(&mut resumed, &select_batch(&cfg, step, &data).unwrap()).unwrap();
    }
    assert_eq!(resumed, straight);
}

#[test]
fn without_adversaries_the_update_is_pure_reconstruction() {
    let (_dir, data, mut cfg) = setup();
    cfg.loss.adv_weight = 0.0;
    let mut state = TrainState::new(cfg.clone()).unwrap();
    let batch = select_batch(&cfg, 0, &data).unwrap();
    let alpha = cfg.loss.alpha_at(0, cfg.steps);

    let per_sample: Vec<Vec<Tensor>> = batch
        .samples
        .iter()
        .map(|ts| {
            let mut g = Graph::new();
            let bound = state.generator.bind(&mut g, true);
            let x = g.constant(cloud_tensor(ts.sample.partial(batch.resolution).unwrap()));
            let t = forward(&mut g, &bound, &cfg.model, x).unwrap();
            let (nodes, _) =
                completion_loss_graph(&mut g, t.y_coarse, t.y_detail, &ts.coarse_target, &ts.sample.gt, alpha, &cfg.loss)
                    .unwrap();
            g.backward(nodes.total, bound.vars())
                .into_iter()
                .zip(state.generator.tensors())
                .map(|(v, p)| v.map_or_else(|| Tensor::zeros(p.rows(), p.cols()), |v| g.value(v).clone()))
                .collect()
        })
        .collect();
    let mut expect = state.generator.clone();
    Adam::new(&expect).update(&mut expect, &mean_grads(per_sample), &cfg.optim);

    train_step(&mut state, &batch).unwrap();
    assert_eq!(state.generator, expect);
}

#[test]
fn zero_alpha_leaves_the_detail_decoder_untouched() {
    let (_dir, data, mut cfg) = setup();
    cfg.loss.alpha_start = 0.0;
    cfg.loss.alpha_end = 0.0;
    let mut state = TrainState::new(cfg.clone()).unwrap();
    let before = state.generator.clone();
    for step in 0..2 {
        let s = train_step(&mut state, &select_batch(&cfg, step, &data).unwrap()).unwrap();
        assert_eq!(s.alpha, 0.0);
    }
    let mut moved = 0;
    for ((name, a), b) in state.generator.iter().zip(before.tensors()) {
        if name.starts_with("gd.") {
            assert_eq!(a, b, "{name} changed");
        } else if a != b {
            moved += 1;
        }
    }
    assert!(moved > 0);
    for (name, m) in state.generator.names().iter().zip(&state.gen_opt.m) {
        if name.starts_with("gd.") {
            assert!(m.data().iter().all(|&x| x == 0.0), "{name} received gradient");
        }
    }
}

fn zeroed(params: &ParamSet) -> ParamSet {
    let mut p = params.clone();
    for t in p.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    p
}

#[test]
fn critic_loss_edge_cases() {
    let mc = micro_config();
    let mut r = rng(6);
    for kind in [CriticKind::Feature, CriticKind::Point] {
        let width = match kind {
            CriticKind::Feature => mc.feature_width(),
            CriticKind::Point => 3,
        };
        let rows = match kind {
            CriticKind::Feature => 1,
            CriticKind::Point => 12,
        };
        let reals: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, rows, width, 1.0)).collect();
        let fakes: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, rows, width, 1.0)).collect();
        let layout = critic_layout(&mc, kind);

        // a constant critic has zero input gradient, so the penalty is exactly lambda
        let flat = critic_losses(kind, &zeroed(&layout.init(1)), &reals, &fakes, 10.0, 2).unwrap();
        assert!((flat.critic_loss - 10.0).abs() <= 1e-12, "{kind:?}: {}", flat.critic_loss);

        let params = layout.init(7);
        let same = critic_losses(kind, &params, &reals, &reals, 0.0, 2).unwrap();
        assert!(same.critic_loss.abs() <= 1e-12);
        assert_eq!(same.penalty, 0.0);

        for seed in 0..10 {
            let cl = critic_losses(kind, &params, &reals, &fakes, 10.0, seed).unwrap();
            assert!(cl.critic_loss.is_finite() && cl.penalty >= 0.0);
            assert!(cl.grads.iter().all(|g| g.is_finite()));
        }
    }
}

#[test]
fn completion_loss_matches_oracle() {
    let cfg = LossConfig::default();
    let mut r = rng(12);
    let gt = random_cloud(&mut r, 64);
    let coarse = random_cloud(&mut r, 16);
    let (perfect, _) = completion_loss(&coarse, &gt, &coarse, &gt, 0.5, &cfg).unwrap();
    assert!(perfect <= 1e-3, "{perfect}");

    for _ in 0..5 {
        let yc = random_cloud(&mut r, 16);
        let yd = random_cloud(&mut r, 48);
        let d1 = emd_approx(&yc, &coarse, cfg.emd_eps, cfg.emd_iters).unwrap().cost;
        let (zero, parts) = completion_loss(&yc, &yd, &coarse, &gt, 0.0, &cfg).unwrap();
        assert_eq!(zero, d1);
        assert!((parts.d2 - chamfer_euclidean_oracle(&yd, &gt)).abs() <= 1e-12);
        let (total, _) = completion_loss(&yc, &yd, &coarse, &gt, 0.3, &cfg).unwrap();
        assert!((total - (d1 + 0.3 * chamfer_euclidean_oracle(&yd, &gt))).abs() <= 1e-12);
    }
}

fn key(c: &PointCloud) -> Vec<u64> {
    c.points().iter().flat_map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect()
}

#[test]
fn bypass_predictor_scores_zero_and_overall_is_weighted() {
    let (_dir, samples) = dataset(8);
    let opts = EvalOptions { split: "train".into(), resolutions: vec![64, 32, 24], with_l2: true, with_emd: true };
    // look the ground truth up by the exact input the evaluator will pass
    let mut table: HashMap<Vec<u64>, (PointCloud, PointCloud)> = HashMap::new();
    for s in &samples {
        for &res in &opts.resolutions {
            let input = fsc_core::training::eval::input_at(s, res).unwrap();
            table.insert(key(&input), (s.gt.clone(), s.coarse_gt.clone()));
        }
    }
    let predict = |c: &PointCloud| {
        let (gt, coarse) = table[&key(c)].clone();
        Ok(Prediction { detail: gt, coarse: Some(coarse) })
    };
    let report = evaluate_samples(&samples, &opts, &predict);
    assert!(report.failures.is_empty());
    for row in &report.rows {
        assert_eq!(row.cd_l1, 0.0);
        assert_eq!(row.cd_l2, Some(0.0));
        assert_eq!(row.emd, Some(0.0));
    }

    // a predictor whose error depends on the sample makes the weighting visible
    let shifted = |c: &PointCloud| {
        let (gt, _) = table[&key(c)].clone();
        let d = gt.points()[0].x.abs();
        Ok(Prediction { detail: gt.transformed(&Vec3::new(d, 0.0, 0.0), 1.0), coarse: None })
    };
    let report = evaluate_samples(&samples, &EvalOptions { with_emd: false, ..opts.clone() }, &shifted);
    for &res in &opts.resolutions {
        let cats: Vec<_> = report.rows.iter().filter(|r| r.resolution == res && r.category != OVERALL).collect();
        let all = report.overall(res).unwrap();
        let n: usize = cats.iter().map(|r| r.count).sum();
        assert_eq!(n, samples.len());
        assert_eq!(all.count, n);
        let weighted = cats.iter().map(|r| r.cd_l1 * r.count as f64).sum::<f64>() / n as f64;
        assert!((all.cd_l1 - weighted).abs() <= 1e-9 * weighted.max(1.0));
        assert!(all.emd.is_none());
    }
}
