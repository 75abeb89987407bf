//! Optimization of the completion network: reconstruction loss, WGAN-GP
//! critics for both revision stages, Adam, checkpointable training state and
//! evaluation sweeps.

pub mod eval;
pub mod loss;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, Tensor};
use crate::datagen::DatasetSample;
use crate::error::{FscError, Result};
use crate::geom::{farthest_point_sample, subsample_random, PointCloud};
use crate::metrics::{chamfer_l1, REPORT_SCALE};
use crate::model::checkpoint::{self, model_tensors, Dtype};
use crate::model::network::{cloud_tensor, encode_graph, forward, revise_feature, revise_points, tensor_cloud};
use crate::model::params::round_to_f32;
use crate::model::{critic_forward, critic_layout, generator_layout, CriticKind, Model, ModelConfig, ParamSet};
use crate::rng::{derive_seed, derive_seed_n, rng_from};

pub use eval::{evaluate, evaluate_samples, EvalOptions, EvalReport, EvalRow};
pub use loss::{completion_loss, critic_losses, CriticLoss, LossComponents, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    pub batch_size: usize,
    /// Planned run length; sets the alpha ramp.
    pub steps: u64,
    pub seed: u64,
    /// Input resolutions; each batch draws one uniformly.
    pub levels: Vec<usize>,
    /// Size of the ground-truth resample fed to the encoder for the feature
    /// critic's real samples.
    pub real_feature_points: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, steps: u64, seed: u64) -> Self {
        Self {
            model,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            batch_size: 8,
            steps,
            seed,
            levels: vec![2048, 1024, 512, 256, 128, 64],
            real_feature_points: 2048,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(FscError::Config(format!("invalid optimizer settings {o:?}")));
        }
        if self.batch_size == 0 || self.levels.is_empty() || self.levels.contains(&0) || self.real_feature_points == 0 {
            return Err(FscError::Config("batch size, levels and real_feature_points must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected step; parameters are then rounded to `f32`.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor], cfg: &OptimConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                md[k] = cfg.beta1 * md[k] + (1.0 - cfg.beta1) * gk;
                vd[k] = cfg.beta2 * vd[k] + (1.0 - cfg.beta2) * gk * gk;
                let mh = md[k] / bc1;
                let vh = vd[k] / bc2;
                pd[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
            round_to_f32(p);
        }
    }
}

/// Exponential moving averages of the logged losses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningAverages {
    pub d1: f64,
    pub d2: f64,
    pub cd_l1: f64,
    pub critic_feature: f64,
    pub critic_point: f64,
}

const RUNNING_DECAY: f64 = 0.98;

impl RunningAverages {
    fn to_vec(self) -> Vec<f64> {
        vec![self.d1, self.d2, self.cd_l1, self.critic_feature, self.critic_point]
    }

    fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [d1, d2, cd_l1, critic_feature, critic_point] => {
                Ok(Self { d1: *d1, d2: *d2, cd_l1: *cd_l1, critic_feature: *critic_feature, critic_point: *critic_point })
            }
            _ => Err(FscError::Checkpoint(format!("running averages need 5 values, found {}", v.len()))),
        }
    }

    fn update(&mut self, s: &StepStats, first: bool) {
        let mix = |old: &mut f64, new: f64| *old = if first { new } else { RUNNING_DECAY * *old + (1.0 - RUNNING_DECAY) * new };
        mix(&mut self.d1, s.d1);
        mix(&mut self.d2, s.d2);
        mix(&mut self.cd_l1, s.cd_l1);
        mix(&mut self.critic_feature, s.critic_feature);
        mix(&mut self.critic_point, s.critic_point);
    }
}

/// Everything needed to resume training exactly. Per-step randomness is
/// derived from `(config.seed, step)`, so no generator state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub step: u64,
    pub generator: ParamSet,
    pub feature_critic: ParamSet,
    pub point_critic: ParamSet,
    pub gen_opt: Adam,
    pub feature_opt: Adam,
    pub point_opt: Adam,
    pub running: RunningAverages,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Model::new(config.model.clone(), derive_seed(config.seed, "generator"))?.params;
        Self::with_generator(config, generator)
    }

    /// Fresh critics and optimizer state around existing generator weights.
    pub fn with_generator(config: TrainConfig, generator: ParamSet) -> Result<Self> {
        config.validate()?;
        generator.check_layout(&generator_layout(&config.model))?;
        let feature_critic = critic_layout(&config.model, CriticKind::Feature).init(derive_seed(config.seed, "critic.feature"));
        let point_critic = critic_layout(&config.model, CriticKind::Point).init(derive_seed(config.seed, "critic.point"));
        Ok(Self {
            gen_opt: Adam::new(&generator),
            feature_opt: Adam::new(&feature_critic),
            point_opt: Adam::new(&point_critic),
            config,
            step: 0,
            generator,
            feature_critic,
            point_critic,
            running: RunningAverages::default(),
        })
    }

    pub fn model(&self) -> Model {
        Model { config: self.config.model.clone(), params: self.generator.clone() }
    }

    fn critic(&self, kind: CriticKind) -> &ParamSet {
        match kind {
            CriticKind::Feature => &self.feature_critic,
            CriticKind::Point => &self.point_critic,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = json!({
            "kind": "train",
            "model": self.config.model,
            "train": self.config,
            "step": self.step,
            "adam_t": [self.gen_opt.t, self.feature_opt.t, self.point_opt.t],
        });
        let running = Tensor::row_vector(self.running.to_vec());
        let mut tensors = model_tensors("gen/", &self.generator, Dtype::F32);
        tensors.extend(model_tensors("critic.feature/", &self.feature_critic, Dtype::F32));
        tensors.extend(model_tensors("critic.point/", &self.point_critic, Dtype::F32));
        for (tag, set, opt) in [
            ("gen", &self.generator, &self.gen_opt),
            ("feature", &self.feature_critic, &self.feature_opt),
            ("point", &self.point_critic, &self.point_opt),
        ] {
            for (k, name) in set.names().iter().enumerate() {
                tensors.push((format!("adam.{tag}.m/{name}"), &opt.m[k], Dtype::F64));
                tensors.push((format!("adam.{tag}.v/{name}"), &opt.v[k], Dtype::F64));
            }
        }
        tensors.push(("running".into(), &running, Dtype::F64));
        checkpoint::encode(&header, &tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::geom::ply::write_bytes(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = checkpoint::read(path)?;
        if c.header.get("kind").and_then(|k| k.as_str()) != Some("train") {
            return Err(FscError::Checkpoint(format!("{} is not a training state", path.display())));
        }
        let bad = |m: &str| FscError::Checkpoint(format!("{}: {m}", path.display()));
        let config: TrainConfig = serde_json::from_value(c.header["train"].clone()).map_err(|e| bad(&e.to_string()))?;
        let step = c.header["step"].as_u64().ok_or_else(|| bad("missing step"))?;
        let adam_t: Vec<u64> = serde_json::from_value(c.header["adam_t"].clone()).map_err(|e| bad(&e.to_string()))?;
        if adam_t.len() != 3 {
            return Err(bad("adam_t needs three entries"));
        }
        let mut state = Self::with_generator(config.clone(), c.group("gen/")?)?;
        state.step = step;
        state.feature_critic = c.group("critic.feature/")?;
        state.point_critic = c.group("critic.point/")?;
        state.feature_critic.check_layout(&critic_layout(&config.model, CriticKind::Feature))?;
        state.point_critic.check_layout(&critic_layout(&config.model, CriticKind::Point))?;
        for (k, tag) in ["gen", "feature", "point"].iter().enumerate() {
            let m = c.group(&format!("adam.{tag}.m/"))?;
            let v = c.group(&format!("adam.{tag}.v/"))?;
            let set = match k {
                0 => &state.generator,
                1 => &state.feature_critic,
                _ => &state.point_critic,
            };
            if m.names() != set.names() || v.names() != set.names() {
                return Err(bad(&format!("optimizer moments for {tag} do not match parameters")));
            }
            let opt = Adam { m: m.tensors().to_vec(), v: v.tensors().to_vec(), t: adam_t[k] };
            match k {
                0 => state.gen_opt = opt,
                1 => state.feature_opt = opt,
                _ => state.point_opt = opt,
            }
        }
        let running = c.tensors.iter().find(|(n, _)| n == "running").ok_or_else(|| bad("missing running averages"))?;
        state.running = RunningAverages::from_slice(running.1.data())?;
        Ok(state)
    }
}

/// A dataset sample with its coarse transport target at the model's
/// `n_coarse`.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub sample: DatasetSample,
    pub coarse_target: PointCloud,
}

/// The stored coarse cloud when it already has `n_coarse` points, else a
/// farthest-point sample of the ground truth of that size.
pub fn coarse_target(sample: &DatasetSample, n_coarse: usize) -> Result<PointCloud> {
    if sample.coarse_gt.len() == n_coarse {
        Ok(sample.coarse_gt.clone())
    } else {
        farthest_point_sample(&sample.gt, n_coarse, 0)
    }
}

pub fn prepare_samples(samples: Vec<DatasetSample>, n_coarse: usize) -> Result<Vec<TrainSample>> {
    samples
        .into_par_iter()
        .map(|s| Ok(TrainSample { coarse_target: coarse_target(&s, n_coarse)?, sample: s }))
        .collect()
}

/// One resolution and the training samples of a step.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub samples: Vec<&'a TrainSample>,
    pub resolution: usize,
}

/// Deterministic batch for `step`: consecutive slices of a per-epoch
/// shuffle, and one resolution drawn uniformly from `levels`.
pub fn select_batch<'a>(config: &TrainConfig, step: u64, data: &'a [TrainSample]) -> Result<Batch<'a>> {
    if data.is_empty() {
        return Err(FscError::EmptyInput);
    }
    let n = data.len() as u64;
    let bs = config.batch_size as u64;
    let epoch_seed = derive_seed(config.seed, "epoch");
    let order_of = |epoch: u64| {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_from(derive_seed_n(epoch_seed, epoch)));
        order
    };
    let mut samples = Vec::with_capacity(config.batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for k in step * bs..(step + 1) * bs {
        let epoch = k / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, order_of(epoch)));
        }
        samples.push(&data[cached.as_ref().unwrap().1[(k % n) as usize]]);
    }
    let mut rng = rng_from(derive_seed_n(derive_seed(config.seed, "level"), step));
    let resolution = config.levels[rng.random_range(0..config.levels.len())];
    Ok(Batch { samples, resolution })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub resolution: usize,
    pub alpha: f64,
    pub d1: f64,
    pub d2: f64,
    pub loss: f64,
    pub critic_feature: f64,
    pub critic_point: f64,
    pub adv_feature: f64,
    pub adv_point: f64,
    /// Batch-mean CD-l1 of the detailed output, times 1000.
    pub cd_l1: f64,
    pub wall_ms: f64,
}

/// Values kept from the reconstruction pass of one sample; its tape is
/// dropped once the reconstruction gradients are taken.
struct Pending {
    grads: Vec<Tensor>,
    f_coarse: Tensor,
    f_fine: Tensor,
    y_coarse: Tensor,
    y_fine: Tensor,
    components: LossComponents,
    cd_l1: f64,
    real_feature: Tensor,
    real_points: Tensor,
}

fn dense_grads(g: &Graph, grads: Vec<Option<crate::autodiff::Var>>, like: &ParamSet) -> Vec<Tensor> {
    grads
        .into_iter()
        .zip(like.tensors())
        .map(|(v, t)| v.map_or_else(|| Tensor::zeros(t.rows(), t.cols()), |v| g.value(v).clone()))
        .collect()
}

/// One optimization step: `n_critic` updates of each enabled critic, then
/// one generator update on `d1 + alpha d2 + beta (adversarial terms)`.
///
/// The adversarial terms are evaluated on the revision stages applied to
/// detached inputs, so they train the two revision generators and leave the
/// encoder and decoders to the reconstruction loss.
pub fn train_step(state: &mut TrainState, batch: &Batch<'_>) -> Result<StepStats> {
    let start = Instant::now();
    let cfg = state.config.clone();
    let mc = &cfg.model;
    let step = state.step;
    let alpha = cfg.loss.alpha_at(step, cfg.steps);
    let real_seed = derive_seed_n(derive_seed(cfg.seed, "real"), step);
    let generator = &state.generator;

    let mut pending: Vec<Pending> = batch
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, ts)| -> Result<Pending> {
            let s = &ts.sample;
            let input = s.partial(batch.resolution)?;
            let mut g = Graph::new();
            let bound = generator.bind(&mut g, true);
            let x = g.constant(cloud_tensor(input));
            let trace = forward(&mut g, &bound, mc, x)?;
            let (nodes, components) =
                loss::completion_loss_graph(&mut g, trace.y_coarse, trace.y_detail, &ts.coarse_target, &s.gt, alpha, &cfg.loss)?;
            let cd_l1 = chamfer_l1(&tensor_cloud(g.value(trace.y_detail))?, &s.gt)? * REPORT_SCALE;

            let real_feature = if mc.flags.feature_revision {
                let n = cfg.real_feature_points.min(s.gt.len());
                let resample = subsample_random(&s.gt, n, derive_seed_n(real_seed, i as u64))?;
                let mut rg = Graph::new();
                let p = generator.bind(&mut rg, false);
                let rx = rg.constant(cloud_tensor(&resample));
                let e = encode_graph(&mut rg, &p, mc, rx)?;
                rg.value(e.f_coarse).clone()
            } else {
                Tensor::zeros(0, 0)
            };
            let value = g.value(nodes.total).item();
            if !value.is_finite() {
                return Err(FscError::NonFiniteLoss(format!("reconstruction loss {value} at step {step}")));
            }
            let grads = g.backward(nodes.total, bound.vars());
            Ok(Pending {
                grads: dense_grads(&g, grads, generator),
                f_coarse: g.value(trace.f_coarse).clone(),
                f_fine: g.value(trace.f_fine).clone(),
                y_coarse: g.value(trace.y_coarse).clone(),
                y_fine: g.value(trace.y_fine).clone(),
                components,
                cd_l1,
                real_feature,
                real_points: cloud_tensor(&ts.coarse_target),
            })
        })
        .collect::<Result<_>>()?;

    let mut critic_stats = [0.0; 2];
    for (slot, kind) in [CriticKind::Feature, CriticKind::Point].into_iter().enumerate() {
        if !kind.enabled(mc) {
            continue;
        }
        let (reals, fakes): (Vec<Tensor>, Vec<Tensor>) = pending
            .iter()
            .map(|p| match kind {
                CriticKind::Feature => (p.real_feature.clone(), p.f_fine.clone()),
                CriticKind::Point => (p.real_points.clone(), p.y_fine.clone()),
            })
            .unzip();
        let gp_seed = derive_seed(derive_seed_n(cfg.seed, step), kind.name());
        for c in 0..cfg.loss.n_critic {
            let params = state.critic(kind);
            let cl = critic_losses(kind, params, &reals, &fakes, cfg.loss.gp_lambda, derive_seed_n(gp_seed, c as u64))?;
            critic_stats[slot] = cl.critic_loss;
            match kind {
                CriticKind::Feature => state.feature_opt.update(&mut state.feature_critic, &cl.grads, &cfg.optim),
                CriticKind::Point => state.point_opt.update(&mut state.point_critic, &cl.grads, &cfg.optim),
            }
        }
    }

    let beta = cfg.loss.adv_weight;
    let (fc, pc) = (&state.feature_critic, &state.point_critic);
    let results: Vec<(Vec<Tensor>, f64, f64)> = pending
        .par_iter_mut()
        .map(|p| -> Result<(Vec<Tensor>, f64, f64)> {
            let mut grads = std::mem::take(&mut p.grads);
            let mut adv = [0.0; 2];
            if beta == 0.0 {
                return Ok((grads, 0.0, 0.0));
            }
            // adversarial gradients reach only the revision generators
            let mut g = Graph::new();
            let bound = generator.bind(&mut g, true);
            let mut total = None;
            for (slot, kind, params) in [(0, CriticKind::Feature, fc), (1, CriticKind::Point, pc)] {
                if !kind.enabled(mc) {
                    continue;
                }
                let input = match kind {
                    CriticKind::Feature => {
                        let c = g.constant(p.f_coarse.clone());
                        revise_feature(&mut g, &bound, c)
                    }
                    CriticKind::Point => {
                        let c = g.constant(p.y_coarse.clone());
                        revise_points(&mut g, &bound, c)
                    }
                };
                let cb = params.bind(&mut g, false);
                let score = critic_forward(&mut g, &cb, kind, input);
                adv[slot] = -g.value(score).item();
                let term = g.scale(score, -beta);
                total = Some(match total {
                    Some(t) => g.add(t, term),
                    None => term,
                });
            }
            if let Some(total) = total {
                let value = g.value(total).item();
                if !value.is_finite() {
                    return Err(FscError::NonFiniteLoss(format!("adversarial loss {value} at step {step}")));
                }
                let back = g.backward(total, bound.vars());
                for (acc, t) in grads.iter_mut().zip(dense_grads(&g, back, generator)) {
                    acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
                }
            }
            Ok((grads, adv[0], adv[1]))
        })
        .collect::<Result<_>>()?;

    let n = pending.len() as f64;
    let mut adv = [0.0; 2];
    let mut per_sample = Vec::with_capacity(results.len());
    for (grads, a0, a1) in results {
        adv[0] += a0 / n;
        adv[1] += a1 / n;
        per_sample.push(grads);
    }
    let grads = loss::mean_grads(per_sample);
    for (name, g) in state.generator.names().iter().zip(&grads) {
        if !g.is_finite() {
            return Err(FscError::NonFiniteGradient(format!("{name} (step {step})")));
        }
    }
    state.gen_opt.update(&mut state.generator, &grads, &cfg.optim);

    let d1 = pending.iter().map(|p| p.components.d1).sum::<f64>() / n;
    let d2 = pending.iter().map(|p| p.components.d2).sum::<f64>() / n;
    let stats = StepStats {
        step,
        resolution: batch.resolution,
        alpha,
        d1,
        d2,
        loss: d1 + alpha * d2 + beta * (adv[0] + adv[1]),
        critic_feature: critic_stats[0],
        critic_point: critic_stats[1],
        adv_feature: adv[0],
        adv_point: adv[1],
        cd_l1: pending.iter().map(|p| p.cd_l1).sum::<f64>() / n,
        wall_ms: start.elapsed().as_secs_f64() * 1000.0,
    };
    state.running.update(&stats, step == 0);
    state.step += 1;
    Ok(stats)
}

/// Runs steps until `state.step == until`, calling `on_step` after each.
pub fn train(
    state: &mut TrainState,
    data: &[TrainSample],
    until: u64,
    mut on_step: impl FnMut(&TrainState, &StepStats) -> Result<()>,
) -> Result<()> {
    while state.step < until {
        let cfg = state.config.clone();
        let batch = select_batch(&cfg, state.step, data)?;
        let stats = train_step(state, &batch)?;
        on_step(state, &stats)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamSet::from_parts(vec!["w".into()], vec![Tensor::row_vector(vec![1.0, -1.0, 0.5])]).unwrap();
        let mut opt = Adam::new(&p);
        let cfg = OptimConfig { lr: 0.125, ..OptimConfig::default() };
        opt.update(&mut p, &[Tensor::row_vector(vec![2.0, -3.0, 0.0])], &cfg);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.875).abs() < 1e-6 && (w[1] + 0.875).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }
}
