//! Completion loss and WGAN-GP critic objectives.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{FscError, Result};
use crate::geom::{NeighborIndex, PointCloud, Vec3};
use crate::metrics::{emd_approx, nearest_neighbors, TRAIN_EMD_EPS, TRAIN_EMD_ITERS};
use crate::model::{critic_forward, CriticKind, ParamSet};
use crate::rng::{derive_seed_n, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Fraction of the run over which alpha ramps linearly.
    pub ramp_fraction: f64,
    /// Weight of the generator's adversarial terms.
    pub adv_weight: f64,
    pub gp_lambda: f64,
    pub n_critic: usize,
    pub emd_eps: f64,
    pub emd_iters: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_start: 0.01,
            alpha_end: 1.0,
            ramp_fraction: 0.5,
            adv_weight: 0.1,
            gp_lambda: 10.0,
            n_critic: 1,
            emd_eps: TRAIN_EMD_EPS,
            emd_iters: TRAIN_EMD_ITERS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.alpha_start, self.alpha_end, self.ramp_fraction, self.adv_weight, self.gp_lambda];
        if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(FscError::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.alpha_start > self.alpha_end {
            return Err(FscError::Config("alpha ramp must not decrease".into()));
        }
        if !(self.emd_eps > 0.0) || self.emd_iters == 0 {
            return Err(FscError::Config("emd eps and iterations must be positive".into()));
        }
        Ok(())
    }

    /// Reconstruction weight at `step` of a `total`-step run.
    pub fn alpha_at(&self, step: u64, total: u64) -> f64 {
        let ramp = self.ramp_fraction * total as f64;
        if ramp <= 0.0 || step as f64 >= ramp {
            return self.alpha_end;
        }
        self.alpha_start + (self.alpha_end - self.alpha_start) * step as f64 / ramp
    }
}

fn to_vecs(grad: &[Vec3]) -> Tensor {
    Tensor::from_vec(grad.len(), 3, grad.iter().flat_map(|g| [g.x, g.y, g.z]).collect()).expect("n x 3")
}

/// Sinkhorn transport cost and its gradient with respect to `a`, holding the
/// plan fixed.
pub fn emd_approx_grad(a: &PointCloud, b: &PointCloud, eps: f64, iters: usize) -> Result<(f64, Vec<Vec3>)> {
    let r = emd_approx(a, b, eps, iters)?;
    let n = b.len();
    let grad = a
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut g = Vec3::zeros();
            for (j, q) in b.points().iter().enumerate() {
                let d = p - q;
                let len = d.norm();
                if len > 0.0 {
                    g += d * (r.plan[i * n + j] / len);
                }
            }
            g
        })
        .collect();
    Ok((r.cost, grad))
}

fn check(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(FscError::EmptyInput)
    } else {
        Ok(())
    }
}

/// Symmetric Euclidean Chamfer distance and its gradient with respect to
/// `a` for the current nearest-neighbor matching. Coincident pairs
/// contribute zero gradient.
pub fn chamfer_euclidean_grad(a: &PointCloud, b: &PointCloud) -> Result<(f64, Vec<Vec3>)> {
    check(a, b)?;
    let (pa, pb) = (a.points(), b.points());
    let (na, nb) = (pa.len() as f64, pb.len() as f64);
    let mut grad = vec![Vec3::zeros(); pa.len()];
    let mut total = 0.0;
    for (i, (j, d2)) in nearest_neighbors(pa, &NeighborIndex::new(pb)).into_iter().enumerate() {
        let d = d2.sqrt();
        total += d / na;
        if d > 0.0 {
            grad[i] += (pa[i] - pb[j]) / (na * d);
        }
    }
    for (j, (i, d2)) in nearest_neighbors(pb, &NeighborIndex::new(pa)).into_iter().enumerate() {
        let d = d2.sqrt();
        total += d / nb;
        if d > 0.0 {
            grad[i] += (pa[i] - pb[j]) / (nb * d);
        }
    }
    Ok((total, grad))
}

/// Symmetric squared-Euclidean Chamfer distance and its gradient with
/// respect to `a`.
pub fn chamfer_l2_grad(a: &PointCloud, b: &PointCloud) -> Result<(f64, Vec<Vec3>)> {
    check(a, b)?;
    let (pa, pb) = (a.points(), b.points());
    let (na, nb) = (pa.len() as f64, pb.len() as f64);
    let mut grad = vec![Vec3::zeros(); pa.len()];
    let mut total = 0.0;
    for (i, (j, d2)) in nearest_neighbors(pa, &NeighborIndex::new(pb)).into_iter().enumerate() {
        total += d2 / na;
        grad[i] += (pa[i] - pb[j]) * (2.0 / na);
    }
    for (j, (i, d2)) in nearest_neighbors(pb, &NeighborIndex::new(pa)).into_iter().enumerate() {
        total += d2 / nb;
        grad[i] += (pa[i] - pb[j]) * (2.0 / nb);
    }
    Ok((total, grad))
}

/// A node whose value is `value` and whose gradient with respect to `x` is
/// the constant `grad`: `sum(x * grad) + (value - <x, grad>)`.
pub fn linear_surrogate(g: &mut Graph, x: Var, value: f64, grad: Tensor) -> Var {
    let dot: f64 = g.value(x).data().iter().zip(grad.data()).map(|(a, b)| a * b).sum();
    let c = g.constant(grad);
    let prod = g.mul(x, c);
    let s = g.sum_all(prod);
    g.add_scalar(s, value - dot)
}

/// Loss components of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    /// Transport cost between the coarse output and its target.
    pub d1: f64,
    /// Chamfer distance between the detailed output and the ground truth.
    pub d2: f64,
}

/// `d1 + alpha * d2` on plain clouds, with `d1` the Sinkhorn cost and `d2`
/// the Euclidean Chamfer distance.
pub fn completion_loss(
    y_coarse: &PointCloud,
    y_detail: &PointCloud,
    coarse_gt: &PointCloud,
    gt: &PointCloud,
    alpha: f64,
    cfg: &LossConfig,
) -> Result<(f64, LossComponents)> {
    let d1 = emd_approx(y_coarse, coarse_gt, cfg.emd_eps, cfg.emd_iters)?.cost;
    let d2 = crate::metrics::chamfer_euclidean(y_detail, gt)?;
    Ok((d1 + alpha * d2, LossComponents { d1, d2 }))
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub d1: Var,
    pub d2: Var,
}

/// [`completion_loss`] attached to `y_coarse` and `y_detail` on `g`. When
/// `alpha` is zero the Chamfer term is left out of the graph entirely.
pub fn completion_loss_graph(
    g: &mut Graph,
    y_coarse: Var,
    y_detail: Var,
    coarse_gt: &PointCloud,
    gt: &PointCloud,
    alpha: f64,
    cfg: &LossConfig,
) -> Result<(LossNodes, LossComponents)> {
    let yc = crate::model::network::tensor_cloud(g.value(y_coarse))?;
    let yd = crate::model::network::tensor_cloud(g.value(y_detail))?;
    let (d1v, g1) = emd_approx_grad(&yc, coarse_gt, cfg.emd_eps, cfg.emd_iters)?;
    let (d2v, g2) = chamfer_euclidean_grad(&yd, gt)?;
    let d1 = linear_surrogate(g, y_coarse, d1v, to_vecs(&g1));
    let d2 = linear_surrogate(g, y_detail, d2v, to_vecs(&g2));
    let total = if alpha == 0.0 {
        d1
    } else {
        let w = g.scale(d2, alpha);
        g.add(d1, w)
    };
    Ok((LossNodes { total, d1, d2 }, LossComponents { d1: d1v, d2: d2v }))
}

/// Batch-mean WGAN-GP objectives of one critic.
#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// `E[D(fake)] - E[D(real)] + lambda * E[(|grad D(x_hat)| - 1)^2]`.
    pub critic_loss: f64,
    /// `-E[D(fake)]`.
    pub generator_term: f64,
    pub penalty: f64,
    /// Gradient of `critic_loss` for every critic tensor, canonical order.
    pub grads: Vec<Tensor>,
}

struct SampleCritic {
    loss: f64,
    fake_score: f64,
    penalty: f64,
    grads: Vec<Tensor>,
}

fn critic_sample(
    kind: CriticKind,
    params: &ParamSet,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    t: f64,
) -> Result<SampleCritic> {
    if real.shape() != fake.shape() {
        return Err(FscError::SizeMismatch { left: real.len(), right: fake.len() });
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let rv = g.constant(real.clone());
    let fv = g.constant(fake.clone());
    let dr = critic_forward(&mut g, &p, kind, rv);
    let df = critic_forward(&mut g, &p, kind, fv);
    let mut loss = g.sub(df, dr);
    let mut penalty = 0.0;
    if lambda > 0.0 {
        let mix: Vec<f64> = real.data().iter().zip(fake.data()).map(|(r, f)| t * r + (1.0 - t) * f).collect();
        let xh = g.variable(Tensor::from_vec(real.rows(), real.cols(), mix)?);
        let dh = critic_forward(&mut g, &p, kind, xh);
        let gx = g.backward(dh, &[xh])[0];
        let pen = match gx {
            Some(gx) => {
                let sq = g.square(gx);
                let s = g.sum_all(sq);
                // sqrt is not differentiable at zero
                let s = if g.value(s).item() > 0.0 { s } else { g.add_scalar(s, 1e-30) };
                let norm = g.sqrt(s);
                let dev = g.add_scalar(norm, -1.0);
                g.square(dev)
            }
            None => g.constant(Tensor::scalar(1.0)),
        };
        penalty = g.value(pen).item();
        let wp = g.scale(pen, lambda);
        loss = g.add(loss, wp);
    }
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(FscError::NonFiniteLoss(format!("{} critic loss {value}", kind.name())));
    }
    let grads = g
        .backward(loss, p.vars())
        .into_iter()
        .zip(params.tensors())
        .map(|(v, t)| v.map_or_else(|| Tensor::zeros(t.rows(), t.cols()), |v| g.value(v).clone()))
        .collect();
    Ok(SampleCritic { loss: value, fake_score: g.value(df).item(), penalty, grads })
}

/// Sums tensor lists elementwise in list order, then scales by `1/len`.
pub fn mean_grads(per_sample: Vec<Vec<Tensor>>) -> Vec<Tensor> {
    let n = per_sample.len() as f64;
    let mut it = per_sample.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for gs in it {
        for (a, b) in acc.iter_mut().zip(gs) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    acc
}

/// WGAN-GP losses of one critic over a batch. Interpolation weights are
/// drawn from `seed`, one per sample.
pub fn critic_losses(
    kind: CriticKind,
    params: &ParamSet,
    reals: &[Tensor],
    fakes: &[Tensor],
    gp_lambda: f64,
    seed: u64,
) -> Result<CriticLoss> {
    if reals.len() != fakes.len() {
        return Err(FscError::SizeMismatch { left: reals.len(), right: fakes.len() });
    }
    if reals.is_empty() {
        return Err(FscError::EmptyInput);
    }
    let samples: Vec<SampleCritic> = reals
        .par_iter()
        .zip(fakes)
        .enumerate()
        .map(|(i, (r, f))| {
            let t: f64 = rng_from(derive_seed_n(seed, i as u64)).random();
            critic_sample(kind, params, r, f, gp_lambda, t)
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let critic_loss = samples.iter().map(|s| s.loss).sum::<f64>() / n;
    let generator_term = -samples.iter().map(|s| s.fake_score).sum::<f64>() / n;
    let penalty = samples.iter().map(|s| s.penalty).sum::<f64>() / n;
    let grads = mean_grads(samples.into_iter().map(|s| s.grads).collect());
    for (name, g) in params.names().iter().zip(&grads) {
        if !g.is_finite() {
            return Err(FscError::NonFiniteGradient(format!("{}/{name}", kind.name())));
        }
    }
    Ok(CriticLoss { critic_loss, generator_term, penalty, grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_ramp() {
        let c = LossConfig::default();
        assert_eq!(c.alpha_at(0, 100), 0.01);
        assert!((c.alpha_at(25, 100) - 0.505).abs() < 1e-12);
        assert_eq!(c.alpha_at(50, 100), 1.0);
        assert_eq!(c.alpha_at(99, 100), 1.0);
    }

    #[test]
    fn surrogate_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let s = linear_surrogate(&mut g, x, 7.5, Tensor::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap());
        assert!((g.value(s).item() - 7.5).abs() < 1e-12);
        let gx = g.backward(s, &[x])[0].unwrap();
        assert_eq!(g.value(gx).data(), &[0.5, -1.0, 2.0]);
    }
}
