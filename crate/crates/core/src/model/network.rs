use std::sync::Arc;

use super::layers::{
    ball_query, cascaded_external_attention, external_attention, external_attention_layout, linear, mlp,
    offset_attention, offset_attention_layout, repeat_index,
};
use super::params::{Bound, Layout, ParamSet};
use super::ModelConfig;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{FscError, Result};
use crate::geom::{PointCloud, Vec3};

/// Parameter layout of the generator (encoder, revisions, decoders) for
/// `cfg`, in canonical order.
pub fn generator_layout(cfg: &ModelConfig) -> Layout {
    let f = &cfg.flags;
    let d = cfg.feature_width();
    let h = cfg.hidden;
    let mut l = Layout::new();
    if f.extensive_branch {
        let c = cfg.d1 / 2;
        l.mlp("enc.ext.l1", &[3, h, c], false);
        l.mlp("enc.ext.l2", &[2 * c, h, c], false);
    }
    if f.salient_branch {
        let c = cfg.d2 / 2;
        l.mlp("enc.sal.l1", &[3, h, c], false);
        if f.salient_attention {
            offset_attention_layout(&mut l, "enc.sal.oa", c);
        }
        l.linear("enc.sal.l2.0", 2 * c, h, false);
        if f.salient_attention {
            external_attention_layout(&mut l, "enc.sal.ea0", h, cfg.heads, cfg.memory);
            external_attention_layout(&mut l, "enc.sal.ea1", h, cfg.heads, cfg.memory);
        }
        l.linear("enc.sal.l2.1", h, c, false);
    }
    if f.extensive_branch != f.salient_branch {
        let w = if f.extensive_branch { cfg.d1 } else { cfg.d2 };
        l.linear("enc.proj", w, d, false);
    }
    if f.feature_revision {
        let r = cfg.revision_hidden;
        let widths = [(d, r), (r, r), (r + d, r), (r, r), (r + d, r), (r, r), (r, d)];
        for (i, &(a, b)) in widths.iter().enumerate() {
            l.linear(&format!("rf.{i}"), a, b, i == 6);
        }
    }
    l.mlp("dec", &[d, cfg.decoder_hidden, cfg.decoder_hidden, 3 * cfg.n_coarse], false);
    if f.point_revision {
        l.mlp("rp", &[3, cfg.revision_hidden, cfg.revision_hidden, 3], true);
    }
    let fh = cfg.fold_hidden;
    let mut fuse_in = 3 + d;
    if f.pointnetpp_fusion {
        l.mlp("gd.sa", &[3, cfg.local_hidden, cfg.local_hidden], false);
        fuse_in += cfg.local_hidden;
    }
    l.linear("gd.fuse", fuse_in, fh, false);
    if f.transformer_fusion {
        external_attention_layout(&mut l, "gd.ea", fh, cfg.heads, cfg.memory);
    }
    l.mlp("gd.fold1", &[fh + 2, fh, fh, 3], false);
    l.mlp("gd.fold2", &[fh + 3, fh, fh, 3], true);
    l
}

/// Intermediates of one encoder branch.
#[derive(Debug, Clone, Copy)]
pub struct BranchTrace {
    /// Per-point features after the first MLP (and offset attention).
    pub point_features: Var,
    pub pooled1: Var,
    /// `point_features` with `pooled1` appended to every row.
    pub expanded: Var,
    pub pooled2: Var,
    /// `[pooled1 | pooled2]`.
    pub output: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderActivations {
    pub extensive: Option<BranchTrace>,
    pub salient: Option<BranchTrace>,
    pub f_coarse: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub input: Var,
    pub encoder: EncoderActivations,
    pub f_coarse: Var,
    pub f_fine: Var,
    pub y_coarse: Var,
    pub y_fine: Var,
    pub y_detail: Var,
}

fn pool_and_expand(g: &mut Graph, f: Var) -> (Var, Var) {
    let n = g.value(f).rows();
    let pooled = g.max_rows(f);
    let tiled = g.broadcast_rows(pooled, n);
    (pooled, g.concat_cols(&[f, tiled]))
}

pub fn extensive_branch(g: &mut Graph, p: &Bound, x: Var) -> BranchTrace {
    let f11 = mlp(g, p, "enc.ext.l1", x, 2);
    let (pooled1, expanded) = pool_and_expand(g, f11);
    let f12 = mlp(g, p, "enc.ext.l2", expanded, 2);
    let pooled2 = g.max_rows(f12);
    let output = g.concat_cols(&[pooled1, pooled2]);
    BranchTrace { point_features: f11, pooled1, expanded, pooled2, output }
}

pub fn salient_branch(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: Var) -> BranchTrace {
    let attention = cfg.flags.salient_attention;
    let mut f21 = mlp(g, p, "enc.sal.l1", x, 2);
    if attention {
        f21 = offset_attention(g, p, "enc.sal.oa", f21);
    }
    let (pooled1, expanded) = pool_and_expand(g, f21);
    let mut hid = linear(g, p, "enc.sal.l2.0", expanded);
    hid = g.relu(hid);
    if attention {
        hid = cascaded_external_attention(g, p, "enc.sal.ea", hid, cfg.heads);
    }
    let f22 = linear(g, p, "enc.sal.l2.1", hid);
    let pooled2 = g.max_rows(f22);
    let output = g.concat_cols(&[pooled1, pooled2]);
    BranchTrace { point_features: f21, pooled1, expanded, pooled2, output }
}

/// `f_coarse` for the `n x 3` input `x`.
pub fn encode_graph(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<EncoderActivations> {
    if g.value(x).rows() == 0 {
        return Err(FscError::EmptyInput);
    }
    let fl = &cfg.flags;
    let extensive = fl.extensive_branch.then(|| extensive_branch(g, p, x));
    let salient = fl.salient_branch.then(|| salient_branch(g, p, cfg, x));
    let f_coarse = match (extensive, salient) {
        (Some(e), Some(s)) => g.concat_cols(&[e.output, s.output]),
        (Some(b), None) | (None, Some(b)) => linear(g, p, "enc.proj", b.output),
        (None, None) => return Err(FscError::Config("at least one encoder branch must be enabled".into())),
    };
    Ok(EncoderActivations { extensive, salient, f_coarse })
}

/// Seven fully connected layers; the input is concatenated onto the inputs
/// of layers three and five and added back to the output.
pub fn revise_feature(g: &mut Graph, p: &Bound, f: Var) -> Var {
    let mut h = f;
    for i in 0..7 {
        if i == 2 || i == 4 {
            h = g.concat_cols(&[h, f]);
        }
        h = linear(g, p, &format!("rf.{i}"), h);
        if i < 6 {
            h = g.relu(h);
        }
    }
    g.add(f, h)
}

pub fn coarse_decode(g: &mut Graph, p: &Bound, cfg: &ModelConfig, f: Var) -> Var {
    let y = mlp(g, p, "dec", f, 3);
    g.reshape(y, cfg.n_coarse, 3)
}

/// Per-point offsets from a shared three-layer MLP.
pub fn revise_points(g: &mut Graph, p: &Bound, y: Var) -> Var {
    let off = mlp(g, p, "rp", y, 3);
    g.add(y, off)
}

/// Folding-grid coordinates, `grid²` rows of `(u, v)` in `[-scale, scale]²`.
pub fn grid_patch(grid: usize, scale: f64) -> Vec<[f64; 2]> {
    let coord = |i: usize| if grid == 1 { 0.0 } else { -scale + 2.0 * scale * i as f64 / (grid - 1) as f64 };
    (0..grid * grid).map(|j| [coord(j / grid), coord(j % grid)]).collect()
}

pub fn detail_decode(g: &mut Graph, p: &Bound, cfg: &ModelConfig, y_fine: Var, f_fine: Var) -> Var {
    let n = g.value(y_fine).rows();
    let fl = &cfg.flags;
    let global = g.broadcast_rows(f_fine, n);
    let mut parts = vec![y_fine];
    if fl.pointnetpp_fusion {
        let k = cfg.ball_k;
        let groups: Arc<[usize]> = ball_query(g.value(y_fine), cfg.ball_radius, k).into();
        let members = g.gather_rows(y_fine, groups);
        let centers = g.gather_rows(y_fine, repeat_index(n, k));
        let rel = g.sub(members, centers);
        let h = mlp(g, p, "gd.sa", rel, 2);
        let h = g.relu(h);
        parts.push(g.segment_max(h, k));
    }
    parts.push(global);
    let fused = g.concat_cols(&parts);
    let mut h = linear(g, p, "gd.fuse", fused);
    h = g.relu(h);
    if fl.transformer_fusion {
        h = external_attention(g, p, "gd.ea", h, cfg.heads);
    }

    let gg = cfg.grid * cfg.grid;
    let rep = repeat_index(n, gg);
    let h_rep = g.gather_rows(h, rep.clone());
    let patch = grid_patch(cfg.grid, cfg.grid_scale);
    let grid_data: Vec<f64> = (0..n).flat_map(|_| patch.iter().flatten().copied()).collect();
    let grid = g.constant(Tensor::from_vec(n * gg, 2, grid_data).expect("grid shape"));
    let in1 = g.concat_cols(&[h_rep, grid]);
    let fold1 = mlp(g, p, "gd.fold1", in1, 3);
    let in2 = g.concat_cols(&[h_rep, fold1]);
    let offset = mlp(g, p, "gd.fold2", in2, 3);
    let mut base = g.gather_rows(y_fine, rep);
    if cfg.grid > 1 {
        // children start spread over the patch, lifted into the xy-plane
        let lifted: Vec<f64> = (0..n).flat_map(|_| patch.iter().flat_map(|&[u, v]| [u, v, 0.0])).collect();
        let lifted = g.constant(Tensor::from_vec(n * gg, 3, lifted).expect("patch shape"));
        base = g.add(base, lifted);
    }
    g.add(base, offset)
}

/// The whole generator on an already bound parameter set.
pub fn forward(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<ForwardTrace> {
    let encoder = encode_graph(g, p, cfg, x)?;
    let f_coarse = encoder.f_coarse;
    let f_fine = if cfg.flags.feature_revision { revise_feature(g, p, f_coarse) } else { f_coarse };
    let y_coarse = coarse_decode(g, p, cfg, f_fine);
    let y_fine = if cfg.flags.point_revision { revise_points(g, p, y_coarse) } else { y_coarse };
    let y_detail = detail_decode(g, p, cfg, y_fine, f_fine);
    Ok(ForwardTrace { input: x, encoder, f_coarse, f_fine, y_coarse, y_fine, y_detail })
}

pub fn cloud_tensor(cloud: &PointCloud) -> Tensor {
    let data = cloud.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    Tensor::from_vec(cloud.len(), 3, data).expect("n x 3")
}

pub fn tensor_cloud(t: &Tensor) -> Result<PointCloud> {
    if t.cols() != 3 {
        return Err(FscError::SizeMismatch { left: t.cols(), right: 3 });
    }
    PointCloud::new((0..t.rows()).map(|r| Vec3::from_row_slice(t.row(r))).collect())
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub f_coarse: Vec<f64>,
    pub f_fine: Vec<f64>,
    pub y_coarse: PointCloud,
    pub y_fine: PointCloud,
    pub y_detail: PointCloud,
}

/// Configuration plus generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = generator_layout(&config).init(seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        params.check_layout(&generator_layout(&config))?;
        if let Some((name, _)) = params.iter().find(|(_, t)| !t.is_finite()) {
            return Err(FscError::Checkpoint(format!("tensor {name} has non-finite values")));
        }
        Ok(Self { config, params })
    }

    fn check_input(&self, cloud: &PointCloud) -> Result<()> {
        let n = cloud.len();
        if n == 0 {
            return Err(FscError::EmptyInput);
        }
        if n < self.config.n_in_min || n > self.config.n_in_max {
            return Err(FscError::InvalidValue(format!(
                "input has {n} points, model accepts {}..={}",
                self.config.n_in_min, self.config.n_in_max
            )));
        }
        Ok(())
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        self.check_input(cloud)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(cloud_tensor(cloud));
        let e = encode_graph(&mut g, &p, &self.config, x)?;
        Ok(g.value(e.f_coarse).data().to_vec())
    }

    pub fn complete(&self, cloud: &PointCloud) -> Result<Completion> {
        self.check_input(cloud)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(cloud_tensor(cloud));
        let t = forward(&mut g, &p, &self.config, x)?;
        let out = Completion {
            f_coarse: g.value(t.f_coarse).data().to_vec(),
            f_fine: g.value(t.f_fine).data().to_vec(),
            y_coarse: tensor_cloud(g.value(t.y_coarse))?,
            y_fine: tensor_cloud(g.value(t.y_fine))?,
            y_detail: tensor_cloud(g.value(t.y_detail))?,
        };
        if !out.y_detail.points().iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(FscError::NonFiniteLoss("completion produced non-finite points".into()));
        }
        Ok(out)
    }
}

pub fn encode(model: &Model, cloud: &PointCloud) -> Result<Vec<f64>> {
    model.encode(cloud)
}

pub fn complete(model: &Model, cloud: &PointCloud) -> Result<Completion> {
    model.complete(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_patch_corners() {
        assert_eq!(grid_patch(1, 0.05), vec![[0.0, 0.0]]);
        let p = grid_patch(2, 0.05);
        assert_eq!(p, vec![[-0.05, -0.05], [-0.05, 0.05], [0.05, -0.05], [0.05, 0.05]]);
    }
}
