//! Building blocks shared by the generator and the critics.

use std::sync::Arc;

use super::params::{Bound, Init, Layout};
use crate::autodiff::{Graph, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const MEMORY_STD: f64 = 0.02;
const EA_EPS: f64 = 1e-9;

/// `x W + b` using `{prefix}.w` and `{prefix}.b`.
pub fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Var {
    let w = p.var(&format!("{prefix}.w"));
    let b = p.var(&format!("{prefix}.b"));
    g.linear(x, w, Some(b))
}

/// `layers` linear maps `{prefix}.0..` with ReLU between them; the output
/// of the last one is left linear.
pub fn mlp(g: &mut Graph, p: &Bound, prefix: &str, x: Var, layers: usize) -> Var {
    let mut h = x;
    for i in 0..layers {
        h = linear(g, p, &format!("{prefix}.{i}"), h);
        if i + 1 < layers {
            h = g.relu(h);
        }
    }
    h
}

pub fn offset_attention_layout(l: &mut Layout, prefix: &str, width: usize) {
    let qk = (width / 4).max(1);
    // query and key projections share one matrix
    l.push(format!("{prefix}.qk"), width, qk, Init::FanIn(width));
    l.linear(&format!("{prefix}.v"), width, width, false);
    l.linear(&format!("{prefix}.t"), width, width, false);
}

/// Offset attention on an `n x c` feature matrix.
///
/// `A = softmax(Q Kᵀ)` over keys, then every key column is L1-normalized
/// over the queries; output `F + relu((F - Aᵀ V) W_t + b_t)`.
pub fn offset_attention(g: &mut Graph, p: &Bound, prefix: &str, f: Var) -> Var {
    let wqk = p.var(&format!("{prefix}.qk"));
    let q = g.matmul(f, wqk);
    let qt = g.transpose(q);
    let energy = g.matmul(q, qt);
    let a = g.softmax_rows(energy);
    let a = normalize_cols_exact(g, a);
    let v = linear(g, p, &format!("{prefix}.v"), f);
    let at = g.transpose(a);
    let mixed = g.matmul(at, v);
    let offset = g.sub(f, mixed);
    let t = linear(g, p, &format!("{prefix}.t"), offset);
    let t = g.relu(t);
    g.add(f, t)
}

/// Column L1 normalization without an additive epsilon, so a column that
/// already sums to one is left exactly unchanged. Sums below `1e-300` are
/// lifted by a constant to avoid dividing by zero.
fn normalize_cols_exact(g: &mut Graph, a: Var) -> Var {
    let rows = g.value(a).rows();
    let s = g.sum_rows(a);
    let lift = g.value(s).map(|v| if v < 1e-300 { 1e-300 - v } else { 0.0 });
    let s = if lift.data().iter().any(|&v| v != 0.0) {
        let c = g.constant(lift);
        g.add(s, c)
    } else {
        s
    };
    let inv = g.recip(s);
    let inv = g.broadcast_rows(inv, rows);
    g.mul(a, inv)
}

pub fn external_attention_layout(l: &mut Layout, prefix: &str, width: usize, heads: usize, memory: usize) {
    let dh = width / heads;
    for h in 0..heads {
        l.push(format!("{prefix}.h{h}.mk"), memory, dh, Init::Normal(MEMORY_STD));
        l.push(format!("{prefix}.h{h}.mv"), memory, dh, Init::Normal(MEMORY_STD));
    }
}

/// One multi-head external-attention block with residual:
/// per head `A = softmax(F_h M_kᵀ)` over points, then L1 over memory slots,
/// `out_h = A M_v`.
pub fn external_attention(g: &mut Graph, p: &Bound, prefix: &str, f: Var, heads: usize) -> Var {
    let width = g.value(f).cols();
    let dh = width / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let fh = g.slice_cols(f, h * dh, dh);
        let mk = p.var(&format!("{prefix}.h{h}.mk"));
        let mv = p.var(&format!("{prefix}.h{h}.mv"));
        let mkt = g.transpose(mk);
        let logits = g.matmul(fh, mkt);
        let a = g.softmax_cols(logits);
        let a = g.l1_normalize_rows(a, EA_EPS);
        outs.push(g.matmul(a, mv));
    }
    let out = g.concat_cols(&outs);
    g.add(f, out)
}

/// Two stacked external-attention blocks `{prefix}0` and `{prefix}1`.
pub fn cascaded_external_attention(g: &mut Graph, p: &Bound, prefix: &str, f: Var, heads: usize) -> Var {
    let h = external_attention(g, p, &format!("{prefix}0"), f, heads);
    external_attention(g, p, &format!("{prefix}1"), h, heads)
}

/// Ball-query grouping on an `n x 3` tensor: for every point, up to `k`
/// neighbors within `radius` ordered by distance then index, padded by
/// repeating the nearest one. The point itself is always a member.
/// Returns `n * k` row indices, group by group.
pub fn ball_query(points: &Tensor, radius: f64, k: usize) -> Vec<usize> {
    let n = points.rows();
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let pi = points.row(i);
        cand.clear();
        for j in 0..n {
            let pj = points.row(j);
            let d2 = (0..3).map(|c| (pi[c] - pj[c]).powi(2)).sum::<f64>();
            if d2 <= r2 || j == i {
                cand.push((if j == i { 0.0 } else { d2 }, j));
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let first = cand[0].1;
        out.extend(cand.iter().take(k).map(|&(_, j)| j));
        out.extend(std::iter::repeat_n(first, k.saturating_sub(cand.len())));
    }
    out
}

/// `[i; times]` for every row `i < n`, as a gather index.
pub fn repeat_index(n: usize, times: usize) -> Arc<[usize]> {
    (0..n).flat_map(|i| std::iter::repeat_n(i, times)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_query_includes_self_and_pads() {
        let pts = Tensor::from_vec(3, 3, vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
        let idx = ball_query(&pts, 0.2, 3);
        assert_eq!(idx, vec![0, 1, 0, 1, 0, 1, 2, 2, 2]);
    }
}
