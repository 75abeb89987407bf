use serde::{Deserialize, Serialize};

use super::layers::{linear, LEAKY_SLOPE};
use super::params::{Bound, Layout};
use super::ModelConfig;
use crate::autodiff::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticKind {
    /// Scores a `1 x (d1 + d2)` feature vector.
    Feature,
    /// Scores an `n x 3` point set.
    Point,
}

impl CriticKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticKind::Feature => "feature",
            CriticKind::Point => "point",
        }
    }

    /// Whether the revision stage this critic trains is enabled.
    pub fn enabled(self, cfg: &ModelConfig) -> bool {
        match self {
            CriticKind::Feature => cfg.flags.feature_revision,
            CriticKind::Point => cfg.flags.point_revision,
        }
    }
}

/// Empty when the matching revision stage is disabled.
pub fn critic_layout(cfg: &ModelConfig, kind: CriticKind) -> Layout {
    let mut l = Layout::new();
    if !kind.enabled(cfg) {
        return l;
    }
    let hc = cfg.critic_hidden;
    match kind {
        CriticKind::Feature => {
            let d = cfg.feature_width();
            let squeeze = (d / 4).max(1);
            l.linear("fc.se.0", d, squeeze, false);
            l.linear("fc.se.1", squeeze, d, false);
            l.linear("fc.0", d, hc, false);
            l.linear("fc.1", hc, hc, false);
            l.linear("fc.2", hc, (hc / 2).max(1), false);
            l.linear("fc.3", (hc / 2).max(1), 1, false);
        }
        CriticKind::Point => {
            l.linear("pc.0", 3, hc, false);
            l.linear("pc.1", hc, hc, false);
            l.linear("pc.2", hc, hc, false);
            l.linear("pc.3", hc, 1, false);
        }
    }
    l
}

/// `1 x 1` critic score.
///
/// The feature critic gates its input channels with a sigmoid
/// squeeze-excitation before four leaky-ReLU layers. The point critic runs
/// a shared two-layer MLP per point, max-pools, then two dense layers.
pub fn critic_forward(g: &mut Graph, p: &Bound, kind: CriticKind, x: Var) -> Var {
    match kind {
        CriticKind::Feature => {
            let s = linear(g, p, "fc.se.0", x);
            let s = g.relu(s);
            let s = linear(g, p, "fc.se.1", s);
            let gate = g.sigmoid(s);
            let mut h = g.mul(x, gate);
            for i in 0..3 {
                h = linear(g, p, &format!("fc.{i}"), h);
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
            linear(g, p, "fc.3", h)
        }
        CriticKind::Point => {
            let mut h = x;
            for i in 0..2 {
                h = linear(g, p, &format!("pc.{i}"), h);
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
            let pooled = g.max_rows(h);
            let h = linear(g, p, "pc.2", pooled);
            let h = g.leaky_relu(h, LEAKY_SLOPE);
            linear(g, p, "pc.3", h)
        }
    }
}
