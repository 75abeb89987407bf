//! The completion network: dual-branch encoder, feature and point revision,
//! coarse decoder, folding detail decoder and the two WGAN critics.
//!
//! Every stage is expressed on an [`autodiff::Graph`](crate::autodiff::Graph)
//! so gradients, including the second-order ones needed by the gradient
//! penalty, come from the same code path as inference.

pub mod checkpoint;
pub mod critic;
pub mod layers;
pub mod network;
pub mod params;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FscError, Result};

pub use critic::{critic_forward, critic_layout, CriticKind};
pub use network::{complete, encode, forward, generator_layout, Completion, ForwardTrace, Model};
pub use params::{Bound, Init, Layout, ParamSet, ParamSpec};

/// Which optional stages are present. Disabling a stage removes its
/// parameters from the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub extensive_branch: bool,
    pub salient_branch: bool,
    /// Offset attention and cascaded external attention inside the salient
    /// branch. Off, the salient branch has the extensive topology.
    pub salient_attention: bool,
    pub feature_revision: bool,
    pub point_revision: bool,
    /// Ball-query local features in the detail decoder.
    pub pointnetpp_fusion: bool,
    /// External-attention block over the fused decoder features.
    pub transformer_fusion: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            extensive_branch: true,
            salient_branch: true,
            salient_attention: true,
            feature_revision: true,
            point_revision: true,
            pointnetpp_fusion: true,
            transformer_fusion: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Full,
}

impl FromStr for Preset {
    type Err = FscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "full" => Ok(Preset::Full),
            _ => Err(FscError::Config(format!("unknown preset {s:?} (expected tiny or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_in_min: usize,
    pub n_in_max: usize,
    pub n_coarse: usize,
    /// Side of the folding grid; each coarse point becomes `grid²` points.
    pub grid: usize,
    pub grid_scale: f64,
    pub d1: usize,
    pub d2: usize,
    pub heads: usize,
    /// External-attention memory slots.
    pub memory: usize,
    /// Hidden width of the encoder's shared MLPs.
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub revision_hidden: usize,
    pub local_hidden: usize,
    pub fold_hidden: usize,
    pub critic_hidden: usize,
    pub ball_radius: f64,
    pub ball_k: usize,
    pub flags: AblationFlags,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self {
                n_in_min: 1,
                n_in_max: 16384,
                n_coarse: 64,
                grid: 2,
                grid_scale: 0.05,
                d1: 64,
                d2: 64,
                heads: 4,
                memory: 64,
                hidden: 64,
                decoder_hidden: 128,
                revision_hidden: 64,
                local_hidden: 32,
                fold_hidden: 64,
                critic_hidden: 64,
                ball_radius: 0.2,
                ball_k: 16,
                flags: AblationFlags::default(),
            },
            Preset::Full => Self {
                n_in_min: 1,
                n_in_max: 16384,
                n_coarse: 512,
                grid: 2,
                grid_scale: 0.05,
                d1: 512,
                d2: 512,
                heads: 4,
                memory: 64,
                hidden: 256,
                decoder_hidden: 1024,
                revision_hidden: 512,
                local_hidden: 128,
                fold_hidden: 256,
                critic_hidden: 256,
                ball_radius: 0.2,
                ball_k: 16,
                flags: AblationFlags::default(),
            },
        }
    }

    pub fn tiny() -> Self {
        Self::preset(Preset::Tiny)
    }

    /// Number of output points, `n_coarse * grid²`.
    pub fn m_detail(&self) -> usize {
        self.n_coarse * self.grid * self.grid
    }

    /// Width of `f_coarse` and `f_fine`.
    pub fn feature_width(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("n_coarse", self.n_coarse),
            ("grid", self.grid),
            ("heads", self.heads),
            ("memory", self.memory),
            ("hidden", self.hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("revision_hidden", self.revision_hidden),
            ("local_hidden", self.local_hidden),
            ("fold_hidden", self.fold_hidden),
            ("critic_hidden", self.critic_hidden),
            ("ball_k", self.ball_k),
            ("n_in_min", self.n_in_min),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(FscError::Config(format!("{name} must be positive")));
        }
        if self.d1 < 2 || self.d2 < 2 || self.d1 % 2 != 0 || self.d2 % 2 != 0 {
            return Err(FscError::Config(format!("d1 and d2 must be even and >= 2 (got {}, {})", self.d1, self.d2)));
        }
        if self.n_in_min > self.n_in_max {
            return Err(FscError::Config(format!("n_in range {}..={} is empty", self.n_in_min, self.n_in_max)));
        }
        if !self.flags.extensive_branch && !self.flags.salient_branch {
            return Err(FscError::Config("at least one encoder branch must be enabled".into()));
        }
        if self.flags.salient_branch && self.flags.salient_attention {
            if self.hidden % self.heads != 0 {
                return Err(FscError::Config(format!("hidden {} not divisible by heads {}", self.hidden, self.heads)));
            }
            if self.d2 / 2 < 4 {
                return Err(FscError::Config("d2 must be at least 8 for offset attention".into()));
            }
        }
        if self.flags.transformer_fusion && self.fold_hidden % self.heads != 0 {
            return Err(FscError::Config(format!(
                "fold_hidden {} not divisible by heads {}",
                self.fold_hidden, self.heads
            )));
        }
        if !(self.ball_radius > 0.0) || !(self.grid_scale >= 0.0) {
            return Err(FscError::Config("ball_radius must be positive and grid_scale non-negative".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}
