//! The graph-matching network: local feature extraction, transformer edge
//! generation, intra/cross-graph convolution, the affinity + instance norm +
//! Sinkhorn correspondence head, and the focal loss it trains under.

mod forward;
mod layers;
mod weights;

pub use forward::{rgm_forward, NetVars, RgmForwardOut};
pub use layers::{
    affinity, col_normalize, cross_graph_conv, f_theta, focal_loss, instance_norm, layer_norm,
    intra_graph_conv, local_descriptor, sinkhorn, soft_edges, transformer_embed,
    COL_NORM_FLOOR, INSTANCE_NORM_EPS, LAYER_NORM_EPS, PROB_EPS, SINKHORN_EXIT_TOL, SINKHORN_SCORE_CLAMP,
};
pub use weights::RgmWeights;

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How the soft adjacency over each cloud is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Row-softmax of embedding inner products (the full model).
    Learned,
    /// Fully connected graph with uniform rows.
    Full,
    /// Binary connectivity within [`NetConfig::edge_radius`], row-normalized.
    Radius,
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeMode::Learned => "learned",
            EdgeMode::Full => "full",
            EdgeMode::Radius => "radius",
        })
    }
}

impl FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(EdgeMode::Learned),
            "full" => Ok(EdgeMode::Full),
            "radius" => Ok(EdgeMode::Radius),
            other => Err(Error::Parameter(format!(
                "unknown edge mode `{other}` (expected learned, full or radius)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
///
/// Defaults follow the reference configuration (K=20 neighbors, V=1024
/// features, L=2 blocks, 4 attention heads); desk-scale runs shrink
/// `v_dim` and friends through the TOML config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Neighborhood size of the local descriptor.
    pub k: usize,
    /// Node feature width V.
    pub v_dim: usize,
    /// Number of matching blocks L (independent weights each).
    pub l_blocks: usize,
    /// Attention heads; must divide `v_dim`.
    pub heads: usize,
    /// Stacked encoder-decoder layers in the edge generator.
    pub transformer_depth: usize,
    /// Feed-forward width inside the transformer; 0 means `v_dim`.
    pub ffn_dim: usize,
    /// Shared-MLP stage widths of the local extractor.
    pub mlp_widths: Vec<usize>,
    /// Graph feature width Q after intra-graph convolution; 0 means `v_dim`.
    pub graph_dim: usize,
    /// Sinkhorn half-steps (a row or a column normalization each).
    pub sinkhorn_iters: usize,
    pub edge_mode: EdgeMode,
    /// Connection radius for [`EdgeMode::Radius`].
    pub edge_radius: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            k: 20,
            v_dim: 1024,
            l_blocks: 2,
            heads: 4,
            transformer_depth: 1,
            ffn_dim: 0,
            mlp_widths: vec![64, 128, 256],
            graph_dim: 0,
            sinkhorn_iters: 20,
            edge_mode: EdgeMode::Learned,
            edge_radius: 0.2,
        }
    }
}

impl NetConfig {
    /// Effective transformer feed-forward width.
    pub fn ffn(&self) -> usize {
        if self.ffn_dim == 0 {
            self.v_dim
        } else {
            self.ffn_dim
        }
    }

    /// Effective graph feature width Q.
    pub fn q(&self) -> usize {
        if self.graph_dim == 0 {
            self.v_dim
        } else {
            self.graph_dim
        }
    }

    /// Per-head key/query/value width.
    pub fn head_dim(&self) -> usize {
        self.v_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| -> Result<()> { Err(Error::Parameter(msg)) };
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.v_dim == 0 {
            return bad("v_dim must be >= 1".into());
        }
        if self.l_blocks == 0 {
            return bad("l_blocks must be >= 1".into());
        }
        if self.heads == 0 || self.v_dim % self.heads != 0 {
            return bad(format!(
                "heads must divide v_dim, got heads={} v_dim={}",
                self.heads, self.v_dim
            ));
        }
        if self.transformer_depth == 0 {
            return bad("transformer_depth must be >= 1".into());
        }
        if self.mlp_widths.is_empty() {
            return bad("mlp_widths must not be empty".into());
        }
        if self.mlp_widths.iter().any(|&w| w == 0) {
            return bad("mlp_widths entries must be >= 1".into());
        }
        if self.sinkhorn_iters == 0 {
            return bad("sinkhorn_iters must be >= 1".into());
        }
        if !(self.edge_radius > 0.0) {
            return bad(format!(
                "edge_radius must be > 0, got {}",
                self.edge_radius
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = NetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.k, 20);
        assert_eq!(cfg.v_dim, 1024);
        assert_eq!(cfg.l_blocks, 2);
        assert_eq!(cfg.heads, 4);
        assert_eq!(cfg.head_dim(), 256);
        assert_eq!(cfg.ffn(), 1024);
        assert_eq!(cfg.q(), 1024);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = NetConfig::default();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = NetConfig::default();
        cfg.mlp_widths.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = NetConfig::default();
        cfg.sinkhorn_iters = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = NetConfig::default();
        cfg.edge_radius = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn edge_mode_names_roundtrip() {
        for mode in [EdgeMode::Learned, EdgeMode::Full, EdgeMode::Radius] {
            assert_eq!(mode.to_string().parse::<EdgeMode>().unwrap(), mode);
        }
        assert!("dense".parse::<EdgeMode>().is_err());
    }
}
