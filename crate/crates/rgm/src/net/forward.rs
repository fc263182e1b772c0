//! Full forward pass of the matching network.

use super::layers::{
    affinity, col_normalize, cross_graph_conv, f_theta, instance_norm, intra_graph_conv,
    local_descriptor, sinkhorn, soft_edges, transformer_embed,
};
use super::NetConfig;
use crate::diff::{Params, Tape, TapeBinding, Tensor, Var};
use crate::geom::PointCloud;
use crate::scalar::Real;
use crate::{Error, Result};

/// Name-to-variable lookup for one tape, with an optional single override
/// so gradient checks can substitute their own handle for one weight.
pub struct NetVars<'a, T: Real> {
    params: &'a Params<T>,
    binding: &'a TapeBinding,
    substitute: Option<(String, Var)>,
}

impl<'a, T: Real> NetVars<'a, T> {
    pub fn new(params: &'a Params<T>, binding: &'a TapeBinding) -> Self {
        NetVars {
            params,
            binding,
            substitute: None,
        }
    }

    /// Like [`NetVars::new`], but `name` resolves to `var` instead of the
    /// bound parameter.
    pub fn with_override(
        params: &'a Params<T>,
        binding: &'a TapeBinding,
        name: &str,
        var: Var,
    ) -> Self {
        NetVars {
            params,
            binding,
            substitute: Some((name.to_string(), var)),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        if let Some((n, v)) = &self.substitute {
            if n == name {
                return Ok(*v);
            }
        }
        self.params.var(self.binding, name)
    }
}

/// Output of [`rgm_forward`]: the final soft correspondence (slack row and
/// column included) plus the soft edge matrices of every block for
/// inspection.
pub struct RgmForwardOut<T: Real> {
    pub corr: Var,
    pub edge_x: Vec<Tensor<T>>,
    pub edge_y: Vec<Tensor<T>>,
}

/// Runs the whole network on a cloud pair and returns the last block's
/// soft correspondence, shape `(|X|+1) x (|Y|+1)`.
///
/// Both clouds pass through the same weights at every stage. Each block
/// runs the transformer edge generator, intra-graph convolution, the
/// affinity/instance-norm/Sinkhorn stack, and a cross-graph feature
/// update that feeds the next block.
pub fn rgm_forward<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    cfg: &NetConfig,
) -> Result<RgmForwardOut<T>> {
    cfg.validate()?;
    for (label, cloud) in [("X", x), ("Y", y)] {
        if cloud.len() <= cfg.k {
            return Err(Error::Parameter(format!(
                "cloud {label} has {} points but k = {} neighbors are required",
                cloud.len(),
                cfg.k
            )));
        }
    }

    let desc_x = local_descriptor(x, cfg.k)?;
    let desc_y = local_descriptor(y, cfg.k)?;
    let dx = tape.leaf(desc_x);
    let dy = tape.leaf(desc_y);
    let mut fx = f_theta(tape, vars, dx, x.len(), cfg)?;
    let mut fy = f_theta(tape, vars, dy, y.len(), cfg)?;

    let mut edge_x = Vec::with_capacity(cfg.l_blocks);
    let mut edge_y = Vec::with_capacity(cfg.l_blocks);
    let mut corr = None;
    for l in 0..cfg.l_blocks {
        let (tx, ty) = transformer_embed(tape, vars, fx, fy, l, cfg)?;
        let ex = soft_edges(tape, tx, x, cfg.edge_mode, cfg.edge_radius)?;
        let ey = soft_edges(tape, ty, y, cfg.edge_mode, cfg.edge_radius)?;
        edge_x.push(tape.value(ex).clone());
        edge_y.push(tape.value(ey).clone());

        let bx = col_normalize(tape, ex)?;
        let by = col_normalize(tape, ey)?;
        let fx_corr = intra_graph_conv(tape, vars, l, fx, bx)?;
        let fy_corr = intra_graph_conv(tape, vars, l, fy, by)?;

        let w = vars.var(&format!("block{l}/affinity/w"))?;
        let a = affinity(tape, fx_corr, fy_corr, w)?;
        let a = instance_norm(tape, vars, l, a)?;
        let c = sinkhorn(tape, a, cfg.sinkhorn_iters, true)?;
        corr = Some(c);

        // The last block's refreshed features feed nothing, so skip the
        // cross-graph update there; its weights stay at init either way.
        if l + 1 < cfg.l_blocks {
            let (nx, ny) = cross_graph_conv(tape, vars, l, fx_corr, fy_corr, c)?;
            fx = nx;
            fy = ny;
        }
    }

    Ok(RgmForwardOut {
        corr: corr.expect("l_blocks >= 1 is enforced by validate"),
        edge_x,
        edge_y,
    })
}
