//! Network layers expressed as tape operations.
//!
//! Every function takes the tape plus variable handles and appends the
//! layer's computation, so gradients for all of them come from the same
//! reverse pass. Weight tensors are looked up by name through [`NetVars`].

use super::forward::NetVars;
use super::{EdgeMode, NetConfig};
use crate::diff::{Tape, Tensor, Var};
use crate::geom::{knn_all, PointCloud};
use crate::scalar::{cast, Real};
use crate::{Error, Result};

/// Epsilon inside the instance-norm denominator.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Probability clamp for logs inside the focal loss.
pub const PROB_EPS: f64 = 1e-12;

/// Symmetric clamp on scores before exponentiation in Sinkhorn.
pub const SINKHORN_SCORE_CLAMP: f64 = 50.0;

/// Row-sum deviation below which Sinkhorn stops early after a full round.
pub const SINKHORN_EXIT_TOL: f64 = 1e-9;

/// Per-point neighborhood descriptors: for each point, K rows of the
/// 6-vector `(x_i, x_n)` over its K nearest neighbors, stacked into an
/// `(N*K) x 6` matrix (point i owns rows `i*K .. (i+1)*K`).
pub fn local_descriptor<T: Real>(cloud: &PointCloud<T>, k: usize) -> Result<Tensor<T>> {
    let neighbors = knn_all(cloud, k)?;
    let n = cloud.len();
    let mut data = Vec::with_capacity(n * k * 6);
    for (i, list) in neighbors.iter().enumerate() {
        let p = cloud.points[i];
        for &j in list {
            let q = cloud.points[j];
            data.extend_from_slice(&[p.x(), p.y(), p.z(), q.x(), q.y(), q.z()]);
        }
    }
    Tensor::new(n * k, 6, data)
}

fn linear<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = vars.var(&format!("{prefix}/w"))?;
    let b = vars.var(&format!("{prefix}/b"))?;
    let h = tape.matmul(x, w)?;
    tape.add_row_vec(h, b)
}

/// Local feature extractor: shared per-neighbor MLP, per-point max-pool of
/// every stage, a global pooled vector, and a linear head to width V.
/// Invariant to the order of neighbor rows within each point's block.
pub fn f_theta<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    descriptors: Var,
    n_points: usize,
    cfg: &NetConfig,
) -> Result<Var> {
    let k = cfg.k;
    if tape.value(descriptors).rows() != n_points * k {
        return Err(Error::Parameter(format!(
            "descriptor rows {} do not match {n_points} points x k={k}",
            tape.value(descriptors).rows()
        )));
    }
    let groups: Vec<(usize, usize)> = (0..n_points).map(|i| (i * k, (i + 1) * k)).collect();

    let mut h = descriptors;
    let mut pooled = Vec::with_capacity(cfg.mlp_widths.len());
    for i in 0..cfg.mlp_widths.len() {
        h = linear(tape, vars, &format!("f_theta/mlp{i}"), h)?;
        h = tape.relu(h)?;
        pooled.push(tape.max_pool_rows(h, groups.clone())?);
    }

    let mut cat = pooled[0];
    for &p in &pooled[1..] {
        cat = tape.concat_cols(cat, p)?;
    }
    let global = tape.max_pool_rows(*pooled.last().unwrap(), vec![(0, n_points)])?;
    let global = tape.repeat_rows(global, n_points)?;
    let cat = tape.concat_cols(cat, global)?;
    linear(tape, vars, "f_theta/proj", cat)
}

/// Multi-head attention: queries from `q_in`, keys and values from `kv_in`,
/// scores scaled by `1/sqrt(head_dim)`, heads concatenated then mixed.
fn attention<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    cfg: &NetConfig,
) -> Result<Var> {
    let scale = cast::<T>(1.0 / (cfg.head_dim() as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let wq = vars.var(&format!("{prefix}/h{h}/wq"))?;
        let wk = vars.var(&format!("{prefix}/h{h}/wk"))?;
        let wv = vars.var(&format!("{prefix}/h{h}/wv"))?;
        let q = tape.matmul(q_in, wq)?;
        let key = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let kt = tape.transpose(key)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax_rows(s)?;
        heads.push(tape.matmul(a, v)?);
    }
    let mut cat = heads[0];
    for &h in &heads[1..] {
        cat = tape.concat_cols(cat, h)?;
    }
    let wo = vars.var(&format!("{prefix}/wo"))?;
    tape.matmul(cat, wo)
}

fn feed_forward<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let h = linear(tape, vars, &format!("{prefix}/ffn1"), x)?;
    let h = tape.relu(h)?;
    linear(tape, vars, &format!("{prefix}/ffn2"), h)
}

/// Epsilon inside the layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization without an affine part: every feature row
/// is standardized to mean 0, variance 1. Keeps the residual stream at unit
/// scale so the stacked attention blocks stay trainable.
pub fn layer_norm<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let width = tape.value(x).cols();
    let inv = cast::<T>(1.0 / width as f64);
    let mu = tape.row_sum(x)?;
    let mu = tape.scale(mu, inv)?;
    let mu = tape.transpose(mu)?;
    let neg_mu = tape.scale(mu, -T::one())?;
    let xt = tape.transpose(x)?;
    let centered = tape.add_row_vec(xt, neg_mu)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.col_sum(sq)?;
    let var = tape.scale(var, inv)?;
    let var = tape.add_const(var, cast(LAYER_NORM_EPS))?;
    let std = tape.sqrt(var)?;
    let normed = tape.div_row_vec(centered, std)?;
    tape.transpose(normed)
}

/// Edge-generator embedding: a self-attention encoder over each cloud,
/// then a co-attention decoder where each cloud's queries attend to the
/// other cloud, all with residual connections and weights shared between
/// the clouds.
pub fn transformer_embed<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    fx: Var,
    fy: Var,
    block: usize,
    cfg: &NetConfig,
) -> Result<(Var, Var)> {
    let (wx, wy) = (tape.value(fx).cols(), tape.value(fy).cols());
    if wx != wy || wx != cfg.v_dim {
        return Err(Error::Parameter(format!(
            "transformer inputs must both have width {}, got {wx} and {wy}",
            cfg.v_dim
        )));
    }
    let (mut x, mut y) = (fx, fy);
    for d in 0..cfg.transformer_depth {
        let enc = format!("block{block}/xfmr{d}/enc");
        let sa_x = attention(tape, vars, &enc, x, x, cfg)?;
        let sa_y = attention(tape, vars, &enc, y, y, cfg)?;
        let hx = tape.add(x, sa_x)?;
        let hy = tape.add(y, sa_y)?;
        let hx = layer_norm(tape, hx)?;
        let hy = layer_norm(tape, hy)?;
        let ff_x = feed_forward(tape, vars, &enc, hx)?;
        let ff_y = feed_forward(tape, vars, &enc, hy)?;
        let hx = tape.add(hx, ff_x)?;
        let hy = tape.add(hy, ff_y)?;
        let hx = layer_norm(tape, hx)?;
        let hy = layer_norm(tape, hy)?;

        let dec = format!("block{block}/xfmr{d}/dec");
        let ca_x = attention(tape, vars, &dec, hx, hy, cfg)?;
        let ca_y = attention(tape, vars, &dec, hy, hx, cfg)?;
        let tx = tape.add(hx, ca_x)?;
        let ty = tape.add(hy, ca_y)?;
        let tx = layer_norm(tape, tx)?;
        let ty = layer_norm(tape, ty)?;
        let ff_x = feed_forward(tape, vars, &dec, tx)?;
        let ff_y = feed_forward(tape, vars, &dec, ty)?;
        let nx = tape.add(tx, ff_x)?;
        let ny = tape.add(ty, ff_y)?;
        x = layer_norm(tape, nx)?;
        y = layer_norm(tape, ny)?;
    }
    Ok((x, y))
}

/// Soft adjacency over one cloud. [`EdgeMode::Learned`] row-softmaxes the
/// embedding inner products; the ablation modes ignore the embedding and
/// build constant edges from connectivity alone.
pub fn soft_edges<T: Real>(
    tape: &mut Tape<T>,
    t: Var,
    cloud: &PointCloud<T>,
    mode: EdgeMode,
    radius: f64,
) -> Result<Var> {
    let n = tape.value(t).rows();
    if n != cloud.len() {
        return Err(Error::Parameter(format!(
            "embedding has {n} rows but the cloud has {} points",
            cloud.len()
        )));
    }
    match mode {
        EdgeMode::Learned => {
            let tt = tape.transpose(t)?;
            let s = tape.matmul(t, tt)?;
            tape.softmax_rows(s)
        }
        EdgeMode::Full => {
            let uniform = Tensor::full(n, n, cast::<T>(1.0 / n as f64));
            Ok(tape.leaf(uniform))
        }
        EdgeMode::Radius => {
            let mut e = Tensor::zeros(n, n);
            for i in 0..n {
                let mut row = vec![T::zero(); n];
                let mut count = 0usize;
                for (j, q) in cloud.points.iter().enumerate() {
                    if cloud.points[i].dist(q).to_f64().unwrap() <= radius {
                        row[j] = T::one();
                        count += 1;
                    }
                }
                let norm = cast::<T>(1.0 / count as f64);
                for (j, v) in row.iter().enumerate() {
                    e.set(i, j, *v * norm);
                }
            }
            Ok(tape.leaf(e))
        }
    }
}

/// Columns whose total mass falls below this floor are divided by the floor
/// itself. Row-softmax adjacencies routinely leave far-away columns with
/// sums around 1e-10 or less; dividing by those is finite but puts a
/// `-x/s^2` factor in the gradient that makes optimization hopelessly
/// stiff. The floor caps that factor while leaving columns with at least
/// 1% of a uniform column's mass exactly L1-normalized.
pub const COL_NORM_FLOOR: f64 = 1e-2;

/// Column-L1 normalization of a nonnegative adjacency, with the per-column
/// denominator clamped from below by [`COL_NORM_FLOOR`]. Zero columns stay
/// zero.
pub fn col_normalize<T: Real>(tape: &mut Tape<T>, e: Var) -> Result<Var> {
    let sums = tape.col_sum(e)?;
    let m = tape.value(sums).len();
    let floor = tape.leaf(Tensor::new(1, m, vec![cast::<T>(COL_NORM_FLOOR); m])?);
    let above = tape.sub(sums, floor)?;
    let above = tape.relu(above)?;
    let denom = tape.add(above, floor)?;
    tape.div_row_vec(e, denom)
}

/// Intra-graph convolution: `E_breve . f_adj(F) + f_self(F)` where both
/// maps are a fully-connected layer plus ReLU.
pub fn intra_graph_conv<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    block: usize,
    f: Var,
    e_breve: Var,
) -> Result<Var> {
    let adj = linear(tape, vars, &format!("block{block}/intra/adj"), f)?;
    let adj = tape.relu(adj)?;
    let own = linear(tape, vars, &format!("block{block}/intra/self"), f)?;
    let own = tape.relu(own)?;
    let mixed = tape.matmul(e_breve, adj)?;
    tape.add(mixed, own)
}

/// Bilinear affinity `A[i][j] = fx_i . W . fy_j`.
pub fn affinity<T: Real>(tape: &mut Tape<T>, fx: Var, fy: Var, w: Var) -> Result<Var> {
    let (q, (wr, wc)) = (tape.value(fx).cols(), tape.value(w).shape());
    if wr != wc || wr != q || tape.value(fy).cols() != q {
        return Err(Error::Parameter(format!(
            "affinity needs square W matching the feature width {q}, got {wr}x{wc} and fy width {}",
            tape.value(fy).cols()
        )));
    }
    let fw = tape.matmul(fx, w)?;
    let fyt = tape.transpose(fy)?;
    tape.matmul(fw, fyt)
}

/// Zero-mean unit-variance normalization over all entries (epsilon
/// [`INSTANCE_NORM_EPS`] in the denominator), without the learnable affine.
pub fn instance_norm_core<T: Real>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    if tape.value(a).len() < 2 {
        return Err(Error::Parameter(
            "instance norm needs at least 2 entries".into(),
        ));
    }
    let mean = tape.mean_all(a)?;
    let centered = tape.sub_scalar(a, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_all(sq)?;
    let var_eps = tape.add_const(var, cast(INSTANCE_NORM_EPS))?;
    let denom = tape.sqrt(var_eps)?;
    tape.div_scalar(centered, denom)
}

/// [`instance_norm_core`] followed by the block's learnable scale/shift.
pub fn instance_norm<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    block: usize,
    a: Var,
) -> Result<Var> {
    let y = instance_norm_core(tape, a)?;
    let scale = vars.var(&format!("block{block}/inorm/scale"))?;
    let shift = vars.var(&format!("block{block}/inorm/shift"))?;
    let y = tape.mul_scalar(y, scale)?;
    tape.add_scalar(y, shift)
}

/// Sinkhorn normalization of a score matrix.
///
/// Scores are made positive with a clamped exponential; with `slack` a row
/// and column of ones are appended first. `iters` counts half-steps: odd
/// counts end on a row normalization, even counts on a column
/// normalization, so `iters = 1` returns the exactly row-normalized
/// matrix. Non-slack rows and columns are normalized to sum 1 (slack
/// entries participate in the sums but are never normalized themselves).
/// Stops early once a full round leaves row sums within
/// [`SINKHORN_EXIT_TOL`] of 1.
pub fn sinkhorn<T: Real>(
    tape: &mut Tape<T>,
    scores: Var,
    iters: usize,
    slack: bool,
) -> Result<Var> {
    if iters == 0 {
        return Err(Error::Parameter("sinkhorn needs iters >= 1".into()));
    }
    if !tape.value(scores).is_finite() {
        return Err(Error::Numeric(
            "sinkhorn input contains non-finite scores".into(),
        ));
    }
    let (n, m) = tape.value(scores).shape();
    let clamp = cast::<T>(SINKHORN_SCORE_CLAMP);
    let clamped = tape.clamp(scores, -clamp, clamp)?;
    let positive = tape.exp(clamped)?;

    let mut c = if slack {
        let ones_col = tape.leaf(Tensor::ones(n, 1));
        let wide = tape.concat_cols(positive, ones_col)?;
        let ones_row = tape.leaf(Tensor::ones(1, m + 1));
        tape.concat_rows(wide, ones_row)?
    } else {
        positive
    };

    for step in 0..iters {
        if step % 2 == 0 {
            // Row half-step over the non-slack rows, slack column included
            // in each denominator.
            c = if slack {
                let top = tape.slice_rows(c, 0, n)?;
                let sums = tape.row_sum(top)?;
                let top = tape.div_col_vec(top, sums)?;
                let bottom = tape.slice_rows(c, n, n + 1)?;
                tape.concat_rows(top, bottom)?
            } else {
                let sums = tape.row_sum(c)?;
                tape.div_col_vec(c, sums)?
            };
        } else {
            c = if slack {
                let left = tape.slice_cols(c, 0, m)?;
                let sums = tape.col_sum(left)?;
                let left = tape.div_row_vec(left, sums)?;
                let right = tape.slice_cols(c, m, m + 1)?;
                tape.concat_cols(left, right)?
            } else {
                let sums = tape.col_sum(c)?;
                tape.div_row_vec(c, sums)?
            };
            // A full round just completed; stop once rows stay normalized.
            let v = tape.value(c);
            let mut worst = 0.0f64;
            for i in 0..n {
                let s: f64 = v.row(i).iter().map(|x| x.to_f64().unwrap()).sum();
                worst = worst.max((s - 1.0).abs());
            }
            if worst < SINKHORN_EXIT_TOL {
                break;
            }
        }
    }
    Ok(c)
}

/// Cross-graph convolution: each node's features are concatenated with the
/// soft-correspondence-weighted features of the other cloud, then passed
/// through one fully-connected layer shared by both directions.
pub fn cross_graph_conv<T: Real>(
    tape: &mut Tape<T>,
    vars: &NetVars<'_, T>,
    block: usize,
    fx_corr: Var,
    fy_corr: Var,
    c_tilde: Var,
) -> Result<(Var, Var)> {
    let (n, m) = (tape.value(fx_corr).rows(), tape.value(fy_corr).rows());
    let shape = tape.value(c_tilde).shape();
    if shape != (n + 1, m + 1) {
        return Err(Error::Parameter(format!(
            "cross conv expects a ({}x{}) soft correspondence with slack, got {}x{}",
            n + 1,
            m + 1,
            shape.0,
            shape.1
        )));
    }
    let c = tape.slice_rows(c_tilde, 0, n)?;
    let c = tape.slice_cols(c, 0, m)?;

    let agg_x = tape.matmul(c, fy_corr)?;
    let in_x = tape.concat_cols(fx_corr, agg_x)?;
    let out_x = linear(tape, vars, &format!("block{block}/cross"), in_x)?;

    let ct = tape.transpose(c)?;
    let agg_y = tape.matmul(ct, fx_corr)?;
    let in_y = tape.concat_cols(fy_corr, agg_y)?;
    let out_y = linear(tape, vars, &format!("block{block}/cross"), in_y)?;
    Ok((out_x, out_y))
}

/// Focal correspondence loss summed over the non-slack block.
///
/// With `alpha = 0.5, gamma = 0` this is half the summed binary
/// cross-entropy. `c_tilde` may be the full slack-augmented matrix or the
/// bare `n x m` block.
pub fn focal_loss<T: Real>(
    tape: &mut Tape<T>,
    c_tilde: Var,
    gt: Var,
    alpha: f64,
    gamma: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    if gamma < 0.0 {
        return Err(Error::Parameter(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    let (n, m) = tape.value(gt).shape();
    let c = match tape.value(c_tilde).shape() {
        s if s == (n, m) => c_tilde,
        s if s == (n + 1, m + 1) => {
            let rows = tape.slice_rows(c_tilde, 0, n)?;
            tape.slice_cols(rows, 0, m)?
        }
        (r, cc) => {
            return Err(Error::Parameter(format!(
                "prediction shape {r}x{cc} does not match ground truth {n}x{m}"
            )));
        }
    };
    let eps = cast::<T>(PROB_EPS);
    let p = tape.clamp(c, eps, T::one() - eps)?;
    let one_minus_p = {
        let neg = tape.scale(p, -T::one())?;
        tape.add_const(neg, T::one())?
    };
    let one_minus_gt = {
        let neg = tape.scale(gt, -T::one())?;
        tape.add_const(neg, T::one())?
    };
    let log_p = tape.log(p)?;
    let log_1mp = tape.log(one_minus_p)?;
    let gamma_t = cast::<T>(gamma);

    // alpha * gt * (1-p)^gamma * log p
    let w_pos = tape.pow_const(one_minus_p, gamma_t)?;
    let pos = tape.mul(gt, w_pos)?;
    let pos = tape.mul(pos, log_p)?;
    let pos = tape.scale(pos, cast(alpha))?;

    // (1-alpha) * (1-gt) * p^gamma * log(1-p)
    let w_neg = tape.pow_const(p, gamma_t)?;
    let neg = tape.mul(one_minus_gt, w_neg)?;
    let neg = tape.mul(neg, log_1mp)?;
    let neg = tape.scale(neg, cast(1.0 - alpha))?;

    let total = tape.add(pos, neg)?;
    let sum = tape.sum_all(total)?;
    tape.scale(sum, -T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_diff_check, DEFAULT_EPS, GRAD_TOL};
    use crate::geom::Vec3;
    use crate::net::{NetVars, RgmWeights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> NetConfig {
        NetConfig {
            k: 3,
            v_dim: 16,
            l_blocks: 2,
            heads: 2,
            transformer_depth: 1,
            ffn_dim: 8,
            mlp_widths: vec![8, 8],
            graph_dim: 8,
            sinkhorn_iters: 5,
            ..NetConfig::default()
        }
    }

    fn cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = || rng.random::<f64>() * 2.0 - 1.0;
        PointCloud::new((0..n).map(|_| Vec3::new(p(), p(), p())).collect()).unwrap()
    }

    #[test]
    fn descriptor_of_two_points() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)])
            .unwrap();
        let d = local_descriptor(&c, 1).unwrap();
        assert_eq!(d.shape(), (2, 6));
        assert_eq!(d.row(0), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(d.row(1), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn f_theta_ignores_neighbor_order() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 3).unwrap();
        let c = cloud(10, 5);
        let desc = local_descriptor(&c, cfg.k).unwrap();

        // Reverse the neighbor rows of point 0.
        let mut permuted = desc.clone();
        for j in 0..6 {
            for r in 0..cfg.k {
                permuted.set(r, j, desc.get(cfg.k - 1 - r, j));
            }
        }

        let run = |d: Tensor<f64>| {
            let mut tape = Tape::new();
            let binding = w.params.bind(&mut tape);
            let vars = NetVars::new(&w.params, &binding);
            let dv = tape.leaf(d);
            let out = f_theta(&mut tape, &vars, dv, 10, &cfg).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(desc), run(permuted));
    }

    #[test]
    fn f_theta_output_shape_and_gradient() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 4).unwrap();
        let c = cloud(6, 6);
        let desc = local_descriptor(&c, cfg.k).unwrap();
        let probe: Tensor<f64> =
            Tensor::random_uniform(6, cfg.v_dim, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));

        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, d: Var| {
                let binding = w.params.bind(tape);
                let vars = NetVars::new(&w.params, &binding);
                let out = f_theta(tape, &vars, d, 6, &cfg)?;
                assert_eq!(tape.value(out).shape(), (6, cfg.v_dim));
                let pv = tape.leaf(probe.clone());
                let weighted = tape.mul(out, pv)?;
                tape.sum_all(weighted)
            },
            &desc,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "f_theta gradient error {err}");
    }

    #[test]
    fn transformer_swaps_with_inputs() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fx: Tensor<f64> = Tensor::random_uniform(5, cfg.v_dim, -1.0, 1.0, &mut rng);
        let fy: Tensor<f64> = Tensor::random_uniform(7, cfg.v_dim, -1.0, 1.0, &mut rng);

        let run = |a: &Tensor<f64>, b: &Tensor<f64>| {
            let mut tape = Tape::new();
            let binding = w.params.bind(&mut tape);
            let vars = NetVars::new(&w.params, &binding);
            let av = tape.leaf(a.clone());
            let bv = tape.leaf(b.clone());
            let (ta, tb) = transformer_embed(&mut tape, &vars, av, bv, 0, &cfg).unwrap();
            (tape.value(ta).clone(), tape.value(tb).clone())
        };
        let (tx, ty) = run(&fx, &fy);
        let (ty2, tx2) = run(&fy, &fx);
        assert_eq!(tx, tx2);
        assert_eq!(ty, ty2);
    }

    #[test]
    fn transformer_rejects_width_mismatch() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let binding = w.params.bind(&mut tape);
        let vars = NetVars::new(&w.params, &binding);
        let a = tape.leaf(Tensor::zeros(4, cfg.v_dim));
        let b = tape.leaf(Tensor::zeros(4, cfg.v_dim + 1));
        assert!(transformer_embed(&mut tape, &vars, a, b, 0, &cfg).is_err());
    }

    #[test]
    fn transformer_gradient() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fx: Tensor<f64> = Tensor::random_uniform(4, cfg.v_dim, -1.0, 1.0, &mut rng);
        let fy: Tensor<f64> = Tensor::random_uniform(5, cfg.v_dim, -1.0, 1.0, &mut rng);
        let probe: Tensor<f64> = Tensor::random_uniform(4, cfg.v_dim, -1.0, 1.0, &mut rng);

        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, x: Var| {
                let binding = w.params.bind(tape);
                let vars = NetVars::new(&w.params, &binding);
                let yv = tape.leaf(fy.clone());
                let (tx, _ty) = transformer_embed(tape, &vars, x, yv, 1, &cfg)?;
                let pv = tape.leaf(probe.clone());
                let weighted = tape.mul(tx, pv)?;
                tape.sum_all(weighted)
            },
            &fx,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "transformer gradient error {err}");
    }

    #[test]
    fn soft_edges_single_point_is_one() {
        let c = PointCloud::new(vec![Vec3::new(0.1, 0.2, 0.3)]).unwrap();
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::new(1, 4, vec![1.0, -1.0, 0.5, 2.0]).unwrap());
        let e = soft_edges(&mut tape, t, &c, EdgeMode::Learned, 0.2).unwrap();
        assert_eq!(tape.value(e).data(), &[1.0]);
    }

    #[test]
    fn soft_edges_identical_rows_are_uniform() {
        let c = cloud(5, 7);
        let mut tape = Tape::new();
        let row = vec![0.3, -0.2, 0.9];
        let data: Vec<f64> = row.iter().cycle().take(15).copied().collect();
        let t = tape.leaf(Tensor::new(5, 3, data).unwrap());
        let e = soft_edges(&mut tape, t, &c, EdgeMode::Learned, 0.2).unwrap();
        for &v in tape.value(e).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_edges_matches_direct_oracle() {
        let c = cloud(6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Tensor<f64> = Tensor::random_uniform(6, 4, -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let tv = tape.leaf(t.clone());
        let e = soft_edges(&mut tape, tv, &c, EdgeMode::Learned, 0.2).unwrap();

        for i in 0..6 {
            let scores: Vec<f64> = (0..6)
                .map(|j| (0..4).map(|d| t.get(i, d) * t.get(j, d)).sum())
                .collect();
            let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for j in 0..6 {
                assert!(
                    (tape.value(e).get(i, j) - exps[j] / denom).abs() < 1e-12,
                    "entry ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn soft_edge_rows_sum_to_one_in_every_mode() {
        let c = cloud(8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: Tensor<f64> = Tensor::random_uniform(8, 4, -2.0, 2.0, &mut rng);
        for mode in [EdgeMode::Learned, EdgeMode::Full, EdgeMode::Radius] {
            let mut tape = Tape::new();
            let tv = tape.leaf(t.clone());
            let e = soft_edges(&mut tape, tv, &c, mode, 0.5).unwrap();
            for i in 0..8 {
                let s: f64 = tape.value(e).row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "{mode} row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn col_normalize_keeps_zero_columns() {
        let mut tape = Tape::<f64>::new();
        let e = tape.leaf(Tensor::new(2, 3, vec![0.4, 0.0, 0.6, 0.2, 0.0, 0.8]).unwrap());
        let b = col_normalize(&mut tape, e).unwrap();
        let v = tape.value(b);
        assert!((v.get(0, 0) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 1), 0.0);
        let col2: f64 = v.get(0, 2) + v.get(1, 2);
        assert!((col2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intra_conv_with_zero_edges_is_self_map() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f: Tensor<f64> = Tensor::random_uniform(4, cfg.v_dim, -1.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let binding = w.params.bind(&mut tape);
        let vars = NetVars::new(&w.params, &binding);
        let fv = tape.leaf(f.clone());
        let zero_e = tape.leaf(Tensor::zeros(4, 4));
        let out = intra_graph_conv(&mut tape, &vars, 0, fv, zero_e).unwrap();

        // Compare with f_self alone.
        let own = linear(&mut tape, &vars, "block0/intra/self", fv).unwrap();
        let own = tape.relu(own).unwrap();
        assert_eq!(tape.value(out), tape.value(own));
    }

    #[test]
    fn intra_conv_single_node() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f: Tensor<f64> = Tensor::random_uniform(1, cfg.v_dim, -1.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let binding = w.params.bind(&mut tape);
        let vars = NetVars::new(&w.params, &binding);
        let fv = tape.leaf(f.clone());
        let e = tape.leaf(Tensor::ones(1, 1));
        let out = intra_graph_conv(&mut tape, &vars, 0, fv, e).unwrap();

        let adj = linear(&mut tape, &vars, "block0/intra/adj", fv).unwrap();
        let adj = tape.relu(adj).unwrap();
        let own = linear(&mut tape, &vars, "block0/intra/self", fv).unwrap();
        let own = tape.relu(own).unwrap();
        let expect = tape.add(adj, own).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(expect).data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn intra_conv_gradient() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Tensor<f64> = Tensor::random_uniform(5, cfg.v_dim, -1.0, 1.0, &mut rng);
        let e: Tensor<f64> = Tensor::random_uniform(5, 5, 0.1, 1.0, &mut rng);
        let probe: Tensor<f64> = Tensor::random_uniform(5, cfg.q(), -1.0, 1.0, &mut rng);

        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, x: Var| {
                let binding = w.params.bind(tape);
                let vars = NetVars::new(&w.params, &binding);
                let ev_raw = tape.leaf(e.clone());
                let ev = col_normalize(tape, ev_raw)?;
                let out = intra_graph_conv(tape, &vars, 1, x, ev)?;
                let pv = tape.leaf(probe.clone());
                let weighted = tape.mul(out, pv)?;
                tape.sum_all(weighted)
            },
            &f,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "intra conv gradient error {err}");
    }

    #[test]
    fn affinity_identity_weight_gives_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fx: Tensor<f64> = Tensor::random_uniform(3, 4, -1.0, 1.0, &mut rng);
        let fy: Tensor<f64> = Tensor::random_uniform(5, 4, -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(fx.clone());
        let yv = tape.leaf(fy.clone());
        let mut eye = Tensor::zeros(4, 4);
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        let wv = tape.leaf(eye);
        let a = affinity(&mut tape, xv, yv, wv).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let dot: f64 = (0..4).map(|d| fx.get(i, d) * fy.get(j, d)).sum();
                assert!((tape.value(a).get(i, j) - dot).abs() < 1e-12);
            }
        }

        // Same features on both sides: symmetric.
        let mut tape = Tape::new();
        let xv = tape.leaf(fx.clone());
        let yv = tape.leaf(fx.clone());
        let mut eye = Tensor::zeros(4, 4);
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        let wv = tape.leaf(eye);
        let a = affinity(&mut tape, xv, yv, wv).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((tape.value(a).get(i, j) - tape.value(a).get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinity_matches_bilinear_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let fx: Tensor<f64> = Tensor::random_uniform(4, 3, -1.0, 1.0, &mut rng);
        let fy: Tensor<f64> = Tensor::random_uniform(6, 3, -1.0, 1.0, &mut rng);
        let w: Tensor<f64> = Tensor::random_uniform(3, 3, -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(fx.clone());
        let yv = tape.leaf(fy.clone());
        let wv = tape.leaf(w.clone());
        let a = affinity(&mut tape, xv, yv, wv).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                let mut expect = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        expect += fx.get(i, p) * w.get(p, q) * fy.get(j, q);
                    }
                }
                assert!((tape.value(a).get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinity_rejects_width_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(2, 3));
        let y = tape.leaf(Tensor::zeros(2, 4));
        let w = tape.leaf(Tensor::zeros(3, 3));
        assert!(affinity(&mut tape, x, y, w).is_err());
        let w_rect = tape.leaf(Tensor::zeros(3, 4));
        let y3 = tape.leaf(Tensor::zeros(2, 3));
        assert!(affinity(&mut tape, x, y3, w_rect).is_err());
    }

    #[test]
    fn instance_norm_core_of_constant_is_zero() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::full(3, 4, 2.5));
        let y = instance_norm_core(&mut tape, a).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn instance_norm_core_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Entries spread wide enough that the 1e-5 epsilon is negligible
        // next to the variance.
        let a: Tensor<f64> = Tensor::random_uniform(6, 7, -20.0, 20.0, &mut rng);
        let mut tape = Tape::new();
        let av = tape.leaf(a);
        let y = instance_norm_core(&mut tape, av).unwrap();
        let v = tape.value(y);
        let n = v.len() as f64;
        let mean: f64 = v.data().iter().sum::<f64>() / n;
        let var: f64 = v.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "variance {var}");
    }

    #[test]
    fn instance_norm_preserves_entry_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let a: Tensor<f64> = Tensor::random_uniform(4, 5, -3.0, 3.0, &mut rng);
            let mut tape = Tape::new();
            let av = tape.leaf(a.clone());
            let y = instance_norm_core(&mut tape, av).unwrap();
            let argsort = |t: &Tensor<f64>| {
                let mut idx: Vec<usize> = (0..t.len()).collect();
                idx.sort_by(|&p, &q| t.data()[p].partial_cmp(&t.data()[q]).unwrap());
                idx
            };
            assert_eq!(argsort(&a), argsort(tape.value(y)));
        }
    }

    #[test]
    fn instance_norm_rejects_single_entry() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::scalar(5.0));
        assert!(instance_norm_core(&mut tape, a).is_err());
    }

    #[test]
    fn sinkhorn_symmetric_fixed_point_without_slack() {
        let mut tape = Tape::<f64>::new();
        let s = tape.leaf(Tensor::full(2, 2, 0.7));
        let c = sinkhorn(&mut tape, s, 10, false).unwrap();
        for &v in tape.value(c).data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sinkhorn_one_iter_is_exact_row_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s: Tensor<f64> = Tensor::random_uniform(4, 5, -2.0, 2.0, &mut rng);
        let mut tape = Tape::new();
        let sv = tape.leaf(s.clone());
        let c = sinkhorn(&mut tape, sv, 1, true).unwrap();
        let v = tape.value(c);
        assert_eq!(v.shape(), (5, 6));
        // Non-slack rows sum to exactly 1 up to a final rounding.
        for i in 0..4 {
            let sum: f64 = v.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
        // Columns are untouched after a single half-step.
        let col0: f64 = (0..5).map(|i| v.get(i, 0)).sum();
        assert!((col0 - 1.0).abs() > 1e-3);
        // Slack row still all ones.
        assert_eq!(v.row(4), &[1.0; 6]);
    }

    #[test]
    fn sinkhorn_concentrates_on_dominant_diagonal() {
        let mut tape = Tape::<f64>::new();
        let s = tape.leaf(Tensor::new(2, 2, vec![4.0, -4.0, -4.0, 4.0]).unwrap());
        // Generous cap; the early exit stops once rows settle.
        let c = sinkhorn(&mut tape, s, 2000, true).unwrap();
        let v = tape.value(c);
        assert!(v.get(0, 0) > 0.8 && v.get(1, 1) > 0.8);
        assert!(v.get(0, 1) < 0.1 && v.get(1, 0) < 0.1);
        for i in 0..2 {
            let sum: f64 = v.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
        }
        for j in 0..2 {
            let sum: f64 = (0..3).map(|i| v.get(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-6, "col {j} sums to {sum}");
        }
    }

    #[test]
    fn sinkhorn_rejects_bad_input() {
        let mut tape = Tape::<f64>::new();
        let s = tape.leaf(Tensor::full(2, 2, 1.0));
        assert!(sinkhorn(&mut tape, s, 0, true).is_err());
        let bad = tape.leaf(Tensor::new(1, 2, vec![f64::NAN, 0.0]).unwrap());
        assert!(matches!(
            sinkhorn(&mut tape, bad, 5, true),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn sinkhorn_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s: Tensor<f64> = Tensor::random_uniform(4, 4, -1.5, 1.5, &mut rng);
        let probe: Tensor<f64> = Tensor::random_uniform(5, 5, -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, x: Var| {
                let c = sinkhorn(tape, x, 6, true)?;
                let pv = tape.leaf(probe.clone());
                let weighted = tape.mul(c, pv)?;
                tape.sum_all(weighted)
            },
            &s,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "sinkhorn gradient error {err}");
    }

    #[test]
    fn cross_conv_zero_correspondence_uses_own_features_only() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = cfg.q();
        let fx: Tensor<f64> = Tensor::random_uniform(3, q, -1.0, 1.0, &mut rng);
        let fy: Tensor<f64> = Tensor::random_uniform(4, q, -1.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let binding = w.params.bind(&mut tape);
        let vars = NetVars::new(&w.params, &binding);
        let xv = tape.leaf(fx.clone());
        let yv = tape.leaf(fy.clone());
        let c = tape.leaf(Tensor::zeros(4, 5));
        let (ox, _oy) = cross_graph_conv(&mut tape, &vars, 0, xv, yv, c).unwrap();

        let zeros = tape.leaf(Tensor::zeros(3, q));
        let cat = tape.concat_cols(xv, zeros).unwrap();
        let expect = linear(&mut tape, &vars, "block0/cross", cat).unwrap();
        assert_eq!(tape.value(ox), tape.value(expect));
    }

    #[test]
    fn cross_conv_identity_correspondence_aggregates_matches() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = cfg.q();
        let fx: Tensor<f64> = Tensor::random_uniform(3, q, -1.0, 1.0, &mut rng);
        let fy: Tensor<f64> = Tensor::random_uniform(3, q, -1.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let binding = w.params.bind(&mut tape);
        let vars = NetVars::new(&w.params, &binding);
        let xv = tape.leaf(fx.clone());
        let yv = tape.leaf(fy.clone());
        let mut cm = Tensor::zeros(4, 4);
        for i in 0..3 {
            cm.set(i, i, 1.0);
        }
        let c = tape.leaf(cm);
        let (ox, _oy) = cross_graph_conv(&mut tape, &vars, 0, xv, yv, c).unwrap();

        let cat = tape.concat_cols(xv, yv).unwrap();
        let expect = linear(&mut tape, &vars, "block0/cross", cat).unwrap();
        assert_eq!(tape.value(ox), tape.value(expect));
    }

    #[test]
    fn cross_conv_rejects_bad_shapes() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 14).unwrap();
        let mut tape = Tape::new();
        let binding = w.params.bind(&mut tape);
        let vars = NetVars::new(&w.params, &binding);
        let x = tape.leaf(Tensor::<f64>::zeros(3, cfg.q()));
        let y = tape.leaf(Tensor::<f64>::zeros(4, cfg.q()));
        let c = tape.leaf(Tensor::<f64>::zeros(3, 4));
        assert!(cross_graph_conv(&mut tape, &vars, 0, x, y, c).is_err());
    }

    #[test]
    fn cross_conv_gradient() {
        let cfg = tiny_config();
        let w: RgmWeights<f64> = RgmWeights::init(&cfg, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let q = cfg.q();
        let fy: Tensor<f64> = Tensor::random_uniform(4, q, -1.0, 1.0, &mut rng);
        let c: Tensor<f64> = Tensor::random_uniform(4, 5, 0.0, 1.0, &mut rng);
        let probe: Tensor<f64> = Tensor::random_uniform(3, cfg.v_dim, -1.0, 1.0, &mut rng);
        let fx: Tensor<f64> = Tensor::random_uniform(3, q, -1.0, 1.0, &mut rng);

        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, x: Var| {
                let binding = w.params.bind(tape);
                let vars = NetVars::new(&w.params, &binding);
                let yv = tape.leaf(fy.clone());
                let cv = tape.leaf(c.clone());
                let (ox, oy) = cross_graph_conv(tape, &vars, 1, x, yv, cv)?;
                let pv = tape.leaf(probe.clone());
                let wx = tape.mul(ox, pv)?;
                let sx = tape.sum_all(wx)?;
                let sy = tape.sum_all(oy)?;
                tape.add(sx, sy)
            },
            &fx,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "cross conv gradient error {err}");
    }

    #[test]
    fn focal_equals_half_bce_at_alpha_half_gamma_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let pred: Tensor<f64> = Tensor::random_uniform(3, 4, 0.05, 0.95, &mut rng);
        let mut gt = Tensor::zeros(3, 4);
        gt.set(0, 1, 1.0);
        gt.set(2, 3, 1.0);

        let mut tape = Tape::new();
        let pv = tape.leaf(pred.clone());
        let gv = tape.leaf(gt.clone());
        let loss = focal_loss(&mut tape, pv, gv, 0.5, 0.0).unwrap();

        let mut bce = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                let (p, g) = (pred.get(i, j), gt.get(i, j));
                bce -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
            }
        }
        assert!((tape.value(loss).get(0, 0) - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn focal_perfect_prediction_is_near_zero() {
        let mut gt = Tensor::<f64>::zeros(3, 3);
        for i in 0..3 {
            gt.set(i, (i + 1) % 3, 1.0);
        }
        let mut tape = Tape::new();
        let pv = tape.leaf(gt.clone());
        let gv = tape.leaf(gt);
        let loss = focal_loss(&mut tape, pv, gv, 0.5, 0.0).unwrap();
        let v = tape.value(loss).get(0, 0);
        assert!(v >= 0.0 && v < 1e-9, "perfect-prediction loss {v}");
    }

    #[test]
    fn focal_hand_value_single_entry() {
        let mut tape = Tape::<f64>::new();
        let pv = tape.leaf(Tensor::scalar(0.5));
        let gv = tape.leaf(Tensor::scalar(1.0));
        let loss = focal_loss(&mut tape, pv, gv, 0.25, 2.0).unwrap();
        let expect = 0.25 * 0.25 * -(0.5f64.ln());
        assert!((tape.value(loss).get(0, 0) - expect).abs() < 1e-12);
        assert!((tape.value(loss).get(0, 0) - 0.043321).abs() < 1e-6);
    }

    #[test]
    fn focal_accepts_slack_augmented_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let s: Tensor<f64> = Tensor::random_uniform(3, 3, -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let sv = tape.leaf(s);
        let c = sinkhorn(&mut tape, sv, 6, true).unwrap();
        let mut gt = Tensor::zeros(3, 3);
        for i in 0..3 {
            gt.set(i, i, 1.0);
        }
        let gv = tape.leaf(gt);
        let loss = focal_loss(&mut tape, c, gv, 0.5, 0.0).unwrap();
        assert!(tape.value(loss).get(0, 0) > 0.0);
    }

    #[test]
    fn focal_rejects_bad_parameters() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::full(2, 2, 0.5));
        let g = tape.leaf(Tensor::zeros(2, 2));
        assert!(focal_loss(&mut tape, p, g, -0.1, 0.0).is_err());
        assert!(focal_loss(&mut tape, p, g, 0.5, -1.0).is_err());
        let g3 = tape.leaf(Tensor::zeros(3, 3));
        assert!(focal_loss(&mut tape, p, g3, 0.5, 0.0).is_err());
    }

    #[test]
    fn focal_gradient_with_nonzero_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s: Tensor<f64> = Tensor::random_uniform(3, 4, -1.0, 1.0, &mut rng);
        let mut gt = Tensor::zeros(3, 4);
        gt.set(0, 0, 1.0);
        gt.set(1, 2, 1.0);
        gt.set(2, 3, 1.0);

        let err = finite_diff_check(
            &|tape: &mut Tape<f64>, x: Var| {
                let c = sinkhorn(tape, x, 4, true)?;
                let gv = tape.leaf(gt.clone());
                focal_loss(tape, c, gv, 0.25, 2.0)
            },
            &s,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "focal gradient error {err}");
    }
}
