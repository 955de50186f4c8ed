//! Graph back-end layers.
//!
//! Every layer takes its parameters as tape variables, so the same code runs
//! for training (trainable leaves), scoring (constants) and gradient checks.

use crate::autograd::{concat, Tensor, Var};
use crate::error::{Error, Result};

/// Negative slope of the leaky ReLU inside the graph attention updates.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `x @ w (+ b)` on `[N, in]` rows.
#[derive(Debug, Clone, Copy)]
pub struct Linear<'t> {
    pub w: Var<'t>,
    pub b: Option<Var<'t>>,
}

impl<'t> Linear<'t> {
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(self.w)?;
        match self.b {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// Attention vectors and output projections of the spectral/temporal
/// aggregation.
#[derive(Debug, Clone, Copy)]
pub struct SaParams<'t> {
    /// `[C, 1]`: scores each time frame when pooling over time.
    pub spectral_att: Var<'t>,
    /// `[C, 1]`: scores each spectral bin when pooling over frequency.
    pub temporal_att: Var<'t>,
    pub spectral_proj: Linear<'t>,
    pub temporal_proj: Linear<'t>,
}

#[derive(Debug, Clone, Copy)]
pub struct SaOutput<'t> {
    /// `[F, D]` spectral nodes.
    pub spectral: Var<'t>,
    /// `[T, D]` temporal nodes.
    pub temporal: Var<'t>,
    /// `[F, T]` weights over time for each spectral node.
    pub spectral_weights: Var<'t>,
    /// `[T, F]` weights over frequency for each temporal node.
    pub temporal_weights: Var<'t>,
}

/// Collapses a `[C, F, T]` feature map into spectral nodes (attention over
/// time per bin) and temporal nodes (attention over bins per frame), each
/// projected to the node dimension.
pub fn sa_aggregate<'t>(p: &SaParams<'t>, map: Var<'t>) -> Result<SaOutput<'t>> {
    let shape = map.shape();
    if shape.len() != 3 {
        return Err(Error::shape(
            "sa_aggregate",
            &shape,
            &p.spectral_att.shape(),
        ));
    }
    let (c, f, t) = (shape[0], shape[1], shape[2]);

    let ftc = map.permute(&[1, 2, 0])?;
    let spectral_weights = ftc
        .reshape(&[f * t, c])?
        .matmul(p.spectral_att)?
        .reshape(&[f, t])?
        .softmax(1)?;
    let spectral = spectral_weights.reshape(&[f, t, 1])?.mul(ftc)?.sum(1)?;

    let tfc = map.permute(&[2, 1, 0])?;
    let temporal_weights = tfc
        .reshape(&[t * f, c])?
        .matmul(p.temporal_att)?
        .reshape(&[t, f])?
        .softmax(1)?;
    let temporal = temporal_weights.reshape(&[t, f, 1])?.mul(tfc)?.sum(1)?;

    Ok(SaOutput {
        spectral: p.spectral_proj.apply(spectral)?,
        temporal: p.temporal_proj.apply(temporal)?,
        spectral_weights,
        temporal_weights,
    })
}

/// Parameters of one heterogeneous stacking graph attention layer.
#[derive(Debug, Clone, Copy)]
pub struct HsGalParams<'t> {
    /// `[D]` score vector for pairs inside the first graph.
    pub att_aa: Var<'t>,
    /// `[D]` score vector for pairs inside the second graph.
    pub att_bb: Var<'t>,
    /// `[D]` score vector for pairs across the two graphs.
    pub att_ab: Var<'t>,
    /// `[D]` score vector of the stack node.
    pub att_stack: Var<'t>,
    /// `[D, D]` node update projection.
    pub proj: Var<'t>,
    /// `[D, D]` stack update projection.
    pub stack_proj: Var<'t>,
}

#[derive(Debug, Clone, Copy)]
pub struct HsGalOutput<'t> {
    pub a: Var<'t>,
    pub b: Var<'t>,
    /// `[1, D]`.
    pub stack: Var<'t>,
    /// `[N, N]` attention over the union, rows are query nodes.
    pub attention: Var<'t>,
    /// `[1, N]` stack attention over the union.
    pub stack_attention: Var<'t>,
}

/// Raw (pre-softmax) attention scores of node pairs over the union of two
/// graphs with `na` and `nb` nodes: `a_k · (n_i ⊙ n_j)` where `a_k` depends
/// on whether `i` and `j` lie in the first graph, the second, or across.
pub fn hs_gal_scores<'t>(p: &HsGalParams<'t>, union: Var<'t>, na: usize) -> Result<Var<'t>> {
    let n = union.shape()[0];
    let xt = union.t()?;
    let tape = union.tape();
    let mask = |keep: &dyn Fn(bool, bool) -> bool| -> Result<Var<'t>> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if keep(i < na, j < na) {
                    m[i * n + j] = 1.0;
                }
            }
        }
        Ok(tape.constant(Tensor::new(&[n, n], m)?))
    };
    let s_aa = union
        .mul(p.att_aa)?
        .matmul(xt)?
        .mul(mask(&|i, j| i && j)?)?;
    let s_bb = union
        .mul(p.att_bb)?
        .matmul(xt)?
        .mul(mask(&|i, j| !i && !j)?)?;
    let s_ab = union
        .mul(p.att_ab)?
        .matmul(xt)?
        .mul(mask(&|i, j| i != j)?)?;
    s_aa.add(s_bb)?.add(s_ab)
}

/// Attention over the union of two graphs with type-dependent pair scores,
/// a residual leaky-ReLU update, and a stack node that reads from every node
/// without being read by any. Without `stack_in`, the stack starts as the
/// mean of all nodes.
pub fn hs_gal<'t>(
    p: &HsGalParams<'t>,
    ga: Var<'t>,
    gb: Var<'t>,
    stack_in: Option<Var<'t>>,
) -> Result<HsGalOutput<'t>> {
    let (sa, sb) = (ga.shape(), gb.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::shape("hs_gal", &sa, &sb));
    }
    let (na, nb, d) = (sa[0], sb[0], sa[1]);
    let union = concat(&[ga, gb], 0)?;

    let attention = hs_gal_scores(p, union, na)?.softmax(1)?;
    let update = attention
        .matmul(union)?
        .matmul(p.proj)?
        .leaky_relu(LEAKY_SLOPE)?;
    let nodes = union.add(update)?;

    let stack = match stack_in {
        Some(s) => {
            if s.shape() != [1, d] {
                return Err(Error::shape("hs_gal stack", &s.shape(), &[1, d]));
            }
            s
        }
        None => union.mean(0)?.reshape(&[1, d])?,
    };
    let stack_attention = stack.mul(p.att_stack)?.matmul(union.t()?)?.softmax(1)?;
    let stack_update = stack_attention
        .matmul(union)?
        .matmul(p.stack_proj)?
        .leaky_relu(LEAKY_SLOPE)?;

    Ok(HsGalOutput {
        a: nodes.slice(0, 0, na)?,
        b: nodes.slice(0, na, na + nb)?,
        stack: stack.add(stack_update)?,
        attention,
        stack_attention,
    })
}

/// Scorer of one graph pooling layer.
#[derive(Debug, Clone, Copy)]
pub struct PoolParams<'t> {
    /// `[D, 1]`.
    pub w: Var<'t>,
    /// `[1]`.
    pub b: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct PoolOutput<'t> {
    /// Kept nodes in their original order, each scaled by its score.
    pub nodes: Var<'t>,
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
}

/// `ceil(ratio * n)` clamped to `[1, n]`, robust to products such as
/// `0.7 * 10 = 7.000000000000001`.
pub fn keep_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Indices of the `k` largest scores (ties to the lower index), ascending.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Keeps the top `ceil(keep_ratio * N)` nodes by a learned sigmoid score and
/// scales each kept node by its score so the scorer receives gradient.
pub fn graph_pool<'t>(p: &PoolParams<'t>, g: Var<'t>, keep_ratio: f64) -> Result<PoolOutput<'t>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "keep ratio {keep_ratio} outside (0, 1]"
        )));
    }
    let shape = g.shape();
    if shape.len() != 2 {
        return Err(Error::shape("graph_pool", &shape, &p.w.shape()));
    }
    let score = g.matmul(p.w)?.add(p.b)?.sigmoid()?;
    let scores = score.value().data().to_vec();
    let kept = top_k_indices(&scores, keep_count(shape[0], keep_ratio));
    let nodes = g.mul(score)?.index_select(&kept)?;
    Ok(PoolOutput {
        nodes,
        kept,
        scores,
    })
}

/// One MGO branch: HS-GAL, pool, HS-GAL (sharing the stack node), pool.
#[derive(Debug, Clone, Copy)]
pub struct BranchParams<'t> {
    pub gal: [HsGalParams<'t>; 2],
    pub pool_spectral: [PoolParams<'t>; 2],
    pub pool_temporal: [PoolParams<'t>; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct GraphState<'t> {
    pub spectral: Var<'t>,
    pub temporal: Var<'t>,
    /// `[1, D]`.
    pub stack: Var<'t>,
}

pub fn mgo_branch<'t>(
    p: &BranchParams<'t>,
    spectral: Var<'t>,
    temporal: Var<'t>,
    keep_ratios: [f64; 2],
) -> Result<GraphState<'t>> {
    let mut s = spectral;
    let mut t = temporal;
    let mut stack = None;
    for (stage, &ratio) in keep_ratios.iter().enumerate() {
        let out = hs_gal(&p.gal[stage], s, t, stack)?;
        s = graph_pool(&p.pool_spectral[stage], out.a, ratio)?.nodes;
        t = graph_pool(&p.pool_temporal[stage], out.b, ratio)?.nodes;
        stack = Some(out.stack);
    }
    Ok(GraphState {
        spectral: s,
        temporal: t,
        stack: stack.expect("two stages ran"),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct MgoOutput<'t> {
    pub merged: GraphState<'t>,
    pub branches: [GraphState<'t>; 2],
}

/// Two independently parameterized branches merged by element-wise maximum
/// on spectral nodes, temporal nodes and the stack node.
pub fn mgo<'t>(
    p: &[BranchParams<'t>; 2],
    spectral: Var<'t>,
    temporal: Var<'t>,
    keep_ratios: [f64; 2],
) -> Result<MgoOutput<'t>> {
    let b0 = mgo_branch(&p[0], spectral, temporal, keep_ratios)?;
    let b1 = mgo_branch(&p[1], spectral, temporal, keep_ratios)?;
    for (x, y) in [
        (b0.spectral, b1.spectral),
        (b0.temporal, b1.temporal),
        (b0.stack, b1.stack),
    ] {
        if x.shape() != y.shape() {
            return Err(Error::Invariant(format!(
                "MGO branches diverged: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
    }
    Ok(MgoOutput {
        merged: GraphState {
            spectral: b0.spectral.maximum(b1.spectral)?,
            temporal: b0.temporal.maximum(b1.temporal)?,
            stack: b0.stack.maximum(b1.stack)?,
        },
        branches: [b0, b1],
    })
}

/// `[max_s, mean_s, max_t, mean_t, stack]`, a `5 D` vector.
pub fn readout<'t>(spectral: Var<'t>, temporal: Var<'t>, stack: Var<'t>) -> Result<Var<'t>> {
    let d = spectral.shape()[1];
    if temporal.shape()[1] != d || stack.value().numel() != d {
        return Err(Error::shape(
            "readout",
            &spectral.shape(),
            &temporal.shape(),
        ));
    }
    concat(
        &[
            spectral.max(0)?,
            spectral.mean(0)?,
            temporal.max(0)?,
            temporal.mean(0)?,
            stack.reshape(&[d])?,
        ],
        0,
    )
}
