//! Masked graph-attention heads shared by the patient and drug encoders.
//!
//! Logits follow the additive form `LeakyReLU(a^T [W h_i || W h_j])`,
//! computed as an outer sum of source and destination scores. The softmax
//! runs over an explicit per-row support, so excluded pairs receive exactly
//! zero attention. Edge probabilities, when present, enter as an additive
//! `ln p` bias on the logits.

use ndarray::Array2;

use crate::nn::{Activation, Tape, Var};

/// Per-row attention support plus the optional log-probability bias.
pub struct AttentionGraph {
    pub supports: Vec<Vec<usize>>,
    pub log_bias: Option<Array2<f64>>,
}

impl AttentionGraph {
    /// Support and bias from a row-normalized adjacency: every strictly
    /// positive entry participates, weighted by `ln a[i, j]`.
    pub fn from_weighted_adjacency(adj: &Array2<f64>) -> AttentionGraph {
        let n = adj.nrows();
        let mut supports = Vec::with_capacity(n);
        let mut bias = Array2::zeros((n, n));
        for i in 0..n {
            let mut row = Vec::new();
            for j in 0..n {
                if adj[(i, j)] > 0.0 {
                    row.push(j);
                    bias[(i, j)] = adj[(i, j)].ln();
                }
            }
            supports.push(row);
        }
        AttentionGraph { supports, log_bias: Some(bias) }
    }

    /// Support from a binary adjacency with self-loops added; no bias.
    pub fn from_binary_adjacency(adj: &Array2<f64>) -> AttentionGraph {
        let n = adj.nrows();
        let supports = (0..n)
            .map(|i| {
                let mut row: Vec<usize> =
                    (0..n).filter(|&j| j != i && adj[(i, j)] != 0.0).collect();
                row.push(i);
                row.sort_unstable();
                row
            })
            .collect();
        AttentionGraph { supports, log_bias: None }
    }
}

pub struct GatHeadOutput {
    /// Row-stochastic attention over the support.
    pub alpha: Var,
    /// Activated aggregation `act(alpha . (H W))`.
    pub output: Var,
}

/// One attention head over node matrix `h` (n, dim).
pub fn gat_head(
    tape: &mut Tape,
    h: Var,
    weight: Var,
    attn: Var,
    graph: &AttentionGraph,
    leaky_slope: f64,
    activation: Activation,
) -> GatHeadOutput {
    let dim = tape.value(weight).nrows();
    let z = tape.matmul(h, weight);
    let a_src = tape.gather_rows(attn, (0..dim).collect());
    let a_dst = tape.gather_rows(attn, (dim..2 * dim).collect());
    let s_src = tape.matmul(z, a_src);
    let s_dst = tape.matmul(z, a_dst);
    let raw = tape.outer_sum(s_src, s_dst);
    let mut logits = tape.leaky_relu(raw, leaky_slope);
    if let Some(bias) = &graph.log_bias {
        logits = tape.add_const(logits, bias.clone());
    }
    let alpha = tape.masked_softmax_rows(logits, graph.supports.clone());
    let agg = tape.matmul(alpha, z);
    let output = activation.apply(tape, agg);
    GatHeadOutput { alpha, output }
}

/// Multi-head layer: head outputs are averaged (dimension-preserving).
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    heads: &[(Var, Var)],
    graph: &AttentionGraph,
    leaky_slope: f64,
    activation: Activation,
) -> Var {
    debug_assert!(!heads.is_empty());
    let outs: Vec<Var> = heads
        .iter()
        .map(|&(w, a)| gat_head(tape, h, w, a, graph, leaky_slope, activation).output)
        .collect();
    if outs.len() == 1 {
        return outs[0];
    }
    let mut acc = outs[0];
    for &o in &outs[1..] {
        acc = tape.add(acc, o);
    }
    tape.scale(acc, 1.0 / outs.len() as f64)
}
