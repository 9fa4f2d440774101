//! Longitudinal patient encoder: embedding lookup, evolving attention
//! layers, type-wise pooling, per-type recurrent encoders and the query map.

use ndarray::Array2;

use crate::dynamic::snapshot::{NodeType, SnapshotGraph, SnapshotNode};
use crate::error::{Error, Result};
use crate::nn::{Activation, ParamStore, Tape, Var};

use super::attention::{gat_layer, AttentionGraph};
use super::config::ModelConfig;
use super::layout::{AffineIds, EvolveLayerIds, GruIds, ModelLayout};

/// Tape handles for every stored parameter, aligned by registration index.
pub struct ModelVars {
    vars: Vec<Var>,
}

impl ModelVars {
    pub fn of(&self, id: crate::nn::ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

/// Put every parameter on the tape as a leaf.
pub fn leaf_params(tape: &mut Tape, store: &ParamStore) -> ModelVars {
    let vars = store.values().iter().map(|v| tape.leaf(v.clone())).collect();
    ModelVars { vars }
}

/// Stack the embedding rows for a snapshot's nodes, one row per node in
/// node order. Rows come from the table matching each node's type.
pub fn embed_snapshot(
    tape: &mut Tape,
    vars: &ModelVars,
    layout: &ModelLayout,
    nodes: &[SnapshotNode],
) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::Data("cannot embed an empty snapshot".into()));
    }
    // Nodes arrive grouped by type (diagnoses, procedures, medications), so
    // one gather per contiguous run preserves node order.
    let mut parts: Vec<Var> = Vec::new();
    let mut run_type = nodes[0].node_type;
    let mut run: Vec<usize> = Vec::new();
    let mut flush = |tape: &mut Tape, t: NodeType, run: &mut Vec<usize>| -> Result<()> {
        if run.is_empty() {
            return Ok(());
        }
        let table = match t {
            NodeType::Diagnosis => layout.diag_table,
            NodeType::Procedure => layout.proc_table,
            NodeType::Medication => layout.med_table,
        };
        let table_rows = tape.value(vars.of(table)).nrows();
        for &idx in run.iter() {
            if idx >= table_rows {
                return Err(Error::Shape(format!(
                    "code index {idx} out of range for a {} table of {table_rows} rows",
                    match t {
                        NodeType::Diagnosis => "diagnosis",
                        NodeType::Procedure => "procedure",
                        NodeType::Medication => "medication",
                    }
                )));
            }
        }
        parts.push(tape.gather_rows(vars.of(table), std::mem::take(run)));
        Ok(())
    };
    for node in nodes {
        if node.node_type != run_type {
            flush(tape, run_type, &mut run)?;
            run_type = node.node_type;
        }
        run.push(node.code_index);
    }
    flush(tape, run_type, &mut run)?;
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        Ok(tape.concat_rows(&parts))
    }
}

/// Per-layer evolving state: the transform matrix and its cell memory.
pub struct EvolveState {
    pub per_layer: Vec<(Var, Var)>,
}

/// Fresh state at the start of a patient: transforms at all-ones, cell
/// memories at zero.
pub fn evolve_state_init(tape: &mut Tape, layers: usize, dim: usize) -> EvolveState {
    let per_layer = (0..layers)
        .map(|_| {
            let w = tape.leaf(Array2::ones((dim, dim)));
            let c = tape.zeros(dim, dim);
            (w, c)
        })
        .collect();
    EvolveState { per_layer }
}

/// One recurrent step of the weight-evolution cell. The previous transform
/// serves as both the input and the prior hidden state; the same gate maps
/// process every column.
pub fn evolve_weights(
    tape: &mut Tape,
    vars: &ModelVars,
    layer: &EvolveLayerIds,
    w_prev: Var,
    c_prev: Var,
) -> (Var, Var) {
    let gate = |tape: &mut Tape, ids: &AffineIds| -> Var {
        let lin = tape.matmul(vars.of(ids.weight), w_prev);
        tape.add_col_vec(lin, vars.of(ids.bias))
    };
    let i_raw = gate(tape, &layer.input_gate);
    let input = tape.sigmoid(i_raw);
    let f_raw = gate(tape, &layer.forget_gate);
    let forget = tape.sigmoid(f_raw);
    let o_raw = gate(tape, &layer.output_gate);
    let output = tape.sigmoid(o_raw);
    let g_raw = gate(tape, &layer.candidate);
    let cand = tape.tanh(g_raw);

    let keep = tape.mul(forget, c_prev);
    let write = tape.mul(input, cand);
    let c_new = tape.add(keep, write);
    let c_act = tape.tanh(c_new);
    let w_new = tape.mul(output, c_act);
    (w_new, c_new)
}

/// Pooled per-type vectors for one snapshot; missing types pool to zero.
pub struct PooledVisit {
    pub diag: Var,
    pub proc: Var,
    pub med: Option<Var>,
}

pub fn pool_by_type(
    tape: &mut Tape,
    h: Var,
    nodes: &[SnapshotNode],
    dim: usize,
) -> PooledVisit {
    let rows_of = |t: NodeType| -> Vec<usize> {
        nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.node_type == t)
            .map(|(i, _)| i)
            .collect()
    };
    let pool = |tape: &mut Tape, t: NodeType| -> Option<Var> {
        let rows = rows_of(t);
        if rows.is_empty() {
            None
        } else {
            Some(tape.row_mean_t(h, rows))
        }
    };
    let diag = pool(tape, NodeType::Diagnosis).unwrap_or_else(|| tape.zeros(dim, 1));
    let proc = pool(tape, NodeType::Procedure).unwrap_or_else(|| tape.zeros(dim, 1));
    let med = pool(tape, NodeType::Medication);
    PooledVisit { diag, proc, med }
}

/// Standard gated-recurrent step over `(dim, 1)` vectors.
pub fn gru_step(tape: &mut Tape, vars: &ModelVars, ids: &GruIds, x: Var, h: Var) -> Var {
    let gate = |tape: &mut Tape, g: &super::layout::GateIds, x: Var, h: Var| -> Var {
        let xi = tape.matmul(vars.of(g.input_map), x);
        let hi = tape.matmul(vars.of(g.hidden_map), h);
        let s = tape.add(xi, hi);
        tape.add(s, vars.of(g.bias))
    };
    let z_raw = gate(tape, &ids.update, x, h);
    let z = tape.sigmoid(z_raw);
    let r_raw = gate(tape, &ids.reset, x, h);
    let r = tape.sigmoid(r_raw);
    let rh = tape.mul(r, h);
    let n_raw = gate(tape, &ids.candidate, x, rh);
    let n = tape.tanh(n_raw);

    // h' = (1 - z) * n + z * h
    let zn = tape.mul(z, n);
    let zh = tape.mul(z, h);
    let n_minus_zn = tape.sub(n, zn);
    tape.add(n_minus_zn, zh)
}

/// Query map: activation(affine(concat(diag state, proc state))).
pub fn patient_query(
    tape: &mut Tape,
    vars: &ModelVars,
    query: &AffineIds,
    h_diag: Var,
    h_proc: Var,
    activation: Activation,
) -> Var {
    let x = tape.concat_rows(&[h_diag, h_proc]);
    let lin = tape.matmul(vars.of(query.weight), x);
    let aff = tape.add(lin, vars.of(query.bias));
    activation.apply(tape, aff)
}

/// Apply the evolving attention stack to one snapshot's embeddings.
/// `evolved` holds the per-layer transform for this visit (already advanced
/// by [`evolve_weights`], or the all-ones initial transform when frozen).
/// `between_masks[l]`, when present, multiplies the output of layer `l`
/// before the next layer (inter-layer dropout, training only).
pub fn encode_snapshot(
    tape: &mut Tape,
    vars: &ModelVars,
    layout: &ModelLayout,
    cfg: &ModelConfig,
    snapshot: &SnapshotGraph,
    evolved: &[Var],
    h0: Var,
    between_masks: &[Option<Array2<f64>>],
) -> Var {
    let graph = AttentionGraph::from_weighted_adjacency(&snapshot.adjacency);
    let mut h = h0;
    for (l, (layer_ids, &w)) in layout.evolve_layers.iter().zip(evolved.iter()).enumerate() {
        let heads: Vec<(Var, Var)> =
            layer_ids.attn.iter().map(|&a| (w, vars.of(a))).collect();
        h = gat_layer(tape, h, &heads, &graph, cfg.leaky_slope, cfg.activation);
        if let Some(Some(mask)) = between_masks.get(l) {
            h = tape.mul_const(h, mask.clone());
        }
    }
    h
}
