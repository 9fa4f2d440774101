//! Drug representation: message passing over molecule graphs, attention
//! over the co-occurrence and interaction graphs, the fused memory, and the
//! per-patient prescription history memory.

use ndarray::Array2;

use crate::ehr::smiles::{BondKind, MoleculeGraph};
use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

use super::attention::{gat_layer, AttentionGraph};
use super::config::ModelConfig;
use super::encoder::ModelVars;
use super::layout::{GatLayerIds, MpnnIds};

/// Precomputed message-passing structure for one molecule: atom type ids
/// plus one symmetric 0/1 adjacency per bond kind present.
#[derive(Debug, Clone)]
pub struct MoleculePlan {
    pub atom_ids: Vec<usize>,
    pub bond_adjacency: Vec<(BondKind, Array2<f64>)>,
}

impl MoleculePlan {
    pub fn from_graph(graph: &MoleculeGraph) -> Result<MoleculePlan> {
        graph.validate()?;
        let n = graph.atom_count();
        let mut per_kind: Vec<Option<Array2<f64>>> = vec![None; BondKind::COUNT];
        for &(i, j, kind) in &graph.bonds {
            if kind.id() >= BondKind::COUNT {
                return Err(Error::Config(format!(
                    "molecule {:?} uses unknown bond type {kind:?}",
                    graph.drug_code
                )));
            }
            let adj = per_kind[kind.id()].get_or_insert_with(|| Array2::zeros((n, n)));
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
        }
        let bond_adjacency = per_kind
            .into_iter()
            .enumerate()
            .filter_map(|(id, adj)| {
                adj.map(|a| {
                    let kind = match id {
                        0 => BondKind::Single,
                        1 => BondKind::Double,
                        2 => BondKind::Triple,
                        _ => BondKind::Aromatic,
                    };
                    (kind, a)
                })
            })
            .collect();
        Ok(MoleculePlan { atom_ids: graph.atoms.clone(), bond_adjacency })
    }
}

/// Message passing: `rounds` iterations of neighbor aggregation through
/// bond-type-shared matrices and a concat-update, then mean pooling over
/// atoms. Returns a `(1, dim)` row.
pub fn molecule_embedding(
    tape: &mut Tape,
    vars: &ModelVars,
    mpnn: &MpnnIds,
    plan: &MoleculePlan,
    rounds: usize,
) -> Var {
    let n = plan.atom_ids.len();
    let mut h = tape.gather_rows(vars.of(mpnn.atom_table), plan.atom_ids.clone());
    for _ in 0..rounds {
        // Aggregate: sum over bond kinds of A_k . H . W_k^T.
        let mut agg: Option<Var> = None;
        for (kind, adj) in &plan.bond_adjacency {
            let w = vars.of(mpnn.bond_mats[kind.id()]);
            let wt = tape.transpose(w);
            let hw = tape.matmul(h, wt);
            let adj_var = tape.leaf(adj.clone());
            let msg = tape.matmul(adj_var, hw);
            agg = Some(match agg {
                Some(acc) => tape.add(acc, msg),
                None => msg,
            });
        }
        let messages = agg.unwrap_or_else(|| tape.zeros(n, tape.value(h).ncols()));
        // Update: tanh(affine([H || E])) row-wise.
        let cat = tape.concat_cols(&[h, messages]);
        let wt = tape.transpose(vars.of(mpnn.update.weight));
        let lin = tape.matmul(cat, wt);
        let shifted = tape.add_row_vec(lin, vars.of(mpnn.update.bias));
        h = tape.tanh(shifted);
    }
    let pooled = tape.row_mean_t(h, (0..n).collect());
    tape.transpose(pooled)
}

/// Stack per-drug molecule embeddings into the `(|M|, dim)` memory, in
/// vocabulary order. Drugs without a molecule share the learned fallback
/// row; the count of such drugs is returned alongside.
pub fn build_drug_memory(
    tape: &mut Tape,
    vars: &ModelVars,
    mpnn: &MpnnIds,
    plans: &[Option<MoleculePlan>],
    rounds: usize,
) -> (Var, usize) {
    let mut rows: Vec<Var> = Vec::with_capacity(plans.len());
    let mut missing = 0;
    for plan in plans {
        match plan {
            Some(p) => rows.push(molecule_embedding(tape, vars, mpnn, p, rounds)),
            None => {
                missing += 1;
                rows.push(vars.of(mpnn.fallback));
            }
        }
    }
    (tape.concat_rows(&rows), missing)
}

/// Two-layer attention over a binary drug graph (self-loops added).
pub fn drug_graph_attention(
    tape: &mut Tape,
    vars: &ModelVars,
    layers: &[GatLayerIds],
    memory: Var,
    adjacency: &Array2<f64>,
    cfg: &ModelConfig,
) -> Var {
    let graph = AttentionGraph::from_binary_adjacency(adjacency);
    let mut h = memory;
    for layer in layers {
        let heads: Vec<(Var, Var)> = layer
            .heads
            .iter()
            .map(|head| (vars.of(head.weight), vars.of(head.attn)))
            .collect();
        h = gat_layer(tape, h, &heads, &graph, cfg.leaky_slope, cfg.activation);
    }
    h
}

/// `M_ed = E_ehr + E_ddi . W_fuse^T`.
pub fn fuse_drug_views(
    tape: &mut Tape,
    e_ehr: Var,
    e_ddi: Var,
    w_fuse: Var,
) -> Result<Var> {
    let (r1, c1) = tape.value(e_ehr).dim();
    let (r2, c2) = tape.value(e_ddi).dim();
    let (fr, fc) = tape.value(w_fuse).dim();
    if (r1, c1) != (r2, c2) || fr != fc || fc != c1 {
        return Err(Error::Shape(format!(
            "fuse expects matching ({r1}x{c1}) views and a square {c1}-map, got ({r2}x{c2}) and ({fr}x{fc})"
        )));
    }
    let wt = tape.transpose(w_fuse);
    let mapped = tape.matmul(e_ddi, wt);
    Ok(tape.add(e_ehr, mapped))
}

/// Per-patient prescription history: query keys paired with the visit's
/// medication multi-hot. Strictly append-only in visit order; empty before
/// the second visit.
pub struct KeyValueMemory {
    keys: Vec<Var>,
    values: Vec<Vec<f64>>,
}

impl KeyValueMemory {
    pub fn new() -> Self {
        KeyValueMemory { keys: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Record visit `t` once it is fully observed: its query vector and its
    /// prescribed medication multi-hot.
    pub fn append(&mut self, query: Var, medications: Vec<f64>) {
        self.keys.push(query);
        self.values.push(medications);
    }

    /// Key matrix `(t-1, dim)` on the tape, or `None` when empty.
    pub fn key_matrix(&self, tape: &mut Tape) -> Option<Var> {
        if self.keys.is_empty() {
            return None;
        }
        let rows: Vec<Var> = self.keys.iter().map(|&k| tape.transpose(k)).collect();
        Some(tape.concat_rows(&rows))
    }

    /// Constant value matrix `(t-1, |M|)`.
    pub fn value_matrix(&self) -> Option<Array2<f64>> {
        if self.values.is_empty() {
            return None;
        }
        let cols = self.values[0].len();
        let mut m = Array2::zeros((self.values.len(), cols));
        for (i, row) in self.values.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        Some(m)
    }
}

impl Default for KeyValueMemory {
    fn default() -> Self {
        Self::new()
    }
}
