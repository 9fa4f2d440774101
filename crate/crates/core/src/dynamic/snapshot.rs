//! Per-visit snapshot graphs and their combination into a patient's
//! dynamic network.
//!
//! A snapshot's nodes are the visit's diagnoses and procedures plus the
//! *previous* visit's medications. Edges only carry weight between
//! medications and diagnoses/procedures; everything else is forbidden
//! except the guaranteed self-connections. Row-normalized conditional
//! probabilities become the adjacency used by the attention encoder.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ehr::records::PatientHistory;
use crate::ehr::vocab::CodeVocabulary;
use crate::error::{Error, Result};

use super::stats::CooccurrenceStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Diagnosis,
    Procedure,
    Medication,
}

/// Edge classification driving both the weight matrix and the attention
/// support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeState {
    /// No connection; excluded from the attention support entirely.
    Forbidden,
    /// Guaranteed self-connection on the diagonal.
    SelfLoop,
    /// Heterogeneous medication-diagnosis / medication-procedure pair.
    Allowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMask {
    states: Vec<EdgeState>,
    n: usize,
}

impl EdgeMask {
    pub fn state(&self, i: usize, j: usize) -> EdgeState {
        self.states[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Column indices of ALLOWED entries in row `i`.
    pub fn allowed_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.state(i, j) == EdgeState::Allowed).collect()
    }
}

/// Classify every ordered node pair. Self-connections sit on the diagonal,
/// medication-diagnosis and medication-procedure pairs are allowed in both
/// directions, and everything else (same-type pairs, diagnosis-procedure
/// pairs) is forbidden.
pub fn build_mask(types: &[NodeType]) -> EdgeMask {
    let n = types.len();
    let mut states = vec![EdgeState::Forbidden; n * n];
    for i in 0..n {
        for j in 0..n {
            states[i * n + j] = if i == j {
                EdgeState::SelfLoop
            } else {
                use NodeType::*;
                match (types[i], types[j]) {
                    (Medication, Diagnosis)
                    | (Diagnosis, Medication)
                    | (Medication, Procedure)
                    | (Procedure, Medication) => EdgeState::Allowed,
                    _ => EdgeState::Forbidden,
                }
            };
        }
    }
    EdgeMask { states, n }
}

/// One typed node of a snapshot: the code's vocabulary index plus its type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub code_index: usize,
    pub node_type: NodeType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotGraph {
    pub nodes: Vec<SnapshotNode>,
    pub mask: EdgeMask,
    /// Conditional-probability weights; zero on non-allowed positions.
    pub weights: Array2<f64>,
    /// Row-normalized adjacency consumed by the attention encoder.
    pub adjacency: Array2<f64>,
}

impl SnapshotGraph {
    /// Check the structural invariants: unit diagonal, zero on forbidden
    /// positions, allowed mass per row either 0 or 1.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for i in 0..n {
            if (self.adjacency[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Data(format!("diagonal entry ({i},{i}) is not 1")));
            }
            let mut allowed_sum = 0.0;
            let mut has_allowed = false;
            for j in 0..n {
                match self.mask.state(i, j) {
                    EdgeState::Forbidden => {
                        if self.adjacency[(i, j)] != 0.0 {
                            return Err(Error::Data(format!(
                                "forbidden entry ({i},{j}) carries weight"
                            )));
                        }
                    }
                    EdgeState::Allowed => {
                        has_allowed = true;
                        allowed_sum += self.adjacency[(i, j)];
                    }
                    EdgeState::SelfLoop => {}
                }
                let a = self.adjacency[(i, j)];
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Data(format!("entry ({i},{j}) = {a} outside [0,1]")));
                }
            }
            let target = if has_allowed { 1.0 } else { 0.0 };
            if (allowed_sum - target).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "row {i} allowed mass {allowed_sum}, expected {target}"
                )));
            }
        }
        Ok(())
    }

    pub fn medication_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.node_type == NodeType::Medication)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicNetwork {
    pub patient_id: String,
    pub snapshots: Vec<SnapshotGraph>,
}

/// Options shared by weight and adjacency construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct GraphOptions {
    /// Divide pair counts by the column node's singleton count instead of
    /// the row node's (sensitivity variant of the conditioning direction).
    pub flip_denominator: bool,
    /// Ablation: skip conditional probabilities entirely and emit the
    /// all-ones adjacency.
    pub uniform_adjacency: bool,
}

/// Conditional-probability weights between allowed heterogeneous pairs:
/// `P[i, j] = pair_count(i, j) / single_count(row node i)`, zero when the
/// denominator is zero and on non-allowed positions.
pub fn conditional_weights(
    nodes: &[SnapshotNode],
    stats: &CooccurrenceStats,
    flip_denominator: bool,
) -> Array2<f64> {
    let n = nodes.len();
    let mut weights = Array2::zeros((n, n));
    let single = |node: &SnapshotNode| -> u32 {
        match node.node_type {
            NodeType::Diagnosis => stats.diag_count[node.code_index],
            NodeType::Procedure => stats.proc_count[node.code_index],
            NodeType::Medication => stats.med_count[node.code_index],
        }
    };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pair = match (nodes[i].node_type, nodes[j].node_type) {
                (NodeType::Medication, NodeType::Diagnosis) => {
                    stats.med_diag_count(nodes[i].code_index, nodes[j].code_index)
                }
                (NodeType::Diagnosis, NodeType::Medication) => {
                    stats.med_diag_count(nodes[j].code_index, nodes[i].code_index)
                }
                (NodeType::Medication, NodeType::Procedure) => {
                    stats.med_proc_count(nodes[i].code_index, nodes[j].code_index)
                }
                (NodeType::Procedure, NodeType::Medication) => {
                    stats.med_proc_count(nodes[j].code_index, nodes[i].code_index)
                }
                _ => continue,
            };
            let denom = if flip_denominator { single(&nodes[j]) } else { single(&nodes[i]) };
            if denom > 0 {
                weights[(i, j)] = pair as f64 / denom as f64;
            }
        }
    }
    weights
}

/// Realize the +-infinity mask semantics: per row, softmax over the allowed
/// entries only (forbidden positions are excluded from the support rather
/// than subtracted), then overwrite the diagonal with the guaranteed 1.
pub fn snapshot_adjacency(weights: &Array2<f64>, mask: &EdgeMask) -> Result<Array2<f64>> {
    let n = mask.len();
    if weights.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "weights {:?} do not match mask size {n}",
            weights.dim()
        )));
    }
    if weights.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerics("non-finite conditional weight".into()));
    }
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        let allowed = mask.allowed_in_row(i);
        if !allowed.is_empty() {
            let max = allowed.iter().map(|&j| weights[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &j in &allowed {
                let e = (weights[(i, j)] - max).exp();
                adj[(i, j)] = e;
                total += e;
            }
            for &j in &allowed {
                adj[(i, j)] /= total;
            }
        }
        adj[(i, i)] = 1.0;
    }
    Ok(adj)
}

/// Build one snapshot per visit. Snapshot `t` holds `d_t`, `p_t` and the
/// previous visit's medications (none for the first visit).
pub fn build_dynamic_network(
    history: &PatientHistory,
    diag_vocab: &CodeVocabulary,
    proc_vocab: &CodeVocabulary,
    med_vocab: &CodeVocabulary,
    stats: &CooccurrenceStats,
    options: GraphOptions,
) -> Result<DynamicNetwork> {
    let mut snapshots = Vec::with_capacity(history.visits.len());
    for (t, visit) in history.visits.iter().enumerate() {
        let mut nodes: Vec<SnapshotNode> = Vec::new();
        for idx in diag_vocab.encode_indices(&visit.diagnoses)? {
            nodes.push(SnapshotNode { code_index: idx, node_type: NodeType::Diagnosis });
        }
        for idx in proc_vocab.encode_indices(&visit.procedures)? {
            nodes.push(SnapshotNode { code_index: idx, node_type: NodeType::Procedure });
        }
        if t > 0 {
            for idx in med_vocab.encode_indices(&history.visits[t - 1].medications)? {
                nodes.push(SnapshotNode { code_index: idx, node_type: NodeType::Medication });
            }
        }
        if nodes.is_empty() {
            return Err(Error::Data(format!(
                "patient {:?} visit {} has no nodes",
                history.patient_id,
                t + 1
            )));
        }
        let mask = build_mask(&nodes.iter().map(|n| n.node_type).collect::<Vec<_>>());
        let (weights, adjacency) = if options.uniform_adjacency {
            let n = nodes.len();
            (Array2::zeros((n, n)), Array2::ones((n, n)))
        } else {
            let weights = conditional_weights(&nodes, stats, options.flip_denominator);
            let adjacency = snapshot_adjacency(&weights, &mask)?;
            (weights, adjacency)
        };
        snapshots.push(SnapshotGraph { nodes, mask, weights, adjacency });
    }
    Ok(DynamicNetwork { patient_id: history.patient_id.clone(), snapshots })
}
