//! Readout attention over the drug memories, the output layer, and the
//! three training losses.

use ndarray::Array2;

use crate::nn::{Tape, Var};

use super::config::KvScoreMode;
use super::drugs::KeyValueMemory;
use super::encoder::ModelVars;
use super::layout::AffineIds;

/// Attention readout `memory^T softmax(memory . q)`, a `(dim, 1)` vector.
pub fn attention_readout(tape: &mut Tape, memory: Var, query: Var) -> Var {
    let scores = tape.matmul(memory, query);
    let attn = tape.softmax_col(scores);
    let mt = tape.transpose(memory);
    tape.matmul(mt, attn)
}

/// History readout: softmax over per-visit scores picks a weighted mix of
/// past prescriptions, which the fused memory lifts back to `(dim, 1)`.
/// Empty memory reads out zero.
pub fn history_readout(
    tape: &mut Tape,
    med_memory: Var,
    kv: &KeyValueMemory,
    query: Var,
    mode: KvScoreMode,
    prev_prescription: Option<&[f64]>,
) -> Var {
    let dim = tape.value(query).nrows();
    let (Some(keys), Some(values)) = (kv.key_matrix(tape), kv.value_matrix()) else {
        return tape.zeros(dim, 1);
    };
    let mut scores = tape.matmul(keys, query);
    if mode == KvScoreMode::KeyValue {
        // Additional match of stored prescriptions against the previous
        // visit's medication vector.
        if let Some(prev) = prev_prescription {
            let prev_col =
                Array2::from_shape_vec((prev.len(), 1), prev.to_vec()).expect("column");
            let value_score = values.dot(&prev_col);
            scores = tape.add_const(scores, value_score);
        }
    }
    let attn = tape.softmax_col(scores);
    let values_t = tape.leaf(values.t().to_owned());
    let mixed = tape.matmul(values_t, attn);
    let mt = tape.transpose(med_memory);
    tape.matmul(mt, mixed)
}

/// Probabilities: elementwise sigmoid of an affine map over the
/// concatenated query and readout vectors.
pub fn predict_probs(
    tape: &mut Tape,
    vars: &ModelVars,
    output: &AffineIds,
    query: Var,
    o_molecular: Var,
    o_fused: Var,
    o_history: Var,
) -> Var {
    let x = tape.concat_rows(&[query, o_molecular, o_fused, o_history]);
    let lin = tape.matmul(vars.of(output.weight), x);
    let aff = tape.add(lin, vars.of(output.bias));
    tape.sigmoid(aff)
}

/// Threshold probabilities into the recommended set (`>=` rule).
pub fn choose(probs: &Array2<f64>, threshold: f64) -> Vec<usize> {
    probs
        .column(0)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect()
}

pub const PROB_CLAMP: f64 = 1e-8;

/// Binary cross entropy over all drugs, probabilities clamped away from
/// {0, 1} for the logarithms.
pub fn bce_loss(tape: &mut Tape, probs: Var, truth: &Array2<f64>) -> Var {
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    tape.bce(clamped, truth.clone())
}

/// Margin loss over (positive, negative) drug pairs, normalized by the
/// number of drugs. Defined as zero when either side is empty.
pub fn hinge_loss(tape: &mut Tape, probs: Var, truth: &Array2<f64>) -> Var {
    let pos: Vec<usize> = truth
        .column(0)
        .iter()
        .enumerate()
        .filter(|(_, &y)| y != 0.0)
        .map(|(i, _)| i)
        .collect();
    let neg: Vec<usize> = truth
        .column(0)
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == 0.0)
        .map(|(i, _)| i)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return tape.zeros(1, 1);
    }
    let denom = truth.nrows() as f64;
    tape.pairwise_hinge(probs, pos, neg, denom)
}

/// Interaction penalty: the double sum `sum_ij A[i,j] p_i p_j` (both
/// orientations counted).
pub fn ddi_loss(tape: &mut Tape, probs: Var, a_ddi: &Array2<f64>) -> Var {
    tape.quad_form(probs, a_ddi.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.95, beta: 0.05, gamma: 0.1 }
    }
}

/// Scalar component values of one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub multi: f64,
    pub ddi: f64,
    pub total: f64,
}

/// Weighted total on the tape; returns the component vars plus the root.
pub struct LossVars {
    pub bce: Var,
    pub multi: Var,
    pub ddi: Var,
    pub total: Var,
}

pub fn total_loss(tape: &mut Tape, bce: Var, multi: Var, ddi: Var, w: LossWeights) -> LossVars {
    let a = tape.scale(bce, w.alpha);
    let b = tape.scale(multi, w.beta);
    let c = tape.scale(ddi, w.gamma);
    let ab = tape.add(a, b);
    let total = tape.add(ab, c);
    LossVars { bce, multi, ddi, total }
}
