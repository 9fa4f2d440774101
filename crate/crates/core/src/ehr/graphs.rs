//! Static drug-pair knowledge: co-prescription and adverse-interaction
//! adjacency matrices over the medication vocabulary.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::records::Cohort;
use super::vocab::CodeVocabulary;

/// One known adverse interaction row. `severity_rank` is 1 for the most
/// severe interaction type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdiRow {
    pub drug_a: String,
    pub drug_b: String,
    pub severity_rank: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdiTable {
    pub rows: Vec<DdiRow>,
}

impl DdiTable {
    pub fn new(rows: Vec<DdiRow>) -> Result<Self> {
        for r in &rows {
            if r.drug_a == r.drug_b {
                return Err(Error::Data(format!(
                    "self-interaction pair {:?} rejected",
                    r.drug_a
                )));
            }
            if r.severity_rank == 0 {
                return Err(Error::Data("severity ranks start at 1".into()));
            }
        }
        Ok(DdiTable { rows })
    }
}

/// Binary co-prescription matrix: entry 1 iff the two drugs appear together
/// in at least one training visit. Symmetric, zero diagonal.
pub fn build_ehr_adjacency(train: &Cohort) -> Array2<f64> {
    let n = train.med_vocab.len();
    let mut adj = Array2::zeros((n, n));
    for patient in &train.patients {
        for visit in &patient.visits {
            let idx: Vec<usize> = visit
                .medications
                .iter()
                .filter_map(|m| train.med_vocab.index_of(m))
                .collect();
            for (a, &i) in idx.iter().enumerate() {
                for &j in idx.iter().skip(a + 1) {
                    adj[(i, j)] = 1.0;
                    adj[(j, i)] = 1.0;
                }
            }
        }
    }
    debug_assert!(symmetric_zero_diag(&adj));
    adj
}

/// Result of filtering a DDI table against a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdiAdjacency {
    pub matrix: Array2<f64>,
    /// Rows whose drugs were not both in the medication vocabulary.
    pub skipped_out_of_vocab: usize,
    /// Rows dropped because their severity rank fell outside the top-k.
    pub skipped_severity: usize,
}

/// Mark pairs whose severity rank is within the `top_k` most severe types
/// and whose drugs are both in vocabulary. Symmetric, zero diagonal.
pub fn build_ddi_adjacency(
    table: &DdiTable,
    med_vocab: &CodeVocabulary,
    top_k_severities: u32,
) -> Result<DdiAdjacency> {
    if top_k_severities == 0 {
        return Err(Error::Config("top_k_severities must be at least 1".into()));
    }
    let n = med_vocab.len();
    let mut matrix = Array2::zeros((n, n));
    let mut skipped_oov = 0;
    let mut skipped_sev = 0;
    for row in &table.rows {
        if row.severity_rank > top_k_severities {
            skipped_sev += 1;
            continue;
        }
        match (med_vocab.index_of(&row.drug_a), med_vocab.index_of(&row.drug_b)) {
            (Some(i), Some(j)) => {
                matrix[(i, j)] = 1.0;
                matrix[(j, i)] = 1.0;
            }
            _ => skipped_oov += 1,
        }
    }
    debug_assert!(symmetric_zero_diag(&matrix));
    Ok(DdiAdjacency { matrix, skipped_out_of_vocab: skipped_oov, skipped_severity: skipped_sev })
}

pub fn symmetric_zero_diag(m: &Array2<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        if m[(i, i)] != 0.0 {
            return false;
        }
        for j in 0..i {
            if m[(i, j)] != m[(j, i)] {
                return false;
            }
        }
    }
    true
}
