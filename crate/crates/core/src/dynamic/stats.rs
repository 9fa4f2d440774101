//! Corpus co-occurrence statistics feeding the snapshot edge weights.
//!
//! Counts are corpus-level over training visits: how many visits contain a
//! code, and how many contain both members of a heterogeneous
//! (medication, diagnosis) or (medication, procedure) pair. Statistics are
//! collected from the training split only and frozen for validation/test.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ehr::records::Cohort;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CooccurrenceStats {
    pub diag_count: Vec<u32>,
    pub proc_count: Vec<u32>,
    pub med_count: Vec<u32>,
    /// Sorted `(med index, diag index, visits containing both)`.
    med_diag: Vec<(u32, u32, u32)>,
    /// Sorted `(med index, proc index, visits containing both)`.
    med_proc: Vec<(u32, u32, u32)>,
    pub total_visits: u32,
}

impl CooccurrenceStats {
    /// Assemble stats from explicit counts; pair lists are sorted here.
    pub fn from_counts(
        diag_count: Vec<u32>,
        proc_count: Vec<u32>,
        med_count: Vec<u32>,
        mut med_diag: Vec<(u32, u32, u32)>,
        mut med_proc: Vec<(u32, u32, u32)>,
        total_visits: u32,
    ) -> Self {
        med_diag.sort_unstable();
        med_proc.sort_unstable();
        CooccurrenceStats { diag_count, proc_count, med_count, med_diag, med_proc, total_visits }
    }

    pub fn med_diag_count(&self, med: usize, diag: usize) -> u32 {
        lookup(&self.med_diag, med as u32, diag as u32)
    }

    pub fn med_proc_count(&self, med: usize, proc: usize) -> u32 {
        lookup(&self.med_proc, med as u32, proc as u32)
    }
}

fn lookup(pairs: &[(u32, u32, u32)], a: u32, b: u32) -> u32 {
    pairs
        .binary_search_by(|&(x, y, _)| (x, y).cmp(&(a, b)))
        .map(|i| pairs[i].2)
        .unwrap_or(0)
}

/// Count single- and pair-occurrences over all training visits.
pub fn collect_cooccurrence(train: &Cohort) -> CooccurrenceStats {
    let mut diag_count = vec![0u32; train.diag_vocab.len()];
    let mut proc_count = vec![0u32; train.proc_vocab.len()];
    let mut med_count = vec![0u32; train.med_vocab.len()];
    let mut med_diag: HashMap<(u32, u32), u32> = HashMap::new();
    let mut med_proc: HashMap<(u32, u32), u32> = HashMap::new();
    let mut total_visits = 0;

    for patient in &train.patients {
        for visit in &patient.visits {
            total_visits += 1;
            let diags = train.diag_vocab.encode_indices(&visit.diagnoses).unwrap_or_default();
            let procs = train.proc_vocab.encode_indices(&visit.procedures).unwrap_or_default();
            let meds = train.med_vocab.encode_indices(&visit.medications).unwrap_or_default();
            for &d in &diags {
                diag_count[d] += 1;
            }
            for &p in &procs {
                proc_count[p] += 1;
            }
            for &m in &meds {
                med_count[m] += 1;
                for &d in &diags {
                    *med_diag.entry((m as u32, d as u32)).or_insert(0) += 1;
                }
                for &p in &procs {
                    *med_proc.entry((m as u32, p as u32)).or_insert(0) += 1;
                }
            }
        }
    }

    let mut med_diag: Vec<(u32, u32, u32)> =
        med_diag.into_iter().map(|((m, d), c)| (m, d, c)).collect();
    med_diag.sort_unstable();
    let mut med_proc: Vec<(u32, u32, u32)> =
        med_proc.into_iter().map(|((m, p), c)| (m, p, c)).collect();
    med_proc.sort_unstable();

    CooccurrenceStats { diag_count, proc_count, med_count, med_diag, med_proc, total_visits }
}
