//! Visit records, patient histories and cohort assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fnv1a_strings;

use super::vocab::{CodeKind, CodeVocabulary};

/// One hospital visit: three code sets plus its 1-based position in the
/// patient's history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub ordinal: usize,
    pub diagnoses: Vec<String>,
    pub procedures: Vec<String>,
    pub medications: Vec<String>,
}

impl VisitRecord {
    pub fn new(
        ordinal: usize,
        mut diagnoses: Vec<String>,
        mut procedures: Vec<String>,
        mut medications: Vec<String>,
    ) -> Result<Self> {
        if diagnoses.is_empty() {
            return Err(Error::Ingestion(format!(
                "visit {ordinal} has no diagnosis codes"
            )));
        }
        for set in [&mut diagnoses, &mut procedures, &mut medications] {
            set.sort();
            set.dedup();
        }
        Ok(VisitRecord { ordinal, diagnoses, procedures, medications })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientHistory {
    pub patient_id: String,
    pub visits: Vec<VisitRecord>,
}

impl PatientHistory {
    pub fn new(patient_id: String, visits: Vec<VisitRecord>) -> Result<Self> {
        if visits.is_empty() {
            return Err(Error::Ingestion(format!(
                "patient {patient_id:?} has no visits"
            )));
        }
        for (i, v) in visits.iter().enumerate() {
            if v.ordinal != i + 1 {
                return Err(Error::Ingestion(format!(
                    "patient {patient_id:?}: visit ordinals must run 1..T, found {} at position {}",
                    v.ordinal,
                    i + 1
                )));
            }
        }
        Ok(PatientHistory { patient_id, visits })
    }

    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }
}

/// Cohort: patients plus the three vocabularies covering every code they use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientHistory>,
    pub diag_vocab: CodeVocabulary,
    pub proc_vocab: CodeVocabulary,
    pub med_vocab: CodeVocabulary,
}

impl Cohort {
    /// Assemble a cohort from parsed visit rows, building vocabularies from
    /// exactly the codes observed.
    pub fn from_raw_rows(rows: Vec<RawVisitRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Ingestion("no visit rows supplied".into()));
        }
        let (diag_vocab, proc_vocab, med_vocab) = build_vocabularies(&rows)?;

        let mut by_patient: BTreeMap<String, Vec<RawVisitRow>> = BTreeMap::new();
        for row in rows {
            by_patient.entry(row.patient_id.clone()).or_default().push(row);
        }
        let mut patients = Vec::new();
        for (pid, mut rows) in by_patient {
            rows.sort_by_key(|r| r.ordinal);
            let visits = rows
                .into_iter()
                .map(|r| VisitRecord::new(r.ordinal, r.diagnoses, r.procedures, r.medications))
                .collect::<Result<Vec<_>>>()?;
            patients.push(PatientHistory::new(pid, visits)?);
        }
        let cohort = Cohort { patients, diag_vocab, proc_vocab, med_vocab };
        cohort.check_codes_in_vocab()?;
        Ok(cohort)
    }

    pub fn check_codes_in_vocab(&self) -> Result<()> {
        for p in &self.patients {
            for v in &p.visits {
                for d in &v.diagnoses {
                    if !self.diag_vocab.contains(d) {
                        return Err(Error::Vocabulary(format!("diagnosis {d:?} not in vocabulary")));
                    }
                }
                for c in &v.procedures {
                    if !self.proc_vocab.contains(c) {
                        return Err(Error::Vocabulary(format!("procedure {c:?} not in vocabulary")));
                    }
                }
                for m in &v.medications {
                    if !self.med_vocab.contains(m) {
                        return Err(Error::Vocabulary(format!("medication {m:?} not in vocabulary")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_visits(&self) -> usize {
        self.patients.iter().map(|p| p.visit_count()).sum()
    }

    /// Hash over patient ids and visit contents; used in bundle manifests.
    pub fn content_hash(&self) -> u64 {
        let mut parts: Vec<String> = Vec::new();
        for p in &self.patients {
            parts.push(p.patient_id.clone());
            for v in &p.visits {
                parts.push(format!(
                    "{}|{}|{}|{}",
                    v.ordinal,
                    v.diagnoses.join(","),
                    v.procedures.join(","),
                    v.medications.join(",")
                ));
            }
        }
        fnv1a_strings(&parts)
    }

    /// New cohort containing only the given patient indices (order kept).
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
            diag_vocab: self.diag_vocab.clone(),
            proc_vocab: self.proc_vocab.clone(),
            med_vocab: self.med_vocab.clone(),
        }
    }
}

/// One line of the visit file before vocabulary validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawVisitRow {
    pub patient_id: String,
    pub ordinal: usize,
    pub diagnoses: Vec<String>,
    pub procedures: Vec<String>,
    pub medications: Vec<String>,
}

/// Build the three vocabularies over every code observed in the rows.
pub fn build_vocabularies(
    rows: &[RawVisitRow],
) -> Result<(CodeVocabulary, CodeVocabulary, CodeVocabulary)> {
    if rows.is_empty() {
        return Err(Error::Ingestion("cannot build vocabularies from zero rows".into()));
    }
    let diag = CodeVocabulary::from_codes(
        CodeKind::Diagnosis,
        rows.iter().flat_map(|r| r.diagnoses.iter().cloned()),
    );
    let proc = CodeVocabulary::from_codes(
        CodeKind::Procedure,
        rows.iter().flat_map(|r| r.procedures.iter().cloned()),
    );
    let med = CodeVocabulary::from_codes(
        CodeKind::Medication,
        rows.iter().flat_map(|r| r.medications.iter().cloned()),
    );
    Ok((diag, proc, med))
}
