//! Shared fixtures for the integration suites: a deterministic toy world
//! small enough for finite differences yet exercising every component.
#![allow(dead_code)]

pub mod gradcheck;

use std::collections::BTreeMap;

use dnmdr_core::dynamic::snapshot::{build_dynamic_network, DynamicNetwork, GraphOptions};
use dnmdr_core::dynamic::stats::{collect_cooccurrence, CooccurrenceStats};
use dnmdr_core::ehr::graphs::{build_ddi_adjacency, build_ehr_adjacency, DdiRow, DdiTable};
use dnmdr_core::ehr::records::{Cohort, RawVisitRow};
use dnmdr_core::ehr::smiles::parse_molecule;
use dnmdr_core::model::{ModelConfig, MoleculePlan, VocabSizes};
use ndarray::Array2;

pub struct ToyWorld {
    pub cohort: Cohort,
    pub stats: CooccurrenceStats,
    pub a_ehr: Array2<f64>,
    pub a_ddi: Array2<f64>,
    pub plans: Vec<Option<MoleculePlan>>,
    pub sizes: VocabSizes,
}

impl ToyWorld {
    pub fn network_for(&self, patient: usize, options: GraphOptions) -> DynamicNetwork {
        build_dynamic_network(
            &self.cohort.patients[patient],
            &self.cohort.diag_vocab,
            &self.cohort.proc_vocab,
            &self.cohort.med_vocab,
            &self.stats,
            options,
        )
        .unwrap()
    }

    pub fn med_multihots(&self, patient: usize) -> Vec<Vec<f64>> {
        self.cohort.patients[patient]
            .visits
            .iter()
            .map(|v| self.cohort.med_vocab.encode_multihot(&v.medications).unwrap())
            .collect()
    }
}

/// Six medications (one without a molecule so the fallback row trains),
/// molecules covering single, double, triple and aromatic bonds, a patient
/// with two visits, and nonempty co-occurrence/interaction graphs.
pub fn toy_world() -> ToyWorld {
    let rows = vec![
        RawVisitRow {
            patient_id: "p0".into(),
            ordinal: 1,
            diagnoses: vec!["g0".into(), "g1".into()],
            procedures: vec!["x0".into()],
            medications: vec!["m0".into(), "m2".into(), "m4".into()],
        },
        RawVisitRow {
            patient_id: "p0".into(),
            ordinal: 2,
            diagnoses: vec!["g1".into(), "g2".into()],
            procedures: vec!["x1".into()],
            medications: vec!["m1".into(), "m3".into()],
        },
        RawVisitRow {
            patient_id: "p1".into(),
            ordinal: 1,
            diagnoses: vec!["g0".into()],
            procedures: vec![],
            medications: vec!["m1".into(), "m5".into()],
        },
        RawVisitRow {
            patient_id: "p2".into(),
            ordinal: 1,
            diagnoses: vec!["g2".into()],
            procedures: vec!["x0".into(), "x1".into()],
            medications: vec!["m0".into(), "m5".into()],
        },
    ];
    let cohort = Cohort::from_raw_rows(rows).unwrap();
    let stats = collect_cooccurrence(&cohort);
    let a_ehr = build_ehr_adjacency(&cohort);
    let ddi_table = DdiTable::new(vec![
        DdiRow { drug_a: "m0".into(), drug_b: "m3".into(), severity_rank: 1 },
        DdiRow { drug_a: "m1".into(), drug_b: "m4".into(), severity_rank: 2 },
    ])
    .unwrap();
    let a_ddi = build_ddi_adjacency(&ddi_table, &cohort.med_vocab, 40).unwrap().matrix;

    // m5 deliberately has no molecule.
    let smiles: BTreeMap<&str, Option<&str>> = [
        ("m0", Some("CCO")),
        ("m1", Some("CC(=O)N")),
        ("m2", Some("C#N")),
        ("m3", Some("c1ccccc1")),
        ("m4", Some("C1CC1")),
        ("m5", None),
    ]
    .into_iter()
    .collect();
    let plans: Vec<Option<MoleculePlan>> = cohort
        .med_vocab
        .codes()
        .iter()
        .map(|code| {
            smiles[code.as_str()]
                .map(|s| MoleculePlan::from_graph(&parse_molecule(s, code).unwrap()).unwrap())
        })
        .collect();

    let sizes = VocabSizes {
        diag: cohort.diag_vocab.len(),
        proc: cohort.proc_vocab.len(),
        med: cohort.med_vocab.len(),
    };
    ToyWorld { cohort, stats, a_ehr, a_ddi, plans, sizes }
}

pub fn toy_model_config(dim: usize) -> ModelConfig {
    ModelConfig { dim, dropout: 0.0, ..Default::default() }
}
