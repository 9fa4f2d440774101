//! EHR ingestion, vocabularies, synthetic cohorts and the static knowledge
//! artifacts (co-prescription matrix, interaction matrix, molecule graphs).

pub mod graphs;
pub mod io;
pub mod records;
pub mod smiles;
pub mod split;
pub mod synth;
pub mod vocab;

pub use graphs::{build_ddi_adjacency, build_ehr_adjacency, DdiAdjacency, DdiRow, DdiTable};
pub use records::{build_vocabularies, Cohort, PatientHistory, RawVisitRow, VisitRecord};
pub use smiles::{parse_molecule, BondKind, MoleculeGraph, ATOM_ELEMENTS};
pub use split::{split_cohort, CohortSplits};
pub use synth::{generate_synthetic_cohort, SynthConfig, SynthOutput, SynthReport};
pub use vocab::{CodeKind, CodeVocabulary};
