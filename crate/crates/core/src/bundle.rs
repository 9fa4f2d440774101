//! The prepared artifact bundle: everything training and evaluation need,
//! serialized with per-section content hashes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dynamic::stats::{collect_cooccurrence, CooccurrenceStats};
use crate::ehr::graphs::{build_ddi_adjacency, build_ehr_adjacency, DdiAdjacency};
use crate::ehr::io;
use crate::ehr::records::Cohort;
use crate::ehr::smiles::{parse_molecule, MoleculeGraph};
use crate::ehr::split::split_cohort;
use crate::ehr::synth::{generate_synthetic_cohort, SynthReport};
use crate::error::{Error, Result};
use crate::model::drugs::MoleculePlan;
use crate::model::layout::VocabSizes;
use crate::model::VocabHashes;
use crate::run::RunConfig;
use crate::util::fnv1a;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub seed: u64,
    pub source: String,
    pub cohort: Cohort,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub stats: CooccurrenceStats,
    pub a_ehr: Array2<f64>,
    pub ddi: DdiAdjacency,
    /// Per medication index; `None` when no molecule was available.
    pub molecules: Vec<Option<MoleculeGraph>>,
    pub dropped_unmapped_meds: usize,
    pub synth_report: Option<SynthReport>,
}

/// Section hashes plus headline counts; written next to the bundle.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub source: String,
    pub patients: usize,
    pub visits: usize,
    pub vocab_sizes: (usize, usize, usize),
    pub ddi_pairs_marked: usize,
    pub missing_molecules: usize,
    pub hashes: BTreeMap<String, u64>,
}

fn hash_json<T: Serialize>(value: &T) -> Result<u64> {
    let s = serde_json::to_string(value).map_err(|e| Error::Io(e.to_string()))?;
    Ok(fnv1a(s.as_bytes()))
}

impl Bundle {
    /// Build from a run config: either the synthetic generator or the
    /// user-supplied extract files.
    pub fn prepare(cfg: &RunConfig) -> Result<Bundle> {
        cfg.validate()?;
        let seed = cfg.seed;
        let (cohort, ddi_table, smiles_map, synth_report, source, dropped) =
            if let Some(synth) = &cfg.synthetic {
                let out = generate_synthetic_cohort(synth, seed)?;
                (out.cohort, out.ddi_table, out.smiles, Some(out.report), "synthetic", 0)
            } else {
                let paths = cfg.data.as_ref().expect("validated");
                let mut rows = io::parse_visit_file(&paths.visits)?;
                let mut dropped = 0;
                if let Some(mapping_path) = &paths.mapping {
                    let mapping = io::parse_mapping_file(mapping_path)?;
                    dropped = io::apply_med_mapping(&mut rows, &mapping);
                }
                let cohort = Cohort::from_raw_rows(rows)?;
                let ddi_table = io::parse_ddi_file(&paths.ddi)?;
                let smiles_map = io::parse_smiles_file(&paths.smiles)?;
                (cohort, ddi_table, smiles_map, None, "files", dropped)
            };

        let splits = split_cohort(&cohort, cfg.split.tuple(), seed)?;
        let train_ids: Vec<String> =
            splits.train.patients.iter().map(|p| p.patient_id.clone()).collect();
        let val_ids: Vec<String> =
            splits.val.patients.iter().map(|p| p.patient_id.clone()).collect();
        let test_ids: Vec<String> =
            splits.test.patients.iter().map(|p| p.patient_id.clone()).collect();

        // Knowledge artifacts come from the training split only.
        let stats = collect_cooccurrence(&splits.train);
        let a_ehr = build_ehr_adjacency(&splits.train);
        let top_k = cfg.data.as_ref().map(|d| d.top_k_severities).unwrap_or(40);
        let ddi = build_ddi_adjacency(&ddi_table, &cohort.med_vocab, top_k)?;

        let mut molecules: Vec<Option<MoleculeGraph>> = Vec::with_capacity(cohort.med_vocab.len());
        for code in cohort.med_vocab.codes() {
            match smiles_map.get(code) {
                Some(smiles) => molecules.push(Some(parse_molecule(smiles, code)?)),
                None => molecules.push(None),
            }
        }

        Ok(Bundle {
            version: BUNDLE_VERSION,
            seed,
            source: source.to_string(),
            cohort,
            train_ids,
            val_ids,
            test_ids,
            stats,
            a_ehr,
            ddi,
            molecules,
            dropped_unmapped_meds: dropped,
            synth_report,
        })
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let mut hashes = BTreeMap::new();
        hashes.insert("cohort".into(), self.cohort.content_hash());
        hashes.insert("vocab.diag".into(), self.cohort.diag_vocab.content_hash());
        hashes.insert("vocab.proc".into(), self.cohort.proc_vocab.content_hash());
        hashes.insert("vocab.med".into(), self.cohort.med_vocab.content_hash());
        hashes.insert("splits".into(), hash_json(&(&self.train_ids, &self.val_ids, &self.test_ids))?);
        hashes.insert("stats".into(), hash_json(&self.stats)?);
        hashes.insert("a_ehr".into(), hash_json(&self.a_ehr)?);
        hashes.insert("a_ddi".into(), hash_json(&self.ddi.matrix)?);
        hashes.insert("molecules".into(), hash_json(&self.molecules)?);
        Ok(Manifest {
            version: self.version,
            seed: self.seed,
            source: self.source.clone(),
            patients: self.cohort.patients.len(),
            visits: self.cohort.total_visits(),
            vocab_sizes: (
                self.cohort.diag_vocab.len(),
                self.cohort.proc_vocab.len(),
                self.cohort.med_vocab.len(),
            ),
            ddi_pairs_marked: self.ddi.matrix.iter().filter(|&&x| x != 0.0).count() / 2,
            missing_molecules: self.molecules.iter().filter(|m| m.is_none()).count(),
            hashes,
        })
    }

    pub fn vocab_sizes(&self) -> VocabSizes {
        VocabSizes {
            diag: self.cohort.diag_vocab.len(),
            proc: self.cohort.proc_vocab.len(),
            med: self.cohort.med_vocab.len(),
        }
    }

    pub fn vocab_hashes(&self) -> VocabHashes {
        VocabHashes::of(&self.cohort)
    }

    fn subset_by_ids(&self, ids: &[String]) -> Result<Cohort> {
        let index: BTreeMap<&str, usize> = self
            .cohort
            .patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patient_id.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Integrity(format!("split references unknown patient {id:?}")))?;
            rows.push(i);
        }
        Ok(self.cohort.subset(&rows))
    }

    pub fn train_cohort(&self) -> Result<Cohort> {
        self.subset_by_ids(&self.train_ids)
    }

    pub fn val_cohort(&self) -> Result<Cohort> {
        self.subset_by_ids(&self.val_ids)
    }

    pub fn test_cohort(&self) -> Result<Cohort> {
        self.subset_by_ids(&self.test_ids)
    }

    /// Message-passing plans per medication, vocabulary order.
    pub fn molecule_plans(&self) -> Result<Vec<Option<MoleculePlan>>> {
        self.molecules
            .iter()
            .map(|m| m.as_ref().map(MoleculePlan::from_graph).transpose())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Bundle> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut bundle: Bundle = serde_json::from_str(&text)
            .map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Integrity(format!(
                "bundle version {} unsupported (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        bundle.cohort.diag_vocab.rebuild_index();
        bundle.cohort.proc_vocab.rebuild_index();
        bundle.cohort.med_vocab.rebuild_index();
        Ok(bundle)
    }
}
