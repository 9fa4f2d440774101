//! Seeded synthetic cohorts with planted, verifiable structure.
//!
//! The generator plants two kinds of signal:
//!
//! * cluster associations: each latent disease cluster ties its diagnosis
//!   codes to a fixed set of medications, emitted with a configurable
//!   conditional strength;
//! * interaction pairs: two medications that are both common overall but
//!   never co-occur, each cued by its own marker diagnosis.
//!
//! Emission uses a running-ratio schedule instead of independent coin
//! flips, so the realized corpus conditional `P(med | diag)` is always at
//! least the configured strength and within `1/seen` above it.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::seeded_rng;

use super::graphs::{DdiRow, DdiTable};
use super::records::{Cohort, RawVisitRow};

fn default_visits_min() -> usize { 1 }
fn default_visits_max() -> usize { 4 }
fn default_clusters() -> usize { 4 }
fn default_diags_per_cluster() -> usize { 5 }
fn default_meds_per_cluster() -> usize { 5 }
fn default_procs_per_cluster() -> usize { 3 }
fn default_assoc_strength() -> f64 { 0.9 }
fn default_marker_strength() -> f64 { 0.95 }
fn default_cluster_diag_rate() -> f64 { 0.75 }
fn default_noise_diag_max() -> usize { 2 }
fn default_noise_med_rate() -> f64 { 0.3 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_diag: usize,
    pub n_proc: usize,
    pub n_med: usize,
    #[serde(default = "default_visits_min")]
    pub visits_min: usize,
    #[serde(default = "default_visits_max")]
    pub visits_max: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_diags_per_cluster")]
    pub diags_per_cluster: usize,
    #[serde(default = "default_meds_per_cluster")]
    pub meds_per_cluster: usize,
    #[serde(default = "default_procs_per_cluster")]
    pub procs_per_cluster: usize,
    /// Target conditional strength of cluster diag -> med associations.
    #[serde(default = "default_assoc_strength")]
    pub assoc_strength: f64,
    /// Number of planted never-co-occurring interaction pairs.
    #[serde(default)]
    pub planted_ddi_pairs: usize,
    /// Conditional strength of marker diag -> interaction-pair med.
    #[serde(default = "default_marker_strength")]
    pub marker_strength: f64,
    /// Probability each cluster diagnosis appears in a visit.
    #[serde(default = "default_cluster_diag_rate")]
    pub cluster_diag_rate: f64,
    #[serde(default = "default_noise_diag_max")]
    pub noise_diag_max: usize,
    /// Probability a visit gains one random background medication.
    #[serde(default = "default_noise_med_rate")]
    pub noise_med_rate: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_patients == 0 {
            return fail("n_patients must be positive".into());
        }
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return fail("visit-count range must satisfy 1 <= min <= max".into());
        }
        if self.clusters == 0 {
            return fail("need at least one cluster".into());
        }
        if !(0.0..=1.0).contains(&self.assoc_strength)
            || !(0.0..=1.0).contains(&self.marker_strength)
            || !(0.0..=1.0).contains(&self.cluster_diag_rate)
            || !(0.0..=1.0).contains(&self.noise_med_rate)
        {
            return fail("strengths and rates must lie in [0, 1]".into());
        }
        let diag_needed = self.clusters * self.diags_per_cluster + 2 * self.planted_ddi_pairs;
        if diag_needed > self.n_diag {
            return fail(format!(
                "infeasible: {diag_needed} planted diagnosis codes exceed n_diag={}",
                self.n_diag
            ));
        }
        let med_needed = self.clusters * self.meds_per_cluster + 2 * self.planted_ddi_pairs;
        if med_needed > self.n_med {
            return fail(format!(
                "infeasible: {med_needed} planted medication codes exceed n_med={}",
                self.n_med
            ));
        }
        if self.planted_ddi_pairs > self.n_med * self.n_med.saturating_sub(1) / 2 {
            return fail("more planted pairs than medication pairs".into());
        }
        if self.clusters * self.procs_per_cluster > self.n_proc {
            return fail("cluster procedures exceed n_proc".into());
        }
        if self.diags_per_cluster == 0 {
            return fail("each cluster needs at least one diagnosis".into());
        }
        if self.n_diag > 9999 || self.n_proc > 9999 || self.n_med > 9999 {
            return fail("code spaces above 9999 are not supported".into());
        }
        Ok(())
    }
}

/// One planted diag -> med association with its realized statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedAssociation {
    pub diag: String,
    pub med: String,
    pub strength: f64,
    /// Visits containing the diagnosis.
    pub seen: usize,
    /// Visits containing both the diagnosis and the medication.
    pub emitted: usize,
}

impl PlantedAssociation {
    pub fn empirical(&self) -> Option<f64> {
        (self.seen > 0).then(|| self.emitted as f64 / self.seen as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthReport {
    pub associations: Vec<PlantedAssociation>,
    pub planted_pairs: Vec<(String, String)>,
    pub cluster_sizes: Vec<usize>,
    pub total_visits: usize,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub cohort: Cohort,
    pub ddi_table: DdiTable,
    pub smiles: BTreeMap<String, String>,
    pub report: SynthReport,
}

/// Running-ratio emission: emit while `emitted < strength * seen`, which
/// keeps `emitted/seen` in `[strength, strength + 1/seen]`.
struct Schedule {
    strength: f64,
    seen: usize,
    emitted: usize,
}

impl Schedule {
    fn new(strength: f64) -> Self {
        Schedule { strength, seen: 0, emitted: 0 }
    }

    fn observe(&mut self) -> bool {
        self.seen += 1;
        if (self.emitted as f64) < self.strength * self.seen as f64 {
            self.emitted += 1;
            true
        } else {
            false
        }
    }
}

/// Valid subset SMILES reused cyclically for the synthetic drug list.
const SMILES_TEMPLATES: [&str; 16] = [
    "C", "CC", "CCO", "CC(C)O", "C1CCCCC1", "c1ccccc1", "CC(=O)O", "C#N",
    "CCN(CC)CC", "C1CC1", "c1ccncc1", "OCC(O)CO", "CSC", "FC(F)F", "O=C=O", "CC(C)(C)O",
];

pub fn generate_synthetic_cohort(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = seeded_rng(seed, 100);

    let diag_code = |i: usize| format!("D{i:04}");
    let proc_code = |i: usize| format!("P{i:04}");
    let med_code = |i: usize| format!("M{i:04}");

    // Planted layout over the code spaces: cluster blocks first, then the
    // interaction-pair codes, the remainder is background noise.
    let c = config.clusters;
    let cluster_diag = |cl: usize, k: usize| cl * config.diags_per_cluster + k;
    let cluster_med = |cl: usize, k: usize| cl * config.meds_per_cluster + k;
    let cluster_proc = |cl: usize, k: usize| cl * config.procs_per_cluster + k;
    let marker_diag_base = c * config.diags_per_cluster;
    let pair_med_base = c * config.meds_per_cluster;
    let noise_diag_base = marker_diag_base + 2 * config.planted_ddi_pairs;
    let noise_med_base = pair_med_base + 2 * config.planted_ddi_pairs;

    // Association schedules: one per (cluster diag -> med) and one per
    // (marker diag -> pair med).
    let mut assoc: Vec<(usize, usize, Schedule)> = Vec::new();
    for cl in 0..c {
        for k in 0..config.diags_per_cluster {
            let med = cluster_med(cl, k % config.meds_per_cluster.max(1));
            if config.meds_per_cluster > 0 {
                assoc.push((cluster_diag(cl, k), med, Schedule::new(config.assoc_strength)));
            }
        }
    }
    let mut marker_assoc: Vec<(usize, usize, Schedule)> = Vec::new();
    for p in 0..config.planted_ddi_pairs {
        for side in 0..2 {
            marker_assoc.push((
                marker_diag_base + 2 * p + side,
                pair_med_base + 2 * p + side,
                Schedule::new(config.marker_strength),
            ));
        }
    }

    let mut cluster_sizes = vec![0usize; c];
    let mut rows: Vec<RawVisitRow> = Vec::new();
    let mut total_visits = 0;

    for pi in 0..config.n_patients {
        let cl = rng.random_range(0..c);
        cluster_sizes[cl] += 1;
        let visit_count = rng.random_range(config.visits_min..=config.visits_max);
        for ordinal in 1..=visit_count {
            total_visits += 1;
            let mut diags: Vec<usize> = Vec::new();
            for k in 0..config.diags_per_cluster {
                if rng.random_range(0.0..1.0) < config.cluster_diag_rate {
                    diags.push(cluster_diag(cl, k));
                }
            }
            if diags.is_empty() {
                diags.push(cluster_diag(cl, 0));
            }
            // Each planted pair shows exactly one marker per visit, so its
            // two medications can never be scheduled together.
            let mut marker_sides: Vec<usize> = Vec::new();
            for p in 0..config.planted_ddi_pairs {
                let side = usize::from(rng.random_bool(0.5));
                marker_sides.push(side);
                diags.push(marker_diag_base + 2 * p + side);
            }
            if noise_diag_base < config.n_diag && config.noise_diag_max > 0 {
                let extra = rng.random_range(0..=config.noise_diag_max);
                for _ in 0..extra {
                    diags.push(rng.random_range(noise_diag_base..config.n_diag));
                }
            }

            let mut procs: Vec<usize> = Vec::new();
            if config.procs_per_cluster > 0 {
                let n_proc_draw = rng.random_range(1..=config.procs_per_cluster);
                for _ in 0..n_proc_draw {
                    procs.push(cluster_proc(cl, rng.random_range(0..config.procs_per_cluster)));
                }
            }

            let mut meds: Vec<usize> = Vec::new();
            for (diag, med, schedule) in assoc.iter_mut() {
                if diags.contains(diag) && schedule.observe() {
                    meds.push(*med);
                }
            }
            for (p, side) in marker_sides.iter().enumerate() {
                let entry = &mut marker_assoc[2 * p + side];
                debug_assert_eq!(entry.0, marker_diag_base + 2 * p + side);
                if entry.2.observe() {
                    meds.push(entry.1);
                }
            }
            if noise_med_base < config.n_med && rng.random_range(0.0..1.0) < config.noise_med_rate {
                meds.push(rng.random_range(noise_med_base..config.n_med));
            }

            rows.push(RawVisitRow {
                patient_id: format!("S{pi:05}"),
                ordinal,
                diagnoses: diags.iter().map(|&i| diag_code(i)).collect(),
                procedures: procs.iter().map(|&i| proc_code(i)).collect(),
                medications: meds.iter().map(|&i| med_code(i)).collect(),
            });
        }
    }

    // Every code participates in the vocabularies even if unused in visits,
    // so matrix shapes depend only on the config.
    let mut pad_rows = rows;
    {
        let all_diags: Vec<String> = (0..config.n_diag).map(diag_code).collect();
        let all_procs: Vec<String> = (0..config.n_proc).map(proc_code).collect();
        let all_meds: Vec<String> = (0..config.n_med).map(med_code).collect();
        pad_rows.push(RawVisitRow {
            patient_id: "SVOCAB".into(),
            ordinal: 1,
            diagnoses: all_diags,
            procedures: all_procs,
            medications: all_meds,
        });
    }
    // The padding pseudo-visit would distort co-occurrence statistics, so it
    // is stripped back out of the patient list after vocabulary building.
    let mut cohort = Cohort::from_raw_rows(pad_rows)?;
    cohort.patients.retain(|p| p.patient_id != "SVOCAB");

    let ddi_rows: Vec<DdiRow> = (0..config.planted_ddi_pairs)
        .map(|p| DdiRow {
            drug_a: med_code(pair_med_base + 2 * p),
            drug_b: med_code(pair_med_base + 2 * p + 1),
            severity_rank: 1,
        })
        .collect();
    let planted_pairs: Vec<(String, String)> =
        ddi_rows.iter().map(|r| (r.drug_a.clone(), r.drug_b.clone())).collect();

    let smiles: BTreeMap<String, String> = (0..config.n_med)
        .map(|i| (med_code(i), SMILES_TEMPLATES[i % SMILES_TEMPLATES.len()].to_string()))
        .collect();

    let associations = assoc
        .iter()
        .map(|(d, m, s)| PlantedAssociation {
            diag: diag_code(*d),
            med: med_code(*m),
            strength: s.strength,
            seen: s.seen,
            emitted: s.emitted,
        })
        .chain(marker_assoc.iter().map(|(d, m, s)| PlantedAssociation {
            diag: diag_code(*d),
            med: med_code(*m),
            strength: s.strength,
            seen: s.seen,
            emitted: s.emitted,
        }))
        .collect();

    Ok(SynthOutput {
        cohort,
        ddi_table: DdiTable::new(ddi_rows)?,
        smiles,
        report: SynthReport { associations, planted_pairs, cluster_sizes, total_visits },
    })
}
