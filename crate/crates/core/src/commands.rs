//! Command implementations behind the CLI: prepare, train, evaluate,
//! ablate, recommend, sweep and the two dump commands. All artifacts land
//! under the chosen output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, Manifest};
use crate::dynamic::snapshot::{build_dynamic_network, GraphOptions, NodeType};
use crate::ehr::records::{Cohort, PatientHistory, RawVisitRow, VisitRecord};
use crate::error::{Error, Result};
use crate::metrics::{compute_all, report_from_rounds, MetricOptions, MetricReport, VisitEval};
use crate::model::checkpoint::Checkpoint;
use crate::model::config::AblationFlags;
use crate::model::forward::drug_memories;
use crate::model::predictor::choose;
use crate::model::train::{EncodedCohort, EpochLog, Trainer};
use crate::nn::Tape;
use crate::run::RunConfig;

pub fn bundle_path(out: &Path) -> PathBuf {
    out.join("bundle.json")
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoint.json")
}

pub fn last_checkpoint_path(out: &Path) -> PathBuf {
    out.join("last.json")
}

pub fn epoch_log_path(out: &Path) -> PathBuf {
    out.join("epochs.jsonl")
}

pub fn metrics_path(out: &Path) -> PathBuf {
    out.join("metrics.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn graph_options(cfg: &RunConfig) -> GraphOptions {
    GraphOptions {
        flip_denominator: cfg.model.flip_denominator,
        uniform_adjacency: cfg.model.ablation.prob,
    }
}

fn load_bundle(out: &Path) -> Result<Bundle> {
    let path = bundle_path(out);
    if !path.exists() {
        return Err(Error::Io(format!(
            "{} not found; run `prepare` first",
            path.display()
        )));
    }
    Bundle::load(&path)
}

// ---------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------

/// Build the artifact bundle and write it with its manifest.
pub fn cmd_prepare(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    ensure_out(out)?;
    let bundle = Bundle::prepare(cfg)?;
    let manifest = bundle.manifest()?;
    bundle.save(&bundle_path(out))?;
    write_json(&manifest_path(out), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_jaccard: f64,
    pub variant: String,
    pub logs: Vec<EpochLog>,
}

pub struct FitResult {
    pub trainer: Trainer,
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_jaccard: f64,
    pub logs: Vec<EpochLog>,
}

/// Shared training procedure: one optimizer step per patient, model
/// selection by validation Jaccard, early stop on patience.
pub fn fit(cfg: &RunConfig, bundle: &Bundle, resume: Option<Checkpoint>) -> Result<FitResult> {
    cfg.validate()?;
    let options = graph_options(cfg);
    let plans = bundle.molecule_plans()?;
    let train_cohort = bundle.train_cohort()?;
    let val_cohort = bundle.val_cohort()?;
    let train_data = EncodedCohort::build(&train_cohort, &bundle.stats, options)?;
    let val_data = EncodedCohort::build(&val_cohort, &bundle.stats, options)?;

    let mut trainer = match resume {
        Some(ckpt) => {
            ckpt.check_hashes(bundle.vocab_hashes())?;
            ckpt.into_trainer(cfg.train.lr, cfg.seed)?
        }
        None => Trainer::new(cfg.model.clone(), bundle.vocab_sizes(), cfg.train.lr, cfg.seed)?,
    };

    let hashes = bundle.vocab_hashes();
    let mut logs = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0usize;

    while trainer.epochs_done < cfg.train.epochs {
        let log = trainer.train_epoch(
            &train_data,
            &plans,
            &bundle.a_ehr,
            &bundle.ddi.matrix,
            cfg.loss,
        )?;
        let report = trainer.evaluate(
            &val_data,
            &plans,
            &bundle.a_ehr,
            &bundle.ddi.matrix,
            MetricOptions::default(),
            1,
            cfg.seed,
        )?;
        let val_jaccard = report.jaccard.mean;
        logs.push(log);
        if val_jaccard > best_val {
            best_val = val_jaccard;
            best_epoch = trainer.epochs_done;
            best = Some(Checkpoint::from_trainer(&trainer, hashes, best_val, false));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.train.patience {
                break;
            }
        }
    }
    let best = best.ok_or_else(|| Error::Data("no training epochs ran".into()))?;
    Ok(FitResult { trainer, best, best_epoch, best_val_jaccard: best_val, logs })
}

/// Train, keep the best-validation checkpoint, append epoch logs.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    ensure_out(out)?;
    let bundle = load_bundle(out)?;
    let resume_ckpt = resume.map(Checkpoint::load).transpose()?;
    let resuming = resume_ckpt.is_some();
    let result = fit(cfg, &bundle, resume_ckpt)?;

    result.best.save(&checkpoint_path(out))?;
    let last = Checkpoint::from_trainer(
        &result.trainer,
        bundle.vocab_hashes(),
        result.best_val_jaccard,
        cfg.train.keep_optimizer,
    );
    last.save(&last_checkpoint_path(out))?;

    let mut lines = String::new();
    for log in &result.logs {
        let line = serde_json::to_string(log).map_err(|e| Error::Io(e.to_string()))?;
        lines.push_str(&line);
        lines.push('\n');
    }
    if resuming && epoch_log_path(out).exists() {
        let mut existing = std::fs::read_to_string(epoch_log_path(out))?;
        existing.push_str(&lines);
        std::fs::write(epoch_log_path(out), existing)?;
    } else {
        std::fs::write(epoch_log_path(out), lines)?;
    }

    Ok(TrainSummary {
        epochs_run: result.trainer.epochs_done,
        best_epoch: result.best_epoch,
        best_val_jaccard: result.best_val_jaccard,
        variant: cfg.model.ablation.variant_name().to_string(),
        logs: result.logs,
    })
}

// ---------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------

/// Evaluate a checkpoint on the test split. With `eval.seed_rounds > 1`,
/// retrains across seeds and reports dispersion across those runs instead
/// of bootstrap resampling.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<MetricReport> {
    ensure_out(out)?;
    let bundle = load_bundle(out)?;
    let opts = MetricOptions { conventional_pr: cfg.eval.conventional_pr };
    let plans = bundle.molecule_plans()?;
    let options = graph_options(cfg);
    let test_cohort = bundle.test_cohort()?;
    let test_data = EncodedCohort::build(&test_cohort, &bundle.stats, options)?;

    let report = if cfg.eval.seed_rounds > 1 {
        let mut rows = Vec::with_capacity(cfg.eval.seed_rounds);
        for k in 0..cfg.eval.seed_rounds {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed + k as u64;
            let fitted = fit(&run_cfg, &bundle, None)?;
            let trainer = fitted.best.into_trainer(run_cfg.train.lr, run_cfg.seed)?;
            let per_patient = trainer.evaluate_visits(
                &test_data,
                &plans,
                &bundle.a_ehr,
                &bundle.ddi.matrix,
            )?;
            let flat: Vec<VisitEval> = per_patient.into_iter().flatten().collect();
            rows.push(compute_all(&flat, &bundle.ddi.matrix, opts));
        }
        report_from_rounds(&rows)
    } else {
        let ckpt = Checkpoint::load(checkpoint)?;
        ckpt.check_hashes(bundle.vocab_hashes())?;
        let trainer = ckpt.into_trainer(cfg.train.lr, cfg.seed)?;
        trainer.evaluate(
            &test_data,
            &plans,
            &bundle.a_ehr,
            &bundle.ddi.matrix,
            opts,
            cfg.eval.rounds,
            cfg.seed,
        )?
    };
    write_json(&metrics_path(out), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------

/// Structural evidence that a variant actually differs architecturally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureChecks {
    pub adjacency_all_ones: bool,
    pub weights_equal_initial: bool,
    pub molecular_memory_from_mpnn: bool,
    pub fused_memory_used: bool,
    pub snapshot_encoder_used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricReport,
    pub structure: StructureChecks,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn structure_checks(
    trainer: &Trainer,
    bundle: &Bundle,
    data: &EncodedCohort,
    plans: &[Option<crate::model::MoleculePlan>],
) -> Result<StructureChecks> {
    let (_, trace) = trainer.predict_patient(
        &data.networks[0],
        &data.med_multihots[0],
        plans,
        &bundle.a_ehr,
        &bundle.ddi.matrix,
        true,
    )?;
    let trace = trace.expect("trace requested");
    let adjacency_all_ones = !trace.adjacencies.is_empty()
        && trace
            .adjacencies
            .iter()
            .all(|a| a.iter().all(|&x| x == 1.0));
    let weights_equal_initial = !trace.evolved_weights.is_empty()
        && trace
            .evolved_weights
            .iter()
            .all(|per_layer| per_layer.iter().all(|w| w.iter().all(|&x| x == 1.0)));
    Ok(StructureChecks {
        adjacency_all_ones,
        weights_equal_initial,
        molecular_memory_from_mpnn: trace.molecular_memory_from_mpnn,
        fused_memory_used: trace.fused_memory_used,
        snapshot_encoder_used: trace.snapshot_encoder_used,
    })
}

/// Train and evaluate the five component-removal variants plus the full
/// model with a shared seed.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationReport> {
    ensure_out(out)?;
    let bundle = load_bundle(out)?;
    let mut rows = Vec::new();
    for (name, flags) in AblationFlags::all_variants() {
        let mut variant_cfg = cfg.clone();
        variant_cfg.model.ablation = flags;
        let fitted = fit(&variant_cfg, &bundle, None)?;
        let trainer = fitted.best.into_trainer(variant_cfg.train.lr, variant_cfg.seed)?;
        let options = graph_options(&variant_cfg);
        let plans = bundle.molecule_plans()?;
        let test_cohort = bundle.test_cohort()?;
        let test_data = EncodedCohort::build(&test_cohort, &bundle.stats, options)?;
        let report = trainer.evaluate(
            &test_data,
            &plans,
            &bundle.a_ehr,
            &bundle.ddi.matrix,
            MetricOptions { conventional_pr: cfg.eval.conventional_pr },
            cfg.eval.rounds,
            cfg.seed,
        )?;
        let structure = structure_checks(&trainer, &bundle, &test_data, &plans)?;
        rows.push(AblationRow { variant: name.to_string(), report, structure });
    }
    let report = AblationReport { rows };
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------
// recommend
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recommendation {
    pub patient_id: String,
    pub visits: usize,
    /// `(medication code, probability)` sorted by descending probability.
    pub items: Vec<(String, f64)>,
}

impl Recommendation {
    /// `CODE(0.98895), CODE(0.98809), ...` formatting, 5 decimals.
    pub fn formatted(&self) -> String {
        let mut s = String::new();
        for (i, (code, p)) in self.items.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{code}({p:.5})");
        }
        s
    }
}

/// Rank medications for the last visit of the supplied patient history.
pub fn cmd_recommend(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    patient_file: &Path,
) -> Result<Recommendation> {
    let bundle = load_bundle(out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check_hashes(bundle.vocab_hashes())?;
    let trainer = ckpt.into_trainer(cfg.train.lr, cfg.seed)?;

    let text = std::fs::read_to_string(patient_file)
        .map_err(|e| Error::Io(format!("{}: {e}", patient_file.display())))?;
    if text.lines().all(|l| l.trim().is_empty() || l.trim_start().starts_with('#')) {
        return Err(Error::Data(format!(
            "{}: empty patient history",
            patient_file.display()
        )));
    }
    let rows = crate::ehr::io::parse_visit_file(patient_file)?;
    let patient_ids: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.patient_id.as_str()).collect();
    if patient_ids.len() != 1 {
        return Err(Error::Data(format!(
            "patient file must describe exactly one patient, found {}",
            patient_ids.len()
        )));
    }
    let history = history_from_rows(rows)?;

    // Every code must be in vocabulary; collect all offenders for the
    // diagnostic rather than stopping at the first.
    let mut unknown: Vec<String> = Vec::new();
    for v in &history.visits {
        for d in &v.diagnoses {
            if !bundle.cohort.diag_vocab.contains(d) {
                unknown.push(format!("diagnosis {d}"));
            }
        }
        for p in &v.procedures {
            if !bundle.cohort.proc_vocab.contains(p) {
                unknown.push(format!("procedure {p}"));
            }
        }
        for m in &v.medications {
            if !bundle.cohort.med_vocab.contains(m) {
                unknown.push(format!("medication {m}"));
            }
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::Vocabulary(format!(
            "codes outside the trained vocabulary: {}",
            unknown.join(", ")
        )));
    }

    let options = graph_options(cfg);
    let network = build_dynamic_network(
        &history,
        &bundle.cohort.diag_vocab,
        &bundle.cohort.proc_vocab,
        &bundle.cohort.med_vocab,
        &bundle.stats,
        options,
    )?;
    let meds: Vec<Vec<f64>> = history
        .visits
        .iter()
        .map(|v| bundle.cohort.med_vocab.encode_multihot(&v.medications))
        .collect::<Result<_>>()?;
    let plans = bundle.molecule_plans()?;
    let (probs, _) = trainer.predict_patient(
        &network,
        &meds,
        &plans,
        &bundle.a_ehr,
        &bundle.ddi.matrix,
        false,
    )?;
    let last = probs.last().expect("at least one visit");
    let chosen = choose(last, cfg.model.threshold);
    let mut items: Vec<(String, f64)> = chosen
        .into_iter()
        .map(|i| (bundle.cohort.med_vocab.code(i).to_string(), last[(i, 0)]))
        .collect();
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    Ok(Recommendation {
        patient_id: history.patient_id.clone(),
        visits: history.visits.len(),
        items,
    })
}

fn history_from_rows(mut rows: Vec<RawVisitRow>) -> Result<PatientHistory> {
    rows.sort_by_key(|r| r.ordinal);
    let patient_id = rows[0].patient_id.clone();
    let visits = rows
        .into_iter()
        .map(|r| VisitRecord::new(r.ordinal, r.diagnoses, r.procedures, r.medications))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Data(e.to_string()))?;
    PatientHistory::new(patient_id, visits).map_err(|e| Error::Data(e.to_string()))
}

// ---------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Dim,
    Gamma,
    Visits,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepAxis> {
        match s {
            "dim" => Ok(SweepAxis::Dim),
            "gamma" => Ok(SweepAxis::Gamma),
            "visits" => Ok(SweepAxis::Visits),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?}; expected dim, gamma or visits"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

pub const DIM_GRID: [usize; 4] = [64, 128, 256, 512];
pub const GAMMA_GRID: [f64; 3] = [0.0, 0.5, 2.0];

/// One train/evaluate per grid point with a shared seed; the visit axis
/// trains once and buckets test visits by their position.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path, axis: SweepAxis) -> Result<SweepReport> {
    ensure_out(out)?;
    let bundle = load_bundle(out)?;
    let opts = MetricOptions { conventional_pr: cfg.eval.conventional_pr };
    let mut rows = Vec::new();

    let eval_point = |point_cfg: &RunConfig| -> Result<MetricReport> {
        let fitted = fit(point_cfg, &bundle, None)?;
        let trainer = fitted.best.into_trainer(point_cfg.train.lr, point_cfg.seed)?;
        let options = graph_options(point_cfg);
        let plans = bundle.molecule_plans()?;
        let test_cohort = bundle.test_cohort()?;
        let test_data = EncodedCohort::build(&test_cohort, &bundle.stats, options)?;
        trainer.evaluate(
            &test_data,
            &plans,
            &bundle.a_ehr,
            &bundle.ddi.matrix,
            opts,
            cfg.eval.rounds,
            cfg.seed,
        )
    };

    match axis {
        SweepAxis::Dim => {
            for dim in DIM_GRID {
                let mut point = cfg.clone();
                point.model.dim = dim;
                rows.push(SweepRow { label: format!("dim={dim}"), report: eval_point(&point)? });
            }
        }
        SweepAxis::Gamma => {
            for gamma in GAMMA_GRID {
                let mut point = cfg.clone();
                point.loss.gamma = gamma;
                rows.push(SweepRow {
                    label: format!("gamma={gamma}"),
                    report: eval_point(&point)?,
                });
            }
        }
        SweepAxis::Visits => {
            let fitted = fit(cfg, &bundle, None)?;
            let trainer = fitted.best.into_trainer(cfg.train.lr, cfg.seed)?;
            let options = graph_options(cfg);
            let plans = bundle.molecule_plans()?;
            let test_cohort = bundle.test_cohort()?;
            let test_data = EncodedCohort::build(&test_cohort, &bundle.stats, options)?;
            let per_patient = trainer.evaluate_visits(
                &test_data,
                &plans,
                &bundle.a_ehr,
                &bundle.ddi.matrix,
            )?;
            let max_t = per_patient.iter().map(Vec::len).max().unwrap_or(0).min(5);
            for t in 1..=max_t {
                let bucket: Vec<VisitEval> = per_patient
                    .iter()
                    .filter_map(|vs| vs.get(t - 1).cloned())
                    .collect();
                if bucket.is_empty() {
                    continue;
                }
                let row = compute_all(&bucket, &bundle.ddi.matrix, opts);
                rows.push(SweepRow {
                    label: format!("visits={t}"),
                    report: report_from_rounds(&[row]),
                });
            }
        }
    }
    let report = SweepReport { axis, rows };
    write_json(&out.join("sweep.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------
// dumps
// ---------------------------------------------------------------------

/// Write per-patient snapshot dumps (node list plus dense adjacency rows).
pub fn cmd_dump_graphs(cfg: &RunConfig, out: &Path) -> Result<usize> {
    ensure_out(out)?;
    let bundle = load_bundle(out)?;
    let dir = out.join("graphs");
    std::fs::create_dir_all(&dir)?;
    let options = graph_options(cfg);
    let mut written = 0;
    for patient in &bundle.cohort.patients {
        let network = build_dynamic_network(
            patient,
            &bundle.cohort.diag_vocab,
            &bundle.cohort.proc_vocab,
            &bundle.cohort.med_vocab,
            &bundle.stats,
            options,
        )?;
        let mut text = format!("patient\t{}\n", patient.patient_id);
        for (t, snap) in network.snapshots.iter().enumerate() {
            let _ = writeln!(text, "snapshot\t{}", t + 1);
            for (i, node) in snap.nodes.iter().enumerate() {
                let (vocab, label) = match node.node_type {
                    NodeType::Diagnosis => (&bundle.cohort.diag_vocab, "diagnosis"),
                    NodeType::Procedure => (&bundle.cohort.proc_vocab, "procedure"),
                    NodeType::Medication => (&bundle.cohort.med_vocab, "medication"),
                };
                let _ = writeln!(text, "node\t{i}\t{label}\t{}", vocab.code(node.code_index));
            }
            for i in 0..snap.nodes.len() {
                let row: Vec<String> = (0..snap.nodes.len())
                    .map(|j| format!("{:.9}", snap.adjacency[(i, j)]))
                    .collect();
                let _ = writeln!(text, "adj\t{}", row.join(" "));
            }
        }
        std::fs::write(dir.join(format!("{}.txt", patient.patient_id)), text)?;
        written += 1;
    }
    Ok(written)
}

/// Write the molecular and fused drug-memory rows for inspection.
pub fn cmd_dump_drug_memory(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<PathBuf> {
    ensure_out(out)?;
    let bundle = load_bundle(out)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check_hashes(bundle.vocab_hashes())?;
    let trainer = ckpt.into_trainer(cfg.train.lr, cfg.seed)?;
    let plans = bundle.molecule_plans()?;
    let assets = trainer.assets(&plans, &bundle.a_ehr, &bundle.ddi.matrix);

    let mut tape = Tape::new();
    let vars = crate::model::encoder::leaf_params(&mut tape, &trainer.store);
    let (molecular, fused) = drug_memories(&mut tape, &vars, &assets, None)?;

    let mut text = String::new();
    for (section, var) in [("molecular", molecular), ("fused", fused)] {
        let m = tape.value(var);
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.9}", m[(i, j)])).collect();
            let _ = writeln!(
                text,
                "{section}\t{}\t{}",
                bundle.cohort.med_vocab.code(i),
                row.join(" ")
            );
        }
    }
    let path = out.join("drug_memory.txt");
    std::fs::write(&path, text)?;
    Ok(path)
}

// ---------------------------------------------------------------------
// shared: frequency baseline used by the synthetic acceptance check
// ---------------------------------------------------------------------

/// Baseline that always predicts the k most frequent training drugs, with
/// k the mean training prescription size (rounded).
pub fn frequency_baseline_sets(train: &Cohort) -> std::collections::BTreeSet<usize> {
    let m = train.med_vocab.len();
    let mut counts = vec![0usize; m];
    let mut total_meds = 0usize;
    let mut total_visits = 0usize;
    for p in &train.patients {
        for v in &p.visits {
            total_visits += 1;
            for med in &v.medications {
                if let Some(i) = train.med_vocab.index_of(med) {
                    counts[i] += 1;
                    total_meds += 1;
                }
            }
        }
    }
    let k = if total_visits == 0 {
        0
    } else {
        (total_meds as f64 / total_visits as f64).round() as usize
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.into_iter().take(k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::synth::SynthConfig;

    fn quick_cfg(out_seed: u64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seed = out_seed;
        cfg.synthetic = Some(SynthConfig {
            n_patients: 24,
            n_diag: 24,
            n_proc: 8,
            n_med: 20,
            visits_min: 1,
            visits_max: 3,
            clusters: 2,
            diags_per_cluster: 4,
            meds_per_cluster: 4,
            procs_per_cluster: 2,
            assoc_strength: 0.9,
            planted_ddi_pairs: 1,
            marker_strength: 0.95,
            cluster_diag_rate: 0.75,
            noise_diag_max: 1,
            noise_med_rate: 0.2,
        });
        cfg.model.dim = 8;
        cfg.model.dropout = 0.0;
        cfg.train.lr = 0.01;
        cfg.train.epochs = 2;
        cfg.eval.rounds = 2;
        cfg
    }

    fn temp_out(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("dnmdr-cmd-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn prepare_writes_identical_manifests_on_rerun() {
        let cfg = quick_cfg(5);
        let out = temp_out("prepare");
        let m1 = cmd_prepare(&cfg, &out).unwrap();
        let bytes1 = std::fs::read(manifest_path(&out)).unwrap();
        let m2 = cmd_prepare(&cfg, &out).unwrap();
        let bytes2 = std::fs::read(manifest_path(&out)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(bytes1, bytes2);
        assert!(m1.hashes.contains_key("a_ddi"));
    }

    #[test]
    fn train_evaluate_recommend_pipeline() {
        let cfg = quick_cfg(6);
        let out = temp_out("pipeline");
        cmd_prepare(&cfg, &out).unwrap();
        let summary = cmd_train(&cfg, &out, None).unwrap();
        assert!(summary.epochs_run >= 1);
        assert!(checkpoint_path(&out).exists());
        assert!(last_checkpoint_path(&out).exists());
        assert!(epoch_log_path(&out).exists());

        let report = cmd_evaluate(&cfg, &out, &checkpoint_path(&out)).unwrap();
        assert!(metrics_path(&out).exists());
        assert!(report.jaccard.mean >= 0.0 && report.jaccard.mean <= 1.0);

        // Recommend for a patient from the generated cohort.
        let bundle = load_bundle(&out).unwrap();
        let patient = &bundle.cohort.patients[0];
        let mut lines = String::new();
        for v in &patient.visits {
            lines.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                patient.patient_id,
                v.ordinal,
                v.diagnoses.join(","),
                v.procedures.join(","),
                v.medications.join(",")
            ));
        }
        let pfile = out.join("patient.tsv");
        std::fs::write(&pfile, lines).unwrap();
        let rec = cmd_recommend(&cfg, &out, &checkpoint_path(&out), &pfile).unwrap();
        assert_eq!(rec.patient_id, patient.patient_id);
        // Formatted items look like CODE(0.12345).
        if let Some((code, p)) = rec.items.first() {
            let f = rec.formatted();
            assert!(f.starts_with(&format!("{code}({p:.5})")));
        }

        // Threshold above 1 gives an empty list without erroring.
        let mut high = cfg.clone();
        high.model.threshold = 1.01;
        let rec2 = cmd_recommend(&high, &out, &checkpoint_path(&out), &pfile).unwrap();
        assert!(rec2.items.is_empty());
    }

    #[test]
    fn recommend_rejects_unknown_codes_and_empty_history() {
        let cfg = quick_cfg(7);
        let out = temp_out("recommend-errors");
        cmd_prepare(&cfg, &out).unwrap();
        cmd_train(&cfg, &out, None).unwrap();

        let bad = out.join("bad.tsv");
        std::fs::write(&bad, "px\t1\tNOT_A_CODE\t\t\n").unwrap();
        let err = cmd_recommend(&cfg, &out, &checkpoint_path(&out), &bad).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)));
        assert_eq!(err.exit_code(), 4);

        let empty = out.join("empty.tsv");
        std::fs::write(&empty, "\n").unwrap();
        let err2 = cmd_recommend(&cfg, &out, &checkpoint_path(&out), &empty).unwrap_err();
        assert!(matches!(err2, Error::Data(_)));
        assert_eq!(err2.exit_code(), 4);
    }

    #[test]
    fn evaluate_detects_hash_mismatch() {
        let cfg = quick_cfg(8);
        let out = temp_out("hash-mismatch");
        cmd_prepare(&cfg, &out).unwrap();
        cmd_train(&cfg, &out, None).unwrap();

        // Re-prepare with a different seed: new cohort, new vocab hashes.
        let mut cfg2 = quick_cfg(9);
        cfg2.synthetic.as_mut().unwrap().n_med = 19;
        cmd_prepare(&cfg2, &out).unwrap();
        let err = cmd_evaluate(&cfg2, &out, &checkpoint_path(&out)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn resume_continues_epoch_numbering() {
        let mut cfg = quick_cfg(10);
        cfg.train.epochs = 2;
        let out = temp_out("resume");
        cmd_prepare(&cfg, &out).unwrap();
        let s1 = cmd_train(&cfg, &out, None).unwrap();
        assert_eq!(s1.epochs_run, 2);
        let mut cfg2 = cfg.clone();
        cfg2.train.epochs = 4;
        let s2 = cmd_train(&cfg2, &out, Some(&last_checkpoint_path(&out))).unwrap();
        assert_eq!(s2.epochs_run, 4);
        assert_eq!(s2.logs.first().unwrap().epoch, 3, "numbering continues");
        let logged = std::fs::read_to_string(epoch_log_path(&out)).unwrap();
        assert_eq!(logged.lines().count(), 4);
    }

    #[test]
    fn dump_commands_write_expected_files() {
        let cfg = quick_cfg(11);
        let out = temp_out("dumps");
        cmd_prepare(&cfg, &out).unwrap();
        let n = cmd_dump_graphs(&cfg, &out).unwrap();
        assert_eq!(n, 24);
        let sample = std::fs::read_dir(out.join("graphs")).unwrap().next().unwrap().unwrap();
        let text = std::fs::read_to_string(sample.path()).unwrap();
        assert!(text.starts_with("patient\t"));
        assert!(text.contains("adj\t"));

        cmd_train(&cfg, &out, None).unwrap();
        let path = cmd_dump_drug_memory(&cfg, &out, &checkpoint_path(&out)).unwrap();
        let dump = std::fs::read_to_string(path).unwrap();
        assert!(dump.contains("molecular\tM0000\t"));
        assert!(dump.contains("fused\tM0000\t"));
    }

    #[test]
    fn frequency_baseline_picks_top_k() {
        let rows = vec![
            crate::ehr::records::RawVisitRow {
                patient_id: "a".into(),
                ordinal: 1,
                diagnoses: vec!["d".into()],
                procedures: vec![],
                medications: vec!["m1".into(), "m2".into()],
            },
            crate::ehr::records::RawVisitRow {
                patient_id: "b".into(),
                ordinal: 1,
                diagnoses: vec!["d".into()],
                procedures: vec![],
                medications: vec!["m2".into(), "m3".into()],
            },
        ];
        let cohort = Cohort::from_raw_rows(rows).unwrap();
        let set = frequency_baseline_sets(&cohort);
        // Mean size 2; m2 is most frequent.
        assert_eq!(set.len(), 2);
        assert!(set.contains(&cohort.med_vocab.index_of("m2").unwrap()));
    }
}
