// scratch: timing + quality probe for the desk-scale end-to-end run
use dnmdr_core::bundle::Bundle;
use dnmdr_core::ehr::synth::SynthConfig;
use dnmdr_core::metrics::{compute_all, MetricOptions, VisitEval};
use dnmdr_core::model::train::EncodedCohort;
use dnmdr_core::run::RunConfig;
use std::collections::BTreeSet;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.seed = 42;
    cfg.synthetic = Some(SynthConfig {
        n_patients: 500,
        n_diag: 40,
        n_proc: 12,
        n_med: 32,
        visits_min: 1,
        visits_max: 3,
        clusters: 4,
        diags_per_cluster: 5,
        meds_per_cluster: 5,
        procs_per_cluster: 3,
        assoc_strength: 0.9,
        planted_ddi_pairs: 1,
        marker_strength: 0.95,
        cluster_diag_rate: 0.75,
        noise_diag_max: 2,
        noise_med_rate: 0.3,
    });
    cfg.model.dim = 64;
    cfg.model.dropout = 0.2;
    cfg.train.lr = 0.003;
    cfg.train.epochs = 10;
    cfg.train.patience = 10;
    cfg.loss.gamma = 0.1;
    cfg.eval.rounds = 1;

    let bundle = Bundle::prepare(&cfg).unwrap();
    println!("prepare: {:.1}s", t0.elapsed().as_secs_f64());

    let fit_t = Instant::now();
    let fitted = dnmdr_core::commands::fit(&cfg, &bundle, None).unwrap();
    println!("fit {} epochs: {:.1}s (best val {:.4} at {})",
        fitted.trainer.epochs_done, fit_t.elapsed().as_secs_f64(),
        fitted.best_val_jaccard, fitted.best_epoch);
    for log in &fitted.logs {
        println!("  epoch {} bce {:.4} ddi {:.4} ({:.1}s)", log.epoch, log.l_bce, log.l_ddi, log.wall_secs);
    }

    let trainer = fitted.best.into_trainer(cfg.train.lr, cfg.seed).unwrap();
    let plans = bundle.molecule_plans().unwrap();
    let test = bundle.test_cohort().unwrap();
    let data = EncodedCohort::build(&test, &bundle.stats, Default::default()).unwrap();
    let per_patient = trainer.evaluate_visits(&data, &plans, &bundle.a_ehr, &bundle.ddi.matrix).unwrap();
    let flat: Vec<VisitEval> = per_patient.into_iter().flatten().collect();
    let m = compute_all(&flat, &bundle.ddi.matrix, MetricOptions::default());
    println!("model: jaccard {:.4} f1 {:.4} prauc {:.4} ddi {:.5} avg {:.2}", m[0], m[1], m[2], m[3], m[4]);

    // Frequency baseline on the train split.
    let train = bundle.train_cohort().unwrap();
    let base_set = dnmdr_core::commands::frequency_baseline_sets(&train);
    let base_evals: Vec<VisitEval> = flat.iter().map(|e| VisitEval {
        truth: e.truth.clone(),
        predicted: base_set.iter().copied().collect::<BTreeSet<usize>>(),
        probabilities: vec![0.0; bundle.cohort.med_vocab.len()],
    }).collect();
    let b = compute_all(&base_evals, &bundle.ddi.matrix, MetricOptions::default());
    println!("baseline(k={}): jaccard {:.4} ddi {:.5}", base_set.len(), b[0], b[3]);
    println!("margin: {:.4} (need >= 0.15)", m[0] - b[0]);
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
