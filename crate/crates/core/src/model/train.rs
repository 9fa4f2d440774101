//! The training loop, evaluation, and patient-level prediction.
//!
//! One optimizer step per patient: the dynamic network is prebuilt, visits
//! are encoded in order, the three losses are accumulated over visits, and
//! the gradient of their weighted mean is applied before moving to the next
//! patient.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamic::snapshot::{build_dynamic_network, DynamicNetwork, GraphOptions};
use crate::dynamic::stats::CooccurrenceStats;
use crate::ehr::records::Cohort;
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_report, MetricOptions, MetricReport, VisitEval};
use crate::nn::{Adam, ParamStore, Tape};
use crate::util::seeded_rng;

use super::config::ModelConfig;
use super::drugs::MoleculePlan;
use super::forward::{parameter_gradients, patient_forward, ForwardTrace, ModelAssets};
use super::layout::{build_model, ModelLayout, VocabSizes};
use super::predictor::{choose, LossBreakdown, LossWeights};

/// A cohort preprocessed for the model: one dynamic network and one
/// prescription-vector list per patient.
#[derive(Debug)]
pub struct EncodedCohort {
    pub networks: Vec<DynamicNetwork>,
    pub med_multihots: Vec<Vec<Vec<f64>>>,
}

impl EncodedCohort {
    pub fn build(
        cohort: &Cohort,
        stats: &CooccurrenceStats,
        options: GraphOptions,
    ) -> Result<EncodedCohort> {
        let mut networks = Vec::with_capacity(cohort.patients.len());
        let mut med_multihots = Vec::with_capacity(cohort.patients.len());
        for patient in &cohort.patients {
            networks.push(build_dynamic_network(
                patient,
                &cohort.diag_vocab,
                &cohort.proc_vocab,
                &cohort.med_vocab,
                stats,
                options,
            )?);
            med_multihots.push(
                patient
                    .visits
                    .iter()
                    .map(|v| cohort.med_vocab.encode_multihot(&v.medications))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(EncodedCohort { networks, med_multihots })
    }

    pub fn len(&self) -> usize {
        self.networks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.networks.is_empty()
    }
}

/// One structured epoch-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_bce: f64,
    pub l_multi: f64,
    pub l_ddi: f64,
    pub total: f64,
    pub wall_secs: f64,
}

/// Model state plus optimizer; owns the parameters through training.
#[derive(Debug)]
pub struct Trainer {
    pub cfg: ModelConfig,
    pub sizes: VocabSizes,
    pub store: ParamStore,
    pub layout: ModelLayout,
    pub optimizer: Adam,
    pub epochs_done: usize,
    dropout_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: ModelConfig, sizes: VocabSizes, lr: f64, seed: u64) -> Result<Trainer> {
        cfg.validate()?;
        let (store, layout) = build_model(&cfg, sizes, seed);
        let optimizer = Adam::new(lr, &store);
        Ok(Trainer {
            cfg,
            sizes,
            store,
            layout,
            optimizer,
            epochs_done: 0,
            dropout_rng: seeded_rng(seed, 500),
        })
    }

    pub fn assets<'a>(
        &'a self,
        molecule_plans: &'a [Option<MoleculePlan>],
        a_ehr: &'a Array2<f64>,
        a_ddi: &'a Array2<f64>,
    ) -> ModelAssets<'a> {
        ModelAssets {
            cfg: &self.cfg,
            store: &self.store,
            layout: &self.layout,
            molecule_plans,
            a_ehr,
            a_ddi,
        }
    }

    /// One pass over the training patients with one optimizer step each.
    pub fn train_epoch(
        &mut self,
        data: &EncodedCohort,
        molecule_plans: &[Option<MoleculePlan>],
        a_ehr: &Array2<f64>,
        a_ddi: &Array2<f64>,
        weights: LossWeights,
    ) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::Data("cannot train on an empty cohort".into()));
        }
        let started = Instant::now();
        let mut sums = LossBreakdown::default();
        let mut dropout_rng = self.dropout_rng.clone();
        for (network, meds) in data.networks.iter().zip(&data.med_multihots) {
            let mut tape = Tape::new();
            let assets = ModelAssets {
                cfg: &self.cfg,
                store: &self.store,
                layout: &self.layout,
                molecule_plans,
                a_ehr,
                a_ddi,
            };
            let out = patient_forward(
                &mut tape,
                &assets,
                network,
                meds,
                weights,
                true,
                Some(&mut dropout_rng),
                false,
            )?;
            if !out.breakdown.total.is_finite() {
                return Err(Error::Numerics(format!(
                    "non-finite loss on patient {:?}",
                    network.patient_id
                )));
            }
            let grads = tape.backward(out.loss.total);
            let param_grads = parameter_gradients(&tape, &grads, &out.vars);
            self.optimizer.step(&mut self.store, &param_grads);

            sums.bce += out.breakdown.bce;
            sums.multi += out.breakdown.multi;
            sums.ddi += out.breakdown.ddi;
            sums.total += out.breakdown.total;
        }
        self.dropout_rng = dropout_rng;
        self.epochs_done += 1;
        let n = data.len() as f64;
        Ok(EpochLog {
            epoch: self.epochs_done,
            l_bce: sums.bce / n,
            l_multi: sums.multi / n,
            l_ddi: sums.ddi / n,
            total: sums.total / n,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Per-visit probabilities for one patient, evaluation mode.
    pub fn predict_patient(
        &self,
        network: &DynamicNetwork,
        meds: &[Vec<f64>],
        molecule_plans: &[Option<MoleculePlan>],
        a_ehr: &Array2<f64>,
        a_ddi: &Array2<f64>,
        collect_trace: bool,
    ) -> Result<(Vec<Array2<f64>>, Option<ForwardTrace>)> {
        let mut tape = Tape::new();
        let assets = self.assets(molecule_plans, a_ehr, a_ddi);
        let out = patient_forward(
            &mut tape,
            &assets,
            network,
            meds,
            LossWeights::default(),
            false,
            None,
            collect_trace,
        )?;
        let probs = out.visit_probs.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((probs, out.trace))
    }

    /// Per-patient visit evaluations at the configured threshold.
    pub fn evaluate_visits(
        &self,
        data: &EncodedCohort,
        molecule_plans: &[Option<MoleculePlan>],
        a_ehr: &Array2<f64>,
        a_ddi: &Array2<f64>,
    ) -> Result<Vec<Vec<VisitEval>>> {
        let mut per_patient = Vec::with_capacity(data.len());
        for (network, meds) in data.networks.iter().zip(&data.med_multihots) {
            let (probs, _) =
                self.predict_patient(network, meds, molecule_plans, a_ehr, a_ddi, false)?;
            let mut visits = Vec::with_capacity(probs.len());
            for (p, truth_vec) in probs.iter().zip(meds) {
                let truth: BTreeSet<usize> = truth_vec
                    .iter()
                    .enumerate()
                    .filter(|(_, &y)| y != 0.0)
                    .map(|(i, _)| i)
                    .collect();
                let predicted: BTreeSet<usize> =
                    choose(p, self.cfg.threshold).into_iter().collect();
                visits.push(VisitEval {
                    truth,
                    predicted,
                    probabilities: p.column(0).to_vec(),
                });
            }
            per_patient.push(visits);
        }
        Ok(per_patient)
    }

    /// Bootstrap evaluation report over a cohort.
    pub fn evaluate(
        &self,
        data: &EncodedCohort,
        molecule_plans: &[Option<MoleculePlan>],
        a_ehr: &Array2<f64>,
        a_ddi: &Array2<f64>,
        opts: MetricOptions,
        rounds: usize,
        seed: u64,
    ) -> Result<MetricReport> {
        let per_patient = self.evaluate_visits(data, molecule_plans, a_ehr, a_ddi)?;
        Ok(bootstrap_report(&per_patient, a_ddi, opts, rounds, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamic::stats::collect_cooccurrence;
    use crate::ehr::records::{Cohort, RawVisitRow};
    use crate::ehr::smiles::parse_molecule;

    fn tiny_world() -> (Cohort, CooccurrenceStats, Vec<Option<MoleculePlan>>, Array2<f64>, Array2<f64>) {
        let rows = vec![
            RawVisitRow {
                patient_id: "p0".into(),
                ordinal: 1,
                diagnoses: vec!["g0".into(), "g1".into()],
                procedures: vec!["x0".into()],
                medications: vec!["m0".into(), "m2".into()],
            },
            RawVisitRow {
                patient_id: "p0".into(),
                ordinal: 2,
                diagnoses: vec!["g0".into()],
                procedures: vec![],
                medications: vec!["m1".into()],
            },
            RawVisitRow {
                patient_id: "p1".into(),
                ordinal: 1,
                diagnoses: vec!["g1".into()],
                procedures: vec!["x0".into()],
                medications: vec!["m2".into()],
            },
        ];
        let cohort = Cohort::from_raw_rows(rows).unwrap();
        let stats = collect_cooccurrence(&cohort);
        let smiles = ["C", "CC", "CCO"];
        let plans: Vec<Option<MoleculePlan>> = smiles
            .iter()
            .map(|s| Some(MoleculePlan::from_graph(&parse_molecule(s, "m").unwrap()).unwrap()))
            .collect();
        let m = cohort.med_vocab.len();
        let a_ehr = crate::ehr::graphs::build_ehr_adjacency(&cohort);
        let a_ddi = Array2::zeros((m, m));
        (cohort, stats, plans, a_ehr, a_ddi)
    }

    fn tiny_cfg(dim: usize) -> ModelConfig {
        ModelConfig { dim, dropout: 0.0, ..Default::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let mut trainer = Trainer::new(tiny_cfg(8), sizes, 0.0, 3).unwrap();
        let data = EncodedCohort::build(&cohort, &stats, GraphOptions::default()).unwrap();
        let before: Vec<Array2<f64>> = trainer.store.values().to_vec();
        trainer
            .train_epoch(&data, &plans, &a_ehr, &a_ddi, LossWeights::default())
            .unwrap();
        for (b, a) in before.iter().zip(trainer.store.values()) {
            assert_eq!(b, a);
        }
    }

    #[test]
    fn fixed_seed_reproduces_epoch_losses() {
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let data = EncodedCohort::build(&cohort, &stats, GraphOptions::default()).unwrap();
        let run = || -> Vec<(f64, f64, f64, f64)> {
            let mut trainer = Trainer::new(
                ModelConfig { dim: 8, ..Default::default() },
                sizes,
                0.01,
                9,
            )
            .unwrap();
            (0..3)
                .map(|_| {
                    let log = trainer
                        .train_epoch(&data, &plans, &a_ehr, &a_ddi, LossWeights::default())
                        .unwrap();
                    (log.l_bce, log.l_multi, log.l_ddi, log.total)
                })
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_loss_on_tiny_cohort() {
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let mut trainer = Trainer::new(tiny_cfg(16), sizes, 0.05, 5).unwrap();
        let data = EncodedCohort::build(&cohort, &stats, GraphOptions::default()).unwrap();
        let first = trainer
            .train_epoch(&data, &plans, &a_ehr, &a_ddi, LossWeights::default())
            .unwrap();
        let mut last = first.clone();
        for _ in 0..30 {
            last = trainer
                .train_epoch(&data, &plans, &a_ehr, &a_ddi, LossWeights::default())
                .unwrap();
        }
        assert!(
            last.l_bce < first.l_bce * 0.5,
            "bce should fall substantially: {} -> {}",
            first.l_bce,
            last.l_bce
        );
    }

    #[test]
    fn causality_future_visit_cannot_change_past_prediction() {
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let trainer = Trainer::new(tiny_cfg(8), sizes, 0.01, 3).unwrap();
        let data = EncodedCohort::build(&cohort, &stats, GraphOptions::default()).unwrap();

        // Patient p0 has two visits; perturb visit 2 and compare visit 1.
        let (probs_orig, _) = trainer
            .predict_patient(&data.networks[0], &data.med_multihots[0], &plans, &a_ehr, &a_ddi, false)
            .unwrap();

        let mut patient = cohort.patients[0].clone();
        patient.visits[1].diagnoses = vec!["g1".into()];
        patient.visits[1].medications = vec!["m0".into(), "m1".into(), "m2".into()];
        let network2 = build_dynamic_network(
            &patient,
            &cohort.diag_vocab,
            &cohort.proc_vocab,
            &cohort.med_vocab,
            &stats,
            GraphOptions::default(),
        )
        .unwrap();
        let meds2: Vec<Vec<f64>> = patient
            .visits
            .iter()
            .map(|v| cohort.med_vocab.encode_multihot(&v.medications).unwrap())
            .collect();
        let (probs_new, _) = trainer
            .predict_patient(&network2, &meds2, &plans, &a_ehr, &a_ddi, false)
            .unwrap();
        // Bit-identical first-visit prediction.
        assert_eq!(probs_orig[0], probs_new[0]);
        // And the perturbation does change the second visit.
        assert_ne!(probs_orig[1], probs_new[1]);
    }

    #[test]
    fn perfect_memorizer_reaches_unit_jaccard() {
        // Force the output layer so the model reproduces m0+m2 for any
        // input: bias alone decides.
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let single: Vec<RawVisitRow> = vec![RawVisitRow {
            patient_id: "p0".into(),
            ordinal: 1,
            diagnoses: vec!["g0".into()],
            procedures: vec![],
            medications: vec!["m0".into(), "m2".into()],
        }];
        let mut one = Cohort::from_raw_rows(single).unwrap();
        one.diag_vocab = cohort.diag_vocab.clone();
        one.proc_vocab = cohort.proc_vocab.clone();
        one.med_vocab = cohort.med_vocab.clone();
        let mut trainer = Trainer::new(tiny_cfg(8), sizes, 0.0, 3).unwrap();
        {
            let w = trainer.store.get_mut(trainer.layout.output.weight);
            w.fill(0.0);
        }
        {
            let b = trainer.store.get_mut(trainer.layout.output.bias);
            b.fill(-10.0);
            b[(0, 0)] = 10.0;
            b[(2, 0)] = 10.0;
        }
        let data = EncodedCohort::build(&one, &stats, GraphOptions::default()).unwrap();
        let report = trainer
            .evaluate(&data, &plans, &a_ehr, &a_ddi, MetricOptions::default(), 1, 7)
            .unwrap();
        assert_eq!(report.jaccard.mean, 1.0);
        assert_eq!(report.f1.mean, 1.0);
    }

    #[test]
    fn inter_layer_dropout_flag_changes_training_but_not_eval() {
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let data = EncodedCohort::build(&cohort, &stats, GraphOptions::default()).unwrap();
        let run = |between: bool| -> (f64, Array2<f64>) {
            let cfg = ModelConfig {
                dim: 8,
                dropout: 0.5,
                dropout_between_gat: between,
                ..Default::default()
            };
            let mut trainer = Trainer::new(cfg, sizes, 0.0, 9).unwrap();
            let log = trainer
                .train_epoch(&data, &plans, &a_ehr, &a_ddi, LossWeights::default())
                .unwrap();
            let (probs, _) = trainer
                .predict_patient(&data.networks[0], &data.med_multihots[0], &plans, &a_ehr, &a_ddi, false)
                .unwrap();
            (log.total, probs[0].clone())
        };
        let (loss_off, eval_off) = run(false);
        let (loss_on, eval_on) = run(true);
        assert_ne!(loss_off, loss_on, "masking between layers must change the training loss");
        assert_eq!(eval_off, eval_on, "evaluation never applies dropout");
    }

    #[test]
    fn interaction_loss_is_nonnegative_and_zero_iff_pair_killed() {
        let mut rng = crate::util::seeded_rng(71, 0);
        let mut a = Array2::zeros((5, 5));
        for (i, j) in [(0, 1), (2, 4)] {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        for _ in 0..100 {
            let probs_val = Array2::from_shape_fn((5, 1), |_| {
                if rand::Rng::random_bool(&mut rng, 0.3) {
                    0.0
                } else {
                    rand::Rng::random_range(&mut rng, 0.0..1.0)
                }
            });
            let mut tape = crate::nn::Tape::new();
            let probs = tape.leaf(probs_val.clone());
            let l = crate::model::predictor::ddi_loss(&mut tape, probs, &a);
            let value = tape.scalar(l);
            assert!(value >= 0.0);
            let every_pair_killed = [(0, 1), (2, 4)]
                .iter()
                .all(|&(i, j)| probs_val[(i, 0)] == 0.0 || probs_val[(j, 0)] == 0.0);
            assert_eq!(value == 0.0, every_pair_killed, "probs {probs_val:?}");
        }
    }

    #[test]
    fn evaluation_report_reproducible_across_calls() {
        let (cohort, stats, plans, a_ehr, a_ddi) = tiny_world();
        let sizes = VocabSizes {
            diag: cohort.diag_vocab.len(),
            proc: cohort.proc_vocab.len(),
            med: cohort.med_vocab.len(),
        };
        let trainer = Trainer::new(tiny_cfg(8), sizes, 0.01, 3).unwrap();
        let data = EncodedCohort::build(&cohort, &stats, GraphOptions::default()).unwrap();
        let r1 = trainer
            .evaluate(&data, &plans, &a_ehr, &a_ddi, MetricOptions::default(), 10, 11)
            .unwrap();
        let r2 = trainer
            .evaluate(&data, &plans, &a_ehr, &a_ddi, MetricOptions::default(), 10, 11)
            .unwrap();
        assert_eq!(r1, r2);
    }
}
