//! Evaluation metrics over per-visit prediction results.
//!
//! Formula fidelity notes:
//!
//! * `precision`/`recall` follow the printed forms, which divide the
//!   intersection by the truth size and the predicted size respectively —
//!   the opposite of the conventional assignment. [`MetricOptions::conventional_pr`]
//!   flips them back.
//! * The interaction rate counts unordered predicted pairs once and
//!   normalizes by the total number of predicted drugs.
//! * Both-empty visits contribute 1.0 to Jaccard (perfect agreement in the
//!   limit); 0/0 ratios elsewhere are defined as 0.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::util::seeded_rng;

/// One visit's evaluation payload: truth set, predicted set, and the full
/// probability vector for ranking metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitEval {
    pub truth: BTreeSet<usize>,
    pub predicted: BTreeSet<usize>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricOptions {
    /// Use the conventional precision/recall denominators instead of the
    /// printed ones.
    pub conventional_pr: bool,
}

/// Mean over visits of `|Y ∩ Ŷ| / |Y ∪ Ŷ|`.
pub fn jaccard(evals: &[VisitEval]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    let total: f64 = evals
        .iter()
        .map(|e| {
            let inter = e.truth.intersection(&e.predicted).count() as f64;
            let union = e.truth.union(&e.predicted).count() as f64;
            if union == 0.0 {
                1.0
            } else {
                inter / union
            }
        })
        .sum();
    total / evals.len() as f64
}

fn pr_for_visit(e: &VisitEval, opts: MetricOptions) -> (f64, f64) {
    let inter = e.truth.intersection(&e.predicted).count() as f64;
    let truth_size = e.truth.len() as f64;
    let pred_size = e.predicted.len() as f64;
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    if opts.conventional_pr {
        (ratio(inter, pred_size), ratio(inter, truth_size))
    } else {
        // As printed: precision over |Y_t|, recall over |Ŷ_t|.
        (ratio(inter, truth_size), ratio(inter, pred_size))
    }
}

/// Mean over visits of the harmonic mean of per-visit precision and recall.
pub fn f1(evals: &[VisitEval], opts: MetricOptions) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    let total: f64 = evals
        .iter()
        .map(|e| {
            let (p, r) = pr_for_visit(e, opts);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .sum();
    total / evals.len() as f64
}

/// Per-visit average precision by rank walk, averaged over visits.
/// Drugs are sorted by descending probability, ties broken by ascending
/// drug index for determinism.
pub fn prauc(evals: &[VisitEval]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    let total: f64 = evals.iter().map(visit_average_precision).sum();
    total / evals.len() as f64
}

fn ranked_drugs(probabilities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order
}

fn visit_average_precision(e: &VisitEval) -> f64 {
    if e.truth.is_empty() {
        return 0.0;
    }
    let order = ranked_drugs(&e.probabilities);
    let truth_size = e.truth.len() as f64;
    let mut hits = 0usize;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (k, &drug) in order.iter().enumerate() {
        if e.truth.contains(&drug) {
            hits += 1;
        }
        let precision = hits as f64 / (k + 1) as f64;
        let recall = hits as f64 / truth_size;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

/// Unordered predicted pairs with a known interaction, summed over visits,
/// divided by the total number of predicted drugs.
pub fn ddi_rate(predicted: &[&BTreeSet<usize>], a_ddi: &Array2<f64>) -> f64 {
    let mut pairs = 0usize;
    let mut drugs = 0usize;
    for set in predicted {
        drugs += set.len();
        let items: Vec<usize> = set.iter().copied().collect();
        for (a, &i) in items.iter().enumerate() {
            for &j in items.iter().skip(a + 1) {
                if a_ddi[(i, j)] != 0.0 {
                    pairs += 1;
                }
            }
        }
    }
    if drugs == 0 {
        0.0
    } else {
        pairs as f64 / drugs as f64
    }
}

/// Mean predicted prescription size.
pub fn avg_drugs(predicted: &[&BTreeSet<usize>]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().map(|s| s.len()).sum::<usize>() as f64 / predicted.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn from_rounds(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Mean and dispersion of the five metrics over evaluation rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub jaccard: MeanStd,
    pub f1: MeanStd,
    pub prauc: MeanStd,
    pub ddi_rate: MeanStd,
    pub avg_drugs: MeanStd,
    pub rounds: usize,
}

impl MetricReport {
    /// Flat one-line summary in the comparison-table column order.
    pub fn summary_line(&self) -> String {
        format!(
            "jaccard {:.4}±{:.4}  f1 {:.4}±{:.4}  prauc {:.4}±{:.4}  ddi_rate {:.5}±{:.5}  avg_drugs {:.2}±{:.2}",
            self.jaccard.mean,
            self.jaccard.std,
            self.f1.mean,
            self.f1.std,
            self.prauc.mean,
            self.prauc.std,
            self.ddi_rate.mean,
            self.ddi_rate.std,
            self.avg_drugs.mean,
            self.avg_drugs.std
        )
    }
}

/// All five metrics for one pass over a set of visits.
pub fn compute_all(evals: &[VisitEval], a_ddi: &Array2<f64>, opts: MetricOptions) -> [f64; 5] {
    let sets: Vec<&BTreeSet<usize>> = evals.iter().map(|e| &e.predicted).collect();
    [
        jaccard(evals),
        f1(evals, opts),
        prauc(evals),
        ddi_rate(&sets, a_ddi),
        avg_drugs(&sets),
    ]
}

/// Aggregate per-round metric vectors into a report.
pub fn report_from_rounds(rounds: &[[f64; 5]]) -> MetricReport {
    let col = |i: usize| rounds.iter().map(|r| r[i]).collect::<Vec<f64>>();
    MetricReport {
        jaccard: MeanStd::from_rounds(&col(0)),
        f1: MeanStd::from_rounds(&col(1)),
        prauc: MeanStd::from_rounds(&col(2)),
        ddi_rate: MeanStd::from_rounds(&col(3)),
        avg_drugs: MeanStd::from_rounds(&col(4)),
        rounds: rounds.len(),
    }
}

/// Bootstrap resample of per-patient eval groups: `rounds` rounds of
/// sampling patients with replacement, metrics per round, aggregated.
/// A single round evaluates the plain set without resampling.
pub fn bootstrap_report(
    per_patient: &[Vec<VisitEval>],
    a_ddi: &Array2<f64>,
    opts: MetricOptions,
    rounds: usize,
    seed: u64,
) -> MetricReport {
    if rounds <= 1 {
        let flat: Vec<VisitEval> = per_patient.iter().flatten().cloned().collect();
        return report_from_rounds(&[compute_all(&flat, a_ddi, opts)]);
    }
    let mut rng = seeded_rng(seed, 300);
    let mut per_round = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut sample: Vec<VisitEval> = Vec::new();
        for _ in 0..per_patient.len() {
            let pick = rand::Rng::random_range(&mut rng, 0..per_patient.len());
            sample.extend(per_patient[pick].iter().cloned());
        }
        per_round.push(compute_all(&sample, a_ddi, opts));
    }
    report_from_rounds(&per_round)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(truth: &[usize], predicted: &[usize], probs: &[f64]) -> VisitEval {
        VisitEval {
            truth: truth.iter().copied().collect(),
            predicted: predicted.iter().copied().collect(),
            probabilities: probs.to_vec(),
        }
    }

    #[test]
    fn jaccard_basics() {
        let perfect = eval(&[1, 2], &[1, 2], &[0.0, 0.9, 0.9]);
        assert_eq!(jaccard(&[perfect]), 1.0);
        let disjoint = eval(&[0], &[1], &[0.9, 0.9]);
        assert_eq!(jaccard(&[disjoint]), 0.0);
        let half = eval(&[1, 2, 3], &[2, 3, 4], &[0.0; 5]);
        assert_eq!(jaccard(&[half]), 0.5);
    }

    #[test]
    fn jaccard_both_empty_counts_as_agreement() {
        let e = eval(&[], &[], &[0.1, 0.1]);
        assert_eq!(jaccard(&[e]), 1.0);
    }

    #[test]
    fn f1_printed_formulas() {
        let perfect = eval(&[1, 2], &[1, 2], &[0.0; 3]);
        assert_eq!(f1(&[perfect], MetricOptions::default()), 1.0);
        // Y={1,2}, Ŷ={1}: printed precision 1/2, recall 1/1, F1 = 2/3.
        let partial = eval(&[1, 2], &[1], &[0.0; 3]);
        let got = f1(&[partial.clone()], MetricOptions::default());
        assert!((got - 2.0 / 3.0).abs() < 1e-12);
        // The conventional flip lands on the same harmonic mean here (it is
        // symmetric in p and r), so check a case that distinguishes: empty
        // prediction zeroes the printed recall denominator.
        let empty_pred = eval(&[1, 2], &[], &[0.0; 3]);
        assert_eq!(f1(&[empty_pred], MetricOptions::default()), 0.0);
    }

    #[test]
    fn prauc_cases() {
        // Truth exactly the top-ranked drugs.
        let top = eval(&[0, 1], &[], &[0.9, 0.8, 0.1, 0.05]);
        assert!((prauc(&[top]) - 1.0).abs() < 1e-12);
        // 3 drugs, probs (0.9, 0.8, 0.1), truth {drug 2}: hit at rank 3,
        // AP = 1/3.
        let late = eval(&[2], &[], &[0.9, 0.8, 0.1]);
        assert!((prauc(&[late]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn prauc_tie_break_is_deterministic() {
        let tied = eval(&[1], &[], &[0.5, 0.5, 0.5]);
        // Ascending index on ties: drug 1 lands at rank 2 -> AP = 1/2.
        assert!((prauc(&[tied]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ddi_rate_cases() {
        let mut a = Array2::zeros((4, 4));
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        let none: BTreeSet<usize> = [2, 3].into_iter().collect();
        assert_eq!(ddi_rate(&[&none], &a), 0.0);
        // {a,b,c} with only (a,b) interacting: 1 pair / 3 drugs.
        let abc: BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        assert!((ddi_rate(&[&abc], &a) - 1.0 / 3.0).abs() < 1e-12);
        // Two visits {a,b} and {a,b}: 2 pairs / 4 drugs = 0.5.
        let ab: BTreeSet<usize> = [0, 1].into_iter().collect();
        assert!((ddi_rate(&[&ab, &ab], &a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn avg_drugs_cases() {
        let empty: BTreeSet<usize> = BTreeSet::new();
        assert_eq!(avg_drugs(&[&empty, &empty]), 0.0);
        let two: BTreeSet<usize> = [0, 1].into_iter().collect();
        let four: BTreeSet<usize> = [0, 1, 2, 3].into_iter().collect();
        assert_eq!(avg_drugs(&[&two, &four]), 3.0);
    }

    #[test]
    fn zero_denominator_ddi_rate_is_zero() {
        let a = Array2::zeros((2, 2));
        let empty: BTreeSet<usize> = BTreeSet::new();
        assert_eq!(ddi_rate(&[&empty], &a), 0.0);
    }

    #[test]
    fn jaccard_never_exceeds_f1() {
        // Algebraic property of set-overlap measures, on random instances.
        let mut rng = crate::util::seeded_rng(31, 0);
        for _ in 0..200 {
            let m = 8usize;
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> BTreeSet<usize> {
                (0..m).filter(|_| rand::Rng::random_bool(rng, 0.4)).collect()
            };
            let e = VisitEval { truth: draw(&mut rng), predicted: draw(&mut rng), probabilities: vec![0.0; m] };
            if e.truth.is_empty() && e.predicted.is_empty() {
                continue;
            }
            let j = jaccard(&[e.clone()]);
            let f = f1(&[e], MetricOptions::default());
            assert!(j <= f + 1e-12, "jaccard {j} must not exceed f1 {f}");
        }
    }

    #[test]
    fn ddi_rate_visit_order_invariant_and_monotone() {
        let mut a = Array2::zeros((5, 5));
        for (i, j) in [(0, 1), (2, 3)] {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        let s1: BTreeSet<usize> = [0, 1, 4].into_iter().collect();
        let s2: BTreeSet<usize> = [2].into_iter().collect();
        let forward = ddi_rate(&[&s1, &s2], &a);
        let backward = ddi_rate(&[&s2, &s1], &a);
        assert_eq!(forward, backward);
        // Adding an interacting partner never lowers the numerator.
        let mut s2_plus = s2.clone();
        s2_plus.insert(3);
        let grown = ddi_rate(&[&s1, &s2_plus], &a);
        assert!(grown >= forward);
    }

    #[test]
    fn prauc_invariant_under_monotone_transform() {
        let mut rng = crate::util::seeded_rng(37, 0);
        for _ in 0..50 {
            let m = 7usize;
            let probs: Vec<f64> =
                (0..m).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
            let truth: BTreeSet<usize> =
                (0..m).filter(|_| rand::Rng::random_bool(&mut rng, 0.4)).collect();
            if truth.is_empty() {
                continue;
            }
            let e1 = VisitEval { truth: truth.clone(), predicted: BTreeSet::new(), probabilities: probs.clone() };
            // Strictly monotone transform preserves the ranking exactly.
            let transformed: Vec<f64> = probs.iter().map(|p| (3.0 * p + 1.0).exp()).collect();
            let e2 = VisitEval { truth, predicted: BTreeSet::new(), probabilities: transformed };
            assert!((prauc(&[e1]) - prauc(&[e2])).abs() < 1e-12);
        }
    }

    #[test]
    fn single_round_report_has_zero_std() {
        let per_patient = vec![vec![eval(&[0], &[0], &[0.9, 0.1])]];
        let a = Array2::zeros((2, 2));
        let report = bootstrap_report(&per_patient, &a, MetricOptions::default(), 1, 7);
        assert_eq!(report.jaccard.std, 0.0);
        assert_eq!(report.jaccard.mean, 1.0);
        assert_eq!(report.rounds, 1);
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let per_patient: Vec<Vec<VisitEval>> = (0..6)
            .map(|i| vec![eval(&[i % 3], &[(i + 1) % 3], &[0.2, 0.4, 0.6])])
            .collect();
        let a = Array2::zeros((3, 3));
        let r1 = bootstrap_report(&per_patient, &a, MetricOptions::default(), 10, 5);
        let r2 = bootstrap_report(&per_patient, &a, MetricOptions::default(), 10, 5);
        assert_eq!(r1, r2);
    }
}
