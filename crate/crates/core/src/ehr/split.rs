//! Patient-level cohort splitting.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::seeded_rng;

use super::records::Cohort;

#[derive(Debug, Clone)]
pub struct CohortSplits {
    pub train: Cohort,
    pub val: Cohort,
    pub test: Cohort,
}

/// Partition patients into train/val/test. No patient straddles splits and
/// split sizes are within one patient of the exact ratios.
pub fn split_cohort(cohort: &Cohort, ratios: (f64, f64, f64), seed: u64) -> Result<CohortSplits> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    let n = cohort.patients.len();
    if n < 3 {
        return Err(Error::Config(format!("cohort of {n} patients cannot be split three ways")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, 200);
    order.shuffle(&mut rng);

    // Largest-remainder apportionment keeps every split within +-1 patient.
    let exact = [rt * n as f64, rv * n as f64, rs * n as f64];
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..3).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &slot in &by_frac {
        if leftover == 0 {
            break;
        }
        sizes[slot] += 1;
        leftover -= 1;
    }
    // Every split must be nonempty to be usable downstream.
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }

    let train_idx = &order[..sizes[0]];
    let val_idx = &order[sizes[0]..sizes[0] + sizes[1]];
    let test_idx = &order[sizes[0] + sizes[1]..];
    Ok(CohortSplits {
        train: cohort.subset(train_idx),
        val: cohort.subset(val_idx),
        test: cohort.subset(test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::records::RawVisitRow;

    fn cohort_of(n: usize) -> Cohort {
        let rows: Vec<RawVisitRow> = (0..n)
            .map(|i| RawVisitRow {
                patient_id: format!("p{i:03}"),
                ordinal: 1,
                diagnoses: vec!["d".into()],
                procedures: vec![],
                medications: vec!["m".into()],
            })
            .collect();
        Cohort::from_raw_rows(rows).unwrap()
    }

    #[test]
    fn six_patients_split_4_1_1() {
        let c = cohort_of(6);
        let s = split_cohort(&c, (4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0), 7).unwrap();
        assert_eq!(s.train.patients.len(), 4);
        assert_eq!(s.val.patients.len(), 1);
        assert_eq!(s.test.patients.len(), 1);
    }

    #[test]
    fn non_positive_ratio_rejected() {
        let c = cohort_of(6);
        assert!(matches!(
            split_cohort(&c, (1.0, 0.0, 0.0), 7).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let c = cohort_of(6);
        assert!(matches!(
            split_cohort(&c, (0.5, 0.3, 0.3), 7).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn tiny_cohort_rejected() {
        let c = cohort_of(2);
        assert!(matches!(
            split_cohort(&c, (0.34, 0.33, 0.33), 7).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn deterministic_membership_for_fixed_seed() {
        let c = cohort_of(600);
        let a = split_cohort(&c, (4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0), 42).unwrap();
        let b = split_cohort(&c, (4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0), 42).unwrap();
        let ids = |c: &Cohort| c.patients.iter().map(|p| p.patient_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.val), ids(&b.val));
        assert_eq!(ids(&a.test), ids(&b.test));
        let other = split_cohort(&c, (4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0), 43).unwrap();
        assert_ne!(ids(&a.train), ids(&other.train));
    }

    #[test]
    fn splits_partition_the_cohort() {
        let c = cohort_of(101);
        let s = split_cohort(&c, (0.7, 0.15, 0.15), 3).unwrap();
        let mut all: Vec<String> = s
            .train
            .patients
            .iter()
            .chain(&s.val.patients)
            .chain(&s.test.patients)
            .map(|p| p.patient_id.clone())
            .collect();
        assert_eq!(all.len(), 101);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 101, "no patient may straddle splits");
        // Within one patient of the exact ratio.
        assert!((s.train.patients.len() as f64 - 70.7).abs() <= 1.0);
        assert!((s.val.patients.len() as f64 - 15.15).abs() <= 1.0);
        assert!((s.test.patients.len() as f64 - 15.15).abs() <= 1.0);
    }
}
