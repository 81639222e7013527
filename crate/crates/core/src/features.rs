//! Supervised examples from per-patient day sequences, and patient-level splits.
//!
//! An example at target day `t+1` takes its features from days `t-1` (prior)
//! and `t` (present) and its label from the TIR of day `t+1`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::binning::BiomarkerEncoder;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::types::{
    label_control, Cohort, ControlLabel, DayOffset, DayRecord, Feature, LabelThresholds,
};

/// Number of continuous inputs: seven features for each of the two days.
pub const CONTINUOUS_DIM: usize = 14;

pub fn continuous_feature_names() -> Vec<String> {
    DayOffset::ALL
        .iter()
        .flat_map(|d| Feature::ALL.iter().map(move |f| format!("{d}_{f}")))
        .collect()
}

/// Raw (unstandardized) continuous view of a window; absent values become 0.
pub fn continuous_window(prior: &DayRecord, present: &DayRecord) -> Vec<f64> {
    [prior, present]
        .iter()
        .flat_map(|d| Feature::ALL.iter().map(|&f| d.value(f).unwrap_or(0.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub f_c: Vec<f64>,
    pub f_d: Vec<f64>,
    pub label: ControlLabel,
    pub patient_id: String,
    pub target_day: i64,
}

/// One example per consecutive `(t-1, t, t+1)` day triple of each patient.
pub fn build_examples(
    cohort: &Cohort,
    encoder: &BiomarkerEncoder,
    thresholds: &LabelThresholds,
) -> Result<Vec<Example>> {
    thresholds.validate()?;
    let mut out = Vec::new();
    for patient in &cohort.patients {
        let days = &patient.days;
        if days.len() < 3 {
            log::warn!(
                "patient {} has {} day(s); needs 3 consecutive days to contribute",
                patient.patient_id,
                days.len()
            );
            continue;
        }
        for w in days.windows(3) {
            let (prior, present, next) = (&w[0], &w[1], &w[2]);
            if present.day_index != prior.day_index + 1 || next.day_index != present.day_index + 1 {
                continue;
            }
            let f_d = encoder.encode_window(prior, present)?.values;
            out.push(Example {
                f_c: continuous_window(prior, present),
                f_d,
                label: label_control(next.glucose.tir, thresholds)?,
                patient_id: patient.patient_id.clone(),
                target_day: next.day_index,
            });
        }
    }
    Ok(out)
}

/// Per-feature z-scoring fitted on the training split (population stddev).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::validation("cannot fit standardizer on zero rows"));
        };
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Constant features (zero stddev) map to 0.
    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|&x| !(x > 0.0)) || ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        Ok(())
    }

    /// Patient counts per split; every split gets at least one patient.
    pub fn partition(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        if n < 3 {
            return Err(Error::validation(format!(
                "need at least 3 patients to form train/validation/test splits, got {n}"
            )));
        }
        let mut counts = [
            (n as f64 * self.train).round() as usize,
            (n as f64 * self.validation).round() as usize,
            0,
        ];
        counts[0] = counts[0].clamp(1, n - 2);
        counts[1] = counts[1].clamp(1, n - 1 - counts[0]);
        counts[2] = n - counts[0] - counts[1];
        Ok(counts)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub standardizer: Standardizer,
    pub train_patients: Vec<String>,
    pub validation_patients: Vec<String>,
    pub test_patients: Vec<String>,
}

impl DatasetSplit {
    pub fn continuous_dim(&self) -> usize {
        self.train.first().map_or(0, |e| e.f_c.len())
    }

    pub fn discrete_dim(&self) -> usize {
        self.train.first().map_or(0, |e| e.f_d.len())
    }
}

/// Shuffles patients with `seed`, partitions them by `ratios`, and z-scores
/// `f_c` everywhere with moments taken from the training split only.
pub fn split_by_patient(
    examples: Vec<Example>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut patients: Vec<String> = examples
        .iter()
        .map(|e| e.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let [n_train, n_val, _] = ratios.partition(patients.len())?;
    patients.shuffle(&mut seeded_rng(seed));
    let test_patients: Vec<String> = patients.split_off(n_train + n_val);
    let validation_patients: Vec<String> = patients.split_off(n_train);
    let train_patients = patients;

    let train_set: BTreeSet<&str> = train_patients.iter().map(String::as_str).collect();
    let val_set: BTreeSet<&str> = validation_patients.iter().map(String::as_str).collect();
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for e in examples {
        if train_set.contains(e.patient_id.as_str()) {
            train.push(e);
        } else if val_set.contains(e.patient_id.as_str()) {
            validation.push(e);
        } else {
            test.push(e);
        }
    }

    let rows: Vec<&[f64]> = train.iter().map(|e| e.f_c.as_slice()).collect();
    let standardizer = Standardizer::fit(&rows)?;
    for e in train
        .iter_mut()
        .chain(validation.iter_mut())
        .chain(test.iter_mut())
    {
        standardizer.apply(&mut e.f_c);
    }
    Ok(DatasetSplit {
        train,
        validation,
        test,
        standardizer,
        train_patients,
        validation_patients,
        test_patients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::default_binning_config;
    use crate::types::{GlucoseRangeStats, PatientSeries};

    fn day(pid: &str, idx: i64, tir: f64) -> DayRecord {
        DayRecord {
            patient_id: pid.into(),
            day_index: idx,
            glucose: GlucoseRangeStats {
                tir,
                tar: (1.0 - tir) / 2.0,
                tbr: 1.0 - tir - (1.0 - tir) / 2.0,
            },
            total_bolus: Some(idx as f64 * 3.0),
            total_meal_bolus: None,
            total_correction_bolus: Some(1.0),
            total_meal_size: Some(100.0 + idx as f64),
        }
    }

    fn cohort(spec: &[(&str, &[i64])]) -> Cohort {
        let records = spec.iter().flat_map(|(pid, days)| {
            days.iter()
                .map(move |&d| day(pid, d, (d % 10) as f64 / 10.0))
        });
        Cohort::from_records(records).unwrap()
    }

    fn encoder() -> BiomarkerEncoder {
        BiomarkerEncoder::new(default_binning_config())
    }

    #[test]
    fn three_days_one_example() {
        let c = cohort(&[("a", &[1, 2, 3])]);
        let ex = build_examples(&c, &encoder(), &LabelThresholds::default()).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].target_day, 3);
        assert_eq!(ex[0].label, ControlLabel::Poor); // tir 0.3
        assert_eq!(ex[0].f_c.len(), CONTINUOUS_DIM);
    }

    #[test]
    fn gap_breaks_triples() {
        let c = cohort(&[("a", &[1, 2, 4, 5])]);
        assert!(build_examples(&c, &encoder(), &LabelThresholds::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn sliding_window_count() {
        let days: Vec<i64> = (1..=30).collect();
        let c = cohort(&[("a", &days)]);
        let ex = build_examples(&c, &encoder(), &LabelThresholds::default()).unwrap();
        // Oracle: count i such that i, i+1, i+2 are all present.
        let present: BTreeSet<i64> = days.iter().copied().collect();
        let expected = days
            .iter()
            .filter(|&&d| present.contains(&(d + 1)) && present.contains(&(d + 2)))
            .count();
        assert_eq!(ex.len(), expected);
        assert_eq!(ex.len(), 28);
    }

    #[test]
    fn short_patient_contributes_nothing() {
        let c = cohort(&[("a", &[1, 2]), ("b", &[1, 2, 3])]);
        let ex = build_examples(&c, &encoder(), &LabelThresholds::default()).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].patient_id, "b");
    }

    #[test]
    fn label_comes_from_the_day_after_present() {
        // Target-day TIR must not appear among the window features.
        let c = Cohort {
            patients: vec![PatientSeries {
                patient_id: "a".into(),
                days: vec![day("a", 1, 0.1), day("a", 2, 0.2), day("a", 3, 0.9)],
            }],
        };
        let ex = build_examples(&c, &encoder(), &LabelThresholds::default()).unwrap();
        assert_eq!(ex[0].label, ControlLabel::Good);
        assert!(!ex[0].f_c.contains(&0.9));
        assert_eq!(ex[0].f_c[0], 0.1);
        assert_eq!(ex[0].f_c[7], 0.2);
    }

    fn many_patients(n: usize) -> Vec<Example> {
        let days: Vec<i64> = (1..=6).collect();
        let names: Vec<String> = (0..n).map(|i| format!("p{i:02}")).collect();
        let spec: Vec<(&str, &[i64])> = names
            .iter()
            .map(|s| (s.as_str(), days.as_slice()))
            .collect();
        build_examples(&cohort(&spec), &encoder(), &LabelThresholds::default()).unwrap()
    }

    #[test]
    fn thirty_patients_split_18_6_6() {
        let split = split_by_patient(many_patients(30), SplitRatios::default(), 9).unwrap();
        assert_eq!(split.train_patients.len(), 18);
        assert_eq!(split.validation_patients.len(), 6);
        assert_eq!(split.test_patients.len(), 6);
        assert_eq!(split.train.len(), 18 * 4);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_by_patient(many_patients(12), SplitRatios::default(), 5).unwrap();
        let b = split_by_patient(many_patients(12), SplitRatios::default(), 5).unwrap();
        assert_eq!(a.test_patients, b.test_patients);
        assert_eq!(a.train, b.train);
        let tr: BTreeSet<_> = a.train.iter().map(|e| &e.patient_id).collect();
        let va: BTreeSet<_> = a.validation.iter().map(|e| &e.patient_id).collect();
        let te: BTreeSet<_> = a.test.iter().map(|e| &e.patient_id).collect();
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    }

    #[test]
    fn train_moments_are_standard() {
        let split = split_by_patient(many_patients(20), SplitRatios::default(), 1).unwrap();
        let n = split.train.len() as f64;
        for j in 0..CONTINUOUS_DIM {
            let col: Vec<f64> = split.train.iter().map(|e| e.f_c[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
            if split.standardizer.std[j] > 0.0 {
                assert!(
                    (var.sqrt() - 1.0).abs() < 1e-9,
                    "feature {j} std {}",
                    var.sqrt()
                );
            } else {
                assert!(col.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn too_few_patients_rejected() {
        assert!(split_by_patient(many_patients(2), SplitRatios::default(), 1).is_err());
        let bad = SplitRatios {
            train: 0.5,
            validation: 0.5,
            test: 0.5,
        };
        assert!(split_by_patient(many_patients(10), bad, 1).is_err());
    }

    #[test]
    fn partition_never_leaves_a_split_empty() {
        let r = SplitRatios {
            train: 0.9,
            validation: 0.05,
            test: 0.05,
        };
        for n in 3..50 {
            let c = r.partition(n).unwrap();
            assert!(c.iter().all(|&x| x >= 1), "{n}: {c:?}");
            assert_eq!(c.iter().sum::<usize>(), n);
        }
    }
}
