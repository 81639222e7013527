//! Seeded synthetic cohorts with planted biomarker effects on next-day TIR.
//!
//! Every day's TIR is `clamp(base_tir + effect_strength * shifts + noise_level * z, 0, 1)`
//! where `shifts` sums the planted rules that fire on the two preceding days
//! and `z` is standard normal. The first two days of a patient have no
//! window and use `shifts = 0`. TAR and TBR split the remainder; doses and
//! meal sizes are independent draws from absent/lognormal mixtures.

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binning::{BinningConfig, BiomarkerDescriptor};
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, Rng};
use crate::types::{Cohort, DayOffset, DayRecord, Feature, GlucoseRangeStats};

/// Shifts next-day TIR by `shift` whenever the named bin is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedRule {
    pub feature: Feature,
    pub day: DayOffset,
    pub bin: String,
    pub shift: f64,
}

impl PlantedRule {
    pub fn new(feature: Feature, day: DayOffset, bin: &str, shift: f64) -> Self {
        Self {
            feature,
            day,
            bin: bin.to_string(),
            shift,
        }
    }

    pub fn descriptor(&self) -> BiomarkerDescriptor {
        BiomarkerDescriptor {
            feature: self.feature,
            day: self.day,
            bin_label: self.bin.clone(),
        }
    }

    fn bin_index(&self, binning: &BinningConfig) -> Result<usize> {
        let scheme = binning.scheme(self.feature);
        scheme
            .bin_labels()
            .iter()
            .position(|l| *l == self.bin)
            .ok_or_else(|| {
                Error::Config(format!(
                    "planted rule bin '{}' is not a bin of {} (bins: {})",
                    self.bin,
                    self.feature,
                    scheme.bin_labels().join(", ")
                ))
            })
    }
}

pub fn default_planted_rules() -> Vec<PlantedRule> {
    vec![
        PlantedRule::new(
            Feature::TotalCorrectionBolus,
            DayOffset::Prior,
            "no-entry",
            0.25,
        ),
        PlantedRule::new(Feature::Tar, DayOffset::Prior, ">=0.8", -0.40),
        // Produces the low-TIR days that the TAR rule needs in order to fire.
        PlantedRule::new(
            Feature::TotalCorrectionBolus,
            DayOffset::Present,
            "[10,20)",
            -0.45,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub days_per_patient: usize,
    /// Pipelines derive this from the run seed.
    #[serde(skip)]
    pub seed: u64,
    pub effect_strength: f64,
    pub noise_level: f64,
    /// TIR before any rule shift. The default sits midway between the
    /// default label thresholds.
    pub base_tir: f64,
    pub planted_rules: Vec<PlantedRule>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 30,
            days_per_patient: 90,
            seed: 0,
            effect_strength: 1.0,
            noise_level: 0.05,
            base_tir: 0.625,
            planted_rules: default_planted_rules(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, binning: &BinningConfig) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be at least 1".into()));
        }
        if self.days_per_patient < 3 {
            return Err(Error::Config("days_per_patient must be at least 3".into()));
        }
        for (name, v) in [
            ("effect_strength", self.effect_strength),
            ("noise_level", self.noise_level),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.base_tir) {
            return Err(Error::Config(format!(
                "base_tir must lie in [0, 1], got {}",
                self.base_tir
            )));
        }
        for r in &self.planted_rules {
            if !r.shift.is_finite() {
                return Err(Error::Config(format!(
                    "planted rule shift must be finite, got {}",
                    r.shift
                )));
            }
            r.bin_index(binning)?;
        }
        Ok(())
    }
}

struct Mixture {
    absent: f64,
    dist: LogNormal<f64>,
    /// Values are rounded to multiples of this.
    step: f64,
}

impl Mixture {
    fn new(absent: f64, median: f64, sigma: f64, step: f64) -> Self {
        Self {
            absent,
            dist: LogNormal::new(median.ln(), sigma).expect("valid lognormal"),
            step,
        }
    }

    fn sample(&self, rng: &mut Rng) -> Option<f64> {
        if rng.random::<f64>() < self.absent {
            return None;
        }
        Some((self.dist.sample(rng) / self.step).round() * self.step)
    }
}

struct DoseModel {
    meal_bolus: Mixture,
    correction: Mixture,
    basal_like: Mixture,
    meal_size: Mixture,
    total_absent: f64,
}

impl DoseModel {
    fn new() -> Self {
        Self {
            meal_bolus: Mixture::new(0.15, 12.0, 0.6, 0.1),
            correction: Mixture::new(0.35, 8.0, 0.9, 0.1),
            basal_like: Mixture::new(0.0, 14.0, 0.6, 0.1),
            meal_size: Mixture::new(0.10, 180.0, 0.5, 1.0),
            total_absent: 0.10,
        }
    }
}

/// Fractions of the non-TIR remainder going above range: point masses at
/// 0 and 1 so the "TAR 0%" and "TBR 0%" bins are populated.
fn split_remainder(tir: f64, rng: &mut Rng) -> (f64, f64) {
    let rest = 1.0 - tir;
    let u: f64 = rng.random();
    let s = if u < 0.25 {
        0.0
    } else if u < 0.45 {
        1.0
    } else {
        rng.random::<f64>()
    };
    let tar = rest * s;
    (tar, rest - tar)
}

fn sample_day(
    patient_id: &str,
    day_index: i64,
    tir: f64,
    doses: &DoseModel,
    rng: &mut Rng,
) -> DayRecord {
    let (tar, tbr) = split_remainder(tir, rng);
    let meal = doses.meal_bolus.sample(rng);
    let corr = doses.correction.sample(rng);
    let extra = doses.basal_like.sample(rng).unwrap_or(0.0);
    let total = if rng.random::<f64>() < doses.total_absent {
        None
    } else {
        Some(((meal.unwrap_or(0.0) + corr.unwrap_or(0.0) + extra) * 10.0).round() / 10.0)
    };
    DayRecord {
        patient_id: patient_id.to_string(),
        day_index,
        glucose: GlucoseRangeStats { tir, tar, tbr },
        total_bolus: total,
        total_meal_bolus: meal,
        total_correction_bolus: corr,
        total_meal_size: doses.meal_size.sample(rng),
    }
}

/// Sum of the shifts of all rules active on the `(prior, present)` window.
pub fn rule_shift(
    rules: &[PlantedRule],
    prior: &DayRecord,
    present: &DayRecord,
    binning: &BinningConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for r in rules {
        let day = match r.day {
            DayOffset::Prior => prior,
            DayOffset::Present => present,
        };
        let active = binning.scheme(r.feature).bin_index(day.value(r.feature))?;
        if active == r.bin_index(binning)? {
            total += r.shift;
        }
    }
    Ok(total)
}

pub fn generate(cfg: &GeneratorConfig, binning: &BinningConfig) -> Result<Cohort> {
    cfg.validate(binning)?;
    let mut rng = seeded_rng(cfg.seed);
    let doses = DoseModel::new();
    let width = cfg.n_patients.to_string().len().max(2);
    let mut records = Vec::with_capacity(cfg.n_patients * cfg.days_per_patient);
    for p in 0..cfg.n_patients {
        let id = format!("P{:0width$}", p + 1);
        let mut days: Vec<DayRecord> = Vec::with_capacity(cfg.days_per_patient);
        for d in 0..cfg.days_per_patient {
            let shift = if d >= 2 {
                rule_shift(&cfg.planted_rules, &days[d - 2], &days[d - 1], binning)?
            } else {
                0.0
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            let tir =
                (cfg.base_tir + cfg.effect_strength * shift + cfg.noise_level * z).clamp(0.0, 1.0);
            days.push(sample_day(&id, d as i64, tir, &doses, &mut rng));
        }
        records.extend(days);
    }
    Cohort::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::default_binning_config;
    use crate::types::{label_control, LabelThresholds};

    fn cfg(n: usize, days: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: n,
            days_per_patient: days,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_shape() {
        let c = generate(&GeneratorConfig::default(), &default_binning_config()).unwrap();
        assert_eq!(c.patients.len(), 30);
        assert!(c.patients.iter().all(|p| p.days.len() == 90));
    }

    #[test]
    fn same_seed_same_output() {
        let b = default_binning_config();
        assert_eq!(
            generate(&cfg(4, 20, 9), &b).unwrap(),
            generate(&cfg(4, 20, 9), &b).unwrap()
        );
        assert_ne!(
            generate(&cfg(4, 20, 9), &b).unwrap(),
            generate(&cfg(4, 20, 10), &b).unwrap()
        );
    }

    #[test]
    fn records_satisfy_invariants() {
        let c = generate(&cfg(10, 60, 1), &default_binning_config()).unwrap();
        for r in c.records() {
            r.validate().unwrap();
            let g = r.glucose;
            assert!((g.tir + g.tar + g.tbr - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn every_default_bin_gets_mass() {
        let b = default_binning_config();
        let c = generate(&cfg(50, 220, 2), &b).unwrap();
        assert!(c.day_count() >= 10_000);
        for scheme in b.schemes() {
            let mut counts = vec![0usize; scheme.bin_count()];
            for r in c.records() {
                counts[scheme.bin_index(r.value(scheme.feature())).unwrap()] += 1;
            }
            assert!(
                counts.iter().all(|&n| n > 0),
                "{}: {counts:?}",
                scheme.feature()
            );
        }
    }

    #[test]
    fn noiseless_labels_follow_rules_exactly() {
        let b = default_binning_config();
        let th = LabelThresholds::default();
        let g = GeneratorConfig {
            noise_level: 0.0,
            ..cfg(5, 80, 3)
        };
        let c = generate(&g, &b).unwrap();
        for p in &c.patients {
            for w in p.days.windows(3) {
                let expected = (g.base_tir
                    + rule_shift(&g.planted_rules, &w[0], &w[1], &b).unwrap())
                .clamp(0.0, 1.0);
                assert_eq!(w[2].glucose.tir, expected);
                assert_eq!(
                    label_control(w[2].glucose.tir, &th).unwrap(),
                    label_control(expected, &th).unwrap()
                );
            }
        }
    }

    #[test]
    fn null_effect_is_independent_of_planted_bin() {
        // Chi-square test of independence between the planted bin and the
        // next-day label, df = (2-1)(3-1) = 2.
        let b = default_binning_config();
        let th = LabelThresholds::default();
        let g = GeneratorConfig {
            effect_strength: 0.0,
            ..cfg(60, 200, 4)
        };
        let c = generate(&g, &b).unwrap();
        let rule = &g.planted_rules[0];
        let mut table = [[0.0f64; 3]; 2];
        for p in &c.patients {
            for w in p.days.windows(3) {
                let active =
                    rule_shift(std::slice::from_ref(rule), &w[0], &w[1], &b).unwrap() != 0.0;
                let label = label_control(w[2].glucose.tir, &th).unwrap();
                table[active as usize][label.index()] += 1.0;
            }
        }
        let n: f64 = table.iter().flatten().sum();
        let mut chi2 = 0.0;
        for (i, row) in table.iter().enumerate() {
            for j in 0..3 {
                let expected = row.iter().sum::<f64>() * (table[0][j] + table[1][j]) / n;
                chi2 += (table[i][j] - expected).powi(2) / expected;
            }
        }
        const CHI2_DF2_ALPHA_001: f64 = 9.2103;
        assert!(chi2 < CHI2_DF2_ALPHA_001, "chi2 = {chi2}, table {table:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let b = default_binning_config();
        let bad = [
            GeneratorConfig {
                n_patients: 0,
                ..Default::default()
            },
            GeneratorConfig {
                days_per_patient: 2,
                ..Default::default()
            },
            GeneratorConfig {
                noise_level: -1.0,
                ..Default::default()
            },
            GeneratorConfig {
                planted_rules: vec![PlantedRule::new(
                    Feature::Tir,
                    DayOffset::Prior,
                    "[0,5)",
                    0.1,
                )],
                ..Default::default()
            },
        ];
        for g in bad {
            assert!(matches!(generate(&g, &b), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_parses_from_toml() {
        let g: GeneratorConfig = toml::from_str(
            r#"
            n_patients = 3
            [[planted_rules]]
            feature = "total_meal_size"
            day = "present"
            bin = ">=300"
            shift = -0.3
            "#,
        )
        .unwrap();
        assert_eq!(g.n_patients, 3);
        assert_eq!(g.days_per_patient, 90);
        assert_eq!(
            g.planted_rules,
            vec![PlantedRule::new(
                Feature::TotalMealSize,
                DayOffset::Present,
                ">=300",
                -0.3
            )]
        );
        g.validate(&default_binning_config()).unwrap();
    }
}
