//! Patient-day data model, glucose range statistics and glycemic control labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of `tir + tar + tbr` from 1 for externally supplied stats.
pub const RANGE_SUM_TOLERANCE: f64 = 1e-6;

/// Fractions of a day's glucose readings inside, above and below the target range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlucoseRangeStats {
    pub tir: f64,
    pub tar: f64,
    pub tbr: f64,
}

impl GlucoseRangeStats {
    pub fn new(tir: f64, tar: f64, tbr: f64) -> Result<Self> {
        for (name, v) in [("tir", tir), ("tar", tar), ("tbr", tbr)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name}={v} outside [0, 1]")));
            }
        }
        let sum = tir + tar + tbr;
        if (sum - 1.0).abs() > RANGE_SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "tir+tar+tbr = {sum} deviates from 1 by more than {RANGE_SUM_TOLERANCE}"
            )));
        }
        Ok(Self { tir, tar, tbr })
    }
}

/// Target glucose range in mg/dL; readings in `[low, high]` count as in range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlucoseRange {
    pub low: f64,
    pub high: f64,
}

impl Default for GlucoseRange {
    fn default() -> Self {
        Self {
            low: 70.0,
            high: 180.0,
        }
    }
}

impl GlucoseRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.low > 0.0 && self.low < self.high && self.high.is_finite()) {
            return Err(Error::validation(format!(
                "glucose range requires 0 < low < high, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Aggregates one day of CGM readings into range fractions.
pub fn compute_range_stats(readings: &[f64], range: GlucoseRange) -> Result<GlucoseRangeStats> {
    range.validate()?;
    if readings.is_empty() {
        return Err(Error::data("no glucose data for day"));
    }
    let (mut below, mut above) = (0usize, 0usize);
    for &r in readings {
        if !r.is_finite() {
            return Err(Error::data(format!("non-finite glucose reading {r}")));
        }
        if r < range.low {
            below += 1;
        } else if r > range.high {
            above += 1;
        }
    }
    let n = readings.len() as f64;
    let inside = readings.len() - below - above;
    Ok(GlucoseRangeStats {
        tir: inside as f64 / n,
        tar: above as f64 / n,
        tbr: below as f64 / n,
    })
}

/// Next-day glycemic control class. The discriminant is the class index used
/// by every model output and report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlLabel {
    Good = 0,
    Moderate = 1,
    Poor = 2,
}

impl ControlLabel {
    pub const ALL: [ControlLabel; 3] = [
        ControlLabel::Good,
        ControlLabel::Moderate,
        ControlLabel::Poor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlLabel::Good => "good",
            ControlLabel::Moderate => "moderate",
            ControlLabel::Poor => "poor",
        }
    }

    /// Quality rank: Poor < Moderate < Good.
    pub fn quality(self) -> u8 {
        2 - self as u8
    }
}

impl fmt::Display for ControlLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Ok(ControlLabel::Good),
            "moderate" => Ok(ControlLabel::Moderate),
            "poor" => Ok(ControlLabel::Poor),
            other => Err(Error::validation(format!(
                "unknown control label '{other}'"
            ))),
        }
    }
}

/// TIR cut points separating Poor / Moderate / Good.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelThresholds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            lower: 0.55,
            upper: 0.70,
        }
    }
}

impl LabelThresholds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let t = Self { lower, upper };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lower && self.lower < self.upper && self.upper < 1.0) {
            return Err(Error::validation(format!(
                "label thresholds require 0 < lower < upper < 1, got ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Maps a day's TIR to its control class. `tir == upper` counts as Good.
pub fn label_control(tir: f64, thresholds: &LabelThresholds) -> Result<ControlLabel> {
    if !(0.0..=1.0).contains(&tir) {
        return Err(Error::validation(format!("tir={tir} outside [0, 1]")));
    }
    Ok(if tir >= thresholds.upper {
        ControlLabel::Good
    } else if tir >= thresholds.lower {
        ControlLabel::Moderate
    } else {
        ControlLabel::Poor
    })
}

/// The seven day-level features that get binned into biomarkers, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Tir,
    Tar,
    Tbr,
    TotalBolus,
    TotalMealBolus,
    TotalCorrectionBolus,
    TotalMealSize,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::Tir,
        Feature::Tar,
        Feature::Tbr,
        Feature::TotalBolus,
        Feature::TotalMealBolus,
        Feature::TotalCorrectionBolus,
        Feature::TotalMealSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Tir => "tir",
            Feature::Tar => "tar",
            Feature::Tbr => "tbr",
            Feature::TotalBolus => "total_bolus",
            Feature::TotalMealBolus => "total_meal_bolus",
            Feature::TotalCorrectionBolus => "total_correction_bolus",
            Feature::TotalMealSize => "total_meal_size",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown feature '{s}'")))
    }
}

/// Position of a day inside the two-day feature window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayOffset {
    Prior,
    Present,
}

impl DayOffset {
    pub const ALL: [DayOffset; 2] = [DayOffset::Prior, DayOffset::Present];

    pub fn name(self) -> &'static str {
        match self {
            DayOffset::Prior => "prior",
            DayOffset::Present => "present",
        }
    }
}

impl fmt::Display for DayOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DayOffset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(DayOffset::Prior),
            "present" => Ok(DayOffset::Present),
            other => Err(Error::validation(format!("unknown day offset '{other}'"))),
        }
    }
}

/// One patient-day of aggregated raw features. `None` means no entry was
/// recorded, which is distinct from a recorded zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub patient_id: String,
    pub day_index: i64,
    pub glucose: GlucoseRangeStats,
    pub total_bolus: Option<f64>,
    pub total_meal_bolus: Option<f64>,
    pub total_correction_bolus: Option<f64>,
    pub total_meal_size: Option<f64>,
}

impl DayRecord {
    pub fn value(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Tir => Some(self.glucose.tir),
            Feature::Tar => Some(self.glucose.tar),
            Feature::Tbr => Some(self.glucose.tbr),
            Feature::TotalBolus => self.total_bolus,
            Feature::TotalMealBolus => self.total_meal_bolus,
            Feature::TotalCorrectionBolus => self.total_correction_bolus,
            Feature::TotalMealSize => self.total_meal_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        GlucoseRangeStats::new(self.glucose.tir, self.glucose.tar, self.glucose.tbr)?;
        for f in &Feature::ALL[3..] {
            if let Some(v) = self.value(*f) {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::validation(format!(
                        "{f}={v} must be a nonnegative finite value"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// All recorded days of one patient, sorted by `day_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientSeries {
    pub patient_id: String,
    pub days: Vec<DayRecord>,
}

/// A validated multi-patient dataset. Patients are ordered by id and each
/// patient's days by `day_index`; `(patient_id, day_index)` is unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub patients: Vec<PatientSeries>,
}

impl Cohort {
    pub fn from_records(records: impl IntoIterator<Item = DayRecord>) -> Result<Self> {
        let mut by_patient: std::collections::BTreeMap<String, Vec<DayRecord>> =
            std::collections::BTreeMap::new();
        for r in records {
            r.validate()
                .map_err(|e| e.context(format!("patient {} day {}", r.patient_id, r.day_index)))?;
            by_patient.entry(r.patient_id.clone()).or_default().push(r);
        }
        let mut patients = Vec::with_capacity(by_patient.len());
        for (patient_id, mut days) in by_patient {
            days.sort_by_key(|d| d.day_index);
            if let Some(w) = days.windows(2).find(|w| w[0].day_index == w[1].day_index) {
                return Err(Error::data(format!(
                    "duplicate record for patient {patient_id} day {}",
                    w[0].day_index
                )));
            }
            patients.push(PatientSeries { patient_id, days });
        }
        Ok(Self { patients })
    }

    pub fn day_count(&self) -> usize {
        self.patients.iter().map(|p| p.days.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &DayRecord> {
        self.patients.iter().flat_map(|p| p.days.iter())
    }
}
