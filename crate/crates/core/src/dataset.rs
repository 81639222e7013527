//! CSV reading and writing for day-level records and raw glucose readings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{compute_range_stats, Cohort, DayRecord, GlucoseRange, GlucoseRangeStats};

pub const DAY_HEADER: [&str; 9] = [
    "patient_id",
    "day_index",
    "tir",
    "tar",
    "tbr",
    "total_bolus",
    "total_meal_bolus",
    "total_correction_bolus",
    "total_meal_size",
];

pub const READINGS_HEADER: [&str; 3] = ["patient_id", "day_index", "glucose_mgdl"];

pub const DOSES_HEADER: [&str; 6] = [
    "patient_id",
    "day_index",
    "total_bolus",
    "total_meal_bolus",
    "total_correction_bolus",
    "total_meal_size",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in cohort order. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Format(format!("writing CSV: {e}"));
    w.write_record(DAY_HEADER).map_err(to_err)?;
    for r in cohort.records() {
        w.write_record([
            r.patient_id.clone(),
            r.day_index.to_string(),
            r.glucose.tir.to_string(),
            r.glucose.tar.to_string(),
            r.glucose.tbr.to_string(),
            opt(r.total_bolus),
            opt(r.total_meal_bolus),
            opt(r.total_correction_bolus),
            opt(r.total_meal_size),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Format(format!("writing CSV: {e}")))
}

pub fn save_csv(cohort: &Cohort, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(cohort, f).map_err(|e| e.context(path.display()))
}

struct Rows<R: Read> {
    reader: csv::Reader<R>,
    line: u64,
}

impl<R: Read> Rows<R> {
    fn new(input: R, expected: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let header = reader
            .headers()
            .map_err(|e| Error::data(format!("line 1: {e}")))?
            .clone();
        if header.iter().ne(expected.iter().copied()) {
            return Err(Error::data(format!(
                "line 1: expected header '{}', found '{}'",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        Ok(Self { reader, line: 1 })
    }

    fn next(&mut self) -> Option<Result<csv::StringRecord>> {
        let mut rec = csv::StringRecord::new();
        match self.reader.read_record(&mut rec) {
            Ok(false) => None,
            Ok(true) => {
                self.line = rec.position().map_or(self.line + 1, |p| p.line());
                Some(Ok(rec))
            }
            Err(e) => Some(Err(Error::data(format!("line {}: {e}", self.line + 1)))),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::data(format!("line {}: {msg}", self.line))
    }

    fn float(&self, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
        rec[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(format!("{name}: '{}' is not a finite number", &rec[i])))
    }

    fn optional(&self, rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
        if rec[i].is_empty() {
            return Ok(None);
        }
        let v = self.float(rec, i, name)?;
        if v < 0.0 {
            return Err(self.err(format!("{name}: {v} must be nonnegative")));
        }
        Ok(Some(v))
    }

    fn key(&self, rec: &csv::StringRecord) -> Result<(String, i64)> {
        if rec[0].is_empty() {
            return Err(self.err("patient_id is empty"));
        }
        let day = rec[1]
            .parse::<i64>()
            .map_err(|_| self.err(format!("day_index: '{}' is not an integer", &rec[1])))?;
        Ok((rec[0].to_string(), day))
    }
}

/// Parses day-level records; see [`DAY_HEADER`]. Empty dose/size fields are absent.
pub fn read_csv<R: Read>(input: R) -> Result<Cohort> {
    let mut rows = Rows::new(input, &DAY_HEADER)?;
    let mut records = Vec::new();
    let mut seen = BTreeMap::new();
    while let Some(rec) = rows.next() {
        let rec = rec?;
        let (patient_id, day_index) = rows.key(&rec)?;
        if let Some(first) = seen.insert((patient_id.clone(), day_index), rows.line) {
            return Err(rows.err(format!(
                "duplicate record for patient {patient_id} day {day_index} (first on line {first})"
            )));
        }
        let glucose = GlucoseRangeStats::new(
            rows.float(&rec, 2, "tir")?,
            rows.float(&rec, 3, "tar")?,
            rows.float(&rec, 4, "tbr")?,
        )
        .map_err(|e| rows.err(e))?;
        records.push(DayRecord {
            patient_id,
            day_index,
            glucose,
            total_bolus: rows.optional(&rec, 5, "total_bolus")?,
            total_meal_bolus: rows.optional(&rec, 6, "total_meal_bolus")?,
            total_correction_bolus: rows.optional(&rec, 7, "total_correction_bolus")?,
            total_meal_size: rows.optional(&rec, 8, "total_meal_size")?,
        });
    }
    Cohort::from_records(records)
}

pub fn load_csv(path: &Path) -> Result<Cohort> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(f).map_err(|e| e.context(path.display()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Doses {
    total_bolus: Option<f64>,
    total_meal_bolus: Option<f64>,
    total_correction_bolus: Option<f64>,
    total_meal_size: Option<f64>,
}

fn read_doses<R: Read>(input: R) -> Result<BTreeMap<(String, i64), Doses>> {
    let mut rows = Rows::new(input, &DOSES_HEADER)?;
    let mut out = BTreeMap::new();
    while let Some(rec) = rows.next() {
        let rec = rec?;
        let key = rows.key(&rec)?;
        let d = Doses {
            total_bolus: rows.optional(&rec, 2, "total_bolus")?,
            total_meal_bolus: rows.optional(&rec, 3, "total_meal_bolus")?,
            total_correction_bolus: rows.optional(&rec, 4, "total_correction_bolus")?,
            total_meal_size: rows.optional(&rec, 5, "total_meal_size")?,
        };
        if out.insert(key.clone(), d).is_some() {
            return Err(rows.err(format!(
                "duplicate record for patient {} day {}",
                key.0, key.1
            )));
        }
    }
    Ok(out)
}

/// Aggregates raw readings (see [`READINGS_HEADER`]) into day records.
/// Doses come from an optional second CSV (see [`DOSES_HEADER`]); days
/// without a dose row have every dose absent. Dose rows for days without
/// readings are an error.
pub fn read_readings<R: Read, D: Read>(
    readings: R,
    doses: Option<D>,
    range: GlucoseRange,
) -> Result<Cohort> {
    range.validate()?;
    let mut rows = Rows::new(readings, &READINGS_HEADER)?;
    let mut by_day: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    while let Some(rec) = rows.next() {
        let rec = rec?;
        let key = rows.key(&rec)?;
        let g = rows.float(&rec, 2, "glucose_mgdl")?;
        if g < 0.0 {
            return Err(rows.err(format!("glucose_mgdl: {g} must be nonnegative")));
        }
        by_day.entry(key).or_default().push(g);
    }
    let mut doses = match doses {
        Some(d) => read_doses(d).map_err(|e| e.context("doses"))?,
        None => BTreeMap::new(),
    };
    let mut records = Vec::with_capacity(by_day.len());
    for ((patient_id, day_index), values) in by_day {
        let glucose = compute_range_stats(&values, range)?;
        let d = doses
            .remove(&(patient_id.clone(), day_index))
            .unwrap_or_default();
        records.push(DayRecord {
            patient_id,
            day_index,
            glucose,
            total_bolus: d.total_bolus,
            total_meal_bolus: d.total_meal_bolus,
            total_correction_bolus: d.total_correction_bolus,
            total_meal_size: d.total_meal_size,
        });
    }
    if let Some(((p, day), _)) = doses.into_iter().next() {
        return Err(Error::data(format!(
            "doses: patient {p} day {day} has no glucose readings"
        )));
    }
    Cohort::from_records(records)
}

pub fn load_readings(readings: &Path, doses: Option<&Path>, range: GlucoseRange) -> Result<Cohort> {
    let r = File::open(readings).map_err(|e| Error::io(readings, e))?;
    let d = doses
        .map(|p| File::open(p).map_err(|e| Error::io(p, e)))
        .transpose()?;
    read_readings(r, d, range).map_err(|e| e.context(readings.display()))
}
