//! One-vs-rest ROC curves, AUC, accuracy and confusion matrices.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::Example;
use crate::model::Classifier;
use crate::net::{Probs, NUM_CLASSES};
use crate::plot;
use crate::types::ControlLabel;

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Formats a float with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false_positive_rate, true_positive_rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Sweeps thresholds over the distinct scores in descending order. Tied
/// scores move the curve in one diagonal step, which makes the area equal to
/// the Mann-Whitney statistic with ties counted one half.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(Error::validation(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::validation(format!("non-finite score {s}")));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation("AUC undefined for single-class labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = trapezoid_auc(&points);
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One-vs-rest curve per class; `None` when the class has no positives
    /// (or no negatives) in the evaluated set.
    pub curves: [Option<RocCurve>; NUM_CLASSES],
    /// Unweighted mean of the defined per-class AUCs.
    pub macro_auc: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl EvalReport {
    pub fn auc(&self, class: ControlLabel) -> Option<f64> {
        self.curves[class.index()].as_ref().map(|c| c.auc)
    }
}

pub fn evaluate_probabilities(probs: &[Probs], labels: &[ControlLabel]) -> Result<EvalReport> {
    if probs.len() != labels.len() {
        return Err(Error::validation(
            "probabilities and labels differ in length",
        ));
    }
    let mut present = [false; NUM_CLASSES];
    labels.iter().for_each(|l| present[l.index()] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::validation(
            "AUC undefined for single-class labels: evaluation set contains fewer than two classes",
        ));
    }
    let mut curves: [Option<RocCurve>; NUM_CLASSES] = Default::default();
    for class in ControlLabel::ALL {
        let k = class.index();
        if !present[k] {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        curves[k] =
            Some(roc_curve(&scores, &positives).map_err(|e| e.context(format!("class {class}")))?);
    }
    let defined: Vec<f64> = curves.iter().flatten().map(|c| c.auc).collect();
    let macro_auc = defined.iter().sum::<f64>() / defined.len() as f64;

    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (p, l) in probs.iter().zip(labels) {
        confusion[l.index()][argmax(p)] += 1;
    }
    let correct: usize = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        curves,
        macro_auc,
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
    })
}

pub fn evaluate(model: &dyn Classifier, examples: &[Example]) -> Result<EvalReport> {
    let probs = examples
        .iter()
        .map(|e| model.predict_proba(&e.f_c, &e.f_d))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<ControlLabel> = examples.iter().map(|e| e.label).collect();
    evaluate_probabilities(&probs, &labels)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn curve_file_name(model: &str, class: ControlLabel) -> String {
    format!("roc_{model}_{class}.csv")
}

pub fn curve_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in &curve.points {
        s.push_str(&format!("{},{}\n", fmt_f64(*x), fmt_f64(*y)));
    }
    s
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(format!("{}: bad row {rec:?}", path.display())))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Writes one `fpr,tpr` CSV per (model, class), an `auc_summary.csv` and
/// one overlay SVG per class. Returns the written paths.
pub fn emit_roc_artifacts(
    reports: &[(String, EvalReport)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut summary = String::from("model,class,auc,accuracy\n");
    for (name, report) in reports {
        for class in ControlLabel::ALL {
            let Some(curve) = &report.curves[class.index()] else {
                continue;
            };
            let path = out_dir.join(curve_file_name(name, class));
            write(&path, &curve_csv(curve))?;
            written.push(path);
            summary.push_str(&format!(
                "{name},{class},{},{}\n",
                fmt_f64(curve.auc),
                fmt_f64(report.accuracy)
            ));
        }
    }
    let path = out_dir.join("auc_summary.csv");
    write(&path, &summary)?;
    written.push(path);

    for class in ControlLabel::ALL {
        let path = out_dir.join(format!("roc_{class}.svg"));
        write(&path, &roc_class_svg(reports, class))?;
        written.push(path);
    }
    Ok(written)
}

/// One-vs-rest ROC plot for `class` with one curve per model.
pub fn roc_class_svg(reports: &[(String, EvalReport)], class: ControlLabel) -> String {
    let series: Vec<plot::Series<'_>> = reports
        .iter()
        .filter_map(|(name, r)| {
            r.curves[class.index()].as_ref().map(|c| plot::Series {
                label: format!("{name} (AUC {:.3})", c.auc),
                points: &c.points,
            })
        })
        .collect();
    plot::roc_svg(&format!("ROC: {class} control (one-vs-rest)"), &series)
}

/// One row per model sorted by macro AUC, descending.
pub fn comparison_csv(reports: &[(String, EvalReport)]) -> String {
    let mut rows: Vec<&(String, EvalReport)> = reports.iter().collect();
    rows.sort_by(|a, b| {
        b.1.macro_auc
            .total_cmp(&a.1.macro_auc)
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut s = String::from("model,macro_auc,auc_good,auc_moderate,auc_poor,accuracy\n");
    for (name, r) in rows {
        let cell = |c: ControlLabel| r.auc(c).map_or_else(|| "nan".to_string(), fmt_f64);
        s.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            fmt_f64(r.macro_auc),
            cell(ControlLabel::Good),
            cell(ControlLabel::Moderate),
            cell(ControlLabel::Poor),
            fmt_f64(r.accuracy)
        ));
    }
    s
}
