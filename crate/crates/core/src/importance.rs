//! Perturbation importance of each binary biomarker position.
//!
//! For position `j`, every example gets `f_d[j] = 1` and the class-wise
//! mean predicted probability is compared with the unperturbed mean. By
//! default the sibling bins of the same feature-day group keep their
//! values, so a perturbed vector may have two active bins in one group.
//! [`PerturbationMode::Exclusive`] zeroes the siblings instead.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::{BiomarkerDescriptor, BiomarkerLayout};
use crate::error::{Error, Result};
use crate::evaluation::fmt_f64;
use crate::features::Example;
use crate::model::Classifier;
use crate::net::{Probs, NUM_CLASSES};
use crate::plot::{heatmap_svg, HeatmapPanel};
use crate::types::ControlLabel;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationMode {
    #[default]
    Literal,
    Exclusive,
}

impl PerturbationMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationMode::Literal => "literal",
            PerturbationMode::Exclusive => "exclusive",
        }
    }
}

impl fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(PerturbationMode::Literal),
            "exclusive" => Ok(PerturbationMode::Exclusive),
            other => Err(Error::validation(format!(
                "unknown perturbation mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEntry {
    pub position: usize,
    pub biomarker: BiomarkerDescriptor,
    /// Indexed by [`ControlLabel::index`].
    pub deltas: Probs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub model: String,
    pub dataset_fingerprint: String,
    pub mode: PerturbationMode,
    pub example_count: usize,
    /// One entry per biomarker position, in layout order.
    pub entries: Vec<ImportanceEntry>,
}

/// SHA-256 over the exact bits of every example's inputs and label.
pub fn dataset_fingerprint(examples: &[Example]) -> String {
    let mut h = Sha256::new();
    h.update((examples.len() as u64).to_le_bytes());
    for e in examples {
        h.update(e.patient_id.as_bytes());
        h.update([0]);
        h.update(e.target_day.to_le_bytes());
        for v in e.f_c.iter().chain(&e.f_d) {
            h.update(v.to_le_bytes());
        }
        h.update([e.label.index() as u8]);
    }
    hex::encode(h.finalize())
}

fn mean_probs(
    model: &dyn Classifier,
    examples: &[Example],
    f_d: impl Fn(&Example) -> Vec<f64>,
) -> Result<Probs> {
    let mut sum = [0.0; NUM_CLASSES];
    for e in examples {
        let p = model.predict_proba(&e.f_c, &f_d(e))?;
        for k in 0..NUM_CLASSES {
            sum[k] += p[k];
        }
    }
    Ok(sum.map(|s| s / examples.len() as f64))
}

pub fn compute_importance(
    model: &dyn Classifier,
    model_name: &str,
    examples: &[Example],
    layout: &BiomarkerLayout,
    mode: PerturbationMode,
) -> Result<ImportanceReport> {
    if examples.is_empty() {
        return Err(Error::validation("importance needs at least one example"));
    }
    if let Some(e) = examples.iter().find(|e| e.f_d.len() != layout.len()) {
        return Err(Error::validation(format!(
            "example has {} biomarker positions, layout has {}",
            e.f_d.len(),
            layout.len()
        )));
    }
    let base = mean_probs(model, examples, |e| e.f_d.clone())?;
    let mut entries = Vec::with_capacity(layout.len());
    for (j, desc) in layout.descriptors().iter().enumerate() {
        let group = *layout.group_of(j).expect("every position has a group");
        let perturbed = mean_probs(model, examples, |e| {
            let mut f = e.f_d.clone();
            if mode == PerturbationMode::Exclusive {
                f[group.start..group.start + group.len].fill(0.0);
            }
            f[j] = 1.0;
            f
        })?;
        let deltas = std::array::from_fn(|k| perturbed[k] - base[k]);
        entries.push(ImportanceEntry {
            position: j,
            biomarker: desc.clone(),
            deltas,
        });
    }
    Ok(ImportanceReport {
        model: model_name.to_string(),
        dataset_fingerprint: dataset_fingerprint(examples),
        mode,
        example_count: examples.len(),
        entries,
    })
}

impl ImportanceReport {
    /// The `k` entries with the largest delta for `class`, descending. Equal
    /// deltas keep layout order. `k` larger than the entry count truncates.
    pub fn top_k(&self, class: ControlLabel, k: usize) -> Vec<&ImportanceEntry> {
        let mut ranked: Vec<&ImportanceEntry> = self.entries.iter().collect();
        // Stable sort, so ties stay in layout order.
        ranked.sort_by(|a, b| b.deltas[class.index()].total_cmp(&a.deltas[class.index()]));
        ranked.truncate(k);
        ranked
    }

    /// Rank (1-based) of `biomarker` for `class`.
    pub fn rank_of(&self, class: ControlLabel, biomarker: &BiomarkerDescriptor) -> Option<usize> {
        self.top_k(class, self.entries.len())
            .iter()
            .position(|e| &e.biomarker == biomarker)
            .map(|i| i + 1)
    }
}

pub const IMPORTANCE_HEADER: &str = "feature,day,bin,delta_good,delta_moderate,delta_poor";

fn entry_row(e: &ImportanceEntry) -> String {
    let b = &e.biomarker;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        b.feature.name().to_string(),
        b.day.name().to_string(),
        b.bin_label.clone(),
        fmt_f64(e.deltas[0]),
        fmt_f64(e.deltas[1]),
        fmt_f64(e.deltas[2]),
    ])
    .expect("writing to memory");
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 input")
}

pub fn full_csv(report: &ImportanceReport) -> String {
    let mut s = format!("{IMPORTANCE_HEADER}\n");
    for e in &report.entries {
        s.push_str(&entry_row(e));
    }
    s
}

pub fn top_k_csv(report: &ImportanceReport, class: ControlLabel, k: usize) -> String {
    let mut s = format!("{IMPORTANCE_HEADER}\n");
    for e in report.top_k(class, k) {
        s.push_str(&entry_row(e));
    }
    s
}

pub fn top_k_file_name(class: ControlLabel) -> String {
    format!("importance_top_{}.csv", class.name())
}

pub fn heatmap(report: &ImportanceReport, k: usize) -> String {
    let panels: Vec<HeatmapPanel> = ControlLabel::ALL
        .into_iter()
        .map(|class| HeatmapPanel {
            key: class.name().to_string(),
            title: format!("Top-{k} for {class}"),
            rows: report
                .top_k(class, k)
                .into_iter()
                .map(|e| (e.biomarker.to_string(), e.deltas.to_vec()))
                .collect(),
        })
        .collect();
    let columns: Vec<&str> = ControlLabel::ALL.iter().map(|c| c.name()).collect();
    heatmap_svg(
        &format!(
            "Biomarker impact ({}, {} perturbation)",
            report.model, report.mode
        ),
        &columns,
        &panels,
    )
}

pub fn metadata_text(report: &ImportanceReport, k: usize) -> String {
    format!(
        "model = \"{}\"\nmode = \"{}\"\nk = {k}\nexamples = {}\ndataset_sha256 = \"{}\"\n",
        report.model, report.mode, report.example_count, report.dataset_fingerprint
    )
}

/// Writes the full CSV, one top-k CSV per class, the heatmap SVG and a
/// metadata file recording mode, k and the dataset fingerprint.
pub fn emit_importance_artifacts(
    report: &ImportanceReport,
    k: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = vec![(out_dir.join("importance_full.csv"), full_csv(report))];
    for class in ControlLabel::ALL {
        files.push((
            out_dir.join(top_k_file_name(class)),
            top_k_csv(report, class, k),
        ));
    }
    files.push((out_dir.join("importance_heatmap.svg"), heatmap(report, k)));
    files.push((
        out_dir.join("importance_meta.toml"),
        metadata_text(report, k),
    ));
    for (path, text) in &files {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::default_binning_config;
    use crate::types::{DayOffset, Feature};

    /// Softmax over logits that depend on f_d only through `weights`.
    struct Linear {
        weights: Vec<[f64; 3]>,
    }

    impl Classifier for Linear {
        fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
            let mut z = [f_c.iter().sum::<f64>() * 0.1, 0.0, 0.0];
            for (x, w) in f_d.iter().zip(&self.weights) {
                for k in 0..3 {
                    z[k] += x * w[k];
                }
            }
            Ok(crate::net::softmax(&z))
        }
    }

    fn examples(layout: &BiomarkerLayout, n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let mut f_d = vec![0.0; layout.len()];
                for (g, span) in layout.groups().iter().enumerate() {
                    f_d[span.start + (i * 7 + g * 3) % span.len] = 1.0;
                }
                Example {
                    f_c: vec![i as f64 * 0.1 - 1.0; 14],
                    f_d,
                    label: ControlLabel::ALL[i % 3],
                    patient_id: format!("p{i}"),
                    target_day: i as i64,
                }
            })
            .collect()
    }

    fn planted() -> (BiomarkerLayout, Vec<Example>, usize, Linear) {
        let layout = default_binning_config().layout();
        let ex = examples(&layout, 40);
        let j = layout
            .position(Feature::TotalCorrectionBolus, DayOffset::Prior, "no-entry")
            .unwrap();
        let mut weights = vec![[0.0; 3]; layout.len()];
        weights[j] = [2.0, 0.0, 0.0];
        (layout, ex, j, Linear { weights })
    }

    #[test]
    fn null_model_has_zero_deltas() {
        let (layout, ex, _, _) = planted();
        let m = Linear {
            weights: vec![[0.0; 3]; layout.len()],
        };
        for mode in [PerturbationMode::Literal, PerturbationMode::Exclusive] {
            let r = compute_importance(&m, "null", &ex, &layout, mode).unwrap();
            assert_eq!(r.entries.len(), layout.len());
            assert!(r.entries.iter().all(|e| e.deltas == [0.0; 3]));
            // All-zero deltas rank in layout order.
            let order: Vec<usize> = r
                .top_k(ControlLabel::Good, layout.len())
                .iter()
                .map(|e| e.position)
                .collect();
            assert_eq!(order, (0..layout.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn always_active_position_has_zero_delta() {
        let (layout, mut ex, j, m) = planted();
        let span = *layout.group_of(j).unwrap();
        for e in &mut ex {
            e.f_d[span.start..span.start + span.len].fill(0.0);
            e.f_d[j] = 1.0;
        }
        for mode in [PerturbationMode::Literal, PerturbationMode::Exclusive] {
            let r = compute_importance(&m, "m", &ex, &layout, mode).unwrap();
            assert_eq!(r.entries[j].deltas, [0.0; 3]);
        }
    }

    #[test]
    fn planted_biomarker_ranks_first_for_its_class() {
        let (layout, ex, j, m) = planted();
        let r = compute_importance(&m, "m", &ex, &layout, PerturbationMode::Literal).unwrap();
        assert_eq!(r.top_k(ControlLabel::Good, 1)[0].position, j);
        assert_eq!(
            r.rank_of(ControlLabel::Good, &layout.descriptors()[j]),
            Some(1)
        );
        assert!(r
            .entries
            .iter()
            .flat_map(|e| e.deltas)
            .all(|d| d.abs() <= 1.0));
    }

    #[test]
    fn exclusive_mode_zeroes_siblings() {
        let (layout, ex, j, _) = planted();
        let span = *layout.group_of(j).unwrap();
        let sibling = if span.start == j { j + 1 } else { span.start };
        let mut weights = vec![[0.0; 3]; layout.len()];
        weights[sibling] = [0.0, 0.0, 3.0];
        let m = Linear { weights };
        let literal = compute_importance(&m, "m", &ex, &layout, PerturbationMode::Literal).unwrap();
        let exclusive =
            compute_importance(&m, "m", &ex, &layout, PerturbationMode::Exclusive).unwrap();
        // Setting j leaves the sibling alone in literal mode but clears it in exclusive mode.
        assert_eq!(literal.entries[j].deltas, [0.0; 3]);
        assert!(exclusive.entries[j].deltas[2] < 0.0);
    }

    #[test]
    fn top_k_truncates_and_is_permutation() {
        let (layout, ex, _, m) = planted();
        let r = compute_importance(&m, "m", &ex, &layout, PerturbationMode::Literal).unwrap();
        assert_eq!(r.top_k(ControlLabel::Poor, 3).len(), 3);
        let mut all: Vec<usize> = r
            .top_k(ControlLabel::Poor, 10_000)
            .iter()
            .map(|e| e.position)
            .collect();
        assert_eq!(all.len(), layout.len());
        all.sort_unstable();
        assert_eq!(all, (0..layout.len()).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_and_dimension_checked() {
        let (layout, ex, _, m) = planted();
        let a = compute_importance(&m, "m", &ex, &layout, PerturbationMode::Literal).unwrap();
        let b = compute_importance(&m, "m", &ex, &layout, PerturbationMode::Literal).unwrap();
        assert_eq!(a, b);
        let mut short = ex.clone();
        short[3].f_d.pop();
        assert!(compute_importance(&m, "m", &short, &layout, PerturbationMode::Literal).is_err());
        assert!(compute_importance(&m, "m", &[], &layout, PerturbationMode::Literal).is_err());
    }

    #[test]
    fn artifacts_are_consistent() {
        let (layout, ex, _, m) = planted();
        let r = compute_importance(&m, "m", &ex, &layout, PerturbationMode::Literal).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_importance_artifacts(&r, 4, dir.path()).unwrap();
        let full = fs::read_to_string(dir.path().join("importance_full.csv")).unwrap();
        assert_eq!(full.lines().count(), layout.len() + 1);
        let svg = fs::read_to_string(dir.path().join("importance_heatmap.svg")).unwrap();
        for class in ControlLabel::ALL {
            let top = fs::read_to_string(dir.path().join(top_k_file_name(class))).unwrap();
            let rows: Vec<&str> = top.lines().skip(1).collect();
            assert_eq!(rows.len(), 4);
            assert!(rows.iter().all(|row| full.lines().any(|l| l == *row)));
            // Heatmap rows of this panel appear in top-k order.
            let panel = svg
                .split(&format!("data-key=\"{}\"", class.name()))
                .nth(1)
                .unwrap();
            let panel = panel.split("</g>").next().unwrap();
            let mut last = 0;
            for e in r.top_k(class, 4) {
                let label = crate::plot::xml_escape(&e.biomarker.to_string());
                let at = panel.find(&format!(">{label}</text>")).unwrap();
                assert!(at >= last);
                last = at;
            }
        }
        let meta = fs::read_to_string(dir.path().join("importance_meta.toml")).unwrap();
        assert!(meta.contains("mode = \"literal\""));
    }
}
