//! End-to-end stages shared by the command-line tool and the tests.
//!
//! Output directory layout written by [`run_all`]:
//!
//! ```text
//! config.toml               resolved configuration
//! data.csv                  day-level records that were used
//! split_manifest.csv        patient_id,split,examples
//! standardizer.csv          continuous feature moments fitted on train
//! models/<name>.gmk         one file per model
//! history_<name>.csv        per-epoch losses (objective for linear_svc)
//! eval/...                  ROC curves, AUC summary, ROC SVGs, comparison.csv
//! importance/...            importance CSVs, heatmap SVG, metadata
//! manifest.csv              path,bytes,sha256 of every file above
//! run_metadata.toml         timestamp; the only file that differs between runs
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::baselines::{fit_mlp, GaussianNb, LinearSvc, LinearSvcConfig};
use crate::binning::BiomarkerEncoder;
use crate::config::{DataSource, PipelineConfig, SplitName};
use crate::dataset::{load_csv, load_readings, write_csv};
use crate::error::{Error, Result};
use crate::evaluation::{comparison_csv, emit_roc_artifacts, evaluate, fmt_f64, EvalReport};
use crate::features::{
    build_examples, continuous_feature_names, split_by_patient, DatasetSplit, Example,
};
use crate::importance::{compute_importance, emit_importance_artifacts, ImportanceReport};
use crate::model::{Classifier, Model, ModelKind};
use crate::net::GluMarkerNet;
use crate::rng::derive_seed;
use crate::synth::generate;
use crate::train::{train, TrainConfig};
use crate::types::Cohort;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const METADATA_FILE: &str = "run_metadata.toml";

pub fn load_cohort(cfg: &PipelineConfig) -> Result<Cohort> {
    match &cfg.data {
        DataSource::Synthetic => {
            let mut g = cfg.synthetic.clone();
            g.seed = derive_seed(cfg.seed, "synthetic");
            generate(&g, &cfg.binning)
        }
        DataSource::Csv { path } => load_csv(path),
        DataSource::Readings { readings, doses } => {
            load_readings(readings, doses.as_deref(), cfg.glucose_range)
        }
    }
}

/// Examples built from a cohort and split by patient.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cohort: Cohort,
    pub encoder: BiomarkerEncoder,
    pub split: DatasetSplit,
}

impl Prepared {
    pub fn examples(&self, which: SplitName) -> &[Example] {
        match which {
            SplitName::Train => &self.split.train,
            SplitName::Validation => &self.split.validation,
            SplitName::Test => &self.split.test,
        }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (
            continuous_feature_names().len(),
            self.encoder.layout().len(),
        )
    }
}

pub fn prepare_cohort(cfg: &PipelineConfig, cohort: Cohort) -> Result<Prepared> {
    let encoder = BiomarkerEncoder::new(cfg.binning.clone());
    let examples = build_examples(&cohort, &encoder, &cfg.labels)?;
    if examples.is_empty() {
        return Err(Error::data(
            "no patient has three consecutive days; nothing to train on",
        ));
    }
    let split = split_by_patient(examples, cfg.split, derive_seed(cfg.seed, "split"))?;
    for (name, set) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        if set.is_empty() {
            return Err(Error::data(format!("{name} split has no examples")));
        }
    }
    Ok(Prepared {
        cohort,
        encoder,
        split,
    })
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let cohort = load_cohort(cfg)?;
    prepare_cohort(cfg, cohort)
}

pub struct TrainedModel {
    pub kind: ModelKind,
    pub model: Model,
    /// CSV text of the per-epoch training record, when the model has one.
    pub history: Option<String>,
}

fn seeded(train_cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train_cfg.clone()
    }
}

pub fn train_one(
    cfg: &PipelineConfig,
    kind: ModelKind,
    split: &DatasetSplit,
) -> Result<TrainedModel> {
    let (cd, dd) = (split.continuous_dim(), split.discrete_dim());
    let stage = |s: &str| derive_seed(cfg.seed, &format!("{}.{s}", kind.name()));
    let context = |e: Error| e.context(format!("training {kind}"));
    log::info!("training {kind} on {} examples", split.train.len());
    let trained = match kind {
        ModelKind::GluMarker => {
            let net = GluMarkerNet::new(&cfg.glumarker.arch, cd, dd, stage("init"))?;
            let (net, h) = train(
                net,
                &split.train,
                &split.validation,
                &seeded(&cfg.glumarker.train, stage("train")),
            )
            .map_err(context)?;
            TrainedModel {
                kind,
                model: Model::GluMarker(net),
                history: Some(h.to_csv()),
            }
        }
        ModelKind::Mlp => {
            let (mlp, h) = fit_mlp(
                &split.train,
                &split.validation,
                &cfg.mlp.arch,
                &seeded(&cfg.mlp.train, stage("train")),
                stage("init"),
            )
            .map_err(context)?;
            TrainedModel {
                kind,
                model: Model::Mlp(mlp),
                history: Some(h.to_csv()),
            }
        }
        ModelKind::NaiveBayes => TrainedModel {
            kind,
            model: Model::NaiveBayes(
                GaussianNb::fit(&split.train, cfg.naive_bayes.variance_floor).map_err(context)?,
            ),
            history: None,
        },
        ModelKind::LinearSvc => {
            let svc_cfg = LinearSvcConfig {
                seed: stage("train"),
                ..cfg.linear_svc.clone()
            };
            let mut svc = LinearSvc::zeros(cd, dd);
            let objective = svc.train_epochs(&split.train, &svc_cfg).map_err(context)?;
            let mut h = String::from("epoch,objective\n");
            for (i, o) in objective.iter().enumerate() {
                h.push_str(&format!("{},{}\n", i + 1, fmt_f64(*o)));
            }
            TrainedModel {
                kind,
                model: Model::LinearSvc(svc),
                history: Some(h),
            }
        }
    };
    Ok(trained)
}

/// GluMarker first, then the configured baselines in a fixed order.
pub fn model_kinds(cfg: &PipelineConfig) -> Vec<ModelKind> {
    ModelKind::ALL
        .into_iter()
        .filter(|k| *k == ModelKind::GluMarker || cfg.models.baselines.contains(k))
        .collect()
}

pub fn train_models(cfg: &PipelineConfig, split: &DatasetSplit) -> Result<Vec<TrainedModel>> {
    model_kinds(cfg)
        .into_iter()
        .map(|k| train_one(cfg, k, split))
        .collect()
}

pub fn evaluate_models<'a>(
    models: impl IntoIterator<Item = (String, &'a dyn Classifier)>,
    examples: &[Example],
) -> Result<Vec<(String, EvalReport)>> {
    models
        .into_iter()
        .map(|(name, m)| {
            let r = evaluate(m, examples).map_err(|e| e.context(format!("evaluating {name}")))?;
            Ok((name, r))
        })
        .collect()
}

pub fn importance_for(
    cfg: &PipelineConfig,
    prepared: &Prepared,
    model: &dyn Classifier,
    name: &str,
) -> Result<ImportanceReport> {
    compute_importance(
        model,
        name,
        prepared.examples(cfg.importance.split),
        prepared.encoder.layout(),
        cfg.importance.mode,
    )
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn split_manifest_csv(split: &DatasetSplit) -> String {
    let mut s = String::from("patient_id,split,examples\n");
    let mut rows = Vec::new();
    for (name, patients, set) in [
        ("train", &split.train_patients, &split.train),
        ("validation", &split.validation_patients, &split.validation),
        ("test", &split.test_patients, &split.test),
    ] {
        for p in patients {
            let n = set.iter().filter(|e| &e.patient_id == p).count();
            rows.push((p.clone(), name, n));
        }
    }
    rows.sort();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for (p, name, n) in rows {
        w.write_record([p, name.to_string(), n.to_string()])
            .expect("writing to memory");
    }
    s.push_str(std::str::from_utf8(&w.into_inner().expect("writing to memory")).expect("utf-8"));
    s
}

pub fn standardizer_csv(split: &DatasetSplit) -> String {
    let mut s = String::from("feature,mean,std\n");
    for ((name, m), sd) in continuous_feature_names()
        .iter()
        .zip(&split.standardizer.mean)
        .zip(&split.standardizer.std)
    {
        s.push_str(&format!("{name},{},{}\n", fmt_f64(*m), fmt_f64(*sd)));
    }
    s
}

/// One row per example: identifiers, label, standardized `f_c`, then `f_d`.
pub fn examples_csv(prepared: &Prepared, examples: &[Example]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "patient_id".to_string(),
        "target_day".into(),
        "label".into(),
    ];
    header.extend(continuous_feature_names());
    header.extend(
        prepared
            .encoder
            .layout()
            .descriptors()
            .iter()
            .map(|d| d.to_string()),
    );
    w.write_record(&header).expect("writing to memory");
    for e in examples {
        let mut row = vec![
            e.patient_id.clone(),
            e.target_day.to_string(),
            e.label.name().to_string(),
        ];
        row.extend(e.f_c.iter().map(|v| fmt_f64(*v)));
        row.extend(e.f_d.iter().map(|v| format!("{v}")));
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8")
}

pub fn write_featurize_artifacts(prepared: &Prepared, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = vec![
        write(
            &out.join("split_manifest.csv"),
            split_manifest_csv(&prepared.split),
        )?,
        write(
            &out.join("standardizer.csv"),
            standardizer_csv(&prepared.split),
        )?,
    ];
    for which in [SplitName::Train, SplitName::Validation, SplitName::Test] {
        let path = out.join("features").join(format!("{}.csv", which.name()));
        files.push(write(
            &path,
            examples_csv(prepared, prepared.examples(which)),
        )?);
    }
    Ok(files)
}

pub fn model_path(out: &Path, kind: ModelKind) -> PathBuf {
    out.join("models").join(format!("{}.gmk", kind.name()))
}

pub fn write_models(models: &[TrainedModel], out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for m in models {
        let path = model_path(out, m.kind);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        m.model.save(&path)?;
        files.push(path);
        if let Some(h) = &m.history {
            files.push(write(
                &out.join(format!("history_{}.csv", m.kind.name())),
                h,
            )?);
        }
    }
    Ok(files)
}

pub fn write_eval_artifacts(reports: &[(String, EvalReport)], out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("eval");
    let mut files = emit_roc_artifacts(reports, &dir)?;
    files.push(write(&dir.join("comparison.csv"), comparison_csv(reports))?);
    Ok(files)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes every file under `out` except the manifest itself and the
/// run metadata, in sorted path order.
pub fn write_manifest(out: &Path) -> Result<PathBuf> {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, files)?;
            } else {
                files.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(out, &mut files)?;
    let mut rows: Vec<(String, PathBuf)> = files
        .into_iter()
        .filter_map(|p| {
            let rel = p
                .strip_prefix(out)
                .ok()?
                .to_string_lossy()
                .replace('\\', "/");
            (rel != MANIFEST_FILE && rel != METADATA_FILE).then_some((rel, p))
        })
        .collect();
    rows.sort();
    let mut s = String::from("path,bytes,sha256\n");
    for (rel, p) in rows {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        s.push_str(&format!("{rel},{},{}\n", bytes.len(), sha256_hex(&bytes)));
    }
    write(&out.join(MANIFEST_FILE), s)
}

pub fn write_metadata(out: &Path) -> Result<PathBuf> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    write(
        &out.join(METADATA_FILE),
        format!(
            "generated_unix_seconds = {secs}\nversion = \"{}\"\n",
            env!("CARGO_PKG_VERSION")
        ),
    )
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    pub reports: Vec<(String, EvalReport)>,
    pub importance: ImportanceReport,
    pub files: Vec<PathBuf>,
}

/// Generate or load data, featurize, train every model, evaluate on the
/// test split, and rank biomarkers with the GluMarker model.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunSummary> {
    let prepared = prepare(cfg)?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = vec![write(&out.join("config.toml"), cfg.to_toml())?];
    let mut data = Vec::new();
    write_csv(&prepared.cohort, &mut data)?;
    files.push(write(&out.join("data.csv"), data)?);
    files.extend(write_featurize_artifacts(&prepared, &out)?);

    let models = train_models(cfg, &prepared.split)?;
    files.extend(write_models(&models, &out)?);

    let reports = evaluate_models(
        models
            .iter()
            .map(|m| (m.kind.name().to_string(), &m.model as &dyn Classifier)),
        &prepared.split.test,
    )?;
    files.extend(write_eval_artifacts(&reports, &out)?);

    let glumarker = &models[0].model;
    let importance = importance_for(cfg, &prepared, glumarker, ModelKind::GluMarker.name())?;
    files.extend(emit_importance_artifacts(
        &importance,
        cfg.importance.k,
        &out.join("importance"),
    )?);

    files.push(write_manifest(&out)?);
    files.push(write_metadata(&out)?);
    Ok(RunSummary {
        out_dir: out,
        reports,
        importance,
        files,
    })
}
