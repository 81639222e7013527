//! Browser demo. Three operations: see how one day is labeled and binned,
//! train the four models on a synthetic cohort, and rank biomarkers with the
//! trained GluMarker model.
//!
//! The plain Rust layer is usable (and tested) natively; the `#[wasm_bindgen]`
//! wrappers at the bottom hand JSON strings to the page.

use glumarker::binning::default_binning_config;
use glumarker::config::PipelineConfig;
use glumarker::evaluation::roc_class_svg;
use glumarker::importance::{heatmap, PerturbationMode};
use glumarker::model::{Classifier, ModelKind};
use glumarker::pipeline::{
    evaluate_models, importance_for, prepare, train_models, Prepared, TrainedModel,
};
use glumarker::types::{
    label_control, ControlLabel, DayRecord, Feature, GlucoseRangeStats, LabelThresholds,
};
use glumarker::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Default)]
pub struct DayInput {
    pub tir: f64,
    pub tar: f64,
    pub tbr: f64,
    pub total_bolus: Option<f64>,
    pub total_meal_bolus: Option<f64>,
    pub total_correction_bolus: Option<f64>,
    pub total_meal_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureBins {
    pub feature: String,
    pub value: Option<f64>,
    pub bins: Vec<String>,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayView {
    pub label: ControlLabel,
    pub features: Vec<FeatureBins>,
}

/// Control label of the day and the active bin of every feature.
pub fn explore_day(input: &DayInput) -> Result<DayView> {
    let day = DayRecord {
        patient_id: String::new(),
        day_index: 0,
        glucose: GlucoseRangeStats::new(input.tir, input.tar, input.tbr)?,
        total_bolus: input.total_bolus,
        total_meal_bolus: input.total_meal_bolus,
        total_correction_bolus: input.total_correction_bolus,
        total_meal_size: input.total_meal_size,
    };
    day.validate()?;
    let binning = default_binning_config();
    let features = Feature::ALL
        .iter()
        .map(|&f| {
            let scheme = binning.scheme(f);
            let value = day.value(f);
            Ok(FeatureBins {
                feature: f.to_string(),
                value,
                bins: scheme.bin_labels(),
                active: scheme.bin_index(value)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DayView {
        label: label_control(input.tir, &LabelThresholds::default())?,
        features,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DemoParams {
    pub seed: u64,
    pub n_patients: usize,
    pub effect_strength: f64,
    pub noise_level: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        let cfg = PipelineConfig::default();
        Self {
            seed: cfg.seed,
            n_patients: cfg.synthetic.n_patients,
            effect_strength: cfg.synthetic.effect_strength,
            noise_level: cfg.synthetic.noise_level,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelScore {
    pub model: String,
    pub macro_auc: f64,
    pub auc: Vec<Option<f64>>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingView {
    pub examples: [usize; 3],
    pub scores: Vec<ModelScore>,
    /// `(class, svg)` for each class.
    pub roc: Vec<(ControlLabel, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedBiomarker {
    pub biomarker: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportanceView {
    pub mode: PerturbationMode,
    pub heatmap: String,
    pub top: Vec<(ControlLabel, Vec<RankedBiomarker>)>,
}

/// A synthetic cohort with every model trained on it.
pub struct Demo {
    cfg: PipelineConfig,
    prepared: Prepared,
    models: Vec<TrainedModel>,
}

impl Demo {
    pub fn train(params: DemoParams) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.seed = params.seed;
        cfg.synthetic.n_patients = params.n_patients;
        cfg.synthetic.effect_strength = params.effect_strength;
        cfg.synthetic.noise_level = params.noise_level;
        cfg.validate()?;
        let prepared = prepare(&cfg)?;
        let models = train_models(&cfg, &prepared.split)?;
        Ok(Self {
            cfg,
            prepared,
            models,
        })
    }

    pub fn summary(&self) -> Result<TrainingView> {
        let split = &self.prepared.split;
        let reports = evaluate_models(
            self.models
                .iter()
                .map(|m| (m.kind.name().to_string(), &m.model as &dyn Classifier)),
            &split.test,
        )?;
        let scores = reports
            .iter()
            .map(|(name, r)| ModelScore {
                model: name.clone(),
                macro_auc: r.macro_auc,
                auc: ControlLabel::ALL.iter().map(|&c| r.auc(c)).collect(),
                accuracy: r.accuracy,
            })
            .collect();
        Ok(TrainingView {
            examples: [split.train.len(), split.validation.len(), split.test.len()],
            scores,
            roc: ControlLabel::ALL
                .iter()
                .map(|&c| (c, roc_class_svg(&reports, c)))
                .collect(),
        })
    }

    pub fn importance(&self, k: usize, exclusive: bool) -> Result<ImportanceView> {
        if k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        let mut cfg = self.cfg.clone();
        cfg.importance.mode = if exclusive {
            PerturbationMode::Exclusive
        } else {
            PerturbationMode::Literal
        };
        let glumarker = self
            .models
            .iter()
            .find(|m| m.kind == ModelKind::GluMarker)
            .expect("GluMarker is always trained");
        let report = importance_for(
            &cfg,
            &self.prepared,
            &glumarker.model,
            ModelKind::GluMarker.name(),
        )?;
        let top = ControlLabel::ALL
            .iter()
            .map(|&c| {
                let rows = report
                    .top_k(c, k)
                    .into_iter()
                    .map(|e| RankedBiomarker {
                        biomarker: e.biomarker.to_string(),
                        delta: e.deltas[c.index()],
                    })
                    .collect();
                (c, rows)
            })
            .collect();
        Ok(ImportanceView {
            mode: cfg.importance.mode,
            heatmap: heatmap(&report, k),
            top,
        })
    }
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> std::result::Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn explore(
    tir: f64,
    tar: f64,
    tbr: f64,
    total_bolus: Option<f64>,
    total_meal_bolus: Option<f64>,
    total_correction_bolus: Option<f64>,
    total_meal_size: Option<f64>,
) -> std::result::Result<String, JsError> {
    let input = DayInput {
        tir,
        tar,
        tbr,
        total_bolus,
        total_meal_bolus,
        total_correction_bolus,
        total_meal_size,
    };
    to_json(&explore_day(&input).map_err(js_err)?)
}

#[wasm_bindgen]
pub struct Session {
    demo: Demo,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        n_patients: u32,
        effect_strength: f64,
        noise_level: f64,
    ) -> std::result::Result<Session, JsError> {
        let demo = Demo::train(DemoParams {
            seed: seed as u64,
            n_patients: n_patients as usize,
            effect_strength,
            noise_level,
        })
        .map_err(js_err)?;
        Ok(Session { demo })
    }

    pub fn summary(&self) -> std::result::Result<String, JsError> {
        to_json(&self.demo.summary().map_err(js_err)?)
    }

    pub fn importance(&self, k: u32, exclusive: bool) -> std::result::Result<String, JsError> {
        to_json(
            &self
                .demo
                .importance(k as usize, exclusive)
                .map_err(js_err)?,
        )
    }
}
