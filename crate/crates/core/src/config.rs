//! The pipeline configuration file (TOML). Every section is optional and
//! falls back to the documented defaults. Stage seeds are derived from the
//! single top-level `seed`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{LinearSvcConfig, MlpArch, DEFAULT_VARIANCE_FLOOR};
use crate::binning::BinningConfig;
use crate::error::{Error, Result};
use crate::features::SplitRatios;
use crate::importance::{PerturbationMode, DEFAULT_TOP_K};
use crate::model::ModelKind;
use crate::net::GluMarkerArch;
use crate::synth::GeneratorConfig;
use crate::train::TrainConfig;
use crate::types::{GlucoseRange, LabelThresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generate a cohort from the `[synthetic]` section.
    Synthetic,
    /// Day-level CSV.
    Csv { path: PathBuf },
    /// Raw glucose readings, optionally joined with a day-level doses CSV.
    Readings {
        readings: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        doses: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    #[default]
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GluMarkerSection {
    pub arch: GluMarkerArch,
    pub train: TrainConfig,
}

impl Default for GluMarkerSection {
    fn default() -> Self {
        Self {
            arch: GluMarkerArch::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub arch: MlpArch,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveBayesSection {
    pub variance_floor: f64,
}

impl Default for NaiveBayesSection {
    fn default() -> Self {
        Self {
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsSection {
    /// Baselines trained next to GluMarker, which always runs.
    pub baselines: Vec<ModelKind>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        Self {
            baselines: vec![ModelKind::NaiveBayes, ModelKind::LinearSvc, ModelKind::Mlp],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceSection {
    pub k: usize,
    pub mode: PerturbationMode,
    pub split: SplitName,
}

impl Default for ImportanceSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            mode: PerturbationMode::Literal,
            split: SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub synthetic: GeneratorConfig,
    pub glucose_range: GlucoseRange,
    pub labels: LabelThresholds,
    pub split: SplitRatios,
    pub binning: BinningConfig,
    pub models: ModelsSection,
    pub glumarker: GluMarkerSection,
    pub mlp: MlpSection,
    pub naive_bayes: NaiveBayesSection,
    pub linear_svc: LinearSvcConfig,
    pub importance: ImportanceSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataSource::default(),
            synthetic: GeneratorConfig::default(),
            glucose_range: GlucoseRange::default(),
            labels: LabelThresholds::default(),
            split: SplitRatios::default(),
            binning: BinningConfig::default(),
            models: ModelsSection::default(),
            glumarker: GluMarkerSection::default(),
            mlp: MlpSection::default(),
            naive_bayes: NaiveBayesSection::default(),
            linear_svc: LinearSvcConfig::default(),
            importance: ImportanceSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.data {
            DataSource::Synthetic => {}
            DataSource::Csv { path } => resolve(path),
            DataSource::Readings { readings, doses } => {
                resolve(readings);
                if let Some(d) = doses {
                    resolve(d);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Checks every section, and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        fn section(name: &str) -> impl Fn(Error) -> Error + '_ {
            move |e| Error::Config(format!("[{name}] {e}"))
        }
        self.glucose_range
            .validate()
            .map_err(section("glucose_range"))?;
        self.labels.validate().map_err(section("labels"))?;
        self.split.validate().map_err(section("split"))?;
        self.glumarker
            .arch
            .validate()
            .map_err(section("glumarker.arch"))?;
        self.glumarker
            .train
            .validate()
            .map_err(section("glumarker.train"))?;
        if self.models.baselines.contains(&ModelKind::GluMarker) {
            return Err(Error::Config(
                "[models] glumarker always runs; list only baselines".into(),
            ));
        }
        if self.mlp.arch.hidden.is_empty() || self.mlp.arch.hidden.contains(&0) {
            return Err(Error::Config(
                "[mlp.arch] hidden widths must be nonempty and positive".into(),
            ));
        }
        self.mlp.train.validate().map_err(section("mlp.train"))?;
        if !(self.naive_bayes.variance_floor > 0.0) {
            return Err(Error::Config(
                "[naive_bayes] variance_floor must be positive".into(),
            ));
        }
        self.linear_svc.validate().map_err(section("linear_svc"))?;
        if self.importance.k == 0 {
            return Err(Error::Config("[importance] k must be at least 1".into()));
        }
        let exists = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "[data] input file {} does not exist",
                    p.display()
                )))
            }
        };
        match &self.data {
            DataSource::Synthetic => self.synthetic.validate(&self.binning)?,
            DataSource::Csv { path } => exists(path)?,
            DataSource::Readings { readings, doses } => {
                exists(readings)?;
                if let Some(d) = doses {
                    exists(d)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DayOffset, Feature};

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(
            PipelineConfig::from_toml("").unwrap(),
            PipelineConfig::default()
        );
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn serialized_config_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 42;
        cfg.importance.mode = PerturbationMode::Exclusive;
        cfg.data = DataSource::Readings {
            readings: "r.csv".into(),
            doses: None,
        };
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            seed = 7
            [data]
            source = "csv"
            path = "days.csv"
            [labels]
            lower = 0.5
            upper = 0.8
            [glumarker.train]
            epochs = 5
            [linear_svc]
            c = 1.0
            [models]
            baselines = ["mlp"]
            [binning.total_meal_size]
            no_entry = false
            edges = [0, 100]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(
            cfg.data,
            DataSource::Csv {
                path: "days.csv".into()
            }
        );
        assert_eq!(cfg.labels.upper, 0.8);
        assert_eq!(cfg.glumarker.train.epochs, 5);
        assert_eq!(cfg.glumarker.train.learning_rate, 1e-3);
        assert_eq!(cfg.linear_svc.c, 1.0);
        assert_eq!(cfg.models.baselines, vec![ModelKind::Mlp]);
        let meal = cfg.binning.scheme(Feature::TotalMealSize);
        assert_eq!(meal.bin_count(), 2);
        // Unlisted features keep their default schemes.
        assert_eq!(cfg.binning.scheme(Feature::TotalBolus).bin_count(), 4);
        assert!(cfg
            .binning
            .layout()
            .position(Feature::Tar, DayOffset::Prior, ">=0.8")
            .is_some());
    }

    #[test]
    fn unknown_keys_and_stage_seeds_are_rejected() {
        for text in [
            "sed = 1",
            "[glumarker.train]\nseed = 3",
            "[synthetic]\nseed = 1",
            "[labels]\nlower = 0.9\nupper = 0.8\nm = 1",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn validation_names_the_section() {
        let mut cfg = PipelineConfig::default();
        cfg.labels.lower = 0.9;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("[labels]"), "{err}");

        let mut cfg = PipelineConfig::default();
        cfg.data = DataSource::Csv {
            path: "/nonexistent/x.csv".into(),
        };
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("does not exist"));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[data]\nsource = \"csv\"\npath = \"days.csv\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Csv {
                path: dir.path().join("days.csv")
            }
        );
    }
}
