//! Uniform scoring interface over the fusion network and the baselines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{GaussianNb, LinearSvc, Mlp};
use crate::error::{Error, Result};
use crate::net::{GluMarkerNet, Probs};
use crate::persist;

/// Anything that maps `(f_c, f_d)` to a probability 3-vector.
pub trait Classifier {
    fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs>;
}

impl Classifier for GluMarkerNet {
    fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        GluMarkerNet::predict_proba(self, f_c, f_d)
    }
}

impl Classifier for GaussianNb {
    fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        GaussianNb::predict_proba(self, f_c, f_d)
    }
}

impl Classifier for LinearSvc {
    fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        LinearSvc::predict_proba(self, f_c, f_d)
    }
}

impl Classifier for Mlp {
    fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        Mlp::predict_proba(self, f_c, f_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "glumarker")]
    GluMarker,
    #[serde(rename = "naive_bayes")]
    NaiveBayes,
    #[serde(rename = "linear_svc")]
    LinearSvc,
    #[serde(rename = "mlp")]
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::GluMarker,
        ModelKind::NaiveBayes,
        ModelKind::LinearSvc,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GluMarker => "glumarker",
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::LinearSvc => "linear_svc",
            ModelKind::Mlp => "mlp",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown model kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    GluMarker(GluMarkerNet),
    NaiveBayes(GaussianNb),
    LinearSvc(LinearSvc),
    Mlp(Mlp),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::GluMarker(_) => ModelKind::GluMarker,
            Model::NaiveBayes(_) => ModelKind::NaiveBayes,
            Model::LinearSvc(_) => ModelKind::LinearSvc,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// `(continuous_dim, discrete_dim)` the model was trained on.
    pub fn input_dims(&self) -> (usize, usize) {
        match self {
            Model::GluMarker(m) => (m.continuous_dim(), m.discrete_dim()),
            Model::NaiveBayes(m) => (m.continuous_dim, m.dim() - m.continuous_dim),
            Model::LinearSvc(m) => (m.continuous_dim, m.dim() - m.continuous_dim),
            Model::Mlp(m) => (m.continuous_dim, m.input_dim() - m.continuous_dim),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load(path)
    }

    /// Loads and rejects models whose input dimensions differ from `dims`.
    pub fn load_expecting(path: &Path, dims: (usize, usize)) -> Result<Self> {
        let m = Self::load(path)?;
        if m.input_dims() != dims {
            return Err(Error::Format(format!(
                "{}: model expects inputs {:?}, data provides {:?}",
                path.display(),
                m.input_dims(),
                dims
            )));
        }
        Ok(m)
    }
}

impl Classifier for Model {
    fn predict_proba(&self, f_c: &[f64], f_d: &[f64]) -> Result<Probs> {
        match self {
            Model::GluMarker(m) => m.predict_proba(f_c, f_d),
            Model::NaiveBayes(m) => m.predict_proba(f_c, f_d),
            Model::LinearSvc(m) => m.predict_proba(f_c, f_d),
            Model::Mlp(m) => m.predict_proba(f_c, f_d),
        }
    }
}
