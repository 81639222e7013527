//! Model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GLUMARKR"
//! version  u32      FORMAT_VERSION
//! kind     u8       0 glumarker, 1 naive_bayes, 2 linear_svc, 3 mlp
//! count    u32      number of tensors
//! tensor*  name_len u32, name (utf-8), ndim u32, dims u64 * ndim,
//!          values f64 (little-endian) * prod(dims)
//! ```
//!
//! Tensor names encode layer order (`branch_c.0.weight`, `layer.2.bias`, ...)
//! and weight shapes are `[outputs, inputs]`, so the architecture is
//! recovered from the file alone.

use std::fs;
use std::path::Path;

use crate::baselines::{GaussianNb, LinearSvc, Mlp};
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::net::{Activation, DenseLayer, GluMarkerNet, NUM_CLASSES};

pub const MAGIC: &[u8; 8] = b"GLUMARKR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Tensor {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            dims,
            values,
        }
    }
}

fn layer_tensors(prefix: &str, layer: &DenseLayer, out: &mut Vec<Tensor>) {
    out.push(Tensor::new(
        format!("{prefix}.weight"),
        vec![layer.outputs, layer.inputs],
        layer.weights.clone(),
    ));
    out.push(Tensor::new(
        format!("{prefix}.bias"),
        vec![layer.outputs],
        layer.biases.clone(),
    ));
}

fn rows(matrix: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (
        vec![matrix.len(), matrix.first().map_or(0, Vec::len)],
        matrix.concat(),
    )
}

fn to_tensors(model: &Model) -> Vec<Tensor> {
    let mut t = Vec::new();
    match model {
        Model::GluMarker(m) => {
            for (i, l) in m.branch_c.iter().enumerate() {
                layer_tensors(&format!("branch_c.{i}"), l, &mut t);
            }
            for (i, l) in m.branch_d.iter().enumerate() {
                layer_tensors(&format!("branch_d.{i}"), l, &mut t);
            }
            layer_tensors("gate", &m.gate, &mut t);
            layer_tensors("output", &m.output, &mut t);
        }
        Model::NaiveBayes(m) => {
            t.push(Tensor::new(
                "continuous_dim",
                vec![1],
                vec![m.continuous_dim as f64],
            ));
            t.push(Tensor::new("priors", vec![NUM_CLASSES], m.priors.to_vec()));
            let (d, v) = rows(&m.means);
            t.push(Tensor::new("means", d, v));
            let (d, v) = rows(&m.variances);
            t.push(Tensor::new("variances", d, v));
        }
        Model::LinearSvc(m) => {
            t.push(Tensor::new(
                "continuous_dim",
                vec![1],
                vec![m.continuous_dim as f64],
            ));
            let (d, v) = rows(&m.weights);
            t.push(Tensor::new("weights", d, v));
            t.push(Tensor::new("biases", vec![NUM_CLASSES], m.biases.to_vec()));
        }
        Model::Mlp(m) => {
            t.push(Tensor::new(
                "continuous_dim",
                vec![1],
                vec![m.continuous_dim as f64],
            ));
            for (i, l) in m.layers.iter().enumerate() {
                layer_tensors(&format!("layer.{i}"), l, &mut t);
            }
        }
    }
    t
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let tensors = to_tensors(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(model.kind().tag());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

struct TensorSet(Vec<Tensor>);

impl TensorSet {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.0
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor '{name}'")))
    }

    fn matrix(&self, name: &str, rows: Option<usize>) -> Result<Vec<Vec<f64>>> {
        let t = self.get(name)?;
        if t.dims.len() != 2 || rows.is_some_and(|r| r != t.dims[0]) {
            return Err(Error::Format(format!(
                "tensor '{name}' has dims {:?}",
                t.dims
            )));
        }
        Ok(t.values
            .chunks(t.dims[1].max(1))
            .map(<[f64]>::to_vec)
            .collect())
    }

    fn vector<const N: usize>(&self, name: &str) -> Result<[f64; N]> {
        let t = self.get(name)?;
        t.values.as_slice().try_into().map_err(|_| {
            Error::Format(format!(
                "tensor '{name}' should have {N} values, has {:?}",
                t.dims
            ))
        })
    }

    fn scalar_usize(&self, name: &str) -> Result<usize> {
        let [v] = self.vector::<1>(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Format(format!(
                "'{name}' must be a nonnegative integer"
            )));
        }
        Ok(v as usize)
    }

    fn layer(&self, prefix: &str, activation: Activation) -> Result<DenseLayer> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        if w.dims.len() != 2 || b.dims != [w.dims[0]] {
            return Err(Error::Format(format!(
                "layer '{prefix}': weight dims {:?} and bias dims {:?} disagree",
                w.dims, b.dims
            )));
        }
        Ok(DenseLayer {
            inputs: w.dims[1],
            outputs: w.dims[0],
            weights: w.values.clone(),
            biases: b.values.clone(),
            activation,
        })
    }

    fn stack(&self, prefix: &str, last: Activation) -> Result<Vec<DenseLayer>> {
        let n = (0..)
            .take_while(|i| {
                self.0
                    .iter()
                    .any(|t| t.name == format!("{prefix}.{i}.weight"))
            })
            .count();
        (0..n)
            .map(|i| {
                self.layer(
                    &format!("{prefix}.{i}"),
                    if i + 1 == n { last } else { Activation::Relu },
                )
            })
            .collect()
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let tag = r.take(1)?[0];
    let kind = ModelKind::from_tag(tag)
        .ok_or_else(|| Error::Format(format!("unknown model kind tag {tag}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "tensor '{name}' dims {dims:?} exceed the file size"
                ))
            })?;
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "tensor '{name}' contains non-finite values"
            )));
        }
        tensors.push(Tensor { name, dims, values });
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let ts = TensorSet(tensors);

    let model = match kind {
        ModelKind::GluMarker => {
            let net = GluMarkerNet {
                branch_c: ts.stack("branch_c", Activation::Relu)?,
                branch_d: ts.stack("branch_d", Activation::Relu)?,
                gate: ts.layer("gate", Activation::Sigmoid)?,
                output: ts.layer("output", Activation::Identity)?,
            };
            net.validate()?;
            Model::GluMarker(net)
        }
        ModelKind::NaiveBayes => {
            let means = ts.matrix("means", Some(NUM_CLASSES))?;
            let variances = ts.matrix("variances", Some(NUM_CLASSES))?;
            let continuous_dim = ts.scalar_usize("continuous_dim")?;
            if ts.get("means")?.dims != ts.get("variances")?.dims || continuous_dim > means[0].len()
            {
                return Err(Error::Format(
                    "naive bayes tensors have mismatched dimensions".into(),
                ));
            }
            if variances.iter().flatten().any(|&v| v <= 0.0) {
                return Err(Error::Format(
                    "naive bayes variances must be positive".into(),
                ));
            }
            Model::NaiveBayes(GaussianNb {
                continuous_dim,
                priors: ts.vector("priors")?,
                means,
                variances,
            })
        }
        ModelKind::LinearSvc => {
            let weights = ts.matrix("weights", Some(NUM_CLASSES))?;
            let continuous_dim = ts.scalar_usize("continuous_dim")?;
            if continuous_dim > weights[0].len() {
                return Err(Error::Format(
                    "linear svc continuous_dim exceeds weight width".into(),
                ));
            }
            Model::LinearSvc(LinearSvc {
                continuous_dim,
                weights,
                biases: ts.vector("biases")?,
            })
        }
        ModelKind::Mlp => {
            let mlp = Mlp {
                continuous_dim: ts.scalar_usize("continuous_dim")?,
                layers: ts.stack("layer", Activation::Identity)?,
            };
            mlp.validate()?;
            Model::Mlp(mlp)
        }
    };
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf).map_err(|e| e.context(path.display()))
}
