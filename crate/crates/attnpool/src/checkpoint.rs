//! Parameter checkpoints.
//!
//! A checkpoint is a JSON object:
//!
//! ```json
//! {"format": "attnpool-checkpoint", "version": 1, "kind": "additive",
//!  "tensors": [{"name": "w_q", "rows": 120, "cols": 15, "data": [...]}, ...]}
//! ```
//!
//! `data` is row-major. Numbers are written in shortest round-trip form and
//! parsed back exactly, so a checkpoint restores bit-identical parameters.
//! Multi-head tensors are named `head{p}.{name}` followed by `w_0`.

use std::path::Path;

use attnpool_core::attention::{MultiHeadParams, SingleHeadParams};
use attnpool_core::covid::CovidModel;
use attnpool_core::forecasting::{FeedForwardNet, Forecaster, LinearPooler};
use attnpool_core::numerics::ParamSet;
use attnpool_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_json, DataError};

pub const FORMAT: &str = "attnpool-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Invalid(String),
}

fn named(names: Vec<String>, tensors: Vec<&Matrix>) -> Vec<NamedTensor> {
    names
        .into_iter()
        .zip(tensors)
        .map(|(name, m)| NamedTensor {
            name,
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn of<P: ParamSet>(kind: &str, params: &P) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            tensors: named(params.tensor_names(), params.tensors()),
        }
    }

    pub fn of_multi_head(params: &MultiHeadParams) -> Self {
        let mut tensors = Vec::new();
        for (p, head) in params.heads.iter().enumerate() {
            let names = head
                .tensor_names()
                .into_iter()
                .map(|n| format!("head{p}.{n}"))
                .collect();
            tensors.extend(named(names, head.tensors()));
        }
        tensors.extend(named(vec!["w_0".into()], vec![&params.w_0]));
        Self {
            format: FORMAT.into(),
            version: VERSION,
            kind: "multi_head".into(),
            tensors,
        }
    }

    pub fn of_forecaster(model: &Forecaster) -> Self {
        match model {
            Forecaster::Attention(p) => Self::of("additive", p),
            Forecaster::Linear(p) => Self::of("linear", p),
            Forecaster::FeedForward(p) => Self::of("ffnn", p),
        }
    }

    pub fn of_covid(model: &CovidModel) -> Self {
        match model {
            CovidModel::Linear(p) => Self::of("linear", p),
            CovidModel::Additive(p) => Self::of("additive", p),
            CovidModel::MultiHead(p) => Self::of_multi_head(p),
        }
    }

    fn tensor(&self, name: &str) -> Result<Matrix, CheckpointError> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::Invalid(format!("missing tensor `{name}`")))?;
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Invalid(format!(
                "tensor `{name}` has non-finite entries"
            )));
        }
        Matrix::from_vec(t.rows, t.cols, t.data.clone())
            .map_err(|e| CheckpointError::Invalid(format!("tensor `{name}`: {e}")))
    }

    fn check_header(&self, kinds: &[&str]) -> Result<(), CheckpointError> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(CheckpointError::Invalid(format!(
                "unsupported format {} version {}",
                self.format, self.version
            )));
        }
        if !kinds.contains(&self.kind.as_str()) {
            return Err(CheckpointError::Invalid(format!(
                "unexpected model kind `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    fn single_head(&self, prefix: &str) -> Result<SingleHeadParams, CheckpointError> {
        let p = SingleHeadParams {
            w_q: self.tensor(&format!("{prefix}w_q"))?,
            w_k: self.tensor(&format!("{prefix}w_k"))?,
            w_v: self.tensor(&format!("{prefix}w_v"))?,
            b: self.tensor(&format!("{prefix}b"))?,
        };
        p.validate()
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        Ok(p)
    }

    fn linear(&self) -> Result<LinearPooler, CheckpointError> {
        Ok(LinearPooler {
            w: self.tensor("w")?,
            b: self.tensor("b")?,
        })
    }

    pub fn to_forecaster(&self) -> Result<Forecaster, CheckpointError> {
        self.check_header(&["additive", "linear", "ffnn"])?;
        Ok(match self.kind.as_str() {
            "additive" => Forecaster::Attention(self.single_head("")?),
            "linear" => Forecaster::Linear(self.linear()?),
            _ => Forecaster::FeedForward(FeedForwardNet {
                w1: self.tensor("w1")?,
                b1: self.tensor("b1")?,
                w2: self.tensor("w2")?,
                b2: self.tensor("b2")?,
            }),
        })
    }

    pub fn to_covid(&self) -> Result<CovidModel, CheckpointError> {
        self.check_header(&["additive", "linear", "multi_head"])?;
        Ok(match self.kind.as_str() {
            "additive" => CovidModel::Additive(self.single_head("")?),
            "linear" => CovidModel::Linear(self.linear()?),
            _ => {
                let n = self
                    .tensors
                    .iter()
                    .filter(|t| t.name.ends_with(".w_q"))
                    .count();
                let heads = (0..n)
                    .map(|p| self.single_head(&format!("head{p}.")))
                    .collect::<Result<_, _>>()?;
                CovidModel::MultiHead(MultiHeadParams {
                    heads,
                    w_0: self.tensor("w_0")?,
                })
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(write_json(path, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Ok(read_json(path)?)
    }
}
