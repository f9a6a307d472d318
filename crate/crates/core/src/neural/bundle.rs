//! Versioned JSON envelope for trained scorers.
//!
//! ```json
//! {"format":"mvforge-model","version":1,"kind":"single_chart","layout_version":1,
//!  "hyper":{...},"params":{"fwd.w":[[256,96],[...]],...},"training":{...}}
//! ```
//!
//! Keys are emitted sorted and floats in shortest round-trip form, so
//! save → load → save reproduces the same bytes.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::scorer::{BiLstmScorer, ScorerConfig};
use super::tensor::Parameters;
use crate::error::{Error, Result};

pub const FORMAT: &str = "mvforge-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SingleChart,
    Mv,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SingleChart => "single_chart",
            ModelKind::Mv => "mv",
        }
    }

    /// The input layout a model of this kind is trained against.
    pub fn expected_layout(self) -> u32 {
        match self {
            ModelKind::SingleChart => crate::featurize::LAYOUT_VERSION,
            ModelKind::Mv => crate::mvrank::CHART_LAYOUT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    #[serde(flatten)]
    pub scorer: ScorerConfig,
    pub margin: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub pair_count: usize,
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub layout_version: u32,
    pub hyper: Hyper,
    pub model: BiLstmScorer<f64>,
    pub training: TrainingMeta,
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Corrupt(message.into())
}

impl ModelBundle {
    pub fn new(kind: ModelKind, model: BiLstmScorer<f64>, margin: f64, lambda: f64) -> Self {
        ModelBundle {
            kind,
            layout_version: kind.expected_layout(),
            hyper: Hyper {
                scorer: model.config.clone(),
                margin,
                lambda,
            },
            model,
            training: TrainingMeta::default(),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut params = Map::new();
        for (name, t) in self.model.tensors() {
            params.insert(name, json!([[t.rows(), t.cols()], t.data()]));
        }
        json!({
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "layout_version": self.layout_version,
            "hyper": self.hyper,
            "params": params,
            "training": self.training,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_value()).expect("bundle values are finite")
    }

    /// Short content hash, used to name published snapshots.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| corrupt(format!("not valid JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| corrupt("top level is not an object"))?;
        if obj.get("format").and_then(Value::as_str) != Some(FORMAT) {
            return Err(corrupt(format!("missing \"format\": \"{FORMAT}\"")));
        }
        let version = obj
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| corrupt("missing version"))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::Version(version.min(u64::from(u32::MAX)) as u32));
        }
        let field = |name: &str| obj.get(name).cloned().ok_or_else(|| corrupt(format!("missing {name}")));
        let kind: ModelKind =
            serde_json::from_value(field("kind")?).map_err(|e| corrupt(format!("kind: {e}")))?;
        let layout_version = field("layout_version")?
            .as_u64()
            .ok_or_else(|| corrupt("layout_version is not an integer"))? as u32;
        if layout_version != kind.expected_layout() {
            return Err(Error::Layout {
                expected: kind.expected_layout(),
                found: layout_version,
            });
        }
        let hyper: Hyper =
            serde_json::from_value(field("hyper")?).map_err(|e| corrupt(format!("hyper: {e}")))?;
        let training: TrainingMeta = serde_json::from_value(field("training")?)
            .map_err(|e| corrupt(format!("training: {e}")))?;
        let mut model = BiLstmScorer::zeros(hyper.scorer.clone()).map_err(|e| corrupt(e.to_string()))?;

        let params = field("params")?;
        let params = params.as_object().ok_or_else(|| corrupt("params is not an object"))?;
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        if params.len() != names.len() {
            return Err(corrupt(format!(
                "{} parameter tensors, expected {}",
                params.len(),
                names.len()
            )));
        }
        for (name, tensor) in names.iter().zip(model.tensors_mut()) {
            let entry = params
                .get(name)
                .ok_or_else(|| corrupt(format!("missing parameter {name}")))?;
            let (dims, values): ((usize, usize), Vec<f64>) = serde_json::from_value(entry.clone())
                .map_err(|e| corrupt(format!("parameter {name}: {e}")))?;
            if dims != tensor.shape() || values.len() != dims.0 * dims.1 {
                return Err(corrupt(format!(
                    "parameter {name} has shape {dims:?} with {} values, expected {:?}",
                    values.len(),
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(&values);
        }
        Ok(ModelBundle {
            kind,
            layout_version,
            hyper,
            model,
            training,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a bundle and checks it is of the expected kind.
    pub fn load_kind(path: &std::path::Path, kind: ModelKind) -> Result<Self> {
        let bundle = Self::load(path)?;
        if bundle.kind != kind {
            return Err(Error::Config(format!(
                "{} holds a {} model, expected {}",
                path.display(),
                bundle.kind.as_str(),
                kind.as_str()
            )));
        }
        Ok(bundle)
    }
}
