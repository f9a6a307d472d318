//! Training jobs shared by the admin endpoint and the CLI.

use std::path::Path;

use mvforge_core::mvrank::{resume_mv, train_mv, MvPairRecord, MvTrainConfig};
use mvforge_core::neural::{FitConfig, ModelBundle, ModelKind};
use mvforge_core::pairgen::read_jsonl;
use mvforge_core::ranker::{resume_single, train_single, PairDataset, SingleTrainConfig};
use mvforge_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hyperparameters a caller may override; everything else keeps its default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    /// Weight of the type loss; single-chart models only.
    pub lambda: Option<f64>,
    pub hidden_dim: Option<usize>,
}

impl TrainOverrides {
    fn fit(&self, fit: &mut FitConfig) {
        if let Some(v) = self.epochs {
            fit.epochs = v;
        }
        if let Some(v) = self.batch_size {
            fit.batch_size = v;
        }
        if let Some(v) = self.lr {
            fit.adam.lr = v;
        }
        if let Some(v) = self.seed {
            fit.seed = v;
        }
    }

    pub fn single(&self) -> SingleTrainConfig {
        let mut c = SingleTrainConfig::default();
        self.fit(&mut c.fit);
        c.margin = self.margin.unwrap_or(c.margin);
        c.lambda = self.lambda.unwrap_or(c.lambda);
        c.hidden_dim = self.hidden_dim.unwrap_or(c.hidden_dim);
        c
    }

    pub fn mv(&self) -> Result<MvTrainConfig> {
        if self.lambda.is_some() {
            return Err(Error::Config("lambda applies to single_chart models only".into()));
        }
        let mut c = MvTrainConfig::default();
        self.fit(&mut c.fit);
        c.margin = self.margin.unwrap_or(c.margin);
        c.hidden_dim = self.hidden_dim.unwrap_or(c.hidden_dim);
        Ok(c)
    }
}

pub fn read_mv_pairs(path: &Path) -> Result<Vec<MvPairRecord>> {
    let pairs: Vec<MvPairRecord> = read_jsonl(&std::fs::read_to_string(path)?)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pairs)
}

/// Trains a model of `kind` from a pairs file: single-chart pairs need their
/// features sidecar next to them, MV pairs are self-contained.
pub fn train_from_file(kind: ModelKind, pairs_path: &Path, overrides: &TrainOverrides) -> Result<ModelBundle> {
    match kind {
        ModelKind::SingleChart => train_single(&PairDataset::load(pairs_path)?, &overrides.single()),
        ModelKind::Mv => train_mv(&read_mv_pairs(pairs_path)?, &overrides.mv()?),
    }
}

/// Continues training `base` on a pairs file of the same kind.
pub fn resume_from_file(base: &ModelBundle, pairs_path: &Path, overrides: &TrainOverrides) -> Result<ModelBundle> {
    match base.kind {
        ModelKind::SingleChart => resume_single(&PairDataset::load(pairs_path)?, &overrides.single(), base),
        ModelKind::Mv => resume_mv(&read_mv_pairs(pairs_path)?, &overrides.mv()?, base),
    }
}
