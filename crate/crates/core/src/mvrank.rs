//! Multiple-view assessment: context-dependent chart embeddings and the
//! sequence scorer over them.
//!
//! Chart-embedding layout (version 1), one row per chart in MV order:
//!
//! | entry | content |
//! |-------|---------|
//! | 0 | single-chart data score (sigmoid) |
//! | 1 | type-head probability of the chart's own type |
//! | 2 | encoded column count / 4 |
//! | 3 | 1 - share of charts with this chart's type |
//! | 4 | mean Jaccard similarity to every other chart |
//! | 5 | share of this chart's columns no other chart uses |
//! | 6 | share of table columns first covered by this chart |
//! | 7 | MV size / 12 |
//! | 8 | 1 if another chart has the same column set |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chartspec::{chart_identity, ChartIdentity, ChartSpec, ChartType};
use crate::error::{Error, Result};
use crate::featurize::{TableFeatures, MAX_CHART_COLUMNS};
use crate::neural::{
    fit, BiLstmScorer, FitConfig, ModelBundle, ModelKind, ScorerConfig, TrainingMeta,
};
use crate::num::Scalar;
use crate::ranker::{score_columns, ChartScore};
use crate::Scorer;

pub const CHART_LAYOUT_VERSION: u32 = 1;
pub const CHART_EMBEDDING_DIM: usize = 9;
pub const MAX_MV_CHARTS: usize = 12;

/// Grid placement; presentation only, never scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LayoutCell {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MvChart {
    #[serde(flatten)]
    pub spec: ChartSpec,
    #[serde(default)]
    pub locked: bool,
    #[serde(default)]
    pub layout: LayoutCell,
}

impl MvChart {
    pub fn new(spec: ChartSpec) -> Self {
        MvChart {
            spec,
            locked: false,
            layout: LayoutCell::default(),
        }
    }
}

/// Charts in authoring order. Sessions may hold an empty MV; scoring needs
/// at least one chart.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MvState {
    pub charts: Vec<MvChart>,
}

impl MvState {
    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn specs(&self) -> Vec<&ChartSpec> {
        self.charts.iter().map(|c| &c.spec).collect()
    }

    pub fn locked_positions(&self) -> BTreeSet<usize> {
        (0..self.charts.len()).filter(|&i| self.charts[i].locked).collect()
    }

    /// Multiset of typed chart identities, sorted; layout and locks are
    /// ignored.
    pub fn identity(&self) -> Vec<ChartIdentity> {
        let mut ids: Vec<ChartIdentity> =
            self.charts.iter().map(|c| chart_identity(&c.spec, false)).collect();
        ids.sort();
        ids
    }
}

/// A chart reduced to what the context embedding needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChart {
    pub columns: BTreeSet<usize>,
    pub chart_type: ChartType,
    pub s_data: f64,
    pub p_type: f64,
}

impl ScoredChart {
    pub fn new(columns: BTreeSet<usize>, chart_type: ChartType, score: &ChartScore) -> Self {
        ScoredChart {
            columns,
            chart_type,
            s_data: score.s_data,
            p_type: score.p_type[chart_type.index()],
        }
    }
}

/// Scores every chart of an MV with the single-chart model.
pub fn score_charts(single: &Scorer, features: &TableFeatures, specs: &[&ChartSpec]) -> Result<Vec<ScoredChart>> {
    specs
        .iter()
        .map(|spec| {
            let score = score_columns(single, features, &spec.columns)?;
            Ok(ScoredChart::new(spec.columns.clone(), spec.chart_type, &score))
        })
        .collect()
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn check_size(n: usize) -> Result<()> {
    match n {
        0 => Err(Error::EmptyMv),
        n if n > MAX_MV_CHARTS => Err(Error::TooManyCharts(n)),
        _ => Ok(()),
    }
}

/// Embeddings of every chart, in MV order.
pub fn context_embeddings(charts: &[ScoredChart], n_table_columns: usize) -> Result<Vec<[f64; CHART_EMBEDDING_DIM]>> {
    check_size(charts.len())?;
    let n = charts.len() as f64;
    let mut covered = BTreeSet::new();
    let mut out = Vec::with_capacity(charts.len());
    for (i, chart) in charts.iter().enumerate() {
        let others = || charts.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, c)| c);
        let same_type = charts.iter().filter(|c| c.chart_type == chart.chart_type).count();
        let overlap = if charts.len() > 1 {
            others().map(|c| jaccard(&chart.columns, &c.columns)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let k = chart.columns.len();
        let novel = chart
            .columns
            .iter()
            .filter(|col| others().all(|c| !c.columns.contains(col)))
            .count();
        let gained = chart.columns.iter().filter(|col| !covered.contains(*col)).count();
        covered.extend(chart.columns.iter().copied());
        let duplicate = others().any(|c| c.columns == chart.columns);
        out.push([
            chart.s_data,
            chart.p_type,
            k as f64 / MAX_CHART_COLUMNS as f64,
            1.0 - same_type as f64 / n,
            overlap,
            if k == 0 { 0.0 } else { novel as f64 / k as f64 },
            if n_table_columns == 0 {
                0.0
            } else {
                (gained as f64 / n_table_columns as f64).min(1.0)
            },
            n / MAX_MV_CHARTS as f64,
            if duplicate { 1.0 } else { 0.0 },
        ]);
    }
    Ok(out)
}

pub fn chart_context_embedding(
    charts: &[ScoredChart],
    position: usize,
    n_table_columns: usize,
) -> Result<[f64; CHART_EMBEDDING_DIM]> {
    if position >= charts.len() {
        return Err(Error::Position {
            position,
            len: charts.len(),
        });
    }
    Ok(context_embeddings(charts, n_table_columns)?[position])
}

pub fn score_embeddings<F: Scalar>(mv_model: &BiLstmScorer<F>, embeddings: &[[f64; CHART_EMBEDDING_DIM]]) -> Result<f64> {
    check_size(embeddings.len())?;
    let rows: Vec<Vec<F>> = embeddings
        .iter()
        .map(|e| e.iter().map(|v| F::of(*v)).collect())
        .collect();
    let seq: Vec<&[F]> = rows.iter().map(Vec::as_slice).collect();
    Ok(mv_model.score(&seq)?.sigmoid().as_f64())
}

/// MV score in (0, 1).
pub fn score_mv(mv_model: &Scorer, charts: &[ScoredChart], n_table_columns: usize) -> Result<f64> {
    score_embeddings(mv_model, &context_embeddings(charts, n_table_columns)?)
}

/// Training record for the MV model: embedding sequences precomputed so
/// training never needs the source table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvPairRecord {
    pub session_id: String,
    pub pos: MvSide,
    pub neg: MvSide,
    pub source: crate::pairgen::PairSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvSide {
    pub embeddings: Vec<Vec<f64>>,
}

impl MvSide {
    pub fn from_embeddings(embeddings: &[[f64; CHART_EMBEDDING_DIM]]) -> Self {
        MvSide {
            embeddings: embeddings.iter().map(|e| e.to_vec()).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        check_size(self.embeddings.len())?;
        if self.embeddings.iter().any(|e| e.len() != CHART_EMBEDDING_DIM) {
            return Err(Error::Shape(format!("MV chart embeddings have {CHART_EMBEDDING_DIM} entries")));
        }
        Ok(())
    }

    pub fn sequence(&self) -> Vec<&[f64]> {
        self.embeddings.iter().map(Vec::as_slice).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvTrainConfig {
    pub hidden_dim: usize,
    pub head_dims: Vec<usize>,
    pub margin: f64,
    pub fit: FitConfig,
}

impl Default for MvTrainConfig {
    fn default() -> Self {
        MvTrainConfig {
            hidden_dim: 64,
            head_dims: vec![32, 1],
            margin: 1.0,
            fit: FitConfig::default(),
        }
    }
}

impl MvTrainConfig {
    pub fn scorer_config(&self) -> ScorerConfig {
        ScorerConfig {
            input_dim: CHART_EMBEDDING_DIM,
            hidden_dim: self.hidden_dim,
            head_dims: self.head_dims.clone(),
            type_head_dims: None,
            max_len: MAX_MV_CHARTS,
        }
    }
}

pub fn train_mv(pairs: &[MvPairRecord], config: &MvTrainConfig) -> Result<ModelBundle> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for p in pairs {
        p.pos.check()?;
        p.neg.check()?;
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.fit.seed);
    let model = BiLstmScorer::random(config.scorer_config(), &mut rng)?;
    fit_mv(pairs, config, model)
}

/// Continues training from `base`, which must be an MV model for the
/// current chart-embedding layout.
pub fn resume_mv(pairs: &[MvPairRecord], config: &MvTrainConfig, base: &ModelBundle) -> Result<ModelBundle> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if base.kind != ModelKind::Mv {
        return Err(Error::Config(format!("cannot resume a {} model as mv", base.kind.as_str())));
    }
    if base.layout_version != CHART_LAYOUT_VERSION {
        return Err(Error::Layout {
            expected: CHART_LAYOUT_VERSION,
            found: base.layout_version,
        });
    }
    for p in pairs {
        p.pos.check()?;
        p.neg.check()?;
    }
    fit_mv(pairs, config, base.model.clone())
}

fn fit_mv(pairs: &[MvPairRecord], config: &MvTrainConfig, mut model: Scorer) -> Result<ModelBundle> {
    let margin = config.margin;
    let report = fit(&mut model, pairs, &config.fit, |m, p, g| {
        m.pair_loss_grad(&p.pos.sequence(), &p.neg.sequence(), None, margin, 0.0, g)
    })?;
    let mut bundle = ModelBundle::new(ModelKind::Mv, model, margin, 0.0);
    bundle.training = TrainingMeta {
        epochs: config.fit.epochs,
        pair_count: pairs.len(),
        seed: config.fit.seed,
        epoch_losses: report.epoch_losses,
    };
    Ok(bundle)
}

/// Fraction of MV pairs whose positive outscores the negative; ties are
/// incorrect.
pub fn mv_pair_accuracy(mv_model: &Scorer, pairs: &[MvPairRecord]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for p in pairs {
        if mv_model.score(&p.pos.sequence())? > mv_model.score(&p.neg.sequence())? {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}
