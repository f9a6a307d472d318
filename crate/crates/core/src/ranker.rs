//! Single-chart assessment: composed scores, Siamese training, the two
//! baselines, and the evaluation harness (pair accuracy, top-k recall,
//! Monte-Carlo cross-validation).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chartspec::ChartType;
use crate::error::{Error, Result};
use crate::featurize::{column_subsets, ChartInput, TableFeatures, EMBEDDING_DIM, LAYOUT_VERSION, MAX_CHART_COLUMNS};
use crate::neural::{
    fit, margin_rank_grad, margin_rank_loss, BiLstmScorer, FitConfig, Mlp, ModelBundle, ModelKind, ScorerConfig,
    TrainingMeta, TYPE_CLASSES,
};
use crate::num::Scalar;
use crate::pairgen::{read_jsonl, write_jsonl, ChartPairRecord};
use crate::Scorer;

/// Data score, type distribution and their product per chart type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartScore {
    /// Raw network output before the sigmoid.
    pub raw: f64,
    pub s_data: f64,
    pub p_type: [f64; TYPE_CLASSES],
    pub s_overall: [f64; TYPE_CLASSES],
}

impl ChartScore {
    /// A model without a type head contributes a uniform type distribution.
    pub fn compose(raw: f64, p_type: Option<[f64; TYPE_CLASSES]>) -> Self {
        let s_data = raw.sigmoid();
        let p_type = p_type.unwrap_or([1.0 / TYPE_CLASSES as f64; TYPE_CLASSES]);
        let mut s_overall = [0.0; TYPE_CLASSES];
        for (o, p) in s_overall.iter_mut().zip(&p_type) {
            *o = s_data * p;
        }
        ChartScore {
            raw,
            s_data,
            p_type,
            s_overall,
        }
    }

    /// Chart type with the highest overall score; ties go to the earlier
    /// type.
    pub fn best_type(&self) -> ChartType {
        let mut best = 0;
        for v in 1..TYPE_CLASSES {
            if self.s_overall[v] > self.s_overall[best] {
                best = v;
            }
        }
        ChartType::from_index(best).expect("five chart types")
    }

    pub fn overall(&self, chart_type: ChartType) -> f64 {
        self.s_overall[chart_type.index()]
    }
}

pub fn score_input(model: &Scorer, input: &ChartInput) -> Result<ChartScore> {
    let out = model.forward(&input.sequence())?;
    Ok(ChartScore::compose(out.score, out.type_probs))
}

/// Scores a column selection from cached table features.
pub fn score_columns(model: &Scorer, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<ChartScore> {
    let out = model.forward(&features_sequence(features, columns)?)?;
    Ok(ChartScore::compose(out.score, out.type_probs))
}

fn features_sequence<'a>(features: &'a TableFeatures, columns: &BTreeSet<usize>) -> Result<Vec<&'a [f64]>> {
    if columns.is_empty() || columns.len() > MAX_CHART_COLUMNS {
        return Err(Error::Cardinality(columns.len()));
    }
    columns
        .iter()
        .map(|&i| {
            features.columns.get(i).map(Vec::as_slice).ok_or(Error::Index {
                index: i,
                len: features.columns.len(),
            })
        })
        .collect()
}

/// Checks that a bundle can score charts built by the current featurizer.
pub fn check_single_bundle(bundle: &ModelBundle, features: &TableFeatures) -> Result<()> {
    if bundle.kind != ModelKind::SingleChart {
        return Err(Error::Config("expected a single_chart model".into()));
    }
    if bundle.layout_version != features.layout_version {
        return Err(Error::Layout {
            expected: features.layout_version,
            found: bundle.layout_version,
        });
    }
    if bundle.hyper.scorer.input_dim != EMBEDDING_DIM {
        return Err(Error::Shape(format!(
            "single-chart model takes {} inputs, features have {EMBEDDING_DIM}",
            bundle.hyper.scorer.input_dim
        )));
    }
    Ok(())
}

pub fn score_chart(bundle: &ModelBundle, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<ChartScore> {
    check_single_bundle(bundle, features)?;
    score_columns(&bundle.model, features, columns)
}

/// Pair records together with the features of every table they mention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairDataset {
    pub tables: BTreeMap<String, TableFeatures>,
    pub pairs: Vec<ChartPairRecord>,
}

impl PairDataset {
    /// Table ids that have at least one pair, sorted.
    pub fn table_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&String> = self.pairs.iter().map(|p| &p.table_id).collect();
        ids.into_iter().cloned().collect()
    }

    pub fn restrict(&self, table_ids: &BTreeSet<String>) -> PairDataset {
        PairDataset {
            tables: self
                .tables
                .iter()
                .filter(|(id, _)| table_ids.contains(*id))
                .map(|(id, f)| (id.clone(), f.clone()))
                .collect(),
            pairs: self
                .pairs
                .iter()
                .filter(|p| table_ids.contains(&p.table_id))
                .cloned()
                .collect(),
        }
    }

    fn features(&self, table_id: &str) -> Result<&TableFeatures> {
        self.tables
            .get(table_id)
            .ok_or_else(|| Error::Config(format!("pair references unknown table {table_id:?}")))
    }

    fn check_layout(&self) -> Result<()> {
        if let Some(f) = self.tables.values().find(|f| f.layout_version != LAYOUT_VERSION) {
            return Err(Error::Layout {
                expected: LAYOUT_VERSION,
                found: f.layout_version,
            });
        }
        Ok(())
    }

    /// Writes the pair file and, next to it, the feature file of every
    /// table the pairs mention.
    pub fn save(&self, pairs_path: &Path) -> Result<()> {
        std::fs::write(pairs_path, write_jsonl(&self.pairs))?;
        let records: Vec<FeatureRecord> = self
            .tables
            .iter()
            .map(|(table_id, features)| FeatureRecord {
                table_id: table_id.clone(),
                features: features.clone(),
            })
            .collect();
        std::fs::write(features_path(pairs_path), write_jsonl(&records))?;
        Ok(())
    }

    pub fn load(pairs_path: &Path) -> Result<PairDataset> {
        let pairs: Vec<ChartPairRecord> = read_jsonl(&std::fs::read_to_string(pairs_path)?)?;
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let fpath = features_path(pairs_path);
        let records: Vec<FeatureRecord> = read_jsonl(&std::fs::read_to_string(&fpath).map_err(|e| {
            Error::Config(format!("cannot read table features {}: {e}", fpath.display()))
        })?)?;
        let dataset = PairDataset {
            tables: records.into_iter().map(|r| (r.table_id, r.features)).collect(),
            pairs,
        };
        for p in &dataset.pairs {
            dataset.features(&p.table_id)?;
        }
        dataset.check_layout()?;
        Ok(dataset)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    table_id: String,
    features: TableFeatures,
}

/// `pairs.jsonl` -> `pairs.features.jsonl`.
pub fn features_path(pairs_path: &Path) -> PathBuf {
    pairs_path.with_extension("features.jsonl")
}

/// Anything that assigns a real score to a column selection; higher is
/// better. Every model is evaluated through this one harness.
pub trait ChartRanker {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64>;
}

impl ChartRanker for Scorer {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        self.score(&features_sequence(features, columns)?)
    }
}

impl<R: ChartRanker + ?Sized> ChartRanker for &R {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        (**self).rank_score(features, columns)
    }
}

/// Composed-score view of a scorer: ranks by the sigmoid data score.
pub struct SigmoidRanker<'a>(pub &'a Scorer);

impl ChartRanker for SigmoidRanker<'_> {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        Ok(score_columns(self.0, features, columns)?.s_data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTrainConfig {
    pub hidden_dim: usize,
    pub head_dims: Vec<usize>,
    pub type_head_dims: Vec<usize>,
    pub margin: f64,
    pub lambda: f64,
    pub fit: FitConfig,
}

impl Default for SingleTrainConfig {
    fn default() -> Self {
        SingleTrainConfig {
            hidden_dim: 64,
            head_dims: vec![32, 1],
            type_head_dims: vec![32, TYPE_CLASSES],
            margin: 1.0,
            lambda: 0.5,
            fit: FitConfig::default(),
        }
    }
}

impl SingleTrainConfig {
    pub fn scorer_config(&self) -> ScorerConfig {
        ScorerConfig {
            input_dim: EMBEDDING_DIM,
            hidden_dim: self.hidden_dim,
            head_dims: self.head_dims.clone(),
            type_head_dims: Some(self.type_head_dims.clone()),
            max_len: MAX_CHART_COLUMNS,
        }
    }
}

struct SeqPair<'a> {
    pos: Vec<&'a [f64]>,
    neg: Vec<&'a [f64]>,
    label: Option<usize>,
}

fn sequences(dataset: &PairDataset) -> Result<Vec<SeqPair<'_>>> {
    dataset
        .pairs
        .iter()
        .map(|p| {
            let f = dataset.features(&p.table_id)?;
            Ok(SeqPair {
                pos: features_sequence(f, &p.pos.column_set())?,
                neg: features_sequence(f, &p.neg.column_set())?,
                label: p.pos.chart_type.map(ChartType::index),
            })
        })
        .collect()
}

/// Trains the Siamese single-chart scorer.
pub fn train_single(dataset: &PairDataset, config: &SingleTrainConfig) -> Result<ModelBundle> {
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.check_layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.fit.seed);
    let model = BiLstmScorer::random(config.scorer_config(), &mut rng)?;
    fit_single(dataset, config, model)
}

/// Continues training from `base`; its architecture wins over the one in
/// `config`. A bundle built for another feature layout is refused.
pub fn resume_single(dataset: &PairDataset, config: &SingleTrainConfig, base: &ModelBundle) -> Result<ModelBundle> {
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if base.kind != ModelKind::SingleChart {
        return Err(Error::Config(format!("cannot resume a {} model as single_chart", base.kind.as_str())));
    }
    if base.layout_version != LAYOUT_VERSION {
        return Err(Error::Layout {
            expected: LAYOUT_VERSION,
            found: base.layout_version,
        });
    }
    dataset.check_layout()?;
    fit_single(dataset, config, base.model.clone())
}

fn fit_single(dataset: &PairDataset, config: &SingleTrainConfig, mut model: Scorer) -> Result<ModelBundle> {
    let seqs = sequences(dataset)?;
    let (margin, lambda) = (config.margin, config.lambda);
    let report = fit(&mut model, &seqs, &config.fit, |m, p, g| {
        m.pair_loss_grad(&p.pos, &p.neg, p.label, margin, lambda, g)
    })?;
    let mut bundle = ModelBundle::new(ModelKind::SingleChart, model, margin, lambda);
    bundle.training = TrainingMeta {
        epochs: config.fit.epochs,
        pair_count: dataset.pairs.len(),
        seed: config.fit.seed,
        epoch_losses: report.epoch_losses,
    };
    Ok(bundle)
}

/// Fully connected baseline over the zero-padded `4 × 96` input.
#[derive(Debug, Clone, PartialEq)]
pub struct NnBaseline {
    pub mlp: Mlp<f64>,
}

/// Linear pairwise baseline `f(x) = w · x` over the padded input.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSvm {
    pub mlp: Mlp<f64>,
}

fn padded(features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<Vec<f64>> {
    Ok(features.chart_input(columns)?.padded_flat())
}

impl ChartRanker for NnBaseline {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        Ok(self.mlp.forward(&padded(features, columns)?)[0])
    }
}

impl ChartRanker for RankSvm {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        Ok(self.mlp.forward(&padded(features, columns)?)[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnConfig {
    /// Hidden widths; the output layer of width 1 is appended.
    pub hidden: Vec<usize>,
    pub margin: f64,
    pub fit: FitConfig,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: vec![128, 32],
            margin: 1.0,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSvmConfig {
    /// Inverse regularization strength of `½‖w‖² + C Σ hinge`.
    pub c: f64,
    pub fit: FitConfig,
}

impl Default for RankSvmConfig {
    fn default() -> Self {
        RankSvmConfig {
            c: 10.0,
            fit: FitConfig {
                adam: crate::neural::AdamConfig {
                    lr: 1e-2,
                    ..Default::default()
                },
                ..FitConfig::default()
            },
        }
    }
}

struct FlatPair {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

fn flat_pairs(dataset: &PairDataset) -> Result<Vec<FlatPair>> {
    dataset
        .pairs
        .iter()
        .map(|p| {
            let f = dataset.features(&p.table_id)?;
            Ok(FlatPair {
                pos: padded(f, &p.pos.column_set())?,
                neg: padded(f, &p.neg.column_set())?,
            })
        })
        .collect()
}

fn margin_step(m: &Mlp<f64>, p: &FlatPair, margin: f64, g: &mut Mlp<f64>) -> Result<f64> {
    let (sp, cp) = m.forward_cached(&p.pos);
    let (sn, cn) = m.forward_cached(&p.neg);
    let (dp, dn) = margin_rank_grad(sp[0], sn[0], margin);
    if dp != 0.0 {
        m.backward(&cp, &[dp], g);
        m.backward(&cn, &[dn], g);
    }
    Ok(margin_rank_loss(sp[0], sn[0], margin))
}

pub fn train_nn_baseline(dataset: &PairDataset, config: &NnConfig) -> Result<NnBaseline> {
    if config.hidden.iter().any(|&w| w == 0) {
        return Err(Error::Config("baseline hidden widths must be positive".into()));
    }
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = flat_pairs(dataset)?;
    let mut dims = config.hidden.clone();
    dims.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.fit.seed);
    let mut mlp = Mlp::random(MAX_CHART_COLUMNS * EMBEDDING_DIM, &dims, &mut rng);
    let margin = config.margin;
    fit(&mut mlp, &pairs, &config.fit, |m, p, g| margin_step(m, p, margin, g))?;
    Ok(NnBaseline { mlp })
}

pub fn train_ranksvm_baseline(dataset: &PairDataset, config: &RankSvmConfig) -> Result<RankSvm> {
    if config.c <= 0.0 {
        return Err(Error::Config("C must be positive".into()));
    }
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = flat_pairs(dataset)?;
    let mut mlp = Mlp::zeros(MAX_CHART_COLUMNS * EMBEDDING_DIM, &[1]);
    let mut fit_config = config.fit.clone();
    // Mean-hinge form of ½‖w‖² + C Σ hinge.
    fit_config.l2 = 1.0 / (config.c * pairs.len() as f64);
    fit(&mut mlp, &pairs, &fit_config, |m, p, g| margin_step(m, p, 1.0, g))?;
    Ok(RankSvm { mlp })
}

/// Memoizes scores per (table, column set); ground truths recur in many
/// pairs.
struct ScoreCache<'a, R: ChartRanker> {
    ranker: &'a R,
    scores: HashMap<(&'a str, Vec<usize>), f64>,
}

impl<'a, R: ChartRanker> ScoreCache<'a, R> {
    fn get(&mut self, table_id: &'a str, features: &TableFeatures, columns: &[usize]) -> Result<f64> {
        let key = (table_id, columns.to_vec());
        if let Some(s) = self.scores.get(&key) {
            return Ok(*s);
        }
        let s = self.ranker.rank_score(features, &columns.iter().copied().collect())?;
        self.scores.insert(key, s);
        Ok(s)
    }
}

/// Fraction of pairs whose positive strictly outscores the negative.
pub fn pair_accuracy<R: ChartRanker>(ranker: &R, dataset: &PairDataset) -> Result<f64> {
    if dataset.pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cache = ScoreCache {
        ranker,
        scores: HashMap::new(),
    };
    let mut correct = 0usize;
    for p in &dataset.pairs {
        let f = dataset.features(&p.table_id)?;
        let pos = cache.get(&p.table_id, f, &p.pos.columns)?;
        let neg = cache.get(&p.table_id, f, &p.neg.columns)?;
        if pos > neg {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.pairs.len() as f64)
}

/// A table and the column selections known to be good for it.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallTable {
    pub features: TableFeatures,
    pub ground_truths: Vec<BTreeSet<usize>>,
}

/// 1-based rank of every ground truth among all column subsets of size
/// 1–4, ordered by score descending and then lexicographically.
pub fn ground_truth_ranks<R: ChartRanker>(ranker: &R, table: &RecallTable) -> Result<Vec<usize>> {
    let candidates = column_subsets(table.features.column_count(), MAX_CHART_COLUMNS);
    let mut scored: Vec<(f64, Vec<usize>)> = candidates
        .iter()
        .map(|c| Ok((ranker.rank_score(&table.features, c)?, c.iter().copied().collect())))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let position: HashMap<&[usize], usize> =
        scored.iter().enumerate().map(|(i, (_, c))| (c.as_slice(), i + 1)).collect();
    let truths: BTreeSet<Vec<usize>> = table
        .ground_truths
        .iter()
        .map(|g| g.iter().copied().collect())
        .collect();
    truths
        .iter()
        .map(|g| {
            position.get(g.as_slice()).copied().ok_or_else(|| {
                Error::Config(format!("ground truth {g:?} is not a 1-4 column subset of the table"))
            })
        })
        .collect()
}

/// Recall at each `k`, averaged over tables.
pub fn topk_recall_curve<R: ChartRanker>(ranker: &R, tables: &[RecallTable], ks: &[usize]) -> Result<Vec<f64>> {
    if tables.is_empty() || tables.iter().any(|t| t.ground_truths.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if ks.contains(&0) {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut sums = vec![0.0; ks.len()];
    for t in tables {
        let ranks = ground_truth_ranks(ranker, t)?;
        for (sum, &k) in sums.iter_mut().zip(ks) {
            *sum += ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / tables.len() as f64).collect())
}

pub fn topk_recall<R: ChartRanker>(ranker: &R, tables: &[RecallTable], k: usize) -> Result<f64> {
    Ok(topk_recall_curve(ranker, tables, &[k])?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccvRun {
    pub run: usize,
    pub train_tables: Vec<String>,
    pub test_tables: Vec<String>,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccvReport {
    pub runs: Vec<MccvRun>,
    pub mean: f64,
    pub std: f64,
}

impl MccvReport {
    /// Runs whose train and test sides share a table id.
    pub fn leaking_runs(&self) -> Vec<usize> {
        self.runs
            .iter()
            .filter(|r| {
                let train: BTreeSet<&String> = r.train_tables.iter().collect();
                r.test_tables.iter().any(|t| train.contains(t))
            })
            .map(|r| r.run)
            .collect()
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Splits the dataset's tables at random `runs` times, hands each
/// (train, test) split to `evaluate` and aggregates what it returns.
pub fn mc_cross_validate(
    dataset: &PairDataset,
    runs: usize,
    train_fraction: f64,
    seed: u64,
    mut evaluate: impl FnMut(usize, &PairDataset, &PairDataset) -> Result<f64>,
) -> Result<MccvReport> {
    let ids = dataset.table_ids();
    if ids.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    if runs == 0 || !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config("need runs >= 1 and a split strictly between 0 and 1".into()));
    }
    let n_train = ((ids.len() as f64 * train_fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        let train_ids: BTreeSet<String> = shuffled[..n_train].iter().cloned().collect();
        let test_ids: BTreeSet<String> = shuffled[n_train..].iter().cloned().collect();
        let train = dataset.restrict(&train_ids);
        let test = dataset.restrict(&test_ids);
        let value = evaluate(run, &train, &test)?;
        out.push(MccvRun {
            run,
            train_tables: train_ids.into_iter().collect(),
            test_tables: test_ids.into_iter().collect(),
            train_pairs: train.pairs.len(),
            test_pairs: test.pairs.len(),
            value,
        });
    }
    let values: Vec<f64> = out.iter().map(|r| r.value).collect();
    let (mean, std) = mean_std(&values);
    Ok(MccvReport { runs: out, mean, std })
}

/// Metrics report: `{metric, k?, runs, mean, std}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub runs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricsReport {
    pub fn new(metric: impl Into<String>, k: Option<usize>, runs: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&runs);
        MetricsReport {
            metric: metric.into(),
            k,
            runs,
            mean,
            std,
        }
    }
}

/// `k,recall` rows for plotting a recall curve.
pub fn recall_csv(ks: &[usize], recalls: &[f64]) -> String {
    let mut out = String::from("k,recall\n");
    for (k, r) in ks.iter().zip(recalls) {
        out.push_str(&format!("{k},{r}\n"));
    }
    out
}
