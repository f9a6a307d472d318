//! Seeded synthetic corpora whose ground truths maximize a planted utility,
//! so that a perfect ranker is known.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::chartspec::ChartType;
use crate::error::{Error, Result};
use crate::featurize::{column_subsets, TableFeatures, EMBEDDING_DIM, MAX_CHART_COLUMNS, SEMANTIC_DIM, TYPE_OFFSET};
use crate::ingest::{parse_csv, DataTable, DataType};
use crate::mvrank::{context_embeddings, MvPairRecord, MvSide, ScoredChart, CHART_EMBEDDING_DIM};
use crate::pairgen::{write_jsonl, Corpus, CorpusEntry, CorpusTable, GroundTruth, PairSource, CORPUS_FILE};
use crate::ranker::ChartRanker;

pub const UTILITY_FILE: &str = "utility.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// Sum of per-column linear scores.
    Linear,
    /// Adds a reward for every distinct column type, which no linear
    /// function of position-slotted features can express once column order
    /// is shuffled.
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub tables: usize,
    pub cols_min: usize,
    pub cols_max: usize,
    pub rows_min: usize,
    pub rows_max: usize,
    pub seed: u64,
    pub kind: UtilityKind,
    /// Minimum utility gap between the ground truth and any other subset,
    /// in units of the column-score standard deviation.
    pub min_gap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tables: 200,
            cols_min: 3,
            cols_max: 8,
            rows_min: 30,
            rows_max: 80,
            seed: 7,
            kind: UtilityKind::Linear,
            min_gap: 0.05,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.tables == 0 {
            return Err(Error::Config("tables must be at least 1".into()));
        }
        if self.cols_min == 0 || self.cols_min > self.cols_max || self.cols_max > 10 {
            return Err(Error::Config("column range must satisfy 1 <= min <= max <= 10".into()));
        }
        if self.rows_min < 2 || self.rows_min > self.rows_max {
            return Err(Error::Config("row range must satisfy 2 <= min <= max".into()));
        }
        Ok(())
    }
}

/// Planted utility of a column subset `S`:
/// `linear_scale * Σ_{c∈S} (w·e_c − threshold)`, plus for the interaction
/// kind `type_reward * distinct_types(S) − column_cost * |S|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUtility {
    pub kind: UtilityKind,
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub linear_scale: f64,
    pub type_reward: f64,
    pub column_cost: f64,
}

impl PlantedUtility {
    pub fn column_value(&self, embedding: &[f64]) -> f64 {
        self.weights.iter().zip(embedding).map(|(w, x)| w * x).sum::<f64>() - self.threshold
    }

    pub fn subset_value(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        let mut linear = 0.0;
        let mut types = BTreeSet::new();
        for &c in columns {
            let e = features
                .columns
                .get(c)
                .ok_or(Error::Index {
                    index: c,
                    len: features.column_count(),
                })?;
            linear += self.column_value(e);
            types.insert(type_slot(e));
        }
        Ok(match self.kind {
            UtilityKind::Linear => self.linear_scale * linear,
            UtilityKind::Interaction => {
                self.linear_scale * linear + self.type_reward * types.len() as f64
                    - self.column_cost * columns.len() as f64
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl ChartRanker for PlantedUtility {
    fn rank_score(&self, features: &TableFeatures, columns: &BTreeSet<usize>) -> Result<f64> {
        self.subset_value(features, columns)
    }
}

fn type_slot(embedding: &[f64]) -> usize {
    (TYPE_OFFSET..EMBEDDING_DIM)
        .find(|&i| embedding[i] == 1.0)
        .unwrap_or(EMBEDDING_DIM)
}

/// Best subset of size 1–4 and its margin over the runner-up.
fn best_subset(utility: &PlantedUtility, features: &TableFeatures) -> Result<(BTreeSet<usize>, f64)> {
    let mut best: Option<(BTreeSet<usize>, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for s in column_subsets(features.column_count(), MAX_CHART_COLUMNS) {
        let v = utility.subset_value(features, &s)?;
        match &best {
            Some((_, b)) if v <= *b => second = second.max(v),
            _ => {
                if let Some((_, b)) = &best {
                    second = second.max(*b);
                }
                best = Some((s, v));
            }
        }
    }
    let (s, b) = best.ok_or(Error::EmptyDataset)?;
    Ok((s, b - second))
}

/// Chart type of a ground truth, decided from its column types.
pub fn planted_chart_type(types: &[DataType]) -> ChartType {
    let measures = types.iter().filter(|t| t.is_measure()).count();
    if types.contains(&DataType::Temporal) {
        if measures >= 2 {
            ChartType::Area
        } else {
            ChartType::Line
        }
    } else if measures == types.len() && measures >= 2 {
        ChartType::Scatter
    } else if measures == 0 && types.len() == 1 {
        ChartType::Pie
    } else {
        ChartType::Bar
    }
}

#[derive(Debug, Clone, Copy)]
enum Archetype {
    Measure,
    Count,
    Change,
    Category,
    Name,
    Level,
    Month,
    Date,
    Year,
    Flag,
    Id,
}

const ARCHETYPES: [Archetype; 11] = [
    Archetype::Measure,
    Archetype::Count,
    Archetype::Change,
    Archetype::Category,
    Archetype::Name,
    Archetype::Level,
    Archetype::Month,
    Archetype::Date,
    Archetype::Year,
    Archetype::Flag,
    Archetype::Id,
];

const MEASURE_HEADERS: [&str; 10] = [
    "sales", "revenue", "profit", "price", "cost", "weight", "height", "temperature", "amount", "rating",
];
const COUNT_HEADERS: [&str; 5] = ["quantity", "visits", "orders", "units", "population"];
const CHANGE_HEADERS: [&str; 4] = ["growth", "change", "delta", "return"];
const CATEGORY_HEADERS: [&str; 8] = [
    "region", "category", "city", "country", "department", "segment", "channel", "brand",
];
const NAME_HEADERS: [&str; 4] = ["customer", "product", "employee", "store"];
const LEVEL_HEADERS: [&str; 3] = ["priority", "level", "size"];
const DATE_HEADERS: [&str; 4] = ["date", "order date", "ship date", "day"];
const FLAG_HEADERS: [&str; 4] = ["active", "returned", "member", "approved"];
const ID_HEADERS: [&str; 3] = ["id", "order_id", "customer_id"];
const CATEGORY_VALUES: [&str; 12] = [
    "north", "south", "east", "west", "alpha", "beta", "gamma", "delta", "retail", "online", "partner", "direct",
];
const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn header_for<R: Rng>(rng: &mut R, a: Archetype) -> String {
    match a {
        Archetype::Measure => pick(rng, &MEASURE_HEADERS).into(),
        Archetype::Count => pick(rng, &COUNT_HEADERS).into(),
        Archetype::Change => pick(rng, &CHANGE_HEADERS).into(),
        Archetype::Category => pick(rng, &CATEGORY_HEADERS).into(),
        Archetype::Name => pick(rng, &NAME_HEADERS).into(),
        Archetype::Level => pick(rng, &LEVEL_HEADERS).into(),
        Archetype::Month => "month".into(),
        Archetype::Date => pick(rng, &DATE_HEADERS).into(),
        Archetype::Year => "year".into(),
        Archetype::Flag => pick(rng, &FLAG_HEADERS).into(),
        Archetype::Id => pick(rng, &ID_HEADERS).into(),
    }
}

fn column_values<R: Rng>(rng: &mut R, a: Archetype, rows: usize) -> Vec<String> {
    let missing = if rng.gen_bool(0.3) { rng.gen_range(0.0..0.04) } else { 0.0 };
    let mut values: Vec<String> = match a {
        Archetype::Measure => {
            let mean = rng.gen_range(10.0..1000.0);
            let normal = Normal::new(mean, mean * rng.gen_range(0.05..0.5)).expect("positive sd");
            let exp = Exp::new(1.0 / mean).expect("positive rate");
            let skewed = rng.gen_bool(0.4);
            (0..rows)
                .map(|_| {
                    let x: f64 = if skewed { exp.sample(rng) } else { normal.sample(rng) };
                    format!("{x:.2}")
                })
                .collect()
        }
        Archetype::Count => {
            let hi = rng.gen_range(5..500);
            (0..rows).map(|_| rng.gen_range(2..hi + 3).to_string()).collect()
        }
        Archetype::Change => {
            let sd = rng.gen_range(1.0..30.0);
            let normal = Normal::new(0.0, sd).expect("positive sd");
            (0..rows).map(|_| format!("{:.1}", normal.sample(rng))).collect()
        }
        Archetype::Category => {
            let k = rng.gen_range(2..=6);
            let start = rng.gen_range(0..CATEGORY_VALUES.len() - k);
            let pool = &CATEGORY_VALUES[start..start + k];
            (0..rows).map(|_| pick(rng, pool).to_string()).collect()
        }
        Archetype::Name => {
            let k = rng.gen_range(rows / 2..=rows);
            (0..rows).map(|_| format!("item {}", rng.gen_range(0..k))).collect()
        }
        Archetype::Level => {
            let pool = ["low", "medium", "high"];
            (0..rows).map(|_| pick(rng, &pool).to_string()).collect()
        }
        Archetype::Month => (0..rows).map(|i| MONTHS[i % 12].to_string()).collect(),
        Archetype::Date => {
            let start = chrono::NaiveDate::from_ymd_opt(rng.gen_range(2000..2022), 1, 1).expect("valid date");
            let step = rng.gen_range(1..30);
            let sorted = rng.gen_bool(0.6);
            (0..rows)
                .map(|i| {
                    let offset = if sorted { i as i64 * step } else { rng.gen_range(0..365 * 3) };
                    (start + chrono::Duration::days(offset)).format("%Y-%m-%d").to_string()
                })
                .collect()
        }
        Archetype::Year => {
            let start = rng.gen_range(1960..2010);
            (0..rows).map(|i| (start + i as i32 / 3).to_string()).collect()
        }
        Archetype::Flag => {
            let p = rng.gen_range(0.2..0.8);
            let (t, f) = if rng.gen_bool(0.5) { ("true", "false") } else { ("yes", "no") };
            (0..rows).map(|_| if rng.gen_bool(p) { t } else { f }.to_string()).collect()
        }
        Archetype::Id => {
            let start = rng.gen_range(1..1000);
            (0..rows).map(|i| (start + i).to_string()).collect()
        }
    };
    if !matches!(a, Archetype::Id) {
        for v in values.iter_mut() {
            if rng.gen_bool(missing) {
                v.clear();
            }
        }
    }
    values
}

fn random_table<R: Rng>(rng: &mut R, name: &str, config: &SynthConfig) -> Result<(String, DataTable)> {
    let n_cols = rng.gen_range(config.cols_min..=config.cols_max);
    let rows = rng.gen_range(config.rows_min..=config.rows_max);
    let mut headers: Vec<String> = Vec::with_capacity(n_cols);
    let mut columns = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let a = ARCHETYPES[rng.gen_range(0..ARCHETYPES.len())];
        let base = header_for(rng, a);
        let mut header = base.clone();
        let mut k = 2;
        while headers.contains(&header) {
            header = format!("{base} {k}");
            k += 1;
        }
        headers.push(header);
        columns.push(column_values(rng, a, rows));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&headers).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in 0..rows {
        writer
            .write_record(columns.iter().map(|c| c[r].as_str()))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let table = parse_csv(text.as_bytes(), name)?;
    Ok((text, table))
}

/// Weights over header semantics, statistics and type slots.
fn planted_weights<R: Rng>(rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit sd");
    (0..EMBEDDING_DIM)
        .map(|i| {
            let scale = if i < SEMANTIC_DIM { 0.5 } else { 1.0 };
            scale * normal.sample(rng)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SynthTable {
    pub entry: CorpusEntry,
    pub csv: String,
    pub table: DataTable,
    pub features: TableFeatures,
    /// Utility margin of the ground truth over the runner-up subset.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub utility: PlantedUtility,
    pub tables: Vec<SynthTable>,
    /// Candidate tables discarded for a ground-truth gap below the minimum.
    pub rejected: usize,
}

const CALIBRATION_TABLES: usize = 64;
/// Fraction of columns whose linear score falls below the threshold.
const THRESHOLD_QUANTILE: f64 = 0.6;
const MAX_ATTEMPTS_PER_TABLE: usize = 50;

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let raw = planted_weights(&mut rng);

    // Calibrate scale and threshold on tables drawn from the same generator.
    let mut scores = Vec::new();
    for i in 0..CALIBRATION_TABLES {
        let (_, t) = random_table(&mut rng, &format!("calibration_{i}"), config)?;
        let f = TableFeatures::from_table(&t);
        scores.extend(f.columns.iter().map(|e| raw.iter().zip(e).map(|(w, x)| w * x).sum::<f64>()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let weights: Vec<f64> = raw.iter().map(|w| w / sd).collect();
    scores.iter_mut().for_each(|s| *s /= sd);
    scores.sort_by(f64::total_cmp);
    let threshold = scores[((scores.len() - 1) as f64 * THRESHOLD_QUANTILE) as usize];
    let utility = match config.kind {
        UtilityKind::Linear => PlantedUtility {
            kind: UtilityKind::Linear,
            weights,
            threshold,
            linear_scale: 1.0,
            type_reward: 0.0,
            column_cost: 0.0,
        },
        UtilityKind::Interaction => PlantedUtility {
            kind: UtilityKind::Interaction,
            weights,
            threshold,
            linear_scale: 0.3,
            type_reward: 1.0,
            column_cost: 0.6,
        },
    };

    let mut tables = Vec::with_capacity(config.tables);
    let mut rejected = 0;
    for i in 0..config.tables {
        let name = format!("table_{i:04}");
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS_PER_TABLE {
                return Err(Error::Config(format!("no table with gap >= {} after {MAX_ATTEMPTS_PER_TABLE} attempts", config.min_gap)));
            }
            let (csv, table) = random_table(&mut rng, &name, config)?;
            let features = TableFeatures::from_table(&table);
            let (columns, gap) = best_subset(&utility, &features)?;
            if gap < config.min_gap {
                rejected += 1;
                continue;
            }
            let types: Vec<DataType> = columns.iter().map(|&c| table.columns[c].inferred_type).collect();
            let entry = CorpusEntry {
                table: CorpusTable {
                    name: name.clone(),
                    csv_path: format!("tables/{name}.csv"),
                },
                charts: vec![GroundTruth {
                    columns,
                    chart_type: Some(planted_chart_type(&types)),
                }],
            };
            tables.push(SynthTable {
                entry,
                csv,
                table,
                features,
                gap,
            });
            break;
        }
    }
    Ok(SynthCorpus {
        config: *config,
        utility,
        tables,
        rejected,
    })
}

impl SynthCorpus {
    /// The corpus as if written and loaded again.
    pub fn corpus(&self) -> Corpus {
        Corpus {
            root: PathBuf::new(),
            entries: self.tables.iter().map(|t| (t.entry.clone(), t.table.clone())).collect(),
        }
    }

    /// Writes `tables/*.csv`, the corpus file and the utility file.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("tables"))?;
        for t in &self.tables {
            std::fs::write(dir.join(&t.entry.table.csv_path), &t.csv)?;
        }
        let entries: Vec<&CorpusEntry> = self.tables.iter().map(|t| &t.entry).collect();
        std::fs::write(dir.join(CORPUS_FILE), write_jsonl(&entries))?;
        self.utility.save(&dir.join(UTILITY_FILE))
    }
}

/// Planted MV utility: mean over charts of `weights · embedding`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvUtility {
    pub weights: [f64; CHART_EMBEDDING_DIM],
}

impl Default for MvUtility {
    /// Rewards data quality, diversity, complementarity and coverage;
    /// penalizes overlap, size, sprawl and duplicates.
    fn default() -> Self {
        MvUtility {
            weights: [1.0, 0.5, -0.3, 1.0, -1.0, 0.5, 1.5, -0.8, -2.0],
        }
    }
}

impl MvUtility {
    pub fn value(&self, embeddings: &[[f64; CHART_EMBEDDING_DIM]]) -> f64 {
        let total: f64 = embeddings
            .iter()
            .map(|e| self.weights.iter().zip(e).map(|(w, x)| w * x).sum::<f64>())
            .sum();
        total / embeddings.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvSynthConfig {
    pub sessions: usize,
    /// MVs a simulated user tries before settling on the best one.
    pub drafts_per_session: usize,
    pub seed: u64,
    pub min_gap: f64,
}

impl Default for MvSynthConfig {
    fn default() -> Self {
        MvSynthConfig {
            sessions: 200,
            drafts_per_session: 6,
            seed: 7,
            min_gap: 0.02,
        }
    }
}

fn random_chart<R: Rng>(rng: &mut R, n_cols: usize) -> ScoredChart {
    let size = rng.gen_range(1..=n_cols.min(3));
    let mut all: Vec<usize> = (0..n_cols).collect();
    all.shuffle(rng);
    ScoredChart {
        columns: all[..size].iter().copied().collect(),
        chart_type: ChartType::ALL[rng.gen_range(0..ChartType::ALL.len())],
        s_data: rng.gen_range(0.0..1.0),
        p_type: rng.gen_range(0.0..1.0),
    }
}

/// Simulated sessions: each drafts several MVs from a shared chart pool and
/// keeps the one with the highest planted utility. Every other draft whose
/// utility trails by at least `min_gap` becomes the negative of one pair.
pub fn mv_session_pairs(config: &MvSynthConfig, utility: &MvUtility) -> Result<Vec<MvPairRecord>> {
    if config.sessions == 0 || config.drafts_per_session < 2 {
        return Err(Error::Config("need at least 1 session and 2 drafts per session".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::new();
    for s in 0..config.sessions {
        let n_cols = rng.gen_range(4..=10);
        let pool: Vec<ScoredChart> = (0..12).map(|_| random_chart(&mut rng, n_cols)).collect();
        let mut drafts = Vec::with_capacity(config.drafts_per_session);
        for _ in 0..config.drafts_per_session {
            let len = rng.gen_range(2..=6);
            let charts: Vec<ScoredChart> = (0..len).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
            let embeddings = context_embeddings(&charts, n_cols)?;
            drafts.push((utility.value(&embeddings), embeddings));
        }
        let best = (0..drafts.len())
            .max_by(|&a, &b| drafts[a].0.total_cmp(&drafts[b].0))
            .expect("at least two drafts");
        let session_id = format!("synthetic_{s:04}");
        for (i, (u, e)) in drafts.iter().enumerate() {
            if i != best && drafts[best].0 - u >= config.min_gap {
                pairs.push(MvPairRecord {
                    session_id: session_id.clone(),
                    pos: MvSide::from_embeddings(&drafts[best].1),
                    neg: MvSide::from_embeddings(e),
                    source: PairSource::Provenance,
                });
            }
        }
    }
    Ok(pairs)
}
