//! Ranked training pairs from ground-truth corpora and provenance logs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chartspec::{ChartIdentity, ChartType};
use crate::error::{Error, Result};
use crate::featurize::{column_subsets, TableFeatures, MAX_CHART_COLUMNS};
use crate::ingest::{parse_csv, DataTable};
use crate::mvrank::{context_embeddings, score_charts, MvPairRecord, MvSide, MvState};
use crate::provenance::ProvenanceLog;
use crate::ranker::{PairDataset, RecallTable};
use crate::Scorer;

/// Tables wider than this are skipped when building corpus pairs.
pub const MAX_TABLE_COLUMNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Corpus,
    Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveChart {
    pub columns: Vec<usize>,
    #[serde(default)]
    pub chart_type: Option<ChartType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeChart {
    pub columns: Vec<usize>,
}

impl PositiveChart {
    pub fn column_set(&self) -> BTreeSet<usize> {
        self.columns.iter().copied().collect()
    }
}

impl NegativeChart {
    pub fn column_set(&self) -> BTreeSet<usize> {
        self.columns.iter().copied().collect()
    }
}

/// One line of a chart pair file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartPairRecord {
    pub table_id: String,
    pub pos: PositiveChart,
    pub neg: NegativeChart,
    pub source: PairSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub columns: BTreeSet<usize>,
    #[serde(rename = "type", default)]
    pub chart_type: Option<ChartType>,
}

/// Filter accounting. Every chart seen lands in exactly one of `used`,
/// `skipped_wide`, `skipped_duplicate`, `skipped_invalid` or
/// `in_skipped_tables`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounters {
    pub tables_seen: usize,
    pub tables_skipped_wide: usize,
    pub charts_seen: usize,
    pub charts_used: usize,
    pub charts_skipped_wide: usize,
    pub charts_skipped_duplicate: usize,
    pub charts_skipped_invalid: usize,
    pub charts_in_skipped_tables: usize,
    pub pairs: usize,
}

impl FilterCounters {
    pub fn is_balanced(&self) -> bool {
        self.charts_seen
            == self.charts_used
                + self.charts_skipped_wide
                + self.charts_skipped_duplicate
                + self.charts_skipped_invalid
                + self.charts_in_skipped_tables
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGenConfig {
    /// Keep at most this many negatives per ground truth, sampled without
    /// replacement.
    pub cap_per_ground_truth: Option<usize>,
}

/// Pairs every ground truth against every other same-size column subset
/// that is not itself a ground truth.
pub fn corpus_pairs<R: Rng + ?Sized>(
    table_id: &str,
    n_columns: usize,
    ground_truths: &[GroundTruth],
    config: &PairGenConfig,
    counters: &mut FilterCounters,
    rng: &mut R,
) -> Vec<ChartPairRecord> {
    counters.tables_seen += 1;
    counters.charts_seen += ground_truths.len();
    if n_columns > MAX_TABLE_COLUMNS {
        counters.tables_skipped_wide += 1;
        counters.charts_in_skipped_tables += ground_truths.len();
        return Vec::new();
    }
    let mut kept: Vec<&GroundTruth> = Vec::new();
    for gt in ground_truths {
        if gt.columns.len() > MAX_CHART_COLUMNS {
            counters.charts_skipped_wide += 1;
        } else if gt.columns.is_empty() || gt.columns.iter().any(|&c| c >= n_columns) {
            counters.charts_skipped_invalid += 1;
        } else if kept.iter().any(|k| k.columns == gt.columns) {
            counters.charts_skipped_duplicate += 1;
        } else {
            kept.push(gt);
        }
    }
    counters.charts_used += kept.len();

    let truths: BTreeSet<&BTreeSet<usize>> = kept.iter().map(|g| &g.columns).collect();
    let subsets = column_subsets(n_columns, MAX_CHART_COLUMNS);
    let mut out = Vec::new();
    for gt in kept {
        let mut negatives: Vec<&BTreeSet<usize>> = subsets
            .iter()
            .filter(|s| s.len() == gt.columns.len() && !truths.contains(s))
            .collect();
        if let Some(cap) = config.cap_per_ground_truth {
            if negatives.len() > cap {
                negatives.shuffle(rng);
                negatives.truncate(cap);
                negatives.sort();
            }
        }
        for neg in negatives {
            out.push(ChartPairRecord {
                table_id: table_id.to_string(),
                pos: PositiveChart {
                    columns: gt.columns.iter().copied().collect(),
                    chart_type: gt.chart_type,
                },
                neg: NegativeChart {
                    columns: neg.iter().copied().collect(),
                },
                source: PairSource::Corpus,
            });
        }
    }
    counters.pairs += out.len();
    out
}

/// A provenance pair before embedding: the session's final MV against one
/// intermediate version.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub session_id: String,
    pub positive: MvState,
    pub negative: MvState,
}

/// The final snapshot against each distinct earlier snapshot. Empty MVs
/// are not versions of a dashboard and are skipped; identity is the
/// multiset of typed chart identities.
pub fn provenance_pairs(log: &ProvenanceLog) -> Result<Vec<SnapshotPair>> {
    let snapshots: Vec<&MvState> = log
        .events
        .iter()
        .filter_map(|e| e.mv_snapshot.as_ref())
        .map(|s| &s.mv)
        .filter(|mv| !mv.is_empty())
        .collect();
    let final_mv = *snapshots.last().ok_or(Error::InsufficientHistory)?;
    let final_id = final_mv.identity();
    let mut seen: BTreeSet<Vec<ChartIdentity>> = BTreeSet::new();
    let mut out = Vec::new();
    for mv in &snapshots[..snapshots.len() - 1] {
        let id = mv.identity();
        if id != final_id && seen.insert(id) {
            out.push(SnapshotPair {
                session_id: log.header.session_id.clone(),
                positive: final_mv.clone(),
                negative: (*mv).clone(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientHistory);
    }
    Ok(out)
}

/// Embeds snapshot pairs with the single-chart model, using the feature
/// dump stored in the log.
pub fn embed_snapshot_pairs(
    pairs: &[SnapshotPair],
    features: &TableFeatures,
    single: &Scorer,
) -> Result<Vec<MvPairRecord>> {
    let embed = |mv: &MvState| -> Result<MvSide> {
        let scored = score_charts(single, features, &mv.specs())?;
        Ok(MvSide::from_embeddings(&context_embeddings(&scored, features.column_count())?))
    };
    pairs
        .iter()
        .map(|p| {
            Ok(MvPairRecord {
                session_id: p.session_id.clone(),
                pos: embed(&p.positive)?,
                neg: embed(&p.negative)?,
                source: PairSource::Provenance,
            })
        })
        .collect()
}

/// One line of a ground-truth corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub table: CorpusTable,
    pub charts: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTable {
    pub name: String,
    /// Relative to the corpus file's directory.
    pub csv_path: String,
}

/// A loaded corpus: parsed tables with their ground truths.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<(CorpusEntry, DataTable)>,
}

pub const CORPUS_FILE: &str = "corpus.jsonl";

impl Corpus {
    /// Reads `corpus.jsonl` from `dir` and parses every referenced table.
    pub fn load(dir: &Path) -> Result<Corpus> {
        let path = dir.join(CORPUS_FILE);
        let text = std::fs::read_to_string(&path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CorpusEntry = serde_json::from_str(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            let bytes = std::fs::read(dir.join(&entry.table.csv_path))?;
            let table = parse_csv(&bytes, &entry.table.name)?;
            entries.push((entry, table));
        }
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Corpus {
            root: dir.to_path_buf(),
            entries,
        })
    }

    /// Pairs for every table, with table features keyed by corpus name.
    pub fn pair_dataset<R: Rng + ?Sized>(
        &self,
        config: &PairGenConfig,
        rng: &mut R,
    ) -> (PairDataset, FilterCounters) {
        let mut counters = FilterCounters::default();
        let mut dataset = PairDataset::default();
        for (entry, table) in &self.entries {
            let pairs = corpus_pairs(
                &entry.table.name,
                table.column_count(),
                &entry.charts,
                config,
                &mut counters,
                rng,
            );
            if !pairs.is_empty() {
                dataset
                    .tables
                    .insert(entry.table.name.clone(), TableFeatures::from_table(table));
            }
            dataset.pairs.extend(pairs);
        }
        (dataset, counters)
    }

    /// Features for every table; pair files reference tables by name.
    pub fn features(&self) -> std::collections::BTreeMap<String, TableFeatures> {
        self.entries
            .iter()
            .map(|(e, t)| (e.table.name.clone(), TableFeatures::from_table(t)))
            .collect()
    }

    /// Tables usable for recall: within the width filter, with at least one
    /// valid ground truth.
    pub fn recall_tables(&self) -> Vec<RecallTable> {
        self.named_recall_tables().into_iter().map(|(_, t)| t).collect()
    }

    /// `recall_tables` with each table's corpus name.
    pub fn named_recall_tables(&self) -> Vec<(String, RecallTable)> {
        self.entries
            .iter()
            .filter(|(_, t)| t.column_count() <= MAX_TABLE_COLUMNS)
            .filter_map(|(e, t)| {
                let n = t.column_count();
                let truths: Vec<BTreeSet<usize>> = e
                    .charts
                    .iter()
                    .filter(|g| {
                        !g.columns.is_empty()
                            && g.columns.len() <= MAX_CHART_COLUMNS
                            && g.columns.iter().all(|&c| c < n)
                    })
                    .map(|g| g.columns.clone())
                    .collect();
                (!truths.is_empty()).then(|| {
                    let table = RecallTable {
                        features: TableFeatures::from_table(t),
                        ground_truths: truths,
                    };
                    (e.table.name.clone(), table)
                })
            })
            .collect()
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Config(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt(cols: &[usize]) -> GroundTruth {
        GroundTruth {
            columns: cols.iter().copied().collect(),
            chart_type: Some(ChartType::Bar),
        }
    }

    fn run(n: usize, gts: &[GroundTruth]) -> (Vec<ChartPairRecord>, FilterCounters) {
        let mut c = FilterCounters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = corpus_pairs("t", n, gts, &PairGenConfig::default(), &mut c, &mut rng);
        (p, c)
    }

    #[test]
    fn five_columns_one_truth() {
        let (p, c) = run(5, &[gt(&[1, 3])]);
        assert_eq!(p.len(), 9);
        assert_eq!(c.pairs, 9);
        assert!(p.iter().all(|r| r.neg.columns.len() == 2 && r.neg.columns != vec![1, 3]));
    }

    #[test]
    fn shared_cardinality_excludes_other_truths() {
        let (p, _) = run(4, &[gt(&[0, 1]), gt(&[2, 3])]);
        assert_eq!(p.len(), 8);
        assert!(p.iter().all(|r| r.neg.columns != vec![0, 1] && r.neg.columns != vec![2, 3]));
    }

    #[test]
    fn filters() {
        let (p, c) = run(11, &[gt(&[0, 1])]);
        assert!(p.is_empty());
        assert_eq!(c.tables_skipped_wide, 1);
        assert_eq!(c.charts_in_skipped_tables, 1);
        let (p, c) = run(6, &[gt(&[0, 1, 2, 3, 4]), gt(&[0]), gt(&[0]), gt(&[9])]);
        assert_eq!(p.len(), 5);
        assert_eq!(c.charts_skipped_wide, 1);
        assert_eq!(c.charts_skipped_duplicate, 1);
        assert_eq!(c.charts_skipped_invalid, 1);
        assert!(c.is_balanced());
    }

    #[test]
    fn cap_limits_negatives() {
        let mut c = FilterCounters::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = PairGenConfig {
            cap_per_ground_truth: Some(3),
        };
        let p = corpus_pairs("t", 8, &[gt(&[0, 1])], &cfg, &mut c, &mut rng);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn record_json_shape() {
        let (p, _) = run(3, &[gt(&[0])]);
        let line = serde_json::to_string(&p[0]).unwrap();
        assert_eq!(
            line,
            r#"{"table_id":"t","pos":{"columns":[0],"chart_type":"bar"},"neg":{"columns":[1]},"source":"corpus"}"#
        );
        let back: Vec<ChartPairRecord> = read_jsonl(&write_jsonl(&p)).unwrap();
        assert_eq!(back, p);
    }
}
