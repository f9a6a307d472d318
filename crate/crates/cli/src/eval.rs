use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mvforge_core::mvrank::{mv_pair_accuracy, train_mv, MvPairRecord};
use mvforge_core::neural::{ModelBundle, ModelKind};
use mvforge_core::pairgen::{Corpus, PairGenConfig};
use mvforge_core::ranker::{
    mc_cross_validate, mean_std, pair_accuracy, recall_csv, topk_recall_curve, train_nn_baseline,
    train_ranksvm_baseline, train_single, ChartRanker, MccvReport, MccvRun, MetricsReport, NnConfig, PairDataset,
    RankSvmConfig, RecallTable,
};
use mvforge_core::synth::{PlantedUtility, UTILITY_FILE};
use mvforge_server::train::{read_mv_pairs, TrainOverrides};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{existing, usage, CliError, CliResult, HyperArgs, ModelArg};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Nn,
    Ranksvm,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "single")]
    kind: ModelArg,
    /// Pairs file; single-chart pairs need their features sidecar.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Model to evaluate. Under --mccv its hyperparameters are retrained on
    /// every split.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of Monte-Carlo cross-validation runs.
    #[arg(long)]
    mccv: Option<usize>,
    /// Fraction of tables (or sessions) used for training.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Baselines trained and evaluated on the same splits; repeatable.
    #[arg(long = "baseline", value_enum)]
    baselines: Vec<Baseline>,
    /// Evaluate only the baselines and the planted utility.
    #[arg(long)]
    skip_ours: bool,
    /// Also evaluate the corpus' planted utility (needs --corpus).
    #[arg(long)]
    planted: bool,
    /// Top-k recall over every candidate subset instead of pair accuracy.
    #[arg(long)]
    recall: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    k: Vec<usize>,
    /// Corpus directory, for recall, the planted utility, or to derive pairs.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Fail unless every run's train and test tables are disjoint.
    #[arg(long)]
    audit: bool,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write `k,recall` rows (mean over runs, first system) here.
    #[arg(long)]
    recall_csv: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

enum System {
    Ours(TrainOverrides),
    Fixed(ModelBundle),
    Baseline(Baseline),
    Planted(PlantedUtility),
}

impl System {
    fn name(&self) -> &'static str {
        match self {
            System::Ours(_) | System::Fixed(_) => "ours",
            System::Baseline(Baseline::Nn) => "nn",
            System::Baseline(Baseline::Ranksvm) => "ranksvm",
            System::Planted(_) => "planted",
        }
    }
}

struct SystemResult {
    name: &'static str,
    report: MccvReport,
    /// Per run, recall at each k; empty for pair accuracy.
    curves: Vec<Vec<f64>>,
}

/// Recall tables of the corpus, keyed by table name.
struct RecallSet(Vec<(String, RecallTable)>);

impl RecallSet {
    fn restricted(&self, names: &BTreeSet<String>) -> Vec<RecallTable> {
        self.0
            .iter()
            .filter(|(n, _)| names.contains(n))
            .map(|(_, t)| t.clone())
            .collect()
    }

    fn all(&self) -> Vec<RecallTable> {
        self.0.iter().map(|(_, t)| t.clone()).collect()
    }
}

fn overrides_from(bundle: &ModelBundle, hyper: &HyperArgs) -> TrainOverrides {
    let flags = hyper.overrides();
    TrainOverrides {
        epochs: flags.epochs.or(Some(bundle.training.epochs)),
        seed: flags.seed.or(Some(bundle.training.seed)),
        margin: flags.margin.or(Some(bundle.hyper.margin)),
        lambda: match bundle.kind {
            ModelKind::SingleChart => flags.lambda.or(Some(bundle.hyper.lambda)),
            ModelKind::Mv => flags.lambda,
        },
        hidden_dim: flags.hidden_dim.or(Some(bundle.hyper.scorer.hidden_dim)),
        ..flags
    }
}

/// Evaluates one ranker on a test split: pair accuracy, or the recall curve
/// whose first point is the headline value.
fn measure<R: ChartRanker>(
    ranker: &R,
    test: &PairDataset,
    recall: Option<(&[RecallTable], &[usize])>,
    curves: &mut Vec<Vec<f64>>,
) -> mvforge_core::Result<f64> {
    match recall {
        None => pair_accuracy(ranker, test),
        Some((tables, ks)) => {
            let curve = topk_recall_curve(ranker, tables, ks)?;
            let first = curve[0];
            curves.push(curve);
            Ok(first)
        }
    }
}

fn train_and_measure(
    system: &System,
    train: &PairDataset,
    test: &PairDataset,
    recall: Option<(&[RecallTable], &[usize])>,
    curves: &mut Vec<Vec<f64>>,
) -> mvforge_core::Result<f64> {
    match system {
        System::Ours(o) => measure(&train_single(train, &o.single())?.model, test, recall, curves),
        System::Fixed(b) => measure(&b.model, test, recall, curves),
        System::Baseline(Baseline::Nn) => {
            measure(&train_nn_baseline(train, &NnConfig::default())?, test, recall, curves)
        }
        System::Baseline(Baseline::Ranksvm) => {
            measure(&train_ranksvm_baseline(train, &RankSvmConfig::default())?, test, recall, curves)
        }
        System::Planted(u) => measure(u, test, recall, curves),
    }
}

pub fn run(a: EvalArgs) -> CliResult<()> {
    if a.mccv == Some(0) {
        return Err(usage("--mccv needs at least one run"));
    }
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(usage("--split must be strictly between 0 and 1"));
    }
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(usage("--k values must be at least 1"));
    }
    let model = match &a.model {
        Some(p) => Some(ModelBundle::load_kind(existing(p)?, a.kind.into())?),
        None => None,
    };
    match a.kind {
        ModelArg::Mv => eval_mv(&a, model),
        ModelArg::Single => eval_single(&a, model),
    }
}

fn eval_single(a: &EvalArgs, model: Option<ModelBundle>) -> CliResult<()> {
    if (a.recall || a.planted) && a.corpus.is_none() {
        return Err(usage("--recall and --planted need --corpus"));
    }
    if a.mccv.is_none() && !a.baselines.is_empty() {
        return Err(usage("baselines are trained per split; add --mccv"));
    }
    let corpus = match &a.corpus {
        Some(dir) => Some(Corpus::load(existing(dir)?).map_err(|e| usage(format!("{}: {e}", dir.display())))?),
        None => None,
    };
    let seed = a.hyper.seed.unwrap_or(0);
    let dataset = match (&a.pairs, &corpus) {
        (Some(p), _) => PairDataset::load(existing(p)?)?,
        (None, Some(c)) => c.pair_dataset(&PairGenConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).0,
        (None, None) => return Err(usage("need --pairs or --corpus")),
    };
    let recall_set = corpus.as_ref().filter(|_| a.recall).map(|c| RecallSet(c.named_recall_tables()));

    let mut systems = Vec::new();
    if !a.skip_ours {
        match (model, a.mccv) {
            (Some(m), Some(_)) => systems.push(System::Ours(overrides_from(&m, &a.hyper))),
            (Some(m), None) => systems.push(System::Fixed(m)),
            (None, Some(_)) => systems.push(System::Ours(a.hyper.overrides())),
            (None, None) if !a.planted => return Err(usage("need --model, --mccv or --planted")),
            (None, None) => {}
        }
    }
    systems.extend(a.baselines.iter().map(|&b| System::Baseline(b)));
    if a.planted {
        let dir = a.corpus.as_ref().expect("checked above");
        systems.push(System::Planted(PlantedUtility::load(&dir.join(UTILITY_FILE))?));
    }
    if systems.is_empty() {
        return Err(usage("nothing to evaluate"));
    }

    let mut results = Vec::new();
    for system in &systems {
        let mut curves = Vec::new();
        let report = match a.mccv {
            Some(runs) => mc_cross_validate(&dataset, runs, a.split, seed, |_, train, test| {
                let tables = recall_set.as_ref().map(|r| r.restricted(&test.table_ids().into_iter().collect()));
                let recall = tables.as_deref().map(|t| (t, a.k.as_slice()));
                train_and_measure(system, train, test, recall, &mut curves)
            })?,
            None => {
                let tables = recall_set.as_ref().map(RecallSet::all);
                let recall = tables.as_deref().map(|t| (t, a.k.as_slice()));
                let value = train_and_measure(system, &dataset, &dataset, recall, &mut curves)?;
                let ids = dataset.table_ids();
                MccvReport {
                    runs: vec![MccvRun {
                        run: 0,
                        train_tables: Vec::new(),
                        test_tables: ids,
                        train_pairs: 0,
                        test_pairs: dataset.pairs.len(),
                        value,
                    }],
                    mean: value,
                    std: 0.0,
                }
            }
        };
        results.push(SystemResult {
            name: system.name(),
            report,
            curves,
        });
    }
    finish(a, results)
}

/// Splits by session: MV pairs from one session never straddle train and test.
fn eval_mv(a: &EvalArgs, model: Option<ModelBundle>) -> CliResult<()> {
    if a.recall || a.planted || !a.baselines.is_empty() {
        return Err(usage("MV evaluation supports pair accuracy of our model only"));
    }
    let path = a.pairs.as_ref().ok_or_else(|| usage("need --pairs"))?;
    let pairs = read_mv_pairs(existing(path)?)?;
    let seed = a.hyper.seed.unwrap_or(0);
    let report = match (a.mccv, model) {
        (None, Some(m)) => {
            let value = mv_pair_accuracy(&m.model, &pairs)?;
            let sessions: BTreeSet<String> = pairs.iter().map(|p| p.session_id.clone()).collect();
            MccvReport {
                runs: vec![MccvRun {
                    run: 0,
                    train_tables: Vec::new(),
                    test_tables: sessions.into_iter().collect(),
                    train_pairs: 0,
                    test_pairs: pairs.len(),
                    value,
                }],
                mean: value,
                std: 0.0,
            }
        }
        (None, None) => return Err(usage("need --model or --mccv")),
        (Some(runs), model) => {
            let overrides = match &model {
                Some(m) => overrides_from(m, &a.hyper),
                None => a.hyper.overrides(),
            };
            let config = overrides.mv().map_err(|e| usage(e.to_string()))?;
            mv_mccv(&pairs, runs, a.split, seed, |train, test| {
                mv_pair_accuracy(&train_mv(train, &config)?.model, test)
            })?
        }
    };
    finish(
        a,
        vec![SystemResult {
            name: "ours",
            report,
            curves: Vec::new(),
        }],
    )
}

fn mv_mccv(
    pairs: &[MvPairRecord],
    runs: usize,
    split: f64,
    seed: u64,
    mut evaluate: impl FnMut(&[MvPairRecord], &[MvPairRecord]) -> mvforge_core::Result<f64>,
) -> CliResult<MccvReport> {
    let ids: Vec<String> = pairs
        .iter()
        .map(|p| p.session_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(usage("MV cross-validation needs pairs from at least two sessions"));
    }
    let n_train = ((ids.len() as f64 * split).round() as usize).clamp(1, ids.len() - 1);
    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64)));
        let train_ids: BTreeSet<String> = shuffled[..n_train].iter().cloned().collect();
        let (train, test): (Vec<MvPairRecord>, Vec<MvPairRecord>) =
            pairs.iter().cloned().partition(|p| train_ids.contains(&p.session_id));
        let value = evaluate(&train, &test)?;
        out.push(MccvRun {
            run,
            train_tables: train_ids.into_iter().collect(),
            test_tables: shuffled[n_train..].iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            train_pairs: train.len(),
            test_pairs: test.len(),
            value,
        });
    }
    let values: Vec<f64> = out.iter().map(|r| r.value).collect();
    let (mean, std) = mean_std(&values);
    Ok(MccvReport { runs: out, mean, std })
}

fn finish(a: &EvalArgs, results: Vec<SystemResult>) -> CliResult<()> {
    let metric = if a.recall {
        format!("recall@{}", a.k[0])
    } else {
        "pair_accuracy".to_string()
    };
    let splits = &results[0].report.runs;
    let mut header = format!("{:>4} {:>7} {:>7} {:>10}", "run", "train", "test", "test_pairs");
    for r in &results {
        header.push_str(&format!(" {:>10}", r.name));
    }
    out!("{metric}");
    out!("{header}");
    for (i, split) in splits.iter().enumerate() {
        let mut line = format!(
            "{:>4} {:>7} {:>7} {:>10}",
            split.run,
            split.train_tables.len(),
            split.test_tables.len(),
            split.test_pairs
        );
        for r in &results {
            line.push_str(&format!(" {:>10.4}", r.report.runs[i].value));
        }
        out!("{line}");
    }
    for r in &results {
        out!("{} {metric}: {:.4} ± {:.4}", r.name, r.report.mean, r.report.std);
    }

    let recall_reports: Vec<Vec<MetricsReport>> = results
        .iter()
        .map(|r| {
            a.k.iter()
                .enumerate()
                .filter(|_| !r.curves.is_empty())
                .map(|(j, &k)| MetricsReport::new("recall", Some(k), r.curves.iter().map(|c| c[j]).collect()))
                .collect()
        })
        .collect();
    if a.recall {
        for (r, reports) in results.iter().zip(&recall_reports) {
            let parts: Vec<String> = reports
                .iter()
                .map(|m| format!("@{} {:.4}", m.k.unwrap_or(0), m.mean))
                .collect();
            out!("{} recall {}", r.name, parts.join("  "));
        }
    }

    let leaking: BTreeSet<usize> = results.iter().flat_map(|r| r.report.leaking_runs()).collect();
    let audited_runs = if a.mccv.is_some() { splits.len() } else { 0 };
    if a.mccv.is_some() {
        out!(
            "audit: {} of {audited_runs} runs share a table between train and test",
            leaking.len()
        );
    }

    if let Some(path) = &a.recall_csv {
        let means: Vec<f64> = recall_reports[0].iter().map(|m| m.mean).collect();
        if means.is_empty() {
            return Err(usage("--recall-csv needs --recall"));
        }
        std::fs::write(path, recall_csv(&a.k, &means))?;
    }
    if let Some(path) = &a.report {
        let systems: Vec<Value> = results
            .iter()
            .zip(&recall_reports)
            .map(|(r, recall)| {
                let values: Vec<f64> = r.report.runs.iter().map(|x| x.value).collect();
                json!({
                    "name": r.name,
                    "metric": MetricsReport::new(metric.clone(), a.recall.then(|| a.k[0]), values),
                    "recall": recall,
                })
            })
            .collect();
        let runs: Vec<Value> = splits
            .iter()
            .map(|s| {
                json!({
                    "run": s.run,
                    "train_tables": s.train_tables,
                    "test_tables": s.test_tables,
                    "train_pairs": s.train_pairs,
                    "test_pairs": s.test_pairs,
                })
            })
            .collect();
        let report = json!({
            "metric": metric,
            "mccv_runs": a.mccv,
            "split": a.split,
            "seed": a.hyper.seed.unwrap_or(0),
            "systems": systems,
            "splits": runs,
            "audit": {"leaking_runs": leaking},
        });
        std::fs::write(path, serde_json::to_string_pretty(&report).expect("values serialize"))?;
    }
    if a.audit && !leaking.is_empty() {
        return Err(CliError::Runtime(format!("audit failed: runs {leaking:?} leak tables")));
    }
    Ok(())
}
