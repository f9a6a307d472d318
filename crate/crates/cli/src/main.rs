/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod eval;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvforge_core::chartspec::{assign_encodings, emit_vegalite, vegalite_value, ChartType, TableSchema};
use mvforge_core::featurize::TableFeatures;
use mvforge_core::ingest::parse_csv;
use mvforge_core::mvrank::MvChart;
use mvforge_core::neural::{ModelBundle, ModelKind};
use mvforge_core::pairgen::{embed_snapshot_pairs, provenance_pairs, write_jsonl, Corpus, PairGenConfig};
use mvforge_core::provenance::read_log_dir;
use mvforge_core::recommend::{enumerate_candidates, recommend_mv, LearnedObjective, PoolOptions, TableContext};
use mvforge_core::synth::{generate, mv_session_pairs, MvSynthConfig, MvUtility, SynthConfig, UtilityKind};
use mvforge_server::train::{resume_from_file, train_from_file, TrainOverrides};
use mvforge_server::ServerConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unusable inputs; exit code 2.
    Usage(String),
    /// Exit code 1.
    Runtime(String),
}

impl From<mvforge_core::Error> for CliError {
    fn from(e: mvforge_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Input paths that do not exist are usage errors, not runtime failures.
pub fn existing(path: &Path) -> CliResult<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

#[derive(Parser)]
#[command(name = "mvforge", version, about = "Learned chart and multiple-view recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus with a planted utility.
    GenSynth(GenSynthArgs),
    /// Generate ranked pairs from a corpus or from provenance logs.
    Pairs(PairsArgs),
    /// Train a single-chart or MV scorer.
    Train(TrainArgs),
    /// Pair accuracy, top-k recall and Monte-Carlo cross-validation.
    Eval(eval::EvalArgs),
    /// Recommend an MV for a CSV table.
    Recommend(RecommendArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Linear,
    Interaction,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 200)]
    tables: usize,
    #[arg(long, default_value_t = 3)]
    cols_min: usize,
    #[arg(long, default_value_t = 8)]
    cols_max: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "linear")]
    utility: KindArg,
    /// Minimum utility gap between a table's ground truth and its runner-up.
    #[arg(long, default_value_t = 0.05)]
    min_gap: f64,
    /// Also write synthetic MV session pairs to `<out>/mv_pairs.jsonl`.
    #[arg(long, default_value_t = 0)]
    mv_sessions: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["corpus", "provenance"])))]
struct PairsArgs {
    /// Corpus directory holding corpus.jsonl.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory of session logs; produces MV pairs.
    #[arg(long, requires = "model_single")]
    provenance: Option<PathBuf>,
    /// Single-chart model used to embed provenance snapshots.
    #[arg(long)]
    model_single: Option<PathBuf>,
    /// Keep at most this many negatives per ground truth.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModelArg {
    #[value(alias = "single_chart")]
    Single,
    Mv,
}

impl From<ModelArg> for ModelKind {
    fn from(k: ModelArg) -> Self {
        match k {
            ModelArg::Single => ModelKind::SingleChart,
            ModelArg::Mv => ModelKind::Mv,
        }
    }
}

#[derive(Args, Clone, Default)]
pub struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Type-loss weight (single-chart only).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl HyperArgs {
    pub fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            margin: self.margin,
            lambda: self.lambda,
            hidden_dim: self.hidden_dim,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: ModelArg,
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Continue training an existing bundle of the same kind and layout.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Json,
    Vegalite,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=12))]
    n: u64,
    /// Locked chart as `cols[:type]`, e.g. `0,3:bar`; repeatable, kept in order.
    #[arg(long = "lock")]
    locks: Vec<String>,
    #[arg(long)]
    model_single: PathBuf,
    #[arg(long)]
    model_mv: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    emit: Emit,
    /// Treat the same columns under different chart types as distinct charts.
    #[arg(long)]
    keep_alternative_types: bool,
    #[arg(long, default_value_t = 500)]
    wide_table_cap: usize,
    /// Accepted for uniformity; recommendation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Logical event timestamps, for byte-identical logs.
    #[arg(long)]
    deterministic: bool,
}

fn gen_synth(a: GenSynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        tables: a.tables,
        cols_min: a.cols_min,
        cols_max: a.cols_max,
        seed: a.seed,
        kind: match a.utility {
            KindArg::Linear => UtilityKind::Linear,
            KindArg::Interaction => UtilityKind::Interaction,
        },
        min_gap: a.min_gap,
        ..SynthConfig::default()
    };
    let corpus = generate(&config).map_err(|e| usage(e.to_string()))?;
    corpus.write(&a.out)?;
    out!(
        "wrote {} tables to {} ({} candidates rejected for a small gap)",
        corpus.tables.len(),
        a.out.display(),
        corpus.rejected
    );
    if a.mv_sessions > 0 {
        let pairs = mv_session_pairs(
            &MvSynthConfig {
                sessions: a.mv_sessions,
                seed: a.seed,
                ..MvSynthConfig::default()
            },
            &MvUtility::default(),
        )?;
        let path = a.out.join("mv_pairs.jsonl");
        std::fs::write(&path, write_jsonl(&pairs))?;
        out!("wrote {} MV pairs to {}", pairs.len(), path.display());
    }
    Ok(())
}

fn pairs(a: PairsArgs) -> CliResult<()> {
    if let Some(dir) = &a.corpus {
        let corpus = Corpus::load(existing(dir)?).map_err(|e| match e {
            mvforge_core::Error::EmptyDataset => usage(format!("{} holds no corpus tables", dir.display())),
            mvforge_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                usage(format!("{}: {io}", dir.display()))
            }
            other => other.into(),
        })?;
        let config = PairGenConfig {
            cap_per_ground_truth: a.cap,
        };
        let (dataset, c) = corpus.pair_dataset(&config, &mut ChaCha8Rng::seed_from_u64(a.seed));
        out!("tables seen: {}", c.tables_seen);
        out!("tables skipped (>10 columns): {}", c.tables_skipped_wide);
        out!("charts seen: {}", c.charts_seen);
        out!("charts used: {}", c.charts_used);
        out!("charts skipped (>4 columns): {}", c.charts_skipped_wide);
        out!("charts skipped (duplicate): {}", c.charts_skipped_duplicate);
        out!("charts skipped (invalid): {}", c.charts_skipped_invalid);
        out!("charts in skipped tables: {}", c.charts_in_skipped_tables);
        if dataset.pairs.is_empty() {
            return Err(CliError::Runtime("no pairs generated".into()));
        }
        dataset.save(&a.out)?;
        out!("{} pairs", dataset.pairs.len());
        return Ok(());
    }
    let dir = a.provenance.as_deref().expect("clap enforces a source");
    let model = a.model_single.as_deref().expect("clap enforces a model");
    let single = ModelBundle::load_kind(existing(model)?, ModelKind::SingleChart)?;
    let logs = read_log_dir(existing(dir)?)?;
    if logs.is_empty() {
        return Err(usage(format!("{} holds no session logs", dir.display())));
    }
    let mut out = Vec::new();
    for log in &logs {
        let pairs = provenance_pairs(log)?;
        out.extend(embed_snapshot_pairs(&pairs, &log.header.features, &single.model)?);
    }
    out!("sessions: {}", logs.len());
    std::fs::write(&a.out, write_jsonl(&out))?;
    out!("{} pairs", out.len());
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let kind = ModelKind::from(a.kind);
    existing(&a.pairs)?;
    let overrides = a.hyper.overrides();
    let bundle = match &a.resume {
        Some(path) => {
            let base = ModelBundle::load_kind(existing(path)?, kind)?;
            resume_from_file(&base, &a.pairs, &overrides)?
        }
        None => train_from_file(kind, &a.pairs, &overrides)?,
    };
    bundle.save(&a.out)?;
    for (epoch, loss) in bundle.training.epoch_losses.iter().enumerate() {
        out!("epoch {:>3}  loss {loss:.6}", epoch + 1);
    }
    out!(
        "trained {} model {} on {} pairs -> {}",
        kind.as_str(),
        bundle.id(),
        bundle.training.pair_count,
        a.out.display()
    );
    Ok(())
}

/// Parses `0,3` or `0,3:bar`.
fn parse_lock(text: &str) -> CliResult<(BTreeSet<usize>, Option<ChartType>)> {
    let (cols, chart_type) = match text.split_once(':') {
        Some((c, t)) => (c, Some(t.parse::<ChartType>().map_err(|e| usage(format!("--lock {text}: {e}")))?)),
        None => (text, None),
    };
    let columns = cols
        .split(',')
        .map(|c| c.trim().parse::<usize>())
        .collect::<Result<BTreeSet<_>, _>>()
        .map_err(|_| usage(format!("--lock {text}: expected column indices like 0,3:bar")))?;
    Ok((columns, chart_type))
}

fn recommend(a: RecommendArgs) -> CliResult<()> {
    let locks = a.locks.iter().map(|l| parse_lock(l)).collect::<CliResult<Vec<_>>>()?;
    let bytes = std::fs::read(existing(&a.table)?)?;
    let name = a.table.file_name().map_or("table".into(), |n| n.to_string_lossy().into_owned());
    let table = parse_csv(&bytes, &name).map_err(|e| usage(e.to_string()))?;
    let single = ModelBundle::load_kind(existing(&a.model_single)?, ModelKind::SingleChart)?;
    let mv = ModelBundle::load_kind(existing(&a.model_mv)?, ModelKind::Mv)?;
    let schema = TableSchema::from(&table);
    let features = TableFeatures::from_table(&table);
    mvforge_core::ranker::check_single_bundle(&single, &features)?;
    let ctx = TableContext {
        schema: &schema,
        features: &features,
        single: &single.model,
    };
    let locked = locks
        .into_iter()
        .map(|(columns, chart_type)| {
            let t = match chart_type {
                Some(t) => t,
                None => mvforge_core::ranker::score_columns(&single.model, &features, &columns)?.best_type(),
            };
            Ok(MvChart::new(assign_encodings(&schema, &columns, t)?))
        })
        .collect::<mvforge_core::Result<Vec<_>>>()
        .map_err(|e| usage(format!("--lock: {e}")))?;
    let pool = enumerate_candidates(
        &ctx,
        PoolOptions {
            dedup: !a.keep_alternative_types,
            wide_table_cap: a.wide_table_cap,
        },
    )?;
    let objective = LearnedObjective {
        model: &mv.model,
        n_table_columns: schema.len(),
    };
    let rec = recommend_mv(&ctx, &pool, &locked, a.n as usize, &objective).map_err(|e| match e {
        mvforge_core::Error::Infeasible(m) => usage(m),
        other => other.into(),
    })?;
    match a.emit {
        Emit::Vegalite => {
            let specs: Vec<serde_json::Value> = rec
                .mv
                .charts
                .iter()
                .map(|c| serde_json::from_str(&emit_vegalite(&c.spec, &schema)).expect("emitter writes JSON"))
                .collect();
            out!("{}", serde_json::to_string_pretty(&specs).expect("values serialize"));
        }
        Emit::Json => {
            let charts: Vec<serde_json::Value> = rec
                .mv
                .charts
                .iter()
                .zip(&rec.per_chart)
                .map(|(c, s)| {
                    json!({
                        "columns": c.spec.columns,
                        "headers": c.spec.columns.iter().map(|&i| &schema.headers[i]).collect::<Vec<_>>(),
                        "chart_type": c.spec.chart_type,
                        "encodings": c.spec.encodings,
                        "locked": c.locked,
                        "s_data": s.s_data,
                        "p_type": s.p_type,
                        "vegalite": vegalite_value(&c.spec, &schema),
                    })
                })
                .collect();
            let out = json!({
                "table": table.name,
                "mv_score": rec.mv_score,
                "charts": charts,
                "models": {"single_chart": single.id(), "mv": mv.id()},
            });
            out!("{}", serde_json::to_string_pretty(&out).expect("values serialize"));
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    if let Some(path) = &a.config {
        existing(path)?;
    }
    let mut config = ServerConfig::load(a.config.as_deref()).map_err(|e| usage(e.to_string()))?;
    if let Some(bind) = a.bind {
        config.bind = bind;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.logical_clock |= a.deterministic;
    for path in [&config.single_model, &config.mv_model] {
        if !path.is_file() {
            return Err(usage(format!("model file {} does not exist", path.display())));
        }
    }
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let runtime = tokio::runtime::Runtime::new()?;
    let written = runtime
        .block_on(mvforge_server::serve(config))
        .map_err(|e| match e {
            mvforge_server::ServeError::Models(m) => usage(format!("cannot load models: {m}")),
            other => CliError::Runtime(other.to_string()),
        })?;
    eprintln!("flushed {} session logs", written.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Pairs(a) => pairs(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval::run(a),
        Command::Recommend(a) => recommend(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
