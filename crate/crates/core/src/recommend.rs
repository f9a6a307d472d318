//! Candidate enumeration, the greedy constrained MV recommender and
//! incremental chart ideas.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::chartspec::{assign_encodings, chart_identity, ChartIdentity, ChartSpec, ChartType, TableSchema};
use crate::error::{Error, Result};
use crate::featurize::{column_subsets, TableFeatures, MAX_CHART_COLUMNS};
use crate::mvrank::{score_mv, MvChart, MvState, ScoredChart, MAX_MV_CHARTS};
use crate::pairgen::MAX_TABLE_COLUMNS;
use crate::ranker::{score_columns, ChartScore};
use crate::Scorer;

/// What a recommendation needs to know about the table.
#[derive(Clone, Copy)]
pub struct TableContext<'a> {
    pub schema: &'a TableSchema,
    pub features: &'a TableFeatures,
    pub single: &'a Scorer,
}

impl TableContext<'_> {
    pub fn n_columns(&self) -> usize {
        self.schema.len()
    }

    pub fn score_spec(&self, spec: &ChartSpec) -> Result<ScoredChart> {
        spec.validate(self.n_columns())?;
        let score = score_columns(self.single, self.features, &spec.columns)?;
        Ok(ScoredChart::new(spec.columns.clone(), spec.chart_type, &score))
    }

    pub fn score_specs<'s>(&self, specs: impl IntoIterator<Item = &'s ChartSpec>) -> Result<Vec<ScoredChart>> {
        specs.into_iter().map(|s| self.score_spec(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub spec: ChartSpec,
    pub score: ChartScore,
}

impl Candidate {
    pub fn scored(&self) -> ScoredChart {
        ScoredChart::new(self.spec.columns.clone(), self.spec.chart_type, &self.score)
    }

    fn rank_value(&self, dedup: bool) -> f64 {
        if dedup {
            self.score.s_data
        } else {
            self.score.overall(self.spec.chart_type)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolOptions {
    /// One candidate per column set (its best type) instead of one per type.
    pub dedup: bool,
    /// For tables wider than the corpus limit, keep only this many of the
    /// best candidates.
    pub wide_table_cap: usize,
}

impl Default for PoolOptions {
    fn default() -> Self {
        PoolOptions {
            dedup: true,
            wide_table_cap: 500,
        }
    }
}

/// Scored candidates in recommendation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
    pub dedup: bool,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn identity(&self, spec: &ChartSpec) -> ChartIdentity {
        chart_identity(spec, self.dedup)
    }
}

/// Scores every column subset of size 1–4, sorted by score descending,
/// then column indices lexicographically, then chart-type order.
pub fn enumerate_candidates(ctx: &TableContext, options: PoolOptions) -> Result<CandidatePool> {
    let mut candidates = Vec::new();
    for columns in column_subsets(ctx.n_columns(), MAX_CHART_COLUMNS) {
        let score = score_columns(ctx.single, ctx.features, &columns)?;
        let types: Vec<ChartType> = if options.dedup {
            vec![score.best_type()]
        } else {
            ChartType::ALL.to_vec()
        };
        for chart_type in types {
            let spec = assign_encodings(ctx.schema, &columns, chart_type)?;
            candidates.push(Candidate { spec, score });
        }
    }
    let dedup = options.dedup;
    candidates.sort_by(|a, b| {
        b.rank_value(dedup)
            .total_cmp(&a.rank_value(dedup))
            .then_with(|| a.spec.columns.iter().cmp(b.spec.columns.iter()))
            .then_with(|| a.spec.chart_type.cmp(&b.spec.chart_type))
    });
    if ctx.n_columns() > MAX_TABLE_COLUMNS {
        candidates.truncate(options.wide_table_cap);
    }
    Ok(CandidatePool { candidates, dedup })
}

/// Scores a sequence of charts as an MV.
pub trait MvObjective {
    fn score(&self, charts: &[ScoredChart]) -> Result<f64>;
}

/// The trained MV model.
pub struct LearnedObjective<'a> {
    pub model: &'a Scorer,
    pub n_table_columns: usize,
}

impl MvObjective for LearnedObjective<'_> {
    fn score(&self, charts: &[ScoredChart]) -> Result<f64> {
        score_mv(self.model, charts, self.n_table_columns)
    }
}

/// Mean single-chart data score: a modular objective, for which greedy
/// selection is globally optimal.
pub struct MeanDataScore;

impl MvObjective for MeanDataScore {
    fn score(&self, charts: &[ScoredChart]) -> Result<f64> {
        if charts.is_empty() {
            return Err(Error::EmptyMv);
        }
        Ok(charts.iter().map(|c| c.s_data).sum::<f64>() / charts.len() as f64)
    }
}

impl<F: Fn(&[ScoredChart]) -> Result<f64>> MvObjective for F {
    fn score(&self, charts: &[ScoredChart]) -> Result<f64> {
        self(charts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    /// Index into the candidate pool.
    pub candidate: usize,
    pub mv_score: f64,
}

/// The pool candidate whose addition scores highest, skipping identities
/// already used; the earliest candidate wins ties.
pub fn greedy_step(
    pool: &CandidatePool,
    current: &[ScoredChart],
    used: &HashSet<ChartIdentity>,
    objective: &dyn MvObjective,
) -> Result<Option<GreedyStep>> {
    let mut trial = current.to_vec();
    trial.push(current.first().cloned().unwrap_or_else(|| pool.candidates[0].scored()));
    let last = trial.len() - 1;
    let mut best: Option<GreedyStep> = None;
    for (i, c) in pool.candidates.iter().enumerate() {
        if used.contains(&pool.identity(&c.spec)) {
            continue;
        }
        trial[last] = c.scored();
        let s = objective.score(&trial)?;
        if best.map_or(true, |b| s > b.mv_score) {
            best = Some(GreedyStep {
                candidate: i,
                mv_score: s,
            });
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub mv: MvState,
    pub mv_score: f64,
    pub per_chart: Vec<ScoredChart>,
    pub steps: Vec<GreedyStep>,
}

/// Starts from the locked charts, in the given order, and appends the
/// best-scoring candidate until the MV has `n_charts` charts.
pub fn recommend_mv(
    ctx: &TableContext,
    pool: &CandidatePool,
    locked: &[MvChart],
    n_charts: usize,
    objective: &dyn MvObjective,
) -> Result<Recommendation> {
    if n_charts == 0 || n_charts > MAX_MV_CHARTS {
        return Err(Error::Infeasible(format!("n_charts must be in 1..={MAX_MV_CHARTS}, got {n_charts}")));
    }
    if n_charts < locked.len() {
        return Err(Error::Infeasible(format!(
            "{} locked charts do not fit in {n_charts}",
            locked.len()
        )));
    }
    let mut per_chart = Vec::with_capacity(n_charts);
    let mut used = HashSet::new();
    let mut mv = MvState::default();
    for chart in locked {
        per_chart.push(ctx.score_spec(&chart.spec).map_err(|e| Error::Infeasible(format!("locked chart: {e}")))?);
        used.insert(pool.identity(&chart.spec));
        mv.charts.push(MvChart {
            locked: true,
            ..chart.clone()
        });
    }
    let available: HashSet<ChartIdentity> = pool
        .candidates
        .iter()
        .map(|c| pool.identity(&c.spec))
        .filter(|id| !used.contains(id))
        .collect();
    if n_charts - locked.len() > available.len() {
        return Err(Error::Infeasible(format!(
            "{n_charts} charts requested but only {} candidates remain",
            available.len()
        )));
    }
    let mut steps = Vec::new();
    while mv.len() < n_charts {
        let step = greedy_step(pool, &per_chart, &used, objective)?
            .ok_or_else(|| Error::Infeasible("candidate pool exhausted".into()))?;
        let c = &pool.candidates[step.candidate];
        used.insert(pool.identity(&c.spec));
        per_chart.push(c.scored());
        mv.charts.push(MvChart::new(c.spec.clone()));
        steps.push(step);
    }
    let mv_score = objective.score(&per_chart)?;
    Ok(Recommendation {
        mv,
        mv_score,
        per_chart,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartIdea {
    pub spec: ChartSpec,
    pub score: ChartScore,
    /// MV score after adding this chart, or the single-chart score when the
    /// MV is empty.
    pub projected_score: f64,
}

/// Candidates containing `must_include` and not yet in the MV, ranked by
/// the score of the MV they would produce.
pub fn chart_ideas(
    ctx: &TableContext,
    pool: &CandidatePool,
    current: &MvState,
    must_include: &BTreeSet<usize>,
    limit: usize,
    objective: &dyn MvObjective,
) -> Result<Vec<ChartIdea>> {
    if limit == 0 {
        return Err(Error::Config("limit must be at least 1".into()));
    }
    let scored = ctx.score_specs(current.charts.iter().map(|c| &c.spec))?;
    let used: HashSet<ChartIdentity> = current.charts.iter().map(|c| pool.identity(&c.spec)).collect();
    let mut trial = scored.clone();
    let mut ideas = Vec::new();
    for c in &pool.candidates {
        if !c.spec.columns.is_superset(must_include) || used.contains(&pool.identity(&c.spec)) {
            continue;
        }
        let projected = if scored.is_empty() {
            c.rank_value(pool.dedup)
        } else {
            trial.push(c.scored());
            let s = objective.score(&trial)?;
            trial.pop();
            s
        };
        ideas.push(ChartIdea {
            spec: c.spec.clone(),
            score: c.score,
            projected_score: projected,
        });
    }
    ideas.sort_by(|a, b| b.projected_score.total_cmp(&a.projected_score));
    ideas.truncate(limit);
    Ok(ideas)
}
