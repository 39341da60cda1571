//! Scores per condition, cross-run means, error tallies, the outlier rule
//! and comparison with human baselines.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parse::{score_reply, Outcome, Score, ScoredTrial, ScoringPolicy, UnparseablePolicy};
use crate::runner::RunRecord;
use crate::study::{ItemKind, StimulusItem, Study};

pub const FILLERS: &str = "fillers";
pub const DISTRACTORS: &str = "distractors";
pub const OVERALL: &str = "overall";
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("run belongs to study `{run}`, expected `{expected}`")]
    StudyMismatch { run: String, expected: String },
    #[error("run {run_index} has a trial for unknown item `{item_id}`")]
    UnknownItem { run_index: u32, item_id: String },
    #[error("run {run_index} is incomplete: {missing} of {expected} trials have no record")]
    Incomplete {
        run_index: u32,
        missing: usize,
        expected: usize,
    },
    #[error("no runs to analyze")]
    NoRuns,
    #[error("runs report different scopes: {0:?} vs {1:?}")]
    ScopeMismatch(Vec<String>, Vec<String>),
    #[error("unknown baseline scope `{0}`")]
    UnknownScope(String),
    #[error("outlier threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
}

/// Round half up to two decimals, as printed in result tables.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

pub fn fmt4(x: f64) -> String {
    format!("{:.4}", ((x * 10_000.0) + 0.5 + 1e-9).floor() / 10_000.0)
}

/// Every trial of one run, parsed and scored under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub study_id: String,
    pub strategy_id: String,
    pub run_index: u32,
    pub policy: ScoringPolicy,
    pub trials: Vec<ScoredTrial>,
}

/// Parse and score every trial of a complete run.
pub fn score_run(run: &RunRecord, study: &Study, policy: ScoringPolicy) -> Result<ScoredRun, AnalysisError> {
    if run.study_id() != study.study_id {
        return Err(AnalysisError::StudyMismatch {
            run: run.study_id().to_string(),
            expected: study.study_id.clone(),
        });
    }
    let index = study.item_index();
    let expected_items = study.trial_items().len();
    let expected = expected_items * study.n_informants as usize;
    let mut seen = HashSet::new();
    let mut trials = Vec::with_capacity(run.trial_count());
    for t in run.trials() {
        let item = index.get(t.item_id.as_str()).ok_or_else(|| AnalysisError::UnknownItem {
            run_index: run.run_index(),
            item_id: t.item_id.clone(),
        })?;
        if t.informant_index < study.n_informants && seen.insert((t.informant_index, t.item_id.as_str())) {
            trials.push(score_reply(
                t.raw_reply.text(),
                item,
                policy,
                t.informant_index,
                t.run_index,
            ));
        }
    }
    if trials.len() != expected {
        return Err(AnalysisError::Incomplete {
            run_index: run.run_index(),
            missing: expected - trials.len(),
            expected,
        });
    }
    Ok(ScoredRun {
        study_id: study.study_id.clone(),
        strategy_id: run.strategy_id().to_string(),
        run_index: run.run_index(),
        policy,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    /// A condition id, or `fillers` / `distractors` / `overall` (all critical items).
    pub scope: String,
    pub n_trials: u32,
    /// Denominator: trials minus excluded ones.
    pub n_scored: u32,
    pub n_correct: u32,
    pub n_incorrect: u32,
    pub n_unparseable: u32,
    pub n_unanswered: u32,
    pub n_excluded: u32,
    /// `None` for the distractor volume row and for empty denominators.
    pub accuracy: Option<f64>,
    pub error_targets: BTreeMap<String, u32>,
}

impl ConditionScore {
    fn new(scope: &str) -> Self {
        ConditionScore {
            scope: scope.to_string(),
            n_trials: 0,
            n_scored: 0,
            n_correct: 0,
            n_incorrect: 0,
            n_unparseable: 0,
            n_unanswered: 0,
            n_excluded: 0,
            accuracy: None,
            error_targets: BTreeMap::new(),
        }
    }

    fn add(&mut self, trial: &ScoredTrial, item: &StimulusItem, study: &Study, policy: ScoringPolicy) {
        self.n_trials += 1;
        if trial.parsed.as_ref().map(|p| p.outcome) == Some(Outcome::Unparseable) {
            self.n_unparseable += 1;
        }
        let score = match trial.score {
            Score::Unanswered => {
                self.n_unanswered += 1;
                match policy.unparseable {
                    UnparseablePolicy::Incorrect => Score::Incorrect,
                    UnparseablePolicy::Exclude => Score::Excluded,
                }
            }
            s => s,
        };
        match score {
            Score::Correct => self.n_correct += 1,
            Score::Incorrect => {
                self.n_incorrect += 1;
                *self
                    .error_targets
                    .entry(item.error_label(study.kind()).to_string())
                    .or_default() += 1;
            }
            Score::Excluded | Score::Unanswered => self.n_excluded += 1,
        }
    }

    fn finish(mut self, volume_only: bool) -> Self {
        self.n_scored = self.n_trials - self.n_excluded;
        self.accuracy = if volume_only || self.n_scored == 0 {
            None
        } else {
            Some(self.n_correct as f64 / self.n_scored as f64)
        };
        self
    }

    /// Accuracy rounded for display; `-` when there is none.
    pub fn accuracy_2dp(&self) -> String {
        self.accuracy.map(fmt2).unwrap_or_else(|| "-".into())
    }
}

/// Ordered scopes for a study: its conditions, then fillers, distractors and overall.
pub fn scopes(study: &Study) -> Vec<String> {
    let mut out: Vec<String> = study.conditions.iter().map(|c| c.condition_id.clone()).collect();
    let trial_items = study.trial_items();
    if trial_items.iter().any(|i| i.kind == ItemKind::Filler) {
        out.push(FILLERS.into());
    }
    if trial_items.iter().any(|i| i.kind == ItemKind::Distractor) {
        out.push(DISTRACTORS.into());
    }
    out.push(OVERALL.into());
    out
}

fn item_scopes(item: &StimulusItem) -> Vec<&str> {
    match item.kind {
        ItemKind::Critical => {
            let mut v = vec![OVERALL];
            if let Some(c) = item.condition_id.as_deref() {
                v.insert(0, c);
            }
            v
        }
        ItemKind::Filler => vec![FILLERS],
        ItemKind::Distractor => vec![DISTRACTORS],
    }
}

fn scores_where<F>(run: &ScoredRun, study: &Study, keep: F) -> Vec<ConditionScore>
where
    F: Fn(&StimulusItem) -> bool,
{
    let index = study.item_index();
    let order = scopes(study);
    let mut rows: BTreeMap<&str, ConditionScore> =
        order.iter().map(|s| (s.as_str(), ConditionScore::new(s))).collect();
    for trial in &run.trials {
        let Some(item) = index.get(trial.item_id.as_str()) else {
            continue;
        };
        if !keep(item) {
            continue;
        }
        for scope in item_scopes(item) {
            if let Some(row) = rows.get_mut(scope) {
                row.add(trial, item, study, run.policy);
            }
        }
    }
    order
        .iter()
        .map(|s| {
            let row = rows.remove(s.as_str()).expect("row per scope");
            row.finish(s == DISTRACTORS)
        })
        .collect()
}

/// One row per condition plus fillers, distractors (volume only) and overall.
pub fn condition_scores(run: &ScoredRun, study: &Study) -> Result<Vec<ConditionScore>, AnalysisError> {
    if run.study_id != study.study_id {
        return Err(AnalysisError::StudyMismatch {
            run: run.study_id.clone(),
            expected: study.study_id.clone(),
        });
    }
    let index = study.item_index();
    if let Some(t) = run.trials.iter().find(|t| !index.contains_key(t.item_id.as_str())) {
        return Err(AnalysisError::UnknownItem {
            run_index: run.run_index,
            item_id: t.item_id.clone(),
        });
    }
    Ok(scores_where(run, study, |_| true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub scope: String,
    pub per_run_values: Vec<f64>,
    /// Denominators behind `per_run_values`, used for trial-weighted groups.
    pub per_run_scored: Vec<u32>,
    pub per_run_correct: Vec<u32>,
    pub mean_value: f64,
    /// Total correct over total scored across runs.
    pub pooled_value: f64,
    pub n_runs: u32,
}

impl AggregateScore {
    /// Build from per-run values and denominators.
    pub fn from_values(scope: impl Into<String>, values: &[f64], scored: &[u32]) -> Self {
        let correct: Vec<u32> = values
            .iter()
            .zip(scored)
            .map(|(v, n)| (v * *n as f64).round() as u32)
            .collect();
        let total: u32 = scored.iter().sum();
        let weighted: f64 = values.iter().zip(scored).map(|(v, n)| v * *n as f64).sum();
        AggregateScore {
            scope: scope.into(),
            per_run_values: values.to_vec(),
            per_run_scored: scored.to_vec(),
            per_run_correct: correct,
            mean_value: mean(values),
            pooled_value: if total == 0 { 0.0 } else { weighted / total as f64 },
            n_runs: values.len() as u32,
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Mean across runs per scope, with pooled accuracy alongside.
/// Scopes without an accuracy (distractors) are skipped.
pub fn aggregate_runs(runs: &[Vec<ConditionScore>]) -> Result<Vec<AggregateScore>, AnalysisError> {
    let first = runs.first().ok_or(AnalysisError::NoRuns)?;
    let names = |r: &Vec<ConditionScore>| r.iter().map(|s| s.scope.clone()).collect::<Vec<_>>();
    let reference = names(first);
    for run in &runs[1..] {
        let other = names(run);
        if other != reference {
            return Err(AnalysisError::ScopeMismatch(reference, other));
        }
    }
    let mut out = Vec::new();
    for (i, row) in first.iter().enumerate() {
        if row.accuracy.is_none() && row.scope == DISTRACTORS {
            continue;
        }
        let values: Vec<f64> = runs.iter().map(|r| r[i].accuracy.unwrap_or(0.0)).collect();
        let scored: Vec<u32> = runs.iter().map(|r| r[i].n_scored).collect();
        let correct: Vec<u32> = runs.iter().map(|r| r[i].n_correct).collect();
        let total_scored: u32 = scored.iter().sum();
        let total_correct: u32 = correct.iter().sum();
        out.push(AggregateScore {
            scope: row.scope.clone(),
            mean_value: mean(&values),
            pooled_value: if total_scored == 0 {
                0.0
            } else {
                total_correct as f64 / total_scored as f64
            },
            per_run_values: values,
            per_run_scored: scored,
            per_run_correct: correct,
            n_runs: runs.len() as u32,
        });
    }
    Ok(out)
}

/// Scope → (error label → count): incorrect trials grouped by target word.
pub type ErrorBreakdown = BTreeMap<String, BTreeMap<String, u32>>;

pub fn error_breakdown(run: &ScoredRun, study: &Study) -> ErrorBreakdown {
    scores_where(run, study, |_| true)
        .into_iter()
        .filter(|s| s.scope != OVERALL && s.scope != DISTRACTORS)
        .map(|s| (s.scope, s.error_targets))
        .collect()
}

/// Sum several breakdowns scope by scope.
pub fn merge_breakdowns<'a>(parts: impl IntoIterator<Item = &'a ErrorBreakdown>) -> ErrorBreakdown {
    let mut out = ErrorBreakdown::new();
    for part in parts {
        for (scope, words) in part {
            let slot = out.entry(scope.clone()).or_default();
            for (w, n) in words {
                *slot.entry(w.clone()).or_default() += n;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedWord {
    pub word: String,
    pub errors: u32,
    pub error_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoredRun {
    pub run_index: u32,
    pub scores: Vec<ConditionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub threshold: f64,
    pub total_errors: u32,
    pub flagged_words: Vec<FlaggedWord>,
    pub rescored: Vec<RescoredRun>,
}

/// Words whose share of all critical-condition errors reaches `threshold`.
/// Fillers and distractors do not take part.
pub fn detect_outliers(
    breakdown: &ErrorBreakdown,
    study: &Study,
    threshold: f64,
) -> Result<Vec<FlaggedWord>, AnalysisError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AnalysisError::Threshold(threshold));
    }
    let critical: BTreeSet<&str> = study.conditions.iter().map(|c| c.condition_id.as_str()).collect();
    let mut per_word: BTreeMap<&str, u32> = BTreeMap::new();
    for (scope, words) in breakdown {
        if critical.contains(scope.as_str()) {
            for (w, n) in words {
                *per_word.entry(w.as_str()).or_default() += n;
            }
        }
    }
    let total: u32 = per_word.values().sum();
    if total == 0 {
        return Ok(Vec::new());
    }
    let mut flagged: Vec<FlaggedWord> = per_word
        .into_iter()
        .filter(|(_, n)| *n as f64 >= threshold * total as f64 - 1e-9)
        .map(|(w, n)| FlaggedWord {
            word: w.to_string(),
            errors: n,
            error_share: n as f64 / total as f64,
        })
        .collect();
    flagged.sort_by(|a, b| b.errors.cmp(&a.errors).then_with(|| a.word.cmp(&b.word)));
    Ok(flagged)
}

/// Condition scores with every trial on the given critical words removed.
pub fn rescore_without(run: &ScoredRun, study: &Study, words: &[String]) -> Vec<ConditionScore> {
    let kind = study.kind();
    let drop: HashSet<&str> = words.iter().map(String::as_str).collect();
    scores_where(run, study, |item| {
        item.kind != ItemKind::Critical || !drop.contains(item.error_label(kind))
    })
}

/// Pool critical errors over `runs`, flag dominating words, rescore each run without them.
pub fn outlier_report(runs: &[ScoredRun], study: &Study, threshold: f64) -> Result<OutlierReport, AnalysisError> {
    let breakdowns: Vec<ErrorBreakdown> = runs.iter().map(|r| error_breakdown(r, study)).collect();
    let pooled = merge_breakdowns(&breakdowns);
    let flagged = detect_outliers(&pooled, study, threshold)?;
    let critical: BTreeSet<&str> = study.conditions.iter().map(|c| c.condition_id.as_str()).collect();
    let total_errors = pooled
        .iter()
        .filter(|(s, _)| critical.contains(s.as_str()))
        .flat_map(|(_, w)| w.values())
        .sum();
    let words: Vec<String> = flagged.iter().map(|f| f.word.clone()).collect();
    let rescored = if words.is_empty() {
        Vec::new()
    } else {
        runs.iter()
            .map(|r| RescoredRun {
                run_index: r.run_index,
                scores: rescore_without(r, study, &words),
            })
            .collect()
    };
    Ok(OutlierReport {
        threshold,
        total_errors,
        flagged_words: flagged,
        rescored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub scope: String,
    pub model_mean: f64,
    pub human_mean: f64,
    pub delta: f64,
}

/// Model mean for a scope; `a+b` groups are trial-weighted over their members.
pub fn model_mean_for(scope: &str, aggregates: &[AggregateScore]) -> Result<f64, AnalysisError> {
    let by_scope: HashMap<&str, &AggregateScore> = aggregates.iter().map(|a| (a.scope.as_str(), a)).collect();
    if let Some(a) = by_scope.get(scope) {
        return Ok(a.mean_value);
    }
    let members: Vec<&AggregateScore> = scope
        .split('+')
        .map(|m| {
            by_scope
                .get(m.trim())
                .copied()
                .ok_or_else(|| AnalysisError::UnknownScope(scope.to_string()))
        })
        .collect::<Result<_, _>>()?;
    if members.len() < 2 {
        return Err(AnalysisError::UnknownScope(scope.to_string()));
    }
    let n_runs = members.iter().map(|m| m.per_run_values.len()).min().unwrap_or(0);
    let per_run: Vec<f64> = (0..n_runs)
        .map(|r| {
            let (num, den) = members.iter().fold((0.0, 0.0), |(num, den), m| {
                let n = m.per_run_scored[r] as f64;
                (num + m.per_run_values[r] * n, den + n)
            });
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect();
    Ok(mean(&per_run))
}

pub fn compare_to_baseline(
    aggregates: &[AggregateScore],
    study: &Study,
) -> Result<Vec<BaselineComparison>, AnalysisError> {
    study
        .baselines
        .iter()
        .map(|b| {
            let model = model_mean_for(&b.scope, aggregates)?;
            Ok(BaselineComparison {
                scope: b.scope.clone(),
                model_mean: model,
                human_mean: b.mean_value,
                delta: model - b.mean_value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformantLatency {
    pub informant_index: u32,
    pub n_trials: u32,
    pub total_secs: f64,
}

/// Descriptive timing only; not a reaction-time measure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub run_index: u32,
    pub informants: Vec<InformantLatency>,
    pub mean_total_secs: Option<f64>,
    pub min_total_secs: Option<f64>,
    pub max_total_secs: Option<f64>,
    pub mean_trial_secs: Option<f64>,
}

pub fn latency_summary(run: &RunRecord) -> LatencySummary {
    let informants: Vec<InformantLatency> = run
        .informants
        .iter()
        .map(|i| InformantLatency {
            informant_index: i.informant_index,
            n_trials: i.trials.len() as u32,
            total_secs: i.total_duration.as_secs_f64(),
        })
        .collect();
    let totals: Vec<f64> = informants.iter().map(|i| i.total_secs).collect();
    let n_trials: u32 = informants.iter().map(|i| i.n_trials).sum();
    let all: Duration = run.trials().map(|t| t.latency).sum();
    LatencySummary {
        run_index: run.run_index(),
        mean_total_secs: (!totals.is_empty()).then(|| mean(&totals)),
        min_total_secs: totals.iter().copied().reduce(f64::min),
        max_total_secs: totals.iter().copied().reduce(f64::max),
        mean_trial_secs: (n_trials > 0).then(|| all.as_secs_f64() / n_trials as f64),
        informants,
    }
}
