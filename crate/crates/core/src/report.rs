//! Report bundle for one (study, strategy): CSV tables, a Markdown summary
//! and grouped-bar plot data.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate_runs, compare_to_baseline, condition_scores, error_breakdown, fmt2, fmt4, latency_summary,
    outlier_report, AggregateScore, AnalysisError, BaselineComparison, ConditionScore, ErrorBreakdown,
    LatencySummary, OutlierReport, ScoredRun, DISTRACTORS,
};
use crate::parse::ScoringPolicy;
use crate::runner::RunRecord;
use crate::study::Study;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub run_index: u32,
    pub scores: Vec<ConditionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunErrors {
    pub run_index: u32,
    pub breakdown: ErrorBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub study_id: String,
    pub strategy_id: String,
    pub policy: ScoringPolicy,
    pub runs: Vec<RunScores>,
    pub aggregates: Vec<AggregateScore>,
    pub comparisons: Vec<BaselineComparison>,
    pub errors: Vec<RunErrors>,
    pub outliers: OutlierReport,
    pub latency: Vec<LatencySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotBar {
    pub scope: String,
    pub human: Option<f64>,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub study_id: String,
    pub strategy_id: String,
    pub bars: Vec<PlotBar>,
}

/// Analyze the scored runs of one strategy. `records` feed the latency summary only.
pub fn build_report(
    study: &Study,
    scored: &[ScoredRun],
    records: &[RunRecord],
    outlier_threshold: f64,
) -> Result<Report, AnalysisError> {
    let first = scored.first().ok_or(AnalysisError::NoRuns)?;
    let mut sorted: Vec<&ScoredRun> = scored.iter().collect();
    sorted.sort_by_key(|r| r.run_index);
    let runs: Vec<RunScores> = sorted
        .iter()
        .map(|r| {
            Ok(RunScores {
                run_index: r.run_index,
                scores: condition_scores(r, study)?,
            })
        })
        .collect::<Result<_, AnalysisError>>()?;
    let per_run: Vec<Vec<ConditionScore>> = runs.iter().map(|r| r.scores.clone()).collect();
    let aggregates = aggregate_runs(&per_run)?;
    let comparisons = compare_to_baseline(&aggregates, study)?;
    let errors = sorted
        .iter()
        .map(|r| RunErrors {
            run_index: r.run_index,
            breakdown: error_breakdown(r, study),
        })
        .collect();
    let owned: Vec<ScoredRun> = sorted.iter().map(|r| (*r).clone()).collect();
    let outliers = outlier_report(&owned, study, outlier_threshold)?;
    let mut latency: Vec<LatencySummary> = records.iter().map(latency_summary).collect();
    latency.sort_by_key(|l| l.run_index);
    Ok(Report {
        study_id: study.study_id.clone(),
        strategy_id: first.strategy_id.clone(),
        policy: first.policy,
        runs,
        aggregates,
        comparisons,
        errors,
        outliers,
        latency,
    })
}

impl Report {
    pub fn plot_data(&self) -> PlotData {
        let mut bars: Vec<PlotBar> = self
            .comparisons
            .iter()
            .map(|c| PlotBar {
                scope: c.scope.clone(),
                human: Some(c.human_mean),
                model: c.model_mean,
            })
            .collect();
        for a in &self.aggregates {
            if !bars.iter().any(|b| b.scope == a.scope) {
                bars.push(PlotBar {
                    scope: a.scope.clone(),
                    human: None,
                    model: a.mean_value,
                });
            }
        }
        PlotData {
            study_id: self.study_id.clone(),
            strategy_id: self.strategy_id.clone(),
            bars,
        }
    }

    pub fn aggregate(&self, scope: &str) -> Option<&AggregateScore> {
        self.aggregates.iter().find(|a| a.scope == scope)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# {} / {}\n", self.study_id, self.strategy_id);
        let _ = writeln!(
            md,
            "Unparseable and unanswered trials: {:?}.\n",
            self.policy.unparseable
        );

        let _ = writeln!(md, "## Per-run accuracy\n");
        let _ = writeln!(md, "| Condition | Accuracy | Wrong targets | Num. errors | Trials |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for run in &self.runs {
            for s in run.scores.iter().filter(|s| s.scope != DISTRACTORS) {
                let targets = s.error_targets.keys().cloned().collect::<Vec<_>>().join(", ");
                let _ = writeln!(
                    md,
                    "| {}_{} | {} | {} | {} | {} |",
                    s.scope,
                    run.run_index,
                    s.accuracy_2dp(),
                    targets,
                    s.n_incorrect,
                    s.n_scored
                );
            }
            if let Some(d) = run.scores.iter().find(|s| s.scope == DISTRACTORS) {
                let _ = writeln!(md, "| {}_{} | - | - | - | {} |", d.scope, run.run_index, d.n_trials);
            }
        }

        let _ = writeln!(md, "\n## Across runs\n");
        let _ = writeln!(md, "| Scope | Per run | Mean | Mean (4 dp) | Pooled (4 dp) |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for a in &self.aggregates {
            let per_run = a.per_run_values.iter().map(|v| fmt2(*v)).collect::<Vec<_>>().join(" / ");
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                a.scope,
                per_run,
                fmt2(a.mean_value),
                fmt4(a.mean_value),
                fmt4(a.pooled_value)
            );
        }

        if !self.comparisons.is_empty() {
            let _ = writeln!(md, "\n## Human baseline\n");
            let _ = writeln!(md, "| Scope | Human | Model | Delta |");
            let _ = writeln!(md, "|---|---|---|---|");
            for c in &self.comparisons {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {:+.3} |",
                    c.scope,
                    fmt2(c.human_mean),
                    fmt4(c.model_mean),
                    c.delta
                );
            }
        }

        let _ = writeln!(md, "\n## Outlier words\n");
        if self.outliers.flagged_words.is_empty() {
            let _ = writeln!(
                md,
                "No word holds {:.0}% or more of the {} critical errors.",
                self.outliers.threshold * 100.0,
                self.outliers.total_errors
            );
        } else {
            for f in &self.outliers.flagged_words {
                let _ = writeln!(
                    md,
                    "- `{}`: {} of {} critical errors ({:.1}%)",
                    f.word,
                    f.errors,
                    self.outliers.total_errors,
                    f.error_share * 100.0
                );
            }
            let _ = writeln!(md, "\nRescored without the flagged words:\n");
            let _ = writeln!(md, "| Condition | Accuracy | Trials |");
            let _ = writeln!(md, "|---|---|---|");
            for run in &self.outliers.rescored {
                for s in run.scores.iter().filter(|s| s.scope != DISTRACTORS) {
                    let _ = writeln!(md, "| {}_{} | {} | {} |", s.scope, run.run_index, s.accuracy_2dp(), s.n_scored);
                }
            }
        }

        if !self.latency.is_empty() {
            let _ = writeln!(md, "\n## Timing (descriptive only)\n");
            let _ = writeln!(md, "| Run | Mean per informant (s) | Min (s) | Max (s) | Mean per trial (s) |");
            let _ = writeln!(md, "|---|---|---|---|---|");
            let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
            for l in &self.latency {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} |",
                    l.run_index,
                    f(l.mean_total_secs),
                    f(l.min_total_secs),
                    f(l.max_total_secs),
                    f(l.mean_trial_secs)
                );
            }
        }
        md
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_csv<F>(path: &Path, header: &[&str], fill: F) -> io::Result<()>
where
    F: FnOnce(&mut csv::Writer<fs::File>) -> Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    fill(&mut w).map_err(csv_err)?;
    w.flush()
}

/// Write the full bundle into `dir` and return the files written.
pub fn write_report(report: &Report, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let opt4 = |v: Option<f64>| v.map(fmt4).unwrap_or_default();
    let opt2 = |v: Option<f64>| v.map(fmt2).unwrap_or_default();

    let path = dir.join("scores.csv");
    write_csv(
        &path,
        &[
            "scope", "run", "n_trials", "n_scored", "correct", "incorrect", "unparseable", "unanswered", "excluded",
            "accuracy", "accuracy_2dp",
        ],
        |w| {
            for run in &report.runs {
                for s in &run.scores {
                    w.write_record([
                        s.scope.clone(),
                        run.run_index.to_string(),
                        s.n_trials.to_string(),
                        s.n_scored.to_string(),
                        s.n_correct.to_string(),
                        s.n_incorrect.to_string(),
                        s.n_unparseable.to_string(),
                        s.n_unanswered.to_string(),
                        s.n_excluded.to_string(),
                        opt4(s.accuracy),
                        opt2(s.accuracy),
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    written.push(path);

    let path = dir.join("aggregate.csv");
    write_csv(
        &path,
        &["scope", "n_runs", "per_run", "mean", "mean_2dp", "pooled", "pooled_2dp"],
        |w| {
            for a in &report.aggregates {
                let per_run = a.per_run_values.iter().map(|v| fmt4(*v)).collect::<Vec<_>>().join(";");
                w.write_record([
                    a.scope.clone(),
                    a.n_runs.to_string(),
                    per_run,
                    fmt4(a.mean_value),
                    fmt2(a.mean_value),
                    fmt4(a.pooled_value),
                    fmt2(a.pooled_value),
                ])?;
            }
            Ok(())
        },
    )?;
    written.push(path);

    let path = dir.join("comparison.csv");
    write_csv(&path, &["scope", "model_mean", "human_mean", "delta", "delta_2dp"], |w| {
        for c in &report.comparisons {
            w.write_record([
                c.scope.clone(),
                fmt4(c.model_mean),
                fmt4(c.human_mean),
                format!("{:+.4}", c.delta),
                format!("{:+.2}", c.delta),
            ])?;
        }
        Ok(())
    })?;
    written.push(path);

    let path = dir.join("errors.csv");
    write_csv(&path, &["run", "scope", "target", "errors"], |w| {
        for run in &report.errors {
            for (scope, words) in &run.breakdown {
                for (word, n) in words {
                    w.write_record([run.run_index.to_string(), scope.clone(), word.clone(), n.to_string()])?;
                }
            }
        }
        Ok(())
    })?;
    written.push(path);

    let path = dir.join("outliers.csv");
    write_csv(&path, &["word", "errors", "total_errors", "error_share", "threshold"], |w| {
        for f in &report.outliers.flagged_words {
            w.write_record([
                f.word.clone(),
                f.errors.to_string(),
                report.outliers.total_errors.to_string(),
                fmt4(f.error_share),
                fmt4(report.outliers.threshold),
            ])?;
        }
        Ok(())
    })?;
    written.push(path);

    let path = dir.join("report.md");
    fs::write(&path, report.to_markdown())?;
    written.push(path);

    let path = dir.join("plotdata.json");
    fs::write(&path, serde_json::to_string_pretty(&report.plot_data()).map_err(io::Error::other)?)?;
    written.push(path);

    let path = dir.join("analysis.json");
    fs::write(&path, serde_json::to_string_pretty(report).map_err(io::Error::other)?)?;
    written.push(path);

    Ok(written)
}
