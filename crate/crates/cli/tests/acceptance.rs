//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails. Tolerances are fixed below and never adjusted to fit.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use informants_core::analysis::{compare_to_baseline, fmt2, AggregateScore, OVERALL};
use informants_core::bundled;
use informants_core::parse::{normalize, parse_detection, parse_forced_choice, Outcome, Verdict};
use informants_core::prompt::{builtin_strategy, Role};
use informants_core::provider::mock::{
    key_reply, script_from_answer_key, NoisePlanBuilder, RecordingProvider, ScriptedBehavior,
};
use informants_core::provider::GenerationParams;
use informants_core::runner::Runner;
use informants_core::study::{ItemKind, Study};
use proptest::test_runner::{Config, TestRunner};
use serde_json::Value;

/// Allowed distance between a computed accuracy and a printed table cell.
const CELL_TOLERANCE: f64 = 0.005;
/// Allowed distance for the filler mean across the two zero-shot runs.
const FILLER_MEAN_TOLERANCE: f64 = 0.0005;
/// Allowed distance for baseline deltas.
const DELTA_TOLERANCE: f64 = 0.001;
/// Wall-clock budget for the cohort-scale criteria.
const TIME_BUDGET: Duration = Duration::from_secs(60);
const FUZZ_CASES: u32 = 10_000;
const FUZZ_MAX_BYTES: usize = 10 * 1024;

const CRUZ: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/studies/cruz23.json");
const LOMBARD: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/studies/lombard21.json");

struct Check {
    pass: bool,
    summary: String,
}

fn verdict(pass: bool, summary: impl Into<String>) -> Check {
    Check {
        pass,
        summary: summary.into(),
    }
}

fn cli(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_informants"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn cli_ok(args: &[&str]) -> String {
    let (ok, stdout, stderr) = cli(args);
    assert!(ok, "informants {args:?} failed:\n{stdout}\n{stderr}");
    stdout
}

fn write_script(dir: &Path, name: &str, plan: &ScriptedBehavior) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(plan).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// (scope, run) → (accuracy, incorrect, error targets) from an analysis.json.
fn run_cells(analysis: &Value) -> BTreeMap<(String, u64), (f64, u64, Vec<String>)> {
    let mut out = BTreeMap::new();
    for run in analysis["runs"].as_array().unwrap() {
        let idx = run["run_index"].as_u64().unwrap();
        for row in run["scores"].as_array().unwrap() {
            let Some(acc) = row["accuracy"].as_f64() else { continue };
            let targets = row["error_targets"].as_object().unwrap().keys().cloned().collect();
            out.insert(
                (row["scope"].as_str().unwrap().to_string(), idx),
                (acc, row["n_incorrect"].as_u64().unwrap(), targets),
            );
        }
    }
    out
}

/// Published two-run determiner results: (condition, run, printed accuracy, wrong targets, errors).
const TABLE4: &[(u32, u32, f64, &[&str], usize)] = &[
    (1, 1, 0.98, &["hijo", "abuelo", "bombero"], 5),
    (2, 1, 0.99, &["hombre", "ayudante"], 2),
    (3, 1, 0.99, &["techo", "pueblo"], 3),
    (4, 1, 0.93, &["tenedor", "reloj"], 22),
    (5, 1, 1.0, &[], 0),
    (6, 1, 1.0, &[], 0),
    (7, 1, 0.88, &["ventana", "receta", "mesa", "frontera", "valla"], 41),
    (8, 1, 0.67, &["ley", "cárcel", "miel", "leche", "sal", "nieve", "tos", "cruz"], 111),
    (1, 2, 0.97, &["hijo", "bombero"], 9),
    (2, 2, 0.99, &["hombre", "rey"], 3),
    (3, 2, 0.99, &["techo"], 1),
    (4, 2, 0.96, &["tenedor", "reloj"], 12),
    (5, 2, 0.99, &["monja"], 1),
    (6, 2, 1.0, &[], 0),
    (7, 2, 0.89, &["mesa", "frontera", "valla"], 37),
    (8, 2, 0.79, &["ciudad", "cárcel", "beca", "leche"], 69),
];

fn criterion_1(tmp: &Path) -> Check {
    let started = Instant::now();
    let study = bundled::cruz23().unwrap();
    let mut builder = NoisePlanBuilder::new(&study);
    for (_, run, _, words, errors) in TABLE4 {
        builder.label_errors(words, Some(*run), *errors).unwrap();
    }
    let script = write_script(tmp, "table4.json", &ScriptedBehavior::with_noise(builder.build()));
    let out = tmp.join("c1");
    cli_ok(&[
        "run", "--study", CRUZ, "--strategy", "zero_shot", "--provider", "mock", "--script", s(&script),
        "--seed", "1", "--runs", "2", "--parallelism", "4", "--out", s(&out),
    ]);
    let base = out.join(&study.study_id).join("zero_shot");
    let bundle = tmp.join("c1_report");
    cli_ok(&[
        "analyze", "--study", CRUZ, s(&base.join("run1")), s(&base.join("run2")), "--out", s(&bundle),
    ]);
    let cells = run_cells(&read_json(&bundle.join("analysis.json")));
    let elapsed = started.elapsed();

    let mut within = 0;
    let mut counts_exact = true;
    for (cond, run, printed, words, errors) in TABLE4 {
        let (acc, incorrect, targets) = &cells[&(format!("condition_{cond}"), *run as u64)];
        let diff = (acc - printed).abs();
        let ok = diff <= CELL_TOLERANCE + 1e-12;
        within += ok as usize;
        let mut expected: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        expected.sort();
        counts_exact &= *incorrect as usize == *errors && *targets == expected;
        println!(
            "    condition_{cond}_{run}: errors {incorrect:>3} -> accuracy {acc:.4} (2dp {}), printed {printed:.2}, |diff| {diff:.4} {}",
            fmt2(*acc),
            if ok { "ok" } else { "OUTSIDE TOLERANCE" }
        );
    }
    let pass = within == TABLE4.len() && counts_exact && elapsed < TIME_BUDGET;
    verdict(
        pass,
        format!(
            "determiner error table: {within}/16 cells within ±{CELL_TOLERANCE}; error counts and wrong targets {}; {:.1} s",
            if counts_exact { "exact" } else { "MISMATCH" },
            elapsed.as_secs_f64()
        ),
    )
}

/// Published neologism results: strategy → per run → (scope, printed accuracy).
fn table5() -> Vec<(&'static str, Vec<(u32, Vec<(&'static str, f64)>)>)> {
    let row = |c1, c2, c3, c4, f| {
        vec![("condition_1", c1), ("condition_2", c2), ("condition_3", c3), ("condition_4", c4), ("fillers", f)]
    };
    vec![
        (
            "zero_shot",
            vec![(1, row(0.99, 0.99, 0.99, 0.97, 0.75)), (2, row(0.98, 0.99, 0.99, 0.97, 0.8))],
        ),
        ("zero_shot_role", vec![(1, row(1.0, 0.99, 0.99, 0.94, 0.86))]),
        ("chain_of_thought", vec![(1, row(0.99, 0.91, 0.97, 0.91, 0.99))]),
    ]
}

fn criterion_2(tmp: &Path) -> Check {
    let study = bundled::lombard21().unwrap();
    let mut all_ok = true;
    let mut n_cells = 0;
    let mut n_ok = 0;
    let mut filler_mean = f64::NAN;
    for (strategy, runs) in table5() {
        let mut builder = NoisePlanBuilder::new(&study);
        for (run, cells) in &runs {
            for (scope, printed) in cells {
                let n = scope_trials(&study, scope) as f64;
                let errors = (n * (1.0 - printed)).round() as usize;
                builder.condition_errors(scope, Some(*run), errors).unwrap();
            }
        }
        let script = write_script(tmp, &format!("table5_{strategy}.json"), &ScriptedBehavior::with_noise(builder.build()));
        let out = tmp.join("c2");
        cli_ok(&[
            "run", "--study", LOMBARD, "--strategy", strategy, "--script", s(&script), "--seed", "2", "--runs",
            &runs.len().to_string(), "--parallelism", "4", "--out", s(&out),
        ]);
        let base = out.join(&study.study_id).join(strategy);
        let dirs: Vec<PathBuf> = runs.iter().map(|(r, _)| base.join(format!("run{r}"))).collect();
        let bundle = tmp.join(format!("c2_{strategy}"));
        let mut args = vec!["analyze", "--study", LOMBARD];
        args.extend(dirs.iter().map(|d| s(d)));
        args.extend(["--out", s(&bundle)]);
        cli_ok(&args);
        let analysis = read_json(&bundle.join("analysis.json"));
        let cells = run_cells(&analysis);
        for (run, row) in &runs {
            let line: Vec<String> = row
                .iter()
                .map(|(scope, printed)| {
                    let acc = cells[&(scope.to_string(), *run as u64)].0;
                    let ok = (acc - printed).abs() <= CELL_TOLERANCE + 1e-12;
                    n_cells += 1;
                    n_ok += ok as usize;
                    all_ok &= ok;
                    format!("{scope} {acc:.4}/{printed}{}", if ok { "" } else { " OUTSIDE" })
                })
                .collect();
            println!("    {strategy} run {run}: {}", line.join(", "));
        }
        if strategy == "zero_shot" {
            let agg = analysis["aggregates"]
                .as_array()
                .unwrap()
                .iter()
                .find(|a| a["scope"] == "fillers")
                .unwrap();
            filler_mean = agg["mean_value"].as_f64().unwrap();
            println!(
                "    zero_shot fillers across runs: mean {filler_mean:.4} (2dp half-up {}), pooled {:.4}; reported elsewhere as 0.77",
                fmt2(filler_mean),
                agg["pooled_value"].as_f64().unwrap()
            );
        }
    }
    let mean_ok = (filler_mean - 0.775).abs() <= FILLER_MEAN_TOLERANCE;
    verdict(
        all_ok && mean_ok,
        format!(
            "neologism strategy table: {n_ok}/{n_cells} cells within ±{CELL_TOLERANCE}; zero-shot fillers mean {filler_mean:.4} vs 0.775 ±{FILLER_MEAN_TOLERANCE}"
        ),
    )
}

fn scope_trials(study: &Study, scope: &str) -> usize {
    let items = study
        .trial_items()
        .into_iter()
        .filter(|i| match scope {
            "fillers" => i.kind == ItemKind::Filler,
            c => i.condition_id.as_deref() == Some(c),
        })
        .count();
    items * study.n_informants as usize
}

fn criterion_3(tmp: &Path) -> Check {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut total_trials = 0;
    for (path, id, n_trials) in [(LOMBARD, "lombard21", 68 * 120), (CRUZ, "cruz23_task1", 34 * 155)] {
        let out = tmp.join("c3");
        cli_ok(&[
            "run", "--study", path, "--strategy", "zero_shot", "--seed", "3", "--run-index", "1", "--parallelism", "4",
            "--out", s(&out),
        ]);
        let dir = out.join(id).join("zero_shot").join("run1");
        let bundle = tmp.join(format!("c3_{id}"));
        cli_ok(&["analyze", "--study", path, s(&dir), "--out", s(&bundle)]);
        let analysis = read_json(&bundle.join("analysis.json"));
        let scores = analysis["runs"][0]["scores"].as_array().unwrap();
        let trials: u64 = scores
            .iter()
            .filter(|r| r["scope"] != OVERALL)
            .map(|r| r["n_trials"].as_u64().unwrap())
            .sum();
        total_trials += trials as usize;
        if trials as usize != n_trials {
            failures.push(format!("{id}: {trials} trials, expected {n_trials}"));
        }
        for row in scores {
            let scope = row["scope"].as_str().unwrap();
            if scope.starts_with("condition_") || scope == "fillers" {
                let acc = row["accuracy"].as_f64();
                if acc != Some(1.0) {
                    failures.push(format!("{id} {scope}: {acc:?}"));
                }
            }
        }
        let n_conditions = scores.iter().filter(|r| r["scope"].as_str().unwrap().starts_with("condition_")).count();
        println!("    {id}: {trials} trials, {n_conditions} conditions at accuracy 1.0");
    }
    let elapsed = started.elapsed();
    for f in &failures {
        println!("    {f}");
    }
    verdict(
        failures.is_empty() && elapsed < TIME_BUDGET,
        format!("perfect oracle end-to-end: {total_trials} trials, {} deviations, {:.1} s", failures.len(), elapsed.as_secs_f64()),
    )
}

fn criterion_4(tmp: &Path) -> Check {
    let study = bundled::lombard21().unwrap();
    let plan = NoisePlanBuilder::new(&study)
        .label_errors(&["velours"], None, 40)
        .unwrap()
        .condition_errors("condition_1", None, 12)
        .unwrap()
        .condition_errors("condition_2", None, 9)
        .unwrap()
        .condition_errors("condition_3", None, 6)
        .unwrap()
        .condition_errors("fillers", None, 30)
        .unwrap()
        .build();
    let script = write_script(tmp, "outlier.json", &ScriptedBehavior::with_noise(plan));
    let out = tmp.join("c4");
    cli_ok(&[
        "run", "--study", LOMBARD, "--strategy", "zero_shot", "--script", s(&script), "--seed", "4", "--run-index", "1",
        "--out", s(&out),
    ]);
    let dir = out.join(&study.study_id).join("zero_shot").join("run1");
    let bundle = tmp.join("c4_report");
    cli_ok(&["analyze", "--study", LOMBARD, s(&dir), "--out", s(&bundle)]);
    let analysis = read_json(&bundle.join("analysis.json"));
    let flagged: Vec<(String, f64)> = analysis["outliers"]["flagged_words"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["word"].as_str().unwrap().to_string(), f["error_share"].as_f64().unwrap()))
        .collect();
    println!("    flagged: {flagged:?} of {} critical errors", analysis["outliers"]["total_errors"]);

    let oracle = brute_force_recount(&dir, &study, "velours");
    let mut mismatches = 0;
    for row in analysis["outliers"]["rescored"][0]["scores"].as_array().unwrap() {
        let scope = row["scope"].as_str().unwrap();
        if let Some((correct, n)) = oracle.get(scope) {
            let got = (row["n_correct"].as_u64().unwrap() as u32, row["n_scored"].as_u64().unwrap() as u32);
            let same = got == (*correct, *n);
            mismatches += !same as usize;
            println!(
                "    rescored {scope}: {}/{} vs recount {correct}/{n} {}",
                got.0,
                got.1,
                if same { "ok" } else { "MISMATCH" }
            );
        }
    }
    let pass = flagged.len() == 1 && flagged[0].0 == "velours" && flagged[0].1 >= 0.5 && mismatches == 0;
    verdict(
        pass,
        format!("outlier rule: flagged {:?}; {} rescored scopes differ from the recount", flagged.iter().map(|f| &f.0).collect::<Vec<_>>(), mismatches),
    )
}

/// Recount straight from the raw logs, skipping every item whose target is `removed`.
fn brute_force_recount(dir: &Path, study: &Study, removed: &str) -> HashMap<String, (u32, u32)> {
    let items: HashMap<&str, _> = study.items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut out: HashMap<String, (u32, u32)> = HashMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !(name.starts_with("informant") && name.ends_with(".jsonl")) {
            continue;
        }
        for line in std::fs::read_to_string(&path).unwrap().lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            let item = items[v["item_id"].as_str().unwrap()];
            if item.target_word.as_deref() == Some(removed) && item.kind == ItemKind::Critical {
                continue;
            }
            let correct = v["raw_reply"].as_str() == Some(key_reply(item).as_str());
            let mut scopes = Vec::new();
            match item.kind {
                ItemKind::Critical => {
                    scopes.push(item.condition_id.clone().unwrap());
                    scopes.push(OVERALL.to_string());
                }
                ItemKind::Filler => scopes.push("fillers".into()),
                ItemKind::Distractor => {}
            }
            for scope in scopes {
                let e = out.entry(scope).or_default();
                e.0 += correct as u32;
                e.1 += 1;
            }
        }
    }
    out
}

fn criterion_5() -> Check {
    let params = GenerationParams::default();
    let mut total = 0;
    let mut violations = 0;
    for (study, strategies) in [
        (bundled::lombard21().unwrap(), vec!["zero_shot", "zero_shot_role", "chain_of_thought"]),
        (bundled::cruz23().unwrap(), vec!["zero_shot"]),
    ] {
        for name in strategies {
            let strategy = builtin_strategy(study.kind(), name).unwrap();
            let provider = RecordingProvider::new(script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap());
            Runner::new(&study, &strategy, &provider, &params, 5).run_cohort(1, 8).unwrap();
            let requests = provider.requests();
            let bad = requests
                .iter()
                .filter(|r| {
                    r.messages.count(Role::User) != 1
                        || r.messages.count(Role::System) > 1
                        || r.messages.count(Role::Assistant) != 0
                })
                .count();
            println!("    {} / {name}: {} requests, {bad} not isolated", study.study_id, requests.len());
            total += requests.len();
            violations += bad;
        }
    }
    verdict(violations == 0, format!("isolation: {} of {total} requests isolated", total - violations))
}

fn sorted_lines(path: &Path) -> Vec<String> {
    let mut lines: Vec<String> = std::fs::read_to_string(path).unwrap().lines().map(String::from).collect();
    lines.sort();
    lines
}

/// Raw transcript lines with the wall-clock fields removed.
fn raw_transcript(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !(name.starts_with("informant") && name.ends_with(".jsonl")) {
            continue;
        }
        for line in std::fs::read_to_string(&path).unwrap().lines() {
            let mut v: Value = serde_json::from_str(line).unwrap();
            let obj = v.as_object_mut().unwrap();
            obj.remove("timestamp_ms");
            obj.remove("latency_ms");
            out.push(v.to_string());
        }
    }
    out.sort();
    out
}

fn criterion_6(tmp: &Path) -> Check {
    let study = bundled::lombard21().unwrap();
    let rates: BTreeMap<String, f64> = ["condition_1", "condition_2", "condition_3", "condition_4", "fillers"]
        .iter()
        .map(|s| (s.to_string(), 0.1))
        .collect();
    let mut plan = ScriptedBehavior::with_noise(NoisePlanBuilder::new(&study).random_errors(&rates, None, 66).build());
    plan.replies.insert("f07".into(), "Je ne sais pas.".into());
    plan.replies.insert("n3_04".into(), "« {key} »".into());
    let script = write_script(tmp, "determinism.json", &plan);
    let mut scored = Vec::new();
    let mut raw = Vec::new();
    for (k, parallelism) in [(0, "1"), (1, "1"), (2, "8"), (3, "8")] {
        let out = tmp.join(format!("c6_{k}"));
        cli_ok(&[
            "run", "--study", LOMBARD, "--strategy", "chain_of_thought", "--script", s(&script), "--seed", "2024",
            "--run-index", "1", "--parallelism", parallelism, "--out", s(&out),
        ]);
        let dir = out.join(&study.study_id).join("chain_of_thought").join("run1");
        cli_ok(&["analyze", "--study", LOMBARD, s(&dir), "--out", s(&tmp.join(format!("c6_report_{k}")))]);
        scored.push(sorted_lines(&dir.join("scored.jsonl")));
        raw.push(raw_transcript(&dir));
    }
    let same_scored = scored.windows(2).all(|w| w[0] == w[1]);
    let same_raw = raw.windows(2).all(|w| w[0] == w[1]);
    println!(
        "    4 executions (parallelism 1, 1, 8, 8): {} parsed trials each; parsed equal: {same_scored}; raw equal: {same_raw}",
        scored[0].len()
    );
    verdict(same_scored && same_raw, "determinism: parsed transcripts identical across parallelism 1 and 8")
}

fn criterion_7() -> Check {
    let options = vec!["el".to_string(), "la".to_string()];
    let mut notes = Vec::new();

    let yes = parse_detection("Oui, impadem.");
    let ex1 = yes.verdict == Some(Verdict::Yes) && yes.identified_word.as_deref() == Some("impadem");
    let no = parse_detection("non");
    let ex2 = no.verdict == Some(Verdict::No) && no.identified_word.is_none();
    let echo = parse_forced_choice("Ya estamos en el plane", &options);
    let ex3 = echo.selected_option.as_deref() == Some("el");
    notes.push(format!("examples {}/3", ex1 as u8 + ex2 as u8 + ex3 as u8));

    let text = proptest::prelude::any::<String>();
    let mut runner = TestRunner::new(Config { cases: 2_000, failure_persistence: None, ..Config::default() });
    let idempotent = runner
        .run(&text, |s| {
            let once = normalize(&s);
            proptest::prop_assert_eq!(normalize(&once), once);
            Ok(())
        })
        .is_ok();
    notes.push(format!("idempotence {}", if idempotent { "ok" } else { "FAILED" }));

    let mut runner = TestRunner::new(Config { cases: 2_000, failure_persistence: None, ..Config::default() });
    let membership = runner
        .run(&text, |s| {
            let p = parse_forced_choice(&s, &options);
            if p.outcome == Outcome::OptionSelected {
                proptest::prop_assert!(options.contains(p.selected_option.as_ref().unwrap()));
            }
            Ok(())
        })
        .is_ok();
    notes.push(format!("membership {}", if membership { "ok" } else { "FAILED" }));

    let fuzz_input = proptest::collection::vec(proptest::prelude::any::<char>(), 0..FUZZ_MAX_BYTES / 4);
    let mut runner = TestRunner::new(Config { cases: FUZZ_CASES, failure_persistence: None, ..Config::default() });
    let fuzz = runner
        .run(&fuzz_input, |chars| {
            let s: String = chars.into_iter().collect();
            proptest::prop_assert!(s.len() <= FUZZ_MAX_BYTES);
            let r = std::panic::catch_unwind(|| {
                let _ = parse_forced_choice(&s, &["el".to_string(), "la".to_string()]);
                let _ = parse_detection(&s);
            });
            proptest::prop_assert!(r.is_ok());
            Ok(())
        })
        .is_ok();
    notes.push(format!("fuzz {FUZZ_CASES} strings {}", if fuzz { "ok" } else { "FAILED" }));
    println!("    {}", notes.join("; "));
    verdict(ex1 && ex2 && ex3 && idempotent && membership && fuzz, "parser suite")
}

fn criterion_8() -> Check {
    let cruz = bundled::cruz23().unwrap();
    let lombard = bundled::lombard21().unwrap();
    // In-text model means, taken as fixed aggregates.
    let cruz_aggs = vec![
        AggregateScore::from_values("condition_3+condition_4", &[0.96], &[680]),
        AggregateScore::from_values("condition_7+condition_8", &[0.80], &[680]),
        AggregateScore::from_values("condition_7", &[0.88], &[340]),
        AggregateScore::from_values("condition_8", &[0.73], &[340]),
    ];
    let zero_shot = vec![
        AggregateScore::from_values(OVERALL, &[0.985], &[5440]),
        AggregateScore::from_values("condition_4", &[0.97], &[1360]),
    ];
    let cot = vec![
        AggregateScore::from_values(OVERALL, &[0.945], &[5440]),
        AggregateScore::from_values("condition_4", &[0.91], &[1360]),
    ];
    let checks: Vec<(&str, Vec<informants_core::analysis::BaselineComparison>, Vec<(&str, f64)>)> = vec![
        (
            "determiners",
            compare_to_baseline(&cruz_aggs, &cruz).unwrap(),
            vec![("condition_3+condition_4", 0.07), ("condition_7+condition_8", 0.18), ("condition_7", 0.33), ("condition_8", 0.03)],
        ),
        (
            "neologisms zero-shot",
            compare_to_baseline(&zero_shot, &lombard).unwrap(),
            vec![(OVERALL, 0.075)],
        ),
        (
            "neologisms chain-of-thought",
            compare_to_baseline(&cot, &lombard).unwrap(),
            vec![("condition_4", -0.01)],
        ),
    ];
    let mut ok = 0;
    let mut n = 0;
    for (label, cmp, expected) in &checks {
        for (scope, want) in expected {
            let c = cmp.iter().find(|c| c.scope == *scope).unwrap();
            let pass = (c.delta - want).abs() <= DELTA_TOLERANCE;
            n += 1;
            ok += pass as usize;
            println!(
                "    {label} {scope}: model {:.3} - human {:.2} = {:+.3} (expected {want:+.3}) {}",
                c.model_mean,
                c.human_mean,
                c.delta,
                if pass { "ok" } else { "MISMATCH" }
            );
        }
    }
    println!("    note: the chain-of-thought condition 4 gap is reported elsewhere as 0.03 points although its two means differ by 0.01");
    verdict(ok == n, format!("baseline comparison: {ok}/{n} deltas within ±{DELTA_TOLERANCE}"))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<(u32, Box<dyn Fn() -> Check>)> = vec![
        (1, Box::new(|| criterion_1(tmp.path()))),
        (2, Box::new(|| criterion_2(tmp.path()))),
        (3, Box::new(|| criterion_3(tmp.path()))),
        (4, Box::new(|| criterion_4(tmp.path()))),
        (5, Box::new(criterion_5)),
        (6, Box::new(|| criterion_6(tmp.path()))),
        (7, Box::new(criterion_7)),
        (8, Box::new(criterion_8)),
    ];
    let mut failed = Vec::new();
    for (n, check) in &criteria {
        let result = check();
        println!("criterion {n} [PRIMARY]: {} - {}", if result.pass { "PASS" } else { "FAIL" }, result.summary);
        if !result.pass {
            failed.push(*n);
        }
    }
    println!(
        "acceptance: {}/{} criteria passed{}",
        criteria.len() - failed.len(),
        criteria.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
