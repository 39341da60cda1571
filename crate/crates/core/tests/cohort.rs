use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use informants_core::analysis::{condition_scores, latency_summary, score_run, OVERALL};
use informants_core::bundled;
use informants_core::parse::ScoringPolicy;
use informants_core::prompt::{builtin_strategy, MessageSequence, Role};
use informants_core::provider::mock::{script_from_answer_key, RecordingProvider, ScriptedBehavior};
use informants_core::provider::{GenerationParams, Provider, ProviderError, ProviderReply, TrialContext};
use informants_core::runner::{resume_run, RawReply, RunError, RunRecord, Runner};
use informants_core::store::{informant_file, load_run, run_dir, write_manifest, JsonlSink};
use informants_core::study::{items_for_informant, Study, StudyKind};

fn fast_params() -> GenerationParams {
    GenerationParams {
        retry_backoff: vec![Duration::ZERO],
        ..GenerationParams::default()
    }
}

/// (informant, item, reply) triples, order-free.
fn transcript(run: &RunRecord) -> Vec<(u32, String, String, String)> {
    let mut v: Vec<_> = run
        .trials()
        .map(|t| {
            (
                t.informant_index,
                t.item_id.clone(),
                t.rendered_prompt_hash.clone(),
                format!("{:?}", t.raw_reply),
            )
        })
        .collect();
    v.sort();
    v
}

fn small(study: &Study, n: u32) -> Study {
    Study {
        n_informants: n,
        ..study.clone()
    }
}

#[test]
fn oracle_lombard_cohort_is_perfect() {
    let study = bundled::lombard21().unwrap();
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 7).run_cohort(1, 4).unwrap();
    assert!(!run.is_partial());
    assert_eq!(run.trial_count(), 68 * 120);
    let scored = score_run(&run, &study, ScoringPolicy::default()).unwrap();
    for row in condition_scores(&scored, &study).unwrap() {
        assert_eq!(row.accuracy, Some(1.0), "{}", row.scope);
    }
}

#[test]
fn requests_are_isolated_and_cover_every_trial() {
    let study = small(&bundled::lombard21().unwrap(), 5);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot_role").unwrap();
    let provider = RecordingProvider::new(script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap());
    let params = fast_params();
    Runner::new(&study, &strategy, &provider, &params, 1).run_cohort(1, 3).unwrap();
    let requests = provider.requests();
    assert_eq!(requests.len(), 5 * 120);
    for r in &requests {
        assert_eq!(r.messages.count(Role::User), 1);
        assert_eq!(r.messages.count(Role::System), 1);
        assert_eq!(r.messages.count(Role::Assistant), 0);
    }
    let distinct: HashSet<_> = requests
        .iter()
        .map(|r| (r.trial.informant_index, r.trial.item_id.clone()))
        .collect();
    assert_eq!(distinct.len(), requests.len());
}

#[test]
fn parallelism_does_not_change_results() {
    let study = small(&bundled::cruz23().unwrap(), 12);
    let strategy = builtin_strategy(StudyKind::CruzLike, "zero_shot").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let runner = Runner::new(&study, &strategy, &provider, &params, 99);
    let a = runner.run_cohort(1, 1).unwrap();
    let b = runner.run_cohort(1, 8).unwrap();
    assert_eq!(transcript(&a), transcript(&b));
    for (x, y) in a.informants.iter().zip(&b.informants) {
        let ox: Vec<_> = x.trials.iter().map(|t| &t.item_id).collect();
        let oy: Vec<_> = y.trials.iter().map(|t| &t.item_id).collect();
        assert_eq!(ox, oy, "presentation order of informant {}", x.informant_index);
    }
}

#[test]
fn trials_follow_the_seeded_order() {
    let study = small(&bundled::lombard21().unwrap(), 3);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 5).run_cohort(2, 1).unwrap();
    let seed = informants_core::runner::run_seed(5, 2);
    for inf in &run.informants {
        let expected: Vec<&str> = items_for_informant(&study, inf.informant_index, seed)
            .unwrap()
            .iter()
            .map(|i| i.item_id.as_str())
            .collect();
        let got: Vec<&str> = inf.trials.iter().map(|t| t.item_id.as_str()).collect();
        assert_eq!(got, expected);
    }
    assert_ne!(
        run.informants[0].trials.iter().map(|t| &t.item_id).collect::<Vec<_>>(),
        run.informants[1].trials.iter().map(|t| &t.item_id).collect::<Vec<_>>()
    );
}

#[test]
fn auth_failure_aborts_the_run() {
    let study = small(&bundled::lombard21().unwrap(), 4);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let provider = AuthAfter {
        inner: script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap(),
        budget: 0,
        calls: AtomicUsize::new(0),
    };
    let params = fast_params();
    let err = Runner::new(&study, &strategy, &provider, &params, 1).run_cohort(1, 2).unwrap_err();
    assert!(matches!(err, RunError::Provider(ProviderError::Auth(_))));
    assert!(provider.calls.load(Ordering::SeqCst) <= 2);
}

#[test]
fn transient_failures_become_unanswered_trials() {
    let study = small(&bundled::lombard21().unwrap(), 2);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let plan = ScriptedBehavior {
        failing_items: vec!["n2_03".into()],
        ..ScriptedBehavior::oracle()
    };
    let provider = script_from_answer_key(&study, &plan).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 1).run_cohort(1, 1).unwrap();
    let failed: Vec<_> = run.trials().filter(|t| t.raw_reply.text().is_none()).collect();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|t| t.item_id == "n2_03" && t.attempts == params.retry_limit + 1));
    assert_eq!(run.informants[0].unanswered(), 1);
}

struct AuthAfter<P> {
    inner: P,
    budget: usize,
    calls: AtomicUsize,
}

impl<P: Provider> Provider for AuthAfter<P> {
    fn kind(&self) -> &str {
        "mock"
    }

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(ProviderError::Auth("key revoked".into()));
        }
        self.inner.send(messages, params, trial)
    }
}

#[test]
fn interrupted_run_resumes_to_the_same_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let study = small(&bundled::lombard21().unwrap(), 6);
    let strategy = builtin_strategy(StudyKind::LombardLike, "chain_of_thought").unwrap();
    let oracle = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let reference = Runner::new(&study, &strategy, &oracle, &params, 42).run_cohort(1, 1).unwrap();

    let out = run_dir(dir.path(), &study.study_id, strategy.name(), 1);
    let sink = JsonlSink::create(&out).unwrap();
    let flaky = AuthAfter {
        inner: script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap(),
        budget: 250,
        calls: AtomicUsize::new(0),
    };
    let runner = Runner::new(&study, &strategy, &flaky, &params, 42).with_sink(&sink);
    write_manifest(&out, &runner.start_manifest(1)).unwrap();
    assert!(runner.run_cohort(1, 1).is_err());

    let partial = load_run(&out).unwrap();
    assert!(partial.is_partial());
    assert_eq!(partial.trial_count(), 250);

    let resumed_provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let complete = resume_run(partial, &study, &strategy, &resumed_provider, &params, 3).unwrap();
    assert!(!complete.is_partial());
    assert_eq!(resumed_provider.calls(), 6 * 120 - 250);
    assert_eq!(transcript(&complete), transcript(&reference));
}

#[test]
fn resume_rejects_a_foreign_manifest() {
    let study = small(&bundled::lombard21().unwrap(), 2);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let other = builtin_strategy(StudyKind::LombardLike, "zero_shot_role").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 3).run_cohort(1, 1).unwrap();
    let err = resume_run(run.clone(), &study, &other, &provider, &params, 1).unwrap_err();
    assert!(matches!(err, RunError::ManifestMismatch(_)));
    let err = Runner::new(&study, &strategy, &provider, &params, 4).resume(run, 1).unwrap_err();
    assert!(matches!(err, RunError::ManifestMismatch(_)));
}

#[test]
fn completed_run_resumes_without_calls() {
    let study = small(&bundled::cruz23().unwrap(), 2);
    let strategy = builtin_strategy(StudyKind::CruzLike, "zero_shot").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 3).run_cohort(1, 1).unwrap();
    let fresh = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let again = resume_run(run.clone(), &study, &strategy, &fresh, &params, 2).unwrap();
    assert_eq!(fresh.calls(), 0);
    assert_eq!(transcript(&again), transcript(&run));
}

#[test]
fn torn_last_line_is_dropped_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let study = small(&bundled::lombard21().unwrap(), 1);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let sink = JsonlSink::create(dir.path()).unwrap();
    let runner = Runner::new(&study, &strategy, &provider, &params, 3).with_sink(&sink);
    write_manifest(dir.path(), &runner.start_manifest(1)).unwrap();
    runner.run_cohort(1, 1).unwrap();

    let path = informant_file(dir.path(), 0);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"item_id\":\"n1_0");
    std::fs::write(&path, &text).unwrap();

    let run = load_run(dir.path()).unwrap();
    assert_eq!(run.trial_count(), 120);
    let reloaded = std::fs::read_to_string(&path).unwrap();
    assert!(reloaded.ends_with('\n'));
    assert_eq!(reloaded.lines().count(), 120);
}

#[test]
fn jsonl_round_trip_preserves_records() {
    let dir = tempfile::tempdir().unwrap();
    let study = small(&bundled::cruz23().unwrap(), 3);
    let strategy = builtin_strategy(StudyKind::CruzLike, "zero_shot").unwrap();
    let provider = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let params = fast_params();
    let sink = JsonlSink::create(dir.path()).unwrap();
    let runner = Runner::new(&study, &strategy, &provider, &params, 8).with_sink(&sink);
    let run = runner.run_cohort(1, 2).unwrap();
    write_manifest(dir.path(), &run.manifest).unwrap();
    let loaded = load_run(dir.path()).unwrap();
    assert_eq!(loaded.manifest, run.manifest);
    assert_eq!(transcript(&loaded), transcript(&run));
    for (a, b) in loaded.informants.iter().zip(&run.informants) {
        assert_eq!(a.seed, b.seed);
        let ids_a: Vec<_> = a.trials.iter().map(|t| &t.item_id).collect();
        let ids_b: Vec<_> = b.trials.iter().map(|t| &t.item_id).collect();
        assert_eq!(ids_a, ids_b);
    }
}

#[test]
fn latency_totals_sum_trial_latencies() {
    let study = small(&bundled::lombard21().unwrap(), 3);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let plan = ScriptedBehavior {
        latency_ms: 600.0,
        ..ScriptedBehavior::oracle()
    };
    let provider = script_from_answer_key(&study, &plan).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 1).run_cohort(1, 1).unwrap();
    let summary = latency_summary(&run);
    assert!((summary.mean_total_secs.unwrap() - 72.0).abs() < 1e-6);
    assert!((summary.mean_trial_secs.unwrap() - 0.6).abs() < 1e-9);

    let zero = script_from_answer_key(&study, &ScriptedBehavior::oracle()).unwrap();
    let run = Runner::new(&study, &strategy, &zero, &params, 1).run_cohort(1, 1).unwrap();
    let summary = latency_summary(&run);
    assert_eq!(summary.max_total_secs, Some(0.0));

    let empty = RunRecord {
        informants: vec![],
        ..run
    };
    let summary = latency_summary(&empty);
    assert!(summary.informants.is_empty() && summary.mean_total_secs.is_none());
}

#[test]
fn unanswered_counts_follow_the_policy() {
    let study = small(&bundled::lombard21().unwrap(), 2);
    let strategy = builtin_strategy(StudyKind::LombardLike, "zero_shot").unwrap();
    let plan = ScriptedBehavior {
        failing_items: vec!["n1_01".into()],
        ..ScriptedBehavior::oracle()
    };
    let provider = script_from_answer_key(&study, &plan).unwrap();
    let params = fast_params();
    let run = Runner::new(&study, &strategy, &provider, &params, 1).run_cohort(1, 1).unwrap();
    assert!(run.trials().any(|t| matches!(t.raw_reply, RawReply::Unanswered { .. })));

    let rows = |policy: &str| -> BTreeMap<String, (u32, u32, u32)> {
        let policy = ScoringPolicy {
            unparseable: policy.parse().unwrap(),
        };
        let scored = score_run(&run, &study, policy).unwrap();
        condition_scores(&scored, &study)
            .unwrap()
            .into_iter()
            .map(|s| (s.scope, (s.n_scored, s.n_correct, s.n_unanswered)))
            .collect()
    };
    assert_eq!(rows("incorrect")["condition_1"], (40, 38, 2));
    assert_eq!(rows("exclude")["condition_1"], (38, 38, 2));
    assert_eq!(rows("exclude")[OVERALL], (158, 158, 2));
}
