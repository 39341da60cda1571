//! Cohort execution: every informant answers every item in its own seeded
//! order, one fresh message sequence per trial.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{render, PromptError, PromptStrategy};
use crate::provider::{
    send_with_retry, GenerationParams, ParamsError, Provider, ProviderError, TokenUsage, TrialContext,
};
use crate::study::{derive_seed, items_for_informant, Study, StudyError};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("fatal provider error: {0}")]
    Provider(ProviderError),
    #[error("cannot record trial: {0}")]
    Sink(#[from] std::io::Error),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("parallelism must be at least 1")]
    Parallelism,
}

/// Milliseconds since the Unix epoch; zero where no clock is available.
pub fn now_ms() -> u64 {
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
    #[cfg(target_arch = "wasm32")]
    {
        0
    }
}

mod latency_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1000.0)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64((ms / 1000.0).max(0.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawReply {
    Answered(String),
    Unanswered { unanswered: String },
}

impl RawReply {
    pub fn text(&self) -> Option<&str> {
        match self {
            RawReply::Answered(t) => Some(t),
            RawReply::Unanswered { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub item_id: String,
    pub informant_index: u32,
    pub run_index: u32,
    pub rendered_prompt_hash: String,
    pub raw_reply: RawReply,
    #[serde(rename = "latency_ms", with = "latency_ms")]
    pub latency: Duration,
    pub timestamp_ms: u64,
    #[serde(default = "one")]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformantRecord {
    pub informant_index: u32,
    pub strategy_id: String,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
    /// Sum of per-trial round-trip latencies.
    #[serde(rename = "total_duration_ms", with = "latency_ms")]
    pub total_duration: Duration,
}

impl InformantRecord {
    pub fn unanswered(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| matches!(t.raw_reply, RawReply::Unanswered { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub study_id: String,
    pub strategy_id: String,
    pub run_index: u32,
    pub master_seed: u64,
    pub provider_kind: String,
    pub params: GenerationParams,
    pub n_informants: u32,
    pub started_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at_ms: Option<u64>,
    pub code_version: String,
    #[serde(default)]
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub manifest: Manifest,
    pub informants: Vec<InformantRecord>,
}

impl RunRecord {
    pub fn study_id(&self) -> &str {
        &self.manifest.study_id
    }

    pub fn run_index(&self) -> u32 {
        self.manifest.run_index
    }

    pub fn strategy_id(&self) -> &str {
        &self.manifest.strategy_id
    }

    pub fn is_partial(&self) -> bool {
        self.manifest.partial
    }

    pub fn trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.informants.iter().flat_map(|i| i.trials.iter())
    }

    pub fn trial_count(&self) -> usize {
        self.informants.iter().map(|i| i.trials.len()).sum()
    }
}

/// Receives each trial as soon as it completes (e.g. an append-only log).
pub trait TrialSink: Send + Sync {
    fn record(&self, trial: &TrialRecord) -> std::io::Result<()>;
}

/// Seed that fixes the presentation orders of one cohort run.
pub fn run_seed(master_seed: u64, run_index: u32) -> u64 {
    derive_seed(master_seed, &[run_index as u64])
}

pub fn informant_seed(master_seed: u64, run_index: u32, informant_index: u32) -> u64 {
    derive_seed(run_seed(master_seed, run_index), &[informant_index as u64])
}

pub struct Runner<'a> {
    pub study: &'a Study,
    pub strategy: &'a PromptStrategy,
    pub provider: &'a dyn Provider,
    pub params: &'a GenerationParams,
    pub master_seed: u64,
    pub sink: Option<&'a dyn TrialSink>,
}

impl<'a> Runner<'a> {
    pub fn new(
        study: &'a Study,
        strategy: &'a PromptStrategy,
        provider: &'a dyn Provider,
        params: &'a GenerationParams,
        master_seed: u64,
    ) -> Self {
        Runner {
            study,
            strategy,
            provider,
            params,
            master_seed,
            sink: None,
        }
    }

    pub fn with_sink(mut self, sink: &'a dyn TrialSink) -> Self {
        self.sink = Some(sink);
        self
    }

    fn preflight(&self) -> Result<(), RunError> {
        self.strategy.validate()?;
        self.params.validate()?;
        Ok(())
    }

    fn run_items(
        &self,
        informant_index: u32,
        run_index: u32,
        done: &HashSet<&str>,
    ) -> Result<Vec<TrialRecord>, RunError> {
        let order = items_for_informant(self.study, informant_index, run_seed(self.master_seed, run_index))?;
        let mut trials = Vec::with_capacity(order.len());
        for item in order.into_iter().filter(|i| !done.contains(i.item_id.as_str())) {
            let messages = render(self.strategy, item)?;
            let trial = TrialContext {
                item_id: item.item_id.clone(),
                informant_index,
                run_index,
            };
            let attempted = send_with_retry(self.provider, &messages, self.params, &trial);
            let (raw_reply, token_usage) = match attempted.result {
                Ok(reply) => (RawReply::Answered(reply.content), reply.token_usage),
                Err(err) if err.is_fatal() => return Err(RunError::Provider(err)),
                Err(err) => (
                    RawReply::Unanswered {
                        unanswered: err.to_string(),
                    },
                    None,
                ),
            };
            let record = TrialRecord {
                item_id: item.item_id.clone(),
                informant_index,
                run_index,
                rendered_prompt_hash: messages.digest(),
                raw_reply,
                latency: attempted.latency,
                timestamp_ms: now_ms(),
                attempts: attempted.attempts,
                token_usage,
            };
            if let Some(sink) = self.sink {
                sink.record(&record)?;
            }
            trials.push(record);
        }
        Ok(trials)
    }

    fn informant_record(&self, informant_index: u32, run_index: u32, trials: Vec<TrialRecord>) -> InformantRecord {
        InformantRecord {
            informant_index,
            strategy_id: self.strategy.name().to_string(),
            seed: informant_seed(self.master_seed, run_index, informant_index),
            total_duration: trials.iter().map(|t| t.latency).sum(),
            trials,
        }
    }

    /// One informant answering every item, in its seeded order.
    pub fn run_informant(&self, informant_index: u32, run_index: u32) -> Result<InformantRecord, RunError> {
        self.preflight()?;
        let trials = self.run_items(informant_index, run_index, &HashSet::new())?;
        Ok(self.informant_record(informant_index, run_index, trials))
    }

    fn manifest(&self, run_index: u32) -> Manifest {
        Manifest {
            study_id: self.study.study_id.clone(),
            strategy_id: self.strategy.name().to_string(),
            run_index,
            master_seed: self.master_seed,
            provider_kind: self.provider.kind().to_string(),
            params: self.params.clone(),
            n_informants: self.study.n_informants,
            started_at_ms: now_ms(),
            finished_at_ms: None,
            code_version: CODE_VERSION.to_string(),
            partial: true,
        }
    }

    /// Fresh manifest for a run about to start (flagged partial until done).
    pub fn start_manifest(&self, run_index: u32) -> Manifest {
        self.manifest(run_index)
    }

    /// Run `job` for every informant index on up to `parallelism` threads.
    fn for_each_informant<F>(&self, parallelism: usize, job: F) -> Result<Vec<InformantRecord>, RunError>
    where
        F: Fn(u32) -> Result<InformantRecord, RunError> + Sync,
    {
        if parallelism == 0 {
            return Err(RunError::Parallelism);
        }
        let n = self.study.n_informants;
        if parallelism == 1 {
            return (0..n).map(&job).collect();
        }
        let next = AtomicU32::new(0);
        let abort = AtomicBool::new(false);
        let results: Mutex<Vec<InformantRecord>> = Mutex::new(Vec::with_capacity(n as usize));
        let failure: Mutex<Option<RunError>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..parallelism.min(n as usize) {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n {
                        break;
                    }
                    match job(i) {
                        Ok(rec) => results.lock().expect("results poisoned").push(rec),
                        Err(err) => {
                            abort.store(true, Ordering::SeqCst);
                            failure.lock().expect("failure poisoned").get_or_insert(err);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(err) = failure.into_inner().expect("failure poisoned") {
            return Err(err);
        }
        let mut records = results.into_inner().expect("results poisoned");
        records.sort_by_key(|r| r.informant_index);
        Ok(records)
    }

    fn finish(&self, mut manifest: Manifest, informants: Vec<InformantRecord>) -> RunRecord {
        let expected = self.study.trial_items().len();
        manifest.partial = informants.len() != self.study.n_informants as usize
            || informants.iter().any(|i| i.trials.len() != expected);
        manifest.finished_at_ms = Some(now_ms());
        RunRecord {
            manifest,
            informants,
        }
    }

    /// Full cohort: `study.n_informants` independent informants.
    pub fn run_cohort(&self, run_index: u32, parallelism: usize) -> Result<RunRecord, RunError> {
        self.preflight()?;
        let manifest = self.manifest(run_index);
        let informants = self.for_each_informant(parallelism, |i| {
            let trials = self.run_items(i, run_index, &HashSet::new())?;
            Ok(self.informant_record(i, run_index, trials))
        })?;
        Ok(self.finish(manifest, informants))
    }

    /// Complete the missing (informant, item) trials of a partial run.
    /// Existing trials are kept as they are.
    pub fn resume(&self, partial: RunRecord, parallelism: usize) -> Result<RunRecord, RunError> {
        self.preflight()?;
        let m = &partial.manifest;
        if m.study_id != self.study.study_id {
            return Err(RunError::ManifestMismatch(format!(
                "run belongs to study `{}`, not `{}`",
                m.study_id, self.study.study_id
            )));
        }
        if m.strategy_id != self.strategy.name() {
            return Err(RunError::ManifestMismatch(format!(
                "run used strategy `{}`, not `{}`",
                m.strategy_id,
                self.strategy.name()
            )));
        }
        if m.master_seed != self.master_seed {
            return Err(RunError::ManifestMismatch(format!(
                "run used master seed {}, not {}",
                m.master_seed, self.master_seed
            )));
        }
        let run_index = m.run_index;
        let existing: HashMap<u32, &InformantRecord> =
            partial.informants.iter().map(|r| (r.informant_index, r)).collect();
        let informants = self.for_each_informant(parallelism, |i| {
            let previous: Vec<TrialRecord> = existing.get(&i).map(|r| r.trials.clone()).unwrap_or_default();
            let done: HashSet<&str> = previous.iter().map(|t| t.item_id.as_str()).collect();
            let fresh = self.run_items(i, run_index, &done)?;
            let mut trials = previous.clone();
            trials.extend(fresh);
            Ok(self.informant_record(i, run_index, trials))
        })?;
        Ok(self.finish(partial.manifest.clone(), informants))
    }
}

/// Free-function form of [`Runner::resume`], seeded from the partial run's manifest.
pub fn resume_run(
    partial: RunRecord,
    study: &Study,
    strategy: &PromptStrategy,
    provider: &dyn Provider,
    params: &GenerationParams,
    parallelism: usize,
) -> Result<RunRecord, RunError> {
    let seed = partial.manifest.master_seed;
    Runner::new(study, strategy, provider, params, seed).resume(partial, parallelism)
}
