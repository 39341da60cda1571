//! Deterministic scripted provider.
//!
//! Replies are a pure function of (item, informant, run): the answer key
//! rendered as a short natural reply, unless a noise-plan entry, a per-item
//! override or a scripted failure says otherwise.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GenerationParams, Provider, ProviderError, ProviderReply, TrialContext};
use crate::prompt::MessageSequence;
use crate::study::{derive_seed, KeyKind, StimulusItem, Study};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultBehavior {
    #[default]
    AnswerKeyVerbatim,
    FixedString,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub item_id: String,
    pub informant_index: u32,
    /// Restrict the entry to one run; `None` applies to every run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u32>,
    pub wrong_reply: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBehavior {
    /// Per-item reply templates; `{key}` expands to the answer-key reply.
    #[serde(default)]
    pub replies: BTreeMap<String, String>,
    #[serde(default)]
    pub default_behavior: DefaultBehavior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_reply: Option<String>,
    #[serde(default)]
    pub noise_plan: Vec<NoiseEntry>,
    /// Items whose every request fails with a retryable transport error.
    #[serde(default)]
    pub failing_items: Vec<String>,
    /// Reported per-call latency; no actual sleeping happens.
    #[serde(default)]
    pub latency_ms: f64,
}

impl ScriptedBehavior {
    pub fn oracle() -> Self {
        ScriptedBehavior::default()
    }

    pub fn with_noise(noise_plan: Vec<NoiseEntry>) -> Self {
        ScriptedBehavior {
            noise_plan,
            ..ScriptedBehavior::default()
        }
    }
}

/// The minimal natural reply a perfect informant would give.
pub fn key_reply(item: &StimulusItem) -> String {
    match item.key.key_kind {
        KeyKind::CongruentChoice => item.key.expected_choice.clone().unwrap_or_default(),
        KeyKind::NeologismPresent => {
            format!("Oui, {}.", item.key.expected_word.as_deref().unwrap_or_default())
        }
        KeyKind::NeologismAbsent => "non".into(),
        KeyKind::None => item
            .options
            .as_ref()
            .and_then(|o| o.first().cloned())
            .unwrap_or_else(|| "non".into()),
    }
}

/// A reply that the scorer will count as an error for this item.
pub fn wrong_reply(item: &StimulusItem) -> String {
    match item.key.key_kind {
        KeyKind::CongruentChoice => {
            let expected = item.key.expected_choice.as_deref().unwrap_or_default();
            item.options
                .iter()
                .flatten()
                .find(|o| o.as_str() != expected)
                .cloned()
                .unwrap_or_default()
        }
        KeyKind::NeologismPresent => "non".into(),
        KeyKind::NeologismAbsent => {
            let word = item
                .text
                .split(|c: char| !c.is_alphabetic())
                .max_by_key(|w| w.chars().count())
                .unwrap_or("mot");
            format!("Oui, {word}.")
        }
        KeyKind::None => key_reply(item),
    }
}

pub struct ScriptedProvider {
    key_replies: HashMap<String, String>,
    overrides: HashMap<String, String>,
    noise: HashMap<(String, u32, Option<u32>), String>,
    failing: HashSet<String>,
    behavior: DefaultBehavior,
    fixed_reply: String,
    latency: Duration,
    calls: AtomicUsize,
}

/// Build a scripted provider for a study, checking the plan against it.
pub fn script_from_answer_key(
    study: &Study,
    plan: &ScriptedBehavior,
) -> Result<ScriptedProvider, ProviderError> {
    let items = study.item_index();
    let known = |id: &str| items.contains_key(id);
    for entry in &plan.noise_plan {
        if !known(&entry.item_id) {
            return Err(ProviderError::Script(format!(
                "noise plan references unknown item `{}`",
                entry.item_id
            )));
        }
        if entry.informant_index >= study.n_informants {
            return Err(ProviderError::Script(format!(
                "noise plan references informant {} but the study has {}",
                entry.informant_index, study.n_informants
            )));
        }
    }
    for id in plan.replies.keys().chain(&plan.failing_items) {
        if !known(id) {
            return Err(ProviderError::Script(format!("script references unknown item `{id}`")));
        }
    }
    if plan.default_behavior == DefaultBehavior::FixedString && plan.fixed_reply.is_none() {
        return Err(ProviderError::Script("fixed_string behavior needs fixed_reply".into()));
    }
    if !(plan.latency_ms.is_finite() && plan.latency_ms >= 0.0) {
        return Err(ProviderError::Script("latency_ms must be a non-negative number".into()));
    }
    Ok(ScriptedProvider {
        key_replies: study
            .items
            .iter()
            .map(|i| (i.item_id.clone(), key_reply(i)))
            .collect(),
        overrides: plan.replies.clone().into_iter().collect(),
        noise: plan
            .noise_plan
            .iter()
            .map(|e| {
                (
                    (e.item_id.clone(), e.informant_index, e.run_index),
                    e.wrong_reply.clone(),
                )
            })
            .collect(),
        failing: plan.failing_items.iter().cloned().collect(),
        behavior: plan.default_behavior,
        fixed_reply: plan.fixed_reply.clone().unwrap_or_default(),
        latency: Duration::from_secs_f64(plan.latency_ms / 1000.0),
        calls: AtomicUsize::new(0),
    })
}

impl ScriptedProvider {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// The reply for a trial, independent of call order.
    pub fn reply_for(&self, trial: &TrialContext) -> Result<String, ProviderError> {
        let noisy = self
            .noise
            .get(&(trial.item_id.clone(), trial.informant_index, Some(trial.run_index)))
            .or_else(|| {
                self.noise
                    .get(&(trial.item_id.clone(), trial.informant_index, None))
            });
        if let Some(reply) = noisy {
            return Ok(reply.clone());
        }
        if self.failing.contains(&trial.item_id) {
            return Err(ProviderError::Transport(format!(
                "scripted failure for `{}`",
                trial.item_id
            )));
        }
        let key = self.key_replies.get(&trial.item_id);
        if let Some(template) = self.overrides.get(&trial.item_id) {
            return Ok(template.replace("{key}", key.map_or("", String::as_str)));
        }
        match self.behavior {
            DefaultBehavior::AnswerKeyVerbatim => key.cloned().ok_or_else(|| {
                ProviderError::Malformed(format!("no answer key for `{}`", trial.item_id))
            }),
            DefaultBehavior::FixedString => Ok(self.fixed_reply.clone()),
            DefaultBehavior::Error => Err(ProviderError::Transport("scripted error".into())),
        }
    }
}

impl Provider for ScriptedProvider {
    fn kind(&self) -> &str {
        "mock"
    }

    fn send(
        &self,
        _messages: &MessageSequence,
        _params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let content = self.reply_for(trial)?;
        Ok(ProviderReply {
            content,
            latency: self.latency,
            token_usage: None,
            provider_meta: BTreeMap::new(),
        })
    }
}

/// A captured request, as seen by the provider.
#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub trial: TrialContext,
    pub messages: MessageSequence,
}

/// Records every request passing through to the inner provider.
pub struct RecordingProvider<P> {
    inner: P,
    log: Mutex<Vec<CapturedRequest>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.log.lock().expect("log poisoned").clone()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn kind(&self) -> &str {
        self.inner.kind()
    }

    fn send(
        &self,
        messages: &MessageSequence,
        params: &GenerationParams,
        trial: &TrialContext,
    ) -> Result<ProviderReply, ProviderError> {
        self.log.lock().expect("log poisoned").push(CapturedRequest {
            trial: trial.clone(),
            messages: messages.clone(),
        });
        self.inner.send(messages, params, trial)
    }
}

/// Builds noise plans that inject a known number of errors.
pub struct NoisePlanBuilder<'a> {
    study: &'a Study,
    entries: Vec<NoiseEntry>,
    taken: HashSet<(String, u32, Option<u32>)>,
}

impl<'a> NoisePlanBuilder<'a> {
    pub fn new(study: &'a Study) -> Self {
        NoisePlanBuilder {
            study,
            entries: Vec::new(),
            taken: HashSet::new(),
        }
    }

    /// Spread `n_errors` wrong replies round-robin over `items`, one informant
    /// at a time. Fails if the items cannot hold that many errors.
    fn spread(
        &mut self,
        items: Vec<&StimulusItem>,
        run_index: Option<u32>,
        n_errors: usize,
    ) -> Result<&mut Self, ProviderError> {
        if n_errors == 0 {
            return Ok(self);
        }
        if items.is_empty() {
            return Err(ProviderError::Script("no items match the noise target".into()));
        }
        let mut placed = 0;
        let mut k = 0;
        let capacity = items.len() * self.study.n_informants as usize;
        while placed < n_errors {
            if k >= capacity {
                return Err(ProviderError::Script(format!(
                    "cannot place {n_errors} errors over {} items x {} informants",
                    items.len(),
                    self.study.n_informants
                )));
            }
            let item = items[k % items.len()];
            let informant = (k / items.len()) as u32;
            k += 1;
            let slot = (item.item_id.clone(), informant, run_index);
            if self.taken.insert(slot) {
                self.entries.push(NoiseEntry {
                    item_id: item.item_id.clone(),
                    informant_index: informant,
                    run_index,
                    wrong_reply: wrong_reply(item),
                });
                placed += 1;
            }
        }
        Ok(self)
    }

    /// Errors spread over every scored item of one condition (`"fillers"` for fillers).
    pub fn condition_errors(
        &mut self,
        condition_id: &str,
        run_index: Option<u32>,
        n_errors: usize,
    ) -> Result<&mut Self, ProviderError> {
        let items: Vec<&StimulusItem> = self
            .study
            .trial_items()
            .into_iter()
            .filter(|i| i.is_scored() && in_scope(i, condition_id))
            .collect();
        self.spread(items, run_index, n_errors)
    }

    /// Errors spread over the items whose error label is one of `labels`.
    pub fn label_errors(
        &mut self,
        labels: &[&str],
        run_index: Option<u32>,
        n_errors: usize,
    ) -> Result<&mut Self, ProviderError> {
        let kind = self.study.kind();
        let items: Vec<&StimulusItem> = self
            .study
            .trial_items()
            .into_iter()
            .filter(|i| i.is_scored() && labels.contains(&i.error_label(kind)))
            .collect();
        self.spread(items, run_index, n_errors)
    }

    /// Independent Bernoulli errors with a per-condition rate.
    pub fn random_errors(
        &mut self,
        rates: &BTreeMap<String, f64>,
        run_index: Option<u32>,
        seed: u64,
    ) -> &mut Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[run_index.unwrap_or(0) as u64]));
        for item in self.study.trial_items() {
            if !item.is_scored() {
                continue;
            }
            let scope = item.condition_id.as_deref().unwrap_or("fillers");
            let scope = if item.kind == crate::study::ItemKind::Filler {
                "fillers"
            } else {
                scope
            };
            let rate = rates.get(scope).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            for informant in 0..self.study.n_informants {
                if rng.random_bool(rate) && self.taken.insert((item.item_id.clone(), informant, run_index)) {
                    self.entries.push(NoiseEntry {
                        item_id: item.item_id.clone(),
                        informant_index: informant,
                        run_index,
                        wrong_reply: wrong_reply(item),
                    });
                }
            }
        }
        self
    }

    pub fn build(&self) -> Vec<NoiseEntry> {
        self.entries.clone()
    }
}

fn in_scope(item: &StimulusItem, scope: &str) -> bool {
    match scope {
        "fillers" => item.kind == crate::study::ItemKind::Filler,
        c => item.kind == crate::study::ItemKind::Critical && item.condition_id.as_deref() == Some(c),
    }
}
