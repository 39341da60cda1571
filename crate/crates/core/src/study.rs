//! Study definitions: stimuli, conditions, answer keys and human baselines.
//!
//! A study is read from a single JSON document (optionally with a CSV sidecar
//! holding the items), checked against its invariants, and then shared
//! read-only by every informant of a cohort.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Literal marker for the gap in forced-choice sentences.
pub const BLANK: &str = "{blank}";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in {path} at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation in {path}, record {record}: {message}")]
    Csv {
        path: PathBuf,
        record: u64,
        message: String,
    },
    #[error("study is invalid:\n{0}")]
    Invalid(ValidationReport),
    #[error("informant index {index} out of range (study has {n_informants} informants)")]
    InformantOutOfRange { index: u32, n_informants: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Determiner choice in a sentence with a gap (el/la style).
    CruzLike,
    /// Yes/no neologism detection with word identification.
    LombardLike,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::CruzLike => "cruz_like",
            StudyKind::LombardLike => "lombard_like",
        }
    }
}

impl std::str::FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cruz_like" => Ok(StudyKind::CruzLike),
            "lombard_like" => Ok(StudyKind::LombardLike),
            other => Err(format!("unknown study kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Critical,
    Filler,
    Distractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyKind {
    CongruentChoice,
    NeologismPresent,
    NeologismAbsent,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub key_kind: KeyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_choice: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_word: Option<String>,
}

impl AnswerKey {
    pub fn none() -> Self {
        AnswerKey {
            key_kind: KeyKind::None,
            expected_choice: None,
            expected_word: None,
        }
    }

    pub fn congruent(choice: impl Into<String>) -> Self {
        AnswerKey {
            key_kind: KeyKind::CongruentChoice,
            expected_choice: Some(choice.into()),
            expected_word: None,
        }
    }

    pub fn neologism(word: impl Into<String>) -> Self {
        AnswerKey {
            key_kind: KeyKind::NeologismPresent,
            expected_choice: None,
            expected_word: Some(word.into()),
        }
    }

    pub fn no_neologism() -> Self {
        AnswerKey {
            key_kind: KeyKind::NeologismAbsent,
            expected_choice: None,
            expected_word: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusItem {
    pub item_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub kind: ItemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_id: Option<String>,
    pub key: AnswerKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gloss: Option<String>,
}

impl StimulusItem {
    pub fn has_blank(&self) -> bool {
        self.text.contains(BLANK)
    }

    /// Whether the item participates in any accuracy figure.
    pub fn is_scored(&self) -> bool {
        self.key.key_kind != KeyKind::None && self.kind != ItemKind::Distractor
    }

    /// Label under which errors on this item are tallied: the Spanish
    /// translation for determiner studies, the neologism for detection
    /// studies, and the item id for fillers and distractors.
    pub fn error_label(&self, kind: StudyKind) -> &str {
        if self.kind != ItemKind::Critical {
            return &self.item_id;
        }
        let preferred = match kind {
            StudyKind::CruzLike => self.gloss.as_deref().or(self.target_word.as_deref()),
            StudyKind::LombardLike => self.target_word.as_deref().or(self.gloss.as_deref()),
        };
        preferred.unwrap_or(&self.item_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub condition_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub variables: Vec<String>,
    pub expected_n_items: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBaseline {
    /// A condition id, a `+`-joined group of condition ids, `overall` or `fillers`.
    pub scope: String,
    pub mean_value: f64,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub study_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study_kind: Option<StudyKind>,
    #[serde(rename = "informant_profile")]
    pub language_of_informant: String,
    pub n_informants: u32,
    #[serde(default = "default_runs")]
    pub n_runs: u32,
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub items: Vec<StimulusItem>,
    #[serde(default)]
    pub baselines: Vec<HumanBaseline>,
    /// Items reserved as chain-of-thought exemplars; never presented as trials.
    #[serde(default)]
    pub exemplars: Vec<StimulusItem>,
}

fn default_runs() -> u32 {
    2
}

/// On-disk form: identical to [`Study`] plus an optional CSV sidecar for items.
#[derive(Deserialize)]
struct StudyFile {
    #[serde(flatten)]
    study: Study,
    #[serde(default)]
    items_csv: Option<String>,
}

impl Study {
    /// Study kind, inferred from the items when the file does not declare one.
    pub fn kind(&self) -> StudyKind {
        self.study_kind.unwrap_or_else(|| {
            if self.items.iter().any(|i| i.options.is_some()) {
                StudyKind::CruzLike
            } else {
                StudyKind::LombardLike
            }
        })
    }

    pub fn exemplar_item_ids(&self) -> Vec<&str> {
        self.exemplars.iter().map(|e| e.item_id.as_str()).collect()
    }

    pub fn item(&self, item_id: &str) -> Option<&StimulusItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn item_index(&self) -> HashMap<&str, &StimulusItem> {
        self.items.iter().map(|i| (i.item_id.as_str(), i)).collect()
    }

    pub fn condition(&self, condition_id: &str) -> Option<&Condition> {
        self.conditions
            .iter()
            .find(|c| c.condition_id == condition_id)
    }

    /// Items that are presented to informants, in file order.
    pub fn trial_items(&self) -> Vec<&StimulusItem> {
        let exemplars: HashSet<&str> = self.exemplar_item_ids().into_iter().collect();
        self.items
            .iter()
            .filter(|i| !exemplars.contains(i.item_id.as_str()))
            .collect()
    }

    pub fn critical_count(&self) -> usize {
        self.items
            .iter()
            .filter(|i| i.kind == ItemKind::Critical)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }
}

/// Collapse internal whitespace and trim; casing and accents are untouched.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn preprocess(item: &mut StimulusItem) {
    item.text = normalize_text(&item.text);
}

/// Parse a study document without checking invariants.
pub fn parse_study(path: &Path) -> Result<Study, StudyError> {
    let raw = std::fs::read_to_string(path).map_err(|source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: StudyFile = serde_json::from_str(&raw).map_err(|e| StudyError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut study = file.study;
    if let Some(csv_rel) = file.items_csv {
        let csv_path = path
            .parent()
            .map(|p| p.join(&csv_rel))
            .unwrap_or_else(|| PathBuf::from(&csv_rel));
        study.items.extend(read_items_csv(&csv_path)?);
    }
    study.items.iter_mut().for_each(preprocess);
    study.exemplars.iter_mut().for_each(preprocess);
    Ok(study)
}

/// Parse and validate a study file; any finding is an error.
pub fn load_study(path: &Path) -> Result<Study, StudyError> {
    let study = parse_study(path)?;
    let report = validate_study(&study);
    if report.is_empty() {
        Ok(study)
    } else {
        Err(StudyError::Invalid(report))
    }
}

/// Parse a study from an in-memory JSON string (no CSV sidecar support).
pub fn study_from_json(json: &str) -> Result<Study, StudyError> {
    let mut study: Study = serde_json::from_str(json).map_err(|e| StudyError::Json {
        path: PathBuf::from("<memory>"),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    study.items.iter_mut().for_each(preprocess);
    study.exemplars.iter_mut().for_each(preprocess);
    let report = validate_study(&study);
    if report.is_empty() {
        Ok(study)
    } else {
        Err(StudyError::Invalid(report))
    }
}

#[derive(Debug, Deserialize)]
struct CsvItem {
    item_id: String,
    text: String,
    #[serde(default)]
    options: String,
    kind: ItemKind,
    #[serde(default)]
    condition_id: String,
    #[serde(default)]
    expected_choice: String,
    #[serde(default)]
    expected_word: String,
    #[serde(default)]
    target_word: String,
    #[serde(default)]
    gloss: String,
}

fn non_empty(s: String) -> Option<String> {
    if s.trim().is_empty() {
        None
    } else {
        Some(s)
    }
}

/// The CSV has no key column: the key kind follows from which expectation is
/// filled in (choice, word) and, failing both, from the item kind.
fn read_items_csv(path: &Path) -> Result<Vec<StimulusItem>, StudyError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| StudyError::Csv {
        path: path.to_path_buf(),
        record: 0,
        message: e.to_string(),
    })?;
    let mut items = Vec::new();
    for (n, row) in reader.deserialize::<CsvItem>().enumerate() {
        let record = n as u64 + 1;
        let row = row.map_err(|e| StudyError::Csv {
            path: path.to_path_buf(),
            record,
            message: e.to_string(),
        })?;
        let options: Vec<String> = row
            .options
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let key = match (non_empty(row.expected_choice), non_empty(row.expected_word)) {
            (Some(choice), None) => AnswerKey::congruent(choice),
            (None, Some(word)) => AnswerKey::neologism(word),
            (None, None) => match row.kind {
                ItemKind::Filler => AnswerKey::no_neologism(),
                ItemKind::Distractor => AnswerKey::none(),
                ItemKind::Critical => {
                    return Err(StudyError::Csv {
                        path: path.to_path_buf(),
                        record,
                        message: format!(
                            "critical item `{}` needs expected_choice or expected_word",
                            row.item_id
                        ),
                    })
                }
            },
            (Some(_), Some(_)) => {
                return Err(StudyError::Csv {
                    path: path.to_path_buf(),
                    record,
                    message: format!(
                        "item `{}` sets both expected_choice and expected_word",
                        row.item_id
                    ),
                })
            }
        };
        items.push(StimulusItem {
            item_id: row.item_id,
            text: row.text,
            options: if options.is_empty() { None } else { Some(options) },
            kind: row.kind,
            condition_id: non_empty(row.condition_id),
            key,
            target_word: non_empty(row.target_word),
            gloss: non_empty(row.gloss),
        });
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    NoInformants,
    NoRuns,
    DuplicateItemId { item_id: String },
    DuplicateCondition { condition_id: String },
    EmptyText { item_id: String },
    UndeclaredCondition { item_id: String, condition_id: String },
    CriticalWithoutCondition { item_id: String },
    CriticalWithoutKey { item_id: String },
    TooFewOptions { item_id: String },
    BlankWithoutOptions { item_id: String },
    MissingExpectedChoice { item_id: String },
    ChoiceNotInOptions { item_id: String, expected: String },
    MissingExpectedWord { item_id: String },
    ExemplarLeakage { item_id: String },
    ConditionCountMismatch { condition_id: String, expected: u32, found: u32 },
    BaselineOutOfRange { scope: String, value: f64 },
    UnknownBaselineScope { scope: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Finding::*;
        match self {
            NoInformants => write!(f, "n_informants must be positive"),
            NoRuns => write!(f, "n_runs must be at least 1"),
            DuplicateItemId { item_id } => write!(f, "duplicate item id `{item_id}`"),
            DuplicateCondition { condition_id } => {
                write!(f, "condition `{condition_id}` declared twice")
            }
            EmptyText { item_id } => write!(f, "item `{item_id}` has empty text"),
            UndeclaredCondition { item_id, condition_id } => write!(
                f,
                "item `{item_id}` references undeclared condition `{condition_id}`"
            ),
            CriticalWithoutCondition { item_id } => {
                write!(f, "critical item `{item_id}` has no condition_id")
            }
            CriticalWithoutKey { item_id } => {
                write!(f, "critical item `{item_id}` has key_kind none")
            }
            TooFewOptions { item_id } => write!(
                f,
                "item `{item_id}` needs at least two distinct options"
            ),
            BlankWithoutOptions { item_id } => {
                write!(f, "item `{item_id}` has a {BLANK} marker but no options")
            }
            MissingExpectedChoice { item_id } => {
                write!(f, "item `{item_id}` has a congruent_choice key without expected_choice")
            }
            ChoiceNotInOptions { item_id, expected } => write!(
                f,
                "item `{item_id}`: expected choice `{expected}` is not among its options"
            ),
            MissingExpectedWord { item_id } => {
                write!(f, "item `{item_id}` has a neologism_present key without expected_word")
            }
            ExemplarLeakage { item_id } => write!(
                f,
                "exemplar leakage: exemplar `{item_id}` also appears among the trial items"
            ),
            ConditionCountMismatch {
                condition_id,
                expected,
                found,
            } => write!(
                f,
                "condition `{condition_id}` expects {expected} items but {found} are present"
            ),
            BaselineOutOfRange { scope, value } => {
                write!(f, "baseline `{scope}` mean {value} is outside [0, 1]")
            }
            UnknownBaselineScope { scope } => {
                write!(f, "baseline scope `{scope}` does not name a condition or group")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "  - {finding}")?;
        }
        Ok(())
    }
}

fn check_item(item: &StimulusItem, declared: &HashSet<&str>, out: &mut Vec<Finding>) {
    let id = || item.item_id.clone();
    if item.text.trim().is_empty() {
        out.push(Finding::EmptyText { item_id: id() });
    }
    if let Some(options) = &item.options {
        let distinct: HashSet<&str> = options.iter().map(String::as_str).collect();
        if distinct.len() < 2 || distinct.len() != options.len() {
            out.push(Finding::TooFewOptions { item_id: id() });
        }
    } else if item.has_blank() {
        out.push(Finding::BlankWithoutOptions { item_id: id() });
    }
    if item.kind == ItemKind::Critical {
        match &item.condition_id {
            None => out.push(Finding::CriticalWithoutCondition { item_id: id() }),
            Some(c) if !declared.contains(c.as_str()) => out.push(Finding::UndeclaredCondition {
                item_id: id(),
                condition_id: c.clone(),
            }),
            Some(_) => {}
        }
        if item.key.key_kind == KeyKind::None {
            out.push(Finding::CriticalWithoutKey { item_id: id() });
        }
    } else if let Some(c) = &item.condition_id {
        if !declared.contains(c.as_str()) {
            out.push(Finding::UndeclaredCondition {
                item_id: id(),
                condition_id: c.clone(),
            });
        }
    }
    match item.key.key_kind {
        KeyKind::CongruentChoice => match &item.key.expected_choice {
            None => out.push(Finding::MissingExpectedChoice { item_id: id() }),
            Some(choice) => {
                let listed = item
                    .options
                    .as_ref()
                    .is_some_and(|o| o.iter().any(|x| x == choice));
                if !listed {
                    out.push(Finding::ChoiceNotInOptions {
                        item_id: id(),
                        expected: choice.clone(),
                    });
                }
            }
        },
        KeyKind::NeologismPresent => {
            if item
                .key
                .expected_word
                .as_deref()
                .is_none_or(|w| w.trim().is_empty())
            {
                out.push(Finding::MissingExpectedWord { item_id: id() });
            }
        }
        KeyKind::NeologismAbsent | KeyKind::None => {}
    }
}

fn scope_is_known(scope: &str, declared: &HashSet<&str>) -> bool {
    matches!(scope, "overall" | "fillers")
        || scope
            .split('+')
            .all(|part| declared.contains(part.trim()))
}

/// Check every study invariant and reconcile per-condition item counts.
pub fn validate_study(study: &Study) -> ValidationReport {
    let mut findings = Vec::new();
    if study.n_informants == 0 {
        findings.push(Finding::NoInformants);
    }
    if study.n_runs == 0 {
        findings.push(Finding::NoRuns);
    }

    let mut declared = HashSet::new();
    for c in &study.conditions {
        if !declared.insert(c.condition_id.as_str()) {
            findings.push(Finding::DuplicateCondition {
                condition_id: c.condition_id.clone(),
            });
        }
    }

    let mut seen = HashSet::new();
    for item in &study.items {
        if !seen.insert(item.item_id.as_str()) {
            findings.push(Finding::DuplicateItemId {
                item_id: item.item_id.clone(),
            });
        }
        check_item(item, &declared, &mut findings);
    }

    let texts: HashSet<String> = study
        .items
        .iter()
        .map(|i| normalize_text(&i.text))
        .collect();
    for ex in &study.exemplars {
        if seen.contains(ex.item_id.as_str()) || texts.contains(&normalize_text(&ex.text)) {
            findings.push(Finding::ExemplarLeakage {
                item_id: ex.item_id.clone(),
            });
        }
    }

    let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
    for item in &study.items {
        if item.kind == ItemKind::Critical {
            if let Some(c) = &item.condition_id {
                *counts.entry(c.as_str()).or_default() += 1;
            }
        }
    }
    for c in &study.conditions {
        let found = counts.get(c.condition_id.as_str()).copied().unwrap_or(0);
        if found != c.expected_n_items {
            findings.push(Finding::ConditionCountMismatch {
                condition_id: c.condition_id.clone(),
                expected: c.expected_n_items,
                found,
            });
        }
    }

    for b in &study.baselines {
        if !(0.0..=1.0).contains(&b.mean_value) {
            findings.push(Finding::BaselineOutOfRange {
                scope: b.scope.clone(),
                value: b.mean_value,
            });
        }
        if !scope_is_known(&b.scope, &declared) {
            findings.push(Finding::UnknownBaselineScope {
                scope: b.scope.clone(),
            });
        }
    }

    ValidationReport { findings }
}

/// SplitMix64 finalizer, used to derive independent seeds from a master seed.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a sequence of indices.
pub fn derive_seed(parent: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(parent), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Presentation order for one informant: a seeded shuffle of every trial item.
pub fn items_for_informant(
    study: &Study,
    informant_index: u32,
    master_seed: u64,
) -> Result<Vec<&StimulusItem>, StudyError> {
    if informant_index >= study.n_informants {
        return Err(StudyError::InformantOutOfRange {
            index: informant_index,
            n_informants: study.n_informants,
        });
    }
    let mut items = study.trial_items();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[informant_index as u64]));
    items.shuffle(&mut rng);
    Ok(items)
}
