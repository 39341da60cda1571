//! Prompt strategies and rendering of stimulus items into chat messages.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::study::{StimulusItem, StudyKind, BLANK};

/// How the gap in a forced-choice sentence is shown to the informant.
pub const RENDERED_BLANK: &str = "__";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("user template must contain {{text}} exactly once (found {0})")]
    TextPlaceholder(usize),
    #[error("unresolved placeholder {{{0}}} in template")]
    UnresolvedPlaceholder(String),
    #[error("chain-of-thought strategy needs at least one exemplar and one {{exemplars}} slot")]
    MissingExemplars,
    #[error("exemplar {index} is missing its {field}")]
    MissingExemplarField { index: usize, field: &'static str },
    #[error("role strategy needs a non-empty system text")]
    MissingSystemText,
    #[error("item `{0}` has empty text")]
    EmptyItem(String),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("cannot read strategy file: {0}")]
    Io(String),
    #[error("malformed strategy file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    ZeroShot,
    ZeroShotRole,
    ChainOfThought,
    Custom,
}

impl StrategyId {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::ZeroShot => "zero_shot",
            StrategyId::ZeroShotRole => "zero_shot_role",
            StrategyId::ChainOfThought => "chain_of_thought",
            StrategyId::Custom => "custom",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub task_text: String,
    pub reasoning_text: String,
    pub answer_text: String,
}

fn default_task_label() -> String {
    "Tache:".into()
}

fn default_reasoning_label() -> String {
    "Penser:".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub strategy_id: StrategyId,
    /// Directory/manifest name for custom strategies; built-ins use their id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_template: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<Exemplar>,
    #[serde(default = "default_task_label")]
    pub task_label: String,
    #[serde(default = "default_reasoning_label")]
    pub reasoning_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSequence {
    pub messages: Vec<Message>,
}

impl MessageSequence {
    pub fn count(&self, role: Role) -> usize {
        self.messages.iter().filter(|m| m.role == role).count()
    }

    pub fn user_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// At most one system message, then exactly one user message, no history.
    pub fn is_isolated(&self) -> bool {
        match self.messages.as_slice() {
            [u] => u.role == Role::User,
            [s, u] => s.role == Role::System && u.role == Role::User,
            _ => false,
        }
    }

    /// Hex SHA-256 over the serialized messages.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.messages).expect("messages serialize");
        let hash = Sha256::digest(&bytes);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, PartialEq)]
enum Segment<'a> {
    Literal(&'a str),
    Text,
    Exemplars,
    Unknown(&'a str),
}

/// Split a template on `{name}` placeholders; other braces stay literal.
fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(n) if !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c == '_') => {
                if open > 0 {
                    out.push(Segment::Literal(&rest[..open]));
                }
                out.push(match n {
                    "text" => Segment::Text,
                    "exemplars" => Segment::Exemplars,
                    other => Segment::Unknown(other),
                });
                rest = &after[n.len() + 1..];
            }
            _ => {
                out.push(Segment::Literal(&rest[..=open]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    out
}

impl PromptStrategy {
    pub fn name(&self) -> &str {
        self.label
            .as_deref()
            .unwrap_or_else(|| self.strategy_id.as_str())
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let segs = segments(&self.user_template);
        let n_text = segs.iter().filter(|s| **s == Segment::Text).count();
        if n_text != 1 {
            return Err(PromptError::TextPlaceholder(n_text));
        }
        if let Some(Segment::Unknown(name)) = segs.iter().find(|s| matches!(s, Segment::Unknown(_)))
        {
            return Err(PromptError::UnresolvedPlaceholder((*name).to_string()));
        }
        let n_slots = segs.iter().filter(|s| **s == Segment::Exemplars).count();
        if self.strategy_id == StrategyId::ChainOfThought
            && (self.exemplars.is_empty() || n_slots != 1)
        {
            return Err(PromptError::MissingExemplars);
        }
        if n_slots > 1 || (n_slots == 1 && self.exemplars.is_empty()) {
            return Err(PromptError::UnresolvedPlaceholder("exemplars".into()));
        }
        for (index, ex) in self.exemplars.iter().enumerate() {
            for (field, value) in [
                ("task_text", &ex.task_text),
                ("reasoning_text", &ex.reasoning_text),
                ("answer_text", &ex.answer_text),
            ] {
                if value.trim().is_empty() {
                    return Err(PromptError::MissingExemplarField { index, field });
                }
            }
        }
        if self.strategy_id == StrategyId::ZeroShotRole
            && self.system_text.as_deref().is_none_or(|s| s.trim().is_empty())
        {
            return Err(PromptError::MissingSystemText);
        }
        Ok(())
    }

    fn exemplar_block(&self) -> String {
        self.exemplars
            .iter()
            .map(|e| {
                format!(
                    "{} {} {} {} {} ",
                    self.task_label, e.task_text, self.reasoning_label, e.reasoning_text, e.answer_text
                )
            })
            .collect()
    }
}

/// The sentence as it appears inside the prompt: blank shown as `__`, options appended.
pub fn item_sentence(item: &StimulusItem) -> String {
    let sentence = item.text.replace(BLANK, RENDERED_BLANK);
    match &item.options {
        Some(options) => format!("{sentence} Options: {}", options.join(", ")),
        None => sentence,
    }
}

/// Render one item under a strategy into a fresh, history-free message sequence.
pub fn render(strategy: &PromptStrategy, item: &StimulusItem) -> Result<MessageSequence, PromptError> {
    strategy.validate()?;
    if item.text.trim().is_empty() {
        return Err(PromptError::EmptyItem(item.item_id.clone()));
    }
    let sentence = item_sentence(item);
    let mut user = String::with_capacity(strategy.user_template.len() + sentence.len());
    for seg in segments(&strategy.user_template) {
        match seg {
            Segment::Literal(s) => user.push_str(s),
            Segment::Text => user.push_str(&sentence),
            Segment::Exemplars => user.push_str(&strategy.exemplar_block()),
            Segment::Unknown(name) => return Err(PromptError::UnresolvedPlaceholder(name.into())),
        }
    }
    let mut messages = Vec::with_capacity(2);
    if let Some(system) = strategy.system_text.as_deref().filter(|s| !s.is_empty()) {
        messages.push(Message {
            role: Role::System,
            content: system.to_string(),
        });
    }
    messages.push(Message {
        role: Role::User,
        content: user,
    });
    Ok(MessageSequence { messages })
}

const CRUZ_ZERO_SHOT: &str = "You are a Spanish–English bilingual speaker. You are participating in a study. You will see a short sentence missing information and your task is to complete the sentence with the information appearing after it in a way that sounds as natural as possible to you. Just answer with the one word among the given options you would use to complete the sentence, don't repeat the whole sentence: '{text}'";

const NEO_ZERO_SHOT: &str = "Vous êtes de langue maternelle française. Vous participez à une étude. Indiquez si la phrase suivante contient un mot nouveau ou un mot existant employé avec un sens nouveau simplement par 'oui' ou 'non': '{text}' Si ce mot existe, indiquez-le sans l'expliquer";

const NEO_ROLE_SYSTEM: &str = "Tu participes à une étude linguistique et tu es de langue maternelle française. Ton objectif premier est de te concentrer sur ta tâche, et de répondre attentivement.";

const NEO_ROLE_USER: &str = "Vous êtes de langue maternelle française. Vous participez à une étude. Indiquez si la phrase suivante contient un mot nouveau ou un mot existant employé dans un sens nouveau avec simplement 'oui' or 'non': '{text}' Si il y a ce mot, l'indiquez sans expliquer";

const NEO_COT_USER: &str = "Vous êtes de langue maternelle française. Vous participez à une étude. {exemplars}Tache: Indiquez si la phrase suivante contient un mot nouveau ou un mot existant employé dans un sens nouveau avec simplement 'oui' ou 'non': '{text}' Si il y a ce mot, l'indiquez sans expliquer. Réponse:";

const NEO_TASK: &str = "Indiquez si la phrase suivante contient un mot nouveau ou un mot existant employé dans un sens nouveau avec simplement 'oui' ou 'non':";

fn neo_exemplars() -> Vec<Exemplar> {
    vec![
        Exemplar {
            task_text: format!(
                "{NEO_TASK} 'Le livre n’est distribué qu’en impadem pour le moment'. Si il y a ce mot, l'indiquez sans expliquer."
            ),
            reasoning_text: "Réfléchissons pas à pas. Je lis d'abord la phrase en entier et j'essaie de reconnaître tous les mots. Impadem ne me semble pas familier, alors ma réponse est:".into(),
            answer_text: "'Oui, impadem.'".into(),
        },
        Exemplar {
            task_text: format!(
                "{NEO_TASK} 'Parler de ses angoisses aide beaucoup Valentine.' Si il y a ce mot, l'indiquez sans expliquer."
            ),
            reasoning_text: "Réfléchissons pas à pas. Je lis d'abord la phrase en entier et j'essaie de reconnaître tous les mots. Je les connais tous, donc ma réponse est:".into(),
            answer_text: "'non'.".into(),
        },
    ]
}

fn strategy(id: StrategyId, system: Option<&str>, user: &str, exemplars: Vec<Exemplar>) -> PromptStrategy {
    PromptStrategy {
        strategy_id: id,
        label: None,
        system_text: system.map(Into::into),
        user_template: user.into(),
        exemplars,
        task_label: default_task_label(),
        reasoning_label: default_reasoning_label(),
    }
}

/// The stock prompt formulations for each kind of study.
pub fn builtin_strategies(kind: StudyKind) -> Vec<PromptStrategy> {
    match kind {
        StudyKind::CruzLike => vec![strategy(StrategyId::ZeroShot, None, CRUZ_ZERO_SHOT, vec![])],
        StudyKind::LombardLike => vec![
            strategy(StrategyId::ZeroShot, None, NEO_ZERO_SHOT, vec![]),
            strategy(
                StrategyId::ZeroShotRole,
                Some(NEO_ROLE_SYSTEM),
                NEO_ROLE_USER,
                vec![],
            ),
            strategy(StrategyId::ChainOfThought, None, NEO_COT_USER, neo_exemplars()),
        ],
    }
}

pub fn builtin_strategy(kind: StudyKind, name: &str) -> Result<PromptStrategy, PromptError> {
    builtin_strategies(kind)
        .into_iter()
        .find(|s| s.strategy_id.as_str() == name)
        .ok_or_else(|| PromptError::UnknownStrategy(format!("{name} (for {})", kind.as_str())))
}

/// Load a custom strategy from a TOML file whose fields mirror [`PromptStrategy`].
pub fn load_strategy(path: &Path) -> Result<PromptStrategy, PromptError> {
    let raw = std::fs::read_to_string(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
    let strategy: PromptStrategy = toml::from_str(&raw).map_err(|e| PromptError::Format(e.to_string()))?;
    strategy.validate()?;
    Ok(strategy)
}
