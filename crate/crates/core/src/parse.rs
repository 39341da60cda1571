//! Turning free-text replies into choices, and choices into scores.

use serde::{Deserialize, Serialize};

use crate::study::{KeyKind, StimulusItem, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    OptionSelected,
    Detection,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedChoice {
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_option: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identified_word: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub parse_notes: String,
}

impl ParsedChoice {
    fn unparseable(notes: impl Into<String>) -> Self {
        ParsedChoice {
            outcome: Outcome::Unparseable,
            selected_option: None,
            verdict: None,
            identified_word: None,
            parse_notes: notes.into(),
        }
    }

    fn option(option: &str, notes: impl Into<String>) -> Self {
        ParsedChoice {
            outcome: Outcome::OptionSelected,
            selected_option: Some(option.to_string()),
            verdict: None,
            identified_word: None,
            parse_notes: notes.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    #[default]
    Incorrect,
    Exclude,
}

impl std::str::FromStr for UnparseablePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "incorrect" => Ok(UnparseablePolicy::Incorrect),
            "exclude" => Ok(UnparseablePolicy::Exclude),
            other => Err(format!("unknown unparseable policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringPolicy {
    pub unparseable: UnparseablePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Correct,
    Incorrect,
    Excluded,
    Unanswered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub item_id: String,
    pub informant_index: u32,
    pub run_index: u32,
    /// `None` when the trial never received a reply.
    pub parsed: Option<ParsedChoice>,
    pub score: Score,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub congruent: Option<bool>,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '«' | '»' | '‘' | '’' | '‚' | '‛' | '“' | '”' | '„' | '‹' | '›' | '…' | '¡' | '¿' | '–'
                | '\u{2014}' | '·' | '•' | '、' | '。' | '「' | '」'
        )
}

/// Lowercase, collapse whitespace, strip punctuation and quotes at the edges.
/// Accents are preserved.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_whitespace() || is_punct(c))
        .to_string()
}

/// Word tokens of already-normalized text. Inner hyphens stay inside words.
fn words(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|w| w.trim_matches('-'))
        .filter(|w| !w.is_empty())
        .collect()
}

fn occurrences(tokens: &[&str], needle: &[&str]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > tokens.len() {
        return Vec::new();
    }
    (0..=tokens.len() - needle.len())
        .filter(|&i| tokens[i..i + needle.len()] == *needle)
        .collect()
}

/// Find which of `options` a reply selects, by whole-word match.
pub fn parse_forced_choice(raw: &str, options: &[String]) -> ParsedChoice {
    parse_forced_choice_in_context(raw, options, None)
}

/// Like [`parse_forced_choice`], but when the reply echoes the stimulus
/// sentence (which may itself contain an option word) the option sitting in
/// the blank position wins.
pub fn parse_forced_choice_in_context(
    raw: &str,
    options: &[String],
    sentence: Option<&str>,
) -> ParsedChoice {
    let reply = normalize(raw);
    let tokens = words(&reply);
    let normalized: Vec<String> = options.iter().map(|o| normalize(o)).collect();
    let option_tokens: Vec<Vec<&str>> = normalized.iter().map(|o| words(o)).collect();

    let present: Vec<usize> = (0..options.len())
        .filter(|&k| !occurrences(&tokens, &option_tokens[k]).is_empty())
        .collect();

    if present.len() > 1 {
        if let Some((before, after)) = sentence.and_then(|s| s.split_once(BLANK)) {
            let before = normalize(before);
            let after = normalize(after);
            let prev = words(&before).last().copied();
            let next = words(&after).first().copied();
            let adjacent: Vec<usize> = present
                .iter()
                .copied()
                .filter(|&k| {
                    let len = option_tokens[k].len();
                    occurrences(&tokens, &option_tokens[k]).into_iter().any(|i| {
                        let left = prev.is_some() && i > 0 && Some(tokens[i - 1]) == prev;
                        let right = next.is_some() && tokens.get(i + len).copied() == next;
                        left || right
                    })
                })
                .collect();
            if let [k] = adjacent[..] {
                return ParsedChoice::option(&options[k], "echoed sentence; option at the blank position");
            }
        }
    }

    match present[..] {
        [k] => ParsedChoice::option(&options[k], ""),
        [] => ParsedChoice::unparseable("no option found in reply"),
        _ => ParsedChoice::unparseable(format!(
            "several options found: {}",
            present
                .iter()
                .map(|&k| options[k].as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )),
    }
}

const FUNCTION_WORDS: &[&str] = &[
    "le", "la", "les", "l", "un", "une", "des", "du", "de", "d", "mot", "mots", "nouveau",
    "nouveaux", "nouvelle", "existant", "terme", "néologisme", "neologisme", "est", "c", "ce",
    "cette", "il", "y", "a", "qui", "que", "voici", "c'est", "ma", "réponse", "dans", "phrase",
    "sens", "employé", "avec", "contient", "je", "pense", "the", "word", "is",
];

/// Parse a yes/no neologism judgement and the word it names.
///
/// Only the part after the last "réponse" marker is considered, so that
/// reasoning preceding a final answer is ignored. The first standalone
/// `oui` or `non` decides the verdict.
pub fn parse_detection(raw: &str) -> ParsedChoice {
    let reply = normalize(raw);
    let mut notes = Vec::new();
    let answer = match reply.rfind("réponse") {
        Some(pos) => {
            notes.push("answer taken after final \"réponse\" marker");
            &reply[pos + "réponse".len()..]
        }
        None => reply.as_str(),
    };
    let tokens = words(answer);
    let yes = tokens.iter().position(|t| *t == "oui");
    let no = tokens.iter().position(|t| *t == "non");
    let verdict = match (yes, no) {
        (Some(y), Some(n)) if y < n => {
            notes.push("both oui and non present; oui came first");
            Some((Verdict::Yes, y))
        }
        (Some(_), Some(n)) => {
            notes.push("both oui and non present; non came first");
            Some((Verdict::No, n))
        }
        (Some(y), None) => Some((Verdict::Yes, y)),
        (None, Some(n)) => Some((Verdict::No, n)),
        (None, None) => None,
    };
    match verdict {
        None => ParsedChoice::unparseable("neither oui nor non found in reply"),
        Some((Verdict::No, _)) => ParsedChoice {
            outcome: Outcome::Detection,
            selected_option: None,
            verdict: Some(Verdict::No),
            identified_word: None,
            parse_notes: notes.join("; "),
        },
        Some((Verdict::Yes, at)) => {
            let word = tokens[at + 1..]
                .iter()
                .find(|t| !FUNCTION_WORDS.contains(t) && **t != "oui" && **t != "non")
                .map(|t| t.to_string());
            if word.is_none() {
                notes.push("no word identified after oui");
            }
            ParsedChoice {
                outcome: Outcome::Detection,
                selected_option: None,
                verdict: Some(Verdict::Yes),
                identified_word: word,
                parse_notes: notes.join("; "),
            }
        }
    }
}

/// Parse a reply the way the item's format calls for.
pub fn parse_for_item(raw: &str, item: &StimulusItem) -> ParsedChoice {
    match &item.options {
        Some(options) => parse_forced_choice_in_context(raw, options, Some(&item.text)),
        None => parse_detection(raw),
    }
}

fn words_match(identified: &str, expected: &str) -> bool {
    let a = normalize(identified);
    let b = normalize(expected);
    !a.is_empty() && !b.is_empty() && (a.contains(&b) || b.contains(&a))
}

/// Score a parsed reply against the item's answer key.
pub fn score_trial(parsed: &ParsedChoice, item: &StimulusItem, policy: ScoringPolicy) -> Score {
    let key = &item.key;
    if key.key_kind == KeyKind::None {
        return Score::Excluded;
    }
    if parsed.outcome == Outcome::Unparseable {
        return match policy.unparseable {
            UnparseablePolicy::Incorrect => Score::Incorrect,
            UnparseablePolicy::Exclude => Score::Excluded,
        };
    }
    let correct = match key.key_kind {
        KeyKind::CongruentChoice => match (&parsed.selected_option, &key.expected_choice) {
            (Some(sel), Some(exp)) => normalize(sel) == normalize(exp),
            _ => false,
        },
        KeyKind::NeologismPresent => {
            parsed.verdict == Some(Verdict::Yes)
                && match (&parsed.identified_word, &key.expected_word) {
                    (Some(found), Some(exp)) => words_match(found, exp),
                    _ => false,
                }
        }
        KeyKind::NeologismAbsent => parsed.verdict == Some(Verdict::No),
        KeyKind::None => unreachable!(),
    };
    if correct {
        Score::Correct
    } else {
        Score::Incorrect
    }
}

/// Parse and score one raw reply; `None` marks an unanswered trial.
pub fn score_reply(
    raw: Option<&str>,
    item: &StimulusItem,
    policy: ScoringPolicy,
    informant_index: u32,
    run_index: u32,
) -> ScoredTrial {
    let (parsed, score) = match raw {
        None => (None, Score::Unanswered),
        Some(text) => {
            let parsed = parse_for_item(text, item);
            let score = score_trial(&parsed, item, policy);
            (Some(parsed), score)
        }
    };
    let congruent = match (item.key.key_kind, score) {
        (KeyKind::CongruentChoice, Score::Correct) => Some(true),
        (KeyKind::CongruentChoice, Score::Incorrect) => Some(false),
        _ => None,
    };
    ScoredTrial {
        item_id: item.item_id.clone(),
        informant_index,
        run_index,
        parsed,
        score,
        congruent,
    }
}
