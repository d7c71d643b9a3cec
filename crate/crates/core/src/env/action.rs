//! Action vocabulary and its controlled-language rendering.
//!
//! Workflow steps store their actions as short instructions such as
//! `Type "Paris" into "To"; Click "Search"`. The same text is what a person
//! reads in the workflow file and what the simulated agent executes, so the
//! rendering here must stay parseable.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionCommand {
    VisitUrl { url: String },
    Click { target: String },
    TypeText { target: String, text: String },
    Scroll { direction: Direction, amount: u32 },
    Select { target: String, option: String },
    ReadText { target: String },
    WebSearch { query: String },
    Answer { text: String },
    CaptureState,
}

impl ActionCommand {
    pub fn target(&self) -> Option<&str> {
        match self {
            ActionCommand::Click { target }
            | ActionCommand::TypeText { target, .. }
            | ActionCommand::Select { target, .. }
            | ActionCommand::ReadText { target } => Some(target),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ActionCommand::VisitUrl { .. } => "visit_url",
            ActionCommand::Click { .. } => "click",
            ActionCommand::TypeText { .. } => "type_text",
            ActionCommand::Scroll { .. } => "scroll",
            ActionCommand::Select { .. } => "select",
            ActionCommand::ReadText { .. } => "read_text",
            ActionCommand::WebSearch { .. } => "web_search",
            ActionCommand::Answer { .. } => "answer",
            ActionCommand::CaptureState => "capture_state",
        }
    }

    /// Same kind and same target (values may differ).
    pub fn same_slot(&self, other: &ActionCommand) -> bool {
        if self.kind_name() != other.kind_name() {
            return false;
        }
        match (self.target(), other.target()) {
            (Some(a), Some(b)) => a.trim().eq_ignore_ascii_case(b.trim()),
            (None, None) => true,
            _ => false,
        }
    }

    /// Empty labels on element-directed variants are rejected.
    pub fn check(&self) -> Result<(), InstructionError> {
        match self.target() {
            Some(t) if t.trim().is_empty() => Err(InstructionError::EmptyTarget),
            _ => Ok(()),
        }
    }

    /// Rewrites every free-text field.
    pub fn map_text(&self, mut f: impl FnMut(&str) -> String) -> ActionCommand {
        match self {
            ActionCommand::VisitUrl { url } => ActionCommand::VisitUrl { url: f(url) },
            ActionCommand::Click { target } => ActionCommand::Click { target: f(target) },
            ActionCommand::TypeText { target, text } => ActionCommand::TypeText {
                target: f(target),
                text: f(text),
            },
            ActionCommand::Scroll { direction, amount } => ActionCommand::Scroll {
                direction: *direction,
                amount: *amount,
            },
            ActionCommand::Select { target, option } => ActionCommand::Select {
                target: f(target),
                option: f(option),
            },
            ActionCommand::ReadText { target } => ActionCommand::ReadText { target: f(target) },
            ActionCommand::WebSearch { query } => ActionCommand::WebSearch { query: f(query) },
            ActionCommand::Answer { text } => ActionCommand::Answer { text: f(text) },
            ActionCommand::CaptureState => ActionCommand::CaptureState,
        }
    }

    /// Fallible variant of [`ActionCommand::map_text`].
    pub fn try_map_text<E>(
        &self,
        mut f: impl FnMut(&str) -> Result<String, E>,
    ) -> Result<ActionCommand, E> {
        let mut err = None;
        let out = self.map_text(|s| match f(s) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                String::new()
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Past-tense gerund used in fallback texts ("clicking \"X\"").
    pub fn gerund(&self) -> String {
        match self {
            ActionCommand::VisitUrl { url } => format!("navigating to {}", quote(url)),
            ActionCommand::Click { target } => format!("clicking {}", quote(target)),
            ActionCommand::TypeText { target, text } => {
                format!("typing {} into {}", quote(text), quote(target))
            }
            ActionCommand::Scroll { direction, .. } => format!("scrolling {}", dir_word(*direction)),
            ActionCommand::Select { target, option } => {
                format!("selecting {} in {}", quote(option), quote(target))
            }
            ActionCommand::ReadText { target } => format!("reading {}", quote(target)),
            ActionCommand::WebSearch { query } => format!("searching the web for {}", quote(query)),
            ActionCommand::Answer { text } => format!("answering {}", quote(text)),
            ActionCommand::CaptureState => "waiting for the page to load".to_string(),
        }
    }
}

fn dir_word(d: Direction) -> &'static str {
    match d {
        Direction::Up => "up",
        Direction::Down => "down",
    }
}

/// One step of a controlled-language action description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Instruction {
    Command(ActionCommand),
    /// Read the element's text and submit it as the answer.
    AnswerFrom { answer_from: String },
}

impl Instruction {
    pub fn map_text(&self, mut f: impl FnMut(&str) -> String) -> Instruction {
        match self {
            Instruction::Command(c) => Instruction::Command(c.map_text(f)),
            Instruction::AnswerFrom { answer_from } => Instruction::AnswerFrom {
                answer_from: f(answer_from),
            },
        }
    }

    /// Command whose failure would stop this instruction first.
    pub fn lead_command(&self) -> ActionCommand {
        match self {
            Instruction::Command(c) => c.clone(),
            Instruction::AnswerFrom { answer_from } => ActionCommand::ReadText {
                target: answer_from.clone(),
            },
        }
    }
}

impl From<ActionCommand> for Instruction {
    fn from(c: ActionCommand) -> Self {
        Instruction::Command(c)
    }
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

impl fmt::Display for ActionCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionCommand::VisitUrl { url } => write!(f, "Navigate to {}", quote(url)),
            ActionCommand::Click { target } => write!(f, "Click {}", quote(target)),
            ActionCommand::TypeText { target, text } => {
                write!(f, "Type {} into {}", quote(text), quote(target))
            }
            ActionCommand::Scroll { direction, amount } => {
                if *amount == 1 {
                    write!(f, "Scroll {}", dir_word(*direction))
                } else {
                    write!(f, "Scroll {} {}", dir_word(*direction), amount)
                }
            }
            ActionCommand::Select { target, option } => {
                write!(f, "Select {} in {}", quote(option), quote(target))
            }
            ActionCommand::ReadText { target } => write!(f, "Read {}", quote(target)),
            ActionCommand::WebSearch { query } => write!(f, "Search the web for {}", quote(query)),
            ActionCommand::Answer { text } => write!(f, "Answer {}", quote(text)),
            ActionCommand::CaptureState => f.write_str("Wait for the page to load"),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Command(c) => c.fmt(f),
            Instruction::AnswerFrom { answer_from } => {
                write!(f, "Answer with the value of {}", quote(answer_from))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstructionError {
    #[error("unrecognized instruction `{0}`")]
    Unrecognized(String),
    #[error("unterminated quote in `{0}`")]
    UnterminatedQuote(String),
    #[error("element-directed command has an empty target")]
    EmptyTarget,
}

/// Renders instructions as a `; `-separated action text.
pub fn render_instructions(items: &[Instruction]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Sep,
}

fn tokenize(text: &str) -> Result<Vec<Tok>, InstructionError> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&ch) = chars.peek() {
        if ch.is_whitespace() {
            chars.next();
        } else if ch == ';' {
            chars.next();
            toks.push(Tok::Sep);
        } else if ch == '"' {
            chars.next();
            let mut s = String::new();
            let mut closed = false;
            while let Some(c) = chars.next() {
                match c {
                    '\\' => {
                        if let Some(n) = chars.next() {
                            s.push(n);
                        }
                    }
                    '"' => {
                        closed = true;
                        break;
                    }
                    c => s.push(c),
                }
            }
            if !closed {
                return Err(InstructionError::UnterminatedQuote(text.to_string()));
            }
            toks.push(Tok::Quoted(s));
        } else {
            let mut w = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || c == ';' || c == '"' {
                    break;
                }
                w.push(c);
                chars.next();
            }
            toks.push(Tok::Word(w.to_ascii_lowercase()));
        }
    }
    Ok(toks)
}

fn parse_one(toks: &[Tok], raw: &str) -> Result<Instruction, InstructionError> {
    use Tok::*;
    let bad = || InstructionError::Unrecognized(raw.trim().to_string());
    let words: Vec<&str> = toks
        .iter()
        .filter_map(|t| match t {
            Word(w) => Some(w.as_str()),
            _ => None,
        })
        .collect();
    let quoted: Vec<&str> = toks
        .iter()
        .filter_map(|t| match t {
            Quoted(q) => Some(q.as_str()),
            _ => None,
        })
        .collect();
    let cmd = match (words.as_slice(), quoted.as_slice()) {
        (["navigate", "to"], [url]) => ActionCommand::VisitUrl { url: url.to_string() },
        (["click"], [t]) => ActionCommand::Click { target: t.to_string() },
        (["type", "into"], [text, t]) => ActionCommand::TypeText {
            target: t.to_string(),
            text: text.to_string(),
        },
        (["select", "in"], [o, t]) => ActionCommand::Select {
            target: t.to_string(),
            option: o.to_string(),
        },
        (["read"], [t]) => ActionCommand::ReadText { target: t.to_string() },
        (["search", "the", "web", "for"], [q]) => ActionCommand::WebSearch { query: q.to_string() },
        (["answer"], [t]) => ActionCommand::Answer { text: t.to_string() },
        (["answer", "with", "the", "value", "of"], [t]) => {
            if t.trim().is_empty() {
                return Err(InstructionError::EmptyTarget);
            }
            return Ok(Instruction::AnswerFrom { answer_from: t.to_string() });
        }
        (["wait", "for", "the", "page", "to", "load"], []) => ActionCommand::CaptureState,
        (["scroll", dir, rest @ ..], []) => {
            let direction = match *dir {
                "down" => Direction::Down,
                "up" => Direction::Up,
                _ => return Err(bad()),
            };
            let amount = match rest {
                [] => 1,
                [n] => n.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            };
            ActionCommand::Scroll { direction, amount }
        }
        _ => return Err(bad()),
    };
    cmd.check()?;
    // Word order matters for the two-argument forms.
    if let (ActionCommand::TypeText { .. } | ActionCommand::Select { .. }, [Word(_), Quoted(_), Word(_), Quoted(_)]) =
        (&cmd, toks)
    {
        return Ok(Instruction::Command(cmd));
    }
    if matches!(cmd, ActionCommand::TypeText { .. } | ActionCommand::Select { .. }) {
        return Err(bad());
    }
    Ok(Instruction::Command(cmd))
}

/// Parses a `; `-separated action text back into instructions.
pub fn parse_instructions(text: &str) -> Result<Vec<Instruction>, InstructionError> {
    let toks = tokenize(text)?;
    let mut out = Vec::new();
    for chunk in toks.split(|t| *t == Tok::Sep) {
        if chunk.is_empty() {
            continue;
        }
        out.push(parse_one(chunk, text)?);
    }
    if out.is_empty() {
        return Err(InstructionError::Unrecognized(text.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_and_parses_each_form() {
        let items: Vec<Instruction> = vec![
            ActionCommand::VisitUrl { url: "https://skyfare.sim/".into() }.into(),
            ActionCommand::Click { target: "Round-trip".into() }.into(),
            ActionCommand::TypeText { target: "To".into(), text: "Paris".into() }.into(),
            ActionCommand::Select { target: "Cabin".into(), option: "Business".into() }.into(),
            ActionCommand::Scroll { direction: Direction::Down, amount: 1 }.into(),
            ActionCommand::Scroll { direction: Direction::Up, amount: 3 }.into(),
            ActionCommand::ReadText { target: "Top fare".into() }.into(),
            ActionCommand::WebSearch { query: "cheap \"flights\"".into() }.into(),
            ActionCommand::Answer { text: "42; or so".into() }.into(),
            ActionCommand::CaptureState.into(),
            Instruction::AnswerFrom { answer_from: "Top fare".into() },
        ];
        let text = render_instructions(&items);
        assert_eq!(parse_instructions(&text).unwrap(), items);
    }

    #[test]
    fn rejects_empty_targets_and_garbage() {
        assert_eq!(parse_instructions("Click \"\"").unwrap_err(), InstructionError::EmptyTarget);
        assert!(matches!(
            parse_instructions("Dance wildly"),
            Err(InstructionError::Unrecognized(_))
        ));
        assert!(matches!(
            parse_instructions("Click \"open"),
            Err(InstructionError::UnterminatedQuote(_))
        ));
        assert!(parse_instructions("Type into \"a\" \"b\"").is_err());
    }

    #[test]
    fn slot_markers_survive_quoting() {
        let text = "Type \"<destination city>\" into \"To\"";
        let parsed = parse_instructions(text).unwrap();
        assert_eq!(render_instructions(&parsed), text);
    }

    proptest! {
        #[test]
        fn type_text_round_trips(target in "[A-Za-z][A-Za-z ;\"\\\\]{0,12}", text in "[ -~]{0,16}") {
            let cmd: Instruction = ActionCommand::TypeText { target: target.clone(), text }.into();
            let rendered = cmd.to_string();
            let parsed = parse_instructions(&rendered).unwrap();
            prop_assert_eq!(parsed, vec![cmd]);
        }
    }
}
