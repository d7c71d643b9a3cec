use serde::{Deserialize, Serialize};

use crate::env::page::{PageSnapshot, Role};

/// Structured condition over a single page snapshot.
///
/// Evaluation is pure and total: a well-formed snapshot always yields a
/// verdict plus an explanation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Exists { target: String },
    NotExists { target: String },
    TextEquals { target: String, value: String },
    FieldValue { target: String, value: String },
    UrlContains { substring: String },
    NoOverlay,
    CountAtLeast { target: String, n: u32 },
    /// Conjunction; produced when overflowing checks are merged.
    AllOf { all: Vec<Predicate> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub passed: bool,
    pub explanation: String,
}

impl Evaluation {
    fn pass(explanation: impl Into<String>) -> Self {
        Evaluation { passed: true, explanation: explanation.into() }
    }
    fn fail(explanation: impl Into<String>) -> Self {
        Evaluation { passed: false, explanation: explanation.into() }
    }
}

impl Predicate {
    pub fn evaluate(&self, snap: &PageSnapshot) -> Evaluation {
        match self {
            Predicate::Exists { target } => match snap.resolve(target) {
                Ok(_) => Evaluation::pass(format!("\"{target}\" is visible")),
                Err(reason) => Evaluation::fail(format!("\"{target}\" is not available ({reason:?})")),
            },
            Predicate::NotExists { target } => match snap.resolve(target) {
                Ok(_) => Evaluation::fail(format!("\"{target}\" is still visible")),
                Err(_) => Evaluation::pass(format!("\"{target}\" is absent")),
            },
            Predicate::TextEquals { target, value } => compare(snap, target, value, None),
            Predicate::FieldValue { target, value } => {
                compare(snap, target, value, Some(&[Role::Textbox, Role::Select]))
            }
            Predicate::UrlContains { substring } => {
                if snap.url.contains(substring.as_str()) {
                    Evaluation::pass(format!("URL contains \"{substring}\""))
                } else {
                    Evaluation::fail(format!("URL {} does not contain \"{substring}\"", snap.url))
                }
            }
            Predicate::NoOverlay => match snap.overlays.first() {
                None => Evaluation::pass("no overlay is shown"),
                Some(o) => Evaluation::fail(format!("overlay \"{}\" is blocking the page", o.label)),
            },
            Predicate::CountAtLeast { target, n } => {
                let count = snap
                    .elements
                    .iter()
                    .filter(|e| e.visible && e.matches_label(target))
                    .count();
                if count >= *n as usize {
                    Evaluation::pass(format!("{count} \"{target}\" elements visible"))
                } else {
                    Evaluation::fail(format!("expected at least {n} \"{target}\" elements, found {count}"))
                }
            }
            Predicate::AllOf { all } => {
                let mut failures = Vec::new();
                for p in all {
                    let e = p.evaluate(snap);
                    if !e.passed {
                        failures.push(e.explanation);
                    }
                }
                if failures.is_empty() {
                    Evaluation::pass("all conditions hold")
                } else {
                    Evaluation::fail(failures.join("; "))
                }
            }
        }
    }

    /// Rewrites every free-text argument.
    pub fn map_text(&self, f: &mut impl FnMut(&str) -> String) -> Predicate {
        match self {
            Predicate::Exists { target } => Predicate::Exists { target: f(target) },
            Predicate::NotExists { target } => Predicate::NotExists { target: f(target) },
            Predicate::TextEquals { target, value } => Predicate::TextEquals {
                target: f(target),
                value: f(value),
            },
            Predicate::FieldValue { target, value } => Predicate::FieldValue {
                target: f(target),
                value: f(value),
            },
            Predicate::UrlContains { substring } => Predicate::UrlContains { substring: f(substring) },
            Predicate::NoOverlay => Predicate::NoOverlay,
            Predicate::CountAtLeast { target, n } => Predicate::CountAtLeast { target: f(target), n: *n },
            Predicate::AllOf { all } => Predicate::AllOf {
                all: all.iter().map(|p| p.map_text(f)).collect(),
            },
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        match self {
            Predicate::Exists { target } | Predicate::NotExists { target } => vec![target],
            Predicate::TextEquals { target, value } | Predicate::FieldValue { target, value } => {
                vec![target, value]
            }
            Predicate::UrlContains { substring } => vec![substring],
            Predicate::NoOverlay => vec![],
            Predicate::CountAtLeast { target, .. } => vec![target],
            Predicate::AllOf { all } => all.iter().flat_map(|p| p.texts()).collect(),
        }
    }
}

fn compare(snap: &PageSnapshot, target: &str, expected: &str, roles: Option<&[Role]>) -> Evaluation {
    let found = snap
        .elements
        .iter()
        .find(|e| e.visible && e.matches_label(target) && roles.is_none_or(|r| r.contains(&e.role)));
    match found {
        None => Evaluation::fail(format!("\"{target}\" not found; expected \"{expected}\"")),
        Some(el) if el.text_value == expected => {
            Evaluation::pass(format!("\"{target}\" shows \"{expected}\""))
        }
        Some(el) => Evaluation::fail(format!(
            "\"{target}\" shows \"{}\" but expected \"{expected}\"",
            el.text_value
        )),
    }
}
