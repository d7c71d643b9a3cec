//! Slot markers in task templates and workflow texts.
//!
//! A slot is written `<name>`; names may contain spaces. A literal `<` is
//! written `<<`. Generic text (text that may contain markers) is always kept
//! in escaped form; bound text is plain.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Lit(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SlotError {
    #[error("missing binding for slot <{0}>")]
    MissingSlot(String),
    #[error("slots <{0}> and <{1}> bind the same literal")]
    AmbiguousLiteral(String, String),
    #[error("slot <{0}> binds an empty literal")]
    EmptyLiteral(String),
}

/// Splits generic text into literal and slot segments.
///
/// A `<` that is not followed by a closing `>` on the same line is kept as a
/// literal character.
pub fn parse_segments(text: &str) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    let mut lit = String::new();
    let mut rest = text;
    while let Some(pos) = rest.find('<') {
        lit.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        if let Some(stripped) = after.strip_prefix('<') {
            lit.push('<');
            rest = stripped;
            continue;
        }
        match after.find(['>', '<', '\n']) {
            Some(end) if after.as_bytes()[end] == b'>' && end > 0 => {
                if !lit.is_empty() {
                    out.push(Segment::Lit(std::mem::take(&mut lit)));
                }
                out.push(Segment::Slot(after[..end].to_string()));
                rest = &after[end + 1..];
            }
            _ => {
                lit.push('<');
                rest = after;
            }
        }
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        out.push(Segment::Lit(lit));
    }
    out
}

pub fn escape_literal(text: &str) -> String {
    text.replace('<', "<<")
}

/// Renders segments back to generic (escaped) text.
pub fn render_generic(segments: &[Segment]) -> String {
    let mut out = String::new();
    for seg in segments {
        match seg {
            Segment::Lit(l) => out.push_str(&escape_literal(l)),
            Segment::Slot(s) => {
                out.push('<');
                out.push_str(s);
                out.push('>');
            }
        }
    }
    out
}

/// Slot names appearing in generic text, in order of first appearance.
pub fn slot_names(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    parse_segments(text)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Slot(n) if seen.insert(n.clone()) => Some(n),
            _ => None,
        })
        .collect()
}

/// Substitutes every marker; fails on the first uncovered slot.
pub fn bind_text(text: &str, bindings: &Bindings) -> Result<String, SlotError> {
    let mut out = String::new();
    for seg in parse_segments(text) {
        match seg {
            Segment::Lit(l) => out.push_str(&l),
            Segment::Slot(name) => match bindings.get(&name) {
                Some(v) => out.push_str(v),
                None => return Err(SlotError::MissingSlot(name)),
            },
        }
    }
    Ok(out)
}

/// Substitutes covered markers and leaves the rest as markers (generic form).
pub fn bind_partial(text: &str, bindings: &Bindings) -> String {
    let segs: Vec<Segment> = parse_segments(text)
        .into_iter()
        .map(|seg| match seg {
            Segment::Slot(name) => match bindings.get(&name) {
                Some(v) => Segment::Lit(v.clone()),
                None => Segment::Slot(name),
            },
            lit => lit,
        })
        .collect();
    render_generic(&segs)
}

/// Bound literals ordered longest first (ties broken by slot name).
pub fn replacement_order(bindings: &Bindings) -> Result<Vec<(&str, &str)>, SlotError> {
    let mut by_value: BTreeMap<&str, &str> = BTreeMap::new();
    for (name, value) in bindings {
        if value.is_empty() {
            return Err(SlotError::EmptyLiteral(name.clone()));
        }
        if let Some(prev) = by_value.insert(value.as_str(), name.as_str()) {
            return Err(SlotError::AmbiguousLiteral(prev.to_string(), name.clone()));
        }
    }
    let mut pairs: Vec<(&str, &str)> = bindings.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    pairs.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
    Ok(pairs)
}

/// Replaces bound literals in plain text with markers, longest literal first.
/// Markers produced earlier are never rewritten by later replacements.
pub fn genericize_text(text: &str, order: &[(&str, &str)]) -> String {
    let mut segs = vec![Segment::Lit(text.to_string())];
    for (name, literal) in order {
        let mut next = Vec::with_capacity(segs.len());
        for seg in segs {
            match seg {
                Segment::Lit(l) => {
                    let mut rest = l.as_str();
                    while let Some(pos) = rest.find(literal) {
                        if pos > 0 {
                            next.push(Segment::Lit(rest[..pos].to_string()));
                        }
                        next.push(Segment::Slot(name.to_string()));
                        rest = &rest[pos + literal.len()..];
                    }
                    if !rest.is_empty() {
                        next.push(Segment::Lit(rest.to_string()));
                    }
                }
                slot => next.push(slot),
            }
        }
        segs = next;
    }
    render_generic(&segs)
}
