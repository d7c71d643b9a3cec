//! Item-level differences between two versions of a workflow.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ConditionCheck, FallbackAction, Origin, StepUnit, WorkflowDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    PreCheck,
    PostCheck,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum Change {
    Added,
    Removed,
    /// Same id, different content; `fields` names what differs.
    Changed { fields: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffItem {
    pub kind: ItemKind,
    pub id: String,
    pub origin: Origin,
    pub text: String,
    #[serde(flatten)]
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitDiff {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_change: Option<Change>,
    pub items: Vec<DiffItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiffReport {
    pub from_version: u32,
    pub to_version: u32,
    pub units: Vec<UnitDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot diff workflows of different families ({0} vs {1})")]
pub struct FamilyMismatch(pub String, pub String);

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Plain-text rendering; user-guidance items are wrapped in ANSI blue
    /// when `color` is set and marked `[guidance]` otherwise.
    pub fn render(&self, color: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "workflow v{} -> v{}", self.from_version, self.to_version);
        for unit in &self.units {
            let _ = match &unit.unit_change {
                Some(c) => writeln!(out, "unit {} ({})", unit.index, change_word(c)),
                None => writeln!(out, "unit {}", unit.index),
            };
            for item in &unit.items {
                let sign = match item.change {
                    Change::Added => "+",
                    Change::Removed => "-",
                    Change::Changed { .. } => "~",
                };
                let mut line = format!("  {sign} {:?} {}: {}", item.kind, item.id, item.text);
                if let Change::Changed { fields } = &item.change {
                    let _ = write!(line, " [{}]", fields.join(", "));
                }
                if item.origin == Origin::UserGuidance {
                    line = if color {
                        format!("\x1b[34m{line}\x1b[0m")
                    } else {
                        format!("{line} [guidance]")
                    };
                }
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }
}

fn change_word(c: &Change) -> &'static str {
    match c {
        Change::Added => "added",
        Change::Removed => "removed",
        Change::Changed { .. } => "changed",
    }
}

struct Item<'a> {
    kind: ItemKind,
    id: &'a str,
    origin: Origin,
    text: &'a str,
    value: serde_json::Value,
}

fn check_item(kind: ItemKind, c: &ConditionCheck) -> Item<'_> {
    Item {
        kind,
        id: &c.check_id,
        origin: c.origin,
        text: &c.nl_text,
        value: serde_json::to_value(c).expect("check serializes"),
    }
}

fn fallback_item(f: &FallbackAction) -> Item<'_> {
    Item {
        kind: ItemKind::Fallback,
        id: &f.fallback_id,
        origin: f.origin,
        text: &f.nl_text,
        value: serde_json::to_value(f).expect("fallback serializes"),
    }
}

fn unit_items(unit: &StepUnit) -> BTreeMap<(u8, &str), Item<'_>> {
    let mut map = BTreeMap::new();
    for c in &unit.pre_checks {
        map.insert((0, c.check_id.as_str()), check_item(ItemKind::PreCheck, c));
    }
    for c in &unit.post_checks {
        map.insert((1, c.check_id.as_str()), check_item(ItemKind::PostCheck, c));
    }
    for f in &unit.fallbacks {
        map.insert((2, f.fallback_id.as_str()), fallback_item(f));
    }
    map
}

fn changed_fields(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return vec!["value".into()];
    };
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect()
}

fn to_diff(item: &Item<'_>, change: Change) -> DiffItem {
    DiffItem {
        kind: item.kind,
        id: item.id.to_string(),
        origin: item.origin,
        text: item.text.to_string(),
        change,
    }
}

/// Items are matched by id within each unit, so re-ranking a fallback shows
/// up as a `rank` change rather than a remove/add pair.
pub fn diff_workflows(old: &WorkflowDoc, new: &WorkflowDoc) -> Result<DiffReport, FamilyMismatch> {
    if old.family_id != new.family_id {
        return Err(FamilyMismatch(old.family_id.clone(), new.family_id.clone()));
    }
    let mut units = Vec::new();
    let n = old.units.len().max(new.units.len());
    for i in 0..n {
        let (a, b) = (old.units.get(i), new.units.get(i));
        let empty = BTreeMap::new();
        let a_items = a.map(unit_items).unwrap_or_default();
        let b_items = b.map(unit_items).unwrap_or_default();
        let (a_items, b_items) = (
            if a.is_some() { &a_items } else { &empty },
            if b.is_some() { &b_items } else { &empty },
        );
        let mut items = Vec::new();
        for (key, item) in a_items {
            match b_items.get(key) {
                None => items.push(to_diff(item, Change::Removed)),
                Some(other) if other.value != item.value => {
                    let fields = changed_fields(&item.value, &other.value);
                    items.push(to_diff(other, Change::Changed { fields }));
                }
                Some(_) => {}
            }
        }
        for (key, item) in b_items {
            if !a_items.contains_key(key) {
                items.push(to_diff(item, Change::Added));
            }
        }
        let unit_change = match (a, b) {
            (None, Some(_)) => Some(Change::Added),
            (Some(_), None) => Some(Change::Removed),
            (Some(x), Some(y)) if x.action_text != y.action_text => {
                Some(Change::Changed { fields: vec!["action_text".into()] })
            }
            _ => None,
        };
        if unit_change.is_some() || !items.is_empty() {
            units.push(UnitDiff { index: i, unit_change, items });
        }
    }
    Ok(DiffReport { from_version: old.version, to_version: new.version, units })
}
