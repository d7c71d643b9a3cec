use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Origin, Phase, WorkflowDoc, WORKFLOW_SCHEMA};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            Some(u) => write!(f, "unit {u}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Reports every broken invariant; never fails.
pub fn validate_workflow(doc: &WorkflowDoc) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut doc_level = |field: &str, message: String| {
        out.push(Violation { unit: None, field: field.to_string(), message })
    };
    if doc.schema != WORKFLOW_SCHEMA {
        doc_level("schema", format!("unsupported schema {:?}", doc.schema));
    }
    if doc.version < 1 {
        doc_level("version", "version ≥ 1 required".to_string());
    }
    if doc.workflow_id.trim().is_empty() {
        doc_level("workflow_id", "empty".to_string());
    }
    if doc.family_id.trim().is_empty() {
        doc_level("family_id", "empty".to_string());
    }

    let mut check_ids = BTreeSet::new();
    let mut fallback_ids = BTreeSet::new();
    for (pos, unit) in doc.units.iter().enumerate() {
        let mut push = |field: &str, message: String| {
            out.push(Violation { unit: Some(pos), field: field.to_string(), message })
        };
        if unit.index != pos {
            push("index", format!("expected index {pos}, found {}", unit.index));
        }
        if unit.action_text.trim().is_empty() {
            push("action_text", "empty".to_string());
        }
        for (list, phase, field) in [
            (&unit.pre_checks, Phase::Pre, "pre_checks"),
            (&unit.post_checks, Phase::Post, "post_checks"),
        ] {
            for check in list.iter() {
                if check.phase != phase {
                    push(field, format!("check {} has phase {:?}", check.check_id, check.phase));
                }
                if check.nl_text.trim().is_empty() {
                    push(field, format!("check {} has empty nl_text", check.check_id));
                }
                if !check_ids.insert(check.check_id.clone()) {
                    push(field, format!("duplicate check_id {}", check.check_id));
                }
                if let Some(p) = &check.predicate {
                    if p.texts().iter().any(|t| t.trim().is_empty()) {
                        push(field, format!("check {} has an empty predicate argument", check.check_id));
                    }
                }
            }
        }
        let mut ranks: Vec<u32> = unit.fallbacks.iter().map(|f| f.rank).collect();
        ranks.sort_unstable();
        for f in &unit.fallbacks {
            if f.nl_text.trim().is_empty() {
                push("fallbacks", format!("fallback {} has empty nl_text", f.fallback_id));
            }
            if !fallback_ids.insert(f.fallback_id.clone()) {
                push("fallbacks", format!("duplicate fallback_id {}", f.fallback_id));
            }
        }
        if ranks.windows(2).any(|w| w[0] == w[1]) {
            push("fallbacks", "duplicate rank".to_string());
        }
        let mut dedup = ranks.clone();
        dedup.dedup();
        if dedup.iter().enumerate().any(|(i, r)| *r != i as u32 + 1) {
            push("fallbacks", format!("rank gap: ranks {dedup:?} are not contiguous from 1"));
        }
    }

    for note in doc.guidance_notes() {
        for id in &note.parsed_into {
            let origin = doc
                .units
                .iter()
                .flat_map(|u| {
                    u.checks()
                        .filter(|c| &c.check_id == id)
                        .map(|c| c.origin)
                        .chain(u.fallbacks.iter().filter(|f| &f.fallback_id == id).map(|f| f.origin))
                })
                .next();
            match origin {
                Some(Origin::UserGuidance) => {}
                Some(Origin::Synthesized) => out.push(Violation {
                    unit: None,
                    field: "provenance".into(),
                    message: format!("note {} lists synthesized item {id}", note.note_id),
                }),
                None => out.push(Violation {
                    unit: None,
                    field: "provenance".into(),
                    message: format!("note {} lists unknown item {id}", note.note_id),
                }),
            }
        }
    }
    out
}
