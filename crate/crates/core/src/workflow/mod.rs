//! Tasks, guarded workflows and their file format.

pub mod diff;
pub mod format;
pub mod predicate;
pub mod rewrite;
pub mod slots;
pub mod validate;
#[doc(hidden)]
pub mod samples;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::action::ActionCommand;
pub use predicate::Predicate;
pub use slots::Bindings;

pub const WORKFLOW_SCHEMA: &str = "guardweave.workflow/1";

/// A task instance: a slot-bearing template plus bindings for a target site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family_id: String,
    pub template: String,
    #[serde(default)]
    pub bindings: Bindings,
    pub site: String,
    /// Slots deliberately left without a value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unbound: Vec<String>,
}

impl TaskSpec {
    pub fn slots(&self) -> Vec<String> {
        slots::slot_names(&self.template)
    }

    /// Slots that are neither bound nor declared unbound.
    pub fn dangling_slots(&self) -> Vec<String> {
        self.slots()
            .into_iter()
            .filter(|s| !self.bindings.contains_key(s) && !self.unbound.contains(s))
            .collect()
    }

    /// Renders bound slots; unbound slots stay as markers.
    pub fn render(&self) -> String {
        slots::bind_partial(&self.template, &self.bindings)
            .replace("<<", "<")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationKind {
    Attribute,
    Category,
    Website,
}

impl VariationKind {
    pub const ALL: [VariationKind; 3] =
        [VariationKind::Attribute, VariationKind::Category, VariationKind::Website];

    pub fn as_str(self) -> &'static str {
        match self {
            VariationKind::Attribute => "attribute",
            VariationKind::Category => "category",
            VariationKind::Website => "website",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub fn word(self) -> &'static str {
        match self {
            Phase::Pre => "Before",
            Phase::Post => "After",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Synthesized,
    UserGuidance,
}

/// Pointer to the trace event (or guidance note) an item was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_id: Option<String>,
}

impl EvidenceRef {
    pub fn event(run_id: impl Into<String>, event_index: usize) -> Self {
        EvidenceRef { run_id: run_id.into(), event_index: Some(event_index), note_id: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub check_id: String,
    pub phase: Phase,
    pub nl_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<EvidenceRef>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Ordered command sequence attached to a fallback.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommandSeq {
    pub steps: Vec<ActionCommand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackAction {
    pub fallback_id: String,
    pub rank: u32,
    pub nl_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandSeq>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<EvidenceRef>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepUnit {
    pub index: usize,
    pub action_text: String,
    #[serde(default)]
    pub pre_checks: Vec<ConditionCheck>,
    #[serde(default)]
    pub post_checks: Vec<ConditionCheck>,
    #[serde(default)]
    pub fallbacks: Vec<FallbackAction>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl StepUnit {
    pub fn checks(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.pre_checks.iter().chain(self.post_checks.iter())
    }

    pub fn fallbacks_by_rank(&self) -> Vec<&FallbackAction> {
        let mut out: Vec<&FallbackAction> = self.fallbacks.iter().collect();
        out.sort_by_key(|f| f.rank);
        out
    }

    pub fn next_rank(&self) -> u32 {
        self.fallbacks.iter().map(|f| f.rank).max().unwrap_or(0) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceNote {
    pub note_id: String,
    pub run_id: String,
    pub raw_text: String,
    #[serde(default)]
    pub target_unit: usize,
    #[serde(default)]
    pub parsed_into: Vec<String>,
    /// Set when the text could not be classified and was kept verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProvenanceEntry {
    Synthesis { source_runs: Vec<String> },
    Guidance { note: GuidanceNote },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDoc {
    pub schema: String,
    pub workflow_id: String,
    pub family_id: String,
    pub version: u32,
    pub units: Vec<StepUnit>,
    #[serde(default)]
    pub provenance: Vec<ProvenanceEntry>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl WorkflowDoc {
    pub fn new(workflow_id: impl Into<String>, family_id: impl Into<String>, units: Vec<StepUnit>) -> Self {
        WorkflowDoc {
            schema: WORKFLOW_SCHEMA.to_string(),
            workflow_id: workflow_id.into(),
            family_id: family_id.into(),
            version: 1,
            units,
            provenance: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn source_runs(&self) -> Vec<&str> {
        self.provenance
            .iter()
            .filter_map(|p| match p {
                ProvenanceEntry::Synthesis { source_runs } => Some(source_runs),
                _ => None,
            })
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn guidance_notes(&self) -> impl Iterator<Item = &GuidanceNote> {
        self.provenance.iter().filter_map(|p| match p {
            ProvenanceEntry::Guidance { note } => Some(note),
            _ => None,
        })
    }

    pub fn item_count(&self) -> usize {
        self.units
            .iter()
            .map(|u| u.pre_checks.len() + u.post_checks.len() + u.fallbacks.len())
            .sum()
    }
}
