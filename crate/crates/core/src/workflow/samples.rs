//! Small hand-built documents shared by unit and integration tests.

use serde_json::Map;

use super::{
    Bindings, CommandSeq, ConditionCheck, FallbackAction, Origin, Phase, Predicate, StepUnit,
    WorkflowDoc,
};
use crate::env::action::ActionCommand;

pub fn bindings(pairs: &[(&str, &str)]) -> Bindings {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

pub fn check(id: &str, phase: Phase, text: &str, predicate: Option<Predicate>) -> ConditionCheck {
    ConditionCheck {
        check_id: id.into(),
        phase,
        nl_text: text.into(),
        predicate,
        origin: Origin::Synthesized,
        evidence: vec![],
        extra: Map::new(),
    }
}

pub fn fallback(id: &str, rank: u32, text: &str, steps: Vec<ActionCommand>) -> FallbackAction {
    FallbackAction {
        fallback_id: id.into(),
        rank,
        nl_text: text.into(),
        command: if steps.is_empty() { None } else { Some(CommandSeq { steps }) },
        origin: Origin::Synthesized,
        evidence: vec![],
        extra: Map::new(),
    }
}

/// A well-formed document with `n` units, each carrying one pre-check, one
/// post-check and two fallbacks.
pub fn sample_doc(n: usize) -> WorkflowDoc {
    let units = (0..n)
        .map(|i| StepUnit {
            index: i,
            action_text: format!("Click \"Next {i}\""),
            pre_checks: vec![check(
                &format!("pre-{i}"),
                Phase::Pre,
                &format!("Before doing step {i}, ensure no overlay is blocking the page"),
                Some(Predicate::NoOverlay),
            )],
            post_checks: vec![check(
                &format!("post-{i}"),
                Phase::Post,
                &format!("After doing step {i}, ensure \"Field {i}\" shows \"Paris\""),
                Some(Predicate::FieldValue { target: format!("Field {i}"), value: "Paris".into() }),
            )],
            fallbacks: vec![
                fallback(
                    &format!("fb-{i}-1"),
                    1,
                    "Retry performing the step by clicking \"No thanks\" first",
                    vec![ActionCommand::Click { target: "No thanks".into() }],
                ),
                fallback(&format!("fb-{i}-2"), 2, "Retry performing the step by scrolling down", vec![]),
            ],
            extra: Map::new(),
        })
        .collect();
    WorkflowDoc::new("wf-sample", "flight-search", units)
}
