//! Workflow synthesis from labelled exploration runs.

pub mod findings;
pub mod plan;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::digest::content_id;
use crate::env::action::render_instructions;
use crate::explorer::RunLedger;
use crate::trace::RunArtifacts;
use crate::workflow::{
    CommandSeq, ConditionCheck, EvidenceRef, FallbackAction, Origin, Phase, ProvenanceEntry, StepUnit, WorkflowDoc,
};

pub use findings::{
    extract_condition_checks, extract_fallbacks, step_views, ChallengeFinding, Dropped, ErrorPattern, Generic,
    RecoveryFinding, StepView,
};
pub use plan::{learn_plan, PlanSkeleton, PlanStep};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("run {0} has no successful commands to learn from")]
    EmptyTrace(String),
    #[error("family {0} has no successful run")]
    NoSuccessfulRun(String),
    #[error("finding refers to step {0}, which the plan does not have")]
    IndexOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub family_id: String,
    pub workflow_id: String,
    pub skeleton_source: String,
    pub findings: Vec<ChallengeFinding>,
    pub recoveries: Vec<RecoveryFinding>,
    pub dropped: Vec<Dropped>,
    /// Units with challenges that no successful run showed a way around.
    pub no_recovery_steps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub workflow: WorkflowDoc,
    pub report: SynthesisReport,
}

/// Builds the generic workflow document. Identical inputs give a
/// byte-identical document.
pub fn assemble_workflow(
    family_id: &str,
    views: &[StepView],
    action_texts: &[String],
    findings: &[ChallengeFinding],
    recoveries: &[RecoveryFinding],
    source_runs: &[String],
) -> Result<WorkflowDoc, SynthError> {
    let mut units: Vec<StepUnit> = action_texts
        .iter()
        .enumerate()
        .map(|(index, text)| StepUnit {
            index,
            action_text: text.clone(),
            pre_checks: vec![],
            post_checks: vec![],
            fallbacks: vec![],
            extra: Map::new(),
        })
        .collect();
    debug_assert_eq!(views.len(), units.len());
    for f in findings {
        let unit = units.get_mut(f.step_index).ok_or(SynthError::IndexOutOfRange(f.step_index))?;
        let pred = f.predicate.as_ref().map(|p| serde_json::to_string(p).expect("predicate serializes")).unwrap_or_default();
        let check = ConditionCheck {
            check_id: content_id("chk", &[&unit.index.to_string(), f.phase.word(), &f.nl_text, &pred]),
            phase: f.phase,
            nl_text: f.nl_text.clone(),
            predicate: f.predicate.clone(),
            origin: Origin::Synthesized,
            evidence: f.evidence.clone(),
            extra: Map::new(),
        };
        match f.phase {
            Phase::Pre => unit.pre_checks.push(check),
            Phase::Post => unit.post_checks.push(check),
        }
    }
    for r in recoveries {
        let unit = units.get_mut(r.step_index).ok_or(SynthError::IndexOutOfRange(r.step_index))?;
        let steps = serde_json::to_string(&r.commands).expect("commands serialize");
        let rank = unit.next_rank();
        unit.fallbacks.push(FallbackAction {
            fallback_id: content_id("fb", &[&unit.index.to_string(), &r.nl_text, &steps]),
            rank,
            nl_text: r.nl_text.clone(),
            command: Some(CommandSeq { steps: r.commands.clone() }),
            origin: Origin::Synthesized,
            evidence: r.evidence.clone(),
            extra: Map::new(),
        });
    }
    let mut id_parts: Vec<&str> = vec![family_id];
    id_parts.extend(action_texts.iter().map(String::as_str));
    let mut doc = WorkflowDoc::new(content_id("wf", &id_parts), family_id, units);
    let mut runs = source_runs.to_vec();
    runs.sort();
    runs.dedup();
    doc.provenance.push(ProvenanceEntry::Synthesis { source_runs: runs });
    Ok(doc)
}

/// Number of task slots a skeleton's steps refer to.
fn slot_coverage(skeleton: &PlanSkeleton, bindings: &crate::workflow::Bindings) -> usize {
    let g = Generic::new(bindings);
    let text: String = skeleton.steps.iter().map(|s| g.text(&render_instructions(&s.instructions))).collect();
    crate::workflow::slots::slot_names(&text).len()
}

/// Learns the skeleton from the successful run that uses the most task
/// slots (then the shortest, then ledger order), then mines failed runs for checks and successful runs for fallbacks.
pub fn synth_family(ledger: &RunLedger, runs: &[RunArtifacts]) -> Result<Synthesis, SynthError> {
    let by_id: BTreeMap<&str, &RunArtifacts> = runs.iter().map(|r| (r.record.run_id.as_str(), r)).collect();
    let success: Vec<&RunArtifacts> = ledger.successful.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
    let failed: Vec<&RunArtifacts> = ledger.failed.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
    let mut learned = vec![];
    let mut last_err = SynthError::NoSuccessfulRun(ledger.family_id.clone());
    for (order, run) in success.iter().enumerate() {
        match learn_plan(run) {
            Ok(s) => {
                let coverage = slot_coverage(&s, &run.record.task.bindings);
                learned.push(((std::cmp::Reverse(coverage), run.log.events.len(), order), *run, s));
            }
            Err(e) => last_err = e,
        }
    }
    learned.sort_by(|a, b| a.0.cmp(&b.0));
    let (_, source_run, skeleton) = learned.into_iter().next().ok_or(last_err)?;
    let bindings = &source_run.record.task.bindings;
    let views = step_views(&skeleton, bindings);
    let g = Generic::new(bindings);
    let action_texts: Vec<String> = skeleton.steps.iter().map(|s| g.text(&render_instructions(&s.instructions))).collect();

    let checks = extract_condition_checks(&failed, &views);
    let fallbacks = extract_fallbacks(&success, &views, &checks.findings);
    let wrong_value_only: Vec<usize> = fallbacks
        .no_recovery_evidence
        .iter()
        .copied()
        .filter(|s| checks.findings.iter().any(|f| f.step_index == *s && f.pattern != ErrorPattern::WrongValue))
        .collect();
    let source_runs: Vec<String> = runs.iter().map(|r| r.record.run_id.clone()).collect();
    let workflow = assemble_workflow(&ledger.family_id, &views, &action_texts, &checks.findings, &fallbacks.recoveries, &source_runs)?;
    let report = SynthesisReport {
        family_id: ledger.family_id.clone(),
        workflow_id: workflow.workflow_id.clone(),
        skeleton_source: skeleton.source_run.clone(),
        findings: checks.findings,
        recoveries: fallbacks.recoveries,
        dropped: checks.dropped,
        no_recovery_steps: wrong_value_only,
    };
    Ok(Synthesis { workflow, report })
}

/// Synthesized items whose evidence does not resolve: every check must cite
/// an event of a failed run and every fallback an event of a successful run.
pub fn audit_provenance(doc: &WorkflowDoc, ledger: &RunLedger, runs: &[RunArtifacts]) -> Vec<String> {
    let by_id: BTreeMap<&str, &RunArtifacts> = runs.iter().map(|r| (r.record.run_id.as_str(), r)).collect();
    let resolves = |ev: &EvidenceRef, pool: &[String]| {
        pool.contains(&ev.run_id)
            && match (by_id.get(ev.run_id.as_str()), ev.event_index) {
                (Some(run), Some(i)) => i < run.events().len(),
                _ => false,
            }
    };
    let mut out = vec![];
    for unit in &doc.units {
        for c in unit.checks().filter(|c| c.origin == Origin::Synthesized) {
            if !c.evidence.iter().any(|e| resolves(e, &ledger.failed)) {
                out.push(format!("unit {} check {} cites no failed-run event", unit.index, c.check_id));
            }
        }
        for f in unit.fallbacks.iter().filter(|f| f.origin == Origin::Synthesized) {
            if !f.evidence.iter().any(|e| resolves(e, &ledger.successful)) {
                out.push(format!("unit {} fallback {} cites no successful-run event", unit.index, f.fallback_id));
            }
        }
    }
    out
}
