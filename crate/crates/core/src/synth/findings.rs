//! Challenges found in failed runs and recoveries found in successful ones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::env::action::{quote, ActionCommand};
use crate::env::page::OutcomeStatus;
use crate::trace::RunArtifacts;
use crate::workflow::slots::{bind_text, genericize_text, replacement_order};
use crate::workflow::{Bindings, EvidenceRef, Phase, Predicate};

use super::plan::{event_page, is_incidental, PlanSkeleton};

/// Phrases that mark an agent message as describing a failure.
pub const FAILURE_LEXICON: [&str; 6] = ["failed to", "didn't", "couldn't", "inactive", "can't be located", "doesn't load"];

pub const MAX_CHECKS_PER_PHASE: usize = 3;
pub const MAX_FALLBACKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorPattern {
    NotLocated,
    Inactive,
    NotLoaded,
    Intercepted,
    WrongValue,
    PartialAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeFinding {
    pub step_index: usize,
    pub pattern: ErrorPattern,
    pub phase: Phase,
    /// Generic element label the finding is about, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub nl_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryFinding {
    pub step_index: usize,
    pub source_run: String,
    pub commands: Vec<ActionCommand>,
    pub nl_text: String,
    /// One reference per supporting successful run.
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_index: Option<usize>,
    pub reason: String,
}

/// Replaces a run's bound values with slot markers.
pub struct Generic {
    order: Vec<(String, String)>,
}

impl Generic {
    pub fn new(bindings: &Bindings) -> Self {
        let order = replacement_order(bindings)
            .map(|o| o.into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
            .unwrap_or_default();
        Generic { order }
    }

    pub fn text(&self, s: &str) -> String {
        let order: Vec<(&str, &str)> = self.order.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        genericize_text(s, &order)
    }

    pub fn cmd(&self, c: &ActionCommand) -> ActionCommand {
        c.map_text(|s| self.text(s))
    }

    pub fn pred(&self, p: &Predicate) -> Predicate {
        p.map_text(&mut |s| self.text(s))
    }
}

/// Generic view of one skeleton step.
#[derive(Debug, Clone)]
pub struct StepView {
    pub page_key: String,
    pub leads: Vec<ActionCommand>,
    pub targets: Vec<String>,
    pub expected: Vec<Predicate>,
}

pub fn step_views(skeleton: &PlanSkeleton, bindings: &Bindings) -> Vec<StepView> {
    let g = Generic::new(bindings);
    skeleton
        .steps
        .iter()
        .map(|s| StepView {
            page_key: s.page_key.clone(),
            leads: s.lead_commands().iter().map(|c| g.cmd(c)).collect(),
            targets: s.targets().iter().map(|t| g.text(t)).collect(),
            expected: s.expected.iter().map(|p| g.pred(p)).collect(),
        })
        .collect()
}

/// Picks the step an event belongs to: a step acting on the same element,
/// else one on the same page, preferring steps at or after `cursor`.
fn align(views: &[StepView], page: &str, target: Option<&str>, cursor: usize) -> usize {
    let pick = |matching: Vec<usize>| matching.iter().copied().find(|i| *i >= cursor).or_else(|| matching.first().copied());
    let by_target = target.and_then(|t| pick((0..views.len()).filter(|i| views[*i].targets.iter().any(|x| x == t)).collect()));
    by_target
        .or_else(|| pick((0..views.len()).filter(|i| views[*i].page_key == page).collect()))
        .unwrap_or(cursor)
}

fn lexicon_pattern(message: &str) -> Option<ErrorPattern> {
    let m = message.to_ascii_lowercase();
    if !FAILURE_LEXICON.iter().any(|w| m.contains(w)) && !m.contains("didn't load") {
        return None;
    }
    Some(if m.contains("inactive") {
        ErrorPattern::Inactive
    } else if m.contains("load") {
        ErrorPattern::NotLoaded
    } else if m.contains("can't be located") {
        ErrorPattern::NotLocated
    } else if m.contains("intercepted") {
        ErrorPattern::Intercepted
    } else {
        ErrorPattern::PartialAction
    })
}

fn pattern_of(status: &OutcomeStatus, message: &str) -> Option<ErrorPattern> {
    match status {
        OutcomeStatus::Ok => lexicon_pattern(message),
        OutcomeStatus::Intercepted { .. } => Some(ErrorPattern::Intercepted),
        OutcomeStatus::ElementNotFound => Some(ErrorPattern::NotLocated),
        OutcomeStatus::Disabled => Some(ErrorPattern::Inactive),
        OutcomeStatus::Timeout => Some(ErrorPattern::NotLoaded),
        OutcomeStatus::NoEffect => Some(lexicon_pattern(message).filter(|p| *p != ErrorPattern::PartialAction).unwrap_or(ErrorPattern::PartialAction)),
    }
}

struct Draft {
    step: usize,
    pattern: ErrorPattern,
    target: Option<String>,
    phase: Phase,
    nl_text: String,
    predicate: Option<Predicate>,
}

fn draft_for(pattern: ErrorPattern, cmd: &ActionCommand, view: &StepView, step: usize) -> Result<Draft, String> {
    let act = cmd.gerund();
    let target = cmd.target().map(str::to_string);
    let own_target = || match &target {
        Some(t) if view.targets.contains(t) => Ok(t.clone()),
        Some(t) => Err(format!("{} is not part of step {step}", quote(t))),
        None => Err("command has no target".to_string()),
    };
    let d = |phase, target: Option<String>, nl_text: String, predicate| Draft { step, pattern, target, phase, nl_text, predicate };
    Ok(match pattern {
        ErrorPattern::Intercepted => {
            d(Phase::Pre, None, format!("Before {act}, ensure no pop-up is blocking the page"), Some(Predicate::NoOverlay))
        }
        ErrorPattern::NotLocated => {
            let t = own_target()?;
            d(Phase::Pre, Some(t.clone()), format!("Before {act}, ensure {} can be located in view", quote(&t)), Some(Predicate::Exists { target: t }))
        }
        ErrorPattern::Inactive => {
            let t = own_target()?;
            d(Phase::Pre, Some(t.clone()), format!("Before {act}, ensure {} is active", quote(&t)), Some(Predicate::Exists { target: t }))
        }
        ErrorPattern::NotLoaded => {
            let first = view.targets.first().cloned();
            let predicate = first.clone().map(|target| Predicate::Exists { target });
            d(Phase::Pre, first, format!("Before {act}, ensure the page has finished loading"), predicate)
        }
        ErrorPattern::PartialAction => {
            let effect = target.as_ref().and_then(|t| {
                view.expected.iter().find(|p| matches!(p, Predicate::FieldValue { target, .. } if target == t)).cloned()
            });
            let text = match &effect {
                Some(Predicate::FieldValue { target, value }) => format!("After {act}, ensure {} holds {}", quote(target), quote(value)),
                _ => format!("After {act}, ensure the action took effect"),
            };
            d(Phase::Post, target, text, effect)
        }
        ErrorPattern::WrongValue => unreachable!("built from final page state"),
    })
}

#[derive(Debug, Clone, Default)]
pub struct CheckExtraction {
    pub findings: Vec<ChallengeFinding>,
    pub dropped: Vec<Dropped>,
}

/// Turns failing events of failed runs into condition-check findings.
pub fn extract_condition_checks(failed: &[&RunArtifacts], views: &[StepView]) -> CheckExtraction {
    let mut out = CheckExtraction::default();
    if views.is_empty() {
        return out;
    }
    let mut merged: BTreeMap<(usize, Phase, String), (Draft, BTreeSet<EvidenceRef>)> = BTreeMap::new();
    let mut add = |draft: Draft, ev: EvidenceRef| {
        let key = match &draft.predicate {
            Some(p) => serde_json::to_string(p).expect("predicate serializes"),
            None => format!("{:?}:{}", draft.pattern, draft.target.as_deref().unwrap_or("")),
        };
        merged
            .entry((draft.step, draft.phase, key))
            .or_insert_with(|| (draft, BTreeSet::new()))
            .1
            .insert(ev);
    };
    for run in failed {
        let run_id = &run.record.run_id;
        let g = Generic::new(&run.record.task.bindings);
        let log = &run.log;
        let mut cursor = 0;
        for (idx, ev) in log.events.iter().enumerate() {
            let page = event_page(log, ev);
            let cmd = g.cmd(&ev.command);
            if ev.status.is_ok() && is_incidental(log, ev) {
                continue;
            }
            let step = align(views, &page, cmd.target(), cursor);
            cursor = step;
            let Some(pattern) = pattern_of(&ev.status, &ev.message) else { continue };
            let lead = views[step].leads.iter().find(|l| l.target().is_some() && l.target() == cmd.target()).unwrap_or(&cmd);
            match draft_for(pattern, lead, &views[step], step) {
                Ok(d) => add(d, EvidenceRef::event(run_id.clone(), idx)),
                Err(reason) => out.dropped.push(Dropped { run_id: run_id.clone(), event_index: Some(idx), reason }),
            }
        }
        for (step, view) in views.iter().enumerate() {
            if view.expected.is_empty() {
                continue;
            }
            let mut last = None;
            for (idx, ev) in log.events.iter().enumerate() {
                for r in [&ev.snapshot_before, &ev.snapshot_after] {
                    if let Some(s) = log.snapshot(r).filter(|s| s.page_key() == view.page_key && !s.is_loading()) {
                        last = Some((idx, s));
                    }
                }
            }
            let Some((idx, snap)) = last else { continue };
            for p in &view.expected {
                let bound = p.map_text(&mut |s| bind_text(s, &run.record.task.bindings).unwrap_or_else(|_| s.to_string()));
                if bound.evaluate(snap).passed {
                    continue;
                }
                let Predicate::FieldValue { target, value } = p else { continue };
                let act = view.leads.iter().find(|l| l.target() == Some(target.as_str())).map(ActionCommand::gerund);
                let d = Draft {
                    step,
                    pattern: ErrorPattern::WrongValue,
                    target: Some(target.clone()),
                    phase: Phase::Post,
                    nl_text: format!(
                        "After {}, ensure {} holds {}",
                        act.unwrap_or_else(|| format!("filling in {}", quote(target))),
                        quote(target),
                        quote(value)
                    ),
                    predicate: Some(p.clone()),
                };
                add(d, EvidenceRef::event(run_id.clone(), idx));
            }
        }
    }
    let mut findings: Vec<ChallengeFinding> = merged
        .into_values()
        .map(|(d, ev)| ChallengeFinding {
            step_index: d.step,
            pattern: d.pattern,
            phase: d.phase,
            target: d.target,
            nl_text: d.nl_text,
            predicate: d.predicate,
            evidence: ev.into_iter().collect(),
        })
        .collect();
    findings = cap_per_phase(findings, &mut out.dropped);
    out.findings = findings;
    out
}

/// At most three checks per phase per step: same-pattern findings are merged
/// first, then the least evidenced are dropped.
fn cap_per_phase(findings: Vec<ChallengeFinding>, dropped: &mut Vec<Dropped>) -> Vec<ChallengeFinding> {
    let mut groups: BTreeMap<(usize, Phase), Vec<ChallengeFinding>> = BTreeMap::new();
    for f in findings {
        groups.entry((f.step_index, f.phase)).or_default().push(f);
    }
    let mut out = vec![];
    for (_, mut group) in groups {
        if group.len() > MAX_CHECKS_PER_PHASE {
            let mut by_pattern: BTreeMap<ErrorPattern, Vec<ChallengeFinding>> = BTreeMap::new();
            for f in group {
                by_pattern.entry(f.pattern).or_default().push(f);
            }
            group = by_pattern.into_values().map(merge).collect();
        }
        group.sort_by(|a, b| b.evidence.len().cmp(&a.evidence.len()).then(a.nl_text.cmp(&b.nl_text)));
        for extra in group.drain(MAX_CHECKS_PER_PHASE.min(group.len())..) {
            for ev in &extra.evidence {
                dropped.push(Dropped {
                    run_id: ev.run_id.clone(),
                    event_index: ev.event_index,
                    reason: format!("check limit reached on step {}: {}", extra.step_index, extra.nl_text),
                });
            }
        }
        out.extend(group);
    }
    out.sort_by(|a, b| (a.step_index, a.phase, a.pattern, &a.target).cmp(&(b.step_index, b.phase, b.pattern, &b.target)));
    out
}

fn merge(mut same: Vec<ChallengeFinding>) -> ChallengeFinding {
    if same.len() == 1 {
        return same.pop().expect("one finding");
    }
    let mut first = same[0].clone();
    let preds: Vec<Predicate> = same.iter().filter_map(|f| f.predicate.clone()).collect();
    first.predicate = (preds.len() == same.len()).then_some(Predicate::AllOf { all: preds });
    first.nl_text = same.iter().map(|f| f.nl_text.as_str()).collect::<Vec<_>>().join("; and ");
    first.target = None;
    let ev: BTreeSet<EvidenceRef> = same.into_iter().flat_map(|f| f.evidence).collect();
    first.evidence = ev.into_iter().collect();
    first
}

#[derive(Debug, Clone, Default)]
pub struct FallbackExtraction {
    pub recoveries: Vec<RecoveryFinding>,
    /// Steps with findings but nothing in the successful runs to learn from.
    pub no_recovery_evidence: Vec<usize>,
}

fn fallback_text(extras: &[ActionCommand], main: &ActionCommand) -> String {
    let how: Vec<String> = extras.iter().map(ActionCommand::gerund).collect();
    format!("Retry {} by {}, then {}", main.gerund(), how.join(", "), main.gerund())
}

/// Finds what runs did on a challenged step's page right before a
/// successful main command (scrolling, waiting, closing a pop-up) and ranks
/// those sequences by how many runs used them.
pub fn extract_fallbacks(runs: &[&RunArtifacts], views: &[StepView], findings: &[ChallengeFinding]) -> FallbackExtraction {
    let mut out = FallbackExtraction::default();
    let steps: BTreeSet<usize> = findings.iter().map(|f| f.step_index).collect();
    let mut runs: Vec<&&RunArtifacts> = runs.iter().collect();
    runs.sort_by(|a, b| a.record.run_id.cmp(&b.record.run_id));
    for step in steps {
        let Some(view) = views.get(step) else { continue };
        let mut support: BTreeMap<Vec<ActionCommand>, Vec<EvidenceRef>> = BTreeMap::new();
        for run in &runs {
            let g = Generic::new(&run.record.task.bindings);
            let log = &run.log;
            let mut seen = BTreeSet::new();
            for (idx, ev) in log.events.iter().enumerate() {
                if !ev.status.is_ok() || is_incidental(log, ev) || event_page(log, ev) != view.page_key {
                    continue;
                }
                let main = g.cmd(&ev.command);
                let own = view.leads.contains(&main);
                let mut start = idx;
                while start > 0 && log.events[start - 1].status.is_ok() && is_incidental(log, &log.events[start - 1]) {
                    start -= 1;
                }
                if start == idx {
                    continue;
                }
                let mut seq: Vec<ActionCommand> = log.events[start..idx].iter().map(|e| g.cmd(&e.command)).collect();
                // What cleared the way for another command on this page clears it for this step too.
                seq.push(if own { main } else { view.leads[0].clone() });
                if seen.insert(seq.clone()) {
                    support.entry(seq).or_default().push(EvidenceRef::event(run.record.run_id.clone(), start));
                }
            }
        }
        let mut ranked: Vec<(Vec<ActionCommand>, Vec<EvidenceRef>)> = support.into_iter().collect();
        ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.1[0].run_id.cmp(&b.1[0].run_id)));
        if ranked.is_empty() {
            out.no_recovery_evidence.push(step);
        }
        for (seq, evidence) in ranked.into_iter().take(MAX_FALLBACKS) {
            let (main, extras) = seq.split_last().expect("sequence has a main command");
            out.recoveries.push(RecoveryFinding {
                step_index: step,
                source_run: evidence[0].run_id.clone(),
                nl_text: fallback_text(extras, main),
                commands: seq.clone(),
                evidence,
            });
        }
    }
    out
}
