//! Explaining a stuck unit to the user and folding their reply back into
//! the workflow.

use serde::Deserialize;

use crate::digest::content_id;
use crate::env::action::{parse_instructions, quote, ActionCommand, Direction, Instruction};
use crate::env::page::PageSnapshot;
use crate::gateway::{extract_fenced, vars, BackendKind, Gateway};
use crate::trace::TraceLog;
use crate::workflow::rewrite::{genericize_check, genericize_fallback};
use crate::workflow::{
    Bindings, CommandSeq, ConditionCheck, EvidenceRef, FallbackAction, GuidanceNote, Origin, Phase, Predicate,
    ProvenanceEntry, StepUnit, WorkflowDoc,
};

use super::{FailurePoint, UnitLog, UserNotification, Where};

fn attempt_lines(ulog: &UnitLog) -> Vec<String> {
    ulog.attempts
        .iter()
        .map(|a| {
            let via = a.fallback_id.as_deref().map(|f| format!(" after fallback {f}")).unwrap_or_default();
            let did = if a.messages.is_empty() { "no commands ran".to_string() } else { a.messages.join("; ") };
            let stop = match &a.failed_at {
                Some(FailurePoint::Check { nl_text, explanation, .. }) => format!("stopped at check \"{nl_text}\" ({explanation})"),
                Some(FailurePoint::Action { message, .. }) => format!("stopped because: {message}"),
                None => "succeeded".into(),
            };
            format!("Attempt {}{via}: {did}; {stop}", a.attempt + 1)
        })
        .collect()
}

fn rule_tips(unit: &StepUnit, ulog: &UnitLog, snap: &PageSnapshot) -> Vec<String> {
    let mut tips = vec![];
    if let Some(ov) = snap.overlays.first() {
        let dismiss = snap
            .elements
            .iter()
            .find(|e| e.element_id == format!("{}-dismiss", ov.overlay_id))
            .map(|e| quote(&e.label))
            .unwrap_or_else(|| "the close button".into());
        tips.push(format!("The {} pop-up is open. Tell the agent how to close it, e.g. Click {dismiss}, then repeat the step.", quote(&ov.label)));
    }
    if let Some(FailurePoint::Check { nl_text, .. }) = ulog.attempts.last().and_then(|a| a.failed_at.as_ref()) {
        tips.push(format!("The condition \"{nl_text}\" never held. Describe what has to happen first, or a condition that should be checked instead."));
    }
    tips.push(format!(
        "Add a condition: \"Make sure <condition> before {}\".",
        unit.action_text.split("; ").next().unwrap_or(&unit.action_text)
    ));
    tips.push("Add an action: \"Click \\\"<element>\\\", then repeat the step\".".into());
    tips
}

/// Where, why, what and how of a unit that ran out of retries.
pub fn build_notification(
    run_id: &str,
    unit: &StepUnit,
    ulog: &UnitLog,
    task_text: &str,
    snap: &PageSnapshot,
    log: &TraceLog,
    gateway: &Gateway,
) -> UserNotification {
    let last = ulog.attempts.last();
    let (check_id, why) = match last.and_then(|a| a.failed_at.as_ref()) {
        Some(FailurePoint::Check { check_id, nl_text, explanation }) => {
            (Some(check_id.clone()), format!("{nl_text}: {explanation}"))
        }
        Some(FailurePoint::Action { message, .. }) => (None, message.clone()),
        None => (None, "the step did not complete".into()),
    };
    let where_ = Where { unit: unit.index, action: unit.action_text.clone(), check_id };
    let where_text = match &where_.check_id {
        Some(c) => format!("unit {} / check {c}", unit.index),
        None => format!("unit {} / {}", unit.index, unit.action_text),
    };
    let lines = attempt_lines(ulog);
    let v = vars(&[("task", task_text), ("where", &where_text), ("why", &why), ("attempts", &lines.join("\n"))]);
    let what = gateway
        .ask("challenge_explanation", &v, vec![])
        .ok()
        .map(|r| r.text.trim().to_string())
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| lines.join("\n"));
    let mut how: Vec<String> = unit.fallbacks_by_rank().iter().map(|f| format!("Already tried: {}", f.nl_text)).collect();
    let fb_text = unit.fallbacks.iter().map(|f| f.nl_text.as_str()).collect::<Vec<_>>().join("\n");
    let v = vars(&[("task", task_text), ("where", &where_text), ("why", &why), ("fallbacks", &fb_text)]);
    let model_tips: Vec<String> = gateway
        .ask("actionable_guidance", &v, vec![])
        .map(|r| {
            r.text
                .lines()
                .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim().to_string())
                .filter(|l| !l.is_empty())
                .collect()
        })
        .unwrap_or_default();
    if model_tips.is_empty() {
        how.extend(rule_tips(unit, ulog, snap));
    } else {
        how.extend(model_tips);
    }
    let attempts = ulog
        .attempts
        .iter()
        .map(|a| EvidenceRef {
            run_id: run_id.to_string(),
            event_index: a.end_event.checked_sub(1).filter(|i| *i < log.events.len()),
            note_id: None,
        })
        .collect();
    UserNotification {
        run_id: run_id.to_string(),
        where_,
        why,
        what,
        how,
        attempts,
        snapshot_ref: crate::trace::snapshot_ref(snap),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuidanceError {
    #[error("guidance is empty")]
    Empty,
    #[error("workflow has no unit {0}")]
    UnknownUnit(usize),
}

/// One classified piece of guidance.
#[derive(Debug, Clone, PartialEq)]
enum Item {
    Check { phase: Phase, text: String, predicate: Option<Predicate> },
    Fallback { text: String, steps: Option<Vec<ActionCommand>> },
    Verbatim { text: String },
}

/// Splits on sentence ends and semicolons outside quotes.
fn sentences(text: &str) -> Vec<String> {
    let mut out = vec![];
    let mut cur = String::new();
    let mut in_q = false;
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '"' {
            in_q = !in_q;
        }
        let end = !in_q
            && (c == ';' || c == '\n' || c == '!' || c == '?' || (c == '.' && chars.get(i + 1).is_none_or(|n| n.is_whitespace())));
        if end {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn strip_politeness(mut s: &str) -> &str {
    loop {
        let before = s;
        for p in ["please ", "you need to ", "you should ", "you must ", "always ", "first, ", "first ", "then ", "and "] {
            if let Some(rest) = strip_prefix_ci(s, p) {
                s = rest.trim_start();
            }
        }
        if s == before {
            return s;
        }
    }
}

const CHECK_CUES: [&str; 6] = ["make sure ", "ensure ", "check that ", "verify that ", "confirm that ", "be sure "];
const VERBS: [&str; 16] = [
    "click", "press", "tap", "type", "enter", "navigate", "go", "visit", "open", "select", "choose", "scroll", "dismiss",
    "close", "accept", "wait",
];

fn quoted(s: &str) -> Vec<String> {
    s.split('"').skip(1).step_by(2).map(str::to_string).collect()
}

fn condition_predicate(cond: &str) -> Option<Predicate> {
    let lower = cond.to_ascii_lowercase();
    let q = quoted(cond);
    let mentions_overlay = ["pop-up", "popup", "overlay", "banner", "dialog"].iter().any(|w| lower.contains(w));
    if mentions_overlay && ["no ", "closed", "dismissed", "gone", "not blocking", "not shown"].iter().any(|w| lower.contains(w)) {
        return Some(Predicate::NoOverlay);
    }
    if q.len() == 2 && [" shows ", " is set to ", " equals ", " reads ", " says "].iter().any(|w| lower.contains(w)) {
        return Some(Predicate::TextEquals { target: q[0].clone(), value: q[1].clone() });
    }
    if q.len() == 1 && ["is visible", "is shown", "appears", "is present", "is displayed"].iter().any(|w| lower.contains(w)) {
        return Some(Predicate::Exists { target: q[0].clone() });
    }
    None
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn loose_label(rest: &str) -> Option<String> {
    if let Some(q) = quoted(rest).into_iter().next() {
        return Some(q);
    }
    let mut s = rest.trim();
    for p in ["on ", "the "] {
        if let Some(r) = strip_prefix_ci(s, p) {
            s = r.trim_start();
        }
    }
    for cut in [" on the ", " in the ", " of the ", " button", " link", " tab", " again", " to "] {
        if let Some(i) = s.to_ascii_lowercase().find(cut) {
            s = &s[..i];
        }
    }
    let s = s.trim().trim_end_matches(['.', ',', '!']);
    (!s.is_empty()).then(|| s.to_string())
}

fn step_command(step: &str) -> Option<ActionCommand> {
    let mut s = step.trim().trim_end_matches(['.', ',', '!']).trim();
    for suffix in [" again", " once more", " one more time"] {
        if s.len() > suffix.len() && s.to_ascii_lowercase().ends_with(suffix) {
            s = s[..s.len() - suffix.len()].trim_end();
        }
    }
    if let Ok(mut parsed) = parse_instructions(&capitalize(s)) {
        if let (1, Some(Instruction::Command(c))) = (parsed.len(), parsed.pop()) {
            return Some(c);
        }
    }
    let lower = s.to_ascii_lowercase();
    let (verb, rest) = lower.split_once(' ').map(|(v, _)| (v.to_string(), s[v.len()..].trim())).unwrap_or((lower.clone(), ""));
    match verb.as_str() {
        "click" | "press" | "tap" | "dismiss" | "close" | "accept" | "open" | "choose" => {
            loose_label(rest).map(|target| ActionCommand::Click { target })
        }
        "scroll" => Some(ActionCommand::Scroll {
            direction: if rest.to_ascii_lowercase().starts_with("up") { Direction::Up } else { Direction::Down },
            amount: 1,
        }),
        "wait" => Some(ActionCommand::CaptureState),
        "type" | "enter" => {
            let q = quoted(rest);
            (q.len() == 2).then(|| ActionCommand::TypeText { text: q[0].clone(), target: q[1].clone() })
        }
        "select" => {
            let q = quoted(rest);
            (q.len() == 2).then(|| ActionCommand::Select { option: q[0].clone(), target: q[1].clone() })
        }
        "navigate" | "go" | "visit" => {
            let url = quoted(rest).into_iter().next().or_else(|| rest.split_whitespace().find(|w| w.contains("://")).map(str::to_string))?;
            Some(ActionCommand::VisitUrl { url })
        }
        _ => None,
    }
}

fn split_steps(s: &str) -> Vec<String> {
    let mut parts = vec![s.to_string()];
    for sep in [", and then ", " and then ", ", then ", " then ", ", and "] {
        parts = parts
            .iter()
            .flat_map(|p| split_outside_quotes(p, sep))
            .collect();
    }
    parts.into_iter().map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn split_outside_quotes(s: &str, sep: &str) -> Vec<String> {
    let lower = s.to_ascii_lowercase();
    let mut out = vec![];
    let mut start = 0;
    let mut i = 0;
    while i < s.len() {
        if !s.is_char_boundary(i) {
            i += 1;
            continue;
        }
        let in_q = s[..i].matches('"').count() % 2 == 1;
        if !in_q && lower[i..].starts_with(sep) {
            out.push(s[start..i].to_string());
            i += sep.len();
            start = i;
        } else {
            i += 1;
        }
    }
    out.push(s[start..].to_string());
    out
}

fn classify_rules(raw: &str) -> Vec<Item> {
    let mut items = vec![];
    for sentence in sentences(raw) {
        let s = strip_politeness(&sentence);
        let lower = s.to_ascii_lowercase();
        if let Some(cue) = CHECK_CUES.iter().find(|c| lower.starts_with(*c)) {
            let cond = &s[cue.len()..];
            let lc = cond.to_ascii_lowercase();
            let phase = match (lc.rfind(" before "), lc.rfind(" after ")) {
                (_, Some(a)) if lc.rfind(" before ").is_none_or(|b| a > b) => Phase::Post,
                _ => Phase::Pre,
            };
            let cut = lc.find(" before ").or_else(|| lc.find(" after ")).unwrap_or(cond.len());
            items.push(Item::Check { phase, text: capitalize(s), predicate: condition_predicate(&cond[..cut]) });
            continue;
        }
        let mut body = s;
        let you_can = strip_prefix_ci(body, "you can ").or_else(|| strip_prefix_ci(body, "try to ")).or_else(|| strip_prefix_ci(body, "try "));
        if let Some(rest) = you_can {
            body = rest.trim_start();
        }
        let first = body.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
        if VERBS.contains(&first.as_str()) {
            let mut steps_text = body.to_string();
            if you_can.is_some() && !["navigate", "go", "visit"].contains(&first.as_str()) {
                if let Some(i) = split_outside_quotes(&steps_text, " to ").first().map(|p| p.len()) {
                    steps_text.truncate(i);
                }
            }
            let steps: Option<Vec<ActionCommand>> = split_steps(&steps_text).iter().map(|p| step_command(p)).collect();
            items.push(Item::Fallback { text: capitalize(s), steps: steps.filter(|v| !v.is_empty()) });
            continue;
        }
        items.push(Item::Verbatim { text: sentence.clone() });
    }
    items
}

#[derive(Deserialize)]
struct ModelItem {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    phase: Option<Phase>,
    text: String,
    #[serde(default)]
    predicate: Option<Predicate>,
    #[serde(default)]
    commands: Option<String>,
}

fn classify_model(raw: &str, unit: &StepUnit, gateway: &Gateway) -> Option<Vec<Item>> {
    let reply = gateway.ask("guidance_integration", &vars(&[("step", &unit.action_text), ("guidance", raw)]), vec![]).ok()?;
    let block = extract_fenced(&reply.text)?;
    let parsed: Vec<ModelItem> = serde_json::from_str(block).ok()?;
    let items = parsed
        .into_iter()
        .map(|m| match m.kind.as_str() {
            "check" => Item::Check { phase: m.phase.unwrap_or(Phase::Pre), text: m.text, predicate: m.predicate },
            "fallback" => Item::Fallback {
                steps: m.commands.and_then(|c| parse_instructions(&c).ok()).map(|v| v.iter().map(Instruction::lead_command).collect()),
                text: m.text,
            },
            _ => Item::Verbatim { text: m.text },
        })
        .collect::<Vec<_>>();
    (!items.is_empty()).then_some(items)
}

/// Adds the user's guidance to `target_unit` as a new workflow version.
///
/// Clauses phrased as "make sure / ensure ..." become condition checks
/// (after-cues make them post-checks); imperative clauses become a fallback
/// at the next rank. Anything else is kept verbatim as a last-rank fallback
/// and the note carries a warning. Existing items are never touched.
pub fn integrate_guidance(
    workflow: &WorkflowDoc,
    run_id: &str,
    raw_text: &str,
    target_unit: usize,
    bindings: Option<&Bindings>,
    gateway: &Gateway,
) -> Result<(WorkflowDoc, GuidanceNote), GuidanceError> {
    if raw_text.trim().is_empty() {
        return Err(GuidanceError::Empty);
    }
    let unit = workflow.units.get(target_unit).ok_or(GuidanceError::UnknownUnit(target_unit))?;
    let version = workflow.version.to_string();
    let note_id = content_id("note", &[run_id, &workflow.workflow_id, &version, raw_text]);
    let items = match gateway.kind() {
        BackendKind::Remote => classify_model(raw_text, unit, gateway).unwrap_or_else(|| classify_rules(raw_text)),
        _ => classify_rules(raw_text),
    };
    let evidence = vec![EvidenceRef { run_id: run_id.to_string(), event_index: None, note_id: Some(note_id.clone()) }];
    let mut doc = workflow.clone();
    let mut parsed_into = vec![];
    let mut warning = None;
    let mut verbatim = vec![];
    for (i, item) in items.into_iter().enumerate() {
        let idx = i.to_string();
        let unit = &mut doc.units[target_unit];
        match item {
            Item::Check { phase, text, predicate } => {
                let mut c = ConditionCheck {
                    check_id: content_id("chk", &[&note_id, &idx, &text]),
                    phase,
                    nl_text: text,
                    predicate,
                    origin: Origin::UserGuidance,
                    evidence: evidence.clone(),
                    extra: Default::default(),
                };
                if let Some(b) = bindings {
                    let before = c.clone();
                    if genericize_check(&mut c, b).is_err() {
                        c = before;
                    }
                }
                parsed_into.push(c.check_id.clone());
                match phase {
                    Phase::Pre => unit.pre_checks.push(c),
                    Phase::Post => unit.post_checks.push(c),
                }
            }
            Item::Fallback { text, steps } => {
                let mut f = FallbackAction {
                    fallback_id: content_id("fb", &[&note_id, &idx, &text]),
                    rank: unit.next_rank(),
                    nl_text: text,
                    command: steps.map(|steps| CommandSeq { steps }),
                    origin: Origin::UserGuidance,
                    evidence: evidence.clone(),
                    extra: Default::default(),
                };
                if let Some(b) = bindings {
                    let before = f.clone();
                    if genericize_fallback(&mut f, b).is_err() {
                        f = before;
                    }
                }
                parsed_into.push(f.fallback_id.clone());
                unit.fallbacks.push(f);
            }
            Item::Verbatim { text } => verbatim.push((idx, text)),
        }
    }
    for (idx, text) in verbatim {
        let unit = &mut doc.units[target_unit];
        let f = FallbackAction {
            fallback_id: content_id("fb", &[&note_id, &idx, &text]),
            rank: unit.next_rank(),
            nl_text: text,
            command: None,
            origin: Origin::UserGuidance,
            evidence: evidence.clone(),
            extra: Default::default(),
        };
        parsed_into.push(f.fallback_id.clone());
        unit.fallbacks.push(f);
        warning = Some("part of the guidance could not be classified and was kept as written".to_string());
    }
    let note = GuidanceNote {
        note_id,
        run_id: run_id.to_string(),
        raw_text: raw_text.to_string(),
        target_unit,
        parsed_into,
        warning,
    };
    doc.version = workflow.version + 1;
    doc.provenance.push(ProvenanceEntry::Guidance { note: note.clone() });
    Ok((doc, note))
}
