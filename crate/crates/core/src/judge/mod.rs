//! Run labelling and the statistics computed over labels.

pub mod report;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::env::page::PageSnapshot;
use crate::env::sim::{catalog, Goal};
use crate::gateway::{parse_yes_no, vars, Gateway, ImageRef};
use crate::workflow::{Bindings, TaskSpec};

pub use stats::{agreement, sr_summary, AgreementStats, SuccessRateSummary, TaskRate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgedBy {
    Oracle,
    ModelJudge,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeDecision {
    pub run_id: String,
    pub success: bool,
    pub rationale: String,
    pub judged_by: JudgedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("run {0} did not execute on a simulated site")]
    NotSimRun(String),
    #[error("no final snapshot for run {0}")]
    NoSnapshot(String),
}

/// Ground truth: the site goal over the final state and submitted answer.
pub fn judge_oracle(run_id: &str, goal: &Goal, bindings: &Bindings, last: &PageSnapshot, answer: Option<&str>) -> JudgeDecision {
    let mut reasons = vec![];
    for p in goal.bound(bindings) {
        let e = p.evaluate(last);
        if !e.passed {
            reasons.push(e.explanation);
        }
    }
    if let Some(label) = &goal.answer_from {
        let expected = last.find_visible(label).map(|e| e.text_value.as_str()).unwrap_or("");
        match answer.map(str::trim) {
            None | Some("") => reasons.push("no answer was submitted".into()),
            Some(a) if expected.is_empty() || a != expected.trim() => {
                reasons.push(format!("answer \"{a}\" does not match \"{label}\" (\"{expected}\")"))
            }
            Some(_) => {}
        }
    }
    let success = reasons.is_empty();
    let rationale = if success { "goal reached and answer matches".to_string() } else { reasons.join("; ") };
    JudgeDecision { run_id: run_id.to_string(), success, rationale, judged_by: JudgedBy::Oracle }
}

/// Oracle judgement for a run on one of the bundled sites.
pub fn judge_sim(run_id: &str, task: &TaskSpec, last: &PageSnapshot, answer: Option<&str>) -> Result<JudgeDecision, JudgeError> {
    let site = catalog::site(&task.site).ok_or_else(|| JudgeError::NotSimRun(run_id.to_string()))?;
    Ok(judge_oracle(run_id, &site.goal, &task.bindings, last, answer))
}

/// Model judgement from the task text, the final three screenshots and the answer.
pub fn judge_model(run_id: &str, task_text: &str, finals: &[ImageRef], answer: Option<&str>, gateway: &Gateway) -> Result<JudgeDecision, JudgeError> {
    if finals.is_empty() {
        return Err(JudgeError::NoSnapshot(run_id.to_string()));
    }
    let mut images: Vec<ImageRef> = finals.iter().rev().take(3).rev().cloned().collect();
    while images.len() < 3 {
        images.insert(0, images[0].clone());
    }
    let v = vars(&[("task", task_text), ("answer", answer.unwrap_or("(none)"))]);
    let decision = |success, rationale: String| JudgeDecision {
        run_id: run_id.to_string(),
        success,
        rationale,
        judged_by: JudgedBy::ModelJudge,
    };
    match gateway.ask("judge", &v, images).map(|r| parse_yes_no(&r.text)) {
        Ok(Ok(verdict)) => {
            let why = if verdict.explanation.is_empty() { "no reason given".to_string() } else { verdict.explanation };
            Ok(decision(verdict.verdict, why))
        }
        Ok(Err(_)) => Ok(decision(false, "unparseable judge reply".into())),
        Err(e) => Ok(decision(false, format!("judge unavailable: {e}"))),
    }
}

/// Reads a `run_id,success` CSV of human labels.
pub fn import_labels(csv: &str) -> Result<Vec<JudgeDecision>, String> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(|h| h.split(',').map(str::trim).collect::<Vec<_>>()) {
        Some(h) if h == ["run_id", "success"] => {}
        _ => return Err("label CSV must start with the header run_id,success".into()),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (id, s) = line.split_once(',').ok_or_else(|| format!("line {}: expected two fields", i + 2))?;
            let success = match s.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "success" => true,
                "0" | "false" | "no" | "failure" => false,
                other => return Err(format!("line {}: bad label {other:?}", i + 2)),
            };
            Ok(JudgeDecision { run_id: id.trim().to_string(), success, rationale: "imported label".into(), judged_by: JudgedBy::Human })
        })
        .collect()
}
