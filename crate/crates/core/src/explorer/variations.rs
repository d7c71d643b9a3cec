//! Attribute, category and website variations of a task.

use serde::{Deserialize, Serialize};

use crate::env::sim::catalog::{self, Axis};
use crate::gateway::{extract_fenced, vars, Gateway};
use crate::workflow::{TaskSpec, VariationKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variation {
    pub kind: VariationKind,
    pub slot: String,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsentAxis {
    pub kind: VariationKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Variations {
    pub items: Vec<Variation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent: Vec<AbsentAxis>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VariationError {
    #[error("task template has no slots to vary")]
    NoVariableSlots,
}

fn hint(kind: VariationKind) -> &'static str {
    match kind {
        VariationKind::Attribute => "Substitute one value on the same web page, such as a cabin class or a price limit.",
        VariationKind::Category => "Switch to a different tab or category on the same site.",
        VariationKind::Website => "Perform the same task on a different website with a different layout.",
    }
}

fn absent(kind: VariationKind, reason: impl Into<String>) -> AbsentAxis {
    AbsentAxis { kind, reason: reason.into() }
}

/// Varies the first axis of each kind to its next value. Axes default to
/// the bundled family's table.
pub fn gen_variations(task: &TaskSpec, axes: Option<&[Axis]>) -> Result<Variations, VariationError> {
    let slots = task.slots();
    if slots.is_empty() {
        return Err(VariationError::NoVariableSlots);
    }
    let family_axes = catalog::family(&task.family_id).map(|f| f.axes.as_slice()).unwrap_or(&[]);
    let axes = axes.unwrap_or(family_axes);
    let mut out = Variations::default();
    for kind in VariationKind::ALL {
        let Some(axis) = axes.iter().find(|a| a.kind == kind) else {
            out.absent.push(absent(kind, "no axis of this kind"));
            continue;
        };
        if !slots.contains(&axis.slot) {
            out.absent.push(absent(kind, format!("template has no <{}> slot", axis.slot)));
            continue;
        }
        let current = task.bindings.get(&axis.slot).map(String::as_str).unwrap_or("");
        let next = match axis.values.iter().position(|v| v == current) {
            Some(i) => axis.values.get((i + 1) % axis.values.len()),
            None => axis.values.first(),
        };
        let Some(next) = next.filter(|v| v.as_str() != current) else {
            out.absent.push(absent(kind, format!("no alternative value for <{}>", axis.slot)));
            continue;
        };
        let mut varied = task.clone();
        varied.bindings.insert(axis.slot.clone(), next.clone());
        if kind == VariationKind::Website {
            varied.site = next.clone();
        }
        out.items.push(Variation { kind, slot: axis.slot.clone(), task: varied });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ModelVariation {
    slot: String,
    value: String,
}

/// Model-backed variant: one request per kind. Replies that change anything
/// other than a single slot value are discarded as absent.
pub fn gen_variations_model(task: &TaskSpec, gateway: &Gateway) -> Result<Variations, VariationError> {
    let slots = task.slots();
    if slots.is_empty() {
        return Err(VariationError::NoVariableSlots);
    }
    let shown = crate::workflow::slots::bind_partial(&task.template, &task.bindings);
    let mut out = Variations::default();
    for kind in VariationKind::ALL {
        let v = vars(&[("task", &shown), ("kind", kind.as_str()), ("kind_hint", hint(kind))]);
        let parsed = gateway
            .ask("variation_task_generation", &v, vec![])
            .map_err(|e| e.to_string())
            .and_then(|r| {
                let block = extract_fenced(&r.text).ok_or("reply has no fenced block")?.to_string();
                serde_json::from_str::<ModelVariation>(&block).map_err(|e| e.to_string())
            });
        match parsed {
            Ok(mv) if slots.contains(&mv.slot) && task.bindings.get(&mv.slot) != Some(&mv.value) && !mv.value.is_empty() => {
                let mut varied = task.clone();
                varied.bindings.insert(mv.slot.clone(), mv.value.clone());
                if kind == VariationKind::Website {
                    varied.site = mv.value.clone();
                }
                out.items.push(Variation { kind, slot: mv.slot, task: varied });
            }
            Ok(mv) => out.absent.push(absent(kind, format!("model proposed an invalid change to <{}>", mv.slot))),
            Err(e) => out.absent.push(absent(kind, e)),
        }
    }
    Ok(out)
}
