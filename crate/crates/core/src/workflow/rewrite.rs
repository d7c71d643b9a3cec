//! Genericization (literal → `<slot>`) and binding (`<slot>` → literal) of
//! whole workflow documents.

use super::slots::{bind_text, genericize_text, replacement_order, SlotError};
use super::{Bindings, ConditionCheck, FallbackAction, StepUnit, WorkflowDoc};

fn map_doc<E>(doc: &WorkflowDoc, f: &mut impl FnMut(&str) -> Result<String, E>) -> Result<WorkflowDoc, E> {
    let mut out = doc.clone();
    for unit in &mut out.units {
        map_unit(unit, f)?;
    }
    Ok(out)
}

fn map_unit<E>(unit: &mut StepUnit, f: &mut impl FnMut(&str) -> Result<String, E>) -> Result<(), E> {
    unit.action_text = f(&unit.action_text)?;
    for check in unit.pre_checks.iter_mut().chain(unit.post_checks.iter_mut()) {
        map_check(check, f)?;
    }
    for fb in &mut unit.fallbacks {
        map_fallback(fb, f)?;
    }
    Ok(())
}

pub(crate) fn map_check<E>(
    check: &mut ConditionCheck,
    f: &mut impl FnMut(&str) -> Result<String, E>,
) -> Result<(), E> {
    check.nl_text = f(&check.nl_text)?;
    if let Some(p) = &check.predicate {
        let mut err = None;
        let mapped = p.map_text(&mut |s| match f(s) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                String::new()
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        check.predicate = Some(mapped);
    }
    Ok(())
}

pub(crate) fn map_fallback<E>(
    fb: &mut FallbackAction,
    f: &mut impl FnMut(&str) -> Result<String, E>,
) -> Result<(), E> {
    fb.nl_text = f(&fb.nl_text)?;
    if let Some(seq) = &mut fb.command {
        for step in &mut seq.steps {
            *step = step.try_map_text(&mut *f)?;
        }
    }
    Ok(())
}

/// Replaces bound literals with their `<slot>` markers, longest literal first.
pub fn genericize(doc: &WorkflowDoc, bindings: &Bindings) -> Result<WorkflowDoc, SlotError> {
    let order = replacement_order(bindings)?;
    map_doc(doc, &mut |s| Ok(genericize_text(s, &order)))
}

/// Substitutes every slot marker. Inverse of [`genericize`] on covered slots.
pub fn bind(doc: &WorkflowDoc, bindings: &Bindings) -> Result<WorkflowDoc, SlotError> {
    map_doc(doc, &mut |s| bind_text(s, bindings))
}

/// Genericizes a single plain text.
pub fn genericize_str(text: &str, bindings: &Bindings) -> Result<String, SlotError> {
    let order = replacement_order(bindings)?;
    Ok(genericize_text(text, &order))
}

pub fn genericize_check(check: &mut ConditionCheck, bindings: &Bindings) -> Result<(), SlotError> {
    let order = replacement_order(bindings)?;
    map_check(check, &mut |s| Ok::<_, SlotError>(genericize_text(s, &order)))
}

pub fn genericize_fallback(fb: &mut FallbackAction, bindings: &Bindings) -> Result<(), SlotError> {
    let order = replacement_order(bindings)?;
    map_fallback(fb, &mut |s| Ok::<_, SlotError>(genericize_text(s, &order)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::samples::{bindings, sample_doc};
    use crate::workflow::validate::validate_workflow;

    #[test]
    fn genericizes_action_text() {
        let mut doc = sample_doc(1);
        doc.units[0].action_text = "type Paris in destination".into();
        let b = bindings(&[("destination city", "Paris")]);
        let g = genericize(&doc, &b).unwrap();
        assert_eq!(g.units[0].action_text, "type <destination city> in destination");
        assert!(validate_workflow(&g).is_empty());
        assert_eq!(bind(&g, &b).unwrap(), doc);
    }

    #[test]
    fn empty_bindings_are_identity() {
        let doc = sample_doc(3);
        assert_eq!(genericize(&doc, &Bindings::new()).unwrap(), doc);
    }

    #[test]
    fn missing_slot_is_named() {
        let mut doc = sample_doc(1);
        doc.units[0].action_text = "Navigate to \"https://<website>/\"".into();
        assert_eq!(
            bind(&doc, &Bindings::new()).unwrap_err(),
            SlotError::MissingSlot("website".into())
        );
    }

    #[test]
    fn ambiguous_literal() {
        let doc = sample_doc(1);
        let b = bindings(&[("from", "Paris"), ("to", "Paris")]);
        assert!(matches!(genericize(&doc, &b), Err(SlotError::AmbiguousLiteral(_, _))));
    }
}
