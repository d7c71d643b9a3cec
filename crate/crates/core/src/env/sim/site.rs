//! Site definitions: pages, click transitions, goals and faults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::page::Role;
use crate::workflow::slots::bind_partial;
use crate::workflow::{Bindings, Predicate};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementDef {
    pub id: String,
    pub role: Role,
    pub label: String,
    #[serde(default)]
    pub value: String,
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Scroll steps needed before the element enters the viewport.
    #[serde(default)]
    pub fold: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDef {
    pub name: String,
    pub path: String,
    pub title: String,
    pub elements: Vec<ElementDef>,
}

/// Clicking `click` on `page` applies `set` in order, then moves to `to`.
///
/// Values in `set` are templates: `{{id}}` is the current value of element
/// `id`; `{{price id}}` and `{{title id}}` derive stable text from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub page: String,
    pub click: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Goal {
    /// Predicates over the final snapshot; may contain task slots.
    #[serde(default)]
    pub all: Vec<Predicate>,
    /// The answer must equal this element's value on the final snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_from: Option<String>,
}

impl Goal {
    pub fn bound(&self, bindings: &Bindings) -> Vec<Predicate> {
        self.all
            .iter()
            .map(|p| p.map_text(&mut |s| bind_partial(s, bindings).replace("<<", "<")))
            .collect()
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Overlay that appears once the clock reaches `at_clock`, on `page` if
    /// given. `chance` decides per run whether it is armed at all.
    Popup {
        at_clock: u64,
        #[serde(default = "one")]
        chance: f64,
        overlay_id: String,
        label: String,
        dismiss_label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        page: Option<String>,
    },
    /// Pushes `target` below the fold from `at_clock` on.
    LayoutShift { at_clock: u64, target: String },
    StaleElement { p: f64 },
    SlowLoad { p: f64 },
    InterceptedClick { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(flatten)]
    pub kind: FaultKind,
    pub seed: u64,
}

impl FaultSpec {
    pub fn probability(&self) -> Option<f64> {
        match self.kind {
            FaultKind::StaleElement { p } | FaultKind::SlowLoad { p } | FaultKind::InterceptedClick { p } => Some(p),
            FaultKind::Popup { chance, .. } => Some(chance),
            FaultKind::LayoutShift { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSiteDef {
    pub site_id: String,
    pub family_id: String,
    pub title: String,
    pub entry: String,
    pub pages: Vec<PageDef>,
    pub transitions: Vec<Transition>,
    pub goal: Goal,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

/// A second look for an existing site: same labels and paths, different
/// host, element order, fold positions and faults.
#[derive(Debug, Clone, Deserialize)]
pub struct SkinDef {
    pub site_id: String,
    pub extends: String,
    pub title: String,
    #[serde(default)]
    pub order: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub fold: BTreeMap<String, u32>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SiteError {
    #[error("site {0}: {1}")]
    Invalid(String, String),
}

impl SimSiteDef {
    pub fn page(&self, name: &str) -> Option<&PageDef> {
        self.pages.iter().find(|p| p.name == name)
    }

    pub fn page_by_path(&self, path: &str) -> Option<&PageDef> {
        self.pages.iter().find(|p| p.path == path)
    }

    pub fn element(&self, id: &str) -> Option<&ElementDef> {
        self.pages.iter().flat_map(|p| p.elements.iter()).find(|e| e.id == id)
    }

    pub fn transition(&self, page: &str, element_id: &str) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.page == page && t.click == element_id)
    }

    pub fn url(&self, page: &PageDef) -> String {
        format!("https://{}{}", self.site_id, page.path)
    }

    pub fn apply_skin(&self, skin: &SkinDef) -> Result<SimSiteDef, SiteError> {
        let mut out = self.clone();
        out.site_id = skin.site_id.clone();
        out.title = skin.title.clone();
        out.faults = skin.faults.clone();
        for page in &mut out.pages {
            if let Some(order) = skin.order.get(&page.name) {
                let mut sorted = Vec::with_capacity(page.elements.len());
                for id in order {
                    let pos = page.elements.iter().position(|e| &e.id == id).ok_or_else(|| {
                        SiteError::Invalid(skin.site_id.clone(), format!("unknown element {id} in order"))
                    })?;
                    sorted.push(page.elements.remove(pos));
                }
                sorted.append(&mut page.elements);
                page.elements = sorted;
            }
            for el in &mut page.elements {
                if let Some(f) = skin.fold.get(&el.id) {
                    el.fold = *f;
                }
            }
        }
        out.check()?;
        Ok(out)
    }

    /// Structural checks: unique ids, resolvable references, sane faults.
    pub fn check(&self) -> Result<(), SiteError> {
        let bad = |m: String| Err(SiteError::Invalid(self.site_id.clone(), m));
        let mut ids = std::collections::BTreeSet::new();
        for el in self.pages.iter().flat_map(|p| p.elements.iter()) {
            if !ids.insert(el.id.as_str()) {
                return bad(format!("duplicate element id {}", el.id));
            }
            if el.label.trim().is_empty() {
                return bad(format!("element {} has no label", el.id));
            }
        }
        if self.page(&self.entry).is_none() {
            return bad(format!("entry page {} missing", self.entry));
        }
        for t in &self.transitions {
            if self.page(&t.page).is_none() || !ids.contains(t.click.as_str()) {
                return bad(format!("transition {}:{} dangles", t.page, t.click));
            }
            if let Some(to) = &t.to {
                if self.page(to).is_none() {
                    return bad(format!("transition target {to} missing"));
                }
            }
            for (id, _) in &t.set {
                if !ids.contains(id.as_str()) {
                    return bad(format!("transition sets unknown element {id}"));
                }
            }
        }
        for f in &self.faults {
            if let Some(p) = f.probability() {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("fault probability {p} outside [0,1]"));
                }
            }
            if let FaultKind::LayoutShift { target, .. } = &f.kind {
                if !ids.contains(target.as_str()) {
                    return bad(format!("layout shift targets unknown element {target}"));
                }
            }
        }
        Ok(())
    }
}
