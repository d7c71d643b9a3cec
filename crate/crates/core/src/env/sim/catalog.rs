//! Bundled sites and task families.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::site::{SimSiteDef, SkinDef};
use crate::env::action::{parse_instructions, Instruction};
use crate::workflow::slots::bind_text;
use crate::workflow::{Bindings, TaskSpec, VariationKind};

const SITE_FILES: [&str; 6] = [
    include_str!("sites/skyfare.json"),
    include_str!("sites/jetquest.json"),
    include_str!("sites/nestfinder.json"),
    include_str!("sites/roomly.json"),
    include_str!("sites/newsdesk.json"),
    include_str!("sites/paperpile.json"),
];

const FAMILIES: &str = include_str!("families.json");

/// One variation axis: the slot it varies and the values it cycles through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: VariationKind,
    pub slot: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyDef {
    pub family_id: String,
    pub template: String,
    pub bindings: Bindings,
    pub axes: Vec<Axis>,
    /// Reference instructions with task slots; what a competent agent types.
    pub solution: Vec<String>,
}

impl FamilyDef {
    pub fn original_task(&self) -> TaskSpec {
        TaskSpec {
            family_id: self.family_id.clone(),
            template: self.template.clone(),
            bindings: self.bindings.clone(),
            site: self.bindings.get("website").cloned().unwrap_or_default(),
            unbound: vec![],
        }
    }

    pub fn solution_for(&self, bindings: &Bindings) -> Vec<Instruction> {
        let text: Vec<String> = self
            .solution
            .iter()
            .map(|line| bind_text(line, bindings).expect("solution slots are bound"))
            .collect();
        parse_instructions(&text.join("; ")).expect("bundled solution parses")
    }
}

struct Catalog {
    sites: BTreeMap<String, Arc<SimSiteDef>>,
    families: Vec<FamilyDef>,
}

fn catalog() -> &'static Catalog {
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let mut sites: BTreeMap<String, Arc<SimSiteDef>> = BTreeMap::new();
        let mut skins = vec![];
        for text in SITE_FILES {
            let value: serde_json::Value = serde_json::from_str(text).expect("bundled site is JSON");
            if value.get("extends").is_some() {
                skins.push(serde_json::from_value::<SkinDef>(value).expect("bundled skin"));
            } else {
                let site: SimSiteDef = serde_json::from_value(value).expect("bundled site");
                site.check().expect("bundled site is consistent");
                sites.insert(site.site_id.clone(), Arc::new(site));
            }
        }
        for skin in skins {
            let base = sites[&skin.extends].clone();
            let site = base.apply_skin(&skin).expect("bundled skin is consistent");
            sites.insert(site.site_id.clone(), Arc::new(site));
        }
        let families = serde_json::from_str(FAMILIES).expect("bundled families");
        Catalog { sites, families }
    })
}

pub fn site(site_id: &str) -> Option<Arc<SimSiteDef>> {
    catalog().sites.get(site_id).cloned()
}

pub fn site_ids() -> Vec<&'static str> {
    catalog().sites.keys().map(String::as_str).collect()
}

pub fn families() -> &'static [FamilyDef] {
    &catalog().families
}

pub fn family(family_id: &str) -> Option<&'static FamilyDef> {
    families().iter().find(|f| f.family_id == family_id)
}
