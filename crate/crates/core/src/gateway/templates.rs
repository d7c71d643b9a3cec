//! Prompt template registry.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

use super::GatewayError;

const REGISTRY: &str = include_str!("../../prompts/templates.toml");

fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub required_vars: Vec<String>,
    pub body: String,
    #[serde(default)]
    pub accepts_images: bool,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

#[derive(Deserialize)]
struct RegistryFile {
    template: Vec<PromptTemplate>,
}

pub const TEMPLATE_NAMES: [&str; 10] = [
    "variation_task_generation",
    "condition_check_synthesis",
    "fallback_action_synthesis",
    "workflow_synthesis",
    "condition_check_qa",
    "challenge_explanation",
    "actionable_guidance",
    "guidance_integration",
    "plan_learning",
    "judge",
];

pub fn registry() -> &'static BTreeMap<String, PromptTemplate> {
    static R: OnceLock<BTreeMap<String, PromptTemplate>> = OnceLock::new();
    R.get_or_init(|| {
        let file: RegistryFile = toml::from_str(REGISTRY).expect("bundled prompt registry parses");
        file.template.into_iter().map(|t| (t.name.clone(), t)).collect()
    })
}

pub fn template(name: &str) -> Result<&'static PromptTemplate, GatewayError> {
    registry().get(name).ok_or_else(|| GatewayError::UnknownTemplate(name.to_string()))
}

/// Substitutes `{{var}}` placeholders. Values never introduce new placeholders.
pub fn render(name: &str, vars: &BTreeMap<String, String>) -> Result<String, GatewayError> {
    let t = template(name)?;
    if let Some(missing) = t.required_vars.iter().find(|v| !vars.contains_key(*v)) {
        return Err(GatewayError::MissingVar(missing.clone()));
    }
    let mut out = t.body.clone();
    for var in &t.required_vars {
        let value = vars[var].replace("{{", "{ {");
        out = out.replace(&format!("{{{{{var}}}}}"), &value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn registry_is_complete_and_closed() {
        let names: Vec<&str> = registry().keys().map(String::as_str).collect();
        let mut expected = TEMPLATE_NAMES.to_vec();
        expected.sort();
        assert_eq!(names, expected);
        for t in registry().values() {
            let all: BTreeMap<String, String> = t.required_vars.iter().map(|v| (v.clone(), "x".into())).collect();
            let text = render(&t.name, &all).unwrap();
            assert!(!text.contains("{{"), "{} leaves a placeholder", t.name);
        }
    }

    #[test]
    fn check_text_is_verbatim() {
        let v = vars(&[
            ("task", "book a flight"),
            ("action", "Click \"Search\""),
            ("check", "ensure date field shows 2025-05-01"),
        ]);
        let a = render("condition_check_qa", &v).unwrap();
        assert!(a.contains("ensure date field shows 2025-05-01"));
        assert_eq!(a, render("condition_check_qa", &v).unwrap());
    }

    #[test]
    fn missing_and_unknown() {
        assert_eq!(
            render("condition_check_qa", &vars(&[("task", "t")])).unwrap_err(),
            GatewayError::MissingVar("action".into())
        );
        assert!(matches!(render("nope", &vars(&[])), Err(GatewayError::UnknownTemplate(_))));
    }

    #[test]
    fn decode_defaults() {
        assert_eq!(template("condition_check_qa").unwrap().temperature, 0.0);
        assert_eq!(template("condition_check_qa").unwrap().max_tokens, 1024);
        assert_eq!(template("variation_task_generation").unwrap().temperature, 0.7);
    }
}
