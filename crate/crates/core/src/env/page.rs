use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Button,
    Link,
    Textbox,
    Select,
    Text,
    Image,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Button => "button",
            Role::Link => "link",
            Role::Textbox => "textbox",
            Role::Select => "select",
            Role::Text => "text",
            Role::Image => "image",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub element_id: String,
    pub role: Role,
    pub label: String,
    #[serde(default)]
    pub text_value: String,
    pub visible: bool,
    pub enabled: bool,
    pub viewport: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

impl Element {
    pub fn matches_label(&self, label: &str) -> bool {
        self.label.trim().eq_ignore_ascii_case(label.trim())
    }

    /// Visible, in the viewport and enabled.
    pub fn is_actionable(&self) -> bool {
        self.visible && self.viewport && self.enabled
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlay {
    pub overlay_id: String,
    pub label: String,
}

/// Observable page state at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSnapshot {
    pub url: String,
    pub title: String,
    pub elements: Vec<Element>,
    #[serde(default)]
    pub overlays: Vec<Overlay>,
    pub screenshot_ref: String,
    pub clock: u64,
}

/// Why label resolution failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Unresolved {
    Missing,
    OutOfView,
    Disabled,
}

impl PageSnapshot {
    /// Resolves a label to the first visible, enabled match in document order.
    ///
    /// A visible match that is disabled or scrolled out of view is reported
    /// as such rather than as missing.
    pub fn resolve(&self, label: &str) -> Result<&Element, Unresolved> {
        let mut fallback = Unresolved::Missing;
        for el in self.elements.iter().filter(|e| e.visible && e.matches_label(label)) {
            if !el.enabled {
                fallback = Unresolved::Disabled;
                continue;
            }
            if !el.viewport {
                if fallback == Unresolved::Missing {
                    fallback = Unresolved::OutOfView;
                }
                continue;
            }
            return Ok(el);
        }
        Err(fallback)
    }

    /// First visible element with this label regardless of viewport/enabled state.
    pub fn find_visible(&self, label: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.visible && e.matches_label(label))
    }

    /// URL path plus query, without scheme and host. Used as the page key.
    pub fn page_key(&self) -> String {
        page_key(&self.url)
    }

    /// True while a navigation has not finished loading.
    pub fn is_loading(&self) -> bool {
        self.title == LOADING_TITLE
    }

    /// Canonical JSON used for digests and replay-equality checks.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

pub const LOADING_TITLE: &str = "Loading…";

pub fn page_key(url: &str) -> String {
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => return url.to_string(),
    };
    match rest.find('/') {
        Some(i) => rest[i..].to_string(),
        None => "/".to_string(),
    }
}

pub fn url_host(url: &str) -> Option<&str> {
    let rest = &url[url.find("://")? + 3..];
    Some(rest.split('/').next().unwrap_or(rest))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    ElementNotFound,
    Intercepted { overlay_id: String },
    Disabled,
    Timeout,
    NoEffect,
}

impl OutcomeStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, OutcomeStatus::Ok)
    }

    pub fn name(&self) -> &'static str {
        match self {
            OutcomeStatus::Ok => "ok",
            OutcomeStatus::ElementNotFound => "element_not_found",
            OutcomeStatus::Intercepted { .. } => "intercepted",
            OutcomeStatus::Disabled => "disabled",
            OutcomeStatus::Timeout => "timeout",
            OutcomeStatus::NoEffect => "no_effect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub status: OutcomeStatus,
    pub message: String,
    /// Text returned by a read, when the command was a successful read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<String>,
    pub after: PageSnapshot,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(id: &str, label: &str, visible: bool, enabled: bool, viewport: bool) -> Element {
        Element {
            element_id: id.into(),
            role: Role::Button,
            label: label.into(),
            text_value: String::new(),
            visible,
            enabled,
            viewport,
            options: vec![],
        }
    }

    fn snap(elements: Vec<Element>) -> PageSnapshot {
        PageSnapshot {
            url: "https://a.sim/results?page=2".into(),
            title: "t".into(),
            elements,
            overlays: vec![],
            screenshot_ref: "sha256:0".into(),
            clock: 0,
        }
    }

    #[test]
    fn resolve_prefers_first_visible_enabled() {
        let s = snap(vec![
            el("a", "Go", false, true, true),
            el("b", "Go", true, false, true),
            el("c", "go", true, true, true),
        ]);
        assert_eq!(s.resolve("Go").unwrap().element_id, "c");
    }

    #[test]
    fn resolve_reports_reason() {
        let s = snap(vec![el("a", "Go", true, false, true)]);
        assert_eq!(s.resolve("Go").unwrap_err(), Unresolved::Disabled);
        let s = snap(vec![el("a", "Go", true, true, false)]);
        assert_eq!(s.resolve("Go").unwrap_err(), Unresolved::OutOfView);
        assert_eq!(s.resolve("Stop").unwrap_err(), Unresolved::Missing);
    }

    #[test]
    fn page_keys() {
        assert_eq!(page_key("https://a.sim/results?page=2"), "/results?page=2");
        assert_eq!(page_key("https://a.sim"), "/");
        assert_eq!(page_key("about:blank"), "about:blank");
        assert_eq!(url_host("https://a.sim/x"), Some("a.sim"));
    }
}
