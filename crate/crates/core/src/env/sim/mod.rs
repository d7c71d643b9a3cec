//! SimWeb: a deterministic, fault-injecting stand-in for real websites.
//!
//! The session is a pure function of (site, seed, command sequence).

pub mod catalog;
pub mod site;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::action::{quote, ActionCommand, Direction};
use super::page::{
    page_key, url_host, ActionOutcome, Element, OutcomeStatus, Overlay, PageSnapshot, Unresolved,
    LOADING_TITLE,
};
use super::screenshot;
use super::{EnvError, Environment};
use crate::digest::{derive_seed, sha256_hex, tag_word};
pub use site::{ElementDef, FaultKind, FaultSpec, Goal, PageDef, SimSiteDef, Transition};

pub const BLANK_URL: &str = "about:blank";
/// Commands a slow page ignores before it finishes loading on its own.
const LOAD_TICKS: u32 = 2;
pub const CLICK_SHIELD: &str = "click-shield";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    Enabled,
    Disabled,
}

#[derive(Debug, Clone)]
struct State {
    seed: u64,
    page: Option<String>,
    values: BTreeMap<String, String>,
    scroll: u32,
    loading: u32,
    dismissed: BTreeSet<String>,
    armed: BTreeSet<String>,
    clock: u64,
    answer: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SimWeb {
    site: Arc<SimSiteDef>,
    faults: FaultMode,
    state: Option<State>,
}

/// Uniform draw in [0,1) from (run seed, fault seed, clock).
pub fn fault_draw(run_seed: u64, fault_seed: u64, clock: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(derive_seed(&[run_seed, fault_seed, clock])).random::<f64>()
}

fn arming_clock() -> u64 {
    tag_word("arm")
}

impl SimWeb {
    pub fn new(site: Arc<SimSiteDef>, faults: FaultMode) -> Self {
        SimWeb { site, faults, state: None }
    }

    pub fn site(&self) -> &SimSiteDef {
        &self.site
    }

    pub fn answer(&self) -> Option<&str> {
        self.state.as_ref()?.answer.as_deref()
    }

    fn faults(&self) -> &[FaultSpec] {
        match self.faults {
            FaultMode::Enabled => &self.site.faults,
            FaultMode::Disabled => &[],
        }
    }

    fn st(&self) -> Result<&State, EnvError> {
        self.state.as_ref().ok_or(EnvError::SessionClosed)
    }

    fn page_def(&self, st: &State) -> Option<&PageDef> {
        st.page.as_deref().and_then(|p| self.site.page(p))
    }

    fn fold_of(&self, st: &State, el: &ElementDef) -> u32 {
        let mut fold = el.fold;
        for f in self.faults() {
            if let FaultKind::LayoutShift { at_clock, target } = &f.kind {
                if target == &el.id && st.clock >= *at_clock {
                    fold = fold.max(1);
                }
            }
        }
        fold
    }

    fn active_overlay<'a>(&'a self, st: &State) -> Option<(&'a str, &'a str, &'a str)> {
        if st.loading > 0 {
            return None;
        }
        let page = st.page.as_deref()?;
        self.faults().iter().find_map(|f| match &f.kind {
            FaultKind::Popup { at_clock, overlay_id, label, dismiss_label, page: only, .. }
                if st.clock >= *at_clock
                    && st.armed.contains(overlay_id)
                    && !st.dismissed.contains(overlay_id)
                    && only.as_deref().is_none_or(|p| p == page) =>
            {
                Some((overlay_id.as_str(), label.as_str(), dismiss_label.as_str()))
            }
            _ => None,
        })
    }

    fn render(&self, st: &State) -> PageSnapshot {
        let Some(page) = self.page_def(st) else {
            return finish(BLANK_URL.into(), "New tab".into(), vec![], vec![], st.clock);
        };
        let url = self.site.url(page);
        if st.loading > 0 {
            return finish(url, LOADING_TITLE.into(), vec![], vec![], st.clock);
        }
        let mut elements: Vec<Element> = page
            .elements
            .iter()
            .map(|d| Element {
                element_id: d.id.clone(),
                role: d.role,
                label: d.label.clone(),
                text_value: st.values.get(&d.id).cloned().unwrap_or_else(|| d.value.clone()),
                visible: true,
                enabled: d.enabled,
                viewport: self.fold_of(st, d) <= st.scroll,
                options: d.options.clone(),
            })
            .collect();
        let mut overlays = vec![];
        if let Some((id, label, dismiss)) = self.active_overlay(st) {
            overlays.push(Overlay { overlay_id: id.into(), label: label.into() });
            elements.push(Element {
                element_id: format!("{id}-dismiss"),
                role: super::page::Role::Button,
                label: dismiss.into(),
                text_value: String::new(),
                visible: true,
                enabled: true,
                viewport: true,
                options: vec![],
            });
        }
        finish(url, format!("{} - {}", page.title, self.site.title), elements, overlays, st.clock)
    }

    fn navigate(&self, st: &mut State, page: &str) {
        st.page = Some(page.to_string());
        st.scroll = 0;
        st.loading = 0;
        for f in self.faults() {
            if let FaultKind::SlowLoad { p } = f.kind {
                if fault_draw(st.seed, f.seed, st.clock) < p {
                    st.loading = LOAD_TICKS;
                }
            }
        }
    }

    fn transient(&self, st: &State, pick: fn(&FaultKind) -> Option<f64>) -> bool {
        self.faults().iter().any(|f| pick(&f.kind).is_some_and(|p| fault_draw(st.seed, f.seed, st.clock) < p))
    }

    fn step(&self, st: &mut State, cmd: &ActionCommand) -> (OutcomeStatus, String, Option<String>) {
        use OutcomeStatus as S;
        if let ActionCommand::CaptureState = cmd {
            let msg = if st.loading > 0 { "Waited for the page to load" } else { "Captured the page state" };
            st.loading = 0;
            return (S::Ok, msg.into(), None);
        }
        if let ActionCommand::Answer { text } = cmd {
            st.answer = Some(text.clone());
            return (S::Ok, format!("Answered {}", quote(text)), None);
        }
        if let ActionCommand::VisitUrl { url } = cmd {
            let on_site = url_host(url) == Some(self.site.site_id.as_str());
            return match self.site.page_by_path(&page_key(url)).filter(|_| on_site) {
                Some(p) => {
                    let name = p.name.clone();
                    self.navigate(st, &name);
                    (S::Ok, format!("Navigated to {url}"), None)
                }
                None => (S::NoEffect, format!("Failed to navigate to {url}: the site couldn't be reached"), None),
            };
        }
        if st.loading > 0 {
            st.loading -= 1;
            let verb = cmd.gerund();
            return (S::Timeout, format!("Failed at {verb}: the page didn't load"), None);
        }
        let snap = self.render(st);
        match cmd {
            ActionCommand::Scroll { direction, amount } => {
                let max = self
                    .page_def(st)
                    .map(|p| p.elements.iter().map(|e| self.fold_of(st, e)).max().unwrap_or(0))
                    .unwrap_or(0);
                let n = (*amount).max(1);
                match direction {
                    Direction::Down => st.scroll = (st.scroll + n).min(max.max(st.scroll)),
                    Direction::Up => st.scroll = st.scroll.saturating_sub(n),
                }
                let word = if *direction == Direction::Down { "down" } else { "up" };
                (S::Ok, format!("Scrolled {word}"), None)
            }
            ActionCommand::WebSearch { query } => {
                (S::NoEffect, format!("Failed to search for {}: web search is unavailable here", quote(query)), None)
            }
            ActionCommand::ReadText { target } => match snap.find_visible(target) {
                Some(el) => {
                    let v = el.text_value.clone();
                    (S::Ok, format!("Read {}: {}", quote(target), quote(&v)), Some(v))
                }
                None => (S::ElementNotFound, format!("Failed to read {}: the element can't be located", quote(target)), None),
            },
            ActionCommand::Click { target }
            | ActionCommand::TypeText { target, .. }
            | ActionCommand::Select { target, .. } => {
                let verb = match cmd {
                    ActionCommand::Click { .. } => "click",
                    ActionCommand::TypeText { .. } => "type into",
                    _ => "select in",
                };
                let el = match snap.resolve(target) {
                    Ok(el) => el.clone(),
                    Err(Unresolved::Disabled) => {
                        return (S::Disabled, format!("Failed to {verb} {}: the element is inactive", quote(target)), None)
                    }
                    Err(Unresolved::OutOfView) => {
                        return (
                            S::ElementNotFound,
                            format!("Failed to {verb} {}: the element can't be located in view", quote(target)),
                            None,
                        )
                    }
                    Err(Unresolved::Missing) => {
                        return (S::ElementNotFound, format!("Failed to {verb} {}: the element can't be located", quote(target)), None)
                    }
                };
                if let Some(ov) = snap.overlays.first() {
                    if el.element_id != format!("{}-dismiss", ov.overlay_id) {
                        return (
                            S::Intercepted { overlay_id: ov.overlay_id.clone() },
                            format!("Failed to {verb} {}: the {} pop-up intercepted the input", quote(target), quote(&ov.label)),
                            None,
                        );
                    }
                    st.dismissed.insert(ov.overlay_id.clone());
                    return (S::Ok, format!("Clicked {}", quote(target)), None);
                }
                if self.transient(st, |k| match k {
                    FaultKind::StaleElement { p } => Some(*p),
                    _ => None,
                }) {
                    return (S::NoEffect, format!("Failed to {verb} {}: the element was stale and didn't respond", quote(target)), None);
                }
                match cmd {
                    ActionCommand::Click { target } => {
                        if self.transient(st, |k| match k {
                            FaultKind::InterceptedClick { p } => Some(*p),
                            _ => None,
                        }) {
                            return (
                                S::Intercepted { overlay_id: CLICK_SHIELD.into() },
                                format!("Failed to click {}: another element received the click", quote(target)),
                                None,
                            );
                        }
                        let page = st.page.clone().unwrap_or_default();
                        if let Some(t) = self.site.transition(&page, &el.element_id) {
                            for (id, template) in &t.set {
                                let v = expand(template, &st.values, &self.site);
                                st.values.insert(id.clone(), v);
                            }
                            if let Some(to) = &t.to {
                                self.navigate(st, to);
                            }
                        }
                        (S::Ok, format!("Clicked {}", quote(target)), None)
                    }
                    ActionCommand::TypeText { target, text } => {
                        if el.role != super::page::Role::Textbox {
                            return (S::NoEffect, format!("Failed to type into {}: it is not a text field", quote(target)), None);
                        }
                        st.values.insert(el.element_id.clone(), text.clone());
                        (S::Ok, format!("Typed {} into {}", quote(text), quote(target)), None)
                    }
                    ActionCommand::Select { target, option } => {
                        match el.options.iter().find(|o| o.eq_ignore_ascii_case(option.trim())) {
                            Some(o) => {
                                st.values.insert(el.element_id.clone(), o.clone());
                                (S::Ok, format!("Selected {} in {}", quote(o), quote(target)), None)
                            }
                            None => (S::NoEffect, format!("Failed to select {} in {}: no such option", quote(option), quote(target)), None),
                        }
                    }
                    _ => unreachable!(),
                }
            }
            _ => unreachable!("handled above"),
        }
    }
}

fn finish(url: String, title: String, elements: Vec<Element>, overlays: Vec<Overlay>, clock: u64) -> PageSnapshot {
    let mut snap = PageSnapshot { url, title, elements, overlays, screenshot_ref: String::new(), clock };
    snap.screenshot_ref = screenshot::screenshot_ref(&snap);
    snap
}

const ADJECTIVES: [&str; 8] = ["Quiet", "Bright", "Hidden", "Golden", "Last", "Open", "Northern", "Slow"];
const NOUNS: [&str; 8] = ["Harbor", "Garden", "Signal", "Orchard", "Bridge", "Season", "Market", "Archive"];

fn derived(func: &str, input: &str) -> String {
    let h = sha256_hex(input.as_bytes());
    let n = u64::from_str_radix(&h[..12], 16).unwrap_or(0);
    match func {
        "price" => format!("${}", 150 + n % 900),
        "title" => format!(
            "The {} {} ({})",
            ADJECTIVES[(n % 8) as usize],
            NOUNS[((n / 8) % 8) as usize],
            1990 + (n / 64) % 35
        ),
        "listing" => format!(
            "{} {} flat, {}",
            1 + n % 4,
            ["bed", "room", "bedroom", "bed loft"][((n / 4) % 4) as usize],
            NOUNS[((n / 16) % 8) as usize]
        ),
        _ => input.to_string(),
    }
}

/// Expands `{{id}}` and `{{func id}}` (price, title, listing) against current values.
fn expand(template: &str, values: &BTreeMap<String, String>, site: &SimSiteDef) -> String {
    let value_of = |id: &str| {
        values
            .get(id)
            .cloned()
            .or_else(|| site.element(id).map(|e| e.value.clone()))
            .unwrap_or_default()
    };
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let Some(end) = rest[start..].find("}}") else {
            out.push_str(&rest[start..]);
            return out;
        };
        let inner = rest[start + 2..start + end].trim();
        match inner.split_once(' ') {
            Some((func, id)) => out.push_str(&derived(func, &value_of(id.trim()))),
            None => out.push_str(&value_of(inner)),
        }
        rest = &rest[start + end + 2..];
    }
    out.push_str(rest);
    out
}

impl Environment for SimWeb {
    fn reset(&mut self, seed: u64) -> Result<PageSnapshot, EnvError> {
        let mut armed = BTreeSet::new();
        for f in self.faults() {
            if let FaultKind::Popup { chance, overlay_id, .. } = &f.kind {
                if fault_draw(seed, f.seed, arming_clock()) < *chance {
                    armed.insert(overlay_id.clone());
                }
            }
        }
        let st = State {
            seed,
            page: None,
            values: BTreeMap::new(),
            scroll: 0,
            loading: 0,
            dismissed: BTreeSet::new(),
            armed,
            clock: 0,
            answer: None,
        };
        let snap = self.render(&st);
        self.state = Some(st);
        Ok(snap)
    }

    fn apply(&mut self, cmd: &ActionCommand) -> Result<ActionOutcome, EnvError> {
        let mut st = self.st()?.clone();
        let (status, message, extracted) = self.step(&mut st, cmd);
        st.clock += 1;
        let after = self.render(&st);
        self.state = Some(st);
        Ok(ActionOutcome { status, message, extracted, after })
    }

    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError> {
        let st = self.st()?;
        Ok(self.render(st))
    }

    fn close(&mut self) {
        self.state = None;
    }

    fn submitted_answer(&self) -> Option<String> {
        self.answer().map(str::to_string)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flight() -> SimWeb {
        SimWeb::new(catalog::site("skyfare.sim").unwrap(), FaultMode::Disabled)
    }

    fn click(t: &str) -> ActionCommand {
        ActionCommand::Click { target: t.into() }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = flight();
        let mut b = flight();
        assert_eq!(a.reset(7).unwrap(), b.reset(7).unwrap());
    }

    #[test]
    fn type_then_read_back() {
        let mut env = flight();
        env.reset(1).unwrap();
        env.apply(&ActionCommand::VisitUrl { url: "https://skyfare.sim/".into() }).unwrap();
        let out = env
            .apply(&ActionCommand::TypeText { target: "To".into(), text: "Paris".into() })
            .unwrap();
        assert!(out.status.is_ok());
        assert!(out.message.starts_with("Typed"));
        assert_eq!(out.after.find_visible("To").unwrap().text_value, "Paris");
    }

    #[test]
    fn snapshot_is_idempotent_and_clock_advances() {
        let mut env = flight();
        env.reset(3).unwrap();
        let a = env.snapshot().unwrap();
        assert_eq!(a, env.snapshot().unwrap());
        let out = env.apply(&ActionCommand::CaptureState).unwrap();
        assert!(out.after.clock > a.clock);
    }

    #[test]
    fn closed_session() {
        let mut env = flight();
        assert_eq!(env.snapshot().unwrap_err(), EnvError::SessionClosed);
        env.reset(0).unwrap();
        env.close();
        assert_eq!(env.apply(&click("Search")).unwrap_err(), EnvError::SessionClosed);
    }

    #[test]
    fn expand_templates() {
        let site = catalog::site("skyfare.sim").unwrap();
        let mut values = BTreeMap::new();
        values.insert("f-to".to_string(), "Oslo".to_string());
        assert_eq!(expand("to {{f-to}}!", &values, &site), "to Oslo!");
        let p = expand("{{price f-to}}", &values, &site);
        assert!(p.starts_with('$'));
        assert_eq!(p, expand("{{price f-to}}", &values, &site));
    }
}
