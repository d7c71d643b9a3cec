//! Browser-like environments: the action vocabulary, page snapshots, the
//! built-in SimWeb and clients for external adapters.

pub mod action;
pub mod adapter;
pub mod page;
pub mod protocol;
pub mod screenshot;
pub mod sim;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use action::ActionCommand;
use page::{ActionOutcome, PageSnapshot};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("session closed")]
    SessionClosed,
}

/// One browser session. Commands are applied strictly in order.
pub trait Environment: Send {
    fn reset(&mut self, seed: u64) -> Result<PageSnapshot, EnvError>;
    fn apply(&mut self, cmd: &ActionCommand) -> Result<ActionOutcome, EnvError>;
    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError>;
    fn close(&mut self) {}
    /// The last answer submitted in this session, if the environment tracks it.
    fn submitted_answer(&self) -> Option<String> {
        None
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, seed: u64) -> Result<PageSnapshot, EnvError> {
        (**self).reset(seed)
    }
    fn apply(&mut self, cmd: &ActionCommand) -> Result<ActionOutcome, EnvError> {
        (**self).apply(cmd)
    }
    fn snapshot(&mut self) -> Result<PageSnapshot, EnvError> {
        (**self).snapshot()
    }
    fn close(&mut self) {
        (**self).close()
    }
    fn submitted_answer(&self) -> Option<String> {
        (**self).submitted_answer()
    }
}

/// How to open a session for a site: built-in SimWeb or an external adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    /// Whether the site's own faults are active.
    #[serde(default = "yes")]
    pub faults: bool,
    /// Faults added on top of (or instead of) the site's own.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_faults: Vec<sim::FaultSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<adapter::AdapterSpec>,
}

fn yes() -> bool {
    true
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec { faults: true, extra_faults: vec![], adapter: None }
    }
}

impl EnvSpec {
    pub fn fault_free() -> Self {
        EnvSpec { faults: false, ..EnvSpec::default() }
    }

    /// The simulated site this spec would run, with fault lists applied.
    pub fn sim_site(&self, site_id: &str) -> Result<Arc<sim::SimSiteDef>, EnvError> {
        let base = sim::catalog::site(site_id)
            .ok_or_else(|| EnvError::AdapterUnavailable(format!("no simulated site {site_id}")))?;
        if self.faults && self.extra_faults.is_empty() {
            return Ok(base);
        }
        let mut site = (*base).clone();
        if !self.faults {
            site.faults.clear();
        }
        site.faults.extend(self.extra_faults.iter().cloned());
        Ok(Arc::new(site))
    }

    pub fn open(&self, site_id: &str) -> Result<Box<dyn Environment>, EnvError> {
        match &self.adapter {
            Some(spec) => Ok(Box::new(adapter::AdapterEnv::connect(spec)?)),
            None => Ok(Box::new(sim::SimWeb::new(self.sim_site(site_id)?, sim::FaultMode::Enabled))),
        }
    }

    pub fn is_sim(&self) -> bool {
        self.adapter.is_none()
    }
}
