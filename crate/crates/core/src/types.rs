//! Domain types shared across the engine, trainer and evaluation harness.

use std::fmt;

use crate::error::{Error, Result};

pub type IntentId = u32;

/// Ground-truth role of a request. Visible to metrics, never to the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    BenignIndependent,
    BenignFragment(IntentId),
    MaliciousFragment(IntentId),
    /// The monolithic malicious objective. Training data only.
    MaliciousAnchor(IntentId),
}

impl Role {
    pub fn intent_id(&self) -> Option<IntentId> {
        match *self {
            Role::BenignIndependent => None,
            Role::BenignFragment(id) | Role::MaliciousFragment(id) | Role::MaliciousAnchor(id) => {
                Some(id)
            }
        }
    }

    pub fn is_malicious(&self) -> bool {
        matches!(self, Role::MaliciousFragment(_) | Role::MaliciousAnchor(_))
    }

    pub fn is_benign(&self) -> bool {
        !self.is_malicious()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Role::BenignIndependent => "benign_independent",
            Role::BenignFragment(_) => "benign_fragment",
            Role::MaliciousFragment(_) => "malicious_fragment",
            Role::MaliciousAnchor(_) => "malicious_anchor",
        }
    }

    pub fn from_parts(name: &str, intent_id: Option<IntentId>) -> Result<Role> {
        let need = |id: Option<IntentId>| {
            id.ok_or_else(|| Error::Format(format!("role {name} requires intent_id")))
        };
        match name {
            "benign_independent" => match intent_id {
                None => Ok(Role::BenignIndependent),
                Some(_) => Err(Error::Format("benign_independent has no intent_id".into())),
            },
            "benign_fragment" => Ok(Role::BenignFragment(need(intent_id)?)),
            "malicious_fragment" => Ok(Role::MaliciousFragment(need(intent_id)?)),
            "malicious_anchor" => Ok(Role::MaliciousAnchor(need(intent_id)?)),
            other => Err(Error::Format(format!("unknown role {other:?}"))),
        }
    }
}

/// One element of the global request stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub text: String,
    pub role: Role,
    /// Global time step, 1-based.
    pub arrival_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Allow,
    Block,
}

impl Decision {
    pub fn is_block(self) -> bool {
        self == Decision::Block
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Allow => "allow",
            Decision::Block => "block",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which branch of the decision function produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    EmptyHistory,
    Inherited,
    IntentBlocked,
    IntentPassed,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::EmptyHistory => "empty_history",
            Stage::Inherited => "inherited",
            Stage::IntentBlocked => "intent_blocked",
            Stage::IntentPassed => "intent_passed",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub stage: Stage,
    pub matched_entry_id: Option<u64>,
    pub similarity: Option<f64>,
}

/// Decision thresholds. Both similarity thresholds are compared strictly (`>`).
///
/// [`Thresholds::new`] enforces the operational range `(0, 1)`. The fields are
/// public so that limit experiments (a threshold of `-1` or `+inf`) can bypass it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub tau_sem: f64,
    pub tau_int: f64,
    pub k: usize,
}

impl Thresholds {
    pub fn new(tau_sem: f64, tau_int: f64, k: usize) -> Result<Self> {
        let t = Thresholds { tau_sem, tau_int, k };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |x: f64| x > 0.0 && x < 1.0;
        if !inside(self.tau_sem) || !inside(self.tau_int) {
            return Err(Error::InvalidConfig(format!(
                "thresholds must lie in (0, 1): tau_sem={} tau_int={}",
                self.tau_sem, self.tau_int
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// The semantic and intent embeddings of one request, both unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub semantic: Vec<f32>,
    pub intent: Vec<f32>,
}
