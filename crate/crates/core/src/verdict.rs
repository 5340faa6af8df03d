use std::collections::BTreeMap;

use crate::record::{Decision, ReasonCode};

/// Outcome of one filter check together with the metrics it measured.
///
/// `reason` is set exactly when the decision is a rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterVerdict {
    pub decision: Decision,
    pub reason: Option<ReasonCode>,
    pub metrics: BTreeMap<&'static str, f64>,
}

pub type TextVerdict = FilterVerdict;
pub type ImageVerdict = FilterVerdict;

impl FilterVerdict {
    pub fn keep() -> Self {
        Self {
            decision: Decision::Keep,
            reason: None,
            metrics: BTreeMap::new(),
        }
    }

    pub fn reject(reason: ReasonCode) -> Self {
        Self {
            decision: Decision::Reject,
            reason: Some(reason),
            metrics: BTreeMap::new(),
        }
    }

    /// Keep unless `reject` holds, in which case reject with `reason`.
    pub fn unless(reject: bool, reason: ReasonCode) -> Self {
        if reject {
            Self::reject(reason)
        } else {
            Self::keep()
        }
    }

    pub fn with(mut self, name: &'static str, value: f64) -> Self {
        self.metrics.insert(name, value);
        self
    }

    pub fn is_keep(&self) -> bool {
        self.decision == Decision::Keep
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}
