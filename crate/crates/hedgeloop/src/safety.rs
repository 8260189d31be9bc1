//! Deterministic drawdown override with hysteresis.
//!
//! The override looks only at portfolio drawdown and its own previous
//! state, never at the candidate decision, so a misbehaving controller
//! cannot argue its way past it. Activation at `drawdown_threshold` and
//! release at the lower `release_threshold` prevent daily flip-flopping
//! around a single boundary.

use serde::{Deserialize, Serialize};

use crate::controller::{AllocationDecision, DecisionSource, SleeveWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    /// Drawdown fraction above which the override activates (strict).
    pub drawdown_threshold: f64,
    /// Drawdown fraction below which an active override releases (strict).
    pub release_threshold: f64,
    pub protective_weights: SleeveWeights,
    pub protective_equity_exposure: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            drawdown_threshold: 0.10,
            release_threshold: 0.06,
            protective_weights: SleeveWeights { collar: 0.8, straddle: 0.0, delta_neutral: 0.0, cash: 0.2 },
            protective_equity_exposure: 0.5,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.release_threshold
            && self.release_threshold < self.drawdown_threshold
            && self.drawdown_threshold < 1.0)
        {
            return Err(Error::Config(format!(
                "need 0 < release_threshold ({}) < drawdown_threshold ({}) < 1",
                self.release_threshold, self.drawdown_threshold
            )));
        }
        if (self.protective_weights.sum() - 1.0).abs() > 1e-9 || !self.protective_weights.is_valid(1e-9) {
            return Err(Error::Config("protective weights must be a valid weight vector".into()));
        }
        if !(0.0..=1.0).contains(&self.protective_equity_exposure) {
            return Err(Error::Config("protective equity exposure must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub active: bool,
    /// The decision to execute: protective when active, the candidate
    /// bit-identically when not.
    pub decision: AllocationDecision,
    /// Drawdown evaluated for this verdict.
    pub trigger_drawdown: f64,
}

/// Hysteresis rule: activate on drawdown > threshold, stay active until
/// drawdown < release. A function of (drawdown, previous state) only.
pub fn check_and_override(
    candidate: AllocationDecision,
    current_drawdown: f64,
    previously_active: bool,
    config: &SafetyConfig,
) -> SafetyVerdict {
    let active = if previously_active {
        current_drawdown >= config.release_threshold
    } else {
        current_drawdown > config.drawdown_threshold
    };
    if !active {
        return SafetyVerdict { active: false, decision: candidate, trigger_drawdown: current_drawdown };
    }
    SafetyVerdict {
        active: true,
        decision: AllocationDecision {
            weights: config.protective_weights,
            equity_exposure: config.protective_equity_exposure,
            source: DecisionSource::Override,
            rationale: format!(
                "safety override at drawdown {:.4} (threshold {}, release {})",
                current_drawdown, config.drawdown_threshold, config.release_threshold
            ),
        },
        trigger_drawdown: current_drawdown,
    }
}
