//! European option pricing and delta under constant volatility, zero
//! dividends.
//!
//! Degenerate inputs collapse to the discounted-intrinsic limit: with
//! `years_to_expiry == 0` or `vol == 0` the price is
//! `max(s * spot - K * exp(-r T), 0)`-style intrinsic against the
//! discounted strike, and delta becomes a step function that takes the
//! value 0.5 (call) / -0.5 (put) exactly at the discounted strike.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Shares per listed option contract.
pub const CONTRACT_MULTIPLIER: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingInputs {
    pub spot: f64,
    pub strike: f64,
    pub years_to_expiry: f64,
    pub vol: f64,
    pub rate: f64,
}

impl PricingInputs {
    fn validate(&self) -> Result<()> {
        let ok = self.spot.is_finite()
            && self.spot > 0.0
            && self.strike.is_finite()
            && self.strike > 0.0
            && self.years_to_expiry.is_finite()
            && self.years_to_expiry >= 0.0
            && self.vol.is_finite()
            && self.vol >= 0.0
            && self.rate.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "invalid pricing inputs: spot {}, strike {}, T {}, vol {}, rate {}",
                self.spot, self.strike, self.years_to_expiry, self.vol, self.rate
            )))
        }
    }

    fn is_degenerate(&self) -> bool {
        self.years_to_expiry == 0.0 || self.vol == 0.0
    }

    fn discounted_strike(&self) -> f64 {
        self.strike * (-self.rate * self.years_to_expiry).exp()
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn d1_d2(inputs: &PricingInputs) -> (f64, f64) {
    let sqrt_t = inputs.years_to_expiry.sqrt();
    let sigma_sqrt_t = inputs.vol * sqrt_t;
    let d1 = ((inputs.spot / inputs.strike).ln()
        + (inputs.rate + 0.5 * inputs.vol * inputs.vol) * inputs.years_to_expiry)
        / sigma_sqrt_t;
    (d1, d1 - sigma_sqrt_t)
}

/// Black-Scholes price per share of underlying.
pub fn price(inputs: &PricingInputs, kind: OptionKind) -> Result<f64> {
    inputs.validate()?;
    if inputs.is_degenerate() {
        let k = inputs.discounted_strike();
        return Ok(match kind {
            OptionKind::Call => (inputs.spot - k).max(0.0),
            OptionKind::Put => (k - inputs.spot).max(0.0),
        });
    }
    let (d1, d2) = d1_d2(inputs);
    let discount = (-inputs.rate * inputs.years_to_expiry).exp();
    Ok(match kind {
        OptionKind::Call => inputs.spot * norm_cdf(d1) - inputs.strike * discount * norm_cdf(d2),
        OptionKind::Put => inputs.strike * discount * norm_cdf(-d2) - inputs.spot * norm_cdf(-d1),
    })
}

/// Black-Scholes delta per share. Degenerate inputs give the step limit,
/// with 0.5 / -0.5 exactly at the discounted strike.
pub fn delta(inputs: &PricingInputs, kind: OptionKind) -> Result<f64> {
    inputs.validate()?;
    if inputs.is_degenerate() {
        let k = inputs.discounted_strike();
        let call = if inputs.spot > k {
            1.0
        } else if inputs.spot < k {
            0.0
        } else {
            0.5
        };
        return Ok(match kind {
            OptionKind::Call => call,
            OptionKind::Put => call - 1.0,
        });
    }
    let (d1, _) = d1_d2(inputs);
    Ok(match kind {
        OptionKind::Call => norm_cdf(d1),
        OptionKind::Put => norm_cdf(d1) - 1.0,
    })
}

/// Exercise value per share at expiry.
pub fn intrinsic(kind: OptionKind, spot: f64, strike: f64) -> f64 {
    match kind {
        OptionKind::Call => (spot - strike).max(0.0),
        OptionKind::Put => (strike - spot).max(0.0),
    }
}

/// An open option position. `contracts` is signed: positive long, negative
/// short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionContract {
    pub symbol: String,
    pub kind: OptionKind,
    pub strike: f64,
    pub expiry: NaiveDate,
    pub contracts: i64,
}

impl OptionContract {
    /// Mark-to-model value of the whole position.
    pub fn mark(&self, spot: f64, vol: f64, rate: f64, years_to_expiry: f64) -> Result<f64> {
        let per_share = price(
            &PricingInputs { spot, strike: self.strike, years_to_expiry, vol, rate },
            self.kind,
        )?;
        Ok(per_share * self.contracts as f64 * CONTRACT_MULTIPLIER)
    }

    /// Settlement cash for the whole position at expiry.
    pub fn payoff(&self, spot: f64) -> f64 {
        intrinsic(self.kind, spot, self.strike) * self.contracts as f64 * CONTRACT_MULTIPLIER
    }

    /// Position delta in underlying shares.
    pub fn position_delta(&self, spot: f64, vol: f64, rate: f64, years_to_expiry: f64) -> Result<f64> {
        let per_share = delta(
            &PricingInputs { spot, strike: self.strike, years_to_expiry, vol, rate },
            self.kind,
        )?;
        Ok(per_share * self.contracts as f64 * CONTRACT_MULTIPLIER)
    }
}
