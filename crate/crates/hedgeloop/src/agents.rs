//! Sleeve agents: translate an allocated notional into concrete option and
//! equity orders for the collar, straddle, and delta-neutral sleeves.
//!
//! Contracts cover `floor(notional / (spot * multiplier))` lots so a sleeve
//! never commits more than its allocation. Open legs keep their strikes
//! until they either enter the roll window (close and reopen at fresh
//! spot-relative strikes with full tenor) or the sleeve is resized (trade
//! the lot difference at the existing strikes).

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::TradingCalendar;
use crate::controller::Sleeve;
use crate::error::{Error, Result};
use crate::market::TRADING_DAYS_PER_YEAR;
use crate::pricing::{OptionContract, OptionKind, CONTRACT_MULTIPLIER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    /// Collar put strike as a fraction of spot.
    pub put_strike_offset: f64,
    /// Collar call strike as a fraction of spot.
    pub call_strike_offset: f64,
    /// Straddle strike as a fraction of spot.
    pub straddle_strike_offset: f64,
    /// Trading days to expiry at initiation.
    pub tenor_days: usize,
    /// Trading days before expiry at which legs roll.
    pub roll_window_days: usize,
    /// Dead band for the delta-neutral sleeve, as a fraction of
    /// notional / spot shares.
    pub delta_tolerance: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            put_strike_offset: 0.90,
            call_strike_offset: 1.10,
            straddle_strike_offset: 1.00,
            tenor_days: 63,
            roll_window_days: 5,
            delta_tolerance: 0.05,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.put_strike_offset > 0.0 && self.put_strike_offset < 1.0) {
            return Err(Error::Config(format!("put_strike_offset {} must be in (0, 1)", self.put_strike_offset)));
        }
        if self.call_strike_offset <= 1.0 {
            return Err(Error::Config(format!("call_strike_offset {} must exceed 1", self.call_strike_offset)));
        }
        if self.straddle_strike_offset <= 0.0 {
            return Err(Error::Config("straddle_strike_offset must be positive".into()));
        }
        if self.roll_window_days < 1 || self.tenor_days <= self.roll_window_days {
            return Err(Error::Config(format!(
                "need tenor_days ({}) > roll_window_days ({}) >= 1",
                self.tenor_days, self.roll_window_days
            )));
        }
        if self.delta_tolerance <= 0.0 {
            return Err(Error::Config("delta_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One order emitted by an agent. Option orders carry the signed contract
/// quantity inside the contract record; equity quantities are real shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Order {
    Equity { symbol: String, shares: f64 },
    Option { contract: OptionContract },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeAction {
    pub sleeve: Sleeve,
    pub orders: Vec<Order>,
}

/// Per-symbol inputs shared by the three agents on one day.
#[derive(Debug, Clone, Copy)]
pub struct SleeveContext<'a> {
    pub symbol: &'a str,
    pub spot: f64,
    /// Currency value this sleeve should cover for this symbol.
    pub sleeve_notional: f64,
    pub today: NaiveDate,
    /// Trailing realized vol used for marking and deltas.
    pub vol: f64,
    pub rate: f64,
    pub calendar: &'a TradingCalendar,
}

impl SleeveContext<'_> {
    fn check(&self) -> Result<()> {
        if !(self.spot.is_finite() && self.spot > 0.0) {
            return Err(Error::Domain(format!("spot {} must be positive", self.spot)));
        }
        if !(self.sleeve_notional.is_finite() && self.sleeve_notional >= 0.0) {
            return Err(Error::Domain(format!("sleeve notional {} must be non-negative", self.sleeve_notional)));
        }
        Ok(())
    }

    fn target_lots(&self) -> i64 {
        (self.sleeve_notional / (self.spot * CONTRACT_MULTIPLIER)).floor() as i64
    }

    pub fn years_to_expiry(&self, expiry: NaiveDate) -> Result<f64> {
        Ok(self.calendar.trading_days_between(self.today, expiry)? as f64 / TRADING_DAYS_PER_YEAR)
    }
}

fn fresh_expiry(ctx: &SleeveContext<'_>, params: &AgentParams) -> Result<NaiveDate> {
    ctx.calendar.add_trading_days(ctx.today, params.tenor_days)
}

fn in_roll_window(ctx: &SleeveContext<'_>, leg: &OptionContract, params: &AgentParams) -> Result<bool> {
    Ok(ctx.calendar.trading_days_between(ctx.today, leg.expiry)? <= params.roll_window_days)
}

fn close_order(leg: &OptionContract) -> Order {
    let mut contract = leg.clone();
    contract.contracts = -leg.contracts;
    Order::Option { contract }
}

/// Desired legs for a sleeve as (kind, strike-offset, signed lots per unit).
struct LegSpec {
    kind: OptionKind,
    offset: f64,
    direction: i64,
}

fn collar_legs(params: &AgentParams) -> [LegSpec; 2] {
    [
        LegSpec { kind: OptionKind::Put, offset: params.put_strike_offset, direction: 1 },
        LegSpec { kind: OptionKind::Call, offset: params.call_strike_offset, direction: -1 },
    ]
}

fn straddle_legs(params: &AgentParams) -> [LegSpec; 2] {
    [
        LegSpec { kind: OptionKind::Call, offset: params.straddle_strike_offset, direction: 1 },
        LegSpec { kind: OptionKind::Put, offset: params.straddle_strike_offset, direction: 1 },
    ]
}

/// Shared leg maintenance: close everything when the target is zero or a
/// leg sits inside the roll window (reopening at fresh strikes in the
/// latter case), otherwise trade lot differences at the existing strikes.
fn maintain_legs(
    ctx: &SleeveContext<'_>,
    current_legs: &[OptionContract],
    specs: &[LegSpec],
    params: &AgentParams,
) -> Result<Vec<Order>> {
    ctx.check()?;
    let target = ctx.target_lots();
    let mut orders = Vec::new();

    if target == 0 {
        orders.extend(current_legs.iter().map(close_order));
        return Ok(orders);
    }

    let mut roll = false;
    for leg in current_legs {
        if in_roll_window(ctx, leg, params)? {
            roll = true;
            break;
        }
    }

    if roll || current_legs.is_empty() {
        orders.extend(current_legs.iter().map(close_order));
        let expiry = fresh_expiry(ctx, params)?;
        for spec in specs {
            orders.push(Order::Option {
                contract: OptionContract {
                    symbol: ctx.symbol.to_string(),
                    kind: spec.kind,
                    strike: spec.offset * ctx.spot,
                    expiry,
                    contracts: spec.direction * target,
                },
            });
        }
        return Ok(orders);
    }

    // Resize in place: one existing leg per spec, same strike and expiry.
    for spec in specs {
        let existing = current_legs
            .iter()
            .find(|l| l.kind == spec.kind && (l.contracts > 0) == (spec.direction > 0));
        match existing {
            Some(leg) => {
                let want = spec.direction * target;
                let diff = want - leg.contracts;
                if diff != 0 {
                    let mut contract = leg.clone();
                    contract.contracts = diff;
                    orders.push(Order::Option { contract });
                }
            }
            None => {
                // A missing leg (first day after a partial fill) reopens
                // at fresh strikes for the remaining tenor.
                let expiry = fresh_expiry(ctx, params)?;
                orders.push(Order::Option {
                    contract: OptionContract {
                        symbol: ctx.symbol.to_string(),
                        kind: spec.kind,
                        strike: spec.offset * ctx.spot,
                        expiry,
                        contracts: spec.direction * target,
                    },
                });
            }
        }
    }
    Ok(orders)
}

/// Long puts below spot, short calls above, covering the sleeve notional.
pub fn collar_step(
    ctx: &SleeveContext<'_>,
    current_legs: &[OptionContract],
    params: &AgentParams,
) -> Result<HedgeAction> {
    let orders = maintain_legs(ctx, current_legs, &collar_legs(params), params)?;
    Ok(HedgeAction { sleeve: Sleeve::Collar, orders })
}

/// Long call + long put at the same strike, covering the sleeve notional.
pub fn straddle_step(
    ctx: &SleeveContext<'_>,
    current_legs: &[OptionContract],
    params: &AgentParams,
) -> Result<HedgeAction> {
    let orders = maintain_legs(ctx, current_legs, &straddle_legs(params), params)?;
    Ok(HedgeAction { sleeve: Sleeve::Straddle, orders })
}

/// Net delta in shares of a set of legs after applying pending orders,
/// plus the equity hedge.
fn projected_delta(
    ctx: &SleeveContext<'_>,
    current_legs: &[OptionContract],
    orders: &[Order],
    equity_hedge_shares: f64,
) -> Result<f64> {
    // Fold orders into a projected position list.
    let mut legs: Vec<OptionContract> = current_legs.to_vec();
    for order in orders {
        if let Order::Option { contract } = order {
            if let Some(existing) = legs.iter_mut().find(|l| {
                l.kind == contract.kind && l.strike == contract.strike && l.expiry == contract.expiry
            }) {
                existing.contracts += contract.contracts;
            } else {
                legs.push(contract.clone());
            }
        }
    }
    let mut delta = equity_hedge_shares;
    for leg in &legs {
        if leg.contracts == 0 {
            continue;
        }
        let t = ctx.years_to_expiry(leg.expiry)?;
        delta += leg.position_delta(ctx.spot, ctx.vol, ctx.rate, t)?;
    }
    Ok(delta)
}

/// Long straddle plus an equity hedge holding the sleeve's net delta
/// inside the dead band. A zero notional unwinds options and hedge alike.
pub fn delta_neutral_step(
    ctx: &SleeveContext<'_>,
    current_legs: &[OptionContract],
    equity_hedge_shares: f64,
    params: &AgentParams,
) -> Result<HedgeAction> {
    let mut orders = maintain_legs(ctx, current_legs, &straddle_legs(params), params)?;
    if ctx.target_lots() == 0 {
        if equity_hedge_shares != 0.0 {
            orders.push(Order::Equity { symbol: ctx.symbol.to_string(), shares: -equity_hedge_shares });
        }
        return Ok(HedgeAction { sleeve: Sleeve::DeltaNeutral, orders });
    }
    let net = projected_delta(ctx, current_legs, &orders, equity_hedge_shares)?;
    let band = params.delta_tolerance * ctx.sleeve_notional / ctx.spot;
    if net.abs() > band {
        orders.push(Order::Equity { symbol: ctx.symbol.to_string(), shares: -net });
    }
    Ok(HedgeAction { sleeve: Sleeve::DeltaNeutral, orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing;
    use approx::assert_relative_eq;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn calendar() -> TradingCalendar {
        TradingCalendar::synthetic(date(2021, 1, 4), 300)
    }

    fn ctx<'a>(cal: &'a TradingCalendar, notional: f64) -> SleeveContext<'a> {
        SleeveContext {
            symbol: "SYNTH",
            spot: 100.0,
            sleeve_notional: notional,
            today: cal.first(),
            vol: 0.2,
            rate: 0.0,
            calendar: cal,
        }
    }

    fn option_orders(action: &HedgeAction) -> Vec<&OptionContract> {
        action
            .orders
            .iter()
            .filter_map(|o| match o {
                Order::Option { contract } => Some(contract),
                Order::Equity { .. } => None,
            })
            .collect()
    }

    #[test]
    fn collar_opens_at_default_offsets() {
        let cal = calendar();
        let c = ctx(&cal, 100_000.0);
        let action = collar_step(&c, &[], &AgentParams::default()).unwrap();
        let orders = option_orders(&action);
        assert_eq!(orders.len(), 2);
        let put = orders.iter().find(|o| o.kind == OptionKind::Put).unwrap();
        let call = orders.iter().find(|o| o.kind == OptionKind::Call).unwrap();
        assert_eq!(put.contracts, 10);
        assert_relative_eq!(put.strike, 90.0, epsilon = 1e-12);
        assert_eq!(call.contracts, -10);
        assert_relative_eq!(call.strike, 110.0, epsilon = 1e-12);
        let expiry = cal.add_trading_days(c.today, 63).unwrap();
        assert_eq!(put.expiry, expiry);
        assert_eq!(call.expiry, expiry);
    }

    #[test]
    fn zero_notional_closes_open_legs() {
        let cal = calendar();
        let c = ctx(&cal, 0.0);
        let leg = OptionContract {
            symbol: "SYNTH".into(),
            kind: OptionKind::Put,
            strike: 90.0,
            expiry: cal.add_trading_days(c.today, 40).unwrap(),
            contracts: 7,
        };
        let action = collar_step(&c, &[leg.clone()], &AgentParams::default()).unwrap();
        let orders = option_orders(&action);
        assert_eq!(orders.len(), 1);
        assert_eq!(orders[0].contracts, -7);
        assert_eq!(orders[0].strike, leg.strike);
    }

    #[test]
    fn legs_inside_roll_window_reopen_at_fresh_strikes() {
        let cal = calendar();
        let mut c = ctx(&cal, 100_000.0);
        c.spot = 120.0;
        let near = cal.add_trading_days(c.today, 4).unwrap();
        let legs = [
            OptionContract { symbol: "SYNTH".into(), kind: OptionKind::Put, strike: 90.0, expiry: near, contracts: 8 },
            OptionContract { symbol: "SYNTH".into(), kind: OptionKind::Call, strike: 110.0, expiry: near, contracts: -8 },
        ];
        let action = collar_step(&c, &legs, &AgentParams::default()).unwrap();
        let orders = option_orders(&action);
        // Two closes plus two fresh opens.
        assert_eq!(orders.len(), 4);
        assert!(orders.iter().any(|o| o.contracts == -8 && o.strike == 90.0));
        assert!(orders.iter().any(|o| o.contracts == 8 && o.strike == 110.0));
        let target = (100_000.0 / (120.0 * 100.0)) as i64;
        let fresh_put = orders.iter().find(|o| o.kind == OptionKind::Put && o.contracts > 0).unwrap();
        assert_eq!(fresh_put.contracts, target);
        assert_relative_eq!(fresh_put.strike, 0.9 * 120.0, epsilon = 1e-12);
        assert_eq!(fresh_put.expiry, cal.add_trading_days(c.today, 63).unwrap());
    }

    #[test]
    fn resize_trades_difference_at_existing_strikes() {
        let cal = calendar();
        let c = ctx(&cal, 120_000.0);
        let far = cal.add_trading_days(c.today, 40).unwrap();
        let legs = [
            OptionContract { symbol: "SYNTH".into(), kind: OptionKind::Put, strike: 95.0, expiry: far, contracts: 10 },
            OptionContract { symbol: "SYNTH".into(), kind: OptionKind::Call, strike: 112.0, expiry: far, contracts: -10 },
        ];
        let action = collar_step(&c, &legs, &AgentParams::default()).unwrap();
        let orders = option_orders(&action);
        assert_eq!(orders.len(), 2);
        // Target 12 lots from 10: +2 puts, -2 calls at unchanged strikes.
        assert!(orders.iter().any(|o| o.kind == OptionKind::Put && o.contracts == 2 && o.strike == 95.0));
        assert!(orders.iter().any(|o| o.kind == OptionKind::Call && o.contracts == -2 && o.strike == 112.0));
        // Unchanged target emits nothing.
        let same = ctx(&cal, 100_000.0);
        let action = collar_step(&same, &legs, &AgentParams::default()).unwrap();
        assert!(action.orders.is_empty());
    }

    #[test]
    fn straddle_opens_both_legs_atm() {
        let cal = calendar();
        let c = ctx(&cal, 50_000.0);
        let action = straddle_step(&c, &[], &AgentParams::default()).unwrap();
        let orders = option_orders(&action);
        assert_eq!(orders.len(), 2);
        assert!(orders.iter().all(|o| o.strike == 100.0 && o.contracts == 5));
        assert!(orders.iter().any(|o| o.kind == OptionKind::Call));
        assert!(orders.iter().any(|o| o.kind == OptionKind::Put));
    }

    #[test]
    fn sub_lot_notional_emits_nothing() {
        let cal = calendar();
        let c = ctx(&cal, 5_000.0);
        let action = straddle_step(&c, &[], &AgentParams::default()).unwrap();
        assert!(action.orders.is_empty());
    }

    #[test]
    fn delta_neutral_hedges_to_zero_outside_band() {
        let cal = calendar();
        let c = ctx(&cal, 50_000.0);
        // An ATM straddle's net delta is a fixed fraction of the covered
        // shares, so tighten the band below it to force a hedge.
        let params = AgentParams { delta_tolerance: 0.03, ..AgentParams::default() };
        let action = delta_neutral_step(&c, &[], 0.0, &params).unwrap();
        // Fresh ATM straddle: 5 call lots + 5 put lots.
        let opts = option_orders(&action);
        assert_eq!(opts.len(), 2);
        // Independent delta summation for the fresh legs.
        let t = 63.0 / TRADING_DAYS_PER_YEAR;
        let call_d = pricing::delta(
            &pricing::PricingInputs { spot: 100.0, strike: 100.0, years_to_expiry: t, vol: 0.2, rate: 0.0 },
            OptionKind::Call,
        )
        .unwrap();
        let put_d = pricing::delta(
            &pricing::PricingInputs { spot: 100.0, strike: 100.0, years_to_expiry: t, vol: 0.2, rate: 0.0 },
            OptionKind::Put,
        )
        .unwrap();
        let net = (call_d + put_d) * 5.0 * 100.0;
        let band = params.delta_tolerance * 50_000.0 / 100.0;
        assert!(net.abs() > band, "fixture must start outside the dead band");
        let hedge = action.orders.iter().find_map(|o| match o {
            Order::Equity { shares, .. } => Some(*shares),
            _ => None,
        });
        assert_relative_eq!(hedge.unwrap(), -net, epsilon = 1e-9);
    }

    #[test]
    fn delta_neutral_dead_band_suppresses_small_rebalance() {
        let cal = calendar();
        let c = ctx(&cal, 50_000.0);
        let far = cal.add_trading_days(c.today, 63).unwrap();
        let legs = [
            OptionContract { symbol: "SYNTH".into(), kind: OptionKind::Call, strike: 100.0, expiry: far, contracts: 5 },
            OptionContract { symbol: "SYNTH".into(), kind: OptionKind::Put, strike: 100.0, expiry: far, contracts: 5 },
        ];
        let t = 63.0 / TRADING_DAYS_PER_YEAR;
        let net_options: f64 = legs
            .iter()
            .map(|l| l.position_delta(100.0, 0.2, 0.0, t).unwrap())
            .sum();
        // Hedge already within 3 shares of neutral; band is 25 shares.
        let hedge_shares = -net_options + 3.0;
        let action = delta_neutral_step(&c, &legs, hedge_shares, &AgentParams::default()).unwrap();
        assert!(action.orders.is_empty(), "no orders expected, got {:?}", action.orders);
    }

    #[test]
    fn delta_neutral_zero_notional_unwinds_hedge() {
        let cal = calendar();
        let c = ctx(&cal, 0.0);
        let far = cal.add_trading_days(c.today, 40).unwrap();
        let legs = [OptionContract {
            symbol: "SYNTH".into(),
            kind: OptionKind::Call,
            strike: 100.0,
            expiry: far,
            contracts: 5,
        }];
        let action = delta_neutral_step(&c, &legs, -250.0, &AgentParams::default()).unwrap();
        let opts = option_orders(&action);
        assert_eq!(opts.len(), 1);
        assert_eq!(opts[0].contracts, -5);
        let hedge = action.orders.iter().find_map(|o| match o {
            Order::Equity { shares, .. } => Some(*shares),
            _ => None,
        });
        assert_eq!(hedge.unwrap(), 250.0);
    }

    #[test]
    fn params_validation() {
        assert!(AgentParams::default().validate().is_ok());
        assert!(AgentParams { put_strike_offset: 1.1, ..AgentParams::default() }.validate().is_err());
        assert!(AgentParams { call_strike_offset: 0.9, ..AgentParams::default() }.validate().is_err());
        assert!(AgentParams { tenor_days: 5, roll_window_days: 5, ..AgentParams::default() }.validate().is_err());
        assert!(AgentParams { roll_window_days: 0, ..AgentParams::default() }.validate().is_err());
    }
}
