//! Daily backtest loop: settle, mark, decide, override, execute, record.
//!
//! One `run_backtest` call covers calibration (feature scaling stats plus a
//! heuristic replay that warm-starts the episode buffer) and the evaluation
//! window. Everything downstream of the config and input data is
//! deterministic: same inputs, byte-identical outputs.
//!
//! Accounting is checked two ways every day: portfolio value change by full
//! revaluation, and the sum of per-position pnl, interest, and costs. The
//! two routes go through different code and must agree.

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::agents::{collar_step, delta_neutral_step, straddle_step, AgentParams, Order, SleeveContext};
use crate::calendar::TradingCalendar;
use crate::controller::{
    classify_regime, validate_decision, AllocationDecision, DecisionConstraints, DecisionContext,
    DecisionProducer, DecisionSource, HeuristicConfig, HeuristicProducer, Sleeve, SleeveWeights,
    StochasticWrap,
};
use crate::error::{Error, Result};
use crate::llm::{LlmClient, LlmProducer, LlmSettings};
use crate::market::{
    basket_index, calibrate, compute_features, embed, CalibrationStats, PriceSeries, RegimeLabel,
    FIRST_FEATURE_INDEX, MIN_CALIBRATION_DAYS, TRADING_DAYS_PER_YEAR,
};
use crate::memory::{
    EpisodeDraft, MemoryBuffer, DEFAULT_HORIZON_DAYS, DEFAULT_RETRIEVAL_K,
    DEFAULT_RETRIEVAL_STRENGTH,
};
use crate::metrics::{compute_all_with, EquityCurve, MetricsConfig, MetricsReport};
use crate::pricing::{price, OptionContract, PricingInputs, CONTRACT_MULTIPLIER};
use crate::safety::{check_and_override, SafetyConfig, SafetyVerdict};

/// Transaction cost model. Rates are basis points of traded notional;
/// the fee is per option contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub equity_bps: f64,
    pub per_contract_fee: f64,
    pub option_bps: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { equity_bps: 5.0, per_contract_fee: 0.65, option_bps: 10.0 }
    }
}

impl CostModel {
    pub fn zero() -> Self {
        Self { equity_bps: 0.0, per_contract_fee: 0.0, option_bps: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("equity_bps", self.equity_bps),
            ("per_contract_fee", self.per_contract_fee),
            ("option_bps", self.option_bps),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("cost {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn equity_cost(&self, notional: f64) -> f64 {
        notional.abs() * self.equity_bps / 10_000.0
    }

    pub fn option_cost(&self, contracts: i64, premium: f64) -> f64 {
        contracts.unsigned_abs() as f64 * self.per_contract_fee + premium.abs() * self.option_bps / 10_000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub initial_capital: f64,
    /// Annualized rate used for pricing and cash interest.
    pub annual_rate: f64,
    /// Cash may not drop below `-margin_floor_fraction * portfolio value`.
    pub margin_floor_fraction: f64,
    /// Equity orders below this notional are dropped, killing float-noise
    /// churn.
    pub min_order_notional: f64,
    pub costs: CostModel,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            initial_capital: 1_000_000.0,
            annual_rate: 0.0,
            margin_floor_fraction: 0.10,
            min_order_notional: 0.01,
            costs: CostModel::default(),
        }
    }
}

impl EngineSettings {
    pub fn validate(&self) -> Result<()> {
        if !self.initial_capital.is_finite() || self.initial_capital <= 0.0 {
            return Err(Error::Config(format!("initial capital must be positive, got {}", self.initial_capital)));
        }
        if !self.annual_rate.is_finite() {
            return Err(Error::Config("annual rate must be finite".into()));
        }
        if !self.margin_floor_fraction.is_finite() || self.margin_floor_fraction < 0.0 {
            return Err(Error::Config("margin floor fraction must be non-negative".into()));
        }
        if !self.min_order_notional.is_finite() || self.min_order_notional < 0.0 {
            return Err(Error::Config("min order notional must be non-negative".into()));
        }
        self.costs.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Heuristic,
    /// Heuristic with seeded Gaussian weight noise at `temperature`.
    Stochastic,
    Llm,
}

/// Full description of one backtest run. Together with the input series
/// this determines every output byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub run_id: String,
    pub seed: u64,
    /// Feature rows in the calibration window (scaling stats + warm start).
    pub calibration_days: usize,
    /// Outcome horizon for stored episodes, trading days.
    pub horizon_days: usize,
    pub retrieval_k: usize,
    /// Turnover-penalty strength in episode scoring.
    pub lambda: f64,
    pub memory_enabled: bool,
    pub safety_enabled: bool,
    /// Stddev of decision noise is `0.1 * temperature`; zero is exact.
    /// Applied by the stochastic controller; passed through to the remote
    /// one.
    pub temperature: f64,
    pub controller: ControllerMode,
    /// First evaluation date. When unset, evaluation starts right after
    /// the calibration window at the top of the data. When set, the
    /// calibration window is the `calibration_days` rows before it.
    pub eval_start: Option<NaiveDate>,
    /// Last evaluation date (inclusive); bars after it are dropped.
    pub eval_end: Option<NaiveDate>,
    pub constraints: DecisionConstraints,
    pub heuristic: HeuristicConfig,
    pub safety: SafetyConfig,
    pub agents: AgentParams,
    pub engine: EngineSettings,
    pub metrics: MetricsConfig,
    pub llm: LlmSettings,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 42,
            calibration_days: MIN_CALIBRATION_DAYS,
            horizon_days: DEFAULT_HORIZON_DAYS,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            lambda: DEFAULT_RETRIEVAL_STRENGTH,
            memory_enabled: true,
            safety_enabled: true,
            temperature: 0.0,
            controller: ControllerMode::Heuristic,
            eval_start: None,
            eval_end: None,
            constraints: DecisionConstraints::default(),
            heuristic: HeuristicConfig::default(),
            safety: SafetyConfig::default(),
            agents: AgentParams::default(),
            engine: EngineSettings::default(),
            metrics: MetricsConfig::default(),
            llm: LlmSettings::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() {
            return Err(Error::Config("run id must not be empty".into()));
        }
        if self.calibration_days < MIN_CALIBRATION_DAYS {
            return Err(Error::Config(format!(
                "calibration window {} is shorter than the minimum {MIN_CALIBRATION_DAYS}",
                self.calibration_days
            )));
        }
        if self.horizon_days == 0 {
            return Err(Error::Config("episode horizon must be positive".into()));
        }
        if self.retrieval_k == 0 {
            return Err(Error::Config("retrieval k must be positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Config(format!("temperature must be finite and non-negative, got {}", self.temperature)));
        }
        self.constraints.validate()?;
        self.safety.validate()?;
        self.agents.validate()?;
        self.engine.validate()
    }
}

/// Option legs and delta hedge for one (symbol, sleeve) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleevePosition {
    pub symbol: String,
    pub sleeve: Sleeve,
    pub legs: Vec<OptionContract>,
    pub hedge_shares: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub cash: f64,
    /// Core basket holding per symbol, in shares.
    pub core_shares: BTreeMap<String, f64>,
    pub sleeves: Vec<SleevePosition>,
}

impl PortfolioState {
    fn new(symbols: &[&str], initial_capital: f64) -> Self {
        let mut sleeves = Vec::with_capacity(symbols.len() * Sleeve::ALL.len());
        let mut core_shares = BTreeMap::new();
        for sym in symbols {
            core_shares.insert(sym.to_string(), 0.0);
            for sleeve in Sleeve::ALL {
                sleeves.push(SleevePosition {
                    symbol: sym.to_string(),
                    sleeve,
                    legs: Vec::new(),
                    hedge_shares: 0.0,
                });
            }
        }
        Self { cash: initial_capital, core_shares, sleeves }
    }

    fn sleeve_mut(&mut self, symbol: &str, sleeve: Sleeve) -> &mut SleevePosition {
        self.sleeves
            .iter_mut()
            .find(|s| s.symbol == symbol && s.sleeve == sleeve)
            .expect("sleeve positions are created for every (symbol, sleeve) pair up front")
    }

    /// Total shares held per symbol, core plus hedges.
    fn shares_by_symbol(&self) -> BTreeMap<String, f64> {
        let mut out = self.core_shares.clone();
        for sleeve in &self.sleeves {
            *out.entry(sleeve.symbol.clone()).or_insert(0.0) += sleeve.hedge_shares;
        }
        out
    }
}

/// One executed trade. `notional` is the signed cash the trade moved
/// before costs (equity: shares times price; options: premium paid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedOrder {
    pub symbol: String,
    /// None marks the core basket trade.
    pub sleeve: Option<Sleeve>,
    pub order: Order,
    pub notional: f64,
    pub cost: f64,
}

/// One evaluation day. `decision` is the validated controller candidate;
/// the decision actually executed sits inside `safety`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub regime: RegimeLabel,
    pub retrieved_count: usize,
    pub decision: AllocationDecision,
    pub safety: SafetyVerdict,
    pub orders: Vec<ExecutedOrder>,
    pub costs_paid: f64,
    pub portfolio_value: f64,
    pub drawdown: f64,
}

/// Dual-route accounting check for one day. `delta_revalued` comes from
/// full portfolio revaluation, `delta_accrued` from summed pnl components;
/// they must agree to float accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyDiagnostic {
    pub date: NaiveDate,
    pub value_pre: f64,
    pub value_post: f64,
    pub equity_pnl: f64,
    pub option_pnl: f64,
    pub interest: f64,
    pub costs: f64,
    pub delta_revalued: f64,
    pub delta_accrued: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<DailyRecord>,
    pub diagnostics: Vec<DailyDiagnostic>,
    pub curve: EquityCurve,
    pub report: MetricsReport,
    pub buffer: MemoryBuffer,
}

/// Per-day marks shared by valuation, agents, and execution: closes,
/// trailing realized vols, and trailing average dollar volume.
struct DayMarks {
    date: NaiveDate,
    closes: BTreeMap<String, f64>,
    vols: BTreeMap<String, f64>,
    adv_dollars: BTreeMap<String, f64>,
}

impl DayMarks {
    fn compute(data: &[PriceSeries], closes_by_symbol: &[Vec<f64>], t: usize) -> Self {
        let date = data[0].bar(t).date;
        let mut closes = BTreeMap::new();
        let mut vols = BTreeMap::new();
        let mut adv = BTreeMap::new();
        for (series, series_closes) in data.iter().zip(closes_by_symbol) {
            let sym = series.symbol().to_string();
            closes.insert(sym.clone(), series_closes[t]);
            vols.insert(sym.clone(), trailing_vol(series_closes, t));
            let lo = (t + 1).saturating_sub(21);
            let window = &series.bars()[lo..=t];
            let mean_dollars =
                window.iter().map(|b| b.close * b.volume).sum::<f64>() / window.len() as f64;
            adv.insert(sym, mean_dollars);
        }
        Self { date, closes, vols, adv_dollars: adv }
    }

    fn close(&self, symbol: &str) -> Result<f64> {
        self.closes
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::Internal(format!("no close for symbol {symbol}")))
    }

    fn vol(&self, symbol: &str) -> Result<f64> {
        self.vols
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::Internal(format!("no vol for symbol {symbol}")))
    }
}

/// Population stdev of the last (up to) 21 simple returns, annualized.
/// Matches the feature convention.
fn trailing_vol(closes: &[f64], t: usize) -> f64 {
    let window = 21.min(t);
    if window == 0 {
        return 0.0;
    }
    let rets: Vec<f64> = (t - window + 1..=t).map(|i| closes[i] / closes[i - 1] - 1.0).collect();
    let mean = rets.iter().sum::<f64>() / rets.len() as f64;
    let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rets.len() as f64;
    var.sqrt() * TRADING_DAYS_PER_YEAR.sqrt()
}

fn leg_unit_price(
    leg: &OptionContract,
    marks: &DayMarks,
    calendar: &TradingCalendar,
    rate: f64,
) -> Result<f64> {
    let spot = marks.close(&leg.symbol)?;
    let vol = marks.vol(&leg.symbol)?;
    let years = calendar.trading_days_between(marks.date, leg.expiry)? as f64 / TRADING_DAYS_PER_YEAR;
    price(&PricingInputs { spot, strike: leg.strike, years_to_expiry: years, vol, rate }, leg.kind)
}

fn portfolio_value(
    p: &PortfolioState,
    marks: &DayMarks,
    calendar: &TradingCalendar,
    rate: f64,
) -> Result<f64> {
    let mut value = p.cash;
    for (sym, shares) in &p.core_shares {
        value += shares * marks.close(sym)?;
    }
    for sleeve in &p.sleeves {
        value += sleeve.hedge_shares * marks.close(&sleeve.symbol)?;
        for leg in &sleeve.legs {
            value += leg_unit_price(leg, marks, calendar, rate)? * leg.contracts as f64 * CONTRACT_MULTIPLIER;
        }
    }
    Ok(value)
}

/// Converts expired legs to settlement cash at intrinsic value. At expiry
/// the mark equals intrinsic, so this is value-neutral.
fn settle_expiries(p: &mut PortfolioState, marks: &DayMarks) -> Result<f64> {
    let mut settled = 0.0;
    for sleeve in &mut p.sleeves {
        let mut kept = Vec::with_capacity(sleeve.legs.len());
        for leg in sleeve.legs.drain(..) {
            if leg.expiry <= marks.date {
                settled += leg.payoff(marks.close(&leg.symbol)?);
            } else {
                kept.push(leg);
            }
        }
        sleeve.legs = kept;
    }
    p.cash += settled;
    Ok(settled)
}

enum PlannedKind {
    Equity { shares: f64 },
    Contract { contract: OptionContract, unit_price: f64, opening: bool },
}

/// An order on its way through the constraint pipeline.
struct PlannedOrder {
    symbol: String,
    sleeve: Option<Sleeve>,
    kind: PlannedKind,
}

fn scale_contracts(contracts: i64, scale: f64) -> i64 {
    (contracts as f64 * scale).trunc() as i64
}

/// Caps the day's net premium outlay of position-opening option orders at
/// `budget`, scaling opening orders pro rata (quantities floored toward
/// zero). Closing orders are never touched, so unwinds cannot be blocked.
fn apply_hedge_budget(planned: &mut [PlannedOrder], budget: f64) {
    let net_outlay: f64 = planned
        .iter()
        .filter_map(|o| match &o.kind {
            PlannedKind::Contract { contract, unit_price, opening: true } => {
                Some(contract.contracts as f64 * CONTRACT_MULTIPLIER * unit_price)
            }
            _ => None,
        })
        .sum();
    if net_outlay <= budget || net_outlay <= 0.0 {
        return;
    }
    let scale = budget.max(0.0) / net_outlay;
    for order in planned.iter_mut() {
        if let PlannedKind::Contract { contract, opening: true, .. } = &mut order.kind {
            contract.contracts = scale_contracts(contract.contracts, scale);
        }
    }
}

/// Caps each symbol's traded underlying-equivalent dollar volume at
/// `cap_fraction` of its trailing average dollar volume. Symbols without
/// volume data are left uncapped.
fn apply_liquidity_cap(planned: &mut [PlannedOrder], marks: &DayMarks, cap_fraction: f64) -> Result<()> {
    let mut traded: BTreeMap<&str, f64> = BTreeMap::new();
    for order in planned.iter() {
        let close = marks.close(&order.symbol)?;
        let dollars = match &order.kind {
            PlannedKind::Equity { shares } => shares.abs() * close,
            PlannedKind::Contract { contract, .. } => {
                contract.contracts.unsigned_abs() as f64 * CONTRACT_MULTIPLIER * close
            }
        };
        *traded.entry(order.symbol.as_str()).or_insert(0.0) += dollars;
    }
    let mut scales: BTreeMap<String, f64> = BTreeMap::new();
    for (sym, total) in traded {
        let adv = marks.adv_dollars.get(sym).copied().unwrap_or(0.0);
        if adv <= 0.0 {
            continue;
        }
        let cap = cap_fraction * adv;
        if total > cap {
            scales.insert(sym.to_string(), cap / total);
        }
    }
    if scales.is_empty() {
        return Ok(());
    }
    for order in planned.iter_mut() {
        let Some(scale) = scales.get(&order.symbol) else { continue };
        match &mut order.kind {
            PlannedKind::Equity { shares } => *shares *= scale,
            PlannedKind::Contract { contract, .. } => {
                contract.contracts = scale_contracts(contract.contracts, *scale);
            }
        }
    }
    Ok(())
}

fn planned_costs(planned: &[PlannedOrder], marks: &DayMarks, costs: &CostModel) -> Result<f64> {
    let mut total = 0.0;
    for order in planned {
        match &order.kind {
            PlannedKind::Equity { shares } => {
                total += costs.equity_cost(shares * marks.close(&order.symbol)?);
            }
            PlannedKind::Contract { contract, unit_price, .. } => {
                let premium = contract.contracts as f64 * CONTRACT_MULTIPLIER * unit_price;
                total += costs.option_cost(contract.contracts, premium);
            }
        }
    }
    Ok(total)
}

/// Keeps projected cash above `-margin_floor_fraction * value` by scaling
/// down cash-consuming opening orders (equity buys and opening option
/// buys). Two passes; closing orders are never scaled.
fn apply_margin_floor(
    planned: &mut [PlannedOrder],
    cash: f64,
    value_pre: f64,
    marks: &DayMarks,
    settings: &EngineSettings,
) -> Result<()> {
    let floor = -settings.margin_floor_fraction * value_pre;
    for _ in 0..2 {
        let mut outflow = 0.0;
        let mut scalable_outlay = 0.0;
        for order in planned.iter() {
            match &order.kind {
                PlannedKind::Equity { shares } => {
                    let notional = shares * marks.close(&order.symbol)?;
                    outflow += notional;
                    if notional > 0.0 {
                        scalable_outlay += notional;
                    }
                }
                PlannedKind::Contract { contract, unit_price, opening } => {
                    let premium = contract.contracts as f64 * CONTRACT_MULTIPLIER * unit_price;
                    outflow += premium;
                    if *opening && premium > 0.0 {
                        scalable_outlay += premium;
                    }
                }
            }
        }
        let projected = cash - outflow - planned_costs(planned, marks, &settings.costs)?;
        if projected >= floor || scalable_outlay <= 0.0 {
            return Ok(());
        }
        let deficit = floor - projected;
        let scale = (1.0 - deficit / scalable_outlay).max(0.0);
        for order in planned.iter_mut() {
            match &mut order.kind {
                PlannedKind::Equity { shares } => {
                    if *shares > 0.0 {
                        *shares *= scale;
                    }
                }
                PlannedKind::Contract { contract, unit_price, opening } => {
                    if *opening && contract.contracts as f64 * *unit_price > 0.0 {
                        contract.contracts = scale_contracts(contract.contracts, scale);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Drops zero-contract orders and equity orders below the minimum
/// notional.
fn prune_orders(planned: &mut Vec<PlannedOrder>, marks: &DayMarks, min_notional: f64) -> Result<()> {
    let mut kept = Vec::with_capacity(planned.len());
    for order in planned.drain(..) {
        let keep = match &order.kind {
            PlannedKind::Equity { shares } => shares.abs() * marks.close(&order.symbol)? >= min_notional,
            PlannedKind::Contract { contract, .. } => contract.contracts != 0,
        };
        if keep {
            kept.push(order);
        }
    }
    *planned = kept;
    Ok(())
}

fn execute_orders(
    p: &mut PortfolioState,
    planned: Vec<PlannedOrder>,
    marks: &DayMarks,
    costs: &CostModel,
) -> Result<(Vec<ExecutedOrder>, f64)> {
    let mut executed = Vec::with_capacity(planned.len());
    let mut total_cost = 0.0;
    for order in planned {
        match order.kind {
            PlannedKind::Equity { shares } => {
                let close = marks.close(&order.symbol)?;
                let notional = shares * close;
                let cost = costs.equity_cost(notional);
                p.cash -= notional + cost;
                match order.sleeve {
                    None => *p.core_shares.entry(order.symbol.clone()).or_insert(0.0) += shares,
                    Some(sleeve) => p.sleeve_mut(&order.symbol, sleeve).hedge_shares += shares,
                }
                total_cost += cost;
                executed.push(ExecutedOrder {
                    symbol: order.symbol.clone(),
                    sleeve: order.sleeve,
                    order: Order::Equity { symbol: order.symbol, shares },
                    notional,
                    cost,
                });
            }
            PlannedKind::Contract { contract, unit_price, .. } => {
                let sleeve = order
                    .sleeve
                    .ok_or_else(|| Error::Internal("option order without sleeve attribution".into()))?;
                let premium = contract.contracts as f64 * CONTRACT_MULTIPLIER * unit_price;
                let cost = costs.option_cost(contract.contracts, premium);
                p.cash -= premium + cost;
                let position = p.sleeve_mut(&order.symbol, sleeve);
                if let Some(existing) = position.legs.iter_mut().find(|l| {
                    l.kind == contract.kind && l.strike == contract.strike && l.expiry == contract.expiry
                }) {
                    existing.contracts += contract.contracts;
                } else {
                    position.legs.push(contract.clone());
                }
                position.legs.retain(|l| l.contracts != 0);
                total_cost += cost;
                executed.push(ExecutedOrder {
                    symbol: order.symbol.clone(),
                    sleeve: order.sleeve,
                    order: Order::Option { contract },
                    notional: premium,
                    cost,
                });
            }
        }
    }
    Ok((executed, total_cost))
}

/// Yesterday's post-trade book, kept for the incremental pnl route.
struct OvernightSnapshot {
    cash: f64,
    value_post: f64,
    shares_by_symbol: BTreeMap<String, f64>,
    closes: BTreeMap<String, f64>,
    /// Each open leg with its unit mark at the snapshot.
    legs: Vec<(OptionContract, f64)>,
}

fn snapshot_portfolio(
    p: &PortfolioState,
    marks: &DayMarks,
    calendar: &TradingCalendar,
    rate: f64,
    value_post: f64,
) -> Result<OvernightSnapshot> {
    let mut legs = Vec::new();
    for sleeve in &p.sleeves {
        for leg in &sleeve.legs {
            legs.push((leg.clone(), leg_unit_price(leg, marks, calendar, rate)?));
        }
    }
    Ok(OvernightSnapshot {
        cash: p.cash,
        value_post,
        shares_by_symbol: p.shares_by_symbol(),
        closes: marks.closes.clone(),
        legs,
    })
}

struct WindowOutput {
    records: Vec<DailyRecord>,
    diagnostics: Vec<DailyDiagnostic>,
    curve: EquityCurve,
}

const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Runs the daily loop over `range` (indices into the shared date grid)
/// with a fresh portfolio. The memory buffer, when present, is read for
/// retrieval and extended with one episode per day.
#[allow(clippy::too_many_arguments)]
fn run_window(
    cfg: &BacktestConfig,
    data: &[PriceSeries],
    basket: &PriceSeries,
    stats: &CalibrationStats,
    mut memory: Option<&mut MemoryBuffer>,
    producer: &mut dyn DecisionProducer,
    range: Range<usize>,
    temperature: f64,
) -> Result<WindowOutput> {
    let calendar = basket.calendar();
    let symbols: Vec<&str> = data.iter().map(|s| s.symbol()).collect();
    let n_symbols = symbols.len() as f64;
    let closes_by_symbol: Vec<Vec<f64>> = data.iter().map(|s| s.closes()).collect();
    let capital = cfg.engine.initial_capital;
    let daily_rate = cfg.engine.annual_rate / TRADING_DAYS_PER_YEAR;

    let mut portfolio = PortfolioState::new(&symbols, capital);
    let mut curve = EquityCurve::default();
    let seed_date = basket.bar(range.start - 1).date;
    curve.push(seed_date, capital)?;
    let mut peak = capital;
    let mut safety_active = false;
    let mut previous = AllocationDecision {
        weights: SleeveWeights::pure_cash(),
        equity_exposure: 0.0,
        source: DecisionSource::Heuristic,
        rationale: "initial state".into(),
    };
    let mut snapshot: Option<OvernightSnapshot> = None;
    let mut records = Vec::with_capacity(range.len());
    let mut diagnostics = Vec::with_capacity(range.len());

    for t in range {
        let marks = DayMarks::compute(data, &closes_by_symbol, t);
        let date = marks.date;

        // Incremental pnl of positions held overnight, marked before any
        // of today's activity mutates the book.
        let (equity_pnl, option_pnl, interest) = match &snapshot {
            Some(prev) => {
                let mut eq = 0.0;
                for (sym, shares) in &prev.shares_by_symbol {
                    eq += shares * (marks.close(sym)? - prev.closes[sym]);
                }
                let mut opt = 0.0;
                for (leg, prev_mark) in &prev.legs {
                    let mark = leg_unit_price(leg, &marks, &calendar, cfg.engine.annual_rate)?;
                    opt += leg.contracts as f64 * CONTRACT_MULTIPLIER * (mark - prev_mark);
                }
                (eq, opt, prev.cash * daily_rate)
            }
            None => (0.0, 0.0, 0.0),
        };
        portfolio.cash += interest;

        settle_expiries(&mut portfolio, &marks)?;
        let value_pre = portfolio_value(&portfolio, &marks, &calendar, cfg.engine.annual_rate)?;
        if !value_pre.is_finite() || value_pre <= 0.0 {
            return Err(Error::Data {
                date,
                msg: format!("portfolio value {value_pre} is not positive; cannot continue"),
            });
        }
        peak = peak.max(value_pre);
        let drawdown = 1.0 - value_pre / peak;

        let features = compute_features(basket, t, RegimeLabel::Calm)?;
        let regime = classify_regime(&features, &cfg.heuristic.thresholds);
        let features = features.with_regime(regime);
        let embedding = embed(&features, stats);

        let retrieved = match memory.as_deref() {
            Some(m) => m.retrieve_top_k(&embedding),
            None => Vec::new(),
        };
        let retrieved_count = retrieved.len();

        let ctx = DecisionContext {
            run_id: &cfg.run_id,
            date,
            features: &features,
            regime,
            retrieved: &retrieved,
            previous: &previous,
            constraints: &cfg.constraints,
            lambda: cfg.lambda,
            temperature,
        };
        let raw = producer.decide(&ctx);
        drop(retrieved);
        let validated = validate_decision(raw, &cfg.constraints);
        let verdict = if cfg.safety_enabled {
            check_and_override(validated.clone(), drawdown, safety_active, &cfg.safety)
        } else {
            SafetyVerdict { active: false, decision: validated.clone(), trigger_drawdown: drawdown }
        };
        safety_active = verdict.active;
        let target = &verdict.decision;

        // Order generation: core basket first, then sleeves in fixed order.
        let mut planned: Vec<PlannedOrder> = Vec::new();
        for sym in &symbols {
            let close = marks.close(sym)?;
            let target_shares = target.equity_exposure * value_pre / n_symbols / close;
            let delta = target_shares - portfolio.core_shares[*sym];
            planned.push(PlannedOrder {
                symbol: sym.to_string(),
                sleeve: None,
                kind: PlannedKind::Equity { shares: delta },
            });
        }
        for sym in &symbols {
            let close = marks.close(sym)?;
            let vol = marks.vol(sym)?;
            for sleeve in Sleeve::ALL {
                let notional = target.weights.sleeve(sleeve) * value_pre / n_symbols;
                let ctx = SleeveContext {
                    symbol: sym,
                    spot: close,
                    sleeve_notional: notional,
                    today: date,
                    vol,
                    rate: cfg.engine.annual_rate,
                    calendar: &calendar,
                };
                let position = portfolio
                    .sleeves
                    .iter()
                    .find(|s| s.symbol == *sym && s.sleeve == sleeve)
                    .expect("all sleeve positions exist");
                let action = match sleeve {
                    Sleeve::Collar => collar_step(&ctx, &position.legs, &cfg.agents)?,
                    Sleeve::Straddle => straddle_step(&ctx, &position.legs, &cfg.agents)?,
                    Sleeve::DeltaNeutral => {
                        delta_neutral_step(&ctx, &position.legs, position.hedge_shares, &cfg.agents)?
                    }
                };
                for order in action.orders {
                    let kind = match &order {
                        Order::Equity { shares, .. } => PlannedKind::Equity { shares: *shares },
                        Order::Option { contract } => {
                            let existing = position
                                .legs
                                .iter()
                                .find(|l| {
                                    l.kind == contract.kind
                                        && l.strike == contract.strike
                                        && l.expiry == contract.expiry
                                })
                                .map_or(0, |l| l.contracts);
                            let opening = existing == 0 || contract.contracts.signum() == existing.signum();
                            let unit_price = leg_unit_price(contract, &marks, &calendar, cfg.engine.annual_rate)?;
                            PlannedKind::Contract { contract: contract.clone(), unit_price, opening }
                        }
                    };
                    planned.push(PlannedOrder { symbol: sym.to_string(), sleeve: Some(sleeve), kind });
                }
            }
        }

        apply_hedge_budget(&mut planned, cfg.constraints.hedge_budget_fraction * value_pre);
        apply_liquidity_cap(&mut planned, &marks, cfg.constraints.liquidity_cap)?;
        apply_margin_floor(&mut planned, portfolio.cash, value_pre, &marks, &cfg.engine)?;
        prune_orders(&mut planned, &marks, cfg.engine.min_order_notional)?;

        let (orders, costs_paid) = execute_orders(&mut portfolio, planned, &marks, &cfg.engine.costs)?;
        let value_post = portfolio_value(&portfolio, &marks, &calendar, cfg.engine.annual_rate)?;
        curve.push(date, value_post)?;

        let prev_post = snapshot.as_ref().map_or(capital, |s| s.value_post);
        diagnostics.push(DailyDiagnostic {
            date,
            value_pre,
            value_post,
            equity_pnl,
            option_pnl,
            interest,
            costs: costs_paid,
            delta_revalued: value_post - prev_post,
            delta_accrued: equity_pnl + option_pnl + interest - costs_paid,
        });
        records.push(DailyRecord {
            date,
            regime,
            retrieved_count,
            decision: validated,
            safety: verdict.clone(),
            orders,
            costs_paid,
            portfolio_value: value_post,
            drawdown,
        });

        if let Some(m) = memory.as_deref_mut() {
            m.store_and_backfill(
                EpisodeDraft {
                    date,
                    embedding,
                    action: verdict.decision.clone(),
                    horizon_days: cfg.horizon_days,
                },
                date,
                &curve,
            )?;
        }

        previous = verdict.decision;
        snapshot = Some(snapshot_portfolio(
            &portfolio,
            &marks,
            &calendar,
            cfg.engine.annual_rate,
            value_post,
        )?);
    }

    Ok(WindowOutput { records, diagnostics, curve })
}

fn build_producer(cfg: &BacktestConfig) -> Box<dyn DecisionProducer> {
    match cfg.controller {
        ControllerMode::Heuristic => Box::new(HeuristicProducer { cfg: cfg.heuristic.clone() }),
        ControllerMode::Stochastic => Box::new(StochasticWrap::new(
            HeuristicProducer { cfg: cfg.heuristic.clone() },
            cfg.temperature,
            cfg.seed ^ NOISE_SEED_SALT,
        )),
        ControllerMode::Llm => match LlmClient::from_settings(&cfg.llm) {
            Some(client) => Box::new(LlmProducer { client, heuristic: cfg.heuristic.clone() }),
            None => {
                log::warn!("llm controller selected without an endpoint; using the heuristic");
                Box::new(HeuristicProducer { cfg: cfg.heuristic.clone() })
            }
        },
    }
}

fn check_data(data: &[PriceSeries]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("at least one price series is required".into()));
    }
    let dates = data[0].dates();
    for series in &data[1..] {
        if series.dates() != dates {
            return Err(Error::Config(format!(
                "series {} is not on the same date grid as {}",
                series.symbol(),
                data[0].symbol()
            )));
        }
    }
    Ok(())
}

/// Applies the optional evaluation date bounds and locates the first
/// evaluation index. Returns the working data and that index; the
/// calibration feature window is the `calibration_days` rows before it.
fn resolve_window(cfg: &BacktestConfig, data: &[PriceSeries]) -> Result<(Vec<PriceSeries>, usize)> {
    check_data(data)?;
    let working: Vec<PriceSeries> = match cfg.eval_end {
        Some(end) => data.iter().map(|s| s.truncated_at(end)).collect::<Result<_>>()?,
        None => data.to_vec(),
    };
    let n = working[0].len();
    let eval_start = match cfg.eval_start {
        Some(date) => working[0].index_of(date).ok_or(Error::Data {
            date,
            msg: "evaluation start is not a trading day in the data".into(),
        })?,
        None => FIRST_FEATURE_INDEX + cfg.calibration_days,
    };
    if eval_start < FIRST_FEATURE_INDEX + cfg.calibration_days {
        return Err(Error::InsufficientHistory {
            index: eval_start,
            required: FIRST_FEATURE_INDEX + cfg.calibration_days,
            available: eval_start,
        });
    }
    if eval_start >= n {
        return Err(Error::InsufficientHistory { index: eval_start, required: eval_start + 1, available: n });
    }
    Ok((working, eval_start))
}

/// Runs calibration, warm start, and the evaluation window.
///
/// The calibration window fixes feature scaling stats and, when memory is
/// enabled, is replayed with the heuristic controller to seed the episode
/// buffer. Calibration episodes whose horizon crosses into evaluation stay
/// pending and are never retrievable. The evaluation window then runs with
/// a fresh portfolio and the configured controller.
pub fn run_backtest(cfg: &BacktestConfig, data: &[PriceSeries]) -> Result<RunResult> {
    cfg.validate()?;
    let (data, calib_end) = resolve_window(cfg, data)?;
    let data = data.as_slice();
    let basket = if data.len() == 1 { data[0].clone() } else { basket_index(data)? };
    let n = basket.len();
    let calib_start = calib_end - cfg.calibration_days;

    let mut calib_features = Vec::with_capacity(cfg.calibration_days);
    for t in calib_start..calib_end {
        let f = compute_features(&basket, t, RegimeLabel::Calm)?;
        let label = classify_regime(&f, &cfg.heuristic.thresholds);
        calib_features.push(f.with_regime(label));
    }
    let stats = calibrate(&calib_features)?;

    let mut memory = MemoryBuffer::new(cfg.retrieval_k, cfg.lambda);
    if cfg.memory_enabled {
        let mut warm = HeuristicProducer { cfg: cfg.heuristic.clone() };
        run_window(cfg, data, &basket, &stats, Some(&mut memory), &mut warm, calib_start..calib_end, 0.0)?;
    }

    let mut producer = build_producer(cfg);
    let out = run_window(
        cfg,
        data,
        &basket,
        &stats,
        cfg.memory_enabled.then_some(&mut memory),
        producer.as_mut(),
        calib_end..n,
        cfg.temperature,
    )?;

    let report = compute_all_with(&out.curve, &cfg.metrics)?;
    Ok(RunResult {
        records: out.records,
        diagnostics: out.diagnostics,
        curve: out.curve,
        report,
        buffer: memory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    BuyAndHold,
    EqualWeight,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::BuyAndHold => "buy_and_hold",
            BaselineKind::EqualWeight => "equal_weight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub date: NaiveDate,
    pub orders: Vec<ExecutedOrder>,
    pub costs_paid: f64,
    pub portfolio_value: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub name: String,
    pub records: Vec<BaselineRecord>,
    pub curve: EquityCurve,
    pub report: MetricsReport,
}

/// Runs a reference strategy over the same evaluation window as
/// [`run_backtest`]: equal-dollar buy and hold, or equal weight rebalanced
/// on the first trading day of each month. Both pay equity costs and use
/// no options.
pub fn run_baseline(kind: BaselineKind, cfg: &BacktestConfig, data: &[PriceSeries]) -> Result<BaselineResult> {
    cfg.validate()?;
    let (data, eval_start) = resolve_window(cfg, data)?;
    let data = data.as_slice();
    let n = data[0].len();
    let capital = cfg.engine.initial_capital;
    let n_symbols = data.len() as f64;
    let costs = &cfg.engine.costs;
    let min_notional = cfg.engine.min_order_notional;

    let mut cash = capital;
    let mut shares: BTreeMap<String, f64> =
        data.iter().map(|s| (s.symbol().to_string(), 0.0)).collect();
    let mut curve = EquityCurve::default();
    curve.push(data[0].bar(eval_start - 1).date, capital)?;
    let mut records = Vec::with_capacity(n - eval_start);

    for t in eval_start..n {
        let date = data[0].bar(t).date;
        let value: f64 =
            cash + data.iter().map(|s| shares[s.symbol()] * s.bar(t).close).sum::<f64>();
        let rebalance = match kind {
            BaselineKind::BuyAndHold => t == eval_start,
            BaselineKind::EqualWeight => {
                t == eval_start || {
                    let prev = data[0].bar(t - 1).date;
                    (prev.year(), prev.month()) != (date.year(), date.month())
                }
            }
        };
        let mut orders = Vec::new();
        let mut costs_paid = 0.0;
        if rebalance {
            for series in data {
                let close = series.bar(t).close;
                let target = value / n_symbols / close;
                let delta = target - shares[series.symbol()];
                let notional = delta * close;
                if notional.abs() < min_notional {
                    continue;
                }
                let cost = costs.equity_cost(notional);
                cash -= notional + cost;
                *shares.get_mut(series.symbol()).expect("symbol present") += delta;
                costs_paid += cost;
                orders.push(ExecutedOrder {
                    symbol: series.symbol().to_string(),
                    sleeve: None,
                    order: Order::Equity { symbol: series.symbol().to_string(), shares: delta },
                    notional,
                    cost,
                });
            }
        }
        let value_post: f64 =
            cash + data.iter().map(|s| shares[s.symbol()] * s.bar(t).close).sum::<f64>();
        curve.push(date, value_post)?;
        records.push(BaselineRecord { date, orders, costs_paid, portfolio_value: value_post });
    }

    let report = compute_all_with(&curve, &cfg.metrics)?;
    Ok(BaselineResult { name: kind.as_str().to_string(), records, curve, report })
}
