//! Flat `key = value` configuration with dotted section prefixes.
//!
//! Full-line `#` comments, blank lines allowed. Every key has a default;
//! unknown or duplicate keys are errors, so typos cannot silently fall
//! back to defaults. The resolved form (defaults expanded) is what lands
//! in the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::controller::SleeveWeights;
use crate::engine::{BacktestConfig, ControllerMode};
use crate::error::{Error, Result};
use crate::market::{generate_regime_path, PriceSeries, RegimeParams, RegimeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv,
}

/// Where the price series come from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub symbols: Vec<String>,
    pub csv_paths: Vec<PathBuf>,
    pub start_date: NaiveDate,
    pub days: usize,
    pub start_price: f64,
    /// Seed of the synthetic path generator; symbol i uses `seed + i`.
    pub seed: u64,
    pub scenario: RegimeSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            symbols: vec!["SYNTH".into()],
            csv_paths: Vec::new(),
            start_date: NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date"),
            days: 400,
            start_price: 100.0,
            seed: 7,
            scenario: RegimeSpec {
                regimes: vec![RegimeParams { name: "calm".into(), annual_drift: 0.05, annual_vol: 0.10 }],
                transition: vec![vec![1.0]],
                initial_regime: 0,
                daily_volume: 5_000_000.0,
            },
        }
    }
}

impl DataConfig {
    /// Loads or generates the price series. Relative CSV paths resolve
    /// against `base_dir` (normally the config file's directory).
    pub fn load_series(&self, base_dir: &Path) -> Result<Vec<PriceSeries>> {
        match self.source {
            DataSource::Synthetic => {
                if self.symbols.is_empty() {
                    return Err(Error::Config("data.symbols must name at least one symbol".into()));
                }
                let mut out = Vec::with_capacity(self.symbols.len());
                for (i, sym) in self.symbols.iter().enumerate() {
                    let (series, _) = generate_regime_path(
                        &self.scenario,
                        self.days,
                        self.start_price,
                        self.start_date,
                        self.seed + i as u64,
                    )?;
                    out.push(PriceSeries::new(sym.clone(), series.bars().to_vec())?);
                }
                Ok(out)
            }
            DataSource::Csv => {
                if self.csv_paths.is_empty() {
                    return Err(Error::Config("data.csv_paths must list at least one file".into()));
                }
                let mut out = Vec::with_capacity(self.csv_paths.len());
                for (i, raw) in self.csv_paths.iter().enumerate() {
                    let path = if raw.is_absolute() { raw.clone() } else { base_dir.join(raw) };
                    let symbol = match self.symbols.get(i) {
                        Some(s) => s.clone(),
                        None => path
                            .file_stem()
                            .map(|s| s.to_string_lossy().to_string())
                            .ok_or_else(|| Error::Config(format!("cannot derive a symbol from {}", path.display())))?,
                    };
                    out.push(PriceSeries::from_csv_path(symbol, &path)?);
                }
                Ok(out)
            }
        }
    }
}

/// Ablation grid settings: which seeds, and the stochastic cell's
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub backtest: BacktestConfig,
    pub data: DataConfig,
    pub ablate: AblateConfig,
    /// When set, `run` also writes the episode buffer export.
    pub export_buffer: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        let backtest = BacktestConfig::default();
        let seeds = (backtest.seed..backtest.seed + 20).collect();
        Self { backtest, data: DataConfig::default(), ablate: AblateConfig { seeds, temperature: 0.7 }, export_buffer: false }
    }
}

struct Reader {
    map: BTreeMap<String, (usize, String)>,
}

impl Reader {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse { line: line_no, msg: format!("expected `key = value`, found '{line}'") });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse { line: line_no, msg: "empty key".into() });
            }
            if map.contains_key(&key) {
                return Err(Error::Parse { line: line_no, msg: format!("duplicate key '{key}'") });
            }
            map.insert(key, (line_no, value.trim().to_string()));
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.take(key).map_or_else(|| default.to_string(), |(_, v)| v)
    }

    fn opt_string(&mut self, key: &str) -> Option<String> {
        self.take(key).map(|(_, v)| v)
    }

    fn parse_with<T>(
        &mut self,
        key: &str,
        default: T,
        what: &str,
        f: impl Fn(&str) -> Option<T>,
    ) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => {
                f(&v).ok_or_else(|| Error::Parse { line, msg: format!("key '{key}': expected {what}, found '{v}'") })
            }
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.parse_with(key, default, "a number", |v| v.parse().ok())
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.parse_with(key, default, "a non-negative integer", |v| v.parse().ok())
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.parse_with(key, default, "a non-negative integer", |v| v.parse().ok())
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        self.parse_with(key, default, "true or false", |v| match v {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    fn opt_date(&mut self, key: &str) -> Result<Option<NaiveDate>> {
        self.parse_with(key, None, "a date (YYYY-MM-DD)", |v| parse_date(v).map(Some))
    }

    fn date(&mut self, key: &str, default: NaiveDate) -> Result<NaiveDate> {
        self.parse_with(key, default, "a date (YYYY-MM-DD)", parse_date)
    }

    fn weights(&mut self, key: &str, default: SleeveWeights) -> Result<SleeveWeights> {
        self.parse_with(key, default, "four comma-separated numbers", parse_weights)
    }

    /// Errors on anything left over so misspelled keys cannot hide.
    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            return Ok(());
        }
        let keys: Vec<String> = self.map.keys().cloned().collect();
        Err(Error::Config(format!("unknown config keys: {}", keys.join(", "))))
    }
}

fn parse_date(v: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(v, "%Y-%m-%d").ok()
}

fn parse_weights(v: &str) -> Option<SleeveWeights> {
    let parts: Vec<f64> = v.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    if parts.len() != 4 {
        return None;
    }
    Some(SleeveWeights::from_array([parts[0], parts[1], parts[2], parts[3]]))
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn parse_regimes(v: &str) -> Option<Vec<RegimeParams>> {
    let mut out = Vec::new();
    for part in v.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return None;
        }
        out.push(RegimeParams {
            name: fields[0].trim().to_string(),
            annual_drift: fields[1].trim().parse().ok()?,
            annual_vol: fields[2].trim().parse().ok()?,
        });
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// Rows separated by `;`, entries by whitespace or commas.
fn parse_matrix(v: &str) -> Option<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for row in v.split(';') {
        let entries: Vec<f64> = row
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().ok())
            .collect::<Option<_>>()?;
        if entries.is_empty() {
            return None;
        }
        rows.push(entries);
    }
    if rows.is_empty() {
        None
    } else {
        Some(rows)
    }
}

fn parse_seed_list(v: &str) -> Option<Vec<u64>> {
    let seeds: Vec<u64> = v
        .split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().ok())
        .collect::<Option<_>>()?;
    if seeds.is_empty() {
        None
    } else {
        Some(seeds)
    }
}

pub fn parse_str(text: &str) -> Result<AppConfig> {
    let mut r = Reader::parse(text)?;
    let defaults = AppConfig::default();
    let mut cfg = defaults.clone();
    let b = &mut cfg.backtest;

    b.run_id = r.string("run.id", &defaults.backtest.run_id);
    b.seed = r.u64("run.seed", defaults.backtest.seed)?;
    b.controller = r.parse_with("run.controller", defaults.backtest.controller, "heuristic, stochastic, or llm", |v| {
        match v {
            "heuristic" => Some(ControllerMode::Heuristic),
            "stochastic" => Some(ControllerMode::Stochastic),
            "llm" => Some(ControllerMode::Llm),
            _ => None,
        }
    })?;
    b.memory_enabled = r.bool("run.memory_enabled", defaults.backtest.memory_enabled)?;
    b.safety_enabled = r.bool("run.safety_enabled", defaults.backtest.safety_enabled)?;
    b.calibration_days = r.usize("run.calibration_days", defaults.backtest.calibration_days)?;
    b.horizon_days = r.usize("run.horizon_days", defaults.backtest.horizon_days)?;
    b.retrieval_k = r.usize("run.retrieval_k", defaults.backtest.retrieval_k)?;
    b.lambda = r.f64("run.lambda", defaults.backtest.lambda)?;
    b.temperature = r.f64("run.temperature", defaults.backtest.temperature)?;
    b.eval_start = r.opt_date("run.eval_start")?;
    b.eval_end = r.opt_date("run.eval_end")?;
    cfg.export_buffer = r.bool("run.export_buffer", defaults.export_buffer)?;

    b.constraints.hedge_budget_fraction =
        r.f64("constraints.hedge_budget_fraction", b.constraints.hedge_budget_fraction)?;
    b.constraints.max_single_sleeve = r.f64("constraints.max_single_sleeve", b.constraints.max_single_sleeve)?;
    b.constraints.liquidity_cap = r.f64("constraints.liquidity_cap", b.constraints.liquidity_cap)?;
    b.constraints.max_equity_exposure = r.f64("constraints.max_equity_exposure", b.constraints.max_equity_exposure)?;

    b.heuristic.thresholds.vol_threshold = r.f64("heuristic.vol_threshold", b.heuristic.thresholds.vol_threshold)?;
    b.heuristic.thresholds.trend_threshold =
        r.f64("heuristic.trend_threshold", b.heuristic.thresholds.trend_threshold)?;
    b.heuristic.use_priors = r.bool("heuristic.use_priors", b.heuristic.use_priors)?;
    b.heuristic.priors.calm = r.weights("heuristic.prior_calm", b.heuristic.priors.calm)?;
    b.heuristic.priors.trending = r.weights("heuristic.prior_trending", b.heuristic.priors.trending)?;
    b.heuristic.priors.high_vol = r.weights("heuristic.prior_high_vol", b.heuristic.priors.high_vol)?;
    b.heuristic.exposure.calm = r.f64("heuristic.exposure_calm", b.heuristic.exposure.calm)?;
    b.heuristic.exposure.trending = r.f64("heuristic.exposure_trending", b.heuristic.exposure.trending)?;
    b.heuristic.exposure.high_vol = r.f64("heuristic.exposure_high_vol", b.heuristic.exposure.high_vol)?;

    b.safety.drawdown_threshold = r.f64("safety.drawdown_threshold", b.safety.drawdown_threshold)?;
    b.safety.release_threshold = r.f64("safety.release_threshold", b.safety.release_threshold)?;
    b.safety.protective_weights = r.weights("safety.protective_weights", b.safety.protective_weights)?;
    b.safety.protective_equity_exposure =
        r.f64("safety.protective_equity_exposure", b.safety.protective_equity_exposure)?;

    b.agents.put_strike_offset = r.f64("agents.put_strike_offset", b.agents.put_strike_offset)?;
    b.agents.call_strike_offset = r.f64("agents.call_strike_offset", b.agents.call_strike_offset)?;
    b.agents.straddle_strike_offset = r.f64("agents.straddle_strike_offset", b.agents.straddle_strike_offset)?;
    b.agents.tenor_days = r.usize("agents.tenor_days", b.agents.tenor_days)?;
    b.agents.roll_window_days = r.usize("agents.roll_window_days", b.agents.roll_window_days)?;
    b.agents.delta_tolerance = r.f64("agents.delta_tolerance", b.agents.delta_tolerance)?;

    b.engine.initial_capital = r.f64("engine.initial_capital", b.engine.initial_capital)?;
    b.engine.annual_rate = r.f64("engine.annual_rate", b.engine.annual_rate)?;
    b.engine.margin_floor_fraction = r.f64("engine.margin_floor_fraction", b.engine.margin_floor_fraction)?;
    b.engine.min_order_notional = r.f64("engine.min_order_notional", b.engine.min_order_notional)?;
    b.engine.costs.equity_bps = r.f64("engine.equity_bps", b.engine.costs.equity_bps)?;
    b.engine.costs.per_contract_fee = r.f64("engine.per_contract_fee", b.engine.costs.per_contract_fee)?;
    b.engine.costs.option_bps = r.f64("engine.option_bps", b.engine.costs.option_bps)?;

    b.metrics.confidence = r.f64("metrics.confidence", b.metrics.confidence)?;
    b.metrics.annualization = r.f64("metrics.annualization", b.metrics.annualization)?;
    b.metrics.risk_free_daily = r.f64("metrics.risk_free_daily", b.metrics.risk_free_daily)?;
    b.metrics.severe_drawdown = r.f64("metrics.severe_drawdown", b.metrics.severe_drawdown)?;

    b.llm.endpoint = r.opt_string("llm.endpoint");
    b.llm.timeout_ms = r.u64("llm.timeout_ms", b.llm.timeout_ms)?;
    b.llm.credential_env = r.opt_string("llm.credential_env");

    cfg.data.source = r.parse_with("data.source", defaults.data.source, "synthetic or csv", |v| match v {
        "synthetic" => Some(DataSource::Synthetic),
        "csv" => Some(DataSource::Csv),
        _ => None,
    })?;
    if let Some(v) = r.opt_string("data.symbols") {
        cfg.data.symbols = parse_list(&v);
    }
    if let Some(v) = r.opt_string("data.csv_paths") {
        cfg.data.csv_paths = parse_list(&v).into_iter().map(PathBuf::from).collect();
        if cfg.data.source == DataSource::Csv && cfg.data.symbols == defaults.data.symbols {
            // Symbols default to file stems unless given explicitly.
            cfg.data.symbols = Vec::new();
        }
    }
    cfg.data.start_date = r.date("data.start_date", defaults.data.start_date)?;
    cfg.data.days = r.usize("data.days", defaults.data.days)?;
    cfg.data.start_price = r.f64("data.start_price", defaults.data.start_price)?;
    cfg.data.seed = r.u64("data.seed", defaults.data.seed)?;
    cfg.data.scenario.regimes = r.parse_with(
        "scenario.regimes",
        defaults.data.scenario.regimes.clone(),
        "comma-separated name:drift:vol entries",
        parse_regimes,
    )?;
    cfg.data.scenario.transition = r.parse_with(
        "scenario.transition",
        defaults.data.scenario.transition.clone(),
        "semicolon-separated probability rows",
        parse_matrix,
    )?;
    cfg.data.scenario.initial_regime = r.usize("scenario.initial_regime", defaults.data.scenario.initial_regime)?;
    cfg.data.scenario.daily_volume = r.f64("scenario.daily_volume", defaults.data.scenario.daily_volume)?;

    let explicit_seeds = r.parse_with("ablate.seeds", None, "comma-separated integers", |v| {
        parse_seed_list(v).map(Some)
    })?;
    let seed_count = r.usize("ablate.seed_count", 20)?;
    cfg.ablate.temperature = r.f64("ablate.temperature", defaults.ablate.temperature)?;
    cfg.ablate.seeds = match explicit_seeds {
        Some(seeds) => seeds,
        None => (b.seed..b.seed + seed_count as u64).collect(),
    };
    if cfg.ablate.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }

    r.finish()?;
    cfg.backtest.validate()?;
    if cfg.data.source == DataSource::Synthetic {
        cfg.data.scenario.validate()?;
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<AppConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_str(&text)
}

fn fmt_weights(w: SleeveWeights) -> String {
    format!("{},{},{},{}", w.collar, w.straddle, w.delta_neutral, w.cash)
}

/// The fully resolved key set, defaults expanded, as stored in the run
/// manifest. Optional keys appear only when set; the credential variable's
/// NAME is recorded, its value never.
pub fn resolved_map(cfg: &AppConfig) -> BTreeMap<String, String> {
    let b = &cfg.backtest;
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("run.id", b.run_id.clone());
    put("run.seed", b.seed.to_string());
    put(
        "run.controller",
        match b.controller {
            ControllerMode::Heuristic => "heuristic",
            ControllerMode::Stochastic => "stochastic",
            ControllerMode::Llm => "llm",
        }
        .to_string(),
    );
    put("run.memory_enabled", b.memory_enabled.to_string());
    put("run.safety_enabled", b.safety_enabled.to_string());
    put("run.calibration_days", b.calibration_days.to_string());
    put("run.horizon_days", b.horizon_days.to_string());
    put("run.retrieval_k", b.retrieval_k.to_string());
    put("run.lambda", b.lambda.to_string());
    put("run.temperature", b.temperature.to_string());
    if let Some(d) = b.eval_start {
        put("run.eval_start", d.to_string());
    }
    if let Some(d) = b.eval_end {
        put("run.eval_end", d.to_string());
    }
    put("run.export_buffer", cfg.export_buffer.to_string());

    put("constraints.hedge_budget_fraction", b.constraints.hedge_budget_fraction.to_string());
    put("constraints.max_single_sleeve", b.constraints.max_single_sleeve.to_string());
    put("constraints.liquidity_cap", b.constraints.liquidity_cap.to_string());
    put("constraints.max_equity_exposure", b.constraints.max_equity_exposure.to_string());

    put("heuristic.vol_threshold", b.heuristic.thresholds.vol_threshold.to_string());
    put("heuristic.trend_threshold", b.heuristic.thresholds.trend_threshold.to_string());
    put("heuristic.use_priors", b.heuristic.use_priors.to_string());
    put("heuristic.prior_calm", fmt_weights(b.heuristic.priors.calm));
    put("heuristic.prior_trending", fmt_weights(b.heuristic.priors.trending));
    put("heuristic.prior_high_vol", fmt_weights(b.heuristic.priors.high_vol));
    put("heuristic.exposure_calm", b.heuristic.exposure.calm.to_string());
    put("heuristic.exposure_trending", b.heuristic.exposure.trending.to_string());
    put("heuristic.exposure_high_vol", b.heuristic.exposure.high_vol.to_string());

    put("safety.drawdown_threshold", b.safety.drawdown_threshold.to_string());
    put("safety.release_threshold", b.safety.release_threshold.to_string());
    put("safety.protective_weights", fmt_weights(b.safety.protective_weights));
    put("safety.protective_equity_exposure", b.safety.protective_equity_exposure.to_string());

    put("agents.put_strike_offset", b.agents.put_strike_offset.to_string());
    put("agents.call_strike_offset", b.agents.call_strike_offset.to_string());
    put("agents.straddle_strike_offset", b.agents.straddle_strike_offset.to_string());
    put("agents.tenor_days", b.agents.tenor_days.to_string());
    put("agents.roll_window_days", b.agents.roll_window_days.to_string());
    put("agents.delta_tolerance", b.agents.delta_tolerance.to_string());

    put("engine.initial_capital", b.engine.initial_capital.to_string());
    put("engine.annual_rate", b.engine.annual_rate.to_string());
    put("engine.margin_floor_fraction", b.engine.margin_floor_fraction.to_string());
    put("engine.min_order_notional", b.engine.min_order_notional.to_string());
    put("engine.equity_bps", b.engine.costs.equity_bps.to_string());
    put("engine.per_contract_fee", b.engine.costs.per_contract_fee.to_string());
    put("engine.option_bps", b.engine.costs.option_bps.to_string());

    put("metrics.confidence", b.metrics.confidence.to_string());
    put("metrics.annualization", b.metrics.annualization.to_string());
    put("metrics.risk_free_daily", b.metrics.risk_free_daily.to_string());
    put("metrics.severe_drawdown", b.metrics.severe_drawdown.to_string());

    if let Some(endpoint) = &b.llm.endpoint {
        put("llm.endpoint", endpoint.clone());
    }
    put("llm.timeout_ms", b.llm.timeout_ms.to_string());
    if let Some(var) = &b.llm.credential_env {
        put("llm.credential_env", var.clone());
    }

    put(
        "data.source",
        match cfg.data.source {
            DataSource::Synthetic => "synthetic",
            DataSource::Csv => "csv",
        }
        .to_string(),
    );
    put("data.symbols", cfg.data.symbols.join(","));
    if !cfg.data.csv_paths.is_empty() {
        put(
            "data.csv_paths",
            cfg.data
                .csv_paths
                .iter()
                .map(|p| p.to_string_lossy().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    put("data.start_date", cfg.data.start_date.to_string());
    put("data.days", cfg.data.days.to_string());
    put("data.start_price", cfg.data.start_price.to_string());
    put("data.seed", cfg.data.seed.to_string());
    put(
        "scenario.regimes",
        cfg.data
            .scenario
            .regimes
            .iter()
            .map(|r| format!("{}:{}:{}", r.name, r.annual_drift, r.annual_vol))
            .collect::<Vec<_>>()
            .join(","),
    );
    put(
        "scenario.transition",
        cfg.data
            .scenario
            .transition
            .iter()
            .map(|row| row.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("; "),
    );
    put("scenario.initial_regime", cfg.data.scenario.initial_regime.to_string());
    put("scenario.daily_volume", cfg.data.scenario.daily_volume.to_string());

    put("ablate.seeds", cfg.ablate.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    put("ablate.temperature", cfg.ablate.temperature.to_string());
    m
}
