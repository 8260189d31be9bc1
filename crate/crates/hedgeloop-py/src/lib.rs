//! Python bindings for the hedgeloop library. Scalar helpers come back as
//! plain floats, reports as dicts (with None for undefined metrics), and
//! market data as CSV text so pandas can ingest it directly.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hedgeloop::config;
use hedgeloop::market::{generate_regime_path, RegimeParams, RegimeSpec};
use hedgeloop::memory::{Embedding, MemoryBuffer};
use hedgeloop::metrics::{compute_all_with, EquityCurve, MetricsConfig, MetricsReport};
use hedgeloop::pricing::{self, OptionKind, PricingInputs};
use hedgeloop::runner;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: hedgeloop::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<OptionKind> {
    match kind {
        "call" => Ok(OptionKind::Call),
        "put" => Ok(OptionKind::Put),
        other => Err(PyValueError::new_err(format!("kind must be 'call' or 'put', got '{other}'"))),
    }
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| PyValueError::new_err(format!("bad date '{s}': {e}")))
}

fn inputs(spot: f64, strike: f64, years_to_expiry: f64, vol: f64, rate: f64) -> PricingInputs {
    PricingInputs { spot, strike, years_to_expiry, vol, rate }
}

/// Black-Scholes price of a European option.
#[pyfunction]
#[pyo3(signature = (spot, strike, years_to_expiry, vol, rate, kind))]
fn option_price(
    spot: f64,
    strike: f64,
    years_to_expiry: f64,
    vol: f64,
    rate: f64,
    kind: &str,
) -> PyResult<f64> {
    pricing::price(&inputs(spot, strike, years_to_expiry, vol, rate), parse_kind(kind)?).map_err(err)
}

/// Black-Scholes delta of a European option.
#[pyfunction]
#[pyo3(signature = (spot, strike, years_to_expiry, vol, rate, kind))]
fn option_delta(
    spot: f64,
    strike: f64,
    years_to_expiry: f64,
    vol: f64,
    rate: f64,
    kind: &str,
) -> PyResult<f64> {
    pricing::delta(&inputs(spot, strike, years_to_expiry, vol, rate), parse_kind(kind)?).map_err(err)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("sharpe", r.sr)?;
    d.set_item("total_return_pct", r.tr_pct)?;
    d.set_item("max_drawdown_pct", r.md_pct)?;
    d.set_item("cvar95_pct", r.cvar95_pct)?;
    d.set_item("var95_pct", r.var95_pct)?;
    d.set_item("sortino", r.sortino)?;
    d.set_item("calmar", r.calmar)?;
    d.set_item("worst_month_pct", r.wm_pct)?;
    d.set_item("downside_deviation_pct", r.ddv_pct)?;
    d.set_item("time_in_drawdown_pct", r.tdd_pct)?;
    d.set_item("max_consecutive_losses", r.mcl_days)?;
    Ok(d)
}

/// The full risk and performance report for an equity curve, given as
/// parallel lists of ISO dates and portfolio values. Metrics that are
/// undefined for the input (for example sharpe on a flat curve) are None.
#[pyfunction]
#[pyo3(signature = (dates, values, confidence=0.95, annualization=252.0, risk_free_daily=0.0, severe_drawdown=0.10))]
fn compute_metrics<'py>(
    py: Python<'py>,
    dates: Vec<String>,
    values: Vec<f64>,
    confidence: f64,
    annualization: f64,
    risk_free_daily: f64,
    severe_drawdown: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if dates.len() != values.len() {
        return Err(PyValueError::new_err(format!(
            "got {} dates but {} values",
            dates.len(),
            values.len()
        )));
    }
    let mut points = Vec::with_capacity(values.len());
    for (d, v) in dates.iter().zip(&values) {
        points.push((parse_date(d)?, *v));
    }
    let curve = EquityCurve::new(points).map_err(err)?;
    let cfg = MetricsConfig { confidence, annualization, risk_free_daily, severe_drawdown };
    let report = compute_all_with(&curve, &cfg).map_err(err)?;
    report_dict(py, &report)
}

/// Daily OHLCV bars from the regime-switching generator, as CSV text plus
/// the per-day regime index. `regimes` is a list of (name, annual_drift,
/// annual_vol) tuples and `transition` a row-stochastic matrix over them.
#[pyfunction]
#[pyo3(signature = (days, seed, regimes, transition, start_price=100.0, start_date="2020-01-06", initial_regime=0, daily_volume=5_000_000.0))]
#[allow(clippy::too_many_arguments)]
fn generate_series(
    days: usize,
    seed: u64,
    regimes: Vec<(String, f64, f64)>,
    transition: Vec<Vec<f64>>,
    start_price: f64,
    start_date: &str,
    initial_regime: usize,
    daily_volume: f64,
) -> PyResult<(String, Vec<usize>)> {
    let spec = RegimeSpec {
        regimes: regimes
            .into_iter()
            .map(|(name, annual_drift, annual_vol)| RegimeParams { name, annual_drift, annual_vol })
            .collect(),
        transition,
        initial_regime,
        daily_volume,
    };
    let (series, states) =
        generate_regime_path(&spec, days, start_price, parse_date(start_date)?, seed).map_err(err)?;
    Ok((series.to_csv_string(), states))
}

/// Runs a full backtest from a config file, writing records, metrics, and
/// manifest into `out_dir` exactly as the command-line `run` verb does.
/// Returns run id, the files written, metrics, and the equity curve.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir))]
fn run<'py>(py: Python<'py>, config_path: &str, out_dir: &str) -> PyResult<Bound<'py, PyDict>> {
    let path = Path::new(config_path);
    let cfg = config::load(path).map_err(err)?;
    let base_dir = path.parent().map_or_else(|| PathBuf::from("."), PathBuf::from);
    let artifacts = runner::execute_run(&cfg, &base_dir, Path::new(out_dir)).map_err(err)?;

    let d = PyDict::new(py);
    d.set_item("run_id", &cfg.backtest.run_id)?;
    d.set_item(
        "files",
        artifacts.files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    )?;
    d.set_item("metrics", report_dict(py, &artifacts.result.report)?)?;
    let curve: Vec<(String, f64)> = artifacts
        .result
        .curve
        .points()
        .iter()
        .map(|(date, value)| (date.to_string(), *value))
        .collect();
    d.set_item("curve", curve)?;
    Ok(d)
}

/// Episodic memory over completed allocation decisions. Episodes enter and
/// leave as JSONL in the buffer export format; retrieval returns the ids
/// and cosine similarities of the top matches.
#[pyclass]
struct Buffer {
    inner: MemoryBuffer,
}

#[pymethods]
impl Buffer {
    #[new]
    #[pyo3(signature = (retrieval_k=5, retrieval_strength=0.25))]
    fn new(retrieval_k: usize, retrieval_strength: f64) -> Self {
        Self { inner: MemoryBuffer::new(retrieval_k, retrieval_strength) }
    }

    /// Appends episodes from JSONL text. Ids must stay strictly increasing.
    fn import_jsonl(&mut self, text: &str) -> PyResult<usize> {
        self.inner.import_jsonl(text.as_bytes()).map_err(err)
    }

    fn export_jsonl(&self) -> PyResult<String> {
        let mut out = Vec::new();
        self.inner.export_jsonl(&mut out).map_err(err)?;
        String::from_utf8(out).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Top-k completed episodes most similar to the query embedding, as
    /// (episode id, cosine similarity) pairs sorted by similarity.
    fn retrieve(&self, query: [f64; 10]) -> Vec<(u64, f64)> {
        let embedding: Embedding = query;
        self.inner.retrieve_top_k(&embedding).into_iter().map(|(e, s)| (e.id, s)).collect()
    }

    fn completed_count(&self) -> usize {
        self.inner.completed_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Library defaults, keyed by config name.
#[pyfunction]
fn defaults() -> HashMap<String, f64> {
    let b = hedgeloop::engine::BacktestConfig::default();
    HashMap::from([
        ("run.calibration_days".into(), b.calibration_days as f64),
        ("run.horizon_days".into(), b.horizon_days as f64),
        ("run.retrieval_k".into(), b.retrieval_k as f64),
        ("run.lambda".into(), b.lambda),
        ("safety.drawdown_threshold".into(), b.safety.drawdown_threshold),
        ("safety.release_threshold".into(), b.safety.release_threshold),
    ])
}

#[pymodule]
fn hedgeloop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(option_price, m)?)?;
    m.add_function(wrap_pyfunction!(option_delta, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_series, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(defaults, m)?)?;
    m.add_class::<Buffer>()?;
    m.add("FEATURE_DIM", hedgeloop::market::FEATURE_DIM)?;
    Ok(())
}
