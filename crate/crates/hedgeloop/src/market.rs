//! Market data: OHLCV bars, CSV loading, synthetic regime-switching price
//! paths, and the feature pipeline that turns a close series into the
//! 10-dimensional state vector used for retrieval and allocation.
//!
//! Feature layout (index: name):
//! 0: returns_1d, 1: returns_5d, 2: returns_21d, 3: realized_vol_21d,
//! 4: realized_vol_63d, 5: drawdown_from_peak, 6: trend_21d,
//! 7..9: regime one-hot (calm, trending, high_vol).
//!
//! The first seven features are z-scored with calibration statistics before
//! retrieval; the one-hot block passes through unscaled.

use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calendar::TradingCalendar;
use crate::error::{Error, Result};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
/// Minimum close index with enough history for every feature (63 returns).
pub const FIRST_FEATURE_INDEX: usize = 63;
pub const SCALED_FEATURES: usize = 7;
pub const FEATURE_DIM: usize = 10;

const CSV_HEADER: &str = "date,open,high,low,close,volume";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Data {
                date: self.date,
                msg: "prices must be finite and positive".into(),
            });
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(Error::Data {
                date: self.date,
                msg: "volume must be finite and non-negative".into(),
            });
        }
        if self.high < self.open.max(self.close) || self.low > self.open.min(self.close) {
            return Err(Error::Data {
                date: self.date,
                msg: "high/low must bracket open and close".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub symbol: String,
    bars: Vec<Bar>,
}

impl PriceSeries {
    /// Builds a series from bars with strictly increasing dates.
    pub fn new(symbol: impl Into<String>, bars: Vec<Bar>) -> Result<Self> {
        if bars.is_empty() {
            return Err(Error::Config("price series requires at least one bar".into()));
        }
        for bar in &bars {
            bar.validate()?;
        }
        for w in bars.windows(2) {
            if w[1].date <= w[0].date {
                return Err(Error::Ordering {
                    date: w[1].date,
                    msg: "bar dates must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { symbol: symbol.into(), bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn bar(&self, index: usize) -> &Bar {
        &self.bars[index]
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.bars.binary_search_by_key(&date, |b| b.date).ok()
    }

    pub fn calendar(&self) -> TradingCalendar {
        TradingCalendar::new(self.dates()).expect("series dates are validated on construction")
    }

    /// Drops all bars strictly after `date`. Used by no-lookahead checks.
    pub fn truncated_at(&self, date: NaiveDate) -> Result<Self> {
        let bars: Vec<Bar> = self.bars.iter().copied().filter(|b| b.date <= date).collect();
        Self::new(self.symbol.clone(), bars)
    }

    /// Parses `date,open,high,low,close,volume` CSV with an exact header.
    pub fn from_csv_reader(symbol: impl Into<String>, reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?
            .map_err(Error::Io)?;
        if header.trim_end_matches('\r') != CSV_HEADER {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header '{CSV_HEADER}', found '{header}'"),
            });
        }
        let mut bars = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(Error::Io)?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 6 fields, found {}", fields.len()),
                });
            }
            let date = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad date '{}': {e}", fields[0]),
            })?;
            let mut nums = [0.0f64; 5];
            for (j, raw) in fields[1..].iter().enumerate() {
                nums[j] = raw.parse().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("bad number '{raw}': {e}"),
                })?;
            }
            bars.push(Bar {
                date,
                open: nums[0],
                high: nums[1],
                low: nums[2],
                close: nums[3],
                volume: nums[4],
            });
        }
        Self::new(symbol, bars)
    }

    pub fn from_csv_path(symbol: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_csv_reader(symbol, file)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for b in &self.bars {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                b.date.format("%Y-%m-%d"),
                b.open,
                b.high,
                b.low,
                b.close,
                b.volume
            ));
        }
        out
    }
}

/// One latent regime of the synthetic generator, with annualized drift and
/// volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub name: String,
    pub annual_drift: f64,
    pub annual_vol: f64,
}

/// Regime-switching geometric Brownian motion spec. `transition[i][j]` is
/// the daily probability of moving from regime `i` to regime `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regimes: Vec<RegimeParams>,
    pub transition: Vec<Vec<f64>>,
    pub initial_regime: usize,
    pub daily_volume: f64,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.regimes.len();
        if n == 0 {
            return Err(Error::Config("regime spec requires at least one regime".into()));
        }
        if self.transition.len() != n {
            return Err(Error::Config(format!(
                "transition matrix has {} rows for {} regimes",
                self.transition.len(),
                n
            )));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("transition row {i} has {} entries", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!("transition row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("transition row {i} sums to {sum}, expected 1")));
            }
        }
        if self.initial_regime >= n {
            return Err(Error::Config(format!(
                "initial regime {} out of range for {n} regimes",
                self.initial_regime
            )));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !r.annual_vol.is_finite() || r.annual_vol < 0.0 {
                return Err(Error::Config(format!("regime {i} has invalid volatility")));
            }
            if !r.annual_drift.is_finite() {
                return Err(Error::Config(format!("regime {i} has invalid drift")));
            }
        }
        if !self.daily_volume.is_finite() || self.daily_volume <= 0.0 {
            return Err(Error::Config("daily volume must be positive".into()));
        }
        Ok(())
    }
}

/// Generates a regime-switching GBM path on consecutive weekdays.
///
/// Day 0 is `start_price` in `initial_regime` with no random draws. Each
/// later day draws, in order, one uniform for the regime transition and one
/// standard normal for the log-return
/// `(drift/252 - vol^2/504) + vol * z / sqrt(252)`. Bars open at the prior
/// close with high/low spanning open and close, and constant volume, so the
/// whole path is a pure function of `(spec, days, start_price, start_date,
/// seed)`.
pub fn generate_regime_path(
    spec: &RegimeSpec,
    days: usize,
    start_price: f64,
    start_date: NaiveDate,
    seed: u64,
) -> Result<(PriceSeries, Vec<usize>)> {
    spec.validate()?;
    if days == 0 {
        return Err(Error::Config("path length must be positive".into()));
    }
    if !start_price.is_finite() || start_price <= 0.0 {
        return Err(Error::Config("start price must be positive".into()));
    }
    let calendar = TradingCalendar::synthetic(start_date, days);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regimes = Vec::with_capacity(days);
    let mut bars = Vec::with_capacity(days);
    let mut regime = spec.initial_regime;
    let mut close = start_price;
    regimes.push(regime);
    bars.push(Bar {
        date: calendar.date_at(0).expect("calendar has `days` entries"),
        open: close,
        high: close,
        low: close,
        close,
        volume: spec.daily_volume,
    });
    for d in 1..days {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let row = &spec.transition[regime];
        let mut next = row.len() - 1;
        for (j, p) in row.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                next = j;
                break;
            }
        }
        regime = next;
        let params = &spec.regimes[regime];
        let z: f64 = StandardNormal.sample(&mut rng);
        let drift = params.annual_drift / TRADING_DAYS_PER_YEAR
            - params.annual_vol * params.annual_vol / (2.0 * TRADING_DAYS_PER_YEAR);
        let step = drift + params.annual_vol * z / TRADING_DAYS_PER_YEAR.sqrt();
        let open = close;
        close *= step.exp();
        bars.push(Bar {
            date: calendar.date_at(d).expect("calendar has `days` entries"),
            open,
            high: open.max(close),
            low: open.min(close),
            close,
            volume: spec.daily_volume,
        });
        regimes.push(regime);
    }
    Ok((PriceSeries::new("SYNTH", bars)?, regimes))
}

/// Classified market regime used for the feature one-hot and allocation
/// priors. This is inferred from observable features, independent of the
/// latent generator regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Calm,
    Trending,
    HighVol,
}

impl RegimeLabel {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            RegimeLabel::Calm => [1.0, 0.0, 0.0],
            RegimeLabel::Trending => [0.0, 1.0, 0.0],
            RegimeLabel::HighVol => [0.0, 0.0, 1.0],
        }
    }
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegimeLabel::Calm => "calm",
            RegimeLabel::Trending => "trending",
            RegimeLabel::HighVol => "high_vol",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketFeatures {
    pub returns_1d: f64,
    pub returns_5d: f64,
    pub returns_21d: f64,
    pub realized_vol_21d: f64,
    pub realized_vol_63d: f64,
    pub drawdown_from_peak: f64,
    pub trend_21d: f64,
    pub regime: RegimeLabel,
}

impl MarketFeatures {
    pub fn scaled_parts(&self) -> [f64; SCALED_FEATURES] {
        [
            self.returns_1d,
            self.returns_5d,
            self.returns_21d,
            self.realized_vol_21d,
            self.realized_vol_63d,
            self.drawdown_from_peak,
            self.trend_21d,
        ]
    }

    pub fn to_vector(&self) -> [f64; FEATURE_DIM] {
        let s = self.scaled_parts();
        let oh = self.regime.one_hot();
        [s[0], s[1], s[2], s[3], s[4], s[5], s[6], oh[0], oh[1], oh[2]]
    }

    pub fn with_regime(mut self, regime: RegimeLabel) -> Self {
        self.regime = regime;
        self
    }
}

/// Population standard deviation (divide by n, not n-1).
fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

fn trailing_returns(closes: &[f64], t: usize, count: usize) -> Vec<f64> {
    (t + 1 - count..=t).map(|i| closes[i] / closes[i - 1] - 1.0).collect()
}

/// Annualized population volatility of the last `count` daily returns
/// ending at index `t`.
fn realized_vol(closes: &[f64], t: usize, count: usize) -> f64 {
    population_std(&trailing_returns(closes, t, count)) * TRADING_DAYS_PER_YEAR.sqrt()
}

/// OLS slope of ln(close) against the day index over the last `count`
/// closes ending at `t`, in log-return-per-day units.
fn log_trend(closes: &[f64], t: usize, count: usize) -> f64 {
    let ys: Vec<f64> = (t + 1 - count..=t).map(|i| closes[i].ln()).collect();
    let n = count as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}

/// Computes the feature block at close index `t`. Requires
/// `t >= FIRST_FEATURE_INDEX`; the drawdown peak spans the whole series up
/// to and including `t`.
pub fn compute_features(series: &PriceSeries, t: usize, regime: RegimeLabel) -> Result<MarketFeatures> {
    if t >= series.len() {
        return Err(Error::Internal(format!(
            "feature index {t} out of range for series of length {}",
            series.len()
        )));
    }
    if t < FIRST_FEATURE_INDEX {
        return Err(Error::InsufficientHistory {
            index: t,
            required: FIRST_FEATURE_INDEX,
            available: t,
        });
    }
    let closes = series.closes();
    let peak = closes[..=t].iter().cloned().fold(f64::MIN, f64::max);
    let features = MarketFeatures {
        returns_1d: closes[t] / closes[t - 1] - 1.0,
        returns_5d: closes[t] / closes[t - 5] - 1.0,
        returns_21d: closes[t] / closes[t - 21] - 1.0,
        realized_vol_21d: realized_vol(&closes, t, 21),
        realized_vol_63d: realized_vol(&closes, t, 63),
        drawdown_from_peak: 1.0 - closes[t] / peak,
        trend_21d: log_trend(&closes, t, 21),
        regime,
    };
    if features.scaled_parts().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data {
            date: series.bar(t).date,
            msg: "non-finite feature value".into(),
        });
    }
    Ok(features)
}

/// Per-feature mean / standard deviation over a calibration window, for the
/// seven scaled features. Zero-variance features are flagged and scale by
/// 1.0 instead of dividing by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mean: [f64; SCALED_FEATURES],
    pub std: [f64; SCALED_FEATURES],
    pub flagged: [bool; SCALED_FEATURES],
}

/// Minimum number of feature observations for calibration.
pub const MIN_CALIBRATION_DAYS: usize = 126;

const FLAT_STD_EPSILON: f64 = 1e-12;

pub fn calibrate(features: &[MarketFeatures]) -> Result<CalibrationStats> {
    if features.len() < MIN_CALIBRATION_DAYS {
        return Err(Error::Config(format!(
            "calibration window has {} feature days, need at least {MIN_CALIBRATION_DAYS}",
            features.len()
        )));
    }
    let mut mean = [0.0; SCALED_FEATURES];
    let mut std = [0.0; SCALED_FEATURES];
    let mut flagged = [false; SCALED_FEATURES];
    let n = features.len() as f64;
    for k in 0..SCALED_FEATURES {
        let column: Vec<f64> = features.iter().map(|f| f.scaled_parts()[k]).collect();
        mean[k] = column.iter().sum::<f64>() / n;
        let sd = population_std(&column);
        if sd < FLAT_STD_EPSILON {
            flagged[k] = true;
            std[k] = 1.0;
        } else {
            std[k] = sd;
        }
    }
    Ok(CalibrationStats { mean, std, flagged })
}

/// Z-scores the scaled features and appends the regime one-hot unchanged.
pub fn embed(features: &MarketFeatures, stats: &CalibrationStats) -> [f64; FEATURE_DIM] {
    let s = features.scaled_parts();
    let oh = features.regime.one_hot();
    let mut out = [0.0; FEATURE_DIM];
    for k in 0..SCALED_FEATURES {
        out[k] = (s[k] - stats.mean[k]) / stats.std[k];
    }
    out[SCALED_FEATURES..].copy_from_slice(&oh);
    out
}

/// Equal-weight index of several series: the mean of closes normalized to
/// 100 at first bar. All series must share an identical date grid. Feature
/// computation and regime classification run on this index when the
/// portfolio holds more than one symbol.
pub fn basket_index(series: &[PriceSeries]) -> Result<PriceSeries> {
    let first = series
        .first()
        .ok_or_else(|| Error::Config("basket requires at least one series".into()))?;
    for other in &series[1..] {
        if other.len() != first.len() {
            return Err(Error::Config(format!(
                "series '{}' has {} bars, '{}' has {}",
                other.symbol,
                other.len(),
                first.symbol,
                first.len()
            )));
        }
        for (a, b) in first.bars().iter().zip(other.bars()) {
            if a.date != b.date {
                return Err(Error::Data {
                    date: b.date,
                    msg: format!("series '{}' diverges from shared date grid", other.symbol),
                });
            }
        }
    }
    let n = series.len() as f64;
    let bars: Vec<Bar> = (0..first.len())
        .map(|t| {
            let level = 100.0
                * series
                    .iter()
                    .map(|s| s.bar(t).close / s.bar(0).close)
                    .sum::<f64>()
                / n;
            Bar {
                date: first.bar(t).date,
                open: level,
                high: level,
                low: level,
                close: level,
                volume: 0.0,
            }
        })
        .collect();
    PriceSeries::new("BASKET", bars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn flat_series(len: usize, price: f64) -> PriceSeries {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), len);
        let bars = cal
            .dates()
            .iter()
            .map(|&d| Bar { date: d, open: price, high: price, low: price, close: price, volume: 1e6 })
            .collect();
        PriceSeries::new("FLAT", bars).unwrap()
    }

    fn growth_series(len: usize, daily: f64) -> PriceSeries {
        let cal = TradingCalendar::synthetic(date(2020, 1, 1), len);
        let mut price = 100.0;
        let bars = cal
            .dates()
            .iter()
            .map(|&d| {
                let b = Bar { date: d, open: price, high: price * (1.0 + daily), low: price, close: price * (1.0 + daily), volume: 1e6 };
                price *= 1.0 + daily;
                b
            })
            .collect();
        PriceSeries::new("GROW", bars).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let series = growth_series(5, 0.01);
        let text = series.to_csv_string();
        assert!(text.starts_with("date,open,high,low,close,volume\n"));
        let parsed = PriceSeries::from_csv_reader("GROW", text.as_bytes()).unwrap();
        assert_eq!(parsed, series);
    }

    #[test]
    fn csv_rejects_bad_header() {
        let text = "date,open,high,low,close,vol\n2020-01-01,1,1,1,1,1\n";
        let err = PriceSeries::from_csv_reader("X", text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn csv_reports_line_numbers() {
        let text = "date,open,high,low,close,volume\n2020-01-01,1,1,1,1,1\n2020-01-02,1,1,oops,1,1\n";
        let err = PriceSeries::from_csv_reader("X", text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn csv_rejects_unsorted_dates() {
        let text = "date,open,high,low,close,volume\n2020-01-02,1,1,1,1,1\n2020-01-01,1,1,1,1,1\n";
        let err = PriceSeries::from_csv_reader("X", text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ordering { .. }));
    }

    fn three_regime_spec() -> RegimeSpec {
        RegimeSpec {
            regimes: vec![
                RegimeParams { name: "calm".into(), annual_drift: 0.08, annual_vol: 0.10 },
                RegimeParams { name: "trend".into(), annual_drift: 0.30, annual_vol: 0.18 },
                RegimeParams { name: "crash".into(), annual_drift: -0.40, annual_vol: 0.50 },
            ],
            transition: vec![
                vec![0.97, 0.02, 0.01],
                vec![0.03, 0.95, 0.02],
                vec![0.05, 0.01, 0.94],
            ],
            initial_regime: 0,
            daily_volume: 1e6,
        }
    }

    #[test]
    fn generator_is_deterministic_per_seed() {
        let spec = three_regime_spec();
        let (a, ra) = generate_regime_path(&spec, 300, 100.0, date(2020, 1, 1), 7).unwrap();
        let (b, rb) = generate_regime_path(&spec, 300, 100.0, date(2020, 1, 1), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let (c, _) = generate_regime_path(&spec, 300, 100.0, date(2020, 1, 1), 8).unwrap();
        assert_ne!(a.closes(), c.closes());
    }

    #[test]
    fn generator_starts_at_initial_state() {
        let spec = three_regime_spec();
        let (series, regimes) = generate_regime_path(&spec, 10, 250.0, date(2020, 1, 1), 1).unwrap();
        assert_eq!(series.bar(0).close, 250.0);
        assert_eq!(regimes[0], 0);
        // Bars chain: each open equals the prior close.
        for t in 1..series.len() {
            assert_eq!(series.bar(t).open, series.bar(t - 1).close);
        }
    }

    #[test]
    fn generator_vol_matches_regime() {
        // Force a single-regime spec at each vol level and compare realized vol.
        let mk = |vol: f64| RegimeSpec {
            regimes: vec![RegimeParams { name: "only".into(), annual_drift: 0.0, annual_vol: vol }],
            transition: vec![vec![1.0]],
            initial_regime: 0,
            daily_volume: 1e6,
        };
        let (lo, _) = generate_regime_path(&mk(0.10), 2000, 100.0, date(2015, 1, 1), 3).unwrap();
        let (hi, _) = generate_regime_path(&mk(0.50), 2000, 100.0, date(2015, 1, 1), 3).unwrap();
        let vol = |s: &PriceSeries| realized_vol(&s.closes(), s.len() - 1, s.len() - 1);
        assert_relative_eq!(vol(&lo), 0.10, max_relative = 0.15);
        assert_relative_eq!(vol(&hi), 0.50, max_relative = 0.15);
    }

    #[test]
    fn rejects_non_stochastic_transition() {
        let mut spec = three_regime_spec();
        spec.transition[0][0] = 0.5;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn features_on_constant_growth() {
        let daily = 0.01;
        let series = growth_series(80, daily);
        let t = 70;
        let f = compute_features(&series, t, RegimeLabel::Trending).unwrap();
        assert_relative_eq!(f.returns_1d, daily, epsilon = 1e-12);
        assert_relative_eq!(f.returns_5d, (1.0 + daily).powi(5) - 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.returns_21d, (1.0 + daily).powi(21) - 1.0, epsilon = 1e-12);
        // Identical daily returns: zero realized vol, zero drawdown.
        assert_relative_eq!(f.realized_vol_21d, 0.0, epsilon = 1e-9);
        assert_relative_eq!(f.realized_vol_63d, 0.0, epsilon = 1e-9);
        assert_eq!(f.drawdown_from_peak, 0.0);
        // Log closes are exactly linear with slope ln(1 + daily).
        assert_relative_eq!(f.trend_21d, (1.0 + daily).ln(), epsilon = 1e-12);
        let v = f.to_vector();
        assert_eq!(&v[7..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn drawdown_feature_is_positive_below_peak() {
        let mut series = growth_series(80, 0.01);
        // Knock the final close 20% below the prior close (and the peak).
        let mut bars = series.bars().to_vec();
        let last = bars.last_mut().unwrap();
        last.close = last.open * 0.8;
        last.low = last.close;
        last.high = last.open;
        series = PriceSeries::new("DIP", bars).unwrap();
        let closes = series.closes();
        let t = series.len() - 1;
        let peak = closes[..=t].iter().cloned().fold(f64::MIN, f64::max);
        let f = compute_features(&series, t, RegimeLabel::Calm).unwrap();
        assert_relative_eq!(f.drawdown_from_peak, 1.0 - closes[t] / peak, epsilon = 1e-12);
        assert!(f.drawdown_from_peak > 0.15);
    }

    #[test]
    fn features_require_history() {
        let series = growth_series(80, 0.01);
        let err = compute_features(&series, 62, RegimeLabel::Calm).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { required: 63, .. }));
        assert!(compute_features(&series, 63, RegimeLabel::Calm).is_ok());
    }

    #[test]
    fn flat_window_flags_every_feature() {
        let series = flat_series(200, 50.0);
        let features: Vec<MarketFeatures> = (FIRST_FEATURE_INDEX..series.len())
            .map(|t| compute_features(&series, t, RegimeLabel::Calm).unwrap())
            .collect();
        let stats = calibrate(&features).unwrap();
        assert_eq!(stats.mean, [0.0; SCALED_FEATURES]);
        assert_eq!(stats.flagged, [true; SCALED_FEATURES]);
        assert_eq!(stats.std, [1.0; SCALED_FEATURES]);
        // Flagged features embed without dividing by zero.
        let e = embed(&features[0], &stats);
        assert!(e.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn calibration_requires_min_window() {
        let series = growth_series(150, 0.002);
        let features: Vec<MarketFeatures> = (FIRST_FEATURE_INDEX..series.len())
            .map(|t| compute_features(&series, t, RegimeLabel::Calm).unwrap())
            .collect();
        assert!(features.len() < MIN_CALIBRATION_DAYS);
        assert!(matches!(calibrate(&features), Err(Error::Config(_))));
    }

    #[test]
    fn zscore_round_trip() {
        let spec = three_regime_spec();
        let (series, _) = generate_regime_path(&spec, 400, 100.0, date(2018, 1, 1), 11).unwrap();
        let features: Vec<MarketFeatures> = (FIRST_FEATURE_INDEX..series.len())
            .map(|t| compute_features(&series, t, RegimeLabel::Calm).unwrap())
            .collect();
        let stats = calibrate(&features).unwrap();
        for f in features.iter().step_by(37) {
            let e = embed(f, &stats);
            let s = f.scaled_parts();
            for k in 0..SCALED_FEATURES {
                let back = e[k] * stats.std[k] + stats.mean[k];
                assert_relative_eq!(back, s[k], epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn basket_index_averages_normalized_closes() {
        let a = growth_series(70, 0.01);
        let mut b_bars = growth_series(70, 0.0).bars().to_vec();
        for bar in &mut b_bars {
            bar.open *= 3.0;
            bar.high *= 3.0;
            bar.low *= 3.0;
            bar.close *= 3.0;
        }
        let b = PriceSeries::new("B", b_bars).unwrap();
        let idx = basket_index(&[a.clone(), b]).unwrap();
        // One growing leg, one flat leg: index = 100 * (1.01^t + 1) / 2.
        let t = 10;
        let expect = 100.0 * ((1.01f64).powi(t as i32) + 1.0) / 2.0;
        assert_relative_eq!(idx.bar(t).close, expect, epsilon = 1e-9);
    }

    #[test]
    fn basket_rejects_mismatched_dates() {
        let a = growth_series(70, 0.01);
        let b = {
            let cal = TradingCalendar::synthetic(date(2020, 2, 1), 70);
            let bars = cal
                .dates()
                .iter()
                .map(|&d| Bar { date: d, open: 10.0, high: 10.0, low: 10.0, close: 10.0, volume: 1.0 })
                .collect();
            PriceSeries::new("B", bars).unwrap()
        };
        assert!(basket_index(&[a, b]).is_err());
    }
}
