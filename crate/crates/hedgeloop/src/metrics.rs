//! Risk and performance statistics over an equity curve.
//!
//! Conventions, recorded in every [`MetricsReport`]: daily simple returns,
//! population standard deviations, sqrt(252) annualization, risk-free rate
//! zero, 95% confidence tail of size ceil(0.05 * n), losses reported as
//! positive percentages. Metrics that are undefined for a series (zero
//! return variance, no negative returns, zero drawdown) are carried as
//! explicit `null` markers, never as zero.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::TRADING_DAYS_PER_YEAR;

/// Portfolio value per trading day, strictly increasing dates, positive
/// values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EquityCurve {
    points: Vec<(NaiveDate, f64)>,
}

impl EquityCurve {
    pub fn new(points: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let mut curve = EquityCurve { points: Vec::with_capacity(points.len()) };
        for (date, value) in points {
            curve.push(date, value)?;
        }
        Ok(curve)
    }

    pub fn push(&mut self, date: NaiveDate, value: f64) -> Result<()> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::Data { date, msg: format!("curve value {value} must be positive") });
        }
        if let Some((last, _)) = self.points.last() {
            if date <= *last {
                return Err(Error::Ordering { date, msg: "curve dates must be strictly increasing".into() });
            }
        }
        self.points.push((date, value));
        Ok(())
    }

    pub fn points(&self) -> &[(NaiveDate, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|(_, v)| *v).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.points.binary_search_by_key(&date, |(d, _)| *d).ok()
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|(_, v)| *v)
    }

    /// Per-point drawdown fraction from the running peak.
    pub fn drawdowns(&self) -> Vec<f64> {
        let mut peak = f64::MIN;
        self.points
            .iter()
            .map(|(_, v)| {
                peak = peak.max(*v);
                1.0 - v / peak
            })
            .collect()
    }
}

/// Daily simple returns; each return carries the date it was realized
/// (the later of the two curve points).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn from_curve(curve: &EquityCurve) -> Result<Self> {
        if curve.len() < 2 {
            return Err(Error::Domain("return series requires a curve of length >= 2".into()));
        }
        let pts = curve.points();
        let mut dates = Vec::with_capacity(pts.len() - 1);
        let mut values = Vec::with_capacity(pts.len() - 1);
        for w in pts.windows(2) {
            dates.push(w[1].0);
            values.push(w[1].1 / w[0].1 - 1.0);
        }
        Ok(Self { dates, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn undefined(what: &str) -> Error {
    Error::Domain(format!("undefined metric: {what}"))
}

fn check_curve(curve: &EquityCurve) -> Result<()> {
    if curve.len() < 2 {
        return Err(Error::Domain("metric requires a curve of length >= 2".into()));
    }
    Ok(())
}

/// (final / initial - 1) * 100.
pub fn total_return(curve: &EquityCurve) -> Result<f64> {
    check_curve(curve)?;
    let v = curve.values();
    Ok((v[v.len() - 1] / v[0] - 1.0) * 100.0)
}

/// Largest peak-to-trough decline, percent of the running peak.
pub fn max_drawdown(curve: &EquityCurve) -> Result<f64> {
    check_curve(curve)?;
    Ok(curve.drawdowns().into_iter().fold(0.0, f64::max) * 100.0)
}

/// Mean excess daily return over population stdev, annualized.
/// Zero return variance makes the ratio undefined.
pub fn sharpe(returns: &ReturnSeries, risk_free_daily: f64, annualization: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::Domain("sharpe requires >= 2 returns".into()));
    }
    let excess: Vec<f64> = returns.values.iter().map(|r| r - risk_free_daily).collect();
    let sd = population_std(&excess);
    if sd == 0.0 {
        return Err(undefined("sharpe with zero return variance"));
    }
    Ok(mean(&excess) / sd * annualization.sqrt())
}

/// Tail statistics at `confidence`: the worst `ceil((1-confidence)*n)`
/// returns. Returns (cvar, var), both sign-flipped to percent losses:
/// cvar is the tail mean, var the least-bad tail member. All-gain tails
/// come out negative by the same convention.
pub fn cvar(returns: &ReturnSeries, confidence: f64) -> Result<(f64, f64)> {
    if returns.is_empty() {
        return Err(Error::Domain("cvar tail is empty".into()));
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::Domain(format!("confidence {confidence} outside [0, 1)")));
    }
    let n = returns.len();
    // Snap near-integer products to the integer before the ceiling so an
    // exactly representable tail like 0.05 * 20 = 1 is not pushed to 2 by
    // the rounding error in (1 - confidence).
    let raw = (1.0 - confidence) * n as f64;
    let snapped = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    let tail_size = (snapped as usize).max(1);
    let mut sorted = returns.values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("returns are finite"));
    let tail = &sorted[..tail_size];
    let cvar = -mean(tail) * 100.0;
    let var = -tail[tail_size - 1] * 100.0;
    Ok((cvar, var))
}

/// Population stdev of the negative returns only, daily units. Undefined
/// when the series has no negative returns.
pub fn downside_deviation_daily(returns: &ReturnSeries) -> Result<f64> {
    let negatives: Vec<f64> = returns.values.iter().copied().filter(|r| *r < 0.0).collect();
    if negatives.is_empty() {
        return Err(undefined("downside deviation with no negative returns"));
    }
    Ok(population_std(&negatives))
}

/// Mean daily return over downside deviation, annualized. Undefined when
/// downside deviation is undefined or zero.
pub fn sortino(returns: &ReturnSeries, annualization: f64) -> Result<f64> {
    let ddv = downside_deviation_daily(returns)?;
    if ddv == 0.0 {
        return Err(undefined("sortino with zero downside deviation"));
    }
    Ok(mean(&returns.values) / ddv * annualization.sqrt())
}

/// Annualized (CAGR) return over max drawdown. Undefined at zero drawdown.
pub fn calmar(curve: &EquityCurve, annualization: f64) -> Result<f64> {
    check_curve(curve)?;
    let md = max_drawdown(curve)? / 100.0;
    if md == 0.0 {
        return Err(undefined("calmar with zero drawdown"));
    }
    let v = curve.values();
    let periods = (curve.len() - 1) as f64;
    let cagr = (v[v.len() - 1] / v[0]).powf(annualization / periods) - 1.0;
    Ok(cagr / md)
}

/// Worst calendar-month compounded return, percent. Months are keyed by
/// the (year, month) of each return's date; partial boundary months count.
pub fn worst_month(returns: &ReturnSeries) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::Domain("worst month requires >= 1 return".into()));
    }
    let mut worst = f64::MAX;
    let mut current_key = (0i32, 0u32);
    let mut compounded = 1.0;
    let mut open = false;
    for (date, r) in returns.dates.iter().zip(&returns.values) {
        let key = (date.year(), date.month());
        if open && key != current_key {
            worst = worst.min(compounded - 1.0);
            compounded = 1.0;
        }
        current_key = key;
        compounded *= 1.0 + r;
        open = true;
    }
    worst = worst.min(compounded - 1.0);
    Ok(worst * 100.0)
}

/// Percent of curve days with drawdown strictly above `threshold`.
pub fn time_in_severe_drawdown(curve: &EquityCurve, threshold: f64) -> Result<f64> {
    check_curve(curve)?;
    let dd = curve.drawdowns();
    let severe = dd.iter().filter(|d| **d > threshold).count();
    Ok(severe as f64 / dd.len() as f64 * 100.0)
}

/// Longest run of strictly negative daily returns, in days.
pub fn max_consecutive_losses(returns: &ReturnSeries) -> usize {
    let mut best = 0usize;
    let mut run = 0usize;
    for r in &returns.values {
        if *r < 0.0 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

/// Conventions shared by every metric in a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub confidence: f64,
    pub annualization: f64,
    pub risk_free_daily: f64,
    /// Drawdown fraction above which a day counts as severe for TDD.
    pub severe_drawdown: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { confidence: 0.95, annualization: TRADING_DAYS_PER_YEAR, risk_free_daily: 0.0, severe_drawdown: 0.10 }
    }
}

/// Flat metric document. Undefined metrics serialize as `null`. Field
/// order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: Option<f64>,
    pub tr_pct: f64,
    pub md_pct: f64,
    pub cvar95_pct: f64,
    pub var95_pct: f64,
    pub sortino: Option<f64>,
    pub calmar: Option<f64>,
    pub wm_pct: f64,
    pub ddv_pct: Option<f64>,
    pub tdd_pct: f64,
    pub mcl_days: u32,
    pub confidence: f64,
    pub annualization: f64,
    pub risk_free_daily: f64,
}

impl MetricsReport {
    /// Table row in SR, TR, MD, CVaR, WM, DDv order, 2 decimals,
    /// undefined as "n/a".
    pub fn table1_row(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            match v {
                Some(x) => format!("{x:.2}"),
                None => "n/a".into(),
            }
        }
        format!(
            "{} {} {} {} {} {}",
            cell(self.sr),
            cell(Some(self.tr_pct)),
            cell(Some(self.md_pct)),
            cell(Some(self.cvar95_pct)),
            cell(Some(self.wm_pct)),
            cell(self.ddv_pct),
        )
    }
}

/// Header matching [`MetricsReport::table1_row`].
pub const TABLE1_HEADER: &str = "SR TR% MD% CVaR% WM% DDv%";

fn option_of(result: Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::Domain(msg)) if msg.starts_with("undefined metric") => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn compute_all_with(curve: &EquityCurve, config: &MetricsConfig) -> Result<MetricsReport> {
    check_curve(curve)?;
    let returns = ReturnSeries::from_curve(curve)?;
    let (cvar95, var95) = cvar(&returns, config.confidence)?;
    let ddv = option_of(downside_deviation_daily(&returns))?
        .map(|d| d * config.annualization.sqrt() * 100.0);
    Ok(MetricsReport {
        sr: option_of(sharpe(&returns, config.risk_free_daily, config.annualization))?,
        tr_pct: total_return(curve)?,
        md_pct: max_drawdown(curve)?,
        cvar95_pct: cvar95,
        var95_pct: var95,
        sortino: option_of(sortino(&returns, config.annualization))?,
        calmar: option_of(calmar(curve, config.annualization))?,
        wm_pct: worst_month(&returns)?,
        ddv_pct: ddv,
        tdd_pct: time_in_severe_drawdown(curve, config.severe_drawdown)?,
        mcl_days: max_consecutive_losses(&returns) as u32,
        confidence: config.confidence,
        annualization: config.annualization,
        risk_free_daily: config.risk_free_daily,
    })
}

pub fn compute_all(curve: &EquityCurve) -> Result<MetricsReport> {
    compute_all_with(curve, &MetricsConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::TradingCalendar;
    use approx::assert_relative_eq;

    fn curve_of(values: &[f64]) -> EquityCurve {
        let cal = TradingCalendar::synthetic(NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(), values.len());
        EquityCurve::new(cal.dates().iter().copied().zip(values.iter().copied()).collect()).unwrap()
    }

    fn returns_of(values: &[f64]) -> ReturnSeries {
        // Build a curve realizing exactly these daily returns.
        let mut v = vec![100.0];
        for r in values {
            v.push(v.last().unwrap() * (1.0 + r));
        }
        ReturnSeries::from_curve(&curve_of(&v)).unwrap()
    }

    #[test]
    fn total_return_examples() {
        assert_eq!(total_return(&curve_of(&[100.0, 150.0])).unwrap(), 50.0);
        assert_eq!(total_return(&curve_of(&[100.0, 100.0, 100.0])).unwrap(), 0.0);
        assert_eq!(total_return(&curve_of(&[80.0, 100.0])).unwrap(), 25.0);
    }

    #[test]
    fn max_drawdown_examples() {
        assert_relative_eq!(max_drawdown(&curve_of(&[100.0, 120.0, 90.0, 100.0])).unwrap(), 25.0, epsilon = 1e-12);
        assert_eq!(max_drawdown(&curve_of(&[100.0, 101.0, 102.0])).unwrap(), 0.0);
        assert_eq!(max_drawdown(&curve_of(&[100.0, 50.0])).unwrap(), 50.0);
    }

    #[test]
    fn drawdown_scale_invariance() {
        let a = max_drawdown(&curve_of(&[100.0, 120.0, 90.0, 100.0])).unwrap();
        let b = max_drawdown(&curve_of(&[700.0, 840.0, 630.0, 700.0])).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn sharpe_examples() {
        let alternating = returns_of(&[0.01, -0.01, 0.01, -0.01, 0.01, -0.01]);
        // Compounding makes the mean of realized simple returns exactly the
        // arithmetic mean of the inputs here; it is zero by symmetry.
        assert_relative_eq!(sharpe(&alternating, 0.0, 252.0).unwrap(), 0.0, epsilon = 1e-9);

        let constant = returns_of(&[0.001, 0.001, 0.001]);
        assert!(matches!(sharpe(&constant, 0.0, 252.0), Err(Error::Domain(msg)) if msg.contains("undefined")));

        let hand = returns_of(&[0.02, 0.0, -0.01]);
        assert_relative_eq!(sharpe(&hand, 0.0, 252.0).unwrap(), 4.2426, epsilon = 1e-3);
    }

    #[test]
    fn cvar_examples() {
        let mut vals = vec![0.01; 19];
        vals.push(-0.05);
        let (c, v) = cvar(&returns_of(&vals), 0.95).unwrap();
        assert_relative_eq!(c, 5.0, epsilon = 1e-9);
        assert_relative_eq!(v, 5.0, epsilon = 1e-9);

        // 40 returns, worst two -4% and -2%: tail size ceil(2) = 2.
        let mut vals = vec![0.005; 38];
        vals.push(-0.04);
        vals.push(-0.02);
        let (c, v) = cvar(&returns_of(&vals), 0.95).unwrap();
        assert_relative_eq!(c, 3.0, epsilon = 1e-9);
        assert_relative_eq!(v, 2.0, epsilon = 1e-9);

        // All-positive returns: the tail is a gain, reported negative.
        let (c, _) = cvar(&returns_of(&[0.01, 0.02, 0.03]), 0.95).unwrap();
        assert!(c < 0.0);
    }

    #[test]
    fn cvar_dominates_var() {
        let r = returns_of(&[0.01, -0.03, 0.002, -0.01, 0.004, -0.002, 0.02, -0.04]);
        let (c, v) = cvar(&r, 0.95).unwrap();
        assert!(c >= v);
    }

    #[test]
    fn mcl_example() {
        let r = returns_of(&[-0.01, -0.01, 0.01, -0.01, -0.01, -0.01]);
        assert_eq!(max_consecutive_losses(&r), 3);
        assert_eq!(max_consecutive_losses(&returns_of(&[0.01, 0.0, 0.02])), 0);
    }

    #[test]
    fn tdd_example() {
        let c = curve_of(&[100.0, 100.0, 85.0, 92.0, 100.0, 100.0]);
        assert_relative_eq!(time_in_severe_drawdown(&c, 0.10).unwrap(), 100.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn worst_month_groups_by_calendar_month() {
        // 2021-01-28/29 then 2021-02-01.. : one loss-making January,
        // a recovering February.
        let dates = [
            NaiveDate::from_ymd_opt(2021, 1, 27).unwrap(),
            NaiveDate::from_ymd_opt(2021, 1, 28).unwrap(),
            NaiveDate::from_ymd_opt(2021, 1, 29).unwrap(),
            NaiveDate::from_ymd_opt(2021, 2, 1).unwrap(),
            NaiveDate::from_ymd_opt(2021, 2, 2).unwrap(),
        ];
        let values = [100.0, 95.0, 90.0, 95.0, 99.0];
        let curve = EquityCurve::new(dates.iter().copied().zip(values).collect()).unwrap();
        let returns = ReturnSeries::from_curve(&curve).unwrap();
        // January: 90/100 - 1 = -10%. February: 99/90 - 1 = +10%.
        assert_relative_eq!(worst_month(&returns).unwrap(), -10.0, epsilon = 1e-9);
    }

    #[test]
    fn sortino_and_ddv_undefined_without_losses() {
        let r = returns_of(&[0.01, 0.0, 0.02]);
        assert!(downside_deviation_daily(&r).is_err());
        assert!(sortino(&r, 252.0).is_err());
    }

    #[test]
    fn sortino_undefined_with_single_loss() {
        // One negative return: the downside subsample has zero variance.
        let r = returns_of(&[0.01, -0.02, 0.005]);
        assert_eq!(downside_deviation_daily(&r).unwrap(), 0.0);
        assert!(matches!(sortino(&r, 252.0), Err(Error::Domain(msg)) if msg.contains("undefined")));
    }

    #[test]
    fn calmar_hand_check() {
        let curve = curve_of(&[100.0, 110.0, 99.0]);
        let cagr = (0.99f64).powf(252.0 / 2.0) - 1.0;
        let md = 1.0 - 99.0 / 110.0;
        assert_relative_eq!(calmar(&curve, 252.0).unwrap(), cagr / md, epsilon = 1e-12);
        assert!(calmar(&curve_of(&[100.0, 101.0, 102.0]), 252.0).is_err());
    }

    #[test]
    fn flat_curve_report() {
        let report = compute_all(&curve_of(&[100.0; 40])).unwrap();
        assert_eq!(report.tr_pct, 0.0);
        assert_eq!(report.md_pct, 0.0);
        assert_eq!(report.tdd_pct, 0.0);
        assert_eq!(report.mcl_days, 0);
        assert_eq!(report.sr, None);
        assert_eq!(report.sortino, None);
        assert_eq!(report.calmar, None);
        assert_eq!(report.ddv_pct, None);
        // Undefined is null in the document, never zero.
        let doc = serde_json::to_value(&report).unwrap();
        assert!(doc["sr"].is_null());
        assert_eq!(doc["tr_pct"], 0.0);
    }

    #[test]
    fn monotone_curve_report() {
        let mut values = vec![100.0];
        for _ in 0..30 {
            values.push(values.last().unwrap() * 1.01);
        }
        let report = compute_all(&curve_of(&values)).unwrap();
        assert_eq!(report.md_pct, 0.0);
        assert_eq!(report.mcl_days, 0);
        assert!(report.cvar95_pct < 0.0);
        assert_eq!(report.calmar, None);
    }

    #[test]
    fn report_serializes_fixed_key_order() {
        let report = compute_all(&curve_of(&[100.0, 101.0, 99.0, 102.0])).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let sr_pos = json.find("\"sr\"").unwrap();
        let tr_pos = json.find("\"tr_pct\"").unwrap();
        let mcl_pos = json.find("\"mcl_days\"").unwrap();
        assert!(sr_pos < tr_pos && tr_pos < mcl_pos);
    }

    #[test]
    fn table_row_formats_two_decimals() {
        let report = compute_all(&curve_of(&[100.0, 101.0, 99.0, 102.0])).unwrap();
        let row = report.table1_row();
        assert_eq!(row.split_whitespace().count(), 6);
        for cell in row.split_whitespace() {
            if cell != "n/a" {
                let decimals = cell.rsplit('.').next().unwrap();
                assert_eq!(decimals.len(), 2, "cell {cell} should have 2 decimals");
            }
        }
    }
}
