//! Experiment orchestration: single runs, the ablation grid, and the
//! reference baselines, each emitting report files atomically plus a
//! manifest that ties outputs to the exact inputs that produced them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{resolved_map, AppConfig};
use crate::engine::{
    run_backtest, run_baseline, BacktestConfig, BaselineKind, BaselineResult, ControllerMode,
    DailyRecord, RunResult,
};
use crate::error::{Error, Result};
use crate::market::PriceSeries;
use crate::metrics::{MetricsReport, TABLE1_HEADER};

pub const CODE_VERSION: &str = concat!("hedgeloop ", env!("CARGO_PKG_VERSION"));

/// Everything needed to reproduce a run byte-for-byte: resolved config,
/// code version, seed, and content digests of the input series. Output
/// paths are file names relative to the manifest's own directory, so the
/// document is independent of where the run happened to be written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub code_version: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Digest of each series in its canonical CSV form, keyed by symbol.
pub fn input_digests(series: &[PriceSeries]) -> BTreeMap<String, String> {
    series
        .iter()
        .map(|s| (s.symbol().to_string(), sha256_hex(s.to_csv_string().as_bytes())))
        .collect()
}

/// Writes through a temp file in the same directory and renames into
/// place, so a crash mid-write never leaves a partial output.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
    Ok(path)
}

fn records_jsonl(records: &[DailyRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EPISODES_FILE: &str = "episodes.jsonl";

#[derive(Debug)]
pub struct RunArtifacts {
    pub result: RunResult,
    pub manifest: RunManifest,
    pub files: Vec<PathBuf>,
}

/// Loads the data, runs the backtest, and writes records, metrics, and
/// manifest (plus the episode export when enabled) into `out_dir`.
pub fn execute_run(cfg: &AppConfig, base_dir: &Path, out_dir: &Path) -> Result<RunArtifacts> {
    let series = cfg.data.load_series(base_dir)?;
    let result = run_backtest(&cfg.backtest, &series)?;

    let mut outputs = BTreeMap::new();
    outputs.insert("records".to_string(), RECORDS_FILE.to_string());
    outputs.insert("metrics".to_string(), METRICS_FILE.to_string());
    outputs.insert("manifest".to_string(), MANIFEST_FILE.to_string());
    if cfg.export_buffer {
        outputs.insert("episodes".to_string(), EPISODES_FILE.to_string());
    }
    let manifest = RunManifest {
        run_id: cfg.backtest.run_id.clone(),
        code_version: CODE_VERSION.to_string(),
        seed: cfg.backtest.seed,
        config: resolved_map(cfg),
        input_digests: input_digests(&series),
        outputs,
    };

    let mut files = Vec::new();
    files.push(write_atomic(out_dir, RECORDS_FILE, &records_jsonl(&result.records)?)?);
    files.push(write_atomic(out_dir, METRICS_FILE, &pretty_json(&result.report)?)?);
    if cfg.export_buffer {
        let mut buf = Vec::new();
        result.buffer.export_jsonl(&mut buf)?;
        files.push(write_atomic(out_dir, EPISODES_FILE, &buf)?);
    }
    // The manifest lands last: its presence marks the run complete.
    files.push(write_atomic(out_dir, MANIFEST_FILE, &pretty_json(&manifest)?)?);
    Ok(RunArtifacts { result, manifest, files })
}

/// Dry-run check: the data must load and the windows must resolve, but
/// nothing is written.
pub fn preflight(cfg: &AppConfig, base_dir: &Path) -> Result<()> {
    cfg.backtest.validate()?;
    let series = cfg.data.load_series(base_dir)?;
    if series.is_empty() {
        return Err(Error::Config("no input series".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationCell {
    Full,
    ReducedController,
    Stochastic,
    NoMemory,
}

impl AblationCell {
    /// Comparison-table row order.
    pub const ALL: [AblationCell; 4] =
        [AblationCell::Full, AblationCell::ReducedController, AblationCell::Stochastic, AblationCell::NoMemory];

    pub fn label(self) -> &'static str {
        match self {
            AblationCell::Full => "full",
            AblationCell::ReducedController => "reduced_controller",
            AblationCell::Stochastic => "stochastic",
            AblationCell::NoMemory => "no_memory",
        }
    }

    /// Applies this cell's deviation from the configured run. The reduced
    /// cell stands in for a lower-capacity controller: single-episode
    /// retrieval and no regime priors.
    pub fn apply(self, base: &BacktestConfig, temperature: f64) -> BacktestConfig {
        let mut cfg = base.clone();
        match self {
            AblationCell::Full => {}
            AblationCell::NoMemory => cfg.memory_enabled = false,
            AblationCell::Stochastic => {
                cfg.controller = ControllerMode::Stochastic;
                cfg.temperature = temperature;
            }
            AblationCell::ReducedController => {
                cfg.retrieval_k = 1;
                cfg.heuristic.use_priors = false;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRun {
    pub cell: String,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Per-cell medians of the comparison-table metrics across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub median_sr: Option<f64>,
    pub median_tr_pct: Option<f64>,
    pub median_md_pct: Option<f64>,
    pub median_cvar95_pct: Option<f64>,
    pub median_wm_pct: Option<f64>,
    pub median_ddv_pct: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSummary {
    pub seeds: Vec<u64>,
    pub stochastic_temperature: f64,
    pub cells: Vec<CellSummary>,
    /// Whether median MD(full) < median MD(no_memory).
    pub memory_md_direction_confirmed: bool,
    /// Whether median SR(full) > median SR(no_memory).
    pub memory_sr_direction_confirmed: bool,
    pub runs: Vec<AblationRun>,
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        Some(values[n / 2])
    } else {
        Some(0.5 * (values[n / 2 - 1] + values[n / 2]))
    }
}

fn summarize_cell(label: &str, reports: &[&MetricsReport]) -> CellSummary {
    CellSummary {
        cell: label.to_string(),
        median_sr: median(reports.iter().filter_map(|r| r.sr).collect()),
        median_tr_pct: median(reports.iter().map(|r| r.tr_pct).collect()),
        median_md_pct: median(reports.iter().map(|r| r.md_pct).collect()),
        median_cvar95_pct: median(reports.iter().map(|r| r.cvar95_pct).collect()),
        median_wm_pct: median(reports.iter().map(|r| r.wm_pct).collect()),
        median_ddv_pct: median(reports.iter().filter_map(|r| r.ddv_pct).collect()),
    }
}

/// One ablation job: a grid cell at one seed. The seed drives both the
/// synthetic path and any controller noise, so cells at the same seed see
/// the same market and differ only in architecture.
fn ablation_cfg(base: &AppConfig, cell: AblationCell, seed: u64) -> AppConfig {
    let mut cfg = base.clone();
    cfg.backtest = cell.apply(&base.backtest, base.ablate.temperature);
    cfg.backtest.seed = seed;
    cfg.backtest.run_id = format!("{}_{}_s{}", base.backtest.run_id, cell.label(), seed);
    cfg.data.seed = seed;
    cfg.export_buffer = false;
    cfg
}

#[derive(Debug)]
pub struct AblationArtifacts {
    pub summary: AblationSummary,
    pub files: Vec<PathBuf>,
}

pub const ABLATION_FILE: &str = "ablation.json";

/// Runs the full grid in parallel, one output directory per cell and
/// seed, then reduces to a single comparison summary on one thread.
pub fn execute_ablation(cfg: &AppConfig, base_dir: &Path, out_dir: &Path) -> Result<AblationArtifacts> {
    let jobs: Vec<(usize, AblationCell, u64)> = AblationCell::ALL
        .iter()
        .enumerate()
        .flat_map(|(i, cell)| cfg.ablate.seeds.iter().map(move |s| (i, *cell, *s)))
        .collect();

    let mut done: Vec<(usize, u64, AblationRun, Vec<PathBuf>)> = jobs
        .par_iter()
        .map(|&(order, cell, seed)| {
            let run_cfg = ablation_cfg(cfg, cell, seed);
            let cell_dir = out_dir.join(cell.label()).join(format!("seed_{seed}"));
            let artifacts = execute_run(&run_cfg, base_dir, &cell_dir)?;
            let run =
                AblationRun { cell: cell.label().to_string(), seed, metrics: artifacts.result.report };
            Ok((order, seed, run, artifacts.files))
        })
        .collect::<Result<_>>()?;
    done.sort_by_key(|(order, seed, _, _)| (*order, *seed));

    let mut files = Vec::new();
    let mut runs = Vec::new();
    for (_, _, run, run_files) in done {
        runs.push(run);
        files.extend(run_files);
    }
    let cells: Vec<CellSummary> = AblationCell::ALL
        .iter()
        .map(|cell| {
            let reports: Vec<&MetricsReport> =
                runs.iter().filter(|r| r.cell == cell.label()).map(|r| &r.metrics).collect();
            summarize_cell(cell.label(), &reports)
        })
        .collect();

    let md = |label: &str| cells.iter().find(|c| c.cell == label).and_then(|c| c.median_md_pct);
    let sr = |label: &str| cells.iter().find(|c| c.cell == label).and_then(|c| c.median_sr);
    let memory_md_direction_confirmed = matches!((md("full"), md("no_memory")), (Some(a), Some(b)) if a < b);
    let memory_sr_direction_confirmed = matches!((sr("full"), sr("no_memory")), (Some(a), Some(b)) if a > b);

    let summary = AblationSummary {
        seeds: cfg.ablate.seeds.clone(),
        stochastic_temperature: cfg.ablate.temperature,
        cells,
        memory_md_direction_confirmed,
        memory_sr_direction_confirmed,
        runs,
    };
    files.push(write_atomic(out_dir, ABLATION_FILE, &pretty_json(&summary)?)?);
    Ok(AblationArtifacts { summary, files })
}

#[derive(Debug)]
pub struct BaselineArtifacts {
    pub results: Vec<BaselineResult>,
    pub files: Vec<PathBuf>,
}

/// Runs both reference strategies over the configured data and writes
/// each one's records and metrics under its own subdirectory.
pub fn execute_baselines(cfg: &AppConfig, base_dir: &Path, out_dir: &Path) -> Result<BaselineArtifacts> {
    let series = cfg.data.load_series(base_dir)?;
    let mut results = Vec::new();
    let mut files = Vec::new();
    let mut outputs = BTreeMap::new();
    for kind in [BaselineKind::BuyAndHold, BaselineKind::EqualWeight] {
        let result = run_baseline(kind, &cfg.backtest, &series)?;
        let dir = out_dir.join(kind.as_str());
        let mut records = Vec::new();
        for record in &result.records {
            serde_json::to_writer(&mut records, record)?;
            records.push(b'\n');
        }
        files.push(write_atomic(&dir, RECORDS_FILE, &records)?);
        files.push(write_atomic(&dir, METRICS_FILE, &pretty_json(&result.report)?)?);
        outputs.insert(format!("{}_records", kind.as_str()), format!("{}/{RECORDS_FILE}", kind.as_str()));
        outputs.insert(format!("{}_metrics", kind.as_str()), format!("{}/{METRICS_FILE}", kind.as_str()));
        results.push(result);
    }
    let manifest = RunManifest {
        run_id: format!("{}_baselines", cfg.backtest.run_id),
        code_version: CODE_VERSION.to_string(),
        seed: cfg.backtest.seed,
        config: resolved_map(cfg),
        input_digests: input_digests(&series),
        outputs,
    };
    files.push(write_atomic(out_dir, MANIFEST_FILE, &pretty_json(&manifest)?)?);
    Ok(BaselineArtifacts { results, files })
}

const NAME_COL: usize = 20;

pub fn table_header() -> String {
    format!("{:<NAME_COL$} {}", "configuration", TABLE1_HEADER)
}

pub fn table_line(name: &str, report: &MetricsReport) -> String {
    format!("{name:<NAME_COL$} {}", report.table1_row())
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "n/a".into(),
    }
}

/// The combined comparison table plus a line stating whether the memory
/// ablation moved median drawdown and Sharpe in the expected direction.
pub fn format_ablation_table(summary: &AblationSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "ablation over {} seeds, stochastic temperature {}\n",
        summary.seeds.len(),
        summary.stochastic_temperature
    ));
    out.push_str(&table_header());
    out.push('\n');
    for c in &summary.cells {
        out.push_str(&format!(
            "{:<NAME_COL$} {} {} {} {} {} {}\n",
            c.cell,
            cell(c.median_sr),
            cell(c.median_tr_pct),
            cell(c.median_md_pct),
            cell(c.median_cvar95_pct),
            cell(c.median_wm_pct),
            cell(c.median_ddv_pct),
        ));
    }
    out.push_str(&format!(
        "memory ablation direction (median MD full < no_memory): {}\n",
        if summary.memory_md_direction_confirmed { "confirmed" } else { "NOT confirmed" }
    ));
    out.push_str(&format!(
        "memory ablation direction (median SR full > no_memory): {}\n",
        if summary.memory_sr_direction_confirmed { "confirmed" } else { "NOT confirmed" }
    ));
    out
}

pub fn format_baselines_table(results: &[BaselineResult]) -> String {
    let mut out = table_header();
    out.push('\n');
    for r in results {
        out.push_str(&table_line(&r.name, &r.report));
        out.push('\n');
    }
    out
}
