//! The four subcommands. Each returns its in-memory results and writes
//! its files under the configured directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Datelike, Months, NaiveDate};
use regime_alloc::allocation::StrategyKind;
use regime_alloc::backtest::{
    self, forecast_return_correlation, write_forecast_correlation_csv, write_metrics_json, BacktestResult,
    ForecastCorrelation, MetricSet,
};
use regime_alloc::market_data::{load_macro_panel, load_return_panel, DateRange};
use regime_alloc::pipeline::{ForecastCache, RegimeEngine, RegimeStage, Universe};
use regime_alloc::synthgen::{generate, SyntheticUniverse};
use regime_alloc::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::{slug, RunConfig, RESOLVED_CONFIG};
use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "strategies.json";
pub const LAMBDA_HISTORY_FILE: &str = "lambda_history.csv";
pub const HALFLIFE_FILE: &str = "halflife.csv";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const CORRELATION_FILE: &str = "forecast_correlation.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const DAILY_DIR: &str = "daily";

/// Strategy name and daily file, in run order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: StrategyKind,
    pub file: String,
}

fn write_resolved(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join(RESOLVED_CONFIG), cfg.resolved()?.to_toml()?)?;
    Ok(())
}

pub struct SimulateOutput {
    pub dir: PathBuf,
    pub data: SyntheticUniverse,
}

impl SimulateOutput {
    pub fn summary(&self) -> String {
        let mut s = format!("wrote {} days x {} assets to {}\n", self.data.panel.len(), self.data.panel.n_assets(), self.dir.display());
        for (j, name) in self.data.panel.assets().iter().enumerate() {
            let states = &self.data.states[j];
            let switches = states.windows(2).filter(|w| w[0] != w[1]).count();
            let bull = self.data.bull_occupancy()[j];
            let _ = writeln!(s, "{name}: bull share {bull:.3}, {switches} regime switches");
        }
        s
    }
}

/// Generate the configured planted-regime universe and write its CSVs.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateOutput, CliError> {
    cfg.validate()?;
    let spec = cfg.simulate.process_spec(cfg.seed);
    let data = generate(&spec)?;
    let dir = cfg.simulate.output_dir.clone();
    data.write_all(&dir)?;
    write_resolved(cfg)?;
    Ok(SimulateOutput { dir, data })
}

/// Loaded data and the effective out-of-sample window.
pub struct Inputs {
    pub universe: Universe,
    pub testing: DateRange,
}

/// First month start at least `years` after `first`.
pub fn default_testing_start(first: NaiveDate, years: u32) -> NaiveDate {
    let d = first
        .checked_add_months(Months::new(12 * years))
        .expect("date in range");
    if d.day() == 1 {
        d
    } else {
        let next = d.checked_add_months(Months::new(1)).expect("date in range");
        NaiveDate::from_ymd_opt(next.year(), next.month(), 1).expect("valid date")
    }
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let d = &cfg.data;
    let mut panel = load_return_panel(&d.returns, &d.ingest_options())?;
    if !d.assets.is_empty() {
        panel = panel.select_assets(&d.assets)?;
    }
    let macro_panel = load_macro_panel(&d.macro_path)?;
    let specs = cfg.strategy_specs()?;
    let referenced = cfg
        .regime
        .exclude_dd
        .iter()
        .chain(cfg.regime.smoothing_halflife.keys())
        .chain(specs.iter().filter_map(|s| s.asset.as_ref()));
    for a in referenced {
        if panel.asset_index(a).is_none() {
            return Err(CliError::Config(format!("asset {a:?} is not in the data")));
        }
    }
    let universe = Universe::new(panel, &macro_panel, &cfg.regime.exclude_dd)?;
    let dates = universe.dates();
    let (first, last) = (dates[0], dates[dates.len() - 1]);
    let s = &cfg.schedule;
    let start = s
        .testing_start
        .unwrap_or_else(|| default_testing_start(first, s.training_years + s.validation_years));
    let end = s.testing_end.unwrap_or(last + chrono::Duration::days(1));
    if start > last {
        return Err(regime_alloc::Error::InsufficientHistory {
            message: format!("testing window starts {start}, after the last observation {last}"),
            shortfall_days: (start - last).num_days(),
        }
        .into());
    }
    let testing = DateRange::new(start, end)?;
    Ok(Inputs { universe, testing })
}

/// Config with the data-dependent testing window filled in.
fn with_window(cfg: &RunConfig, testing: DateRange) -> RunConfig {
    let mut c = cfg.clone();
    c.schedule.testing_start = Some(testing.start);
    c.schedule.testing_end = Some(testing.end);
    c
}

fn run_regimes(cfg: &RunConfig, inputs: &Inputs) -> Result<RegimeStage, CliError> {
    let cache = match &cfg.cache_dir {
        Some(dir) => ForecastCache::with_dir(dir),
        None => ForecastCache::in_memory(),
    };
    let engine = RegimeEngine::new(&inputs.universe, cfg.pipeline_config(), inputs.testing.start, &cache)?;
    let started = Instant::now();
    let stage = engine.run_regime_stage(inputs.universe.asset_names(), inputs.testing)?;
    log::info!(
        "regime stage: {} assets, {} block forecasts, {:.2?}",
        stage.assets.len(),
        cache.len(),
        started.elapsed()
    );
    Ok(stage)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `asset,refit_date,lambda,validation_sharpe,chosen`, one row per grid point.
pub fn write_lambda_history(path: &Path, stage: &RegimeStage) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut rows = vec![["asset", "refit_date", "lambda", "validation_sharpe", "chosen"].map(String::from)];
    for a in &stage.assets {
        for sel in &a.selections {
            for (l, s) in sel.grid.iter().zip(&sel.sharpe) {
                rows.push([
                    a.asset.clone(),
                    sel.refit_date.to_string(),
                    l.to_string(),
                    opt(*s),
                    (*l == sel.chosen).to_string(),
                ]);
            }
        }
    }
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `asset,halflife,validation_sharpe,chosen`.
pub fn write_halflives(path: &Path, stage: &RegimeStage) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["asset", "halflife", "validation_sharpe", "chosen"])?;
    for a in &stage.assets {
        let scores = if a.halflife_scores.is_empty() {
            vec![(a.smoothing_halflife, None)]
        } else {
            a.halflife_scores.clone()
        };
        for (h, s) in scores {
            w.write_record([
                a.asset.clone(),
                h.to_string(),
                opt(s),
                (h == a.smoothing_halflife).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format: `date,asset,lambda,raw_prob,smoothed_prob,bullish`.
pub fn write_forecasts(path: &Path, stage: &RegimeStage) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "asset", "lambda", "raw_prob", "smoothed_prob", "bullish"])?;
    for a in &stage.assets {
        let s = &a.series;
        for i in 0..s.dates.len() {
            w.write_record([
                s.dates[i].to_string(),
                a.asset.clone(),
                s.lambda_used[i].to_string(),
                s.raw_prob[i].to_string(),
                s.smoothed_prob[i].to_string(),
                u8::from(s.forecast[i]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_stage(dir: &Path, stage: &RegimeStage) -> Result<(), CliError> {
    write_lambda_history(&dir.join(LAMBDA_HISTORY_FILE), stage)?;
    write_halflives(&dir.join(HALFLIFE_FILE), stage)?;
    write_forecasts(&dir.join(FORECASTS_FILE), stage)
}

pub struct TuneOutput {
    pub testing: DateRange,
    pub stage: RegimeStage,
}

impl TuneOutput {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for a in &self.stage.assets {
            let lambdas: Vec<String> = a.selections.iter().map(|x| format!("{}", x.chosen)).collect();
            let _ = writeln!(
                s,
                "{}: smoothing halflife {}, lambda by refit [{}]",
                a.asset,
                a.smoothing_halflife,
                lambdas.join(", ")
            );
        }
        s
    }
}

/// Select jump penalties and smoothing halflives over the testing window.
pub fn tune(cfg: &RunConfig) -> Result<TuneOutput, CliError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let stage = run_regimes(cfg, &inputs)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_stage(&cfg.output_dir, &stage)?;
    write_resolved(&with_window(cfg, inputs.testing))?;
    Ok(TuneOutput {
        testing: inputs.testing,
        stage,
    })
}

pub struct BacktestOutput {
    pub testing: DateRange,
    pub stage: Option<RegimeStage>,
    pub results: Vec<BacktestResult>,
    pub correlations: Vec<(String, ForecastCorrelation)>,
}

impl BacktestOutput {
    pub fn metrics(&self) -> Vec<(String, MetricSet)> {
        self.results.iter().map(|r| (r.strategy.clone(), r.metrics.clone())).collect()
    }

    pub fn result(&self, name: &str) -> Option<&BacktestResult> {
        self.results.iter().find(|r| r.strategy == name)
    }
}

/// Realized excess returns over the rows of a backtest.
fn realized_excess(universe: &Universe, result: &BacktestResult) -> Result<Matrix, CliError> {
    let rows = DateRange::new(result.dates[0], *result.dates.last().expect("non-empty") + chrono::Duration::days(1))?
        .index_range(universe.dates());
    let panel = universe.panel();
    let mut data = Vec::with_capacity(rows.len() * panel.n_assets());
    for t in rows.clone() {
        data.extend(panel.excess_row(t));
    }
    Ok(Matrix::from_vec(rows.len(), panel.n_assets(), data)?)
}

/// Run every configured strategy (plus sensitivity variants) and write
/// metrics, daily records and forecast correlations.
pub fn backtest(cfg: &RunConfig) -> Result<BacktestOutput, CliError> {
    cfg.validate()?;
    let specs = cfg.all_strategy_specs()?;
    let inputs = load_inputs(cfg)?;
    let n = inputs.universe.panel().n_assets();
    for s in &specs {
        s.validate(n).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let stage = if specs.iter().any(|s| s.kind.uses_regimes()) {
        Some(run_regimes(cfg, &inputs)?)
    } else {
        None
    };

    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        let started = Instant::now();
        let r = backtest::run(spec, inputs.universe.panel(), stage.as_ref(), inputs.testing, cfg.cost)?;
        log::info!("{}: {} days, {:.2?}", spec.name, r.dates.len(), started.elapsed());
        results.push(r);
    }

    let mut correlations = Vec::new();
    for r in &results {
        let kind = specs.iter().find(|s| s.name == r.strategy).map(|s| s.kind);
        if let (Some(StrategyKind::Mv | StrategyKind::MvRegime), Some(mu)) = (kind, &r.mu) {
            let realized = realized_excess(&inputs.universe, r)?;
            correlations.push((r.strategy.clone(), forecast_return_correlation(&r.assets, mu, &realized)?));
        }
    }

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out.join(DAILY_DIR))?;
    let mut manifest = Vec::new();
    for (spec, r) in specs.iter().zip(&results) {
        let file = format!("{DAILY_DIR}/{}.csv", slug(&spec.name));
        r.write_daily_csv(&out.join(&file))?;
        manifest.push(ManifestEntry {
            name: spec.name.clone(),
            kind: spec.kind,
            file,
        });
    }
    let output = BacktestOutput {
        testing: inputs.testing,
        stage,
        results,
        correlations,
    };
    std::fs::write(
        out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    write_metrics_json(&out.join(METRICS_FILE), &output.metrics())?;
    write_forecast_correlation_csv(&out.join(CORRELATION_FILE), &output.correlations)?;
    if let Some(stage) = &output.stage {
        write_stage(out, stage)?;
    }
    write_resolved(&with_window(cfg, inputs.testing))?;
    Ok(output)
}

/// Strategy list of a finished backtest.
pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| regime_alloc::Error::from(e).context(format!("reading {}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

const REPORT_ROWS: [&str; 8] = [
    "Return",
    "Volatility",
    "Sharpe",
    "Sortino",
    "MDD",
    "Calmar",
    "Turnover",
    "Leverage",
];

fn report_values(m: &MetricSet) -> [Option<f64>; 8] {
    [
        Some(m.ann_excess_return),
        m.ann_excess_volatility,
        m.sharpe,
        m.sortino,
        Some(m.mdd),
        m.calmar,
        Some(m.ann_turnover),
        Some(m.avg_leverage),
    ]
}

pub struct ReportOutput {
    pub metrics: Vec<(String, MetricSet)>,
}

impl ReportOutput {
    /// Metrics as a fixed-width table, one column per strategy.
    pub fn table(&self) -> String {
        let width = self.metrics.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8) + 2;
        let mut s = format!("{:<12}", "");
        for (name, _) in &self.metrics {
            let _ = write!(s, "{name:>width$}");
        }
        s.push('\n');
        for (i, row) in REPORT_ROWS.iter().enumerate() {
            let _ = write!(s, "{row:<12}");
            for (_, m) in &self.metrics {
                let cell = match report_values(m)[i] {
                    None => "-".to_string(),
                    Some(v) if matches!(i, 0 | 1 | 4) => format!("{:.1}%", 100.0 * v),
                    Some(v) => format!("{v:.2}"),
                };
                let _ = write!(s, "{cell:>width$}");
            }
            s.push('\n');
        }
        s
    }
}

/// Recompute metrics from the stored daily files of a finished backtest
/// and write them as `report.csv`.
pub fn report(cfg: &RunConfig) -> Result<ReportOutput, CliError> {
    let dir = &cfg.output_dir;
    let manifest = read_manifest(dir)?;
    let mut metrics = Vec::with_capacity(manifest.len());
    for e in &manifest {
        let r = BacktestResult::read_daily_csv(&dir.join(&e.file), &e.name)?;
        metrics.push((e.name.clone(), r.metrics));
    }
    let mut w = csv::Writer::from_path(dir.join(REPORT_FILE))?;
    let mut header = vec!["metric".to_string()];
    header.extend(metrics.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (i, row) in REPORT_ROWS.iter().enumerate() {
        let mut rec = vec![row.to_string()];
        rec.extend(metrics.iter().map(|(_, m)| opt(report_values(m)[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(ReportOutput { metrics })
}
