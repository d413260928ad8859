//! Dated return and macro panels, CSV ingestion, and the exponentially
//! weighted / rolling estimators every later stage is built on.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Trading days per year, used for rate conversion and annualization.
pub const TRADING_DAYS: f64 = 252.0;

/// Ridge added to the diagonal of every covariance estimate.
pub const COVARIANCE_RIDGE: f64 = 1e-10;

/// Half-open date interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid(format!("empty date range {start}..{end}")));
        }
        Ok(DateRange { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d < self.end
    }

    /// Index range of `dates` (sorted) falling inside the interval.
    pub fn index_range(&self, dates: &[NaiveDate]) -> std::ops::Range<usize> {
        let lo = dates.partition_point(|d| *d < self.start);
        let hi = dates.partition_point(|d| *d < self.end);
        lo..hi
    }
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::data(format!(
                "dates must be strictly increasing: {} followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Aligned panel of per-asset simple daily returns and the risk-free return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    /// `T × N`, row per date.
    returns: Matrix,
    risk_free: Vec<f64>,
}

impl ReturnPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        returns: Matrix,
        risk_free: Vec<f64>,
    ) -> Result<Self> {
        check_dates(&dates)?;
        if returns.rows() != dates.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                found: returns.rows(),
            });
        }
        if risk_free.len() != dates.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                found: risk_free.len(),
            });
        }
        if returns.cols() != assets.len() || assets.is_empty() {
            return Err(Error::invalid(format!(
                "{} asset names for {} return columns",
                assets.len(),
                returns.cols()
            )));
        }
        for (i, row) in returns.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|r| !r.is_finite() || *r <= -1.0) {
                return Err(Error::data(format!(
                    "return of {} on {} is {} (must be finite and > -1)",
                    assets[j], dates[i], row[j]
                )));
            }
        }
        if let Some(i) = risk_free.iter().position(|r| !r.is_finite() || *r <= -1.0) {
            return Err(Error::data(format!("invalid risk-free return on {}", dates[i])));
        }
        Ok(ReturnPanel {
            dates,
            assets,
            returns,
            risk_free,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn returns(&self) -> &Matrix {
        &self.returns
    }

    pub fn risk_free(&self) -> &[f64] {
        &self.risk_free
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == name)
    }

    pub fn asset_returns(&self, j: usize) -> Vec<f64> {
        self.returns.column(j)
    }

    pub fn excess_returns(&self, j: usize) -> Vec<f64> {
        self.returns
            .iter_rows()
            .zip(&self.risk_free)
            .map(|(r, rf)| r[j] - rf)
            .collect()
    }

    /// Excess-return row for date index `t`.
    pub fn excess_row(&self, t: usize) -> Vec<f64> {
        let rf = self.risk_free[t];
        self.returns.row(t).iter().map(|r| r - rf).collect()
    }

    /// Panel restricted to dates `<= last`.
    pub fn truncate_through(&self, last: NaiveDate) -> ReturnPanel {
        let n = self.dates.partition_point(|d| *d <= last);
        self.slice(0, n)
    }

    pub fn slice(&self, start: usize, end: usize) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.clone(),
            returns: self.returns.slice_rows(start, end),
            risk_free: self.risk_free[start..end].to_vec(),
        }
    }

    /// Keep only the named assets, in the given order.
    pub fn select_assets(&self, names: &[String]) -> Result<ReturnPanel> {
        let idx = names
            .iter()
            .map(|n| {
                self.asset_index(n)
                    .ok_or_else(|| Error::invalid(format!("unknown asset {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReturnPanel {
            dates: self.dates.clone(),
            assets: names.to_vec(),
            returns: self.returns.select_columns(&idx),
            risk_free: self.risk_free.clone(),
        })
    }

    /// Write `date,<asset>...` simple returns.
    pub fn write_returns_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(self.returns.iter_rows()) {
            let mut rec = vec![d.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Source series for the cross-asset macro features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPanel {
    pub dates: Vec<NaiveDate>,
    /// 2-year constant-maturity yield, percent.
    pub yield_2y: Vec<f64>,
    /// 10-year minus 2-year yield, percent.
    pub yield_slope_10y_2y: Vec<f64>,
    pub vix_level: Vec<f64>,
    pub stock_returns: Vec<f64>,
    pub bond_returns: Vec<f64>,
}

impl MacroPanel {
    pub const COLUMNS: [&'static str; 5] = [
        "yield_2y",
        "yield_slope_10y_2y",
        "vix_level",
        "stock_returns",
        "bond_returns",
    ];

    pub fn validate(&self) -> Result<()> {
        check_dates(&self.dates)?;
        let n = self.dates.len();
        for s in self.series() {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: s.len(),
                });
            }
        }
        if let Some(i) = self.vix_level.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::data(format!(
                "VIX level must be positive, found {} on {}",
                self.vix_level[i], self.dates[i]
            )));
        }
        Ok(())
    }

    fn series(&self) -> [&Vec<f64>; 5] {
        [
            &self.yield_2y,
            &self.yield_slope_10y_2y,
            &self.vix_level,
            &self.stock_returns,
            &self.bond_returns,
        ]
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Restrict to exactly `dates`; every requested date must be present.
    pub fn align_to(&self, dates: &[NaiveDate]) -> Result<MacroPanel> {
        let pos: HashMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let idx = dates
            .iter()
            .map(|d| {
                pos.get(d)
                    .copied()
                    .ok_or_else(|| Error::data(format!("macro data missing for {d}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let pick = |s: &Vec<f64>| idx.iter().map(|&i| s[i]).collect::<Vec<_>>();
        Ok(MacroPanel {
            dates: dates.to_vec(),
            yield_2y: pick(&self.yield_2y),
            yield_slope_10y_2y: pick(&self.yield_slope_10y_2y),
            vix_level: pick(&self.vix_level),
            stock_returns: pick(&self.stock_returns),
            bond_returns: pick(&self.bond_returns),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date"];
        header.extend(Self::COLUMNS);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.dates[i].to_string()];
            rec.extend(self.series().iter().map(|s| s[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How numeric cells of a price file are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// Total-return index levels.
    Levels,
    /// Simple period returns.
    #[default]
    Returns,
}

/// Units of the risk-free column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnits {
    /// Annualized yield in percent (e.g. `2.5` for 2.5%).
    #[default]
    AnnualPercent,
    /// Annualized yield as a decimal fraction.
    AnnualDecimal,
    /// Already a simple per-day return.
    DailyReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub kind: ValueKind,
    /// Name of the risk-free column, either in the main file or in `risk_free_path`.
    pub risk_free_column: String,
    pub risk_free_path: Option<PathBuf>,
    pub risk_free_units: RateUnits,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            kind: ValueKind::Returns,
            risk_free_column: "risk_free".into(),
            risk_free_path: None,
            risk_free_units: RateUnits::AnnualPercent,
        }
    }
}

/// Per-day simple return equivalent to an annualized yield under daily
/// compounding over [`TRADING_DAYS`] periods.
pub fn annual_to_daily(yield_decimal: f64) -> f64 {
    (1.0 + yield_decimal).powf(1.0 / TRADING_DAYS) - 1.0
}

/// Inverse of [`annual_to_daily`].
pub fn daily_to_annual(daily: f64) -> f64 {
    (1.0 + daily).powf(TRADING_DAYS) - 1.0
}

fn convert_rate(v: f64, units: RateUnits) -> f64 {
    match units {
        RateUnits::AnnualPercent => annual_to_daily(v / 100.0),
        RateUnits::AnnualDecimal => annual_to_daily(v),
        RateUnits::DailyReturn => v,
    }
}

/// A raw dated table: `date` column plus named numeric columns with holes.
struct DatedTable {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    cells: Vec<Vec<Option<f64>>>,
}

fn is_missing(s: &str) -> bool {
    matches!(
        s.trim(),
        "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL" | "#N/A"
    )
}

fn read_dated_table(path: &Path) -> Result<DatedTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::to_ascii_lowercase).as_deref() != Some("date") {
        return Err(Error::data(format!(
            "{}: first column must be `date`",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw_date = rec.get(0).unwrap_or_default();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| {
            Error::data(format!(
                "{}: row {}: bad date {raw_date:?}",
                path.display(),
                line + 2
            ))
        })?;
        let mut row = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let s = rec.get(j + 1).unwrap_or("");
            if is_missing(s) {
                row.push(None);
            } else {
                let v: f64 = s.parse().map_err(|_| {
                    Error::data(format!(
                        "{}: {date}: non-numeric value {s:?} in column {name}",
                        path.display()
                    ))
                })?;
                if !v.is_finite() {
                    row.push(None);
                } else {
                    row.push(Some(v));
                }
            }
        }
        dates.push(date);
        cells.push(row);
    }
    check_dates(&dates).map_err(|e| e.context(path.display()))?;
    Ok(DatedTable {
        dates,
        names,
        cells,
    })
}

impl DatedTable {
    fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Drop leading rows with any hole in `cols`; any later hole is an error.
    fn leading_complete_start(&self, cols: &[usize], what: &str) -> Result<usize> {
        let start = self
            .cells
            .iter()
            .position(|r| cols.iter().all(|&j| r[j].is_some()))
            .ok_or_else(|| Error::data(format!("{what}: no complete rows")))?;
        for (i, r) in self.cells.iter().enumerate().skip(start) {
            if let Some(&j) = cols.iter().find(|&&j| r[j].is_none()) {
                return Err(Error::data(format!(
                    "{what}: missing value for {} on {} (interior gaps are not imputed)",
                    self.names[j], self.dates[i]
                )));
            }
        }
        Ok(start)
    }
}

/// Load a dated CSV of levels or returns into a [`ReturnPanel`].
pub fn load_return_panel(path: &Path, opts: &IngestOptions) -> Result<ReturnPanel> {
    let table = read_dated_table(path)?;
    if table.dates.len() < 2 {
        return Err(Error::data(format!(
            "{}: need at least 2 rows, found {}",
            path.display(),
            table.dates.len()
        )));
    }

    let rf_in_main = opts.risk_free_path.is_none();
    let asset_cols: Vec<usize> = (0..table.names.len())
        .filter(|&j| !(rf_in_main && table.names[j] == opts.risk_free_column))
        .collect();
    if asset_cols.is_empty() {
        return Err(Error::data(format!("{}: no asset columns", path.display())));
    }

    // Risk-free values keyed by row of the main table.
    let rf_by_row: Vec<Option<f64>> = match &opts.risk_free_path {
        None => {
            let j = table.column_index(&opts.risk_free_column).ok_or_else(|| {
                Error::data(format!(
                    "{}: risk-free column {:?} not found",
                    path.display(),
                    opts.risk_free_column
                ))
            })?;
            table.cells.iter().map(|r| r[j]).collect()
        }
        Some(rf_path) => {
            let rf = read_dated_table(rf_path)?;
            let j = rf
                .column_index(&opts.risk_free_column)
                .or(if rf.names.len() == 1 { Some(0) } else { None })
                .ok_or_else(|| {
                    Error::data(format!(
                        "{}: risk-free column {:?} not found",
                        rf_path.display(),
                        opts.risk_free_column
                    ))
                })?;
            let by_date: HashMap<NaiveDate, Option<f64>> = rf
                .dates
                .iter()
                .zip(&rf.cells)
                .map(|(d, r)| (*d, r[j]))
                .collect();
            table
                .dates
                .iter()
                .map(|d| by_date.get(d).copied().flatten())
                .collect()
        }
    };

    let start = table.leading_complete_start(&asset_cols, &path.display().to_string())?;
    let rf_start = rf_by_row
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| Error::data("risk-free series has no values"))?;
    let start = start.max(rf_start);
    if let Some(i) = (start..table.dates.len()).find(|&i| rf_by_row[i].is_none()) {
        return Err(Error::data(format!(
            "missing risk-free value on {}",
            table.dates[i]
        )));
    }
    if table.dates.len() - start < 2 {
        return Err(Error::data("fewer than 2 complete rows after trimming"));
    }

    let assets: Vec<String> = asset_cols.iter().map(|&j| table.names[j].clone()).collect();
    let value = |i: usize, j: usize| table.cells[i][j].expect("checked complete");
    let rf = |i: usize| convert_rate(rf_by_row[i].expect("checked complete"), opts.risk_free_units);

    let (first, mut data) = match opts.kind {
        ValueKind::Returns => (start, Vec::new()),
        ValueKind::Levels => (start + 1, Vec::new()),
    };
    let mut dates = Vec::new();
    let mut risk_free = Vec::new();
    for i in first..table.dates.len() {
        for &j in &asset_cols {
            let r = match opts.kind {
                ValueKind::Returns => value(i, j),
                ValueKind::Levels => {
                    let prev = value(i - 1, j);
                    if !(prev > 0.0) {
                        return Err(Error::data(format!(
                            "non-positive level for {} on {}",
                            table.names[j],
                            table.dates[i - 1]
                        )));
                    }
                    value(i, j) / prev - 1.0
                }
            };
            data.push(r);
        }
        dates.push(table.dates[i]);
        risk_free.push(rf(i));
    }
    let returns = Matrix::from_vec(dates.len(), assets.len(), data)?;
    ReturnPanel::new(dates, assets, returns, risk_free)
}

/// Load the macro source series; columns are matched by name.
pub fn load_macro_panel(path: &Path) -> Result<MacroPanel> {
    let table = read_dated_table(path)?;
    let cols = MacroPanel::COLUMNS
        .iter()
        .map(|c| {
            table
                .column_index(c)
                .ok_or_else(|| Error::data(format!("{}: missing column {c}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let start = table.leading_complete_start(&cols, &path.display().to_string())?;
    let col = |k: usize| -> Vec<f64> {
        table.cells[start..]
            .iter()
            .map(|r| r[cols[k]].expect("checked complete"))
            .collect()
    };
    let panel = MacroPanel {
        dates: table.dates[start..].to_vec(),
        yield_2y: col(0),
        yield_slope_10y_2y: col(1),
        vix_level: col(2),
        stock_returns: col(3),
        bond_returns: col(4),
    };
    panel.validate()?;
    Ok(panel)
}

/// Write a single-column annualized-percent risk-free file.
pub fn write_risk_free_csv(path: &Path, dates: &[NaiveDate], annual_percent: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "risk_free"])?;
    for (d, v) in dates.iter().zip(annual_percent) {
        w.write_record([d.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step decay `1 - α` for a halflife in periods, `α = 1 - 2^(-1/h)`.
pub fn ewm_decay(halflife: f64) -> f64 {
    (-(std::f64::consts::LN_2) / halflife).exp()
}

/// Adjusted exponentially weighted mean. `halflife = 0` returns `x` unchanged.
pub fn ewm_mean(x: &[f64], halflife: f64) -> Result<Vec<f64>> {
    if !(halflife >= 0.0) {
        return Err(Error::invalid(format!("halflife must be >= 0, got {halflife}")));
    }
    if halflife == 0.0 {
        return Ok(x.to_vec());
    }
    let decay = ewm_decay(halflife);
    // m_t = m_{t-1} + (x_t - m_{t-1}) / W_t keeps constant runs exact
    let mut mean = 0.0;
    let mut den = 0.0;
    Ok(x.iter()
        .map(|v| {
            den = 1.0 + decay * den;
            mean += (v - mean) / den;
            mean
        })
        .collect())
}

/// Online exponentially weighted mean vector and covariance of a stream of
/// observation vectors. Uses the same weights as [`ewm_mean`].
#[derive(Debug, Clone)]
pub struct EwmCovariance {
    decay: f64,
    weight: f64,
    count: usize,
    sum: Vec<f64>,
    /// Upper triangle packed row-wise.
    cross: Vec<f64>,
}

impl EwmCovariance {
    pub fn new(dim: usize, halflife: f64) -> Result<Self> {
        if !(halflife > 0.0) {
            return Err(Error::invalid(format!("halflife must be > 0, got {halflife}")));
        }
        Ok(EwmCovariance {
            decay: ewm_decay(halflife),
            weight: 0.0,
            count: 0,
            sum: vec![0.0; dim],
            cross: vec![0.0; dim * (dim + 1) / 2],
        })
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        let d = self.decay;
        self.weight = 1.0 + d * self.weight;
        for (s, v) in self.sum.iter_mut().zip(x) {
            *s = v + d * *s;
        }
        let n = self.dim();
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                self.cross[k] = x[i] * x[j] + d * self.cross[k];
                k += 1;
            }
        }
        self.count += 1;
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.weight).collect()
    }

    /// Weighted covariance plus [`COVARIANCE_RIDGE`] on the diagonal.
    pub fn covariance(&self) -> Result<Matrix> {
        if self.count < 2 {
            return Err(Error::InsufficientHistory {
                message: "covariance needs at least 2 observations".into(),
                shortfall_days: 2 - self.count as i64,
            });
        }
        let n = self.dim();
        let m = self.mean();
        let mut c = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = self.cross[k] / self.weight - m[i] * m[j];
                c[(i, j)] = v;
                c[(j, i)] = v;
                k += 1;
            }
        }
        for i in 0..n {
            // Cancellation can leave a variance a hair below zero.
            c[(i, i)] = c[(i, i)].max(0.0) + COVARIANCE_RIDGE;
        }
        Ok(c)
    }
}

/// Exponentially weighted covariance of excess returns over all dates up to
/// and including `as_of`, computed directly with weighted mean subtraction.
pub fn ewm_covariance(panel: &ReturnPanel, halflife: f64, as_of: NaiveDate) -> Result<Matrix> {
    if !(halflife > 0.0) {
        return Err(Error::invalid(format!("halflife must be > 0, got {halflife}")));
    }
    let n_obs = panel.dates().partition_point(|d| *d <= as_of);
    if n_obs < 2 {
        return Err(Error::InsufficientHistory {
            message: format!("covariance as of {as_of} needs at least 2 observations"),
            shortfall_days: 2 - n_obs as i64,
        });
    }
    let n = panel.n_assets();
    let decay = ewm_decay(halflife);
    // weight of observation t is decay^(n_obs - 1 - t)
    let weights: Vec<f64> = (0..n_obs)
        .map(|t| decay.powi((n_obs - 1 - t) as i32))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let rows: Vec<Vec<f64>> = (0..n_obs).map(|t| panel.excess_row(t)).collect();
    let mut mean = vec![0.0; n];
    for (w, r) in weights.iter().zip(&rows) {
        for j in 0..n {
            mean[j] += w * r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= wsum);
    let mut c = Matrix::zeros(n, n);
    for (w, r) in weights.iter().zip(&rows) {
        for i in 0..n {
            let di = r[i] - mean[i];
            for j in i..n {
                c[(i, j)] += w * di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = c[(i, j)] / wsum;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
        c[(i, i)] += COVARIANCE_RIDGE;
    }
    Ok(c)
}

/// Trailing-window Pearson correlation. `None` until the window fills and
/// wherever either series has zero variance inside the window.
pub fn rolling_correlation(x: &[f64], y: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 2 {
        return Err(Error::invalid(format!("window must be >= 2, got {window}")));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let mut out = vec![None; x.len()];
    for t in window.saturating_sub(1)..x.len() {
        out[t] = pearson(&x[t + 1 - window..=t], &y[t + 1 - window..=t]);
    }
    Ok(out)
}

/// Pearson correlation, `None` for zero variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use proptest::prelude::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn panel_from(rows: &[&[f64]], rf: &[f64]) -> ReturnPanel {
        let start = d("2020-01-01");
        let dates = (0..rows.len())
            .map(|i| start + chrono::Days::new(i as u64))
            .collect();
        let n = rows[0].len();
        ReturnPanel::new(
            dates,
            (0..n).map(|j| format!("a{j}")).collect(),
            Matrix::from_rows(rows).unwrap(),
            rf.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn levels_become_simple_returns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "px.csv",
            "date,A,risk_free\n2020-01-01,100,0\n2020-01-02,101,0\n2020-01-03,99.99,0\n",
        );
        let opts = IngestOptions {
            kind: ValueKind::Levels,
            ..Default::default()
        };
        let panel = load_return_panel(&p, &opts).unwrap();
        let r = panel.asset_returns(0);
        assert_eq!(panel.len(), 2);
        assert!((r[0] - 0.01).abs() < 1e-12);
        assert!((r[1] + 0.01).abs() < 1e-12);
        assert_eq!(panel.risk_free(), &[0.0, 0.0]);
    }

    #[test]
    fn risk_free_conversion_compounds_back() {
        assert_eq!(annual_to_daily(0.0), 0.0);
        let y = 0.025549;
        let back = (1.0 + annual_to_daily(y)).powi(252) - 1.0;
        assert!((back - y).abs() < 1e-10);
    }

    #[test]
    fn separate_risk_free_file_and_leading_trim() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "r.csv",
            "date,A,B\n2020-01-01,,0.01\n2020-01-02,0.02,0.01\n2020-01-03,0.01,-0.02\n",
        );
        let rf = write(
            &dir,
            "rf.csv",
            "date,risk_free\n2020-01-01,1\n2020-01-02,2.5549\n2020-01-03,2.5549\n",
        );
        let opts = IngestOptions {
            risk_free_path: Some(rf),
            ..Default::default()
        };
        let panel = load_return_panel(&p, &opts).unwrap();
        assert_eq!(panel.dates(), &[d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(panel.assets(), &["A".to_string(), "B".to_string()]);
        assert!((panel.risk_free()[0] - annual_to_daily(0.025549)).abs() < 1e-18);
    }

    #[test]
    fn ingestion_errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = IngestOptions::default();
        let gap = write(
            &dir,
            "gap.csv",
            "date,A,risk_free\n2020-01-01,0.1,0\n2020-01-02,,0\n2020-01-03,0.1,0\n",
        );
        assert!(matches!(load_return_panel(&gap, &opts), Err(Error::Data(_))));
        let order = write(
            &dir,
            "order.csv",
            "date,A,risk_free\n2020-01-02,0.1,0\n2020-01-01,0.1,0\n",
        );
        assert!(load_return_panel(&order, &opts).is_err());
        let text = write(
            &dir,
            "text.csv",
            "date,A,risk_free\n2020-01-01,abc,0\n2020-01-02,0.1,0\n",
        );
        let err = load_return_panel(&text, &opts).unwrap_err();
        assert!(err.to_string().contains("non-numeric"));
        let short = write(&dir, "short.csv", "date,A,risk_free\n2020-01-01,0.1,0\n");
        assert!(load_return_panel(&short, &opts).is_err());
    }

    #[test]
    fn ewm_mean_examples() {
        assert_eq!(ewm_mean(&[2.5, 2.5, 2.5], 7.0).unwrap(), vec![2.5, 2.5, 2.5]);
        let out = ewm_mean(&[0.0, 2.0], 1.0).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(ewm_mean(&[3.0, -1.0], 0.0).unwrap(), vec![3.0, -1.0]);
        assert!(ewm_mean(&[1.0], -1.0).is_err());
    }

    #[test]
    fn covariance_of_identical_columns_is_perfectly_correlated() {
        let rows: Vec<[f64; 2]> = [0.01, -0.02, 0.005, 0.03]
            .iter()
            .map(|r| [*r, *r])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let p = panel_from(&refs, &[0.0; 4]);
        let c = ewm_covariance(&p, 3.0, p.dates()[3]).unwrap();
        let var = |i: usize| c[(i, i)] - COVARIANCE_RIDGE;
        let corr = c[(0, 1)] / (var(0) * var(1)).sqrt();
        assert!((corr - 1.0).abs() < 1e-9);
        assert!((c[(0, 1)] - (c[(0, 0)] - COVARIANCE_RIDGE)).abs() < 1e-18);
    }

    #[test]
    fn constant_column_has_ridge_only() {
        let p = panel_from(&[&[0.01, 0.003], &[-0.02, 0.003], &[0.04, 0.003]], &[0.0; 3]);
        let c = ewm_covariance(&p, 5.0, p.dates()[2]).unwrap();
        assert!((c[(1, 1)] - COVARIANCE_RIDGE).abs() < 1e-20);
        assert!(c[(0, 1)].abs() < 1e-20);
    }

    #[test]
    fn three_observation_covariance_by_hand() {
        // halflife 1: weights 0.25, 0.5, 1 for t = 0, 1, 2.
        let x = [0.01, -0.02, 0.03];
        let y = [0.00, 0.01, -0.01];
        let p = panel_from(&[&[x[0], y[0]], &[x[1], y[1]], &[x[2], y[2]]], &[0.0; 3]);
        let w = [0.25, 0.5, 1.0];
        let ws: f64 = w.iter().sum();
        let mx: f64 = (0..3).map(|i| w[i] * x[i]).sum::<f64>() / ws;
        let my: f64 = (0..3).map(|i| w[i] * y[i]).sum::<f64>() / ws;
        let cxy: f64 = (0..3).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum::<f64>() / ws;
        let cxx: f64 = (0..3).map(|i| w[i] * (x[i] - mx).powi(2)).sum::<f64>() / ws;
        let c = ewm_covariance(&p, 1.0, p.dates()[2]).unwrap();
        assert!((c[(0, 1)] - cxy).abs() < 1e-12);
        assert!((c[(0, 0)] - cxx - COVARIANCE_RIDGE).abs() < 1e-12);
    }

    #[test]
    fn covariance_needs_two_observations() {
        let p = panel_from(&[&[0.01], &[0.02]], &[0.0; 2]);
        assert!(matches!(
            ewm_covariance(&p, 1.0, p.dates()[0]),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn rolling_correlation_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 2.0, 4.0, 3.0];
        let c = rolling_correlation(&x, &y, 3).unwrap();
        assert_eq!(c[0], None);
        assert_eq!(c[1], None);
        let direct = pearson(&[2.0, 3.0, 4.0], &[2.0, 4.0, 3.0]).unwrap();
        assert!((direct - 0.5).abs() < 1e-15);
        assert_eq!(c[3], Some(direct));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = rolling_correlation(&x, &neg, 2).unwrap();
        assert!(c[1..].iter().all(|v| (v.unwrap() + 1.0).abs() < 1e-12));
        let flat = rolling_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(flat, vec![None, None, None]);
        assert!(rolling_correlation(&x, &y, 1).is_err());
    }

    proptest! {
        #[test]
        fn ewm_mean_is_convex_combination(
            x in prop::collection::vec(-10.0f64..10.0, 1..60),
            h in 0.1f64..50.0,
        ) {
            let out = ewm_mean(&x, h).unwrap();
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn covariance_is_symmetric_psd_and_matches_tracker(
            data in prop::collection::vec(prop::collection::vec(-0.05f64..0.05, 3), 2..40),
            h in 1.0f64..100.0,
        ) {
            let refs: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
            let p = panel_from(&refs, &vec![0.0001; data.len()]);
            let last = *p.dates().last().unwrap();
            let c = ewm_covariance(&p, h, last).unwrap();
            prop_assert!(c.max_asymmetry() < 1e-12);
            let mut raw = c.clone();
            for i in 0..3 { raw[(i, i)] -= COVARIANCE_RIDGE; }
            let ev = symmetric_eigenvalues(&raw);
            prop_assert!(ev[0] >= -1e-15);

            let mut tracker = EwmCovariance::new(3, h).unwrap();
            for t in 0..p.len() { tracker.update(&p.excess_row(t)); }
            let ct = tracker.covariance().unwrap();
            for i in 0..3 { for j in 0..3 {
                prop_assert!((ct[(i, j)] - c[(i, j)]).abs() < 1e-12);
            }}
        }

        #[test]
        fn levels_round_trip(levels in prop::collection::vec(1.0f64..1000.0, 2..30)) {
            let rets: Vec<f64> = levels.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            let mut rebuilt = vec![levels[0]];
            for r in &rets { let last = *rebuilt.last().unwrap(); rebuilt.push(last * (1.0 + r)); }
            let again: Vec<f64> = rebuilt.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
            for (a, b) in rets.iter().zip(&again) { prop_assert!((a - b).abs() < 1e-12); }
        }
    }

    #[test]
    fn date_shift_leaves_numbers_identical() {
        let rows: [&[f64]; 3] = [&[0.01, 0.02], &[-0.01, 0.0], &[0.02, -0.03]];
        let a = panel_from(&rows, &[0.0; 3]);
        let shifted: Vec<NaiveDate> = a
            .dates()
            .iter()
            .map(|d| *d + chrono::Days::new(400))
            .collect();
        let b = ReturnPanel::new(
            shifted,
            a.assets().to_vec(),
            a.returns().clone(),
            a.risk_free().to_vec(),
        )
        .unwrap();
        let ca = ewm_covariance(&a, 2.0, a.dates()[2]).unwrap();
        let cb = ewm_covariance(&b, 2.0, b.dates()[2]).unwrap();
        assert_eq!(ca, cb);
    }
}
