//! Daily portfolio simulation with drift, linear costs and the
//! performance metric set.
//!
//! Target weights for day `t` are decided with information through the
//! close of `t − 1` and earn day-`t` returns. Between days the holdings
//! drift with realized returns; the residual `1 − 1ᵀw` sits in the
//! risk-free asset. The run starts invested at its first target without a
//! charge.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::allocation::{build_mu, target_weights, StrategyKind, StrategySpec};
use crate::error::{Error, Result, ResultExt};
use crate::linalg::Matrix;
use crate::market_data::{ewm_decay, pearson, DateRange, EwmCovariance, ReturnPanel, TRADING_DAYS};
use crate::pipeline::{AssetRegimeForecast, RegimeMeans, RegimeStage};

/// Annualized Sharpe ratio `√252 · mean / std` of daily excess returns
/// (sample standard deviation). `None` when undefined.
pub fn sharpe_ratio(excess: &[f64]) -> Option<f64> {
    let (mean, std) = mean_std(excess)?;
    (std > 0.0).then(|| TRADING_DAYS.sqrt() * mean / std)
}

fn mean_std(x: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Maximum drawdown of a wealth path, `≤ 0`.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        mdd = mdd.min(w / peak - 1.0);
    }
    mdd
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ann_excess_return: f64,
    pub ann_excess_volatility: Option<f64>,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub mdd: f64,
    pub calmar: Option<f64>,
    pub ann_turnover: f64,
    pub avg_leverage: f64,
}

/// Metrics of net daily total returns `net` against risk-free `rf`, with
/// the post-trade weights and trades that produced them.
pub fn compute_metrics(net: &[f64], rf: &[f64], weights: &Matrix, trades: &Matrix) -> Result<MetricSet> {
    let t = net.len();
    if t == 0 {
        return Err(Error::invalid("cannot compute metrics of an empty series"));
    }
    if rf.len() != t || weights.rows() != t || trades.rows() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            found: rf.len().min(weights.rows()).min(trades.rows()),
        });
    }
    let n = t as f64;
    let excess: Vec<f64> = net.iter().zip(rf).map(|(r, f)| r - f).collect();
    let mean_excess = excess.iter().sum::<f64>() / n;
    let ann_excess_return = TRADING_DAYS * mean_excess;
    let ann_excess_volatility = mean_std(&excess).map(|(_, s)| TRADING_DAYS.sqrt() * s);
    let sharpe = sharpe_ratio(&excess);
    let downside = (excess.iter().map(|e| e.min(0.0).powi(2)).sum::<f64>() / n).sqrt();
    let sortino = (downside > 0.0).then(|| TRADING_DAYS.sqrt() * mean_excess / downside);

    let mut wealth = Vec::with_capacity(t + 1);
    wealth.push(1.0);
    for r in net {
        wealth.push(wealth.last().unwrap() * (1.0 + r));
    }
    let mdd = max_drawdown(&wealth);
    let calmar = (mdd < 0.0).then(|| ann_excess_return / mdd.abs());

    let turnover: f64 = trades.iter_rows().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).sum();
    let leverage: f64 = weights.iter_rows().map(|r| r.iter().sum::<f64>()).sum();
    Ok(MetricSet {
        ann_excess_return,
        ann_excess_volatility,
        sharpe,
        sortino,
        mdd,
        calmar,
        ann_turnover: TRADING_DAYS / n * turnover,
        avg_leverage: leverage / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub strategy: String,
    pub assets: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub weights_post: Matrix,
    /// Post-trade minus drifted pre-trade weights.
    pub trades: Matrix,
    pub costs: Vec<f64>,
    pub gross_returns: Vec<f64>,
    /// Net total returns.
    pub portfolio_returns: Vec<f64>,
    pub risk_free: Vec<f64>,
    pub wealth: Vec<f64>,
    /// Expected excess returns fed to the optimizer, where used.
    pub mu: Option<Matrix>,
    pub metrics: MetricSet,
}

/// Accumulates the daily trade, cost and return records.
struct Ledger {
    n: usize,
    cost: f64,
    held: Option<Vec<f64>>,
    weights: Vec<f64>,
    trades: Vec<f64>,
    costs: Vec<f64>,
    gross: Vec<f64>,
    net: Vec<f64>,
    wealth: Vec<f64>,
}

impl Ledger {
    fn new(n: usize, cost: f64) -> Self {
        Ledger {
            n,
            cost,
            held: None,
            weights: Vec::new(),
            trades: Vec::new(),
            costs: Vec::new(),
            gross: Vec::new(),
            net: Vec::new(),
            wealth: Vec::new(),
        }
    }

    /// Drifted weights entering the next day, if any position is held.
    fn pre_trade(&self) -> Option<&[f64]> {
        self.held.as_deref()
    }

    fn step(&mut self, target: &[f64], returns: &[f64], rf: f64) {
        let w_pre = self.held.clone().unwrap_or_else(|| target.to_vec());
        let mut turnover = 0.0;
        for (t, p) in target.iter().zip(&w_pre) {
            let d = t - p;
            turnover += d.abs();
            self.trades.push(d);
        }
        let cost = self.cost * turnover;
        let invested: f64 = target.iter().sum();
        let gross = target.iter().zip(returns).map(|(w, r)| w * r).sum::<f64>() + (1.0 - invested) * rf;
        let net = gross - cost;
        let prev = self.wealth.last().copied().unwrap_or(1.0);
        self.weights.extend_from_slice(target);
        self.costs.push(cost);
        self.gross.push(gross);
        self.net.push(net);
        self.wealth.push(prev * (1.0 + net));
        self.held = Some(
            target
                .iter()
                .zip(returns)
                .map(|(w, r)| w * (1.0 + r) / (1.0 + gross))
                .collect(),
        );
    }

    fn finish(
        self,
        strategy: &str,
        panel: &ReturnPanel,
        rows: std::ops::Range<usize>,
        mu: Option<Matrix>,
    ) -> Result<BacktestResult> {
        let t = rows.len();
        let weights_post = Matrix::from_vec(t, self.n, self.weights)?;
        let trades = Matrix::from_vec(t, self.n, self.trades)?;
        let risk_free = panel.risk_free()[rows.clone()].to_vec();
        let metrics = compute_metrics(&self.net, &risk_free, &weights_post, &trades)?;
        Ok(BacktestResult {
            strategy: strategy.to_string(),
            assets: panel.assets().to_vec(),
            dates: panel.dates()[rows].to_vec(),
            weights_post,
            trades,
            costs: self.costs,
            gross_returns: self.gross,
            portfolio_returns: self.net,
            risk_free,
            wealth: self.wealth,
            mu,
            metrics,
        })
    }
}

fn window_rows(panel: &ReturnPanel, window: DateRange) -> Result<std::ops::Range<usize>> {
    let rows = window.index_range(panel.dates());
    if rows.is_empty() {
        return Err(Error::data(format!(
            "no trading days in {}..{}",
            window.start, window.end
        )));
    }
    Ok(rows)
}

/// Re-run a fixed path of post-trade weights (`T × N`, one row per day of
/// `window`) with cost rate `cost`.
pub fn replay(panel: &ReturnPanel, window: DateRange, weights: &Matrix, cost: f64, name: &str) -> Result<BacktestResult> {
    let rows = window_rows(panel, window)?;
    if weights.rows() != rows.len() || weights.cols() != panel.n_assets() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            found: weights.rows(),
        });
    }
    let mut ledger = Ledger::new(panel.n_assets(), cost);
    for (i, t) in rows.clone().enumerate() {
        ledger.step(weights.row(i), panel.returns().row(t), panel.risk_free()[t]);
    }
    ledger.finish(name, panel, rows, None)
}

/// Per-asset forecasts looked up by date.
struct ForecastIndex<'a> {
    per_asset: Vec<(&'a AssetRegimeForecast, HashMap<NaiveDate, usize>)>,
}

impl<'a> ForecastIndex<'a> {
    fn new(stage: &'a RegimeStage, assets: &[String]) -> Result<Self> {
        let per_asset = assets
            .iter()
            .map(|a| {
                let f = stage
                    .assets
                    .iter()
                    .find(|f| &f.asset == a)
                    .ok_or_else(|| Error::data(format!("no regime forecasts for asset {a}")))?;
                let idx = f.series.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
                Ok((f, idx))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForecastIndex { per_asset })
    }

    fn bullish(&self, date: NaiveDate) -> Result<Vec<bool>> {
        self.per_asset
            .iter()
            .map(|(f, idx)| {
                idx.get(&date)
                    .map(|&i| f.series.forecast[i])
                    .ok_or_else(|| Error::data(format!("no forecast for {} on {date}", f.asset)))
            })
            .collect()
    }

    fn means(&self, date: NaiveDate) -> Vec<Option<RegimeMeans>> {
        self.per_asset.iter().map(|(f, _)| f.regime_means_at(date)).collect()
    }
}

/// Simulate `spec` over `window` with one-way cost rate `cost`.
/// `regimes` is required by regime strategies.
pub fn run(
    spec: &StrategySpec,
    panel: &ReturnPanel,
    regimes: Option<&RegimeStage>,
    window: DateRange,
    cost: f64,
) -> Result<BacktestResult> {
    run_inner(spec, panel, regimes, window, cost).context_with(|| format!("strategy {:?}", spec.name))
}

fn run_inner(
    spec: &StrategySpec,
    panel: &ReturnPanel,
    regimes: Option<&RegimeStage>,
    window: DateRange,
    cost: f64,
) -> Result<BacktestResult> {
    let n = panel.n_assets();
    spec.validate(n)?;
    let rows = window_rows(panel, window)?;
    if rows.start == 0 && spec.kind.uses_optimizer() {
        return Err(Error::InsufficientHistory {
            message: "covariance estimation needs history before the backtest window".into(),
            shortfall_days: 2,
        });
    }
    let forecasts = if spec.kind.uses_regimes() {
        let stage = regimes.ok_or_else(|| Error::invalid("regime strategy run without regime forecasts"))?;
        Some(ForecastIndex::new(stage, panel.assets())?)
    } else {
        None
    };
    let asset = match &spec.asset {
        Some(a) if spec.kind == StrategyKind::ZeroOne => Some(
            panel
                .asset_index(a)
                .ok_or_else(|| Error::invalid(format!("unknown asset {a:?}")))?,
        ),
        _ => None,
    };

    let mut cov = EwmCovariance::new(n, spec.covariance_halflife)?;
    let mean_decay = ewm_decay(spec.mean_halflife);
    let mut ewm_mu = vec![0.0; n];
    let mut ewm_weight = 0.0;
    if spec.kind.uses_optimizer() {
        for t in 0..rows.start {
            let x = panel.excess_row(t);
            cov.update(&x);
            ewm_weight = 1.0 + mean_decay * ewm_weight;
            for (m, v) in ewm_mu.iter_mut().zip(&x) {
                *m += (v - *m) / ewm_weight;
            }
        }
    }

    let mut ledger = Ledger::new(n, cost);
    let mut mu_path = Vec::new();
    let dates = panel.dates();
    for t in rows.clone() {
        let date = dates[t];
        let bullish = match &forecasts {
            Some(f) => f.bullish(date)?,
            None => vec![true; n],
        };
        let w_pre = ledger.pre_trade().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let (mu, sigma) = if spec.kind.uses_optimizer() {
            let means = forecasts.as_ref().map(|f| f.means(date)).unwrap_or_default();
            let mu = build_mu(spec, &bullish, &means, &ewm_mu)?;
            (Some(mu), Some(cov.covariance()?))
        } else {
            (None, None)
        };
        let target = target_weights(spec, mu.as_deref(), sigma.as_ref(), &w_pre, &bullish, cost, asset)
            .context_with(|| format!("target weights on {date}"))?;
        if let Some(mu) = mu {
            mu_path.extend(mu);
        }
        ledger.step(&target, panel.returns().row(t), panel.risk_free()[t]);
        if spec.kind.uses_optimizer() {
            let x = panel.excess_row(t);
            cov.update(&x);
            ewm_weight = 1.0 + mean_decay * ewm_weight;
            for (m, v) in ewm_mu.iter_mut().zip(&x) {
                *m += (v - *m) / ewm_weight;
            }
        }
    }
    let mu = if spec.kind.uses_optimizer() {
        Some(Matrix::from_vec(rows.len(), n, mu_path)?)
    } else {
        None
    };
    ledger.finish(&spec.name, panel, rows, mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCorrelation {
    pub per_asset: Vec<(String, Option<f64>)>,
    /// Correlation over all stacked `(date, asset)` pairs.
    pub pooled: Option<f64>,
}

/// Correlation of forecast expected returns with realized excess returns,
/// per asset and pooled. Both matrices are `T × N`.
pub fn forecast_return_correlation(assets: &[String], mu: &Matrix, realized: &Matrix) -> Result<ForecastCorrelation> {
    if mu.rows() != realized.rows() || mu.cols() != realized.cols() || mu.cols() != assets.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.rows() * mu.cols(),
            found: realized.rows() * realized.cols(),
        });
    }
    let per_asset = assets
        .iter()
        .enumerate()
        .map(|(j, a)| (a.clone(), pearson(&mu.column(j), &realized.column(j))))
        .collect();
    Ok(ForecastCorrelation {
        per_asset,
        pooled: pearson(mu.as_slice(), realized.as_slice()),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_forecast_correlation_csv(
    path: &Path,
    columns: &[(String, ForecastCorrelation)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["asset".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    if let Some((_, first)) = columns.first() {
        for (i, (asset, _)) in first.per_asset.iter().enumerate() {
            let mut rec = vec![asset.clone()];
            rec.extend(columns.iter().map(|(_, c)| fmt_opt(c.per_asset[i].1)));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["Overall".to_string()];
        rec.extend(columns.iter().map(|(_, c)| fmt_opt(c.pooled)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics keyed by strategy name, in the given order.
pub fn write_metrics_json(path: &Path, entries: &[(String, MetricSet)]) -> Result<()> {
    let mut map = serde_json::Map::new();
    for (name, m) in entries {
        map.insert(name.clone(), serde_json::to_value(m)?);
    }
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(map))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

const DAILY_FIXED: [&str; 6] = ["date", "risk_free", "gross_return", "cost", "return", "wealth"];

impl BacktestResult {
    /// One row per day: fixed columns, then `w:<asset>` and `trade:<asset>`.
    pub fn write_daily_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = DAILY_FIXED.iter().map(|s| s.to_string()).collect();
        header.extend(self.assets.iter().map(|a| format!("w:{a}")));
        header.extend(self.assets.iter().map(|a| format!("trade:{a}")));
        w.write_record(&header)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut rec = vec![
                d.to_string(),
                self.risk_free[i].to_string(),
                self.gross_returns[i].to_string(),
                self.costs[i].to_string(),
                self.portfolio_returns[i].to_string(),
                self.wealth[i].to_string(),
            ];
            rec.extend(self.weights_post.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.trades.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a file written by [`BacktestResult::write_daily_csv`] and
    /// recompute its metrics.
    pub fn read_daily_csv(path: &Path, strategy: &str) -> Result<BacktestResult> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < DAILY_FIXED.len() || header[..DAILY_FIXED.len()] != DAILY_FIXED {
            return Err(Error::data(format!("{}: not a daily backtest file", path.display())));
        }
        let rest = &header[DAILY_FIXED.len()..];
        let n = rest.len() / 2;
        if rest.len() % 2 != 0 || rest[..n].iter().any(|h| !h.starts_with("w:")) {
            return Err(Error::data(format!("{}: malformed weight columns", path.display())));
        }
        let assets: Vec<String> = rest[..n].iter().map(|h| h[2..].to_string()).collect();
        let mut dates = Vec::new();
        let mut cols: [Vec<f64>; 5] = Default::default();
        let mut weights = Vec::new();
        let mut trades = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| {
                    Error::data(format!("{}: row {}: non-numeric {:?}", path.display(), line + 2, &rec[i]))
                })
            };
            dates.push(
                rec[0]
                    .parse::<NaiveDate>()
                    .map_err(|_| Error::data(format!("{}: bad date {:?}", path.display(), &rec[0])))?,
            );
            for (k, c) in cols.iter_mut().enumerate() {
                c.push(num(k + 1)?);
            }
            for i in 0..n {
                weights.push(num(DAILY_FIXED.len() + i)?);
                trades.push(num(DAILY_FIXED.len() + n + i)?);
            }
        }
        let t = dates.len();
        let [risk_free, gross_returns, costs, portfolio_returns, wealth] = cols;
        let weights_post = Matrix::from_vec(t, n, weights)?;
        let trades = Matrix::from_vec(t, n, trades)?;
        let metrics = compute_metrics(&portfolio_returns, &risk_free, &weights_post, &trades)?;
        Ok(BacktestResult {
            strategy: strategy.to_string(),
            assets,
            dates,
            weights_post,
            trades,
            costs,
            gross_returns,
            portfolio_returns,
            risk_free,
            wealth,
            mu: None,
            metrics,
        })
    }
}
