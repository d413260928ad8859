//! Walk-forward regime forecasting.
//!
//! Every refit date (each `refit_months` from an anchor) a two-state jump
//! model is fitted on the trailing `training_years` of standardized return
//! features. Its labels, shifted one day forward, become the targets of a
//! boosted-tree classifier trained on return plus macro features over the
//! same window, which then issues daily bull probabilities until the next
//! refit. The jump penalty for each refit is picked by the validation
//! Sharpe ratio of a 0/1 strategy over the preceding `validation_years`.
//!
//! Block forecasts are keyed by `(asset, block start, λ)` and cached, so
//! validation runs and the final out-of-sample run share work.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{Months, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::sharpe_ratio;
use crate::error::{Error, Result, ResultExt};
use crate::features::{macro_features, return_features, RETURN_WARMUP_ROWS, select_jm_features, standardize, FeatureMatrix};
use crate::gbdt::{classify, BoostedTrees, Hyperparameters};
use crate::jump_model::{JumpModel, BEARISH, BULLISH};
use crate::linalg::Matrix;
use crate::market_data::{ewm_mean, DateRange, MacroPanel, ReturnPanel};

/// `{0} ∪` 16 log-spaced points on `[0.1, 100]`.
pub fn default_lambda_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..16).map(|i| 10f64.powf(-1.0 + 3.0 * i as f64 / 15.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub training_years: u32,
    pub validation_years: u32,
    pub refit_months: u32,
    pub lambda_grid: Vec<f64>,
    pub smoothing_candidates: Vec<u32>,
    /// Fixed smoothing halflives by asset; other assets are tuned.
    pub smoothing_halflife: BTreeMap<String, u32>,
    /// Assets whose jump models drop the two log downside-deviation features.
    pub exclude_dd: Vec<String>,
    pub threshold: f64,
    /// One-way cost used by the 0/1 validation strategy.
    pub cost: f64,
    pub jm_restarts: usize,
    pub jm_max_iter: usize,
    pub seed: u64,
    pub gbdt: Hyperparameters,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            training_years: 11,
            validation_years: 5,
            refit_months: 6,
            lambda_grid: default_lambda_grid(),
            smoothing_candidates: vec![0, 2, 4, 8],
            smoothing_halflife: BTreeMap::new(),
            exclude_dd: Vec::new(),
            threshold: 0.5,
            cost: 0.0005,
            jm_restarts: crate::jump_model::DEFAULT_RESTARTS,
            jm_max_iter: crate::jump_model::DEFAULT_MAX_ITER,
            seed: 0,
            gbdt: Hyperparameters::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.refit_months == 0 || self.training_years == 0 {
            return Err(Error::invalid("refit_months and training_years must be > 0"));
        }
        if self.validation_years == 0 || (self.validation_years * 12) % self.refit_months != 0 {
            return Err(Error::invalid(
                "validation window must be a positive whole number of refit intervals",
            ));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::invalid("lambda grid must be non-empty, finite and >= 0"));
        }
        if self.smoothing_candidates.is_empty() {
            return Err(Error::invalid("no smoothing halflife candidates"));
        }
        if self.jm_restarts == 0 {
            return Err(Error::invalid("jm_restarts must be >= 1"));
        }
        Ok(())
    }

    fn validation_blocks(&self) -> i64 {
        (self.validation_years * 12 / self.refit_months) as i64
    }
}

/// Refit calendar anchored at a date: block `k` starts `k · refit_months`
/// months after the anchor (`k` may be negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkForwardSchedule {
    pub anchor: NaiveDate,
    pub refit_months: u32,
    pub training_years: u32,
    pub validation_years: u32,
}

fn shift_months(d: NaiveDate, months: i64) -> NaiveDate {
    if months >= 0 {
        d.checked_add_months(Months::new(months as u32))
    } else {
        d.checked_sub_months(Months::new((-months) as u32))
    }
    .expect("date in range")
}

impl WalkForwardSchedule {
    pub fn block_start(&self, k: i64) -> NaiveDate {
        shift_months(self.anchor, k * self.refit_months as i64)
    }

    pub fn block(&self, k: i64) -> DateRange {
        DateRange {
            start: self.block_start(k),
            end: self.block_start(k + 1),
        }
    }

    /// Calendar start of the training window for a block starting at `start`.
    pub fn training_start(&self, start: NaiveDate) -> NaiveDate {
        shift_months(start, -(self.training_years as i64 * 12))
    }

    /// Number of blocks needed to cover `[anchor, end)`.
    pub fn blocks_until(&self, end: NaiveDate) -> i64 {
        let mut k = 0;
        while self.block_start(k) < end {
            k += 1;
        }
        k
    }
}

/// One asset's precomputed inputs.
#[derive(Debug, Clone)]
struct AssetData {
    name: String,
    excess: Vec<f64>,
    returns: Vec<f64>,
    jm_features: FeatureMatrix,
    /// Return features followed by macro features; `NaN` where unavailable.
    classifier_features: Matrix,
}

/// Aligned return panel, macro features and per-asset features.
#[derive(Debug, Clone)]
pub struct Universe {
    panel: ReturnPanel,
    macro_panel: MacroPanel,
    assets: Vec<AssetData>,
}

impl Universe {
    pub fn new(panel: ReturnPanel, macro_panel: &MacroPanel, exclude_dd: &[String]) -> Result<Self> {
        let macro_panel = macro_panel.align_to(panel.dates())?;
        let macro_fm = macro_features(&macro_panel)?;
        let mut assets = Vec::with_capacity(panel.n_assets());
        for (j, name) in panel.assets().iter().enumerate() {
            let excess = panel.excess_returns(j);
            let rf = return_features(panel.dates(), &excess).context_with(|| format!("asset {name}"))?;
            let jm_features = select_jm_features(&rf, exclude_dd.contains(name))?;
            let classifier_features = rf.values.hstack(&macro_fm.values)?;
            assets.push(AssetData {
                name: name.clone(),
                returns: panel.asset_returns(j),
                excess,
                jm_features,
                classifier_features,
            });
        }
        Ok(Universe {
            panel,
            macro_panel,
            assets,
        })
    }

    pub fn panel(&self) -> &ReturnPanel {
        &self.panel
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.panel.dates()
    }

    pub fn asset_names(&self) -> &[String] {
        self.panel.assets()
    }

    /// Universe rebuilt from data through `last` only.
    pub fn truncate_through(&self, last: NaiveDate, exclude_dd: &[String]) -> Result<Universe> {
        let panel = self.panel.truncate_through(last);
        Universe::new(panel, &self.macro_panel, exclude_dd)
    }

    fn asset(&self, name: &str) -> Result<(usize, &AssetData)> {
        self.assets
            .iter()
            .enumerate()
            .find(|(_, a)| a.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown asset {name:?}")))
    }
}

/// Daily forecasts of one refit block under one jump penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockForecast {
    pub asset: String,
    pub block_start: NaiveDate,
    pub lambda: f64,
    pub dates: Vec<NaiveDate>,
    pub raw_prob: Vec<f64>,
    /// Mean daily excess return over the training periods labeled bullish.
    pub bull_mean_excess: Option<f64>,
    pub bear_mean_excess: Option<f64>,
    pub jm_switches: usize,
    pub jm_objective: f64,
    /// The jump model found a single regime; probabilities are constant.
    pub single_regime: bool,
    /// Identity of the configuration and data the block was computed from.
    pub fingerprint: u64,
}

/// Mean daily excess returns of the two regimes from one training fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeMeans {
    pub bull: Option<f64>,
    pub bear: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeForecastSeries {
    pub asset: String,
    pub dates: Vec<NaiveDate>,
    pub raw_prob: Vec<f64>,
    pub smoothed_prob: Vec<f64>,
    /// `true` = bullish.
    pub forecast: Vec<bool>,
    pub lambda_used: Vec<f64>,
    pub smoothing_halflife: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub asset: String,
    pub refit_date: NaiveDate,
    pub grid: Vec<f64>,
    /// Validation Sharpe per grid point; `None` where undefined.
    pub sharpe: Vec<Option<f64>>,
    pub chosen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTable {
    pub block_start: NaiveDate,
    pub lambda: f64,
    pub means: RegimeMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRegimeForecast {
    pub asset: String,
    pub smoothing_halflife: u32,
    /// Validation Sharpe of each halflife candidate (best over λ) on the
    /// first validation window; empty when the halflife was configured.
    pub halflife_scores: Vec<(u32, Option<f64>)>,
    pub selections: Vec<LambdaSelection>,
    pub regime_tables: Vec<RegimeTable>,
    pub series: RegimeForecastSeries,
}

impl AssetRegimeForecast {
    /// Regime means of the refit block covering `date`.
    pub fn regime_means_at(&self, date: NaiveDate) -> Option<RegimeMeans> {
        let i = self.regime_tables.partition_point(|t| t.block_start <= date);
        i.checked_sub(1).map(|i| self.regime_tables[i].means)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStage {
    pub testing_window: DateRange,
    pub assets: Vec<AssetRegimeForecast>,
}

/// Daily returns of a strategy fully in the asset on bullish days and in
/// the risk-free asset otherwise. Switching costs `cost` per unit traded;
/// the first day is entered from cash.
pub fn zero_one_strategy(forecast: &[bool], asset_returns: &[f64], risk_free: &[f64], cost: f64) -> Result<Vec<f64>> {
    if forecast.len() != asset_returns.len() || forecast.len() != risk_free.len() {
        return Err(Error::DimensionMismatch {
            expected: forecast.len(),
            found: asset_returns.len().min(risk_free.len()),
        });
    }
    let mut prev = false;
    Ok(forecast
        .iter()
        .zip(asset_returns.iter().zip(risk_free))
        .map(|(&pos, (&r, &rf))| {
            let gross = if pos { r } else { rf };
            let trade = if pos != prev { cost } else { 0.0 };
            prev = pos;
            gross - trade
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    asset: String,
    block_start: NaiveDate,
    lambda_bits: u64,
}

/// Insert-or-get store of block forecasts, in memory and optionally on
/// disk as `<dir>/<asset>/<block-start>/<lambda>.json`.
#[derive(Debug, Default)]
pub struct ForecastCache {
    memory: Mutex<HashMap<CacheKey, Arc<BlockForecast>>>,
    dir: Option<PathBuf>,
}

impl ForecastCache {
    pub fn in_memory() -> Self {
        ForecastCache::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        ForecastCache {
            memory: Mutex::default(),
            dir: Some(dir.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.memory.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn path(dir: &Path, key: &CacheKey) -> PathBuf {
        dir.join(&key.asset)
            .join(key.block_start.to_string())
            .join(format!("{}.json", f64::from_bits(key.lambda_bits)))
    }

    fn get(&self, key: &CacheKey, fingerprint: u64) -> Option<Arc<BlockForecast>> {
        if let Some(hit) = self.memory.lock().expect("cache lock").get(key) {
            if hit.fingerprint == fingerprint {
                return Some(hit.clone());
            }
        }
        let dir = self.dir.as_ref()?;
        let text = std::fs::read_to_string(Self::path(dir, key)).ok()?;
        let block: BlockForecast = serde_json::from_str(&text).ok()?;
        if block.fingerprint != fingerprint {
            return None;
        }
        let block = Arc::new(block);
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key.clone(), block.clone());
        Some(block)
    }

    fn insert(&self, key: CacheKey, block: BlockForecast) -> Result<Arc<BlockForecast>> {
        if let Some(dir) = &self.dir {
            let path = Self::path(dir, &key);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, serde_json::to_string(&block)?)?;
        }
        let block = Arc::new(block);
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key, block.clone());
        Ok(block)
    }
}

/// Walk-forward forecaster over a [`Universe`].
#[derive(Debug)]
pub struct RegimeEngine<'a> {
    universe: &'a Universe,
    config: PipelineConfig,
    schedule: WalkForwardSchedule,
    cache: &'a ForecastCache,
}

impl<'a> RegimeEngine<'a> {
    /// `anchor` fixes the refit calendar (normally the testing start).
    pub fn new(
        universe: &'a Universe,
        config: PipelineConfig,
        anchor: NaiveDate,
        cache: &'a ForecastCache,
    ) -> Result<Self> {
        config.validate()?;
        let schedule = WalkForwardSchedule {
            anchor,
            refit_months: config.refit_months,
            training_years: config.training_years,
            validation_years: config.validation_years,
        };
        Ok(RegimeEngine {
            universe,
            config,
            schedule,
            cache,
        })
    }

    pub fn schedule(&self) -> &WalkForwardSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn fingerprint(&self, asset: &AssetData, end_row: usize) -> u64 {
        let mut h = DefaultHasher::new();
        let c = &self.config;
        (c.training_years, c.jm_restarts, c.jm_max_iter, c.seed).hash(&mut h);
        let g = &c.gbdt;
        (g.rounds, g.max_depth).hash(&mut h);
        for v in [g.learning_rate, g.min_child_weight, g.l2_leaf_regularization] {
            v.to_bits().hash(&mut h);
        }
        asset.name.hash(&mut h);
        asset.jm_features.names.hash(&mut h);
        self.universe.dates()[..end_row].hash(&mut h);
        for v in &asset.excess[..end_row] {
            v.to_bits().hash(&mut h);
        }
        for v in asset.classifier_features.slice_rows(0, end_row).as_slice() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    fn check_history(&self, block_start: NaiveDate) -> Result<()> {
        let need = self.schedule.training_start(block_start);
        let first = *self
            .universe
            .dates()
            .first()
            .ok_or_else(|| Error::data("empty universe"))?;
        if first > need {
            return Err(Error::InsufficientHistory {
                message: format!(
                    "block starting {block_start} needs data from {need}, data starts {first}"
                ),
                shortfall_days: (first - need).num_days(),
            });
        }
        Ok(())
    }

    /// Forecasts of block `k` under `lambda`, from the cache when possible.
    pub fn block_forecast(&self, asset_name: &str, lambda: f64, k: i64) -> Result<Arc<BlockForecast>> {
        let (_, asset) = self.universe.asset(asset_name)?;
        let block = self.schedule.block(k);
        let dates = self.universe.dates();
        let rows = block.index_range(dates);
        let fingerprint = self.fingerprint(asset, rows.end);
        let key = CacheKey {
            asset: asset.name.clone(),
            block_start: block.start,
            lambda_bits: lambda.to_bits(),
        };
        if let Some(hit) = self.cache.get(&key, fingerprint) {
            return Ok(hit);
        }
        let computed = self
            .compute_block(asset, lambda, block, fingerprint)
            .context_with(|| format!("asset {} block {} lambda {lambda}", asset.name, block.start))?;
        self.cache.insert(key, computed)
    }

    fn compute_block(&self, asset: &AssetData, lambda: f64, block: DateRange, fingerprint: u64) -> Result<BlockForecast> {
        self.check_history(block.start)?;
        let dates = self.universe.dates();
        let mut train = DateRange {
            start: self.schedule.training_start(block.start),
            end: block.start,
        }
        .index_range(dates);
        train.start = train.start.max(RETURN_WARMUP_ROWS.min(train.end));
        if train.len() < 3 {
            return Err(Error::InsufficientHistory {
                message: format!("training window before {} has {} rows", block.start, train.len()),
                shortfall_days: 3 - train.len() as i64,
            });
        }
        let jm_x = asset.jm_features.slice_rows(train.start, train.end);
        let window = DateRange {
            start: jm_x.dates[0],
            end: block.start,
        };
        let jm_x = standardize(&jm_x, window)?;
        let excess = &asset.excess[train.clone()];
        let fit = JumpModel::new(2, lambda)
            .with_restarts(self.config.jm_restarts)
            .with_max_iter(self.config.jm_max_iter)
            .with_seed(self.config.seed)
            .fit(&jm_x.values, excess)?;
        let regimes = fit.regimes();

        // classifier pairs (x_t, regime_{t+1}) inside the training window
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for t in train.start..train.end - 1 {
            let x = asset.classifier_features.row(t);
            if x.iter().all(|v| v.is_finite()) {
                rows.push(t);
                targets.push(regimes[t + 1 - train.start] == BULLISH);
            }
        }
        if rows.is_empty() {
            return Err(Error::InsufficientHistory {
                message: format!("no complete classifier rows before {}", block.start),
                shortfall_days: 0,
            });
        }

        let out_rows = block.index_range(dates);
        let mut x_pred = Matrix::zeros(out_rows.len(), asset.classifier_features.cols());
        for (i, d) in out_rows.clone().enumerate() {
            let src = asset.classifier_features.row(d - 1);
            if src.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "features unavailable on {} for the forecast of {}",
                    dates[d - 1],
                    dates[d]
                )));
            }
            x_pred.row_mut(i).copy_from_slice(src);
        }

        let positives = targets.iter().filter(|&&y| y).count();
        let single_regime = positives == 0 || positives == targets.len();
        let raw_prob = if single_regime {
            let p = if positives > 0 { 1.0 } else { 0.0 };
            vec![p; out_rows.len()]
        } else {
            let model = BoostedTrees::train(&asset.classifier_features.select_rows(&rows), &targets, &self.config.gbdt)?;
            model.predict_proba(&x_pred)?
        };

        Ok(BlockForecast {
            asset: asset.name.clone(),
            block_start: block.start,
            lambda,
            dates: dates[out_rows].to_vec(),
            raw_prob,
            bull_mean_excess: fit.stats_for_regime(BULLISH).mean,
            bear_mean_excess: fit.stats_for_regime(BEARISH).mean,
            jm_switches: fit.switches(),
            jm_objective: fit.objective,
            single_regime,
            fingerprint,
        })
    }

    /// Block indices covering `window` on this engine's calendar.
    fn block_indices(&self, window: DateRange) -> Result<std::ops::Range<i64>> {
        let first = (-10_000..=10_000)
            .find(|&k| self.schedule.block_start(k) == window.start)
            .ok_or_else(|| Error::invalid(format!("{} is not a refit date", window.start)))?;
        let mut last = first;
        while self.schedule.block_start(last) < window.end {
            last += 1;
        }
        Ok(first..last)
    }

    fn raw_series(&self, asset: &str, lambdas: &dyn Fn(i64) -> f64, blocks: std::ops::Range<i64>, end: NaiveDate) -> Result<(Vec<NaiveDate>, Vec<f64>, Vec<f64>)> {
        let mut dates = Vec::new();
        let mut raw = Vec::new();
        let mut used = Vec::new();
        for k in blocks {
            let lambda = lambdas(k);
            let b = self.block_forecast(asset, lambda, k)?;
            for (d, p) in b.dates.iter().zip(&b.raw_prob) {
                if *d < end {
                    dates.push(*d);
                    raw.push(*p);
                    used.push(lambda);
                }
            }
        }
        Ok((dates, raw, used))
    }

    fn assemble(&self, asset: &str, dates: Vec<NaiveDate>, raw: Vec<f64>, used: Vec<f64>, halflife: u32) -> Result<RegimeForecastSeries> {
        let smoothed = ewm_mean(&raw, halflife as f64)?;
        Ok(RegimeForecastSeries {
            asset: asset.to_string(),
            forecast: classify(&smoothed, self.config.threshold),
            dates,
            raw_prob: raw,
            smoothed_prob: smoothed,
            lambda_used: used,
            smoothing_halflife: halflife,
        })
    }

    /// Forecasts over `window` (which must start on a refit date) under a
    /// fixed jump penalty.
    pub fn generate_forecasts(&self, asset: &str, lambda: f64, window: DateRange, halflife: u32) -> Result<RegimeForecastSeries> {
        let blocks = self.block_indices(window)?;
        let (dates, raw, used) = self.raw_series(asset, &|_| lambda, blocks, window.end)?;
        self.assemble(asset, dates, raw, used, halflife)
    }

    /// Annualized Sharpe ratio of the 0/1 strategy on `series`.
    pub fn zero_one_sharpe(&self, asset: &str, series: &RegimeForecastSeries) -> Result<Option<f64>> {
        let (j, data) = self.universe.asset(asset)?;
        let _ = j;
        let dates = self.universe.dates();
        let Some(first) = series.dates.first() else {
            return Ok(None);
        };
        let start = dates.partition_point(|d| d < first);
        let rows = start..start + series.dates.len();
        let rf = &self.universe.panel.risk_free()[rows.clone()];
        let strat = zero_one_strategy(&series.forecast, &data.returns[rows], rf, self.config.cost)?;
        let excess: Vec<f64> = strat.iter().zip(rf).map(|(s, r)| s - r).collect();
        Ok(sharpe_ratio(&excess))
    }

    fn validation_window(&self, k: i64) -> DateRange {
        DateRange {
            start: self.schedule.block_start(k - self.config.validation_blocks()),
            end: self.schedule.block_start(k),
        }
    }

    fn validation_sharpes(&self, asset: &str, k: i64, halflife: u32) -> Result<Vec<Option<f64>>> {
        let window = self.validation_window(k);
        self.config
            .lambda_grid
            .iter()
            .map(|&lambda| {
                let s = self.generate_forecasts(asset, lambda, window, halflife)?;
                self.zero_one_sharpe(asset, &s)
            })
            .collect()
    }

    /// Pick the jump penalty for the block starting at refit index `k`.
    pub fn select_lambda(&self, asset: &str, k: i64, halflife: u32) -> Result<LambdaSelection> {
        let sharpe = self.validation_sharpes(asset, k, halflife)?;
        let chosen = pick_lambda(&self.config.lambda_grid, &sharpe).ok_or_else(|| {
            Error::numerical(format!(
                "validation Sharpe undefined for every jump penalty ({asset}, refit {})",
                self.schedule.block_start(k)
            ))
        })?;
        Ok(LambdaSelection {
            asset: asset.to_string(),
            refit_date: self.schedule.block_start(k),
            grid: self.config.lambda_grid.clone(),
            sharpe,
            chosen,
        })
    }

    /// Smoothing halflife for an asset: the configured value, or the
    /// candidate whose best validation Sharpe (over λ) on the validation
    /// window before block `k` is highest. Ties go to the longer halflife.
    pub fn select_halflife(&self, asset: &str, k: i64) -> Result<(u32, Vec<(u32, Option<f64>)>)> {
        if let Some(&h) = self.config.smoothing_halflife.get(asset) {
            return Ok((h, Vec::new()));
        }
        let mut scores = Vec::new();
        for &h in &self.config.smoothing_candidates {
            let best = self
                .validation_sharpes(asset, k, h)?
                .into_iter()
                .flatten()
                .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
            scores.push((h, best));
        }
        let mut chosen: Option<(u32, f64)> = None;
        for &(h, s) in &scores {
            if let Some(s) = s {
                if chosen.map_or(true, |(ch, cs)| s > cs || (s == cs && h > ch)) {
                    chosen = Some((h, s));
                }
            }
        }
        let h = chosen
            .map(|c| c.0)
            .ok_or_else(|| Error::numerical(format!("no smoothing halflife has a defined validation Sharpe for {asset}")))?;
        Ok((h, scores))
    }

    /// Compute every `(asset, λ, block)` unit the stage will need, in parallel.
    fn warm(&self, assets: &[String], blocks: std::ops::Range<i64>) -> Result<()> {
        let lo = blocks.start - self.config.validation_blocks();
        let units: Vec<(String, f64, i64)> = assets
            .iter()
            .flat_map(|a| {
                (lo..blocks.end).flat_map(move |k| {
                    self.config.lambda_grid.iter().map(move |&l| (a.clone(), l, k))
                })
            })
            .collect();
        units
            .par_iter()
            .map(|(a, l, k)| self.block_forecast(a, *l, *k).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    /// Out-of-sample forecasts over `testing` for every asset, with λ
    /// re-selected at each refit.
    pub fn run_regime_stage(&self, assets: &[String], testing: DateRange) -> Result<RegimeStage> {
        if testing.start != self.schedule.anchor {
            return Err(Error::invalid("testing window must start at the schedule anchor"));
        }
        let blocks = 0..self.schedule.blocks_until(testing.end);
        self.check_history(self.validation_window(0).start)?;
        self.warm(assets, blocks.clone())?;
        let results = assets
            .par_iter()
            .map(|asset| self.asset_stage(asset, blocks.clone(), testing))
            .collect::<Result<Vec<_>>>()?;
        Ok(RegimeStage {
            testing_window: testing,
            assets: results,
        })
    }

    fn asset_stage(&self, asset: &str, blocks: std::ops::Range<i64>, testing: DateRange) -> Result<AssetRegimeForecast> {
        let (halflife, halflife_scores) = self.select_halflife(asset, blocks.start)?;
        let mut selections = Vec::new();
        let mut tables = Vec::new();
        for k in blocks.clone() {
            let sel = self.select_lambda(asset, k, halflife)?;
            let b = self.block_forecast(asset, sel.chosen, k)?;
            tables.push(RegimeTable {
                block_start: b.block_start,
                lambda: sel.chosen,
                means: RegimeMeans {
                    bull: b.bull_mean_excess,
                    bear: b.bear_mean_excess,
                },
            });
            selections.push(sel);
        }
        let chosen: Vec<f64> = selections.iter().map(|s| s.chosen).collect();
        let start = blocks.start;
        let (dates, raw, used) = self.raw_series(asset, &|k| chosen[(k - start) as usize], blocks, testing.end)?;
        let series = self.assemble(asset, dates, raw, used, halflife)?;
        Ok(AssetRegimeForecast {
            asset: asset.to_string(),
            smoothing_halflife: halflife,
            halflife_scores,
            selections,
            regime_tables: tables,
            series,
        })
    }
}

/// Argmax of the defined Sharpe ratios; ties go to the larger λ.
pub fn pick_lambda(grid: &[f64], sharpe: &[Option<f64>]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&l, s) in grid.iter().zip(sharpe) {
        if let Some(s) = *s {
            if best.map_or(true, |(bl, bs)| s > bs || (s == bs && l > bl)) {
                best = Some((l, s));
            }
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn lambda_grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 17);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert!((g[16] - 100.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_one_examples() {
        let r = [0.01, -0.02];
        let rf = [0.0, 0.0];
        let s = zero_one_strategy(&[true, false], &r, &rf, 0.0005).unwrap();
        assert!((s[0] - 0.0095).abs() < 1e-15);
        assert!((s[1] + 0.0005).abs() < 1e-15);
        assert_eq!(zero_one_strategy(&[true, true], &r, &rf, 0.0).unwrap(), r.to_vec());
        let rf = [0.0001, 0.0002];
        assert_eq!(zero_one_strategy(&[false, false], &r, &rf, 0.0005).unwrap(), rf.to_vec());
        assert!(zero_one_strategy(&[true], &r, &rf, 0.0).is_err());
    }

    #[test]
    fn pick_lambda_rules() {
        assert_eq!(pick_lambda(&[3.0], &[Some(0.1)]), Some(3.0));
        assert_eq!(pick_lambda(&[1.0, 2.0, 5.0], &[Some(0.5), Some(0.5), Some(0.2)]), Some(2.0));
        assert_eq!(pick_lambda(&[1.0, 2.0], &[Some(0.5), None]), Some(1.0));
        assert_eq!(pick_lambda(&[1.0, 2.0], &[None, None]), None);
    }

    #[test]
    fn schedule_blocks_partition_calendar() {
        let s = WalkForwardSchedule {
            anchor: d(2007, 1, 1),
            refit_months: 6,
            training_years: 11,
            validation_years: 5,
        };
        assert_eq!(s.block_start(1), d(2007, 7, 1));
        assert_eq!(s.block_start(-10), d(2002, 1, 1));
        assert_eq!(s.training_start(d(2007, 1, 1)), d(1996, 1, 1));
        assert_eq!(s.blocks_until(d(2008, 1, 2)), 3);
        for k in -12..12 {
            assert_eq!(s.block(k).end, s.block(k + 1).start);
        }
    }
}
