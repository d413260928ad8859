//! TOML run configuration.
//!
//! Every field has a default, so an empty file is a valid configuration
//! for the standard twelve-asset study. Relative paths are resolved
//! against the directory of the configuration file.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use regime_alloc::allocation::{StrategyKind, StrategySpec};
use regime_alloc::gbdt::Hyperparameters;
use regime_alloc::market_data::{IngestOptions, RateUnits, ValueKind};
use regime_alloc::pipeline::{default_lambda_grid, PipelineConfig};
use regime_alloc::synthgen::{AssetProcess, RegimeProcessSpec, StateParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// File name of the configuration snapshot written by every command.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// One-way proportional trading cost.
    pub cost: f64,
    pub output_dir: PathBuf,
    /// Persistent forecast cache; in-memory only when absent.
    pub cache_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub regime: RegimeConfig,
    /// Strategies to backtest; the seven-strategy comparison when absent.
    pub strategies: Option<Vec<StrategyEntry>>,
    pub sensitivity: SensitivityConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            cost: 0.0005,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            regime: RegimeConfig::default(),
            strategies: None,
            sensitivity: SensitivityConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub returns: PathBuf,
    /// Separate risk-free file; otherwise the column lives in `returns`.
    pub risk_free: Option<PathBuf>,
    pub risk_free_column: String,
    pub risk_free_units: RateUnits,
    pub kind: ValueKind,
    #[serde(rename = "macro")]
    pub macro_path: PathBuf,
    /// Subset of asset columns to use; all when empty.
    pub assets: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            returns: PathBuf::from("data/returns.csv"),
            risk_free: Some(PathBuf::from("data/riskfree.csv")),
            risk_free_column: "risk_free".into(),
            risk_free_units: RateUnits::AnnualPercent,
            kind: ValueKind::Returns,
            macro_path: PathBuf::from("data/macro.csv"),
            assets: Vec::new(),
        }
    }
}

impl DataConfig {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            kind: self.kind,
            risk_free_column: self.risk_free_column.clone(),
            risk_free_path: self.risk_free.clone(),
            risk_free_units: self.risk_free_units,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub training_years: u32,
    pub validation_years: u32,
    pub refit_months: u32,
    /// First out-of-sample day. Defaults to the first month start that
    /// leaves a full training and validation history.
    pub testing_start: Option<NaiveDate>,
    /// Exclusive end of the out-of-sample window; the day after the last
    /// observation by default.
    pub testing_end: Option<NaiveDate>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            training_years: 11,
            validation_years: 5,
            refit_months: 6,
            testing_start: None,
            testing_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub lambda_grid: Vec<f64>,
    pub smoothing_candidates: Vec<u32>,
    pub smoothing_halflife: BTreeMap<String, u32>,
    pub exclude_dd: Vec<String>,
    pub threshold: f64,
    pub jm_restarts: usize,
    pub jm_max_iter: usize,
    pub gbdt: Hyperparameters,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RegimeConfig {
            lambda_grid: default_lambda_grid(),
            smoothing_candidates: p.smoothing_candidates,
            smoothing_halflife: p.smoothing_halflife,
            exclude_dd: p.exclude_dd,
            threshold: p.threshold,
            jm_restarts: p.jm_restarts,
            jm_max_iter: p.jm_max_iter,
            gbdt: p.gbdt,
        }
    }
}

/// One `[[strategies]]` table. Unset fields take the defaults of `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_risk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_trade: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_ub: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leverage_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_bullish_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_halflife: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_halflife: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearish_return_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bullish_minvar_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_mix_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset: Option<String>,
}

impl StrategyEntry {
    pub fn from_kind(kind: StrategyKind) -> Self {
        StrategyEntry {
            kind,
            name: None,
            gamma_risk: None,
            gamma_trade: None,
            w_ub: None,
            leverage_cap: None,
            min_bullish_count: None,
            covariance_halflife: None,
            mean_halflife: None,
            bearish_return_cap: None,
            bullish_minvar_mu: None,
            fix_mix_weights: None,
            asset: None,
        }
    }

    pub fn to_spec(&self) -> StrategySpec {
        let mut s = StrategySpec::new(self.kind);
        if let Some(v) = &self.name {
            s.name = v.clone();
        } else if let (StrategyKind::ZeroOne, Some(a)) = (self.kind, &self.asset) {
            s.name = format!("0/1 {a}");
        }
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { s.$f = v; } )* };
        }
        apply!(
            gamma_risk,
            gamma_trade,
            w_ub,
            leverage_cap,
            min_bullish_count,
            covariance_halflife,
            mean_halflife,
            bearish_return_cap,
            bullish_minvar_mu
        );
        if self.fix_mix_weights.is_some() {
            s.fix_mix_weights = self.fix_mix_weights.clone();
        }
        if self.asset.is_some() {
            s.asset = self.asset.clone();
        }
        s
    }

    /// Entry with every field spelled out.
    pub fn from_spec(s: &StrategySpec) -> Self {
        StrategyEntry {
            kind: s.kind,
            name: Some(s.name.clone()),
            gamma_risk: Some(s.gamma_risk),
            gamma_trade: Some(s.gamma_trade),
            w_ub: Some(s.w_ub),
            leverage_cap: Some(s.leverage_cap),
            min_bullish_count: Some(s.min_bullish_count),
            covariance_halflife: Some(s.covariance_halflife),
            mean_halflife: Some(s.mean_halflife),
            bearish_return_cap: Some(s.bearish_return_cap),
            bullish_minvar_mu: Some(s.bullish_minvar_mu),
            fix_mix_weights: s.fix_mix_weights.clone(),
            asset: s.asset.clone(),
        }
    }
}

/// Extra runs of the regime-based optimizer strategies with one
/// aversion parameter varied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub enabled: bool,
    /// `gamma_trade` values for MinVar (JM-XGB).
    pub trade_aversion: Vec<f64>,
    /// `gamma_risk` values for MV (JM-XGB).
    pub risk_aversion: Vec<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            enabled: false,
            trade_aversion: vec![0.0, 1.0],
            risk_aversion: vec![5.0, 10.0, 20.0],
        }
    }
}

/// Planted-regime universe written by `simulate`; every asset shares the
/// same chain and state parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub output_dir: PathBuf,
    /// Overrides the top-level seed for data generation.
    pub seed: Option<u64>,
    pub n_assets: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub correlation: f64,
    pub risk_free_annual_percent: f64,
    pub p_stay_bull: f64,
    pub p_stay_bear: f64,
    pub bull_mean: f64,
    pub bull_volatility: f64,
    pub bear_mean: f64,
    pub bear_volatility: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let p = RegimeProcessSpec::planted(4, 0);
        let a = &p.assets[0];
        SimulateConfig {
            output_dir: PathBuf::from("data"),
            seed: None,
            n_assets: p.assets.len(),
            n_days: p.n_days,
            start_date: p.start_date,
            correlation: p.correlation,
            risk_free_annual_percent: p.risk_free_annual_percent,
            p_stay_bull: a.p_stay_bull,
            p_stay_bear: a.p_stay_bear,
            bull_mean: a.bull.mean,
            bull_volatility: a.bull.volatility,
            bear_mean: a.bear.mean,
            bear_volatility: a.bear.volatility,
        }
    }
}

impl SimulateConfig {
    pub fn process_spec(&self, seed: u64) -> RegimeProcessSpec {
        let assets = (0..self.n_assets)
            .map(|j| AssetProcess {
                name: format!("asset{}", j + 1),
                p_stay_bull: self.p_stay_bull,
                p_stay_bear: self.p_stay_bear,
                bull: StateParams {
                    mean: self.bull_mean,
                    volatility: self.bull_volatility,
                },
                bear: StateParams {
                    mean: self.bear_mean,
                    volatility: self.bear_volatility,
                },
                start_bullish: None,
            })
            .collect();
        RegimeProcessSpec {
            assets,
            correlation: self.correlation,
            risk_free_annual_percent: self.risk_free_annual_percent,
            n_days: self.n_days,
            start_date: self.start_date,
            seed: self.seed.unwrap_or(seed),
        }
    }
}

impl RunConfig {
    /// Parse a configuration file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Make every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        let fix = |p: &mut PathBuf| *p = normalize(&base.join(&*p));
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
        fix(&mut self.data.returns);
        if let Some(p) = &mut self.data.risk_free {
            fix(p);
        }
        fix(&mut self.data.macro_path);
        fix(&mut self.simulate.output_dir);
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let r = &self.regime;
        PipelineConfig {
            training_years: self.schedule.training_years,
            validation_years: self.schedule.validation_years,
            refit_months: self.schedule.refit_months,
            lambda_grid: r.lambda_grid.clone(),
            smoothing_candidates: r.smoothing_candidates.clone(),
            smoothing_halflife: r.smoothing_halflife.clone(),
            exclude_dd: r.exclude_dd.clone(),
            threshold: r.threshold,
            cost: self.cost,
            jm_restarts: r.jm_restarts,
            jm_max_iter: r.jm_max_iter,
            seed: self.seed,
            gbdt: r.gbdt.clone(),
        }
    }

    /// Configured strategies, or the seven-strategy comparison.
    pub fn strategy_specs(&self) -> Result<Vec<StrategySpec>, CliError> {
        let specs: Vec<StrategySpec> = match &self.strategies {
            None => StrategySpec::default_set(),
            Some(entries) => entries.iter().map(StrategyEntry::to_spec).collect(),
        };
        if specs.is_empty() {
            return Err(CliError::Config("no strategies configured".into()));
        }
        Ok(specs)
    }

    /// Strategies plus the sensitivity variants, with unique names.
    pub fn all_strategy_specs(&self) -> Result<Vec<StrategySpec>, CliError> {
        let mut specs = self.strategy_specs()?;
        if self.sensitivity.enabled {
            let base = |kind: StrategyKind| {
                specs
                    .iter()
                    .find(|s| s.kind == kind)
                    .cloned()
                    .unwrap_or_else(|| StrategySpec::new(kind))
            };
            let minvar = base(StrategyKind::MinvarRegime);
            let mv = base(StrategyKind::MvRegime);
            let mut extra = Vec::new();
            for &g in &self.sensitivity.trade_aversion {
                let mut s = minvar.clone();
                s.gamma_trade = g;
                s.name = format!("{} [gamma_trade={g}]", minvar.name);
                extra.push(s);
            }
            for &g in &self.sensitivity.risk_aversion {
                let mut s = mv.clone();
                s.gamma_risk = g;
                s.name = format!("{} [gamma_risk={g}]", mv.name);
                extra.push(s);
            }
            specs.extend(extra);
        }
        let mut names = HashSet::new();
        let mut slugs = HashSet::new();
        for s in &specs {
            if !names.insert(s.name.clone()) || !slugs.insert(slug(&s.name)) {
                return Err(CliError::Config(format!("duplicate strategy name {:?}", s.name)));
            }
        }
        Ok(specs)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.cost >= 0.0) || !self.cost.is_finite() {
            return Err(CliError::Config("cost must be finite and >= 0".into()));
        }
        self.pipeline_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let (Some(a), Some(b)) = (self.schedule.testing_start, self.schedule.testing_end) {
            if a >= b {
                return Err(CliError::Config("testing_start must precede testing_end".into()));
            }
        }
        let s = &self.sensitivity;
        if s.trade_aversion.iter().any(|g| !(*g >= 0.0)) || s.risk_aversion.iter().any(|g| !(*g > 0.0)) {
            return Err(CliError::Config("sensitivity values must be >= 0 (trade) and > 0 (risk)".into()));
        }
        self.all_strategy_specs()?;
        Ok(())
    }

    /// Copy with every default spelled out, as written to
    /// [`RESOLVED_CONFIG`].
    pub fn resolved(&self) -> Result<RunConfig, CliError> {
        let mut cfg = self.clone();
        cfg.strategies = Some(self.strategy_specs()?.iter().map(StrategyEntry::from_spec).collect());
        Ok(cfg)
    }
}

/// Lexically drop `.` and fold `..` components.
fn normalize(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push(c);
                }
            }
            other => out.push(other),
        }
    }
    out
}

/// File-name form of a strategy name.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}
