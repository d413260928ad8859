//! Strategy definitions and the daily mapping from regime forecasts to
//! target weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mvo::{self, MvoProblem};
use crate::pipeline::RegimeMeans;

/// Asset order of [`fix_mix_default`].
pub const DEFAULT_UNIVERSE: [&str; 12] = [
    "LargeCap", "MidCap", "SmallCap", "EAFE", "EM", "REIT", "HighYield", "Commodity", "Gold", "Treasury",
    "Corporate", "AggBond",
];

/// 60/40 benchmark weights over [`DEFAULT_UNIVERSE`].
pub fn fix_mix_default() -> Vec<f64> {
    vec![0.10, 0.05, 0.05, 0.05, 0.05, 0.10, 0.10, 0.05, 0.05, 0.10, 0.10, 0.20]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FixMix,
    Minvar,
    MinvarRegime,
    Mv,
    MvRegime,
    Ew,
    EwRegime,
    /// All-in one asset when bullish, risk-free otherwise.
    ZeroOne,
}

impl StrategyKind {
    pub fn uses_regimes(self) -> bool {
        matches!(
            self,
            StrategyKind::MinvarRegime | StrategyKind::MvRegime | StrategyKind::EwRegime | StrategyKind::ZeroOne
        )
    }

    pub fn uses_optimizer(self) -> bool {
        matches!(
            self,
            StrategyKind::Minvar | StrategyKind::MinvarRegime | StrategyKind::Mv | StrategyKind::MvRegime
        )
    }

    fn default_name(self) -> &'static str {
        match self {
            StrategyKind::FixMix => "60/40",
            StrategyKind::Minvar => "MinVar",
            StrategyKind::MinvarRegime => "MinVar (JM-XGB)",
            StrategyKind::Mv => "MV",
            StrategyKind::MvRegime => "MV (JM-XGB)",
            StrategyKind::Ew => "EW",
            StrategyKind::EwRegime => "EW (JM-XGB)",
            StrategyKind::ZeroOne => "0/1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    pub kind: StrategyKind,
    pub gamma_risk: f64,
    pub gamma_trade: f64,
    pub w_ub: f64,
    pub leverage_cap: f64,
    /// Fewer bullish assets than this sends a regime strategy to cash.
    pub min_bullish_count: usize,
    pub covariance_halflife: f64,
    /// Halflife of the EWM expected-return estimate of plain MV.
    pub mean_halflife: f64,
    pub bearish_return_cap: f64,
    pub bullish_minvar_mu: f64,
    pub fix_mix_weights: Option<Vec<f64>>,
    /// Traded asset of a [`StrategyKind::ZeroOne`] strategy.
    pub asset: Option<String>,
}

impl StrategySpec {
    /// Named defaults for `kind`.
    pub fn new(kind: StrategyKind) -> Self {
        let (gamma_risk, gamma_trade) = match kind {
            StrategyKind::Mv => (5.0, 0.0),
            StrategyKind::Minvar => (10.0, 0.0),
            StrategyKind::MinvarRegime | StrategyKind::MvRegime => (10.0, 1.0),
            _ => (0.0, 0.0),
        };
        let (w_ub, leverage_cap) = if kind.uses_optimizer() { (0.4, 1.0) } else { (1.0, 1.0) };
        StrategySpec {
            name: kind.default_name().to_string(),
            kind,
            gamma_risk,
            gamma_trade,
            w_ub,
            leverage_cap,
            min_bullish_count: 4,
            covariance_halflife: 252.0,
            mean_halflife: 5.0 * 252.0,
            bearish_return_cap: -0.0010,
            bullish_minvar_mu: 0.0010,
            fix_mix_weights: None,
            asset: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// The seven strategies of the main comparison, in table order.
    pub fn default_set() -> Vec<StrategySpec> {
        [
            StrategyKind::FixMix,
            StrategyKind::Minvar,
            StrategyKind::MinvarRegime,
            StrategyKind::Mv,
            StrategyKind::MvRegime,
            StrategyKind::Ew,
            StrategyKind::EwRegime,
        ]
        .into_iter()
        .map(StrategySpec::new)
        .collect()
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        let ctx = |m: &str| Error::invalid(format!("strategy {:?}: {m}", self.name));
        if !(self.w_ub > 0.0) || !(self.leverage_cap > 0.0) || self.w_ub > self.leverage_cap + 1e-12 {
            return Err(ctx("bounds must satisfy 0 < w_ub <= leverage_cap"));
        }
        if self.kind.uses_optimizer() && !(self.gamma_risk > 0.0) {
            return Err(ctx("gamma_risk must be > 0"));
        }
        if !(self.gamma_trade >= 0.0) {
            return Err(ctx("gamma_trade must be >= 0"));
        }
        if matches!(self.kind, StrategyKind::Ew | StrategyKind::EwRegime) && (self.w_ub < 1.0 || self.leverage_cap < 1.0) {
            return Err(ctx("equal-weight strategies require w_ub = leverage_cap = 1"));
        }
        if self.kind == StrategyKind::FixMix {
            self.fix_mix(n_assets)?;
        }
        if self.kind == StrategyKind::ZeroOne && self.asset.is_none() {
            return Err(ctx("zero_one needs an asset"));
        }
        Ok(())
    }

    /// Configured fix-mix weights, or the 12-asset default.
    pub fn fix_mix(&self, n_assets: usize) -> Result<Vec<f64>> {
        let w = match &self.fix_mix_weights {
            Some(w) => w.clone(),
            None if n_assets == DEFAULT_UNIVERSE.len() => fix_mix_default(),
            None => {
                return Err(Error::invalid(format!(
                    "strategy {:?}: default fix-mix weights need the 12-asset universe, got {n_assets} assets",
                    self.name
                )))
            }
        };
        if w.len() != n_assets {
            return Err(Error::DimensionMismatch {
                expected: n_assets,
                found: w.len(),
            });
        }
        if w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() > self.leverage_cap + 1e-9 {
            return Err(Error::invalid(format!("strategy {:?}: infeasible fix-mix weights", self.name)));
        }
        Ok(w)
    }
}

/// Expected excess returns for an optimizer strategy.
///
/// `regime_means[j]` is the regime table of asset `j` from its latest fit;
/// `ewm_mu` is the long-halflife historical mean used by plain MV.
pub fn build_mu(
    spec: &StrategySpec,
    bullish: &[bool],
    regime_means: &[Option<RegimeMeans>],
    ewm_mu: &[f64],
) -> Result<Vec<f64>> {
    let n = bullish.len();
    match spec.kind {
        StrategyKind::Minvar => Ok(vec![spec.bullish_minvar_mu; n]),
        StrategyKind::MinvarRegime => Ok(bullish
            .iter()
            .map(|&b| if b { spec.bullish_minvar_mu } else { 0.0 })
            .collect()),
        StrategyKind::Mv => {
            if ewm_mu.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: ewm_mu.len(),
                });
            }
            Ok(ewm_mu.to_vec())
        }
        StrategyKind::MvRegime => {
            if regime_means.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: regime_means.len(),
                });
            }
            bullish
                .iter()
                .zip(regime_means)
                .enumerate()
                .map(|(j, (&b, table))| {
                    let t = table.ok_or_else(|| Error::data(format!("no regime table for asset {j}")))?;
                    // a regime absent from the training fit contributes nothing
                    Ok(if b {
                        t.bull.unwrap_or(0.0)
                    } else {
                        t.bear.map_or(spec.bearish_return_cap, |m| m.min(spec.bearish_return_cap))
                    })
                })
                .collect()
        }
        _ => Err(Error::invalid(format!(
            "strategy {:?} does not use expected returns",
            spec.name
        ))),
    }
}

/// Target weights for one day. `sigma` and `mu` are needed by optimizer
/// strategies only; `asset` is the traded index of a 0/1 strategy.
pub fn target_weights(
    spec: &StrategySpec,
    mu: Option<&[f64]>,
    sigma: Option<&Matrix>,
    w_pre: &[f64],
    bullish: &[bool],
    cost_a: f64,
    asset: Option<usize>,
) -> Result<Vec<f64>> {
    let n = w_pre.len();
    if spec.kind.uses_regimes() && bullish.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bullish.len(),
        });
    }
    let n_bull = bullish.iter().filter(|&&b| b).count();
    if spec.kind.uses_regimes() && spec.kind != StrategyKind::ZeroOne && n_bull < spec.min_bullish_count {
        return Ok(vec![0.0; n]);
    }
    match spec.kind {
        StrategyKind::FixMix => spec.fix_mix(n),
        StrategyKind::Ew => Ok(vec![1.0 / n as f64; n]),
        StrategyKind::EwRegime => {
            let w = 1.0 / n_bull as f64;
            Ok(bullish.iter().map(|&b| if b { w } else { 0.0 }).collect())
        }
        StrategyKind::ZeroOne => {
            let j = asset.ok_or_else(|| Error::invalid("zero_one needs an asset index"))?;
            let mut w = vec![0.0; n];
            if bullish[j] {
                w[j] = 1.0;
            }
            Ok(w)
        }
        _ => {
            let mu = mu.ok_or_else(|| Error::invalid("optimizer strategy without expected returns"))?;
            let sigma = sigma.ok_or_else(|| Error::invalid("optimizer strategy without covariance"))?;
            let problem = MvoProblem {
                mu: mu.to_vec(),
                sigma: sigma.clone(),
                gamma_risk: spec.gamma_risk,
                gamma_trade: spec.gamma_trade,
                cost_a,
                w_pre: w_pre.to_vec(),
                w_ub: spec.w_ub,
                leverage_cap: spec.leverage_cap,
            };
            let sol = mvo::solve(&problem)?;
            if !sol.converged {
                return Err(Error::numerical(format!(
                    "strategy {:?}: optimizer did not converge (KKT residual {:.3e})",
                    spec.name, sol.kkt_residual
                )));
            }
            Ok(sol.weights)
        }
    }
}
