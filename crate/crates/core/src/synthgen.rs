//! Synthetic regime-switching universes with known states.
//!
//! Each asset follows its own two-state Markov chain; daily returns are
//! Gaussian with state-dependent mean and volatility and equicorrelated
//! shocks across assets. Macro series drift with the share of assets in
//! the bearish state, so macro features carry signal.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jump_model::{BEARISH, BULLISH};
use crate::linalg::{cholesky, Matrix};
use crate::market_data::{annual_to_daily, write_risk_free_csv, MacroPanel, ReturnPanel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    /// Daily mean return.
    pub mean: f64,
    /// Daily volatility.
    pub volatility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetProcess {
    pub name: String,
    pub p_stay_bull: f64,
    pub p_stay_bear: f64,
    pub bull: StateParams,
    pub bear: StateParams,
    /// Initial state; drawn from the stationary distribution when absent.
    #[serde(default)]
    pub start_bullish: Option<bool>,
}

impl AssetProcess {
    /// Long-run fraction of days in the bullish state.
    pub fn stationary_bull(&self) -> f64 {
        let leave_bull = 1.0 - self.p_stay_bull;
        let leave_bear = 1.0 - self.p_stay_bear;
        if leave_bull + leave_bear == 0.0 {
            return if self.start_bullish == Some(false) { 0.0 } else { 1.0 };
        }
        leave_bear / (leave_bull + leave_bear)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeProcessSpec {
    pub assets: Vec<AssetProcess>,
    /// Pairwise correlation of the return shocks.
    pub correlation: f64,
    /// Constant risk-free yield, annual percent.
    pub risk_free_annual_percent: f64,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl RegimeProcessSpec {
    /// `n_assets` identical assets: bull +0.04%/day at 0.8% volatility,
    /// bear −0.08%/day at 2.0%, staying probabilities 0.98 and 0.97,
    /// twenty years of business days.
    pub fn planted(n_assets: usize, seed: u64) -> Self {
        let assets = (0..n_assets)
            .map(|j| AssetProcess {
                name: format!("asset{}", j + 1),
                p_stay_bull: 0.98,
                p_stay_bear: 0.97,
                bull: StateParams {
                    mean: 0.0004,
                    volatility: 0.008,
                },
                bear: StateParams {
                    mean: -0.0008,
                    volatility: 0.020,
                },
                start_bullish: None,
            })
            .collect();
        RegimeProcessSpec {
            assets,
            correlation: 0.3,
            risk_free_annual_percent: 2.0,
            n_days: 20 * 252,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.assets.is_empty() || self.n_days < 2 {
            return Err(Error::invalid("need at least one asset and two days"));
        }
        for a in &self.assets {
            let probs_ok = [a.p_stay_bull, a.p_stay_bear].iter().all(|p| (0.0..=1.0).contains(p));
            if !probs_ok {
                return Err(Error::invalid(format!("{}: staying probabilities must lie in [0, 1]", a.name)));
            }
            if !(a.bull.volatility > 0.0) || !(a.bear.volatility > 0.0) {
                return Err(Error::invalid(format!("{}: volatilities must be > 0", a.name)));
            }
            if !a.bull.mean.is_finite() || !a.bear.mean.is_finite() {
                return Err(Error::invalid(format!("{}: means must be finite", a.name)));
            }
        }
        let n = self.assets.len() as f64;
        if !(self.correlation < 1.0) || (n > 1.0 && !(self.correlation > -1.0 / (n - 1.0))) {
            return Err(Error::invalid(format!(
                "correlation {} does not give a positive definite matrix",
                self.correlation
            )));
        }
        if !self.risk_free_annual_percent.is_finite() || self.risk_free_annual_percent <= -100.0 {
            return Err(Error::invalid("invalid risk-free rate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUniverse {
    pub panel: ReturnPanel,
    /// Planted states per asset ([`BULLISH`] or [`BEARISH`]).
    pub states: Vec<Vec<usize>>,
    pub macro_panel: MacroPanel,
    pub risk_free_annual_percent: Vec<f64>,
}

/// `n` consecutive weekdays from `start` (rolled forward off weekends).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut d = start;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn simulate_chain(a: &AssetProcess, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut bull = match a.start_bullish {
        Some(b) => b,
        None => rng.gen::<f64>() < a.stationary_bull(),
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(if bull { BULLISH } else { BEARISH });
        let stay = if bull { a.p_stay_bull } else { a.p_stay_bear };
        if rng.gen::<f64>() >= stay {
            bull = !bull;
        }
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulate a universe. Deterministic in `spec.seed`.
pub fn generate(spec: &RegimeProcessSpec) -> Result<SyntheticUniverse> {
    spec.validate()?;
    let n = spec.assets.len();
    let t_len = spec.n_days;
    let dates = business_days(spec.start_date, t_len);

    let states: Vec<Vec<usize>> = spec
        .assets
        .iter()
        .enumerate()
        .map(|(j, a)| simulate_chain(a, t_len, &mut rng(spec.seed, 1 + j as u64)))
        .collect();

    let mut corr = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                corr[(i, j)] = spec.correlation;
            }
        }
    }
    let chol = cholesky(&corr)?;
    let mut shocks_rng = rng(spec.seed, 0);
    let mut returns = Matrix::zeros(t_len, n);
    let mut eps = vec![0.0; n];
    for t in 0..t_len {
        eps.iter_mut().for_each(|e| *e = normal(&mut shocks_rng));
        let z = chol.mul_vec(&eps);
        for (j, a) in spec.assets.iter().enumerate() {
            let p = if states[j][t] == BULLISH { a.bull } else { a.bear };
            // keep simple returns above -1 under extreme draws
            returns[(t, j)] = (p.mean + p.volatility * z[j]).max(-0.95);
        }
    }

    let rf_pct = vec![spec.risk_free_annual_percent; t_len];
    let rf_daily: Vec<f64> = rf_pct.iter().map(|p| annual_to_daily(p / 100.0)).collect();
    let names = spec.assets.iter().map(|a| a.name.clone()).collect();
    let panel = ReturnPanel::new(dates.clone(), names, returns, rf_daily)?;
    let macro_panel = macro_stub(&dates, &states, &panel, &mut rng(spec.seed, u64::MAX));
    macro_panel.validate()?;
    Ok(SyntheticUniverse {
        panel,
        states,
        macro_panel,
        risk_free_annual_percent: rf_pct,
    })
}

fn macro_stub(dates: &[NaiveDate], states: &[Vec<usize>], panel: &ReturnPanel, rng: &mut ChaCha8Rng) -> MacroPanel {
    let t_len = dates.len();
    let n = states.len() as f64;
    let mut m = MacroPanel {
        dates: dates.to_vec(),
        yield_2y: Vec::with_capacity(t_len),
        yield_slope_10y_2y: Vec::with_capacity(t_len),
        vix_level: Vec::with_capacity(t_len),
        stock_returns: Vec::with_capacity(t_len),
        bond_returns: Vec::with_capacity(t_len),
    };
    let (mut y2, mut slope, mut log_vix) = (3.0, 1.0, 16f64.ln());
    for t in 0..t_len {
        let bear_share = states.iter().filter(|s| s[t] == BEARISH).count() as f64 / n;
        y2 += 0.002 * (3.0 - y2) + 0.003 - 0.009 * bear_share + 0.03 * normal(rng);
        slope += 0.01 * (0.5 + 1.5 * bear_share - slope) + 0.02 * normal(rng);
        log_vix += 0.05 * ((14.0 + 16.0 * bear_share).ln() - log_vix) + 0.03 * normal(rng);
        let stock = panel.returns().row(t).iter().sum::<f64>() / n;
        let bond = 0.0002 + (0.3 - 0.8 * bear_share) * stock + 0.002 * normal(rng);
        m.yield_2y.push(y2);
        m.yield_slope_10y_2y.push(slope);
        m.vix_level.push(log_vix.exp());
        m.stock_returns.push(stock);
        m.bond_returns.push(bond);
    }
    m
}

impl SyntheticUniverse {
    /// Write `returns.csv`, `riskfree.csv`, `macro.csv` and
    /// `truth_states.csv` into `dir`, creating it if needed.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.panel.write_returns_csv(&dir.join("returns.csv"))?;
        write_risk_free_csv(&dir.join("riskfree.csv"), self.panel.dates(), &self.risk_free_annual_percent)?;
        self.macro_panel.write_csv(&dir.join("macro.csv"))?;
        self.write_states_csv(&dir.join("truth_states.csv"))
    }

    /// `date,<asset>...` with `bull` / `bear` cells.
    pub fn write_states_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.panel.assets().iter().cloned());
        w.write_record(&header)?;
        for (t, d) in self.panel.dates().iter().enumerate() {
            let mut rec = vec![d.to_string()];
            rec.extend(
                self.states
                    .iter()
                    .map(|s| if s[t] == BULLISH { "bull" } else { "bear" }.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fraction of days each asset spent bullish.
    pub fn bull_occupancy(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| s.iter().filter(|&&x| x == BULLISH).count() as f64 / s.len() as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn long_spec(seed: u64) -> RegimeProcessSpec {
        let mut s = RegimeProcessSpec::planted(1, seed);
        s.n_days = 50_000;
        s
    }

    fn run_lengths(states: &[usize], which: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut len = 0;
        for &s in states {
            if s == which {
                len += 1;
            } else if len > 0 {
                out.push(len);
                len = 0;
            }
        }
        out
    }

    #[test]
    fn occupancy_matches_stationary_distribution() {
        let u = generate(&long_spec(7)).unwrap();
        // (1 - 0.97) / ((1 - 0.98) + (1 - 0.97))
        let pi = 0.03 / 0.05;
        assert!((u.bull_occupancy()[0] - pi).abs() < 0.02);
    }

    #[test]
    fn run_lengths_match_geometric_mean() {
        let u = generate(&long_spec(11)).unwrap();
        for (state, p) in [(BULLISH, 0.98), (BEARISH, 0.97)] {
            let runs = run_lengths(&u.states[0], state);
            let mean = runs.iter().sum::<usize>() as f64 / runs.len() as f64;
            let expected = 1.0 / (1.0 - p);
            assert!((mean / expected - 1.0).abs() < 0.10, "state {state}: {mean} vs {expected}");
        }
    }

    #[test]
    fn per_state_moments_converge() {
        let spec = long_spec(3);
        let u = generate(&spec).unwrap();
        let r = u.panel.asset_returns(0);
        for (state, p) in [(BULLISH, spec.assets[0].bull), (BEARISH, spec.assets[0].bear)] {
            let x: Vec<f64> = r.iter().zip(&u.states[0]).filter(|(_, s)| **s == state).map(|(v, _)| *v).collect();
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((mean - p.mean).abs() < 3.0 * p.volatility / n.sqrt());
            // standard error of a normal sample standard deviation
            assert!((sd - p.volatility).abs() < 3.0 * p.volatility / (2.0 * (n - 1.0)).sqrt());
        }
    }

    #[test]
    fn absorbing_bull_chain() {
        let mut spec = RegimeProcessSpec::planted(2, 1);
        spec.n_days = 500;
        for a in &mut spec.assets {
            a.p_stay_bull = 1.0;
            a.start_bullish = Some(true);
        }
        let u = generate(&spec).unwrap();
        assert!(u.states.iter().all(|s| s.iter().all(|&x| x == BULLISH)));
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = RegimeProcessSpec::planted(3, 42);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 43;
        assert_ne!(generate(&spec).unwrap().panel, generate(&other).unwrap().panel);
    }

    #[test]
    fn shocks_are_correlated() {
        let mut spec = RegimeProcessSpec::planted(2, 5);
        spec.n_days = 20_000;
        for a in &mut spec.assets {
            a.p_stay_bull = 1.0;
            a.start_bullish = Some(true);
        }
        let u = generate(&spec).unwrap();
        let c = crate::market_data::pearson(&u.panel.asset_returns(0), &u.panel.asset_returns(1)).unwrap();
        assert!((c - 0.3).abs() < 0.03);
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
        assert!(d.iter().all(|x| x.weekday().number_from_monday() <= 5));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = RegimeProcessSpec::planted(3, 0);
        s.correlation = -0.6;
        assert!(generate(&s).is_err());
        let mut s = RegimeProcessSpec::planted(1, 0);
        s.assets[0].bear.volatility = 0.0;
        assert!(generate(&s).is_err());
        let mut s = RegimeProcessSpec::planted(1, 0);
        s.assets[0].p_stay_bull = 1.2;
        assert!(generate(&s).is_err());
    }
}
