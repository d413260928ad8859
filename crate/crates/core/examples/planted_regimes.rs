//! Fit the walk-forward regime forecaster on a planted four-asset universe
//! and compare the 0/1 strategy with buy-and-hold.
//!
//! ```text
//! cargo run --release -p regime-alloc --example planted_regimes
//! ```

use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use regime_alloc::backtest::{max_drawdown, sharpe_ratio};
use regime_alloc::market_data::DateRange;
use regime_alloc::pipeline::{zero_one_strategy, ForecastCache, PipelineConfig, RegimeEngine, Universe};
use regime_alloc::synthgen::{generate, RegimeProcessSpec};

fn wealth(r: &[f64]) -> Vec<f64> {
    let mut w = vec![1.0];
    for x in r {
        w.push(w.last().unwrap() * (1.0 + x));
    }
    w
}

fn main() -> regime_alloc::Result<()> {
    let data = generate(&RegimeProcessSpec::planted(4, 7))?;
    let config = PipelineConfig::default();
    let universe = Universe::new(data.panel.clone(), &data.macro_panel, &config.exclude_dd)?;
    let first = universe.dates()[0];
    let anchor = NaiveDate::from_ymd_opt(first.year() + 16, first.month() + 1, 1).unwrap();
    let end = *universe.dates().last().unwrap() + chrono::Duration::days(1);
    let testing = DateRange::new(anchor, end)?;

    let cache = ForecastCache::in_memory();
    let engine = RegimeEngine::new(&universe, config.clone(), anchor, &cache)?;
    let started = Instant::now();
    let stage = engine.run_regime_stage(universe.asset_names(), testing)?;
    println!("regime stage: {:.1?}, {} block fits", started.elapsed(), cache.len());

    let rows = testing.index_range(universe.dates());
    let rf = &universe.panel().risk_free()[rows.clone()];
    for (j, f) in stage.assets.iter().enumerate() {
        let r = &universe.panel().asset_returns(j)[rows.clone()];
        let zo = zero_one_strategy(&f.series.forecast, r, rf, config.cost)?;
        let ex = |x: &[f64]| x.iter().zip(rf).map(|(a, b)| a - b).collect::<Vec<_>>();
        let truth = &data.states[j][rows.clone()];
        let hit = f.series.forecast.iter().zip(truth).filter(|(f, s)| **f == (**s == 0)).count();
        println!(
            "{}: hl={} lambdas={:?} accuracy={:.3} | 0/1 sharpe={:.2} mdd={:.3} | b&h sharpe={:.2} mdd={:.3}",
            f.asset,
            f.smoothing_halflife,
            f.selections.iter().map(|s| s.chosen).collect::<Vec<_>>(),
            hit as f64 / truth.len() as f64,
            sharpe_ratio(&ex(&zo)).unwrap_or(f64::NAN),
            max_drawdown(&wealth(&zo)),
            sharpe_ratio(&ex(r)).unwrap_or(f64::NAN),
            max_drawdown(&wealth(r)),
        );
    }
    Ok(())
}
