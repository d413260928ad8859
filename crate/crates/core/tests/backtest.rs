use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regime_alloc::allocation::{StrategyKind, StrategySpec};
use regime_alloc::backtest::{compute_metrics, forecast_return_correlation, replay, run, BacktestResult};
use regime_alloc::market_data::{DateRange, ReturnPanel};
use regime_alloc::synthgen::business_days;
use regime_alloc::Matrix;

fn panel(returns: Vec<Vec<f64>>, rf: Vec<f64>) -> ReturnPanel {
    let t = returns.len();
    let n = returns[0].len();
    let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), t);
    let assets = (0..n).map(|j| format!("a{j}")).collect();
    ReturnPanel::new(dates, assets, Matrix::from_rows(&returns).unwrap(), rf).unwrap()
}

fn all_days(p: &ReturnPanel) -> DateRange {
    DateRange::new(p.dates()[0], *p.dates().last().unwrap() + chrono::Duration::days(1)).unwrap()
}

fn random_case(seed: u64, t: usize, n: usize) -> (ReturnPanel, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (0..t).map(|_| (0..n).map(|_| rng.gen_range(-0.03..0.03)).collect()).collect();
    let rf = (0..t).map(|_| rng.gen_range(0.0..0.0002)).collect();
    let w: Vec<Vec<f64>> = (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum::<f64>() / rng.gen_range(0.2..1.0);
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    (panel(r, rf), Matrix::from_rows(&w).unwrap())
}

#[test]
fn two_asset_drift_by_hand() {
    let p = panel(vec![vec![0.10, -0.10], vec![0.0, 0.0]], vec![0.0, 0.0]);
    let w = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let r = replay(&p, all_days(&p), &w, 0.001, "x").unwrap();
    // day 1: gross 0, held drifts to [0.55, 0.45]; day 2 rebalances 0.05 each way
    assert_eq!(r.trades.row(0), &[0.0, 0.0]);
    assert!((r.trades[(1, 0)] + 0.05).abs() < 1e-15);
    assert!((r.trades[(1, 1)] - 0.05).abs() < 1e-15);
    assert!((r.costs[1] - 0.0001).abs() < 1e-15);
    assert!((r.wealth[1] - (1.0 - 0.0001)).abs() < 1e-15);
}

#[test]
fn risk_free_sleeve_drifts() {
    let p = panel(vec![vec![0.02], vec![0.0]], vec![0.01, 0.0]);
    let w = Matrix::from_rows(&[vec![0.5], vec![0.5]]).unwrap();
    let r = replay(&p, all_days(&p), &w, 0.0, "x").unwrap();
    let gross = 0.5 * 0.02 + 0.5 * 0.01;
    assert!((r.gross_returns[0] - gross).abs() < 1e-15);
    let held = 0.5 * 1.02 / (1.0 + gross);
    assert!((r.trades[(1, 0)] - (0.5 - held)).abs() < 1e-15);
}

#[test]
fn single_asset_buy_and_hold_tracks_asset() {
    let (p, _) = random_case(1, 50, 1);
    let w = Matrix::from_vec(50, 1, vec![1.0; 50]).unwrap();
    let r = replay(&p, all_days(&p), &w, 0.0005, "hold").unwrap();
    for (a, b) in r.portfolio_returns.iter().zip(p.asset_returns(0)) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(r.costs.iter().all(|c| *c == 0.0));
}

#[test]
fn fix_mix_with_equal_returns_never_trades() {
    let p = panel(vec![vec![0.01, 0.01]; 20], vec![0.0; 20]);
    let mut spec = StrategySpec::new(StrategyKind::FixMix);
    spec.fix_mix_weights = Some(vec![0.6, 0.4]);
    let r = run(&spec, &p, None, all_days(&p), 0.0005).unwrap();
    assert!(r.metrics.ann_turnover.abs() < 1e-12);
    assert!(r.costs.iter().all(|c| c.abs() < 1e-15));
}

#[test]
fn daily_csv_round_trips() {
    let (p, w) = random_case(2, 40, 3);
    let r = replay(&p, all_days(&p), &w, 0.0005, "s").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    r.write_daily_csv(&path).unwrap();
    let back = BacktestResult::read_daily_csv(&path, "s").unwrap();
    assert_eq!(back.metrics, r.metrics);
    assert_eq!(back.wealth, r.wealth);
    assert_eq!(back.weights_post, r.weights_post);
}

#[test]
fn pooled_correlation_ignores_asset_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = Matrix::from_vec(30, 3, (0..90).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let re = Matrix::from_vec(30, 3, (0..90).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let a = forecast_return_correlation(&names, &mu, &re).unwrap();
    let b = forecast_return_correlation(&names, &mu.select_columns(&[2, 0, 1]), &re.select_columns(&[2, 0, 1])).unwrap();
    assert!((a.pooled.unwrap() - b.pooled.unwrap()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn self_financing_without_costs(seed in 0u64..100_000) {
        let (p, w) = random_case(seed, 30, 3);
        let zero_rf = ReturnPanel::new(p.dates().to_vec(), p.assets().to_vec(), p.returns().clone(), vec![0.0; 30]).unwrap();
        let r = replay(&zero_rf, all_days(&zero_rf), &w, 0.0, "x").unwrap();
        let mut wealth = 1.0;
        for t in 0..30 {
            wealth *= 1.0 + w.row(t).iter().zip(p.returns().row(t)).map(|(a, b)| a * b).sum::<f64>();
            prop_assert!((r.wealth[t] - wealth).abs() < 1e-12);
        }
    }

    #[test]
    fn costs_only_hurt_and_compound(seed in 0u64..100_000) {
        let (p, w) = random_case(seed, 40, 4);
        let free = replay(&p, all_days(&p), &w, 0.0, "x").unwrap();
        let paid = replay(&p, all_days(&p), &w, 0.0005, "x").unwrap();
        // gap_t = gap_{t-1}(1 + g_t) + c_t W^a_{t-1}
        let (mut gap, mut prev) = (0.0, 1.0);
        for t in 0..40 {
            prop_assert!(paid.wealth[t] <= free.wealth[t]);
            gap = gap * (1.0 + paid.gross_returns[t]) + paid.costs[t] * prev;
            prev = paid.wealth[t];
            prop_assert!((free.wealth[t] - paid.wealth[t] - gap).abs() < 1e-12);
        }
    }

    #[test]
    fn pre_trade_weights_sum_with_cash_to_one(seed in 0u64..100_000) {
        let (p, w) = random_case(seed, 20, 3);
        let r = replay(&p, all_days(&p), &w, 0.0005, "x").unwrap();
        for t in 1..20 {
            let prev = r.weights_post.row(t - 1);
            let cash = 1.0 - prev.iter().sum::<f64>();
            let pre: f64 = (0..3).map(|j| r.weights_post[(t, j)] - r.trades[(t, j)]).sum();
            let expected = 1.0 - cash * (1.0 + r.risk_free[t - 1]) / (1.0 + r.gross_returns[t - 1]);
            prop_assert!((pre - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_are_deterministic(seed in 0u64..100_000) {
        let (p, w) = random_case(seed, 25, 2);
        let r = replay(&p, all_days(&p), &w, 0.0005, "x").unwrap();
        let again = compute_metrics(&r.portfolio_returns, &r.risk_free, &r.weights_post, &r.trades).unwrap();
        prop_assert_eq!(again, r.metrics);
    }
}
