//! Return and macro feature construction.
//!
//! All features are causal: the value at row `t` depends on inputs at rows
//! `<= t` only. Unavailable entries (warm-up of differences and rolling
//! windows) are stored as `NaN`.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::market_data::{ewm_mean, rolling_correlation, DateRange, MacroPanel, TRADING_DAYS};

/// Floor applied to downside deviation before the log and in Sortino ratios.
pub const DD_FLOOR: f64 = 1e-8;

/// Downside-deviation halflives emitted as features.
pub const DD_HALFLIVES: [u32; 2] = [5, 21];
/// Average-return and Sortino halflives.
pub const RETURN_HALFLIVES: [u32; 3] = [5, 10, 21];

/// Leading rows whose return features rest on less than one longest halflife
/// of history. Model fitting skips them.
pub const RETURN_WARMUP_ROWS: usize = 21;

pub const RETURN_FEATURE_NAMES: [&str; 8] = [
    "log_dd_5",
    "log_dd_21",
    "avg_ret_5",
    "avg_ret_10",
    "avg_ret_21",
    "sortino_5",
    "sortino_10",
    "sortino_21",
];

pub const MACRO_FEATURE_NAMES: [&str; 5] = [
    "yield_2y_diff_ewm21",
    "yield_slope_ewm10",
    "yield_slope_diff_ewm21",
    "vix_logdiff_ewm63",
    "stock_bond_corr_252",
];

const LOG_DD_NAMES: [&str; 2] = ["log_dd_5", "log_dd_21"];

/// Per-feature `(mean, std)` captured on a training window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// `T × D`; `NaN` marks an unavailable value.
    pub values: Matrix,
    pub standardization: Option<Vec<Scaling>>,
}

impl FeatureMatrix {
    pub fn new(dates: Vec<NaiveDate>, names: Vec<String>, values: Matrix) -> Result<Self> {
        if values.rows() != dates.len() || values.cols() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len() * names.len(),
                found: values.rows() * values.cols(),
            });
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate feature name {n}")));
            }
        }
        Ok(FeatureMatrix {
            dates,
            names,
            values,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            values: self.values.slice_rows(start, end),
            standardization: self.standardization.clone(),
        }
    }

    /// Columns of `self` followed by columns of `other`; dates must match.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.dates != other.dates {
            return Err(Error::invalid("feature matrices cover different dates"));
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        FeatureMatrix::new(self.dates.clone(), names, self.values.hstack(&other.values)?)
    }

    /// Undo [`standardize`].
    pub fn destandardize(&self) -> Result<FeatureMatrix> {
        let scaling = self
            .standardization
            .as_ref()
            .ok_or_else(|| Error::invalid("feature matrix is not standardized"))?;
        let mut values = self.values.clone();
        for i in 0..values.rows() {
            for (v, s) in values.row_mut(i).iter_mut().zip(scaling) {
                *v = *v * s.std + s.mean;
            }
        }
        Ok(FeatureMatrix {
            dates: self.dates.clone(),
            names: self.names.clone(),
            values,
            standardization: None,
        })
    }

    /// Dump as `date,<feature>...`; unavailable values are written empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(self.values.iter_rows()) {
            let mut rec = vec![d.to_string()];
            rec.extend(row.iter().map(|v| {
                if v.is_nan() {
                    String::new()
                } else {
                    v.to_string()
                }
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `sqrt(EWM_h(min(r, 0)^2))`.
fn downside_deviation(excess: &[f64], halflife: u32) -> Vec<f64> {
    let neg_sq: Vec<f64> = excess.iter().map(|r| r.min(0.0).powi(2)).collect();
    ewm_mean(&neg_sq, halflife as f64)
        .expect("positive halflife")
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// The eight asset-specific return features, in [`RETURN_FEATURE_NAMES`] order.
pub fn return_features(dates: &[NaiveDate], excess: &[f64]) -> Result<FeatureMatrix> {
    if excess.is_empty() {
        return Err(Error::invalid("return_features: empty input"));
    }
    if dates.len() != excess.len() {
        return Err(Error::DimensionMismatch {
            expected: dates.len(),
            found: excess.len(),
        });
    }
    if excess.iter().any(|r| !r.is_finite()) {
        return Err(Error::data("return_features: non-finite return"));
    }
    let t = excess.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(8);
    for h in DD_HALFLIVES {
        cols.push(
            downside_deviation(excess, h)
                .into_iter()
                .map(|dd| dd.max(DD_FLOOR).ln())
                .collect(),
        );
    }
    let means: Vec<Vec<f64>> = RETURN_HALFLIVES
        .iter()
        .map(|&h| ewm_mean(excess, h as f64).expect("positive halflife"))
        .collect();
    cols.extend(means.iter().cloned());
    for (k, &h) in RETURN_HALFLIVES.iter().enumerate() {
        let dd = downside_deviation(excess, h);
        cols.push(
            means[k]
                .iter()
                .zip(&dd)
                .map(|(m, d)| m / d.max(DD_FLOOR))
                .collect(),
        );
    }
    let mut values = Matrix::zeros(t, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            values[(i, j)] = *v;
        }
    }
    FeatureMatrix::new(
        dates.to_vec(),
        RETURN_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    )
}

/// EWM over a series whose leading entries may be `NaN`; smoothing starts
/// at the first finite value.
fn ewm_after_warmup(x: &[f64], halflife: f64) -> Vec<f64> {
    let start = x.iter().position(|v| !v.is_nan()).unwrap_or(x.len());
    let mut out = vec![f64::NAN; start];
    out.extend(ewm_mean(&x[start..], halflife).expect("positive halflife"));
    out
}

fn first_difference(x: &[f64]) -> Vec<f64> {
    std::iter::once(f64::NAN)
        .chain(x.windows(2).map(|w| w[1] - w[0]))
        .collect()
}

/// The five cross-asset macro features, in [`MACRO_FEATURE_NAMES`] order.
pub fn macro_features(panel: &MacroPanel) -> Result<FeatureMatrix> {
    panel.validate()?;
    if panel.is_empty() {
        return Err(Error::invalid("macro_features: empty panel"));
    }
    let log_vix: Vec<f64> = panel.vix_level.iter().map(|v| v.ln()).collect();
    let corr = rolling_correlation(
        &panel.stock_returns,
        &panel.bond_returns,
        TRADING_DAYS as usize,
    )?;
    let cols = [
        ewm_after_warmup(&first_difference(&panel.yield_2y), 21.0),
        ewm_after_warmup(&panel.yield_slope_10y_2y, 10.0),
        ewm_after_warmup(&first_difference(&panel.yield_slope_10y_2y), 21.0),
        ewm_after_warmup(&first_difference(&log_vix), 63.0),
        corr.into_iter().map(|c| c.unwrap_or(f64::NAN)).collect(),
    ];
    let t = panel.len();
    let mut values = Matrix::zeros(t, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            values[(i, j)] = *v;
        }
    }
    FeatureMatrix::new(
        panel.dates.clone(),
        MACRO_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    )
}

/// Z-score every column with the population mean and std of the rows
/// falling in `window`. The same scaling is applied to all rows.
pub fn standardize(features: &FeatureMatrix, window: DateRange) -> Result<FeatureMatrix> {
    let rows = window.index_range(&features.dates);
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "standardization window {}..{} contains no rows",
            window.start, window.end
        )));
    }
    let n = rows.len() as f64;
    let mut scaling = Vec::with_capacity(features.n_features());
    for (j, name) in features.names.iter().enumerate() {
        let col: Vec<f64> = rows.clone().map(|i| features.values[(i, j)]).collect();
        if col.iter().any(|v| v.is_nan()) {
            return Err(Error::data(format!(
                "feature {name} is unavailable inside the standardization window"
            )));
        }
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::data(format!(
                "feature {name} has zero standard deviation on the standardization window"
            )));
        }
        scaling.push(Scaling { mean, std });
    }
    let mut values = features.values.clone();
    for i in 0..values.rows() {
        for (v, s) in values.row_mut(i).iter_mut().zip(&scaling) {
            *v = (*v - s.mean) / s.std;
        }
    }
    Ok(FeatureMatrix {
        dates: features.dates.clone(),
        names: features.names.clone(),
        values,
        standardization: Some(scaling),
    })
}

/// Jump-model feature set: the return features, optionally without the two
/// log downside-deviation columns.
pub fn select_jm_features(features: &FeatureMatrix, exclude_dd: bool) -> Result<FeatureMatrix> {
    if !exclude_dd {
        return Ok(features.clone());
    }
    let mut keep = Vec::new();
    for name in LOG_DD_NAMES {
        if features.column_index(name).is_none() {
            return Err(Error::invalid(format!("column {name} not found")));
        }
    }
    for (j, n) in features.names.iter().enumerate() {
        if !LOG_DD_NAMES.contains(&n.as_str()) {
            keep.push(j);
        }
    }
    Ok(FeatureMatrix {
        dates: features.dates.clone(),
        names: keep.iter().map(|&j| features.names[j].clone()).collect(),
        values: features.values.select_columns(&keep),
        standardization: features
            .standardization
            .as_ref()
            .map(|s| keep.iter().map(|&j| s[j]).collect()),
    })
}
