use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression quality of size predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    /// nm
    pub rmse: f64,
    /// Mean of absolute %-errors.
    pub mape: f64,
    /// Signed %-errors, `100·(pred − actual)/actual`.
    pub percent_errors: Vec<f64>,
}

/// Computes R², RMSE, MAPE and per-sample signed %-errors.
///
/// When all actual values are identical the total sum of squares vanishes;
/// R² is then 1 for a perfect fit and 0 otherwise.
pub fn compute_metrics(predicted: &[f64], actual: &[f64]) -> Result<Metrics> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} actual values",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::InvalidInput(
            "metrics need at least one sample".into(),
        ));
    }
    if let Some(bad) = actual.iter().find(|a| **a == 0.0 || !a.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "actual value {bad} cannot be used for %-errors"
        )));
    }
    let n = actual.len() as f64;
    let percent_errors: Vec<f64> = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| 100.0 * (p - a) / a)
        .collect();
    let mape = percent_errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).powi(2))
        .sum();
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(Metrics {
        r2,
        rmse: (ss_res / n).sqrt(),
        mape,
        percent_errors,
    })
}

/// JSON shape of a metrics report: `{r2, rmse_nm, mape_pct, percent_errors: {id: value}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: f64,
    pub rmse_nm: f64,
    pub mape_pct: f64,
    pub percent_errors: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn new(m: &Metrics, sample_ids: &[String]) -> Self {
        Self {
            r2: m.r2,
            rmse_nm: m.rmse,
            mape_pct: m.mape,
            percent_errors: sample_ids
                .iter()
                .cloned()
                .zip(m.percent_errors.iter().copied())
                .collect(),
        }
    }
}
