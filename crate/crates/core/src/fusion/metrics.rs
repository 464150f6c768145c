use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean squared error, N^2.
    pub mse: f64,
    /// Square root of `mse`, N.
    pub rmse: f64,
    /// Coefficient of determination; `None` when the labels have zero
    /// variance.
    pub r2: Option<f64>,
    pub count: usize,
}

pub fn metrics(pred: &[f64], target: &[f64]) -> Result<Metrics> {
    if pred.len() != target.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} labels",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty split".into()));
    }
    let n = pred.len() as f64;
    let ss_res: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum();
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    let mse = ss_res / n;
    Ok(Metrics {
        mse,
        rmse: mse.sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        count: pred.len(),
    })
}

pub fn metrics_csv_header() -> &'static str {
    "mode,lr,mse,rmse,r2"
}

/// One row in the comparison-table layout; an undefined R² prints as
/// `undefined`.
pub fn metrics_csv_row(mode: Mode, lr: f64, m: &Metrics) -> String {
    let r2 = m.r2.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
    format!("{mode},{lr:e},{:.6e},{:.6},{r2}", m.mse, m.rmse)
}
