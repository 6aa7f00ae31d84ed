//! Observed convergence orders from refinement ladders.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// Least-squares slope of `log(error)` against `log(param)`.
pub fn observed_order(levels: &[(f64, f64)]) -> Result<f64> {
    if levels.len() < 3 {
        return invalid(format!("need at least 3 levels to fit an order, got {}", levels.len()));
    }
    if levels.iter().any(|(p, e)| !(*p > 0.0) || !(*e > 0.0)) {
        return invalid("parameters and errors must be positive to fit an order");
    }
    let xs: Vec<f64> = levels.iter().map(|(p, _)| p.ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("refinement parameters are all equal");
    }
    Ok(sxy / sxx)
}

/// Which discretization parameter a ladder refines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    Space,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    /// Zero when the error was computed without sampling.
    pub n_paths: usize,
    pub squared_error: f64,
    pub std_err: f64,
}

/// One error metric along a ladder, with its fitted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: String,
    pub refinement: Refinement,
    pub expected_order: f64,
    pub threshold: f64,
    pub levels: Vec<LevelError>,
    pub fitted_order: Option<f64>,
    pub passed: bool,
}

impl MetricSeries {
    /// Fits the order over levels whose error exceeds ten standard errors;
    /// fails when fewer than three such levels remain.
    pub fn new(
        metric: impl Into<String>,
        refinement: Refinement,
        expected_order: f64,
        threshold: f64,
        levels: Vec<LevelError>,
    ) -> Self {
        let points: Vec<(f64, f64)> = levels
            .iter()
            .filter(|l| l.squared_error > 10.0 * l.std_err)
            .map(|l| {
                let p = match refinement {
                    Refinement::Space => l.h,
                    Refinement::Time => l.tau,
                };
                (p, l.squared_error)
            })
            .collect();
        let fitted_order = observed_order(&points).ok();
        let passed = fitted_order.is_some_and(|o| o >= threshold);
        Self { metric: metric.into(), refinement, expected_order, threshold, levels, fitted_order, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub experiment: String,
    pub series: Vec<MetricSeries>,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.series.iter().all(|s| s.passed)
    }
}
