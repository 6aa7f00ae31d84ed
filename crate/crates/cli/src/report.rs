//! CSV rows and the JSON sidecar.

use serde::Serialize;
use slqheat_core::experiment::{ExperimentConfig, Outcome};

/// One CSV row. All squared quantities; `fitted_order` is the slope of the
/// series the row belongs to.
#[derive(Debug, Serialize)]
pub struct Row {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub n_paths: usize,
    pub metric: String,
    pub squared_error: f64,
    pub std_err: Option<f64>,
    pub fitted_order: Option<f64>,
    pub passed: bool,
}

#[derive(Serialize)]
pub struct Sidecar<'a> {
    pub version: &'a str,
    pub config: &'a ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub threads: usize,
    pub passed: bool,
    pub outcome: &'a Outcome,
}

fn grid_params(cfg: &ExperimentConfig) -> (f64, f64) {
    let h = cfg.length / cfg.n_cells.unwrap_or(1) as f64;
    let tau = cfg.horizon / cfg.steps.unwrap_or(1) as f64;
    (h, tau)
}

pub fn rows(cfg: &ExperimentConfig, outcome: &Outcome) -> Vec<Row> {
    match outcome {
        Outcome::Rates(report) => report
            .series
            .iter()
            .flat_map(|s| {
                s.levels.iter().map(move |l| Row {
                    level: l.level,
                    h: l.h,
                    tau: l.tau,
                    n_paths: l.n_paths,
                    metric: s.metric.clone(),
                    squared_error: l.squared_error,
                    std_err: Some(l.std_err),
                    fitted_order: s.fitted_order,
                    passed: s.passed,
                })
            })
            .collect(),
        Outcome::Gd(report) => {
            let (h, tau) = grid_params(cfg);
            let rate = 1.0 - 1.0 / report.kappa;
            let d0 = report.iterates.first().and_then(|it| it.dist_sq);
            let mut rows = Vec::new();
            let mut prev: Option<f64> = None;
            for it in &report.iterates {
                if let Some(d) = it.dist_sq {
                    let ok = prev.is_none_or(|p| d <= (rate + 1e-10) * p + 1e-24 * d0.unwrap_or(0.0));
                    rows.push(Row {
                        level: it.iter,
                        h,
                        tau,
                        n_paths: 0,
                        metric: "dist_sq".into(),
                        squared_error: d,
                        std_err: None,
                        fitted_order: None,
                        passed: ok,
                    });
                    prev = Some(d);
                }
                if let (Some(j_star), Some(d0)) = (report.optimal_cost, d0) {
                    let gap = it.cost - j_star;
                    let ok = it.iter == 0 || gap <= 2.0 * report.kappa * d0 / it.iter as f64 + 1e-12;
                    rows.push(Row {
                        level: it.iter,
                        h,
                        tau,
                        n_paths: 0,
                        metric: "cost_gap".into(),
                        squared_error: gap,
                        std_err: None,
                        fitted_order: None,
                        passed: ok,
                    });
                }
            }
            rows
        }
        Outcome::Crosscheck(report) => {
            let (h, tau) = grid_params(cfg);
            report
                .checks
                .iter()
                .enumerate()
                .map(|(i, c)| Row {
                    level: i,
                    h,
                    tau,
                    n_paths: if c.name.starts_with("regression") { cfg.n_paths.unwrap_or(0) } else { 0 },
                    metric: c.name.clone(),
                    squared_error: c.value * c.value,
                    std_err: c.name.starts_with("regression").then_some(c.tolerance / 5.0),
                    fitted_order: None,
                    passed: c.passed,
                })
                .collect()
        }
    }
}

pub fn csv_bytes(rows: &[Row]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "level",
            "h",
            "tau",
            "n_paths",
            "metric",
            "squared_error",
            "std_err",
            "fitted_order",
            "passed",
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Human-readable lines for stderr.
pub fn summary(outcome: &Outcome) -> Vec<String> {
    match outcome {
        Outcome::Rates(r) => r
            .series
            .iter()
            .map(|s| {
                let order = s.fitted_order.map_or("n/a".into(), |o| format!("{o:.3}"));
                format!(
                    "{} {}: order {order} (threshold {}) {}",
                    r.experiment,
                    s.metric,
                    s.threshold,
                    verdict(s.passed)
                )
            })
            .collect(),
        Outcome::Gd(g) => vec![format!(
            "gd: kappa {} (bound {}), {} iterates, worst ratio {}, gap bound {}",
            g.kappa,
            g.kappa_bound,
            g.iterates.len(),
            g.worst_contraction_ratio.map_or("n/a".into(), |r| format!("{r:.4}")),
            verdict(g.cost_gap_ok.unwrap_or(false))
        )],
        Outcome::Crosscheck(c) => c
            .checks
            .iter()
            .map(|c| format!("{}: {:.3e} <= {:.3e} {}", c.name, c.value, c.tolerance, verdict(c.passed)))
            .collect(),
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
