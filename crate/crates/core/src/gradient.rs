//! Gradient descent on the control: forward solve, adjoint solve, then
//! `U ← U − (1/κ)(U − Π_h^0 Y)`. All conditional expectations are exact on
//! chaos-affine processes. [`gd_step_regression`] is a Monte Carlo variant
//! on sample paths with regression in place of the conditional expectation.

use crate::backward::{solve_adjoint_regression, BasisSpec, PathBackwardData};
use crate::control::{cost_chaos, cost_paths, slq_adjoint_chaos, solve_state_chaos, ControlProblem};
use crate::error::{invalid, Result};
use crate::fem::Space;
use crate::forward::{check_chaos_control, solve_forward_paths, ControlInput};
use crate::noise::NoiseEnsemble;
use crate::process::{ChaosAffineProcess, PathProcess};
use serde::{Deserialize, Serialize};

/// `1 + αT + T²`, an upper bound for the Lipschitz constant of the gradient.
pub fn kappa_bound(alpha: f64, horizon: f64) -> f64 {
    1.0 + alpha * horizon + horizon * horizon
}

#[derive(Debug, Clone)]
pub struct GdConfig {
    pub kappa: f64,
    pub max_iters: usize,
    /// Stop once `‖U − Π_h^0 Y‖_{U_hτ} ≤ tol`.
    pub tol: f64,
    /// Initial control; zero when `None`.
    pub u0: Option<ChaosAffineProcess>,
}

impl GdConfig {
    /// `κ = 1 + αT + T²`, 200 iterations, tolerance `1e−10`, zero start.
    pub fn for_problem(problem: &ControlProblem<'_>) -> Self {
        Self { kappa: kappa_bound(problem.alpha, problem.grid.horizon()), max_iters: 200, tol: 1e-10, u0: None }
    }
}

/// One iteration: the state and adjoint for `u`, and the updated control.
#[derive(Debug, Clone)]
pub struct GdStep {
    pub u_next: ChaosAffineProcess,
    pub x: ChaosAffineProcess,
    pub y: ChaosAffineProcess,
    /// `U − Π_h^0 Y`
    pub gradient: ChaosAffineProcess,
}

pub fn gd_step(problem: &ControlProblem<'_>, u: &ChaosAffineProcess, kappa: f64) -> Result<GdStep> {
    if !(kappa > 0.0) {
        return invalid(format!("step parameter must be positive, got {kappa}"));
    }
    check_chaos_control(problem.ops, &problem.grid, u)?;
    let x = solve_state_chaos(problem, u)?;
    let y = slq_adjoint_chaos(problem, &x)?;
    let gradient = control_gradient(problem, u, &y);
    let mut u_next = u.clone();
    u_next.axpy(-1.0 / kappa, &gradient)?;
    Ok(GdStep { u_next, x, y, gradient })
}

/// `U − Π_h^0 Y` on steps `0..N−1`.
pub fn control_gradient(
    problem: &ControlProblem<'_>,
    u: &ChaosAffineProcess,
    y: &ChaosAffineProcess,
) -> ChaosAffineProcess {
    let ops = problem.ops;
    let values =
        (0..problem.grid.steps()).map(|n| u.values[n].sub(&y.values[n].map(|v| ops.p0_from_p1_vec(v)))).collect();
    ChaosAffineProcess { grid: problem.grid, space: Space::P0, values }
}

/// Pathwise counterpart of [`GdStep`].
#[derive(Debug, Clone)]
pub struct PathGdStep {
    pub u_next: PathProcess,
    pub x: PathProcess,
    pub y: PathProcess,
    /// Monte Carlo cost of the input control and its standard error.
    pub cost: (f64, f64),
    /// Regression standard error of `Y_0`.
    pub y0_std_err: f64,
}

/// One gradient step on sample paths. The adjoint comes from regression on
/// the state at each step, which is exact in expectation only when the state
/// is Markov and `basis` contains the conditional mean, e.g. an affine basis
/// and a deterministic control. No contraction guarantee.
pub fn gd_step_regression(
    problem: &ControlProblem<'_>,
    noise: &NoiseEnsemble,
    u: &PathProcess,
    kappa: f64,
    basis: BasisSpec,
) -> Result<PathGdStep> {
    if !(kappa > 0.0) {
        return invalid(format!("step parameter must be positive, got {kappa}"));
    }
    let ops = problem.ops;
    let steps = problem.grid.steps();
    let x = solve_forward_paths(&problem.forward_problem(ControlInput::Paths(u.clone()))?, noise)?;
    let xi = |p: usize, n: usize| x.value(p, n) - &problem.xtilde[n].0;
    let data = PathBackwardData {
        terminal: (0..x.n_paths()).map(|p| xi(p, steps) * -problem.alpha).collect(),
        driver: (0..x.n_paths()).map(|p| (1..=steps).map(|n| xi(p, n)).collect()).collect(),
    };
    let reg = solve_adjoint_regression(ops, &x, noise, &data, basis)?;
    let y = reg.solution.y;
    let cost = cost_paths(problem, &x, u);
    let values = u
        .values
        .iter()
        .zip(&y.values)
        .map(|(up, yp)| (0..steps).map(|n| &up[n] - (&up[n] - ops.p0_from_p1_vec(&yp[n])) / kappa).collect())
        .collect();
    let u_next = PathProcess { grid: problem.grid, space: Space::P0, values };
    Ok(PathGdStep { u_next, x, y, cost, y0_std_err: reg.y_std_err[0] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdIterate {
    pub iter: usize,
    pub cost: f64,
    /// `‖U^{(ℓ)} − U*‖²_{U_hτ}` when a reference is supplied.
    pub dist_sq: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdReport {
    pub kappa: f64,
    pub kappa_bound: f64,
    pub iterates: Vec<GdIterate>,
    /// `κ` was below `1 + αT + T²`; the guarantees need not hold.
    pub kappa_below_bound: bool,
    pub converged: bool,
    /// Cost never increased by more than `1e−12`.
    pub monotone_cost: bool,
    /// Every ratio `‖U^{(ℓ+1)} − U*‖²/‖U^{(ℓ)} − U*‖²` was at most
    /// `1 − 1/κ + 1e−10`.
    pub contraction_ok: Option<bool>,
    pub worst_contraction_ratio: Option<f64>,
    /// `J(U^{(ℓ)}) − J(U*) ≤ 2κ‖U^{(0)} − U*‖²/ℓ` for every `ℓ ≥ 1`.
    pub cost_gap_ok: Option<bool>,
    pub optimal_cost: Option<f64>,
    #[serde(skip)]
    pub control: Option<ChaosAffineProcess>,
}

pub fn run_gd(
    problem: &ControlProblem<'_>,
    config: &GdConfig,
    reference: Option<&ChaosAffineProcess>,
) -> Result<GdReport> {
    problem.validate()?;
    let ops = problem.ops;
    let steps = problem.grid.steps();
    let mut u = match &config.u0 {
        Some(u0) => u0.clone(),
        None => ChaosAffineProcess::zeros(problem.grid, Space::P0, ops.n_cells(), steps),
    };
    if let Some(r) = reference {
        check_chaos_control(ops, &problem.grid, r)?;
    }
    let optimal_cost = match reference {
        Some(r) => Some(cost_chaos(problem, &solve_state_chaos(problem, r)?, r)),
        None => None,
    };
    let bound = kappa_bound(problem.alpha, problem.grid.horizon());
    let mut iterates = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iters.max(1) {
        let step = gd_step(problem, &u, config.kappa)?;
        let cost = cost_chaos(problem, &step.x, &u);
        let grad_norm = step.gradient.time_norm(ops);
        let dist_sq = reference.map(|r| {
            let mut d = u.clone();
            d.axpy(-1.0, r).expect("shapes checked");
            d.time_norm(ops).powi(2)
        });
        iterates.push(GdIterate { iter, cost, dist_sq, grad_norm });
        if grad_norm <= config.tol {
            converged = true;
            break;
        }
        u = step.u_next;
    }

    let monotone_cost = iterates.windows(2).all(|w| w[1].cost <= w[0].cost + 1e-12);
    let rate = 1.0 - 1.0 / config.kappa;
    let (contraction_ok, worst_contraction_ratio, cost_gap_ok) = match optimal_cost {
        Some(j_star) => {
            let d0 = iterates[0].dist_sq.unwrap_or(0.0);
            let mut worst: f64 = 0.0;
            let mut ok = true;
            for w in iterates.windows(2) {
                let (a, b) = (w[0].dist_sq.unwrap_or(0.0), w[1].dist_sq.unwrap_or(0.0));
                if a > 1e-20 * d0 && a > 0.0 {
                    worst = worst.max(b / a);
                }
                ok &= b <= (rate + 1e-10) * a + 1e-24 * d0;
            }
            let gap_ok =
                iterates.iter().skip(1).all(|it| it.cost - j_star <= 2.0 * config.kappa * d0 / it.iter as f64 + 1e-12);
            (Some(ok), Some(worst), Some(gap_ok))
        }
        None => (None, None, None),
    };
    Ok(GdReport {
        kappa: config.kappa,
        kappa_bound: bound,
        iterates,
        kappa_below_bound: config.kappa < bound,
        converged,
        monotone_cost,
        contraction_ok,
        worst_contraction_ratio,
        cost_gap_ok,
        optimal_cost,
        control: Some(u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        assert_eq!(kappa_bound(1.0, 1.0), 3.0);
        assert_eq!(kappa_bound(0.0, 1.0), 2.0);
        assert_eq!(kappa_bound(2.0, 0.5), 2.25);
    }
}
