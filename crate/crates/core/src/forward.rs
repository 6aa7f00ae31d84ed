//! Implicit Euler for the finite-element stochastic heat equation,
//! `X_{n+1} = A₀(X_n + τ Π_h^1 U_n + σ_n ΔW_{n+1})`.

use crate::error::{ensure_len, invalid, Result};
use crate::fem::{FemOperators, FieldP0, FieldP1, Space};
use crate::noise::{NoiseEnsemble, TimeGrid};
use crate::process::{ChaosAffineProcess, ChaosValue, PathProcess};
use nalgebra::DVector;
use rayon::prelude::*;

/// Control driving the forward equation, P0-valued.
#[derive(Debug, Clone)]
pub enum ControlInput {
    Zero,
    Chaos(ChaosAffineProcess),
    Paths(PathProcess),
}

#[derive(Debug, Clone)]
pub struct ForwardProblem<'a> {
    pub ops: &'a FemOperators,
    pub grid: TimeGrid,
    pub x0: FieldP1,
    /// `σ_n`, `n = 0..N−1`
    pub sigma: Vec<FieldP1>,
    pub control: ControlInput,
}

impl<'a> ForwardProblem<'a> {
    pub fn new(
        ops: &'a FemOperators,
        grid: TimeGrid,
        x0: FieldP1,
        sigma: Vec<FieldP1>,
        control: ControlInput,
    ) -> Result<Self> {
        let p = Self { ops, grid, x0, sigma, control };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.ensure_tau(self.grid.tau())?;
        let n = self.grid.steps();
        ensure_len("initial state", self.x0.len(), self.ops.n_dof())?;
        ensure_len("noise coefficients", self.sigma.len(), n)?;
        for s in &self.sigma {
            ensure_len("noise coefficient", s.len(), self.ops.n_dof())?;
        }
        match &self.control {
            ControlInput::Zero => {}
            ControlInput::Chaos(u) => check_chaos_control(self.ops, &self.grid, u)?,
            ControlInput::Paths(u) => {
                self.grid.ensure_same(&u.grid)?;
                if u.space != Space::P0 || u.len() < n {
                    return invalid("pathwise control must be P0 with one value per step");
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_chaos_control(ops: &FemOperators, grid: &TimeGrid, u: &ChaosAffineProcess) -> Result<()> {
    grid.ensure_same(&u.grid)?;
    if u.space != Space::P0 {
        return invalid("control must be P0-valued");
    }
    if u.len() < grid.steps() {
        return invalid(format!("control has {} values, need {}", u.len(), grid.steps()));
    }
    if u.values.iter().any(|v| v.dim() != ops.n_cells()) {
        return invalid("control dimension does not match the mesh");
    }
    u.check_adapted()
}

/// One implicit Euler step.
pub fn step_forward(ops: &FemOperators, x: &FieldP1, u: &FieldP0, sigma: &FieldP1, dw: f64) -> Result<FieldP1> {
    ensure_len("state", x.len(), ops.n_dof())?;
    ensure_len("control", u.len(), ops.n_cells())?;
    ensure_len("noise coefficient", sigma.len(), ops.n_dof())?;
    Ok(FieldP1(step_vec(ops, &x.0, Some(&u.0), &sigma.0, dw)))
}

pub(crate) fn step_vec(
    ops: &FemOperators,
    x: &DVector<f64>,
    u: Option<&DVector<f64>>,
    sigma: &DVector<f64>,
    dw: f64,
) -> DVector<f64> {
    let mut rhs = x.clone();
    if let Some(u) = u {
        rhs.axpy(ops.tau(), &ops.p1_from_p0_vec(u), 1.0);
    }
    rhs.axpy(dw, sigma, 1.0);
    ops.resolvent_vec(&rhs)
}

/// Pathwise iteration from `X_0` along each path of `noise`.
pub fn solve_forward_paths(problem: &ForwardProblem<'_>, noise: &NoiseEnsemble) -> Result<PathProcess> {
    problem.validate()?;
    problem.grid.ensure_same(noise.grid())?;
    if let ControlInput::Paths(u) = &problem.control {
        if u.n_paths() != noise.n_paths() {
            return invalid("control and noise have different path counts");
        }
    }
    let ops = problem.ops;
    let steps = problem.grid.steps();
    let values = (0..noise.n_paths())
        .into_par_iter()
        .map(|p| {
            let inc = noise.path(p);
            let mut out = Vec::with_capacity(steps + 1);
            out.push(problem.x0.0.clone());
            for n in 0..steps {
                let u = match &problem.control {
                    ControlInput::Zero => None,
                    ControlInput::Chaos(c) => Some(c.values[n].evaluate(inc)),
                    ControlInput::Paths(c) => Some(c.values[p][n].clone()),
                };
                let next = step_vec(ops, &out[n], u.as_ref(), &problem.sigma[n].0, inc[n]);
                out.push(next);
            }
            out
        })
        .collect();
    Ok(PathProcess { grid: problem.grid, space: Space::P1, values })
}

/// Exact propagation of mean and loadings; the loading on `ΔW_{n+1}`
/// enters at step `n + 1` as `A₀σ_n`.
pub fn solve_forward_chaos(problem: &ForwardProblem<'_>) -> Result<ChaosAffineProcess> {
    problem.validate()?;
    let control = match &problem.control {
        ControlInput::Zero => None,
        ControlInput::Chaos(c) => Some(c),
        ControlInput::Paths(_) => return invalid("pathwise control has no chaos-affine form"),
    };
    let ops = problem.ops;
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let dim = ops.n_dof();
    let mut values = Vec::with_capacity(steps + 1);
    values.push(ChaosValue::deterministic(problem.x0.0.clone()));
    for n in 0..steps {
        let mut rhs = values[n].clone();
        if let Some(u) = control {
            rhs.axpy(tau, &u.values[n].map(|c| ops.p1_from_p0_vec(c)));
        }
        rhs.loadings.resize(n, DVector::zeros(dim));
        rhs.loadings.push(problem.sigma[n].0.clone());
        values.push(rhs.map(|v| ops.resolvent_vec(v)));
    }
    Ok(ChaosAffineProcess { grid: problem.grid, space: Space::P1, values })
}
