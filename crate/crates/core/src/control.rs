//! The discrete control problem: state equation, quadratic cost, adjoint
//! equation and the optimality condition `U = Π_h^0 Y`, solved exactly via
//! the affine ansatz `Y_n = −P_n X_n + η_n`.

use crate::error::{ensure_len, invalid, Result, SlqError};
use crate::fem::{FemOperators, FieldP1, Space};
use crate::forward::{check_chaos_control, solve_forward_chaos, step_vec, ControlInput, ForwardProblem};
use crate::noise::{BernoulliTree, NoiseEnsemble, TimeGrid};
use crate::process::{mean_and_stderr, tree_conditional, ChaosAffineProcess, ChaosValue, PathProcess, TreeProcess};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Minimize
/// `τ/2 Σ_{n=1}^N E‖X_n − X̃_n‖² + τ/2 Σ_{n=0}^{N−1} E‖U_n‖² + α/2 E‖X_N − X̃_N‖²`
/// subject to the implicit Euler state equation.
#[derive(Debug, Clone)]
pub struct ControlProblem<'a> {
    pub ops: &'a FemOperators,
    pub grid: TimeGrid,
    pub alpha: f64,
    pub x0: FieldP1,
    /// `σ_n`, `n = 0..N−1`
    pub sigma: Vec<FieldP1>,
    /// Projected target `Π_h^1 X̃(t_n)`, `n = 0..N`
    pub xtilde: Vec<FieldP1>,
}

impl<'a> ControlProblem<'a> {
    pub fn new(
        ops: &'a FemOperators,
        grid: TimeGrid,
        alpha: f64,
        x0: FieldP1,
        sigma: Vec<FieldP1>,
        xtilde: Vec<FieldP1>,
    ) -> Result<Self> {
        let p = Self { ops, grid, alpha, x0, sigma, xtilde };
        p.validate()?;
        Ok(p)
    }

    /// Projects `x0(x)`, `σ(t, x)` and `X̃(t, x)` onto the mesh.
    pub fn from_functions(
        ops: &'a FemOperators,
        grid: TimeGrid,
        alpha: f64,
        x0: impl Fn(f64) -> f64,
        sigma: impl Fn(f64, f64) -> f64,
        xtilde: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let s = (0..grid.steps()).map(|n| ops.project_p1(|x| sigma(grid.time(n), x))).collect();
        let xt = (0..=grid.steps()).map(|n| ops.project_p1(|x| xtilde(grid.time(n), x))).collect();
        Self::new(ops, grid, alpha, ops.project_p1(x0), s, xt)
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.ensure_tau(self.grid.tau())?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return invalid(format!("terminal weight must be nonnegative, got {}", self.alpha));
        }
        let d = self.ops.n_dof();
        ensure_len("initial state", self.x0.len(), d)?;
        ensure_len("noise coefficients", self.sigma.len(), self.grid.steps())?;
        ensure_len("target values", self.xtilde.len(), self.grid.steps() + 1)?;
        for v in self.sigma.iter().chain(&self.xtilde) {
            ensure_len("field", v.len(), d)?;
        }
        Ok(())
    }

    pub fn forward_problem(&self, control: ControlInput) -> Result<ForwardProblem<'a>> {
        ForwardProblem::new(self.ops, self.grid, self.x0.clone(), self.sigma.clone(), control)
    }
}

/// Dense matrices of the operators acting on nodal coefficients.
#[derive(Debug, Clone)]
pub struct DenseOperators {
    pub resolvent: DMatrix<f64>,
    /// `Π_h^0`: P1 → P0
    pub p0_from_p1: DMatrix<f64>,
    /// `B = Π_h^1 Π_h^0`
    pub b: DMatrix<f64>,
}

impl DenseOperators {
    pub fn new(ops: &FemOperators) -> Self {
        let p0_from_p1 = ops.p0_from_p1_dense();
        let b = ops.p1_from_p0_dense() * &p0_from_p1;
        Self { resolvent: ops.resolvent_dense(), p0_from_p1, b }
    }
}

/// `P_n` and `η_n`, `n = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Vec<DMatrix<f64>>,
    pub eta: Vec<DVector<f64>>,
}

/// `U_n = Π_h^0(−P_n X_n + η_n)`, `n = 0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub p: Vec<DMatrix<f64>>,
    pub eta: Vec<DVector<f64>>,
}

impl FeedbackLaw {
    pub fn control(&self, ops: &FemOperators, n: usize, x: &DVector<f64>) -> DVector<f64> {
        ops.p0_from_p1_vec(&(&self.eta[n] - &self.p[n] * x))
    }
}

impl RiccatiSolution {
    /// `Y_n = −P_n X_n + η_n`
    pub fn adjoint(&self, n: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.eta[n] - &self.p[n] * x
    }

    /// `Z_n = −P_{n+1} A₀ σ_n`, `n = 0..N−1`.
    pub fn z(&self, problem: &ControlProblem<'_>) -> Vec<DVector<f64>> {
        let ops = problem.ops;
        (0..problem.grid.steps()).map(|n| -(&self.p[n + 1] * ops.resolvent_vec(&problem.sigma[n].0))).collect()
    }
}

/// Backward recursion `P_N = αI`, `η_N = αX̃_N`, and with
/// `Q = A₀(P_{n+1} + τI)A₀`, `S = I + τQB`:
/// `P_n = S⁻¹Q`, `η_n = S⁻¹A₀(η_{n+1} + τX̃_{n+1})`.
pub fn solve_optimality(problem: &ControlProblem<'_>) -> Result<(RiccatiSolution, FeedbackLaw)> {
    problem.validate()?;
    let ops = problem.ops;
    let dense = DenseOperators::new(ops);
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let d = ops.n_dof();
    let id = DMatrix::<f64>::identity(d, d);
    let a0 = &dense.resolvent;

    let mut p = vec![DMatrix::zeros(d, d); steps + 1];
    let mut eta = vec![DVector::zeros(d); steps + 1];
    p[steps] = &id * problem.alpha;
    eta[steps] = &problem.xtilde[steps].0 * problem.alpha;
    for n in (0..steps).rev() {
        let q = a0 * (&p[n + 1] + &id * tau) * a0;
        let s = &id + (&q * &dense.b) * tau;
        let lu = s.lu();
        let pn = lu.solve(&q).ok_or_else(|| SlqError::Internal(format!("singular Riccati step at n = {n}")))?;
        let rhs = a0 * (&eta[n + 1] + &problem.xtilde[n + 1].0 * tau);
        let en = lu.solve(&rhs).ok_or_else(|| SlqError::Internal(format!("singular Riccati step at n = {n}")))?;
        p[n] = pn;
        eta[n] = en;
    }
    let law = FeedbackLaw { p: p[..steps].to_vec(), eta: eta[..steps].to_vec() };
    Ok((RiccatiSolution { p, eta }, law))
}

/// Optimal state, adjoint and control along sample paths, with the
/// deterministic `Z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPaths {
    pub x: PathProcess,
    pub y: PathProcess,
    pub u: PathProcess,
    pub z: Vec<DVector<f64>>,
}

/// Closed-loop simulation along each path of `noise`.
pub fn simulate_optimal(
    problem: &ControlProblem<'_>,
    riccati: &RiccatiSolution,
    noise: &NoiseEnsemble,
) -> Result<OptimalPaths> {
    problem.validate()?;
    problem.grid.ensure_same(noise.grid())?;
    check_riccati(problem, riccati)?;
    let ops = problem.ops;
    let steps = problem.grid.steps();
    type Trajectory = Vec<DVector<f64>>;
    let per_path: Vec<(Trajectory, Trajectory, Trajectory)> = (0..noise.n_paths())
        .into_par_iter()
        .map(|p| {
            let inc = noise.path(p);
            let mut x = Vec::with_capacity(steps + 1);
            let mut y = Vec::with_capacity(steps + 1);
            let mut u = Vec::with_capacity(steps);
            x.push(problem.x0.0.clone());
            for n in 0..steps {
                let yn = riccati.adjoint(n, &x[n]);
                let un = ops.p0_from_p1_vec(&yn);
                let next = step_vec(ops, &x[n], Some(&un), &problem.sigma[n].0, inc[n]);
                y.push(yn);
                u.push(un);
                x.push(next);
            }
            y.push(riccati.adjoint(steps, &x[steps]));
            (x, y, u)
        })
        .collect();
    let grid = problem.grid;
    let mut xs = Vec::with_capacity(per_path.len());
    let mut ys = Vec::with_capacity(per_path.len());
    let mut us = Vec::with_capacity(per_path.len());
    for (x, y, u) in per_path {
        xs.push(x);
        ys.push(y);
        us.push(u);
    }
    Ok(OptimalPaths {
        x: PathProcess { grid, space: Space::P1, values: xs },
        y: PathProcess { grid, space: Space::P1, values: ys },
        u: PathProcess { grid, space: Space::P0, values: us },
        z: riccati.z(problem),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalTree {
    pub x: TreeProcess,
    pub y: TreeProcess,
    pub u: TreeProcess,
    pub z: Vec<DVector<f64>>,
}

/// Closed-loop simulation on every node of a Bernoulli tree.
pub fn simulate_optimal_tree(
    problem: &ControlProblem<'_>,
    riccati: &RiccatiSolution,
    tree: &BernoulliTree,
) -> Result<OptimalTree> {
    let paths = simulate_optimal(problem, riccati, &tree.as_ensemble())?;
    Ok(OptimalTree {
        x: TreeProcess::from_paths(tree, Space::P1, &paths.x.values)?,
        y: TreeProcess::from_paths(tree, Space::P1, &paths.y.values)?,
        u: TreeProcess::from_paths(tree, Space::P0, &paths.u.values)?,
        z: paths.z,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalChaos {
    pub x: ChaosAffineProcess,
    pub y: ChaosAffineProcess,
    pub u: ChaosAffineProcess,
    pub z: Vec<DVector<f64>>,
}

/// Closed-loop solution in chaos-affine form (exact second moments).
pub fn simulate_optimal_chaos(problem: &ControlProblem<'_>, riccati: &RiccatiSolution) -> Result<OptimalChaos> {
    problem.validate()?;
    check_riccati(problem, riccati)?;
    let ops = problem.ops;
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let d = ops.n_dof();
    let adjoint = |n: usize, xn: &ChaosValue| ChaosValue {
        mean: riccati.adjoint(n, &xn.mean),
        loadings: xn.loadings.par_iter().map(|l| -(&riccati.p[n] * l)).collect(),
    };
    let mut x = Vec::with_capacity(steps + 1);
    let mut y = Vec::with_capacity(steps + 1);
    let mut u = Vec::with_capacity(steps);
    x.push(ChaosValue::deterministic(problem.x0.0.clone()));
    for n in 0..steps {
        let yn = adjoint(n, &x[n]);
        let un = yn.map(|v| ops.p0_from_p1_vec(v));
        let mut rhs = x[n].clone();
        rhs.axpy(tau, &un.map(|c| ops.p1_from_p0_vec(c)));
        rhs.loadings.resize(n, DVector::zeros(d));
        rhs.loadings.push(problem.sigma[n].0.clone());
        x.push(rhs.map(|v| ops.resolvent_vec(v)));
        y.push(yn);
        u.push(un);
    }
    y.push(adjoint(steps, &x[steps]));
    let grid = problem.grid;
    Ok(OptimalChaos {
        x: ChaosAffineProcess { grid, space: Space::P1, values: x },
        y: ChaosAffineProcess { grid, space: Space::P1, values: y },
        u: ChaosAffineProcess { grid, space: Space::P0, values: u },
        z: riccati.z(problem),
    })
}

fn check_riccati(problem: &ControlProblem<'_>, riccati: &RiccatiSolution) -> Result<()> {
    let steps = problem.grid.steps();
    let d = problem.ops.n_dof();
    ensure_len("Riccati operators", riccati.p.len(), steps + 1)?;
    ensure_len("Riccati offsets", riccati.eta.len(), steps + 1)?;
    if riccati.p.iter().any(|p| p.nrows() != d || p.ncols() != d) {
        return invalid("Riccati operators do not match the mesh");
    }
    Ok(())
}

/// State for a chaos-affine control.
pub fn solve_state_chaos(problem: &ControlProblem<'_>, u: &ChaosAffineProcess) -> Result<ChaosAffineProcess> {
    solve_forward_chaos(&problem.forward_problem(ControlInput::Chaos(u.clone()))?)
}

/// State on every node of `tree` for a tree-adapted control `u`
/// (`u.levels[n]`, `n = 0..N−1`).
pub fn solve_state_tree(problem: &ControlProblem<'_>, tree: &BernoulliTree, u: &TreeProcess) -> Result<TreeProcess> {
    problem.validate()?;
    problem.grid.ensure_same(tree.grid())?;
    let steps = problem.grid.steps();
    check_tree_levels(tree, u, steps, problem.ops.n_cells())?;
    let ops = problem.ops;
    let mut levels: Vec<Vec<DVector<f64>>> = Vec::with_capacity(steps + 1);
    levels.push(vec![problem.x0.0.clone()]);
    for n in 0..steps {
        let prev = &levels[n];
        let next = (0..tree.nodes_at(n + 1))
            .into_par_iter()
            .map(|q| {
                let parent = q & ((1 << n) - 1);
                step_vec(ops, &prev[parent], Some(&u.levels[n][parent]), &problem.sigma[n].0, tree.increment(q, n))
            })
            .collect();
        levels.push(next);
    }
    Ok(TreeProcess { grid: problem.grid, space: Space::P1, levels })
}

fn check_tree_levels(tree: &BernoulliTree, v: &TreeProcess, len: usize, dim: usize) -> Result<()> {
    if v.len() < len {
        return invalid(format!("tree process has {} levels, need {len}", v.len()));
    }
    for n in 0..len {
        ensure_len("tree level", v.levels[n].len(), tree.nodes_at(n))?;
        if v.levels[n].iter().any(|x| x.len() != dim) {
            return invalid("tree values have the wrong dimension");
        }
    }
    Ok(())
}

/// Adjoint sweep `Y_N = terminal`,
/// `Y_n = A₀ E[Y_{n+1} − τ ξ_{n+1} | F_{t_n}]` with exact conditional
/// expectations; `xi[n]` is used for `n = 1..N`.
pub fn solve_adjoint_chaos(
    ops: &FemOperators,
    grid: TimeGrid,
    terminal: ChaosValue,
    xi: &[ChaosValue],
) -> Result<ChaosAffineProcess> {
    let steps = grid.steps();
    ensure_len("adjoint driver", xi.len(), steps + 1)?;
    let tau = ops.tau();
    let mut y = vec![ChaosValue::zeros(0); steps + 1];
    y[steps] = terminal;
    for n in (0..steps).rev() {
        let mut rhs = y[n + 1].clone();
        rhs.axpy(-tau, &xi[n + 1]);
        y[n] = rhs.conditional(n).map(|v| ops.resolvent_vec(v));
    }
    ChaosAffineProcess::new(grid, Space::P1, y)
}

/// Same sweep with conditional expectations as subtree averages.
pub fn solve_adjoint_tree(
    ops: &FemOperators,
    tree: &BernoulliTree,
    terminal: Vec<DVector<f64>>,
    xi: &TreeProcess,
) -> Result<TreeProcess> {
    let grid = *tree.grid();
    let steps = grid.steps();
    ensure_len("terminal nodes", terminal.len(), tree.nodes_at(steps))?;
    check_tree_levels(tree, xi, steps + 1, ops.n_dof())?;
    let tau = ops.tau();
    let mut levels = vec![Vec::new(); steps + 1];
    levels[steps] = terminal;
    for n in (0..steps).rev() {
        let arg: Vec<DVector<f64>> = levels[n + 1].iter().zip(&xi.levels[n + 1]).map(|(y, x)| y - x * tau).collect();
        levels[n] = tree_conditional(&arg).par_iter().map(|v| ops.resolvent_vec(v)).collect();
    }
    Ok(TreeProcess { grid, space: Space::P1, levels })
}

/// Adjoint of the control problem for a given chaos-affine state:
/// terminal `−α(X_N − X̃_N)`, driver `X_n − X̃_n`.
pub fn slq_adjoint_chaos(problem: &ControlProblem<'_>, x: &ChaosAffineProcess) -> Result<ChaosAffineProcess> {
    let steps = problem.grid.steps();
    ensure_len("state values", x.len(), steps + 1)?;
    let xi: Vec<ChaosValue> = x
        .values
        .iter()
        .zip(&problem.xtilde)
        .map(|(xn, t)| {
            let mut v = xn.clone();
            v.mean -= &t.0;
            v
        })
        .collect();
    let terminal = xi[steps].scaled(-problem.alpha);
    solve_adjoint_chaos(problem.ops, problem.grid, terminal, &xi)
}

pub fn slq_adjoint_tree(problem: &ControlProblem<'_>, tree: &BernoulliTree, x: &TreeProcess) -> Result<TreeProcess> {
    let steps = problem.grid.steps();
    check_tree_levels(tree, x, steps + 1, problem.ops.n_dof())?;
    let xi = TreeProcess {
        grid: problem.grid,
        space: Space::P1,
        levels: x
            .levels
            .iter()
            .zip(&problem.xtilde)
            .map(|(level, t)| level.iter().map(|v| v - &t.0).collect())
            .collect(),
    };
    let terminal = xi.levels[steps].iter().map(|v| v * -problem.alpha).collect();
    solve_adjoint_tree(problem.ops, tree, terminal, &xi)
}

/// Exact cost of a chaos-affine control.
pub fn evaluate_cost_chaos(problem: &ControlProblem<'_>, u: &ChaosAffineProcess) -> Result<f64> {
    check_chaos_control(problem.ops, &problem.grid, u)?;
    let x = solve_state_chaos(problem, u)?;
    Ok(cost_chaos(problem, &x, u))
}

/// Cost from an already computed chaos-affine state.
pub fn cost_chaos(problem: &ControlProblem<'_>, x: &ChaosAffineProcess, u: &ChaosAffineProcess) -> f64 {
    let ops = problem.ops;
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let dev = |n: usize| {
        let mut v = x.values[n].clone();
        v.mean -= &problem.xtilde[n].0;
        v.second_moment(ops, Space::P1, tau)
    };
    let state: f64 = (1..=steps).map(dev).sum();
    let control: f64 = (0..steps).map(|n| u.second_moment(ops, n)).sum();
    0.5 * tau * (state + control) + 0.5 * problem.alpha * dev(steps)
}

/// Cost under the tree measure of a tree-adapted control.
pub fn evaluate_cost_tree(problem: &ControlProblem<'_>, tree: &BernoulliTree, u: &TreeProcess) -> Result<f64> {
    let x = solve_state_tree(problem, tree, u)?;
    Ok(cost_tree(problem, &x, u))
}

pub fn cost_tree(problem: &ControlProblem<'_>, x: &TreeProcess, u: &TreeProcess) -> f64 {
    let ops = problem.ops;
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let dev = |n: usize| {
        let level = &x.levels[n];
        level.iter().map(|v| ops.norm_sq(Space::P1, &(v - &problem.xtilde[n].0))).sum::<f64>() / level.len() as f64
    };
    let state: f64 = (1..=steps).map(dev).sum();
    let control: f64 = (0..steps).map(|n| u.second_moment(ops, n)).sum();
    0.5 * tau * (state + control) + 0.5 * problem.alpha * dev(steps)
}

/// Monte Carlo cost of a pathwise control: `(estimate, standard error)`.
pub fn evaluate_cost_paths(problem: &ControlProblem<'_>, u: &PathProcess, noise: &NoiseEnsemble) -> Result<(f64, f64)> {
    let x = crate::forward::solve_forward_paths(&problem.forward_problem(ControlInput::Paths(u.clone()))?, noise)?;
    Ok(cost_paths(problem, &x, u))
}

pub fn cost_paths(problem: &ControlProblem<'_>, x: &PathProcess, u: &PathProcess) -> (f64, f64) {
    let ops = problem.ops;
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let per_path: Vec<f64> = (0..x.n_paths())
        .into_par_iter()
        .map(|p| {
            let dev = |n: usize| ops.norm_sq(Space::P1, &(x.value(p, n) - &problem.xtilde[n].0));
            let state: f64 = (1..=steps).map(dev).sum();
            let control: f64 = (0..steps).map(|n| ops.norm_sq(Space::P0, u.value(p, n))).sum();
            0.5 * tau * (state + control) + 0.5 * problem.alpha * dev(steps)
        })
        .collect();
    mean_and_stderr(per_path.into_iter())
}

/// `‖U − Π_h^0 Y‖_{U_hτ}` for chaos-affine processes.
pub fn optimality_residual_chaos(ops: &FemOperators, y: &ChaosAffineProcess, u: &ChaosAffineProcess) -> f64 {
    let tau = u.grid.tau();
    let steps = u.grid.steps();
    let total: f64 = (0..steps)
        .map(|n| u.values[n].sub(&y.values[n].map(|v| ops.p0_from_p1_vec(v))).second_moment(ops, Space::P0, tau))
        .sum();
    (tau * total).sqrt()
}

/// `‖U − Π_h^0 Y‖_{U_hτ}` under the tree measure.
pub fn optimality_residual_tree(ops: &FemOperators, y: &TreeProcess, u: &TreeProcess) -> f64 {
    let tau = u.grid.tau();
    let steps = u.grid.steps();
    let total: f64 = (0..steps)
        .map(|n| {
            let level = &u.levels[n];
            level
                .iter()
                .zip(&y.levels[n])
                .map(|(un, yn)| ops.norm_sq(Space::P0, &(un - ops.p0_from_p1_vec(yn))))
                .sum::<f64>()
                / level.len() as f64
        })
        .sum();
    (tau * total).sqrt()
}

/// Monte Carlo `‖U − Π_h^0 Y‖_{U_hτ}` over sample paths.
pub fn optimality_residual_paths(ops: &FemOperators, y: &PathProcess, u: &PathProcess) -> f64 {
    let tau = u.grid.tau();
    let steps = u.grid.steps();
    let total: f64 = (0..u.n_paths())
        .map(|p| {
            (0..steps)
                .map(|n| ops.norm_sq(Space::P0, &(u.value(p, n) - ops.p0_from_p1_vec(y.value(p, n)))))
                .sum::<f64>()
        })
        .sum();
    (tau * total / u.n_paths() as f64).sqrt()
}

/// Largest nodal residual of `(I − τΔ_h)X_{n+1} − X_n − τΠ_h^1U_n − σ_nΔW_{n+1}`
/// over all tree nodes.
pub fn state_residual_tree(
    problem: &ControlProblem<'_>,
    tree: &BernoulliTree,
    x: &TreeProcess,
    u: &TreeProcess,
) -> f64 {
    let ops = problem.ops;
    let tau = ops.tau();
    let mut worst: f64 = 0.0;
    for n in 0..problem.grid.steps() {
        for q in 0..tree.nodes_at(n + 1) {
            let parent = q & ((1 << n) - 1);
            let lhs = ops.implicit_euler_vec(&x.levels[n + 1][q]);
            let mut rhs = x.levels[n][parent].clone();
            rhs.axpy(tau, &ops.p1_from_p0_vec(&u.levels[n][parent]), 1.0);
            rhs.axpy(tree.increment(q, n), &problem.sigma[n].0, 1.0);
            worst = worst.max((lhs - rhs).amax());
        }
    }
    worst
}

/// Largest nodal residual of
/// `(I − τΔ_h)Y_n − E[Y_{n+1} − τ(X_{n+1} − X̃_{n+1}) | F_{t_n}]`, plus the
/// terminal condition `Y_N + α(X_N − X̃_N)`.
pub fn adjoint_residual_tree(problem: &ControlProblem<'_>, x: &TreeProcess, y: &TreeProcess) -> f64 {
    let ops = problem.ops;
    let tau = ops.tau();
    let steps = problem.grid.steps();
    let mut worst: f64 = 0.0;
    for (yn, xn) in y.levels[steps].iter().zip(&x.levels[steps]) {
        let r = yn + (xn - &problem.xtilde[steps].0) * problem.alpha;
        worst = worst.max(r.amax());
    }
    for n in 0..steps {
        let arg: Vec<DVector<f64>> = y.levels[n + 1]
            .iter()
            .zip(&x.levels[n + 1])
            .map(|(yv, xv)| yv - (xv - &problem.xtilde[n + 1].0) * tau)
            .collect();
        for (q, c) in tree_conditional(&arg).iter().enumerate() {
            worst = worst.max((ops.implicit_euler_vec(&y.levels[n][q]) - c).amax());
        }
    }
    worst
}

/// `(J(U) − J(U*), ½‖U − U*‖²_{U_hτ})`; the first is never below the second
/// when `U*` is optimal.
pub fn quadratic_expansion_check(
    problem: &ControlProblem<'_>,
    u_star: &ChaosAffineProcess,
    u: &ChaosAffineProcess,
) -> Result<(f64, f64)> {
    let lhs = evaluate_cost_chaos(problem, u)? - evaluate_cost_chaos(problem, u_star)?;
    let mut d = u.clone();
    d.axpy(-1.0, u_star)?;
    let n = d.time_norm(problem.ops);
    Ok((lhs, 0.5 * n * n))
}

/// `(M P_n)` is symmetric when `P_n` is self-adjoint in the mass inner
/// product; returns the largest asymmetry over `n`.
pub fn riccati_symmetry_defect(ops: &FemOperators, riccati: &RiccatiSolution) -> f64 {
    let m = ops.mass_dense();
    riccati
        .p
        .iter()
        .map(|p| {
            let mp = &m * p;
            (&mp - mp.transpose()).amax()
        })
        .fold(0.0, f64::max)
}
