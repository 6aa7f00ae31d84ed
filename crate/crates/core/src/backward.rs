//! Implicit Euler for the backward stochastic heat equation,
//!
//! ```text
//! Y_n = A₀(E[Y_{n+1} | F_{t_n}] − τ f_n),   Z_n = (1/τ) E[Y_{n+1} ΔW_{n+1} | F_{t_n}],
//! ```
//!
//! with three ways of taking the conditional expectations: exactly on
//! chaos-affine data, by subtree averages on a Bernoulli tree, and by
//! least-squares regression on the current forward state.

use crate::error::{ensure_len, invalid, Result, SlqError};
use crate::fem::{FemOperators, Space};
use crate::noise::{BernoulliTree, TimeGrid};
use crate::process::{
    tree_conditional, tree_increment_covariance, ChaosAffineProcess, ChaosValue, PathProcess, TreeProcess,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `Y` at `t_0..t_N` and `Z` at `t_0..t_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution<P> {
    pub y: P,
    pub z: P,
}

/// Terminal value and driver `f_n`, `n = 0..N−1`, as chaos-affine data.
#[derive(Debug, Clone)]
pub struct BackwardProblem<'a> {
    pub ops: &'a FemOperators,
    pub grid: TimeGrid,
    pub terminal: ChaosValue,
    pub driver: Vec<ChaosValue>,
}

impl<'a> BackwardProblem<'a> {
    pub fn new(ops: &'a FemOperators, grid: TimeGrid, terminal: ChaosValue, driver: Vec<ChaosValue>) -> Result<Self> {
        let p = Self { ops, grid, terminal, driver };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.ensure_tau(self.grid.tau())?;
        let steps = self.grid.steps();
        let dim = self.ops.n_dof();
        ensure_len("driver", self.driver.len(), steps)?;
        ensure_len("terminal value", self.terminal.dim(), dim)?;
        if self.terminal.n_loadings() > steps {
            return invalid("terminal value loads on increments beyond the horizon");
        }
        for (n, f) in self.driver.iter().enumerate() {
            ensure_len("driver value", f.dim(), dim)?;
            if f.n_loadings() > n {
                return invalid(format!("driver at step {n} is not adapted"));
            }
        }
        Ok(())
    }

    /// The same data evaluated on every node of `tree`.
    pub fn on_tree(&self, tree: &BernoulliTree) -> Result<TreeBackwardData> {
        self.grid.ensure_same(tree.grid())?;
        let terminal = (0..tree.n_paths()).map(|p| self.terminal.evaluate(&tree.path(p))).collect();
        let driver =
            ChaosAffineProcess { grid: self.grid, space: Space::P1, values: self.driver.clone() }.to_tree(tree)?.levels;
        Ok(TreeBackwardData { terminal, driver })
    }
}

/// One backward step on chaos-affine values: `Y_next` may load on
/// `ΔW_1..ΔW_{n+1}`, `f_n` on `ΔW_1..ΔW_n`.
pub fn step_backward_exact(
    ops: &FemOperators,
    n: usize,
    y_next: &ChaosValue,
    f_n: &ChaosValue,
) -> Result<(ChaosValue, ChaosValue)> {
    if y_next.n_loadings() > n + 1 {
        return invalid(format!("value at step {} loads on increment {}", n + 1, y_next.n_loadings()));
    }
    if f_n.n_loadings() > n {
        return invalid(format!("driver at step {n} is not adapted"));
    }
    ensure_len("driver value", f_n.dim(), y_next.dim())?;
    let mut rhs = y_next.conditional(n);
    rhs.axpy(-ops.tau(), f_n);
    let y = rhs.map(|v| ops.resolvent_vec(v));
    let z = ChaosValue::deterministic(y_next.loading(n + 1));
    Ok((y, z))
}

/// Full backward sweep with exact conditional expectations.
pub fn solve_backward_exact(problem: &BackwardProblem<'_>) -> Result<BackwardSolution<ChaosAffineProcess>> {
    problem.validate()?;
    let steps = problem.grid.steps();
    let mut y = vec![ChaosValue::zeros(0); steps + 1];
    let mut z = vec![ChaosValue::zeros(0); steps];
    y[steps] = problem.terminal.clone();
    for n in (0..steps).rev() {
        let (yn, zn) = step_backward_exact(problem.ops, n, &y[n + 1], &problem.driver[n])?;
        y[n] = yn;
        z[n] = zn;
    }
    Ok(BackwardSolution {
        y: ChaosAffineProcess { grid: problem.grid, space: Space::P1, values: y },
        z: ChaosAffineProcess { grid: problem.grid, space: Space::P1, values: z },
    })
}

/// Backward data on a Bernoulli tree: terminal value per tree path and
/// driver per node, `driver[n][q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeBackwardData {
    pub terminal: Vec<DVector<f64>>,
    pub driver: Vec<Vec<DVector<f64>>>,
}

/// Backward sweep with conditional expectations taken as subtree averages.
pub fn solve_backward_tree(
    ops: &FemOperators,
    tree: &BernoulliTree,
    data: &TreeBackwardData,
) -> Result<BackwardSolution<TreeProcess>> {
    let grid = *tree.grid();
    ops.ensure_tau(grid.tau())?;
    let steps = grid.steps();
    ensure_len("terminal values", data.terminal.len(), tree.n_paths())?;
    ensure_len("driver levels", data.driver.len(), steps)?;
    for (n, level) in data.driver.iter().enumerate() {
        ensure_len("driver nodes", level.len(), tree.nodes_at(n))?;
    }
    let tau = ops.tau();
    let mut y = vec![Vec::new(); steps + 1];
    let mut z = vec![Vec::new(); steps];
    y[steps] = data.terminal.clone();
    for n in (0..steps).rev() {
        let cond = tree_conditional(&y[n + 1]);
        z[n] = tree_increment_covariance(&y[n + 1], tau);
        y[n] = cond
            .par_iter()
            .zip(&data.driver[n])
            .map(|(c, f)| {
                let mut rhs = c.clone();
                rhs.axpy(-tau, f, 1.0);
                ops.resolvent_vec(&rhs)
            })
            .collect();
    }
    Ok(BackwardSolution {
        y: TreeProcess { grid, space: Space::P1, levels: y },
        z: TreeProcess { grid, space: Space::P1, levels: z },
    })
}

/// Regression basis in the nodal values `x` of the current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    /// `{1, x_i}`
    Affine,
    /// `{1, x_i, x_i x_j (i ≤ j)}`
    Quadratic,
}

impl BasisSpec {
    pub fn dim(self, n_dof: usize) -> usize {
        match self {
            BasisSpec::Affine => 1 + n_dof,
            BasisSpec::Quadratic => 1 + n_dof + n_dof * (n_dof + 1) / 2,
        }
    }

    fn features(self, x: &DVector<f64>, center: &DVector<f64>, out: &mut [f64]) {
        out[0] = 1.0;
        let d = x.len();
        for i in 0..d {
            out[1 + i] = x[i] - center[i];
        }
        if self == BasisSpec::Quadratic {
            let mut k = 1 + d;
            for i in 0..d {
                for j in i..d {
                    out[k] = out[1 + i] * out[1 + j];
                    k += 1;
                }
            }
        }
    }
}

/// Pathwise backward data: `terminal[p]`, `driver[p][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBackwardData {
    pub terminal: Vec<DVector<f64>>,
    pub driver: Vec<Vec<DVector<f64>>>,
}

/// Regression backend output.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSolution {
    pub solution: BackwardSolution<PathProcess>,
    /// Estimated standard error of `Y_n` in the ensemble L² norm: per step
    /// `rank/n_paths · mean residual²`, root-sum-squared over `n..N−1`.
    pub y_std_err: Vec<f64>,
    /// Estimated standard error of each `Z_n` regression.
    pub z_std_err: Vec<f64>,
    /// Steps where the normal equations were rank-deficient and a ridge
    /// term was added.
    pub regularized: Vec<bool>,
}

const PATH_CHUNK: usize = 512;

/// Backward sweep with `E[· | F_{t_n}]` replaced by least-squares
/// regression on basis functions of `states` at `t_n`.
pub fn solve_backward_regression(
    ops: &FemOperators,
    states: &PathProcess,
    increments: &crate::noise::NoiseEnsemble,
    data: &PathBackwardData,
    basis: BasisSpec,
) -> Result<RegressionSolution> {
    regression_sweep(ops, states, increments, data, basis, DriverPlacement::Outside)
}

/// Regression sweep for `Y_n = A₀ E[Y_{n+1} − τ f_{n+1} | F_{t_n}]`, the
/// form of the control adjoint. Here `data.driver[p][n]` holds `f_{n+1}`;
/// `Z_n` is the loading of `Y_{n+1}` on `ΔW_{n+1}` as before.
pub fn solve_adjoint_regression(
    ops: &FemOperators,
    states: &PathProcess,
    increments: &crate::noise::NoiseEnsemble,
    data: &PathBackwardData,
    basis: BasisSpec,
) -> Result<RegressionSolution> {
    regression_sweep(ops, states, increments, data, basis, DriverPlacement::Inside)
}

#[derive(Clone, Copy, PartialEq)]
enum DriverPlacement {
    Outside,
    Inside,
}

fn regression_sweep(
    ops: &FemOperators,
    states: &PathProcess,
    increments: &crate::noise::NoiseEnsemble,
    data: &PathBackwardData,
    basis: BasisSpec,
    placement: DriverPlacement,
) -> Result<RegressionSolution> {
    let grid = states.grid;
    ops.ensure_tau(grid.tau())?;
    grid.ensure_same(increments.grid())?;
    let steps = grid.steps();
    let n_paths = states.n_paths();
    let n_dof = ops.n_dof();
    let bdim = basis.dim(n_dof);
    if n_paths < 10 * bdim {
        return Err(SlqError::InvalidArgument(format!(
            "regression needs at least {} paths for a basis of dimension {bdim}, got {n_paths}",
            10 * bdim
        )));
    }
    ensure_len("increment paths", increments.n_paths(), n_paths)?;
    ensure_len("terminal values", data.terminal.len(), n_paths)?;
    ensure_len("driver paths", data.driver.len(), n_paths)?;
    if states.len() < steps || data.driver.iter().any(|d| d.len() < steps) {
        return invalid("states and driver need one value per step");
    }

    let tau = ops.tau();
    let mut y: Vec<Vec<DVector<f64>>> = vec![Vec::new(); steps + 1];
    let mut z: Vec<Vec<DVector<f64>>> = vec![Vec::new(); steps];
    y[steps] = data.terminal.clone();
    let mut step_var = vec![0.0; steps];
    let mut z_std_err = vec![0.0; steps];
    let mut regularized = vec![false; steps];

    for n in (0..steps).rev() {
        let x: Vec<&DVector<f64>> = (0..n_paths).map(|p| states.value(p, n)).collect();
        let center = x.iter().fold(DVector::zeros(n_dof), |acc, v| acc + *v) / n_paths as f64;
        let phi = build_design(basis, &x, &center, bdim);
        let gram = gram_matrix(&phi, bdim);
        let (factor, rank, ridged) = regularized_factor(gram)?;
        regularized[n] = ridged;

        let y_next = &y[n + 1];
        let target: Vec<DVector<f64>> = match placement {
            DriverPlacement::Outside => y_next.clone(),
            DriverPlacement::Inside => y_next.iter().zip(&data.driver).map(|(v, f)| v - &f[n] * tau).collect(),
        };
        let y_fit = fit(&phi, &factor, &target, bdim);
        let zt: Vec<DVector<f64>> = y_next.iter().enumerate().map(|(p, v)| v * (increments.path(p)[n] / tau)).collect();
        let z_fit = fit(&phi, &factor, &zt, bdim);

        let scale = rank as f64 / n_paths as f64;
        step_var[n] = scale * mean_residual_sq(ops, &target, &y_fit);
        z_std_err[n] = (scale * mean_residual_sq(ops, &zt, &z_fit)).sqrt();

        y[n] = y_fit
            .par_iter()
            .enumerate()
            .map(|(p, c)| match placement {
                DriverPlacement::Outside => ops.resolvent_vec(&(c - &data.driver[p][n] * tau)),
                DriverPlacement::Inside => ops.resolvent_vec(c),
            })
            .collect();
        z[n] = z_fit;
    }

    let mut y_std_err = vec![0.0; steps + 1];
    let mut acc = 0.0;
    for n in (0..steps).rev() {
        acc += step_var[n];
        y_std_err[n] = acc.sqrt();
    }

    let to_paths = |levels: Vec<Vec<DVector<f64>>>| {
        let len = levels.len();
        let mut values = vec![Vec::with_capacity(len); n_paths];
        for level in levels {
            for (p, v) in level.into_iter().enumerate() {
                values[p].push(v);
            }
        }
        PathProcess { grid, space: Space::P1, values }
    };
    Ok(RegressionSolution {
        solution: BackwardSolution { y: to_paths(y), z: to_paths(z) },
        y_std_err,
        z_std_err,
        regularized,
    })
}

/// Row-major design matrix, one row of basis values per path.
fn build_design(basis: BasisSpec, x: &[&DVector<f64>], center: &DVector<f64>, bdim: usize) -> Vec<f64> {
    let mut phi = vec![0.0; x.len() * bdim];
    phi.par_chunks_mut(bdim).zip(x.par_iter()).for_each(|(row, v)| basis.features(v, center, row));
    phi
}

/// Sums a per-chunk quantity in fixed chunk order, so the result does not
/// depend on the thread count.
fn chunked_sum<T: Send>(
    n_rows: usize,
    init: impl Fn() -> T + Sync,
    add_row: impl Fn(&mut T, usize) + Sync,
    merge: impl Fn(&mut T, T),
) -> T {
    let partials: Vec<T> = (0..n_rows.div_ceil(PATH_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for r in c * PATH_CHUNK..((c + 1) * PATH_CHUNK).min(n_rows) {
                add_row(&mut acc, r);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p);
    }
    total
}

fn gram_matrix(phi: &[f64], bdim: usize) -> DMatrix<f64> {
    let n_rows = phi.len() / bdim;
    let mut g = chunked_sum(
        n_rows,
        || DMatrix::zeros(bdim, bdim),
        |g, r| {
            let row = &phi[r * bdim..(r + 1) * bdim];
            for i in 0..bdim {
                for j in 0..=i {
                    g[(i, j)] += row[i] * row[j];
                }
            }
        },
        |a, b| *a += b,
    );
    g.fill_upper_triangle_with_lower_triangle();
    g
}

/// Cholesky factor and numerical rank of the normal matrix, adding
/// `1e−10 · trace` to the diagonal when it is rank-deficient.
fn regularized_factor(gram: DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, usize, bool)> {
    let ev = gram.clone().symmetric_eigenvalues();
    let max = ev.max();
    let rank = ev.iter().filter(|&&e| e > 1e-12 * max).count();
    let deficient = rank < ev.len();
    let g = if deficient {
        // the intercept column is left alone: centered features are
        // orthogonal to it, so the ridge does not bias the mean
        let ridge = 1e-10 * gram.trace();
        let mut g = gram;
        for i in 1..g.nrows() {
            g[(i, i)] += ridge;
        }
        g
    } else {
        gram
    };
    let chol = g.cholesky().ok_or_else(|| SlqError::Internal("normal equations are not positive definite".into()))?;
    Ok((chol, rank, deficient))
}

fn fit(
    phi: &[f64],
    factor: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    targets: &[DVector<f64>],
    bdim: usize,
) -> Vec<DVector<f64>> {
    let d = targets[0].len();
    let rhs = chunked_sum(
        targets.len(),
        || DMatrix::zeros(bdim, d),
        |b, r| {
            let row = &phi[r * bdim..(r + 1) * bdim];
            for i in 0..bdim {
                for k in 0..d {
                    b[(i, k)] += row[i] * targets[r][k];
                }
            }
        },
        |a, b| *a += b,
    );
    let coef = factor.solve(&rhs);
    (0..targets.len())
        .into_par_iter()
        .map(|r| {
            let row = &phi[r * bdim..(r + 1) * bdim];
            DVector::from_fn(d, |k, _| (0..bdim).map(|i| row[i] * coef[(i, k)]).sum())
        })
        .collect()
}

fn mean_residual_sq(ops: &FemOperators, targets: &[DVector<f64>], fitted: &[DVector<f64>]) -> f64 {
    let total = chunked_sum(
        targets.len(),
        || 0.0,
        |acc, r| *acc += ops.norm_sq(Space::P1, &(&targets[r] - &fitted[r])),
        |acc, part| *acc += part,
    );
    total / targets.len() as f64
}
