#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slqheat_core::control::{evaluate_cost_tree, ControlProblem};
use slqheat_core::noise::{BernoulliTree, TimeGrid};
use slqheat_core::process::{ChaosAffineProcess, ChaosValue, TreeProcess};
use slqheat_core::{FemOperators, FieldP1, Mesh1D, Space};
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn setup(n_cells: usize, horizon: f64, steps: usize) -> (FemOperators, TimeGrid) {
    let grid = TimeGrid::new(horizon, steps).unwrap();
    let ops = FemOperators::assemble(&Mesh1D::uniform(1.0, n_cells).unwrap(), grid.tau()).unwrap();
    (ops, grid)
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_field(rng: &mut ChaCha8Rng, dim: usize) -> FieldP1 {
    FieldP1(random_vec(rng, dim))
}

pub fn random_chaos(rng: &mut ChaCha8Rng, dim: usize, n_loadings: usize) -> ChaosValue {
    ChaosValue { mean: random_vec(rng, dim), loadings: (0..n_loadings).map(|_| random_vec(rng, dim)).collect() }
}

/// Adapted chaos-affine process with values at steps `0..len`.
pub fn random_process(
    rng: &mut ChaCha8Rng,
    grid: TimeGrid,
    space: Space,
    dim: usize,
    len: usize,
) -> ChaosAffineProcess {
    let values = (0..len).map(|n| random_chaos(rng, dim, n)).collect();
    ChaosAffineProcess::new(grid, space, values).unwrap()
}

pub fn random_problem<'a>(ops: &'a FemOperators, grid: TimeGrid, rng: &mut ChaCha8Rng) -> ControlProblem<'a> {
    let d = ops.n_dof();
    let alpha = rng.random_range(0.0..2.0);
    ControlProblem::new(
        ops,
        grid,
        alpha,
        random_field(rng, d),
        (0..grid.steps()).map(|_| random_field(rng, d)).collect(),
        (0..=grid.steps()).map(|_| random_field(rng, d)).collect(),
    )
    .unwrap()
}

/// `σ = e^{−t} sin(πx)`, `X̃ = (1 + t) sin(πx)`, `X_0 = sin(πx)`.
pub fn default_problem(ops: &FemOperators, grid: TimeGrid, alpha: f64) -> ControlProblem<'_> {
    ControlProblem::from_functions(
        ops,
        grid,
        alpha,
        |x| (PI * x).sin(),
        |t, x| (-t).exp() * (PI * x).sin(),
        |t, x| (1.0 + t) * (PI * x).sin(),
    )
    .unwrap()
}

/// Tree control from a flat coordinate vector: step `n`, node `q`, cell `k`.
pub fn tree_control_from_flat(tree: &BernoulliTree, n_cells: usize, v: &DVector<f64>) -> TreeProcess {
    let steps = tree.grid().steps();
    let mut k = 0;
    let levels = (0..steps)
        .map(|n| {
            (0..tree.nodes_at(n))
                .map(|_| {
                    let c = DVector::from_fn(n_cells, |i, _| v[k + i]);
                    k += n_cells;
                    c
                })
                .collect()
        })
        .collect();
    TreeProcess { grid: *tree.grid(), space: Space::P0, levels }
}

/// Minimizes the cost over all tree-adapted controls by recovering the
/// quadratic form from cost evaluations and solving its normal equations.
pub fn brute_force_tree_minimizer(problem: &ControlProblem<'_>, tree: &BernoulliTree) -> TreeProcess {
    let n_cells = problem.ops.n_cells();
    let dim = ((1usize << tree.grid().steps()) - 1) * n_cells;
    let cost = |v: &DVector<f64>| evaluate_cost_tree(problem, tree, &tree_control_from_flat(tree, n_cells, v)).unwrap();
    let zero = DVector::zeros(dim);
    let j0 = cost(&zero);
    let unit = |i: usize| {
        let mut e = zero.clone();
        e[i] = 1.0;
        e
    };
    let ji: Vec<f64> = (0..dim).map(|i| cost(&unit(i))).collect();
    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let mut e = unit(i);
            e[j] += 1.0;
            let v = if i == j { cost(&e) - 2.0 * ji[i] + j0 } else { cost(&e) - ji[i] - ji[j] + j0 };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let g = DVector::from_fn(dim, |i, _| ji[i] - j0 - 0.5 * h[(i, i)]);
    let v = h.cholesky().expect("cost is strictly convex").solve(&(-g));
    tree_control_from_flat(tree, n_cells, &v)
}

/// `(τ Σ_n E‖u_n − v_n‖²)^{1/2}` under the tree measure.
pub fn tree_control_distance(ops: &FemOperators, u: &TreeProcess, v: &TreeProcess) -> f64 {
    let tau = u.grid.tau();
    let mut total = 0.0;
    for n in 0..u.grid.steps() {
        let w = 1.0 / u.levels[n].len() as f64;
        for (a, b) in u.levels[n].iter().zip(&v.levels[n]) {
            total += w * ops.norm_sq(Space::P0, &(a - b));
        }
    }
    (tau * total).sqrt()
}

pub mod checks;
