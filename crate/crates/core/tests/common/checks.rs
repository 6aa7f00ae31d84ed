//! Property checks shared by the property test files and the acceptance
//! runner. Each returns a short summary on success and a description of the
//! first violation otherwise.

use super::*;
use slqheat_core::backward::{solve_backward_exact, solve_backward_tree, BackwardProblem};
use slqheat_core::control::*;
use slqheat_core::experiment::{run_experiment, ExperimentConfig, ExperimentId};
use slqheat_core::forward::{solve_forward_chaos, ControlInput, ForwardProblem};
use slqheat_core::gradient::control_gradient;
use slqheat_core::process::tree_conditional;

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Mass and stiffness entries equal `2h/3, h/6, 2/h, −1/h`, relative to the
/// scale `h` resp. `1/h`.
pub fn fem_closed_form_assembly() -> Check {
    let mut worst: f64 = 0.0;
    for n_cells in [2, 3, 4, 7, 16, 64, 255] {
        for length in [1.0, 0.3, 2.5] {
            let ops = FemOperators::assemble(&Mesh1D::uniform(length, n_cells).unwrap(), 0.1).unwrap();
            let h = length / n_cells as f64;
            let m = ops.mass_dense();
            let k = ops.stiffness().to_dense();
            for i in 0..ops.n_dof() {
                for j in 0..ops.n_dof() {
                    let (me, ke) = match i.abs_diff(j) {
                        0 => (2.0 * h / 3.0, 2.0 / h),
                        1 => (h / 6.0, -1.0 / h),
                        _ => (0.0, 0.0),
                    };
                    worst = worst.max((m[(i, j)] - me).abs() / h).max((k[(i, j)] - ke).abs() * h);
                }
            }
        }
    }
    ensure(worst <= 1e-14, || format!("assembly deviates by {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

/// `‖Δ_h Π_h^1 ξ‖ / ‖ξ''‖ ≤ 2` for `ξ = sin(kπx)`, `h = 1/8 … 1/128`.
pub fn inverse_estimate_bounded() -> Check {
    let mut worst: f64 = 0.0;
    for n_cells in [8, 16, 32, 64, 128] {
        let ops = FemOperators::assemble(&Mesh1D::uniform(1.0, n_cells).unwrap(), 0.1).unwrap();
        for k in 1..=3 {
            let kp = k as f64 * PI;
            let xi = ops.project_p1(|x| (kp * x).sin());
            let lap = ops.laplacian(&xi).unwrap();
            // ‖ξ''‖ = (kπ)² ‖sin(kπx)‖ = (kπ)² / √2 on (0, 1)
            let ratio = ops.l2_p1(&lap.0) / (kp * kp / 2f64.sqrt());
            worst = worst.max(ratio);
        }
    }
    ensure(worst <= 2.0, || format!("ratio reached {worst}"))?;
    Ok(format!("max ratio {worst:.4}"))
}

/// Composite 8-point Gauss–Legendre on `n` subintervals of `[a, b]`.
pub fn fine_quadrature(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    const X: [f64; 4] =
        [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const W: [f64; 4] =
        [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let h = (b - a) / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let c = a + (i as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            s += w * (f(c - 0.5 * h * x) + f(c + 0.5 * h * x));
        }
    }
    0.5 * h * s
}

/// `(Π_h^1 g − g, φ_j) = 0` for every hat, by independent fine quadrature.
pub fn projection_orthogonality() -> Check {
    let mut worst: f64 = 0.0;
    let profiles: [Box<dyn Fn(f64) -> f64>; 3] = [
        Box::new(|x: f64| (PI * x).sin()),
        Box::new(|x: f64| x * x * (1.0 - x)),
        Box::new(|x: f64| (3.0 * x).exp() * (7.0 * x).cos()),
    ];
    for n_cells in [4, 9, 32] {
        let ops = FemOperators::assemble(&Mesh1D::uniform(1.0, n_cells).unwrap(), 0.1).unwrap();
        let nodes = ops.mesh().nodes().to_vec();
        for g in &profiles {
            let p = ops.project_p1(g);
            for j in 0..ops.n_dof() {
                let hat = |x: f64| {
                    let (a, m, b) = (nodes[j], nodes[j + 1], nodes[j + 2]);
                    if x <= a || x >= b {
                        0.0
                    } else if x <= m {
                        (x - a) / (m - a)
                    } else {
                        (b - x) / (b - m)
                    }
                };
                let resid = |x: f64| (ops.eval_p1(&p, x) - g(x)) * hat(x);
                let v = fine_quadrature(resid, nodes[j], nodes[j + 1], 64)
                    + fine_quadrature(resid, nodes[j + 1], nodes[j + 2], 64);
                worst = worst.max(v.abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("residual against a hat reached {worst:e}"))?;
    Ok(format!("max |(Πg − g, φ)| {worst:.1e}"))
}

/// `‖A₀v‖_M ≤ ‖v‖_M` on random vectors.
pub fn resolvent_contraction() -> Check {
    let mut r = rng(17);
    let mut worst: f64 = 0.0;
    for n_cells in [2, 5, 16, 100] {
        for tau in [1e-4, 0.01, 0.5, 3.0] {
            let ops = FemOperators::assemble(&Mesh1D::uniform(1.0, n_cells).unwrap(), tau).unwrap();
            for _ in 0..50 {
                let v = random_vec(&mut r, ops.n_dof());
                worst = worst.max(ops.l2_p1(&ops.resolvent_vec(&v)) / ops.l2_p1(&v));
            }
        }
    }
    ensure(worst <= 1.0, || format!("gain {worst}"))?;
    Ok(format!("max gain {worst:.4}"))
}

/// `solve(X0, U, σ) = solve(X0, 0, 0) + solve(0, U, 0) + solve(0, 0, σ)`.
pub fn forward_superposition() -> Check {
    let mut r = rng(23);
    let mut worst: f64 = 0.0;
    for (n_cells, steps) in [(4, 3), (9, 6), (16, 10)] {
        let (ops, grid) = setup(n_cells, 1.0, steps);
        let d = ops.n_dof();
        let x0 = random_field(&mut r, d);
        let sigma: Vec<FieldP1> = (0..steps).map(|_| random_field(&mut r, d)).collect();
        let u = random_process(&mut r, grid, Space::P0, n_cells, steps);
        let zero_u = ChaosAffineProcess::zeros(grid, Space::P0, n_cells, steps);
        let zero_s = vec![FieldP1::zeros(d); steps];
        let solve = |x0: &FieldP1, u: &ChaosAffineProcess, s: &Vec<FieldP1>| {
            solve_forward_chaos(
                &ForwardProblem::new(&ops, grid, x0.clone(), s.clone(), ControlInput::Chaos(u.clone())).unwrap(),
            )
            .unwrap()
        };
        let full = solve(&x0, &u, &sigma);
        let mut sum = solve(&x0, &zero_u, &zero_s);
        sum.axpy(1.0, &solve(&FieldP1::zeros(d), &u, &zero_s)).unwrap();
        sum.axpy(1.0, &solve(&FieldP1::zeros(d), &zero_u, &sigma)).unwrap();
        worst = worst.max(full.max_abs_diff(&sum));
    }
    ensure(worst <= 1e-12, || format!("superposition defect {worst:e}"))?;
    Ok(format!("max defect {worst:.1e}"))
}

fn random_tree_process(
    r: &mut ChaCha8Rng,
    tree: &BernoulliTree,
    space: Space,
    dim: usize,
    levels: std::ops::Range<usize>,
) -> TreeProcess {
    let mut out: Vec<Vec<DVector<f64>>> =
        (0..levels.start).map(|n| vec![DVector::zeros(dim); tree.nodes_at(n)]).collect();
    for n in levels {
        out.push((0..tree.nodes_at(n)).map(|_| random_vec(r, dim)).collect());
    }
    TreeProcess { grid: *tree.grid(), space, levels: out }
}

/// `τ Σ_{n=1}^N E(LU, ξ)_n = τ Σ_{n=0}^{N−1} E(U, −Π_h^0 Y₀)_n` and
/// `E(L̂U, η) = τ Σ E(U, −Π_h^0 Y₁)` on Bernoulli trees.
pub fn adjoint_identities() -> Check {
    let mut r = rng(31);
    let mut worst: f64 = 0.0;
    for (n_cells, steps) in [(3, 2), (4, 4), (6, 6), (8, 5)] {
        let (ops, grid) = setup(n_cells, 1.0, steps);
        let d = ops.n_dof();
        let tree = BernoulliTree::enumerate(grid).unwrap();
        let homogeneous = ControlProblem::new(
            &ops,
            grid,
            0.0,
            FieldP1::zeros(d),
            vec![FieldP1::zeros(d); steps],
            vec![FieldP1::zeros(d); steps + 1],
        )
        .unwrap();
        let u = random_tree_process(&mut r, &tree, Space::P0, n_cells, 0..steps);
        let xi = random_tree_process(&mut r, &tree, Space::P1, d, 1..steps + 1);
        let eta: Vec<DVector<f64>> = (0..tree.n_paths()).map(|_| random_vec(&mut r, d)).collect();
        let lu = solve_state_tree(&homogeneous, &tree, &u).unwrap();
        let tau = grid.tau();

        let lhs: f64 = tau * (1..=steps).map(|n| lu.expected_inner(&xi, &ops, n)).sum::<f64>();
        let y0 = solve_adjoint_tree(&ops, &tree, vec![DVector::zeros(d); tree.n_paths()], &xi).unwrap();
        let rhs = -tau * (0..steps).map(|n| control_inner_tree(&ops, &u, &y0, n)).sum::<f64>();
        ensure(lhs.abs() > 1e-8, || format!("degenerate fixture: ⟨LU, ξ⟩ = {lhs:e}"))?;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));

        let lhs2: f64 = lu.levels[steps].iter().zip(&eta).map(|(a, b)| ops.inner(Space::P1, a, b)).sum::<f64>()
            / tree.n_paths() as f64;
        let zero_xi = TreeProcess {
            grid,
            space: Space::P1,
            levels: (0..=steps).map(|n| vec![DVector::zeros(d); tree.nodes_at(n)]).collect(),
        };
        let y1 = solve_adjoint_tree(&ops, &tree, eta.iter().map(|e| -e).collect(), &zero_xi).unwrap();
        let rhs2 = -tau * (0..steps).map(|n| control_inner_tree(&ops, &u, &y1, n)).sum::<f64>();
        worst = worst.max((lhs2 - rhs2).abs() / lhs2.abs().max(1.0));
    }
    ensure(worst <= 1e-10, || format!("adjoint identity defect {worst:e}"))?;
    Ok(format!("max defect {worst:.1e}"))
}

/// `E(u_n, Π_h^0 y_n)` under the tree measure.
fn control_inner_tree(ops: &FemOperators, u: &TreeProcess, y: &TreeProcess, n: usize) -> f64 {
    let level = &u.levels[n];
    level.iter().zip(&y.levels[n]).map(|(a, b)| ops.inner(Space::P0, a, &ops.p0_from_p1_vec(b))).sum::<f64>()
        / level.len() as f64
}

/// Subtree averages beat any other `F_{t_n}`-measurable predictor.
pub fn best_approximation() -> Check {
    let mut r = rng(37);
    let (ops, grid) = setup(6, 1.0, 5);
    let tree = BernoulliTree::enumerate(grid).unwrap();
    let d = ops.n_dof();
    let mut min_margin = f64::INFINITY;
    for n in 0..grid.steps() {
        let phi: Vec<DVector<f64>> = (0..tree.nodes_at(n + 1)).map(|_| random_vec(&mut r, d)).collect();
        let phi0 = tree_conditional(&phi);
        let half = phi0.len();
        let err = |pred: &[DVector<f64>]| {
            phi.iter().enumerate().map(|(q, v)| ops.norm_sq(Space::P1, &(v - &pred[q % half]))).sum::<f64>()
                / phi.len() as f64
        };
        let best = err(&phi0);
        for _ in 0..100 {
            let scale = r.random_range(0.0..0.5);
            let cand: Vec<DVector<f64>> = phi0.iter().map(|v| v + random_vec(&mut r, d) * scale).collect();
            let e = err(&cand);
            ensure(best <= e + 1e-12, || {
                format!("candidate beat the conditional expectation at step {n}: {e} < {best}")
            })?;
            min_margin = min_margin.min(e - best);
        }
    }
    Ok(format!("smallest margin {min_margin:.2e}"))
}

/// `J(U) − J(U*) ≥ ½‖U − U*‖²`, zero at `U*`, and exactly quadratic.
pub fn quadratic_expansion() -> Check {
    let mut r = rng(41);
    let mut worst_scaling: f64 = 0.0;
    for (n_cells, steps) in [(4, 3), (8, 6), (16, 8)] {
        let (ops, grid) = setup(n_cells, 1.0, steps);
        let prob = random_problem(&ops, grid, &mut r);
        let (ric, _) = solve_optimality(&prob).unwrap();
        let u_star = simulate_optimal_chaos(&prob, &ric).unwrap().u;
        let (l0, r0) = quadratic_expansion_check(&prob, &u_star, &u_star).unwrap();
        ensure(l0.abs() <= 1e-12 && r0 == 0.0, || format!("nonzero expansion at the optimum: {l0}"))?;
        for _ in 0..10 {
            let delta = random_process(&mut r, grid, Space::P0, n_cells, steps);
            let mut u1 = u_star.clone();
            u1.axpy(1.0, &delta).unwrap();
            let mut u2 = u_star.clone();
            u2.axpy(2.0, &delta).unwrap();
            let (l1, r1) = quadratic_expansion_check(&prob, &u_star, &u1).unwrap();
            let (l2, _) = quadratic_expansion_check(&prob, &u_star, &u2).unwrap();
            ensure(l1 >= r1 - 1e-10, || format!("lower bound violated: {l1} < {r1}"))?;
            worst_scaling = worst_scaling.max((l2 / l1 - 4.0).abs() / 4.0);
        }
    }
    ensure(worst_scaling <= 1e-10, || format!("doubling the step scaled the gap by 4(1 ± {worst_scaling:e})"))?;
    Ok(format!("scaling defect {worst_scaling:.1e}"))
}

/// `U − Π_h^0 Y` matches central differences of the cost.
pub fn gradient_matches_finite_differences() -> Check {
    let mut r = rng(43);
    let mut worst: f64 = 0.0;
    for (n_cells, steps) in [(6, 4), (12, 10)] {
        let (ops, grid) = setup(n_cells, 1.0, steps);
        let prob = random_problem(&ops, grid, &mut r);
        let u = random_process(&mut r, grid, Space::P0, n_cells, steps);
        let x = solve_state_chaos(&prob, &u).unwrap();
        let y = slq_adjoint_chaos(&prob, &x).unwrap();
        let grad = control_gradient(&prob, &u, &y);
        for _ in 0..5 {
            let dir = random_process(&mut r, grid, Space::P0, n_cells, steps);
            let eps = 1e-3;
            let mut up = u.clone();
            up.axpy(eps, &dir).unwrap();
            let mut dn = u.clone();
            dn.axpy(-eps, &dir).unwrap();
            let fd =
                (evaluate_cost_chaos(&prob, &up).unwrap() - evaluate_cost_chaos(&prob, &dn).unwrap()) / (2.0 * eps);
            let an = grad.time_inner(&dir, &ops);
            worst = worst.max((fd - an).abs() / an.abs().max(1e-12));
        }
    }
    ensure(worst <= 1e-6, || format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

/// Exact and tree backward solvers agree on every node.
pub fn exact_matches_tree() -> Check {
    let mut r = rng(47);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n_cells in [2, 4, 8] {
        for steps in 1..=6 {
            let (ops, grid) = setup(n_cells, 1.0, steps);
            let d = ops.n_dof();
            let prob = BackwardProblem::new(
                &ops,
                grid,
                random_chaos(&mut r, d, steps),
                (0..steps).map(|n| random_chaos(&mut r, d, n)).collect(),
            )
            .unwrap();
            let exact = solve_backward_exact(&prob).unwrap();
            let tree = BernoulliTree::enumerate(grid).unwrap();
            let on_tree = solve_backward_tree(&ops, &tree, &prob.on_tree(&tree).unwrap()).unwrap();
            let y = exact.y.to_tree(&tree).unwrap();
            let z = exact.z.to_tree(&tree).unwrap();
            for n in 0..=steps {
                for q in 0..tree.nodes_at(n) {
                    worst = worst.max((&y.levels[n][q] - &on_tree.y.levels[n][q]).amax());
                    if n < steps {
                        worst = worst.max((&z.levels[n][q] - &on_tree.z.levels[n][q]).amax());
                    }
                }
            }
            count += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("exact and tree differ by {worst:e}"))?;
    Ok(format!("{count} fixtures, max difference {worst:.1e}"))
}

/// Regression backend within five standard errors of the exact solution.
pub fn regression_matches_exact() -> Check {
    let mut summary = Vec::new();
    for (n_cells, steps, seed) in [(8, 5, 1), (4, 6, 2), (8, 3, 3)] {
        let mut cfg = ExperimentConfig::new(ExperimentId::OracleCrosscheck);
        cfg.n_cells = Some(n_cells);
        cfg.steps = Some(steps);
        cfg.n_paths = Some(20_000);
        cfg.seed = Some(seed);
        let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let slqheat_core::experiment::Outcome::Crosscheck(report) = out else { unreachable!() };
        for c in &report.checks {
            ensure(c.passed, || {
                format!("{} = {:e} exceeds {:e} (n_cells {n_cells}, N {steps})", c.name, c.value, c.tolerance)
            })?;
        }
        let worst = report
            .checks
            .iter()
            .filter(|c| c.name.starts_with("regression"))
            .map(|c| c.value / c.tolerance)
            .fold(0.0, f64::max);
        summary.push(format!("{worst:.2}"));
    }
    Ok(format!("worst error / (5 SE) per fixture: {}", summary.join(", ")))
}

/// Riccati solution satisfies the optimality system on trees and agrees
/// with brute-force minimization.
pub fn optimality_system() -> Check {
    let mut r = rng(53);
    let mut worst_res: f64 = 0.0;
    for (n_cells, steps) in [(2, 1), (3, 3), (4, 6), (8, 6), (10, 5)] {
        let (ops, grid) = setup(n_cells, 1.0, steps);
        let prob = random_problem(&ops, grid, &mut r);
        let (ric, _) = solve_optimality(&prob).unwrap();
        let tree = BernoulliTree::enumerate(grid).unwrap();
        let opt = simulate_optimal_tree(&prob, &ric, &tree).unwrap();
        worst_res = worst_res
            .max(state_residual_tree(&prob, &tree, &opt.x, &opt.u))
            .max(adjoint_residual_tree(&prob, &opt.x, &opt.y));
        for n in 0..steps {
            for (u, y) in opt.u.levels[n].iter().zip(&opt.y.levels[n]) {
                worst_res = worst_res.max((u - ops.p0_from_p1_vec(y)).amax());
            }
        }
    }
    ensure(worst_res <= 1e-10, || format!("residual {worst_res:e}"))?;
    let mut worst_dist: f64 = 0.0;
    for (n_cells, steps) in [(2, 1), (2, 4), (3, 2), (4, 3), (4, 4)] {
        let (ops, grid) = setup(n_cells, 1.0, steps);
        let prob = random_problem(&ops, grid, &mut r);
        let (ric, _) = solve_optimality(&prob).unwrap();
        let tree = BernoulliTree::enumerate(grid).unwrap();
        let opt = simulate_optimal_tree(&prob, &ric, &tree).unwrap();
        let brute = brute_force_tree_minimizer(&prob, &tree);
        worst_dist = worst_dist.max(tree_control_distance(&ops, &opt.u, &brute));
    }
    ensure(worst_dist <= 1e-8, || format!("Riccati and brute force differ by {worst_dist:e}"))?;
    Ok(format!("max residual {worst_res:.1e}, max distance to brute force {worst_dist:.1e}"))
}
