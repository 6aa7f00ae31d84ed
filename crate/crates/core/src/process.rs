//! Discrete-time, finite-element-valued processes in three representations:
//!
//! * [`ChaosAffineProcess`]: deterministic mean plus linear loadings on past
//!   Wiener increments. Linear dynamics with additive noise stay in this
//!   class, and conditional expectations are exact (drop future loadings).
//! * [`PathProcess`]: Monte Carlo sample paths.
//! * [`TreeProcess`]: one value per node of a [`BernoulliTree`].

use crate::error::{invalid, Result};
use crate::fem::{FemOperators, Space};
use crate::noise::{BernoulliTree, NoiseEnsemble, TimeGrid};
use nalgebra::DVector;
use rayon::prelude::*;

/// `mean + Σ_j loadings[j] · ΔW_{j+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosValue {
    pub mean: DVector<f64>,
    pub loadings: Vec<DVector<f64>>,
}

impl ChaosValue {
    pub fn zeros(dim: usize) -> Self {
        Self { mean: DVector::zeros(dim), loadings: Vec::new() }
    }

    pub fn deterministic(mean: DVector<f64>) -> Self {
        Self { mean, loadings: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_loadings(&self) -> usize {
        self.loadings.len()
    }

    /// Loading on `ΔW_j` (1-based), zero if absent.
    pub fn loading(&self, j: usize) -> DVector<f64> {
        j.checked_sub(1).and_then(|i| self.loadings.get(i)).cloned().unwrap_or_else(|| DVector::zeros(self.dim()))
    }

    pub fn evaluate(&self, increments: &[f64]) -> DVector<f64> {
        let mut v = self.mean.clone();
        for (l, dw) in self.loadings.iter().zip(increments) {
            v.axpy(*dw, l, 1.0);
        }
        v
    }

    /// `E[· | F_{t_n}]`: loadings on `ΔW_j`, `j > n`, have zero conditional mean.
    pub fn conditional(&self, n: usize) -> ChaosValue {
        ChaosValue { mean: self.mean.clone(), loadings: self.loadings.iter().take(n).cloned().collect() }
    }

    /// Applies a linear map to the mean and to every loading.
    pub fn map(&self, f: impl Fn(&DVector<f64>) -> DVector<f64> + Sync) -> ChaosValue {
        ChaosValue { mean: f(&self.mean), loadings: self.loadings.par_iter().map(&f).collect() }
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &ChaosValue) {
        self.mean.axpy(a, &other.mean, 1.0);
        if other.loadings.len() > self.loadings.len() {
            let d = self.dim();
            self.loadings.resize(other.loadings.len(), DVector::zeros(d));
        }
        for (s, o) in self.loadings.iter_mut().zip(&other.loadings) {
            s.axpy(a, o, 1.0);
        }
    }

    pub fn scaled(&self, a: f64) -> ChaosValue {
        self.map(|v| v * a)
    }

    pub fn sub(&self, other: &ChaosValue) -> ChaosValue {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `E‖·‖²_{L²} = ‖mean‖² + τ Σ_j ‖loading_j‖²` (independent increments of variance τ).
    pub fn second_moment(&self, ops: &FemOperators, space: Space, tau: f64) -> f64 {
        ops.norm_sq(space, &self.mean) + tau * self.loadings.iter().map(|l| ops.norm_sq(space, l)).sum::<f64>()
    }

    /// `E[(self, other)_{L²}]`
    pub fn expected_inner(&self, other: &ChaosValue, ops: &FemOperators, space: Space, tau: f64) -> f64 {
        ops.inner(space, &self.mean, &other.mean)
            + tau * self.loadings.iter().zip(&other.loadings).map(|(a, b)| ops.inner(space, a, b)).sum::<f64>()
    }

    pub fn is_deterministic(&self) -> bool {
        self.loadings.iter().all(|l| l.iter().all(|v| *v == 0.0))
    }
}

/// Chaos-affine process on a time grid; `values[n]` is the value at `t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosAffineProcess {
    pub grid: TimeGrid,
    pub space: Space,
    pub values: Vec<ChaosValue>,
}

impl ChaosAffineProcess {
    pub fn new(grid: TimeGrid, space: Space, values: Vec<ChaosValue>) -> Result<Self> {
        let p = Self { grid, space, values };
        p.check_adapted()?;
        Ok(p)
    }

    /// `len` deterministic zero values of dimension `dim`.
    pub fn zeros(grid: TimeGrid, space: Space, dim: usize, len: usize) -> Self {
        Self { grid, space, values: vec![ChaosValue::zeros(dim); len] }
    }

    pub fn deterministic(grid: TimeGrid, space: Space, means: Vec<DVector<f64>>) -> Self {
        Self { grid, space, values: means.into_iter().map(ChaosValue::deterministic).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at `t_n` may only load on `ΔW_1, …, ΔW_n`.
    pub fn check_adapted(&self) -> Result<()> {
        for (n, v) in self.values.iter().enumerate() {
            if v.n_loadings() > n {
                return invalid(format!("value at step {n} loads on increment {} (not adapted)", v.n_loadings()));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, n: usize, increments: &[f64]) -> DVector<f64> {
        self.values[n].evaluate(increments)
    }

    pub fn second_moment(&self, ops: &FemOperators, n: usize) -> f64 {
        self.values[n].second_moment(ops, self.space, self.grid.tau())
    }

    pub fn to_paths(&self, noise: &NoiseEnsemble) -> Result<PathProcess> {
        self.grid.ensure_same(noise.grid())?;
        let values = (0..noise.n_paths())
            .into_par_iter()
            .map(|p| {
                let inc = noise.path(p);
                self.values.iter().map(|v| v.evaluate(inc)).collect()
            })
            .collect();
        Ok(PathProcess { grid: self.grid, space: self.space, values })
    }

    pub fn to_tree(&self, tree: &BernoulliTree) -> Result<TreeProcess> {
        self.grid.ensure_same(tree.grid())?;
        let levels = self
            .values
            .iter()
            .enumerate()
            .map(|(n, v)| (0..tree.nodes_at(n)).map(|q| v.evaluate(&tree.path(q))).collect())
            .collect();
        Ok(TreeProcess { grid: self.grid, space: self.space, levels })
    }

    /// `self += a · other`, value by value.
    pub fn axpy(&mut self, a: f64, other: &ChaosAffineProcess) -> Result<()> {
        if self.len() != other.len() || self.space != other.space {
            return invalid("process shape mismatch");
        }
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            s.axpy(a, o);
        }
        Ok(())
    }

    /// `sqrt(τ Σ_n E‖v_n‖²)` over all stored values.
    pub fn time_norm(&self, ops: &FemOperators) -> f64 {
        let tau = self.grid.tau();
        (tau * (0..self.len()).map(|n| self.second_moment(ops, n)).sum::<f64>()).sqrt()
    }

    /// `τ Σ_n E(u_n, v_n)`
    pub fn time_inner(&self, other: &ChaosAffineProcess, ops: &FemOperators) -> f64 {
        let tau = self.grid.tau();
        tau * self.values.iter().zip(&other.values).map(|(a, b)| a.expected_inner(b, ops, self.space, tau)).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &ChaosAffineProcess) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        let mut m: f64 = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            let d = a.sub(b);
            m = m.max(d.mean.amax());
            for l in &d.loadings {
                m = m.max(l.amax());
            }
        }
        m
    }
}

/// Sample paths, `values[p][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathProcess {
    pub grid: TimeGrid,
    pub space: Space,
    pub values: Vec<Vec<DVector<f64>>>,
}

impl PathProcess {
    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, p: usize, n: usize) -> &DVector<f64> {
        &self.values[p][n]
    }

    /// Ensemble mean at step `n`.
    pub fn mean(&self, n: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.values[0][n].len());
        for path in &self.values {
            acc += &path[n];
        }
        acc / self.n_paths() as f64
    }

    /// Monte Carlo `E‖v_n‖²` and its standard error.
    pub fn second_moment(&self, ops: &FemOperators, n: usize) -> (f64, f64) {
        mean_and_stderr(self.values.iter().map(|p| ops.norm_sq(self.space, &p[n])))
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in xs {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    if n < 2 {
        return (mean, 0.0);
    }
    let var = m2 / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Values on the nodes of a Bernoulli tree, `levels[n][q]`, `q < 2^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeProcess {
    pub grid: TimeGrid,
    pub space: Space,
    pub levels: Vec<Vec<DVector<f64>>>,
}

impl TreeProcess {
    /// Collects per-path values `per_path[p][n]` (one entry per tree path)
    /// onto tree nodes. Adaptedness makes path `q` a valid representative
    /// of node `q` at every level `n` with `q < 2^n`.
    pub fn from_paths(tree: &BernoulliTree, space: Space, per_path: &[Vec<DVector<f64>>]) -> Result<Self> {
        if per_path.len() != tree.n_paths() {
            return invalid(format!("{} paths given, tree has {}", per_path.len(), tree.n_paths()));
        }
        let len = per_path[0].len();
        let levels = (0..len).map(|n| (0..tree.nodes_at(n)).map(|q| per_path[q][n].clone()).collect()).collect();
        Ok(Self { grid: *tree.grid(), space, levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Value along path `p` at level `n`.
    pub fn on_path(&self, p: usize, n: usize) -> &DVector<f64> {
        &self.levels[n][p & ((1 << n) - 1)]
    }

    /// `E‖v_n‖²` under the tree measure.
    pub fn second_moment(&self, ops: &FemOperators, n: usize) -> f64 {
        let w = 1.0 / self.levels[n].len() as f64;
        self.levels[n].iter().map(|v| ops.norm_sq(self.space, v)).sum::<f64>() * w
    }

    pub fn expected_inner(&self, other: &TreeProcess, ops: &FemOperators, n: usize) -> f64 {
        let w = 1.0 / self.levels[n].len() as f64;
        self.levels[n].iter().zip(&other.levels[n]).map(|(a, b)| ops.inner(self.space, a, b)).sum::<f64>() * w
    }

    /// `sqrt(τ Σ_n E‖v_n‖²)`
    pub fn time_norm(&self, ops: &FemOperators) -> f64 {
        (self.grid.tau() * (0..self.len()).map(|n| self.second_moment(ops, n)).sum::<f64>()).sqrt()
    }
}

/// `E[v | F_{t_n}]` for values `v` at level `n + 1`: average of the two children.
pub fn tree_conditional(next: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let half = next.len() / 2;
    (0..half).map(|q| (&next[q] + &next[q + half]) * 0.5).collect()
}

/// `(1/τ) E[v ΔW_{n+1} | F_{t_n}]` for values `v` at level `n + 1`.
pub fn tree_increment_covariance(next: &[DVector<f64>], tau: f64) -> Vec<DVector<f64>> {
    let half = next.len() / 2;
    let s = tau.sqrt();
    (0..half).map(|q| (&next[q] - &next[q + half]) * (0.5 * s / tau)).collect()
}
