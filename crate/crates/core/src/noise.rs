//! Time grids and Wiener-increment sources: seeded Gaussian ensembles and
//! exhaustive ±√τ trees.

use crate::error::{invalid, Result, SlqError};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

pub const DEFAULT_SEED: u64 = 0x5EED;
pub const MAX_TREE_STEPS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    tau: f64,
}

impl TimeGrid {
    /// Uniform grid of `[0, horizon]`; the step `τ = horizon/steps` must not exceed 1.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if steps == 0 {
            return invalid("need at least one time step");
        }
        let tau = horizon / steps as f64;
        if tau > 1.0 {
            return invalid(format!("time step {tau} exceeds 1"));
        }
        Ok(Self { horizon, steps, tau })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.tau
        }
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Coarse grid with `steps / factor` steps over the same horizon.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return invalid(format!("factor {factor} does not divide {} steps", self.steps));
        }
        Self::new(self.horizon, self.steps / factor)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if !self.same_as(other) {
            return invalid(format!(
                "time grid mismatch: ({}, {}) vs ({}, {})",
                self.horizon, self.steps, other.horizon, other.steps
            ));
        }
        Ok(())
    }
}

/// Standard normal sample for key `(seed, path, step)`: ChaCha8 keyed by the
/// seed, stream = path, one 64-bit word per step, mapped through `Φ⁻¹`.
pub fn standard_normal(seed: u64, path: u64, step: u64) -> f64 {
    let mut rng = path_stream(seed, path);
    rng.set_word_pos(2 * step as u128);
    uniform_to_normal(rng.next_u64())
}

fn path_stream(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn uniform_to_normal(bits: u64) -> f64 {
    // open interval (0, 1)
    let u = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let n = Normal::standard();
    n.inverse_cdf(u)
}

/// Gaussian increments `ΔW_{n+1} = W(t_{n+1}) − W(t_n)` for a set of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    master_seed: u64,
    increments: Vec<f64>,
}

impl NoiseEnsemble {
    /// Path `p`, step `n` is drawn from key `(seed, p, n)` only, so the
    /// result does not depend on thread count or enumeration order.
    pub fn sample(grid: TimeGrid, n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return invalid("need at least one path");
        }
        let steps = grid.steps();
        let sd = grid.tau().sqrt();
        let mut increments = vec![0.0; n_paths * steps];
        increments.par_chunks_mut(steps).enumerate().for_each(|(p, row)| {
            let mut rng = path_stream(seed, p as u64);
            for dw in row.iter_mut() {
                *dw = sd * uniform_to_normal(rng.next_u64());
            }
        });
        Ok(Self { grid, n_paths, master_seed: seed, increments })
    }

    /// Wraps explicit increments, `increments[p][n]`.
    pub fn from_increments(grid: TimeGrid, paths: &[Vec<f64>]) -> Result<Self> {
        if paths.is_empty() {
            return invalid("need at least one path");
        }
        let mut increments = Vec::with_capacity(paths.len() * grid.steps());
        for p in paths {
            if p.len() != grid.steps() {
                return invalid(format!("path has {} increments, grid has {} steps", p.len(), grid.steps()));
            }
            increments.extend_from_slice(p);
        }
        Ok(Self { grid, n_paths: paths.len(), master_seed: 0, increments })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Increments of path `p`; entry `n` is `ΔW_{n+1}`.
    pub fn path(&self, p: usize) -> &[f64] {
        let s = self.grid.steps();
        &self.increments[p * s..(p + 1) * s]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.increments.chunks(self.grid.steps())
    }

    /// Same Brownian paths on a grid `factor` times coarser.
    ///
    /// Block sums are formed by pairwise halving, so for powers of two
    /// coarsening in stages gives bitwise the same increments as coarsening
    /// at once.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let increments = self.paths().flat_map(|row| row.chunks(factor).map(block_sum)).collect();
        Ok(Self { grid, n_paths: self.n_paths, master_seed: self.master_seed, increments })
    }
}

fn block_sum(block: &[f64]) -> f64 {
    let n = block.len();
    if n.is_power_of_two() && n > 1 {
        let (a, b) = block.split_at(n / 2);
        block_sum(a) + block_sum(b)
    } else {
        block.iter().sum()
    }
}

/// All `2^N` sequences of increments `±√τ`, each with weight `2^{−N}`.
///
/// Path index bit `n` set means `ΔW_{n+1} = −√τ`. The node at level `n` on
/// the way to path `p` is `p & (2^n − 1)`; its children are `q` and `q + 2^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliTree {
    grid: TimeGrid,
}

impl BernoulliTree {
    pub fn enumerate(grid: TimeGrid) -> Result<Self> {
        if grid.steps() > MAX_TREE_STEPS {
            return Err(SlqError::ResourceLimit(format!(
                "tree with {} steps exceeds the cap of {MAX_TREE_STEPS}",
                grid.steps()
            )));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn n_paths(&self) -> usize {
        1 << self.grid.steps()
    }
    pub fn weight(&self) -> f64 {
        1.0 / self.n_paths() as f64
    }
    pub fn nodes_at(&self, level: usize) -> usize {
        1 << level
    }

    /// `ΔW_{n+1}` on path (or any node deeper than `n`) `p`.
    pub fn increment(&self, p: usize, n: usize) -> f64 {
        let s = self.grid.tau().sqrt();
        if p >> n & 1 == 1 {
            -s
        } else {
            s
        }
    }

    pub fn path(&self, p: usize) -> Vec<f64> {
        (0..self.grid.steps()).map(|n| self.increment(p, n)).collect()
    }

    /// Every path as a [`NoiseEnsemble`], path index preserved.
    pub fn as_ensemble(&self) -> NoiseEnsemble {
        let paths: Vec<Vec<f64>> = (0..self.n_paths()).map(|p| self.path(p)).collect();
        NoiseEnsemble::from_increments(self.grid, &paths).expect("tree paths match grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        assert_eq!(g.tau(), 0.5);
        assert_eq!(g.times(), vec![0.0, 0.5, 1.0]);
        assert_eq!(TimeGrid::new(1.0, 64).unwrap().tau(), 1.0 / 64.0);
        assert!(TimeGrid::new(2.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let a = NoiseEnsemble::sample(g, 50, 7).unwrap();
        let b = NoiseEnsemble::sample(g, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = NoiseEnsemble::sample(g, 50, 8).unwrap();
        assert_ne!(a, c);
        // keyed access agrees with the bulk sampler
        let sd = g.tau().sqrt();
        assert_eq!(a.path(13)[5], sd * standard_normal(7, 13, 5));
    }

    #[test]
    fn empirical_moments() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let n_paths = 100_000;
        let e = NoiseEnsemble::sample(g, n_paths, DEFAULT_SEED).unwrap();
        let tau = g.tau();
        for n in 0..4 {
            let xs: Vec<f64> = e.paths().map(|p| p[n]).collect();
            let mean = xs.iter().sum::<f64>() / n_paths as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_paths - 1) as f64;
            assert!(mean.abs() <= 5.0 * tau.sqrt() / (n_paths as f64).sqrt(), "mean {mean}");
            assert!((var - tau).abs() <= 5.0 * tau / (n_paths as f64).sqrt(), "var {var}");
        }
    }

    #[test]
    fn coarsen_sums_blocks() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let e = NoiseEnsemble::from_increments(g, &[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let c = e.coarsen(2).unwrap();
        assert_eq!(c.path(0), &[3.0, 7.0]);
        assert_eq!(c.grid().steps(), 2);
        assert_eq!(e.coarsen(1).unwrap(), e);
        assert!(e.coarsen(3).is_err());
    }

    #[test]
    fn coarsening_composes_bitwise() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let e = NoiseEnsemble::sample(g, 20, 3).unwrap();
        assert_eq!(e.coarsen(2).unwrap().coarsen(2).unwrap(), e.coarsen(4).unwrap());
    }

    #[test]
    fn coarse_variance() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let n_paths = 100_000;
        let e = NoiseEnsemble::sample(g, n_paths, 11).unwrap().coarsen(4).unwrap();
        let var = e.paths().map(|p| p[0] * p[0]).sum::<f64>() / n_paths as f64;
        let target = 4.0 * g.tau();
        assert!((var - target).abs() <= 5.0 * target * (2.0 / n_paths as f64).sqrt());
    }

    #[test]
    fn tree_examples() {
        let t = BernoulliTree::enumerate(TimeGrid::new(1.0, 1).unwrap()).unwrap();
        assert_eq!(t.n_paths(), 2);
        assert_eq!(t.path(0), vec![1.0]);
        assert_eq!(t.path(1), vec![-1.0]);
        assert_eq!(t.weight(), 0.5);
        let t3 = BernoulliTree::enumerate(TimeGrid::new(1.0, 3).unwrap()).unwrap();
        assert_eq!(t3.n_paths(), 8);
        assert_eq!(t3.weight() * t3.n_paths() as f64, 1.0);
        let big = TimeGrid::new(1.0, 13).unwrap();
        assert!(matches!(BernoulliTree::enumerate(big), Err(SlqError::ResourceLimit(_))));
    }

    #[test]
    fn tree_moments_are_exact() {
        let g = TimeGrid::new(0.6, 5).unwrap();
        let t = BernoulliTree::enumerate(g).unwrap();
        for n in 0..5 {
            let m1: f64 = (0..t.n_paths()).map(|p| t.increment(p, n) * t.weight()).sum();
            let m2: f64 = (0..t.n_paths()).map(|p| t.increment(p, n).powi(2) * t.weight()).sum();
            assert!(m1.abs() < 1e-15);
            assert!((m2 - g.tau()).abs() < 1e-15);
        }
    }
}
