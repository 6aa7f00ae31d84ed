//! P1/P0 finite elements on a 1D interval with homogeneous Dirichlet data.
//!
//! Fields store interior nodal coefficients only (boundary rows are
//! eliminated). The mass matrix `M`, stiffness matrix `K` and the implicit
//! Euler matrix `M + τK` are kept tridiagonal and factorized once; every
//! operator below is a couple of `O(n)` solves.

use crate::error::{ensure_len, invalid, Result, SlqError};
use crate::tridiag::{BandedCholesky, SymTridiag};
use nalgebra::{DMatrix, DVector};

const GAUSS5_NODES: [f64; 5] =
    [-0.906_179_845_938_664, -0.538_469_310_105_683_1, 0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];
const SUBCELLS: usize = 4;

/// Composite 5-point Gauss points and weights on `(a, c)`.
fn cell_rule(a: f64, c: f64) -> impl Iterator<Item = (f64, f64)> {
    let w = (c - a) / SUBCELLS as f64;
    (0..SUBCELLS).flat_map(move |j| {
        let lo = a + j as f64 * w;
        GAUSS5_NODES.iter().zip(GAUSS5_WEIGHTS).map(move |(xi, wq)| (lo + 0.5 * w * (xi + 1.0), 0.5 * w * wq))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    length: f64,
    nodes: Vec<f64>,
    widths: Vec<f64>,
}

impl Mesh1D {
    /// Uniform mesh of `(0, length)` with `n_cells ≥ 2` cells.
    pub fn uniform(length: f64, n_cells: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return invalid(format!("domain length must be positive, got {length}"));
        }
        if n_cells < 2 {
            return invalid(format!("need at least 2 cells, got {n_cells}"));
        }
        let h = length / n_cells as f64;
        let mut nodes: Vec<f64> = (0..=n_cells).map(|i| i as f64 * h).collect();
        nodes[n_cells] = length;
        let widths = vec![h; n_cells];
        Ok(Self { length, nodes, widths })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn n_cells(&self) -> usize {
        self.widths.len()
    }

    pub fn n_dof(&self) -> usize {
        self.n_cells() - 1
    }

    /// Mesh size, the largest cell width.
    pub fn h(&self) -> f64 {
        self.widths.iter().cloned().fold(0.0, f64::max)
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    /// Refinement factor `r` such that `fine` splits every cell of `self`
    /// into `r` equal children.
    pub fn refinement_factor(&self, fine: &Mesh1D) -> Result<usize> {
        let (nc, nf) = (self.n_cells(), fine.n_cells());
        if (self.length - fine.length).abs() > 1e-12 * self.length || nf % nc != 0 {
            return invalid(format!("meshes with {nc} and {nf} cells are not nested"));
        }
        let r = nf / nc;
        let nested = self.nodes.iter().enumerate().all(|(i, x)| (fine.nodes[i * r] - x).abs() <= 1e-12 * self.length);
        if !nested {
            return invalid("fine mesh does not contain the coarse nodes");
        }
        Ok(r)
    }
}

/// Continuous piecewise-linear field, interior nodal coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldP1(pub DVector<f64>);

/// Piecewise-constant field, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldP0(pub DVector<f64>);

impl FieldP1 {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FieldP0 {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which finite-element space a coefficient vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Space {
    P1,
    P0,
}

/// Borrowed field of either kind, for operations defined on both.
#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    P1(&'a FieldP1),
    P0(&'a FieldP0),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FemOperators {
    mesh: Mesh1D,
    mass: SymTridiag,
    stiffness: SymTridiag,
    tau: f64,
    mass_factor: BandedCholesky,
    resolvent_factor: BandedCholesky,
}

impl FemOperators {
    /// Assembles `M`, `K` from the P1 element matrices and factorizes `M`
    /// and `M + τK`.
    pub fn assemble(mesh: &Mesh1D, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return invalid(format!("time step must be positive, got {tau}"));
        }
        let n = mesh.n_dof();
        let w = mesh.widths();
        let mut md = vec![0.0; n];
        let mut kd = vec![0.0; n];
        let mut mo = vec![0.0; n.saturating_sub(1)];
        let mut ko = vec![0.0; n.saturating_sub(1)];
        // cell c spans global nodes (c, c+1) = interior dofs (c-1, c)
        for (c, &hc) in w.iter().enumerate() {
            let left = c.checked_sub(1);
            let right = (c < n).then_some(c);
            if let Some(i) = left {
                md[i] += hc / 3.0;
                kd[i] += 1.0 / hc;
            }
            if let Some(j) = right {
                md[j] += hc / 3.0;
                kd[j] += 1.0 / hc;
            }
            if let (Some(i), Some(_)) = (left, right) {
                mo[i] += hc / 6.0;
                ko[i] -= 1.0 / hc;
            }
        }
        let mass = SymTridiag::new(md, mo)?;
        let stiffness = SymTridiag::new(kd, ko)?;
        let mass_factor = BandedCholesky::factor(&mass)?;
        let resolvent_factor = BandedCholesky::factor(&mass.add_scaled(tau, &stiffness))?;
        Ok(Self { mesh: mesh.clone(), mass, stiffness, tau, mass_factor, resolvent_factor })
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }
    pub fn mass(&self) -> &SymTridiag {
        &self.mass
    }
    pub fn stiffness(&self) -> &SymTridiag {
        &self.stiffness
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn n_dof(&self) -> usize {
        self.mesh.n_dof()
    }
    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    pub fn dim(&self, space: Space) -> usize {
        match space {
            Space::P1 => self.n_dof(),
            Space::P0 => self.n_cells(),
        }
    }

    /// The resolvent was factorized for one step size; a time grid using a
    /// different one must not reuse it.
    pub fn ensure_tau(&self, tau: f64) -> Result<()> {
        if (tau - self.tau).abs() > 1e-12 * self.tau.max(tau) {
            return Err(SlqError::InvalidState(format!(
                "operators factorized for tau = {}, grid uses tau = {}",
                self.tau, tau
            )));
        }
        Ok(())
    }

    fn check_p1(&self, v: &DVector<f64>) -> Result<()> {
        ensure_len("P1 field", v.len(), self.n_dof())
    }

    fn check_p0(&self, v: &DVector<f64>) -> Result<()> {
        ensure_len("P0 field", v.len(), self.n_cells())
    }

    pub fn solve_mass(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.mass_factor.solve(rhs)
    }

    /// `Δ_h v`, i.e. `w` with `M w = −K v`.
    pub fn laplacian(&self, v: &FieldP1) -> Result<FieldP1> {
        self.check_p1(&v.0)?;
        Ok(FieldP1(self.laplacian_vec(&v.0)))
    }

    pub fn laplacian_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.mass_factor.solve(&(-self.stiffness.mul(v)))
    }

    /// `A₀ v = (𝟙 − τΔ_h)⁻¹ v`, i.e. `w` with `(M + τK) w = M v`.
    pub fn resolvent(&self, v: &FieldP1) -> Result<FieldP1> {
        self.check_p1(&v.0)?;
        Ok(FieldP1(self.resolvent_vec(&v.0)))
    }

    pub fn resolvent_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.resolvent_factor.solve(&self.mass.mul(v))
    }

    /// `(𝟙 − τΔ_h) v` in coefficients: `M⁻¹(M + τK) v`.
    pub fn implicit_euler_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.laplacian_vec(v) * self.tau
    }

    /// Load vector `G c` with `(G c)_j = ∫ c φ_j` for a P0 field `c`.
    fn p0_load(&self, c: &DVector<f64>) -> DVector<f64> {
        let n = self.n_dof();
        let w = self.mesh.widths();
        let mut b = DVector::zeros(n);
        for (k, &hk) in w.iter().enumerate() {
            if k >= 1 {
                b[k - 1] += 0.5 * hk * c[k];
            }
            if k < n {
                b[k] += 0.5 * hk * c[k];
            }
        }
        b
    }

    /// `Π_h^1` applied to a P0 field.
    pub fn p1_from_p0(&self, c: &FieldP0) -> Result<FieldP1> {
        self.check_p0(&c.0)?;
        Ok(FieldP1(self.p1_from_p0_vec(&c.0)))
    }

    pub fn p1_from_p0_vec(&self, c: &DVector<f64>) -> DVector<f64> {
        self.mass_factor.solve(&self.p0_load(c))
    }

    /// `Π_h^0` applied to a P1 field: cell averages.
    pub fn p0_from_p1(&self, v: &FieldP1) -> Result<FieldP0> {
        self.check_p1(&v.0)?;
        Ok(FieldP0(self.p0_from_p1_vec(&v.0)))
    }

    pub fn p0_from_p1_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.n_dof();
        DVector::from_fn(self.n_cells(), |k, _| {
            let left = if k >= 1 { v[k - 1] } else { 0.0 };
            let right = if k < n { v[k] } else { 0.0 };
            0.5 * (left + right)
        })
    }

    /// `Π_h^1 g`: solves `M u = b`, `b_j = ∫ g φ_j`, composite 5-point Gauss per cell.
    pub fn project_p1(&self, g: impl Fn(f64) -> f64) -> FieldP1 {
        let n = self.n_dof();
        let nodes = self.mesh.nodes();
        let mut b = DVector::zeros(n);
        for (k, win) in nodes.windows(2).enumerate() {
            let (a, c) = (win[0], win[1]);
            for (x, wq) in cell_rule(a, c) {
                let gx = g(x) * wq;
                let s = (x - a) / (c - a);
                if k >= 1 {
                    b[k - 1] += gx * (1.0 - s);
                }
                if k < n {
                    b[k] += gx * s;
                }
            }
        }
        FieldP1(self.mass_factor.solve(&b))
    }

    /// Evaluates a P1 field at `x` (zero outside the interior).
    pub fn eval_p1(&self, v: &FieldP1, x: f64) -> f64 {
        eval_p1_on(&self.mesh, &v.0, x)
    }

    /// `sqrt(vᵀ M v)`
    pub fn l2_p1(&self, v: &DVector<f64>) -> f64 {
        self.mass.inner(v, v).max(0.0).sqrt()
    }

    /// `sqrt(Σ |K_k| c_k²)`
    pub fn l2_p0(&self, c: &DVector<f64>) -> f64 {
        self.mesh.widths().iter().zip(c.iter()).map(|(h, v)| h * v * v).sum::<f64>().sqrt()
    }

    /// `sqrt(vᵀ K v)`
    pub fn h1_semi(&self, v: &DVector<f64>) -> f64 {
        self.stiffness.inner(v, v).max(0.0).sqrt()
    }

    pub fn norms(&self, field: FieldRef<'_>, with_h1: bool) -> Result<Norms> {
        match field {
            FieldRef::P1(v) => {
                self.check_p1(&v.0)?;
                Ok(Norms { l2: self.l2_p1(&v.0), h1_semi: with_h1.then(|| self.h1_semi(&v.0)) })
            }
            FieldRef::P0(c) => {
                self.check_p0(&c.0)?;
                if with_h1 {
                    return invalid("H1 seminorm is not defined for piecewise-constant fields");
                }
                Ok(Norms { l2: self.l2_p0(&c.0), h1_semi: None })
            }
        }
    }

    /// L² inner product in the given space.
    pub fn inner(&self, space: Space, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match space {
            Space::P1 => self.mass.inner(u, v),
            Space::P0 => self.mesh.widths().iter().zip(u.iter().zip(v.iter())).map(|(h, (a, b))| h * a * b).sum(),
        }
    }

    pub fn norm_sq(&self, space: Space, v: &DVector<f64>) -> f64 {
        self.inner(space, v, v)
    }

    /// Exact embedding of a P1 field into a nested finer mesh.
    pub fn prolongate_p1(&self, fine: &FemOperators, v: &FieldP1) -> Result<FieldP1> {
        self.check_p1(&v.0)?;
        let r = self.mesh.refinement_factor(&fine.mesh)?;
        Ok(FieldP1(prolongate_p1_vec(&v.0, r)))
    }

    /// Exact embedding of a P0 field into a nested finer mesh.
    pub fn prolongate_p0(&self, fine: &FemOperators, c: &FieldP0) -> Result<FieldP0> {
        self.check_p0(&c.0)?;
        let r = self.mesh.refinement_factor(&fine.mesh)?;
        Ok(FieldP0(prolongate_p0_vec(&c.0, r)))
    }

    pub fn mass_dense(&self) -> DMatrix<f64> {
        self.mass.to_dense()
    }

    /// Dense `A₀` acting on coefficient vectors.
    pub fn resolvent_dense(&self) -> DMatrix<f64> {
        self.resolvent_factor.solve_matrix(&self.mass.to_dense())
    }

    /// Dense `Π_h^1` from P0 coefficients (`n_dof × n_cells`).
    pub fn p1_from_p0_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_dof(), self.n_cells());
        for k in 0..self.n_cells() {
            let mut e = DVector::zeros(self.n_cells());
            e[k] = 1.0;
            g.set_column(k, &self.p0_load(&e));
        }
        self.mass_factor.solve_matrix(&g)
    }

    /// Dense `Π_h^0` from P1 coefficients (`n_cells × n_dof`).
    pub fn p0_from_p1_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_cells(), self.n_dof());
        for j in 0..self.n_dof() {
            m[(j, j)] = 0.5;
            m[(j + 1, j)] = 0.5;
        }
        m
    }
}

/// Project a function onto P0: cell averages.
pub fn project_p0(mesh: &Mesh1D, g: impl Fn(f64) -> f64) -> FieldP0 {
    let vals = mesh
        .nodes()
        .windows(2)
        .map(|win| {
            let (a, c) = (win[0], win[1]);
            cell_rule(a, c).map(|(x, w)| w * g(x)).sum::<f64>() / (c - a)
        })
        .collect();
    FieldP0(DVector::from_vec(vals))
}

pub fn eval_p1_on(mesh: &Mesh1D, v: &DVector<f64>, x: f64) -> f64 {
    let nodes = mesh.nodes();
    if x <= 0.0 || x >= mesh.length() {
        return 0.0;
    }
    let k = match nodes.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(i) => return if i == 0 || i == nodes.len() - 1 { 0.0 } else { v[i - 1] },
        Err(i) => i - 1,
    };
    let n = v.len();
    let left = if k >= 1 { v[k - 1] } else { 0.0 };
    let right = if k < n { v[k] } else { 0.0 };
    let s = (x - nodes[k]) / (nodes[k + 1] - nodes[k]);
    left * (1.0 - s) + right * s
}

/// Linear interpolation of interior coefficients onto a mesh refined by `r`.
pub fn prolongate_p1_vec(v: &DVector<f64>, r: usize) -> DVector<f64> {
    let nc = v.len() + 1;
    let nf = nc * r;
    let at = |i: usize| if i == 0 || i == nc { 0.0 } else { v[i - 1] };
    DVector::from_fn(nf - 1, |i, _| {
        let g = i + 1;
        let (k, m) = (g / r, g % r);
        if m == 0 {
            at(k)
        } else {
            let s = m as f64 / r as f64;
            at(k) * (1.0 - s) + at(k + 1) * s
        }
    })
}

pub fn prolongate_p0_vec(c: &DVector<f64>, r: usize) -> DVector<f64> {
    DVector::from_fn(c.len() * r, |i, _| c[i / r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ops(n: usize, tau: f64) -> FemOperators {
        FemOperators::assemble(&Mesh1D::uniform(1.0, n).unwrap(), tau).unwrap()
    }

    #[test]
    fn mesh_examples() {
        let m = Mesh1D::uniform(1.0, 2).unwrap();
        assert_eq!(m.nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(m.h(), 0.5);
        assert_eq!(m.n_dof(), 1);
        let m = Mesh1D::uniform(1.0, 4).unwrap();
        assert_eq!(m.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.n_dof(), 3);
        let m = Mesh1D::uniform(2.0, 4).unwrap();
        assert_eq!(m.h(), 0.5);
        assert_eq!(m.n_dof(), 3);
    }

    #[test]
    fn mesh_rejects_bad_input() {
        assert!(Mesh1D::uniform(0.0, 4).is_err());
        assert!(Mesh1D::uniform(-1.0, 4).is_err());
        assert!(Mesh1D::uniform(1.0, 1).is_err());
    }

    #[test]
    fn two_cell_hand_assembly() {
        let o = ops(2, 0.5);
        assert_relative_eq!(o.mass().diag[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(o.stiffness().diag[0], 4.0, epsilon = 1e-15);
        // 4 = λ/3
        let lap = o.laplacian(&FieldP1::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(lap.0[0], -12.0, epsilon = 1e-12);
        let a0 = o.resolvent(&FieldP1::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(a0.0[0], 1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn four_cell_hand_assembly() {
        let o = ops(4, 0.1);
        for &d in &o.mass().diag {
            assert_relative_eq!(d, 1.0 / 6.0, epsilon = 1e-15);
        }
        for &d in &o.mass().off {
            assert_relative_eq!(d, 1.0 / 24.0, epsilon = 1e-15);
        }
        for &d in &o.stiffness().diag {
            assert_relative_eq!(d, 8.0, epsilon = 1e-14);
        }
        for &d in &o.stiffness().off {
            assert_relative_eq!(d, -4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let o = ops(4, 0.1);
        let z = FieldP1::zeros(3);
        assert_eq!(o.laplacian(&z).unwrap(), z);
        assert_eq!(o.resolvent(&z).unwrap(), z);
        assert_eq!(o.project_p1(|_| 0.0), z);
        assert_eq!(project_p0(o.mesh(), |_| 0.0), FieldP0::zeros(4));
        let n = o.norms(FieldRef::P1(&z), true).unwrap();
        assert_eq!((n.l2, n.h1_semi), (0.0, Some(0.0)));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let o = ops(4, 0.1);
        assert!(matches!(o.laplacian(&FieldP1::zeros(2)), Err(SlqError::InvalidArgument(_))));
        assert!(o.p1_from_p0(&FieldP0::zeros(3)).is_err());
    }

    #[test]
    fn tau_mismatch_is_invalid_state() {
        let o = ops(4, 0.1);
        assert!(o.ensure_tau(0.1).is_ok());
        assert!(matches!(o.ensure_tau(0.2), Err(SlqError::InvalidState(_))));
    }

    #[test]
    fn hat_function_averages() {
        let m = Mesh1D::uniform(1.0, 2).unwrap();
        let o = FemOperators::assemble(&m, 0.5).unwrap();
        let p0 = o.p0_from_p1(&FieldP1::from_vec(vec![1.0])).unwrap();
        assert_eq!(p0.0.as_slice(), &[0.5, 0.5]);
        // as a function
        let hat = |x: f64| 1.0 - (2.0 * x - 1.0).abs();
        let p0f = project_p0(&m, hat);
        assert_relative_eq!(p0f.0[0], 0.5, epsilon = 1e-14);
        let c = project_p0(&m, |_| 2.5);
        assert!(c.0.iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn norm_examples() {
        let o = ops(2, 0.5);
        let v = FieldP1::from_vec(vec![1.0]);
        let n = o.norms(FieldRef::P1(&v), true).unwrap();
        assert_relative_eq!(n.l2, (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(n.h1_semi.unwrap(), 2.0, epsilon = 1e-15);
        let c = FieldP0::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(o.norms(FieldRef::P0(&c), false).unwrap().l2, 1.0, epsilon = 1e-15);
        assert!(o.norms(FieldRef::P0(&c), true).is_err());
    }

    #[test]
    fn prolongation_of_hat() {
        let coarse = ops(2, 0.5);
        let fine = ops(4, 0.5);
        let v = coarse.prolongate_p1(&fine, &FieldP1::from_vec(vec![1.0])).unwrap();
        assert_eq!(v.0.as_slice(), &[0.5, 1.0, 0.5]);
        assert_relative_eq!(fine.l2_p1(&v.0), coarse.l2_p1(&DVector::from_vec(vec![1.0])), epsilon = 1e-14);
        let z = coarse.prolongate_p1(&fine, &FieldP1::zeros(1)).unwrap();
        assert_eq!(z, FieldP1::zeros(3));
        let odd = ops(3, 0.5);
        assert!(coarse.prolongate_p1(&odd, &FieldP1::zeros(1)).is_err());
    }

    #[test]
    fn projection_is_identity_on_p1() {
        let o = ops(8, 0.1);
        let v = FieldP1::from_vec((0..7).map(|i| (i as f64 * 0.37).sin()).collect());
        let proj = o.project_p1(|x| o.eval_p1(&v, x));
        assert!((proj.0 - v.0).amax() < 1e-13);
    }

    #[test]
    fn dense_operators_agree_with_solves() {
        let o = ops(6, 0.05);
        let v = DVector::from_fn(5, |i, _| 1.0 + i as f64);
        let c = DVector::from_fn(6, |i, _| (i as f64).cos());
        assert!((o.resolvent_dense() * &v - o.resolvent_vec(&v)).amax() < 1e-13);
        assert!((o.p1_from_p0_dense() * &c - o.p1_from_p0_vec(&c)).amax() < 1e-13);
        assert!((o.p0_from_p1_dense() * &v - o.p0_from_p1_vec(&v)).amax() < 1e-15);
    }
}
