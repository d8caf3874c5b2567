//! Anisotropic viscosity tensors `A_ijkl(t, x)` and the stress `τ = A D(u)`.
//!
//! Every stored tensor carries the minor symmetries `A_ijkl = A_jikl = A_ijlk`
//! (enforced by symmetrizing at construction), so `τ` is symmetric and
//! `τ : ∇u = τ : D(u)` holds pointwise.
//!
//! The diagonal variant `DiagNu` is solved through the `Δ_ν = Σ ν_a ∂_a²`
//! fast path. Its stress is the minor-symmetric tensor
//! `τ = (Σ_k ν_k D_kk) I + ν_max (D − tr D I)`, whose operator coincides with
//! `−Δ_ν` on gradient fields (the only fields a gradient forcing produces) and
//! reduces to `τ = ν D` for isotropic `ν`.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::spectral::{grad_full, symmetrize};
use crate::grid::{GridSpec, ScalarField, TensorField, VectorField};

/// Rank-4 coefficient block, padded to 3 along every index.
pub type Rank4 = [[[[f64; 3]; 3]; 3]; 3];

pub const ZERO4: Rank4 = [[[[0.0; 3]; 3]; 3]; 3];

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Project onto the minor-symmetric subspace.
pub fn symmetrize_minor(a: &Rank4) -> Rank4 {
    let mut out = ZERO4;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    out[i][j][k][l] = 0.25 * (a[i][j][k][l] + a[j][i][k][l] + a[i][j][l][k] + a[j][i][l][k]);
                }
            }
        }
    }
    out
}

/// `A_ijkl = μ(δ_ik δ_jl + δ_il δ_jk)`, i.e. `τ = 2μ D`.
pub fn isotropic_block(mu: f64) -> Rank4 {
    let mut a = ZERO4;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    a[i][j][k][l] = mu * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k));
                }
            }
        }
    }
    a
}

/// Minor-symmetric realization of the diagonal operator `Δ_ν`.
pub fn diag_block(nu: &[f64]) -> Rank4 {
    let dim = nu.len();
    let nu_max = nu.iter().copied().fold(0.0, f64::max);
    let mut a = ZERO4;
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                for l in 0..dim {
                    a[i][j][k][l] = delta(i, j) * delta(k, l) * nu[k]
                        + nu_max * (0.5 * (delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k)) - delta(i, j) * delta(k, l));
                }
            }
        }
    }
    a
}

fn scale_block(a: &Rank4, s: f64) -> Rank4 {
    let mut out = *a;
    out.iter_mut().flatten().flatten().flatten().for_each(|v| *v *= s);
    out
}

fn lerp_block(a: &Rank4, b: &Rank4, w: f64) -> Rank4 {
    let mut out = ZERO4;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    out[i][j][k][l] = (1.0 - w) * a[i][j][k][l] + w * b[i][j][k][l];
                }
            }
        }
    }
    out
}

/// `τ_ij = A_ijkl D_kl`.
pub fn contract_block(a: &Rank4, d: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    let mut tau = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                for l in 0..dim {
                    s += a[i][j][k][l] * d[k][l];
                }
            }
            tau[i][j] = s;
        }
    }
    tau
}

/// Spatially varying coefficients at one breakpoint time.
#[derive(Clone)]
pub struct CoefficientField {
    grid: GridSpec,
    cells: Vec<Rank4>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField").field("grid", &self.grid).field("cells", &self.cells.len()).finish()
    }
}

impl CoefficientField {
    pub fn new(grid: GridSpec, cells: Vec<Rank4>) -> Result<Self> {
        if cells.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficient blocks for {} cells",
                cells.len(),
                grid.len()
            )));
        }
        let cells: Vec<Rank4> = cells.iter().map(symmetrize_minor).collect();
        if cells.iter().flatten().flatten().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite viscosity coefficient".into()));
        }
        Ok(Self { grid, cells })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> Rank4) -> Result<Self> {
        Self::new(grid, (0..grid.len()).map(|i| f(grid.coords(i))).collect())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cell(&self, i: usize) -> &Rank4 {
        &self.cells[i]
    }
}

#[derive(Debug, Clone)]
pub enum ViscosityTensor {
    /// Axis-wise viscosities `ν_a > 0`.
    DiagNu { nu: Vec<f64> },
    ConstantFull { dim: usize, a: Rank4 },
    /// Piecewise-linear in time between `(t, coefficients)` breakpoints, sorted by time.
    VaryingFull { dim: usize, breakpoints: Vec<(f64, CoefficientField)> },
}

impl ViscosityTensor {
    pub fn diag(nu: &[f64]) -> Result<Self> {
        if nu.is_empty() || nu.len() > 3 {
            return Err(Error::InvalidParameter(format!("{} diagonal viscosities given", nu.len())));
        }
        if nu.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!("diagonal viscosities must be positive: {nu:?}")));
        }
        Ok(Self::DiagNu { nu: nu.to_vec() })
    }

    /// `τ = 2μ D(u)`.
    pub fn isotropic(dim: usize, mu: f64) -> Result<Self> {
        Self::constant(dim, isotropic_block(mu))
    }

    pub fn constant(dim: usize, a: Rank4) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("tensor dimension {dim}")));
        }
        let mut a = symmetrize_minor(&a);
        if a.iter().flatten().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite viscosity coefficient".into()));
        }
        // entries outside the active dimensions are meaningless
        for (i, ai) in a.iter_mut().enumerate() {
            for (j, aij) in ai.iter_mut().enumerate() {
                for (k, aijk) in aij.iter_mut().enumerate() {
                    for (l, v) in aijk.iter_mut().enumerate() {
                        if i >= dim || j >= dim || k >= dim || l >= dim {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        Ok(Self::ConstantFull { dim, a })
    }

    /// Constant tensor from its `dim⁴` entries in `(i, j, k, l)` row-major order.
    pub fn from_entries(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim.pow(4) {
            return Err(Error::InvalidParameter(format!(
                "{} tensor entries given, {} expected",
                entries.len(),
                dim.pow(4)
            )));
        }
        let mut a = ZERO4;
        let mut it = entries.iter();
        for ai in a.iter_mut().take(dim) {
            for aij in ai.iter_mut().take(dim) {
                for aijk in aij.iter_mut().take(dim) {
                    for v in aijk.iter_mut().take(dim) {
                        *v = *it.next().expect("length checked");
                    }
                }
            }
        }
        Self::constant(dim, a)
    }

    pub fn varying(breakpoints: Vec<(f64, CoefficientField)>) -> Result<Self> {
        let Some((_, first)) = breakpoints.first() else {
            return Err(Error::InvalidParameter("varying tensor needs at least one breakpoint".into()));
        };
        let grid = *first.grid();
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter("breakpoint times must increase".into()));
            }
        }
        for (_, c) in &breakpoints {
            grid.check_same(c.grid())?;
        }
        Ok(Self::VaryingFull { dim: grid.dim(), breakpoints })
    }

    /// `τ = 2μ(1 + a sin x₁) D(u)`.
    pub fn modulated_isotropic(grid: &GridSpec, mu: f64, amplitude: f64) -> Result<Self> {
        let field = CoefficientField::from_fn(*grid, |x| isotropic_block(mu * (1.0 + amplitude * x[0].sin())))?;
        Self::varying(vec![(0.0, field)])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::DiagNu { nu } => nu.len(),
            Self::ConstantFull { dim, .. } | Self::VaryingFull { dim, .. } => *dim,
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, Self::VaryingFull { .. })
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Self::VaryingFull { breakpoints, .. } if breakpoints.len() > 1)
    }

    /// The tensor scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            Self::DiagNu { nu } => Self::DiagNu { nu: nu.iter().map(|v| v * s).collect() },
            Self::ConstantFull { dim, a } => Self::ConstantFull { dim: *dim, a: scale_block(a, s) },
            Self::VaryingFull { dim, breakpoints } => Self::VaryingFull {
                dim: *dim,
                breakpoints: breakpoints
                    .iter()
                    .map(|(t, c)| {
                        let cells = c.cells.iter().map(|a| scale_block(a, s)).collect();
                        (*t, CoefficientField { grid: c.grid, cells })
                    })
                    .collect(),
            },
        }
    }

    /// The constant block, if the tensor does not vary in space.
    pub fn constant_block(&self) -> Option<Rank4> {
        match self {
            Self::DiagNu { nu } => Some(diag_block(nu)),
            Self::ConstantFull { a, .. } => Some(*a),
            Self::VaryingFull { .. } => None,
        }
    }

    fn bracket(breakpoints: &[(f64, CoefficientField)], t: f64) -> (usize, usize, f64) {
        let last = breakpoints.len() - 1;
        if t <= breakpoints[0].0 {
            return (0, 0, 0.0);
        }
        if t >= breakpoints[last].0 {
            return (last, last, 0.0);
        }
        let hi = breakpoints.iter().position(|(bt, _)| *bt > t).expect("t inside range");
        let (t0, t1) = (breakpoints[hi - 1].0, breakpoints[hi].0);
        (hi - 1, hi, (t - t0) / (t1 - t0))
    }

    /// Coefficient block at a cell and time.
    pub fn block_at(&self, t: f64, cell: usize) -> Rank4 {
        match self {
            Self::VaryingFull { breakpoints, .. } => {
                let (lo, hi, w) = Self::bracket(breakpoints, t);
                if lo == hi {
                    breakpoints[lo].1.cells[cell]
                } else {
                    lerp_block(&breakpoints[lo].1.cells[cell], &breakpoints[hi].1.cells[cell], w)
                }
            }
            _ => self.constant_block().expect("constant tensor"),
        }
    }

    /// Spatial mean of the coefficient blocks at time `t`.
    pub fn average_block(&self, t: f64) -> Rank4 {
        match self {
            Self::VaryingFull { breakpoints, .. } => {
                let n = breakpoints[0].1.cells.len();
                let mut acc = ZERO4;
                for c in 0..n {
                    let b = self.block_at(t, c);
                    for i in 0..3 {
                        for j in 0..3 {
                            for k in 0..3 {
                                for l in 0..3 {
                                    acc[i][j][k][l] += b[i][j][k][l];
                                }
                            }
                        }
                    }
                }
                scale_block(&acc, 1.0 / n as f64)
            }
            _ => self.constant_block().expect("constant tensor"),
        }
    }

    /// Whether `A_ijkl = A_klij` holds (to a relative tolerance) at time `t`.
    pub fn has_major_symmetry(&self, t: f64) -> bool {
        let check = |a: &Rank4| {
            let scale = a.iter().flatten().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            (0..3).all(|i| {
                (0..3).all(|j| {
                    (0..3).all(|k| (0..3).all(|l| (a[i][j][k][l] - a[k][l][i][j]).abs() <= 1e-12 * scale))
                })
            })
        };
        match self {
            Self::DiagNu { .. } => true,
            Self::ConstantFull { a, .. } => check(a),
            Self::VaryingFull { breakpoints, .. } => {
                let n = breakpoints[0].1.cells.len();
                (0..n).all(|c| check(&self.block_at(t, c)))
            }
        }
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.dim() != grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}-dimensional tensor on a {}-dimensional grid",
                self.dim(),
                grid.dim()
            )));
        }
        if let Self::VaryingFull { breakpoints, .. } = self {
            grid.check_same(breakpoints[0].1.grid())?;
        }
        Ok(())
    }
}

/// `τ_ij = A_ijkl(t, x) [Du]_kl`.
pub fn apply_tau(a: &ViscosityTensor, t: f64, du: &TensorField) -> Result<TensorField> {
    let grid = *du.grid();
    a.check_grid(&grid)?;
    let dim = grid.dim();
    let mut tau = TensorField::zeros(grid);
    let constant = a.constant_block();
    for cell in 0..grid.len() {
        let d = du.at(cell);
        let block = match &constant {
            Some(b) => *b,
            None => a.block_at(t, cell),
        };
        tau.set_at(cell, &contract_block(&block, &d, dim));
    }
    Ok(tau)
}

/// Stress of a velocity field, `τ(D(u))`.
pub fn stress(a: &ViscosityTensor, t: f64, u: &VectorField) -> Result<TensorField> {
    apply_tau(a, t, &symmetrize(&grad_full(u)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoercivityMethod {
    /// Minimum over unit wavevectors `k` and amplitudes `a` of the symbol
    /// form on rank-one strains `sym(k ⊗ a)`; exact integral coercivity
    /// constant for constant coefficients.
    FourierSymbol,
    /// Infimum of the Rayleigh quotient `(A D):D / |D|²` over all symmetric
    /// `D`, minimized over cells; pointwise coercivity.
    Rayleigh,
}

impl fmt::Display for CoercivityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FourierSymbol => write!(f, "fourier-symbol"),
            Self::Rayleigh => write!(f, "rayleigh"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    pub c_est: f64,
    pub method: CoercivityMethod,
    pub passed: bool,
    pub seed: u64,
}

pub const DEFAULT_COERCIVITY_SEED: u64 = 0x5eed;

/// Smallest value of `a·S(k̂)a / |sym(k̂ ⊗ a)|²` over `a`, for unit `k̂`.
pub fn rank_one_minimum(block: &Rank4, k: [f64; 3], dim: usize) -> f64 {
    let norm = (0..dim).map(|i| k[i] * k[i]).sum::<f64>().sqrt();
    let kh: Vec<f64> = (0..dim).map(|i| k[i] / norm).collect();
    let mut s = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for m in 0..dim {
            let mut v = 0.0;
            for j in 0..dim {
                for l in 0..dim {
                    v += block[i][j][m][l] * kh[j] * kh[l];
                }
            }
            s[(i, m)] = v;
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    // |sym(k⊗a)|² = a·M a with M = (I + k kᵀ)/2, so M^{-1/2} = √2 I + (1 − √2) k kᵀ
    let r2 = std::f64::consts::SQRT_2;
    let mut w = DMatrix::<f64>::identity(dim, dim) * r2;
    for i in 0..dim {
        for j in 0..dim {
            w[(i, j)] += (1.0 - r2) * kh[i] * kh[j];
        }
    }
    let g = &w * s * &w;
    SymmetricEigen::new((&g + g.transpose()) * 0.5).eigenvalues.min()
}

/// Minimum eigenvalue of `D ↦ (A D):D` on symmetric matrices.
pub fn pointwise_minimum(block: &Rank4, dim: usize) -> f64 {
    let mut basis: Vec<[[f64; 3]; 3]> = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let mut b = [[0.0; 3]; 3];
            if i == j {
                b[i][i] = 1.0;
            } else {
                b[i][j] = std::f64::consts::FRAC_1_SQRT_2;
                b[j][i] = std::f64::consts::FRAC_1_SQRT_2;
            }
            basis.push(b);
        }
    }
    let m = basis.len();
    let mut q = DMatrix::<f64>::zeros(m, m);
    for (b, eb) in basis.iter().enumerate() {
        let tau = contract_block(block, eb, dim);
        for (a, ea) in basis.iter().enumerate() {
            let mut v = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    v += tau[i][j] * ea[i][j];
                }
            }
            q[(a, b)] = v;
        }
    }
    SymmetricEigen::new((&q + q.transpose()) * 0.5).eigenvalues.min()
}

/// Directions probed by the symbol method: every integer direction with
/// entries up to 6 (which includes the low grid modes), plus seeded random
/// unit vectors.
fn probe_directions(dim: usize, seed: u64) -> Vec<[f64; 3]> {
    let reach = 6i32;
    let mut dirs = Vec::new();
    let r = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
    for m0 in r(0) {
        for m1 in r(1) {
            for m2 in r(2) {
                if (m0, m1, m2) != (0, 0, 0) {
                    dirs.push([m0 as f64, m1 as f64, m2 as f64]);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..256 {
        let mut v = [0.0; 3];
        for x in v.iter_mut().take(dim) {
            *x = rng.gen_range(-1.0..1.0);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            dirs.push(v);
        }
    }
    dirs
}

pub fn coercivity_estimate_with(a: &ViscosityTensor, t: f64, method: CoercivityMethod, seed: u64) -> CoercivityReport {
    let dim = a.dim();
    let blocks: Vec<Rank4> = match a {
        ViscosityTensor::VaryingFull { breakpoints, .. } => {
            (0..breakpoints[0].1.cells.len()).map(|c| a.block_at(t, c)).collect()
        }
        _ => vec![a.constant_block().expect("constant tensor")],
    };
    let c_est = match method {
        CoercivityMethod::Rayleigh => blocks.iter().map(|b| pointwise_minimum(b, dim)).fold(f64::INFINITY, f64::min),
        CoercivityMethod::FourierSymbol => {
            let dirs = probe_directions(dim, seed);
            blocks
                .iter()
                .map(|b| dirs.iter().map(|k| rank_one_minimum(b, *k, dim)).fold(f64::INFINITY, f64::min))
                .fold(f64::INFINITY, f64::min)
        }
    };
    CoercivityReport { c_est, method, passed: c_est > 0.0, seed }
}

/// Symbol method for constant tensors, pointwise Rayleigh bound for varying ones.
pub fn coercivity_estimate(a: &ViscosityTensor, t: f64) -> CoercivityReport {
    let method = if a.is_constant() { CoercivityMethod::FourierSymbol } else { CoercivityMethod::Rayleigh };
    coercivity_estimate_with(a, t, method, DEFAULT_COERCIVITY_SEED)
}

#[derive(Debug, Clone)]
pub struct H4Report {
    /// Symbol invertible at every nonzero grid wavevector.
    pub symbol_invertible: bool,
    /// Largest sampled `‖𝒜⁻¹∇div w‖ / ‖w‖` in the discrete `L^{3/2}` norm.
    pub sample_norm: f64,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub h1_residual: f64,
    pub coercivity: CoercivityReport,
    pub h4: Option<H4Report>,
}

impl HypothesisReport {
    pub fn passed(&self, h1_tol: f64) -> bool {
        self.h1_residual <= h1_tol
            && self.coercivity.passed
            && self.h4.as_ref().is_none_or(|h| h.symbol_invertible && h.sample_norm.is_finite())
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "H1 max |tau:grad u - tau:D(u)| = {:.3e}", self.h1_residual)?;
        writeln!(f, "H2 implied by the quadratic stress law (not checked)")?;
        writeln!(
            f,
            "H3 c_est = {:.6e} ({}, seed {:#x}) -> {}",
            self.coercivity.c_est,
            self.coercivity.method,
            self.coercivity.seed,
            if self.coercivity.passed { "pass" } else { "FAIL" }
        )?;
        match &self.h4 {
            Some(h4) => writeln!(
                f,
                "H4 symbol invertible: {}, sampled L^(3/2) norm of A^-1 grad div = {:.6e}",
                h4.symbol_invertible, h4.sample_norm
            ),
            None => writeln!(f, "H4 not evaluated (spatially varying tensor)"),
        }
    }
}

/// Pointwise `max |τ:∇u − τ:D(u)|`.
pub fn h1_residual(a: &ViscosityTensor, t: f64, u: &VectorField) -> Result<f64> {
    let g = grad_full(u);
    let d = symmetrize(&g);
    let tau = apply_tau(a, t, &d)?;
    let lhs = tau.contract(&g);
    let rhs = tau.contract(&d);
    Ok(lhs.zip_map(&rhs, |x, y| (x - y).abs()).max())
}

pub fn audit_hypotheses(a: &ViscosityTensor, t: f64, samples: &[VectorField]) -> Result<HypothesisReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("hypothesis audit needs at least one sample".into()));
    }
    let mut h1: f64 = 0.0;
    for u in samples {
        h1 = h1.max(h1_residual(a, t, u)?);
    }
    let coercivity = coercivity_estimate(a, t);
    let h4 = if a.is_constant() {
        let grid = *samples[0].grid();
        match crate::stokes::StokesOperator::build_unchecked(a, &grid, t) {
            Ok(op) => {
                let mut worst: f64 = 0.0;
                for w in samples {
                    let q = crate::grid::div(w);
                    let v = op.solve(&q)?;
                    let num = vector_lp(&v, 1.5);
                    let den = vector_lp(w, 1.5);
                    if den > 0.0 {
                        worst = worst.max(num / den);
                    }
                }
                Some(H4Report { symbol_invertible: true, sample_norm: worst })
            }
            Err(Error::SingularSymbol { .. }) => {
                Some(H4Report { symbol_invertible: false, sample_norm: f64::INFINITY })
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(HypothesisReport { h1_residual: h1, coercivity, h4 })
}

fn vector_lp(v: &VectorField, p: f64) -> f64 {
    v.magnitude().lp_norm(p)
}

/// Smooth mean-zero random velocity built from a handful of low Fourier modes.
pub fn random_smooth_velocity(grid: &GridSpec, rng: &mut impl Rng, max_mode: i32) -> VectorField {
    let dim = grid.dim();
    let mut comps = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut modes = Vec::new();
        for _ in 0..6 {
            let mut k = [0.0; 3];
            for kk in k.iter_mut().take(dim) {
                *kk = rng.gen_range(-max_mode..=max_mode) as f64;
            }
            if k.iter().all(|v| *v == 0.0) {
                k[0] = 1.0;
            }
            modes.push((k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)));
        }
        let len = [grid.length(0), grid.length(1), grid.length(2)];
        comps.push(ScalarField::from_fn(*grid, |x| {
            modes
                .iter()
                .map(|(k, amp, phase)| {
                    let arg: f64 = (0..3).map(|a| k[a] * x[a] * std::f64::consts::TAU / len[a]).sum();
                    amp * (arg + phase).sin()
                })
                .sum()
        }));
    }
    VectorField::from_components(comps).expect("one component per axis")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sym_grad;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_strain_gives_zero_stress() {
        let grid = GridSpec::cubic(3, 4).unwrap();
        let a = ViscosityTensor::diag(&[1.0, 2.0, 3.0]).unwrap();
        let tau = apply_tau(&a, 0.0, &TensorField::zeros(grid)).unwrap();
        assert_eq!(tau.contract(&tau).max(), 0.0);
    }

    #[test]
    fn isotropic_identity_strain() {
        let grid = GridSpec::cubic(3, 4).unwrap();
        let nu = 0.7;
        let a = ViscosityTensor::isotropic(3, nu).unwrap();
        let du = TensorField::from_fn(grid, |_| [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let tau = apply_tau(&a, 0.0, &du).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 * nu } else { 0.0 };
                assert_abs_diff_eq!(tau.get(i, j).max(), expect, epsilon = 1e-15);
                assert_abs_diff_eq!(tau.get(i, j).min(), expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn isotropic_diag_realizes_scaled_strain() {
        let grid = GridSpec::cubic(3, 8).unwrap();
        let a = ViscosityTensor::diag(&[1.3, 1.3, 1.3]).unwrap();
        let u = VectorField::from_fn(grid, |x| [x[1].sin(), x[2].cos() * x[0].sin(), (2.0 * x[0]).sin()]);
        let d = sym_grad(&u);
        let tau = apply_tau(&a, 0.0, &d).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..grid.len() {
                    assert_abs_diff_eq!(tau.get(i, j)[c], 1.3 * d.get(i, j)[c], epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn minor_symmetries_enforced() {
        let mut raw = ZERO4;
        raw[0][1][0][0] = 4.0;
        let a = ViscosityTensor::constant(2, raw).unwrap();
        let block = a.constant_block().unwrap();
        assert_eq!(block[0][1][0][0], 2.0);
        assert_eq!(block[1][0][0][0], 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let grid = GridSpec::cubic(2, 4).unwrap();
        let a = ViscosityTensor::diag(&[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(apply_tau(&a, 0.0, &TensorField::zeros(grid)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unit_diag_coercivity_is_one() {
        let a = ViscosityTensor::diag(&[1.0, 1.0, 1.0]).unwrap();
        let r = coercivity_estimate(&a, 0.0);
        assert!(r.passed);
        assert!((r.c_est - 1.0).abs() < 0.05, "c_est = {}", r.c_est);
    }

    #[test]
    fn coercivity_is_homogeneous() {
        for a in [
            ViscosityTensor::diag(&[1.0, 1.0, 4.0]).unwrap(),
            ViscosityTensor::isotropic(3, 0.8).unwrap(),
        ] {
            let c1 = coercivity_estimate(&a, 0.0).c_est;
            let c2 = coercivity_estimate(&a.scaled(2.0), 0.0).c_est;
            assert_abs_diff_eq!(c2, 2.0 * c1, epsilon = 1e-14 * c1.abs());
        }
    }

    #[test]
    fn negative_eigenvalue_fails() {
        let mut block = isotropic_block(0.5);
        // τ = D has every eigenvalue 1 on Sym; push the e₁⊗e₁ direction to −1
        block[0][0][0][0] -= 2.0;
        let a = ViscosityTensor::constant(3, block).unwrap();
        assert!(!coercivity_estimate(&a, 0.0).passed);
        assert!(!coercivity_estimate_with(&a, 0.0, CoercivityMethod::Rayleigh, 1).passed);
    }

    #[test]
    fn diag_symbol_method_dominates_pointwise() {
        let a = ViscosityTensor::isotropic(3, 1.0).unwrap();
        let sym = coercivity_estimate_with(&a, 0.0, CoercivityMethod::FourierSymbol, 3).c_est;
        let pt = coercivity_estimate_with(&a, 0.0, CoercivityMethod::Rayleigh, 3).c_est;
        assert!(sym >= pt - 1e-12);
        assert_abs_diff_eq!(pt, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn time_interpolation_is_linear() {
        let grid = GridSpec::cubic(1, 4).unwrap();
        let c0 = CoefficientField::from_fn(grid, |_| isotropic_block(1.0)).unwrap();
        let c1 = CoefficientField::from_fn(grid, |_| isotropic_block(3.0)).unwrap();
        let a = ViscosityTensor::varying(vec![(0.0, c0), (1.0, c1)]).unwrap();
        assert_abs_diff_eq!(a.block_at(0.25, 2)[0][0][0][0], 2.0 * 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a.block_at(5.0, 0)[0][0][0][0], 6.0, epsilon = 1e-15);
    }
}
