//! Inversion of `𝒜v = −div τ(D(v))` on mean-zero periodic fields.
//!
//! Convention used throughout the crate: the momentum balance
//! `−div τ + ∇p = ∇f` is solved as `𝒜u = ∇q` with `q = f − p`.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::spectral::{self, div_tensor, grad_full, symmetrize, WaveNumbers};
use crate::grid::{GridSpec, ScalarField, TensorField, VectorField};
use crate::viscosity::{coercivity_estimate, contract_block, Rank4, ViscosityTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovSettings {
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        Self { rtol: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovMethod {
    ConjugateGradient,
    Gmres,
}

type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone)]
enum Mode {
    /// `𝒜 = −Δ_ν`, scalar symbol `Σ ν_a k_a²`.
    Diagonal { nu: Vec<f64> },
    /// Constant tensor: inverse symbol per wavevector (zero on the null modes).
    Symbol { symbol: Vec<Mat3>, inverse: Vec<Mat3> },
    /// Spatially varying tensor, preconditioned by the averaged-coefficient symbol.
    Krylov { blocks: Vec<Rank4>, precond: Vec<Mat3>, method: KrylovMethod },
}

#[derive(Debug, Clone)]
pub struct StokesOperator {
    grid: GridSpec,
    t: f64,
    mode: Mode,
    settings: KrylovSettings,
}

fn symbol_matrix(block: &Rank4, k: [f64; 3], dim: usize) -> Mat3 {
    let mut s = [[0.0; 3]; 3];
    for (i, row) in s.iter_mut().enumerate().take(dim) {
        for (m, v) in row.iter_mut().enumerate().take(dim) {
            let mut acc = 0.0;
            for j in 0..dim {
                for l in 0..dim {
                    acc += block[i][j][m][l] * k[j] * k[l];
                }
            }
            *v = acc;
        }
    }
    s
}

/// Inverse of the leading `dim × dim` block, `None` if numerically singular.
fn invert(s: &Mat3, dim: usize) -> Option<Mat3> {
    let scale = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| m.max(s[i][j].abs()));
    if scale == 0.0 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    match dim {
        1 => {
            inv[0][0] = 1.0 / s[0][0];
        }
        2 => {
            let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            if det.abs() <= 1e-12 * scale * scale {
                return None;
            }
            inv[0][0] = s[1][1] / det;
            inv[0][1] = -s[0][1] / det;
            inv[1][0] = -s[1][0] / det;
            inv[1][1] = s[0][0] / det;
        }
        _ => {
            let c = |i: usize, j: usize| {
                let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                s[i1][j1] * s[i2][j2] - s[i1][j2] * s[i2][j1]
            };
            let det = s[0][0] * c(0, 0) + s[0][1] * c(0, 1) + s[0][2] * c(0, 2);
            if det.abs() <= 1e-12 * scale.powi(3) {
                return None;
            }
            for (i, row) in inv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = c(j, i) / det;
                }
            }
        }
    }
    Some(inv)
}

fn is_null_mode(k: [f64; 3]) -> bool {
    k == [0.0, 0.0, 0.0]
}

fn symbol_tables(block: &Rank4, wn: &WaveNumbers, dim: usize) -> Result<(Vec<Mat3>, Vec<Mat3>)> {
    let n = wn.grid().len();
    let mut symbol = Vec::with_capacity(n);
    let mut inverse = Vec::with_capacity(n);
    for i in 0..n {
        let k = wn.k(i);
        let s = symbol_matrix(block, k, dim);
        let inv = if is_null_mode(k) {
            [[0.0; 3]; 3]
        } else {
            invert(&s, dim).ok_or(Error::SingularSymbol { wavevector: k })?
        };
        symbol.push(s);
        inverse.push(inv);
    }
    Ok((symbol, inverse))
}

/// Per-component spectra of a vector field.
fn forward_vector(v: &VectorField) -> Vec<Vec<Complex64>> {
    v.components().iter().map(spectral::forward).collect()
}

fn inverse_vector(grid: GridSpec, spectra: Vec<Vec<Complex64>>) -> VectorField {
    let comps = spectra.into_iter().map(|s| spectral::inverse(grid, s)).collect();
    VectorField::from_components(comps).expect("one component per axis")
}

fn apply_matrix_field(grid: &GridSpec, mats: &[Mat3], spectra: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let dim = grid.dim();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; dim];
    for (m, mat) in mats.iter().enumerate() {
        for i in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, s) in spectra.iter().enumerate() {
                acc += s[m] * mat[i][j];
            }
            out[i][m] = acc;
        }
    }
    out
}

fn remove_means(v: VectorField) -> VectorField {
    v.map_components(|c| {
        let m = c.mean();
        c.map(|x| x - m)
    })
}

impl StokesOperator {
    /// Build the operator at time `t`; rejects singular symbols and non-coercive tensors.
    pub fn build(a: &ViscosityTensor, grid: &GridSpec, t: f64) -> Result<Self> {
        let op = Self::build_inner(a, grid, t)?;
        let report = coercivity_estimate(a, t);
        if !report.passed {
            return Err(Error::NotCoercive { c_est: report.c_est });
        }
        Ok(op)
    }

    /// Like [`build`](Self::build) but without the coercivity gate.
    pub fn build_unchecked(a: &ViscosityTensor, grid: &GridSpec, t: f64) -> Result<Self> {
        Self::build_inner(a, grid, t)
    }

    fn build_inner(a: &ViscosityTensor, grid: &GridSpec, t: f64) -> Result<Self> {
        let dim = grid.dim();
        if a.dim() != dim {
            return Err(Error::DimensionMismatch(format!("{}-dimensional tensor on a {dim}-dimensional grid", a.dim())));
        }
        let wn = spectral::wavenumbers(grid);
        let mode = match a {
            ViscosityTensor::DiagNu { nu } => Mode::Diagonal { nu: nu.clone() },
            ViscosityTensor::ConstantFull { a: block, .. } => {
                let (symbol, inverse) = symbol_tables(block, &wn, dim)?;
                Mode::Symbol { symbol, inverse }
            }
            ViscosityTensor::VaryingFull { breakpoints, .. } => {
                grid.check_same(breakpoints[0].1.grid())?;
                let blocks: Vec<Rank4> = (0..grid.len()).map(|c| a.block_at(t, c)).collect();
                let avg = a.average_block(t);
                let (_, precond) = symbol_tables(&avg, &wn, dim)?;
                let method = if a.has_major_symmetry(t) {
                    KrylovMethod::ConjugateGradient
                } else {
                    log::info!("viscosity tensor lacks major symmetry; using restarted GMRES");
                    KrylovMethod::Gmres
                };
                Mode::Krylov { blocks, precond, method }
            }
        };
        Ok(Self { grid: *grid, t, mode, settings: KrylovSettings::default() })
    }

    pub fn with_settings(mut self, settings: KrylovSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn settings(&self) -> KrylovSettings {
        self.settings
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn is_symbol_mode(&self) -> bool {
        !matches!(self.mode, Mode::Krylov { .. })
    }

    pub fn krylov_method(&self) -> Option<KrylovMethod> {
        match &self.mode {
            Mode::Krylov { method, .. } => Some(*method),
            _ => None,
        }
    }

    /// Symbol matrix at wavevector `k` (constant-coefficient modes only).
    pub fn symbol_at(&self, k: [f64; 3]) -> Option<Mat3> {
        let dim = self.grid.dim();
        match &self.mode {
            Mode::Diagonal { nu } => {
                let s: f64 = (0..dim).map(|a| nu[a] * k[a] * k[a]).sum();
                let mut m = [[0.0; 3]; 3];
                for (a, row) in m.iter_mut().enumerate().take(dim) {
                    row[a] = s;
                }
                Some(m)
            }
            Mode::Symbol { symbol, .. } => {
                let wn = spectral::wavenumbers(&self.grid);
                (0..self.grid.len()).find(|&i| wn.k(i) == k).map(|i| symbol[i])
            }
            Mode::Krylov { .. } => None,
        }
    }

    /// `𝒜u`.
    pub fn apply(&self, u: &VectorField) -> VectorField {
        let grid = self.grid;
        let dim = grid.dim();
        match &self.mode {
            Mode::Diagonal { nu } => u.map_components(|c| {
                spectral::apply_symbol(c, |k| Complex64::new((0..dim).map(|a| nu[a] * k[a] * k[a]).sum(), 0.0))
            }),
            Mode::Symbol { symbol, .. } => {
                let spectra = forward_vector(u);
                inverse_vector(grid, apply_matrix_field(&grid, symbol, &spectra))
            }
            Mode::Krylov { blocks, .. } => {
                let d = symmetrize(&grad_full(u));
                let mut tau = TensorField::zeros(grid);
                for (cell, block) in blocks.iter().enumerate() {
                    tau.set_at(cell, &contract_block(block, &d.at(cell), dim));
                }
                div_tensor(&tau).scale(-1.0)
            }
        }
    }

    fn precondition(&self, r: &VectorField) -> VectorField {
        let grid = self.grid;
        let dim = grid.dim();
        match &self.mode {
            Mode::Diagonal { nu } => r.map_components(|c| {
                spectral::apply_symbol(c, |k| {
                    if is_null_mode(k) {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(1.0 / (0..dim).map(|a| nu[a] * k[a] * k[a]).sum::<f64>(), 0.0)
                    }
                })
            }),
            Mode::Symbol { inverse: mats, .. } | Mode::Krylov { precond: mats, .. } => {
                let spectra = forward_vector(r);
                inverse_vector(grid, apply_matrix_field(&grid, mats, &spectra))
            }
        }
    }

    /// Remove the components the operator cannot reach (mean and pure-Nyquist modes).
    fn project(&self, v: &VectorField) -> VectorField {
        v.map_components(|c| {
            spectral::apply_symbol(c, |k| {
                if is_null_mode(k) {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
        })
    }

    /// Solve `𝒜u = ∇q`.
    pub fn solve(&self, q: &ScalarField) -> Result<VectorField> {
        self.grid.check_same(q.grid())?;
        if !q.is_finite() {
            return Err(Error::InvalidParameter("non-finite Stokes source".into()));
        }
        self.solve_vector(&spectral::grad(q))
    }

    /// Solve `𝒜u = b` for a general right-hand side (projected onto the range).
    pub fn solve_vector(&self, b: &VectorField) -> Result<VectorField> {
        self.grid.check_same(b.grid())?;
        let u = match &self.mode {
            Mode::Diagonal { .. } | Mode::Symbol { .. } => self.precondition(b),
            Mode::Krylov { method, .. } => {
                let b = self.project(b);
                match method {
                    KrylovMethod::ConjugateGradient => self.pcg(&b)?,
                    KrylovMethod::Gmres => self.gmres(&b)?,
                }
            }
        };
        Ok(remove_means(u))
    }

    /// `‖𝒜u − ∇q‖₂`.
    pub fn residual(&self, u: &VectorField, q: &ScalarField) -> f64 {
        let au = self.apply(u);
        au.zip_map(&spectral::grad(q), |a, b| a - b).l2_norm()
    }

    fn pcg(&self, b: &VectorField) -> Result<VectorField> {
        let bnorm = b.l2_norm();
        let mut x = VectorField::zeros(self.grid);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let KrylovSettings { rtol, max_iter } = self.settings;
        let mut r = b.clone();
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for it in 0..max_iter {
            let ap = self.apply(&p);
            let alpha = rz / p.dot(&ap);
            x = x.zip_map(&p, |a, b| a + alpha * b);
            r = r.zip_map(&ap, |a, b| a - alpha * b);
            let rel = r.l2_norm() / bnorm;
            if rel <= rtol {
                log::debug!("pcg converged in {} iterations (relative residual {rel:e})", it + 1);
                return Ok(x);
            }
            z = self.precondition(&r);
            let rz_new = r.dot(&z);
            let beta = rz_new / rz;
            rz = rz_new;
            p = z.zip_map(&p, |a, b| a + beta * b);
        }
        Err(Error::KrylovNoConvergence { iterations: max_iter, residual: r.l2_norm() / bnorm })
    }

    /// Right-preconditioned restarted GMRES.
    fn gmres(&self, b: &VectorField) -> Result<VectorField> {
        const RESTART: usize = 40;
        let bnorm = b.l2_norm();
        let mut x = VectorField::zeros(self.grid);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let KrylovSettings { rtol, max_iter } = self.settings;
        let mut total = 0;
        let mut rel = 1.0;
        while total < max_iter {
            let r = b.zip_map(&self.apply(&x), |a, c| a - c);
            let beta = r.l2_norm();
            rel = beta / bnorm;
            if rel <= rtol {
                return Ok(x);
            }
            let mut basis = vec![r.scale(1.0 / beta)];
            let mut hess: Vec<Vec<f64>> = Vec::new();
            let mut cs: Vec<f64> = Vec::new();
            let mut sn: Vec<f64> = Vec::new();
            let mut g = vec![beta];
            let mut steps = 0;
            for j in 0..RESTART.min(max_iter - total) {
                let w0 = self.apply(&self.precondition(&basis[j]));
                let mut w = w0;
                let mut col = vec![0.0; j + 2];
                for (i, vi) in basis.iter().enumerate() {
                    col[i] = w.dot(vi);
                    let hij = col[i];
                    w = w.zip_map(vi, |a, c| a - hij * c);
                }
                col[j + 1] = w.l2_norm();
                for i in 0..j {
                    let (a, c) = (col[i], col[i + 1]);
                    col[i] = cs[i] * a + sn[i] * c;
                    col[i + 1] = -sn[i] * a + cs[i] * c;
                }
                let denom = col[j].hypot(col[j + 1]);
                let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (col[j] / denom, col[j + 1] / denom) };
                cs.push(c);
                sn.push(s);
                let next = w.scale(if col[j + 1] > 0.0 { 1.0 / col[j + 1] } else { 0.0 });
                col[j] = denom;
                col[j + 1] = 0.0;
                g.push(-s * g[j]);
                g[j] *= c;
                hess.push(col);
                basis.push(next);
                steps = j + 1;
                total += 1;
                if g[j + 1].abs() / bnorm <= rtol {
                    break;
                }
            }
            let mut y = vec![0.0; steps];
            for i in (0..steps).rev() {
                let mut acc = g[i];
                for (k, yk) in y.iter().enumerate().skip(i + 1) {
                    acc -= hess[k][i] * yk;
                }
                y[i] = acc / hess[i][i];
            }
            let mut update = VectorField::zeros(self.grid);
            for (i, yi) in y.iter().enumerate() {
                update = update.zip_map(&basis[i], |a, c| a + yi * c);
            }
            x = x.zip_map(&self.precondition(&update), |a, c| a + c);
        }
        let r = b.zip_map(&self.apply(&x), |a, c| a - c);
        rel = rel.min(r.l2_norm() / bnorm);
        if rel <= rtol {
            return Ok(x);
        }
        Err(Error::KrylovNoConvergence { iterations: total, residual: rel })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{div, grad_full, sym_grad};
    use crate::viscosity::{apply_tau, diag_block, isotropic_block, CoefficientField, ZERO4};
    use approx::assert_abs_diff_eq;

    fn max_diff(a: &VectorField, b: &VectorField) -> f64 {
        a.zip_map(b, |x, y| (x - y).abs()).components().iter().map(|c| c.max()).fold(0.0, f64::max)
    }

    #[test]
    fn diag_symbol_on_first_axis() {
        let grid = GridSpec::cubic(3, 8).unwrap();
        let a = ViscosityTensor::diag(&[2.0, 1.0, 1.0]).unwrap();
        let op = StokesOperator::build(&a, &grid, 0.0).unwrap();
        let s = op.symbol_at([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s[0][0], 2.0);
        // the tensor realization has the same action on the gradient direction
        let full = StokesOperator::build(&ViscosityTensor::constant(3, diag_block(&[2.0, 1.0, 1.0])).unwrap(), &grid, 0.0)
            .unwrap();
        assert_abs_diff_eq!(full.symbol_at([1.0, 0.0, 0.0]).unwrap()[0][0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn isotropic_symbol_is_lame() {
        let grid = GridSpec::cubic(3, 8).unwrap();
        let nu = 0.6;
        let a = ViscosityTensor::isotropic(3, nu).unwrap();
        let op = StokesOperator::build(&a, &grid, 0.0).unwrap();
        // generic −div τ(D(u)) path through a (trivially) varying tensor
        let field = CoefficientField::from_fn(grid, |_| isotropic_block(nu)).unwrap();
        let generic = StokesOperator::build(&ViscosityTensor::varying(vec![(0.0, field)]).unwrap(), &grid, 0.0).unwrap();
        for k in [[1.0, 0.0, 0.0], [1.0, -2.0, 0.0], [2.0, 1.0, 3.0]] {
            let s = op.symbol_at(k).unwrap();
            let k2: f64 = k.iter().map(|v| v * v).sum();
            for i in 0..3 {
                for j in 0..3 {
                    let expect = nu * (if i == j { k2 } else { 0.0 } + k[i] * k[j]);
                    assert_abs_diff_eq!(s[i][j], expect, epsilon = 1e-13);
                }
            }
            // plane wave u = e_0 cos(k·x): 𝒜u = S(k) e_0 cos(k·x)
            let u = VectorField::from_fn(grid, |x| [(k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).cos(), 0.0, 0.0]);
            let au = generic.apply(&u);
            for c in 0..3 {
                for cell in 0..grid.len() {
                    assert_abs_diff_eq!(au.component(c)[cell], s[c][0] * u.component(0)[cell], epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn zero_block_is_singular() {
        let grid = GridSpec::cubic(3, 8).unwrap();
        let mut block = ZERO4;
        let iso = isotropic_block(1.0);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        block[i][j][k][l] = iso[i][j][k][l];
                    }
                }
            }
        }
        let a = ViscosityTensor::constant(3, block).unwrap();
        match StokesOperator::build(&a, &grid, 0.0) {
            Err(Error::SingularSymbol { wavevector }) => assert_eq!(wavevector, [0.0, 0.0, 1.0]),
            other => panic!("expected SingularSymbol, got {other:?}"),
        }
    }

    #[test]
    fn non_coercive_is_rejected() {
        let grid = GridSpec::cubic(2, 8).unwrap();
        let a = ViscosityTensor::isotropic(2, -1.0).unwrap();
        assert!(matches!(StokesOperator::build(&a, &grid, 0.0), Err(Error::NotCoercive { .. })));
    }

    #[test]
    fn constant_pressure_gives_rest() {
        let grid = GridSpec::cubic(3, 8).unwrap();
        let op = StokesOperator::build(&ViscosityTensor::diag(&[1.0, 2.0, 3.0]).unwrap(), &grid, 0.0).unwrap();
        let u = op.solve(&ScalarField::constant(grid, 4.2)).unwrap();
        assert!(u.l2_norm() < 1e-14);
    }

    #[test]
    fn single_mode_closed_form() {
        let grid = GridSpec::cubic(3, 16).unwrap();
        let op = StokesOperator::build(&ViscosityTensor::diag(&[2.0, 1.0, 1.0]).unwrap(), &grid, 0.0).unwrap();
        let q = ScalarField::from_fn(grid, |x| -x[0].cos());
        let u = op.solve(&q).unwrap();
        let exact = VectorField::from_fn(grid, |x| [0.5 * x[0].sin(), 0.0, 0.0]);
        assert!(max_diff(&u, &exact) < 1e-12);
        assert!(op.residual(&u, &q) < 1e-12);
    }

    #[test]
    fn varying_manufactured_roundtrip() {
        let grid = GridSpec::cubic(2, 32).unwrap();
        let a = ViscosityTensor::modulated_isotropic(&grid, 1.0, 0.1).unwrap();
        let op = StokesOperator::build(&a, &grid, 0.0).unwrap();
        assert_eq!(op.krylov_method(), Some(KrylovMethod::ConjugateGradient));
        let exact = VectorField::from_fn(grid, |x| [x[1].sin(), 0.0, 0.0]);
        let b = op.apply(&exact);
        let u = op.solve_vector(&b).unwrap();
        let err = u.zip_map(&exact, |x, y| x - y).l2_norm() / exact.l2_norm();
        assert!(err < 1e-7, "relative error {err:e}");
        let res = op.apply(&u).zip_map(&b, |x, y| x - y).l2_norm();
        assert!(res <= 1e-8 * b.l2_norm());
    }

    #[test]
    fn gmres_handles_missing_major_symmetry() {
        let grid = GridSpec::cubic(2, 16).unwrap();
        let field = CoefficientField::from_fn(grid, |x| {
            let mut b = isotropic_block(1.0 + 0.2 * x[1].cos());
            b[0][0][1][1] += 0.3;
            b
        })
        .unwrap();
        let a = ViscosityTensor::varying(vec![(0.0, field)]).unwrap();
        let op = StokesOperator::build(&a, &grid, 0.0).unwrap();
        assert_eq!(op.krylov_method(), Some(KrylovMethod::Gmres));
        let q = ScalarField::from_fn(grid, |x| (x[0] + x[1]).sin() + 0.5 * (2.0 * x[1]).cos());
        let u = op.solve(&q).unwrap();
        assert!(op.residual(&u, &q) <= 1e-8 * crate::grid::grad(&q).l2_norm() * 1.0001);
    }

    #[test]
    fn residual_of_zero_velocity() {
        let grid = GridSpec::cubic(2, 16).unwrap();
        let op = StokesOperator::build(&ViscosityTensor::isotropic(2, 1.0).unwrap(), &grid, 0.0).unwrap();
        let zero = VectorField::zeros(grid);
        assert_eq!(op.residual(&zero, &ScalarField::constant(grid, 3.0)), 0.0);
        let q = ScalarField::from_fn(grid, |x| x[0].cos());
        assert_abs_diff_eq!(op.residual(&zero, &q), (grid.volume() / 2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn solve_is_linear_and_mean_free() {
        let grid = GridSpec::cubic(3, 8).unwrap();
        let op = StokesOperator::build(&ViscosityTensor::diag(&[1.0, 1.0, 4.0]).unwrap(), &grid, 0.0).unwrap();
        let q = ScalarField::from_fn(grid, |x| x[0].sin() * x[2].cos() + 1.0);
        let u1 = op.solve(&q).unwrap();
        let u3 = op.solve(&q.scale(3.0)).unwrap();
        assert!(max_diff(&u1.scale(3.0), &u3) < 1e-14);
        for m in u1.means() {
            assert!(m.abs() < 1e-17);
        }
    }

    #[test]
    fn diag_fast_path_matches_full_tensor() {
        let grid = GridSpec::cubic(3, 16).unwrap();
        let q = ScalarField::from_fn(grid, |x| (x[0] + x[1]).cos() * (2.0 * x[2]).sin() + x[1].sin());
        for nu in [[0.7, 0.7, 0.7], [1.0, 1.0, 16.0]] {
            let fast = StokesOperator::build(&ViscosityTensor::diag(&nu).unwrap(), &grid, 0.0).unwrap();
            let full = StokesOperator::build(&ViscosityTensor::constant(3, diag_block(&nu)).unwrap(), &grid, 0.0).unwrap();
            assert!(max_diff(&fast.solve(&q).unwrap(), &full.solve(&q).unwrap()) < 1e-10);
        }
        let iso = StokesOperator::build(&ViscosityTensor::isotropic(3, 0.35).unwrap(), &grid, 0.0).unwrap();
        let fast = StokesOperator::build(&ViscosityTensor::diag(&[0.7, 0.7, 0.7]).unwrap(), &grid, 0.0).unwrap();
        assert!(max_diff(&fast.solve(&q).unwrap(), &iso.solve(&q).unwrap()) < 1e-10);
    }

    #[test]
    fn energy_identity_and_coercivity_of_solves() {
        let grid = GridSpec::cubic(3, 16).unwrap();
        let q = ScalarField::from_fn(grid, |x| (x[0] - 2.0 * x[2]).cos() + 0.3 * (x[1] + x[0]).sin());
        for a in [
            ViscosityTensor::diag(&[1.0, 2.0, 8.0]).unwrap(),
            ViscosityTensor::isotropic(3, 0.5).unwrap(),
            ViscosityTensor::modulated_isotropic(&grid, 0.5, 0.3).unwrap(),
        ] {
            let op = StokesOperator::build(&a, &grid, 0.0).unwrap();
            let u = op.solve(&q).unwrap();
            let g = grad_full(&u);
            let d = sym_grad(&u);
            let tau = apply_tau(&a, 0.0, &d).unwrap();
            let work = tau.contract(&g).integral();
            let rhs = -q.dot(&div(&u));
            assert!((work - rhs).abs() <= 1e-7 * rhs.abs(), "{work} vs {rhs}");
            let c = coercivity_estimate(&a, 0.0).c_est;
            assert!(work >= c * d.contract(&d).integral() * (1.0 - 1e-6));
        }
    }
}
