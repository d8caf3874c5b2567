//! Uniform periodic grids and the fields that live on them.
//!
//! Samples are stored row-major with axis 0 (x₁) slowest. Every axis shares
//! the same cell width, so an axis with `n` cells has period `n * h`.

mod mollify;
mod snapshot;
pub mod spectral;

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub use mollify::{commutator_field, commutator_residual, mollify, mollify_vector, MollifierKernel};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot};
pub use spectral::{div, grad, grad_full, laplacian, sym_grad};

/// Uniform periodic grid over `[0, n_a h)` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    extents: [usize; 3],
    h: f64,
}

impl GridSpec {
    pub fn new(dim: usize, extents: &[usize], h: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if extents.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} extents given for a {dim}-dimensional grid",
                extents.len()
            )));
        }
        if let Some(&n) = extents.iter().find(|&&n| n < 4) {
            return Err(Error::InvalidGrid(format!("extent {n} below the minimum of 4 cells")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("cell width {h} must be positive")));
        }
        let mut ext = [1; 3];
        ext[..dim].copy_from_slice(extents);
        Ok(Self { dim, extents: ext, h })
    }

    /// `n` cells per axis over the period `2π`.
    pub fn cubic(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, &vec![n; dim], 2.0 * PI / n as f64)
    }

    /// `n` cells per axis over the given period.
    pub fn with_length(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(dim, &vec![n; dim], length / n as f64)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.dim]
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.extents[axis]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.extents[axis] as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.len() as f64
    }

    /// Distance in the flat index between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.extents[axis + 1..].iter().product()
    }

    pub fn index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.extents[1] + idx[1]) * self.extents[2] + idx[2]
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let i2 = flat % self.extents[2];
        let rest = flat / self.extents[2];
        [rest / self.extents[1], rest % self.extents[1], i2]
    }

    /// Flat index of the cell displaced by `offset` cells, wrapping periodically.
    pub fn shifted(&self, flat: usize, offset: [isize; 3]) -> usize {
        let mut idx = self.multi_index(flat);
        for a in 0..3 {
            let n = self.extents[a] as isize;
            idx[a] = (idx[a] as isize + offset[a]).rem_euclid(n) as usize;
        }
        self.index(idx)
    }

    /// Cell-centre coordinates are taken at the lower corner, `x_a = i_a h`.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        [idx[0] as f64 * self.h, idx[1] as f64 * self.h, idx[2] as f64 * self.h]
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::DimensionMismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.extents(),
                other.extents()
            )));
        }
        Ok(())
    }
}

/// Real samples of a scalar quantity, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a grid of {} cells",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, data }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, data }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `∫ f` by the rectangle rule (exact for trigonometric polynomials).
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        (self.data.iter().map(|v| v.abs().powf(p)).sum::<f64>() * self.grid.cell_volume()).powf(1.0 / p)
    }

    /// `∫ f g`.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// One scalar component per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect() }
    }

    pub fn from_components(components: Vec<ScalarField>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::DimensionMismatch("vector field without components".into()));
        };
        let grid = *first.grid();
        if components.len() != grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} components on a {}-dimensional grid",
                components.len(),
                grid.dim()
            )));
        }
        for c in &components {
            grid.check_same(c.grid())?;
        }
        Ok(Self { components })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let components = (0..grid.dim())
            .map(|a| ScalarField::from_fn(grid, |x| f(x)[a]))
            .collect();
        Self { components }
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, a: usize) -> &ScalarField {
        &self.components[a]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut ScalarField {
        &mut self.components[a]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self { components: self.components.iter().map(f).collect() }
    }

    pub fn zip_map(&self, other: &VectorField, f: impl Fn(f64, f64) -> f64) -> Self {
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.zip_map(b, &f))
            .collect();
        Self { components }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_components(|c| c.scale(s))
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.components.iter().zip(&other.components).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `max_x Σ_a |v_a(x)|`, the speed bound used by the transport CFL rule.
    pub fn max_l1_speed(&self) -> f64 {
        let n = self.grid().len();
        (0..n)
            .map(|i| self.components.iter().map(|c| c[i].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let grid = *self.grid();
        let data = (0..grid.len())
            .map(|i| self.components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .collect();
        ScalarField { grid, data }
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(ScalarField::mean).collect()
    }
}

/// A `dim × dim` matrix-valued field; entry `(i, j)` is stored at `i * dim + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    dim: usize,
    entries: Vec<ScalarField>,
}

impl TensorField {
    pub fn zeros(grid: GridSpec) -> Self {
        let dim = grid.dim();
        Self { dim, entries: (0..dim * dim).map(|_| ScalarField::zeros(grid)).collect() }
    }

    pub fn from_entries(dim: usize, entries: Vec<ScalarField>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {dim}x{dim} tensor",
                entries.len()
            )));
        }
        let grid = *entries[0].grid();
        for e in &entries {
            grid.check_same(e.grid())?;
        }
        Ok(Self { dim, entries })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 3]) -> [[f64; 3]; 3]) -> Self {
        let dim = grid.dim();
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                entries.push(ScalarField::from_fn(grid, |x| f(x)[i][j]));
            }
        }
        Self { dim, entries }
    }

    pub fn grid(&self) -> &GridSpec {
        self.entries[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[i * self.dim + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.entries[i * self.dim + j]
    }

    /// The matrix at one cell, padded with zeros to 3×3.
    pub fn at(&self, cell: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(self.dim) {
            for (j, v) in row.iter_mut().enumerate().take(self.dim) {
                *v = self.entries[i * self.dim + j][cell];
            }
        }
        m
    }

    pub fn set_at(&mut self, cell: usize, m: &[[f64; 3]; 3]) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.entries[i * self.dim + j][cell] = m[i][j];
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.entries[i * self.dim + j] = self.entries[j * self.dim + i].clone();
            }
        }
        out
    }

    /// Pointwise Frobenius product `S : T`.
    pub fn contract(&self, other: &TensorField) -> ScalarField {
        let grid = *self.grid();
        let mut out = ScalarField::zeros(grid);
        for (a, b) in self.entries.iter().zip(&other.entries) {
            for (o, (x, y)) in out.data.iter_mut().zip(a.data.iter().zip(&b.data)) {
                *o += x * y;
            }
        }
        out
    }

    /// Largest pointwise deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                let a = self.get(i, j);
                let b = self.get(j, i);
                for (x, y) in a.data.iter().zip(&b.data) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        worst
    }

    pub fn trace(&self) -> ScalarField {
        let mut out = ScalarField::zeros(*self.grid());
        for i in 0..self.dim {
            for (o, v) in out.data.iter_mut().zip(&self.get(i, i).data) {
                *o += v;
            }
        }
        out
    }
}
