//! FFT-based differentiation on periodic grids.
//!
//! Derivatives use the Fourier wavenumber with the Nyquist mode zeroed, so
//! `div ∘ grad` is exactly the spectral Laplacian and every derivative has
//! zero mean.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{GridSpec, ScalarField, TensorField, VectorField};

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

fn transform(grid: &GridSpec, data: &mut [Complex64], inverse: bool) {
    for axis in 0..grid.dim() {
        let n = grid.extent(axis);
        let stride = grid.stride(axis);
        let fft = plan(n, inverse);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let block = n * stride;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for start in (0..data.len()).step_by(block) {
            for inner in 0..stride {
                let base = start + inner;
                for (m, l) in line.iter_mut().enumerate() {
                    *l = data[base + m * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (m, l) in line.iter().enumerate() {
                    data[base + m * stride] = *l;
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

/// Unnormalized forward DFT of a real field.
pub fn forward(f: &ScalarField) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(f.grid(), &mut data, false);
    data
}

/// Inverse DFT, keeping the real part.
pub fn inverse(grid: GridSpec, mut spectrum: Vec<Complex64>) -> ScalarField {
    transform(&grid, &mut spectrum, true);
    let data = spectrum.into_iter().map(|c| c.re).collect();
    ScalarField::from_vec(grid, data).expect("spectrum length matches grid")
}

/// Per-axis wavenumber tables for one grid.
#[derive(Debug, Clone)]
pub struct WaveNumbers {
    grid: GridSpec,
    /// Derivative wavenumber, Nyquist set to 0.
    deriv: [Vec<f64>; 3],
    /// Signed mode wavenumber including Nyquist (as `-n/2`).
    raw: [Vec<f64>; 3],
}

impl WaveNumbers {
    pub fn new(grid: &GridSpec) -> Self {
        let mut deriv: [Vec<f64>; 3] = Default::default();
        let mut raw: [Vec<f64>; 3] = Default::default();
        for axis in 0..3 {
            let n = grid.extent(axis);
            let scale = 2.0 * PI / grid.length(axis);
            for m in 0..n {
                let signed = if m < n.div_ceil(2) { m as f64 } else { m as f64 - n as f64 };
                raw[axis].push(signed * scale);
                let nyquist = n % 2 == 0 && m == n / 2;
                deriv[axis].push(if nyquist || n == 1 { 0.0 } else { signed * scale });
            }
        }
        Self { grid: *grid, deriv, raw }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Derivative wavevector of the mode stored at `flat`.
    pub fn k(&self, flat: usize) -> [f64; 3] {
        let idx = self.grid.multi_index(flat);
        [self.deriv[0][idx[0]], self.deriv[1][idx[1]], self.deriv[2][idx[2]]]
    }

    /// Mode wavevector including the Nyquist entry.
    pub fn k_raw(&self, flat: usize) -> [f64; 3] {
        let idx = self.grid.multi_index(flat);
        [self.raw[0][idx[0]], self.raw[1][idx[1]], self.raw[2][idx[2]]]
    }

    /// Symbol of the standard second-order finite-difference Laplacian.
    pub fn fd_laplacian_symbol(&self, flat: usize) -> f64 {
        let h = self.grid.h();
        let k = self.k_raw(flat);
        -(0..self.grid.dim())
            .map(|a| (2.0 / h * (0.5 * k[a] * h).sin()).powi(2))
            .sum::<f64>()
    }
}

fn cached_wavenumbers(grid: &GridSpec) -> Arc<WaveNumbers> {
    type Cache = Mutex<Vec<Arc<WaveNumbers>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(w) = guard.iter().find(|w| w.grid == *grid) {
        return w.clone();
    }
    let w = Arc::new(WaveNumbers::new(grid));
    if guard.len() > 16 {
        guard.remove(0);
    }
    guard.push(w.clone());
    w
}

pub fn wavenumbers(grid: &GridSpec) -> Arc<WaveNumbers> {
    cached_wavenumbers(grid)
}

/// Multiply the spectrum of `f` by `symbol(k)` and transform back.
pub fn apply_symbol(f: &ScalarField, symbol: impl Fn([f64; 3]) -> Complex64) -> ScalarField {
    let grid = *f.grid();
    let wn = wavenumbers(&grid);
    let mut s = forward(f);
    for (i, c) in s.iter_mut().enumerate() {
        *c *= symbol(wn.k(i));
    }
    inverse(grid, s)
}

fn derivative(spectrum: &[Complex64], wn: &WaveNumbers, axis: usize) -> ScalarField {
    let out = spectrum
        .iter()
        .enumerate()
        .map(|(i, &c)| c * Complex64::new(0.0, wn.k(i)[axis]))
        .collect();
    inverse(*wn.grid(), out)
}

pub fn grad(f: &ScalarField) -> VectorField {
    let grid = *f.grid();
    let wn = wavenumbers(&grid);
    let s = forward(f);
    let comps = (0..grid.dim()).map(|a| derivative(&s, &wn, a)).collect();
    VectorField::from_components(comps).expect("one component per axis")
}

pub fn div(v: &VectorField) -> ScalarField {
    let grid = *v.grid();
    let wn = wavenumbers(&grid);
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for a in 0..grid.dim() {
        let s = forward(v.component(a));
        for (i, (o, c)) in acc.iter_mut().zip(s).enumerate() {
            *o += c * Complex64::new(0.0, wn.k(i)[a]);
        }
    }
    inverse(grid, acc)
}

/// Divergence of a tensor field taken along its second index: `(div T)_i = ∂_j T_ij`.
pub fn div_tensor(t: &TensorField) -> VectorField {
    let grid = *t.grid();
    let d = grid.dim();
    let wn = wavenumbers(&grid);
    let mut comps = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
        for j in 0..d {
            let s = forward(t.get(i, j));
            for (m, (o, c)) in acc.iter_mut().zip(s).enumerate() {
                *o += c * Complex64::new(0.0, wn.k(m)[j]);
            }
        }
        comps.push(inverse(grid, acc));
    }
    VectorField::from_components(comps).expect("one component per axis")
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    apply_symbol(f, |k| Complex64::new(-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]), 0.0))
}

/// Full velocity gradient, entry `(i, j)` is `∂_j u_i`.
pub fn grad_full(u: &VectorField) -> TensorField {
    let grid = *u.grid();
    let d = grid.dim();
    let wn = wavenumbers(&grid);
    let mut entries = Vec::with_capacity(d * d);
    for i in 0..d {
        let s = forward(u.component(i));
        for j in 0..d {
            entries.push(derivative(&s, &wn, j));
        }
    }
    TensorField::from_entries(d, entries).expect("d*d entries")
}

/// Strain tensor `D(u) = (∇u + ∇uᵀ)/2`.
pub fn sym_grad(u: &VectorField) -> TensorField {
    symmetrize(&grad_full(u))
}

pub fn symmetrize(g: &TensorField) -> TensorField {
    let d = g.dim();
    let mut out = g.clone();
    for i in 0..d {
        for j in 0..d {
            *out.get_mut(i, j) = g.get(i, j).zip_map(g.get(j, i), |a, b| 0.5 * (a + b));
        }
    }
    out
}
