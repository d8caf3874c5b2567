//! Regularized continuity equation
//! `∂_t ρ + div(ρv) = εΔρ − ηρ^{2γ} − ηρ³`, advanced by Lie splitting in the
//! fixed order advect → diffuse → drag.
//!
//! * advection: conservative upwind finite volumes, face velocity = mean of
//!   the two adjacent cell values;
//! * diffusion: implicit Euler with the second-order finite-difference
//!   Laplacian (an M-matrix, so positivity and the maximum principle are
//!   exact), diagonalized by FFT;
//! * drag: implicit per-cell solve of `r + dt η (r^{2γ} + r³) = b`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::spectral::{self, wavenumbers};
use crate::grid::{ScalarField, VectorField};
use crate::stokes::KrylovSettings;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub gamma: f64,
    /// Density diffusion ε.
    pub eps: f64,
    /// Mollification radius δ.
    pub delta: f64,
    /// Drag coefficient η.
    pub eta: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub stokes: KrylovSettings,
    /// Advection order, 1 (upwind) or 2 (minmod-limited).
    pub order: u8,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            eps: 0.01,
            delta: 0.2,
            eta: 0.01,
            cfl: 0.45,
            dt_max: 0.01,
            fp_tol: 1e-7,
            fp_max_iter: 30,
            stokes: KrylovSettings::default(),
            order: 1,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return bad(format!("gamma = {} (must exceed 1)", self.gamma));
        }
        for (name, v) in [("eps", self.eps), ("delta", self.delta), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} (must be nonnegative)"));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl = {} (must lie in (0, 1])", self.cfl));
        }
        if !(self.dt_max > 0.0 && self.dt_max.is_finite()) {
            return bad(format!("dt_max = {}", self.dt_max));
        }
        if !(self.fp_tol > 0.0) || self.fp_max_iter == 0 {
            return bad("fixed point tolerance and iteration cap must be positive".into());
        }
        if !(self.stokes.rtol > 0.0) || self.stokes.max_iter == 0 {
            return bad("stokes tolerance and iteration cap must be positive".into());
        }
        if self.order != 1 && self.order != 2 {
            return bad(format!("transport order {} (1 or 2)", self.order));
        }
        Ok(())
    }

    /// Coefficient `4ε(1 − 1/γ)` of the `|∇ρ^{γ/2}|²` dissipation.
    pub fn grad_half_coefficient(&self) -> f64 {
        4.0 * self.eps * (1.0 - 1.0 / self.gamma)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MassLedger {
    /// `∫ρ`.
    pub mass_now: f64,
    /// `η∫₀ᵗ∫ρ^{2γ}`.
    pub drag2g_cum: f64,
    /// `η∫₀ᵗ∫ρ³`.
    pub drag3_cum: f64,
    /// `4ε(1 − 1/γ)∫₀ᵗ∫|∇ρ^{γ/2}|²`.
    pub grad_rho_gamma_half_cum: f64,
}

impl MassLedger {
    pub fn start(rho0: &ScalarField) -> Self {
        Self { mass_now: rho0.integral(), ..Self::default() }
    }

    pub fn record(&mut self, inc: &StepIncrement) {
        self.mass_now = inc.mass_after;
        self.drag2g_cum += inc.drag2g;
        self.drag3_cum += inc.drag3;
        self.grad_rho_gamma_half_cum += inc.grad_half;
    }

    /// `∫ρ + η∫∫ρ^{2γ} + η∫∫ρ³`, conserved.
    pub fn total(&self) -> f64 {
        self.mass_now + self.drag2g_cum + self.drag3_cum
    }
}

/// What one continuity step removed or dissipated.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepIncrement {
    pub mass_after: f64,
    /// Mass removed by the `ηρ^{2γ}` channel.
    pub drag2g: f64,
    /// Mass removed by the `ηρ³` channel.
    pub drag3: f64,
    /// `dt · 4ε(1 − 1/γ) ∫|∇ρ^{γ/2}|²` on the post-diffusion density (face differences).
    pub grad_half: f64,
    /// `dt · ηγ ∫(ρ^{3γ−1} + ρ^{γ+2})` on the post-drag density.
    pub drag_energy: f64,
}

/// Largest stable step for the advecting velocity `v`.
pub fn cfl_dt(v: &VectorField, params: &SolverParams) -> f64 {
    let speed = v.max_l1_speed().max(1e-300);
    params.dt_max.min(params.cfl * v.grid().h() / speed)
}

pub fn pressure_field(rho: &ScalarField, gamma: f64) -> Result<ScalarField> {
    check_nonnegative(rho)?;
    Ok(rho.map(|r| r.powf(gamma)))
}

fn check_nonnegative(rho: &ScalarField) -> Result<()> {
    if let Some((index, &value)) = rho.data().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeInput { index, value });
    }
    Ok(())
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Explicit conservative advection `ρ − dt div_h(ρ v)`.
pub fn advect(rho: &ScalarField, v: &VectorField, dt: f64, order: u8) -> ScalarField {
    let grid = *rho.grid();
    let h = grid.h();
    let mut out = rho.clone();
    let r = rho.data();
    for axis in 0..grid.dim() {
        let vel = v.component(axis).data();
        if vel.iter().all(|&x| x == 0.0) {
            continue;
        }
        // flux through the face between cell i and its +axis neighbour
        let flux: Vec<f64> = (0..grid.len())
            .map(|i| {
                let ip = grid.shifted(i, unit(axis, 1));
                let vf = 0.5 * (vel[i] + vel[ip]);
                let (left, right) = if order == 2 {
                    let im = grid.shifted(i, unit(axis, -1));
                    let ipp = grid.shifted(ip, unit(axis, 1));
                    (
                        r[i] + 0.5 * minmod(r[i] - r[im], r[ip] - r[i]),
                        r[ip] - 0.5 * minmod(r[ip] - r[i], r[ipp] - r[ip]),
                    )
                } else {
                    (r[i], r[ip])
                };
                if vf > 0.0 {
                    vf * left
                } else {
                    vf * right
                }
            })
            .collect();
        let o = out.data_mut();
        for i in 0..grid.len() {
            let im = grid.shifted(i, unit(axis, -1));
            o[i] -= dt / h * (flux[i] - flux[im]);
        }
    }
    out
}

fn unit(axis: usize, s: isize) -> [isize; 3] {
    let mut o = [0; 3];
    o[axis] = s;
    o
}

/// Net outflow divergence of the face velocities used by [`advect`].
pub fn face_divergence(v: &VectorField) -> ScalarField {
    let grid = *v.grid();
    let h = grid.h();
    let mut out = ScalarField::zeros(grid);
    for axis in 0..grid.dim() {
        let vel = v.component(axis).data();
        for i in 0..grid.len() {
            let ip = grid.shifted(i, unit(axis, 1));
            let im = grid.shifted(i, unit(axis, -1));
            out[i] += 0.5 * (vel[ip] - vel[im]) / h;
        }
    }
    out
}

/// Solve `(I − ε dt Δ_h) ρ' = ρ` with the finite-difference Laplacian.
pub fn diffuse(rho: &ScalarField, eps_dt: f64) -> ScalarField {
    if eps_dt == 0.0 {
        return rho.clone();
    }
    let grid = *rho.grid();
    let wn = wavenumbers(&grid);
    let mut s = spectral::forward(rho);
    for (i, c) in s.iter_mut().enumerate() {
        *c /= Complex64::new(1.0 - eps_dt * wn.fd_laplacian_symbol(i), 0.0);
    }
    let mut out = spectral::inverse(grid, s);
    // the exact inverse is a positive operator; negatives here are FFT round-off
    let scale = rho.max_abs();
    for v in out.data_mut() {
        if *v < 0.0 {
            debug_assert!(*v > -1e-12 * scale.max(1e-300), "diffusion produced {v}");
            *v = 0.0;
        }
    }
    out
}

/// `Σ_faces ((s_{i+e} − s_i)/h)²` times the cell volume.
pub fn face_gradient_energy(s: &ScalarField) -> f64 {
    let grid = *s.grid();
    let h = grid.h();
    let mut acc = 0.0;
    for axis in 0..grid.dim() {
        for i in 0..grid.len() {
            let d = (s[grid.shifted(i, unit(axis, 1))] - s[i]) / h;
            acc += d * d;
        }
    }
    acc * grid.cell_volume()
}

/// Root `r ≥ 0` of `r + k (r^{2γ} + r³) = b` for `b ≥ 0`, `k ≥ 0`.
pub fn drag_root(b: f64, k: f64, gamma: f64) -> Option<f64> {
    if b == 0.0 || k == 0.0 {
        return Some(b);
    }
    let p = 2.0 * gamma;
    let g = |r: f64| r + k * (r.powf(p) + r * r * r) - b;
    let dg = |r: f64| 1.0 + k * (p * r.powf(p - 1.0) + 3.0 * r * r);
    let (mut lo, mut hi) = (0.0, b);
    let mut r = b;
    for _ in 0..200 {
        let val = g(r);
        if val == 0.0 {
            return Some(r);
        }
        if val > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let mut next = r - val / dg(r);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 4.0 * f64::EPSILON * r.max(f64::MIN_POSITIVE) || hi - lo <= f64::EPSILON * hi {
            return Some(next);
        }
        r = next;
    }
    None
}

/// One split step of the regularized continuity equation.
pub fn continuity_step(
    rho: &ScalarField,
    v: &VectorField,
    dt: f64,
    params: &SolverParams,
) -> Result<(ScalarField, StepIncrement)> {
    rho.grid().check_same(v.grid())?;
    check_nonnegative(rho)?;
    let limit = cfl_dt(v, params);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!("dt = {dt:e} exceeds the CFL bound {limit:e}")));
    }
    let grid = *rho.grid();
    let vol = grid.cell_volume();
    let gamma = params.gamma;

    let advected = advect(rho, v, dt, params.order);
    check_nonnegative(&advected).map_err(|e| {
        log::error!("advection lost positivity; dt = {dt:e}");
        e
    })?;

    let diffused = diffuse(&advected, params.eps * dt);
    let grad_half = if params.eps > 0.0 {
        let s = diffused.map(|r| r.powf(0.5 * gamma));
        dt * params.grad_half_coefficient() * face_gradient_energy(&s)
    } else {
        0.0
    };

    let mut inc = StepIncrement { grad_half, ..Default::default() };
    let out = if params.eta > 0.0 {
        let k = dt * params.eta;
        let roots: Vec<Option<f64>> = diffused.data().par_iter().map(|&b| drag_root(b, k, gamma)).collect();
        let mut data = Vec::with_capacity(grid.len());
        for (index, (root, &b)) in roots.into_iter().zip(diffused.data()).enumerate() {
            let r = root.ok_or(Error::NewtonFail { index, rhs: b })?;
            let removed = b - r;
            let (w2g, w3) = (r.powf(2.0 * gamma), r * r * r);
            let share = if w2g + w3 > 0.0 { w2g / (w2g + w3) } else { 0.5 };
            let part2g = removed * share;
            inc.drag2g += part2g * vol;
            inc.drag3 += (removed - part2g) * vol;
            inc.drag_energy += dt * params.eta * gamma * (r.powf(3.0 * gamma - 1.0) + r.powf(gamma + 2.0)) * vol;
            data.push(r);
        }
        ScalarField::from_vec(grid, data)?
    } else {
        diffused
    };
    inc.mass_after = out.integral();
    Ok((out, inc))
}
