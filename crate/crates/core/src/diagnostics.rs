//! Audited functionals of a trajectory and the diagnostics CSV.

use std::io::Write;

use crate::coupled::Trajectory;
use crate::error::{Error, Result};
use crate::grid::spectral::{grad_full, symmetrize};
use crate::grid::{commutator_residual, div, ScalarField, VectorField};
use crate::viscosity::{apply_tau, ViscosityTensor};

pub const CSV_HEADER: &str = "t,mass,drag2g_cum,drag3_cum,pgamma_integral,dissipation_cum,grad_rho_gamma_half_cum,\
energy_slack,rho_min,rho_max,pgamma_l2_running,defect_proxy,commutator_l1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub drag2g_cum: f64,
    pub drag3_cum: f64,
    pub pgamma_integral: f64,
    /// `(γ − 1)∫₀ᵗ∫τ:∇u`.
    pub dissipation_cum: f64,
    pub grad_rho_gamma_half_cum: f64,
    pub energy_slack: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub pgamma_l2_running: f64,
    pub defect_proxy: f64,
    pub commutator_l1: f64,
}

impl DiagnosticsRow {
    fn values(&self) -> [f64; 13] {
        [
            self.t,
            self.mass,
            self.drag2g_cum,
            self.drag3_cum,
            self.pgamma_integral,
            self.dissipation_cum,
            self.grad_rho_gamma_half_cum,
            self.energy_slack,
            self.rho_min,
            self.rho_max,
            self.pgamma_l2_running,
            self.defect_proxy,
            self.commutator_l1,
        ]
    }
}

/// Coarse-graining parameters of the defect proxy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectParams {
    /// Window width in cells along every axis.
    pub window: usize,
    pub h_reg: f64,
    /// Round-off allowance on the right-hand side, relative to `T ∫ρ₀`.
    pub slack_tol: f64,
}

impl Default for DefectParams {
    fn default() -> Self {
        Self { window: 8, h_reg: 1e-8, slack_tol: 1e-9 }
    }
}

impl DefectParams {
    pub fn new(window: usize, h_reg: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidParameter("defect window must be at least one cell".into()));
        }
        if !(h_reg >= 0.0 && h_reg.is_finite()) {
            return Err(Error::InvalidParameter(format!("h_reg = {h_reg}")));
        }
        Ok(Self { window, h_reg, ..Self::default() })
    }
}

#[derive(Debug, Clone)]
pub struct ViscousWork {
    pub total: f64,
    /// Pointwise `τ:∇u`.
    pub pointwise: ScalarField,
    /// `max |τ:∇u − τ:D(u)|`.
    pub h1_residual: f64,
}

pub fn viscous_work(a: &ViscosityTensor, t: f64, u: &VectorField) -> Result<ViscousWork> {
    let g = grad_full(u);
    let d = symmetrize(&g);
    let tau = apply_tau(a, t, &d)?;
    let pointwise = tau.contract(&g);
    let h1_residual = pointwise.zip_map(&tau.contract(&d), |x, y| (x - y).abs()).max();
    Ok(ViscousWork { total: pointwise.integral(), pointwise, h1_residual })
}

/// `F = ρ^γ − ν div u`.
pub fn effective_flux(rho: &ScalarField, u: &VectorField, nu: f64, gamma: f64) -> Result<ScalarField> {
    let p = crate::transport::pressure_field(rho, gamma)?;
    Ok(p.zip_map(&div(u), |p, d| p - nu * d))
}

/// `Σ_w vol_w (h + ⟨ρ^γ⟩_w − ⟨ρ⟩_w^γ)^{1/γ} − vol h^{1/γ}`.
pub fn defect_proxy(rho: &ScalarField, gamma: f64, dp: &DefectParams) -> Result<f64> {
    let grid = *rho.grid();
    let dim = grid.dim();
    let l = dp.window;
    for axis in 0..dim {
        if l == 0 || grid.extent(axis) % l != 0 {
            return Err(Error::WindowMismatch { window: l, extent: grid.extent(axis) });
        }
    }
    let counts: Vec<usize> = (0..3).map(|a| if a < dim { grid.extent(a) / l } else { 1 }).collect();
    let nw = counts[0] * counts[1] * counts[2];
    let mut sum = vec![0.0; nw];
    let mut sum_p = vec![0.0; nw];
    for (cell, &r) in rho.data().iter().enumerate() {
        let idx = grid.multi_index(cell);
        let wi = |a: usize| if a < dim { idx[a] / l } else { 0 };
        let w = (wi(0) * counts[1] + wi(1)) * counts[2] + wi(2);
        sum[w] += r;
        sum_p[w] += r.powf(gamma);
    }
    let per = (grid.len() / nw) as f64;
    let vol_w = per * grid.cell_volume();
    let inv = 1.0 / gamma;
    let mut total = 0.0;
    for w in 0..nw {
        let mean = sum[w] / per;
        let gap = (sum_p[w] / per - mean.powf(gamma)).max(0.0);
        total += vol_w * (dp.h_reg + gap).powf(inv);
    }
    Ok((total - grid.volume() * dp.h_reg.powf(inv)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectAudit {
    pub lhs: f64,
    pub rhs: f64,
    /// `D_L(ρ₀)`.
    pub initial: f64,
    /// `h^{1/γ}∫₀ᵀ∫|div u|`.
    pub correction: f64,
    pub pass: bool,
}

pub fn defect_inequality_audit(traj: &Trajectory, gamma: f64, dp: &DefectParams) -> Result<DefectAudit> {
    let states = &traj.states;
    let values = states
        .iter()
        .map(|s| defect_proxy(&s.rho, gamma, dp))
        .collect::<Result<Vec<_>>>()?;
    let mut lhs = 0.0;
    for i in 1..states.len() {
        lhs += 0.5 * (states[i].t - states[i - 1].t) * (values[i] + values[i - 1]);
    }
    let last = states.last().expect("trajectory has an initial state");
    let horizon = last.t - states[0].t;
    let initial = values[0];
    let correction = dp.h_reg.powf(1.0 / gamma) * last.ledger.div_u_l1_cum;
    let rhs = horizon * initial + correction + dp.slack_tol * horizon * traj.initial_mass;
    Ok(DefectAudit { lhs, rhs, initial, correction, pass: lhs <= rhs })
}

/// Slack of the energy inequality at every stored state.
pub fn energy_audit(traj: &Trajectory) -> Vec<f64> {
    traj.states.iter().map(|s| traj.initial_energy - traj.energy_terms(s)).collect()
}

/// Running `‖ρ^γ‖_{L²((0,T)×𝕋^d)}` at the final stored time.
pub fn pressure_l2_audit(traj: &Trajectory) -> f64 {
    traj.states.last().map(|s| s.ledger.pgamma_sq_cum.sqrt()).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorTable {
    pub deltas: Vec<f64>,
    /// `(t, residual per δ)` for every stored state.
    pub rows: Vec<(f64, Vec<f64>)>,
}

impl CommutatorTable {
    /// Every row decreases along the δ list up to a relative `ripple`.
    pub fn is_monotone(&self, ripple: f64) -> bool {
        self.rows.iter().all(|(_, r)| r.windows(2).all(|w| w[1] <= w[0] * (1.0 + ripple)))
    }
}

pub fn commutator_audit(traj: &Trajectory, deltas: &[f64]) -> CommutatorTable {
    let rows = traj
        .states
        .iter()
        .map(|s| (s.t, deltas.iter().map(|&d| commutator_residual(&s.rho, &s.u, d)).collect()))
        .collect();
    CommutatorTable { deltas: deltas.to_vec(), rows }
}

/// One row per stored state.
pub fn diagnostics_rows(traj: &Trajectory, dp: &DefectParams, commutator_delta: f64) -> Result<Vec<DiagnosticsRow>> {
    let gamma = traj.gamma;
    let slack = energy_audit(traj);
    traj.states
        .iter()
        .zip(slack)
        .map(|(s, energy_slack)| {
            let l = &s.ledger;
            Ok(DiagnosticsRow {
                t: s.t,
                mass: l.mass.mass_now,
                drag2g_cum: l.mass.drag2g_cum,
                drag3_cum: l.mass.drag3_cum,
                pgamma_integral: s.rho.map(|r| r.powf(gamma)).integral(),
                dissipation_cum: l.dissipation_cum,
                grad_rho_gamma_half_cum: l.mass.grad_rho_gamma_half_cum,
                energy_slack,
                rho_min: s.rho.min(),
                rho_max: s.rho.max(),
                pgamma_l2_running: l.pgamma_sq_cum.sqrt(),
                defect_proxy: defect_proxy(&s.rho, gamma, dp)?,
                commutator_l1: commutator_residual(&s.rho, &s.u, commutator_delta),
            })
        })
        .collect()
}

/// Scientific notation with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(out: &mut W, rows: &[DiagnosticsRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        let line: Vec<String> = row.values().iter().map(|v| format_value(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,mass,drag2g_cum,drag3_cum,pgamma_integral,dissipation_cum,grad_rho_gamma_half_cum,energy_slack,\
             rho_min,rho_max,pgamma_l2_running,defect_proxy,commutator_l1\n"
        );
    }

    #[test]
    fn values_round_trip_with_seventeen_digits() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = format_value(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn viscous_work_oracles() {
        let grid = GridSpec::cubic(3, 16).unwrap();
        let nu = 0.8;
        let a = ViscosityTensor::isotropic(3, nu).unwrap();
        assert_eq!(viscous_work(&a, 0.0, &VectorField::zeros(grid)).unwrap().total, 0.0);
        let u = VectorField::from_fn(grid, |x| [x[1].sin(), 0.0, 0.0]);
        let w = viscous_work(&a, 0.0, &u).unwrap();
        assert_abs_diff_eq!(w.total, nu * grid.volume() / 2.0, epsilon = 1e-10);
        assert!(w.h1_residual <= 1e-12);
        let b = ViscosityTensor::from_entries(3, &(0..81).map(|i| ((i * 37) % 11) as f64 / 7.0).collect::<Vec<_>>()).unwrap();
        assert!(viscous_work(&b, 0.0, &u).unwrap().h1_residual <= 1e-12);
    }

    #[test]
    fn effective_flux_values() {
        let grid = GridSpec::cubic(1, 32).unwrap();
        let rho = ScalarField::constant(grid, 1.0);
        // div u = sin x₁
        let u = VectorField::from_fn(grid, |x| [-x[0].cos(), 0.0, 0.0]);
        let f = effective_flux(&rho, &u, 2.0, 2.0).unwrap();
        for i in 0..grid.len() {
            assert_abs_diff_eq!(f[i], 1.0 - 2.0 * grid.coords(i)[0].sin(), epsilon = 1e-12);
        }
        let r = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * x[0].cos());
        let plain = effective_flux(&r, &VectorField::zeros(grid), 3.0, 1.5).unwrap();
        assert_eq!(plain, r.map(|v| v.powf(1.5)));
    }

    #[test]
    fn defect_proxy_oracles() {
        let grid = GridSpec::cubic(1, 64).unwrap();
        let exact = DefectParams { h_reg: 0.0, ..DefectParams::new(8, 0.0).unwrap() };
        assert_eq!(defect_proxy(&ScalarField::constant(grid, 1.3), 2.0, &exact).unwrap(), 0.0);
        let alt = ScalarField::from_fn(grid, |x| if ((x[0] / grid.h()).round() as usize) % 2 == 0 { 0.0 } else { 1.0 });
        assert_abs_diff_eq!(defect_proxy(&alt, 2.0, &exact).unwrap(), PI, epsilon = 1e-12);
        let smooth = ScalarField::from_fn(grid, |x| 1.0 + 0.3 * x[0].sin());
        assert_eq!(defect_proxy(&smooth, 2.0, &DefectParams::new(1, 0.0).unwrap()).unwrap(), 0.0);
        assert!(matches!(
            defect_proxy(&smooth, 2.0, &DefectParams::new(5, 0.0).unwrap()),
            Err(Error::WindowMismatch { window: 5, extent: 64 })
        ));
    }

    #[test]
    fn defect_proxy_is_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let grid = GridSpec::cubic(2, 16).unwrap();
        for _ in 0..20 {
            let f = ScalarField::from_vec(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
            for window in [2, 4, 8] {
                let d = defect_proxy(&f, 1.7, &DefectParams::new(window, 1e-8).unwrap()).unwrap();
                assert!(d >= 0.0);
            }
        }
    }
}
