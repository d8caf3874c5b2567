//! Fixed-point operator `B`, Picard iteration on time slabs, slab marching,
//! and the direct semi-implicit stepper.
//!
//! Inside a slab the candidate velocity is piecewise constant per substep.
//! Substep `j` computes the Stokes velocity from the density at its start,
//! `𝒜u_j = ∇(f − ω_δ∗ρ_j^γ)`, then advances `ρ_j → ρ_{j+1}` with the
//! advecting velocity `ω_δ∗v_j`.

use std::borrow::Cow;

use crate::diagnostics::viscous_work;
use crate::error::{Error, Result};
use crate::grid::spectral::grad;
use crate::grid::{div, mollify, mollify_vector, GridSpec, MollifierKernel, ScalarField, VectorField};
use crate::stokes::{KrylovSettings, StokesOperator};
use crate::transport::{cfl_dt, continuity_step, MassLedger, SolverParams, StepIncrement};
use crate::viscosity::{coercivity_estimate, ViscosityTensor};

const MAX_HALVINGS: usize = 6;
const MAX_SUBSTEPS: usize = 1 << 16;

/// Right-hand side potential `f`, optionally piecewise linear in time.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    Zero,
    Static(ScalarField),
    Breakpoints(Vec<(f64, ScalarField)>),
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    pub fn at(&self, t: f64) -> Option<Cow<'_, ScalarField>> {
        match self {
            Forcing::Zero => None,
            Forcing::Static(f) => Some(Cow::Borrowed(f)),
            Forcing::Breakpoints(bp) => {
                if t <= bp[0].0 {
                    return Some(Cow::Borrowed(&bp[0].1));
                }
                for w in bp.windows(2) {
                    let ((t0, f0), (t1, f1)) = (&w[0], &w[1]);
                    if t <= *t1 {
                        let s = (t - t0) / (t1 - t0);
                        return Some(Cow::Owned(f0.zip_map(f1, |a, b| (1.0 - s) * a + s * b)));
                    }
                }
                Some(Cow::Borrowed(&bp[bp.len() - 1].1))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl Slab {
    /// Smallest uniform substep count with `dt ≤ dt_max`.
    pub fn new(t0: f64, t1: f64, dt_max: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::InvalidParameter(format!("empty slab [{t0}, {t1}]")));
        }
        let steps = (((t1 - t0) / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok(Self { t0, t1, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn len(&self) -> f64 {
        self.t1 - self.t0
    }

    fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t1
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }
}

/// Cumulative ledgers at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Ledgers {
    pub mass: MassLedger,
    /// `(γ − 1)∫₀ᵗ∫τ:∇u`.
    pub dissipation_cum: f64,
    /// `ηγ∫₀ᵗ∫(ρ^{3γ−1} + ρ^{γ+2})`.
    pub drag_energy_cum: f64,
    /// `(γ − 1)∫₀ᵗ∫f div u`.
    pub forcing_work_cum: f64,
    /// `∫₀ᵗ∫ρ^{2γ}`.
    pub pgamma_sq_cum: f64,
    /// `∫₀ᵗ∫|div u|`.
    pub div_u_l1_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub rho: ScalarField,
    pub u: VectorField,
    pub ledger: Ledgers,
}

/// Per-step record used by the positivity and maximum-principle audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub rho_max_before: f64,
    pub rho_max_after: f64,
    pub rho_min_after: f64,
    /// `‖div(ω_δ∗v)‖_∞` of the advecting velocity.
    pub div_v_max: f64,
}

impl StepRecord {
    /// `max ρ' / (max ρ (1 + 1.1 dt ‖div v‖_∞))`; at most 1 when the discrete maximum principle holds.
    pub fn max_principle_ratio(&self) -> f64 {
        let bound = self.rho_max_before * (1.0 + 1.1 * self.dt * self.div_v_max);
        if bound > 0.0 {
            self.rho_max_after / bound
        } else if self.rho_max_after > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlabReport {
    pub slab: Slab,
    pub iterations: usize,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub gamma: f64,
    pub eta: f64,
    pub eps: f64,
    pub states: Vec<State>,
    pub steps: Vec<StepRecord>,
    pub slabs: Vec<SlabReport>,
    /// `∫ρ₀`.
    pub initial_mass: f64,
    /// `∫ρ₀^γ`.
    pub initial_energy: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Left-hand side of the energy inequality at a stored state.
    pub fn energy_terms(&self, s: &State) -> f64 {
        let l = &s.ledger;
        s.rho.map(|r| r.powf(self.gamma)).integral()
            + l.dissipation_cum
            + l.drag_energy_cum
            + l.mass.grad_rho_gamma_half_cum
            + l.forcing_work_cum
    }

    /// Largest relative mass-ledger defect over the stored states.
    pub fn mass_defect(&self) -> f64 {
        self.states
            .iter()
            .map(|s| (s.ledger.mass.total() - self.initial_mass).abs() / self.initial_mass.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// Largest contraction ratio of every slab that took at least two iterations.
    pub fn contraction_factors(&self) -> Vec<f64> {
        self.slabs.iter().filter_map(|s| s.history.iter().copied().reduce(f64::max)).collect()
    }
}

/// Stokes operators along the run, rebuilt per time only when `A` depends on time.
#[derive(Debug, Clone)]
struct StokesFamily {
    a: ViscosityTensor,
    grid: GridSpec,
    settings: KrylovSettings,
    fixed: Option<StokesOperator>,
}

impl StokesFamily {
    fn new(a: &ViscosityTensor, grid: &GridSpec, settings: KrylovSettings) -> Result<Self> {
        let fixed = if a.is_time_dependent() {
            // the quadratic form is affine in A, so coercivity at the breakpoints covers every time
            if let ViscosityTensor::VaryingFull { breakpoints, .. } = a {
                for (t, _) in breakpoints {
                    let report = coercivity_estimate(a, *t);
                    if !report.passed {
                        return Err(Error::NotCoercive { c_est: report.c_est });
                    }
                }
            }
            None
        } else {
            Some(StokesOperator::build(a, grid, 0.0)?.with_settings(settings))
        };
        Ok(Self { a: a.clone(), grid: *grid, settings, fixed })
    }

    fn at(&self, t: f64) -> Result<Cow<'_, StokesOperator>> {
        match &self.fixed {
            Some(op) => Ok(Cow::Borrowed(op)),
            None => Ok(Cow::Owned(StokesOperator::build_unchecked(&self.a, &self.grid, t)?.with_settings(self.settings))),
        }
    }
}

/// Outcome of a converged Picard iteration on one slab.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub trajectory: Trajectory,
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Substep velocities of the fixed point.
    pub velocity: Vec<VectorField>,
    /// The slab actually used (substeps may have been refined for CFL).
    pub slab: Slab,
}

impl PicardOutcome {
    /// Last entry of the contraction history.
    pub fn terminal_factor(&self) -> Option<f64> {
        self.history.last().copied()
    }

    /// Largest observed ratio of successive increments.
    ///
    /// Substep `j` of `B(v)` only sees `v_0, …, v_{j−1}`, so the iteration
    /// terminates exactly after at most `steps + 1` sweeps and the last
    /// ratio collapses to zero; the largest ratio is the meaningful
    /// contraction constant of the slab.
    pub fn contraction_factor(&self) -> Option<f64> {
        self.history.iter().copied().reduce(f64::max)
    }
}

pub struct CoupledSolver {
    a: ViscosityTensor,
    forcing: Forcing,
    params: SolverParams,
    grid: GridSpec,
    family: StokesFamily,
    kernel: MollifierKernel,
    store_every: usize,
}

struct Recorder {
    gamma: f64,
    store_every: usize,
    count: usize,
    ledger: Ledgers,
    p2: f64,
    traj: Trajectory,
}

impl Recorder {
    fn new(rho0: &ScalarField, params: &SolverParams, store_every: usize) -> Self {
        let gamma = params.gamma;
        Self {
            gamma,
            store_every,
            count: 0,
            ledger: Ledgers { mass: MassLedger::start(rho0), ..Ledgers::default() },
            p2: rho0.map(|r| r.powf(2.0 * gamma)).integral(),
            traj: Trajectory {
                gamma,
                eta: params.eta,
                eps: params.eps,
                states: Vec::new(),
                steps: Vec::new(),
                slabs: Vec::new(),
                initial_mass: rho0.integral(),
                initial_energy: rho0.map(|r| r.powf(gamma)).integral(),
            },
        }
    }
}

struct Converged {
    velocity: Vec<VectorField>,
    slab: Slab,
    history: Vec<f64>,
    iterations: usize,
}

struct StepInput<'a> {
    t: f64,
    dt: f64,
    rho: &'a ScalarField,
    u: &'a VectorField,
    advecting: &'a VectorField,
    next: &'a ScalarField,
    inc: &'a StepIncrement,
}

impl CoupledSolver {
    pub fn new(a: ViscosityTensor, forcing: Forcing, params: SolverParams, grid: GridSpec) -> Result<Self> {
        params.validate()?;
        if a.dim() != grid.dim() {
            return Err(Error::DimensionMismatch(format!("{}-dimensional tensor on a {}-dimensional grid", a.dim(), grid.dim())));
        }
        match &forcing {
            Forcing::Zero => {}
            Forcing::Static(f) => grid.check_same(f.grid())?,
            Forcing::Breakpoints(bp) => {
                if bp.is_empty() || bp.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::InvalidParameter("forcing breakpoints must be nonempty and increasing".into()));
                }
                for (_, f) in bp {
                    grid.check_same(f.grid())?;
                }
            }
        }
        let family = StokesFamily::new(&a, &grid, params.stokes)?;
        let kernel = MollifierKernel::new(params.delta, &grid);
        Ok(Self { a, forcing, params, grid, family, kernel, store_every: 1 })
    }

    /// Store every `n`-th step (the final state is always stored).
    pub fn with_store_every(mut self, n: usize) -> Self {
        self.store_every = n.max(1);
        self
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn viscosity(&self) -> &ViscosityTensor {
        &self.a
    }

    pub fn kernel(&self) -> &MollifierKernel {
        &self.kernel
    }

    /// `u` solving `𝒜u = ∇(f − ω_δ∗ρ^γ)` at time `t`.
    pub fn stokes_velocity(&self, rho: &ScalarField, t: f64) -> Result<VectorField> {
        let p = crate::transport::pressure_field(rho, self.params.gamma)?;
        let mut q = mollify(&p, &self.kernel).scale(-1.0);
        if let Some(f) = self.forcing.at(t) {
            q = q.zip_map(&f, |a, b| a + b);
        }
        self.family.at(t)?.solve(&q)
    }

    fn check_start(&self, rho0: &ScalarField) -> Result<()> {
        self.grid.check_same(rho0.grid())?;
        if let Some((index, &value)) = rho0.data().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeInput { index, value });
        }
        Ok(())
    }

    /// One pass through the slab with the given advecting velocities.
    fn sweep(
        &self,
        advecting: &[VectorField],
        rho0: &ScalarField,
        slab: &Slab,
        mut rec: Option<&mut Recorder>,
    ) -> Result<(Vec<VectorField>, ScalarField)> {
        let dt = slab.dt();
        let mut rho = rho0.clone();
        let mut out = Vec::with_capacity(slab.steps);
        for (j, v) in advecting.iter().enumerate() {
            let t = slab.time(j);
            let u = self.stokes_velocity(&rho, t)?;
            let (next, inc) = continuity_step(&rho, v, dt, &self.params)?;
            if let Some(r) = rec.as_deref_mut() {
                self.record(r, StepInput { t, dt, rho: &rho, u: &u, advecting: v, next: &next, inc: &inc })?;
            }
            out.push(u);
            rho = next;
        }
        Ok((out, rho))
    }

    fn record(&self, rec: &mut Recorder, s: StepInput<'_>) -> Result<()> {
        let gamma = rec.gamma;
        if rec.count % rec.store_every == 0 {
            rec.traj.states.push(State { t: s.t, rho: s.rho.clone(), u: s.u.clone(), ledger: rec.ledger });
        }
        let div_u = div(s.u);
        let l = &mut rec.ledger;
        l.dissipation_cum += s.dt * (gamma - 1.0) * viscous_work(&self.a, s.t, s.u)?.total;
        if let Some(f) = self.forcing.at(s.t) {
            l.forcing_work_cum += s.dt * (gamma - 1.0) * f.dot(&div_u);
        }
        l.div_u_l1_cum += s.dt * div_u.l1_norm();
        l.mass.record(s.inc);
        l.drag_energy_cum += s.inc.drag_energy;
        let p2 = s.next.map(|r| r.powf(2.0 * gamma)).integral();
        l.pgamma_sq_cum += 0.5 * s.dt * (rec.p2 + p2);
        rec.p2 = p2;
        rec.traj.steps.push(StepRecord {
            t: s.t,
            dt: s.dt,
            rho_max_before: s.rho.max(),
            rho_max_after: s.next.max(),
            rho_min_after: s.next.min(),
            div_v_max: div(s.advecting).max_abs(),
        });
        rec.count += 1;
        Ok(())
    }

    fn finish(&self, mut rec: Recorder, t: f64, rho: ScalarField) -> Result<Trajectory> {
        let u = self.stokes_velocity(&rho, t)?;
        rec.traj.states.push(State { t, rho, u, ledger: rec.ledger });
        Ok(rec.traj)
    }

    /// The fixed-point map: substep samples of `B(v)` over the slab.
    pub fn apply_b(&self, v: &[VectorField], rho0: &ScalarField, slab: &Slab) -> Result<Vec<VectorField>> {
        self.check_start(rho0)?;
        if v.len() != slab.steps {
            return Err(Error::DimensionMismatch(format!("{} velocity samples for {} substeps", v.len(), slab.steps)));
        }
        let advecting: Vec<VectorField> = v.iter().map(|s| mollify_vector(s, &self.kernel)).collect();
        Ok(self.sweep(&advecting, rho0, slab, None)?.0)
    }

    /// `‖∇w‖_{L²(slab)}` for piecewise-constant samples.
    pub fn slab_gradient_norm(w: &[VectorField], dt: f64) -> f64 {
        let mut acc = 0.0;
        for s in w {
            for c in s.components() {
                let g = grad(c);
                acc += dt * g.dot(&g);
            }
        }
        acc.sqrt()
    }

    fn refine_for_cfl(&self, v: &mut Vec<VectorField>, slab: &mut Slab) -> Result<Vec<VectorField>> {
        loop {
            let advecting: Vec<VectorField> = v.iter().map(|s| mollify_vector(s, &self.kernel)).collect();
            let dt = slab.dt();
            let factor = advecting
                .iter()
                .map(|a| (dt / cfl_dt(a, &self.params) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
                .max()
                .unwrap_or(1);
            if factor == 1 {
                return Ok(advecting);
            }
            if slab.steps * factor > MAX_SUBSTEPS {
                return Err(Error::SlabCollapse { t: slab.t0, slab: slab.len() });
            }
            log::debug!("refining slab [{}, {}] from {} to {} substeps", slab.t0, slab.t1, slab.steps, slab.steps * factor);
            *v = v.iter().flat_map(|s| std::iter::repeat(s.clone()).take(factor)).collect();
            slab.steps *= factor;
        }
    }

    fn picard_core(&self, rho0: &ScalarField, slab: Slab, v0: Vec<VectorField>) -> Result<(Vec<VectorField>, Slab, Vec<f64>, usize)> {
        let mut slab = slab;
        let mut v = v0;
        let mut history = Vec::new();
        let mut prev: Option<f64> = None;
        let mut streak = 0;
        for iteration in 1..=self.params.fp_max_iter {
            let advecting = self.refine_for_cfl(&mut v, &mut slab)?;
            let (next, _) = self.sweep(&advecting, rho0, &slab, None)?;
            let diff: Vec<VectorField> = next.iter().zip(&v).map(|(a, b)| a.zip_map(b, |x, y| x - y)).collect();
            let norm = Self::slab_gradient_norm(&diff, slab.dt());
            if let Some(p) = prev {
                let factor = if p > 0.0 { norm / p } else { 0.0 };
                history.push(factor);
                streak = if factor >= 1.0 { streak + 1 } else { 0 };
                if streak >= 3 {
                    return Err(Error::NoContraction { iteration, factor });
                }
            }
            log::debug!("picard iteration {iteration}: ‖∇(v_k+1 − v_k)‖ = {norm:e}");
            prev = Some(norm);
            v = next;
            if norm <= self.params.fp_tol {
                return Ok((v, slab, history, iteration));
            }
        }
        Err(Error::FixedPointCap { iterations: self.params.fp_max_iter, increment: prev.unwrap_or(f64::NAN) })
    }

    fn picard_into(&self, rho0: &ScalarField, slab: Slab, v0: Vec<VectorField>, rec: &mut Recorder) -> Result<(Converged, ScalarField)> {
        let (velocity, slab, history, iterations) = self.picard_core(rho0, slab, v0)?;
        // regenerate the density along the converged velocity
        let advecting: Vec<VectorField> = velocity.iter().map(|s| mollify_vector(s, &self.kernel)).collect();
        let (_, rho_end) = self.sweep(&advecting, rho0, &slab, Some(rec))?;
        rec.traj.slabs.push(SlabReport { slab, iterations, history: history.clone() });
        Ok((Converged { velocity, slab, history, iterations }, rho_end))
    }

    /// Picard iteration from `v₀ = 0`.
    pub fn picard_solve(&self, rho0: &ScalarField, slab: Slab) -> Result<PicardOutcome> {
        let v0 = vec![VectorField::zeros(self.grid); slab.steps];
        self.picard_solve_from(rho0, slab, v0)
    }

    pub fn picard_solve_from(&self, rho0: &ScalarField, slab: Slab, v0: Vec<VectorField>) -> Result<PicardOutcome> {
        self.check_start(rho0)?;
        if v0.len() != slab.steps {
            return Err(Error::DimensionMismatch(format!("{} velocity samples for {} substeps", v0.len(), slab.steps)));
        }
        let mut rec = Recorder::new(rho0, &self.params, self.store_every);
        let (c, rho_end) = self.picard_into(rho0, slab, v0, &mut rec)?;
        Ok(PicardOutcome {
            trajectory: self.finish(rec, c.slab.t1, rho_end)?,
            history: c.history,
            iterations: c.iterations,
            velocity: c.velocity,
            slab: c.slab,
        })
    }

    /// Chain Picard slabs up to `t_end`, halving the slab on failure.
    pub fn march(&self, rho0: &ScalarField, t_end: f64, slab_len: f64) -> Result<Trajectory> {
        self.check_start(rho0)?;
        if !(t_end >= 0.0) || !(slab_len > 0.0) {
            return Err(Error::InvalidParameter(format!("t_end = {t_end}, slab = {slab_len}")));
        }
        let mut rec = Recorder::new(rho0, &self.params, self.store_every);
        let mut rho = rho0.clone();
        let mut t = 0.0;
        let mut len = slab_len;
        while t < t_end {
            let mut halvings = 0;
            loop {
                let t1 = if t + len >= t_end * (1.0 - 1e-12) { t_end } else { t + len };
                let slab = Slab::new(t, t1, self.params.dt_max)?;
                let v0 = vec![VectorField::zeros(self.grid); slab.steps];
                match self.picard_into(&rho, slab, v0, &mut rec) {
                    Ok((_, next)) => {
                        rho = next;
                        t = t1;
                        break;
                    }
                    Err(e @ (Error::NoContraction { .. } | Error::FixedPointCap { .. })) => {
                        halvings += 1;
                        if halvings > MAX_HALVINGS {
                            return Err(Error::SlabCollapse { t, slab: len });
                        }
                        log::warn!("{e}; halving slab at t = {t} to {}", 0.5 * len);
                        len *= 0.5;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.finish(rec, t_end, rho)
    }

    /// Semi-implicit stepping: Stokes solve from the current density, then one transport step with it.
    pub fn direct_march(&self, rho0: &ScalarField, t_end: f64) -> Result<Trajectory> {
        self.check_start(rho0)?;
        if !(t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!("t_end = {t_end}")));
        }
        let mut rec = Recorder::new(rho0, &self.params, self.store_every);
        let mut rho = rho0.clone();
        let mut t = 0.0;
        while t < t_end {
            let u = self.stokes_velocity(&rho, t)?;
            let v = mollify_vector(&u, &self.kernel);
            let dt = cfl_dt(&v, &self.params).min(t_end - t);
            let (next, inc) = continuity_step(&rho, &v, dt, &self.params)?;
            self.record(&mut rec, StepInput { t, dt, rho: &rho, u: &u, advecting: &v, next: &next, inc: &inc })?;
            rho = next;
            t = if t_end - (t + dt) <= 1e-12 * t_end { t_end } else { t + dt };
        }
        self.finish(rec, t_end, rho)
    }
}
