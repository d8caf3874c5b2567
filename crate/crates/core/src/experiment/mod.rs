//! Scenario construction, the run/sweep/defect studies, and their artifacts.

mod config;

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{parse_config, parse_config_str, ForcingSpec, InitialSpec, Method, RunConfig, ViscositySpec, CONFIG_KEYS};

use crate::coupled::{CoupledSolver, Forcing, Trajectory};
use crate::diagnostics::{
    defect_inequality_audit, diagnostics_rows, energy_audit, format_value, pressure_l2_audit, viscous_work, write_csv,
    DefectAudit, DefectParams, DiagnosticsRow,
};
use crate::error::{Error, Result};
use crate::grid::{read_snapshot, sym_grad, write_snapshot, GridSpec, ScalarField};
use crate::viscosity::{
    audit_hypotheses, random_smooth_velocity, CoefficientField, HypothesisReport, Rank4, ViscosityTensor, ZERO4,
};

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Audit {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

impl fmt::Display for Audit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn all_passed(audits: &[Audit]) -> bool {
    audits.iter().all(|a| a.pass)
}

pub fn build_grid(cfg: &RunConfig) -> Result<GridSpec> {
    GridSpec::with_length(cfg.dim, cfg.n, cfg.length)
}

pub fn build_viscosity(spec: &ViscositySpec, grid: &GridSpec) -> Result<ViscosityTensor> {
    let dim = grid.dim();
    match spec {
        ViscositySpec::Diag { nu: None } => ViscosityTensor::diag(&vec![1.0; dim]),
        ViscositySpec::Diag { nu: Some(nu) } => {
            if nu.len() != dim {
                return Err(Error::DimensionMismatch(format!("{} viscosities for a {dim}-dimensional grid", nu.len())));
            }
            ViscosityTensor::diag(nu)
        }
        ViscositySpec::Isotropic { mu } => ViscosityTensor::isotropic(dim, *mu),
        ViscositySpec::Constant { entries } => ViscosityTensor::from_entries(dim, entries),
        ViscositySpec::Modulated { mu, modulation } => ViscosityTensor::modulated_isotropic(grid, *mu, *modulation),
        ViscositySpec::Files { dir } => {
            let mut cells: Vec<Rank4> = vec![ZERO4; grid.len()];
            let mut found = 0;
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        for l in 0..dim {
                            let path = dir.join(format!("A{}{}{}{}.asf", i + 1, j + 1, k + 1, l + 1));
                            if !path.exists() {
                                continue;
                            }
                            let field = read_snapshot(&path)?.into_field(grid)?;
                            for (cell, v) in field.data().iter().enumerate() {
                                cells[cell][i][j][k][l] = *v;
                            }
                            found += 1;
                        }
                    }
                }
            }
            if found == 0 {
                return Err(Error::InvalidParameter(format!("no A<i><j><k><l>.asf files in {}", dir.display())));
            }
            ViscosityTensor::varying(vec![(0.0, CoefficientField::new(*grid, cells)?)])
        }
    }
}

fn evaluate(spec: &InitialSpec, grid: &GridSpec) -> Result<ScalarField> {
    let scale = |axis: usize| std::f64::consts::TAU / grid.length(axis);
    Ok(match spec {
        InitialSpec::Constant { value } => ScalarField::constant(*grid, *value),
        InitialSpec::Cosine { value, amplitude, mode, axis } => {
            let a = axis - 1;
            let k = mode * scale(a);
            ScalarField::from_fn(*grid, |x| value * (1.0 + amplitude * (k * x[a]).cos()))
        }
        InitialSpec::Bump { value, amplitude, width } => {
            let centre: Vec<f64> = (0..3).map(|a| 0.5 * grid.length(a.min(grid.dim() - 1))).collect();
            let dim = grid.dim();
            ScalarField::from_fn(*grid, |x| {
                let r2: f64 = (0..dim)
                    .map(|a| {
                        let len = grid.length(a);
                        let d = (x[a] - centre[a]).rem_euclid(len);
                        let d = d.min(len - d);
                        d * d
                    })
                    .sum();
                value + amplitude * (-r2 / (2.0 * width * width)).exp()
            })
        }
        InitialSpec::Oscillatory { wavelength, amplitude, base } => {
            let cells = wavelength / grid.h();
            if cells < 4.0 - 1e-9 {
                return Err(Error::UnresolvedWavelength { wavelength: *wavelength, cells });
            }
            let b = evaluate(base, grid)?;
            let k = std::f64::consts::TAU / wavelength;
            let osc = ScalarField::from_fn(*grid, |x| 1.0 + amplitude * (k * x[0]).sin());
            b.zip_map(&osc, |p, q| p * q)
        }
        InitialSpec::File { path } => read_snapshot(path)?.into_field(grid)?,
    })
}

/// Nonnegative initial density; negative samples are clipped to zero.
pub fn make_initial(spec: &InitialSpec, grid: &GridSpec) -> Result<ScalarField> {
    let mut rho = evaluate(spec, grid)?;
    if !rho.is_finite() {
        return Err(Error::InvalidParameter("non-finite initial density".into()));
    }
    let mut clipped = 0usize;
    for v in rho.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clipped += 1;
        }
    }
    if clipped > 0 {
        log::info!("clipped {clipped} negative initial density samples to zero");
    }
    Ok(rho)
}

pub fn build_forcing(spec: &ForcingSpec, grid: &GridSpec) -> Result<Forcing> {
    Ok(match spec {
        ForcingSpec::Zero => Forcing::Zero,
        ForcingSpec::Cosine { amplitude, mode } => {
            let k = mode * std::f64::consts::TAU / grid.length(0);
            Forcing::Static(ScalarField::from_fn(*grid, |x| amplitude * (k * x[0]).cos()))
        }
        ForcingSpec::File { path } => Forcing::Static(read_snapshot(path)?.into_field(grid)?),
    })
}

pub fn build_solver(cfg: &RunConfig) -> Result<CoupledSolver> {
    let grid = build_grid(cfg)?;
    let a = build_viscosity(&cfg.viscosity, &grid)?;
    let forcing = build_forcing(&cfg.forcing, &grid)?;
    Ok(CoupledSolver::new(a, forcing, cfg.params, grid)?.with_store_every(cfg.store_every))
}

/// Integrate the configured scenario up to `run.t_end`.
pub fn simulate(cfg: &RunConfig) -> Result<Trajectory> {
    let solver = build_solver(cfg)?;
    let rho0 = make_initial(&cfg.initial, solver.grid())?;
    let picard = match cfg.method {
        Method::Auto => cfg.params.delta > 0.0,
        Method::Picard => true,
        Method::Direct => false,
    };
    if picard {
        solver.march(&rho0, cfg.t_end, cfg.slab)
    } else {
        solver.direct_march(&rho0, cfg.t_end)
    }
}

fn defect_params(cfg: &RunConfig, window: usize) -> Result<DefectParams> {
    DefectParams::new(window, cfg.h_reg)
}

/// Audits every run is held to.
pub fn run_audits(cfg: &RunConfig, traj: &Trajectory) -> Result<Vec<Audit>> {
    let mut audits = Vec::new();
    let mass = traj.mass_defect();
    audits.push(Audit::new("mass identity", mass <= 1e-10, format!("max relative defect {mass:.3e}")));
    let rho_min = traj
        .states
        .iter()
        .map(|s| s.rho.min())
        .chain(traj.steps.iter().map(|s| s.rho_min_after))
        .fold(f64::INFINITY, f64::min);
    audits.push(Audit::new("positivity", rho_min >= 0.0, format!("min density {rho_min:.6e}")));
    if cfg.params.eta == 0.0 {
        let worst = traj.steps.iter().map(|s| s.max_principle_ratio()).fold(0.0, f64::max);
        audits.push(Audit::new("maximum principle", worst <= 1.0, format!("worst max-growth ratio {worst:.6}")));
    }
    let slack = energy_audit(traj);
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = -cfg.energy_tol * traj.initial_energy;
    audits.push(Audit::new(
        "energy inequality",
        min_slack >= floor,
        format!("min slack {min_slack:.6e} (floor {floor:.6e})"),
    ));
    for &w in &cfg.windows {
        let d = defect_inequality_audit(traj, traj.gamma, &defect_params(cfg, w)?)?;
        audits.push(Audit::new(
            format!("defect inequality, window {w}"),
            d.pass,
            format!("lhs {:.6e} <= rhs {:.6e}", d.lhs, d.rhs),
        ));
    }
    let factors = traj.contraction_factors();
    if !factors.is_empty() {
        let worst = factors.iter().copied().fold(0.0, f64::max);
        audits.push(Audit::new("picard contraction", worst < 1.0, format!("largest slab contraction factor {worst:.6}")));
    }
    Ok(audits)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_rows(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

fn write_table(path: &Path, header: &str, lines: &[String]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_audits(path: &Path, audits: &[Audit]) -> Result<()> {
    let lines: Vec<String> = audits.iter().map(|a| a.to_string()).collect();
    fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub rows: Vec<DiagnosticsRow>,
    pub audits: Vec<Audit>,
}

/// Run the scenario; with `out`, write `diagnostics.csv`, `audits.txt` and snapshots.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let trajectory = simulate(cfg)?;
    let window = cfg.windows.first().copied().unwrap_or(1);
    let rows = diagnostics_rows(&trajectory, &defect_params(cfg, window)?, cfg.commutator_delta)?;
    let audits = run_audits(cfg, &trajectory)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_rows(&dir.join("diagnostics.csv"), &rows)?;
        write_audits(&dir.join("audits.txt"), &audits)?;
        if cfg.snapshots {
            let snaps = dir.join("snapshots");
            create_dir(&snaps)?;
            for (i, s) in trajectory.states.iter().enumerate() {
                write_snapshot(&snaps.join(format!("rho_{i:05}.asf")), &s.rho, s.t)?;
                for (a, c) in s.u.components().iter().enumerate() {
                    write_snapshot(&snaps.join(format!("u{}_{i:05}.asf", a + 1)), c, s.t)?;
                }
            }
        }
    }
    Ok(RunOutcome { trajectory, rows, audits })
}

fn l2_distance(a: &ScalarField, b: &ScalarField) -> f64 {
    a.zip_map(b, |x, y| x - y).l2_norm()
}

#[derive(Debug, Clone)]
pub struct SweepDeltaOutcome {
    pub deltas: Vec<f64>,
    /// `‖ρ_{δ_i}(T) − ρ_{δ_{i+1}}(T)‖₂`.
    pub gaps: Vec<f64>,
    /// `gaps[i + 1] / gaps[i]`.
    pub ratios: Vec<f64>,
    /// `‖ρ_{δ_i}(T) − ρ_direct(T)‖₂` per level.
    pub to_direct: Vec<f64>,
    pub audits: Vec<Audit>,
}

/// δ → 0 study: Picard marches at each `sweep.deltas` level against the unmollified direct march.
pub fn sweep_delta(cfg: &RunConfig, out: Option<&Path>) -> Result<SweepDeltaOutcome> {
    let deltas = cfg.deltas.clone();
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("sweep.deltas is empty".into()));
    }
    let mut jobs: Vec<(Option<f64>, RunConfig)> = deltas
        .iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.params.delta = d;
            c.method = Method::Picard;
            (Some(d), c)
        })
        .collect();
    let mut direct = cfg.clone();
    direct.params.delta = 0.0;
    direct.method = Method::Direct;
    jobs.push((None, direct));
    let trajectories: Vec<Trajectory> = jobs.par_iter().map(|(_, c)| simulate(c)).collect::<Result<_>>()?;
    let finals: Vec<&ScalarField> = trajectories.iter().map(|t| &t.last().rho).collect();
    let direct_final = finals[deltas.len()];
    let gaps: Vec<f64> = (0..deltas.len() - 1).map(|i| l2_distance(finals[i], finals[i + 1])).collect();
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[1] / w[0]).collect();
    let to_direct: Vec<f64> = (0..deltas.len()).map(|i| l2_distance(finals[i], direct_final)).collect();
    let mut audits = Vec::new();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    audits.push(Audit::new("successive delta gaps contract", ratios.iter().all(|r| *r <= 0.7), format!("largest ratio {worst:.4}")));
    if let (Some(&last_gap), Some(&finest)) = (gaps.last(), to_direct.last()) {
        audits.push(Audit::new(
            "finest level near direct march",
            finest <= 2.0 * last_gap,
            format!("{finest:.6e} vs last gap {last_gap:.6e}"),
        ));
    }
    for (i, t) in trajectories.iter().enumerate() {
        let m = t.mass_defect();
        let label = jobs[i].0.map_or("direct".to_string(), |d| format!("delta {d}"));
        audits.push(Audit::new(format!("mass identity, {label}"), m <= 1e-10, format!("{m:.3e}")));
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let lines: Vec<String> = deltas
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let gap = gaps.get(i).copied().unwrap_or(f64::NAN);
                let ratio = if i >= 1 { ratios.get(i - 1).copied().unwrap_or(f64::NAN) } else { f64::NAN };
                [*d, gap, ratio, to_direct[i]].map(format_value).join(",")
            })
            .collect();
        write_table(&dir.join("sweep_delta.csv"), "delta,l2_to_next,ratio,l2_to_direct", &lines)?;
        write_audits(&dir.join("audits.txt"), &audits)?;
    }
    Ok(SweepDeltaOutcome { deltas, gaps, ratios, to_direct, audits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsLevel {
    pub level: f64,
    pub mass_defect: f64,
    pub min_energy_slack: f64,
    pub pgamma_l2: f64,
    /// `‖ρ^γ‖_{L²} / ∫ρ₀^γ`.
    pub c_gamma: f64,
}

#[derive(Debug, Clone)]
pub struct SweepEpsOutcome {
    pub levels: Vec<EpsLevel>,
    /// Whether `c_gamma` is monotone across the levels (reported, not audited).
    pub monotone: bool,
    pub audits: Vec<Audit>,
}

/// ε = η → 0 study over `sweep.levels`.
pub fn sweep_eps_eta(cfg: &RunConfig, out: Option<&Path>) -> Result<SweepEpsOutcome> {
    if cfg.levels.is_empty() {
        return Err(Error::InvalidParameter("sweep.levels is empty".into()));
    }
    let runs: Vec<(EpsLevel, Trajectory)> = cfg
        .levels
        .par_iter()
        .map(|&level| {
            let mut c = cfg.clone();
            c.params.eps = level;
            c.params.eta = level;
            let traj = simulate(&c)?;
            let min_energy_slack = energy_audit(&traj).into_iter().fold(f64::INFINITY, f64::min);
            let pgamma_l2 = pressure_l2_audit(&traj);
            let row = EpsLevel {
                level,
                mass_defect: traj.mass_defect(),
                min_energy_slack,
                pgamma_l2,
                c_gamma: pgamma_l2 / traj.initial_energy,
            };
            Ok((row, traj))
        })
        .collect::<Result<_>>()?;
    let levels: Vec<EpsLevel> = runs.iter().map(|r| r.0).collect();
    let (lo, hi) = levels.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), l| (lo.min(l.pgamma_l2), hi.max(l.pgamma_l2)));
    let mut audits = vec![Audit::new(
        "pressure L2 uniform across levels",
        lo.is_finite() && hi.is_finite() && hi <= 2.0 * lo,
        format!("range [{lo:.6e}, {hi:.6e}]"),
    )];
    for (l, traj) in &runs {
        audits.push(Audit::new(format!("mass identity, level {}", l.level), l.mass_defect <= 1e-10, format!("{:.3e}", l.mass_defect)));
        let floor = -cfg.energy_tol * traj.initial_energy;
        audits.push(Audit::new(
            format!("energy inequality, level {}", l.level),
            l.min_energy_slack >= floor,
            format!("min slack {:.6e} (floor {floor:.6e})", l.min_energy_slack),
        ));
    }
    let c: Vec<f64> = levels.iter().map(|l| l.c_gamma).collect();
    let monotone = c.windows(2).all(|w| w[1] >= w[0]) || c.windows(2).all(|w| w[1] <= w[0]);
    if let Some(dir) = out {
        create_dir(dir)?;
        let lines: Vec<String> = levels
            .iter()
            .map(|l| [l.level, l.mass_defect, l.min_energy_slack, l.pgamma_l2, l.c_gamma].map(format_value).join(","))
            .collect();
        write_table(&dir.join("sweep_eps.csv"), "level,mass_defect,min_energy_slack,pgamma_l2,c_gamma", &lines)?;
        write_audits(&dir.join("audits.txt"), &audits)?;
    }
    Ok(SweepEpsOutcome { levels, monotone, audits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefectStudyRow {
    pub ratio: f64,
    pub window: usize,
    pub audit: DefectAudit,
}

#[derive(Debug, Clone)]
pub struct DefectStudyOutcome {
    pub rows: Vec<DefectStudyRow>,
    pub audits: Vec<Audit>,
}

pub const DEFECT_STUDY_HEADER: &str = "ratio,window,lhs,rhs,initial,correction,pass";

impl DefectStudyOutcome {
    pub fn csv_lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    format_value(r.ratio),
                    r.window,
                    format_value(r.audit.lhs),
                    format_value(r.audit.rhs),
                    format_value(r.audit.initial),
                    format_value(r.audit.correction),
                    r.audit.pass
                )
            })
            .collect()
    }
}

/// Anisotropy sweep: the last-axis viscosity is multiplied by each of `defect.ratios`.
pub fn defect_study(cfg: &RunConfig, out: Option<&Path>) -> Result<DefectStudyOutcome> {
    let base = match &cfg.viscosity {
        ViscositySpec::Diag { nu } => nu.clone().unwrap_or_else(|| vec![1.0; cfg.dim]),
        _ => return Err(Error::InvalidParameter("the defect study scales a diagonal viscosity (viscosity.kind = diag)".into())),
    };
    let trajectories: Vec<Trajectory> = cfg
        .ratios
        .par_iter()
        .map(|&r| {
            let mut c = cfg.clone();
            let mut nu = base.clone();
            *nu.last_mut().expect("at least one axis") *= r;
            c.viscosity = ViscositySpec::Diag { nu: Some(nu) };
            simulate(&c)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut audits = Vec::new();
    for (traj, &ratio) in trajectories.iter().zip(&cfg.ratios) {
        let m = traj.mass_defect();
        audits.push(Audit::new(format!("mass identity, ratio {ratio}"), m <= 1e-10, format!("{m:.3e}")));
        for &window in &cfg.windows {
            let audit = defect_inequality_audit(traj, traj.gamma, &defect_params(cfg, window)?)?;
            audits.push(Audit::new(
                format!("defect inequality, ratio {ratio}, window {window}"),
                audit.pass,
                format!("lhs {:.6e} <= rhs {:.6e}", audit.lhs, audit.rhs),
            ));
            rows.push(DefectStudyRow { ratio, window, audit });
        }
    }
    let outcome = DefectStudyOutcome { rows, audits };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_table(&dir.join("defect_study.csv"), DEFECT_STUDY_HEADER, &outcome.csv_lines())?;
        write_audits(&dir.join("audits.txt"), &outcome.audits)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub report: HypothesisReport,
    /// `min ∫τ:∇u / (c_est ‖D(u)‖²)` over the samples.
    pub min_work_ratio: f64,
    pub audits: Vec<Audit>,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.report)?;
        writeln!(f, "min work / (c_est |D(u)|^2) over samples: {:.9}", self.min_work_ratio)?;
        for a in &self.audits {
            writeln!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Hypothesis audit of the configured tensor on seeded random velocity fields.
pub fn check_tensor(cfg: &RunConfig) -> Result<CheckOutcome> {
    let grid = build_grid(cfg)?;
    let a = build_viscosity(&cfg.viscosity, &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<_> = (0..cfg.check_samples.max(1)).map(|_| random_smooth_velocity(&grid, &mut rng, 3)).collect();
    let report = audit_hypotheses(&a, 0.0, &samples)?;
    let c = report.coercivity.c_est;
    let mut min_ratio = f64::INFINITY;
    for u in &samples {
        let d = sym_grad(u);
        let dd = d.contract(&d).integral();
        let work = viscous_work(&a, 0.0, u)?.total;
        if dd > 0.0 && c > 0.0 {
            min_ratio = min_ratio.min(work / (c * dd));
        }
    }
    let mut audits = vec![
        Audit::new("H1 symmetric stress", report.h1_residual <= 1e-12, format!("max residual {:.3e}", report.h1_residual)),
        Audit::new("H3 coercivity", report.coercivity.passed, format!("c_est {:.9}", report.coercivity.c_est)),
        Audit::new("H3 on samples", min_ratio >= 1.0 - 1e-6, format!("min work ratio {min_ratio:.9}")),
    ];
    if let Some(h4) = &report.h4 {
        audits.push(Audit::new("H4 invertible symbol", h4.symbol_invertible, format!("sample norm {:.6e}", h4.sample_norm)));
    }
    Ok(CheckOutcome { report, min_work_ratio: min_ratio, audits })
}
