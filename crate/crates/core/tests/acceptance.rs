//! Acceptance suite: one line per criterion, nonzero exit status on any failure.
//!
//! Runs the shipped configs under `configs/`; expect a few minutes in release-like test builds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aniso_stokes::diagnostics::commutator_audit;
use aniso_stokes::experiment::{self, Audit, RunConfig, ViscositySpec};
use aniso_stokes::grid::read_snapshot;
use aniso_stokes::viscosity::{diag_block, random_smooth_velocity};
use aniso_stokes::{
    CoupledSolver, Forcing, GridSpec, ScalarField, Slab, SolverParams, StokesOperator, Trajectory, VectorField, ViscosityTensor,
};

type Outcome = Result<(bool, String), String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Result<RunConfig, String> {
    experiment::parse_config(&configs().join(name)).map_err(|e| format!("{name}: {e}"))
}

fn failures(audits: &[Audit], filter: impl Fn(&Audit) -> bool) -> Vec<String> {
    audits.iter().filter(|a| filter(a) && !a.pass).map(|a| a.to_string()).collect()
}

fn max_diff(a: &VectorField, b: &VectorField) -> f64 {
    a.zip_map(b, |x, y| (x - y).abs()).components().iter().map(|c| c.max()).fold(0.0, f64::max)
}

fn min_slack(traj: &Trajectory) -> f64 {
    aniso_stokes::diagnostics::energy_audit(traj).into_iter().fold(f64::INFINITY, f64::min)
}

/// Results shared between criteria so each scenario runs once.
struct Runs {
    canonical: experiment::RunOutcome,
    max_principle: experiment::RunOutcome,
    modulated: experiment::RunOutcome,
    sweep_delta: experiment::SweepDeltaOutcome,
    sweep_eps: experiment::SweepEpsOutcome,
    defect: experiment::DefectStudyOutcome,
}

impl Runs {
    fn new() -> Result<Self, String> {
        let e = |e: aniso_stokes::Error| e.to_string();
        Ok(Self {
            canonical: experiment::run(&load("canonical.conf")?, None).map_err(e)?,
            max_principle: experiment::run(&load("max_principle.conf")?, None).map_err(e)?,
            modulated: experiment::run(&load("modulated.conf")?, None).map_err(e)?,
            sweep_delta: experiment::sweep_delta(&load("sweep_delta.conf")?, None).map_err(e)?,
            sweep_eps: experiment::sweep_eps_eta(&load("sweep_eps.conf")?, None).map_err(e)?,
            defect: experiment::defect_study(&load("defect_study.conf")?, None).map_err(e)?,
        })
    }

    fn run_audits(&self) -> impl Iterator<Item = &Audit> {
        [&self.canonical, &self.max_principle, &self.modulated].into_iter().flat_map(|r| r.audits.iter())
    }

    fn all_audits(&self) -> Vec<Audit> {
        self.run_audits()
            .chain(&self.sweep_delta.audits)
            .chain(&self.sweep_eps.audits)
            .chain(&self.defect.audits)
            .cloned()
            .collect()
    }
}

fn mass_identity(runs: &Runs) -> Outcome {
    let audits = runs.all_audits();
    let checked = audits.iter().filter(|a| a.name.starts_with("mass identity")).count();
    let bad = failures(&audits, |a| a.name.starts_with("mass identity"));
    let worst = [&runs.canonical, &runs.max_principle, &runs.modulated]
        .iter()
        .map(|r| r.trajectory.mass_defect())
        .fold(0.0, f64::max);
    Ok((checked >= 14 && bad.is_empty(), format!("{checked} trajectories, worst single-run defect {worst:.2e} {}", bad.join("; "))))
}

fn positivity(runs: &Runs) -> Outcome {
    let min = [&runs.canonical, &runs.max_principle, &runs.modulated]
        .iter()
        .flat_map(|r| r.trajectory.steps.iter().map(|s| s.rho_min_after))
        .fold(f64::INFINITY, f64::min);
    let bad = failures(&runs.all_audits(), |a| a.name == "positivity" || a.name == "maximum principle");
    let mp = runs.max_principle.trajectory.steps.iter().map(|s| s.max_principle_ratio()).fold(0.0, f64::max);
    let checked = runs.max_principle.audits.iter().any(|a| a.name == "maximum principle");
    Ok((checked && bad.is_empty() && min >= 0.0, format!("min rho {min:.4e}, worst max-principle ratio {mp:.6} (eta = 0)")))
}

fn energy(runs: &Runs) -> Outcome {
    let mut cfg = load("canonical.conf")?;
    let coarse = &runs.canonical.trajectory;
    cfg.params.dt_max /= 2.0;
    let fine = experiment::simulate(&cfg).map_err(|e| e.to_string())?;
    let (a, b) = (min_slack(coarse), min_slack(&fine));
    let floor = -1e-2 * coarse.initial_energy;
    let reduction = a.abs() / b.abs().max(f64::MIN_POSITIVE);
    Ok((
        a >= floor && reduction >= 1.5,
        format!("min slack {a:.4e} (floor {floor:.4e}); halved dt {b:.4e}, reduction {reduction:.2}x"),
    ))
}

fn coercivity() -> Outcome {
    let mut tensors = Vec::new();
    for name in ["canonical.conf", "max_principle.conf", "modulated.conf", "check_tensor.conf"] {
        tensors.push((name.to_string(), load(name)?));
    }
    let defect = load("defect_study.conf")?;
    for r in &defect.ratios {
        let mut c = defect.clone();
        c.viscosity = ViscositySpec::Diag { nu: Some(vec![1.0, *r]) };
        tensors.push((format!("defect ratio {r}"), c));
    }
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, mut cfg) in tensors {
        cfg.check_samples = 20;
        let out = experiment::check_tensor(&cfg).map_err(|e| format!("{name}: {e}"))?;
        let h1 = out.report.h1_residual <= 1e-12;
        let ok = h1 && out.report.coercivity.passed && out.min_work_ratio >= 1.0 - 1e-6;
        pass &= ok;
        lines.push(format!("{name}: H1 {:.1e}, work ratio {:.4}", out.report.h1_residual, out.min_work_ratio));
    }
    Ok((pass, lines.join("; ")))
}

fn stokes_oracle() -> Outcome {
    let e = |e: aniso_stokes::Error| e.to_string();
    let grid = GridSpec::cubic(3, 16).map_err(e)?;
    let nu = [1.0, 1.0, 4.0];
    let op = StokesOperator::build(&ViscosityTensor::diag(&nu).map_err(e)?, &grid, 0.0).map_err(e)?;
    let mut closed: f64 = 0.0;
    for axis in 0..3 {
        // ν_a ∂²u_a = ∂_a q with q = −cos(2x_a)  ⇒  u_a = sin(2x_a) / (2ν_a)
        let q = ScalarField::from_fn(grid, |x| -(2.0 * x[axis]).cos());
        let exact = VectorField::from_fn(grid, |x| {
            let mut v = [0.0; 3];
            v[axis] = (2.0 * x[axis]).sin() / (2.0 * nu[axis]);
            v
        });
        closed = closed.max(max_diff(&op.solve(&q).map_err(e)?, &exact));
    }
    let g2 = GridSpec::cubic(2, 32).map_err(e)?;
    let varying = StokesOperator::build(&ViscosityTensor::modulated_isotropic(&g2, 1.0, 0.5).map_err(e)?, &g2, 0.0).map_err(e)?;
    let exact = VectorField::from_fn(g2, |x| [x[1].sin() + 0.3 * (x[0] + x[1]).cos(), 0.5 * (2.0 * x[0]).sin(), 0.0]);
    let b = varying.apply(&exact);
    let u = varying.solve_vector(&b).map_err(e)?;
    let residual = varying.apply(&u).zip_map(&b, |x, y| x - y).l2_norm() / b.l2_norm();
    let rel_err = u.zip_map(&exact, |x, y| x - y).l2_norm() / exact.l2_norm();
    let q = ScalarField::from_fn(grid, |x| (x[0] + x[1]).cos() * (2.0 * x[2]).sin() + x[1].sin());
    let full = StokesOperator::build(&ViscosityTensor::constant(3, diag_block(&nu)).map_err(e)?, &grid, 0.0).map_err(e)?;
    let gap = max_diff(&op.solve(&q).map_err(e)?, &full.solve(&q).map_err(e)?);
    Ok((
        closed <= 1e-10 && residual <= 1e-8 && gap <= 1e-10,
        format!("closed form {closed:.1e}, manufactured residual {residual:.1e} (error {rel_err:.1e}), full vs diagonal {gap:.1e}"),
    ))
}

fn fixed_point() -> Outcome {
    let e = |e: aniso_stokes::Error| e.to_string();
    let grid = GridSpec::cubic(3, 16).map_err(e)?;
    let params = SolverParams { gamma: 2.0, eps: 0.01, eta: 0.01, delta: 0.2, dt_max: 0.01, ..SolverParams::default() };
    let solver = CoupledSolver::new(ViscosityTensor::diag(&[1.0, 1.0, 4.0]).map_err(e)?, Forcing::Zero, params, grid).map_err(e)?;
    let rho0 = ScalarField::from_fn(grid, |x| 1.0 + 0.2 * x[0].cos());
    let slab = Slab::new(0.0, 0.05, params.dt_max).map_err(e)?;
    let full = solver.picard_solve(&rho0, slab).map_err(e)?;
    let half = solver.picard_solve(&rho0, Slab::new(0.0, 0.025, params.dt_max).map_err(e)?).map_err(e)?;
    let (f, h) = (full.contraction_factor().unwrap_or(0.0), half.contraction_factor().unwrap_or(0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start: Vec<VectorField> =
        (0..full.slab.steps).map(|_| random_smooth_velocity(&grid, &mut rng, 2).scale(0.05)).collect();
    let other = solver.picard_solve_from(&rho0, full.slab, start).map_err(e)?;
    let diff: Vec<VectorField> = full.velocity.iter().zip(&other.velocity).map(|(a, b)| a.zip_map(b, |p, q| p - q)).collect();
    let gap = CoupledSolver::slab_gradient_norm(&diff, full.slab.dt());
    Ok((
        full.iterations <= 20 && f < 1.0 && h < f && gap <= 10.0 * params.fp_tol,
        format!(
            "{} iterations, contraction factor {f:.4} (half slab {h:.4}), terminal {:.2e}, start gap {gap:.2e}",
            full.iterations,
            full.terminal_factor().unwrap_or(0.0)
        ),
    ))
}

fn delta_limit(runs: &Runs) -> Outcome {
    let s = &runs.sweep_delta;
    let ratios: Vec<String> = s.ratios.iter().map(|r| format!("{r:.3}")).collect();
    let last = s.gaps.last().copied().unwrap_or(f64::NAN);
    let finest = s.to_direct.last().copied().unwrap_or(f64::NAN);
    let pass = s.ratios.iter().all(|r| *r <= 0.7) && finest <= 2.0 * last && s.gaps.len() == 3;
    Ok((pass, format!("gap ratios [{}], finest to direct {finest:.3e} vs last gap {last:.3e}", ratios.join(", "))))
}

fn pressure_bound(runs: &Runs) -> Outcome {
    let l: Vec<f64> = runs.sweep_eps.levels.iter().map(|l| l.pgamma_l2).collect();
    let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = l.iter().copied().fold(0.0, f64::max);
    Ok((hi.is_finite() && lo > 0.0 && hi <= 2.0 * lo && l.len() == 3, format!("|rho^gamma|_L2 in [{lo:.4e}, {hi:.4e}]")))
}

fn defect_inequality(runs: &Runs) -> Outcome {
    let rows = &runs.defect.rows;
    let worst = rows.iter().map(|r| r.audit.lhs / r.audit.rhs).fold(0.0, f64::max);
    let covered = [1.0, 4.0, 16.0].iter().all(|ratio| {
        [4, 8].iter().all(|w| rows.iter().any(|r| r.ratio == *ratio && r.window == *w && r.audit.pass))
    });
    Ok((covered && rows.iter().all(|r| r.audit.pass), format!("{} rows, worst lhs/rhs {worst:.3}", rows.len())))
}

fn commutator(runs: &Runs) -> Outcome {
    let table = commutator_audit(&runs.canonical.trajectory, &[0.4, 0.2, 0.1]);
    let mut worst: f64 = 0.0;
    for (_, r) in &table.rows {
        worst = worst.max(r[1] / r[0]).max(r[2] / r[1]);
    }
    Ok((worst <= 0.6, format!("{} stored states, worst halving ratio {worst:.3}", table.rows.len())))
}

fn determinism() -> Outcome {
    let cfg = load("canonical.conf")?;
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        experiment::run(&cfg, Some(d.path())).map_err(|e| e.to_string())?;
    }
    let files = |d: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut out = vec![("diagnostics.csv".to_string(), fs::read(d.join("diagnostics.csv")).map_err(|e| e.to_string())?)];
        let mut snaps: Vec<_> = fs::read_dir(d.join("snapshots")).map_err(|e| e.to_string())?.flatten().map(|e| e.path()).collect();
        snaps.sort();
        for p in snaps {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(|e| e.to_string())?));
        }
        Ok(out)
    };
    let (a, b) = (files(dirs[0].path())?, files(dirs[1].path())?);
    read_snapshot(&dirs[0].path().join("snapshots/rho_00000.asf")).map_err(|e| e.to_string())?;
    Ok((a == b && a.len() > 1, format!("{} files compared byte for byte", a.len())))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = match Runs::new() {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL shipped scenarios did not run: {e}");
            return ExitCode::FAILURE;
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("mass identity", Box::new(|| mass_identity(&runs))),
        ("positivity and maximum principle", Box::new(|| positivity(&runs))),
        ("energy inequality", Box::new(|| energy(&runs))),
        ("coercivity and symmetric stress", Box::new(coercivity)),
        ("stokes oracles", Box::new(stokes_oracle)),
        ("picard fixed point", Box::new(fixed_point)),
        ("mollification limit", Box::new(|| delta_limit(&runs))),
        ("pressure L2 bound", Box::new(|| pressure_bound(&runs))),
        ("defect inequality", Box::new(|| defect_inequality(&runs))),
        ("commutator decay", Box::new(|| commutator(&runs))),
        ("determinism", Box::new(determinism)),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= pass;
        println!("{} criterion {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
