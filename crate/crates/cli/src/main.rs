use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use aniso_stokes::experiment::{self, all_passed, Audit, RunConfig, CONFIG_KEYS};

const AFTER_HELP: &str = "\
Config files hold `key = value` lines; `#` starts a comment and unknown keys are errors.
Relative paths are resolved against the config file's directory.
Keys and defaults:
";

#[derive(Parser)]
#[command(name = "aniso-stokes", version, about = "Quasi-stationary compressible Stokes flow with anisotropic viscosity")]
#[command(after_help = format!("{AFTER_HELP}{CONFIG_KEYS}"))]
struct Cli {
    /// Log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and write diagnostics.csv, audits.txt and snapshots
    Run(Common),
    /// Mollification sweep over sweep.deltas against the direct march
    SweepDelta(Common),
    /// Regularization sweep over sweep.levels with eps = eta
    SweepEps(Common),
    /// Defect inequality over defect.ratios and defect.windows
    DefectStudy(Common),
    /// Audit the configured viscosity tensor on random velocity fields
    CheckTensor(Common),
}

#[derive(Args)]
struct Common {
    /// Config file
    config: PathBuf,
    /// Exit with status 2 when any audit fails
    #[arg(long)]
    strict: bool,
    /// Output directory (overrides run.out)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(RunConfig, PathBuf)> {
        let cfg = experiment::parse_config(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        let out = self.out.clone().unwrap_or_else(|| cfg.out.clone());
        Ok((cfg, out))
    }
}

fn report(audits: &[Audit]) -> bool {
    for a in audits {
        println!("{a}");
    }
    all_passed(audits)
}

fn execute(command: &Command) -> anyhow::Result<(bool, bool)> {
    let (common, passed) = match command {
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            let o = experiment::run(&cfg, Some(&out))?;
            let last = o.rows.last().expect("at least one row");
            println!("t = {}, mass = {:.12e}, energy slack = {:.6e}", last.t, last.mass, last.energy_slack);
            println!("wrote {}", out.join("diagnostics.csv").display());
            (c, report(&o.audits))
        }
        Command::SweepDelta(c) => {
            let (cfg, out) = c.load()?;
            let o = experiment::sweep_delta(&cfg, Some(&out))?;
            for (i, d) in o.deltas.iter().enumerate() {
                let gap = o.gaps.get(i).map_or(String::from("-"), |g| format!("{g:.6e}"));
                println!("delta {d}: gap to next {gap}, distance to direct {:.6e}", o.to_direct[i]);
            }
            (c, report(&o.audits))
        }
        Command::SweepEps(c) => {
            let (cfg, out) = c.load()?;
            let o = experiment::sweep_eps_eta(&cfg, Some(&out))?;
            for l in &o.levels {
                println!("level {}: |rho^gamma|_L2 = {:.6e}, C_gamma = {:.6e}", l.level, l.pgamma_l2, l.c_gamma);
            }
            println!("C_gamma monotone across levels: {}", o.monotone);
            (c, report(&o.audits))
        }
        Command::DefectStudy(c) => {
            let (cfg, out) = c.load()?;
            let o = experiment::defect_study(&cfg, Some(&out))?;
            println!("wrote {}", out.join("defect_study.csv").display());
            (c, report(&o.audits))
        }
        Command::CheckTensor(c) => {
            let (cfg, out) = c.load()?;
            let o = experiment::check_tensor(&cfg)?;
            print!("{}", o.report);
            println!("min work / (c_est |D(u)|^2): {:.9}", o.min_work_ratio);
            if c.out.is_some() {
                write_text(&out, "check_tensor.txt", &o.to_string())?;
            }
            (c, report(&o.audits))
        }
    };
    Ok((passed, common.strict))
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli.command) {
        Ok((true, _)) | Ok((false, false)) => ExitCode::SUCCESS,
        Ok((false, true)) => {
            eprintln!("audit failure");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
