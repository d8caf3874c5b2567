//! `key = value` run configuration with dotted keys and `#` comments.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::transport::SolverParams;

/// Key reference printed by the command-line `--help`.
pub const CONFIG_KEYS: &str = "\
grid.dim = 2                    spatial dimension (1, 2 or 3)
grid.n = 128                    cells per axis
grid.length = 6.283185307179586 period per axis
params.gamma = 2                pressure exponent (> 1)
params.eps = 0.01               density diffusion
params.delta = 0.2              mollification radius
params.eta = 0.01               drag coefficient
transport.cfl = 0.45
transport.dt_max = 0.01
transport.order = 1             1 upwind, 2 minmod-limited
stokes.rtol = 1e-8
stokes.max_iter = 500
viscosity.kind = diag           diag | isotropic | constant | varying
viscosity.nu = 1,1,...          diag: one positive value per axis
viscosity.mu = 1                isotropic and varying: tau = 2 mu D(u)
viscosity.entries = ...         constant: dim^4 entries A_ijkl, row-major
viscosity.modulation = 0.5      varying: mu (1 + modulation sin x1)
viscosity.dir =                 varying: directory of A<i><j><k><l>.asf files
initial.kind = cosine           constant | cosine | bump | oscillatory | file
initial.value = 1               base level
initial.amplitude = 0.2         cosine/bump amplitude, oscillation amplitude
initial.mode = 1                cosine wavenumber
initial.axis = 1                cosine axis
initial.width = 0.5             bump width
initial.wavelength = 0.39269908169872414   oscillatory wavelength along x1
initial.base = constant         oscillatory base: constant | cosine
initial.base_amplitude = 0.2
initial.base_mode = 1
initial.base_axis = 1
initial.file =                  snapshot for kind = file
forcing.kind = zero             zero | cosine | file
forcing.amplitude = 0.1
forcing.mode = 1
forcing.file =
run.t_end = 0.5
run.slab = 0.05
run.fp_tol = 1e-7
run.fp_max_iter = 30
run.method = auto               auto | picard | direct (auto: picard iff delta > 0)
run.store_every = 1             store every n-th step (the last state always)
run.snapshots = true
run.seed = 24301
run.out = out
audit.energy_tol = 0.01
sweep.deltas = 0.4,0.2,0.1,0.05
sweep.levels = 0.1,0.01,0.001
defect.windows = 4,8
defect.h_reg = 1e-8
defect.ratios = 1,4,16
defect.commutator_delta = 0.2
check.samples = 20";

#[derive(Debug, Clone, PartialEq)]
pub enum ViscositySpec {
    Diag { nu: Option<Vec<f64>> },
    Isotropic { mu: f64 },
    Constant { entries: Vec<f64> },
    Modulated { mu: f64, modulation: f64 },
    Files { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Constant { value: f64 },
    Cosine { value: f64, amplitude: f64, mode: f64, axis: usize },
    Bump { value: f64, amplitude: f64, width: f64 },
    Oscillatory { wavelength: f64, amplitude: f64, base: Box<InitialSpec> },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingSpec {
    Zero,
    Cosine { amplitude: f64, mode: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Auto,
    Picard,
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub params: SolverParams,
    pub viscosity: ViscositySpec,
    pub initial: InitialSpec,
    pub forcing: ForcingSpec,
    pub t_end: f64,
    pub slab: f64,
    pub method: Method,
    pub store_every: usize,
    pub snapshots: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub energy_tol: f64,
    pub deltas: Vec<f64>,
    pub levels: Vec<f64>,
    pub windows: Vec<usize>,
    pub h_reg: f64,
    pub ratios: Vec<f64>,
    pub commutator_delta: f64,
    pub check_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 128,
            length: TAU,
            params: SolverParams::default(),
            viscosity: ViscositySpec::Diag { nu: None },
            initial: InitialSpec::Cosine { value: 1.0, amplitude: 0.2, mode: 1.0, axis: 1 },
            forcing: ForcingSpec::Zero,
            t_end: 0.5,
            slab: 0.05,
            method: Method::Auto,
            store_every: 1,
            snapshots: true,
            seed: 24301,
            out: PathBuf::from("out"),
            energy_tol: 1e-2,
            deltas: vec![0.4, 0.2, 0.1, 0.05],
            levels: vec![0.1, 0.01, 0.001],
            windows: vec![4, 8],
            h_reg: 1e-8,
            ratios: vec![1.0, 4.0, 16.0],
            commutator_delta: 0.2,
            check_samples: 20,
        }
    }
}

/// Raw key/value pairs before interpretation.
#[derive(Default)]
struct Raw {
    entries: Vec<(usize, String, String)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.iter().find(|e| e.1 == key).map(|e| (e.0, e.2.as_str()))
    }
}

const KNOWN: &[&str] = &[
    "grid.dim",
    "grid.n",
    "grid.length",
    "params.gamma",
    "params.eps",
    "params.delta",
    "params.eta",
    "transport.cfl",
    "transport.dt_max",
    "transport.order",
    "stokes.rtol",
    "stokes.max_iter",
    "viscosity.kind",
    "viscosity.nu",
    "viscosity.mu",
    "viscosity.entries",
    "viscosity.modulation",
    "viscosity.dir",
    "initial.kind",
    "initial.value",
    "initial.amplitude",
    "initial.mode",
    "initial.axis",
    "initial.width",
    "initial.wavelength",
    "initial.base",
    "initial.base_amplitude",
    "initial.base_mode",
    "initial.base_axis",
    "initial.file",
    "forcing.kind",
    "forcing.amplitude",
    "forcing.mode",
    "forcing.file",
    "run.t_end",
    "run.slab",
    "run.fp_tol",
    "run.fp_max_iter",
    "run.method",
    "run.store_every",
    "run.snapshots",
    "run.seed",
    "run.out",
    "audit.energy_tol",
    "sweep.deltas",
    "sweep.levels",
    "defect.windows",
    "defect.h_reg",
    "defect.ratios",
    "defect.commutator_delta",
    "check.samples",
];

fn lex(text: &str) -> Result<Raw> {
    let mut raw = Raw::default();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse { line: line_no, reason: format!("expected `key = value`, found `{content}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KNOWN.contains(&key) {
            return Err(Error::UnknownKey { line: line_no, key: key.to_string() });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse { line: line_no, reason: format!("duplicate key `{key}`") });
        }
        raw.entries.push((line_no, key.to_string(), value.to_string()));
    }
    Ok(raw)
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse { line, reason: reason.into() }
}

struct Reader<'a> {
    raw: &'a Raw,
    base: &'a Path,
}

impl Reader<'_> {
    fn real(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw.get(key) {
            None => Ok(default),
            Some((line, v)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(parse_err(line, format!("`{key}` expects a finite number, found `{v}`"))),
            },
        }
    }

    fn int(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw.get(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("`{key}` expects a nonnegative integer, found `{v}`"))),
        }
    }

    fn reals(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .filter(|l| !l.is_empty())
                .map(Some)
                .ok_or_else(|| parse_err(line, format!("`{key}` expects a comma-separated list of numbers, found `{v}`"))),
        }
    }

    fn ints(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.raw.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<usize>().ok())
                .collect::<Option<Vec<_>>>()
                .map(Some)
                .ok_or_else(|| parse_err(line, format!("`{key}` expects a comma-separated list of integers, found `{v}`"))),
        }
    }

    fn word(&self, key: &str, default: &str) -> (usize, String) {
        match self.raw.get(key) {
            None => (0, default.to_string()),
            Some((line, v)) => (line, v.to_string()),
        }
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw.get(key) {
            None => Ok(default),
            Some((_, "true")) => Ok(true),
            Some((_, "false")) => Ok(false),
            Some((line, v)) => Err(parse_err(line, format!("`{key}` expects true or false, found `{v}`"))),
        }
    }

    fn path(&self, key: &str) -> Result<Option<(usize, PathBuf)>> {
        match self.raw.get(key) {
            None => Ok(None),
            Some((line, "")) => Err(parse_err(line, format!("`{key}` is empty"))),
            Some((line, v)) => Ok(Some((line, self.base.join(v)))),
        }
    }

    fn existing(&self, key: &str, required_by: &str) -> Result<PathBuf> {
        let (line, p) = self
            .path(key)?
            .ok_or_else(|| parse_err(0, format!("{required_by} requires `{key}`")))?;
        if !p.exists() {
            return Err(parse_err(line, format!("`{}` does not exist", p.display())));
        }
        Ok(p)
    }
}

fn cosine_axis(line: usize, axis: usize, dim: usize) -> Result<usize> {
    if axis == 0 || axis > dim {
        return Err(parse_err(line, format!("axis {axis} outside 1..={dim}")));
    }
    Ok(axis)
}

fn parse_initial(r: &Reader<'_>, dim: usize) -> Result<InitialSpec> {
    let value = r.real("initial.value", 1.0)?;
    let amplitude = r.real("initial.amplitude", 0.2)?;
    let (kind_line, kind) = r.word("initial.kind", "cosine");
    let axis_line = r.raw.get("initial.axis").map_or(0, |e| e.0);
    Ok(match kind.as_str() {
        "constant" => InitialSpec::Constant { value },
        "cosine" => InitialSpec::Cosine {
            value,
            amplitude,
            mode: r.real("initial.mode", 1.0)?,
            axis: cosine_axis(axis_line, r.int("initial.axis", 1)?, dim)?,
        },
        "bump" => InitialSpec::Bump { value, amplitude, width: r.real("initial.width", 0.5)? },
        "oscillatory" => {
            let (base_line, base_kind) = r.word("initial.base", "constant");
            let base = match base_kind.as_str() {
                "constant" => InitialSpec::Constant { value },
                "cosine" => InitialSpec::Cosine {
                    value,
                    amplitude: r.real("initial.base_amplitude", 0.2)?,
                    mode: r.real("initial.base_mode", 1.0)?,
                    axis: cosine_axis(
                        r.raw.get("initial.base_axis").map_or(0, |e| e.0),
                        r.int("initial.base_axis", 1)?,
                        dim,
                    )?,
                },
                other => return Err(parse_err(base_line, format!("unknown oscillatory base `{other}`"))),
            };
            InitialSpec::Oscillatory {
                wavelength: r.real("initial.wavelength", TAU / 16.0)?,
                amplitude: r.real("initial.amplitude", 0.5)?,
                base: Box::new(base),
            }
        }
        "file" => InitialSpec::File { path: r.existing("initial.file", "initial.kind = file")? },
        other => return Err(parse_err(kind_line, format!("unknown initial kind `{other}`"))),
    })
}

fn parse_viscosity(r: &Reader<'_>) -> Result<ViscositySpec> {
    let (line, kind) = r.word("viscosity.kind", "diag");
    Ok(match kind.as_str() {
        "diag" => ViscositySpec::Diag { nu: r.reals("viscosity.nu")? },
        "isotropic" => ViscositySpec::Isotropic { mu: r.real("viscosity.mu", 1.0)? },
        "constant" => ViscositySpec::Constant {
            entries: r
                .reals("viscosity.entries")?
                .ok_or_else(|| parse_err(line, "viscosity.kind = constant requires `viscosity.entries`"))?,
        },
        "varying" => {
            if r.raw.get("viscosity.dir").is_some() {
                ViscositySpec::Files { dir: r.existing("viscosity.dir", "viscosity.kind = varying")? }
            } else {
                ViscositySpec::Modulated {
                    mu: r.real("viscosity.mu", 1.0)?,
                    modulation: r.real("viscosity.modulation", 0.5)?,
                }
            }
        }
        other => return Err(parse_err(line, format!("unknown viscosity kind `{other}`"))),
    })
}

fn parse_forcing(r: &Reader<'_>) -> Result<ForcingSpec> {
    let (line, kind) = r.word("forcing.kind", "zero");
    Ok(match kind.as_str() {
        "zero" => ForcingSpec::Zero,
        "cosine" => ForcingSpec::Cosine { amplitude: r.real("forcing.amplitude", 0.1)?, mode: r.real("forcing.mode", 1.0)? },
        "file" => ForcingSpec::File { path: r.existing("forcing.file", "forcing.kind = file")? },
        other => return Err(parse_err(line, format!("unknown forcing kind `{other}`"))),
    })
}

/// Parse configuration text; relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let raw = lex(text)?;
    let r = Reader { raw: &raw, base };
    let d = RunConfig::default();
    let dim = r.int("grid.dim", d.dim)?;
    if !(1..=3).contains(&dim) {
        return Err(parse_err(raw.get("grid.dim").map_or(0, |e| e.0), format!("grid.dim = {dim} (1, 2 or 3)")));
    }
    let line_of = |key: &str| raw.get(key).map_or(0, |e| e.0);
    let params = SolverParams {
        gamma: r.real("params.gamma", d.params.gamma)?,
        eps: r.real("params.eps", d.params.eps)?,
        delta: r.real("params.delta", d.params.delta)?,
        eta: r.real("params.eta", d.params.eta)?,
        cfl: r.real("transport.cfl", d.params.cfl)?,
        dt_max: r.real("transport.dt_max", d.params.dt_max)?,
        fp_tol: r.real("run.fp_tol", d.params.fp_tol)?,
        fp_max_iter: r.int("run.fp_max_iter", d.params.fp_max_iter)?,
        stokes: crate::stokes::KrylovSettings {
            rtol: r.real("stokes.rtol", d.params.stokes.rtol)?,
            max_iter: r.int("stokes.max_iter", d.params.stokes.max_iter)?,
        },
        order: r.int("transport.order", d.params.order as usize)?.min(255) as u8,
    };
    if let Err(Error::InvalidParameter(reason)) = params.validate() {
        let key = [
            ("gamma", "params.gamma"),
            ("eps", "params.eps"),
            ("delta", "params.delta"),
            ("eta", "params.eta"),
            ("cfl", "transport.cfl"),
            ("dt_max", "transport.dt_max"),
            ("fixed point", "run.fp_tol"),
            ("stokes", "stokes.rtol"),
            ("order", "transport.order"),
        ]
        .iter()
        .find(|(word, _)| reason.contains(word))
        .map_or("", |(_, k)| *k);
        return Err(parse_err(line_of(key), reason));
    }
    let (method_line, method) = r.word("run.method", "auto");
    let method = match method.as_str() {
        "auto" => Method::Auto,
        "picard" => Method::Picard,
        "direct" => Method::Direct,
        other => return Err(parse_err(method_line, format!("unknown run.method `{other}`"))),
    };
    let cfg = RunConfig {
        dim,
        n: r.int("grid.n", d.n)?,
        length: r.real("grid.length", d.length)?,
        params,
        viscosity: parse_viscosity(&r)?,
        initial: parse_initial(&r, dim)?,
        forcing: parse_forcing(&r)?,
        t_end: r.real("run.t_end", d.t_end)?,
        slab: r.real("run.slab", d.slab)?,
        method,
        store_every: r.int("run.store_every", d.store_every)?,
        snapshots: r.boolean("run.snapshots", d.snapshots)?,
        seed: r.int("run.seed", d.seed as usize)? as u64,
        out: r.path("run.out")?.map_or(d.out, |p| p.1),
        energy_tol: r.real("audit.energy_tol", d.energy_tol)?,
        deltas: r.reals("sweep.deltas")?.unwrap_or(d.deltas),
        levels: r.reals("sweep.levels")?.unwrap_or(d.levels),
        windows: r.ints("defect.windows")?.unwrap_or(d.windows),
        h_reg: r.real("defect.h_reg", d.h_reg)?,
        ratios: r.reals("defect.ratios")?.unwrap_or(d.ratios),
        commutator_delta: r.real("defect.commutator_delta", d.commutator_delta)?,
        check_samples: r.int("check.samples", d.check_samples)?,
    };
    let checks: [(&str, bool, String); 7] = [
        ("grid.n", cfg.n >= 4, format!("grid.n = {} (at least 4)", cfg.n)),
        ("grid.length", cfg.length > 0.0, format!("grid.length = {}", cfg.length)),
        ("run.t_end", cfg.t_end >= 0.0, format!("run.t_end = {}", cfg.t_end)),
        ("run.slab", cfg.slab > 0.0, format!("run.slab = {}", cfg.slab)),
        ("run.store_every", cfg.store_every >= 1, "run.store_every must be at least 1".into()),
        ("defect.h_reg", cfg.h_reg >= 0.0, format!("defect.h_reg = {}", cfg.h_reg)),
        ("defect.windows", cfg.windows.iter().all(|w| *w >= 1), "defect windows must be positive".into()),
    ];
    for (key, ok, reason) in checks {
        if !ok {
            return Err(parse_err(line_of(key), reason));
        }
    }
    if let InitialSpec::Oscillatory { wavelength, .. } = &cfg.initial {
        let cells = wavelength / (cfg.length / cfg.n as f64);
        if cells < 4.0 - 1e-9 {
            return Err(Error::UnresolvedWavelength { wavelength: *wavelength, cells });
        }
    }
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}
