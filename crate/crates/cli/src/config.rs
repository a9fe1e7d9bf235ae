//! Flat `key=value` run configuration.
//!
//! Layering is defaults, then the config file, then command-line flags; later
//! layers win. Every key has a default, and [`RunConfig::canonical`] writes
//! every key in a fixed order so equal configs serialize to equal bytes.

use std::fmt;
use std::path::{Path, PathBuf};

use syk_core::dynamics::{DickeMode, Variant};
use syk_core::output::fmt_f64;

use crate::error::CliError;

/// Largest site count accepted by exact-diagonalization experiments.
pub const DENSE_SITE_CAP: usize = 16;
/// Largest atom count for Dicke runs; the collective cutoff check grows as `6N`.
pub const DICKE_ATOM_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Spectrum,
    Entropy,
    See,
    Green,
    Sd,
    Otoc,
    Battery,
    Dicke,
    PowerScaling,
    GapScaling,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Self::Spectrum,
        Self::Entropy,
        Self::See,
        Self::Green,
        Self::Sd,
        Self::Otoc,
        Self::Battery,
        Self::Dicke,
        Self::PowerScaling,
        Self::GapScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::Entropy => "entropy",
            Self::See => "see",
            Self::Green => "green",
            Self::Sd => "sd",
            Self::Otoc => "otoc",
            Self::Battery => "battery",
            Self::Dicke => "dicke",
            Self::PowerScaling => "power-scaling",
            Self::GapScaling => "gap-scaling",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Works on the `2^N` fermionic Fock space.
    pub fn is_dense(self) -> bool {
        !matches!(self, Self::Sd | Self::Dicke)
    }

    /// Draws coupling realizations.
    pub fn is_disordered(self) -> bool {
        !matches!(self, Self::Sd | Self::Dicke)
    }
}

/// A sampling grid as written in a config: `log:a:b:n`, `lin:a:b:n`, or a
/// comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Log { start: f64, stop: f64, count: usize },
    Lin { start: f64, stop: f64, count: usize },
    List(Vec<f64>),
}

impl Grid {
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("log:").map(|r| (true, r)).or_else(|| s.strip_prefix("lin:").map(|r| (false, r))) {
            let (log, body) = rest;
            let parts: Vec<&str> = body.split(':').collect();
            if parts.len() != 3 {
                return Err(format!("grid '{s}' must have the form {}:start:stop:count", if log { "log" } else { "lin" }));
            }
            let start = parse_f64(parts[0])?;
            let stop = parse_f64(parts[1])?;
            let count: usize = parts[2].trim().parse().map_err(|_| format!("grid count '{}' is not a positive integer", parts[2]))?;
            if count == 0 {
                return Err("grid count must be positive".into());
            }
            if count == 1 && start != stop {
                return Err("a one-point grid needs start == stop".into());
            }
            if log {
                if !(start > 0.0 && stop > 0.0) {
                    return Err(format!("log grid '{s}' needs positive endpoints"));
                }
                Ok(Grid::Log { start, stop, count })
            } else {
                Ok(Grid::Lin { start, stop, count })
            }
        } else {
            let v = s.split(',').map(parse_f64).collect::<Result<Vec<_>, _>>()?;
            if v.is_empty() {
                return Err("empty grid".into());
            }
            Ok(Grid::List(v))
        }
    }

    /// Expanded points; endpoints are exact.
    pub fn points(&self) -> Vec<f64> {
        match *self {
            Grid::List(ref v) => v.clone(),
            Grid::Lin { start, stop, count } => (0..count)
                .map(|i| if i + 1 == count { stop } else { start + (stop - start) * i as f64 / (count - 1).max(1) as f64 })
                .collect(),
            Grid::Log { start, stop, count } => {
                let (a, b) = (start.log10(), stop.log10());
                (0..count)
                    .map(|i| match i {
                        0 => start,
                        _ if i + 1 == count => stop,
                        _ => 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64),
                    })
                    .collect()
            }
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grid::Log { start, stop, count } => write!(f, "log:{}:{}:{count}", fmt_f64(*start), fmt_f64(*stop)),
            Grid::Lin { start, stop, count } => write!(f, "lin:{}:{}:{count}", fmt_f64(*start), fmt_f64(*stop)),
            Grid::List(v) => write!(f, "{}", v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")),
        }
    }
}

/// Which charge sectors a spectrum run diagonalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    All,
    Half,
    Charge(usize),
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sector::All => f.write_str("all"),
            Sector::Half => f.write_str("half"),
            Sector::Charge(q) => write!(f, "{q}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trace {
    Exact,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub n: Vec<usize>,
    pub j: f64,
    pub mu: f64,
    pub omega: f64,
    pub lambda: f64,
    pub variant: Variant,
    pub dicke_mode: DickeMode,
    pub rescale: bool,
    /// Temperature grid for entropy curves.
    pub temperatures: Grid,
    /// Single temperature for Green's functions.
    pub temperature: f64,
    pub tau: Grid,
    pub omega_grid: Grid,
    pub t: Grid,
    /// Lorentzian width; `None` picks it from the pole spacing.
    pub eta: Option<f64>,
    pub site: usize,
    pub sector: Sector,
    pub ergotropy_m: Vec<usize>,
    pub w_site: usize,
    pub v_site: usize,
    pub trace: Trace,
    pub samples: usize,
    pub seed: u64,
    pub realizations: usize,
    /// Zero means one worker per available core.
    pub workers: usize,
    pub memory_mb: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Spectrum,
            n: vec![12],
            j: 1.0,
            mu: 0.0,
            omega: 1.0,
            lambda: 0.05,
            variant: Variant::Fermionic,
            dicke_mode: DickeMode::Collective,
            rescale: false,
            temperatures: Grid::Log { start: 0.01, stop: 100.0, count: 41 },
            temperature: 0.0,
            tau: Grid::Lin { start: 0.0, stop: 12.0, count: 121 },
            omega_grid: Grid::Lin { start: -4.0, stop: 4.0, count: 801 },
            t: Grid::Lin { start: 0.0, stop: 20.0, count: 81 },
            eta: None,
            site: 0,
            sector: Sector::All,
            ergotropy_m: Vec::new(),
            w_site: 0,
            v_site: 1,
            trace: Trace::Exact,
            samples: 32,
            seed: 0,
            realizations: 20,
            workers: 0,
            memory_mb: 4096,
            out: PathBuf::from("out"),
        }
    }
}

/// Every recognised key, in canonical order.
pub const KEYS: [&str; 29] = [
    "experiment",
    "N",
    "J",
    "mu",
    "omega",
    "lambda",
    "variant",
    "dicke_mode",
    "rescale",
    "T",
    "temperature",
    "tau",
    "omega_grid",
    "t",
    "eta",
    "site",
    "sector",
    "ergotropy_M",
    "w_site",
    "v_site",
    "trace",
    "samples",
    "seed",
    "realizations",
    "workers",
    "memory_mb",
    "out",
    "figure",
    "config",
];

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !v.is_finite() {
        return Err(format!("'{s}' is not finite"));
    }
    Ok(v)
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("'{s}' is not a non-negative integer"))
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_usize).collect()
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("'{s}' is not a boolean")),
    }
}

fn join(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// One `key=value` assignment with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: String,
}

/// Split `key=value` lines; `#` starts a comment.
pub fn parse_text(text: &str, origin: &str) -> Result<Vec<Assignment>, CliError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
            key: format!("{origin}:{}", lineno + 1),
            message: format!("expected key=value, found '{line}'"),
        })?;
        out.push(Assignment { key: k.trim().to_string(), value: v.trim().to_string(), origin: format!("{origin}:{}", lineno + 1) });
    }
    Ok(out)
}

/// Command-line flags: `key=value`, optionally written `--key=value`.
pub fn parse_flags(args: &[String]) -> Result<Vec<Assignment>, CliError> {
    args.iter()
        .map(|a| {
            let a = a.trim_start_matches("--");
            let (k, v) = a.split_once('=').ok_or_else(|| CliError::Config {
                key: a.to_string(),
                message: "flags must be written key=value".into(),
            })?;
            Ok(Assignment { key: k.to_string(), value: v.to_string(), origin: "flag".into() })
        })
        .collect()
}

impl RunConfig {
    /// Apply assignments in order. `figure` and `config` are directives handled
    /// by the caller and are skipped here.
    pub fn apply(&mut self, assignments: &[Assignment]) -> Result<(), CliError> {
        for a in assignments {
            self.set(&a.key, &a.value).map_err(|message| CliError::Config { key: format!("{} ({})", a.key, a.origin), message })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "experiment" => {
                self.experiment = Experiment::parse(v).ok_or_else(|| {
                    format!("unknown experiment '{v}' (one of {})", Experiment::ALL.map(|e| e.name()).join(", "))
                })?
            }
            "N" => {
                let n = parse_list(v)?;
                if n.is_empty() {
                    return Err("N needs at least one size".into());
                }
                self.n = n;
            }
            "J" => self.j = parse_f64(v)?,
            "mu" => self.mu = parse_f64(v)?,
            "omega" => self.omega = parse_f64(v)?,
            "lambda" => self.lambda = parse_f64(v)?,
            "variant" => {
                self.variant = match v {
                    "fermionic" => Variant::Fermionic,
                    "bosonic" => Variant::Bosonic,
                    _ => return Err(format!("unknown variant '{v}' (fermionic or bosonic)")),
                }
            }
            "dicke_mode" => {
                self.dicke_mode = match v {
                    "collective" => DickeMode::Collective,
                    "parallel" => DickeMode::Parallel,
                    _ => return Err(format!("unknown dicke_mode '{v}' (collective or parallel)")),
                }
            }
            "rescale" => self.rescale = parse_bool(v)?,
            "T" => self.temperatures = Grid::parse(v)?,
            "temperature" => self.temperature = parse_f64(v)?,
            "tau" => self.tau = Grid::parse(v)?,
            "omega_grid" => self.omega_grid = Grid::parse(v)?,
            "t" => self.t = Grid::parse(v)?,
            "eta" => self.eta = if v == "auto" { None } else { Some(parse_f64(v)?) },
            "site" => self.site = parse_usize(v)?,
            "sector" => {
                self.sector = match v {
                    "all" => Sector::All,
                    "half" => Sector::Half,
                    q => Sector::Charge(parse_usize(q).map_err(|_| format!("sector '{q}' is not all, half or a charge"))?),
                }
            }
            "ergotropy_M" => self.ergotropy_m = parse_list(v)?,
            "w_site" => self.w_site = parse_usize(v)?,
            "v_site" => self.v_site = parse_usize(v)?,
            "trace" => {
                self.trace = match v {
                    "exact" => Trace::Exact,
                    "stochastic" => Trace::Stochastic,
                    _ => return Err(format!("unknown trace '{v}' (exact or stochastic)")),
                }
            }
            "samples" => self.samples = parse_usize(v)?,
            "seed" => self.seed = v.parse().map_err(|_| format!("'{v}' is not a 64-bit seed"))?,
            "realizations" => self.realizations = parse_usize(v)?,
            "workers" => self.workers = parse_usize(v)?,
            "memory_mb" => self.memory_mb = parse_usize(v)?,
            "out" => {
                if v.is_empty() {
                    return Err("output directory must not be empty".into());
                }
                self.out = PathBuf::from(v)
            }
            "figure" | "config" => {}
            _ => return Err(format!("unknown key (known keys: {})", KEYS.join(", "))),
        }
        Ok(())
    }

    /// Every key in canonical order, one `key=value` per line.
    pub fn canonical(&self) -> String {
        let fmt_opt = |x: Option<f64>| x.map_or_else(|| "auto".to_string(), fmt_f64);
        let lines = [
            ("experiment", self.experiment.name().to_string()),
            ("N", join(&self.n)),
            ("J", fmt_f64(self.j)),
            ("mu", fmt_f64(self.mu)),
            ("omega", fmt_f64(self.omega)),
            ("lambda", fmt_f64(self.lambda)),
            ("variant", self.variant.name().to_string()),
            (
                "dicke_mode",
                match self.dicke_mode {
                    DickeMode::Collective => "collective".into(),
                    DickeMode::Parallel => "parallel".into(),
                },
            ),
            ("rescale", self.rescale.to_string()),
            ("T", self.temperatures.to_string()),
            ("temperature", fmt_f64(self.temperature)),
            ("tau", self.tau.to_string()),
            ("omega_grid", self.omega_grid.to_string()),
            ("t", self.t.to_string()),
            ("eta", fmt_opt(self.eta)),
            ("site", self.site.to_string()),
            ("sector", self.sector.to_string()),
            ("ergotropy_M", join(&self.ergotropy_m)),
            ("w_site", self.w_site.to_string()),
            ("v_site", self.v_site.to_string()),
            (
                "trace",
                match self.trace {
                    Trace::Exact => "exact".into(),
                    Trace::Stochastic => "stochastic".into(),
                },
            ),
            ("samples", self.samples.to_string()),
            ("seed", self.seed.to_string()),
            ("realizations", self.realizations.to_string()),
            ("workers", self.workers.to_string()),
            ("memory_mb", self.memory_mb.to_string()),
            ("out", self.out.to_string_lossy().replace('\\', "/")),
        ];
        let mut s = String::new();
        for (k, v) in lines {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Domain and resource checks that need the whole config.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |key: &str, message: String| Err(CliError::Config { key: key.into(), message });
        let e = self.experiment;
        if e.is_disordered() && self.realizations == 0 {
            return cfg("realizations", "at least one realization is required".into());
        }
        for &n in &self.n {
            if e.is_dense() && n > DENSE_SITE_CAP {
                return Err(CliError::Resource(format!(
                    "N={n} exceeds the {DENSE_SITE_CAP}-site cap for {} (exact diagonalization)",
                    e.name()
                )));
            }
            if e == Experiment::Dicke && n > DICKE_ATOM_CAP {
                return Err(CliError::Resource(format!("N={n} exceeds the {DICKE_ATOM_CAP}-atom cap for dicke")));
            }
            if e.is_dense() && n < 2 {
                return cfg("N", format!("N={n} is too small; at least two sites are needed"));
            }
            if matches!(e, Experiment::Battery | Experiment::PowerScaling | Experiment::GapScaling) && n % 2 != 0 {
                return cfg("N", format!("N={n} must be even for {}", e.name()));
            }
            if e == Experiment::Green && self.site >= n {
                return cfg("site", format!("site {} does not exist for N={n}", self.site));
            }
            if e == Experiment::Otoc && (self.w_site >= n || self.v_site >= n || self.w_site == self.v_site) {
                return cfg("w_site", format!("w_site and v_site must be distinct sites below N={n}"));
            }
            if let Sector::Charge(q) = self.sector {
                if q > n {
                    return cfg("sector", format!("charge {q} exceeds N={n}"));
                }
            }
            if e == Experiment::Battery && self.ergotropy_m.iter().any(|&m| m == 0 || m > n) {
                return cfg("ergotropy_M", format!("ergotropy subsystem sizes must lie in 1..={n}"));
            }
        }
        if matches!(e, Experiment::PowerScaling | Experiment::GapScaling) && self.n.len() < 3 {
            return cfg("N", format!("{} needs at least three sizes", e.name()));
        }
        if e == Experiment::Dicke && self.n.contains(&0) {
            return cfg("N", "dicke needs at least one atom".into());
        }
        let tau = self.tau.points();
        if matches!(e, Experiment::Battery | Experiment::PowerScaling | Experiment::Dicke) {
            if tau.first() != Some(&0.0) {
                return cfg("tau", "charging grids must start at tau=0".into());
            }
            if tau.windows(2).any(|w| w[1] < w[0]) {
                return cfg("tau", "charging grids must be non-decreasing".into());
            }
        }
        if e == Experiment::Otoc {
            let t = self.t.points();
            if t.iter().any(|&x| x < 0.0) || t.windows(2).any(|w| w[1] < w[0]) {
                return cfg("t", "OTOC times must be non-negative and non-decreasing".into());
            }
            if self.trace == Trace::Stochastic && self.samples == 0 {
                return cfg("samples", "stochastic traces need at least one sample".into());
            }
        }
        if matches!(e, Experiment::Entropy | Experiment::Sd) && self.temperatures.points().iter().any(|&x| x <= 0.0) {
            return cfg("T", "temperatures must be positive".into());
        }
        if self.temperature < 0.0 {
            return cfg("temperature", "temperature must be non-negative".into());
        }
        if let Some(eta) = self.eta {
            if eta <= 0.0 {
                return cfg("eta", "eta must be positive".into());
            }
        }
        if self.j < 0.0 {
            return cfg("J", "J must be non-negative".into());
        }
        let need = self.memory_estimate_mb();
        if need > self.memory_mb as f64 {
            return Err(CliError::Resource(format!(
                "estimated {need:.0} MB exceeds memory_mb={} for {} at N={}",
                self.memory_mb,
                e.name(),
                self.n.iter().max().unwrap()
            )));
        }
        Ok(())
    }

    /// Rough peak working set of one realization at the largest size, times
    /// the number of concurrent workers.
    pub fn memory_estimate_mb(&self) -> f64 {
        let n = *self.n.iter().max().unwrap_or(&0);
        if !self.experiment.is_dense() || n == 0 {
            return 0.0;
        }
        let binom = |k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
        let sector = binom(n / 2);
        let full = 2f64.powi(n as i32);
        let bytes = match self.experiment {
            // dense eigenvectors of the largest block, with workspace
            Experiment::See | Experiment::Green => 3.0 * 16.0 * sector * sector,
            Experiment::Spectrum | Experiment::Entropy => 2.0 * 16.0 * sector * sector,
            // dense unitary blocks and full-space operators
            Experiment::Otoc => match self.trace {
                Trace::Exact => 6.0 * 16.0 * full * full / (n as f64).max(1.0),
                Trace::Stochastic => 3.0 * 16.0 * sector * sector,
            },
            // sparse Krylov work plus dense blocks below the eigen threshold
            _ => 16.0 * full * 40.0 + 3.0 * 16.0 * 1000.0 * 1000.0,
        };
        bytes / 1e6 * self.effective_workers().min(self.realizations.max(1)) as f64
    }

    pub fn effective_workers(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}

/// Read a config file into assignments.
pub fn read_file(path: &Path) -> Result<Vec<Assignment>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config { key: path.display().to_string(), message: format!("cannot read config: {e}") })?;
    parse_text(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs_expand() {
        let g = Grid::parse("log:0.01:100:5").unwrap().points();
        let want = [0.01, 0.1, 1.0, 10.0, 100.0];
        assert_eq!(g.len(), 5);
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() <= 1e-15 * b, "{a} vs {b}");
        }
        assert_eq!(Grid::parse("lin:0:1:5").unwrap().points(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(Grid::parse("1,2.5").unwrap().points(), vec![1.0, 2.5]);
        for bad in ["log:0:1:3", "lin:0:1", "lin:0:1:0", "a,b", "log:1:2:x"] {
            assert!(Grid::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn grids_round_trip_through_their_spec() {
        for s in ["log:0.01:100:5", "lin:-4:4:801", "0.5,1,2"] {
            let g = Grid::parse(s).unwrap();
            assert_eq!(Grid::parse(&g.to_string()).unwrap(), g);
        }
    }

    #[test]
    fn every_key_round_trips() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        d.apply(&parse_text(&c.canonical(), "canon").unwrap()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.canonical().lines().count(), KEYS.len() - 2);
    }

    #[test]
    fn unknown_keys_name_themselves() {
        let mut c = RunConfig::default();
        let err = c.apply(&parse_text("N=8\nfrobnicate=1\n", "f.cfg").unwrap()).unwrap_err();
        let CliError::Config { key, .. } = err else { panic!("wrong error kind") };
        assert!(key.contains("frobnicate") && key.contains("f.cfg:2"), "{key}");
    }
}
