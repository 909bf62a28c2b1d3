//! Run configuration: flat `dotted.key = value` text with `#` comments.
//!
//! ```text
//! # 64 × 128 linear run
//! domain.dim = 2
//! domain.L = 1
//! domain.n_horizontal = 64
//! domain.n_z = 128
//! law.kind = linear
//! law.mu = 2
//! physics.b = 1
//! physics.tau = 0.1
//! ```
//!
//! Every key is optional. `physics.mu_drive` defaults to `μ(1)` of the law and
//! `physics.p0` to the law's pressure constant.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use thiserror::Error;

use crate::error::Result;
use crate::functional::PhysicalParams;
use crate::grid::DomainSpec;
use crate::inner::InnerOptions;
use crate::maglaw::MagnetizationLaw;
use crate::outer::{OuterMode, OuterOptions};
use crate::saddle::SaddleOptions;

/// Parse failure with a 1-based position.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldFormat {
    Csv,
    Ascii,
}

impl FieldFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Ascii => "grid",
        }
    }
}

impl std::str::FromStr for FieldFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "ascii" => Ok(Self::Ascii),
            other => Err(format!("unknown format '{other}' (expected csv or ascii)")),
        }
    }
}

impl fmt::Display for FieldFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Ascii => "ascii",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LawConfig {
    Linear { mu: f64 },
    Langevin { ms: f64, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    /// Side lengths of `Ω`; a single value applies to every horizontal axis.
    pub length: Vec<f64>,
    pub n_horizontal: Vec<usize>,
    pub n_z: usize,
    pub law: LawConfig,
    pub b: f64,
    pub tau: f64,
    pub mu_drive: Option<f64>,
    pub p0: Option<f64>,
    pub inner: InnerOptions,
    pub outer: OuterOptions,
    pub tol_gap: f64,
    pub max_sweeps: usize,
    pub theta: f64,
    pub deterministic: bool,
    pub seed: u64,
    pub output_directory: PathBuf,
    pub formats: Vec<FieldFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let saddle = SaddleOptions::default();
        Self {
            dim: 2,
            length: vec![1.0],
            n_horizontal: vec![32],
            n_z: 64,
            law: LawConfig::Linear { mu: 2.0 },
            b: 1.0,
            tau: 0.1,
            mu_drive: None,
            p0: None,
            inner: saddle.inner,
            outer: saddle.outer,
            tol_gap: saddle.tol_gap,
            max_sweeps: saddle.max_sweeps,
            theta: saddle.theta,
            deterministic: false,
            seed: 0,
            output_directory: PathBuf::from("out"),
            formats: vec![FieldFormat::Csv],
        }
    }
}

/// Keys in echo order.
pub const KEYS: &[&str] = &[
    "domain.dim",
    "domain.L",
    "domain.n_horizontal",
    "domain.n_z",
    "law.kind",
    "law.mu",
    "law.Ms",
    "law.gamma",
    "physics.b",
    "physics.tau",
    "physics.mu_drive",
    "physics.p0",
    "inner.tol",
    "inner.max_iter",
    "outer.tol",
    "outer.max_iter",
    "outer.mode",
    "saddle.tol_gap",
    "saddle.max_sweeps",
    "saddle.theta",
    "solver.deterministic",
    "solver.seed",
    "output.directory",
    "output.formats",
];

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse '{value}' as a number"))
}

fn parse_list<T: std::str::FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    let items: std::result::Result<Vec<T>, String> = value.split(',').map(|s| parse_num(s.trim())).collect();
    let items = items?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(items)
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses configuration text. Later assignments override earlier ones;
    /// keys are applied in [`KEYS`] order so `law.kind` may appear anywhere.
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut assigned: Vec<Option<(String, usize, usize)>> = vec![None; KEYS.len()];
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let key_column = content.len() - content.trim_start().len() + 1;
            let Some(eq) = content.find('=') else {
                return Err(ConfigError { line, column: key_column, message: "expected 'key = value'".into() });
            };
            let key = content[..eq].trim();
            let value_part = &content[eq + 1..];
            let value_column = eq + 2 + (value_part.len() - value_part.trim_start().len());
            let Some(slot) = KEYS.iter().position(|k| *k == key) else {
                let message = if key.is_empty() { "missing key".into() } else { format!("unknown key '{key}'") };
                return Err(ConfigError { line, column: key_column, message });
            };
            assigned[slot] = Some((value_part.trim().to_string(), line, value_column));
        }
        let mut config = Self::default();
        for (key, entry) in KEYS.iter().zip(&assigned) {
            if let Some((value, line, column)) = entry {
                config
                    .set(key, value)
                    .map_err(|message| ConfigError { line: *line, column: *column, message })?;
            }
        }
        if let Err(e) = config.validate() {
            let (line, column) = assigned.iter().flatten().map(|(_, l, c)| (*l, *c)).max().unwrap_or((1, 1));
            return Err(ConfigError { line, column, message: e.to_string() });
        }
        Ok(config)
    }

    /// Assigns one key. Used by the parser and by sweep overrides.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "domain.dim" => self.dim = parse_num(value)?,
            "domain.L" => self.length = parse_list(value)?,
            "domain.n_horizontal" => self.n_horizontal = parse_list(value)?,
            "domain.n_z" => self.n_z = parse_num(value)?,
            "law.kind" => {
                self.law = match (value, self.law) {
                    ("linear", LawConfig::Linear { .. }) | ("langevin", LawConfig::Langevin { .. }) => self.law,
                    ("linear", _) => LawConfig::Linear { mu: 2.0 },
                    ("langevin", _) => LawConfig::Langevin { ms: 1.0, gamma: 1.0 },
                    (other, _) => return Err(format!("unknown law '{other}' (expected linear or langevin)")),
                }
            }
            "law.mu" => {
                let mu = parse_num(value)?;
                match &mut self.law {
                    LawConfig::Linear { mu: m } => *m = mu,
                    LawConfig::Langevin { .. } => return Err("law.mu applies to the linear law".into()),
                }
            }
            "law.Ms" | "law.gamma" => {
                let x = parse_num(value)?;
                match &mut self.law {
                    LawConfig::Langevin { ms, .. } if key == "law.Ms" => *ms = x,
                    LawConfig::Langevin { gamma, .. } => *gamma = x,
                    LawConfig::Linear { .. } => return Err(format!("{key} applies to the langevin law")),
                }
            }
            "physics.b" => self.b = parse_num(value)?,
            "physics.tau" => self.tau = parse_num(value)?,
            "physics.mu_drive" => self.mu_drive = Some(parse_num(value)?),
            "physics.p0" => self.p0 = Some(parse_num(value)?),
            "inner.tol" => self.inner.tol = parse_num(value)?,
            "inner.max_iter" => self.inner.max_iter = parse_num(value)?,
            "outer.tol" => self.outer.tol = parse_num(value)?,
            "outer.max_iter" => self.outer.max_iter = parse_num(value)?,
            "outer.mode" => self.outer.mode = value.parse::<OuterMode>().map_err(|e| e.to_string())?,
            "saddle.tol_gap" => self.tol_gap = parse_num(value)?,
            "saddle.max_sweeps" => self.max_sweeps = parse_num(value)?,
            "saddle.theta" => self.theta = parse_num(value)?,
            "solver.deterministic" => {
                self.deterministic = value.parse().map_err(|_| format!("expected true or false, got '{value}'"))?
            }
            "solver.seed" => self.seed = parse_num(value)?,
            "output.directory" => {
                if value.is_empty() {
                    return Err("empty directory".into());
                }
                self.output_directory = PathBuf::from(value)
            }
            "output.formats" => {
                let formats: std::result::Result<Vec<FieldFormat>, String> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                self.formats = formats?;
            }
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Checks that every derived object can be built.
    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        let law = self.magnetization_law()?;
        self.physical_params(&law)?;
        self.saddle_options()?;
        Ok(())
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        use crate::error::Error;
        if !(2..=3).contains(&self.dim) {
            return Err(Error::InvalidParameter(format!("domain.dim must be 2 or 3, got {}", self.dim)));
        }
        let axes = self.dim - 1;
        let expand = |v: &[f64]| if v.len() == 1 { vec![v[0]; axes] } else { v.to_vec() };
        let lengths = expand(&self.length);
        let counts = if self.n_horizontal.len() == 1 { vec![self.n_horizontal[0]; axes] } else { self.n_horizontal.clone() };
        if lengths.len() != axes || counts.len() != axes {
            return Err(Error::InvalidParameter(format!("domain.L and domain.n_horizontal need {axes} value(s)")));
        }
        if counts.iter().chain([&self.n_z]).any(|&n| n < 2) {
            return Err(Error::InvalidParameter("resolutions must be at least 2".into()));
        }
        DomainSpec::new(&lengths, &counts, self.n_z)
    }

    pub fn magnetization_law(&self) -> Result<MagnetizationLaw> {
        match self.law {
            LawConfig::Linear { mu } => MagnetizationLaw::linear(mu),
            LawConfig::Langevin { ms, gamma } => MagnetizationLaw::langevin(ms, gamma),
        }
    }

    /// Physical constants with defaults resolved against `law`.
    pub fn physical_params(&self, law: &MagnetizationLaw) -> Result<PhysicalParams> {
        let mu_drive = self.mu_drive.unwrap_or_else(|| law.mu(1.0));
        match self.p0 {
            Some(p0) => PhysicalParams::new(self.b, self.tau, mu_drive, p0),
            None => PhysicalParams::with_law_pressure(law, self.b, self.tau, mu_drive),
        }
    }

    pub fn saddle_options(&self) -> Result<SaddleOptions> {
        use crate::error::Error;
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
            }
        };
        positive("inner.tol", self.inner.tol)?;
        positive("outer.tol", self.outer.tol)?;
        positive("saddle.tol_gap", self.tol_gap)?;
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidParameter(format!("saddle.theta must be in (0, 1], got {}", self.theta)));
        }
        if self.inner.max_iter == 0 || self.outer.max_iter == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidParameter("iteration limits must be at least 1".into()));
        }
        Ok(SaddleOptions {
            inner: self.inner,
            outer: self.outer,
            tol_gap: self.tol_gap,
            max_sweeps: self.max_sweeps,
            theta: self.theta,
        })
    }

    /// `(key, value)` pairs in [`KEYS`] order; unset optional keys are left out.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("domain.dim", self.dim.to_string()),
            ("domain.L", join(&self.length)),
            ("domain.n_horizontal", join(&self.n_horizontal)),
            ("domain.n_z", self.n_z.to_string()),
        ];
        match self.law {
            LawConfig::Linear { mu } => {
                out.push(("law.kind", "linear".into()));
                out.push(("law.mu", mu.to_string()));
            }
            LawConfig::Langevin { ms, gamma } => {
                out.push(("law.kind", "langevin".into()));
                out.push(("law.Ms", ms.to_string()));
                out.push(("law.gamma", gamma.to_string()));
            }
        }
        out.push(("physics.b", self.b.to_string()));
        out.push(("physics.tau", self.tau.to_string()));
        if let Some(m) = self.mu_drive {
            out.push(("physics.mu_drive", m.to_string()));
        }
        if let Some(p) = self.p0 {
            out.push(("physics.p0", p.to_string()));
        }
        out.extend([
            ("inner.tol", self.inner.tol.to_string()),
            ("inner.max_iter", self.inner.max_iter.to_string()),
            ("outer.tol", self.outer.tol.to_string()),
            ("outer.max_iter", self.outer.max_iter.to_string()),
            ("outer.mode", self.outer.mode.to_string()),
            ("saddle.tol_gap", self.tol_gap.to_string()),
            ("saddle.max_sweeps", self.max_sweeps.to_string()),
            ("saddle.theta", self.theta.to_string()),
            ("solver.deterministic", self.deterministic.to_string()),
            ("solver.seed", self.seed.to_string()),
            ("output.directory", self.output_directory.display().to_string()),
            ("output.formats", join(&self.formats)),
        ]);
        out
    }

    /// Configuration text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
