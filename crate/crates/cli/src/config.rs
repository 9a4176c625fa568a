//! Run configuration: a TOML file with one table per module.
//!
//! Every key is optional except `scenario.kind` and `run.t_end`. Unknown
//! keys are rejected with the full key path and, when one is close enough,
//! a suggestion.

use std::path::{Path, PathBuf};

use cns1d::material::MaterialError;
use cns1d::{DiagnosticsSettings, MaterialLaw, ScenarioKind, ScenarioSpec, SmoothProfile, SolverError, StateError, StepControl};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("config key `{path}`: {message}")]
    Key { path: String, message: String },
}

impl ConfigError {
    pub fn key(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Key {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    DensityPatch,
    VacuumBubble,
    Smooth,
    Mollified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: Kind,
    #[serde(default = "default_a0")]
    pub a0: f64,
    #[serde(default = "default_b0")]
    pub b0: f64,
    /// Mollifier width, `mollified` only.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Scenario being mollified, `mollified` only.
    #[serde(default = "default_base")]
    pub base: Kind,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub velocity: f64,
    #[serde(default = "default_wavenumber")]
    pub wavenumber: u32,
}

fn default_a0() -> f64 {
    0.25
}
fn default_b0() -> f64 {
    0.75
}
fn default_epsilon() -> f64 {
    0.02
}
fn default_base() -> Kind {
    Kind::DensityPatch
}
fn default_wavenumber() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_end: f64,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    /// Cells per unit mass.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_sample_dt() -> f64 {
    0.1
}
fn default_resolution() -> usize {
    400
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output directory; overridden by `--out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write a snapshot every k-th sample; none when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub run: RunSection,
    #[serde(default)]
    pub material: MaterialLaw,
    #[serde(default)]
    pub solver: StepControl,
    #[serde(default)]
    pub diagnostics: DiagnosticsSettings,
    #[serde(default)]
    pub output: OutputSection,
}

/// Reference configuration with every default spelled out.
pub const DEFAULTS_TOML: &str = r#"[scenario]
kind = "density_patch"   # density_patch | vacuum_bubble | smooth | mollified
a0 = 0.25
b0 = 0.75
epsilon = 0.02           # mollified only
base = "density_patch"   # mollified only
amplitude = 0.0          # smooth: rho0 = 1 + amplitude cos(2 pi k x)
velocity = 0.0           # smooth: u0 = velocity sin(pi k x)
wavenumber = 1

[run]
t_end = 20.0             # required
sample_dt = 0.1
resolution = 400         # cells per unit mass

[material]               # p = c1 rho^gamma, mu = mu_star + c2 rho^beta
gamma = 2.0
c1 = 1.0
beta = 0.0
c2 = 0.0
mu_star = 1.0

[solver]
cfl = 0.4
dt_max = 0.01
v_min = 1e-12
max_rejects = 20
gap_tol = 0.0
wall_stress_limit = inf
contact_policy = "merge"  # merge | record | stop

[diagnostics]
eta_l = 0.05
a2 = [10.0, 100.0, 1000.0]
fit_window_fraction = 0.5

[output]
# dir = "out"            # default: $CNS1D_OUT/<config name>
# snapshot_every = 10    # default: no snapshots
"#;

const SECTIONS: &[(&str, &[&str])] = &[
    ("scenario", &["kind", "a0", "b0", "epsilon", "base", "amplitude", "velocity", "wavenumber"]),
    ("run", &["t_end", "sample_dt", "resolution"]),
    ("material", &["gamma", "c1", "beta", "c2", "mu_star"]),
    (
        "solver",
        &["cfl", "dt_max", "v_min", "max_rejects", "gap_tol", "wall_stress_limit", "contact_policy"],
    ),
    ("diagnostics", &["eta_l", "a2", "fit_window_fraction"]),
    ("output", &["dir", "snapshot_every"]),
];

/// Words people reach for that are not key names.
const ALIASES: &[(&str, &str)] = &[
    ("viscosity", "viscosity is set in the `material` section (mu_star, c2, beta)"),
    ("pressure", "pressure is set in the `material` section (c1, gamma)"),
    ("density", "initial density is set in the `scenario` section"),
    ("cells", "did you mean `run.resolution`?"),
    ("n", "did you mean `run.resolution`?"),
    ("policy", "did you mean `solver.contact_policy`?"),
    ("dt", "did you mean `solver.dt_max` or `run.sample_dt`?"),
    ("out", "did you mean `output.dir`?"),
];

/// Best suggestion for an unknown key `key` found in `section` (or at the
/// top level).
pub fn suggest(section: Option<&str>, key: &str) -> Option<String> {
    let key = key.to_ascii_lowercase();
    let mut best: Option<(f64, String)> = None;
    let mut offer = |word: &str, advice: String, bonus: f64| {
        let score = strsim::jaro_winkler(&key, word) + bonus;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, advice));
        }
    };
    for (name, fields) in SECTIONS {
        if section.is_none() {
            offer(name, format!("did you mean the `{name}` section?"), 0.0);
        }
        for f in *fields {
            let bonus = if section == Some(*name) { 0.02 } else { 0.0 };
            offer(f, format!("did you mean `{name}.{f}`?"), bonus);
        }
    }
    for (word, advice) in ALIASES {
        offer(word, advice.to_string(), 0.0);
    }
    best.filter(|(score, _)| *score >= 0.85).map(|(_, advice)| advice)
}

fn unknown_key(section: Option<&str>, key: &str) -> ConfigError {
    let path = section.map_or_else(|| key.to_string(), |s| format!("{s}.{key}"));
    let mut message = "unknown key".to_string();
    if let Some(s) = suggest(section, key) {
        message = format!("{message}; {s}");
    }
    ConfigError::key(path, message)
}

/// Rejects keys outside the schema before typed parsing, so the error can
/// name the full path and suggest a fix.
fn check_keys(doc: &toml::Table) -> Result<(), ConfigError> {
    for (key, value) in doc {
        let Some((name, fields)) = SECTIONS.iter().find(|(s, _)| s == key) else {
            return Err(unknown_key(None, key));
        };
        let table = value
            .as_table()
            .ok_or_else(|| ConfigError::key(*name, "must be a table, e.g. `[section]`"))?;
        if let Some(k) = table.keys().find(|k| !fields.contains(&k.as_str())) {
            return Err(unknown_key(Some(name), k));
        }
    }
    Ok(())
}

/// Parses and validates a config from TOML text.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
    check_keys(&doc)?;
    let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
        let path = match e.path().to_string() {
            p if p == "." => "(top level)".to_string(),
            p => p,
        };
        ConfigError::key(path, e.into_inner().message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

fn material_error(e: MaterialError) -> ConfigError {
    match e {
        MaterialError::InvalidParameter { name, value, reason } => {
            ConfigError::key(format!("material.{name}"), format!("{reason}, got {value}"))
        }
        other => ConfigError::key("material", other.to_string()),
    }
}

fn state_error(e: StateError) -> ConfigError {
    match e {
        StateError::Config { name, reason } => {
            let path = match name {
                "cells_per_unit_mass" => "run.resolution".to_string(),
                other => format!("scenario.{other}"),
            };
            ConfigError::key(path, reason)
        }
        other => ConfigError::key("scenario", other.to_string()),
    }
}

impl RunConfig {
    /// Minimal config: a scenario kind and a final time, defaults elsewhere.
    pub fn new(kind: Kind, t_end: f64) -> Self {
        Self {
            scenario: ScenarioSection {
                kind,
                a0: default_a0(),
                b0: default_b0(),
                epsilon: default_epsilon(),
                base: default_base(),
                amplitude: 0.0,
                velocity: 0.0,
                wavenumber: default_wavenumber(),
            },
            run: RunSection {
                t_end,
                sample_dt: default_sample_dt(),
                resolution: default_resolution(),
            },
            material: MaterialLaw::default(),
            solver: StepControl::default(),
            diagnostics: DiagnosticsSettings::default(),
            output: OutputSection::default(),
        }
    }

    fn kind_of(&self, kind: Kind) -> Result<ScenarioKind, ConfigError> {
        let sc = &self.scenario;
        Ok(match kind {
            Kind::DensityPatch => ScenarioKind::DensityPatch { a0: sc.a0, b0: sc.b0 },
            Kind::VacuumBubble => ScenarioKind::VacuumBubble { a0: sc.a0, b0: sc.b0 },
            Kind::Smooth => ScenarioKind::Smooth(SmoothProfile::new(sc.amplitude, sc.velocity, sc.wavenumber)),
            Kind::Mollified => return Err(ConfigError::key("scenario.base", "cannot mollify a mollified scenario")),
        })
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec, ConfigError> {
        let kind = match self.scenario.kind {
            Kind::Mollified => ScenarioKind::Mollified {
                base: Box::new(self.kind_of(self.scenario.base)?),
                epsilon: self.scenario.epsilon,
            },
            k => self.kind_of(k)?,
        };
        Ok(ScenarioSpec::new(kind, self.run.resolution))
    }

    /// Checks every field, including that the initial state can be built.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.run.t_end > 0.0) || !self.run.t_end.is_finite() {
            return Err(ConfigError::key("run.t_end", format!("must be > 0, got {}", self.run.t_end)));
        }
        if !(self.run.sample_dt > 0.0) || !self.run.sample_dt.is_finite() {
            return Err(ConfigError::key("run.sample_dt", format!("must be > 0, got {}", self.run.sample_dt)));
        }
        if self.output.snapshot_every == Some(0) {
            return Err(ConfigError::key("output.snapshot_every", "must be >= 1; omit it for no snapshots"));
        }
        self.material.validate().map_err(material_error)?;
        self.solver.validate().map_err(|e| match e {
            SolverError::Control(name, msg) => ConfigError::key(format!("solver.{name}"), msg),
            other => ConfigError::key("solver", other.to_string()),
        })?;
        self.diagnostics
            .validate()
            .map_err(|e| ConfigError::key("diagnostics", e.to_string()))?;
        self.scenario_spec()?.build(self.material).map_err(state_error)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}
