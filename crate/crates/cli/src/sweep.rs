//! The `sweep` command: a config template run over a parameter grid.
//!
//! The grid is a TOML table mapping whitelisted keys to value lists:
//!
//! ```toml
//! gamma = [1.4, 2.0, 3.0]
//! N = [200, 400]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};
use crate::run::cmd_run;
use crate::CliError;

/// Keys a grid may vary, in column order.
pub const GRID_KEYS: [&str; 6] = ["gamma", "beta", "mu_star", "a0", "b0", "N"];

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// `(key, values)` in [`GRID_KEYS`] order.
    pub axes: Vec<(&'static str, Vec<f64>)>,
}

impl Grid {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        if let Some(k) = doc.keys().find(|k| !GRID_KEYS.contains(&k.as_str())) {
            let near = GRID_KEYS
                .iter()
                .map(|g| (strsim::jaro_winkler(&k.to_ascii_lowercase(), &g.to_ascii_lowercase()), g))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .filter(|(s, _)| *s >= 0.85);
            let msg = match near {
                Some((_, g)) => format!("not a sweepable key; did you mean `{g}`?"),
                None => format!("not a sweepable key; allowed: {}", GRID_KEYS.join(", ")),
            };
            return Err(ConfigError::key(format!("grid.{k}"), msg));
        }
        let mut axes = Vec::new();
        for key in GRID_KEYS {
            let Some(value) = doc.get(key) else { continue };
            let path = format!("grid.{key}");
            let list = value
                .as_array()
                .ok_or_else(|| ConfigError::key(&path, "must be a list of numbers"))?;
            let values = list
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(i) => Ok(*i as f64),
                    toml::Value::Float(f) => Ok(*f),
                    _ => Err(ConfigError::key(&path, "must be a list of numbers")),
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if key == "N" && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                return Err(ConfigError::key(&path, "must hold positive integers"));
            }
            axes.push((key, values));
        }
        Ok(Self { axes })
    }

    /// All combinations, first axis slowest. An empty grid has none.
    pub fn points(&self) -> Vec<Vec<f64>> {
        if self.axes.is_empty() {
            return Vec::new();
        }
        let mut points = vec![Vec::new()];
        for (_, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    /// Subdirectory name of a grid point, e.g. `gamma=1.4_N=200`.
    pub fn dir_name(&self, point: &[f64]) -> String {
        self.axes
            .iter()
            .zip(point)
            .map(|((k, _), v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("_")
    }

    pub fn apply(&self, template: &RunConfig, point: &[f64]) -> RunConfig {
        let mut cfg = template.clone();
        cfg.output.dir = None;
        for ((key, _), &v) in self.axes.iter().zip(point) {
            match *key {
                "gamma" => cfg.material.gamma = v,
                "beta" => cfg.material.beta = v,
                "mu_star" => cfg.material.mu_star = v,
                "a0" => cfg.scenario.a0 = v,
                "b0" => cfg.scenario.b0 = v,
                "N" => cfg.run.resolution = v as usize,
                _ => unreachable!("grid keys are validated on parse"),
            }
        }
        cfg
    }
}

/// Outcome of one grid point.
#[derive(Debug, Clone)]
struct Child {
    point: Vec<f64>,
    dir: String,
    result: Result<Vec<(String, Option<f64>)>, String>,
}

/// Runs every grid point in `out/<dir_name>` using up to `workers` threads
/// and writes `out/sweep_summary.csv`. Child failures are recorded as rows.
pub fn cmd_sweep(template: &RunConfig, grid: &Grid, out: &Path, workers: usize) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)?;
    let run_point = |point: Vec<f64>| -> Child {
        let dir = grid.dir_name(&point);
        let cfg = grid.apply(template, &point);
        let result = cmd_run(&cfg, &out.join(&dir))
            .map(|s| {
                s.fits
                    .into_iter()
                    .map(|f| (f.quantity, f.fit.ok().map(|x| x.alpha)))
                    .collect()
            })
            .map_err(|e| e.to_string());
        Child { point, dir, result }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let children: Vec<Child> = pool.install(|| grid.points().into_par_iter().map(run_point).collect());

    let mut quantities: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for c in &children {
        for (q, _) in c.result.iter().flatten() {
            if seen.insert(q.clone()) {
                quantities.push(q.clone());
            }
        }
    }
    let path = out.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = grid.axes.iter().map(|(k, _)| k.to_string()).collect();
    header.extend(["dir", "status", "error"].map(String::from));
    header.extend(quantities.iter().map(|q| format!("alpha_{q}")));
    w.write_record(&header)?;
    for c in &children {
        let mut row: Vec<String> = c.point.iter().map(|v| v.to_string()).collect();
        row.push(c.dir.clone());
        match &c.result {
            Ok(alphas) => {
                row.push("ok".into());
                row.push(String::new());
                for q in &quantities {
                    let a = alphas.iter().find(|(name, _)| name == q).and_then(|(_, a)| *a);
                    row.push(a.map(|a| a.to_string()).unwrap_or_default());
                }
            }
            Err(e) => {
                row.push("failed".into());
                row.push(e.clone());
                row.extend(quantities.iter().map(|_| String::new()));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_and_names() {
        let g = Grid::parse("N = [10, 20]\ngamma = [1.4, 2]\n").unwrap();
        assert_eq!(g.axes.iter().map(|a| a.0).collect::<Vec<_>>(), vec!["gamma", "N"]);
        let pts = g.points();
        assert_eq!(pts, vec![vec![1.4, 10.0], vec![1.4, 20.0], vec![2.0, 10.0], vec![2.0, 20.0]]);
        assert_eq!(g.dir_name(&pts[1]), "gamma=1.4_N=20");
        assert!(Grid::parse("").unwrap().points().is_empty());
    }

    #[test]
    fn grid_rejects_unknown_and_bad_values() {
        match Grid::parse("gama = [1]") {
            Err(ConfigError::Key { path, message }) => {
                assert_eq!(path, "grid.gama");
                assert!(message.contains("`gamma`"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(Grid::parse("cfl = [0.1]").is_err());
        assert!(Grid::parse("N = [10.5]").is_err());
        assert!(Grid::parse("gamma = 2").is_err());
        assert!(Grid::parse("gamma = [\"2\"]").is_err());
    }

    #[test]
    fn apply_sets_whitelisted_fields() {
        let g = Grid::parse("gamma = [3]\nbeta = [0.5]\nmu_star = [2]\na0 = [0.2]\nb0 = [0.7]\nN = [50]").unwrap();
        let mut template = RunConfig::new(crate::config::Kind::DensityPatch, 1.0);
        template.output.dir = Some("ignored".into());
        let cfg = g.apply(&template, &g.points()[0]);
        assert_eq!(
            (cfg.material.gamma, cfg.material.beta, cfg.material.mu_star),
            (3.0, 0.5, 2.0)
        );
        assert_eq!((cfg.scenario.a0, cfg.scenario.b0, cfg.run.resolution), (0.2, 0.7, 50));
        assert_eq!(cfg.output.dir, None);
    }
}
