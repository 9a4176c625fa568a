//! The `run` command: one simulation and its output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cns1d::diagnostics::{density_bound_check, fit_trailing, write_fits_csv, write_timeseries_csv, NamedFit};
use cns1d::state::write_snapshot_file;
use cns1d::{
    advance_to, DecayFit, DiagnosticsFrame, Observer, Recorder, ScenarioKind, SimState, StepEvent, StepOutcome,
};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::CliError;

/// Frame recorder that also writes every k-th sample as a snapshot.
struct RunObserver<'a> {
    rec: Recorder,
    snapshots: Option<(usize, &'a Path)>,
    samples: usize,
    written: usize,
    snapshot_error: Option<std::io::Error>,
}

impl Observer for RunObserver<'_> {
    fn sample_interval(&self) -> Option<f64> {
        self.rec.sample_interval()
    }

    fn on_step(&mut self, before: &SimState, after: &SimState, outcome: &StepOutcome) {
        self.rec.on_step(before, after, outcome);
    }

    fn on_sample(&mut self, state: &SimState) {
        self.rec.on_sample(state);
        if let Some((every, dir)) = self.snapshots {
            if self.samples.is_multiple_of(every) && self.snapshot_error.is_none() {
                if let Err(e) = write_snapshot_file(state, dir, self.written) {
                    self.snapshot_error = Some(std::io::Error::other(e.to_string()));
                }
                self.written += 1;
            }
        }
        self.samples += 1;
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    status: String,
    wall_time_s: f64,
    steps: usize,
    t_final: f64,
    e0: f64,
    rho_star: f64,
    observed_sup_rho: f64,
    mu_ceiling_realized: f64,
    density_bound: f64,
    predicted_interface_limits: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mollifier_mass_scale: Option<f64>,
    snapshots: usize,
    config: &'a RunConfig,
}

/// What a finished run reports back to `sweep`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub fits: Vec<NamedFit>,
    pub frames: usize,
    pub steps: usize,
}

/// Fits of the decaying norms and of the interface distances to their
/// predicted limits.
pub fn decay_fits(cfg: &RunConfig, frames: &[DiagnosticsFrame], limits: &[f64]) -> Vec<NamedFit> {
    let fraction = cfg.diagnostics.fit_window_fraction;
    let fit = |series: Vec<(f64, f64)>| -> Result<DecayFit, String> { fit_trailing(&series, fraction).map_err(|e| e.to_string()) };
    let series = |f: &dyn Fn(&DiagnosticsFrame) -> f64| -> Vec<(f64, f64)> { frames.iter().map(|fr| (fr.t, f(fr))).collect() };
    let mut fits = vec![
        NamedFit {
            quantity: "norm_rho_minus_1_L2".into(),
            fit: fit(series(&|f| f.norm_rho_minus_1_l2)),
        },
        NamedFit {
            quantity: "norm_u_L2_gas".into(),
            fit: fit(series(&|f| f.norm_u_l2_gas)),
        },
    ];
    if cfg.material.is_constant_viscosity() {
        fits.push(NamedFit {
            quantity: "norm_ux_L2".into(),
            fit: fit(series(&|f| f.norm_ux_l2)),
        });
    }
    let names: &[&str] = match cfg.scenario_spec().map(|s| s.kind) {
        Ok(ScenarioKind::DensityPatch { .. }) => &["abs_a", "abs_1_minus_b"],
        Ok(ScenarioKind::VacuumBubble { .. }) => &["abs_a_minus_xinf", "abs_b_minus_xinf"],
        _ => &[],
    };
    let markers = frames.first().map_or(0, |f| f.interfaces.len());
    for (k, (name, limit)) in names.iter().zip(limits).enumerate().take(markers) {
        fits.push(NamedFit {
            quantity: name.to_string(),
            fit: fit(series(&|f| (f.interfaces[k] - limit).abs())),
        });
    }
    fits
}

fn write_events(events: &[(f64, StepEvent)], failure: Option<(f64, &str)>, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["t", "kind", "detail"])?;
    for (t, e) in events {
        let (kind, detail) = match e {
            StepEvent::ContactDetected { location, gap } => ("contact_detected", format!("location={location} gap={gap}")),
            StepEvent::StressAnomalyAtWall { location, value } => {
                ("stress_anomaly_at_wall", format!("location={location} value={value}"))
            }
            StepEvent::ContactResolved { location } => ("contact_resolved", format!("location={location}")),
        };
        w.write_record([t.to_string(), kind.to_string(), detail])?;
    }
    if let Some((t, msg)) = failure {
        w.write_record([t.to_string(), "numerical_failure".to_string(), msg.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `cfg` and writes `resolved_config.toml`, `timeseries.csv`,
/// `fits.csv`, `events.csv`, snapshots and `manifest.toml` into `out`.
/// A numerical failure still writes everything recorded up to it.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("resolved_config.toml"), cfg.to_toml())?;
    let spec = cfg.scenario_spec()?;
    let state = spec.build(cfg.material).map_err(|e| ConfigError::key("scenario", e.to_string()))?;
    let mollifier_mass_scale = match &spec.kind {
        ScenarioKind::Mollified { base, epsilon } => {
            cns1d::state::MollifiedProfile::new(base, *epsilon, spec.cells_per_unit_mass, &cfg.material)
                .ok()
                .map(|p| p.mass_scale)
        }
        _ => None,
    };

    let mut obs = RunObserver {
        rec: Recorder::new(cfg.diagnostics.clone(), Some(cfg.run.sample_dt)),
        snapshots: cfg.output.snapshot_every.map(|k| (k, out)),
        samples: 0,
        written: 0,
        snapshot_error: None,
    };
    let started = Instant::now();
    let result = advance_to(state, cfg.run.t_end, &cfg.solver, &mut obs);
    let wall_time_s = started.elapsed().as_secs_f64();
    let frames = &obs.rec.frames;

    let (status, failure) = match &result {
        Ok(_) => ("ok".to_string(), None),
        Err(e) => (format!("numerical failure: {e}"), Some(e.to_string())),
    };
    let t_final = frames.last().map_or(0.0, |f| f.t);
    write_events(&obs.rec.events, failure.as_deref().map(|m| (t_final, m)), &out.join("events.csv"))?;
    write_timeseries_csv(frames, &cfg.diagnostics, BufWriter::new(File::create(out.join("timeseries.csv"))?))?;
    let limits = spec.predicted_interface_limits();
    let fits = decay_fits(cfg, frames, &limits);
    write_fits_csv(&fits, BufWriter::new(File::create(out.join("fits.csv"))?))?;

    let first = frames.first();
    let bound = density_bound_check(frames, &cfg.material).ok();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        status,
        wall_time_s,
        steps: obs.rec.steps,
        t_final,
        e0: first.map_or(0.0, |f| f.energy),
        rho_star: first.map_or(0.0, |f| f.sup_rho),
        observed_sup_rho: bound.as_ref().map_or(0.0, |b| b.observed),
        mu_ceiling_realized: cfg
            .material
            .viscosity_ceiling(bound.as_ref().map_or(0.0, |b| b.observed)),
        density_bound: bound.as_ref().map_or(f64::NAN, |b| b.bound),
        predicted_interface_limits: limits,
        mollifier_mass_scale,
        snapshots: obs.written,
        config: cfg,
    };
    let text = toml::to_string_pretty(&manifest).expect("manifest serializes to TOML");
    std::fs::write(out.join("manifest.toml"), text)?;

    if let Some(e) = obs.snapshot_error {
        return Err(e.into());
    }
    result?;
    Ok(RunSummary {
        fits,
        frames: frames.len(),
        steps: obs.rec.steps,
    })
}

/// Output directory for a run: `--out`, then `output.dir`, then
/// `<root>/<config file stem>`.
pub fn run_dir(cli_out: Option<&Path>, cfg: &RunConfig, config_path: &Path, root: &Path) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output.dir {
        return p.clone();
    }
    let stem = config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    root.join(stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Kind, RunConfig};

    #[test]
    fn output_dir_precedence() {
        let mut cfg = RunConfig::new(Kind::Smooth, 1.0);
        let root = Path::new("/r");
        assert_eq!(run_dir(None, &cfg, Path::new("cases/a.toml"), root), PathBuf::from("/r/a"));
        cfg.output.dir = Some("d".into());
        assert_eq!(run_dir(None, &cfg, Path::new("a.toml"), root), PathBuf::from("d"));
        assert_eq!(run_dir(Some(Path::new("x")), &cfg, Path::new("a.toml"), root), PathBuf::from("x"));
    }

    #[test]
    fn equilibrium_fits_are_constant() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(Kind::Smooth, 1.0);
        cfg.run.resolution = 20;
        let summary = cmd_run(&cfg, dir.path()).unwrap();
        assert_eq!(summary.frames, 11);
        assert_eq!(summary.fits.len(), 3);
        for f in &summary.fits {
            let fit = f.fit.as_ref().unwrap();
            assert_eq!((fit.alpha, fit.r_squared), (0.0, 1.0), "{}", f.quantity);
        }
    }

    #[test]
    fn snapshots_follow_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(Kind::VacuumBubble, 0.5);
        cfg.run.resolution = 20;
        cfg.output.snapshot_every = Some(2);
        cmd_run(&cfg, dir.path()).unwrap();
        // samples at 0, 0.1, ..., 0.5: indices 0, 2, 4
        for k in 0..3 {
            assert!(dir.path().join(format!("snap_{k:06}.csv")).exists());
        }
        assert!(!dir.path().join("snap_000003.csv").exists());
        let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        assert!(manifest.contains("predicted_interface_limits = [\n    0.5,\n    0.5,\n]"), "{manifest}");
    }
}
