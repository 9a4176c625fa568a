use std::path::Path;
use std::process::{Command, Output};

fn cns1d(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cns1d"));
    cmd.args(args);
    match env_out {
        Some(p) => cmd.env("CNS1D_OUT", p),
        None => cmd.env_remove("CNS1D_OUT"),
    };
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// `(quantity, alpha)` rows of a fits.csv.
fn fit_alphas(path: &Path) -> Vec<(String, Option<f64>)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["quantity", "C", "alpha", "r2", "t_lo", "t_hi", "n"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[2].parse().ok())
        })
        .collect()
}

const PATCH_20: &str = "[scenario]\nkind = \"density_patch\"\n[run]\nt_end = 20\n";

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "smooth.toml",
        "[scenario]\nkind = \"smooth\"\namplitude = 0.3\nvelocity = 0.5\n[run]\nt_end = 0.5\nresolution = 40\n[output]\nsnapshot_every = 5\n",
    );
    let o = cns1d(&["run", "--config", &cfg], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("smooth");
    for f in ["timeseries.csv", "fits.csv", "events.csv", "manifest.toml", "resolved_config.toml", "snap_000000.csv", "snap_000001.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let ts = read(out.join("timeseries.csv"));
    assert!(ts.starts_with("t,E,D,D_cum,P,norm_rho_minus_1_L2,norm_u_L2_gas,norm_ux_L2,norm_ux_Linf,sup_rho,"));
    assert_eq!(ts.lines().count(), 1 + 6);
    assert_eq!(read(out.join("events.csv")), "t,kind,detail\n");
    let manifest = read(out.join("manifest.toml"));
    for key in ["version =", "wall_time_s =", "e0 =", "rho_star =", "mu_ceiling_realized =", "density_bound =", "[config.material]"] {
        assert!(manifest.contains(key), "manifest lacks {key}:\n{manifest}");
    }
    // the resolved config reruns to the same series
    let again = dir.path().join("again");
    let resolved = out.join("resolved_config.toml");
    let o = cns1d(&["run", "--config", resolved.to_str().unwrap(), "--out", again.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(again.join("timeseries.csv")), ts);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", "[scenario]\nkind = \"vacuum_bubble\"\n[run]\nt_end = 1\nresolution = 60\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = cns1d(&["run", "--config", &cfg, "--out", d.to_str().unwrap()], None);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(read(a.join("timeseries.csv")), read(b.join("timeseries.csv")));
    assert_eq!(read(a.join("events.csv")), read(b.join("events.csv")));
}

#[test]
fn bubble_manifest_records_predicted_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.toml", "[scenario]\nkind = \"vacuum_bubble\"\na0 = 0.25\nb0 = 0.75\n[run]\nt_end = 0.2\nresolution = 40\n");
    let o = cns1d(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: toml::Table = read(dir.path().join("o/manifest.toml")).parse().unwrap();
    let limits: Vec<f64> = m["predicted_interface_limits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_float().unwrap())
        .collect();
    assert_eq!(limits, vec![0.5, 0.5]);
    let names: Vec<String> = fit_alphas(&dir.path().join("o/fits.csv")).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["norm_rho_minus_1_L2", "norm_u_L2_gas", "norm_ux_L2", "abs_a_minus_xinf", "abs_b_minus_xinf"]);
}

#[test]
fn equilibrium_fits_report_zero_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "eq.toml", "[scenario]\nkind = \"smooth\"\n[run]\nt_end = 2\nresolution = 50\n");
    let o = cns1d(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fits = fit_alphas(&dir.path().join("o/fits.csv"));
    assert_eq!(fits.len(), 3);
    for (q, alpha) in fits {
        assert_eq!(alpha, Some(0.0), "{q}");
    }
}

#[test]
fn density_patch_reports_interface_fits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "patch.toml", PATCH_20);
    let o = cns1d(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fits = fit_alphas(&dir.path().join("o/fits.csv"));
    let names: Vec<&str> = fits.iter().map(|f| f.0.as_str()).collect();
    assert!(names.contains(&"abs_a") && names.contains(&"abs_1_minus_b"), "{names:?}");
    let events = read(dir.path().join("o/events.csv"));
    assert!(events.contains("contact_detected") && events.contains("contact_resolved"));
}

#[test]
#[ignore = "known failure: the patch reaches the walls at t ~ 0.39, so |a| and |1-b| are 0 afterwards"]
fn density_patch_interfaces_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "patch.toml", PATCH_20);
    let o = cns1d(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for (q, alpha) in fit_alphas(&dir.path().join("o/fits.csv")) {
        if q.starts_with("abs_") {
            assert!(alpha.is_some_and(|a| a > 0.0), "{q}: {alpha:?}");
        }
    }
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad_interval = write(dir.path(), "a.toml", "[scenario]\nkind = \"density_patch\"\na0 = 0.6\nb0 = 0.4\n[run]\nt_end = 1\n");
    let o = cns1d(&["run", "--config", &bad_interval], Some(dir.path()));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("scenario.a0"), "{}", stderr(&o));

    let typo = write(dir.path(), "v.toml", "viscocity = 1\n[scenario]\nkind = \"smooth\"\n[run]\nt_end = 1\n");
    let o = cns1d(&["run", "--config", &typo], Some(dir.path()));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("`material` section"), "{}", stderr(&o));

    let o = cns1d(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()], Some(dir.path()));
    assert_eq!(code(&o), 1);
    let o = cns1d(&["frobnicate"], None);
    assert_ne!(code(&o), 0);
}

#[test]
fn numerical_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // every step compresses some cell below the floor
    let cfg = write(
        dir.path(),
        "f.toml",
        "[scenario]\nkind = \"smooth\"\namplitude = 0.3\nvelocity = 0.5\n[run]\nt_end = 1\nresolution = 40\n[solver]\nv_min = 0.9\nmax_rejects = 2\n",
    );
    let out = dir.path().join("o");
    let o = cns1d(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(read(out.join("events.csv")).contains("numerical_failure"));
    assert!(read(out.join("manifest.toml")).contains("status = \"numerical failure"));
}

#[test]
fn verify_single_criterion_and_unknown_id() {
    let dir = tempfile::tempdir().unwrap();
    let o = cns1d(&["verify", "--only", "equilibrium"], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(dir.path().join("verify/acceptance.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("equilibrium,") && csv.ends_with(",true\n"));

    let o = cns1d(&["verify", "--only", "no_such_criterion"], Some(dir.path()));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown criterion"));
}

#[test]
fn verify_default_writes_full_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fresh/nested");
    let o = cns1d(&["verify", "--out", out.to_str().unwrap()], None);
    let csv = read(out.join("acceptance.csv"));
    assert_eq!(csv.lines().count(), 14);
    let any_fail = csv.lines().skip(1).any(|l| l.ends_with(",false"));
    assert_eq!(code(&o), if any_fail { 3 } else { 0 });
}

#[test]
fn sweep_over_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "[scenario]\nkind = \"density_patch\"\n[run]\nt_end = 0.5\nresolution = 40\n");
    let grid = write(dir.path(), "g.toml", "gamma = [1.4, 2, 3]\n");
    let out = dir.path().join("s");
    let o = cns1d(&["sweep", "--config", &cfg, "--grid", &grid, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read(out.join("sweep_summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4, "{summary}");
    assert!(lines[0].starts_with("gamma,dir,status,error,alpha_norm_rho_minus_1_L2"));
    assert!(lines[1].starts_with("1.4,gamma=1.4,ok,"));
    assert!(out.join("gamma=3/timeseries.csv").exists());
}

#[test]
fn sweep_empty_grid_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "[scenario]\nkind = \"density_patch\"\n[run]\nt_end = 0.2\nresolution = 20\n");
    let empty = write(dir.path(), "e.toml", "");
    let out = dir.path().join("e");
    let o = cns1d(&["sweep", "--config", &cfg, "--grid", &empty, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(out.join("sweep_summary.csv")), "dir,status,error\n");

    // a0 >= b0 fails that child only
    let grid = write(dir.path(), "g.toml", "a0 = [0.2, 0.8]\n");
    let out = dir.path().join("f");
    let o = cns1d(&["sweep", "--config", &cfg, "--grid", &grid, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read(out.join("sweep_summary.csv"));
    assert!(summary.contains("a0=0.2,ok,") && summary.contains("a0=0.8,failed,"), "{summary}");

    let bad = write(dir.path(), "bad.toml", "cfl = [0.1]\n");
    let o = cns1d(&["sweep", "--config", &cfg, "--grid", &bad], Some(dir.path()));
    assert_eq!(code(&o), 1);
}

#[test]
fn parallel_sweep_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "[scenario]\nkind = \"vacuum_bubble\"\n[run]\nt_end = 0.5\nresolution = 30\n");
    let grid = write(dir.path(), "g.toml", "gamma = [1.4, 2]\nmu_star = [0.5, 1]\nN = [20, 30]\n");
    let serial = dir.path().join("serial");
    let parallel = dir.path().join("parallel");
    for (out, workers) in [(&serial, "1"), (&parallel, "4")] {
        let o = cns1d(
            &["sweep", "--config", &cfg, "--grid", &grid, "--workers", workers, "--out", out.to_str().unwrap()],
            None,
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let summary = read(serial.join("sweep_summary.csv"));
    assert_eq!(summary.lines().count(), 9);
    assert_eq!(summary, read(parallel.join("sweep_summary.csv")));
    for entry in std::fs::read_dir(&serial).unwrap() {
        let entry = entry.unwrap();
        if entry.path().is_dir() {
            let name = entry.file_name();
            assert_eq!(
                read(entry.path().join("timeseries.csv")),
                read(parallel.join(&name).join("timeseries.csv")),
                "{name:?}"
            );
        }
    }
}

#[test]
fn help_documents_defaults() {
    let o = cns1d(&["run", "--help"], None);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("contact_policy = \"merge\"") && text.contains("fit_window_fraction = 0.5"), "{text}");
}
