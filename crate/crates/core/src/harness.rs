//! Verification: an explicit oracle integrator, refinement studies and the
//! scripted acceptance suite.
//!
//! The oracle shares the spatial operator (cell stresses, lumped masses)
//! with the production stepper but none of its time integration.

use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::diagnostics::{
    self, density_bound_check, energy_balance_residual, fit_exponential, trajectory_invariant, DecayFit,
    DiagnosticsFrame, DiagnosticsSettings, Recorder,
};
use crate::material::MaterialLaw;
use crate::solver::{advance_with, stress, Fault, Observer, SolverError, StepControl, StepOutcome};
use crate::state::{BoundaryKind, ScenarioKind, ScenarioSpec, SimState, SmoothProfile, StateError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown criterion `{0}`")]
    UnknownCriterion(String),
    #[error("refinement study needs at least two increasing resolutions, got {0:?}")]
    Resolutions(Vec<usize>),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// oracle

/// Time derivatives of `(u, w, x)` per component.
struct Rates {
    du: Vec<Vec<f64>>,
    dw: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
}

fn rates(s: &SimState) -> Rates {
    let mut r = Rates {
        du: Vec::with_capacity(s.components.len()),
        dw: Vec::with_capacity(s.components.len()),
        dx: Vec::with_capacity(s.components.len()),
    };
    for c in &s.components {
        let n = c.cells();
        let sigma: Vec<f64> = (0..n).map(|i| stress(&s.law, c, i)).collect();
        let mut du = vec![0.0; n + 1];
        for j in 1..n {
            du[j] = (sigma[j] - sigma[j - 1]) / c.node_mass(j);
        }
        if c.left_bc == BoundaryKind::FreeVacuum {
            du[0] = sigma[0] / c.node_mass(0);
        }
        if c.right_bc == BoundaryKind::FreeVacuum {
            du[n] = -sigma[n - 1] / c.node_mass(n);
        }
        r.du.push(du);
        r.dw.push((0..n).map(|i| (c.u[i + 1] - c.u[i]) / c.dm[i]).collect());
        r.dx.push(c.u.clone());
    }
    r
}

/// `s + h * r`, or `None` if a specific volume stops being positive.
fn shifted(s: &SimState, h: f64, r: &Rates) -> Option<SimState> {
    let mut out = s.clone();
    out.t = s.t + h;
    for (k, c) in out.components.iter_mut().enumerate() {
        for (u, du) in c.u.iter_mut().zip(&r.du[k]) {
            *u += h * du;
        }
        for (w, dw) in c.w.iter_mut().zip(&r.dw[k]) {
            *w += h * dw;
            if !(1.0 + *w > 0.0) || !w.is_finite() {
                return None;
            }
        }
        for (x, dx) in c.x.iter_mut().zip(&r.dx[k]) {
            *x += h * dx;
        }
    }
    Some(out)
}

/// Largest explicit sub-step: a quarter of the diffusive limit
/// `(v dm)^2 / (mu v)` and half the acoustic one.
fn oracle_substep(s: &SimState) -> f64 {
    let mut h = f64::INFINITY;
    for c in &s.components {
        for i in 0..c.cells() {
            let rho = c.density(i);
            let len = c.cell_length(i);
            h = h.min(0.25 * len * len / (s.law.mu(rho) * c.specific_volume(i)));
            let speed = s.law.signal_speed(rho);
            if speed > 0.0 {
                h = h.min(0.5 * c.dm[i] / speed);
            }
        }
    }
    h
}

/// Explicit midpoint update over `dt`, sub-stepped below the explicit
/// stability limits. No contact handling.
pub fn oracle_step(s: &SimState, dt: f64) -> Result<SimState, SolverError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SolverError::Time(format!("step size must be positive, got {dt}")));
    }
    let t_end = s.t + dt;
    let mut cur = s.clone();
    let mut remaining = dt;
    while remaining > 0.0 {
        let subs = (remaining / oracle_substep(&cur)).ceil().max(1.0);
        let h = remaining / subs;
        let reject = |t: f64| SolverError::StepRejected {
            t,
            dt: h,
            rejects: 0,
            reason: "oracle produced a non-positive specific volume".into(),
        };
        let half = shifted(&cur, 0.5 * h, &rates(&cur)).ok_or_else(|| reject(cur.t))?;
        let mut next = shifted(&cur, h, &rates(&half)).ok_or_else(|| reject(cur.t))?;
        remaining = t_end - next.t;
        if subs == 1.0 || remaining <= 1e-14 * dt {
            next.t = t_end;
            remaining = 0.0;
        }
        cur = next;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// run records

/// Per-step monitors on top of the frame recorder.
struct Monitor {
    rec: Recorder,
    track_w: bool,
    last_w: Option<Vec<f64>>,
    /// `max (W_i(t + dt) - W_i(t)) / (1 + |W_i(t)|)` over steps and cells.
    w_rise: f64,
    max_abs_u: f64,
    sup_sqrt_t_strain: f64,
    flux_gradient_integral: f64,
    last_flux_term: Option<(f64, f64)>,
}

impl Monitor {
    fn new(interval: f64, track_w: bool) -> Self {
        Self {
            rec: Recorder::new(DiagnosticsSettings::default(), Some(interval)),
            track_w,
            last_w: None,
            w_rise: f64::NEG_INFINITY,
            max_abs_u: 0.0,
            sup_sqrt_t_strain: 0.0,
            flux_gradient_integral: 0.0,
            last_flux_term: None,
        }
    }

    fn flux_term(s: &SimState) -> (f64, f64) {
        (s.t, s.t * diagnostics::flux_gradient_norm(s).powi(2))
    }
}

impl Observer for Monitor {
    fn sample_interval(&self) -> Option<f64> {
        self.rec.sample_interval()
    }

    fn on_step(&mut self, before: &SimState, after: &SimState, outcome: &StepOutcome) {
        self.rec.on_step(before, after, outcome);
        if self.track_w {
            let w0 = self.last_w.take().unwrap_or_else(|| trajectory_invariant(before));
            let w1 = trajectory_invariant(after);
            for (a, b) in w0.iter().zip(&w1) {
                self.w_rise = self.w_rise.max((b - a) / (1.0 + a.abs()));
            }
            self.last_w = Some(w1);
        }
        for c in &after.components {
            self.max_abs_u = c.u.iter().fold(self.max_abs_u, |m, u| m.max(u.abs()));
        }
        self.sup_sqrt_t_strain = self.sup_sqrt_t_strain.max(after.t.sqrt() * diagnostics::strain_sup(after));
        let (t0, f0) = self.last_flux_term.unwrap_or_else(|| Self::flux_term(before));
        let (t1, f1) = Self::flux_term(after);
        self.flux_gradient_integral += 0.5 * (t1 - t0) * (f0 + f1);
        self.last_flux_term = Some((t1, f1));
    }

    fn on_sample(&mut self, state: &SimState) {
        self.rec.on_sample(state);
    }
}

/// Everything the criteria read from one run.
#[derive(Debug, Clone)]
struct RunRecord {
    law: MaterialLaw,
    frames: Vec<DiagnosticsFrame>,
    end: SimState,
    w_rise: f64,
    max_abs_u: f64,
    sup_sqrt_t_strain: f64,
}

impl RunRecord {
    fn series(&self, f: impl Fn(&DiagnosticsFrame) -> f64) -> Vec<(f64, f64)> {
        self.frames.iter().map(|fr| (fr.t, f(fr))).collect()
    }

    fn frame_at(&self, t: f64) -> Option<&DiagnosticsFrame> {
        self.frames.iter().find(|f| (f.t - t).abs() < 1e-9)
    }
}

#[derive(Debug, Clone)]
struct RunSpec {
    kind: ScenarioKind,
    n: usize,
    t_end: f64,
    sample: f64,
    cfl: f64,
    track_w: bool,
    fault: Fault,
}

impl RunSpec {
    fn new(kind: ScenarioKind, n: usize, t_end: f64, sample: f64) -> Self {
        Self {
            kind,
            n,
            t_end,
            sample,
            cfl: StepControl::default().cfl,
            track_w: false,
            fault: Fault::NONE,
        }
    }

    fn execute(&self) -> Result<RunRecord, String> {
        let law = MaterialLaw::default();
        let s = ScenarioSpec::new(self.kind.clone(), self.n).build(law).map_err(|e| e.to_string())?;
        let ctl = StepControl::with_cfl(self.cfl);
        let mut mon = Monitor::new(self.sample, self.track_w);
        let end = advance_with(s, self.t_end, &ctl, &mut mon, self.fault).map_err(|e| e.to_string())?;
        Ok(RunRecord {
            law,
            frames: mon.rec.frames,
            end,
            w_rise: mon.w_rise,
            max_abs_u: mon.max_abs_u,
            sup_sqrt_t_strain: mon.sup_sqrt_t_strain,
        })
    }
}

type Shared = OnceLock<Result<Arc<RunRecord>, String>>;

/// Runs shared between criteria, each computed at most once.
#[derive(Default)]
struct Runs {
    equilibrium: Shared,
    equilibrium_faulty: Shared,
    smooth: [Shared; 2],
    smooth_faulty: [Shared; 2],
    patch: Shared,
    patch_w: Shared,
    bubble: Shared,
    bubble_reg: [Shared; 2],
    sharp_800: Shared,
    mollified: [Shared; 3],
}

fn fetch(cell: &Shared, spec: impl FnOnce() -> RunSpec) -> Result<Arc<RunRecord>, String> {
    cell.get_or_init(|| spec().execute().map(Arc::new)).clone()
}

const PATCH: ScenarioKind = ScenarioKind::DensityPatch { a0: 0.25, b0: 0.75 };
const BUBBLE: ScenarioKind = ScenarioKind::VacuumBubble { a0: 0.25, b0: 0.75 };
const SMOOTH: SmoothProfile = SmoothProfile {
    amplitude: 0.3,
    velocity: 0.5,
    wavenumber: 1,
};
const MOLLIFIER_EPS: [f64; 3] = [0.04, 0.02, 0.01];
const REG_RESOLUTIONS: [usize; 2] = [200, 400];

impl Runs {
    fn equilibrium(&self, fault: Fault) -> Result<Arc<RunRecord>, String> {
        let cell = if fault.flip_pressure { &self.equilibrium_faulty } else { &self.equilibrium };
        fetch(cell, || RunSpec {
            fault,
            ..RunSpec::new(ScenarioKind::Smooth(SmoothProfile::new(0.0, 0.0, 1)), 100, 10.0, 0.1)
        })
    }

    fn smooth(&self, k: usize, fault: Fault) -> Result<Arc<RunRecord>, String> {
        let cells = if fault.flip_pressure { &self.smooth_faulty } else { &self.smooth };
        fetch(&cells[k], || RunSpec {
            cfl: [0.4, 0.2][k],
            fault,
            ..RunSpec::new(ScenarioKind::Smooth(SMOOTH), 400, 1.0, 0.01)
        })
    }

    fn patch(&self) -> Result<Arc<RunRecord>, String> {
        fetch(&self.patch, || RunSpec::new(PATCH, 200, 20.0, 0.1))
    }

    fn patch_w(&self) -> Result<Arc<RunRecord>, String> {
        fetch(&self.patch_w, || RunSpec {
            track_w: true,
            ..RunSpec::new(PATCH, 400, 5.0, 0.1)
        })
    }

    fn bubble(&self) -> Result<Arc<RunRecord>, String> {
        fetch(&self.bubble, || RunSpec {
            track_w: true,
            ..RunSpec::new(BUBBLE, 400, 30.0, 0.1)
        })
    }

    fn bubble_reg(&self, k: usize) -> Result<Arc<RunRecord>, String> {
        fetch(&self.bubble_reg[k], || RunSpec::new(BUBBLE, REG_RESOLUTIONS[k], 2.0, 0.5))
    }

    fn sharp_800(&self) -> Result<Arc<RunRecord>, String> {
        fetch(&self.sharp_800, || RunSpec::new(PATCH, 800, 5.0, 0.5))
    }

    fn mollified(&self, k: usize) -> Result<Arc<RunRecord>, String> {
        fetch(&self.mollified[k], || {
            let kind = ScenarioKind::Mollified {
                base: Box::new(PATCH),
                epsilon: MOLLIFIER_EPS[k],
            };
            RunSpec::new(kind, 800, 5.0, 0.5)
        })
    }
}

// ---------------------------------------------------------------------------
// refinement

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementQuantity {
    /// `max_t |E + D_cum - E0| / E0`; must shrink under refinement.
    EnergyResidual,
    /// `sup_t sqrt(t) ||u_x||_inf`; must stay bounded.
    SqrtTStrainSup,
    /// `int_0^T t ||d_x G||^2 dt`; must stay bounded.
    TimeWeightedFluxGradient,
}

impl RefinementQuantity {
    pub fn name(self) -> &'static str {
        match self {
            Self::EnergyResidual => "energy_residual",
            Self::SqrtTStrainSup => "sup_sqrt_t_ux_inf",
            Self::TimeWeightedFluxGradient => "int_t_dxG_sq",
        }
    }

    fn is_residual(self) -> bool {
        self == Self::EnergyResidual
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRow {
    pub quantity: RefinementQuantity,
    /// One terminal value per resolution.
    pub values: Vec<f64>,
    /// `values[k + 1] / values[k]`.
    pub ratios: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub resolutions: Vec<usize>,
    pub rows: Vec<RefinementRow>,
    pub pass: bool,
}

/// Runs `spec` at every resolution up to `t_end` and compares the requested
/// quantities. Residuals pass when they decrease strictly; regularity
/// quantities pass when the finest pair stays within a factor 2.
pub fn refinement_study(
    spec: &ScenarioSpec,
    law: MaterialLaw,
    ctl: &StepControl,
    resolutions: &[usize],
    t_end: f64,
    quantities: &[RefinementQuantity],
) -> Result<RefinementReport, HarnessError> {
    if resolutions.len() < 2 || resolutions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Resolutions(resolutions.to_vec()));
    }
    let mut values = vec![Vec::with_capacity(resolutions.len()); quantities.len()];
    if !quantities.is_empty() {
        for &n in resolutions {
            let s = ScenarioSpec::new(spec.kind.clone(), n).build(law)?;
            let mut mon = Monitor::new(t_end / 100.0, false);
            advance_with(s, t_end, ctl, &mut mon, Fault::NONE)?;
            for (q, out) in quantities.iter().zip(values.iter_mut()) {
                out.push(match q {
                    RefinementQuantity::EnergyResidual => energy_balance_residual(&mon.rec.frames)?,
                    RefinementQuantity::SqrtTStrainSup => mon.sup_sqrt_t_strain,
                    RefinementQuantity::TimeWeightedFluxGradient => mon.flux_gradient_integral,
                });
            }
        }
    }
    let rows: Vec<RefinementRow> = quantities
        .iter()
        .zip(values)
        .map(|(&quantity, values)| {
            let ratios: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
            let pass = if quantity.is_residual() {
                values.windows(2).all(|w| w[1] < w[0])
            } else {
                ratios.last().is_some_and(|r| (0.5..=2.0).contains(r))
            };
            RefinementRow {
                quantity,
                values,
                ratios,
                pass,
            }
        })
        .collect();
    Ok(RefinementReport {
        resolutions: resolutions.to_vec(),
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

// ---------------------------------------------------------------------------
// acceptance

/// Criterion ids in suite order.
pub const CRITERIA: [&str; 13] = [
    "equilibrium",
    "energy_balance",
    "momentum",
    "density_bound",
    "trajectory_invariant",
    "norm_decay",
    "interface_dynamics",
    "gradient_decay",
    "lyapunov",
    "flux_regularity",
    "oracle",
    "mollification",
    "fault_detection",
];

/// Resolves a criterion by name or by its 1-based number.
pub fn criterion_id(key: &str) -> Option<&'static str> {
    if let Ok(k) = key.parse::<usize>() {
        return k.checked_sub(1).and_then(|i| CRITERIA.get(i)).copied();
    }
    CRITERIA.iter().find(|c| **c == key).copied()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: &'static str,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
}

impl CriterionResult {
    fn new(id: &'static str, measured: String, threshold: &str, pass: bool) -> Self {
        Self {
            id,
            measured,
            threshold: threshold.to_string(),
            pass,
        }
    }

    fn failed_run(id: &'static str, threshold: &str, err: String) -> Self {
        Self::new(id, format!("run failed: {err}"), threshold, false)
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<22} measured: {} | threshold: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.measured,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceReport {
    pub results: Vec<CriterionResult>,
}

impl AcceptanceReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, id: &str) -> Option<&CriterionResult> {
        self.results.iter().find(|r| r.id == id)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "measured", "threshold", "pass"])?;
        for r in &self.results {
            w.write_record([r.id, &r.measured, &r.threshold, if r.pass { "true" } else { "false" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

macro_rules! run_or_fail {
    ($id:expr, $threshold:expr, $run:expr) => {
        match $run {
            Ok(r) => r,
            Err(e) => return CriterionResult::failed_run($id, $threshold, e),
        }
    };
}

fn fmt_fit(fit: &Result<DecayFit, String>) -> String {
    match fit {
        Ok(f) => format!("alpha={:.4} r2={:.5}", f.alpha, f.r_squared),
        Err(e) => format!("no fit ({e})"),
    }
}

fn decays(fit: &Result<DecayFit, String>, r2_min: f64) -> bool {
    fit.as_ref().is_ok_and(|f| f.alpha > 0.0 && f.r_squared >= r2_min)
}

fn fit_window(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit, String> {
    fit_exponential(series, window).map_err(|e| e.to_string())
}

fn fit_default(series: &[(f64, f64)]) -> Result<DecayFit, String> {
    diagnostics::fit_trailing(series, DiagnosticsSettings::default().fit_window_fraction).map_err(|e| e.to_string())
}

fn frame_values(f: &DiagnosticsFrame) -> Vec<f64> {
    let mut v = vec![
        f.energy,
        f.dissipation,
        f.dissipation_cum,
        f.momentum,
        f.norm_rho_minus_1_l2,
        f.norm_u_l2_gas,
        f.norm_ux_l2,
        f.norm_ux_linf,
        f.sup_rho,
        f.gas_measure,
        f.g_max_jump,
        f.lyap_basic,
    ];
    v.extend(f.wall_stress.iter().flatten());
    v.extend(f.lyap_e1.iter().flatten());
    v.extend(&f.interfaces);
    v
}

fn equilibrium(runs: &Runs, fault: Fault) -> CriterionResult {
    const ID: &str = "equilibrium";
    const THRESHOLD: &str = "max frame deviation <= 1e-12";
    let run = run_or_fail!(ID, THRESHOLD, runs.equilibrium(fault));
    let first = frame_values(&run.frames[0]);
    let dev = run
        .frames
        .iter()
        .flat_map(|f| frame_values(f).into_iter().zip(first.clone()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    CriterionResult::new(ID, format!("max deviation {dev:.3e} over {} frames", run.frames.len()), THRESHOLD, dev <= 1e-12)
}

fn energy_balance(runs: &Runs, fault: Fault) -> CriterionResult {
    const ID: &str = "energy_balance";
    const THRESHOLD: &str = "residual(cfl 0.4) <= 1e-3; residual(cfl 0.2)/residual(cfl 0.4) in [0.3, 0.7]";
    let coarse = run_or_fail!(ID, THRESHOLD, runs.smooth(0, fault));
    let fine = run_or_fail!(ID, THRESHOLD, runs.smooth(1, fault));
    let (r1, r2) = match (energy_balance_residual(&coarse.frames), energy_balance_residual(&fine.frames)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return CriterionResult::failed_run(ID, THRESHOLD, e.to_string()),
    };
    let ratio = r2 / r1;
    CriterionResult::new(
        ID,
        format!("residual {r1:.3e}, halved cfl {r2:.3e}, ratio {ratio:.3}"),
        THRESHOLD,
        r1 <= 1e-3 && (0.3..=0.7).contains(&ratio),
    )
}

fn momentum(runs: &Runs) -> CriterionResult {
    const ID: &str = "momentum";
    const THRESHOLD: &str = "patch |P| <= 1e-12 (1 + max|u|); bubble |P| <= 1e-10";
    let patch = run_or_fail!(ID, THRESHOLD, runs.patch());
    let bubble = run_or_fail!(ID, THRESHOLD, runs.bubble());
    let p_patch = patch.frames.iter().map(|f| f.momentum.abs()).fold(0.0, f64::max);
    let p_bubble = bubble.frames.iter().map(|f| f.momentum.abs()).fold(0.0, f64::max);
    let limit = 1e-12 * (1.0 + patch.max_abs_u);
    CriterionResult::new(
        ID,
        format!("patch max|P| {p_patch:.3e} (limit {limit:.3e}), bubble max|P| {p_bubble:.3e}"),
        THRESHOLD,
        p_patch <= limit && p_bubble <= 1e-10,
    )
}

fn density_bound(runs: &Runs) -> CriterionResult {
    const ID: &str = "density_bound";
    const THRESHOLD: &str = "sup rho <= 1.05 exp(ln rho* + 2 E0) on every scenario";
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let named: [(&str, Result<Arc<RunRecord>, String>); 4] = [
        ("patch", runs.patch()),
        ("bubble", runs.bubble()),
        ("smooth", runs.smooth(0, Fault::NONE)),
        ("mollified", runs.mollified(1)),
    ];
    let mut pass = true;
    for (name, run) in named {
        let run = run_or_fail!(ID, THRESHOLD, run);
        match density_bound_check(&run.frames, &run.law) {
            Ok(b) => {
                worst = worst.max(b.observed / b.bound);
                pass &= b.pass;
                parts.push(format!("{name} {:.4}/{:.4}", b.observed, b.bound));
            }
            Err(e) => return CriterionResult::failed_run(ID, THRESHOLD, e.to_string()),
        }
    }
    CriterionResult::new(ID, format!("worst ratio {worst:.4} ({})", parts.join(", ")), THRESHOLD, pass)
}

fn trajectory(runs: &Runs) -> CriterionResult {
    const ID: &str = "trajectory_invariant";
    const THRESHOLD: &str = "per-step rise of W_i <= 1e-3 (1 + |W_i|)";
    let patch = run_or_fail!(ID, THRESHOLD, runs.patch_w());
    let bubble = run_or_fail!(ID, THRESHOLD, runs.bubble());
    let worst = patch.w_rise.max(bubble.w_rise);
    CriterionResult::new(
        ID,
        format!("worst relative rise: patch {:.3e}, bubble {:.3e}", patch.w_rise, bubble.w_rise),
        THRESHOLD,
        worst <= 1e-3,
    )
}

fn norm_decay(runs: &Runs) -> CriterionResult {
    const ID: &str = "norm_decay";
    const THRESHOLD: &str = "fits on [15, 30]: alpha > 0, R^2 >= 0.97";
    let run = run_or_fail!(ID, THRESHOLD, runs.bubble());
    let rho = fit_window(&run.series(|f| f.norm_rho_minus_1_l2), (15.0, 30.0));
    let u = fit_window(&run.series(|f| f.norm_u_l2_gas), (15.0, 30.0));
    CriterionResult::new(
        ID,
        format!("||rho-1||: {}; ||u||: {}", fmt_fit(&rho), fmt_fit(&u)),
        THRESHOLD,
        decays(&rho, 0.97) && decays(&u, 0.97),
    )
}

fn monotone(series: &[(f64, f64)], from: f64, increasing: bool) -> bool {
    let tail: Vec<f64> = series.iter().filter(|p| p.0 >= from).map(|p| p.1).collect();
    tail.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] })
}

fn interface_dynamics(runs: &Runs) -> CriterionResult {
    const ID: &str = "interface_dynamics";
    const THRESHOLD: &str =
        "patch |a|, |1-b| and bubble |a-0.5|, |b-0.5| fit alpha > 0, R^2 >= 0.97; a down, b up for t >= 1; bubble alphas within 20%";
    let patch = run_or_fail!(ID, THRESHOLD, runs.patch());
    let bubble = run_or_fail!(ID, THRESHOLD, runs.bubble());
    let a = patch.series(|f| f.interfaces[0]);
    let b = patch.series(|f| f.interfaces[1]);
    let fa = fit_default(&a.iter().map(|&(t, x)| (t, x.abs())).collect::<Vec<_>>());
    let fb = fit_default(&b.iter().map(|&(t, x)| (t, (1.0 - x).abs())).collect::<Vec<_>>());
    let limit = ScenarioSpec::new(BUBBLE, 400).predicted_interface_limits()[0];
    let ga = fit_default(&bubble.series(|f| (f.interfaces[0] - limit).abs()));
    let gb = fit_default(&bubble.series(|f| (f.interfaces[1] - limit).abs()));
    let monotone_ok = monotone(&a, 1.0, false) && monotone(&b, 1.0, true);
    let symmetric = match (&ga, &gb) {
        (Ok(x), Ok(y)) => (x.alpha - y.alpha).abs() <= 0.2 * x.alpha.abs().max(y.alpha.abs()),
        _ => false,
    };
    let pass = decays(&fa, 0.97) && decays(&fb, 0.97) && decays(&ga, 0.97) && decays(&gb, 0.97) && monotone_ok && symmetric;
    let last = patch.frames.last().map(|f| f.interfaces.clone()).unwrap_or_default();
    CriterionResult::new(
        ID,
        format!(
            "patch a(20)={:.3e} b(20)={:.15}: |a| {}; |1-b| {}; monotone {monotone_ok}; bubble limit {limit}: |a-x| {}; |b-x| {}",
            last.first().copied().unwrap_or(f64::NAN),
            last.get(1).copied().unwrap_or(f64::NAN),
            fmt_fit(&fa),
            fmt_fit(&fb),
            fmt_fit(&ga),
            fmt_fit(&gb)
        ),
        THRESHOLD,
        pass,
    )
}

fn gradient_decay(runs: &Runs) -> CriterionResult {
    const ID: &str = "gradient_decay";
    const THRESHOLD: &str = "||u_x|| fit on [15, 30]: alpha > 0, R^2 >= 0.95";
    let run = run_or_fail!(ID, THRESHOLD, runs.bubble());
    let fit = fit_window(&run.series(|f| f.norm_ux_l2), (15.0, 30.0));
    CriterionResult::new(ID, fmt_fit(&fit), THRESHOLD, decays(&fit, 0.95))
}

fn lyapunov(runs: &Runs) -> CriterionResult {
    const ID: &str = "lyapunov";
    const THRESHOLD: &str = "lyap_basic non-increasing for t >= 1 within 1e-6 |value(1)|; lyap_E1 non-increasing for some A2";
    let run = run_or_fail!(ID, THRESHOLD, runs.bubble());
    let tail: Vec<&DiagnosticsFrame> = run.frames.iter().filter(|f| f.t >= 1.0 - 1e-9).collect();
    let slack = 1e-6 * tail.first().map_or(0.0, |f| f.lyap_basic.abs());
    let basic_rise = tail
        .windows(2)
        .map(|w| w[1].lyap_basic - w[0].lyap_basic)
        .fold(f64::NEG_INFINITY, f64::max);
    let a2 = DiagnosticsSettings::default().a2;
    let e1_ok: Vec<bool> = (0..a2.len())
        .map(|k| {
            tail.windows(2).all(|w| match (&w[0].lyap_e1, &w[1].lyap_e1) {
                (Some(x), Some(y)) => y[k] <= x[k],
                _ => false,
            })
        })
        .collect();
    let pass = basic_rise <= slack && e1_ok.iter().any(|b| *b);
    let e1_desc: Vec<String> = a2.iter().zip(&e1_ok).map(|(a, ok)| format!("A2={a}:{ok}")).collect();
    CriterionResult::new(
        ID,
        format!("max lyap_basic rise {basic_rise:.3e} (slack {slack:.3e}); E1 monotone {}", e1_desc.join(" ")),
        THRESHOLD,
        pass,
    )
}

fn flux_regularity(runs: &Runs) -> CriterionResult {
    const ID: &str = "flux_regularity";
    const THRESHOLD: &str = "G_max_jump(t=0.5) ratio N400/N200 <= 0.75; sup sqrt(t)||u_x||_inf ratio in [0.5, 2]";
    let coarse = run_or_fail!(ID, THRESHOLD, runs.bubble_reg(0));
    let fine = run_or_fail!(ID, THRESHOLD, runs.bubble_reg(1));
    let (Some(g0), Some(g1)) = (coarse.frame_at(0.5), fine.frame_at(0.5)) else {
        return CriterionResult::failed_run(ID, THRESHOLD, "no frame at t = 0.5".into());
    };
    let jump_ratio = g1.g_max_jump / g0.g_max_jump;
    let sup_ratio = fine.sup_sqrt_t_strain / coarse.sup_sqrt_t_strain;
    CriterionResult::new(
        ID,
        format!(
            "G_max_jump {:.4e} -> {:.4e} (ratio {jump_ratio:.3}); sup sqrt(t)|u_x| {:.4} -> {:.4} (ratio {sup_ratio:.3})",
            g0.g_max_jump, g1.g_max_jump, coarse.sup_sqrt_t_strain, fine.sup_sqrt_t_strain
        ),
        THRESHOLD,
        jump_ratio <= 0.75 && (0.5..=2.0).contains(&sup_ratio),
    )
}

/// Solver at `cfl` and oracle, both on the smooth scenario with `n` cells,
/// compared at `t_end`. Returns the sup differences in `u` and `v`.
fn oracle_difference(n: usize, t_end: f64, cfl: f64) -> Result<(f64, f64), HarnessError> {
    let law = MaterialLaw::default();
    let s = ScenarioSpec::new(ScenarioKind::Smooth(SMOOTH), n).build(law)?;
    let solved = advance_with(s.clone(), t_end, &StepControl::with_cfl(cfl), &mut crate::solver::NoObserver, Fault::NONE)?;
    let mut oracle = s;
    let chunks = 10;
    for k in 1..=chunks {
        let target = t_end * k as f64 / chunks as f64;
        oracle = oracle_step(&oracle, target - oracle.t)?;
    }
    let (a, b) = (&solved.components[0], &oracle.components[0]);
    let du = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let dv = a.w.iter().zip(&b.w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok((du, dv))
}

fn oracle(_: &Runs) -> CriterionResult {
    const ID: &str = "oracle";
    const THRESHOLD: &str = "L_inf(u), L_inf(v) <= 1e-4";
    match oracle_difference(50, 0.1, 0.05) {
        Ok((du, dv)) => CriterionResult::new(ID, format!("L_inf(u) {du:.3e}, L_inf(v) {dv:.3e}"), THRESHOLD, du <= 1e-4 && dv <= 1e-4),
        Err(e) => CriterionResult::failed_run(ID, THRESHOLD, e.to_string()),
    }
}

/// Outermost node positions of cells denser than `threshold`.
fn dense_support(s: &SimState, threshold: f64) -> Option<(f64, f64)> {
    let mut lo = None;
    let mut hi = None;
    for c in &s.components {
        for i in 0..c.cells() {
            if c.density(i) > threshold {
                lo.get_or_insert(c.x[i]);
                hi = Some(c.x[i + 1]);
            }
        }
    }
    lo.zip(hi)
}

fn mollification(runs: &Runs) -> CriterionResult {
    const ID: &str = "mollification";
    const THRESHOLD: &str = "distance to sharp a(5), b(5) non-increasing as eps shrinks; final <= 0.02";
    let sharp = run_or_fail!(ID, THRESHOLD, runs.sharp_800());
    let ends = sharp.end.marker_positions();
    let (a, b) = (ends[0], ends[1]);
    let mut dist = Vec::new();
    for (k, eps) in MOLLIFIER_EPS.iter().enumerate() {
        let run = run_or_fail!(ID, THRESHOLD, runs.mollified(k));
        match dense_support(&run.end, 2.0 * eps) {
            Some((lo, hi)) => dist.push((lo - a).abs().max((hi - b).abs())),
            None => return CriterionResult::failed_run(ID, THRESHOLD, format!("no cell above 2 eps for eps={eps}")),
        }
    }
    // positions that agree to roundoff count as equal
    let monotone = dist.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let last = *dist.last().unwrap();
    let shown: Vec<String> = MOLLIFIER_EPS.iter().zip(&dist).map(|(e, d)| format!("eps={e}:{d:.3e}")).collect();
    CriterionResult::new(
        ID,
        format!("sharp a(5)={a:.4} b(5)={b:.4}; distances {}", shown.join(" ")),
        THRESHOLD,
        monotone && last <= 0.02,
    )
}

fn fault_detection(runs: &Runs) -> CriterionResult {
    const ID: &str = "fault_detection";
    const THRESHOLD: &str = "with flipped pressure gradient: equilibrium passes, energy_balance fails";
    let fault = Fault { flip_pressure: true };
    let eq = equilibrium(runs, fault);
    let en = energy_balance(runs, fault);
    CriterionResult::new(
        ID,
        format!("equilibrium {} / energy_balance {} ({})", eq.pass, en.pass, en.measured),
        THRESHOLD,
        eq.pass && !en.pass,
    )
}

fn evaluate(id: &'static str, runs: &Runs) -> CriterionResult {
    match id {
        "equilibrium" => equilibrium(runs, Fault::NONE),
        "energy_balance" => energy_balance(runs, Fault::NONE),
        "momentum" => momentum(runs),
        "density_bound" => density_bound(runs),
        "trajectory_invariant" => trajectory(runs),
        "norm_decay" => norm_decay(runs),
        "interface_dynamics" => interface_dynamics(runs),
        "gradient_decay" => gradient_decay(runs),
        "lyapunov" => lyapunov(runs),
        "flux_regularity" => flux_regularity(runs),
        "oracle" => oracle(runs),
        "mollification" => mollification(runs),
        "fault_detection" => fault_detection(runs),
        _ => unreachable!("criterion ids are validated before evaluation"),
    }
}

/// Evaluates the selected criteria (all when `only` is empty) in parallel
/// threads sharing one run cache.
pub fn evaluate_criteria(only: &[&str]) -> Result<AcceptanceReport, HarnessError> {
    let ids: Vec<&'static str> = if only.is_empty() {
        CRITERIA.to_vec()
    } else {
        only.iter()
            .map(|k| criterion_id(k).ok_or_else(|| HarnessError::UnknownCriterion(k.to_string())))
            .collect::<Result<_, _>>()?
    };
    let runs = Runs::default();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = ids.iter().map(|&id| scope.spawn(|| evaluate(id, &runs))).collect();
        handles
            .into_iter()
            .zip(&ids)
            .map(|(h, &id)| {
                h.join()
                    .unwrap_or_else(|_| CriterionResult::new(id, "panicked".into(), "completes", false))
            })
            .collect()
    });
    Ok(AcceptanceReport { results })
}

/// Runs the suite and writes `acceptance.csv` into `out_dir`, creating it.
pub fn run_acceptance_suite(out_dir: &Path, only: &[&str]) -> Result<AcceptanceReport, HarnessError> {
    let report = evaluate_criteria(only)?;
    std::fs::create_dir_all(out_dir)?;
    let f = std::fs::File::create(out_dir.join("acceptance.csv"))?;
    report.write_csv(std::io::BufWriter::new(f))?;
    Ok(report)
}
