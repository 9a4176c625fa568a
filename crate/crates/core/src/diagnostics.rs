//! Monitored functionals of a state and of recorded time series.
//!
//! Spatial integrals use the same lumping as the stepper: cell quantities
//! weigh `v_i dm_i`, node quantities weigh the node mass `m_j`, and every
//! vacuum gap contributes its length times the integrand evaluated at
//! `rho = 0`. Velocity integrals cover the gas support only.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::MaterialLaw;
use crate::solver::{stress, Observer, StepEvent, StepOutcome};
use crate::state::{BoundaryKind, GasComponent, SimState};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("fit: {0}")]
    Fit(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters of the Lyapunov functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSettings {
    /// Weight of the momentum/density cross term in `lyap_basic`.
    pub eta_l: f64,
    /// Weights `A2` for which the higher-order functional is evaluated.
    pub a2: Vec<f64>,
    /// Fraction of the series, counted from the end, used by default fits.
    pub fit_window_fraction: f64,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self {
            eta_l: 0.05,
            a2: vec![10.0, 100.0, 1000.0],
            fit_window_fraction: 0.5,
        }
    }
}

impl DiagnosticsSettings {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        if !(self.eta_l > 0.0) || !self.eta_l.is_finite() {
            return Err(DiagnosticsError::Usage(format!("eta_l must be > 0, got {}", self.eta_l)));
        }
        if let Some(a) = self.a2.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(DiagnosticsError::Usage(format!("a2 entries must be > 0, got {a}")));
        }
        if !(self.fit_window_fraction > 0.0 && self.fit_window_fraction <= 1.0) {
            return Err(DiagnosticsError::Usage(format!(
                "fit_window_fraction must be in (0, 1], got {}",
                self.fit_window_fraction
            )));
        }
        Ok(())
    }
}

/// Running quantities carried along a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accumulated {
    /// `2 int_0^t D dtau`, trapezoidal over accepted steps.
    pub dissipation_integral: f64,
    /// Running maximum of the density.
    pub rho_bar: f64,
}

impl Accumulated {
    pub fn start(s: &SimState) -> Self {
        Self {
            dissipation_integral: 0.0,
            rho_bar: s.max_density(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsFrame {
    pub t: f64,
    /// `int (2 e(rho) + rho u^2) dx`
    pub energy: f64,
    /// `int mu(rho) |u_x|^2 dx`
    pub dissipation: f64,
    pub dissipation_cum: f64,
    pub momentum: f64,
    pub norm_rho_minus_1_l2: f64,
    pub norm_u_l2_gas: f64,
    pub norm_ux_l2: f64,
    pub norm_ux_linf: f64,
    pub sup_rho: f64,
    pub gas_measure: f64,
    pub interfaces: Vec<f64>,
    /// Stress of the cell touching the left and right wall, when present.
    pub wall_stress: [Option<f64>; 2],
    pub g_max_jump: f64,
    pub lyap_basic: f64,
    /// One value per configured `A2`; `None` for density-dependent viscosity.
    pub lyap_e1: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub c: f64,
    pub alpha: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

#[inline]
fn strain(c: &GasComponent, i: usize) -> f64 {
    (c.u[i + 1] - c.u[i]) / c.cell_length(i)
}

/// `int mu(rho) |u_x|^2 dx` over the gas.
pub fn dissipation(s: &SimState) -> f64 {
    let mut d = 0.0;
    for c in &s.components {
        for i in 0..c.cells() {
            let ux = strain(c, i);
            d += s.law.mu(c.density(i)) * ux * ux * c.cell_length(i);
        }
    }
    d
}

/// `int (2 e(rho) + rho u^2) dx` including vacuum.
pub fn energy(s: &SimState) -> f64 {
    let law = &s.law;
    let mut e = 0.0;
    for c in &s.components {
        for i in 0..c.cells() {
            e += 2.0 * law.e_offset(c.density_offset(i)) * c.cell_length(i);
        }
        for (j, u) in c.u.iter().enumerate() {
            e += c.node_mass(j) * u * u;
        }
    }
    let vacuum: f64 = s.gaps().iter().map(|g| g.length()).sum();
    e + 2.0 * law.e(0.0) * vacuum
}

/// Cell value of `int_0^x rho u`, taken at the cell's mass midpoint, for
/// every gas cell in spatial order, followed by the running value before
/// each gap.
fn cumulative_momentum(s: &SimState) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut running = 0.0;
    let mut per_component = Vec::with_capacity(s.components.len());
    let mut before_gap = Vec::new();
    for c in &s.components {
        if c.left_bc == BoundaryKind::FreeVacuum {
            before_gap.push(running);
        }
        let mut q = Vec::with_capacity(c.cells());
        for i in 0..c.cells() {
            let flux = 0.5 * (c.u[i] + c.u[i + 1]) * c.dm[i];
            q.push(running + 0.5 * flux);
            running += flux;
        }
        per_component.push(q);
    }
    if s.components.last().is_some_and(|c| c.right_bc == BoundaryKind::FreeVacuum) {
        before_gap.push(running);
    }
    (per_component, before_gap)
}

/// `W_i = U(rho_i) + int_0^{x_i} rho u` for every gas cell, left to right.
pub fn trajectory_invariant(s: &SimState) -> Vec<f64> {
    let (q, _) = cumulative_momentum(s);
    s.components
        .iter()
        .zip(q)
        .flat_map(|(c, q)| {
            q.into_iter()
                .enumerate()
                .map(|(i, q)| s.law.visc_potential(c.density(i)) + q)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `int (e(rho) + rho u^2 + eta (int_0^x rho u) (rho - 1)) dx`.
pub fn lyap_basic(s: &SimState, eta: f64) -> f64 {
    let law = &s.law;
    let (q, before_gap) = cumulative_momentum(s);
    let mut total = 0.0;
    for (c, q) in s.components.iter().zip(&q) {
        for (i, qi) in q.iter().enumerate() {
            let a = c.density_offset(i);
            total += (law.e_offset(a) + eta * qi * a) * c.cell_length(i);
        }
        for (j, u) in c.u.iter().enumerate() {
            total += c.node_mass(j) * u * u;
        }
    }
    for (g, q) in s.gaps().iter().zip(before_gap) {
        total += (law.e(0.0) - eta * q) * g.length();
    }
    total
}

/// Higher-order functional for constant viscosity, with
/// `A1 = (5 rho_bar + 1) / (6 mu)`.
pub fn lyap_e1(s: &SimState, a2: f64, rho_bar: f64) -> Result<f64, DiagnosticsError> {
    let law = &s.law;
    if !law.is_constant_viscosity() {
        return Err(DiagnosticsError::Usage("lyap_e1 requires constant viscosity (c2 = 0)".into()));
    }
    let mu = law.mu_star;
    let a1 = (5.0 * rho_bar + 1.0) / (6.0 * mu);
    let p1 = law.p(1.0);
    // (p^2 - p(1)^2 - 2 p'(1) p(1) a) / (2 mu) written in offsets
    let pressure_part = |a: f64| {
        let q = law.p_offset(a);
        (q * q + 2.0 * p1 * law.p_defect(a)) / (2.0 * mu)
    };
    let mut total = 0.0;
    for c in &s.components {
        for i in 0..c.cells() {
            let a = c.density_offset(i);
            let ux = strain(c, i);
            let density = a2 * law.e_offset(a) + 0.5 * mu * ux * ux - law.p_offset(a) * ux + pressure_part(a);
            total += density * c.cell_length(i);
        }
        for (j, u) in c.u.iter().enumerate() {
            let u2 = u * u;
            total += c.node_mass(j) * (a2 * u2 + a1 * u2 * u2);
        }
    }
    let vacuum: f64 = s.gaps().iter().map(|g| g.length()).sum();
    total += (a2 * law.e(0.0) + pressure_part(-1.0)) * vacuum;
    Ok(total)
}

fn wall_stresses(s: &SimState) -> [Option<f64>; 2] {
    let mut out = [None, None];
    if let Some(c) = s.components.first().filter(|c| c.left_bc == BoundaryKind::Wall) {
        out[0] = Some(stress(&s.law, c, 0));
    }
    if let Some(c) = s.components.last().filter(|c| c.right_bc == BoundaryKind::Wall) {
        out[1] = Some(stress(&s.law, c, c.cells() - 1));
    }
    out
}

/// Largest jump of the effective viscous flux between neighbouring cells.
pub fn g_max_jump(s: &SimState) -> f64 {
    let mut jump = 0.0f64;
    for c in &s.components {
        let g: Vec<f64> = (0..c.cells())
            .map(|i| stress(&s.law, c, i))
            .collect();
        for w in g.windows(2) {
            jump = jump.max((w[1] - w[0]).abs());
        }
    }
    jump
}

/// `||d_x G||_{L2}` over the gas, differencing cell stresses across each
/// interior node.
pub fn flux_gradient_norm(s: &SimState) -> f64 {
    let mut sq = 0.0;
    for c in &s.components {
        for j in 1..c.cells() {
            let h = 0.5 * (c.cell_length(j - 1) + c.cell_length(j));
            let dg = stress(&s.law, c, j) - stress(&s.law, c, j - 1);
            sq += dg * dg / h;
        }
    }
    sq.sqrt()
}

/// `||d_x u||_{L_inf}` over the gas.
pub fn strain_sup(s: &SimState) -> f64 {
    s.components
        .iter()
        .flat_map(|c| (0..c.cells()).map(move |i| strain(c, i).abs()))
        .fold(0.0, f64::max)
}

/// Evaluates every monitored functional on `s`.
pub fn frame(s: &SimState, acc: &Accumulated, settings: &DiagnosticsSettings) -> DiagnosticsFrame {
    let law = &s.law;
    let gaps = s.gaps();
    let vacuum: f64 = gaps.iter().map(|g| g.length()).sum();
    let mut rho_dev = vacuum;
    let mut u2 = 0.0;
    let mut ux2 = 0.0;
    for c in &s.components {
        for i in 0..c.cells() {
            let w = c.cell_length(i);
            rho_dev += c.density_offset(i).powi(2) * w;
            u2 += 0.5 * (c.u[i] * c.u[i] + c.u[i + 1] * c.u[i + 1]) * w;
            let ux = strain(c, i);
            ux2 += ux * ux * w;
        }
    }
    let lyap_e1 = law.is_constant_viscosity().then(|| {
        settings
            .a2
            .iter()
            .map(|&a2| lyap_e1(s, a2, acc.rho_bar).expect("constant viscosity checked"))
            .collect()
    });
    DiagnosticsFrame {
        t: s.t,
        energy: energy(s),
        dissipation: dissipation(s),
        dissipation_cum: acc.dissipation_integral,
        momentum: s.momentum(),
        norm_rho_minus_1_l2: rho_dev.sqrt(),
        norm_u_l2_gas: u2.sqrt(),
        norm_ux_l2: ux2.sqrt(),
        norm_ux_linf: strain_sup(s),
        sup_rho: s.max_density(),
        gas_measure: s.gas_length(),
        interfaces: s.marker_positions(),
        wall_stress: wall_stresses(s),
        g_max_jump: g_max_jump(s),
        lyap_basic: lyap_basic(s, settings.eta_l),
        lyap_e1,
    }
}

/// `max_t |E(t) + D_cum(t) - E(0)| / E(0)`, or 0 if every term vanishes.
pub fn energy_balance_residual(frames: &[DiagnosticsFrame]) -> Result<f64, DiagnosticsError> {
    let first = frames
        .first()
        .ok_or_else(|| DiagnosticsError::Usage("energy balance needs at least one frame".into()))?;
    let e0 = first.energy;
    let worst = frames
        .iter()
        .map(|f| (f.energy + f.dissipation_cum - e0).abs())
        .fold(0.0, f64::max);
    if worst == 0.0 {
        return Ok(0.0);
    }
    Ok(worst / e0.max(1e-300))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityBound {
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Relative slack allowed on the density bound for discretization error.
pub const DENSITY_BOUND_SLACK: f64 = 0.05;

/// Compares the observed density maximum with
/// `max(1, exp((mu^* ln rho^* + 2 E_0) / mu_*))`, where `rho^*` and `E_0`
/// come from the first frame and `mu^*` is the largest viscosity realized.
pub fn density_bound_check(frames: &[DiagnosticsFrame], law: &MaterialLaw) -> Result<DensityBound, DiagnosticsError> {
    let first = frames
        .first()
        .ok_or_else(|| DiagnosticsError::Usage("density bound needs at least one frame".into()))?;
    let observed = frames.iter().map(|f| f.sup_rho).fold(0.0, f64::max);
    let rho_star = first.sup_rho;
    let mu_ceiling = law.viscosity_ceiling(observed);
    let bound = density_bound(rho_star, first.energy, law.mu_star, mu_ceiling);
    Ok(DensityBound {
        observed,
        bound,
        pass: observed <= bound * (1.0 + DENSITY_BOUND_SLACK),
    })
}

pub fn density_bound(rho_star: f64, e0: f64, mu_floor: f64, mu_ceiling: f64) -> f64 {
    ((mu_ceiling * rho_star.ln() + 2.0 * e0) / mu_floor).exp().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareCheck {
    /// `||sqrt(rho) u||_{L2}`
    pub lhs: f64,
    /// `2 (rho_bar + 1) / mu_* ||sqrt(mu) u_x||_{L2}`
    pub rhs: f64,
    pub pass: bool,
}

/// Weighted Poincare inequality on one state, with `rho_bar` the state's
/// own density maximum. Across gaps `u` is extended by its end values, so
/// gaps add nothing to either side.
pub fn poincare_check(s: &SimState) -> PoincareCheck {
    let lhs = s
        .components
        .iter()
        .map(|c| c.u.iter().enumerate().map(|(j, u)| c.node_mass(j) * u * u).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let rho_bar = s.max_density();
    let rhs = 2.0 * (rho_bar + 1.0) / s.law.mu_star * dissipation(s).sqrt();
    PoincareCheck {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1e-6),
    }
}

/// Least-squares fit of `ln y = ln C - alpha t` over `window` (inclusive).
pub fn fit_exponential(points: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit, DiagnosticsError> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(DiagnosticsError::Usage(format!("empty fit window [{lo}, {hi}]")));
    }
    let inside: Vec<(f64, f64)> = points.iter().copied().filter(|(t, _)| *t >= lo && *t <= hi).collect();
    if inside.len() < 3 {
        return Err(DiagnosticsError::Usage(format!(
            "fit window [{lo}, {hi}] holds {} points, need 3",
            inside.len()
        )));
    }
    if let Some((t, y)) = inside.iter().find(|(_, y)| !(*y > 0.0) || !y.is_finite()) {
        return Err(DiagnosticsError::Fit(format!("non-positive value {y} at t={t}")));
    }
    let n = inside.len() as f64;
    let t_mean = inside.iter().map(|p| p.0).sum::<f64>() / n;
    let l_mean = inside.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut stl, mut sll) = (0.0, 0.0, 0.0);
    for (t, y) in &inside {
        let (dt, dl) = (t - t_mean, y.ln() - l_mean);
        stt += dt * dt;
        stl += dt * dl;
        sll += dl * dl;
    }
    let flat = sll <= 1e-24 * n * (1.0 + l_mean * l_mean);
    let slope = if flat { 0.0 } else { stl / stt };
    let intercept = l_mean - slope * t_mean;
    let r_squared = if flat {
        1.0
    } else {
        let ss_res: f64 = inside
            .iter()
            .map(|(t, y)| (y.ln() - intercept - slope * t).powi(2))
            .sum();
        (1.0 - ss_res / sll).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        c: intercept.exp(),
        alpha: if slope == 0.0 { 0.0 } else { -slope },
        r_squared,
        window,
        n_points: inside.len(),
    })
}

/// Default window: the trailing `fraction` of the time span, moved right
/// past the last non-positive sample inside it.
pub fn default_window(points: &[(f64, f64)], fraction: f64) -> Option<(f64, f64)> {
    let (t0, t1) = (points.first()?.0, points.last()?.0);
    let mut lo = t1 - fraction.clamp(0.0, 1.0) * (t1 - t0);
    if let Some(bad) = points.iter().rfind(|(t, y)| *t >= lo && !(*y > 0.0)) {
        lo = points.iter().map(|p| p.0).find(|t| *t > bad.0)?;
    }
    (lo < t1).then_some((lo, t1))
}

/// Observer that accumulates the dissipation integral and records a frame
/// at every sample time.
pub struct Recorder {
    pub settings: DiagnosticsSettings,
    pub interval: Option<f64>,
    pub acc: Option<Accumulated>,
    pub frames: Vec<DiagnosticsFrame>,
    pub events: Vec<(f64, StepEvent)>,
    pub steps: usize,
    last_dissipation: Option<f64>,
}

impl Recorder {
    pub fn new(settings: DiagnosticsSettings, interval: Option<f64>) -> Self {
        Self {
            settings,
            interval,
            acc: None,
            frames: Vec::new(),
            events: Vec::new(),
            steps: 0,
            last_dissipation: None,
        }
    }

    pub fn series(&self, f: impl Fn(&DiagnosticsFrame) -> f64) -> Vec<(f64, f64)> {
        self.frames.iter().map(|fr| (fr.t, f(fr))).collect()
    }
}

impl Observer for Recorder {
    fn sample_interval(&self) -> Option<f64> {
        self.interval
    }

    fn on_step(&mut self, before: &SimState, after: &SimState, outcome: &StepOutcome) {
        let acc = self.acc.get_or_insert_with(|| Accumulated::start(before));
        let d0 = self.last_dissipation.unwrap_or_else(|| dissipation(before));
        let d1 = dissipation(after);
        acc.dissipation_integral += outcome.dt * (d0 + d1);
        acc.rho_bar = acc.rho_bar.max(after.max_density());
        self.last_dissipation = Some(d1);
        self.steps += 1;
        self.events.extend(outcome.events.iter().map(|e| (after.t, *e)));
    }

    fn on_sample(&mut self, state: &SimState) {
        let acc = *self.acc.get_or_insert_with(|| Accumulated::start(state));
        self.frames.push(frame(state, &acc, &self.settings));
    }
}

/// Fit over the default trailing window. A series that vanishes
/// identically there is a constant: `C = 0`, `alpha = 0`, `R^2 = 1`.
pub fn fit_trailing(points: &[(f64, f64)], fraction: f64) -> Result<DecayFit, DiagnosticsError> {
    let (t0, t1) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(DiagnosticsError::Usage("cannot fit an empty series".into())),
    };
    let lo = t1 - fraction.clamp(0.0, 1.0) * (t1 - t0);
    let tail: Vec<&(f64, f64)> = points.iter().filter(|(t, _)| *t >= lo).collect();
    if tail.len() >= 3 && lo < t1 && tail.iter().all(|(_, y)| *y == 0.0) {
        return Ok(DecayFit {
            c: 0.0,
            alpha: 0.0,
            r_squared: 1.0,
            window: (lo, t1),
            n_points: tail.len(),
        });
    }
    let window = default_window(points, fraction)
        .ok_or_else(|| DiagnosticsError::Fit("no positive samples in the trailing window".into()))?;
    fit_exponential(points, window)
}

/// Column names of `timeseries.csv` for frames with `interfaces` markers
/// and the given `A2` list.
pub fn timeseries_header(interfaces: usize, a2: &[f64], with_e1: bool) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "E",
        "D",
        "D_cum",
        "P",
        "norm_rho_minus_1_L2",
        "norm_u_L2_gas",
        "norm_ux_L2",
        "norm_ux_Linf",
        "sup_rho",
        "gas_measure",
        "G_max_jump",
        "wall_stress_left",
        "wall_stress_right",
        "lyap_basic",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if with_e1 {
        h.extend(a2.iter().map(|a| format!("lyap_E1_A2_{a}")));
    }
    for k in 0..interfaces / 2 {
        h.push(format!("a{}", k + 1));
        h.push(format!("b{}", k + 1));
    }
    if interfaces % 2 == 1 {
        h.push(format!("a{}", interfaces / 2 + 1));
    }
    h
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_timeseries_csv<W: Write>(frames: &[DiagnosticsFrame], settings: &DiagnosticsSettings, out: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(out);
    let interfaces = frames.first().map_or(0, |f| f.interfaces.len());
    let with_e1 = frames.first().is_some_and(|f| f.lyap_e1.is_some());
    w.write_record(timeseries_header(interfaces, &settings.a2, with_e1))?;
    for f in frames {
        let mut row: Vec<String> = [
            f.t,
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
        ]
        .iter()
        .map(|x| x.to_string())
        .collect();
        row.push(opt(f.wall_stress[0]));
        row.push(opt(f.wall_stress[1]));
        row.push(f.lyap_basic.to_string());
        if let Some(e1) = &f.lyap_e1 {
            row.extend(e1.iter().map(|x| x.to_string()));
        }
        row.extend(f.interfaces.iter().map(|x| x.to_string()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A named fit, or the reason it could not be made.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedFit {
    pub quantity: String,
    pub fit: Result<DecayFit, String>,
}

pub fn write_fits_csv<W: Write>(fits: &[NamedFit], out: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantity", "C", "alpha", "r2", "t_lo", "t_hi", "n"])?;
    for nf in fits {
        match &nf.fit {
            Ok(f) => w.write_record([
                nf.quantity.clone(),
                f.c.to_string(),
                f.alpha.to_string(),
                f.r_squared.to_string(),
                f.window.0.to_string(),
                f.window.1.to_string(),
                f.n_points.to_string(),
            ])?,
            Err(_) => w.write_record([nf.quantity.as_str(), "", "", "", "", "", "0"])?,
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{advance_to, StepControl};
    use crate::state::{build_density_patch, build_smooth, build_vacuum_bubble, SmoothProfile};
    use approx::assert_relative_eq;

    #[test]
    fn trailing_fit_conventions() {
        let zero: Vec<(f64, f64)> = (0..11).map(|k| (k as f64, 0.0)).collect();
        let f = fit_trailing(&zero, 0.5).unwrap();
        assert_eq!((f.c, f.alpha, f.r_squared, f.window, f.n_points), (0.0, 0.0, 1.0, (5.0, 10.0), 6));
        let decay: Vec<(f64, f64)> = (0..11).map(|k| (k as f64, (-0.5 * k as f64).exp())).collect();
        let f = fit_trailing(&decay, 0.5).unwrap();
        assert_relative_eq!(f.alpha, 0.5, epsilon = 1e-12);
        let mut mixed = decay.clone();
        mixed[10].1 = 0.0;
        assert!(fit_trailing(&mixed, 0.5).is_err());
        assert!(fit_trailing(&[], 0.5).is_err());
        assert!(DiagnosticsSettings::default().validate().is_ok());
        let bad = DiagnosticsSettings {
            fit_window_fraction: 0.0,
            ..DiagnosticsSettings::default()
        };
        assert!(bad.validate().is_err());
    }

    fn law() -> MaterialLaw {
        MaterialLaw::default()
    }

    fn equilibrium(n: usize) -> SimState {
        build_smooth(SmoothProfile::new(0.0, 0.0, 1), n, law()).unwrap()
    }

    fn settings() -> DiagnosticsSettings {
        DiagnosticsSettings::default()
    }

    #[test]
    fn equilibrium_frame_vanishes() {
        let s = equilibrium(32);
        let f = frame(&s, &Accumulated::start(&s), &settings());
        assert_eq!(f.energy, 0.0);
        assert_eq!(f.dissipation, 0.0);
        assert_eq!(f.momentum, 0.0);
        assert_eq!(f.norm_rho_minus_1_l2, 0.0);
        assert_eq!(f.lyap_basic, 0.0);
        for e1 in f.lyap_e1.unwrap() {
            assert_eq!(e1, 0.0);
        }
        assert!(trajectory_invariant(&s).iter().all(|w| *w == 0.0));
    }

    #[test]
    fn vacuum_bubble_initial_frame() {
        let s = build_vacuum_bubble(0.25, 0.75, 100, law()).unwrap();
        let f = frame(&s, &Accumulated::start(&s), &settings());
        // 2 e(2) over the gas plus 2 e(0) over the vacuum
        assert_relative_eq!(f.energy, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.norm_rho_minus_1_l2, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.lyap_basic, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.gas_measure, 0.5, epsilon = 1e-12);
        assert_eq!(f.wall_stress[0], Some(-4.0));
    }

    #[test]
    fn density_patch_initial_frame() {
        let s = build_density_patch(0.25, 0.75, 100, law()).unwrap();
        let f = frame(&s, &Accumulated::start(&s), &settings());
        assert_relative_eq!(f.interfaces[0], 0.25, epsilon = 1e-14);
        assert_relative_eq!(f.interfaces[1], 0.75, epsilon = 1e-12);
        assert_eq!(f.momentum, 0.0);
        assert_eq!(f.wall_stress, [None, None]);
    }

    #[test]
    fn at_rest_functionals_reduce_to_potential_energy() {
        let s = build_smooth(SmoothProfile::new(0.4, 0.0, 1), 64, law()).unwrap();
        let c = &s.components[0];
        let potential: f64 = (0..c.cells()).map(|i| law().e(c.density(i)) * c.cell_length(i)).sum();
        assert_relative_eq!(lyap_basic(&s, 0.3), potential, epsilon = 1e-15);
        let pressure_term: f64 = (0..c.cells())
            .map(|i| {
                let rho = c.density(i);
                let p = law().p(rho);
                (p * p - 1.0 - 2.0 * 2.0 * (rho - 1.0)) / 2.0 * c.cell_length(i)
            })
            .sum();
        let e1 = lyap_e1(&s, 10.0, 1.4).unwrap();
        assert_relative_eq!(e1, 10.0 * potential + pressure_term, max_relative = 1e-12);
        let w = trajectory_invariant(&s);
        for (i, w) in w.iter().enumerate() {
            assert_eq!(*w, law().visc_potential(c.density(i)));
        }
    }

    #[test]
    fn lyap_e1_rejects_variable_viscosity() {
        let var = MaterialLaw::new(2.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let s = build_density_patch(0.25, 0.75, 20, var).unwrap();
        assert!(lyap_e1(&s, 10.0, 2.0).is_err());
        assert!(frame(&s, &Accumulated::start(&s), &settings()).lyap_e1.is_none());
    }

    #[test]
    fn flux_gradient_of_linear_stress() {
        // rho = 1, u = x^2 / 2 gives G = mu u_x - p = x - 1 and d_x G = 1
        let mut s = equilibrium(200);
        let c = &mut s.components[0];
        for j in 0..=c.cells() {
            c.u[j] = 0.5 * c.x[j] * c.x[j];
        }
        assert_relative_eq!(flux_gradient_norm(&s), 1.0, max_relative = 1e-2);
        assert_relative_eq!(strain_sup(&s), 1.0, max_relative = 1e-2);
        assert_eq!(flux_gradient_norm(&equilibrium(10)), 0.0);
    }

    #[test]
    fn density_bound_values() {
        assert_relative_eq!(density_bound(2.0, 1.0, 1.0, 1.0), 2.0 * 1f64.exp().powi(2), max_relative = 1e-14);
        assert_eq!(density_bound(1.0, 0.0, 1.0, 1.0), 1.0);
        let s = equilibrium(16);
        let f = frame(&s, &Accumulated::start(&s), &settings());
        let check = density_bound_check(&[f], &law()).unwrap();
        assert_eq!(check, DensityBound { observed: 1.0, bound: 1.0, pass: true });
        assert!(density_bound_check(&[], &law()).is_err());
    }

    #[test]
    fn poincare_values() {
        let s = equilibrium(64);
        let check = poincare_check(&s);
        assert_eq!((check.lhs, check.rhs), (0.0, 0.0));
        assert!(check.pass);

        let mut s = equilibrium(400);
        let c = &mut s.components[0];
        for j in 0..=c.cells() {
            c.u[j] = (std::f64::consts::PI * c.x[j]).sin();
        }
        let check = poincare_check(&s);
        // ||sin(pi x)|| = 1/sqrt(2), 4 ||pi cos(pi x)|| = 4 pi / sqrt(2)
        assert_relative_eq!(check.lhs, 0.5f64.sqrt(), max_relative = 1e-4);
        assert_relative_eq!(check.rhs, 4.0 * std::f64::consts::PI * 0.5f64.sqrt(), max_relative = 1e-4);
        assert!(check.pass);
    }

    #[test]
    fn fit_exact_exponential() {
        let pts: Vec<_> = (0..=10).map(|k| {
            let t = 0.5 * k as f64;
            (t, (-2.0 * t).exp())
        }).collect();
        let fit = fit_exponential(&pts, (0.0, 5.0)).unwrap();
        assert_relative_eq!(fit.c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.alpha, 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert_eq!(fit.n_points, 11);
    }

    #[test]
    fn fit_constant_series() {
        let pts: Vec<_> = (0..10).map(|k| (k as f64, 3.0)).collect();
        let fit = fit_exponential(&pts, (0.0, 9.0)).unwrap();
        assert_eq!(fit.alpha, 0.0);
        assert_relative_eq!(fit.c, 3.0, epsilon = 1e-14);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_perturbed_exponential() {
        let pts: Vec<_> = (0..=100).map(|k| {
            let t = 0.1 * k as f64;
            (t, (-t).exp() * (1.0 + 0.01 * t.sin()))
        }).collect();
        let fit = fit_exponential(&pts, (0.0, 10.0)).unwrap();
        assert!((0.98..=1.02).contains(&fit.alpha), "{}", fit.alpha);
        assert!(fit.r_squared >= 0.999);
    }

    #[test]
    fn fit_errors() {
        let pts = vec![(0.0, 1.0), (1.0, 0.0), (2.0, 0.5), (3.0, 0.2)];
        assert!(matches!(fit_exponential(&pts, (0.0, 3.0)), Err(DiagnosticsError::Fit(_))));
        assert!(matches!(fit_exponential(&pts, (2.0, 3.0)), Err(DiagnosticsError::Usage(_))));
        assert_eq!(default_window(&pts, 1.0), Some((2.0, 3.0)));
        assert_eq!(default_window(&pts, 0.5), Some((1.5, 3.0)));
    }

    #[test]
    fn recorder_tracks_energy_balance() {
        let s = build_smooth(SmoothProfile::new(0.3, 0.5, 1), 100, law()).unwrap();
        let mut rec = Recorder::new(settings(), Some(0.05));
        advance_to(s, 0.5, &StepControl::with_cfl(0.2), &mut rec).unwrap();
        assert_eq!(rec.frames.len(), 11);
        let r = energy_balance_residual(&rec.frames).unwrap();
        assert!(r < 5e-3, "residual {r}");
        for w in rec.frames.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-10);
        }
    }

    #[test]
    fn energy_balance_of_equilibrium_is_zero() {
        let s = equilibrium(20);
        let mut rec = Recorder::new(settings(), Some(0.1));
        advance_to(s, 1.0, &StepControl::default(), &mut rec).unwrap();
        assert_eq!(energy_balance_residual(&rec.frames).unwrap(), 0.0);
        assert!(energy_balance_residual(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = build_vacuum_bubble(0.25, 0.75, 20, law()).unwrap();
        let f = frame(&s, &Accumulated::start(&s), &settings());
        let mut buf = Vec::new();
        write_timeseries_csv(&[f.clone(), f], &settings(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t,E,D,D_cum,P,"));
        assert!(header.ends_with("lyap_E1_A2_1000,a1,b1"));
        assert_eq!(text.lines().count(), 3);

        let fits = vec![
            NamedFit {
                quantity: "x".into(),
                fit: Ok(DecayFit { c: 1.0, alpha: 2.0, r_squared: 1.0, window: (0.0, 1.0), n_points: 5 }),
            },
            NamedFit { quantity: "y".into(), fit: Err("none".into()) },
        ];
        let mut buf = Vec::new();
        write_fits_csv(&fits, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "quantity,C,alpha,r2,t_lo,t_hi,n\nx,1,2,1,0,1,5\ny,,,,,,0\n");
    }

    #[test]
    fn frame_is_deterministic() {
        let s = build_density_patch(0.2, 0.7, 50, law()).unwrap();
        let acc = Accumulated::start(&s);
        assert_eq!(frame(&s, &acc, &settings()), frame(&s.clone(), &acc, &settings()));
    }
}
