//! Discrete state in Lagrangian mass coordinates.
//!
//! The domain `(0, 1)` holds an ordered list of gas components. Each
//! component is a chain of material cells with fixed masses; vacuum never
//! carries a cell and appears only as a gap between components or between a
//! free component end and a wall.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::MaterialLaw;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid scenario parameter `{name}`: {reason}")]
    Config { name: &'static str, reason: String },
    #[error("inconsistent state: {0}")]
    Invariant(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_err(name: &'static str, reason: impl Into<String>) -> StateError {
    StateError::Config {
        name,
        reason: reason.into(),
    }
}

/// Neumaier summation, returned unrounded as `(sum, carry)`.
fn neumaier(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    (sum, carry)
}

pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, carry) = neumaier(values);
    sum + carry
}

/// Adjusts the last cell mass so the cell masses add up to exactly one,
/// which makes `rho = 1` the exact discrete equilibrium between two walls.
fn close_total_mass(components: &mut [GasComponent]) {
    let Some(last) = components.last_mut().map(|c| c.dm.len() - 1) else {
        return;
    };
    let n = components.len();
    let (sum, carry) = neumaier(
        components
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.dm.iter().enumerate().filter(move |&(i, _)| !(k == n - 1 && i == last)))
            .map(|(_, m)| *m),
    );
    let c = &mut components[n - 1];
    // 1 - sum is exact for sum in [1/2, 2]
    c.dm[last] = (1.0 - sum) - carry;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// No-slip wall, `u = 0`.
    Wall,
    /// Gas/vacuum interface with zero normal stress.
    FreeVacuum,
}

/// One connected piece of gas.
///
/// Cell `i` sits between nodes `i` and `i + 1`; velocities and positions
/// live on nodes, specific volumes on cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GasComponent {
    pub dm: Vec<f64>,
    /// Specific volume minus one. Near the equilibrium `rho = 1` this keeps
    /// full relative precision where `v` itself would round to 1.
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub left_bc: BoundaryKind,
    pub right_bc: BoundaryKind,
}

impl GasComponent {
    /// Builds a component from cell masses and volumes, laying the cells out
    /// from `x_left`.
    pub fn from_cells(
        dm: Vec<f64>,
        v: Vec<f64>,
        u: Vec<f64>,
        x_left: f64,
        left_bc: BoundaryKind,
        right_bc: BoundaryKind,
    ) -> Self {
        let mut c = Self {
            x: vec![0.0; dm.len() + 1],
            dm,
            w: v.iter().map(|v| v - 1.0).collect(),
            u,
            left_bc,
            right_bc,
        };
        c.layout_from_left(x_left);
        c
    }

    pub fn cells(&self) -> usize {
        self.dm.len()
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.dm.iter().copied())
    }

    /// Lumped node mass: half of each adjacent cell.
    #[inline]
    pub fn node_mass(&self, j: usize) -> f64 {
        let n = self.cells();
        match j {
            0 => 0.5 * self.dm[0],
            j if j == n => 0.5 * self.dm[n - 1],
            j => 0.5 * (self.dm[j - 1] + self.dm[j]),
        }
    }

    pub fn node_masses(&self) -> Vec<f64> {
        (0..=self.cells()).map(|j| self.node_mass(j)).collect()
    }

    #[inline]
    pub fn specific_volume(&self, i: usize) -> f64 {
        1.0 + self.w[i]
    }

    #[inline]
    pub fn density(&self, i: usize) -> f64 {
        1.0 / (1.0 + self.w[i])
    }

    /// `rho - 1` without cancellation.
    #[inline]
    pub fn density_offset(&self, i: usize) -> f64 {
        -self.w[i] / (1.0 + self.w[i])
    }

    /// Cell length `v_i dm_i`.
    #[inline]
    pub fn cell_length(&self, i: usize) -> f64 {
        self.dm[i] + self.w[i] * self.dm[i]
    }

    pub fn left(&self) -> f64 {
        self.x[0]
    }

    pub fn right(&self) -> f64 {
        self.x[self.cells()]
    }

    /// Gas length `sum v_i dm_i`.
    pub fn length(&self) -> f64 {
        1.0 + self.excess_length()
    }

    /// Gas length minus one, accurate when the gas nearly fills the domain.
    pub fn excess_length(&self) -> f64 {
        (self.mass() - 1.0) + compensated_sum(self.w.iter().zip(&self.dm).map(|(w, m)| w * m))
    }

    /// Momentum `sum m_j u_j`.
    pub fn momentum(&self) -> f64 {
        self.u.iter().enumerate().map(|(j, u)| self.node_mass(j) * u).sum()
    }

    /// Mass-weighted mean node position.
    pub fn center_of_mass(&self) -> f64 {
        let m: f64 = self.mass();
        self.x.iter().enumerate().map(|(j, x)| self.node_mass(j) * x).sum::<f64>() / m
    }

    /// Shifts every specific volume by the same amount so a component between
    /// two walls fills `[0, 1]` exactly.
    pub(crate) fn fill_between_walls(&mut self) {
        let delta = self.excess_length() / self.mass();
        if delta != 0.0 {
            self.w.iter_mut().for_each(|w| *w -= delta);
        }
        self.layout_from_left(0.0);
    }

    pub(crate) fn layout_from_left(&mut self, x_left: f64) {
        self.x[0] = x_left;
        for i in 0..self.cells() {
            self.x[i + 1] = self.x[i] + self.cell_length(i);
        }
    }

    pub(crate) fn layout_from_right(&mut self, x_right: f64) {
        let n = self.cells();
        self.x[n] = x_right;
        for i in (0..n).rev() {
            self.x[i] = self.x[i + 1] - self.cell_length(i);
        }
    }

    /// Recomputes node positions from cell volumes, anchored at a wall when
    /// there is one, otherwise keeping the current center of mass.
    pub(crate) fn resync_positions(&mut self) {
        match (self.left_bc, self.right_bc) {
            (BoundaryKind::Wall, _) => {
                let x0 = self.x[0];
                self.layout_from_left(x0);
            }
            (_, BoundaryKind::Wall) => {
                let xn = self.x[self.cells()];
                self.layout_from_right(xn);
            }
            _ => {
                let center = self.center_of_mass();
                let x0 = self.x[0];
                self.layout_from_left(x0);
                let shift = center - self.center_of_mass();
                self.x.iter_mut().for_each(|x| *x += shift);
            }
        }
    }

    pub fn validate(&self) -> Result<(), StateError> {
        let n = self.cells();
        let fail = |msg: String| Err(StateError::Invariant(msg));
        if n == 0 {
            return fail("component without cells".into());
        }
        if self.w.len() != n || self.u.len() != n + 1 || self.x.len() != n + 1 {
            return fail(format!(
                "array sizes dm={} w={} u={} x={}",
                n,
                self.w.len(),
                self.u.len(),
                self.x.len()
            ));
        }
        for i in 0..n {
            if !(self.dm[i] > 0.0) || !(self.w[i] > -1.0) || !self.w[i].is_finite() {
                return fail(format!("cell {i}: dm={} v={}", self.dm[i], self.specific_volume(i)));
            }
            let dx = self.x[i + 1] - self.x[i];
            let expect = self.cell_length(i);
            if (dx - expect).abs() > 1e-10 * expect.max(1e-300) + 1e-14 {
                return fail(format!("cell {i}: dx={dx} but v*dm={expect}"));
            }
        }
        if self.u.iter().any(|u| !u.is_finite()) {
            return fail("non-finite velocity".into());
        }
        if self.left_bc == BoundaryKind::Wall && (self.u[0] != 0.0 || self.x[0].abs() > 1e-12) {
            return fail(format!("left wall node at x={} u={}", self.x[0], self.u[0]));
        }
        if self.right_bc == BoundaryKind::Wall && (self.u[n] != 0.0 || (self.x[n] - 1.0).abs() > 1e-8) {
            return fail(format!("right wall node at x={} u={}", self.x[n], self.u[n]));
        }
        Ok(())
    }
}

/// Vacuum interval; `hi - lo` may be negative if two ends overlapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub lo: f64,
    pub hi: f64,
}

impl Gap {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Which end of a mass coordinate an interface marker follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// First node of the component that starts at the mass coordinate.
    Start,
    /// Last node of the component that ends at the mass coordinate.
    End,
}

/// Material particle that started on a gas/vacuum interface, labelled by
/// its mass coordinate `int_0^x rho dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceMarker {
    pub mass: f64,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub components: Vec<GasComponent>,
    pub t: f64,
    pub law: MaterialLaw,
    /// Initial interface particles, tracked through contact and merging.
    pub markers: Vec<InterfaceMarker>,
}

impl SimState {
    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(GasComponent::mass).sum()
    }

    pub fn gas_length(&self) -> f64 {
        self.components.iter().map(GasComponent::length).sum()
    }

    pub fn momentum(&self) -> f64 {
        self.components.iter().map(GasComponent::momentum).sum()
    }

    /// Vacuum gaps, left to right: one before every free left end and one
    /// after a free right end of the last component.
    pub fn gaps(&self) -> Vec<Gap> {
        let mut gaps = Vec::new();
        let mut prev_right = 0.0;
        for c in &self.components {
            if c.left_bc == BoundaryKind::FreeVacuum {
                gaps.push(Gap {
                    lo: prev_right,
                    hi: c.left(),
                });
            }
            prev_right = c.right();
        }
        if let Some(last) = self.components.last() {
            if last.right_bc == BoundaryKind::FreeVacuum {
                gaps.push(Gap { lo: prev_right, hi: 1.0 });
            }
        }
        gaps
    }

    /// Current positions of the interface markers.
    pub fn marker_positions(&self) -> Vec<f64> {
        self.markers.iter().map(|m| self.position_of(*m)).collect()
    }

    /// Position of the node carrying a marker. Mass coordinates are matched
    /// to within `1e-9`.
    pub fn position_of(&self, marker: InterfaceMarker) -> f64 {
        const TOL: f64 = 1e-9;
        let mut start = 0.0;
        let mut fallback = f64::NAN;
        for c in &self.components {
            let end = start + c.mass();
            match marker.side {
                Side::Start if (marker.mass - start).abs() <= TOL => return c.left(),
                Side::End if (marker.mass - end).abs() <= TOL => return c.right(),
                _ => {}
            }
            if marker.mass > start - TOL && marker.mass < end + TOL {
                let mut cum = start;
                let mut best = (f64::INFINITY, c.left());
                for j in 0..=c.cells() {
                    if (cum - marker.mass).abs() < best.0 {
                        best = ((cum - marker.mass).abs(), c.x[j]);
                    }
                    if j < c.cells() {
                        cum += c.dm[j];
                    }
                }
                fallback = best.1;
            }
            start = end;
        }
        fallback
    }

    /// Free endpoint positions, left to right: `a1, b1, a2, b2, ...`.
    pub fn free_endpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.components {
            if c.left_bc == BoundaryKind::FreeVacuum {
                out.push(c.left());
            }
            if c.right_bc == BoundaryKind::FreeVacuum {
                out.push(c.right());
            }
        }
        out
    }

    pub fn max_density(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.w.iter())
            .fold(0.0, |m, &w| m.max(1.0 / (1.0 + w)))
    }

    pub fn cells(&self) -> usize {
        self.components.iter().map(GasComponent::cells).sum()
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if self.components.is_empty() {
            return Err(StateError::Invariant("no gas components".into()));
        }
        for c in &self.components {
            c.validate()?;
        }
        for pair in self.components.windows(2) {
            if pair[0].right() > pair[1].left() + 1e-12 {
                return Err(StateError::Invariant(format!(
                    "components overlap: {} > {}",
                    pair[0].right(),
                    pair[1].left()
                )));
            }
        }
        let mass = self.total_mass();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(StateError::Invariant(format!("total mass {mass} != 1")));
        }
        let covered = self.gas_length() + self.gaps().iter().map(Gap::length).sum::<f64>();
        if (covered - 1.0).abs() > 1e-8 {
            return Err(StateError::Invariant(format!("gas + gaps cover {covered}")));
        }
        Ok(())
    }
}

/// Smooth positive data `rho0 = 1 + A cos(2 pi k x)`, `u0 = B sin(pi k x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothProfile {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub velocity: f64,
    #[serde(default = "one")]
    pub wavenumber: u32,
}

fn one() -> u32 {
    1
}

impl SmoothProfile {
    pub fn new(amplitude: f64, velocity: f64, wavenumber: u32) -> Self {
        Self {
            amplitude,
            velocity,
            wavenumber,
        }
    }

    fn validate(&self) -> Result<(), StateError> {
        if !(self.amplitude.abs() < 1.0) {
            return Err(config_err("amplitude", format!("|A| must be < 1, got {}", self.amplitude)));
        }
        if !self.velocity.is_finite() {
            return Err(config_err("velocity", "must be finite"));
        }
        if self.wavenumber == 0 {
            return Err(config_err("wavenumber", "must be >= 1"));
        }
        Ok(())
    }

    fn kw(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.wavenumber as f64
    }

    pub fn density(&self, x: f64) -> f64 {
        1.0 + self.amplitude * (self.kw() * x).cos()
    }

    /// `int_0^x rho0`.
    pub fn cumulative_mass(&self, x: f64) -> f64 {
        x + self.amplitude * (self.kw() * x).sin() / self.kw()
    }

    pub fn velocity_at(&self, x: f64) -> f64 {
        self.velocity * (0.5 * self.kw() * x).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioKind {
    DensityPatch { a0: f64, b0: f64 },
    VacuumBubble { a0: f64, b0: f64 },
    Smooth(SmoothProfile),
    Mollified { base: Box<ScenarioKind>, epsilon: f64 },
}

impl ScenarioKind {
    /// Initial density, before any mollification.
    pub fn initial_density(&self, x: f64) -> f64 {
        match *self {
            ScenarioKind::DensityPatch { a0, b0 } => {
                if x > a0 && x < b0 {
                    1.0 / (b0 - a0)
                } else {
                    0.0
                }
            }
            ScenarioKind::VacuumBubble { a0, b0 } => {
                if x < a0 || x > b0 {
                    1.0 / (1.0 + a0 - b0)
                } else {
                    0.0
                }
            }
            ScenarioKind::Smooth(p) => p.density(x),
            ScenarioKind::Mollified { ref base, .. } => base.initial_density(x),
        }
    }

    fn initial_velocity(&self, x: f64) -> f64 {
        match *self {
            ScenarioKind::Smooth(p) => p.velocity_at(x),
            ScenarioKind::Mollified { ref base, .. } => base.initial_velocity(x),
            _ => 0.0,
        }
    }

    /// Exact mean of the initial density over `[lo, hi]`, with the density
    /// extended outside `[0, 1]` by its boundary values.
    fn mean_density(&self, lo: f64, hi: f64) -> f64 {
        let h = hi - lo;
        let inside = |lo: f64, hi: f64| -> f64 {
            // mass of the unextended profile on [lo, hi] subset of [0, 1]
            let (lo, hi) = (lo.max(0.0), hi.min(1.0));
            if hi <= lo {
                return 0.0;
            }
            match *self {
                ScenarioKind::DensityPatch { a0, b0 } => {
                    let overlap = (hi.min(b0) - lo.max(a0)).max(0.0);
                    overlap / (b0 - a0)
                }
                ScenarioKind::VacuumBubble { a0, b0 } => {
                    let gas = (hi - lo) - (hi.min(b0) - lo.max(a0)).max(0.0);
                    gas / (1.0 + a0 - b0)
                }
                ScenarioKind::Smooth(p) => p.cumulative_mass(hi) - p.cumulative_mass(lo),
                ScenarioKind::Mollified { ref base, .. } => base.mean_density(lo, hi) * (hi - lo),
            }
        };
        let left_ext = (0.0f64.min(hi) - lo).max(0.0) * self.initial_density(0.0);
        let right_ext = (hi - 1.0f64.max(lo)).max(0.0) * self.initial_density(1.0);
        (inside(lo, hi) + left_ext + right_ext) / h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub cells_per_unit_mass: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, cells_per_unit_mass: usize) -> Self {
        Self {
            kind,
            cells_per_unit_mass,
        }
    }

    pub fn build(&self, law: MaterialLaw) -> Result<SimState, StateError> {
        let n = self.cells_per_unit_mass;
        match self.kind {
            ScenarioKind::DensityPatch { a0, b0 } => build_density_patch(a0, b0, n, law),
            ScenarioKind::VacuumBubble { a0, b0 } => build_vacuum_bubble(a0, b0, n, law),
            ScenarioKind::Smooth(profile) => build_smooth(profile, n, law),
            ScenarioKind::Mollified { ref base, epsilon } => build_mollified(base, epsilon, n, law),
        }
    }

    /// Limits that free interfaces approach, in endpoint order.
    pub fn predicted_interface_limits(&self) -> Vec<f64> {
        match self.kind {
            ScenarioKind::DensityPatch { .. } => vec![0.0, 1.0],
            ScenarioKind::VacuumBubble { a0, b0 } => {
                let x_inf = a0 / (1.0 + a0 - b0);
                vec![x_inf, x_inf]
            }
            _ => Vec::new(),
        }
    }
}

fn check_interval(a0: f64, b0: f64) -> Result<(), StateError> {
    if !(a0 > 0.0) {
        return Err(config_err("a0", format!("must be > 0, got {a0}")));
    }
    if !(b0 < 1.0) {
        return Err(config_err("b0", format!("must be < 1, got {b0}")));
    }
    if !(a0 < b0) {
        return Err(config_err("a0", format!("must be < b0, got a0={a0} b0={b0}")));
    }
    Ok(())
}

fn check_resolution(n: usize) -> Result<(), StateError> {
    if n < 4 {
        return Err(config_err("cells_per_unit_mass", format!("must be >= 4, got {n}")));
    }
    Ok(())
}

/// Uniform gas at rest on `[x_left, x_left + mass * v]`.
fn uniform_component(cells: usize, mass: f64, v: f64, x_left: f64, left: BoundaryKind, right: BoundaryKind) -> GasComponent {
    let dm = mass / cells as f64;
    GasComponent::from_cells(vec![dm; cells], vec![v; cells], vec![0.0; cells + 1], x_left, left, right)
}

/// Uniform density `1/(b0 - a0)` on `[a0, b0]`, vacuum on both sides.
pub fn build_density_patch(a0: f64, b0: f64, n: usize, law: MaterialLaw) -> Result<SimState, StateError> {
    check_interval(a0, b0)?;
    check_resolution(n)?;
    let mut components = vec![uniform_component(n, 1.0, b0 - a0, a0, BoundaryKind::FreeVacuum, BoundaryKind::FreeVacuum)];
    close_total_mass(&mut components);
    components[0].layout_from_left(a0);
    Ok(SimState {
        components,
        t: 0.0,
        law,
        markers: vec![
            InterfaceMarker {
                mass: 0.0,
                side: Side::Start,
            },
            InterfaceMarker { mass: 1.0, side: Side::End },
        ],
    })
}

/// Uniform gas on `[0, a0]` and `[b0, 1]` with a vacuum bubble between.
pub fn build_vacuum_bubble(a0: f64, b0: f64, n: usize, law: MaterialLaw) -> Result<SimState, StateError> {
    check_interval(a0, b0)?;
    check_resolution(n)?;
    let rho = 1.0 / (1.0 + a0 - b0);
    let mass_left = a0 * rho;
    let n_left = ((n as f64 * mass_left).round() as usize).clamp(2, n - 2);
    let left = uniform_component(n_left, mass_left, 1.0 / rho, 0.0, BoundaryKind::Wall, BoundaryKind::FreeVacuum);
    let right = uniform_component(
        n - n_left,
        1.0 - mass_left,
        1.0 / rho,
        b0,
        BoundaryKind::FreeVacuum,
        BoundaryKind::Wall,
    );
    let mut components = vec![left, right];
    close_total_mass(&mut components);
    components[1].layout_from_right(1.0);
    Ok(SimState {
        components,
        t: 0.0,
        law,
        markers: vec![
            InterfaceMarker {
                mass: mass_left,
                side: Side::End,
            },
            InterfaceMarker {
                mass: mass_left,
                side: Side::Start,
            },
        ],
    })
}

/// Places `n` equal-mass cells against a positive density whose cumulative
/// mass is `cumulative` (monotone, `cumulative(0) = 0`, `cumulative(1) = 1`).
fn equal_mass_nodes(n: usize, cumulative: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut x = vec![0.0; n + 1];
    x[n] = 1.0;
    for (j, xj) in x.iter_mut().enumerate().take(n).skip(1) {
        let target = j as f64 / n as f64;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cumulative(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * 0.5 {
                break;
            }
        }
        *xj = 0.5 * (lo + hi);
    }
    x
}

fn wall_bounded_component(x: &[f64], uniform: bool, u_at: impl Fn(f64) -> f64) -> GasComponent {
    let n = x.len() - 1;
    let dm = 1.0 / n as f64;
    let v: Vec<f64> = if uniform {
        vec![1.0; n]
    } else {
        x.windows(2).map(|w| (w[1] - w[0]) / dm).collect()
    };
    let mut u: Vec<f64> = x.iter().map(|&xj| u_at(xj)).collect();
    u[0] = 0.0;
    u[n] = 0.0;
    let mut c = [GasComponent::from_cells(vec![dm; n], v, u, 0.0, BoundaryKind::Wall, BoundaryKind::Wall)];
    close_total_mass(&mut c);
    let [mut c] = c;
    c.fill_between_walls();
    c
}

/// Smooth positive data between two walls, renormalized to unit mass.
pub fn build_smooth(profile: SmoothProfile, n: usize, law: MaterialLaw) -> Result<SimState, StateError> {
    profile.validate()?;
    check_resolution(n)?;
    let total = profile.cumulative_mass(1.0);
    let x = equal_mass_nodes(n, |x| profile.cumulative_mass(x) / total);
    let gas = wall_bounded_component(&x, profile.amplitude == 0.0, |x| profile.velocity_at(x));
    Ok(SimState {
        components: vec![gas],
        t: 0.0,
        law,
        markers: Vec::new(),
    })
}

/// Friedrichs bump `exp(-1/(1 - s^2))` on `|s| < 1`, unnormalized.
fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff: 1 on `|s| <= 1/2`, 0 on `|s| >= 1`.
fn cutoff(s: f64) -> f64 {
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let a = s.abs();
    let up = f(1.0 - a);
    let down = f(a - 0.5);
    up / (up + down)
}

/// Mollified initial data sampled on a uniform Eulerian grid.
#[derive(Debug, Clone)]
pub struct MollifiedProfile {
    /// Sampling cell width.
    pub h: f64,
    /// Density per sampling cell, including the `+ epsilon` floor, before
    /// renormalization.
    pub rho: Vec<f64>,
    /// Unmollified cell means of the base density.
    pub rho_base: Vec<f64>,
    /// Velocity at sampling cell edges.
    pub u_edges: Vec<f64>,
    /// Factor that restores unit mass.
    pub mass_scale: f64,
}

impl MollifiedProfile {
    pub fn new(base: &ScenarioKind, epsilon: f64, n: usize, law: &MaterialLaw) -> Result<Self, StateError> {
        if let ScenarioKind::Mollified { .. } = base {
            return Err(config_err("base", "cannot mollify a mollified scenario"));
        }
        if !(epsilon > 0.0) {
            return Err(config_err("epsilon", format!("must be > 0, got {epsilon}")));
        }
        match *base {
            ScenarioKind::DensityPatch { a0, b0 } | ScenarioKind::VacuumBubble { a0, b0 } => {
                check_interval(a0, b0)?;
                let limit = 0.5 * a0.min(1.0 - b0);
                if epsilon > limit {
                    return Err(config_err("epsilon", format!("must be <= min(a0, 1-b0)/2 = {limit}")));
                }
            }
            ScenarioKind::Smooth(p) => p.validate()?,
            ScenarioKind::Mollified { .. } => unreachable!(),
        }
        check_resolution(n)?;
        let samples = 8 * n;
        let h = 1.0 / samples as f64;
        let reach = (epsilon / h).ceil() as i64;
        if reach < 4 {
            return Err(config_err(
                "epsilon",
                format!("epsilon={epsilon} is below 4 sampling cells (h={h}); raise the resolution"),
            ));
        }
        let mut weights: Vec<(i64, f64)> = (-reach..=reach).map(|l| (l, bump(l as f64 * h / epsilon))).collect();
        let norm: f64 = weights.iter().map(|w| w.1).sum();
        weights.iter_mut().for_each(|w| w.1 /= norm);

        let rho_base: Vec<f64> = (0..samples)
            .map(|k| base.mean_density(k as f64 * h, (k + 1) as f64 * h))
            .collect();
        let mean_at = |k: i64| -> f64 {
            if (0..samples as i64).contains(&k) {
                rho_base[k as usize]
            } else {
                base.mean_density(k as f64 * h, (k + 1) as f64 * h)
            }
        };
        let rho: Vec<f64> = (0..samples as i64)
            .map(|k| weights.iter().map(|&(l, w)| w * mean_at(k - l)).sum::<f64>() + epsilon)
            .collect();

        let u_ext = |x: f64| if (0.0..=1.0).contains(&x) { base.initial_velocity(x) } else { 0.0 };
        let smoothed_u: Vec<f64> = (0..=samples as i64)
            .map(|k| weights.iter().map(|&(l, w)| w * u_ext((k - l) as f64 * h)).sum())
            .collect();
        // density at edges for the stress-compatibility terms
        let rho_edge = |k: usize| -> f64 {
            match k {
                0 => rho[0],
                k if k == samples => rho[samples - 1],
                k => 0.5 * (rho[k - 1] + rho[k]),
            }
        };
        let psi = |x: f64| cutoff(x / epsilon);
        // int_0^x psi(y) dy and int_x^1 psi(1-y) dy by the trapezoid rule on edges
        let mut left_int = vec![0.0; samples + 1];
        for k in 1..=samples {
            let (a, b) = ((k - 1) as f64 * h, k as f64 * h);
            left_int[k] = left_int[k - 1] + 0.5 * h * (psi(a) + psi(b));
        }
        let mut right_int = vec![0.0; samples + 1];
        for k in (0..samples).rev() {
            let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
            right_int[k] = right_int[k + 1] + 0.5 * h * (psi(1.0 - a) + psi(1.0 - b));
        }
        let (u_at_0, u_at_1) = (smoothed_u[0], smoothed_u[samples]);
        let u_edges: Vec<f64> = (0..=samples)
            .map(|k| {
                let x = k as f64 * h;
                let (pl, pr) = (psi(x), psi(1.0 - x));
                let r = rho_edge(k);
                let ratio = law.p(r) / law.mu(r);
                smoothed_u[k] * (1.0 - pl - pr) + u_at_0 * pl + u_at_1 * pr + ratio * left_int[k] + ratio * right_int[k]
            })
            .collect();

        let mass: f64 = rho.iter().sum::<f64>() * h;
        Ok(Self {
            h,
            rho,
            rho_base,
            u_edges,
            mass_scale: 1.0 / mass,
        })
    }

    /// `||rho_eps - rho_0||_{L^2}` on the sampling grid, before renormalization.
    pub fn l2_distance_to_base(&self) -> f64 {
        (self.rho.iter().zip(&self.rho_base).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * self.h).sqrt()
    }

    fn cumulative_mass(&self, x: f64) -> f64 {
        let s = (x / self.h).clamp(0.0, self.rho.len() as f64);
        let k = (s.floor() as usize).min(self.rho.len() - 1);
        let below: f64 = self.rho[..k].iter().sum::<f64>();
        (below + (s - k as f64) * self.rho[k]) * self.h * self.mass_scale
    }

    fn velocity(&self, x: f64) -> f64 {
        let s = (x / self.h).clamp(0.0, (self.u_edges.len() - 1) as f64);
        let k = (s.floor() as usize).min(self.u_edges.len() - 2);
        let w = s - k as f64;
        (1.0 - w) * self.u_edges[k] + w * self.u_edges[k + 1]
    }
}

/// Strictly positive regularized data between two walls.
pub fn build_mollified(base: &ScenarioKind, epsilon: f64, n: usize, law: MaterialLaw) -> Result<SimState, StateError> {
    let profile = MollifiedProfile::new(base, epsilon, n, &law)?;
    // prefix sums make the inversion O(log) per node
    let mut prefix = Vec::with_capacity(profile.rho.len() + 1);
    prefix.push(0.0);
    for r in &profile.rho {
        prefix.push(prefix.last().unwrap() + r * profile.h * profile.mass_scale);
    }
    let x = {
        let mut x = vec![0.0; n + 1];
        x[n] = 1.0;
        for (j, xj) in x.iter_mut().enumerate().take(n).skip(1) {
            let target = j as f64 / n as f64;
            let k = prefix.partition_point(|&m| m < target).saturating_sub(1).min(profile.rho.len() - 1);
            let cell_mass = profile.rho[k] * profile.h * profile.mass_scale;
            *xj = (k as f64 + (target - prefix[k]) / cell_mass) * profile.h;
        }
        x
    };
    debug_assert!((profile.cumulative_mass(x[n / 2]) - 0.5).abs() < 1e-9 || n % 2 == 1);
    let gas = wall_bounded_component(&x, false, |x| profile.velocity(x));
    Ok(SimState {
        components: vec![gas],
        t: 0.0,
        law,
        markers: Vec::new(),
    })
}

/// One record of an Eulerian snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnapshotRow {
    Gas { x: f64, rho: f64, u: f64, g: f64 },
    Vacuum { lo: f64, hi: f64 },
}

/// Cell-centered view of the state with explicit vacuum records, in spatial
/// order.
pub fn eulerian_snapshot(s: &SimState) -> Vec<SnapshotRow> {
    let mut rows = Vec::with_capacity(s.cells() + s.components.len() + 1);
    let mut prev_right = 0.0;
    for c in &s.components {
        if c.left_bc == BoundaryKind::FreeVacuum {
            rows.push(SnapshotRow::Vacuum {
                lo: prev_right,
                hi: c.left(),
            });
        }
        for i in 0..c.cells() {
            rows.push(SnapshotRow::Gas {
                x: 0.5 * (c.x[i] + c.x[i + 1]),
                rho: c.density(i),
                u: 0.5 * (c.u[i] + c.u[i + 1]),
                g: crate::solver::stress(&s.law, c, i),
            });
        }
        prev_right = c.right();
    }
    if s.components.last().is_some_and(|c| c.right_bc == BoundaryKind::FreeVacuum) {
        rows.push(SnapshotRow::Vacuum { lo: prev_right, hi: 1.0 });
    }
    rows
}

/// Writes `t,x,rho,u,G,region` rows; vacuum rows sit at the gap midpoint
/// with an empty velocity.
pub fn write_snapshot_csv<W: Write>(s: &SimState, out: W) -> Result<(), StateError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "rho", "u", "G", "region"])?;
    let t = s.t.to_string();
    for row in eulerian_snapshot(s) {
        match row {
            SnapshotRow::Gas { x, rho, u, g } => {
                w.write_record([&t, &x.to_string(), &rho.to_string(), &u.to_string(), &g.to_string(), "gas"])?
            }
            SnapshotRow::Vacuum { lo, hi } => {
                w.write_record([&t, &(0.5 * (lo + hi)).to_string(), "0", "", "0", "vacuum"])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn snapshot_file_name(frame: usize) -> String {
    format!("snap_{frame:06}.csv")
}

pub fn write_snapshot_file(s: &SimState, dir: &Path, frame: usize) -> Result<(), StateError> {
    let f = std::fs::File::create(dir.join(snapshot_file_name(frame)))?;
    write_snapshot_csv(s, std::io::BufWriter::new(f))
}
