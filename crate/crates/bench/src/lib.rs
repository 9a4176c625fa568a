//! Benchmarks for the solver kernels; see `benches/`.

use cns1d::{MaterialLaw, ScenarioKind, ScenarioSpec, SimState, SmoothProfile};

/// A smooth perturbed state with `n` cells, the usual benchmark input.
pub fn smooth_state(n: usize) -> SimState {
    ScenarioSpec::new(ScenarioKind::Smooth(SmoothProfile::new(0.3, 0.5, 1)), n)
        .build(MaterialLaw::default())
        .expect("smooth state builds")
}
