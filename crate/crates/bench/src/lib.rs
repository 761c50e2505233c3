//! Shared inputs for the benchmarks.

use plf_core::scenario::{generate, ScenarioSpec};
use plf_core::{replay, EventRecord, GlobalState};

/// Deterministic synthetic stream of about `events` events.
pub fn stream(events: usize) -> Vec<EventRecord> {
    generate(&ScenarioSpec::standard(0xbe4c, 200, events)).expect("standard spec is feasible").events
}

/// State after replaying [`stream`].
pub fn state(events: usize) -> GlobalState {
    let mut state = GlobalState::default();
    replay(&mut state, &stream(events)).expect("generated streams replay cleanly");
    state
}
