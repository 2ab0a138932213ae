//! Subvenient state, controller memory, and trajectory records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::feedback::{EquationPairList, ProbeSchedule};
use crate::scalar::{squared_norm, sup_distance, Scalar};

/// Un-subvenient controller memory `v`: the momentum buffer, the position in
/// a fixed probe set, and the generator used for probe resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState<S> {
    pub momentum: Vec<Vec<S>>,
    pub cursor: usize,
    pub rng: ChaCha8Rng,
}

/// Subvenient parameters `x = (x^0, …, x^{M−1})` together with the controller
/// memory `v` and the current probe `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubvenientState<S> {
    pub slots: Vec<Vec<S>>,
    pub v: ControllerState<S>,
    pub d: Vec<S>,
}

impl<S: Scalar> SubvenientState<S> {
    /// A state with the given parameters, zero momentum, and probe `d`.
    pub fn from_parts(slots: Vec<Vec<S>>, d: Vec<S>, rng_seed: u64) -> Self {
        let momentum = slots.iter().map(|s| vec![S::zero(); s.len()]).collect();
        Self {
            slots,
            v: ControllerState {
                momentum,
                cursor: 0,
                rng: ChaCha8Rng::seed_from_u64(rng_seed),
            },
            d,
        }
    }

    pub fn slot_norms(&self) -> Vec<S> {
        self.slots.iter().map(|s| squared_norm(s).sqrt()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slots
            .iter()
            .chain(&self.v.momentum)
            .chain(std::iter::once(&self.d))
            .all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Sup-norm distance between the slot parameters of two states.
    pub fn slot_distance(&self, other: &Self) -> S {
        self.slots
            .iter()
            .zip(&other.slots)
            .fold(S::zero(), |acc, (a, b)| acc.max(sup_distance(a, b)))
    }

    /// Sup-norm distance over slots, momentum and probe. Infinite when the
    /// discrete controller memory (cursor, generator) differs.
    pub fn full_distance(&self, other: &Self) -> S {
        if self.v.cursor != other.v.cursor || self.v.rng != other.v.rng {
            return S::infinity();
        }
        let momentum = self
            .v
            .momentum
            .iter()
            .zip(&other.v.momentum)
            .fold(S::zero(), |acc, (a, b)| acc.max(sup_distance(a, b)));
        self.slot_distance(other)
            .max(momentum)
            .max(sup_distance(&self.d, &other.d))
    }
}

/// Draws the initial state of a validated scenario.
///
/// Slot parameters are uniform in `[-0.5, 0.5]` from a ChaCha8 stream seeded
/// with `init_seed`; the controller generator is seeded from the same stream.
pub fn init_state<S: Scalar>(scenario: &Scenario) -> SubvenientState<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.config.init_seed);
    let slots = scenario
        .families
        .iter()
        .map(|f| {
            (0..f.param_count())
                .map(|_| S::of(rng.gen_range(-0.5..=0.5)))
                .collect()
        })
        .collect();
    let mut state = SubvenientState::from_parts(slots, Vec::new(), rng.gen());
    state.d = match &scenario.probes {
        ProbeSchedule::FixedSet(set) => set[0].iter().map(|&x| S::of(x)).collect(),
        ProbeSchedule::Resample => (0..scenario.config.m)
            .map(|_| S::of(state.v.rng.gen_range(-1.0..=1.0)))
            .collect(),
    };
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordEvent {
    /// Logged at a macro step before the supervenient law fires.
    PreMacro,
    /// Logged at a macro step after the supervenient law fired.
    PostMacro,
}

/// One line of the JSONL trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: u64,
    #[serde(rename = "T")]
    pub macro_t: u64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<RecordEvent>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub law_stall: bool,
    pub active_pairs: EquationPairList,
    pub x_norms: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory records serialize")
    }
}
