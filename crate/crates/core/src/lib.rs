//! Dual-laws simulation of supervenient causation.
//!
//! Subvenient parameter vectors `x^i` realize functions `X^i = b_i(x^i)` on
//! `R^m`. A list of equations between index sequences (for example
//! `[0,1] = [1,0]`, commutativity of `X^0` and `X^1`) defines a feedback
//! error, which a gradient controller drives to zero by adjusting `x`. An
//! independent law rewrites the equation list on a slower clock.
//!
//! Module map:
//! - [`bridge`]: the parameterized families `b_i`.
//! - [`expr`]: index sequences, their expression trees, evaluation and
//!   reverse-mode gradients.
//! - [`feedback`]: feedback errors, loss, and the control step `p`.
//! - [`superlaw`]: the autonomous rewrite law `P`.
//! - [`simulator`]: the interleaved two-clock loop.
//! - [`analysis`]: reduction, witness, and gradient checks.

pub mod analysis;
pub mod bridge;
pub mod config;
pub mod error;
pub mod expr;
pub mod feedback;
pub mod scalar;
pub mod simulator;
pub mod state;
pub mod superlaw;

pub use bridge::{eval_bridge, grad_bridge, param_count, BridgeFamily, FamilyKind};
pub use config::{ProbeMode, Scenario, ScenarioConfig, SlotSpec};
pub use error::{ConfigError, DivergenceError, FeedbackError, SequenceError, ShapeError, SimError};
pub use expr::{eval_expr, grad_expr, parse_sequence, ExprTree, IndexSequence, Item};
pub use feedback::{
    control_step, feedback_error, loss, CompiledPairs, EquationPair, EquationPairList, Gains,
    ProbeSchedule,
};
pub use scalar::Scalar;
pub use simulator::{run, SimState, Simulator};
pub use state::{init_state, ControllerState, SubvenientState, TrajectoryRecord};
pub use superlaw::{step_superlaw, LawMemory, LawSpec, SuperLaw, SuperLawState};

/// Subvenient state in the simulator's arithmetic width.
pub type State = SubvenientState<f64>;
/// Subvenient state in single precision.
pub type State32 = SubvenientState<f32>;
pub type Gains64 = Gains<f64>;
pub type Probes = ProbeSchedule<f64>;
