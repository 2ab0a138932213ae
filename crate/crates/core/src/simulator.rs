//! The dual-laws loop: one step of `P` every `K` steps of `p`.

use crate::config::Scenario;
use crate::error::{ConfigError, SimError};
use crate::feedback::{control_step, CompiledPairs};
use crate::state::{init_state, RecordEvent, SubvenientState, TrajectoryRecord};
use crate::superlaw::{LawStall, SuperLawState};

/// Everything that evolves during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub sub: SubvenientState<f64>,
    pub law: SuperLawState,
    /// Micro-step counter.
    pub t: u64,
}

impl SimState {
    /// Macro-step counter `T = ⌊t / K⌋`.
    pub fn macro_t(&self, k: u64) -> u64 {
        self.t / k
    }
}

/// What happened during one [`Simulator::step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub macro_event: bool,
    pub stall: Option<LawStall>,
}

pub struct Simulator<'s> {
    scenario: &'s Scenario,
    state: SimState,
    active: CompiledPairs,
}

impl<'s> Simulator<'s> {
    pub fn new(scenario: &'s Scenario) -> Self {
        let law = scenario.law.initial_state();
        Self::with_law_state(scenario, law).expect("validated scenarios have valid initial pairs")
    }

    /// Starts from the scenario's subvenient initial state but a caller-chosen
    /// law state.
    pub fn with_law_state(scenario: &'s Scenario, law: SuperLawState) -> Result<Self, ConfigError> {
        let active = CompiledPairs::new(&law.cpair, &scenario.arities)
            .map_err(|e| ConfigError::new("law_state.cpair", e.to_string()))?;
        Ok(Self {
            scenario,
            state: SimState {
                sub: init_state(scenario),
                law,
                t: 0,
            },
            active,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    /// Whether the next step starts with a macro event.
    pub fn macro_due(&self) -> bool {
        let t = self.state.t;
        t > 0 && t.is_multiple_of(self.scenario.config.k)
    }

    /// Applies `P` once and installs the resulting pair list.
    fn apply_macro(&mut self) -> Option<LawStall> {
        let (next, stall) = match self.scenario.law.step(&self.state.law) {
            Ok(next) => (next, None),
            Err(stall) => ((*stall.state).clone(), Some(stall)),
        };
        if next.cpair != self.state.law.cpair {
            self.active = CompiledPairs::new(&next.cpair, &self.scenario.arities)
                .expect("the supervenient law only emits valid pair lists");
        }
        self.state.law = next;
        stall
    }

    fn apply_micro(&mut self) -> Result<(), SimError> {
        let step = self.state.t + 1;
        let next = control_step(
            &self.state.sub,
            &self.active,
            &self.scenario.families,
            &self.scenario.probes,
            &self.scenario.gains(),
        )
        .map_err(|source| {
            let source = match source {
                crate::error::FeedbackError::Divergence(mut d) => {
                    d.step = Some(step);
                    d.into()
                }
                other => other,
            };
            SimError::Step { step, source }
        })?;
        self.state.sub = next;
        self.state.t = step;
        Ok(())
    }

    /// One micro-step, preceded by a macro event when `t` is a positive
    /// multiple of `K`. The supervenient cause lands before the subvenient
    /// update it influences.
    pub fn step(&mut self) -> Result<StepReport, SimError> {
        let mut report = StepReport::default();
        if self.macro_due() {
            report.macro_event = true;
            report.stall = self.apply_macro();
        }
        self.apply_micro()?;
        Ok(report)
    }

    /// Loss of the active pair list at the current state.
    pub fn loss(&self) -> Result<f64, SimError> {
        let batch = self.scenario.probes.batch_owned(&self.state.sub.d);
        let loss = self
            .active
            .loss(&self.scenario.families, &self.state.sub.slots, &batch)
            .map_err(|source| SimError::Step {
                step: self.state.t,
                source,
            })?;
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(SimError::NonFiniteLoss { step: self.state.t })
        }
    }

    pub fn record(&self, event: Option<RecordEvent>) -> Result<TrajectoryRecord, SimError> {
        let sub = &self.state.sub;
        Ok(TrajectoryRecord {
            t: self.state.t,
            macro_t: self.state.macro_t(self.scenario.config.k),
            loss: self.loss()?,
            event,
            law_stall: false,
            active_pairs: self.state.law.cpair.clone(),
            x_norms: sub.slot_norms(),
            x: sub.slots.clone(),
            d: sub.d.clone(),
        })
    }
}

/// A completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub final_state: SimState,
    pub stalls: usize,
}

/// A run that stopped early; `records` holds everything logged before the error.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub records: Vec<TrajectoryRecord>,
    pub error: SimError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

/// Runs `config.steps` micro-steps from the initial state.
///
/// Logs the initial state, every `log_every`-th step, the final step, and two
/// records around every macro event (before and after `P` fires).
pub fn run(scenario: &Scenario) -> Result<RunOutput, RunFailure> {
    run_from(Simulator::new(scenario))
}

pub fn run_from(mut sim: Simulator<'_>) -> Result<RunOutput, RunFailure> {
    let config = &sim.scenario.config;
    let (steps, k, every) = (config.steps, config.k, config.log_every);
    let mut records = Vec::new();
    let mut stalls = 0;

    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(RunFailure { records, error }),
            }
        };
    }

    records.push(attempt!(sim.record(None)));
    while sim.state.t < steps {
        if sim.macro_due() {
            let stall = sim.apply_macro();
            let mut post = attempt!(sim.record(Some(RecordEvent::PostMacro)));
            if stall.is_some() {
                stalls += 1;
                post.law_stall = true;
            }
            records.push(post);
        }
        attempt!(sim.apply_micro());
        let t = sim.state.t;
        if t < steps && t.is_multiple_of(k) {
            records.push(attempt!(sim.record(Some(RecordEvent::PreMacro))));
        } else if t.is_multiple_of(every) || t == steps {
            records.push(attempt!(sim.record(None)));
        }
    }
    Ok(RunOutput {
        records,
        final_state: sim.state,
        stalls,
    })
}

/// Serializes records as JSON lines.
pub fn to_jsonl(records: &[TrajectoryRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}
