//! Mechanized checks: epiphenomenal reduction, divergence witnesses, multiple
//! realizability, and finite-difference gradient verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bridge::{eval_bridge, permute_hidden, BridgeFamily, FamilyKind};
use crate::config::Scenario;
use crate::error::{FeedbackError, ShapeError, SimError};
use crate::expr::random_sequence;
use crate::feedback::{control_step, CompiledPairs, EquationPair, EquationPairList};
use crate::scalar::{squared_norm, sup_distance};
use crate::simulator::Simulator;
use crate::state::init_state;
use crate::superlaw::SuperLawState;

/// Slot trajectories closer than this in sup-norm count as identical.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-12;
/// Largest output change a multiple-realizability witness may show.
pub const MR_TOLERANCE: f64 = 1e-12;
/// Pass threshold for the worst relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const MR_PROBES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Report {
    pub verdict: Verdict,
    pub steps: u64,
    /// Max over steps of the sup-norm gap in `(x, v, d)`.
    pub deviation: f64,
    pub first_deviating_step: Option<u64>,
}

/// Runs an identity-law scenario twice: through the full dual-laws simulator,
/// and as the single-level law `p'(x, v)` obtained by fixing the pair list
/// inside the control step. Both must produce identical states.
pub fn lemma1_reduce(scenario: &Scenario) -> Result<Lemma1Report, AnalysisError> {
    if !scenario.is_epiphenomenal() {
        return Err(AnalysisError::Precondition(
            "reduction needs a scenario whose law is `identity`".into(),
        ));
    }
    let fixed = CompiledPairs::new(scenario.config.law.initial_pairs(), &scenario.arities)?;
    let gains = scenario.gains();
    let reduced = |x: &crate::state::SubvenientState<f64>| {
        control_step(x, &fixed, &scenario.families, &scenario.probes, &gains)
    };

    let mut composite = Simulator::new(scenario);
    let mut single = init_state::<f64>(scenario);
    let mut deviation = composite.state().sub.full_distance(&single);
    let mut first = (deviation != 0.0).then_some(0);
    for _ in 0..scenario.config.steps {
        composite.step()?;
        single = reduced(&single)?;
        let gap = composite.state().sub.full_distance(&single);
        if gap != 0.0 && first.is_none() {
            first = Some(composite.state().t);
        }
        deviation = deviation.max(gap);
    }
    Ok(Lemma1Report {
        verdict: if deviation == 0.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        steps: scenario.config.steps,
        deviation,
        first_deviating_step: first,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub verdict: Verdict,
    pub steps: u64,
    /// First state index `t` at which the slot trajectories differ.
    pub first_divergence: Option<u64>,
    pub final_deviation: f64,
    pub threshold: f64,
}

/// Runs the scenario from its own law state and from `alt`, with the same
/// subvenient initial state, and reports where the slot trajectories part.
///
/// A divergence shows that `x_{t+1}` is not a function of `(x_t, v_t, d_t)`
/// alone: both runs agree on those up to the divergence.
pub fn divergence_witness(
    scenario: &Scenario,
    alt: SuperLawState,
    threshold: f64,
) -> Result<WitnessReport, AnalysisError> {
    if !scenario.law.is_valid(&alt.cpair) {
        return Err(AnalysisError::Precondition(
            "alternative pair list does not parse against the slot table".into(),
        ));
    }
    let mut a = Simulator::new(scenario);
    let mut b = Simulator::with_law_state(scenario, alt)
        .map_err(|e| AnalysisError::Precondition(e.to_string()))?;
    let mut first = None;
    for _ in 0..scenario.config.steps {
        a.step()?;
        b.step()?;
        if first.is_none() && a.state().sub.slot_distance(&b.state().sub) > DIVERGENCE_TOLERANCE {
            first = Some(a.state().t);
        }
    }
    let final_deviation = a.state().sub.slot_distance(&b.state().sub);
    let verdict = if first.is_some() && final_deviation > threshold {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(WitnessReport {
        verdict,
        steps: scenario.config.steps,
        first_divergence: first,
        final_deviation,
        threshold,
    })
}

/// A change of subvenient parameters expected to leave the function unchanged.
#[derive(Debug, Clone, PartialEq)]
pub enum Reparam {
    /// Reorder `Mlp1h` hidden units.
    Permutation(Vec<usize>),
    /// Replace the padding entries.
    Pad(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MrReport {
    pub verdict: Verdict,
    pub max_deviation: f64,
    /// Whether the two parameter vectors differ (`x ≠ x'`).
    pub params_differ: bool,
    pub probes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Compares `b(x)` and `b(x')` on a seeded probe set.
pub fn mr_witness(
    family: &BridgeFamily,
    params: &[f64],
    reparam: &Reparam,
    probe_seed: u64,
) -> Result<MrReport, AnalysisError> {
    ShapeError::check("bridge parameters", family.param_count(), params.len())
        .map_err(AnalysisError::Shape)?;
    let alt = match reparam {
        Reparam::Permutation(perm) => {
            if family.kind != FamilyKind::Mlp1h {
                return Err(AnalysisError::Precondition(
                    "hidden-unit permutations need an mlp1h family".into(),
                ));
            }
            permute_hidden(family, params, perm)?
        }
        Reparam::Pad(values) => {
            ShapeError::check("pad values", family.pad, values.len())?;
            let mut alt = params.to_vec();
            alt[family.active_count()..].copy_from_slice(values);
            alt
        }
    };
    let params_differ = alt != params;

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let mut max_deviation: f64 = 0.0;
    for _ in 0..MR_PROBES {
        let args: Vec<Vec<f64>> = (0..family.arity())
            .map(|_| (0..family.m).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = args.iter().map(Vec::as_slice).collect();
        let y = eval_bridge(family, params, &refs)?;
        let y_alt = eval_bridge(family, &alt, &refs)?;
        max_deviation = max_deviation.max(sup_distance(&y, &y_alt));
    }

    let (verdict, note) = if !params_differ {
        let note = match reparam {
            Reparam::Permutation(_) if family.hidden <= 1 => {
                "h = 1 admits only the identity permutation"
            }
            _ => "x' equals x; the witness is degenerate",
        };
        (Verdict::Warning, Some(note.to_string()))
    } else if max_deviation <= MR_TOLERANCE {
        (Verdict::Pass, None)
    } else {
        (Verdict::Fail, None)
    };
    Ok(MrReport {
        verdict,
        max_deviation,
        params_differ,
        probes: MR_PROBES,
        note,
    })
}

/// Gap between two gradient vectors: `‖a − f‖ / max(‖a‖, ‖f‖)`, or the
/// absolute gap when both are zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, f)| a - f).collect();
    let abs = squared_norm(&diff).sqrt();
    let scale = squared_norm(analytic)
        .sqrt()
        .max(squared_norm(numeric).sqrt());
    if scale > 0.0 {
        abs / scale
    } else {
        abs
    }
}

/// Central-difference gradient of the loss with respect to every slot
/// parameter, evaluated through the tree evaluator.
pub fn finite_difference_gradient(
    pairs: &CompiledPairs,
    families: &[BridgeFamily],
    slots: &[Vec<f64>],
    probes: &[Vec<f64>],
    step: f64,
) -> Result<Vec<Vec<f64>>, FeedbackError> {
    let mut work = slots.to_vec();
    let mut grads = Vec::with_capacity(slots.len());
    for i in 0..slots.len() {
        let mut g = vec![0.0; slots[i].len()];
        for j in 0..slots[i].len() {
            let x = work[i][j];
            work[i][j] = x + step;
            let plus = pairs.loss(families, &work, probes)?;
            work[i][j] = x - step;
            let minus = pairs.loss(families, &work, probes)?;
            work[i][j] = x;
            g[j] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Relative error between the reverse-mode loss gradient and central
/// differences at one point.
pub fn gradient_discrepancy(
    pairs: &CompiledPairs,
    families: &[BridgeFamily],
    slots: &[Vec<f64>],
    probes: &[Vec<f64>],
    fd_step: f64,
) -> Result<f64, FeedbackError> {
    let analytic: Vec<f64> = pairs.loss_gradient(families, slots, probes)?.concat();
    let numeric: Vec<f64> =
        finite_difference_gradient(pairs, families, slots, probes, fd_step)?.concat();
    Ok(relative_error(&analytic, &numeric))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub verdict: Verdict,
    pub samples: usize,
    pub fd_step: f64,
    pub worst_relative_error: f64,
    pub worst_sample: Option<usize>,
    pub threshold: f64,
}

/// Draws `n_samples` random `(x, cpair, d)` over the scenario's slot table
/// and compares reverse-mode loss gradients with central differences.
pub fn grad_check(
    scenario: &Scenario,
    n_samples: usize,
    fd_step: f64,
    seed: u64,
) -> Result<GradCheckReport, AnalysisError> {
    if fd_step.is_nan() || fd_step <= 0.0 {
        return Err(AnalysisError::Precondition(
            "fd_step must be positive".into(),
        ));
    }
    let families = &scenario.families;
    let m = scenario.config.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_sample = None;
    for sample in 0..n_samples {
        let slots: Vec<Vec<f64>> = families
            .iter()
            .map(|f| {
                (0..f.param_count())
                    .map(|_| rng.gen_range(-0.5..=0.5))
                    .collect()
            })
            .collect();
        let n_pairs = rng.gen_range(1..=2);
        let list = EquationPairList(
            (0..n_pairs)
                .map(|_| {
                    EquationPair::new(
                        random_sequence(&mut rng, &scenario.arities, 3),
                        random_sequence(&mut rng, &scenario.arities, 3),
                    )
                })
                .collect(),
        );
        let pairs = CompiledPairs::new(&list, &scenario.arities)?;
        let d: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let err = gradient_discrepancy(&pairs, families, &slots, &[d], fd_step)?;
        if err > worst || worst_sample.is_none() {
            worst = worst.max(err);
            worst_sample = Some(sample);
        }
    }
    Ok(GradCheckReport {
        verdict: if worst < GRAD_TOLERANCE {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        samples: n_samples,
        fd_step,
        worst_relative_error: worst,
        worst_sample,
        threshold: GRAD_TOLERANCE,
    })
}
