//! Feedback errors from equation pairs and the subvenient control law.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeFamily;
use crate::error::{DivergenceError, FeedbackError, ShapeError};
use crate::expr::{eval_expr, parse_sequence, CompiledExpr, ExprTree, IndexSequence};
use crate::scalar::{all_finite, squared_norm, Scalar};
use crate::state::SubvenientState;

/// One equation `left = right` between index sequences.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(
    from = "(IndexSequence, IndexSequence)",
    into = "(IndexSequence, IndexSequence)"
)]
pub struct EquationPair {
    pub left: IndexSequence,
    pub right: IndexSequence,
}

impl EquationPair {
    pub fn new(left: IndexSequence, right: IndexSequence) -> Self {
        Self { left, right }
    }

    /// Parses both sides from their text form, e.g. `("[1,2]", "[2,1]")`.
    pub fn parse(left: &str, right: &str) -> Result<Self, crate::error::SequenceError> {
        Ok(Self::new(left.parse()?, right.parse()?))
    }
}

impl From<(IndexSequence, IndexSequence)> for EquationPair {
    fn from((left, right): (IndexSequence, IndexSequence)) -> Self {
        Self { left, right }
    }
}

impl From<EquationPair> for (IndexSequence, IndexSequence) {
    fn from(p: EquationPair) -> Self {
        (p.left, p.right)
    }
}

impl fmt::Display for EquationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.left, self.right)
    }
}

/// The list of equations currently defining the feedback error.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EquationPairList(pub Vec<EquationPair>);

impl EquationPairList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EquationPair> {
        self.0.iter()
    }

    /// Commutativity `X^a X^b = X^b X^a`.
    pub fn commutativity(a: usize, b: usize) -> Self {
        Self(vec![EquationPair::new(
            IndexSequence::indices(&[a, b]),
            IndexSequence::indices(&[b, a]),
        )])
    }
}

impl fmt::Display for EquationPairList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, pair) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            write!(f, "{pair}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct CompiledPair {
    left: ExprTree,
    right: ExprTree,
    left_ops: CompiledExpr,
    right_ops: CompiledExpr,
}

/// An [`EquationPairList`] parsed and lowered against a fixed arity table.
#[derive(Debug, Clone)]
pub struct CompiledPairs {
    source: EquationPairList,
    pairs: Vec<CompiledPair>,
}

impl CompiledPairs {
    pub fn new(list: &EquationPairList, arities: &[usize]) -> Result<Self, FeedbackError> {
        let pairs = list
            .iter()
            .enumerate()
            .map(|(k, pair)| {
                let build = || -> Result<CompiledPair, FeedbackError> {
                    let left = parse_sequence(&pair.left, arities)?;
                    let right = parse_sequence(&pair.right, arities)?;
                    Ok(CompiledPair {
                        left_ops: left.compile(),
                        right_ops: right.compile(),
                        left,
                        right,
                    })
                };
                build().map_err(|e| e.at_pair(k))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            source: list.clone(),
            pairs,
        })
    }

    pub fn source(&self) -> &EquationPairList {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `er_k(d) = e_k^L(d) − e_k^R(d)` for every pair `k`.
    pub fn errors<S: Scalar>(
        &self,
        families: &[BridgeFamily],
        slots: &[Vec<S>],
        d: &[S],
    ) -> Result<Vec<Vec<S>>, FeedbackError> {
        self.pairs
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let eval = || -> Result<Vec<S>, ShapeError> {
                    let l = eval_expr(&p.left, families, slots, d)?;
                    let r = eval_expr(&p.right, families, slots, d)?;
                    Ok(l.iter().zip(&r).map(|(&a, &b)| a - b).collect())
                };
                eval().map_err(|e| FeedbackError::from(e).at_pair(k))
            })
            .collect()
    }

    /// Mean over probes of `Σ_k ‖er_k(d)‖²`.
    pub fn loss<S: Scalar>(
        &self,
        families: &[BridgeFamily],
        slots: &[Vec<S>],
        probes: &[Vec<S>],
    ) -> Result<S, FeedbackError> {
        if probes.is_empty() {
            return Err(FeedbackError::NoProbes);
        }
        let mut total = S::zero();
        for d in probes {
            for er in self.errors(families, slots, d)? {
                total = total + squared_norm(&er);
            }
        }
        Ok(total / S::of(probes.len() as f64))
    }

    /// Adds `∇_slots loss` over `probes` into `grads`.
    fn accumulate_loss_gradient<S: Scalar>(
        &self,
        families: &[BridgeFamily],
        slots: &[Vec<S>],
        probes: &[Vec<S>],
        grads: &mut [Vec<S>],
    ) -> Result<(), FeedbackError> {
        let scale = S::of(2.0) / S::of(probes.len() as f64);
        for d in probes {
            for (k, p) in self.pairs.iter().enumerate() {
                let step = |grads: &mut [Vec<S>]| -> Result<(), ShapeError> {
                    let lt = p.left_ops.forward(families, slots, d)?;
                    let rt = p.right_ops.forward(families, slots, d)?;
                    let cot: Vec<S> = p
                        .left_ops
                        .output(&lt)
                        .iter()
                        .zip(p.right_ops.output(&rt))
                        .map(|(&a, &b)| (a - b) * scale)
                        .collect();
                    p.left_ops.backward(families, slots, &lt, &cot, grads)?;
                    let neg: Vec<S> = cot.iter().map(|&c| -c).collect();
                    p.right_ops.backward(families, slots, &rt, &neg, grads)?;
                    Ok(())
                };
                step(grads).map_err(|e| FeedbackError::from(e).at_pair(k))?;
            }
        }
        Ok(())
    }

    /// `∇_slots loss`, one vector per slot.
    pub fn loss_gradient<S: Scalar>(
        &self,
        families: &[BridgeFamily],
        slots: &[Vec<S>],
        probes: &[Vec<S>],
    ) -> Result<Vec<Vec<S>>, FeedbackError> {
        if probes.is_empty() {
            return Err(FeedbackError::NoProbes);
        }
        let mut grads: Vec<Vec<S>> = slots.iter().map(|s| vec![S::zero(); s.len()]).collect();
        self.accumulate_loss_gradient(families, slots, probes, &mut grads)?;
        Ok(grads)
    }
}

/// Feedback errors for an uncompiled pair list.
pub fn feedback_error<S: Scalar>(
    cpair: &EquationPairList,
    families: &[BridgeFamily],
    state: &SubvenientState<S>,
    d: &[S],
) -> Result<Vec<Vec<S>>, FeedbackError> {
    let arities: Vec<usize> = families.iter().map(BridgeFamily::arity).collect();
    CompiledPairs::new(cpair, &arities)?.errors(families, &state.slots, d)
}

/// Aggregate loss for an uncompiled pair list. Zero for an empty list.
pub fn loss<S: Scalar>(
    cpair: &EquationPairList,
    families: &[BridgeFamily],
    state: &SubvenientState<S>,
    probes: &[Vec<S>],
) -> Result<S, FeedbackError> {
    let arities: Vec<usize> = families.iter().map(BridgeFamily::arity).collect();
    CompiledPairs::new(cpair, &arities)?.loss(families, &state.slots, probes)
}

/// Where the probe batch of each control step comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSchedule<S> {
    /// The loss averages over the whole set; `d` walks it cyclically.
    FixedSet(Vec<Vec<S>>),
    /// The loss uses the current `d` alone; the next `d` is drawn uniformly
    /// from `[-1, 1]^m` with the controller's generator.
    Resample,
}

impl<S: Scalar> ProbeSchedule<S> {
    /// The probes the loss is evaluated on while the state's probe is `d`.
    pub fn batch<'a>(&'a self, d: &'a [S]) -> Vec<&'a [S]> {
        match self {
            ProbeSchedule::FixedSet(set) => set.iter().map(Vec::as_slice).collect(),
            ProbeSchedule::Resample => vec![d],
        }
    }

    pub fn batch_owned(&self, d: &[S]) -> Vec<Vec<S>> {
        self.batch(d).into_iter().map(<[S]>::to_vec).collect()
    }
}

/// Step size, momentum coefficient and parameter leak of the control law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains<S> {
    pub eta: S,
    pub mu: S,
    pub drift: S,
}

/// One application of the subvenient law `p`.
///
/// Descends the feedback loss with heavy-ball momentum and a multiplicative
/// leak, then advances the probe. The supervenient level enters only through
/// `cpair`.
pub fn control_step<S: Scalar>(
    state: &SubvenientState<S>,
    cpair: &CompiledPairs,
    families: &[BridgeFamily],
    probes: &ProbeSchedule<S>,
    gains: &Gains<S>,
) -> Result<SubvenientState<S>, FeedbackError> {
    let batch = probes.batch_owned(&state.d);
    let grads = cpair.loss_gradient(families, &state.slots, &batch)?;
    if let Some(slot) = grads.iter().position(|g| !all_finite(g)) {
        return Err(DivergenceError {
            slot,
            quantity: "gradient",
            step: None,
        }
        .into());
    }

    let mut next = state.clone();
    let keep = S::one() - gains.drift;
    for (slot, grad) in grads.iter().enumerate() {
        let momentum = &mut next.v.momentum[slot];
        let params = &mut next.slots[slot];
        for ((p, v), &g) in params.iter_mut().zip(momentum.iter_mut()).zip(grad) {
            *v = gains.mu * *v + g;
            *p = keep * *p - gains.eta * *v;
        }
        if !all_finite(params) {
            return Err(DivergenceError {
                slot,
                quantity: "parameters",
                step: None,
            }
            .into());
        }
    }

    match probes {
        ProbeSchedule::FixedSet(set) => {
            next.v.cursor = (state.v.cursor + 1) % set.len();
            next.d = set[next.v.cursor].clone();
        }
        ProbeSchedule::Resample => {
            let m = state.d.len();
            next.d = (0..m)
                .map(|_| S::of(next.v.rng.gen_range(-1.0..=1.0)))
                .collect();
        }
    }
    Ok(next)
}
