//! The supervenient law `P`: autonomous rewrites of the equation-pair list.
//!
//! `P` maps `(cpair, w)` to `(cpair', w')`. Its inputs are the pair list, the
//! law memory `w`, and the static law description. No subvenient quantity is
//! reachable from here.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_sequence, IndexSequence, Item};
use crate::feedback::{EquationPair, EquationPairList};

/// Rewrites a GrammarWalk attempts before reporting a stall.
pub const MAX_MUTATION_ATTEMPTS: usize = 32;

fn default_max_len() -> usize {
    8
}

/// Description of a supervenient law, as it appears under `law` in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    /// No supervenient dynamics: the pair list never changes.
    Identity { pairs: EquationPairList },
    /// Cycles through `program`, advancing once every `period` macro-steps.
    Schedule {
        period: u64,
        program: Vec<EquationPairList>,
    },
    /// Seeded random rewrites of one pair per macro-step.
    GrammarWalk {
        law_seed: u64,
        /// Relative weights of swap-adjacent, append, swap-sides, wrap-heads.
        mutation_weights: [f64; 4],
        pairs: EquationPairList,
        /// Upper bound on the index count of either side of a pair.
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
}

impl LawSpec {
    pub fn is_identity(&self) -> bool {
        matches!(self, LawSpec::Identity { .. })
    }

    pub fn initial_pairs(&self) -> &EquationPairList {
        match self {
            LawSpec::Identity { pairs } | LawSpec::GrammarWalk { pairs, .. } => pairs,
            LawSpec::Schedule { program, .. } => &program[0],
        }
    }

    fn seed(&self) -> u64 {
        match self {
            LawSpec::GrammarWalk { law_seed, .. } => *law_seed,
            _ => 0,
        }
    }
}

/// Law memory `w`: program counter, macro-step counter, generator.
#[derive(Debug, Clone, PartialEq)]
pub struct LawMemory {
    pub pc: usize,
    pub macro_step: u64,
    pub rng: ChaCha8Rng,
}

impl LawMemory {
    pub fn new(pc: usize, macro_step: u64, seed: u64) -> Self {
        Self {
            pc,
            macro_step,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperLawState {
    pub cpair: EquationPairList,
    pub w: LawMemory,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("supervenient law stalled after {attempts} rejected rewrites at macro-step {}", state.w.macro_step)]
pub struct LawStall {
    pub attempts: usize,
    /// The state to continue from: counters and generator advanced, pairs unchanged.
    pub state: Box<SuperLawState>,
}

/// A [`LawSpec`] bound to the arity table it must keep sequences valid for.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperLaw {
    pub spec: LawSpec,
    pub arities: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mutation {
    SwapAdjacent,
    Append,
    SwapSides,
    WrapHeads,
}

const MUTATIONS: [Mutation; 4] = [
    Mutation::SwapAdjacent,
    Mutation::Append,
    Mutation::SwapSides,
    Mutation::WrapHeads,
];

impl SuperLaw {
    pub fn new(spec: LawSpec, arities: Vec<usize>) -> Self {
        Self { spec, arities }
    }

    pub fn initial_state(&self) -> SuperLawState {
        SuperLawState {
            cpair: self.spec.initial_pairs().clone(),
            w: LawMemory::new(0, 0, self.spec.seed()),
        }
    }

    /// Whether every side of every pair parses and respects the length cap.
    pub fn is_valid(&self, cpair: &EquationPairList) -> bool {
        cpair
            .iter()
            .all(|p| self.side_ok(&p.left) && self.side_ok(&p.right))
    }

    fn side_ok(&self, side: &IndexSequence) -> bool {
        let within_cap = match &self.spec {
            LawSpec::GrammarWalk { max_len, .. } => side.index_count() <= *max_len,
            _ => true,
        };
        within_cap && parse_sequence(side, &self.arities).is_ok()
    }

    /// One macro-step of `P`.
    pub fn step(&self, s: &SuperLawState) -> Result<SuperLawState, LawStall> {
        let mut next = s.clone();
        next.w.macro_step += 1;
        match &self.spec {
            LawSpec::Identity { .. } => Ok(next),
            LawSpec::Schedule { period, program } => {
                if next.w.macro_step.is_multiple_of(*period) {
                    next.w.pc = (next.w.pc + 1) % program.len();
                    next.cpair = program[next.w.pc].clone();
                }
                Ok(next)
            }
            LawSpec::GrammarWalk {
                mutation_weights, ..
            } => {
                let kinds = WeightedIndex::new(mutation_weights).ok();
                if let (Some(kinds), false) = (&kinds, next.cpair.is_empty()) {
                    for _ in 0..MAX_MUTATION_ATTEMPTS {
                        let kind = MUTATIONS[kinds.sample(&mut next.w.rng)];
                        let k = next.w.rng.gen_range(0..next.cpair.len());
                        let candidate = self.mutate(kind, &next.cpair.0[k], &mut next.w.rng);
                        if let Some(pair) = candidate {
                            if self.side_ok(&pair.left) && self.side_ok(&pair.right) {
                                next.cpair.0[k] = pair;
                                return Ok(next);
                            }
                        }
                    }
                }
                Err(LawStall {
                    attempts: MAX_MUTATION_ATTEMPTS,
                    state: Box::new(next),
                })
            }
        }
    }

    fn slots_of_arity(&self, arity: usize) -> Vec<usize> {
        (0..self.arities.len())
            .filter(|&i| self.arities[i] == arity)
            .collect()
    }

    fn mutate(
        &self,
        kind: Mutation,
        pair: &EquationPair,
        rng: &mut ChaCha8Rng,
    ) -> Option<EquationPair> {
        let mut out = pair.clone();
        match kind {
            Mutation::SwapAdjacent => {
                let side = if rng.gen() {
                    &mut out.left
                } else {
                    &mut out.right
                };
                let spots: Vec<usize> = side
                    .items
                    .windows(2)
                    .enumerate()
                    .filter(|(_, w)| matches!(w, [Item::Index(_), Item::Index(_)]))
                    .map(|(k, _)| k)
                    .collect();
                let &k = spots.choose(rng)?;
                side.items.swap(k, k + 1);
            }
            Mutation::Append => {
                let side = if rng.gen() {
                    &mut out.left
                } else {
                    &mut out.right
                };
                let &slot = self.slots_of_arity(1).choose(rng)?;
                side.items.push(Item::Index(slot));
            }
            Mutation::SwapSides => std::mem::swap(&mut out.left, &mut out.right),
            Mutation::WrapHeads => {
                let &slot = self.slots_of_arity(2).choose(rng)?;
                let (lf, rf) = (pair.left.factors(), pair.right.factors());
                let (lh, rh) = (lf.first()?, rf.first()?);
                let lh = IndexSequence::new(lh.to_vec());
                let rh = IndexSequence::new(rh.to_vec());
                let rebuild = |head: Vec<IndexSequence>, side: &IndexSequence, skip: usize| {
                    let mut items = vec![Item::Index(slot), Item::Tuple(head)];
                    items.extend(side.items[skip..].iter().cloned());
                    IndexSequence::new(items)
                };
                out.left = rebuild(vec![lh.clone(), rh.clone()], &pair.left, lf[0].len());
                out.right = rebuild(vec![rh, lh], &pair.right, rf[0].len());
            }
        }
        Some(out)
    }
}

/// Free-function form of [`SuperLaw::step`].
pub fn step_superlaw(law: &SuperLaw, s: &SuperLawState) -> Result<SuperLawState, LawStall> {
    law.step(s)
}
