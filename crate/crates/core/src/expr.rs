//! Index sequences and the expression trees they denote.
//!
//! A sequence such as `[1,2]` or `[0,(1,2)]` names a function `R^m → R^m`
//! built from the slot functions `X^i`. Factors chain by composition with the
//! leftmost factor outermost; an arity-2 index must be followed by a 2-tuple
//! whose components are the sequences fed into its two arguments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bridge::{self, BridgeFamily};
use crate::error::{SequenceError, ShapeError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Item {
    Index(usize),
    Tuple(Vec<IndexSequence>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IndexSequence {
    pub items: Vec<Item>,
}

impl IndexSequence {
    pub fn new(items: Vec<Item>) -> Self {
        Self { items }
    }

    /// A flat sequence of slot indices, e.g. `[1,2]`.
    pub fn indices(indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| Item::Index(i)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of slot indices, counting nested tuples.
    pub fn index_count(&self) -> usize {
        self.items
            .iter()
            .map(|item| match item {
                Item::Index(_) => 1,
                Item::Tuple(parts) => parts.iter().map(IndexSequence::index_count).sum(),
            })
            .sum()
    }

    /// Largest slot index mentioned anywhere in the sequence.
    pub fn max_index(&self) -> Option<usize> {
        self.items
            .iter()
            .filter_map(|item| match item {
                Item::Index(i) => Some(*i),
                Item::Tuple(parts) => parts.iter().filter_map(IndexSequence::max_index).max(),
            })
            .max()
    }

    /// Splits the items into factors: an index together with its tuple, if
    /// one follows it. Malformed input still splits; validation is separate.
    pub fn factors(&self) -> Vec<&[Item]> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.items.len() {
            let len = match (&self.items[k], self.items.get(k + 1)) {
                (Item::Index(_), Some(Item::Tuple(_))) => 2,
                _ => 1,
            };
            out.push(&self.items[k..k + len]);
            k += len;
        }
        out
    }
}

impl fmt::Display for IndexSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (k, item) in self.items.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            match item {
                Item::Index(i) => write!(f, "{i}")?,
                Item::Tuple(parts) => {
                    f.write_str("(")?;
                    for (j, part) in parts.iter().enumerate() {
                        if j > 0 {
                            f.write_str(",")?;
                        }
                        match part.items.as_slice() {
                            [Item::Index(i)] => write!(f, "{i}")?,
                            _ => write!(f, "{part}")?,
                        }
                    }
                    f.write_str(")")?;
                }
            }
        }
        f.write_str("]")
    }
}

struct TextParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> TextParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> SequenceError {
        SequenceError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, byte: u8) -> Result<(), SequenceError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{}`", byte as char)))
        }
    }

    fn integer(&mut self) -> Result<usize, SequenceError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SequenceError::Syntax {
                offset: start,
                message: "expected slot index".into(),
            })
    }

    /// Comma-separated list of `elem` up to `close`.
    fn list<T>(
        &mut self,
        close: u8,
        mut elem: impl FnMut(&mut Self) -> Result<T, SequenceError>,
    ) -> Result<Vec<T>, SequenceError> {
        let mut out = Vec::new();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(elem(self)?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b) if b == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.error(format!("expected `,` or `{}`", close as char))),
            }
        }
    }

    fn sequence(&mut self) -> Result<IndexSequence, SequenceError> {
        self.expect(b'[')?;
        let items = self.list(b']', |p| match p.peek() {
            Some(b'(') => {
                p.pos += 1;
                p.list(b')', Self::tuple_part).map(Item::Tuple)
            }
            _ => p.integer().map(Item::Index),
        })?;
        Ok(IndexSequence { items })
    }

    fn tuple_part(&mut self) -> Result<IndexSequence, SequenceError> {
        match self.peek() {
            Some(b'[') => self.sequence(),
            _ => self.integer().map(|i| IndexSequence::indices(&[i])),
        }
    }
}

impl FromStr for IndexSequence {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parser = TextParser {
            src: s.as_bytes(),
            pos: 0,
        };
        let seq = parser.sequence()?;
        if parser.peek().is_some() {
            return Err(parser.error("trailing input"));
        }
        Ok(seq)
    }
}

impl Serialize for IndexSequence {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IndexSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A function `R^m → R^m` over the slot functions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprTree {
    Identity,
    /// `X^slot` applied to the values of its children, each of which receives
    /// the node's own input.
    Apply {
        slot: usize,
        children: Vec<ExprTree>,
    },
    /// `outer ∘ inner`
    Compose(Box<ExprTree>, Box<ExprTree>),
}

impl ExprTree {
    /// `X^slot` applied directly to its input.
    pub fn unary(slot: usize) -> Self {
        ExprTree::Apply {
            slot,
            children: vec![ExprTree::Identity],
        }
    }

    pub fn compose(outer: ExprTree, inner: ExprTree) -> Self {
        ExprTree::Compose(Box::new(outer), Box::new(inner))
    }

    /// Node count, including identity leaves.
    pub fn size(&self) -> usize {
        match self {
            ExprTree::Identity => 1,
            ExprTree::Apply { children, .. } => {
                1 + children.iter().map(ExprTree::size).sum::<usize>()
            }
            ExprTree::Compose(o, i) => 1 + o.size() + i.size(),
        }
    }

    /// Lowers the tree to straight-line form for evaluation with gradients.
    pub fn compile(&self) -> CompiledExpr {
        let mut ops = Vec::new();
        let output = lower(self, 0, &mut ops);
        CompiledExpr { ops, output }
    }
}

/// Builds the expression tree `s(c)` for a sequence given each slot's arity.
pub fn parse_sequence(seq: &IndexSequence, arities: &[usize]) -> Result<ExprTree, SequenceError> {
    let mut factors = Vec::new();
    let mut k = 0;
    while k < seq.items.len() {
        let slot = match &seq.items[k] {
            Item::Index(i) => *i,
            Item::Tuple(_) => {
                return Err(SequenceError::Grammar {
                    position: k,
                    message: "tuple is not preceded by a multi-arity index".into(),
                })
            }
        };
        let arity = *arities.get(slot).ok_or(SequenceError::IndexOutOfRange {
            index: slot,
            slots: arities.len(),
        })?;
        if arity <= 1 {
            factors.push(ExprTree::unary(slot));
            k += 1;
            continue;
        }
        let parts = match seq.items.get(k + 1) {
            Some(Item::Tuple(parts)) => parts,
            other => {
                return Err(SequenceError::Arity {
                    slot,
                    arity,
                    found: match other {
                        None => "end of sequence".into(),
                        Some(Item::Index(i)) => format!("index {i}"),
                        Some(Item::Tuple(_)) => unreachable!(),
                    },
                })
            }
        };
        if parts.len() != arity {
            return Err(SequenceError::Arity {
                slot,
                arity,
                found: format!("a {}-tuple", parts.len()),
            });
        }
        let children = parts
            .iter()
            .map(|part| parse_sequence(part, arities))
            .collect::<Result<Vec<_>, _>>()?;
        factors.push(ExprTree::Apply { slot, children });
        k += 2;
    }
    Ok(factors
        .into_iter()
        .rev()
        .reduce(|inner, outer| ExprTree::compose(outer, inner))
        .unwrap_or(ExprTree::Identity))
}

fn check_slot<'f, S: Scalar>(
    slot: usize,
    families: &'f [BridgeFamily],
    slots: &[Vec<S>],
) -> Result<&'f BridgeFamily, ShapeError> {
    let family = families
        .get(slot)
        .ok_or_else(|| ShapeError::new("slot table", slot + 1, families.len()))?;
    let params = slots
        .get(slot)
        .ok_or_else(|| ShapeError::new("slot parameters", slot + 1, slots.len()))?;
    ShapeError::check("slot parameters", family.param_count(), params.len())?;
    Ok(family)
}

/// Evaluates `e(d)` with the slot functions realized by `slots`.
pub fn eval_expr<S: Scalar>(
    e: &ExprTree,
    families: &[BridgeFamily],
    slots: &[Vec<S>],
    d: &[S],
) -> Result<Vec<S>, ShapeError> {
    let mut visits = 0;
    eval_counted(e, families, slots, d, &mut visits)
}

/// As [`eval_expr`], also returning how many tree nodes were visited.
pub fn eval_expr_with_visits<S: Scalar>(
    e: &ExprTree,
    families: &[BridgeFamily],
    slots: &[Vec<S>],
    d: &[S],
) -> Result<(Vec<S>, usize), ShapeError> {
    let mut visits = 0;
    let value = eval_counted(e, families, slots, d, &mut visits)?;
    Ok((value, visits))
}

fn eval_counted<S: Scalar>(
    e: &ExprTree,
    families: &[BridgeFamily],
    slots: &[Vec<S>],
    d: &[S],
    visits: &mut usize,
) -> Result<Vec<S>, ShapeError> {
    *visits += 1;
    match e {
        ExprTree::Identity => Ok(d.to_vec()),
        ExprTree::Compose(outer, inner) => {
            let mid = eval_counted(inner, families, slots, d, visits)?;
            eval_counted(outer, families, slots, &mid, visits)
        }
        ExprTree::Apply { slot, children } => {
            let family = check_slot(*slot, families, slots)?;
            let args = children
                .iter()
                .map(|c| eval_counted(c, families, slots, d, visits))
                .collect::<Result<Vec<_>, _>>()?;
            let arg_refs: Vec<&[S]> = args.iter().map(Vec::as_slice).collect();
            bridge::eval_bridge(family, &slots[*slot], &arg_refs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Op {
    slot: usize,
    /// Register ids of the arguments; register 0 is the expression input and
    /// op `k` writes register `k + 1`.
    args: Vec<usize>,
}

/// Straight-line form of an [`ExprTree`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    output: usize,
}

fn lower(e: &ExprTree, input: usize, ops: &mut Vec<Op>) -> usize {
    match e {
        ExprTree::Identity => input,
        ExprTree::Compose(outer, inner) => {
            let mid = lower(inner, input, ops);
            lower(outer, mid, ops)
        }
        ExprTree::Apply { slot, children } => {
            let args = children.iter().map(|c| lower(c, input, ops)).collect();
            ops.push(Op { slot: *slot, args });
            ops.len()
        }
    }
}

/// Register values from one forward pass, kept for the reverse sweep.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    registers: Vec<Vec<S>>,
}

impl CompiledExpr {
    /// Slots referenced by the expression, in evaluation order (may repeat).
    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.ops.iter().map(|op| op.slot)
    }

    pub fn forward<S: Scalar>(
        &self,
        families: &[BridgeFamily],
        slots: &[Vec<S>],
        d: &[S],
    ) -> Result<Trace<S>, ShapeError> {
        let mut registers = Vec::with_capacity(self.ops.len() + 1);
        registers.push(d.to_vec());
        for op in &self.ops {
            let family = check_slot(op.slot, families, slots)?;
            let args: Vec<&[S]> = op.args.iter().map(|&r| registers[r].as_slice()).collect();
            let value = bridge::eval_bridge(family, &slots[op.slot], &args)?;
            registers.push(value);
        }
        Ok(Trace { registers })
    }

    pub fn output<'t, S>(&self, trace: &'t Trace<S>) -> &'t [S] {
        &trace.registers[self.output]
    }

    /// Reverse sweep: adds `∂(cotangent · e(d)) / ∂slots[i]` into `grads[i]`
    /// and returns the gradient with respect to the input `d`.
    pub fn backward<S: Scalar>(
        &self,
        families: &[BridgeFamily],
        slots: &[Vec<S>],
        trace: &Trace<S>,
        cotangent: &[S],
        grads: &mut [Vec<S>],
    ) -> Result<Vec<S>, ShapeError> {
        let m = cotangent.len();
        ShapeError::check("cotangent", trace.registers[self.output].len(), m)?;
        ShapeError::check("gradient buffers", slots.len(), grads.len())?;
        let mut adjoints = vec![vec![S::zero(); m]; trace.registers.len()];
        adjoints[self.output].copy_from_slice(cotangent);
        for (k, op) in self.ops.iter().enumerate().rev() {
            let out = std::mem::take(&mut adjoints[k + 1]);
            if out.iter().all(|x| x.is_zero()) {
                continue;
            }
            let family = &families[op.slot];
            ShapeError::check(
                "gradient buffer",
                slots[op.slot].len(),
                grads[op.slot].len(),
            )?;
            let args: Vec<&[S]> = op
                .args
                .iter()
                .map(|&r| trace.registers[r].as_slice())
                .collect();
            let arg_grads =
                bridge::grad_accumulate(family, &slots[op.slot], &args, &out, &mut grads[op.slot]);
            for (&r, g) in op.args.iter().zip(arg_grads) {
                for (a, x) in adjoints[r].iter_mut().zip(g) {
                    *a = *a + x;
                }
            }
        }
        Ok(std::mem::take(&mut adjoints[0]))
    }
}

/// Gradients of `cotangent · e(d)` with respect to every slot's parameters.
/// Slots the expression does not mention get all-zero vectors.
pub fn grad_expr<S: Scalar>(
    e: &ExprTree,
    families: &[BridgeFamily],
    slots: &[Vec<S>],
    d: &[S],
    cotangent: &[S],
) -> Result<Vec<Vec<S>>, ShapeError> {
    let compiled = e.compile();
    let trace = compiled.forward(families, slots, d)?;
    let mut grads: Vec<Vec<S>> = slots.iter().map(|s| vec![S::zero(); s.len()]).collect();
    compiled.backward(families, slots, &trace, cotangent, &mut grads)?;
    Ok(grads)
}

/// Draws a valid sequence with at most `max_factors` top-level factors.
/// Arity-2 factors receive sub-sequences of at most `max_factors / 2`.
pub fn random_sequence<R: Rng + ?Sized>(
    rng: &mut R,
    arities: &[usize],
    max_factors: usize,
) -> IndexSequence {
    let len = rng.gen_range(0..=max_factors);
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        let slot = rng.gen_range(0..arities.len());
        items.push(Item::Index(slot));
        if arities[slot] >= 2 {
            let parts = (0..arities[slot])
                .map(|_| random_sequence(rng, arities, max_factors / 2))
                .collect();
            items.push(Item::Tuple(parts));
        }
    }
    IndexSequence { items }
}
