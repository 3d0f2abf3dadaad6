//! The mutation-function DSL carried by for-each messages, and the buffer
//! entries that keep those messages around for concurrent insertions.
//!
//! A for-each must ship its mutation `f` over the wire and evaluate it
//! identically on every replica, so `f` is a closed DSL term rather than
//! arbitrary code: a predicate over positions, a gate over the prior flag,
//! and a single instruction. Evaluation is a pure function of
//! `(position, prior)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::causal::{Dot, VectorClock};
use crate::element::PureOp;
use crate::position::Position;

/// Which elements a mutation targets, by position only. Positions in
/// `IdSet` act purely as identifiers; the others use the position order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    All,
    /// `start ≤ p < end`: formats concurrent insertions at the end of the
    /// range (the bold-range behavior).
    HalfOpen {
        start: Position,
        end: Position,
    },
    /// `start ≤ p ≤ end_prime`: excludes concurrent insertions after the
    /// last covered element (the hyperlink behavior).
    Closed {
        start: Position,
        end_prime: Position,
    },
    IdSet(BTreeSet<Position>),
}

impl Predicate {
    pub fn matches(&self, p: &Position) -> bool {
        match self {
            Predicate::All => true,
            Predicate::HalfOpen { start, end } => start <= p && p < end,
            Predicate::Closed { start, end_prime } => start <= p && p <= end_prime,
            Predicate::IdSet(set) => set.contains(p),
        }
    }
}

/// Which causal class of elements the instruction applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PriorGate {
    /// Elements inserted causally before the for-each as well as
    /// concurrently with it.
    Any,
    /// Only causally prior elements: concurrent insertions are spared
    /// (the data-loss-avoiding delete).
    PriorOnly,
    /// Only concurrent insertions; not used by the shipped scenarios but
    /// expressible, and exercised by fuzzing.
    ConcurrentOnly,
}

impl PriorGate {
    pub fn admits(&self, prior: bool) -> bool {
        match self {
            PriorGate::Any => true,
            PriorGate::PriorOnly => prior,
            PriorGate::ConcurrentOnly => !prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instruction {
    Apply(PureOp),
    Del,
    Null,
}

/// A serializable mutation function: `f(p, prior)` returns the instruction
/// when the predicate matches `p` and the gate admits `prior`, else Null.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationFn {
    pub predicate: Predicate,
    #[serde(rename = "priorGate")]
    pub prior_gate: PriorGate,
    pub instruction: Instruction,
}

impl MutationFn {
    pub fn new(predicate: Predicate, prior_gate: PriorGate, instruction: Instruction) -> Self {
        MutationFn {
            predicate,
            prior_gate,
            instruction,
        }
    }
}

/// Result of evaluating a mutation function at one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eval<'a> {
    Apply(&'a PureOp),
    Del,
    Null,
}

/// `f(p, prior)`: pure and deterministic; this single definition is shared
/// by the replica machinery and the reference oracle.
pub fn eval_mutation<'a>(f: &'a MutationFn, p: &Position, prior: bool) -> Eval<'a> {
    if !f.predicate.matches(p) || !f.prior_gate.admits(prior) {
        return Eval::Null;
    }
    match &f.instruction {
        Instruction::Apply(op) => Eval::Apply(op),
        Instruction::Del => Eval::Del,
        Instruction::Null => Eval::Null,
    }
}

/// One remembered for-each: the mutation, the dot `u` that identifies it,
/// and its full clock `w` (kept because effectors receive `(op, w)`).
/// Buffers are append-only in local receipt order and never pruned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub f: MutationFn,
    pub u: Dot,
    pub w: VectorClock,
}
