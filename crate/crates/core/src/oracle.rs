//! Reference oracle: recomputes the expected final list state directly
//! from a message history, with no replica machinery.
//!
//! A validated [`History`] is a complete set of envelopes (every message
//! every replica sent). Causality between messages is re-derived from the
//! envelopes alone: `a` happens before `b` iff `b`'s clock covers `a`'s
//! dot. From that relation the oracle classifies, for every inserted
//! element, each for-each in the history:
//!
//! * for-each before insert: never executes on the element;
//! * insert before for-each: executes with `prior = true`;
//! * concurrent: executes with `prior = false`.
//!
//! An element is dead iff some delete targets it or some executing
//! for-each evaluates to a deletion; order never matters. A live
//! element's value is the initial state folded with every pure operation
//! that reaches it, an order-independent fold by construction (last
//! writer wins by dot, products commute). Object elements recurse: inner
//! insertions and nested for-eaches ride their carrier messages' dots and
//! clocks, so the same classification law applies unchanged one level
//! down.
//!
//! [`check_convergence`] is the other half of the oracle: it replays the
//! history into fresh observer replicas under many random causal
//! schedules and demands that every replay reach exactly the state the
//! fold predicts.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::causal::{deliverable, Dot, Envelope, Payload, ReplicaId, VectorClock};
use crate::element::{AttrValue, PureOp};
use crate::foreach::{eval_mutation, Eval, MutationFn};
use crate::list::{
    CrdtList, DeliveryError, ElemMsg, ElementSnapshot, ElementState, ListSnapshot, Replica,
    ValueSnapshot,
};
use crate::position::Position;

/// True iff clock `w` covers dot `d`. Stated here independently of the
/// replica machinery; this single inequality is the oracle's entire
/// notion of causality.
fn covers(w: &VectorClock, d: &Dot) -> bool {
    w.get(&d.sender) >= d.clock
}

/// Last-writer-wins comparison, restated: higher clock wins, sender
/// breaks ties.
fn beats(challenger: &Dot, incumbent: &Dot) -> bool {
    (challenger.clock, &challenger.sender) > (incumbent.clock, &incumbent.sender)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HistoryError {
    #[error("malformed envelope {dot}: clock does not cover its own dot")]
    Malformed { dot: Dot },
    #[error("duplicate dot {dot}")]
    DuplicateDot { dot: Dot },
    #[error("sender {sender} has {have} messages but clocks reach {max}")]
    ClockGap {
        sender: ReplicaId,
        have: u64,
        max: u64,
    },
    #[error("clock of {dot} regressed below an earlier message from the same sender")]
    SenderClockRegression { dot: Dot },
    #[error("{dot} depends on {need} messages from {on}, history holds {have}")]
    DanglingDependency {
        dot: Dot,
        on: ReplicaId,
        need: u64,
        have: u64,
    },
    #[error("no causal order: {stuck} is never deliverable")]
    NoCausalOrder { stuck: Dot },
    #[error("{op} targets position {target} which no insert mints")]
    UnknownTarget { op: Dot, target: Position },
    #[error("{op} targets position {target} without following its insertion")]
    OpBeforeInsert { op: Dot, target: Position },
    #[error("position {target} minted twice, by {first} and {second}")]
    DuplicatePosition {
        target: Position,
        first: Dot,
        second: Dot,
    },
    #[error("{dot} carries an initial object state that is not an empty list")]
    BakedObjectState { dot: Dot },
}

/// A complete, validated message history.
#[derive(Debug, Clone)]
pub struct History {
    envelopes: Vec<Envelope>,
    by_dot: BTreeMap<Dot, usize>,
    canonical: Vec<usize>,
}

impl History {
    /// Validates and seals a history. Checks are structural (well-formed
    /// envelopes, unique dots, contiguous per-sender clocks, monotone
    /// sender clocks, no dangling clock entries, a causal order exists)
    /// and operational (operations follow the insertion of their target,
    /// positions are minted once per list, initial object states are
    /// empty).
    pub fn new(envelopes: Vec<Envelope>) -> Result<History, HistoryError> {
        let mut by_dot = BTreeMap::new();
        for (i, e) in envelopes.iter().enumerate() {
            if !e.well_formed() {
                return Err(HistoryError::Malformed { dot: e.dot.clone() });
            }
            if by_dot.insert(e.dot.clone(), i).is_some() {
                return Err(HistoryError::DuplicateDot { dot: e.dot.clone() });
            }
        }

        let mut per_sender: BTreeMap<&ReplicaId, (u64, u64)> = BTreeMap::new();
        for e in &envelopes {
            let (max, count) = per_sender.entry(&e.dot.sender).or_insert((0, 0));
            *max = (*max).max(e.dot.clock);
            *count += 1;
        }
        for (sender, (max, count)) in &per_sender {
            if max != count {
                return Err(HistoryError::ClockGap {
                    sender: (*sender).clone(),
                    have: *count,
                    max: *max,
                });
            }
        }

        for e in &envelopes {
            for (r, n) in e.vc.iter() {
                let have = per_sender.get(r).map_or(0, |(max, _)| *max);
                if n > have {
                    return Err(HistoryError::DanglingDependency {
                        dot: e.dot.clone(),
                        on: r.clone(),
                        need: n,
                        have,
                    });
                }
            }
        }

        // Dots sort by (clock, sender), so walking by_dot groups each
        // sender's messages in clock order only per interleaved run; sort
        // explicitly instead.
        let mut by_sender_order: Vec<&Envelope> = envelopes.iter().collect();
        by_sender_order
            .sort_by(|a, b| (&a.dot.sender, a.dot.clock).cmp(&(&b.dot.sender, b.dot.clock)));
        for pair in by_sender_order.windows(2) {
            if pair[0].dot.sender == pair[1].dot.sender && !pair[0].vc.leq(&pair[1].vc) {
                return Err(HistoryError::SenderClockRegression {
                    dot: pair[1].dot.clone(),
                });
            }
        }

        let canonical = canonical_order(&envelopes, &by_dot)?;

        let history = History {
            envelopes,
            by_dot,
            canonical,
        };
        history.validate_operations()?;
        Ok(history)
    }

    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }

    pub fn envelopes(&self) -> &[Envelope] {
        &self.envelopes
    }

    pub fn get(&self, dot: &Dot) -> Option<&Envelope> {
        self.by_dot.get(dot).map(|&i| &self.envelopes[i])
    }

    /// Senders with at least one message, sorted.
    pub fn senders(&self) -> Vec<ReplicaId> {
        let mut out: Vec<ReplicaId> = self
            .envelopes
            .iter()
            .map(|e| e.dot.sender.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// `a` happens before `b`: `b`'s clock covers `a`'s dot and the dots
    /// differ. Both dots must name envelopes of this history.
    pub fn happens_before(&self, a: &Dot, b: &Dot) -> bool {
        let eb = &self.envelopes[self.by_dot[b]];
        a != b && covers(&eb.vc, a)
    }

    /// The validated causal order found at construction: a deterministic
    /// linear extension (smallest deliverable dot first).
    pub fn canonical_order(&self) -> impl Iterator<Item = &Envelope> {
        self.canonical.iter().map(|&i| &self.envelopes[i])
    }

    /// A uniformly sampled causal order: at each step one of the
    /// currently deliverable envelopes is drawn at random.
    pub fn random_order(&self, rng: &mut impl Rng) -> Vec<&Envelope> {
        let mut clock = VectorClock::new();
        let mut remaining: Vec<usize> = (0..self.envelopes.len()).collect();
        let mut out = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let ready: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| deliverable(&self.envelopes[i], &clock))
                .collect();
            let pick = ready[rng.gen_range(0..ready.len())];
            clock = crate::causal::record_delivery(&self.envelopes[pick], &clock);
            remaining.retain(|&i| i != pick);
            out.push(&self.envelopes[pick]);
        }
        out
    }

    fn validate_operations(&self) -> Result<(), HistoryError> {
        // Outer scope: position -> minting insert.
        let mut outer: BTreeMap<&Position, &Envelope> = BTreeMap::new();
        for e in &self.envelopes {
            if let Payload::Insert { p, sigma0 } = &e.payload {
                if let Some(first) = outer.insert(p, e) {
                    return Err(HistoryError::DuplicatePosition {
                        target: p.clone(),
                        first: first.dot.clone(),
                        second: e.dot.clone(),
                    });
                }
                if baked_object(sigma0) {
                    return Err(HistoryError::BakedObjectState { dot: e.dot.clone() });
                }
            }
        }
        // Inner scopes: (outer position, inner position) -> minting apply.
        let mut inner: BTreeMap<(&Position, &Position), &Envelope> = BTreeMap::new();
        for e in &self.envelopes {
            let target = match &e.payload {
                Payload::Delete { p } => p,
                Payload::Apply { p, .. } => p,
                _ => continue,
            };
            let Some(ins) = outer.get(target) else {
                return Err(HistoryError::UnknownTarget {
                    op: e.dot.clone(),
                    target: target.clone(),
                });
            };
            if !self.happens_before(&ins.dot, &e.dot) {
                return Err(HistoryError::OpBeforeInsert {
                    op: e.dot.clone(),
                    target: target.clone(),
                });
            }
            if let Payload::Apply {
                p,
                op: ElemMsg::InnerInsert { p: q, init },
            } = &e.payload
            {
                if let Some(first) = inner.insert((p, q), e) {
                    return Err(HistoryError::DuplicatePosition {
                        target: q.clone(),
                        first: first.dot.clone(),
                        second: e.dot.clone(),
                    });
                }
                if baked_object(init) {
                    return Err(HistoryError::BakedObjectState { dot: e.dot.clone() });
                }
            }
        }
        Ok(())
    }

    /// The expected value of the whole document at quiescence.
    pub fn expected_snapshot(&self) -> ListSnapshot {
        let mut scope = Scope::default();
        for e in &self.envelopes {
            match &e.payload {
                Payload::Insert { p, sigma0 } => scope.inserts.push(InsertEvent {
                    p,
                    init: sigma0,
                    dot: &e.dot,
                    vc: &e.vc,
                }),
                Payload::Delete { p } => scope.deletes.push(p),
                Payload::Apply { p, op } => scope.applies.push(ApplyEvent {
                    p,
                    msg: op,
                    dot: &e.dot,
                    vc: &e.vc,
                }),
                Payload::ForEach { f } => scope.foreaches.push(ForeachEvent {
                    f,
                    dot: &e.dot,
                    vc: &e.vc,
                }),
            }
        }
        fold_scope(&scope)
    }
}

fn baked_object(state: &ElementState) -> bool {
    matches!(state, ElementState::Object(l) if *l != CrdtList::default())
}

/// Deterministic linear extension: repeatedly deliver the smallest
/// deliverable dot. Fails iff the clocks admit no causal order at all.
fn canonical_order(
    envelopes: &[Envelope],
    by_dot: &BTreeMap<Dot, usize>,
) -> Result<Vec<usize>, HistoryError> {
    let mut clock = VectorClock::new();
    let mut remaining: Vec<&Dot> = by_dot.keys().collect();
    let mut out = Vec::with_capacity(envelopes.len());
    while !remaining.is_empty() {
        let pos = remaining
            .iter()
            .position(|d| deliverable(&envelopes[by_dot[*d]], &clock));
        let Some(pos) = pos else {
            return Err(HistoryError::NoCausalOrder {
                stuck: remaining[0].clone(),
            });
        };
        let idx = by_dot[remaining.remove(pos)];
        clock = crate::causal::record_delivery(&envelopes[idx], &clock);
        out.push(idx);
    }
    Ok(out)
}

/// All events addressed to one list instance.
#[derive(Default)]
struct Scope<'a> {
    inserts: Vec<InsertEvent<'a>>,
    deletes: Vec<&'a Position>,
    applies: Vec<ApplyEvent<'a>>,
    foreaches: Vec<ForeachEvent<'a>>,
}

struct InsertEvent<'a> {
    p: &'a Position,
    init: &'a ElementState,
    dot: &'a Dot,
    vc: &'a VectorClock,
}

struct ApplyEvent<'a> {
    p: &'a Position,
    msg: &'a ElemMsg,
    dot: &'a Dot,
    vc: &'a VectorClock,
}

struct ForeachEvent<'a> {
    f: &'a MutationFn,
    dot: &'a Dot,
    vc: &'a VectorClock,
}

/// One for-each execution against one element: the mutation, the carrier
/// identity, and the prior flag the classification law assigns.
struct Execution<'a> {
    f: &'a MutationFn,
    dot: &'a Dot,
    vc: &'a VectorClock,
    prior: bool,
}

fn fold_scope(scope: &Scope<'_>) -> ListSnapshot {
    let mut items: Vec<(&Position, ValueSnapshot)> = Vec::new();
    for ins in &scope.inserts {
        let mut execs: Vec<Execution<'_>> = Vec::new();
        for fe in &scope.foreaches {
            // For-each already seen by the insertion: never executes.
            if covers(ins.vc, fe.dot) {
                continue;
            }
            let prior = covers(fe.vc, ins.dot);
            execs.push(Execution {
                f: fe.f,
                dot: fe.dot,
                vc: fe.vc,
                prior,
            });
        }
        let deleted = scope.deletes.iter().any(|p| *p == ins.p)
            || execs
                .iter()
                .any(|x| matches!(eval_mutation(x.f, ins.p, x.prior), Eval::Del));
        if deleted {
            continue;
        }
        let applies: Vec<&ApplyEvent<'_>> = scope.applies.iter().filter(|a| a.p == ins.p).collect();
        items.push((ins.p, fold_element(ins, &applies, &execs)));
    }
    items.sort_by(|a, b| a.0.cmp(b.0));
    ListSnapshot(
        items
            .into_iter()
            .map(|(p, value)| ElementSnapshot {
                pos: p.to_string(),
                value,
            })
            .collect(),
    )
}

/// Folds one live element: the initial state plus every pure operation
/// that reaches it, each stamped with its carrier message's identity.
fn fold_element(
    ins: &InsertEvent<'_>,
    applies: &[&ApplyEvent<'_>],
    execs: &[Execution<'_>],
) -> ValueSnapshot {
    // Pure operations reaching this element, with carrier dot and clock.
    let mut ops: Vec<(&PureOp, &Dot, &VectorClock)> = Vec::new();
    for a in applies {
        if let ElemMsg::Pure(op) = a.msg {
            ops.push((op, a.dot, a.vc));
        }
    }
    for x in execs {
        if let Eval::Apply(op) = eval_mutation(x.f, ins.p, x.prior) {
            ops.push((op, x.dot, x.vc));
        }
    }

    match ins.init {
        ElementState::RichChar(rc) => {
            let mut attrs: BTreeMap<&str, (&AttrValue, Option<&Dot>)> = rc
                .attrs
                .entries
                .iter()
                .map(|(k, e)| (k.as_str(), (&e.value, Some(&e.winner))))
                .collect();
            for (op, dot, _) in &ops {
                if let PureOp::AttrSet { key, value } = op {
                    match attrs.get_mut(key.as_str()) {
                        Some((v, w)) => {
                            if w.map_or(true, |w| beats(dot, w)) {
                                *v = value;
                                *w = Some(dot);
                            }
                        }
                        None => {
                            attrs.insert(key, (value, Some(dot)));
                        }
                    }
                }
            }
            ValueSnapshot::RichChar {
                ch: rc.ch,
                attrs: attrs
                    .into_iter()
                    .map(|(k, (v, _))| (k.to_string(), v.clone()))
                    .collect(),
            }
        }
        ElementState::Ingredient(ing) => {
            let mut amount = ing.amount.value.clone();
            for (op, _, _) in &ops {
                if let PureOp::AmountMult { factor } = op {
                    amount = amount.mul(factor);
                }
            }
            ValueSnapshot::Ingredient {
                name: ing.name.value.clone(),
                amount: amount.to_string(),
                unit: ing.amount.unit.clone(),
            }
        }
        ElementState::Vec2(v0) => {
            let (mut x, mut y) = (v0.x.clone(), v0.y.clone());
            for (op, _, _) in &ops {
                if let PureOp::Vec2Mult { matrix } = op {
                    let (nx, ny) = matrix.mul_vec(&x, &y);
                    x = nx;
                    y = ny;
                }
            }
            ValueSnapshot::Vec2 {
                x: x.to_string(),
                y: y.to_string(),
            }
        }
        ElementState::Object(_) => {
            // Initial object states are empty lists (validated), so the
            // inner document is determined entirely by inner events.
            let mut scope = Scope::default();
            for a in applies {
                if let ElemMsg::InnerInsert { p, init } = a.msg {
                    scope.inserts.push(InsertEvent {
                        p,
                        init,
                        dot: a.dot,
                        vc: a.vc,
                    });
                }
            }
            for (op, dot, vc) in &ops {
                if let PureOp::NestedForEach { f } = op {
                    scope.foreaches.push(ForeachEvent { f, dot, vc });
                }
            }
            ValueSnapshot::Object(fold_scope(&scope))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleFailure {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("schedule {schedule} step {step}: delivery of {dot} failed: {error}")]
    Replay {
        schedule: usize,
        step: usize,
        dot: Dot,
        error: DeliveryError,
    },
    #[error("schedule {schedule} diverged from schedule 0")]
    Diverged { schedule: usize },
    #[error("schedule {schedule} does not match the oracle fold")]
    OracleMismatch {
        schedule: usize,
        expected: Box<ListSnapshot>,
        actual: Box<ListSnapshot>,
    },
}

/// Result of a successful convergence check.
pub struct Convergence {
    pub oracle: ListSnapshot,
    pub schedules: usize,
}

/// Replays the full history into fresh observer replicas under
/// `schedules` causal orders (the canonical order, then random ones) and
/// checks that every replay converges to the same canonical state and to
/// the oracle's expected snapshot.
pub fn check_convergence(
    history: &History,
    schedules: usize,
    seed: u64,
) -> Result<Convergence, OracleFailure> {
    let expected = history.expected_snapshot();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut baseline: Option<CrdtList> = None;
    for schedule in 0..schedules.max(1) {
        let order: Vec<&Envelope> = if schedule == 0 {
            history.canonical_order().collect()
        } else {
            history.random_order(&mut rng)
        };
        let mut observer = Replica::new(ReplicaId::new("observer").expect("valid id"));
        for (step, env) in order.iter().enumerate() {
            observer
                .deliver(env)
                .map_err(|error| OracleFailure::Replay {
                    schedule,
                    step,
                    dot: env.dot.clone(),
                    error,
                })?;
        }
        let snapshot = observer.snapshot();
        if snapshot != expected {
            return Err(OracleFailure::OracleMismatch {
                schedule,
                expected: Box::new(expected),
                actual: Box::new(snapshot),
            });
        }
        let canon = observer.list().canonicalized();
        match &baseline {
            None => baseline = Some(canon),
            Some(base) => {
                if canon != *base {
                    return Err(OracleFailure::Diverged { schedule });
                }
            }
        }
    }
    Ok(Convergence {
        oracle: expected,
        schedules: schedules.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{attr_set, AttrValue};
    use crate::foreach::{Instruction, Predicate, PriorGate};
    use crate::list::ElemOp;

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    fn bold_all() -> MutationFn {
        MutationFn::new(
            Predicate::All,
            PriorGate::Any,
            Instruction::Apply(attr_set("bold", AttrValue::Bool(true))),
        )
    }

    /// Two replicas: a shared first character, then a concurrent bold-all
    /// against an insertion plus a deletion.
    fn sample_history() -> (Vec<Envelope>, Replica, Replica) {
        let mut a = Replica::new(rid("A"));
        let mut b = Replica::new(rid("B"));
        let e1 = a.insert_gen(0, ElementState::rich_char('a')).unwrap();
        b.deliver(&e1).unwrap();
        let ef = a.foreach_gen(bold_all());
        let ei = b.insert_gen(1, ElementState::rich_char('b')).unwrap();
        let ed = b.delete_gen(0).unwrap();
        a.deliver(&ei).unwrap();
        a.deliver(&ed).unwrap();
        b.deliver(&ef).unwrap();
        (vec![e1, ef, ei, ed], a, b)
    }

    #[test]
    fn fold_matches_live_replicas() {
        let (envs, a, b) = sample_history();
        let h = History::new(envs).unwrap();
        let expected = h.expected_snapshot();
        assert_eq!(expected, a.snapshot());
        assert_eq!(expected, b.snapshot());
        // The surviving element is the concurrent insertion, bolded by
        // the buffered for-each.
        assert_eq!(expected.0.len(), 1);
        match &expected.0[0].value {
            ValueSnapshot::RichChar { ch, attrs } => {
                assert_eq!(*ch, 'b');
                assert_eq!(attrs.get("bold"), Some(&AttrValue::Bool(true)));
            }
            other => panic!("unexpected value {other:?}"),
        }
    }

    #[test]
    fn replays_converge_across_many_schedules() {
        let (envs, _, _) = sample_history();
        let h = History::new(envs).unwrap();
        let report = check_convergence(&h, 20, 7).unwrap();
        assert_eq!(report.schedules, 20);
        assert_eq!(report.oracle.0.len(), 1);
    }

    #[test]
    fn happens_before_follows_clock_coverage() {
        let (envs, _, _) = sample_history();
        let h = History::new(envs).unwrap();
        let e = h.envelopes();
        let (e1, ef, ei, ed) = (&e[0], &e[1], &e[2], &e[3]);
        assert!(h.happens_before(&e1.dot, &ef.dot));
        assert!(h.happens_before(&e1.dot, &ei.dot));
        assert!(h.happens_before(&ei.dot, &ed.dot));
        assert!(!h.happens_before(&ef.dot, &ei.dot));
        assert!(!h.happens_before(&ei.dot, &ef.dot));
        assert!(!h.happens_before(&ef.dot, &ef.dot));
    }

    #[test]
    fn canonical_order_is_a_linear_extension() {
        let (envs, _, _) = sample_history();
        let h = History::new(envs).unwrap();
        let order: Vec<&Envelope> = h.canonical_order().collect();
        assert_eq!(order.len(), h.len());
        for i in 0..order.len() {
            for j in (i + 1)..order.len() {
                assert!(!h.happens_before(&order[j].dot, &order[i].dot));
            }
        }
    }

    #[test]
    fn deletion_by_foreach_and_delete_agree_in_any_order() {
        let mut a = Replica::new(rid("A"));
        let mut b = Replica::new(rid("B"));
        let e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        b.deliver(&e1).unwrap();
        let ef = a.foreach_gen(MutationFn::new(
            Predicate::All,
            PriorGate::Any,
            Instruction::Del,
        ));
        let ed = b.delete_gen(0).unwrap();
        let h = History::new(vec![e1, ef, ed]).unwrap();
        assert_eq!(h.expected_snapshot().0.len(), 0);
        check_convergence(&h, 10, 11).unwrap();
    }

    #[test]
    fn duplicate_dots_are_rejected() {
        let mut a = Replica::new(rid("A"));
        let e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        let err = History::new(vec![e1.clone(), e1.clone()]).unwrap_err();
        assert_eq!(err, HistoryError::DuplicateDot { dot: e1.dot });
    }

    #[test]
    fn clock_gaps_are_rejected() {
        let mut a = Replica::new(rid("A"));
        let _e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        let e2 = a.insert_gen(1, ElementState::rich_char('y')).unwrap();
        let err = History::new(vec![e2]).unwrap_err();
        assert_eq!(
            err,
            HistoryError::ClockGap {
                sender: rid("A"),
                have: 1,
                max: 2,
            }
        );
    }

    #[test]
    fn dangling_dependencies_are_rejected() {
        let mut a = Replica::new(rid("A"));
        let mut b = Replica::new(rid("B"));
        let e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        b.deliver(&e1).unwrap();
        let e2 = b.insert_gen(1, ElementState::rich_char('y')).unwrap();
        let err = History::new(vec![e2.clone()]).unwrap_err();
        assert_eq!(
            err,
            HistoryError::DanglingDependency {
                dot: e2.dot,
                on: rid("A"),
                need: 1,
                have: 0,
            }
        );
    }

    #[test]
    fn operations_must_follow_their_targets_insertion() {
        let mut a = Replica::new(rid("A"));
        let e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        let p = match &e1.payload {
            Payload::Insert { p, .. } => p.clone(),
            _ => unreachable!(),
        };
        // Forged: a delete of that position concurrent with the insert.
        let forged = Envelope::new(
            Dot::new(rid("B"), 1),
            VectorClock::from_entries([(rid("B"), 1)]),
            Payload::Delete { p: p.clone() },
        );
        let err = History::new(vec![e1, forged.clone()]).unwrap_err();
        assert_eq!(
            err,
            HistoryError::OpBeforeInsert {
                op: forged.dot,
                target: p,
            }
        );
    }

    #[test]
    fn unknown_targets_are_rejected() {
        let mut a = Replica::new(rid("A"));
        let mut b = Replica::new(rid("B"));
        let e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        b.deliver(&e1).unwrap();
        let e2 = b.delete_gen(0).unwrap();
        // History missing the insert's sibling: drop e1 but keep its
        // clock alive through a replacement insert, then target e1's p.
        // Simpler: history of only the delete plus a fresh insert from A
        // at a different position.
        let err = History::new(vec![e2.clone()]);
        // The delete depends on A's message, so the dangling check fires
        // first; targeting is checked on a self-contained forgery instead.
        assert!(err.is_err());
        let forged = Envelope::new(
            Dot::new(rid("C"), 1),
            VectorClock::from_entries([(rid("C"), 1)]),
            Payload::Delete {
                p: Position::first(rid("C"), 0),
            },
        );
        let err = History::new(vec![forged.clone()]).unwrap_err();
        assert_eq!(
            err,
            HistoryError::UnknownTarget {
                op: forged.dot,
                target: Position::first(rid("C"), 0),
            }
        );
    }

    #[test]
    fn mutual_dependencies_are_rejected() {
        let a = Envelope::new(
            Dot::new(rid("A"), 1),
            VectorClock::from_entries([(rid("A"), 1), (rid("B"), 1)]),
            Payload::ForEach { f: bold_all() },
        );
        let b = Envelope::new(
            Dot::new(rid("B"), 1),
            VectorClock::from_entries([(rid("A"), 1), (rid("B"), 1)]),
            Payload::ForEach { f: bold_all() },
        );
        let err = History::new(vec![a.clone(), b]).unwrap_err();
        assert_eq!(err, HistoryError::NoCausalOrder { stuck: a.dot });
    }

    #[test]
    fn baked_object_states_are_rejected() {
        let mut a = Replica::new(rid("A"));
        let e1 = a.insert_gen(0, ElementState::object()).unwrap();
        let eb = a
            .apply_gen(
                0,
                ElemOp::InnerInsert {
                    index: 0,
                    init: Box::new(ElementState::vec2(
                        crate::element::Rational::integer(1),
                        crate::element::Rational::integer(0),
                    )),
                },
            )
            .unwrap();
        // Forge an insert whose initial state is the now-populated list.
        let mut c = Replica::new(rid("C"));
        let baked = c
            .insert_gen(
                0,
                ElementState::Object(
                    a.list()
                        .nth(0)
                        .map(|e| match &e.state {
                            ElementState::Object(l) => l.clone(),
                            _ => unreachable!(),
                        })
                        .unwrap(),
                ),
            )
            .unwrap();
        let err = History::new(vec![e1, eb, baked.clone()]).unwrap_err();
        assert_eq!(err, HistoryError::BakedObjectState { dot: baked.dot });
    }

    #[test]
    fn randomized_schedules_agree_on_interleaved_histories() {
        // Three replicas, mixed operations, full exchange; every random
        // schedule must land on the oracle fold.
        let mut a = Replica::new(rid("A"));
        let mut b = Replica::new(rid("B"));
        let mut c = Replica::new(rid("C"));
        let mut envs = Vec::new();
        envs.push(a.insert_gen(0, ElementState::rich_char('h')).unwrap());
        envs.push(a.insert_gen(1, ElementState::rich_char('i')).unwrap());
        for e in &envs {
            b.deliver(e).unwrap();
            c.deliver(e).unwrap();
        }
        envs.push(a.foreach_gen(bold_all()));
        envs.push(b.insert_gen(1, ElementState::rich_char('e')).unwrap());
        envs.push(b.delete_gen(0).unwrap());
        envs.push(
            c.apply_gen(1, ElemOp::Pure(attr_set("italic", AttrValue::Bool(true))))
                .unwrap(),
        );
        let h = History::new(envs).unwrap();
        let report = check_convergence(&h, 25, 99).unwrap();
        assert_eq!(report.schedules, 25);
    }
}
