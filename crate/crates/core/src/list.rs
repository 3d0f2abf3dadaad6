//! The replicated list of element CRDTs, its effectors, and the replicas
//! that host it.
//!
//! A list is a sorted vector of elements plus a buffer of every for-each
//! seen so far. Each element carries the dot of the insert message that
//! created it; each buffer entry carries the dot and clock of its for-each
//! message. Those two identities decide everything:
//!
//! * When a for-each arrives, it runs its mutation over every element
//!   present, passing `prior = true` exactly when the element's insertion
//!   was in the for-each's causal past, then joins the buffer.
//! * When an insert arrives, every buffered for-each that was concurrent
//!   with the insertion runs against the new element with `prior = false`,
//!   in local receipt order. A buffered deletion ends the replay: the
//!   element is gone.
//!
//! The buffer is append-only and never pruned; replicas may hold it in
//! different orders, which is why convergence is checked on
//! [`CrdtList::canonicalized`] state (buffers sorted by dot) and rendered
//! from value [`snapshot`](CrdtList::snapshot)s.
//!
//! Elements can themselves be lists ([`ElementState::Object`]); the inner
//! list runs the same machinery, with inner insertions riding apply
//! messages and inner for-eaches riding [`PureOp::NestedForEach`]. Inner
//! elements take the carrying envelope's dot as their insertion dot.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::causal::{
    classify_delivery, dot_is_concurrent, dot_is_prior, record_delivery, DeliveryClass, Dot,
    Envelope, Payload, ReplicaId, VectorClock,
};
use crate::element::{AmountState, AttrMapState, AttrValue};
use crate::element::{
    ClockContext, IngredientState, LwwRegister, PureOp, Rational, RichCharState, SchemaError,
    Vec2State,
};
use crate::foreach::{eval_mutation, BufferEntry, Eval, MutationFn};
use crate::position::{between, Position, PositionBound, PositionError};

/// State of one list element. `Object` closes the recursion: an element
/// may itself be a list of elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementState {
    RichChar(RichCharState),
    Ingredient(IngredientState),
    Vec2(Vec2State),
    Object(CrdtList),
}

impl ElementState {
    pub fn rich_char(ch: char) -> Self {
        ElementState::RichChar(RichCharState {
            ch,
            attrs: AttrMapState::default(),
        })
    }

    pub fn ingredient(name: impl Into<String>, value: Rational, unit: impl Into<String>) -> Self {
        ElementState::Ingredient(IngredientState {
            name: LwwRegister::initial(name),
            amount: AmountState {
                value,
                unit: unit.into(),
            },
        })
    }

    pub fn vec2(x: Rational, y: Rational) -> Self {
        ElementState::Vec2(Vec2State { x, y })
    }

    /// New objects start as empty inner lists; inner content arrives
    /// through inner insertions, never baked into the initial state.
    pub fn object() -> Self {
        ElementState::Object(CrdtList::default())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ElementState::RichChar(_) => "rich_char",
            ElementState::Ingredient(_) => "ingredient",
            ElementState::Vec2(_) => "vec2",
            ElementState::Object(_) => "object",
        }
    }

    fn value_snapshot(&self) -> ValueSnapshot {
        match self {
            ElementState::RichChar(rc) => ValueSnapshot::RichChar {
                ch: rc.ch,
                attrs: rc
                    .attrs
                    .entries
                    .iter()
                    .map(|(k, e)| (k.clone(), e.value.clone()))
                    .collect(),
            },
            ElementState::Ingredient(i) => ValueSnapshot::Ingredient {
                name: i.name.value.clone(),
                amount: i.amount.value.to_string(),
                unit: i.amount.unit.clone(),
            },
            ElementState::Vec2(v) => ValueSnapshot::Vec2 {
                x: v.x.to_string(),
                y: v.y.to_string(),
            },
            ElementState::Object(l) => ValueSnapshot::Object(l.snapshot()),
        }
    }
}

/// Element operation as a caller requests it, before generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElemOp {
    Pure(PureOp),
    /// Insert into the inner list of an object element, by index.
    InnerInsert {
        index: usize,
        init: Box<ElementState>,
    },
}

/// Element operation as it travels inside an apply message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElemMsg {
    Pure(PureOp),
    /// Inner-list insertion with the position already minted. This is the
    /// one element message whose generation reads state; it never appears
    /// inside a mutation function.
    InnerInsert {
        p: Position,
        init: Box<ElementState>,
    },
}

/// One live element: its position, state, and the dot of the message that
/// inserted it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub pos: Position,
    pub state: ElementState,
    pub dot: Dot,
}

/// One mutation-function evaluation, kept for auditing: the prior flag a
/// for-each handed to its mutation at one element must equal the true
/// causal relation between the element's insertion and the for-each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRecord {
    pub foreach: Dot,
    pub element: Dot,
    pub prior: bool,
}

/// Host facilities threaded through effectors: the evaluation audit log
/// and the test-only fault switch that disables buffer replay.
pub struct Effects<'a> {
    pub log: &'a mut Vec<EvalRecord>,
    pub skip_buffer_replay: bool,
}

/// The list CRDT state: live elements sorted by position, plus every
/// for-each seen, in local receipt order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrdtList {
    elts: Vec<Element>,
    buffer: Vec<BufferEntry>,
}

impl CrdtList {
    pub fn len(&self) -> usize {
        self.elts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elts.is_empty()
    }

    /// Live elements in position order. Deleted elements are removed
    /// outright, so everything stored is live.
    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.elts.iter()
    }

    pub fn nth(&self, index: usize) -> Option<&Element> {
        self.elts.get(index)
    }

    pub fn get(&self, p: &Position) -> Option<&Element> {
        self.find(p).ok().map(|i| &self.elts[i])
    }

    pub fn buffer(&self) -> &[BufferEntry] {
        &self.buffer
    }

    fn find(&self, p: &Position) -> Result<usize, usize> {
        self.elts.binary_search_by(|e| e.pos.cmp(p))
    }

    /// Mints a position in the gap before the element at `index` (at the
    /// tail when `index` equals the length).
    pub fn position_at_gap(
        &self,
        index: usize,
        author: &ReplicaId,
        counter: u64,
    ) -> Result<Position, GenError> {
        if index > self.elts.len() {
            return Err(GenError::IndexOutOfBounds {
                index,
                len: self.elts.len(),
            });
        }
        let left = if index == 0 {
            PositionBound::NegInfinity
        } else {
            PositionBound::At(self.elts[index - 1].pos.clone())
        };
        let right = if index == self.elts.len() {
            PositionBound::PosInfinity
        } else {
            PositionBound::At(self.elts[index].pos.clone())
        };
        Ok(between(&left, &right, author.clone(), counter)?)
    }

    /// Insert effector. Positions are globally unique, so an occupied
    /// position is a protocol violation, not a merge case. After placing
    /// the element, every buffered for-each concurrent with this insertion
    /// replays against it with `prior = false`, in receipt order, stopping
    /// if one deletes it.
    pub fn insert_effect(
        &mut self,
        p: &Position,
        sigma0: &ElementState,
        ctx: ClockContext<'_>,
        fx: &mut Effects<'_>,
    ) {
        let idx = match self.find(p) {
            Ok(_) => panic!("position {p} inserted twice"),
            Err(idx) => idx,
        };
        self.elts.insert(
            idx,
            Element {
                pos: p.clone(),
                state: sigma0.clone(),
                dot: ctx.dot.clone(),
            },
        );
        if fx.skip_buffer_replay {
            return;
        }
        for i in 0..self.buffer.len() {
            if !dot_is_concurrent(&self.buffer[i].u, ctx.w) {
                continue;
            }
            let entry = self.buffer[i].clone();
            fx.log.push(EvalRecord {
                foreach: entry.u.clone(),
                element: ctx.dot.clone(),
                prior: false,
            });
            let entry_ctx = ClockContext {
                w: &entry.w,
                dot: &entry.u,
            };
            if self.execute(&entry.f, p, false, entry_ctx, fx) {
                return;
            }
        }
    }

    /// Delete effector. A missing position means another replica already
    /// removed the element; deletion wins, so nothing is left to do.
    pub fn delete_effect(&mut self, p: &Position) {
        if let Ok(idx) = self.find(p) {
            self.elts.remove(idx);
        }
    }

    /// Apply effector. A missing position means the element was deleted
    /// concurrently; the operation is dropped, deletion wins.
    pub fn apply_effect(
        &mut self,
        p: &Position,
        msg: &ElemMsg,
        ctx: ClockContext<'_>,
        fx: &mut Effects<'_>,
    ) {
        if let Ok(idx) = self.find(p) {
            elem_effect(&mut self.elts[idx].state, msg, ctx, fx);
        }
    }

    /// For-each effector: run the mutation over every element present,
    /// with `prior` telling it whether the element's insertion was in this
    /// for-each's causal past, then remember the for-each for insertions
    /// still in flight.
    pub fn foreach_effect(&mut self, f: &MutationFn, ctx: ClockContext<'_>, fx: &mut Effects<'_>) {
        let targets: Vec<(Position, Dot)> = self
            .elts
            .iter()
            .map(|e| (e.pos.clone(), e.dot.clone()))
            .collect();
        for (p, elt_dot) in targets {
            let prior = dot_is_prior(&elt_dot, ctx.w);
            fx.log.push(EvalRecord {
                foreach: ctx.dot.clone(),
                element: elt_dot,
                prior,
            });
            self.execute(f, &p, prior, ctx, fx);
        }
        self.buffer.push(BufferEntry {
            f: f.clone(),
            u: ctx.dot.clone(),
            w: ctx.w.clone(),
        });
    }

    /// Runs `f` against the element at `p` on behalf of the message
    /// identified by `ctx`. Returns true when the element was deleted.
    fn execute(
        &mut self,
        f: &MutationFn,
        p: &Position,
        prior: bool,
        ctx: ClockContext<'_>,
        fx: &mut Effects<'_>,
    ) -> bool {
        let idx = match self.find(p) {
            Ok(i) => i,
            Err(_) => return false,
        };
        match eval_mutation(f, p, prior) {
            Eval::Null => false,
            Eval::Del => {
                self.elts.remove(idx);
                true
            }
            Eval::Apply(op) => {
                pure_effect(&mut self.elts[idx].state, op, ctx, fx);
                false
            }
        }
    }

    /// Value projection: positions and element values, no dots, winners,
    /// or buffers. This is what renderers and the reference oracle see.
    pub fn snapshot(&self) -> ListSnapshot {
        ListSnapshot(
            self.elts
                .iter()
                .map(|e| ElementSnapshot {
                    pos: e.pos.to_string(),
                    value: e.state.value_snapshot(),
                })
                .collect(),
        )
    }

    /// Copy with every buffer, at all nesting depths, sorted by dot.
    /// Buffers grow in local receipt order, which legitimately differs
    /// across replicas; after this normalization, converged replicas must
    /// be equal on the nose.
    pub fn canonicalized(&self) -> CrdtList {
        let mut out = self.clone();
        out.buffer.sort_by(|a, b| a.u.cmp(&b.u));
        for e in &mut out.elts {
            if let ElementState::Object(inner) = &mut e.state {
                *inner = inner.canonicalized();
            }
        }
        out
    }
}

/// Element-operation generator. Pure operations pass through untouched:
/// the message is the operation, whatever the local state. Inner-list
/// insertion is the one stateful generator; it reads the inner list to
/// mint a position for the new element.
pub fn elem_gen(
    op: ElemOp,
    state: &ElementState,
    author: &ReplicaId,
    counter: u64,
) -> Result<ElemMsg, GenError> {
    match op {
        ElemOp::Pure(op) => Ok(ElemMsg::Pure(op)),
        ElemOp::InnerInsert { index, init } => {
            let ElementState::Object(inner) = state else {
                return Err(GenError::Schema(SchemaError {
                    op: "inner_insert",
                    state: state.kind_name(),
                }));
            };
            let p = inner.position_at_gap(index, author, counter)?;
            Ok(ElemMsg::InnerInsert { p, init })
        }
    }
}

/// Element-message effector: applies a delivered element operation to one
/// element state. An operation aimed at a state kind it cannot touch is
/// dropped; the same drop happens on every replica, so convergence holds.
pub fn elem_effect(
    state: &mut ElementState,
    msg: &ElemMsg,
    ctx: ClockContext<'_>,
    fx: &mut Effects<'_>,
) {
    match msg {
        ElemMsg::Pure(op) => pure_effect(state, op, ctx, fx),
        ElemMsg::InnerInsert { p, init } => {
            if let ElementState::Object(inner) = state {
                inner.insert_effect(p, init, ctx, fx);
            }
        }
    }
}

/// Pure-operation effector. The clock context is the carrying message's
/// identity: attribute writes take its dot as their LWW stamp, and nested
/// for-eaches classify inner elements against its clock.
pub fn pure_effect(
    state: &mut ElementState,
    op: &PureOp,
    ctx: ClockContext<'_>,
    fx: &mut Effects<'_>,
) {
    match (op, state) {
        (PureOp::AttrSet { key, value }, ElementState::RichChar(rc)) => {
            rc.attrs.set(key, value, ctx.dot);
        }
        (PureOp::AmountMult { factor }, ElementState::Ingredient(ing)) => {
            ing.amount.value = ing.amount.value.mul(factor);
        }
        (PureOp::Vec2Mult { matrix }, ElementState::Vec2(v)) => {
            let (x, y) = matrix.mul_vec(&v.x, &v.y);
            v.x = x;
            v.y = y;
        }
        (PureOp::NestedForEach { f }, ElementState::Object(inner)) => {
            inner.foreach_effect(f, ctx, fx);
        }
        _ => {}
    }
}

fn op_matches_state(op: &ElemOp, state: &ElementState) -> Result<(), SchemaError> {
    let ok = matches!(
        (op, state),
        (
            ElemOp::Pure(PureOp::AttrSet { .. }),
            ElementState::RichChar(_)
        ) | (
            ElemOp::Pure(PureOp::AmountMult { .. }),
            ElementState::Ingredient(_)
        ) | (ElemOp::Pure(PureOp::Vec2Mult { .. }), ElementState::Vec2(_))
            | (
                ElemOp::Pure(PureOp::NestedForEach { .. }),
                ElementState::Object(_)
            )
            | (ElemOp::InnerInsert { .. }, ElementState::Object(_))
    );
    if ok {
        Ok(())
    } else {
        let kind = match op {
            ElemOp::Pure(p) => p.kind(),
            ElemOp::InnerInsert { .. } => "inner_insert",
        };
        Err(SchemaError {
            op: kind,
            state: state.kind_name(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("index {index} out of bounds for list of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("no element at position {0}")]
    NoSuchPosition(Position),
    #[error(transparent)]
    Position(#[from] PositionError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeliveryError {
    #[error("duplicate delivery of {dot}")]
    AlreadyDelivered { dot: Dot },
    #[error("causal gap delivering {dot}: have {have} messages from {from}, need {need}")]
    CausalGap {
        dot: Dot,
        from: ReplicaId,
        have: u64,
        need: u64,
    },
    #[error("malformed envelope {dot}: clock does not cover its own dot")]
    Malformed { dot: Dot },
}

/// One replica: an identity, a causal clock over everything delivered
/// (own messages included), and the list state.
///
/// Generators mutate local state and return the envelope to broadcast;
/// the sender's own effector has already run when they return. `deliver`
/// is the receive path, guarded by the causal gate.
#[derive(Debug, Clone)]
pub struct Replica {
    id: ReplicaId,
    vc: VectorClock,
    list: CrdtList,
    eval_log: Vec<EvalRecord>,
    /// Test-only fault: skip the buffered for-each replay on insertion.
    /// Models the bug the buffer exists to fix; fuzzing asserts that
    /// enabling it breaks convergence.
    pub skip_buffer_replay_fault: bool,
}

impl Replica {
    pub fn new(id: ReplicaId) -> Self {
        Replica {
            id,
            vc: VectorClock::new(),
            list: CrdtList::default(),
            eval_log: Vec::new(),
            skip_buffer_replay_fault: false,
        }
    }

    pub fn id(&self) -> &ReplicaId {
        &self.id
    }

    pub fn clock(&self) -> &VectorClock {
        &self.vc
    }

    pub fn list(&self) -> &CrdtList {
        &self.list
    }

    pub fn eval_log(&self) -> &[EvalRecord] {
        &self.eval_log
    }

    pub fn snapshot(&self) -> ListSnapshot {
        self.list.snapshot()
    }

    fn next_clock(&self) -> u64 {
        self.vc.get(&self.id) + 1
    }

    /// Position-minting counter: messages this replica has sent so far.
    /// The fresh pair's digit becomes the carrying message's clock.
    fn counter(&self) -> u64 {
        self.vc.get(&self.id)
    }

    pub fn insert_gen(&mut self, index: usize, sigma0: ElementState) -> Result<Envelope, GenError> {
        let p = self.list.position_at_gap(index, &self.id, self.counter())?;
        Ok(self.broadcast(Payload::Insert { p, sigma0 }))
    }

    pub fn delete_gen(&mut self, index: usize) -> Result<Envelope, GenError> {
        let p = self
            .list
            .nth(index)
            .ok_or(GenError::IndexOutOfBounds {
                index,
                len: self.list.len(),
            })?
            .pos
            .clone();
        Ok(self.broadcast(Payload::Delete { p }))
    }

    pub fn delete_at_gen(&mut self, p: &Position) -> Result<Envelope, GenError> {
        if self.list.get(p).is_none() {
            return Err(GenError::NoSuchPosition(p.clone()));
        }
        Ok(self.broadcast(Payload::Delete { p: p.clone() }))
    }

    pub fn apply_gen(&mut self, index: usize, op: ElemOp) -> Result<Envelope, GenError> {
        let p = self
            .list
            .nth(index)
            .ok_or(GenError::IndexOutOfBounds {
                index,
                len: self.list.len(),
            })?
            .pos
            .clone();
        self.apply_at_gen(&p, op)
    }

    pub fn apply_at_gen(&mut self, p: &Position, op: ElemOp) -> Result<Envelope, GenError> {
        let elt = self
            .list
            .get(p)
            .ok_or_else(|| GenError::NoSuchPosition(p.clone()))?;
        op_matches_state(&op, &elt.state)?;
        let msg = elem_gen(op, &elt.state, &self.id, self.counter())?;
        Ok(self.broadcast(Payload::Apply {
            p: p.clone(),
            op: msg,
        }))
    }

    /// For-each generation is pure: the message is the mutation function,
    /// no local state read.
    pub fn foreach_gen(&mut self, f: MutationFn) -> Envelope {
        self.broadcast(Payload::ForEach { f })
    }

    /// The unbuffered contrast: evaluate `f` against the elements present
    /// locally right now and broadcast one plain message per hit. Elements
    /// inserted concurrently elsewhere are never reached.
    pub fn foreach_prior_gen(&mut self, f: &MutationFn) -> Vec<Envelope> {
        let targets: Vec<Position> = self.list.elts.iter().map(|e| e.pos.clone()).collect();
        let mut out = Vec::new();
        for p in targets {
            match eval_mutation(f, &p, true) {
                Eval::Null => {}
                Eval::Del => out.push(self.broadcast(Payload::Delete { p })),
                Eval::Apply(op) => {
                    let op = op.clone();
                    out.push(self.broadcast(Payload::Apply {
                        p,
                        op: ElemMsg::Pure(op),
                    }));
                }
            }
        }
        out
    }

    fn broadcast(&mut self, payload: Payload) -> Envelope {
        let next = self.next_clock();
        self.vc.set(self.id.clone(), next);
        let env = Envelope::new(Dot::new(self.id.clone(), next), self.vc.clone(), payload);
        self.effect(&env);
        env
    }

    /// Receive path. The causal gate rejects duplicates and gaps; on
    /// success the clock advances by the sender's entry alone, which under
    /// the gate equals a full pointwise merge.
    pub fn deliver(&mut self, env: &Envelope) -> Result<(), DeliveryError> {
        if !env.well_formed() {
            return Err(DeliveryError::Malformed {
                dot: env.dot.clone(),
            });
        }
        match classify_delivery(env, &self.vc) {
            DeliveryClass::Duplicate => Err(DeliveryError::AlreadyDelivered {
                dot: env.dot.clone(),
            }),
            DeliveryClass::Gap { from, have, need } => Err(DeliveryError::CausalGap {
                dot: env.dot.clone(),
                from,
                have,
                need,
            }),
            DeliveryClass::Ready => {
                let advanced = record_delivery(env, &self.vc);
                debug_assert_eq!(advanced, self.vc.merged(&env.vc));
                self.vc = advanced;
                self.effect(env);
                Ok(())
            }
        }
    }

    fn effect(&mut self, env: &Envelope) {
        let ctx = ClockContext {
            w: &env.vc,
            dot: &env.dot,
        };
        let mut fx = Effects {
            log: &mut self.eval_log,
            skip_buffer_replay: self.skip_buffer_replay_fault,
        };
        match &env.payload {
            Payload::Insert { p, sigma0 } => self.list.insert_effect(p, sigma0, ctx, &mut fx),
            Payload::Delete { p } => self.list.delete_effect(p),
            Payload::Apply { p, op } => self.list.apply_effect(p, op, ctx, &mut fx),
            Payload::ForEach { f } => self.list.foreach_effect(f, ctx, &mut fx),
        }
    }
}

/// Value snapshot of one element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSnapshot {
    RichChar {
        #[serde(rename = "char")]
        ch: char,
        attrs: BTreeMap<String, AttrValue>,
    },
    Ingredient {
        name: String,
        amount: String,
        unit: String,
    },
    Vec2 {
        x: String,
        y: String,
    },
    Object(ListSnapshot),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementSnapshot {
    pub pos: String,
    pub value: ValueSnapshot,
}

/// Value snapshot of a whole list, in position order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ListSnapshot(pub Vec<ElementSnapshot>);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{attr_set, nested_foreach, vec2_mult, Mat2};
    use crate::foreach::{Instruction, Predicate, PriorGate};

    fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    fn replica(s: &str) -> Replica {
        Replica::new(rid(s))
    }

    fn mutate_all(gate: PriorGate, instruction: Instruction) -> MutationFn {
        MutationFn::new(Predicate::All, gate, instruction)
    }

    fn set_attr(key: &str) -> Instruction {
        Instruction::Apply(attr_set(key, AttrValue::Bool(true)))
    }

    fn chars_of(r: &Replica) -> String {
        r.list()
            .elements()
            .map(|e| match &e.state {
                ElementState::RichChar(rc) => rc.ch,
                _ => '?',
            })
            .collect()
    }

    fn has_attr(r: &Replica, i: usize, key: &str) -> bool {
        match &r.list().nth(i).unwrap().state {
            ElementState::RichChar(rc) => rc.attrs.get(key) == Some(&AttrValue::Bool(true)),
            _ => false,
        }
    }

    fn converged(a: &Replica, b: &Replica) -> bool {
        a.list().canonicalized() == b.list().canonicalized()
    }

    #[test]
    fn insert_apply_delete_round_trip() {
        let mut a = replica("A");
        a.insert_gen(0, ElementState::rich_char('h')).unwrap();
        a.insert_gen(1, ElementState::rich_char('i')).unwrap();
        a.apply_gen(0, ElemOp::Pure(attr_set("bold", AttrValue::Bool(true))))
            .unwrap();
        a.delete_gen(1).unwrap();
        assert_eq!(chars_of(&a), "h");
        assert!(has_attr(&a, 0, "bold"));
        assert_eq!(a.clock().get(&rid("A")), 4);
    }

    #[test]
    fn generated_message_equals_the_operation_for_pure_ops() {
        let mut a = replica("A");
        a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        let op = attr_set("bold", AttrValue::Bool(true));
        let env = a.apply_gen(0, ElemOp::Pure(op.clone())).unwrap();
        match &env.payload {
            Payload::Apply { op: msg, .. } => assert_eq!(msg, &ElemMsg::Pure(op)),
            other => panic!("expected apply payload, got {other:?}"),
        }
    }

    #[test]
    fn concurrent_insertions_converge_in_both_orders() {
        let mut a = replica("A");
        let mut b = replica("B");
        let ea = a.insert_gen(0, ElementState::rich_char('a')).unwrap();
        let eb = b.insert_gen(0, ElementState::rich_char('b')).unwrap();
        let mut c1 = replica("C1");
        let mut c2 = replica("C2");
        c1.deliver(&ea).unwrap();
        c1.deliver(&eb).unwrap();
        c2.deliver(&eb).unwrap();
        c2.deliver(&ea).unwrap();
        assert_eq!(chars_of(&c1), chars_of(&c2));
        assert!(converged(&c1, &c2));
        assert_eq!(c1.list().len(), 2);
    }

    #[test]
    fn delete_wins_over_concurrent_apply() {
        let mut a = replica("A");
        let mut b = replica("B");
        let e0 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        b.deliver(&e0).unwrap();
        let e1 = a
            .apply_gen(0, ElemOp::Pure(attr_set("bold", AttrValue::Bool(true))))
            .unwrap();
        let e2 = b.delete_gen(0).unwrap();
        a.deliver(&e2).unwrap();
        b.deliver(&e1).unwrap();
        assert!(a.list().is_empty());
        assert!(b.list().is_empty());
        assert!(converged(&a, &b));
    }

    #[test]
    fn buffered_mutation_hits_insertion_delivered_later() {
        let mut a = replica("A");
        let mut b = replica("B");
        let e1 = a.insert_gen(0, ElementState::rich_char('a')).unwrap();
        let e2 = a.insert_gen(1, ElementState::rich_char('c')).unwrap();
        b.deliver(&e1).unwrap();
        b.deliver(&e2).unwrap();
        let ef = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("bold")));
        let ei = b.insert_gen(1, ElementState::rich_char('b')).unwrap();
        a.deliver(&ei).unwrap();
        b.deliver(&ef).unwrap();
        assert_eq!(chars_of(&a), "abc");
        for i in 0..3 {
            assert!(has_attr(&a, i, "bold"));
            assert!(has_attr(&b, i, "bold"));
        }
        assert!(converged(&a, &b));
        let concurrent_eval = EvalRecord {
            foreach: ef.dot.clone(),
            element: ei.dot.clone(),
            prior: false,
        };
        assert!(a.eval_log().contains(&concurrent_eval));
        assert!(b.eval_log().contains(&concurrent_eval));
    }

    #[test]
    fn insertion_causally_after_foreach_is_not_mutated() {
        let mut a = replica("A");
        let mut b = replica("B");
        let e0 = a.insert_gen(0, ElementState::rich_char('a')).unwrap();
        b.deliver(&e0).unwrap();
        let ef = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("bold")));
        b.deliver(&ef).unwrap();
        let ei = b.insert_gen(1, ElementState::rich_char('n')).unwrap();
        a.deliver(&ei).unwrap();
        for r in [&a, &b] {
            assert!(has_attr(r, 0, "bold"));
            assert!(!has_attr(r, 1, "bold"));
        }
        assert!(converged(&a, &b));
    }

    #[test]
    fn all_concurrent_foreaches_replay_on_insertion() {
        let mut a = replica("A");
        let mut b = replica("B");
        let e1 = a.insert_gen(0, ElementState::rich_char('a')).unwrap();
        let ef1 = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("bold")));
        let ef2 = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("italic")));
        let ei = b.insert_gen(0, ElementState::rich_char('z')).unwrap();
        b.deliver(&e1).unwrap();
        b.deliver(&ef1).unwrap();
        b.deliver(&ef2).unwrap();
        a.deliver(&ei).unwrap();
        for r in [&a, &b] {
            for i in 0..2 {
                assert!(has_attr(r, i, "bold"));
                assert!(has_attr(r, i, "italic"));
            }
        }
        assert!(converged(&a, &b));
    }

    #[test]
    fn buffered_delete_halts_further_replay() {
        let mut a = replica("A");
        let mut b = replica("B");
        let ef1 = a.foreach_gen(mutate_all(PriorGate::Any, Instruction::Del));
        let ef2 = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("bold")));
        let ei = b.insert_gen(0, ElementState::rich_char('z')).unwrap();
        a.deliver(&ei).unwrap();
        b.deliver(&ef1).unwrap();
        b.deliver(&ef2).unwrap();
        assert!(a.list().is_empty());
        assert!(b.list().is_empty());
        assert!(converged(&a, &b));
        assert!(a.eval_log().contains(&EvalRecord {
            foreach: ef1.dot.clone(),
            element: ei.dot.clone(),
            prior: false,
        }));
        assert!(!a.eval_log().iter().any(|r| r.foreach == ef2.dot));
    }

    #[test]
    fn nested_mutations_reach_inner_insertions() {
        let rot = Mat2::rotation(Rational::integer(0), Rational::integer(1));
        let mut a = replica("A");
        let mut b = replica("B");
        let e1 = a.insert_gen(0, ElementState::object()).unwrap();
        b.deliver(&e1).unwrap();
        let ef = a
            .apply_gen(
                0,
                ElemOp::Pure(nested_foreach(mutate_all(
                    PriorGate::Any,
                    Instruction::Apply(vec2_mult(rot)),
                ))),
            )
            .unwrap();
        let ei = b
            .apply_gen(
                0,
                ElemOp::InnerInsert {
                    index: 0,
                    init: Box::new(ElementState::vec2(
                        Rational::integer(1),
                        Rational::integer(0),
                    )),
                },
            )
            .unwrap();
        a.deliver(&ei).unwrap();
        b.deliver(&ef).unwrap();
        for r in [&a, &b] {
            let ElementState::Object(inner) = &r.list().nth(0).unwrap().state else {
                panic!("expected object");
            };
            let ElementState::Vec2(v) = &inner.nth(0).unwrap().state else {
                panic!("expected vec2");
            };
            assert_eq!(
                (v.x.to_string(), v.y.to_string()),
                ("0".into(), "-1".into())
            );
        }
        assert!(converged(&a, &b));
    }

    #[test]
    #[should_panic(expected = "inserted twice")]
    fn duplicate_position_insertion_panics() {
        let mut a = replica("A");
        let ea = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        let p = match &ea.payload {
            Payload::Insert { p, .. } => p.clone(),
            _ => unreachable!(),
        };
        let forged = Envelope::new(
            Dot::new(rid("B"), 1),
            VectorClock::from_entries([(rid("B"), 1)]),
            Payload::Insert {
                p,
                sigma0: ElementState::rich_char('y'),
            },
        );
        a.deliver(&forged).unwrap();
    }

    #[test]
    fn duplicate_delivery_is_rejected() {
        let mut a = replica("A");
        let mut b = replica("B");
        let e = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        b.deliver(&e).unwrap();
        assert_eq!(
            b.deliver(&e),
            Err(DeliveryError::AlreadyDelivered { dot: e.dot.clone() })
        );
    }

    #[test]
    fn out_of_order_delivery_is_rejected() {
        let mut a = replica("A");
        let mut b = replica("B");
        let _e1 = a.insert_gen(0, ElementState::rich_char('x')).unwrap();
        let e2 = a.insert_gen(1, ElementState::rich_char('y')).unwrap();
        assert_eq!(
            b.deliver(&e2),
            Err(DeliveryError::CausalGap {
                dot: e2.dot.clone(),
                from: rid("A"),
                have: 0,
                need: 1,
            })
        );
    }

    #[test]
    fn schema_mismatch_at_generation_is_rejected() {
        let mut a = replica("A");
        a.insert_gen(
            0,
            ElementState::vec2(Rational::integer(1), Rational::integer(0)),
        )
        .unwrap();
        let err = a
            .apply_gen(0, ElemOp::Pure(attr_set("bold", AttrValue::Bool(true))))
            .unwrap_err();
        assert_eq!(
            err,
            GenError::Schema(SchemaError {
                op: "attr_set",
                state: "vec2",
            })
        );
    }

    #[test]
    fn foreach_prior_emits_one_message_per_matching_element() {
        let mut a = replica("A");
        for (i, ch) in "abc".chars().enumerate() {
            a.insert_gen(i, ElementState::rich_char(ch)).unwrap();
        }
        let envs = a.foreach_prior_gen(&mutate_all(PriorGate::Any, Instruction::Del));
        assert_eq!(envs.len(), 3);
        assert!(envs
            .iter()
            .all(|e| matches!(e.payload, Payload::Delete { .. })));
        assert!(a.list().is_empty());
        assert_eq!(a.clock().get(&rid("A")), 6);
    }

    #[test]
    fn canonicalized_ignores_buffer_receipt_order() {
        let mut a = replica("A");
        let mut b = replica("B");
        let ef1 = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("bold")));
        let ef2 = b.foreach_gen(mutate_all(PriorGate::Any, set_attr("italic")));
        a.deliver(&ef2).unwrap();
        b.deliver(&ef1).unwrap();
        assert_ne!(a.list(), b.list());
        assert!(converged(&a, &b));
    }

    #[test]
    fn snapshot_projects_values_only() {
        let mut a = replica("A");
        a.insert_gen(0, ElementState::rich_char('h')).unwrap();
        a.apply_gen(0, ElemOp::Pure(attr_set("bold", AttrValue::Bool(true))))
            .unwrap();
        let json = serde_json::to_value(a.snapshot()).unwrap();
        assert_eq!(
            serde_json::to_string(&json).unwrap(),
            r#"[{"pos":"1.A","value":{"rich_char":{"attrs":{"bold":true},"char":"h"}}}]"#
        );
    }

    #[test]
    fn skip_buffer_replay_fault_loses_concurrent_mutations() {
        let mut a = replica("A");
        let mut b = replica("B");
        a.skip_buffer_replay_fault = true;
        let ef = a.foreach_gen(mutate_all(PriorGate::Any, set_attr("bold")));
        let ei = b.insert_gen(0, ElementState::rich_char('z')).unwrap();
        a.deliver(&ei).unwrap();
        b.deliver(&ef).unwrap();
        assert!(!has_attr(&a, 0, "bold"));
        assert!(has_attr(&b, 0, "bold"));
        assert!(!converged(&a, &b));
    }
}
