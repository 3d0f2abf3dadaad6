//! Replica identities, vector clocks, dots, and the causal-delivery gate.
//!
//! Every broadcast message travels as an [`Envelope`] stamped with the
//! sender's [`Dot`] (its identity plus a per-sender sequence number) and the
//! full [`VectorClock`] observed at send time, sender entry already
//! incremented. Two classification predicates drive all concurrency
//! decisions downstream:
//!
//! * [`dot_is_prior`]: did the clock `w` already see the message identified
//!   by dot `t`?
//! * [`dot_is_concurrent`]: does the clock `v` *not* see the message
//!   identified by dot `u`?
//!
//! Delivery is gated by [`deliverable`]: an envelope may be handed to a
//! replica only when it is the next message from its sender and every
//! cross-sender dependency named in its clock has already arrived. Under
//! that gate, [`record_delivery`] only needs to write the sender's entry;
//! a property test asserts this equals a full pointwise merge.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::foreach::MutationFn;
use crate::list::{ElemMsg, ElementState};
use crate::position::Position;

/// Totally ordered, globally unique replica identity.
///
/// Restricted to `[A-Za-z0-9_-]+` so identifiers can be embedded verbatim
/// in the canonical text form of positions (`digit.author/...`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ReplicaId(String);

impl ReplicaId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidReplicaId> {
        let id = id.into();
        let ok = !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if ok {
            Ok(ReplicaId(id))
        } else {
            Err(InvalidReplicaId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid replica id {0:?}: must be non-empty and match [A-Za-z0-9_-]+")]
pub struct InvalidReplicaId(pub String);

impl TryFrom<String> for ReplicaId {
    type Error = InvalidReplicaId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ReplicaId::new(s)
    }
}

impl From<ReplicaId> for String {
    fn from(r: ReplicaId) -> String {
        r.0
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Map from replica to the count of messages seen from it; absent reads 0.
///
/// Zero entries are never stored, so serialized clocks omit them and
/// structural equality coincides with pointwise equality.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorClock(BTreeMap<ReplicaId, u64>);

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, r: &ReplicaId) -> u64 {
        self.0.get(r).copied().unwrap_or(0)
    }

    pub fn set(&mut self, r: ReplicaId, n: u64) {
        if n == 0 {
            self.0.remove(&r);
        } else {
            self.0.insert(r, n);
        }
    }

    pub fn increment(&mut self, r: &ReplicaId) -> u64 {
        let n = self.get(r) + 1;
        self.0.insert(r.clone(), n);
        n
    }

    /// Pointwise maximum. Only used to cross-check `record_delivery`.
    pub fn merged(&self, other: &VectorClock) -> VectorClock {
        let mut out = self.clone();
        for (r, n) in &other.0 {
            let cur = out.get(r);
            if *n > cur {
                out.0.insert(r.clone(), *n);
            }
        }
        out
    }

    /// Componentwise `self ≤ other`.
    pub fn leq(&self, other: &VectorClock) -> bool {
        self.0.iter().all(|(r, n)| *n <= other.get(r))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ReplicaId, u64)> {
        self.0.iter().map(|(r, n)| (r, *n))
    }

    pub fn from_entries<I: IntoIterator<Item = (ReplicaId, u64)>>(entries: I) -> Self {
        let mut vc = VectorClock::new();
        for (r, n) in entries {
            vc.set(r, n);
        }
        vc
    }
}

/// Identity of one originated message: which replica sent it, and how many
/// messages that replica had sent up to and including this one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dot {
    pub sender: ReplicaId,
    pub clock: u64,
}

impl Dot {
    pub fn new(sender: ReplicaId, clock: u64) -> Self {
        Dot { sender, clock }
    }
}

/// Dots are totally ordered by (clock, sender). This order breaks ties
/// between concurrent writes in last-writer-wins registers.
impl Ord for Dot {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.clock, &self.sender).cmp(&(other.clock, &other.sender))
    }
}

impl PartialOrd for Dot {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Dot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.sender, self.clock)
    }
}

/// True iff the message identified by `t` is causally seen by clock `w`:
/// `w[t.sender] ≥ t.clock`.
pub fn dot_is_prior(t: &Dot, w: &VectorClock) -> bool {
    w.get(&t.sender) >= t.clock
}

/// True iff the message identified by `u` is *not* seen by clock `v`:
/// `v[u.sender] < u.clock`. When `v` belongs to a message delivered at or
/// after the one carrying `u`, this means the two were concurrent.
pub fn dot_is_concurrent(u: &Dot, v: &VectorClock) -> bool {
    v.get(&u.sender) < u.clock
}

/// Payload of a broadcast message: one list operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum Payload {
    Insert { p: Position, sigma0: ElementState },
    Delete { p: Position },
    Apply { p: Position, op: ElemMsg },
    ForEach { f: MutationFn },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Insert { .. } => "insert",
            Payload::Delete { .. } => "delete",
            Payload::Apply { .. } => "apply",
            Payload::ForEach { .. } => "foreach",
        }
    }
}

/// A broadcast message: dot, full sender clock at send time (sender entry
/// already incremented, so `vc[dot.sender] = dot.clock`), and the payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub dot: Dot,
    pub vc: VectorClock,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Envelope {
    pub fn new(dot: Dot, vc: VectorClock, payload: Payload) -> Self {
        debug_assert_eq!(vc.get(&dot.sender), dot.clock);
        Envelope { dot, vc, payload }
    }

    /// Checks the structural invariant `vc[dot.sender] = dot.clock`.
    /// Deserialized envelopes are validated through this before use.
    pub fn well_formed(&self) -> bool {
        self.dot.clock >= 1 && self.vc.get(&self.dot.sender) == self.dot.clock
    }
}

/// Why an envelope cannot (or can) be handed to a replica right now.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryClass {
    /// Gate passes: next in sequence from its sender, all cross-sender
    /// dependencies met.
    Ready,
    /// Already delivered here (sender sequence has moved past it).
    Duplicate,
    /// A dependency is missing: the receiving replica has seen `have`
    /// messages from `from` but this envelope requires `need`.
    Gap {
        from: ReplicaId,
        have: u64,
        need: u64,
    },
}

/// Classifies an envelope against a replica's local clock.
pub fn classify_delivery(e: &Envelope, local: &VectorClock) -> DeliveryClass {
    let sender = &e.dot.sender;
    let seen = local.get(sender);
    if e.dot.clock <= seen {
        return DeliveryClass::Duplicate;
    }
    if e.dot.clock > seen + 1 {
        return DeliveryClass::Gap {
            from: sender.clone(),
            have: seen,
            need: e.dot.clock - 1,
        };
    }
    for (r, n) in e.vc.iter() {
        if r != sender && n > local.get(r) {
            return DeliveryClass::Gap {
                from: r.clone(),
                have: local.get(r),
                need: n,
            };
        }
    }
    DeliveryClass::Ready
}

/// The causal-delivery gate: `e.vc[s] = local[s] + 1` for the sender `s`,
/// and `e.vc[r] ≤ local[r]` for every other replica `r`.
pub fn deliverable(e: &Envelope, local: &VectorClock) -> bool {
    classify_delivery(e, local) == DeliveryClass::Ready
}

/// Advances a local clock past a delivered envelope by writing only the
/// sender's entry. Under the [`deliverable`] gate this equals a full
/// pointwise merge with the envelope's clock.
pub fn record_delivery(e: &Envelope, local: &VectorClock) -> VectorClock {
    let mut out = local.clone();
    out.set(e.dot.sender.clone(), e.vc.get(&e.dot.sender));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rid(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    fn vc(entries: &[(&str, u64)]) -> VectorClock {
        VectorClock::from_entries(entries.iter().map(|(r, n)| (rid(r), *n)))
    }

    /// Minimal payload for tests that only exercise clock logic.
    fn probe(sender: &str, clock: u64, clock_entries: &[(&str, u64)]) -> Envelope {
        Envelope::new(
            Dot::new(rid(sender), clock),
            vc(clock_entries),
            Payload::Delete {
                p: crate::position::Position::first(rid(sender), 0),
            },
        )
    }

    #[test]
    fn prior_when_clock_covers_dot() {
        assert!(dot_is_prior(&Dot::new(rid("A"), 3), &vc(&[("A", 5)])));
    }

    #[test]
    fn not_prior_when_clock_behind_dot() {
        assert!(!dot_is_prior(&Dot::new(rid("A"), 3), &vc(&[("A", 2)])));
    }

    #[test]
    fn absent_entry_reads_zero_for_prior() {
        assert!(!dot_is_prior(&Dot::new(rid("B"), 1), &vc(&[("A", 7)])));
    }

    #[test]
    fn concurrent_when_clock_misses_dot() {
        assert!(dot_is_concurrent(
            &Dot::new(rid("A"), 4),
            &vc(&[("A", 3), ("B", 9)])
        ));
    }

    #[test]
    fn not_concurrent_when_clock_saw_dot() {
        assert!(!dot_is_concurrent(&Dot::new(rid("A"), 4), &vc(&[("A", 4)])));
    }

    #[test]
    fn empty_clock_is_concurrent_with_everything() {
        assert!(dot_is_concurrent(&Dot::new(rid("C"), 1), &vc(&[])));
    }

    #[test]
    fn first_message_from_sender_is_deliverable() {
        let e = probe("A", 1, &[("A", 1)]);
        assert!(deliverable(&e, &vc(&[])));
    }

    #[test]
    fn cross_sender_gap_blocks_delivery() {
        let e = probe("A", 2, &[("A", 2), ("B", 1)]);
        assert!(!deliverable(&e, &vc(&[("A", 1)])));
        assert_eq!(
            classify_delivery(&e, &vc(&[("A", 1)])),
            DeliveryClass::Gap {
                from: rid("B"),
                have: 0,
                need: 1
            }
        );
    }

    #[test]
    fn satisfied_dependencies_pass_the_gate() {
        let e = probe("A", 2, &[("A", 2), ("B", 1)]);
        assert!(deliverable(&e, &vc(&[("A", 1), ("B", 1)])));
    }

    #[test]
    fn duplicate_is_classified_as_already_delivered() {
        let e = probe("A", 1, &[("A", 1)]);
        assert_eq!(
            classify_delivery(&e, &vc(&[("A", 1)])),
            DeliveryClass::Duplicate
        );
    }

    #[test]
    fn record_delivery_writes_sender_entry() {
        let e = probe("B", 1, &[("A", 1), ("B", 1)]);
        assert_eq!(
            record_delivery(&e, &vc(&[("A", 1)])),
            vc(&[("A", 1), ("B", 1)])
        );
    }

    #[test]
    fn record_delivery_from_empty_clock() {
        let e = probe("A", 1, &[("A", 1)]);
        assert_eq!(record_delivery(&e, &vc(&[])), vc(&[("A", 1)]));
    }

    #[test]
    fn record_delivery_bumps_single_entry() {
        let e = probe("A", 4, &[("A", 4), ("B", 2)]);
        assert_eq!(
            record_delivery(&e, &vc(&[("A", 3), ("B", 2)])),
            vc(&[("A", 4), ("B", 2)])
        );
    }

    #[test]
    fn zero_entries_are_normalized_away() {
        let mut c = vc(&[("A", 1)]);
        c.set(rid("A"), 0);
        assert_eq!(c, vc(&[]));
        assert_eq!(serde_json::to_string(&c).unwrap(), "{}");
    }

    #[test]
    fn dot_total_order_is_clock_then_sender() {
        assert!(Dot::new(rid("A"), 5) < Dot::new(rid("B"), 5));
        assert!(Dot::new(rid("B"), 4) < Dot::new(rid("A"), 5));
    }
}
