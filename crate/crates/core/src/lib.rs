//! A replicated list of CRDTs with a buffered for-each operation.
//!
//! Replicas hold a list of element CRDTs sorted by dense positions and
//! exchange operation messages under causal delivery. Point operations
//! (insert, delete, apply) follow the usual generator/effector pattern.
//! The for-each operation mutates every element, including elements
//! inserted concurrently on other replicas: each replica remembers every
//! for-each it has seen and replays the remembered mutations against
//! late-arriving insertions, so all replicas converge without
//! coordination.
//!
//! The crate also ships a reference oracle that recomputes each element's
//! expected final state directly from the message history, a deterministic
//! multi-replica simulator with randomized fuzzing, and scripted scenarios
//! with golden outputs.

pub mod causal;
pub mod element;
pub mod foreach;
pub mod fuzz;
pub mod list;
pub mod log;
pub mod oracle;
pub mod position;
pub mod scenario;
pub mod sim;

pub use causal::{
    classify_delivery, deliverable, dot_is_concurrent, dot_is_prior, record_delivery,
    DeliveryClass, Dot, Envelope, Payload, ReplicaId, VectorClock,
};
pub use element::{
    amount_mult, attr_set, nested_foreach, vec2_mult, AttrValue, ClockContext, Mat2, PureOp,
    Rational,
};
pub use foreach::{
    eval_mutation, BufferEntry, Eval, Instruction, MutationFn, Predicate, PriorGate,
};
pub use fuzz::{run_fuzz, FuzzConfig, FuzzFailure, FuzzKind, FuzzReport};
pub use list::{
    elem_effect, elem_gen, pure_effect, CrdtList, DeliveryError, Effects, ElemMsg, ElemOp, Element,
    ElementSnapshot, ElementState, EvalRecord, GenError, ListSnapshot, Replica, ValueSnapshot,
};
pub use log::canonical_json;
pub use oracle::{check_convergence, Convergence, History, HistoryError, OracleFailure};
pub use position::{between, compare, Position, PositionBound, PositionError};
pub use sim::{AuditError, Network};
