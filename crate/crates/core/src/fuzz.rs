//! Randomized multi-replica runs with every check wired in.
//!
//! One fuzz run drives a network of replicas from a seeded generator:
//! each step either delivers one deliverable envelope or generates one
//! operation at a random replica, until the operation budget is spent and
//! the network is quiescent. Along the way, cloned replicas are probed
//! with out-of-order and duplicate envelopes, which the gate must reject
//! without state change. At quiescence the run must converge pairwise,
//! every recorded prior flag must match trace causality, and the history
//! must replay to the oracle's expected snapshot under many random
//! schedules, byte-equal in canonical JSON.
//!
//! With the buffer fault injected the same machinery demonstrates the
//! opposite: skipping the buffered replay makes replicas drift apart or
//! away from the oracle, and the run reports whether it observed that.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::causal::{Dot, Envelope, ReplicaId, VectorClock};
use crate::element::{amount_mult, attr_set, nested_foreach, vec2_mult, AttrValue, Mat2, Rational};
use crate::foreach::{Instruction, MutationFn, Predicate, PriorGate};
use crate::list::{DeliveryError, ElemOp, ElementState};
use crate::log::canonical_json;
use crate::oracle::{check_convergence, History, OracleFailure};
use crate::position::Position;
use crate::sim::{AuditError, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuzzKind {
    RichChar,
    Ingredient,
    Vec2,
    Object,
}

impl FuzzKind {
    pub const ALL: [FuzzKind; 4] = [
        FuzzKind::RichChar,
        FuzzKind::Ingredient,
        FuzzKind::Vec2,
        FuzzKind::Object,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FuzzKind::RichChar => "rich_char",
            FuzzKind::Ingredient => "ingredient",
            FuzzKind::Vec2 => "vec2",
            FuzzKind::Object => "object",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub seed: u64,
    pub replicas: usize,
    /// Operations to generate across all replicas.
    pub ops: usize,
    /// Replay schedules for the oracle convergence check.
    pub schedules: usize,
    /// When set, every fourth generated operation is a for-each.
    pub foreach: bool,
    /// Element kind for the run; drawn from the seed when absent.
    pub kind: Option<FuzzKind>,
    /// Break every replica's insertion effector by skipping the buffered
    /// for-each replay, to demonstrate why the buffer must exist.
    pub inject_skip_buffer_replay: bool,
}

impl FuzzConfig {
    pub fn new(seed: u64) -> FuzzConfig {
        FuzzConfig {
            seed,
            replicas: 4,
            ops: 200,
            schedules: 10,
            foreach: true,
            kind: None,
            inject_skip_buffer_replay: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FuzzReport {
    pub seed: u64,
    pub kind: &'static str,
    pub envelopes: usize,
    pub foreaches: usize,
    pub evals_audited: usize,
    pub gap_probes: usize,
    pub duplicate_probes: usize,
    pub schedules_checked: usize,
    pub final_elements: usize,
    /// Only meaningful under fault injection: whether the broken replay
    /// visibly corrupted the run.
    pub fault_observed: bool,
    /// The full message log, for downstream audits and replay.
    pub log: Vec<Envelope>,
}

#[derive(Debug, thiserror::Error)]
pub enum FailureReason {
    #[error("replicas {a} and {b} diverged at quiescence")]
    Diverged { a: ReplicaId, b: ReplicaId },
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Oracle(#[from] OracleFailure),
    #[error("replica {replica} does not match the oracle snapshot at quiescence")]
    LiveMismatch { replica: ReplicaId },
    #[error("replica {replica} accepted {dot} despite a causal gap")]
    GapAccepted { replica: ReplicaId, dot: Dot },
    #[error("replica {replica} accepted duplicate delivery of {dot}")]
    DuplicateAccepted { replica: ReplicaId, dot: Dot },
}

/// A failed fuzz run: the reason plus a reproducing message log
/// (shrunken when the failure reproduces from the log alone).
#[derive(Debug, thiserror::Error)]
#[error("fuzz seed {seed}: {reason} ({} envelopes logged)", log.len())]
pub struct FuzzFailure {
    pub seed: u64,
    pub log: Vec<Envelope>,
    pub reason: FailureReason,
}

const ATTR_KEYS: [&str; 4] = ["bold", "italic", "em", "size"];
const INGREDIENT_NAMES: [&str; 5] = ["flour", "sugar", "salt", "butter", "eggs"];
const UNITS: [&str; 3] = ["g", "ml", "tsp"];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

/// Replica names: single letters, then letter-digit pairs.
pub fn replica_names(n: usize) -> Vec<ReplicaId> {
    (0..n)
        .map(|i| {
            let letter = char::from(b'A' + (i % 26) as u8);
            let name = if i < 26 {
                letter.to_string()
            } else {
                format!("{letter}{}", i / 26)
            };
            ReplicaId::new(name).expect("generated names are valid")
        })
        .collect()
}

fn random_init(kind: FuzzKind, rng: &mut ChaCha8Rng) -> ElementState {
    match kind {
        FuzzKind::RichChar => ElementState::rich_char(char::from(b'a' + rng.gen_range(0..26u8))),
        FuzzKind::Ingredient => ElementState::ingredient(
            *pick(rng, &INGREDIENT_NAMES),
            Rational::integer(rng.gen_range(1..=9)),
            *pick(rng, &UNITS),
        ),
        FuzzKind::Vec2 => ElementState::vec2(
            Rational::integer(rng.gen_range(-3..=3)),
            Rational::integer(rng.gen_range(-3..=3)),
        ),
        FuzzKind::Object => ElementState::object(),
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat2 {
    Mat2::rotation(
        Rational::ratio(rng.gen_range(-2..=2), rng.gen_range(1..=3)),
        Rational::ratio(rng.gen_range(-2..=2), rng.gen_range(1..=3)),
    )
}

/// A pure operation matching the element kind. Vector mutations stay in
/// the rotation form so concurrent products commute.
fn random_pure_op(kind: FuzzKind, rng: &mut ChaCha8Rng) -> crate::element::PureOp {
    match kind {
        FuzzKind::RichChar => {
            let value = if rng.gen_bool(0.7) {
                AttrValue::Bool(rng.gen_bool(0.5))
            } else {
                AttrValue::Int(rng.gen_range(0..9))
            };
            attr_set(*pick(rng, &ATTR_KEYS), value)
        }
        FuzzKind::Ingredient => {
            amount_mult(Rational::ratio(rng.gen_range(1..=4), rng.gen_range(1..=4)))
                .expect("positive factor")
        }
        FuzzKind::Vec2 => vec2_mult(random_rotation(rng)),
        FuzzKind::Object => {
            let instruction = if rng.gen_bool(0.7) {
                Instruction::Apply(vec2_mult(random_rotation(rng)))
            } else {
                Instruction::Del
            };
            nested_foreach(MutationFn::new(
                Predicate::All,
                random_gate(rng),
                instruction,
            ))
        }
    }
}

fn random_gate(rng: &mut ChaCha8Rng) -> PriorGate {
    match rng.gen_range(0..4) {
        0 | 1 => PriorGate::Any,
        2 => PriorGate::PriorOnly,
        _ => PriorGate::ConcurrentOnly,
    }
}

/// A mutation function over the positions currently visible to the
/// generating replica.
fn random_mutation(kind: FuzzKind, rng: &mut ChaCha8Rng, positions: &[Position]) -> MutationFn {
    let predicate = match rng.gen_range(0..4) {
        1 if positions.len() >= 2 => {
            let i = rng.gen_range(0..positions.len() - 1);
            let j = rng.gen_range(i + 1..positions.len());
            Predicate::HalfOpen {
                start: positions[i].clone(),
                end: positions[j].clone(),
            }
        }
        2 if positions.len() >= 2 => {
            let i = rng.gen_range(0..positions.len());
            let j = rng.gen_range(i..positions.len());
            Predicate::Closed {
                start: positions[i].clone(),
                end_prime: positions[j].clone(),
            }
        }
        3 if !positions.is_empty() => Predicate::IdSet(
            positions
                .iter()
                .filter(|_| rng.gen_bool(0.5))
                .cloned()
                .collect(),
        ),
        _ => Predicate::All,
    };
    let instruction = match rng.gen_range(0..10) {
        0..=6 => Instruction::Apply(random_pure_op(kind, rng)),
        7 | 8 => Instruction::Del,
        _ => Instruction::Null,
    };
    MutationFn::new(predicate, random_gate(rng), instruction)
}

fn generate_one(
    net: &mut Network,
    r: usize,
    kind: FuzzKind,
    rng: &mut ChaCha8Rng,
    make_foreach: bool,
    foreaches: &mut usize,
) {
    let len = net.replica(r).list().len();
    if make_foreach {
        let positions: Vec<Position> = net
            .replica(r)
            .list()
            .elements()
            .map(|e| e.pos.clone())
            .collect();
        let f = random_mutation(kind, rng, &positions);
        net.foreach(r, f);
        *foreaches += 1;
        return;
    }
    // Point operation mix; an empty list always inserts.
    let roll = if len == 0 { 0 } else { rng.gen_range(0..10) };
    match roll {
        0..=3 => {
            let index = rng.gen_range(0..=len);
            net.insert(r, index, random_init(kind, rng))
                .expect("insert at sampled index");
        }
        4 | 5 => {
            let index = rng.gen_range(0..len);
            net.delete(r, index).expect("delete at sampled index");
        }
        _ => {
            let index = rng.gen_range(0..len);
            let op = if kind == FuzzKind::Object && rng.gen_bool(0.5) {
                let inner_len = match &net.replica(r).list().nth(index).unwrap().state {
                    ElementState::Object(inner) => inner.len(),
                    _ => 0,
                };
                ElemOp::InnerInsert {
                    index: rng.gen_range(0..=inner_len),
                    init: Box::new(ElementState::vec2(
                        Rational::integer(rng.gen_range(-3..=3)),
                        Rational::integer(rng.gen_range(-3..=3)),
                    )),
                }
            } else {
                ElemOp::Pure(random_pure_op(kind, rng))
            };
            net.apply(r, index, op).expect("apply at sampled index");
        }
    }
}

/// Probes the gate with a cloned replica: an envelope with missing
/// dependencies must be rejected as a gap without any clock movement.
fn gap_probe(net: &Network, rng: &mut ChaCha8Rng) -> Result<bool, FailureReason> {
    let r = rng.gen_range(0..net.len());
    let pending: std::collections::BTreeSet<usize> = net.pending_for(r).into_iter().collect();
    let candidate = net
        .undelivered_for(r)
        .into_iter()
        .find(|l| !pending.contains(l));
    let Some(l) = candidate else {
        return Ok(false);
    };
    let env = &net.log()[l];
    let mut clone = net.replica(r).clone();
    let before: VectorClock = clone.clock().clone();
    match clone.deliver(env) {
        Err(DeliveryError::CausalGap { .. }) => {
            debug_assert_eq!(&before, clone.clock());
            Ok(true)
        }
        _ => Err(FailureReason::GapAccepted {
            replica: net.replica(r).id().clone(),
            dot: env.dot.clone(),
        }),
    }
}

/// Probes exactly-once with a cloned replica: re-delivering anything it
/// already observed must be rejected as a duplicate.
fn duplicate_probe(net: &Network, rng: &mut ChaCha8Rng) -> Result<bool, FailureReason> {
    let r = rng.gen_range(0..net.len());
    let undelivered: std::collections::BTreeSet<usize> =
        net.undelivered_for(r).into_iter().collect();
    let candidate = (0..net.log().len()).find(|l| !undelivered.contains(l));
    let Some(l) = candidate else {
        return Ok(false);
    };
    let env = &net.log()[l];
    let mut clone = net.replica(r).clone();
    match clone.deliver(env) {
        Err(DeliveryError::AlreadyDelivered { .. }) => Ok(true),
        _ => Err(FailureReason::DuplicateAccepted {
            replica: net.replica(r).id().clone(),
            dot: env.dot.clone(),
        }),
    }
}

/// Drives one full fuzz run. `replicas` and `ops` must be at least 1.
pub fn run_fuzz(config: &FuzzConfig) -> Result<FuzzReport, Box<FuzzFailure>> {
    assert!(config.replicas >= 1, "need at least one replica");
    assert!(config.ops >= 1, "need at least one operation");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kind = config
        .kind
        .unwrap_or_else(|| FuzzKind::ALL[rng.gen_range(0..FuzzKind::ALL.len())]);
    let ids = replica_names(config.replicas);
    let mut net = Network::new(&ids);
    if config.inject_skip_buffer_replay {
        net.inject_skip_buffer_replay();
    }

    let fail = |net: &Network, reason: FailureReason| {
        Box::new(FuzzFailure {
            seed: config.seed,
            log: net.log().to_vec(),
            reason,
        })
    };

    let mut generated = 0usize;
    let mut foreaches = 0usize;
    let mut gap_probes = 0usize;
    let mut duplicate_probes = 0usize;
    let mut step = 0usize;
    loop {
        let pending = net.pending();
        let can_generate = generated < config.ops;
        if pending.is_empty() && !can_generate {
            break;
        }
        if step % 16 == 5 {
            match gap_probe(&net, &mut rng) {
                Ok(true) => gap_probes += 1,
                Ok(false) => {}
                Err(reason) => return Err(fail(&net, reason)),
            }
        }
        if step % 16 == 11 {
            match duplicate_probe(&net, &mut rng) {
                Ok(true) => duplicate_probes += 1,
                Ok(false) => {}
                Err(reason) => return Err(fail(&net, reason)),
            }
        }
        let gen_weight = if can_generate { net.len() } else { 0 };
        let choice = rng.gen_range(0..pending.len() + gen_weight);
        if choice < pending.len() {
            let (r, l) = pending[choice];
            net.deliver(r, l).expect("pending pair passes the gate");
        } else {
            let r = choice - pending.len();
            let make_foreach = config.foreach && generated % 4 == 0;
            generate_one(&mut net, r, kind, &mut rng, make_foreach, &mut foreaches);
            generated += 1;
        }
        step += 1;
    }
    assert!(net.quiescent());

    let divergence = net.divergence();

    if config.inject_skip_buffer_replay {
        // The fault only corrupts live replicas; the history itself is
        // honest, so the oracle fold still defines the correct outcome.
        let fault_observed = divergence.is_some() || {
            match net.history() {
                Err(_) => true,
                Ok(h) => {
                    let expected = canonical_json(&h.expected_snapshot());
                    net.replicas()
                        .iter()
                        .any(|r| canonical_json(&r.snapshot()) != expected)
                }
            }
        };
        return Ok(FuzzReport {
            seed: config.seed,
            kind: kind.name(),
            envelopes: net.log().len(),
            foreaches,
            evals_audited: 0,
            gap_probes,
            duplicate_probes,
            schedules_checked: 0,
            final_elements: net.replica(0).list().len(),
            fault_observed,
            log: net.log().to_vec(),
        });
    }

    if let Some((i, j)) = divergence {
        let reason = FailureReason::Diverged {
            a: net.replica(i).id().clone(),
            b: net.replica(j).id().clone(),
        };
        return Err(fail(&net, reason));
    }

    let evals_audited = match net.audit_eval_log() {
        Ok(n) => n,
        Err(e) => return Err(fail(&net, e.into())),
    };

    let oracle_seed = config
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(1);
    let oracle = match net
        .history()
        .map_err(OracleFailure::from)
        .and_then(|h| check_convergence(&h, config.schedules, oracle_seed))
    {
        Ok(convergence) => convergence.oracle,
        Err(failure) => {
            let shrunk = shrink_log(net.log(), config.schedules, oracle_seed);
            return Err(Box::new(FuzzFailure {
                seed: config.seed,
                log: shrunk,
                reason: failure.into(),
            }));
        }
    };

    let expected = canonical_json(&oracle);
    for r in net.replicas() {
        if canonical_json(&r.snapshot()) != expected {
            let reason = FailureReason::LiveMismatch {
                replica: r.id().clone(),
            };
            return Err(fail(&net, reason));
        }
    }

    Ok(FuzzReport {
        seed: config.seed,
        kind: kind.name(),
        envelopes: net.log().len(),
        foreaches,
        evals_audited,
        gap_probes,
        duplicate_probes,
        schedules_checked: config.schedules,
        final_elements: net.replica(0).list().len(),
        fault_observed: false,
        log: net.log().to_vec(),
    })
}

/// True when the log still fails validation or oracle replay on its own.
fn log_still_fails(log: &[Envelope], schedules: usize, seed: u64) -> bool {
    match History::new(log.to_vec()) {
        Err(_) => true,
        Ok(h) => check_convergence(&h, schedules.min(3), seed).is_err(),
    }
}

/// Greedy causal-closed shrink: drop an envelope together with everything
/// that causally follows it, keep the cut when the failure reproduces
/// from the log alone.
fn shrink_log(log: &[Envelope], schedules: usize, seed: u64) -> Vec<Envelope> {
    let mut current: Vec<Envelope> = log.to_vec();
    if !log_still_fails(&current, schedules, seed) {
        // Schedule-dependent failure; keep the full log.
        return current;
    }
    for _pass in 0..3 {
        let mut progressed = false;
        let mut i = current.len();
        while i > 0 {
            i -= 1;
            let cut = current[i].dot.clone();
            let candidate: Vec<Envelope> = current
                .iter()
                .filter(|e| e.vc.get(&cut.sender) < cut.clock)
                .cloned()
                .collect();
            if candidate.len() < current.len() && log_still_fails(&candidate, schedules, seed) {
                current = candidate;
                progressed = true;
                i = current.len();
            }
        }
        if !progressed {
            break;
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_runs_converge_for_every_kind() {
        for kind in FuzzKind::ALL {
            for seed in 0..3 {
                let config = FuzzConfig {
                    seed,
                    replicas: 3,
                    ops: 24,
                    schedules: 3,
                    foreach: true,
                    kind: Some(kind),
                    inject_skip_buffer_replay: false,
                };
                let report = run_fuzz(&config)
                    .unwrap_or_else(|e| panic!("kind {} seed {seed}: {e}", kind.name()));
                assert_eq!(report.foreaches, 6);
                assert_eq!(report.schedules_checked, 3);
            }
        }
    }

    #[test]
    fn point_operations_only_when_foreach_is_disabled() {
        let config = FuzzConfig {
            seed: 5,
            replicas: 4,
            ops: 40,
            schedules: 3,
            foreach: false,
            kind: Some(FuzzKind::RichChar),
            inject_skip_buffer_replay: false,
        };
        let report = run_fuzz(&config).unwrap();
        assert_eq!(report.foreaches, 0);
        assert!(report.envelopes >= 40);
    }

    #[test]
    fn probes_fire_during_longer_runs() {
        let config = FuzzConfig {
            seed: 9,
            replicas: 4,
            ops: 60,
            schedules: 2,
            foreach: true,
            kind: Some(FuzzKind::RichChar),
            inject_skip_buffer_replay: false,
        };
        let report = run_fuzz(&config).unwrap();
        assert!(report.gap_probes > 0);
        assert!(report.duplicate_probes > 0);
        assert!(report.evals_audited > 0);
    }

    #[test]
    fn injected_fault_is_observed_within_a_few_seeds() {
        let mut observed = false;
        for seed in 0..10 {
            let config = FuzzConfig {
                seed,
                replicas: 3,
                ops: 32,
                schedules: 2,
                foreach: true,
                kind: Some(FuzzKind::RichChar),
                inject_skip_buffer_replay: true,
            };
            if run_fuzz(&config).unwrap().fault_observed {
                observed = true;
                break;
            }
        }
        assert!(observed, "no seed under 10 exposed the injected fault");
    }
}
