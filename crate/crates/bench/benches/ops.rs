//! Hot-path benchmarks: position minting, list operations, the buffered
//! replay on insertion, and the oracle fold.

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use forelist_core::{
    attr_set, between, run_fuzz, AttrValue, ElementState, FuzzConfig, History, Instruction,
    MutationFn, Position, PositionBound, Predicate, PriorGate, Replica, ReplicaId,
};

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

/// Head insertions force the deepest path growth the scheme produces.
fn position_minting(c: &mut Criterion) {
    c.bench_function("position/head_insertions_1000", |b| {
        b.iter(|| {
            let author = rid("A");
            let mut head: Option<Position> = None;
            for counter in 0..1000u64 {
                let right = match &head {
                    None => PositionBound::PosInfinity,
                    Some(p) => PositionBound::At(p.clone()),
                };
                let p =
                    between(&PositionBound::NegInfinity, &right, author.clone(), counter).unwrap();
                head = Some(p);
            }
            black_box(head)
        })
    });
}

fn list_appends(c: &mut Criterion) {
    c.bench_function("list/append_1000_chars", |b| {
        b.iter(|| {
            let mut r = Replica::new(rid("A"));
            for i in 0..1000 {
                r.insert_gen(i, ElementState::rich_char('a')).unwrap();
            }
            black_box(r.list().len())
        })
    });
}

fn foreach_over_list(c: &mut Criterion) {
    let mut seed = Replica::new(rid("A"));
    for i in 0..1000 {
        seed.insert_gen(i, ElementState::rich_char('a')).unwrap();
    }
    c.bench_function("list/foreach_over_1000_chars", |b| {
        b.iter_batched(
            || seed.clone(),
            |mut r| {
                r.foreach_gen(bold_all());
                black_box(r.list().len())
            },
            BatchSize::SmallInput,
        )
    });
}

/// Delivering an insertion that has to replay a deep buffer of
/// concurrent for-eaches.
fn buffered_replay_on_insert(c: &mut Criterion) {
    let mut sender = Replica::new(rid("B"));
    let foreaches: Vec<_> = (0..200).map(|_| sender.foreach_gen(bold_all())).collect();
    let mut receiver = Replica::new(rid("A"));
    for env in &foreaches {
        receiver.deliver(env).unwrap();
    }
    let mut concurrent = Replica::new(rid("C"));
    let insert = concurrent
        .insert_gen(0, ElementState::rich_char('x'))
        .unwrap();
    c.bench_function("list/insert_replaying_200_buffered_foreaches", |b| {
        b.iter_batched(
            || receiver.clone(),
            |mut r| {
                r.deliver(&insert).unwrap();
                black_box(r.list().len())
            },
            BatchSize::SmallInput,
        )
    });
}

fn oracle_fold(c: &mut Criterion) {
    let report = run_fuzz(&FuzzConfig {
        seed: 1,
        replicas: 4,
        ops: 200,
        schedules: 1,
        foreach: true,
        kind: None,
        inject_skip_buffer_replay: false,
    })
    .unwrap();
    c.bench_function("oracle/fold_200_envelope_history", |b| {
        b.iter_batched(
            || report.log.clone(),
            |log| {
                let history = History::new(log).unwrap();
                black_box(history.expected_snapshot())
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    position_minting,
    list_appends,
    foreach_over_list,
    buffered_replay_on_insert,
    oracle_fold
);
criterion_main!(benches);
