//! Deterministic in-memory broadcast network for multi-replica runs.
//!
//! The network holds every broadcast envelope and tracks, per replica,
//! which dots have been observed and in what order. Those traces are the
//! simulation's ground truth for causality: `a` happened before `b` iff
//! `a` was observed by `b`'s sender before `b` was generated, an
//! operational fact independent of the vector clocks the replicas
//! maintain. Audits check the replicas against the traces: deliveries
//! must pass the causal gate exactly once, and every prior flag handed to
//! a mutation function must equal the trace-derived causal relation
//! between the element's insertion and the for-each.

use std::collections::BTreeSet;

use crate::causal::{deliverable, Dot, Envelope, ReplicaId};
use crate::foreach::MutationFn;
use crate::list::{DeliveryError, ElemOp, ElementState, EvalRecord, GenError, Replica};
use crate::oracle::{History, HistoryError};

/// A set of replicas wired to one reliable broadcast log.
#[derive(Debug, Clone)]
pub struct Network {
    replicas: Vec<Replica>,
    log: Vec<Envelope>,
    delivered: Vec<BTreeSet<Dot>>,
    traces: Vec<Vec<Dot>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error(
        "replica {replica}: mutation over element {element} of for-each {foreach} \
         received prior={got} but the delivery traces say {expected}"
    )]
    PriorFlagMismatch {
        replica: ReplicaId,
        foreach: Dot,
        element: Dot,
        got: bool,
        expected: bool,
    },
}

impl Network {
    pub fn new(ids: &[ReplicaId]) -> Network {
        Network {
            replicas: ids.iter().cloned().map(Replica::new).collect(),
            log: Vec::new(),
            delivered: vec![BTreeSet::new(); ids.len()],
            traces: vec![Vec::new(); ids.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn replica(&self, i: usize) -> &Replica {
        &self.replicas[i]
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn index_of(&self, id: &ReplicaId) -> Option<usize> {
        self.replicas.iter().position(|r| r.id() == id)
    }

    pub fn log(&self) -> &[Envelope] {
        &self.log
    }

    /// Enables the buffer-replay fault on every replica.
    pub fn inject_skip_buffer_replay(&mut self) {
        for r in &mut self.replicas {
            r.skip_buffer_replay_fault = true;
        }
    }

    fn record_broadcast(&mut self, i: usize, env: Envelope) -> Dot {
        let dot = env.dot.clone();
        self.delivered[i].insert(dot.clone());
        self.traces[i].push(dot.clone());
        self.log.push(env);
        dot
    }

    pub fn insert(&mut self, i: usize, index: usize, init: ElementState) -> Result<Dot, GenError> {
        let env = self.replicas[i].insert_gen(index, init)?;
        Ok(self.record_broadcast(i, env))
    }

    pub fn delete(&mut self, i: usize, index: usize) -> Result<Dot, GenError> {
        let env = self.replicas[i].delete_gen(index)?;
        Ok(self.record_broadcast(i, env))
    }

    pub fn apply(&mut self, i: usize, index: usize, op: ElemOp) -> Result<Dot, GenError> {
        let env = self.replicas[i].apply_gen(index, op)?;
        Ok(self.record_broadcast(i, env))
    }

    pub fn foreach(&mut self, i: usize, f: MutationFn) -> Dot {
        let env = self.replicas[i].foreach_gen(f);
        self.record_broadcast(i, env)
    }

    pub fn foreach_prior(&mut self, i: usize, f: &MutationFn) -> Vec<Dot> {
        let envs = self.replicas[i].foreach_prior_gen(f);
        envs.into_iter()
            .map(|env| self.record_broadcast(i, env))
            .collect()
    }

    /// Envelopes replica `r` has not yet received, by log index.
    pub fn undelivered_for(&self, r: usize) -> Vec<usize> {
        (0..self.log.len())
            .filter(|&l| !self.delivered[r].contains(&self.log[l].dot))
            .collect()
    }

    /// Undelivered envelopes that pass the causal gate at replica `r`.
    pub fn pending_for(&self, r: usize) -> Vec<usize> {
        self.undelivered_for(r)
            .into_iter()
            .filter(|&l| deliverable(&self.log[l], self.replicas[r].clock()))
            .collect()
    }

    /// All deliverable (replica, log index) pairs.
    pub fn pending(&self) -> Vec<(usize, usize)> {
        (0..self.replicas.len())
            .flat_map(|r| self.pending_for(r).into_iter().map(move |l| (r, l)))
            .collect()
    }

    /// Hands one logged envelope to one replica. Exactly-once at the
    /// network layer is an invariant, not an error path.
    pub fn deliver(&mut self, r: usize, log_idx: usize) -> Result<(), DeliveryError> {
        let env = &self.log[log_idx];
        assert!(
            !self.delivered[r].contains(&env.dot),
            "network delivered {} twice to {}",
            env.dot,
            self.replicas[r].id()
        );
        self.replicas[r].deliver(env)?;
        self.delivered[r].insert(env.dot.clone());
        self.traces[r].push(env.dot.clone());
        Ok(())
    }

    /// Delivers every pending envelope in deterministic order until
    /// quiescence.
    pub fn drain(&mut self) {
        loop {
            let Some(&(r, l)) = self.pending().first() else {
                break;
            };
            self.deliver(r, l).expect("pending pair passes the gate");
        }
        assert!(self.quiescent(), "drain left undelivered envelopes");
    }

    pub fn quiescent(&self) -> bool {
        self.delivered.iter().all(|d| d.len() == self.log.len())
    }

    /// First pair of replicas whose canonicalized lists differ, if any.
    pub fn divergence(&self) -> Option<(usize, usize)> {
        for i in 0..self.replicas.len() {
            for j in (i + 1)..self.replicas.len() {
                if self.replicas[i].list().canonicalized()
                    != self.replicas[j].list().canonicalized()
                {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn history(&self) -> Result<History, HistoryError> {
        History::new(self.log.clone())
    }

    /// Ground-truth causality from the traces: `a` was observed by `b`'s
    /// sender before `b` was generated. Both dots must be in the log.
    pub fn trace_happens_before(&self, a: &Dot, b: &Dot) -> bool {
        if a == b {
            return false;
        }
        let Some(sender) = self.index_of(&b.sender) else {
            return false;
        };
        let trace = &self.traces[sender];
        let Some(b_at) = trace.iter().position(|d| d == b) else {
            return false;
        };
        trace[..b_at].iter().any(|d| d == a)
    }

    /// Checks every recorded mutation evaluation against the traces.
    pub fn audit_eval_log(&self) -> Result<usize, AuditError> {
        let mut checked = 0;
        for r in &self.replicas {
            for rec in r.eval_log() {
                let EvalRecord {
                    foreach,
                    element,
                    prior,
                } = rec;
                let expected = self.trace_happens_before(element, foreach);
                if *prior != expected {
                    return Err(AuditError::PriorFlagMismatch {
                        replica: r.id().clone(),
                        foreach: foreach.clone(),
                        element: element.clone(),
                        got: *prior,
                        expected,
                    });
                }
                checked += 1;
            }
        }
        Ok(checked)
    }
}
