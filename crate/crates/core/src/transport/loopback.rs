//! In-process transport: one worker thread per rank, all sharing a [`World`].
//!
//! Point-to-point messages go through unbounded per-pair FIFO mailboxes, so a
//! send never blocks. Collectives rendezvous in a table keyed by the per-rank
//! collective sequence number; every rank must issue the same collective at
//! the same sequence number or the world is aborted.

use std::collections::{HashMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{Collective, Communicator, Message, Transport, TransportError};

/// Default deadlock timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Loopback world configuration.
#[derive(Clone, Debug)]
pub struct LoopbackConfig {
    pub size: usize,
    pub timeout: Duration,
}

impl Default for LoopbackConfig {
    fn default() -> Self {
        Self {
            size: 1,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

impl LoopbackConfig {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            ..Self::default()
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Reads `DND_RANKS` and `DND_TIMEOUT_SECS`, falling back to defaults for
    /// unset or unparsable values.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Some(n) = env_parse::<usize>("DND_RANKS").filter(|&n| n > 0) {
            cfg.size = n;
        }
        if let Some(secs) = env_parse::<f64>("DND_TIMEOUT_SECS").filter(|s| *s > 0.0) {
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        cfg
    }
}

fn env_parse<T: std::str::FromStr>(key: &str) -> Option<T> {
    std::env::var(key).ok()?.trim().parse().ok()
}

enum Deposit {
    One(Message),
    Parts(Vec<Option<Message>>),
}

struct Slot {
    kind: Collective,
    deposits: Vec<Option<Deposit>>,
    deposited: usize,
    collected: usize,
}

#[derive(Default)]
struct State {
    mailboxes: HashMap<(usize, usize), VecDeque<Message>>,
    slots: HashMap<u64, Slot>,
    aborted: Option<String>,
}

/// Shared rendezvous state of a loopback world.
pub struct World {
    size: usize,
    timeout: Duration,
    state: Mutex<State>,
    cv: Condvar,
}

impl World {
    pub fn new(config: LoopbackConfig) -> Arc<Self> {
        assert!(config.size > 0, "world size must be positive");
        Arc::new(Self {
            size: config.size,
            timeout: config.timeout,
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// One communicator handle per rank, in rank order.
    pub fn communicators(self: &Arc<Self>) -> Vec<Communicator> {
        (0..self.size)
            .map(|rank| {
                Communicator::new(Arc::new(LoopbackTransport {
                    rank,
                    world: Arc::clone(self),
                    next_seq: AtomicU64::new(0),
                }))
            })
            .collect()
    }

    /// Marks the world as failed and wakes every waiting rank.
    pub fn abort(&self, reason: impl Into<String>) {
        let mut st = self.lock();
        if st.aborted.is_none() {
            st.aborted = Some(reason.into());
        }
        drop(st);
        self.cv.notify_all();
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks until `ready` holds, the world aborts, or the deadline passes.
    fn wait_until<'a>(
        &'a self,
        mut st: MutexGuard<'a, State>,
        deadline: Instant,
        mut ready: impl FnMut(&mut State) -> bool,
        on_timeout: impl FnOnce(&State) -> TransportError,
    ) -> Result<MutexGuard<'a, State>, TransportError> {
        loop {
            if ready(&mut st) {
                return Ok(st);
            }
            if let Some(reason) = &st.aborted {
                return Err(TransportError::Aborted {
                    reason: reason.clone(),
                });
            }
            let now = Instant::now();
            if now >= deadline {
                let err = on_timeout(&st);
                st.aborted.get_or_insert_with(|| err.to_string());
                drop(st);
                self.cv.notify_all();
                return Err(err);
            }
            st = self
                .cv
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

/// A single rank's view of a loopback [`World`].
pub struct LoopbackTransport {
    rank: usize,
    world: Arc<World>,
    next_seq: AtomicU64,
}

impl LoopbackTransport {
    fn collective(&self, kind: Collective, deposit: Deposit) -> Result<Vec<Message>, TransportError> {
        let world = &*self.world;
        let size = world.size;
        let rank = self.rank;
        let seq = self.next_seq.fetch_add(1, Ordering::Relaxed);
        let deadline = Instant::now() + world.timeout;

        let mut st = world.lock();
        if let Some(reason) = &st.aborted {
            return Err(TransportError::Aborted {
                reason: reason.clone(),
            });
        }
        let slot = st.slots.entry(seq).or_insert_with(|| Slot {
            kind,
            deposits: (0..size).map(|_| None).collect(),
            deposited: 0,
            collected: 0,
        });
        if slot.kind != kind {
            let err = TransportError::OrderingViolation {
                rank,
                seq,
                expected: slot.kind,
                found: kind,
            };
            st.aborted = Some(err.to_string());
            drop(st);
            world.cv.notify_all();
            return Err(err);
        }
        slot.deposits[rank] = Some(deposit);
        slot.deposited += 1;
        if slot.deposited == size {
            world.cv.notify_all();
        }

        let mut st = world.wait_until(
            st,
            deadline,
            |st| st.slots.get(&seq).is_some_and(|s| s.deposited == size),
            |st| {
                let missing = st
                    .slots
                    .get(&seq)
                    .map(|s| {
                        s.deposits
                            .iter()
                            .enumerate()
                            .filter(|(_, d)| d.is_none())
                            .map(|(r, _)| r)
                            .collect()
                    })
                    .unwrap_or_default();
                TransportError::CollectiveTimeout {
                    rank,
                    op: kind,
                    missing,
                }
            },
        )?;

        let slot = st.slots.get_mut(&seq).expect("slot present until collected");
        let out = match kind {
            Collective::Barrier => Vec::new(),
            Collective::Allgather => slot
                .deposits
                .iter()
                .map(|d| match d {
                    Some(Deposit::One(m)) => m.clone(),
                    _ => unreachable!("allgather slot holds single deposits"),
                })
                .collect(),
            Collective::Alltoall => slot
                .deposits
                .iter_mut()
                .map(|d| match d {
                    Some(Deposit::Parts(parts)) => parts[rank].take().expect("part collected once"),
                    _ => unreachable!("alltoall slot holds part deposits"),
                })
                .collect(),
        };
        slot.collected += 1;
        if slot.collected == size {
            st.slots.remove(&seq);
        }
        Ok(out)
    }
}

impl Transport for LoopbackTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.world.size
    }

    fn send(&self, dest: usize, msg: Message) -> Result<(), TransportError> {
        let mut st = self.world.lock();
        if let Some(reason) = &st.aborted {
            return Err(TransportError::Aborted {
                reason: reason.clone(),
            });
        }
        st.mailboxes
            .entry((self.rank, dest))
            .or_default()
            .push_back(msg);
        drop(st);
        self.world.cv.notify_all();
        Ok(())
    }

    fn recv(&self, src: usize) -> Result<Message, TransportError> {
        let key = (src, self.rank);
        let deadline = Instant::now() + self.world.timeout;
        let st = self.world.lock();
        let mut st = self.world.wait_until(
            st,
            deadline,
            |st| st.mailboxes.get(&key).is_some_and(|q| !q.is_empty()),
            |_| TransportError::RecvTimeout {
                rank: self.rank,
                src,
            },
        )?;
        Ok(st
            .mailboxes
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .expect("mailbox checked non-empty"))
    }

    fn allgather(&self, msg: Message) -> Result<Vec<Message>, TransportError> {
        self.collective(Collective::Allgather, Deposit::One(msg))
    }

    fn alltoall(&self, parts: Vec<Message>) -> Result<Vec<Message>, TransportError> {
        self.collective(
            Collective::Alltoall,
            Deposit::Parts(parts.into_iter().map(Some).collect()),
        )
    }

    fn barrier(&self) -> Result<(), TransportError> {
        self.collective(Collective::Barrier, Deposit::One(Message::U64(Vec::new())))
            .map(drop)
    }
}

/// Runs `f` once per rank on its own thread and returns the per-rank results
/// in rank order.
///
/// A panic on any rank aborts the world (so the others stop waiting) and is
/// re-raised here after all workers have finished.
pub fn run<F, R>(config: LoopbackConfig, f: F) -> Vec<R>
where
    F: Fn(Communicator) -> R + Sync,
    R: Send,
{
    let world = World::new(config);
    let comms = world.communicators();
    let f = &f;
    let world_ref = &world;
    let outcomes: Vec<std::thread::Result<R>> = std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                scope.spawn(move || {
                    let rank = comm.rank();
                    let out = panic::catch_unwind(AssertUnwindSafe(|| f(comm)));
                    if out.is_err() {
                        world_ref.abort(format!("rank {rank} panicked"));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(Err))
            .collect()
    });
    let mut results = Vec::with_capacity(outcomes.len());
    for out in outcomes {
        match out {
            Ok(r) => results.push(r),
            Err(payload) => panic::resume_unwind(payload),
        }
    }
    results
}

/// Like [`run`], for fallible rank programs. The first rank to fail aborts the
/// world; the error reported is the lowest-ranked error that is not merely a
/// consequence of that abort.
pub fn try_run<F, R, E>(config: LoopbackConfig, f: F) -> Result<Vec<R>, E>
where
    F: Fn(Communicator) -> Result<R, E> + Sync,
    R: Send,
    E: Send + AbortCause,
{
    let world = World::new(config);
    let comms = world.communicators();
    let f = &f;
    let world_ref = &world;
    let outcomes: Vec<Result<R, E>> = std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                scope.spawn(move || {
                    let rank = comm.rank();
                    let out = panic::catch_unwind(AssertUnwindSafe(|| f(comm)));
                    match &out {
                        Ok(Err(_)) => world_ref.abort(format!("rank {rank} failed")),
                        Err(_) => world_ref.abort(format!("rank {rank} panicked")),
                        Ok(Ok(_)) => {}
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join().unwrap_or_else(Err) {
                Ok(r) => r,
                Err(payload) => panic::resume_unwind(payload),
            })
            .collect()
    });

    let mut results = Vec::with_capacity(outcomes.len());
    let mut first_err: Option<E> = None;
    for out in outcomes {
        match out {
            Ok(r) => results.push(r),
            Err(e) => {
                let replace = match &first_err {
                    None => true,
                    Some(prev) => prev.is_abort_echo() && !e.is_abort_echo(),
                };
                if replace {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(results),
    }
}

/// Distinguishes root-cause errors from errors that only report that another
/// rank already aborted the world.
pub trait AbortCause {
    fn is_abort_echo(&self) -> bool;
}

impl AbortCause for TransportError {
    fn is_abort_echo(&self) -> bool {
        matches!(self, TransportError::Aborted { .. })
    }
}
