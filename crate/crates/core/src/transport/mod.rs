//! Message-passing contract between ranks.
//!
//! Every rank owns a [`Communicator`] handle. Point-to-point messages are
//! FIFO per (source, destination) pair. Collectives must be issued by all
//! ranks of the world in the same program order; a rank that issues a
//! different collective at the same position aborts the world with
//! [`TransportError::OrderingViolation`].
//!
//! The only backend shipped here is the in-process [`loopback`] world. Any
//! other runtime can plug in by implementing [`Transport`].

pub mod loopback;
mod message;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use loopback::{run, try_run, AbortCause, LoopbackConfig, World};
pub use message::{Element, Message, Wire};

/// Contiguous scalar payload.
pub type Buffer<T> = Vec<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collective {
    Allgather,
    Alltoall,
    Barrier,
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Collective::Allgather => "allgather",
            Collective::Alltoall => "alltoall",
            Collective::Barrier => "barrier",
        })
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("rank {rank} timed out waiting for a message from rank {src}")]
    RecvTimeout { rank: usize, src: usize },
    #[error("rank {rank} timed out in {op}; ranks {missing:?} never arrived")]
    CollectiveTimeout {
        rank: usize,
        op: Collective,
        missing: Vec<usize>,
    },
    #[error("collective ordering violated at call #{seq}: rank {rank} issued {found} while {expected} is in progress")]
    OrderingViolation {
        rank: usize,
        seq: u64,
        expected: Collective,
        found: Collective,
    },
    #[error("invalid peer rank {peer} in a world of size {size}")]
    InvalidRank { peer: usize, size: usize },
    #[error("alltoall needs one part per rank: got {got}, world size {size}")]
    PartCount { got: usize, size: usize },
    #[error("payload mismatch: expected {expected}, found {found}")]
    PayloadMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("world aborted: {reason}")]
    Aborted { reason: String },
}

/// Raw message-passing backend for a single rank.
pub trait Transport: Send + Sync {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn send(&self, dest: usize, msg: Message) -> Result<(), TransportError>;
    fn recv(&self, src: usize) -> Result<Message, TransportError>;
    /// Returns every rank's message, indexed by source rank.
    fn allgather(&self, msg: Message) -> Result<Vec<Message>, TransportError>;
    /// `parts[d]` goes to rank `d`; the result's entry `s` came from rank `s`.
    fn alltoall(&self, parts: Vec<Message>) -> Result<Vec<Message>, TransportError>;
    fn barrier(&self) -> Result<(), TransportError>;
}

/// Per-handle call counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub sends: u64,
    pub recvs: u64,
    pub sendrecvs: u64,
    pub allreduces: u64,
    pub allgathers: u64,
    pub alltoalls: u64,
    pub barriers: u64,
}

#[derive(Default)]
struct Counters {
    sends: AtomicU64,
    recvs: AtomicU64,
    sendrecvs: AtomicU64,
    allreduces: AtomicU64,
    allgathers: AtomicU64,
    alltoalls: AtomicU64,
    barriers: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// A rank's handle into its world.
#[derive(Clone)]
pub struct Communicator {
    transport: Arc<dyn Transport>,
    counters: Arc<Counters>,
}

impl fmt::Debug for Communicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Communicator({}/{})", self.rank(), self.size())
    }
}

impl Communicator {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            counters: Arc::default(),
        }
    }

    /// A size-one loopback world usable on the current thread.
    pub fn solo() -> Self {
        World::new(LoopbackConfig::new(1))
            .communicators()
            .pop()
            .expect("one rank")
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn size(&self) -> usize {
        self.transport.size()
    }

    pub fn stats(&self) -> CommStats {
        let c = &*self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CommStats {
            sends: get(&c.sends),
            recvs: get(&c.recvs),
            sendrecvs: get(&c.sendrecvs),
            allreduces: get(&c.allreduces),
            allgathers: get(&c.allgathers),
            alltoalls: get(&c.alltoalls),
            barriers: get(&c.barriers),
        }
    }

    fn check_peer(&self, peer: usize) -> Result<(), TransportError> {
        if peer >= self.size() {
            return Err(TransportError::InvalidRank {
                peer,
                size: self.size(),
            });
        }
        Ok(())
    }

    pub fn send<W: Wire>(&self, dest: usize, value: W) -> Result<(), TransportError> {
        self.check_peer(dest)?;
        bump(&self.counters.sends);
        self.transport.send(dest, value.into_message())
    }

    pub fn recv<W: Wire>(&self, src: usize) -> Result<W, TransportError> {
        self.check_peer(src)?;
        bump(&self.counters.recvs);
        W::from_message(self.transport.recv(src)?)
    }

    /// Sends `value` to `dest` and receives from `src` as one exchange; cyclic
    /// patterns such as ring shifts cannot deadlock.
    pub fn sendrecv<W: Wire>(&self, dest: usize, value: W, src: usize) -> Result<W, TransportError> {
        self.check_peer(dest)?;
        self.check_peer(src)?;
        bump(&self.counters.sendrecvs);
        self.transport.send(dest, value.into_message())?;
        W::from_message(self.transport.recv(src)?)
    }

    /// Gathers every rank's buffer on every rank, indexed by source rank.
    /// Lengths may differ between ranks.
    pub fn allgather_varying<W: Wire>(&self, local: W) -> Result<Vec<W>, TransportError> {
        bump(&self.counters.allgathers);
        self.transport
            .allgather(local.into_message())?
            .into_iter()
            .map(W::from_message)
            .collect()
    }

    /// `parts[d]` is sent to rank `d`; entry `s` of the result is what rank
    /// `s` addressed to this rank.
    pub fn alltoall_varying<W: Wire>(&self, parts: Vec<W>) -> Result<Vec<W>, TransportError> {
        if parts.len() != self.size() {
            return Err(TransportError::PartCount {
                got: parts.len(),
                size: self.size(),
            });
        }
        bump(&self.counters.alltoalls);
        self.transport
            .alltoall(parts.into_iter().map(Wire::into_message).collect())?
            .into_iter()
            .map(W::from_message)
            .collect()
    }

    pub fn barrier(&self) -> Result<(), TransportError> {
        bump(&self.counters.barriers);
        self.transport.barrier()
    }

    /// Reduces one value per rank with `combine`, folding from `identity` in
    /// rank order 0..size. Every rank evaluates the same fold, so the result
    /// is bitwise identical everywhere.
    pub fn allreduce<W, F>(&self, local: W, identity: W, combine: F) -> Result<W, TransportError>
    where
        W: Wire,
        F: Fn(W, W) -> W,
    {
        self.allreduce_with(local, identity, |a, b| Ok::<_, TransportError>(combine(a, b)))
    }

    /// [`allreduce`](Self::allreduce) with a fallible combiner.
    pub fn allreduce_with<W, E, F>(&self, local: W, identity: W, combine: F) -> Result<W, E>
    where
        W: Wire,
        E: From<TransportError>,
        F: Fn(W, W) -> Result<W, E>,
    {
        bump(&self.counters.allreduces);
        let gathered = self.transport.allgather(local.into_message())?;
        let mut acc = identity;
        for msg in gathered {
            acc = combine(acc, W::from_message(msg)?)?;
        }
        Ok(acc)
    }

    pub fn allreduce_sum(&self, local: f64) -> Result<f64, TransportError> {
        self.allreduce(local, 0.0, |a, b| a + b)
    }

    /// Elementwise sum of equal-length vectors.
    pub fn allreduce_sum_vec(&self, local: Vec<f64>) -> Result<Vec<f64>, TransportError> {
        let n = local.len();
        self.allreduce(local, vec![0.0; n], |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            a
        })
    }

    /// Logical OR across ranks.
    pub fn allreduce_any(&self, flag: bool) -> Result<bool, TransportError> {
        self.allreduce(u64::from(flag), 0, |a, b| a | b).map(|v| v != 0)
    }
}
