//! Deterministic discrete-event engine.
//!
//! Time is an integer count of nanoseconds. Events with the same timestamp
//! dispatch in the order they were scheduled. The engine owns no model state;
//! callers drive it either through [`Simulation::run_to_completion`] with a
//! handler closure or by popping events one at a time.

use alloc::collections::{BTreeSet, BinaryHeap};
use core::cmp::{Ordering, Reverse};
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Nanoseconds since simulation start.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Default horizon, the largest value representable as a signed 64-bit count.
    pub const MAX_HORIZON: SimTime = SimTime(i64::MAX as u64);

    pub fn ns(self) -> u64 {
        self.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`Simulation::schedule`]; usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn id(&self) -> EventId {
        EventId(self.seq)
    }
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl<P> Queued<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.fire_at, self.0.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("event at {now} + {delay}ns exceeds the simulation horizon {horizon}")]
    HorizonOverflow {
        now: SimTime,
        delay: u64,
        horizon: SimTime,
    },
}

/// Error raised by a dispatch handler, annotated with where it happened.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("model error at {time} while dispatching {payload_kind}: {source}")]
pub struct DispatchError<E> {
    pub time: SimTime,
    pub payload_kind: &'static str,
    pub source: E,
}

/// Short label for an event payload, used in error context.
pub trait PayloadKind {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimStats {
    pub events_dispatched: u64,
    pub final_time: SimTime,
}

pub struct Simulation<P> {
    now: SimTime,
    horizon: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    cancelled: BTreeSet<u64>,
    dispatched: u64,
}

impl<P> Default for Simulation<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Simulation<P> {
    pub fn new() -> Self {
        Self::with_horizon(SimTime::MAX_HORIZON)
    }

    pub fn with_horizon(horizon: SimTime) -> Self {
        Self {
            now: SimTime::ZERO,
            horizon,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            events_dispatched: self.dispatched,
            final_time: self.now,
        }
    }

    /// Enqueue `payload` to fire `delay` nanoseconds from now.
    pub fn schedule(&mut self, delay: u64, payload: P) -> Result<EventId, SimError> {
        let fire_at = self
            .now
            .0
            .checked_add(delay)
            .filter(|t| *t <= self.horizon.0)
            .ok_or(SimError::HorizonOverflow {
                now: self.now,
                delay,
                horizon: self.horizon,
            })?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(Event {
            fire_at: SimTime(fire_at),
            seq,
            payload,
        })));
        Ok(EventId(seq))
    }

    /// Cancel a pending event. Returns false if it already fired, was already
    /// cancelled, or never existed.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq {
            return false;
        }
        if !self.queue.iter().any(|q| q.0 .0.seq == id.0) {
            return false;
        }
        self.cancelled.insert(id.0)
    }

    /// Pop the next live event and advance the clock to it.
    pub fn next_event(&mut self) -> Option<Event<P>> {
        while let Some(Reverse(Queued(ev))) = self.queue.pop() {
            if !self.cancelled.is_empty() && self.cancelled.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some(ev);
        }
        None
    }

    /// Dispatch every event in `(fire_at, seq)` order. The handler may schedule
    /// further events. The first handler error aborts the run.
    pub fn run_to_completion<E, F>(&mut self, mut handler: F) -> Result<SimStats, DispatchError<E>>
    where
        P: PayloadKind,
        F: FnMut(&mut Self, Event<P>) -> Result<(), E>,
    {
        while let Some(ev) = self.next_event() {
            let time = ev.fire_at;
            let payload_kind = ev.payload.kind();
            handler(self, ev).map_err(|source| DispatchError {
                time,
                payload_kind,
                source,
            })?;
        }
        Ok(self.stats())
    }
}

/// Seeded generator with labelled sub-streams.
///
/// Forking by label gives each consumer its own ChaCha stream, so a change in
/// how many draws one consumer makes never shifts another consumer's values.
#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, label: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(label_hash(label));
        rng
    }
}

// FNV-1a, 64-bit.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
