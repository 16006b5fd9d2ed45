use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SimTime;

/// Identifies the simulated entity an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Central,
    Switch(u32),
    Tile(u32),
    Rover,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Central => write!(f, "central"),
            NodeId::Switch(i) => write!(f, "switch:{i}"),
            NodeId::Tile(i) => write!(f, "tile:{i}"),
            NodeId::Rover => write!(f, "rover"),
        }
    }
}

/// Module-defined action carried by an event.
pub trait Action: fmt::Debug {
    /// Name of the module that owns this action, used for per-module run counts.
    fn module(&self) -> &'static str;

    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

#[derive(Debug, Clone)]
pub struct Event<A> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: A,
}

struct Queued<A>(Event<A>);

impl<A> Queued<A> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.fire_at, self.0.seq)
    }
}

impl<A> PartialEq for Queued<A> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<A> Eq for Queued<A> {}

impl<A> PartialOrd for Queued<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Queued<A> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// One line of the NDJSON event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_ps: u64,
    pub seq: u64,
    pub target: String,
    pub module: String,
    pub action: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub processed: u64,
    pub per_module: BTreeMap<String, u64>,
}

impl RunStats {
    pub fn merge(&mut self, other: &RunStats) {
        self.processed += other.processed;
        for (k, v) in &other.per_module {
            *self.per_module.entry(k.clone()).or_default() += v;
        }
    }
}

/// Receives events popped by [`Engine::run_until`].
pub trait Handler<A> {
    fn handle(&mut self, engine: &mut Engine<A>, event: Event<A>);
}

impl<A, F> Handler<A> for F
where
    F: FnMut(&mut Engine<A>, Event<A>),
{
    fn handle(&mut self, engine: &mut Engine<A>, event: Event<A>) {
        self(engine, event)
    }
}

/// Single-threaded discrete-event engine. Events fire in `(fire_at, seq)` order,
/// where `seq` is the insertion counter, so equal-time events are FIFO.
pub struct Engine<A> {
    now: SimTime,
    next_seq: u64,
    last_fired: Option<SimTime>,
    queue: BinaryHeap<Reverse<Queued<A>>>,
    trace: Option<Vec<TraceRecord>>,
}

impl<A> Default for Engine<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> Engine<A> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            last_fired: None,
            queue: BinaryHeap::new(),
            trace: None,
        }
    }

    pub fn with_trace(mut self, enabled: bool) -> Self {
        self.trace = enabled.then(Vec::new);
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues an action and returns its sequence number.
    ///
    /// Scheduling before `now()` is a simulation bug and panics.
    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, payload: A) -> u64 {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={fire_at} now={}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(Event {
            fire_at,
            seq,
            target,
            payload,
        })));
        seq
    }

    pub fn schedule_in(&mut self, delay: SimTime, target: NodeId, payload: A) -> u64 {
        let at = self.now + delay;
        self.schedule(at, target, payload)
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

impl<A: Action> Engine<A> {
    /// Processes every event with `fire_at <= t_end`, then advances `now` to `t_end`.
    pub fn run_until<H: Handler<A>>(&mut self, t_end: SimTime, handler: &mut H) -> RunStats {
        let mut stats = RunStats::default();
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.0.fire_at > t_end {
                break;
            }
            let Reverse(Queued(event)) = self.queue.pop().expect("peeked");
            if let Some(last) = self.last_fired {
                assert!(event.fire_at >= last, "causality violation");
            }
            self.last_fired = Some(event.fire_at);
            self.now = event.fire_at;
            stats.processed += 1;
            *stats
                .per_module
                .entry(event.payload.module().to_string())
                .or_default() += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceRecord {
                    time_ps: event.fire_at.as_ps(),
                    seq: event.seq,
                    target: event.target.to_string(),
                    module: event.payload.module().to_string(),
                    action: event.payload.describe(),
                });
            }
            handler.handle(self, event);
        }
        if t_end > self.now {
            self.now = t_end;
        }
        stats
    }
}

/// Writes trace records as newline-delimited JSON.
pub fn write_trace_ndjson<W: std::io::Write>(
    records: &[TraceRecord],
    mut out: W,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
