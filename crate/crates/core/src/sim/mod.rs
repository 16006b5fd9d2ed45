//! Discrete-event backbone: integer picosecond time, the event queue and the
//! seeded random streams shared by every other module.

mod engine;
mod rng;
mod time;

pub use engine::{
    write_trace_ndjson, Action, Engine, Event, Handler, NodeId, RunStats, TraceRecord,
};
pub use rng::RngStream;
pub use time::{SimTime, PS_PER_MS, PS_PER_NS, PS_PER_S, PS_PER_US};
