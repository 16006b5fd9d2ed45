//! Deterministic discrete-event simulator of a distributed tile testbed: PTP
//! clock synchronization over simulated Ethernet, PoE power budgeting, a
//! topic-based pub/sub data plane, coherent distributed transmission, and an
//! autonomous sampling rover.

pub mod coherent;
pub mod dataplane;
pub mod fabric;
pub mod hash;
pub mod power;
pub mod rover;
pub mod scenario;
pub mod sim;
pub mod timesync;

pub use sim::{NodeId, SimTime};
