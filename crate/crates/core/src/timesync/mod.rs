//! Clock synchronization: oscillator model, two-step PTP arithmetic, PI servo
//! and an event-driven network domain.

pub mod clock;
pub mod domain;
pub mod protocol;
pub mod report;
pub mod servo;

pub use clock::{ClockParams, LocalClock};
pub use domain::{run_sync_domain, SyncConfig, SyncInputs};
pub use protocol::{
    transparent_correct, two_step_offset, Corrections, ExchangeTimestamps, MessageKind,
    OffsetEstimate, PtpMessage,
};
pub use report::{nearest_rank, ExchangeRecord, ResidualSample, SyncReport, SyncSummary};
pub use servo::{ServoConfig, ServoState};
