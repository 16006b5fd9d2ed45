use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Sync,
    FollowUp,
    DelayReq,
    DelayResp,
}

/// A PTP event or general message. Timestamps and the correction field are
/// signed picoseconds of the sender's clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtpMessage {
    pub kind: MessageKind,
    pub seq: u32,
    /// FollowUp: precise Sync egress time t1. DelayResp: DelayReq receipt time t4.
    pub origin_timestamp: i64,
    pub correction_ps: i64,
}

impl PtpMessage {
    pub fn new(kind: MessageKind, seq: u32, origin_timestamp: i64) -> Self {
        PtpMessage {
            kind,
            seq,
            origin_timestamp,
            correction_ps: 0,
        }
    }
}

/// Adds a transparent clock's measured residence time to the correction field.
pub fn transparent_correct(message: PtpMessage, residence_ps: i64) -> PtpMessage {
    PtpMessage {
        correction_ps: message.correction_ps + residence_ps,
        ..message
    }
}

/// The four timestamps of one two-step exchange: t1 Sync egress (master clock),
/// t2 Sync ingress (slave), t3 DelayReq egress (slave), t4 DelayReq ingress (master).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeTimestamps {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
}

/// Accumulated transparent-clock corrections for each leg of the exchange.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corrections {
    pub sync_ps: i64,
    pub delay_req_ps: i64,
}

impl Corrections {
    /// Splits a total correction evenly between the two legs (sync gets the odd picosecond).
    pub fn symmetric(total_ps: i64) -> Self {
        let half = total_ps / 2;
        Corrections {
            sync_ps: total_ps - half,
            delay_req_ps: half,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Slave minus master.
    pub offset_ps: i64,
    pub mean_path_delay_ps: i64,
    /// Computed delay was negative: a symptom of path asymmetry or bad corrections.
    pub negative_delay: bool,
}

/// Offset and mean path delay from a two-step exchange.
///
/// offset = ((t2 - t1 - cs) - (t4 - t3 - cd)) / 2
/// delay  = ((t2 - t1 - cs) + (t4 - t3 - cd)) / 2
///
/// Both divisions truncate toward zero.
pub fn two_step_offset(ts: ExchangeTimestamps, corr: Corrections) -> OffsetEstimate {
    let ms = ts.t2 as i128 - ts.t1 as i128 - corr.sync_ps as i128;
    let sm = ts.t4 as i128 - ts.t3 as i128 - corr.delay_req_ps as i128;
    let offset = ((ms - sm) / 2) as i64;
    let delay = ((ms + sm) / 2) as i64;
    OffsetEstimate {
        offset_ps: offset,
        mean_path_delay_ps: delay,
        negative_delay: delay < 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(t1: i64, t2: i64, t3: i64, t4: i64) -> ExchangeTimestamps {
        ExchangeTimestamps { t1, t2, t3, t4 }
    }

    #[test]
    fn symmetric_exchange_zero_offset() {
        let e = two_step_offset(ts(0, 10, 20, 30), Corrections::default());
        assert_eq!((e.offset_ps, e.mean_path_delay_ps), (0, 10));
    }

    #[test]
    fn slave_ahead_by_five() {
        let e = two_step_offset(ts(0, 15, 20, 25), Corrections::default());
        assert_eq!((e.offset_ps, e.mean_path_delay_ps), (5, 10));
    }

    #[test]
    fn symmetric_correction_reduces_delay_only() {
        let e = two_step_offset(ts(0, 10, 20, 30), Corrections::symmetric(4));
        assert_eq!((e.offset_ps, e.mean_path_delay_ps), (0, 8));
    }

    #[test]
    fn rounding_truncates_toward_zero() {
        // ms = 3, sm = 0 -> offset 1.5 -> 1, delay 1.5 -> 1
        let e = two_step_offset(ts(0, 3, 10, 10), Corrections::default());
        assert_eq!((e.offset_ps, e.mean_path_delay_ps), (1, 1));
        // ms = -3, sm = 0 -> offset -1.5 -> -1
        let e = two_step_offset(ts(0, -3, 10, 10), Corrections::default());
        assert_eq!((e.offset_ps, e.mean_path_delay_ps), (-1, -1));
        assert!(e.negative_delay);
    }

    #[test]
    fn transparent_correction_accumulates() {
        let m = PtpMessage::new(MessageKind::FollowUp, 3, 1000);
        assert_eq!(transparent_correct(m, 0), m);
        let m2 = transparent_correct(transparent_correct(m, 7), 5);
        assert_eq!(m2.correction_ps, 12);
        assert_eq!(m2.origin_timestamp, 1000);
    }

    #[test]
    fn residence_removed_by_correction() {
        // 2 us residence on the Sync path only, corrected by the TC.
        let plain = two_step_offset(ts(0, 1_000, 5_000, 6_000), Corrections::default());
        let resident = two_step_offset(
            ts(0, 1_000 + 2_000_000, 5_000 + 2_000_000, 6_000 + 2_000_000),
            Corrections {
                sync_ps: 2_000_000,
                delay_req_ps: 0,
            },
        );
        assert_eq!(plain, resident);
    }

    #[test]
    fn drifting_switch_clock_correction_error() {
        // Residence of 1 us measured by a +100 ppm switch clock reads 1.0001 us.
        use super::super::clock::{ClockParams, LocalClock};
        use crate::sim::SimTime;
        let mut sw = LocalClock::new(
            ClockParams {
                freq_error_ppm: 100.0,
                ..ClockParams::default()
            },
            None,
        );
        let ingress = SimTime::from_ms(3);
        let egress = ingress + SimTime::from_us(1);
        let t_in = sw.read(ingress);
        let measured = sw.read(egress) - t_in;
        assert_eq!(measured - 1_000_000, 100);
    }
}
