use serde::{Deserialize, Serialize};

use crate::sim::{RngStream, SimTime};

/// Fractional-frequency units per ppm. Frequencies are held as integer parts
/// per 10^15 so that offset integration is exact rational arithmetic.
pub const PPQ_PER_PPM: f64 = 1e9;
const PPQ_DENOM: i128 = 1_000_000_000_000_000;

pub fn ppm_to_ppq(ppm: f64) -> i64 {
    (ppm * PPQ_PER_PPM).round() as i64
}

pub fn ppq_to_ppm(ppq: i64) -> f64 {
    ppq as f64 / PPQ_PER_PPM
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockParams {
    pub initial_offset_ps: i64,
    pub freq_error_ppm: f64,
    pub rw_sigma_ppm_per_sqrt_s: f64,
    pub granularity_ps: u64,
    /// Frequency random-walk increments are applied on this fixed true-time grid.
    pub walk_step: SimTime,
}

impl Default for ClockParams {
    fn default() -> Self {
        ClockParams {
            initial_offset_ps: 0,
            freq_error_ppm: 0.0,
            rw_sigma_ppm_per_sqrt_s: 0.0,
            granularity_ps: 1,
            walk_step: SimTime::from_secs(1),
        }
    }
}

/// Imperfect local oscillator.
///
/// `offset` is local minus true time. It integrates the sum of the intrinsic
/// frequency error, the accumulated random walk and the servo adjustment.
/// Timestamps are floored to `granularity_ps`.
#[derive(Clone, Debug)]
pub struct LocalClock {
    offset_ps: i64,
    remainder: i128,
    intrinsic_ppq: i64,
    walk_ppq: i64,
    adjust_ppq: i64,
    granularity_ps: u64,
    walk_sigma_ppq: f64,
    walk_step: SimTime,
    next_walk: SimTime,
    last: SimTime,
    walk_rng: Option<RngStream>,
}

impl LocalClock {
    pub fn new(params: ClockParams, walk_rng: Option<RngStream>) -> Self {
        assert!(
            params.granularity_ps >= 1,
            "granularity must be at least 1 ps"
        );
        assert!(
            params.walk_step > SimTime::ZERO,
            "walk step must be positive"
        );
        let step_s = params.walk_step.as_secs_f64();
        LocalClock {
            offset_ps: params.initial_offset_ps,
            remainder: 0,
            intrinsic_ppq: ppm_to_ppq(params.freq_error_ppm),
            walk_ppq: 0,
            adjust_ppq: 0,
            granularity_ps: params.granularity_ps,
            walk_sigma_ppq: params.rw_sigma_ppm_per_sqrt_s * step_s.sqrt() * PPQ_PER_PPM,
            walk_step: params.walk_step,
            next_walk: params.walk_step,
            last: SimTime::ZERO,
            walk_rng,
        }
    }

    pub fn perfect() -> Self {
        LocalClock::new(ClockParams::default(), None)
    }

    pub fn granularity_ps(&self) -> u64 {
        self.granularity_ps
    }

    fn total_ppq(&self) -> i128 {
        self.intrinsic_ppq as i128 + self.walk_ppq as i128 + self.adjust_ppq as i128
    }

    fn integrate(&mut self, until: SimTime) {
        let dt = (until - self.last).as_ps() as i128;
        let acc = self.remainder + self.total_ppq() * dt;
        self.offset_ps += acc.div_euclid(PPQ_DENOM) as i64;
        self.remainder = acc.rem_euclid(PPQ_DENOM);
        self.last = until;
    }

    /// Evolves the clock state to true time `t`.
    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.last, "clock read before its last update");
        while self.next_walk <= t {
            let at = self.next_walk;
            self.integrate(at);
            if self.walk_sigma_ppq > 0.0 {
                if let Some(rng) = self.walk_rng.as_mut() {
                    self.walk_ppq += (rng.standard_normal() * self.walk_sigma_ppq).round() as i64;
                }
            }
            self.next_walk = at + self.walk_step;
        }
        self.integrate(t);
    }

    /// Exact local-minus-true offset at `t`, floored to whole picoseconds.
    pub fn offset_ps(&mut self, t: SimTime) -> i64 {
        self.advance_to(t);
        self.offset_ps
    }

    /// Local timestamp at true time `t`, quantized to the clock granularity.
    pub fn read(&mut self, t: SimTime) -> i64 {
        let local = t.as_ps() as i64 + self.offset_ps(t);
        let g = self.granularity_ps as i64;
        local.div_euclid(g) * g
    }

    /// Instantaneous phase correction.
    pub fn step(&mut self, t: SimTime, delta_ps: i64) {
        self.advance_to(t);
        self.offset_ps += delta_ps;
    }

    pub fn set_adjust_ppm(&mut self, t: SimTime, ppm: f64) {
        self.advance_to(t);
        self.adjust_ppq = ppm_to_ppq(ppm);
    }

    pub fn adjust_ppm(&self) -> f64 {
        ppq_to_ppm(self.adjust_ppq)
    }

    /// Free-running frequency error (intrinsic plus random walk), ppm.
    pub fn free_running_ppm(&self) -> f64 {
        ppq_to_ppm(self.intrinsic_ppq + self.walk_ppq)
    }

    /// Effective frequency error including the servo adjustment, ppm.
    pub fn effective_ppm(&self) -> f64 {
        ppq_to_ppm(self.intrinsic_ppq + self.walk_ppq + self.adjust_ppq)
    }
}
