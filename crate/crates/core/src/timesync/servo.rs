use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoConfig {
    /// Fraction of the measured offset removed per sync interval.
    pub kp: f64,
    /// Weight of the accumulated offset per sync interval.
    pub ki: f64,
    pub clamp_ppm: f64,
    /// Step the clock on the first measurement if |offset| exceeds this.
    pub first_step_threshold_ps: Option<u64>,
    pub lock_threshold_ps: u64,
    pub lock_epochs: u32,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            kp: 0.7,
            ki: 0.3,
            clamp_ppm: 100.0,
            first_step_threshold_ps: Some(10_000_000),
            lock_threshold_ps: 1_000_000,
            lock_epochs: 3,
        }
    }
}

impl ServoConfig {
    pub fn open_loop() -> Self {
        ServoConfig {
            kp: 0.0,
            ki: 0.0,
            first_step_threshold_ps: None,
            ..ServoConfig::default()
        }
    }
}

/// PI servo turning measured offsets into frequency adjustments.
///
/// With sync interval T (ps): `adj = -(kp * offset + ki * integrator) / T`,
/// expressed in ppm. The integrator is not updated on epochs where the output
/// saturates at the clamp.
#[derive(Clone, Debug)]
pub struct ServoState {
    pub config: ServoConfig,
    pub interval: SimTime,
    pub integrator_ps: f64,
    pub freq_adj_ppm: f64,
    pub locked: bool,
    in_band: u32,
    updates: u64,
}

impl ServoState {
    pub fn new(config: ServoConfig, interval: SimTime) -> Self {
        assert!(interval > SimTime::ZERO);
        ServoState {
            config,
            interval,
            integrator_ps: 0.0,
            freq_adj_ppm: 0.0,
            locked: false,
            in_band: 0,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn output_ppm(&self, offset_ps: f64, integrator_ps: f64) -> f64 {
        let t = self.interval.as_ps() as f64;
        -(self.config.kp * offset_ps + self.config.ki * integrator_ps) / t * 1e6
    }

    /// True if this measurement should step the clock instead of slewing it.
    pub fn wants_step(&self, measured_offset_ps: i64) -> bool {
        self.updates == 0
            && self
                .config
                .first_step_threshold_ps
                .is_some_and(|th| measured_offset_ps.unsigned_abs() > th)
    }

    /// Records that the clock was stepped by the caller.
    pub fn note_step(&mut self) {
        self.updates += 1;
    }

    pub fn update(&mut self, measured_offset_ps: i64) -> f64 {
        self.updates += 1;
        let offset = measured_offset_ps as f64;
        let clamp = self.config.clamp_ppm;
        let candidate = self.integrator_ps + offset;
        let raw = self.output_ppm(offset, candidate);
        if raw.abs() <= clamp {
            self.integrator_ps = candidate;
            self.freq_adj_ppm = raw;
        } else {
            self.freq_adj_ppm = self
                .output_ppm(offset, self.integrator_ps)
                .clamp(-clamp, clamp);
        }
        if measured_offset_ps.unsigned_abs() <= self.config.lock_threshold_ps {
            self.in_band += 1;
        } else {
            self.in_band = 0;
            self.locked = false;
        }
        if self.in_band >= self.config.lock_epochs {
            self.locked = true;
        }
        self.freq_adj_ppm
    }

    pub fn reset(&mut self) {
        self.integrator_ps = 0.0;
        self.freq_adj_ppm = 0.0;
        self.locked = false;
        self.in_band = 0;
        self.updates = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::super::clock::{ClockParams, LocalClock};
    use super::*;

    #[test]
    fn zero_offset_holds_integrator_output() {
        let mut s = ServoState::new(ServoConfig::default(), SimTime::from_secs(1));
        s.update(1_000);
        let after_first = s.freq_adj_ppm;
        let steady = -0.3 * 1_000.0 / 1e12 * 1e6;
        for _ in 0..10 {
            assert!((s.update(0) - steady).abs() < 1e-15);
        }
        assert!(after_first != steady);
    }

    #[test]
    fn output_is_clamped() {
        let mut s = ServoState::new(ServoConfig::default(), SimTime::from_secs(1));
        let adj = s.update(1_000_000_000);
        assert_eq!(adj, -100.0);
        assert_eq!(s.integrator_ps, 0.0);
    }

    fn closed_loop(kp: f64, ki: f64, freq_ppm: f64, epochs: usize) -> Vec<i64> {
        let interval = SimTime::from_secs(1);
        let mut clock = LocalClock::new(
            ClockParams {
                freq_error_ppm: freq_ppm,
                granularity_ps: 1,
                ..ClockParams::default()
            },
            None,
        );
        let mut servo = ServoState::new(
            ServoConfig {
                kp,
                ki,
                first_step_threshold_ps: None,
                ..ServoConfig::default()
            },
            interval,
        );
        let mut offsets = Vec::with_capacity(epochs);
        for k in 1..=epochs as u64 {
            let t = SimTime::from_secs(k);
            let off = clock.offset_ps(t);
            offsets.push(off);
            let adj = servo.update(off);
            clock.set_adjust_ppm(t, adj);
        }
        offsets
    }

    #[test]
    fn integral_action_removes_constant_frequency_error() {
        let offsets = closed_loop(0.7, 0.3, 5.0, 200);
        let tail = &offsets[150..];
        assert!(tail.iter().all(|o| o.unsigned_abs() < 8_000), "{tail:?}");
        let early_peak = offsets[..10]
            .iter()
            .map(|o| o.unsigned_abs())
            .max()
            .unwrap();
        let late_peak = offsets[50..]
            .iter()
            .map(|o| o.unsigned_abs())
            .max()
            .unwrap();
        assert!(late_peak < early_peak / 100);
    }

    #[test]
    fn open_loop_grows_linearly() {
        let offsets = closed_loop(0.0, 0.0, 2.0, 50);
        for (k, o) in offsets.iter().enumerate() {
            assert_eq!(*o, 2_000_000 * (k as i64 + 1));
        }
    }

    #[test]
    fn first_large_offset_requests_step() {
        let mut s = ServoState::new(ServoConfig::default(), SimTime::from_secs(1));
        assert!(s.wants_step(50_000_000));
        assert!(!s.wants_step(5_000_000));
        s.note_step();
        assert!(!s.wants_step(50_000_000));
    }

    #[test]
    fn lock_after_consecutive_small_offsets() {
        let mut s = ServoState::new(ServoConfig::default(), SimTime::from_secs(1));
        s.update(10);
        s.update(10);
        assert!(!s.locked);
        s.update(10);
        assert!(s.locked);
        s.update(5_000_000);
        assert!(!s.locked);
    }
}
