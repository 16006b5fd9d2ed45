use std::path::Path;

use serde::{Deserialize, Serialize};

use super::battery::Battery;
use super::kalman::{KalmanConfig, KalmanState, Tracker};
use super::plan::{plan_sampling, Area, Obstacle, PlanOptions, SamplePlan};
use super::ranging::{measure_ranges, trilaterate, BeaconSet};
use super::sensors::lift_height_measure;
use super::{RoverError, LIFT_MIN_M};
use crate::fabric::Room;
use crate::sim::{Action, Engine, Event, NodeId, RngStream, RunStats, SimTime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub beacons: BeaconSet,
    pub kalman: KalmanConfig,
    pub battery: Battery,
    /// Sampled region; the whole room when absent.
    pub area: Option<Area>,
    pub obstacles: Vec<Obstacle>,
    pub resolution_m: f64,
    pub z_resolution_m: Option<f64>,
    pub z_stops_m: Option<Vec<f64>>,
    pub dwell_s: f64,
    pub rover_radius_m: f64,
    pub speed_m_s: f64,
    pub drive_w: f64,
    pub dwell_w: f64,
    pub charge_w: f64,
    pub reserve_factor: f64,
    /// Defaults to the room corner at the origin, clear of the walls.
    pub charger: Option<[f64; 2]>,
    pub beacon_height_m: f64,
    pub tick_s: f64,
    pub log_interval_s: f64,
    pub max_duration_s: f64,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            beacons: BeaconSet::default(),
            kalman: KalmanConfig::default(),
            battery: Battery::default(),
            area: None,
            obstacles: vec![],
            resolution_m: 0.6,
            z_resolution_m: None,
            z_stops_m: None,
            dwell_s: 1.0,
            rover_radius_m: 0.25,
            speed_m_s: 0.5,
            drive_w: 120.0,
            dwell_w: 40.0,
            charge_w: 60.0,
            reserve_factor: 2.0,
            charger: None,
            beacon_height_m: 0.3,
            tick_s: 0.1,
            log_interval_s: 1.0,
            max_duration_s: 36_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionRow {
    pub time_s: f64,
    pub true_x: f64,
    pub true_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub lift_z: f64,
    pub soc: f64,
    pub event: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub completed: bool,
    pub abort_reason: Option<String>,
    pub waypoints_total: usize,
    pub waypoints_visited: usize,
    pub charge_events: usize,
    pub duration_s: f64,
    pub energy_drawn_wh: f64,
    pub energy_charged_wh: f64,
    pub initial_soc: f64,
    pub final_soc: f64,
    pub rms_estimate_error_m: f64,
    pub rms_fix_error_m: f64,
    pub rejected_measurements: u64,
    pub filter_resets: u64,
}

impl MissionSummary {
    /// Relative mismatch between the state-of-charge change and net energy flow.
    pub fn energy_residual(&self, capacity_wh: f64) -> f64 {
        let soc_change_wh = (self.initial_soc - self.final_soc) * capacity_wh;
        let net = self.energy_drawn_wh - self.energy_charged_wh;
        (soc_change_wh - net).abs() / net.abs().max(1e-12)
    }
}

#[derive(Clone, Debug)]
pub struct MissionReport {
    pub plan: SamplePlan,
    pub rows: Vec<MissionRow>,
    pub summary: MissionSummary,
    pub stats: RunStats,
}

impl MissionReport {
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "time", "true_x", "true_y", "est_x", "est_y", "lift_z", "soc", "event",
        ])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.3}", r.time_s),
                format!("{:.4}", r.true_x),
                format!("{:.4}", r.true_y),
                format!("{:.4}", r.est_x),
                format!("{:.4}", r.est_y),
                format!("{:.3}", r.lift_z),
                format!("{:.6}", r.soc),
                r.event.clone(),
            ])?;
        }
        w.flush()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Goal {
    Waypoint(usize),
    Charger,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    Drive { to: [f64; 2], goal: Goal },
    Dwell { remaining_s: f64 },
    Charge,
    Done,
}

#[derive(Debug, Clone)]
struct Tick;

impl Action for Tick {
    fn module(&self) -> &'static str {
        "rover"
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

struct Rover<'a> {
    cfg: &'a MissionConfig,
    plan: SamplePlan,
    charger: [f64; 2],
    pos: [f64; 2],
    lift_z: f64,
    battery: Battery,
    mode: Mode,
    next_wp: usize,
    kf: Tracker,
    since_fix_s: f64,
    fix_every: u64,
    ticks: u64,
    range_rng: RngStream,
    lift_rng: RngStream,
    rows: Vec<MissionRow>,
    summary: MissionSummary,
    est_sq: f64,
    fix_sq: f64,
    fixes: u64,
    next_log_s: f64,
}

impl Rover<'_> {
    fn energy_wh(&self, watts: f64, seconds: f64) -> f64 {
        watts * seconds / 3600.0
    }

    fn drive_energy(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        self.energy_wh(self.cfg.drive_w, dist(a, b) / self.cfg.speed_m_s)
    }

    fn log(&mut self, t: f64, event: &str) {
        let est = self.kf.position();
        self.rows.push(MissionRow {
            time_s: t,
            true_x: self.pos[0],
            true_y: self.pos[1],
            est_x: est[0],
            est_y: est[1],
            lift_z: self.lift_z,
            soc: self.battery.soc,
            event: event.to_string(),
        });
    }

    fn abort(&mut self, t: f64, reason: &str) {
        self.summary.abort_reason = Some(reason.to_string());
        self.mode = Mode::Done;
        self.log(t, "abort");
    }

    /// Chooses the next leg, returning to the charger when the leg plus the
    /// reserve needed to get home afterwards exceeds the stored energy.
    fn decide(&mut self, t: f64) {
        if self.next_wp >= self.plan.waypoints.len() {
            self.summary.completed = true;
            self.mode = Mode::Done;
            self.log(t, "complete");
            return;
        }
        let wp = self.plan.waypoints[self.next_wp];
        let target = [wp.x, wp.y];
        let leg =
            self.drive_energy(self.pos, target) + self.energy_wh(self.cfg.dwell_w, wp.dwell_s);
        let reserve = self.cfg.reserve_factor * self.drive_energy(target, self.charger);
        if self.battery.energy_wh() < leg + reserve {
            if dist(self.pos, self.charger) < 1e-9 {
                if self.battery.soc >= 1.0 {
                    self.abort(t, "waypoint unreachable on a full charge");
                } else {
                    self.mode = Mode::Charge;
                    self.summary.charge_events += 1;
                    self.log(t, "charge_start");
                }
                return;
            }
            self.mode = Mode::Drive {
                to: self.charger,
                goal: Goal::Charger,
            };
            self.log(t, "return_to_charge");
            return;
        }
        self.mode = Mode::Drive {
            to: target,
            goal: Goal::Waypoint(self.next_wp),
        };
    }

    fn draw(&mut self, t: f64, watts: f64, dt: f64) -> bool {
        match self.battery.draw(watts, dt) {
            Ok(got) => {
                self.summary.energy_drawn_wh += got;
                if got + 1e-15 < self.energy_wh(watts, dt) {
                    self.abort(t, "battery depleted");
                    return false;
                }
                true
            }
            Err(e) => {
                self.abort(t, &e.to_string());
                false
            }
        }
    }

    fn estimate(&mut self, dt: f64) {
        self.since_fix_s += dt;
        if !self.ticks.is_multiple_of(self.fix_every) {
            return;
        }
        let pose = [self.pos[0], self.pos[1], self.cfg.beacon_height_m];
        let ranges = measure_ranges(pose, &self.cfg.beacons, &mut self.range_rng);
        let fix = trilaterate(&ranges, &self.cfg.beacons.anchors, self.cfg.beacon_height_m).ok();
        if let Some(f) = fix {
            self.fix_sq += dist(f.position, self.pos).powi(2);
        }
        if self.kf.step(self.since_fix_s, fix.as_ref()).is_ok() {
            self.summary.rejected_measurements = self.kf.rejected;
            self.summary.filter_resets = self.kf.resets;
        }
        self.since_fix_s = 0.0;
        self.est_sq += dist(self.kf.position(), self.pos).powi(2);
        self.fixes += 1;
    }

    fn tick(&mut self, t: f64) {
        let dt = self.cfg.tick_s;
        self.ticks += 1;
        match self.mode {
            Mode::Done => return,
            Mode::Drive { to, goal } => {
                if !self.draw(t, self.cfg.drive_w, dt) {
                    return;
                }
                let d = dist(self.pos, to);
                let step = self.cfg.speed_m_s * dt;
                if d <= step {
                    self.pos = to;
                    match goal {
                        Goal::Waypoint(i) => {
                            let wp = self.plan.waypoints[i];
                            self.lift_z = wp.z;
                            let reading = lift_height_measure(wp.z, &mut self.lift_rng);
                            self.mode = Mode::Dwell {
                                remaining_s: wp.dwell_s,
                            };
                            self.log(
                                t,
                                if reading.out_of_range {
                                    "sample_lift_flag"
                                } else {
                                    "sample"
                                },
                            );
                        }
                        Goal::Charger => {
                            self.lift_z = LIFT_MIN_M;
                            self.mode = Mode::Charge;
                            self.summary.charge_events += 1;
                            self.log(t, "charge_start");
                        }
                    }
                } else {
                    self.pos = [
                        self.pos[0] + (to[0] - self.pos[0]) * step / d,
                        self.pos[1] + (to[1] - self.pos[1]) * step / d,
                    ];
                }
            }
            Mode::Dwell { remaining_s } => {
                if !self.draw(t, self.cfg.dwell_w, dt) {
                    return;
                }
                let left = remaining_s - dt;
                if left <= 1e-9 {
                    self.next_wp += 1;
                    self.summary.waypoints_visited += 1;
                    self.decide(t);
                } else {
                    self.mode = Mode::Dwell { remaining_s: left };
                }
            }
            Mode::Charge => {
                self.summary.energy_charged_wh += self.battery.charge(self.cfg.charge_w, dt);
                if self.battery.soc >= 1.0 - 1e-12 {
                    self.battery.soc = 1.0;
                    self.log(t, "charge_end");
                    self.decide(t);
                }
            }
        }
        self.estimate(dt);
        if t + 1e-9 >= self.next_log_s && self.mode != Mode::Done {
            self.log(t, "tick");
            self.next_log_s += self.cfg.log_interval_s;
        }
    }
}

/// Plans the sweep and drives it tick by tick, tracking position with
/// beacons and a Kalman filter and detouring to the charger as needed.
pub fn run_mission(
    room: &Room,
    cfg: &MissionConfig,
    seed: u64,
) -> Result<MissionReport, RoverError> {
    cfg.beacons.validate()?;
    if cfg.drive_w > cfg.battery.peak_w || cfg.dwell_w > cfg.battery.peak_w {
        return Err(RoverError::PeakExceeded(cfg.drive_w.max(cfg.dwell_w)));
    }
    if !(cfg.tick_s > 0.0) || !(cfg.speed_m_s > 0.0) {
        return Err(RoverError::BadTimeStep);
    }
    let area = cfg
        .area
        .unwrap_or(Area::new([0.0, 0.0], [room.length_m, room.width_m]));
    let r = cfg.rover_radius_m;
    let charger = cfg.charger.unwrap_or([area.min[0] + r, area.min[1] + r]);
    let charger_clear = charger[0] - area.min[0] >= r - 1e-9
        && area.max[0] - charger[0] >= r - 1e-9
        && charger[1] - area.min[1] >= r - 1e-9
        && area.max[1] - charger[1] >= r - 1e-9
        && !cfg.obstacles.iter().any(|o| {
            Area::new([o.min[0] - r, o.min[1] - r], [o.max[0] + r, o.max[1] + r]).contains(charger)
        });
    if !charger_clear {
        return Err(RoverError::ChargerUnreachable);
    }
    let plan = plan_sampling(
        area,
        cfg.resolution_m,
        &cfg.obstacles,
        &PlanOptions {
            z_resolution: cfg.z_resolution_m,
            z_stops: cfg.z_stops_m.clone(),
            rover_radius_m: r,
            dwell_s: cfg.dwell_s,
            start: Some(charger),
        },
    )?;
    let fix_every = ((1.0 / cfg.beacons.rate_hz.max(1e-9)) / cfg.tick_s)
        .round()
        .max(1.0) as u64;
    let mut rover = Rover {
        cfg,
        summary: MissionSummary {
            waypoints_total: plan.waypoints.len(),
            initial_soc: cfg.battery.soc,
            ..MissionSummary::default()
        },
        plan,
        charger,
        pos: charger,
        lift_z: LIFT_MIN_M,
        battery: cfg.battery,
        mode: Mode::Done,
        next_wp: 0,
        kf: Tracker::new(
            KalmanState::at_rest(charger, cfg.beacons.sigma_m.powi(2).max(1e-6), 0.01),
            cfg.kalman,
        ),
        since_fix_s: 0.0,
        fix_every,
        ticks: 0,
        range_rng: RngStream::new(seed, "rover/ranges"),
        lift_rng: RngStream::new(seed, "rover/lift"),
        rows: Vec::new(),
        est_sq: 0.0,
        fix_sq: 0.0,
        fixes: 0,
        next_log_s: 0.0,
    };
    rover.log(0.0, "start");
    rover.decide(0.0);

    let tick = SimTime::from_secs_f64(cfg.tick_s);
    let end = SimTime::from_secs_f64(cfg.max_duration_s);
    let mut engine: Engine<Tick> = Engine::new();
    engine.schedule(tick, NodeId::Rover, Tick);
    let mut finished_at = None;
    let stats = engine.run_until(end, &mut |e: &mut Engine<Tick>, ev: Event<Tick>| {
        let t = ev.fire_at.as_secs_f64();
        rover.tick(t);
        if rover.mode == Mode::Done {
            finished_at.get_or_insert(t);
        } else {
            e.schedule(ev.fire_at + tick, NodeId::Rover, Tick);
        }
    });
    if rover.mode != Mode::Done {
        rover.abort(cfg.max_duration_s, "time limit");
    }
    let mut summary = rover.summary;
    summary.duration_s = finished_at.unwrap_or(cfg.max_duration_s);
    summary.final_soc = rover.battery.soc;
    if rover.fixes > 0 {
        summary.rms_estimate_error_m = (rover.est_sq / rover.fixes as f64).sqrt();
        summary.rms_fix_error_m = (rover.fix_sq / rover.fixes as f64).sqrt();
    }
    if let Some(reason) = &summary.abort_reason {
        if reason == "waypoint unreachable on a full charge" {
            return Err(RoverError::Aborted(reason.clone()));
        }
    }
    Ok(MissionReport {
        plan: rover.plan,
        rows: rover.rows,
        summary,
        stats,
    })
}
