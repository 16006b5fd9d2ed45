//! PoE classification, budget ledger and overdraw disconnects.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Action, Engine, Event, NodeId, RunStats, SimTime};

const PD_MW: [u64; 9] = [
    13_000, 3_840, 6_490, 13_000, 25_500, 40_000, 51_000, 62_000, 71_300,
];
const PSE_MW: [u64; 9] = [
    15_400, 4_000, 7_000, 15_400, 30_000, 45_000, 60_000, 75_000, 90_000,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerClass {
    pub class_id: u8,
    pub pd_power_mw: u64,
    pub pse_alloc_mw: u64,
}

impl PowerClass {
    pub fn get(class_id: u8) -> Option<PowerClass> {
        let i = class_id as usize;
        (i < PD_MW.len()).then(|| PowerClass {
            class_id,
            pd_power_mw: PD_MW[i],
            pse_alloc_mw: PSE_MW[i],
        })
    }

    pub fn pd_power_w(&self) -> f64 {
        self.pd_power_mw as f64 / 1000.0
    }

    pub fn pse_alloc_w(&self) -> f64 {
        self.pse_alloc_mw as f64 / 1000.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchId {
    S1,
    S2,
}

/// Piecewise-constant load: `steps[i] = (from, watts)`, zero before the first step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub steps: Vec<(SimTime, f64)>,
}

impl StepFunction {
    pub fn constant(watts: f64) -> Self {
        StepFunction {
            steps: vec![(SimTime::ZERO, watts)],
        }
    }

    pub fn from_secs(points: &[[f64; 2]]) -> Self {
        let mut steps: Vec<(SimTime, f64)> = points
            .iter()
            .map(|p| (SimTime::from_secs_f64(p[0]), p[1].max(0.0)))
            .collect();
        steps.sort_by_key(|s| s.0);
        StepFunction { steps }
    }

    pub fn at(&self, t: SimTime) -> f64 {
        let i = self.steps.partition_point(|s| s.0 <= t);
        if i == 0 {
            0.0
        } else {
            self.steps[i - 1].1
        }
    }

    fn breakpoints(&self) -> impl Iterator<Item = SimTime> + '_ {
        self.steps.iter().map(|s| s.0)
    }
}

/// Switch state history, starting from an initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SwitchHistory {
    initial: bool,
    changes: Vec<(SimTime, bool)>,
}

impl SwitchHistory {
    fn at(&self, t: SimTime) -> bool {
        let i = self.changes.partition_point(|c| c.0 <= t);
        if i == 0 {
            self.initial
        } else {
            self.changes[i - 1].1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSetting {
    Fixed(u8),
    Autoclass,
}

#[derive(Clone, Debug)]
pub struct PdDevice {
    pub tile: u32,
    pub setting: ClassSetting,
    pub granted: Option<PowerClass>,
    pub idle_w: f64,
    /// Load behind S1 (processing unit).
    pub processing: StepFunction,
    /// Load behind S2 (peripherals).
    pub peripheral: StepFunction,
    s1: SwitchHistory,
    s2: SwitchHistory,
    powered_at: Option<SimTime>,
    over_since: Option<SimTime>,
    checked_until: SimTime,
}

impl PdDevice {
    pub fn new(
        tile: u32,
        setting: ClassSetting,
        processing: StepFunction,
        peripheral: StepFunction,
    ) -> Self {
        PdDevice {
            tile,
            setting,
            granted: None,
            idle_w: 0.5,
            processing,
            peripheral,
            s1: SwitchHistory {
                initial: true,
                changes: vec![],
            },
            s2: SwitchHistory {
                initial: true,
                changes: vec![],
            },
            powered_at: None,
            over_since: None,
            checked_until: SimTime::ZERO,
        }
    }

    pub fn switch_state(&self, which: SwitchId, t: SimTime) -> bool {
        match which {
            SwitchId::S1 => self.s1.at(t),
            SwitchId::S2 => self.s2.at(t),
        }
    }

    /// Draw at `t` assuming the device is powered.
    pub fn consumption_w(&self, t: SimTime) -> f64 {
        let mut w = self.idle_w;
        if self.s1.at(t) {
            w += self.processing.at(t);
        }
        if self.s2.at(t) {
            w += self.peripheral.at(t);
        }
        w.max(0.0)
    }

    /// Sets a switch from `t` onward. Later history is discarded.
    pub fn toggle_switch(&mut self, which: SwitchId, on: bool, t: SimTime) {
        let h = match which {
            SwitchId::S1 => &mut self.s1,
            SwitchId::S2 => &mut self.s2,
        };
        h.changes.retain(|c| c.0 < t);
        h.changes.push((t, on));
    }

    fn breakpoints_in(&self, from: SimTime, to: SimTime) -> Vec<SimTime> {
        let mut v: Vec<SimTime> = self
            .processing
            .breakpoints()
            .chain(self.peripheral.breakpoints())
            .chain(self.s1.changes.iter().map(|c| c.0))
            .chain(self.s2.changes.iter().map(|c| c.0))
            .filter(|&t| t > from && t < to)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Peak draw over `[from, from + window)`.
    pub fn peak_w(&self, from: SimTime, window: SimTime) -> f64 {
        let to = from + window;
        std::iter::once(from)
            .chain(self.breakpoints_in(from, to))
            .map(|t| self.consumption_w(t))
            .fold(0.0, f64::max)
    }

    pub fn is_powered(&self) -> bool {
        self.granted.is_some()
    }
}

/// Smallest class in 1..=8 whose PD power covers `peak_w`; class 8 if none does.
pub fn autoclass_for(peak_w: f64) -> PowerClass {
    let peak_mw = (peak_w * 1000.0).ceil() as u64;
    (1..=8u8)
        .filter_map(PowerClass::get)
        .filter(|c| c.pd_power_mw >= peak_mw)
        .min_by_key(|c| c.pd_power_mw)
        .unwrap_or_else(|| PowerClass::get(8).unwrap())
}

pub const STARTUP_WINDOW: SimTime = SimTime::from_secs(1);

pub fn classify(pd: &PdDevice, power_on: SimTime) -> PowerClass {
    match pd.setting {
        ClassSetting::Fixed(c) => PowerClass::get(c).unwrap_or_else(|| PowerClass::get(0).unwrap()),
        ClassSetting::Autoclass => autoclass_for(pd.peak_w(power_on, STARTUP_WINDOW)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum PowerError {
    #[error("tile {tile} denied: requested {requested_mw} mW, midspan {midspan} has {midspan_remaining_mw} mW, global {global_remaining_mw} mW")]
    Denied {
        tile: u32,
        midspan: u32,
        requested_mw: u64,
        midspan_remaining_mw: u64,
        global_remaining_mw: u64,
    },
    #[error("unknown tile {0}")]
    UnknownTile(u32),
    #[error("tile {0} already holds a grant")]
    AlreadyGranted(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseState {
    pub midspan: u32,
    pub budget_mw: u64,
    pub grants: BTreeMap<u32, PowerClass>,
}

impl PseState {
    pub fn allocated_mw(&self) -> u64 {
        self.grants.values().map(|c| c.pse_alloc_mw).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerEventKind {
    Grant,
    Denial,
    Disconnect,
    Toggle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerEvent {
    pub time: SimTime,
    pub tile: u32,
    pub granted_class: Option<u8>,
    pub consumption_w: f64,
    pub event: PowerEventKind,
}

/// Midspan ledgers under a shared global budget.
#[derive(Clone, Debug)]
pub struct PowerPlane {
    pub global_budget_mw: u64,
    pub midspans: Vec<PseState>,
    pub devices: BTreeMap<u32, PdDevice>,
    pub detection_window: SimTime,
    pub log: Vec<PowerEvent>,
    /// Highest total allocation seen so far.
    pub peak_allocated_mw: u64,
}

impl PowerPlane {
    pub fn new(
        global_budget_mw: u64,
        midspan_budgets_mw: &[u64],
        detection_window: SimTime,
    ) -> Self {
        PowerPlane {
            global_budget_mw,
            midspans: midspan_budgets_mw
                .iter()
                .enumerate()
                .map(|(i, &b)| PseState {
                    midspan: i as u32,
                    budget_mw: b,
                    grants: BTreeMap::new(),
                })
                .collect(),
            devices: BTreeMap::new(),
            detection_window,
            log: Vec::new(),
            peak_allocated_mw: 0,
        }
    }

    /// Global budget split evenly over `midspans`.
    pub fn even(global_budget_mw: u64, midspans: u32, detection_window: SimTime) -> Self {
        let n = midspans.max(1) as u64;
        let per = global_budget_mw / n;
        PowerPlane::new(global_budget_mw, &vec![per; n as usize], detection_window)
    }

    pub fn add_device(&mut self, pd: PdDevice) {
        self.devices.insert(pd.tile, pd);
    }

    pub fn midspan_of(&self, tile: u32) -> usize {
        tile as usize % self.midspans.len()
    }

    pub fn global_allocated_mw(&self) -> u64 {
        self.midspans.iter().map(|m| m.allocated_mw()).sum()
    }

    fn record(&mut self, time: SimTime, tile: u32, event: PowerEventKind) {
        let pd = &self.devices[&tile];
        let powered = pd.is_powered() || event == PowerEventKind::Disconnect;
        self.log.push(PowerEvent {
            time,
            tile,
            granted_class: pd.granted.map(|c| c.class_id),
            consumption_w: if powered { pd.consumption_w(time) } else { 0.0 },
            event,
        });
    }

    /// Classifies and allocates in one decision; the ledger is untouched on denial.
    pub fn power_on(&mut self, tile: u32, t: SimTime) -> Result<PowerClass, PowerError> {
        let pd = self
            .devices
            .get(&tile)
            .ok_or(PowerError::UnknownTile(tile))?;
        if pd.is_powered() {
            return Err(PowerError::AlreadyGranted(tile));
        }
        let class = classify(pd, t);
        let m = self.midspan_of(tile);
        let midspan_remaining = self.midspans[m]
            .budget_mw
            .saturating_sub(self.midspans[m].allocated_mw());
        let global_remaining = self
            .global_budget_mw
            .saturating_sub(self.global_allocated_mw());
        if class.pse_alloc_mw > midspan_remaining || class.pse_alloc_mw > global_remaining {
            self.record(t, tile, PowerEventKind::Denial);
            return Err(PowerError::Denied {
                tile,
                midspan: m as u32,
                requested_mw: class.pse_alloc_mw,
                midspan_remaining_mw: midspan_remaining,
                global_remaining_mw: global_remaining,
            });
        }
        self.midspans[m].grants.insert(tile, class);
        self.peak_allocated_mw = self.peak_allocated_mw.max(self.global_allocated_mw());
        let pd = self.devices.get_mut(&tile).unwrap();
        pd.granted = Some(class);
        pd.powered_at = Some(t);
        pd.over_since = None;
        pd.checked_until = t;
        self.record(t, tile, PowerEventKind::Grant);
        Ok(class)
    }

    fn revoke(&mut self, tile: u32) {
        let m = self.midspan_of(tile);
        self.midspans[m].grants.remove(&tile);
        if let Some(pd) = self.devices.get_mut(&tile) {
            pd.granted = None;
            pd.powered_at = None;
            pd.over_since = None;
        }
    }

    /// Drops power and renegotiates. Switch states survive the cycle.
    pub fn power_cycle(&mut self, tile: u32, t: SimTime) -> Result<PowerClass, PowerError> {
        if !self.devices.contains_key(&tile) {
            return Err(PowerError::UnknownTile(tile));
        }
        if self.devices[&tile].is_powered() {
            self.record(t, tile, PowerEventKind::Disconnect);
        }
        self.revoke(tile);
        self.power_on(tile, t)
    }

    pub fn toggle_switch(
        &mut self,
        tile: u32,
        which: SwitchId,
        on: bool,
        t: SimTime,
    ) -> Result<(), PowerError> {
        let pd = self
            .devices
            .get_mut(&tile)
            .ok_or(PowerError::UnknownTile(tile))?;
        pd.toggle_switch(which, on, t);
        self.record(t, tile, PowerEventKind::Toggle);
        Ok(())
    }

    /// Checks every powered device up to `now`. A device drawing more than its
    /// granted PD power continuously for the detection window is disconnected
    /// exactly when the window elapses.
    pub fn monitor(&mut self, now: SimTime) -> Vec<(u32, SimTime)> {
        let window = self.detection_window;
        let mut out = Vec::new();
        for pd in self.devices.values_mut() {
            let Some(class) = pd.granted else { continue };
            if now <= pd.checked_until && pd.over_since.is_none() {
                continue;
            }
            let limit_mw = class.pd_power_mw as f64;
            let from = pd.checked_until;
            let mut starts = vec![from];
            starts.extend(pd.breakpoints_in(from, now));
            let mut hit = None;
            for (i, &a) in starts.iter().enumerate() {
                let b = starts.get(i + 1).copied().unwrap_or(now);
                if pd.consumption_w(a) * 1000.0 > limit_mw {
                    let since = *pd.over_since.get_or_insert(a);
                    if since + window <= b.max(a) {
                        hit = Some(since + window);
                        break;
                    }
                } else {
                    pd.over_since = None;
                }
            }
            pd.checked_until = now;
            if let Some(at) = hit {
                out.push((pd.tile, at));
            }
        }
        out.sort_by_key(|&(tile, at)| (at, tile));
        for &(tile, at) in &out {
            self.record(at, tile, PowerEventKind::Disconnect);
            self.revoke(tile);
        }
        out
    }

    /// Ledger totals never exceed either budget.
    pub fn within_budget(&self) -> bool {
        self.global_allocated_mw() <= self.global_budget_mw
            && self
                .midspans
                .iter()
                .all(|m| m.allocated_mw() <= m.budget_mw)
    }

    pub fn write_ledger_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_ps", "tile", "granted_class", "consumption_w", "event"])?;
        for e in &self.log {
            w.write_record([
                e.time.as_ps().to_string(),
                e.tile.to_string(),
                e.granted_class.map(|c| c.to_string()).unwrap_or_default(),
                format!("{:.3}", e.consumption_w),
                serde_json::to_value(e.event)
                    .unwrap()
                    .as_str()
                    .unwrap()
                    .to_string(),
            ])?;
        }
        w.flush()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileOverride {
    pub tile: u32,
    pub class: Option<u8>,
    pub autoclass: bool,
    /// `[time_s, watts]` steps for the S1 load.
    pub processing: Option<Vec<[f64; 2]>>,
    pub peripheral: Option<Vec<[f64; 2]>>,
}

impl Default for TileOverride {
    fn default() -> Self {
        TileOverride {
            tile: 0,
            class: None,
            autoclass: false,
            processing: None,
            peripheral: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleSpec {
    pub tile: u32,
    pub at_s: f64,
    pub switch: SwitchId,
    pub on: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleSpec {
    pub tile: u32,
    pub at_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub global_budget_w: f64,
    pub midspans: u32,
    /// Per-midspan budgets; an even split of the global budget when absent.
    pub midspan_budget_w: Option<Vec<f64>>,
    pub default_class: u8,
    pub autoclass: bool,
    pub idle_w: f64,
    pub processing_w: f64,
    pub peripheral_w: f64,
    pub detection_window_ms: f64,
    pub monitor_interval_ms: u64,
    pub overrides: Vec<TileOverride>,
    pub toggles: Vec<ToggleSpec>,
    pub power_cycles: Vec<CycleSpec>,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            global_budget_w: 9000.0,
            midspans: 4,
            midspan_budget_w: None,
            default_class: 4,
            autoclass: false,
            idle_w: 0.5,
            processing_w: 6.0,
            peripheral_w: 5.0,
            detection_window_ms: 75.0,
            monitor_interval_ms: 100,
            overrides: vec![],
            toggles: vec![],
            power_cycles: vec![],
        }
    }
}

fn w_to_mw(w: f64) -> u64 {
    (w * 1000.0).round().max(0.0) as u64
}

impl PowerConfig {
    pub fn midspan_budgets_mw(&self) -> Vec<u64> {
        match &self.midspan_budget_w {
            Some(v) => v.iter().map(|&w| w_to_mw(w)).collect(),
            None => {
                let n = self.midspans.max(1) as u64;
                vec![w_to_mw(self.global_budget_w) / n; n as usize]
            }
        }
    }

    /// Allocated PSE power if every tile were granted its configured class.
    pub fn requested_mw(&self, tiles: u32) -> u64 {
        (0..tiles)
            .map(|t| {
                let o = self.overrides.iter().find(|o| o.tile == t);
                let class = o.and_then(|o| o.class).unwrap_or(self.default_class);
                PowerClass::get(class).map(|c| c.pse_alloc_mw).unwrap_or(0)
            })
            .sum()
    }

    pub fn build(&self, tiles: u32) -> PowerPlane {
        let mut plane = PowerPlane::new(
            w_to_mw(self.global_budget_w),
            &self.midspan_budgets_mw(),
            SimTime::from_secs_f64(self.detection_window_ms / 1000.0),
        );
        for t in 0..tiles {
            let o = self.overrides.iter().find(|o| o.tile == t);
            let auto = o.map(|o| o.autoclass).unwrap_or(self.autoclass);
            let class = o.and_then(|o| o.class).unwrap_or(self.default_class);
            let setting = if auto {
                ClassSetting::Autoclass
            } else {
                ClassSetting::Fixed(class)
            };
            let step = |v: Option<&Vec<[f64; 2]>>, dflt: f64| match v {
                Some(points) => StepFunction::from_secs(points),
                None => StepFunction::constant(dflt),
            };
            let mut pd = PdDevice::new(
                t,
                setting,
                step(o.and_then(|o| o.processing.as_ref()), self.processing_w),
                step(o.and_then(|o| o.peripheral.as_ref()), self.peripheral_w),
            );
            pd.idle_w = self.idle_w;
            plane.add_device(pd);
        }
        plane
    }
}

#[derive(Clone, Debug)]
pub struct PowerReport {
    pub plane: PowerPlane,
    /// Tiles without power and when they lost it; denials are offline from power-on.
    pub offline: BTreeMap<u32, SimTime>,
    pub grants: usize,
    pub denials: usize,
    pub disconnects: usize,
    pub stats: RunStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub grants: usize,
    pub denials: usize,
    pub disconnects: usize,
    pub total_granted_w: f64,
    pub peak_granted_w: f64,
    pub global_budget_w: f64,
    pub disconnected_tiles: Vec<u32>,
}

impl PowerReport {
    pub fn summary(&self) -> PowerSummary {
        PowerSummary {
            grants: self.grants,
            denials: self.denials,
            disconnects: self.disconnects,
            total_granted_w: self.plane.global_allocated_mw() as f64 / 1000.0,
            peak_granted_w: self.plane.peak_allocated_mw as f64 / 1000.0,
            global_budget_w: self.plane.global_budget_mw as f64 / 1000.0,
            disconnected_tiles: self
                .plane
                .log
                .iter()
                .filter(|e| e.event == PowerEventKind::Disconnect)
                .map(|e| e.tile)
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum PowerAction {
    PowerOnAll,
    Toggle(ToggleSpec),
    Cycle(u32),
    Monitor,
}

impl Action for PowerAction {
    fn module(&self) -> &'static str {
        "power"
    }
}

/// Powers every tile at t = 0, applies scheduled toggles and power cycles and
/// monitors overdraw until `duration`.
pub fn run_power_stage(config: &PowerConfig, tiles: u32, duration: SimTime) -> PowerReport {
    let mut plane = config.build(tiles);
    let mut engine: Engine<PowerAction> = Engine::new();
    engine.schedule(SimTime::ZERO, NodeId::Central, PowerAction::PowerOnAll);
    for t in &config.toggles {
        engine.schedule(
            SimTime::from_secs_f64(t.at_s),
            NodeId::Tile(t.tile),
            PowerAction::Toggle(t.clone()),
        );
    }
    for c in &config.power_cycles {
        engine.schedule(
            SimTime::from_secs_f64(c.at_s),
            NodeId::Tile(c.tile),
            PowerAction::Cycle(c.tile),
        );
    }
    let interval = SimTime::from_ms(config.monitor_interval_ms.max(1));
    engine.schedule(interval, NodeId::Central, PowerAction::Monitor);

    let mut offline: BTreeMap<u32, SimTime> = BTreeMap::new();
    let stats = engine.run_until(
        duration,
        &mut |e: &mut Engine<PowerAction>, ev: Event<PowerAction>| {
            let now = ev.fire_at;
            match ev.payload {
                PowerAction::PowerOnAll => {
                    for tile in 0..tiles {
                        if plane.power_on(tile, now).is_err() {
                            offline.entry(tile).or_insert(now);
                        }
                    }
                }
                PowerAction::Toggle(t) => {
                    for (tile, at) in plane.monitor(now) {
                        offline.entry(tile).or_insert(at);
                    }
                    let _ = plane.toggle_switch(t.tile, t.switch, t.on, now);
                }
                PowerAction::Cycle(tile) => {
                    for (tile, at) in plane.monitor(now) {
                        offline.entry(tile).or_insert(at);
                    }
                    if plane.power_cycle(tile, now).is_err() {
                        offline.entry(tile).or_insert(now);
                    }
                }
                PowerAction::Monitor => {
                    for (tile, at) in plane.monitor(now) {
                        offline.entry(tile).or_insert(at);
                    }
                    e.schedule(now + interval, NodeId::Central, PowerAction::Monitor);
                }
            }
        },
    );
    for (tile, at) in plane.monitor(duration) {
        offline.entry(tile).or_insert(at);
    }
    let count = |k: PowerEventKind| plane.log.iter().filter(|e| e.event == k).count();
    PowerReport {
        grants: count(PowerEventKind::Grant),
        denials: count(PowerEventKind::Denial),
        disconnects: count(PowerEventKind::Disconnect),
        offline,
        plane,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(tile: u32, class: u8, watts: f64) -> PdDevice {
        let mut pd = PdDevice::new(
            tile,
            ClassSetting::Fixed(class),
            StepFunction::constant(watts - 0.5),
            StepFunction::default(),
        );
        pd.idle_w = 0.5;
        pd
    }

    #[test]
    fn class_table_regular_entries() {
        let c3 = PowerClass::get(3).unwrap();
        assert_eq!((c3.pd_power_w(), c3.pse_alloc_w()), (13.0, 15.4));
        assert_eq!(PowerClass::get(4).unwrap().pd_power_w(), 25.5);
        let c8 = PowerClass::get(8).unwrap();
        assert_eq!((c8.pd_power_w(), c8.pse_alloc_w()), (71.3, 90.0));
        assert!(PowerClass::get(9).is_none());
    }

    #[test]
    fn step_function_lookup() {
        let f = StepFunction::from_secs(&[[2.0, 5.0], [0.5, 1.0]]);
        assert_eq!(f.at(SimTime::ZERO), 0.0);
        assert_eq!(f.at(SimTime::from_ms(500)), 1.0);
        assert_eq!(f.at(SimTime::from_secs(2)), 5.0);
    }

    #[test]
    fn autoclass_picks_smallest_cover() {
        assert_eq!(autoclass_for(11.0).class_id, 3);
        assert_eq!(autoclass_for(3.0).class_id, 1);
        assert_eq!(autoclass_for(13.0).class_id, 3);
        assert_eq!(autoclass_for(24.0).class_id, 4);
        assert_eq!(autoclass_for(500.0).class_id, 8);
    }

    #[test]
    fn under_limit_never_disconnects() {
        let mut p = PowerPlane::even(9_000_000, 4, SimTime::from_ms(75));
        p.add_device(fixed(0, 3, 12.9));
        p.power_on(0, SimTime::ZERO).unwrap();
        assert!(p.monitor(SimTime::from_secs(10_000)).is_empty());
        assert!(p.devices[&0].is_powered());
    }

    #[test]
    fn overdraw_disconnects_after_window() {
        let mut p = PowerPlane::even(9_000_000, 4, SimTime::from_ms(75));
        let mut pd = fixed(0, 3, 10.0);
        pd.processing = StepFunction::from_secs(&[[0.0, 9.5], [2.0, 19.5]]);
        p.add_device(pd);
        p.power_on(0, SimTime::ZERO).unwrap();
        // Monitored on an uneven cadence: the disconnect time does not depend on it.
        assert!(p.monitor(SimTime::from_ms(2_030)).is_empty());
        let out = p.monitor(SimTime::from_ms(2_500));
        assert_eq!(out, vec![(0, SimTime::from_ms(2_075))]);
        assert!(!p.devices[&0].is_powered());
        assert_eq!(p.global_allocated_mw(), 0);
    }

    #[test]
    fn short_spike_is_tolerated() {
        let mut p = PowerPlane::even(9_000_000, 4, SimTime::from_ms(75));
        let mut pd = fixed(0, 3, 10.0);
        pd.processing = StepFunction::from_secs(&[[0.0, 9.5], [1.0, 30.0], [1.074, 9.5]]);
        p.add_device(pd);
        p.power_on(0, SimTime::ZERO).unwrap();
        assert!(p.monitor(SimTime::from_secs(5)).is_empty());
    }

    #[test]
    fn both_switches_off_leave_idle() {
        let mut pd = fixed(0, 3, 10.0);
        pd.peripheral = StepFunction::constant(4.0);
        let t = SimTime::from_secs(1);
        pd.toggle_switch(SwitchId::S1, false, t);
        pd.toggle_switch(SwitchId::S2, false, t);
        assert_eq!(pd.consumption_w(t), 0.5);
        assert_eq!(pd.consumption_w(SimTime::ZERO), 14.0);
    }

    #[test]
    fn double_toggle_restores() {
        let mut pd = fixed(0, 3, 10.0);
        pd.peripheral = StepFunction::constant(2.0);
        let before = pd.consumption_w(SimTime::from_secs(1));
        pd.toggle_switch(SwitchId::S2, false, SimTime::from_secs(2));
        pd.toggle_switch(SwitchId::S2, true, SimTime::from_secs(3));
        assert_eq!(pd.consumption_w(SimTime::from_secs(4)), before);
    }

    #[test]
    fn power_cycle_keeps_switch_states() {
        let mut p = PowerPlane::even(9_000_000, 4, SimTime::from_ms(75));
        p.add_device(fixed(0, 3, 10.0));
        p.power_on(0, SimTime::ZERO).unwrap();
        p.toggle_switch(0, SwitchId::S1, false, SimTime::from_secs(1))
            .unwrap();
        p.power_cycle(0, SimTime::from_secs(2)).unwrap();
        let pd = &p.devices[&0];
        assert!(!pd.switch_state(SwitchId::S1, SimTime::from_secs(3)));
        assert_eq!(pd.consumption_w(SimTime::from_secs(3)), 0.5);
    }

    #[test]
    fn zero_budget_denies_everything() {
        let mut p = PowerPlane::even(0, 4, SimTime::from_ms(75));
        p.add_device(fixed(0, 1, 1.0));
        assert!(matches!(
            p.power_on(0, SimTime::ZERO),
            Err(PowerError::Denied { .. })
        ));
        assert_eq!(p.log[0].event, PowerEventKind::Denial);
    }

    #[test]
    fn denial_reports_remaining() {
        let mut p = PowerPlane::new(100_000, &[100_000], SimTime::from_ms(75));
        p.add_device(fixed(0, 8, 10.0));
        p.add_device(fixed(1, 8, 10.0));
        p.power_on(0, SimTime::ZERO).unwrap();
        let err = p.power_on(1, SimTime::ZERO).unwrap_err();
        assert_eq!(
            err,
            PowerError::Denied {
                tile: 1,
                midspan: 0,
                requested_mw: 90_000,
                midspan_remaining_mw: 10_000,
                global_remaining_mw: 10_000,
            }
        );
    }
}
