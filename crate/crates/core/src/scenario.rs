//! Scenario files, validation and end-to-end orchestration.
//!
//! A scenario is a TOML document whose every section has defaults, so an empty
//! file is the default 140-tile run. Stages execute in a fixed order (power,
//! sync, dataplane, coherent, rover) and each reads only what earlier stages
//! produced. Outputs land in `<root>/<hash prefix>/` where the hash covers the
//! canonical JSON form of the scenario with the output directory removed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coherent::{self, BeamformingSpec, GainResult, TimingSource};
use crate::dataplane::{run_dataplane, DataplaneConfig, DataplaneSummary};
use crate::fabric::{
    build_default_fabric, surface_capacity, ChannelKind, DaqLedger, Fabric, FabricConfig, Role,
    Surface,
};
use crate::hash::fnv1a64;
use crate::power::{run_power_stage, PowerClass, PowerConfig, PowerSummary};
use crate::rover::{run_mission, MissionConfig, MissionSummary, LIFT_MAX_M, LIFT_MIN_M};
use crate::sim::{write_trace_ndjson, NodeId, SimTime};
use crate::timesync::{run_sync_domain, SyncConfig, SyncInputs, SyncReport, SyncSummary};

pub const OUTPUT_ROOT_ENV: &str = "TILESIM_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "tilesim-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Power,
    Sync,
    Dataplane,
    Coherent,
    Rover,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Power,
        Stage::Sync,
        Stage::Dataplane,
        Stage::Coherent,
        Stage::Rover,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Power => "power",
            Stage::Sync => "sync",
            Stage::Dataplane => "dataplane",
            Stage::Coherent => "coherent",
            Stage::Rover => "rover",
        }
    }
}

/// Labels mixed into the scenario seed, one per stochastic stage. Changing one
/// label reseeds that stage only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RngLabels {
    pub sync: String,
    pub coherent: String,
    pub rover: String,
}

impl Default for RngLabels {
    fn default() -> Self {
        RngLabels {
            sync: "sync".into(),
            coherent: "coherent".into(),
            rover: "rover".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaqRequest {
    pub kind: ChannelKind,
    pub channels: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    pub stages: Vec<Stage>,
    pub rng: RngLabels,
    pub fabric: FabricConfig,
    pub timesync: SyncConfig,
    pub power: PowerConfig,
    pub dataplane: DataplaneConfig,
    pub coherent: BeamformingSpec,
    pub rover: MissionConfig,
    pub daq: Vec<DaqRequest>,
    /// Output root; `$TILESIM_OUTPUT_ROOT` or `./tilesim-out` when absent. Not hashed.
    pub output_dir: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            duration_s: 300.0,
            stages: Stage::ALL.to_vec(),
            rng: RngLabels::default(),
            fabric: FabricConfig::default(),
            timesync: SyncConfig::default(),
            power: PowerConfig::default(),
            dataplane: DataplaneConfig::default(),
            coherent: BeamformingSpec::default(),
            rover: MissionConfig::default(),
            daq: vec![],
            output_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Sorted-key compact JSON with the output directory removed.
    pub fn canonical_json(&self) -> String {
        let mut s = self.clone();
        s.output_dir = None;
        let value = serde_json::to_value(&s).expect("scenario serializes to JSON");
        serde_json::to_string(&value).expect("JSON value serializes")
    }

    /// Lowercase hex SHA-256 of [`Scenario::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    /// Seed for a stochastic stage, derived from the scenario seed and its label.
    pub fn stage_seed(&self, label: &str) -> u64 {
        fnv1a64(format!("{}/{}", self.seed, label).as_bytes())
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
        })
    }

    pub fn output_path(&self) -> PathBuf {
        self.output_root().join(&self.hash()[..16])
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s.max(0.0))
    }

    /// Every constraint violation found without running anything.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            d.push(Diagnostic::new(
                "duration",
                format!("duration_s must be positive, got {}", self.duration_s),
            ));
        }
        if self.stages.is_empty() {
            d.push(Diagnostic::new("stages", "no stages selected"));
        }
        validate_fabric_config(&self.fabric, &mut d);
        let tiles = self.fabric.tiles.total();
        self.validate_power(tiles, &mut d);

        let mut daq = DaqLedger::new(self.fabric.daq);
        for r in &self.daq {
            if let Err(e) = daq.assign(r.kind, r.channels) {
                d.push(Diagnostic::new("daq_overcommit", e.to_string()));
            }
        }

        let c = &self.coherent;
        if let Err(e) = coherent::check_carrier(c.carrier_hz) {
            d.push(Diagnostic::new("carrier_range", e.to_string()));
        }
        if c.tx_power_dbm > coherent::MAX_TX_POWER_DBM {
            d.push(Diagnostic::new(
                "tx_power",
                format!(
                    "tx power {} dBm exceeds {} dBm",
                    c.tx_power_dbm,
                    coherent::MAX_TX_POWER_DBM
                ),
            ));
        }
        if !self.fabric.room.contains(c.target) {
            d.push(Diagnostic::new(
                "target_outside_room",
                format!("target {:?} is outside the room", c.target),
            ));
        }
        if let Some(ts) = &c.tiles {
            for &t in ts.iter().filter(|&&t| t >= tiles) {
                d.push(Diagnostic::new(
                    "unknown_tile",
                    format!("coherent tile {t} does not exist ({tiles} tiles)"),
                ));
            }
        }
        if c.timing == TimingSource::Sync
            && self.has_stage(Stage::Coherent)
            && !self.has_stage(Stage::Sync)
        {
            d.push(Diagnostic::new(
                "stages",
                "coherent timing from sync needs the sync stage",
            ));
        }

        let r = &self.rover;
        for &z in r.z_stops_m.iter().flatten() {
            if !(LIFT_MIN_M..=LIFT_MAX_M).contains(&z) {
                d.push(Diagnostic::new(
                    "lift_range",
                    format!("lift height {z} m outside {LIFT_MIN_M}-{LIFT_MAX_M} m"),
                ));
            }
        }
        if let Some(zr) = r.z_resolution_m {
            if !(zr.is_finite() && zr > 0.0) {
                d.push(Diagnostic::new(
                    "lift_range",
                    format!("lift resolution {zr} m must be positive"),
                ));
            }
        }
        if let Err(e) = r.beacons.validate() {
            d.push(Diagnostic::new("beacons", e.to_string()));
        }
        if r.drive_w > r.battery.peak_w || r.dwell_w > r.battery.peak_w {
            d.push(Diagnostic::new(
                "battery_peak",
                format!(
                    "rover load {} W exceeds {} W peak",
                    r.drive_w.max(r.dwell_w),
                    r.battery.peak_w
                ),
            ));
        }
        d
    }

    fn validate_power(&self, tiles: u32, d: &mut Vec<Diagnostic>) {
        let p = &self.power;
        let global_mw = (p.global_budget_w * 1000.0).round() as u64;
        let split: u64 = p.midspan_budgets_mw().iter().sum();
        if split > global_mw {
            d.push(Diagnostic::new(
                "budget_overcommit",
                format!(
                    "midspan budgets total {} W above the {} W global budget",
                    split as f64 / 1000.0,
                    p.global_budget_w
                ),
            ));
        }
        let class_ok = |c: u8| PowerClass::get(c).is_some();
        if !class_ok(p.default_class) {
            d.push(Diagnostic::new(
                "power_class",
                format!("default class {} outside 0-8", p.default_class),
            ));
        }
        for o in &p.overrides {
            if o.tile >= tiles {
                d.push(Diagnostic::new(
                    "unknown_tile",
                    format!("power override for tile {} ({tiles} tiles)", o.tile),
                ));
            }
            if let Some(c) = o.class.filter(|&c| !class_ok(c)) {
                d.push(Diagnostic::new(
                    "power_class",
                    format!("tile {} class {c} outside 0-8", o.tile),
                ));
            }
        }
        if !p.autoclass {
            let requested = p.requested_mw(tiles);
            if requested > global_mw {
                d.push(Diagnostic::new(
                    "budget_overcommit",
                    format!(
                        "{tiles} tiles request {} W of PSE allocation against a {} W budget",
                        requested as f64 / 1000.0,
                        p.global_budget_w
                    ),
                ));
            }
        }
    }
}

fn validate_fabric_config(f: &FabricConfig, d: &mut Vec<Diagnostic>) {
    if !f.room.is_valid() {
        d.push(Diagnostic::new(
            "room",
            format!("room dimensions must be positive: {:?}", f.room),
        ));
        return;
    }
    for s in [
        Surface::WallA,
        Surface::WallB,
        Surface::Ceiling,
        Surface::Floor,
    ] {
        let want = f.tiles.get(s);
        let cap = surface_capacity(f.room.surface_extent_mm(s));
        if want as u64 > cap {
            d.push(Diagnostic::new(
                "tile_overcommit",
                format!("{want} tiles on {} overlap: only {cap} fit", s.name()),
            ));
        }
    }
    if f.switches == 0 {
        d.push(Diagnostic::new(
            "port_overcommit",
            "fabric needs at least one switch",
        ));
    } else {
        let needed = f.tiles.total().div_ceil(f.switches);
        if needed > f.ports_per_switch {
            d.push(Diagnostic::new(
                "port_overcommit",
                format!(
                    "{} tiles need {needed} ports per switch, {} available",
                    f.tiles.total(),
                    f.ports_per_switch
                ),
            ));
        }
    }
}

/// Diagnostics for an exported fabric document.
pub fn validate_fabric_document(text: &str) -> Result<Vec<Diagnostic>, String> {
    let fabric = Fabric::from_json(text).map_err(|e| e.to_string())?;
    Ok(fabric
        .validate()
        .into_iter()
        .map(|i| Diagnostic::new("fabric", i.to_string()))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FabricSummary {
    pub tiles: usize,
    pub switches: usize,
    pub links: usize,
    pub sdr_tiles: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaqSummary {
    pub adc_used: u32,
    pub adc_remaining: u32,
    pub dac_used: u32,
    pub dac_remaining: u32,
}

/// What happened to a tile's clock after its PD lost power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisconnectEffect {
    pub tile: u32,
    pub disconnected_at_ps: u64,
    /// Last PTP message the tile originated; absent if it never sent one.
    pub last_sync_message_ps: Option<u64>,
    pub residual_at_disconnect_ps: Option<i64>,
    pub final_residual_ps: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario_hash: String,
    pub seed: u64,
    pub duration_s: f64,
    pub stages: Vec<Stage>,
    pub fabric: FabricSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub disconnects: Vec<DisconnectEffect>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataplane: Option<DataplaneSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coherent: Option<GainResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rover: Option<MissionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub daq: Option<DaqSummary>,
    /// Output files relative to the run directory.
    pub files: BTreeMap<String, String>,
    pub partial: bool,
    pub failures: Vec<StageFailure>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn ok(&self) -> bool {
        !self.partial
    }
}

/// In-memory results of a run, for callers that want more than the report.
pub struct RunOutput {
    pub report: Report,
    pub fabric: Fabric,
    pub sync: Option<SyncReport>,
    pub dir: PathBuf,
}

fn disconnect_effects(
    power: &crate::power::PowerReport,
    sync: &SyncReport,
) -> Vec<DisconnectEffect> {
    let disconnected = power.summary().disconnected_tiles;
    disconnected
        .into_iter()
        .filter_map(|tile| {
            let at = *power.offline.get(&tile)?;
            let series = sync.node_series(NodeId::Tile(tile));
            let before = series
                .iter()
                .rev()
                .find(|s| s.true_time <= at)
                .map(|s| s.residual_ps);
            Some(DisconnectEffect {
                tile,
                disconnected_at_ps: at.as_ps(),
                last_sync_message_ps: sync.last_sent.get(&NodeId::Tile(tile)).map(|t| t.as_ps()),
                residual_at_disconnect_ps: before,
                final_residual_ps: series.last().map(|s| s.residual_ps),
            })
        })
        .collect()
}

/// Validates and runs `scenario`, writing outputs into `dir`.
pub fn run_in(scenario: &Scenario, dir: &Path, trace: bool) -> Result<RunOutput, ScenarioError> {
    let diagnostics = scenario.validate();
    if !diagnostics.is_empty() {
        return Err(ScenarioError::Invalid(diagnostics));
    }
    let fabric = build_default_fabric(&scenario.fabric)
        .map_err(|e| ScenarioError::Invalid(vec![Diagnostic::new("fabric", e.to_string())]))?;
    std::fs::create_dir_all(dir)?;

    let duration = scenario.duration();
    let mut files = BTreeMap::new();
    let mut failures = Vec::new();
    let mut report = Report {
        scenario_hash: scenario.hash(),
        seed: scenario.seed,
        duration_s: scenario.duration_s,
        stages: Stage::ALL
            .iter()
            .copied()
            .filter(|s| scenario.has_stage(*s))
            .collect(),
        fabric: FabricSummary {
            tiles: fabric.tiles.len(),
            switches: fabric.switches.len(),
            links: fabric.links.len(),
            sdr_tiles: fabric
                .tiles
                .iter()
                .filter(|t| t.roles.contains(&Role::Sdr))
                .count(),
        },
        power: None,
        sync: None,
        disconnects: vec![],
        dataplane: None,
        coherent: None,
        rover: None,
        daq: None,
        files: BTreeMap::new(),
        partial: false,
        failures: vec![],
    };
    std::fs::write(dir.join("fabric.json"), fabric.to_json())?;
    files.insert("fabric".to_string(), "fabric.json".to_string());

    if !scenario.daq.is_empty() {
        let mut ledger = DaqLedger::new(fabric.daq);
        for r in &scenario.daq {
            // already checked by validate
            let _ = ledger.assign(r.kind, r.channels);
        }
        report.daq = Some(DaqSummary {
            adc_used: ledger.used(ChannelKind::Adc),
            adc_remaining: ledger.remaining(ChannelKind::Adc),
            dac_used: ledger.used(ChannelKind::Dac),
            dac_remaining: ledger.remaining(ChannelKind::Dac),
        });
    }

    let power = scenario.has_stage(Stage::Power).then(|| {
        let p = run_power_stage(&scenario.power, fabric.tiles.len() as u32, duration);
        report.power = Some(p.summary());
        p
    });
    if let Some(p) = &power {
        p.plane.write_ledger_csv(&dir.join("power_ledger.csv"))?;
        files.insert("power_ledger".into(), "power_ledger.csv".into());
    }
    let offline = power
        .as_ref()
        .map(|p| p.offline.clone())
        .unwrap_or_default();

    let sync = if scenario.has_stage(Stage::Sync) {
        let inputs = SyncInputs {
            seed: scenario.stage_seed(&scenario.rng.sync),
            offline: offline.clone(),
            link_load_bps: if scenario.has_stage(Stage::Dataplane) {
                scenario.dataplane.offered_load_bps(&fabric)
            } else {
                BTreeMap::new()
            },
            trace,
        };
        let r = run_sync_domain(&fabric, &scenario.timesync, duration, &inputs);
        r.write_residuals_csv(&dir.join("sync_residuals.csv"))?;
        r.write_summary_json(&dir.join("sync_summary.json"))?;
        files.insert("sync_residuals".into(), "sync_residuals.csv".into());
        files.insert("sync_summary".into(), "sync_summary.json".into());
        if trace {
            let f = std::io::BufWriter::new(std::fs::File::create(dir.join("events.ndjson"))?);
            write_trace_ndjson(&r.trace, f)?;
            files.insert("events".into(), "events.ndjson".into());
        }
        report.sync = Some(r.summary());
        if let Some(p) = &power {
            report.disconnects = disconnect_effects(p, &r);
        }
        Some(r)
    } else {
        None
    };

    if scenario.has_stage(Stage::Dataplane) {
        match run_dataplane(&fabric, &scenario.dataplane, &offline, duration) {
            Ok(d) => {
                d.write_traffic_csv(&dir.join("traffic.csv"))?;
                d.broker.write_topic_dump(&dir.join("topics.ndjson"))?;
                files.insert("traffic".into(), "traffic.csv".into());
                files.insert("topics".into(), "topics.ndjson".into());
                report.dataplane = Some(d.summary);
            }
            Err(e) => failures.push(StageFailure {
                stage: Stage::Dataplane,
                message: e.to_string(),
            }),
        }
    }

    if scenario.has_stage(Stage::Coherent) {
        let seed = scenario.stage_seed(&scenario.rng.coherent);
        let result = match &sync {
            Some(r) => coherent::evaluate_beamforming(&fabric, r, &scenario.coherent, seed),
            None => coherent::evaluate_with_residuals(
                &fabric,
                &BTreeMap::new(),
                &scenario.coherent,
                seed,
            ),
        };
        match result {
            Ok(g) => {
                g.write_json(&dir.join("coherent.json"))?;
                g.write_trials_csv(&dir.join("coherent_trials.csv"))?;
                files.insert("coherent".into(), "coherent.json".into());
                files.insert("coherent_trials".into(), "coherent_trials.csv".into());
                report.coherent = Some(g);
            }
            Err(e) => failures.push(StageFailure {
                stage: Stage::Coherent,
                message: e.to_string(),
            }),
        }
    }

    if scenario.has_stage(Stage::Rover) {
        match run_mission(
            &fabric.room,
            &scenario.rover,
            scenario.stage_seed(&scenario.rng.rover),
        ) {
            Ok(m) => {
                m.write_csv(&dir.join("mission.csv"))?;
                std::fs::write(dir.join("plan.json"), m.plan.to_json())?;
                files.insert("mission".into(), "mission.csv".into());
                files.insert("plan".into(), "plan.json".into());
                if !m.summary.completed {
                    failures.push(StageFailure {
                        stage: Stage::Rover,
                        message: m
                            .summary
                            .abort_reason
                            .clone()
                            .unwrap_or_else(|| "mission incomplete".into()),
                    });
                }
                report.rover = Some(m.summary);
            }
            Err(e) => failures.push(StageFailure {
                stage: Stage::Rover,
                message: e.to_string(),
            }),
        }
    }

    files.insert("report".into(), "report.json".into());
    report.files = files;
    report.partial = !failures.is_empty();
    report.failures = failures;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    Ok(RunOutput {
        report,
        fabric,
        sync,
        dir: dir.to_path_buf(),
    })
}

/// Runs into the scenario's hash-named output directory.
pub fn run(scenario: &Scenario, trace: bool) -> Result<RunOutput, ScenarioError> {
    run_in(scenario, &scenario.output_path(), trace)
}

/// Dotted-path lookup into a report JSON value.
pub fn lookup<'a>(report: &'a serde_json::Value, metric: &str) -> Option<&'a serde_json::Value> {
    metric.split('.').try_fold(report, |v, key| match v {
        serde_json::Value::Object(m) => m.get(key),
        serde_json::Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

/// Every scalar leaf path in a report, sorted.
pub fn metric_names(report: &serde_json::Value) -> Vec<String> {
    fn walk(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, child) in m {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(child, &p, out);
                }
            }
            serde_json::Value::Array(a) => {
                for (i, child) in a.iter().enumerate() {
                    walk(child, &format!("{prefix}.{i}"), out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk(report, "", &mut out);
    out.sort();
    out
}

pub fn read_report(dir: &Path) -> std::io::Result<serde_json::Value> {
    let text = std::fs::read_to_string(dir.join("report.json"))?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_scenario() {
        let s = Scenario::from_toml("").unwrap();
        assert_eq!(s, Scenario::default());
        assert!(s.validate().is_empty(), "{:?}", s.validate());
    }

    #[test]
    fn hash_ignores_output_dir_and_key_order() {
        let a = Scenario::from_toml("seed = 3\nduration_s = 10.0\n").unwrap();
        let mut b = Scenario::from_toml("duration_s = 10.0\nseed = 3\n").unwrap();
        b.output_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        let c = Scenario::from_toml("seed = 4\nduration_s = 10.0\n").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let j = Scenario::default().canonical_json();
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(!j.contains('\n'));
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn validation_finds_each_violation() {
        let mut s = Scenario::default();
        s.fabric.tiles.wall_a = 29;
        s.coherent.carrier_hz = 7e9;
        s.rover.z_stops_m = Some(vec![0.4, 1.0]);
        s.power.default_class = 8;
        let codes: Vec<String> = s.validate().into_iter().map(|d| d.code).collect();
        for c in [
            "tile_overcommit",
            "carrier_range",
            "lift_range",
            "budget_overcommit",
        ] {
            assert!(codes.iter().any(|x| x == c), "missing {c} in {codes:?}");
        }
    }

    #[test]
    fn stage_seeds_are_independent() {
        let s = Scenario::default();
        assert_ne!(s.stage_seed("sync"), s.stage_seed("rover"));
        let mut t = s.clone();
        t.rng.rover = "rover-b".into();
        assert_eq!(s.stage_seed(&s.rng.sync), t.stage_seed(&t.rng.sync));
    }

    #[test]
    fn lookup_and_metric_names() {
        let v: serde_json::Value =
            serde_json::json!({"sync": {"p99_residual_ps": 5}, "x": [1, {"y": 2}]});
        assert_eq!(
            lookup(&v, "sync.p99_residual_ps"),
            Some(&serde_json::json!(5))
        );
        assert_eq!(lookup(&v, "x.1.y"), Some(&serde_json::json!(2)));
        assert_eq!(lookup(&v, "sync.nope"), None);
        assert_eq!(
            metric_names(&v),
            vec!["sync.p99_residual_ps", "x.0", "x.1.y"]
        );
    }
}
