//! Room, tile and switch topology plus backbone capacity accounting.
//!
//! The fabric is built once and then read-only. Tiles are numbered surface by
//! surface (wall A, wall B, ceiling, floor) and attached round-robin to the
//! switches; each tile has one cable to its switch, each switch one uplink to
//! the central node.

mod daq;
mod geometry;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{NodeId, RngStream, SimTime};

pub use daq::{ChannelKind, DaqCapacity, DaqError, DaqGrant, DaqLedger};
pub use geometry::{
    pack_surface, surface_capacity, Footprint, Room, Surface, TILE_LONG_MM, TILE_SHORT_MM,
};

pub const FABRIC_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clock,
    Pd,
    Sdr,
    Producer,
    DacHost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileNode {
    pub id: u32,
    pub surface: Surface,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub footprint: Footprint,
    pub roles: BTreeSet<Role>,
    pub switch: u32,
    pub link: u32,
}

impl TileNode {
    pub fn node(&self) -> NodeId {
        NodeId::Tile(self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchNode {
    pub id: u32,
    pub port_count: u32,
    pub attached: Vec<u32>,
    pub transparent_clock: bool,
    pub boundary_clock: bool,
    pub uplink: u32,
}

/// Per-link delay variation added on top of the base propagation delay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JitterModel {
    None,
    /// Log-normal extra delay whose mean and standard deviation both equal `sigma_ps`.
    LogNormal {
        sigma_ps: f64,
    },
}

impl JitterModel {
    pub fn sigma_ps(&self) -> f64 {
        match self {
            JitterModel::None => 0.0,
            JitterModel::LogNormal { sigma_ps } => *sigma_ps,
        }
    }
}

/// Direction of travel along a link. `Down` is upstream endpoint `a` to downstream `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Down,
    Up,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: u32,
    /// Upstream endpoint (switch or central).
    pub a: NodeId,
    /// Downstream endpoint (tile or switch).
    pub b: NodeId,
    pub length_mm: u64,
    pub base_delay: SimTime,
    /// Extra one-way delay on the downstream direction only.
    pub asymmetry_ps: u64,
    pub jitter: JitterModel,
    pub bandwidth_bps: u64,
}

impl Link {
    pub fn delay(&self, dir: Direction) -> SimTime {
        match dir {
            Direction::Down => self.base_delay + SimTime::from_ps(self.asymmetry_ps),
            Direction::Up => self.base_delay,
        }
    }

    /// Jitter sigma scaled linearly by utilisation: `sigma * (1 + coupling * load / bandwidth)`.
    pub fn effective_sigma_ps(&self, load_bps: f64, coupling: f64) -> f64 {
        let util = if self.bandwidth_bps == 0 {
            0.0
        } else {
            load_bps / self.bandwidth_bps as f64
        };
        self.jitter.sigma_ps() * (1.0 + coupling * util)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceCounts {
    pub wall_a: u32,
    pub wall_b: u32,
    pub ceiling: u32,
    pub floor: u32,
}

impl Default for SurfaceCounts {
    fn default() -> Self {
        SurfaceCounts::DEFAULT
    }
}

impl SurfaceCounts {
    pub const DEFAULT: SurfaceCounts = SurfaceCounts {
        wall_a: 28,
        wall_b: 28,
        ceiling: 32,
        floor: 52,
    };

    pub fn get(&self, s: Surface) -> u32 {
        match s {
            Surface::WallA => self.wall_a,
            Surface::WallB => self.wall_b,
            Surface::Ceiling => self.ceiling,
            Surface::Floor => self.floor,
        }
    }

    pub fn total(&self) -> u32 {
        self.wall_a + self.wall_b + self.ceiling + self.floor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CableModel {
    /// Manhattan distance from tile center to the rack, plus slack.
    Manhattan {
        slack_m: f64,
    },
    Uniform {
        length_m: f64,
    },
    Random {
        min_m: f64,
        max_m: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricConfig {
    pub room: Room,
    pub tiles: SurfaceCounts,
    pub switches: u32,
    pub ports_per_switch: u32,
    pub cable: CableModel,
    pub uplink_length_m: f64,
    pub propagation_ps_per_m: u64,
    /// Rack holding the switches and central server.
    pub rack_position: [f64; 3],
    pub transparent_clocks: bool,
    pub boundary_clocks: bool,
    pub tile_jitter: JitterModel,
    pub uplink_jitter: JitterModel,
    pub tile_bandwidth_bps: u64,
    pub uplink_bandwidth_bps: u64,
    /// Extra downstream delay applied to every tile cable.
    pub tile_asymmetry_ps: u64,
    pub daq: DaqCapacity,
    pub seed: u64,
}

impl Default for FabricConfig {
    fn default() -> Self {
        let room = Room::default();
        FabricConfig {
            room,
            tiles: SurfaceCounts::DEFAULT,
            switches: 4,
            ports_per_switch: 48,
            cable: CableModel::Manhattan { slack_m: 2.0 },
            uplink_length_m: 2.0,
            propagation_ps_per_m: 5_000,
            rack_position: [0.0, room.width_m / 2.0, 0.0],
            transparent_clocks: true,
            boundary_clocks: false,
            tile_jitter: JitterModel::LogNormal {
                sigma_ps: 100_000.0,
            },
            uplink_jitter: JitterModel::LogNormal { sigma_ps: 20_000.0 },
            tile_bandwidth_bps: 1_000_000_000,
            uplink_bandwidth_bps: 10_000_000_000,
            tile_asymmetry_ps: 0,
            daq: DaqCapacity::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FabricError {
    #[error("invalid room dimensions {0:?}")]
    InvalidRoom(Room),
    #[error("{requested} tiles requested on {surface} but only {capacity} fit without overlap")]
    SurfaceOvercommit {
        surface: &'static str,
        requested: u32,
        capacity: u64,
    },
    #[error("fabric needs at least one switch")]
    NoSwitches,
    #[error("switch {switch} needs {needed} ports but has {available}")]
    PortOvercommit {
        switch: u32,
        needed: u32,
        available: u32,
    },
    #[error("invalid cable model: {0}")]
    InvalidCable(String),
    #[error("unknown tile {0}")]
    UnknownTile(u32),
    #[error("fabric document: {0}")]
    Document(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fabric {
    pub room: Room,
    pub tiles: Vec<TileNode>,
    pub switches: Vec<SwitchNode>,
    pub links: Vec<Link>,
    pub daq: DaqCapacity,
    pub propagation_ps_per_m: u64,
}

fn length_to_mm(m: f64) -> u64 {
    (m * 1000.0).round().max(0.0) as u64
}

fn delay_for(length_mm: u64, ps_per_m: u64) -> SimTime {
    SimTime::from_ps(length_mm * ps_per_m / 1000)
}

/// Builds the topology described by `config`.
pub fn build_default_fabric(config: &FabricConfig) -> Result<Fabric, FabricError> {
    if !config.room.is_valid() {
        return Err(FabricError::InvalidRoom(config.room));
    }
    if config.switches == 0 {
        return Err(FabricError::NoSwitches);
    }
    match config.cable {
        CableModel::Manhattan { slack_m } if !(slack_m >= 0.0) => {
            return Err(FabricError::InvalidCable(format!("slack {slack_m}")))
        }
        CableModel::Uniform { length_m } if !(length_m > 0.0) => {
            return Err(FabricError::InvalidCable(format!("length {length_m}")))
        }
        CableModel::Random { min_m, max_m } if !(min_m > 0.0 && max_m >= min_m) => {
            return Err(FabricError::InvalidCable(format!("range {min_m}..{max_m}")))
        }
        _ => {}
    }

    let mut tiles = Vec::with_capacity(config.tiles.total() as usize);
    for surface in Surface::ALL {
        let count = config.tiles.get(surface);
        let extent = config.room.surface_extent_mm(surface);
        let footprints =
            pack_surface(extent, count as u64).ok_or(FabricError::SurfaceOvercommit {
                surface: surface.name(),
                requested: count,
                capacity: surface_capacity(extent),
            })?;
        for fp in footprints {
            let id = tiles.len() as u32;
            let (u, v) = fp.center_m();
            tiles.push(TileNode {
                id,
                surface,
                center: config.room.surface_point(surface, u, v),
                normal: surface.normal(),
                footprint: fp,
                roles: [Role::Clock, Role::Pd, Role::Sdr, Role::Producer].into(),
                switch: id % config.switches,
                link: id,
            });
        }
    }

    let cable_rng = RngStream::new(config.seed, "cable_length");
    let mut links = Vec::with_capacity(tiles.len() + config.switches as usize);
    for t in &tiles {
        let length_m = match config.cable {
            CableModel::Manhattan { slack_m } => {
                let r = config.rack_position;
                (t.center[0] - r[0]).abs()
                    + (t.center[1] - r[1]).abs()
                    + (t.center[2] - r[2]).abs()
                    + slack_m
            }
            CableModel::Uniform { length_m } => length_m,
            CableModel::Random { min_m, max_m } => cable_rng.derive(t.id).uniform(min_m, max_m),
        };
        let length_mm = length_to_mm(length_m);
        links.push(Link {
            id: t.id,
            a: NodeId::Switch(t.switch),
            b: t.node(),
            length_mm,
            base_delay: delay_for(length_mm, config.propagation_ps_per_m),
            asymmetry_ps: config.tile_asymmetry_ps,
            jitter: config.tile_jitter,
            bandwidth_bps: config.tile_bandwidth_bps,
        });
    }

    let mut switches = Vec::with_capacity(config.switches as usize);
    for s in 0..config.switches {
        let uplink = links.len() as u32;
        let length_mm = length_to_mm(config.uplink_length_m);
        links.push(Link {
            id: uplink,
            a: NodeId::Central,
            b: NodeId::Switch(s),
            length_mm,
            base_delay: delay_for(length_mm, config.propagation_ps_per_m),
            asymmetry_ps: 0,
            jitter: config.uplink_jitter,
            bandwidth_bps: config.uplink_bandwidth_bps,
        });
        let mut attached: Vec<u32> = tiles
            .iter()
            .filter(|t| t.switch == s)
            .map(|t| t.link)
            .collect();
        attached.push(uplink);
        if attached.len() as u32 > config.ports_per_switch {
            return Err(FabricError::PortOvercommit {
                switch: s,
                needed: attached.len() as u32,
                available: config.ports_per_switch,
            });
        }
        switches.push(SwitchNode {
            id: s,
            port_count: config.ports_per_switch,
            attached,
            transparent_clock: config.transparent_clocks,
            boundary_clock: config.boundary_clocks,
            uplink,
        });
    }

    Ok(Fabric {
        room: config.room,
        tiles,
        switches,
        links,
        daq: config.daq,
        propagation_ps_per_m: config.propagation_ps_per_m,
    })
}

impl Fabric {
    pub fn tile(&self, id: u32) -> Result<&TileNode, FabricError> {
        self.tiles
            .get(id as usize)
            .filter(|t| t.id == id)
            .or_else(|| self.tiles.iter().find(|t| t.id == id))
            .ok_or(FabricError::UnknownTile(id))
    }

    /// Center and inward normal of a tile.
    pub fn tile_position(&self, id: u32) -> Result<([f64; 3], [f64; 3]), FabricError> {
        self.tile(id).map(|t| (t.center, t.normal))
    }

    pub fn link(&self, id: u32) -> &Link {
        &self.links[id as usize]
    }

    pub fn switch(&self, id: u32) -> &SwitchNode {
        &self.switches[id as usize]
    }

    /// Tile-to-switch connections across all switches.
    pub fn tile_connections(&self) -> usize {
        self.tiles.len()
    }

    pub fn total_ports(&self) -> u32 {
        self.switches.iter().map(|s| s.port_count).sum()
    }

    /// Links traversed from the central node down to `tile`: uplink first, then the tile cable.
    pub fn path_to_tile(&self, tile: u32) -> Result<[u32; 2], FabricError> {
        let t = self.tile(tile)?;
        Ok([self.switch(t.switch).uplink, t.link])
    }

    pub fn to_document(&self) -> FabricDocument {
        FabricDocument {
            schema_version: FABRIC_SCHEMA_VERSION,
            fabric: self.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("fabric serializes")
    }

    pub fn from_json(text: &str) -> Result<Fabric, FabricError> {
        let doc: FabricDocument =
            serde_json::from_str(text).map_err(|e| FabricError::Document(e.to_string()))?;
        if doc.schema_version != FABRIC_SCHEMA_VERSION {
            return Err(FabricError::Document(format!(
                "unsupported schema version {}",
                doc.schema_version
            )));
        }
        Ok(doc.fabric)
    }

    /// Structural checks over the whole fabric. Empty means valid.
    pub fn validate(&self) -> Vec<FabricIssue> {
        validate_fabric(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FabricDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub fabric: Fabric,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum FabricIssue {
    DuplicateTileId(u32),
    TileOverlap {
        surface: Surface,
        a: u32,
        b: u32,
    },
    OffSurface(u32),
    BadFootprint(u32),
    BadNormal(u32),
    PortOvercommit {
        switch: u32,
        attached: usize,
        ports: u32,
    },
    ConnectionOvercommit {
        connections: usize,
        ports: u32,
    },
    DelayMismatch {
        link: u32,
    },
    UnknownEndpoint {
        link: u32,
    },
}

impl std::fmt::Display for FabricIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FabricIssue::DuplicateTileId(id) => write!(f, "duplicate tile id {id}"),
            FabricIssue::TileOverlap { surface, a, b } => {
                write!(f, "tiles {a} and {b} overlap on {}", surface.name())
            }
            FabricIssue::OffSurface(id) => write!(f, "tile {id} lies outside its surface"),
            FabricIssue::BadFootprint(id) => write!(f, "tile {id} footprint is not 1.2 m x 0.6 m"),
            FabricIssue::BadNormal(id) => {
                write!(f, "tile {id} normal is not the inward unit normal")
            }
            FabricIssue::PortOvercommit {
                switch,
                attached,
                ports,
            } => {
                write!(f, "switch {switch} has {attached} links on {ports} ports")
            }
            FabricIssue::ConnectionOvercommit { connections, ports } => {
                write!(
                    f,
                    "{connections} tile connections exceed {ports} switch ports"
                )
            }
            FabricIssue::DelayMismatch { link } => {
                write!(f, "link {link} base delay does not match its length")
            }
            FabricIssue::UnknownEndpoint { link } => {
                write!(f, "link {link} has an unknown endpoint")
            }
        }
    }
}

pub fn validate_fabric(fabric: &Fabric) -> Vec<FabricIssue> {
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    let mut per_surface: BTreeMap<Surface, Vec<&TileNode>> = BTreeMap::new();
    for t in &fabric.tiles {
        if !seen.insert(t.id) {
            issues.push(FabricIssue::DuplicateTileId(t.id));
        }
        if !t.footprint.is_tile_sized() {
            issues.push(FabricIssue::BadFootprint(t.id));
        }
        let extent = fabric.room.surface_extent_mm(t.surface);
        let (u, v) = t.footprint.center_m();
        let expected = fabric.room.surface_point(t.surface, u, v);
        let on_plane = fabric.room.plane_distance(t.surface, t.center).abs() < 1e-9;
        let centered = t
            .center
            .iter()
            .zip(expected.iter())
            .all(|(a, b)| (a - b).abs() < 1e-6);
        if !t.footprint.within(extent) || !on_plane || !centered {
            issues.push(FabricIssue::OffSurface(t.id));
        }
        if t.normal != t.surface.normal() {
            issues.push(FabricIssue::BadNormal(t.id));
        }
        per_surface.entry(t.surface).or_default().push(t);
    }
    for (surface, tiles) in &per_surface {
        for (i, a) in tiles.iter().enumerate() {
            for b in &tiles[i + 1..] {
                if a.footprint.overlaps(&b.footprint) {
                    issues.push(FabricIssue::TileOverlap {
                        surface: *surface,
                        a: a.id,
                        b: b.id,
                    });
                }
            }
        }
    }
    for s in &fabric.switches {
        if s.attached.len() > s.port_count as usize {
            issues.push(FabricIssue::PortOvercommit {
                switch: s.id,
                attached: s.attached.len(),
                ports: s.port_count,
            });
        }
    }
    if fabric.tile_connections() > fabric.total_ports() as usize {
        issues.push(FabricIssue::ConnectionOvercommit {
            connections: fabric.tile_connections(),
            ports: fabric.total_ports(),
        });
    }
    let known = |n: &NodeId| match n {
        NodeId::Central => true,
        NodeId::Switch(s) => (*s as usize) < fabric.switches.len(),
        NodeId::Tile(t) => seen.contains(t),
        NodeId::Rover => false,
    };
    for l in &fabric.links {
        if !known(&l.a) || !known(&l.b) {
            issues.push(FabricIssue::UnknownEndpoint { link: l.id });
        }
        if l.base_delay != delay_for(l.length_mm, fabric.propagation_ps_per_m) {
            issues.push(FabricIssue::DelayMismatch { link: l.id });
        }
    }
    issues
}
