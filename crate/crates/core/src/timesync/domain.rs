use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::fabric::{Direction, Fabric};
use crate::sim::{Action, Engine, Event, NodeId, RngStream, SimTime, TraceRecord};

use super::clock::{ClockParams, LocalClock};
use super::protocol::{
    transparent_correct, two_step_offset, Corrections, ExchangeTimestamps, MessageKind, PtpMessage,
};
use super::report::{ExchangeRecord, ResidualSample, SyncReport};
use super::servo::{ServoConfig, ServoState};

/// Protocol and noise configuration for one synchronization domain. The
/// central node is the grandmaster and holds true time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub sync_interval_ms: u64,
    /// Slave waits this long after FollowUp before sending DelayReq.
    pub delay_req_delay_us: u64,
    pub sample_interval_ms: u64,
    pub sample_phase_ms: u64,
    pub granularity_ps: u64,
    pub initial_offset_max_us: f64,
    pub freq_error_max_ppm: f64,
    pub rw_sigma_ppm_per_sqrt_s: f64,
    pub switch_freq_error_max_ppm: f64,
    pub switch_granularity_ps: u64,
    pub switch_rw_sigma_ppm_per_sqrt_s: f64,
    /// Switch forwarding time between ingress and egress.
    pub residence_ns: u64,
    /// Linear coupling of link utilisation into jitter sigma.
    pub load_coupling: f64,
    pub servo: ServoConfig,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            sync_interval_ms: 1_000,
            delay_req_delay_us: 1_000,
            sample_interval_ms: 1_000,
            sample_phase_ms: 500,
            granularity_ps: 8_000,
            initial_offset_max_us: 1_000.0,
            freq_error_max_ppm: 10.0,
            rw_sigma_ppm_per_sqrt_s: 0.05,
            switch_freq_error_max_ppm: 10.0,
            switch_granularity_ps: 8_000,
            switch_rw_sigma_ppm_per_sqrt_s: 0.05,
            residence_ns: 1_000,
            load_coupling: 1.0,
            servo: ServoConfig::default(),
        }
    }
}

impl SyncConfig {
    /// No drift, no random walk, 1 ps timestamps. Initial phase offsets are kept.
    pub fn noiseless() -> Self {
        SyncConfig {
            granularity_ps: 1,
            freq_error_max_ppm: 0.0,
            rw_sigma_ppm_per_sqrt_s: 0.0,
            switch_freq_error_max_ppm: 0.0,
            switch_granularity_ps: 1,
            switch_rw_sigma_ppm_per_sqrt_s: 0.0,
            ..SyncConfig::default()
        }
    }

    pub fn sync_interval(&self) -> SimTime {
        SimTime::from_ms(self.sync_interval_ms)
    }
}

/// Run-time inputs coming from other stages.
#[derive(Clone, Debug, Default)]
pub struct SyncInputs {
    pub seed: u64,
    /// Tiles losing power, and when.
    pub offline: BTreeMap<u32, SimTime>,
    /// Offered load per link id, bits per second.
    pub link_load_bps: BTreeMap<u32, f64>,
    pub trace: bool,
}

#[derive(Clone, Debug)]
struct Path {
    links: Vec<u32>,
    /// Switch between consecutive links, in downstream order.
    via: Vec<u32>,
}

impl Path {
    fn link_at(&self, dir: Direction, k: usize) -> u32 {
        match dir {
            Direction::Down => self.links[k],
            Direction::Up => self.links[self.links.len() - 1 - k],
        }
    }

    fn switch_after(&self, dir: Direction, k: usize) -> u32 {
        match dir {
            Direction::Down => self.via[k],
            Direction::Up => self.via[self.via.len() - 1 - k],
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Pending {
    t1: Option<i64>,
    t2: Option<i64>,
    t3: Option<i64>,
    sync_corr: i64,
    true_offset: i64,
}

struct Session {
    master: usize,
    slave: usize,
    slave_node: NodeId,
    path: Path,
    seq: u32,
    servo: ServoState,
    pending: BTreeMap<u32, Pending>,
    lock_time: Option<SimTime>,
}

#[derive(Debug, Clone)]
enum PtpAction {
    SyncTick {
        session: usize,
    },
    Arrive {
        session: usize,
        dir: Direction,
        traversed: usize,
        msg: PtpMessage,
    },
    Egress {
        session: usize,
        dir: Direction,
        traversed: usize,
        msg: PtpMessage,
        ingress_ts: i64,
    },
    SendDelayReq {
        session: usize,
        seq: u32,
    },
    Sample,
    Offline {
        tile: u32,
    },
}

impl Action for PtpAction {
    fn module(&self) -> &'static str {
        "timesync"
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SwitchMode {
    Transparent,
    Boundary,
    Plain,
}

struct Domain<'a> {
    fabric: &'a Fabric,
    config: &'a SyncConfig,
    clocks: Vec<LocalClock>,
    nodes: Vec<NodeId>,
    online: Vec<bool>,
    sessions: Vec<Session>,
    switch_mode: Vec<SwitchMode>,
    jitter: HashMap<(u32, Direction), RngStream>,
    jitter_root: RngStream,
    fifo: HashMap<(u32, Direction), SimTime>,
    residence: HashMap<(usize, u32, MessageKind, u32), i64>,
    link_sigma: HashMap<u32, f64>,
    samples: Vec<ResidualSample>,
    exchanges: Vec<ExchangeRecord>,
    last_sent: BTreeMap<NodeId, SimTime>,
}

impl Domain<'_> {
    fn clock_index(&self, node: NodeId) -> usize {
        match node {
            NodeId::Central => 0,
            NodeId::Switch(s) => 1 + s as usize,
            NodeId::Tile(t) => 1 + self.fabric.switches.len() + t as usize,
            NodeId::Rover => unreachable!("rover has no PTP clock"),
        }
    }

    fn jitter_ps(&mut self, link: u32, dir: Direction) -> u64 {
        let sigma = self.link_sigma[&link];
        if sigma <= 0.0 {
            return 0;
        }
        let root = &self.jitter_root;
        let rng = self
            .jitter
            .entry((link, dir))
            .or_insert_with(|| root.derive(format!("{link}/{dir:?}")));
        // Mean and standard deviation both equal sigma.
        let s2 = std::f64::consts::LN_2;
        let mu = sigma.ln() - s2 / 2.0;
        rng.lognormal(mu, s2.sqrt()).round() as u64
    }

    fn transmit(
        &mut self,
        engine: &mut Engine<PtpAction>,
        session: usize,
        dir: Direction,
        traversed: usize,
        msg: PtpMessage,
    ) {
        let link_id = self.sessions[session].path.link_at(dir, traversed);
        let link = self.fabric.link(link_id);
        let base = link.delay(dir);
        let jitter = self.jitter_ps(link_id, dir);
        let mut arrive = engine.now() + base + SimTime::from_ps(jitter);
        let last = self.fifo.entry((link_id, dir)).or_insert(SimTime::ZERO);
        if arrive < *last {
            arrive = *last;
        }
        *last = arrive;
        let target = match (
            dir,
            traversed + 1 == self.sessions[session].path.links.len(),
        ) {
            (Direction::Down, true) => self.sessions[session].slave_node,
            (Direction::Up, true) => self.nodes[self.sessions[session].master],
            _ => NodeId::Switch(self.sessions[session].path.switch_after(dir, traversed)),
        };
        engine.schedule(
            arrive,
            target,
            PtpAction::Arrive {
                session,
                dir,
                traversed: traversed + 1,
                msg,
            },
        );
    }

    fn originate(&mut self, node: usize, now: SimTime) {
        self.last_sent.insert(self.nodes[node], now);
    }

    fn handle(&mut self, engine: &mut Engine<PtpAction>, ev: Event<PtpAction>) {
        let now = ev.fire_at;
        match ev.payload {
            PtpAction::SyncTick { session } => {
                let interval = self.config.sync_interval();
                engine.schedule(now + interval, ev.target, PtpAction::SyncTick { session });
                let master = self.sessions[session].master;
                if !self.online[master] {
                    return;
                }
                let s = &mut self.sessions[session];
                s.seq = s.seq.wrapping_add(1);
                let seq = s.seq;
                let t1 = self.clocks[master].read(now);
                self.originate(master, now);
                self.transmit(
                    engine,
                    session,
                    Direction::Down,
                    0,
                    PtpMessage::new(MessageKind::Sync, seq, 0),
                );
                self.transmit(
                    engine,
                    session,
                    Direction::Down,
                    0,
                    PtpMessage::new(MessageKind::FollowUp, seq, t1),
                );
            }
            PtpAction::Arrive {
                session,
                dir,
                traversed,
                msg,
            } => {
                let n = self.sessions[session].path.links.len();
                if traversed < n {
                    let sw = self.sessions[session].path.switch_after(dir, traversed - 1);
                    let idx = self.clock_index(NodeId::Switch(sw));
                    let ingress_ts = self.clocks[idx].read(now);
                    let residence = SimTime::from_ns(self.config.residence_ns);
                    engine.schedule(
                        now + residence,
                        NodeId::Switch(sw),
                        PtpAction::Egress {
                            session,
                            dir,
                            traversed,
                            msg,
                            ingress_ts,
                        },
                    );
                    return;
                }
                match dir {
                    Direction::Down => self.slave_receive(engine, session, msg, now),
                    Direction::Up => self.master_receive(engine, session, msg, now),
                }
            }
            PtpAction::Egress {
                session,
                dir,
                traversed,
                mut msg,
                ingress_ts,
            } => {
                let sw = self.sessions[session].path.switch_after(dir, traversed - 1);
                if self.switch_mode[sw as usize] == SwitchMode::Transparent {
                    let idx = self.clock_index(NodeId::Switch(sw));
                    let measured = self.clocks[idx].read(now) - ingress_ts;
                    match msg.kind {
                        MessageKind::Sync | MessageKind::DelayReq => {
                            self.residence
                                .insert((session, msg.seq, msg.kind, sw), measured);
                        }
                        MessageKind::FollowUp => {
                            let r = self
                                .residence
                                .remove(&(session, msg.seq, MessageKind::Sync, sw))
                                .unwrap_or(0);
                            msg = transparent_correct(msg, r);
                        }
                        MessageKind::DelayResp => {
                            let r = self
                                .residence
                                .remove(&(session, msg.seq, MessageKind::DelayReq, sw))
                                .unwrap_or(0);
                            msg = transparent_correct(msg, r);
                        }
                    }
                }
                self.transmit(engine, session, dir, traversed, msg);
            }
            PtpAction::SendDelayReq { session, seq } => {
                let slave = self.sessions[session].slave;
                if !self.online[slave] {
                    return;
                }
                let t3 = self.clocks[slave].read(now);
                match self.sessions[session].pending.get_mut(&seq) {
                    Some(p) => p.t3 = Some(t3),
                    None => return,
                }
                self.originate(slave, now);
                self.transmit(
                    engine,
                    session,
                    Direction::Up,
                    0,
                    PtpMessage::new(MessageKind::DelayReq, seq, 0),
                );
            }
            PtpAction::Sample => {
                let interval = SimTime::from_ms(self.config.sample_interval_ms);
                engine.schedule(now + interval, NodeId::Central, PtpAction::Sample);
                let gm = self.clocks[0].offset_ps(now);
                for i in 0..self.sessions.len() {
                    let slave = self.sessions[i].slave;
                    let residual = self.clocks[slave].offset_ps(now) - gm;
                    self.samples.push(ResidualSample {
                        true_time: now,
                        node: self.sessions[i].slave_node,
                        residual_ps: residual,
                        online: self.online[slave],
                    });
                }
            }
            PtpAction::Offline { tile } => {
                let idx = self.clock_index(NodeId::Tile(tile));
                self.online[idx] = false;
                // Power loss: discipline state is gone, the oscillator free-runs.
                self.clocks[idx].set_adjust_ppm(now, 0.0);
                for s in self.sessions.iter_mut().filter(|s| s.slave == idx) {
                    s.servo.reset();
                    s.pending.clear();
                }
            }
        }
    }

    fn slave_receive(
        &mut self,
        engine: &mut Engine<PtpAction>,
        session: usize,
        msg: PtpMessage,
        now: SimTime,
    ) {
        let slave = self.sessions[session].slave;
        if !self.online[slave] {
            return;
        }
        match msg.kind {
            MessageKind::Sync => {
                let t2 = self.clocks[slave].read(now);
                let master = self.sessions[session].master;
                let true_offset =
                    self.clocks[slave].offset_ps(now) - self.clocks[master].offset_ps(now);
                let p = self.sessions[session].pending.entry(msg.seq).or_default();
                p.t2 = Some(t2);
                p.true_offset = true_offset;
                self.maybe_delay_req(engine, session, msg.seq, now);
            }
            MessageKind::FollowUp => {
                let p = self.sessions[session].pending.entry(msg.seq).or_default();
                p.t1 = Some(msg.origin_timestamp);
                p.sync_corr = msg.correction_ps;
                self.maybe_delay_req(engine, session, msg.seq, now);
            }
            MessageKind::DelayResp => self.complete_exchange(session, msg, now),
            MessageKind::DelayReq => {}
        }
    }

    fn maybe_delay_req(
        &mut self,
        engine: &mut Engine<PtpAction>,
        session: usize,
        seq: u32,
        now: SimTime,
    ) {
        let s = &mut self.sessions[session];
        // Only the newest exchange is kept.
        s.pending.retain(|&k, _| k >= seq);
        let ready = s
            .pending
            .get(&seq)
            .is_some_and(|p| p.t1.is_some() && p.t2.is_some() && p.t3.is_none());
        if ready {
            let at = now + SimTime::from_us(self.config.delay_req_delay_us);
            let node = s.slave_node;
            engine.schedule(at, node, PtpAction::SendDelayReq { session, seq });
        }
    }

    fn master_receive(
        &mut self,
        engine: &mut Engine<PtpAction>,
        session: usize,
        msg: PtpMessage,
        now: SimTime,
    ) {
        if msg.kind != MessageKind::DelayReq {
            return;
        }
        let master = self.sessions[session].master;
        if !self.online[master] {
            return;
        }
        let t4 = self.clocks[master].read(now);
        let mut resp = PtpMessage::new(MessageKind::DelayResp, msg.seq, t4);
        resp.correction_ps = msg.correction_ps;
        self.originate(master, now);
        self.transmit(engine, session, Direction::Down, 0, resp);
    }

    fn complete_exchange(&mut self, session: usize, msg: PtpMessage, now: SimTime) {
        let s = &mut self.sessions[session];
        let Some(p) = s.pending.remove(&msg.seq) else {
            return;
        };
        let (Some(t1), Some(t2), Some(t3)) = (p.t1, p.t2, p.t3) else {
            return;
        };
        let ts = ExchangeTimestamps {
            t1,
            t2,
            t3,
            t4: msg.origin_timestamp,
        };
        let est = two_step_offset(
            ts,
            Corrections {
                sync_ps: p.sync_corr,
                delay_req_ps: msg.correction_ps,
            },
        );
        self.exchanges.push(ExchangeRecord {
            true_time: now,
            node: s.slave_node,
            seq: msg.seq,
            timestamps: ts,
            sync_correction_ps: p.sync_corr,
            delay_req_correction_ps: msg.correction_ps,
            offset_ps: est.offset_ps,
            mean_path_delay_ps: est.mean_path_delay_ps,
            true_offset_ps: p.true_offset,
        });
        let clock = &mut self.clocks[s.slave];
        if s.servo.wants_step(est.offset_ps) {
            clock.step(now, -est.offset_ps);
            s.servo.note_step();
        } else {
            let adj = s.servo.update(est.offset_ps);
            clock.set_adjust_ppm(now, adj);
        }
        if s.servo.locked && s.lock_time.is_none() {
            s.lock_time = Some(now);
        }
    }
}

fn clock_for(
    rng: &RngStream,
    node: NodeId,
    params: (f64, f64, f64, u64),
    walk: &RngStream,
) -> LocalClock {
    let (offset_max_us, freq_max_ppm, rw, granularity) = params;
    let mut init = rng.derive(node);
    let initial_offset_ps = (init.uniform(-1.0, 1.0) * offset_max_us * 1e6).round() as i64;
    let freq_error_ppm = init.uniform(-1.0, 1.0) * freq_max_ppm;
    LocalClock::new(
        ClockParams {
            initial_offset_ps,
            freq_error_ppm,
            rw_sigma_ppm_per_sqrt_s: rw,
            granularity_ps: granularity,
            walk_step: SimTime::from_secs(1),
        },
        (rw > 0.0).then(|| walk.derive(node)),
    )
}

/// Runs periodic two-step exchanges between the grandmaster and every tile
/// (through transparent, boundary or plain switches) and samples residual
/// offsets against true time.
pub fn run_sync_domain(
    fabric: &Fabric,
    config: &SyncConfig,
    duration: SimTime,
    inputs: &SyncInputs,
) -> SyncReport {
    let init_rng = RngStream::new(inputs.seed, "clock_init");
    let walk_rng = RngStream::new(inputs.seed, "oscillator_walk");

    let mut nodes = vec![NodeId::Central];
    nodes.extend(fabric.switches.iter().map(|s| NodeId::Switch(s.id)));
    nodes.extend(fabric.tiles.iter().map(|t| t.node()));

    let mut clocks = Vec::with_capacity(nodes.len());
    clocks.push(LocalClock::new(
        ClockParams {
            granularity_ps: config.granularity_ps,
            ..ClockParams::default()
        },
        None,
    ));
    let switch_params = (
        config.initial_offset_max_us,
        config.switch_freq_error_max_ppm,
        config.switch_rw_sigma_ppm_per_sqrt_s,
        config.switch_granularity_ps,
    );
    let tile_params = (
        config.initial_offset_max_us,
        config.freq_error_max_ppm,
        config.rw_sigma_ppm_per_sqrt_s,
        config.granularity_ps,
    );
    for &n in &nodes[1..] {
        let params = if matches!(n, NodeId::Switch(_)) {
            switch_params
        } else {
            tile_params
        };
        clocks.push(clock_for(&init_rng, n, params, &walk_rng));
    }

    let switch_mode: Vec<SwitchMode> = fabric
        .switches
        .iter()
        .map(|s| {
            if s.boundary_clock {
                SwitchMode::Boundary
            } else if s.transparent_clock {
                SwitchMode::Transparent
            } else {
                SwitchMode::Plain
            }
        })
        .collect();

    let interval = config.sync_interval();
    let n_switches = fabric.switches.len();
    let mut sessions = Vec::new();
    let new_session = |master: usize, slave: usize, slave_node: NodeId, path: Path| Session {
        master,
        slave,
        slave_node,
        path,
        seq: 0,
        servo: ServoState::new(config.servo, interval),
        pending: BTreeMap::new(),
        lock_time: None,
    };
    for s in &fabric.switches {
        if switch_mode[s.id as usize] == SwitchMode::Boundary {
            sessions.push(new_session(
                0,
                1 + s.id as usize,
                NodeId::Switch(s.id),
                Path {
                    links: vec![s.uplink],
                    via: vec![],
                },
            ));
        }
    }
    for t in &fabric.tiles {
        let sw = fabric.switch(t.switch);
        let slave = 1 + n_switches + t.id as usize;
        let session = if switch_mode[sw.id as usize] == SwitchMode::Boundary {
            new_session(
                1 + sw.id as usize,
                slave,
                t.node(),
                Path {
                    links: vec![t.link],
                    via: vec![],
                },
            )
        } else {
            new_session(
                0,
                slave,
                t.node(),
                Path {
                    links: vec![sw.uplink, t.link],
                    via: vec![sw.id],
                },
            )
        };
        sessions.push(session);
    }

    let link_sigma = fabric
        .links
        .iter()
        .map(|l| {
            let load = inputs.link_load_bps.get(&l.id).copied().unwrap_or(0.0);
            (l.id, l.effective_sigma_ps(load, config.load_coupling))
        })
        .collect();

    let mut domain = Domain {
        fabric,
        config,
        online: vec![true; clocks.len()],
        clocks,
        nodes,
        sessions,
        switch_mode,
        jitter: HashMap::new(),
        jitter_root: RngStream::new(inputs.seed, "link_jitter"),
        fifo: HashMap::new(),
        residence: HashMap::new(),
        link_sigma,
        samples: Vec::new(),
        exchanges: Vec::new(),
        last_sent: BTreeMap::new(),
    };

    let mut engine = Engine::new().with_trace(inputs.trace);
    for (i, s) in domain.sessions.iter().enumerate() {
        engine.schedule(
            SimTime::ZERO,
            domain.nodes[s.master],
            PtpAction::SyncTick { session: i },
        );
    }
    engine.schedule(
        SimTime::from_ms(config.sample_phase_ms),
        NodeId::Central,
        PtpAction::Sample,
    );
    for (&tile, &at) in &inputs.offline {
        if (tile as usize) < fabric.tiles.len() {
            engine.schedule(at, NodeId::Tile(tile), PtpAction::Offline { tile });
        }
    }
    let stats = engine.run_until(
        duration,
        &mut |e: &mut Engine<PtpAction>, ev: Event<PtpAction>| domain.handle(e, ev),
    );
    let trace: Vec<TraceRecord> = engine.take_trace();

    let lock_times: BTreeMap<NodeId, Option<SimTime>> = domain
        .sessions
        .iter()
        .map(|s| (s.slave_node, s.lock_time))
        .collect();
    SyncReport::new(
        domain.samples,
        domain.exchanges,
        lock_times,
        inputs.offline.clone(),
        domain.last_sent,
        stats,
        trace,
    )
}
