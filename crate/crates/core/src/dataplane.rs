//! Partitioned pub/sub broker on the central node and the traffic it puts on
//! the fabric.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{Direction, Fabric};
use crate::hash::fnv1a64;
use crate::sim::{Action, Engine, Event, NodeId, RunStats, SimTime};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub key: String,
    pub size_bytes: u32,
    pub producer: u32,
    pub produce_time: SimTime,
    pub arrive_time: SimTime,
}

#[derive(Clone, Debug, Default)]
struct Partition {
    /// Offset of `records[0]`.
    base: u64,
    records: VecDeque<Record>,
}

impl Partition {
    fn next_offset(&self) -> u64 {
        self.base + self.records.len() as u64
    }
}

#[derive(Clone, Debug)]
pub struct Topic {
    pub name: String,
    pub retention: usize,
    partitions: Vec<Partition>,
}

impl Topic {
    pub fn partition_count(&self) -> u32 {
        self.partitions.len() as u32
    }

    /// Offsets currently retained in `partition`.
    pub fn retained(&self, partition: u32) -> std::ops::Range<u64> {
        let p = &self.partitions[partition as usize];
        p.base..p.next_offset()
    }

    /// Retained records of `partition` in offset order.
    pub fn records(&self, partition: u32) -> impl Iterator<Item = &Record> {
        self.partitions[partition as usize].records.iter()
    }
}

pub fn partition_for(key: &str, partitions: u32) -> u32 {
    (fnv1a64(key.as_bytes()) % partitions as u64) as u32
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataplaneError {
    #[error("unknown topic {0}")]
    UnknownTopic(String),
    #[error("topic {0} already exists")]
    DuplicateTopic(String),
    #[error("topic needs at least one partition")]
    NoPartitions,
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("{member} is not a member of {group}")]
    NotAMember { group: String, member: String },
    #[error("tile {0} is offline")]
    TileOffline(u32),
    #[error("commit {offset} on {topic}/{partition} beyond delivered {delivered}")]
    CommitBeyondDelivered {
        topic: String,
        partition: u32,
        offset: u64,
        delivered: u64,
    },
}

type PartitionKey = (String, u32);

#[derive(Clone, Debug, Default)]
pub struct ConsumerGroup {
    pub id: String,
    pub topics: Vec<String>,
    pub members: BTreeSet<String>,
    pub assignment: BTreeMap<PartitionKey, String>,
    pub committed: BTreeMap<PartitionKey, u64>,
    position: BTreeMap<PartitionKey, u64>,
    delivered: BTreeMap<PartitionKey, u64>,
    pub rebalances: u64,
}

/// A partition whose next record had already been evicted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Gap {
    pub topic: String,
    pub partition: u32,
    pub expected: u64,
    pub resumed_at: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PollResult {
    pub records: Vec<Record>,
    pub gaps: Vec<Gap>,
}

#[derive(Clone, Debug, Default)]
pub struct Broker {
    pub topics: BTreeMap<String, Topic>,
    pub groups: BTreeMap<String, ConsumerGroup>,
}

impl Broker {
    pub fn new() -> Self {
        Broker::default()
    }

    pub fn create_topic(
        &mut self,
        name: &str,
        partitions: u32,
        retention: usize,
    ) -> Result<(), DataplaneError> {
        if partitions == 0 {
            return Err(DataplaneError::NoPartitions);
        }
        if self.topics.contains_key(name) {
            return Err(DataplaneError::DuplicateTopic(name.to_string()));
        }
        self.topics.insert(
            name.to_string(),
            Topic {
                name: name.to_string(),
                retention: retention.max(1),
                partitions: vec![Partition::default(); partitions as usize],
            },
        );
        Ok(())
    }

    pub fn topic(&self, name: &str) -> Option<&Topic> {
        self.topics.get(name)
    }

    /// Appends at broker arrival; returns `(partition, offset)`.
    pub fn append(
        &mut self,
        topic: &str,
        key: &str,
        size_bytes: u32,
        producer: u32,
        produce_time: SimTime,
        arrive_time: SimTime,
    ) -> Result<(u32, u64), DataplaneError> {
        let t = self
            .topics
            .get_mut(topic)
            .ok_or_else(|| DataplaneError::UnknownTopic(topic.to_string()))?;
        let partition = partition_for(key, t.partition_count());
        let retention = t.retention;
        let p = &mut t.partitions[partition as usize];
        let offset = p.next_offset();
        p.records.push_back(Record {
            topic: topic.to_string(),
            partition,
            offset,
            key: key.to_string(),
            size_bytes,
            producer,
            produce_time,
            arrive_time,
        });
        while p.records.len() > retention {
            p.records.pop_front();
            p.base += 1;
        }
        Ok((partition, offset))
    }

    pub fn create_group(&mut self, id: &str, topics: &[String]) -> Result<(), DataplaneError> {
        for t in topics {
            if !self.topics.contains_key(t) {
                return Err(DataplaneError::UnknownTopic(t.clone()));
            }
        }
        self.groups.insert(
            id.to_string(),
            ConsumerGroup {
                id: id.to_string(),
                topics: topics.to_vec(),
                ..ConsumerGroup::default()
            },
        );
        Ok(())
    }

    fn group_mut(&mut self, id: &str) -> Result<&mut ConsumerGroup, DataplaneError> {
        self.groups
            .get_mut(id)
            .ok_or_else(|| DataplaneError::UnknownGroup(id.to_string()))
    }

    pub fn join(&mut self, group: &str, member: &str) -> Result<(), DataplaneError> {
        self.group_mut(group)?.members.insert(member.to_string());
        self.rebalance(group)
    }

    pub fn leave(&mut self, group: &str, member: &str) -> Result<(), DataplaneError> {
        let g = self.group_mut(group)?;
        if !g.members.remove(member) {
            return Err(DataplaneError::NotAMember {
                group: group.to_string(),
                member: member.to_string(),
            });
        }
        self.rebalance(group)
    }

    /// Range assignment per topic over members in sorted order. Fetch
    /// positions restart from the committed offsets.
    fn rebalance(&mut self, group: &str) -> Result<(), DataplaneError> {
        let counts: Vec<(String, u32)> = {
            let g = &self.groups[group];
            g.topics
                .iter()
                .map(|t| (t.clone(), self.topics[t].partition_count()))
                .collect()
        };
        let g = self.group_mut(group)?;
        g.assignment.clear();
        let members: Vec<String> = g.members.iter().cloned().collect();
        if !members.is_empty() {
            for (topic, parts) in counts {
                let m = members.len() as u32;
                let (per, extra) = (parts / m, parts % m);
                let mut next = 0;
                for (i, member) in members.iter().enumerate() {
                    let n = per + u32::from((i as u32) < extra);
                    for p in next..next + n {
                        g.assignment.insert((topic.clone(), p), member.clone());
                    }
                    next += n;
                }
            }
        }
        g.position = g.committed.clone();
        g.delivered = g.committed.clone();
        g.rebalances += 1;
        Ok(())
    }

    pub fn assigned(&self, group: &str, member: &str) -> Vec<PartitionKey> {
        self.groups
            .get(group)
            .map(|g| {
                g.assignment
                    .iter()
                    .filter(|(_, m)| m.as_str() == member)
                    .map(|(k, _)| k.clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn poll(
        &mut self,
        group: &str,
        member: &str,
        max_records: usize,
    ) -> Result<PollResult, DataplaneError> {
        let g = self
            .groups
            .get_mut(group)
            .ok_or_else(|| DataplaneError::UnknownGroup(group.to_string()))?;
        if !g.members.contains(member) {
            return Err(DataplaneError::NotAMember {
                group: group.to_string(),
                member: member.to_string(),
            });
        }
        let mut out = PollResult::default();
        let keys: Vec<PartitionKey> = g
            .assignment
            .iter()
            .filter(|(_, m)| m.as_str() == member)
            .map(|(k, _)| k.clone())
            .collect();
        for key in keys {
            if out.records.len() >= max_records {
                break;
            }
            let part = &self.topics[&key.0].partitions[key.1 as usize];
            let pos = g.position.get(&key).copied().unwrap_or(0);
            let mut at = pos;
            if at < part.base {
                out.gaps.push(Gap {
                    topic: key.0.clone(),
                    partition: key.1,
                    expected: pos,
                    resumed_at: part.base,
                });
                at = part.base;
            }
            while at < part.next_offset() && out.records.len() < max_records {
                out.records
                    .push(part.records[(at - part.base) as usize].clone());
                at += 1;
            }
            g.position.insert(key.clone(), at);
            g.delivered.insert(key, at);
        }
        Ok(out)
    }

    pub fn commit(
        &mut self,
        group: &str,
        topic: &str,
        partition: u32,
        offset: u64,
    ) -> Result<(), DataplaneError> {
        let g = self.group_mut(group)?;
        let key = (topic.to_string(), partition);
        let delivered = g.delivered.get(&key).copied().unwrap_or(0);
        if offset > delivered {
            return Err(DataplaneError::CommitBeyondDelivered {
                topic: topic.to_string(),
                partition,
                offset,
                delivered,
            });
        }
        g.committed.insert(key, offset);
        Ok(())
    }

    /// Commits everything delivered to `member` so far.
    pub fn commit_delivered(&mut self, group: &str, member: &str) -> Result<(), DataplaneError> {
        let keys = self.assigned(group, member);
        let g = self.group_mut(group)?;
        for k in keys {
            if let Some(&d) = g.delivered.get(&k) {
                g.committed.insert(k, d);
            }
        }
        Ok(())
    }

    pub fn write_topic_dump(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in self.topics.values() {
            for p in &t.partitions {
                for r in &p.records {
                    serde_json::to_writer(&mut w, r)?;
                    writeln!(w)?;
                }
            }
        }
        w.flush()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    pub partitions: u32,
    pub retention: usize,
}

impl Default for TopicSpec {
    fn default() -> Self {
        TopicSpec {
            name: "telemetry".into(),
            partitions: 4,
            retention: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProducerSpec {
    pub topic: String,
    pub record_bytes: u32,
    pub interval_ms: u64,
    /// Producing tiles; every tile when absent.
    pub tiles: Option<Vec<u32>>,
}

impl Default for ProducerSpec {
    fn default() -> Self {
        ProducerSpec {
            topic: "telemetry".into(),
            record_bytes: 1024,
            interval_ms: 100,
            tiles: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSpec {
    pub id: String,
    pub topics: Vec<String>,
    pub members: u32,
    pub poll_interval_ms: u64,
    pub max_records: usize,
}

impl Default for GroupSpec {
    fn default() -> Self {
        GroupSpec {
            id: "archive".into(),
            topics: vec!["telemetry".into()],
            members: 2,
            poll_interval_ms: 250,
            max_records: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSpec {
    pub group: String,
    pub member: u32,
    pub leave_at_s: f64,
    /// Leaves without committing what it was delivered.
    #[serde(default)]
    pub crash: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataplaneConfig {
    pub topics: Vec<TopicSpec>,
    pub producers: Vec<ProducerSpec>,
    pub groups: Vec<GroupSpec>,
    pub churn: Vec<ChurnSpec>,
    pub load_window_ms: u64,
}

impl Default for DataplaneConfig {
    fn default() -> Self {
        DataplaneConfig {
            topics: vec![TopicSpec::default()],
            producers: vec![ProducerSpec::default()],
            groups: vec![
                GroupSpec::default(),
                GroupSpec {
                    id: "monitor".into(),
                    members: 1,
                    poll_interval_ms: 1_000,
                    ..GroupSpec::default()
                },
            ],
            churn: vec![],
            load_window_ms: 1_000,
        }
    }
}

impl DataplaneConfig {
    fn producer_tiles<'a>(&'a self, spec: &'a ProducerSpec, fabric: &'a Fabric) -> Vec<u32> {
        match &spec.tiles {
            Some(v) => v
                .iter()
                .copied()
                .filter(|&t| (t as usize) < fabric.tiles.len())
                .collect(),
            None => fabric.tiles.iter().map(|t| t.id).collect(),
        }
    }

    /// Long-run offered load per link in bits per second.
    pub fn offered_load_bps(&self, fabric: &Fabric) -> BTreeMap<u32, f64> {
        let mut load: BTreeMap<u32, f64> = BTreeMap::new();
        for spec in &self.producers {
            let rate = spec.record_bytes as f64 * 8.0 / (spec.interval_ms.max(1) as f64 / 1000.0);
            for tile in self.producer_tiles(spec, fabric) {
                if let Ok(path) = fabric.path_to_tile(tile) {
                    for link in path {
                        *load.entry(link).or_default() += rate;
                    }
                }
            }
        }
        load
    }
}

/// Bytes that completed a hop over `link`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficSample {
    pub time: SimTime,
    pub link: u32,
    pub bytes: u32,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupStats {
    pub delivered: u64,
    pub gaps: u64,
    pub max_offset_seen: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DataplaneSummary {
    pub produced: u64,
    pub publish_errors: u64,
    pub appended: u64,
    pub appended_bytes: u64,
    pub dropped: u64,
    pub dropped_bytes: u64,
    pub groups: BTreeMap<String, GroupStats>,
    pub link_bytes: BTreeMap<u32, u64>,
}

#[derive(Clone, Debug)]
pub struct DataplaneReport {
    pub broker: Broker,
    pub traffic: Vec<TrafficSample>,
    pub summary: DataplaneSummary,
    pub stats: RunStats,
}

impl DataplaneReport {
    /// Bits per second over `link` in `[end - window, end)`.
    pub fn link_load(&self, link: u32, end: SimTime, window: SimTime) -> f64 {
        if window == SimTime::ZERO {
            return 0.0;
        }
        let start = end.saturating_sub(window);
        let bytes: u64 = self
            .traffic
            .iter()
            .filter(|s| s.link == link && s.time >= start && s.time < end)
            .map(|s| s.bytes as u64)
            .sum();
        bytes as f64 * 8.0 / window.as_secs_f64()
    }

    pub fn write_traffic_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_ps", "link", "bytes"])?;
        for s in &self.traffic {
            w.write_record([
                s.time.as_ps().to_string(),
                s.link.to_string(),
                s.bytes.to_string(),
            ])?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone)]
enum DataAction {
    Produce {
        producer: usize,
        tile: u32,
    },
    Hop {
        record: InFlight,
        hop: usize,
    },
    Poll {
        group: usize,
        member: u32,
    },
    Leave {
        group: usize,
        member: u32,
        crash: bool,
    },
}

#[derive(Debug, Clone)]
struct InFlight {
    topic: String,
    tile: u32,
    size: u32,
    produce_time: SimTime,
    /// Upstream traversal order: tile link, then uplink.
    links: Vec<u32>,
}

impl Action for DataAction {
    fn module(&self) -> &'static str {
        "dataplane"
    }
}

fn serialization(bytes: u32, bandwidth_bps: u64) -> SimTime {
    if bandwidth_bps == 0 {
        return SimTime::ZERO;
    }
    SimTime::from_ps((bytes as u128 * 8 * 1_000_000_000_000 / bandwidth_bps as u128) as u64)
}

fn member_name(i: u32) -> String {
    format!("m{i:03}")
}

/// Runs producers on every configured tile, carries records up the fabric to
/// the broker and lets consumer groups poll and commit.
pub fn run_dataplane(
    fabric: &Fabric,
    config: &DataplaneConfig,
    offline: &BTreeMap<u32, SimTime>,
    duration: SimTime,
) -> Result<DataplaneReport, DataplaneError> {
    let mut broker = Broker::new();
    for t in &config.topics {
        broker.create_topic(&t.name, t.partitions, t.retention)?;
    }
    for g in &config.groups {
        broker.create_group(&g.id, &g.topics)?;
        for m in 0..g.members {
            broker.join(&g.id, &member_name(m))?;
        }
    }
    let mut engine: Engine<DataAction> = Engine::new();
    for (i, spec) in config.producers.iter().enumerate() {
        if broker.topic(&spec.topic).is_none() {
            return Err(DataplaneError::UnknownTopic(spec.topic.clone()));
        }
        let tiles = config.producer_tiles(spec, fabric);
        let interval = SimTime::from_ms(spec.interval_ms.max(1)).as_ps();
        let n = tiles.len().max(1) as u64;
        for (k, &tile) in tiles.iter().enumerate() {
            // Producers are staggered evenly across one interval.
            let phase = SimTime::from_ps(interval * k as u64 / n);
            engine.schedule(
                phase,
                NodeId::Tile(tile),
                DataAction::Produce { producer: i, tile },
            );
        }
    }
    for (gi, g) in config.groups.iter().enumerate() {
        for m in 0..g.members {
            engine.schedule(
                SimTime::from_ms(g.poll_interval_ms.max(1)),
                NodeId::Central,
                DataAction::Poll {
                    group: gi,
                    member: m,
                },
            );
        }
    }
    for c in &config.churn {
        if let Some(gi) = config.groups.iter().position(|g| g.id == c.group) {
            engine.schedule(
                SimTime::from_secs_f64(c.leave_at_s),
                NodeId::Central,
                DataAction::Leave {
                    group: gi,
                    member: c.member,
                    crash: c.crash,
                },
            );
        }
    }

    let mut summary = DataplaneSummary::default();
    for g in &config.groups {
        summary.groups.insert(g.id.clone(), GroupStats::default());
    }
    let mut traffic = Vec::new();
    let mut left: BTreeSet<(usize, u32)> = BTreeSet::new();
    let is_offline = |tile: u32, t: SimTime| offline.get(&tile).is_some_and(|&off| off <= t);

    let mut failure = None;
    let stats = engine.run_until(
        duration,
        &mut |e: &mut Engine<DataAction>, ev: Event<DataAction>| {
            let now = ev.fire_at;
            match ev.payload {
                DataAction::Produce { producer, tile } => {
                    let spec = &config.producers[producer];
                    e.schedule(
                        now + SimTime::from_ms(spec.interval_ms.max(1)),
                        ev.target,
                        DataAction::Produce { producer, tile },
                    );
                    summary.produced += 1;
                    if is_offline(tile, now) {
                        summary.publish_errors += 1;
                        return;
                    }
                    let links = match fabric.path_to_tile(tile) {
                        Ok(mut p) => {
                            p.reverse();
                            p.to_vec()
                        }
                        Err(_) => return,
                    };
                    let record = InFlight {
                        topic: spec.topic.clone(),
                        tile,
                        size: spec.record_bytes,
                        produce_time: now,
                        links,
                    };
                    let link = fabric.link(record.links[0]);
                    let ser = serialization(record.size, link.bandwidth_bps);
                    let at = now + link.delay(Direction::Up) + ser;
                    e.schedule(at, NodeId::Tile(tile), DataAction::Hop { record, hop: 0 });
                }
                DataAction::Hop { record, hop } => {
                    if is_offline(record.tile, now) {
                        summary.dropped += 1;
                        summary.dropped_bytes += record.size as u64;
                        return;
                    }
                    let link_id = record.links[hop];
                    traffic.push(TrafficSample {
                        time: now,
                        link: link_id,
                        bytes: record.size,
                    });
                    *summary.link_bytes.entry(link_id).or_default() += record.size as u64;
                    if hop + 1 < record.links.len() {
                        let link = fabric.link(record.links[hop + 1]);
                        let ser = serialization(record.size, link.bandwidth_bps);
                        let at = now + link.delay(Direction::Up) + ser;
                        e.schedule(
                            at,
                            ev.target,
                            DataAction::Hop {
                                record,
                                hop: hop + 1,
                            },
                        );
                        return;
                    }
                    let key = record.tile.to_string();
                    match broker.append(
                        &record.topic,
                        &key,
                        record.size,
                        record.tile,
                        record.produce_time,
                        now,
                    ) {
                        Ok(_) => {
                            summary.appended += 1;
                            summary.appended_bytes += record.size as u64;
                        }
                        Err(err) => failure = Some(err),
                    }
                }
                DataAction::Poll { group, member } => {
                    if left.contains(&(group, member)) {
                        return;
                    }
                    let g = &config.groups[group];
                    e.schedule(
                        now + SimTime::from_ms(g.poll_interval_ms.max(1)),
                        ev.target,
                        DataAction::Poll { group, member },
                    );
                    let name = member_name(member);
                    if let Ok(res) = broker.poll(&g.id, &name, g.max_records) {
                        let st = summary.groups.get_mut(&g.id).unwrap();
                        st.delivered += res.records.len() as u64;
                        st.gaps += res.gaps.len() as u64;
                        for r in &res.records {
                            let m = st
                                .max_offset_seen
                                .entry(format!("{}/{}", r.topic, r.partition))
                                .or_default();
                            *m = (*m).max(r.offset);
                        }
                        let _ = broker.commit_delivered(&g.id, &name);
                    }
                }
                DataAction::Leave {
                    group,
                    member,
                    crash,
                } => {
                    let g = &config.groups[group];
                    let name = member_name(member);
                    if !crash {
                        let _ = broker.commit_delivered(&g.id, &name);
                    }
                    if broker.leave(&g.id, &name).is_ok() {
                        left.insert((group, member));
                    }
                }
            }
        },
    );
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(DataplaneReport {
        broker,
        traffic,
        summary,
        stats,
    })
}
