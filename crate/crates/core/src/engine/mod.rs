//! Frame-by-frame simulation loop.
//!
//! A run admits the previous frame's Poisson arrivals, plays the signaling
//! section and the data section mini-slot by mini-slot through
//! [`channel::resolve`], resets the per-frame reservation state and finally
//! moves the nodes. Every step is driven by seeded streams from [`crate::rng`],
//! so a scenario and its seed fully determine the metrics and the trace.

mod infinite;
mod metrics;
mod rsv_frame;
mod traffic;

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{self, ChannelError, Mobility, MobilityModel, Topology};
use crate::frame::{frame_duration_s, FrameConfig, NodeId, Packet, SlotSet, Transmission};
use crate::rng::{self, Stream};
use crate::rsv::{RsvError, RsvNode, RsvOptions};
use crate::trace::{Event, Outcome, Phase, Record};
use crate::{cata, frame::Observation};

pub use infinite::{run_infinite_population, PopulationFrame, PopulationParams};
pub use metrics::{collect_metrics, Metrics, MetricsCollector, MetricsWindow};
pub use traffic::{PacketSize, Traffic, TrafficPattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    MacRsv,
    Cata,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::MacRsv => "mac-rsv",
            Protocol::Cata => "cata",
        }
    }
}

/// A pre-determined RTS. In any frame where a node has script entries it
/// sends exactly those RTSs and does not contend on its own; a packet covering
/// the named slots is queued at the start of that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedRts {
    pub frame: u64,
    pub triple: usize,
    pub node: NodeId,
    pub dst: NodeId,
    pub slots: SlotSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub frame: FrameConfig,
    pub persistence_p: f64,
    pub rsv: RsvOptions,
    pub topology: Topology,
    pub mobility: MobilityModel,
    pub traffic: Traffic,
    pub frames: u64,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub script: Vec<ScriptedRts>,
    pub record_trace: bool,
}

impl Scenario {
    /// Seconds of one frame under this scenario's protocol.
    pub fn frame_s(&self) -> f64 {
        match self.protocol {
            Protocol::MacRsv => frame_duration_s(&self.frame),
            Protocol::Cata => cata::CataConfig::from_frame(&self.frame, self.persistence_p).frame_duration_s(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        self.frame.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        if !(self.persistence_p > 0.0 && self.persistence_p <= 1.0) {
            return bad(format!("persistence {} outside (0, 1]", self.persistence_p));
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        let n = self.topology.len();
        if n == 0 {
            return bad("topology has no nodes".into());
        }
        if let MobilityModel::RandomWaypoint { area_m, speed_mps, pause_s } = self.mobility {
            if !(area_m.0 > 0.0 && area_m.1 > 0.0 && speed_mps >= 0.0 && pause_s >= 0.0) {
                return bad("random-waypoint area must be positive and speed, pause non-negative".into());
            }
        }
        self.traffic.validate(&self.topology)?;
        let k = match self.protocol {
            Protocol::MacRsv => self.frame.triples,
            Protocol::Cata => 0,
        };
        for s in &self.script {
            if s.node.index() >= n || s.dst.index() >= n || s.node == s.dst {
                return bad(format!("script entry {}->{} names an unknown node", s.node, s.dst));
            }
            if s.triple >= k {
                return bad(format!("script triple {} out of range", s.triple));
            }
            if s.slots.is_empty() || s.slots.last().is_some_and(|m| m >= self.frame.data_slots) {
                return bad(format!("script slots {} out of range", s.slots));
            }
            if s.frame >= self.frames {
                return bad(format!("script frame {} beyond the run", s.frame));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Protocol(#[from] RsvError),
    #[error("invariant violated in frame {frame}: {detail}")]
    InvariantViolation { frame: u64, detail: String },
}

/// Per-frame bookkeeping used for conservation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSummary {
    pub frame: u64,
    pub reserved: usize,
    pub arrived: u64,
    pub delivered: u64,
    pub queued: usize,
    /// Always zero at a frame boundary: partly sent packets stay queued.
    pub in_flight: usize,
    pub dropped: u64,
}

impl FrameSummary {
    pub fn conserves(&self) -> bool {
        self.arrived == self.delivered + self.queued as u64 + self.in_flight as u64 + self.dropped
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub frames: Vec<FrameSummary>,
    /// Empty unless the scenario asks for a trace.
    pub trace: Vec<Record>,
    pub offered_load_bps: f64,
}

/// Collects records into the metrics fold and, optionally, the trace.
pub(crate) struct Sink {
    pub frame: u64,
    collector: MetricsCollector,
    trace: Option<Vec<Record>>,
}

impl Sink {
    pub fn emit(&mut self, phase: Phase, index: usize, node: NodeId, event: Event) {
        let record = Record { frame: self.frame, phase, index, node, event };
        self.collector.observe(&record);
        if let Some(t) = &mut self.trace {
            t.push(record);
        }
    }

    /// Logs every transmission of a mini-slot and how its addressee heard it.
    pub fn emit_minislot(
        &mut self,
        phase: Phase,
        index: usize,
        tx: &[(NodeId, Transmission)],
        obs: &[Observation],
        topo: &Topology,
    ) {
        for (sender, t) in tx {
            self.emit(phase, index, *sender, Event::Send(t.clone()));
        }
        for (sender, t) in tx {
            let Some(to) = t.addressee() else { continue };
            let outcome = match &obs[to.index()] {
                Observation::Clean(heard) if heard == t => Outcome::Clean,
                Observation::Collision if topo.are_neighbors(*sender, to) => Outcome::Collision,
                _ => Outcome::Lost,
            };
            let kind = match t {
                Transmission::Control(c) => c.kind(),
                Transmission::Data(_) => "DATA",
            };
            self.emit(phase, index, to, Event::Rx { from: *sender, kind: kind.to_string(), outcome });
        }
    }
}

/// Per-node packet queue.
#[derive(Debug, Clone, Default)]
pub(crate) struct NodeQueue {
    pub packets: VecDeque<Packet>,
}

impl NodeQueue {
    /// Head-of-line demand: the receiver of the first packet whose slots are
    /// not all covered by existing reservations, the number of its uncovered
    /// slots, and the uncovered slots of every queued packet to that receiver
    /// (capped at `cap`). `reserved(dst)` is the number of slots already
    /// reserved toward `dst` this frame; they cover packets in FIFO order.
    pub fn demand(&self, cap: usize, mut reserved: impl FnMut(NodeId) -> usize) -> Option<(NodeId, usize, usize)> {
        let mut covered: Vec<(NodeId, usize)> = Vec::new();
        let mut head: Option<(NodeId, usize)> = None;
        let mut wanted = 0usize;
        for p in &self.packets {
            if head.is_some_and(|(d, _)| d != p.dst) {
                continue;
            }
            let avail = match covered.iter_mut().find(|(d, _)| *d == p.dst) {
                Some((_, a)) => a,
                None => {
                    covered.push((p.dst, reserved(p.dst)));
                    &mut covered.last_mut().unwrap().1
                }
            };
            let take = (*avail).min(p.remaining_slots);
            *avail -= take;
            let open = p.remaining_slots - take;
            if open == 0 {
                continue;
            }
            if head.is_none() {
                head = Some((p.dst, open));
            }
            wanted += open;
            if wanted >= cap {
                break;
            }
        }
        head.map(|(dst, needed)| (dst, needed, wanted.min(cap).max(needed)))
    }

    /// Oldest packet toward `dst` that still has unacknowledged slots.
    pub fn next_for(&self, dst: NodeId) -> Option<usize> {
        self.packets.iter().position(|p| p.dst == dst && p.remaining_slots > 0)
    }
}

/// State shared by both protocols' frame loops.
pub(crate) struct World {
    pub cfg: FrameConfig,
    pub topo: Topology,
    pub queues: Vec<NodeQueue>,
    pub mac_rngs: Vec<ChaCha8Rng>,
    pub sink: Sink,
    pub frame_start_s: f64,
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl World {
    /// Books an acknowledged slot of `node`'s packet at queue position `idx`.
    pub fn acknowledge(&mut self, node: NodeId, idx: usize, slot: usize, ack_end_s: f64) {
        let cfg = self.cfg;
        let q = &mut self.queues[node.index()].packets;
        let p = &mut q[idx];
        let bits = p.next_slot_bits(&cfg);
        p.remaining_slots -= 1;
        let done = p.remaining_slots == 0;
        let id = p.id;
        let delay = done.then(|| ack_end_s - p.arrival_time_s);
        if done {
            q.remove(idx);
            self.delivered += 1;
        }
        self.sink.emit(Phase::Ack, slot, node, Event::Delivered { packet: id, bits, delay_s: delay });
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(|q| q.packets.len()).sum()
    }
}

enum Mac {
    Rsv(Vec<RsvNode>),
    Cata(Vec<cata::CataNode>),
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    scenario.validate()?;
    let n = scenario.topology.len();
    let frame_s = scenario.frame_s();
    let warmup = (scenario.frames as f64 * scenario.warmup_fraction).floor() as u64;
    let window = MetricsWindow { frame_s, warmup_frames: warmup, total_frames: scenario.frames };
    let mut world = World {
        cfg: scenario.frame,
        topo: scenario.topology.clone(),
        queues: vec![NodeQueue::default(); n],
        mac_rngs: (0..n).map(|i| rng::stream(scenario.seed, Stream::Mac, i)).collect(),
        sink: Sink {
            frame: 0,
            collector: MetricsCollector::new(window),
            trace: scenario.record_trace.then(Vec::new),
        },
        frame_start_s: 0.0,
        arrived: 0,
        delivered: 0,
        dropped: 0,
    };
    let mut mac = match scenario.protocol {
        Protocol::MacRsv => Mac::Rsv(
            (0..n)
                .map(|i| RsvNode::new(NodeId(i as u32), scenario.frame.data_slots, scenario.persistence_p, scenario.rsv))
                .collect(),
        ),
        Protocol::Cata => Mac::Cata(
            (0..n)
                .map(|i| cata::CataNode::new(NodeId(i as u32), scenario.frame.data_slots, scenario.persistence_p))
                .collect(),
        ),
    };
    let mut mobility = Mobility::new(scenario.mobility.clone(), n, scenario.seed);
    let static_topology = mobility.is_static();
    let mut arrivals = traffic::Generator::new(&scenario.traffic, &scenario.frame, n, scenario.seed);
    let check_collision_free = static_topology && scenario.protocol == Protocol::MacRsv && !scenario.rsv.rb_ablation;
    let mut summaries = Vec::with_capacity(scenario.frames as usize);

    for f in 0..scenario.frames {
        world.sink.frame = f;
        world.frame_start_s = f as f64 * frame_s;
        arrivals.admit(&mut world, f, frame_s);
        for s in scenario.script.iter().filter(|s| s.frame == f) {
            arrivals.inject(&mut world, s.node, s.dst, s.slots.len());
        }
        let reserved = match &mut mac {
            Mac::Rsv(nodes) => {
                let script: Vec<&ScriptedRts> = scenario.script.iter().filter(|s| s.frame == f).collect();
                rsv_frame::run_frame(&mut world, nodes, &script, check_collision_free)?
            }
            Mac::Cata(nodes) => cata::cata_frame(&mut world, nodes)?,
        };
        let summary = FrameSummary {
            frame: f,
            reserved,
            arrived: world.arrived,
            delivered: world.delivered,
            queued: world.queued(),
            in_flight: 0,
            dropped: world.dropped,
        };
        world.sink.emit(
            Phase::Frame,
            0,
            NodeId(0),
            Event::FrameEnd {
                reserved,
                queued: summary.queued,
                arrived: summary.arrived,
                delivered: summary.delivered,
                dropped: summary.dropped,
            },
        );
        if !summary.conserves() {
            return Err(EngineError::InvariantViolation {
                frame: f,
                detail: format!("packet conservation broken: {summary:?}"),
            });
        }
        summaries.push(summary);
        if !static_topology {
            world.topo = mobility.step(&world.topo, frame_s);
        }
    }

    let offered_load_bps = scenario.traffic.offered_load_bps;
    let Sink { collector, trace, .. } = world.sink;
    Ok(RunOutput { metrics: collector.finish(), frames: summaries, trace: trace.unwrap_or_default(), offered_load_bps })
}

/// Header of the per-run CSV.
pub const CSV_HEADER: &str =
    "scenario,protocol,seed,offered_load_bps,throughput_bps,mean_delay_s,data_collisions,deadlock_deferrals";

/// One CSV row for a finished run.
pub fn csv_row(scenario: &Scenario, out: &RunOutput) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        scenario.name,
        scenario.protocol.label(),
        scenario.seed,
        out.offered_load_bps,
        out.metrics.aggregate_throughput_bps,
        out.metrics.mean_delay_s,
        out.metrics.data_collisions,
        out.metrics.deadlock_deferrals
    )
}

pub(crate) fn resolve_obs(tx: &[(NodeId, Transmission)], topo: &Topology) -> Result<Vec<Observation>, EngineError> {
    Ok(channel::resolve(tx, topo)?)
}
