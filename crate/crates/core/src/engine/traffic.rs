//! Poisson packet sources.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};

use super::{EngineError, World};
use crate::channel::Topology;
use crate::frame::{FrameConfig, NodeId, Packet};
use crate::rng::{self, Stream};
use crate::trace::{DropReason, Event, Phase};

#[derive(Debug, Clone, PartialEq)]
pub enum TrafficPattern {
    None,
    /// Fixed source-destination pairs sharing the offered load equally.
    Flows(Vec<(NodeId, NodeId)>),
    /// Every node is a source; each packet picks a uniform current neighbor.
    PoissonNeighbors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PacketSize {
    Fixed { bytes: usize },
    /// Length in slots, geometric with ratio `q` truncated to `1..=N`.
    Geometric { q: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traffic {
    pub pattern: TrafficPattern,
    /// Aggregate offered payload bits per second over all sources.
    pub offered_load_bps: f64,
    pub packet: PacketSize,
    /// Packets beyond this many per node are dropped on arrival.
    pub queue_limit: Option<usize>,
}

impl Traffic {
    pub fn none() -> Self {
        Traffic { pattern: TrafficPattern::None, offered_load_bps: 0.0, packet: PacketSize::Fixed { bytes: 1044 }, queue_limit: None }
    }

    pub(crate) fn validate(&self, topo: &Topology) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::Config(msg));
        if !(self.offered_load_bps >= 0.0 && self.offered_load_bps.is_finite()) {
            return bad(format!("offered load {} must be finite and non-negative", self.offered_load_bps));
        }
        match self.packet {
            PacketSize::Fixed { bytes } if bytes == 0 => return bad("packet bytes must be positive".into()),
            PacketSize::Geometric { q } if !(0.0..1.0).contains(&q) => {
                return bad(format!("packet q {q} outside [0, 1)"));
            }
            _ => {}
        }
        if self.queue_limit == Some(0) {
            return bad("queue_limit must be at least 1".into());
        }
        if let TrafficPattern::Flows(flows) = &self.pattern {
            for &(s, d) in flows {
                if s.index() >= topo.len() || d.index() >= topo.len() {
                    return bad(format!("flow {s}->{d} names an unknown node"));
                }
                if !topo.are_neighbors(s, d) {
                    return bad(format!("flow {s}->{d} is not one hop"));
                }
            }
        }
        Ok(())
    }

    /// Mean payload bits per packet.
    pub fn mean_packet_bits(&self, cfg: &FrameConfig) -> f64 {
        match self.packet {
            PacketSize::Fixed { bytes } => bytes as f64 * 8.0,
            PacketSize::Geometric { q } => {
                let n = cfg.data_slots;
                let norm: f64 = (1..=n).map(|l| q.powi(l as i32 - 1)).sum();
                let mean: f64 = (1..=n).map(|l| l as f64 * q.powi(l as i32 - 1)).sum::<f64>() / norm;
                mean * cfg.data_payload_bytes as f64 * 8.0
            }
        }
    }
}

struct Source {
    src: Option<NodeId>,
    dst: Option<NodeId>,
    rng: ChaCha8Rng,
}

pub(crate) struct Generator {
    sources: Vec<Source>,
    rate_per_source: f64,
    packet: PacketSize,
    queue_limit: Option<usize>,
    next_id: u64,
}

impl Generator {
    pub fn new(traffic: &Traffic, cfg: &FrameConfig, nodes: usize, seed: u64) -> Self {
        let sources: Vec<Source> = match &traffic.pattern {
            TrafficPattern::None => Vec::new(),
            TrafficPattern::Flows(flows) => flows
                .iter()
                .enumerate()
                .map(|(i, &(s, d))| Source { src: Some(s), dst: Some(d), rng: rng::stream(seed, Stream::Traffic, i) })
                .collect(),
            TrafficPattern::PoissonNeighbors => (0..nodes)
                .map(|i| Source { src: Some(NodeId(i as u32)), dst: None, rng: rng::stream(seed, Stream::Traffic, i) })
                .collect(),
        };
        let rate_per_source = if sources.is_empty() || traffic.offered_load_bps == 0.0 {
            0.0
        } else {
            traffic.offered_load_bps / (sources.len() as f64 * traffic.mean_packet_bits(cfg))
        };
        Generator { sources, rate_per_source, packet: traffic.packet, queue_limit: traffic.queue_limit, next_id: 0 }
    }

    /// Queues the arrivals of the previous frame interval.
    pub fn admit(&mut self, world: &mut World, frame: u64, frame_s: f64) {
        if frame == 0 || self.rate_per_source == 0.0 {
            return;
        }
        let start = (frame - 1) as f64 * frame_s;
        let poisson = Poisson::new(self.rate_per_source * frame_s).expect("positive rate");
        let cfg = world.cfg;
        let mut batch: Vec<(f64, NodeId, Option<NodeId>, usize, usize)> = Vec::new();
        for s in &mut self.sources {
            let count = poisson.sample(&mut s.rng) as usize;
            for _ in 0..count {
                let t = start + s.rng.random::<f64>() * frame_s;
                let src = s.src.expect("sources always have a node");
                let dst = match s.dst {
                    Some(d) => Some(d),
                    None => {
                        let nb = world.topo.neighbors(src);
                        (!nb.is_empty()).then(|| nb[s.rng.random_range(0..nb.len())])
                    }
                };
                let (slots, bytes) = match self.packet {
                    PacketSize::Fixed { bytes } => (cfg.packet_from_bytes(bytes).unwrap_or(0), bytes),
                    PacketSize::Geometric { q } => {
                        let l = sample_length(&mut s.rng, q, cfg.data_slots);
                        (l, l * cfg.data_payload_bytes)
                    }
                };
                batch.push((t, src, dst, slots, bytes));
            }
        }
        // Arrival order across sources is by time, then by source.
        batch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (t, src, dst, slots, bytes) in batch {
            self.enqueue(world, src, dst, slots, bytes, t);
        }
    }

    /// Queues a scripted packet of `slots` slots at the frame start.
    pub fn inject(&mut self, world: &mut World, src: NodeId, dst: NodeId, slots: usize) {
        let bytes = slots * world.cfg.data_payload_bytes;
        let t = world.frame_start_s;
        self.enqueue(world, src, Some(dst), slots, bytes, t);
    }

    fn enqueue(&mut self, world: &mut World, src: NodeId, dst: Option<NodeId>, slots: usize, bytes: usize, t: f64) {
        let id = self.next_id;
        self.next_id += 1;
        world.arrived += 1;
        world.sink.emit(
            Phase::Frame,
            0,
            src,
            Event::Arrive { packet: id, dst: dst.unwrap_or(src), slots, bytes, time_s: t },
        );
        let reason = if dst.is_none() {
            Some(DropReason::NoNeighbor)
        } else if slots == 0 || slots > world.cfg.data_slots {
            Some(DropReason::Oversize)
        } else if self.queue_limit.is_some_and(|l| world.queues[src.index()].packets.len() >= l) {
            Some(DropReason::QueueFull)
        } else {
            None
        };
        if let Some(reason) = reason {
            world.dropped += 1;
            world.sink.emit(Phase::Frame, 0, src, Event::Drop { packet: id, reason });
            return;
        }
        world.queues[src.index()].packets.push_back(Packet {
            id,
            src,
            dst: dst.expect("checked above"),
            length_slots: slots,
            bytes,
            arrival_time_s: t,
            remaining_slots: slots,
        });
    }
}

/// Truncated geometric length in `1..=n` with P(L = l) proportional to
/// `q^(l-1)`, sampled by rejection.
pub(crate) fn sample_length<R: Rng>(rng: &mut R, q: f64, n: usize) -> usize {
    if q == 0.0 {
        return 1;
    }
    let g = Geometric::new(1.0 - q).expect("q in (0, 1)");
    loop {
        let l = g.sample(rng) as usize + 1;
        if l <= n {
            return l;
        }
    }
}
