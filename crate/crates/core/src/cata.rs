//! Simplified per-slot contention baseline (CATA-style).
//!
//! Every data slot is preceded by its own RTS and CTS mini-slots and can only
//! be won there. A node with a queued packet sends `RTS{slot}` with
//! probability `p`; the addressee answers with a CTS if the slot is receivable
//! in its table, and the pair then uses the slot for one data frame and its
//! ACK. A packet of `L` slots therefore has to win `L` separate contentions.
//! There is no CONF, no jamming and no receive beacon. Tables are wiped at
//! the end of every frame.

use rand::Rng;
use serde::Serialize;

use crate::engine::{EngineError, World};
use crate::frame::{ControlMessage, DataFrame, FrameConfig, NodeId, Observation, SlotSet, Transmission};
use crate::trace::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CataConfig {
    pub data_slots: usize,
    pub persistence_p: f64,
    pub control_bytes: usize,
    pub data_payload_bytes: usize,
    pub channel_rate_bps: f64,
}

impl CataConfig {
    /// Takes slot count, message sizes and rate from a MAC-RSV frame layout.
    pub fn from_frame(cfg: &FrameConfig, persistence_p: f64) -> Self {
        CataConfig {
            data_slots: cfg.data_slots,
            persistence_p,
            control_bytes: cfg.control_bytes,
            data_payload_bytes: cfg.data_payload_bytes,
            channel_rate_bps: cfg.channel_rate_bps,
        }
    }

    /// One slot: RTS, CTS, data frame, ACK.
    pub fn slot_s(&self) -> f64 {
        (3 * self.control_bytes + self.data_payload_bytes) as f64 * 8.0 / self.channel_rate_bps
    }

    pub fn frame_duration_s(&self) -> f64 {
        self.data_slots as f64 * self.slot_s()
    }

    /// Offset of the end of `slot`'s ACK from the frame start.
    pub fn ack_end_offset_s(&self, slot: usize) -> f64 {
        (slot + 1) as f64 * self.slot_s()
    }
}

/// What a node knows about one slot of the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CataSlot {
    Free,
    /// A neighbor receives in this slot: sending would disturb it.
    BusyTx,
    /// A neighbor sends in this slot: receiving here would fail.
    BusyRx,
    /// Our own reservation.
    Sending(NodeId),
    Receiving(NodeId),
}

impl CataSlot {
    fn receivable(self) -> bool {
        matches!(self, CataSlot::Free | CataSlot::BusyTx)
    }
}

#[derive(Debug, Clone)]
pub struct CataNode {
    pub id: NodeId,
    pub persistence_p: f64,
    pub table: Vec<CataSlot>,
    sent_rts: Option<NodeId>,
}

impl CataNode {
    pub fn new(id: NodeId, data_slots: usize, persistence_p: f64) -> Self {
        CataNode { id, persistence_p, table: vec![CataSlot::Free; data_slots], sent_rts: None }
    }

    /// Addressee side of the CTS mini-slot.
    pub fn on_rts(&mut self, slot: usize, obs: &Observation) -> Option<ControlMessage> {
        if self.sent_rts.is_some() {
            return None;
        }
        let Some(ControlMessage::Rts { src, dst, slots }) = obs.clean_control() else {
            return None;
        };
        if !slots.contains(slot) {
            return None;
        }
        if *dst != self.id {
            if self.table[slot] == CataSlot::Free {
                self.table[slot] = CataSlot::BusyRx;
            }
            return None;
        }
        if !self.table[slot].receivable() {
            return None;
        }
        self.table[slot] = CataSlot::Receiving(*src);
        Some(ControlMessage::Cts { src: self.id, dst: *src, slots: SlotSet::single(slot) })
    }

    /// Everyone in the CTS mini-slot; true when our own RTS was granted.
    pub fn on_cts(&mut self, slot: usize, obs: &Observation) -> bool {
        let cts = match obs.clean_control() {
            Some(ControlMessage::Cts { src, dst, slots }) if slots.contains(slot) => Some((*src, *dst)),
            _ => None,
        };
        match (self.sent_rts.take(), cts) {
            (Some(target), Some((src, dst))) if src == target && dst == self.id => {
                self.table[slot] = CataSlot::Sending(target);
                true
            }
            (None, Some((_, dst))) if dst != self.id => {
                if matches!(self.table[slot], CataSlot::Free | CataSlot::BusyRx) {
                    self.table[slot] = CataSlot::BusyTx;
                }
                false
            }
            _ => false,
        }
    }

    pub fn end_of_frame(&mut self) {
        self.table.fill(CataSlot::Free);
        self.sent_rts = None;
    }
}

/// RTS decision for `slot` in that slot's own RTS mini-slot: contend with
/// probability `p` if a packet for `dst` is waiting and the slot is still
/// free for sending.
pub fn cata_contend<R: Rng>(node: &mut CataNode, rng: &mut R, slot: usize, dst: Option<NodeId>) -> Option<ControlMessage> {
    let dst = dst?;
    if !matches!(node.table[slot], CataSlot::Free | CataSlot::BusyRx) {
        return None;
    }
    if !rng.random_bool(node.persistence_p.clamp(0.0, 1.0)) {
        return None;
    }
    node.sent_rts = Some(dst);
    Some(ControlMessage::Rts { src: node.id, dst, slots: SlotSet::single(slot) })
}

/// Plays one frame of per-slot contention and returns the slots reserved.
pub(crate) fn cata_frame(world: &mut World, nodes: &mut [CataNode]) -> Result<usize, EngineError> {
    let cfg = CataConfig::from_frame(&world.cfg, nodes.first().map_or(1.0, |n| n.persistence_p));
    let mut reserved = 0;
    for slot in 0..cfg.data_slots {
        let mut tx = Vec::new();
        for (i, node) in nodes.iter_mut().enumerate() {
            let dst = world.queues[i].demand(1, |_| 0).map(|(d, _, _)| d);
            if let Some(m) = cata_contend(node, &mut world.mac_rngs[i], slot, dst) {
                tx.push((node.id, Transmission::Control(m)));
            }
        }
        if tx.is_empty() {
            continue;
        }
        let obs = crate::engine::resolve_obs(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Rts, slot, &tx, &obs, &world.topo);

        let mut tx = Vec::new();
        for node in nodes.iter_mut() {
            if let Some(m) = node.on_rts(slot, &obs[node.id.index()]) {
                tx.push((node.id, Transmission::Control(m)));
            }
        }
        let obs = crate::engine::resolve_obs(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Cts, slot, &tx, &obs, &world.topo);
        let mut senders = Vec::new();
        for node in nodes.iter_mut() {
            if node.on_cts(slot, &obs[node.id.index()]) {
                if let CataSlot::Sending(dst) = node.table[slot] {
                    senders.push((node.id, dst));
                }
            }
        }
        reserved += senders.len();

        let mut tx = Vec::new();
        let mut sent = Vec::new();
        for (src, dst) in senders {
            if let Some(idx) = world.queues[src.index()].next_for(dst) {
                let packet = world.queues[src.index()].packets[idx].id;
                tx.push((src, Transmission::Data(DataFrame { src, dst, slot, packet })));
                sent.push((src, idx));
            }
        }
        let data_obs = crate::engine::resolve_obs(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Data, slot, &tx, &data_obs, &world.topo);

        let mut tx = Vec::new();
        for node in nodes.iter() {
            if let CataSlot::Receiving(peer) = node.table[slot] {
                if let Observation::Clean(Transmission::Data(d)) = &data_obs[node.id.index()] {
                    if d.src == peer && d.dst == node.id && d.slot == slot {
                        tx.push((node.id, Transmission::Control(ControlMessage::Ack { receiver: node.id, transmitter: peer, slot })));
                    }
                }
            }
        }
        let obs = crate::engine::resolve_obs(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Ack, slot, &tx, &obs, &world.topo);
        let ack_end = world.frame_start_s + cfg.ack_end_offset_s(slot);
        for (src, idx) in sent {
            let acked = matches!(
                obs[src.index()].clean_control(),
                Some(&ControlMessage::Ack { transmitter, slot: s, .. }) if transmitter == src && s == slot
            );
            if acked {
                world.acknowledge(src, idx, slot, ack_end);
            }
        }
    }
    for node in nodes.iter_mut() {
        node.end_of_frame();
    }
    Ok(reserved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{resolve, Position, Topology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> Topology {
        Topology::from_positions((0..n).map(|i| Position::new(i as f64 * 200.0, 0.0)).collect(), 250.0)
    }

    #[test]
    fn standard_cata_frame() {
        let c = CataConfig::from_frame(&FrameConfig::STANDARD, 0.175);
        assert!((c.frame_duration_s() - 25.0 * (480.0 + 8352.0) / 2e6).abs() < 1e-12);
    }

    #[test]
    fn lone_sure_contender_reserves() {
        let topo = line(2);
        let mut nodes = [CataNode::new(NodeId(0), 4, 1.0), CataNode::new(NodeId(1), 4, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rts = cata_contend(&mut nodes[0], &mut rng, 2, Some(NodeId(1))).unwrap();
        let obs = resolve(&[(NodeId(0), rts.into())], &topo).unwrap();
        let cts = nodes[1].on_rts(2, &obs[1]).unwrap();
        let obs = resolve(&[(NodeId(1), cts.into())], &topo).unwrap();
        assert!(nodes[0].on_cts(2, &obs[0]));
        assert_eq!(nodes[0].table[2], CataSlot::Sending(NodeId(1)));
        assert_eq!(nodes[1].table[2], CataSlot::Receiving(NodeId(0)));
        // Other slots untouched.
        assert_eq!(nodes[0].table[1], CataSlot::Free);
    }

    #[test]
    fn colliding_contenders_reserve_nothing() {
        // 0 -> 1 <- 2
        let topo = line(3);
        let mut nodes: Vec<_> = (0..3).map(|i| CataNode::new(NodeId(i), 4, 1.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = cata_contend(&mut nodes[0], &mut rng, 0, Some(NodeId(1))).unwrap();
        let b = cata_contend(&mut nodes[2], &mut rng, 0, Some(NodeId(1))).unwrap();
        let obs = resolve(&[(NodeId(0), a.into()), (NodeId(2), b.into())], &topo).unwrap();
        assert_eq!(obs[1], Observation::Collision);
        assert!(nodes[1].on_rts(0, &obs[1]).is_none());
        let obs = resolve(&[], &topo).unwrap();
        assert!(!nodes[0].on_cts(0, &obs[0]) && !nodes[2].on_cts(0, &obs[2]));
    }

    #[test]
    fn busy_receiver_stays_silent() {
        let topo = line(2);
        let mut nodes = [CataNode::new(NodeId(0), 4, 1.0), CataNode::new(NodeId(1), 4, 1.0)];
        nodes[1].table[3] = CataSlot::BusyRx;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rts = cata_contend(&mut nodes[0], &mut rng, 3, Some(NodeId(1))).unwrap();
        let obs = resolve(&[(NodeId(0), rts.into())], &topo).unwrap();
        assert!(nodes[1].on_rts(3, &obs[1]).is_none());
    }

    #[test]
    fn nothing_to_send_means_no_rts() {
        let mut node = CataNode::new(NodeId(0), 4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(cata_contend(&mut node, &mut rng, 0, None).is_none());
    }
}
