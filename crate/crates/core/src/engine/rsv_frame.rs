//! One MAC-RSV frame: K signaling triples, then N data slots.

use super::{resolve_obs as resolve, EngineError, ScriptedRts, World};
use crate::frame::{ControlMessage, DataFrame, NodeId, Observation, Transmission};
use crate::rsv::{RbDecision, RsvNode, SlotState};
use crate::trace::{Event, Phase};

fn flush_changes(world: &mut World, nodes: &mut [RsvNode], phase: Phase, index: usize) {
    for node in nodes.iter_mut() {
        let id = node.id;
        for c in node.drain_changes() {
            world.sink.emit(phase, index, id, Event::Table(c));
        }
    }
}

fn control(node: NodeId, msg: ControlMessage) -> (NodeId, Transmission) {
    (node, Transmission::Control(msg))
}

/// Plays one frame and returns the number of data slots reserved in it.
pub(crate) fn run_frame(
    world: &mut World,
    nodes: &mut [RsvNode],
    script: &[&ScriptedRts],
    check_collision_free: bool,
) -> Result<usize, EngineError> {
    let k = world.cfg.triples;
    let n_slots = world.cfg.data_slots;
    let frame = world.sink.frame;

    for triple in 0..k {
        // RTS
        let mut tx = Vec::new();
        for (i, node) in nodes.iter_mut().enumerate() {
            let scripted: Vec<&&ScriptedRts> = script.iter().filter(|s| s.node == node.id).collect();
            let rts = if !scripted.is_empty() {
                scripted.iter().find(|s| s.triple == triple).and_then(|s| node.force_request(s.dst, &s.slots))
            } else {
                let table = &node.table;
                match world.queues[i].demand(n_slots, |d| table.reserved_toward(d)) {
                    Some((dst, needed, wanted)) => node.contend(&mut world.mac_rngs[i], dst, needed, wanted),
                    None => None,
                }
            };
            tx.extend(rts.map(|m| control(node.id, m)));
        }
        if tx.is_empty() {
            continue;
        }
        let obs = resolve(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Rts, triple, &tx, &obs, &world.topo);

        // (N)CTS
        let mut tx = Vec::new();
        for node in nodes.iter_mut().filter(|n| !n.sent_rts()) {
            tx.extend(node.on_rts_minislot(&obs[node.id.index()]).map(|m| control(node.id, m)));
        }
        let obs = resolve(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Cts, triple, &tx, &obs, &world.topo);

        // CONF
        let mut tx = Vec::new();
        for node in nodes.iter_mut() {
            let o = &obs[node.id.index()];
            if node.sent_rts() {
                tx.extend(node.on_ncts_minislot(o)?.map(|m| control(node.id, m)));
            } else {
                node.overheard_cts(o);
            }
        }
        flush_changes(world, nodes, Phase::Cts, triple);
        let obs = resolve(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Conf, triple, &tx, &obs, &world.topo);
        let confirming: Vec<NodeId> = tx.iter().map(|(s, _)| *s).collect();
        for node in nodes.iter_mut() {
            if !confirming.contains(&node.id) {
                node.on_conf_minislot(&obs[node.id.index()]);
            }
            node.end_triple();
        }
        flush_changes(world, nodes, Phase::Conf, triple);
    }

    // Every RT entry must be matched by an RR entry at its peer.
    let mut reserved = 0;
    for node in nodes.iter() {
        node.table.check().map_err(|detail| EngineError::InvariantViolation { frame, detail })?;
        for s in 0..n_slots {
            let e = node.table.entry(s);
            if e.state != SlotState::Rt {
                continue;
            }
            reserved += 1;
            let peer = e.peer.expect("RT entry has a peer");
            let back = nodes[peer.index()].table.entry(s);
            if back.state != SlotState::Rr || back.peer != Some(node.id) {
                return Err(EngineError::InvariantViolation {
                    frame,
                    detail: format!("slot {s}: {} holds RT toward {peer}, which holds {}", node.id, back.state),
                });
            }
        }
    }

    for slot in 0..n_slots {
        // RB
        let tx: Vec<_> = nodes.iter().filter_map(|n| n.receive_beacon(slot).map(|m| control(n.id, m))).collect();
        let obs = resolve(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Rb, slot, &tx, &obs, &world.topo);
        let mut senders = Vec::new();
        for node in nodes.iter_mut() {
            let o = &obs[node.id.index()];
            let e = *node.table.entry(slot);
            if e.state == SlotState::Rt {
                match node.apply_rb(slot, o) {
                    RbDecision::Transmit => senders.push((node.id, e.peer.expect("RT entry has a peer"))),
                    RbDecision::DeferAndRelease => {
                        let receiver = e.peer.expect("RT entry has a peer");
                        world.sink.emit(Phase::Rb, slot, node.id, Event::Defer { receiver });
                    }
                }
            } else {
                node.overheard_rb(slot, o);
            }
        }
        flush_changes(world, nodes, Phase::Rb, slot);

        // DATA
        let mut tx = Vec::new();
        let mut sent = Vec::new();
        for (src, dst) in senders {
            if let Some(idx) = world.queues[src.index()].next_for(dst) {
                let packet = world.queues[src.index()].packets[idx].id;
                tx.push((src, Transmission::Data(DataFrame { src, dst, slot, packet })));
                sent.push((src, idx));
            }
        }
        if tx.is_empty() {
            continue;
        }
        let data_obs = resolve(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Data, slot, &tx, &data_obs, &world.topo);
        if check_collision_free {
            for (src, t) in &tx {
                let to = t.addressee().expect("data is unicast");
                if matches!(data_obs[to.index()], Observation::Collision) {
                    let senders: Vec<String> = tx.iter().map(|(_, t)| t.to_string()).collect();
                    return Err(EngineError::InvariantViolation {
                        frame,
                        detail: format!(
                            "data from {src} collided at {to} in slot {slot}; concurrent sends: {}",
                            senders.join(" | ")
                        ),
                    });
                }
            }
        }

        // ACK
        let tx: Vec<_> = nodes
            .iter()
            .filter_map(|n| n.ack_phase(slot, &data_obs[n.id.index()]).map(|m| control(n.id, m)))
            .collect();
        let obs = resolve(&tx, &world.topo)?;
        world.sink.emit_minislot(Phase::Ack, slot, &tx, &obs, &world.topo);
        let ack_end = world.frame_start_s + world.cfg.ack_end_offset_s(slot);
        for (src, idx) in sent {
            if nodes[src.index()].transmitter_on_ack(slot, &obs[src.index()]) {
                world.acknowledge(src, idx, slot, ack_end);
            }
        }
    }

    for node in nodes.iter_mut() {
        node.end_of_frame();
    }
    flush_changes(world, nodes, Phase::Frame, 0);
    Ok(reserved)
}
