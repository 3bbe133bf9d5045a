//! Per-node MAC-RSV state machine.
//!
//! Each node classifies every data slot of the current frame as reserved for
//! transmission (RT) or reception (RR), free for transmission only (FT), free
//! for reception only (FR), or free for both (FTR). Slots are reserved with an
//! RTS / (N)CTS / CONF exchange in one of the `K` signaling triples and are
//! re-confirmed by a receive beacon (RB) at the start of every reserved data
//! slot. Reservations last one frame; [`RsvNode::end_of_frame`] wipes the table.
//!
//! The handlers below are driven lock-step by the engine: one call per node per
//! mini-slot, each taking the node's [`Observation`] of that mini-slot.

use std::fmt;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{ControlMessage, NodeId, Observation, SlotSet, Transmission};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotState {
    Rt,
    Rr,
    Ft,
    Fr,
    Ftr,
}

impl SlotState {
    pub fn label(self) -> &'static str {
        match self {
            SlotState::Rt => "RT",
            SlotState::Rr => "RR",
            SlotState::Ft => "FT",
            SlotState::Fr => "FR",
            SlotState::Ftr => "FTR",
        }
    }

    pub fn is_reserved(self) -> bool {
        matches!(self, SlotState::Rt | SlotState::Rr)
    }
}

impl fmt::Display for SlotState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for SlotState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "RT" => SlotState::Rt,
            "RR" => SlotState::Rr,
            "FT" => SlotState::Ft,
            "FR" => SlotState::Fr,
            "FTR" => SlotState::Ftr,
            _ => return Err(format!("unknown slot state {s:?}")),
        })
    }
}

/// Why a slot-table entry changed; recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cause {
    Cts,
    Conf,
    OverheardCts,
    OverheardConf,
    OverheardRb,
    Release,
    Reset,
}

impl Cause {
    pub fn label(self) -> &'static str {
        match self {
            Cause::Cts => "cts",
            Cause::Conf => "conf",
            Cause::OverheardCts => "overheard-cts",
            Cause::OverheardConf => "overheard-conf",
            Cause::OverheardRb => "overheard-rb",
            Cause::Release => "release",
            Cause::Reset => "reset",
        }
    }
}

impl std::str::FromStr for Cause {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cts" => Cause::Cts,
            "conf" => Cause::Conf,
            "overheard-cts" => Cause::OverheardCts,
            "overheard-conf" => Cause::OverheardConf,
            "overheard-rb" => Cause::OverheardRb,
            "release" => Cause::Release,
            "reset" => Cause::Reset,
            _ => return Err(format!("unknown cause {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableChange {
    pub slot: usize,
    pub old: SlotState,
    pub new: SlotState,
    pub cause: Cause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotEntry {
    pub state: SlotState,
    /// Receiver for RT, transmitter for RR.
    pub peer: Option<NodeId>,
    /// Identifies the CONF exchange that created an RT entry.
    pub reservation: Option<u32>,
}

impl SlotEntry {
    const FREE: SlotEntry = SlotEntry { state: SlotState::Ftr, peer: None, reservation: None };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTable {
    entries: Vec<SlotEntry>,
}

impl SlotTable {
    pub fn new(data_slots: usize) -> Self {
        SlotTable { entries: vec![SlotEntry::FREE; data_slots] }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn state(&self, slot: usize) -> SlotState {
        self.entries[slot].state
    }

    pub fn entry(&self, slot: usize) -> &SlotEntry {
        &self.entries[slot]
    }

    pub fn peer(&self, slot: usize) -> Option<NodeId> {
        self.entries[slot].peer
    }

    pub fn slots_in(&self, states: &[SlotState]) -> SlotSet {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| states.contains(&e.state))
            .map(|(s, _)| s)
            .collect()
    }

    pub fn count(&self, state: SlotState) -> usize {
        self.entries.iter().filter(|e| e.state == state).count()
    }

    /// Slots this node holds RT toward `peer`.
    pub fn reserved_toward(&self, peer: NodeId) -> usize {
        self.entries
            .iter()
            .filter(|e| e.state == SlotState::Rt && e.peer == Some(peer))
            .count()
    }

    fn set(&mut self, slot: usize, entry: SlotEntry, cause: Cause) -> Option<TableChange> {
        let old = std::mem::replace(&mut self.entries[slot], entry);
        (old.state != entry.state).then_some(TableChange {
            slot,
            old: old.state,
            new: entry.state,
            cause,
        })
    }

    /// Downgrades an FTR slot to FT or FR; any other state is left alone.
    fn mark_if_free(&mut self, slot: usize, to: SlotState, cause: Cause) -> Option<TableChange> {
        if self.entries[slot].state != SlotState::Ftr {
            return None;
        }
        self.set(slot, SlotEntry { state: to, peer: None, reservation: None }, cause)
    }

    /// Checks the per-entry invariants: reserved entries carry a peer, free
    /// entries never do.
    pub fn check(&self) -> Result<(), String> {
        for (s, e) in self.entries.iter().enumerate() {
            if e.state.is_reserved() != e.peer.is_some() {
                return Err(format!("slot {s}: state {} with peer {:?}", e.state, e.peer));
            }
        }
        Ok(())
    }
}

/// Slots this node may request for transmission: FT and FTR.
pub fn free_tx_set(table: &SlotTable) -> SlotSet {
    table.slots_in(&[SlotState::Ft, SlotState::Ftr])
}

/// Slots this node may grant for reception: FR and FTR.
pub fn free_rx_set(table: &SlotTable) -> SlotSet {
    table.slots_in(&[SlotState::Fr, SlotState::Ftr])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrantPolicy {
    /// Grant whatever subset of the requested slots is receivable.
    #[default]
    Partial,
    /// Grant only if every requested slot is receivable.
    #[serde(alias = "all")]
    AllOrNothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RsvOptions {
    #[serde(default)]
    pub grant_policy: GrantPolicy,
    /// Jam with NCTS on every RTS collision, even without RR slots to protect.
    #[serde(default)]
    pub paranoid_ncts: bool,
    /// Ignore the receive beacon and always transmit in RT slots.
    #[serde(default)]
    pub rb_ablation: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RsvError {
    #[error("node {node}: CTS from {from} grants {granted} outside requested {requested}")]
    ProtocolViolation { node: NodeId, from: NodeId, granted: SlotSet, requested: SlotSet },
}

/// p-persistent contention bookkeeping for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentionState {
    pub persistence_p: f64,
    /// Set when the free set could not hold the packet; cleared every frame.
    pub withdrawn: bool,
    /// Slots named by the last RTS; still-free ones are requested again on a
    /// retry.
    last_request: SlotSet,
}

impl ContentionState {
    pub fn new(persistence_p: f64) -> Self {
        ContentionState { persistence_p, withdrawn: false, last_request: SlotSet::new() }
    }
}

/// One contention attempt at the start of an RTS mini-slot.
///
/// `needed` is the number of still-unreserved slots of the packet at the head
/// of the queue; `wanted >= needed` additionally counts later packets bound to
/// the same receiver, which may ride on the same request.
#[allow(clippy::too_many_arguments)]
pub fn choose_request<R: Rng>(
    state: &mut ContentionState,
    rng: &mut R,
    table: &SlotTable,
    src: NodeId,
    dst: NodeId,
    needed: usize,
    wanted: usize,
) -> Option<ControlMessage> {
    if state.withdrawn || needed == 0 {
        return None;
    }
    if !rng.random_bool(state.persistence_p.clamp(0.0, 1.0)) {
        return None;
    }
    let free = free_tx_set(table);
    if free.len() < needed {
        state.withdrawn = true;
        return None;
    }
    let count = wanted.max(needed).min(free.len());
    let mut slots: SlotSet =
        state.last_request.iter().filter(|s| free.contains(*s)).take(count).collect();
    if slots.len() < count {
        let extra = free
            .iter()
            .filter(|s| !slots.contains(*s))
            .choose_multiple(rng, count - slots.len());
        for s in extra {
            slots.insert(s);
        }
    }
    state.last_request = slots.clone();
    Some(ControlMessage::Rts { src, dst, slots })
}

/// Outcome of the RB mini-slot for a node holding RT in that slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbDecision {
    Transmit,
    DeferAndRelease,
}

/// Transmit only on a clean beacon from our receiver that names us. A
/// collision means a concurrent reservation (deadlock) or a newcomer in the
/// receiver's vicinity; silence means the receiver is gone.
pub fn rb_decision(me: NodeId, receiver: NodeId, slot: usize, obs: &Observation) -> RbDecision {
    match obs.clean_control() {
        Some(&ControlMessage::Rb { receiver: r, transmitter: t, slot: s })
            if r == receiver && t == me && s == slot =>
        {
            RbDecision::Transmit
        }
        _ => RbDecision::DeferAndRelease,
    }
}

#[derive(Debug, Clone)]
struct Grant {
    src: NodeId,
    slots: SlotSet,
}

/// MAC-RSV state of a single node.
#[derive(Debug, Clone)]
pub struct RsvNode {
    pub id: NodeId,
    pub table: SlotTable,
    pub contention: ContentionState,
    pub options: RsvOptions,
    sent_rts: Option<(NodeId, SlotSet)>,
    granted: Option<Grant>,
    provisional: Option<Grant>,
    next_reservation: u32,
    changes: Vec<TableChange>,
}

impl RsvNode {
    pub fn new(id: NodeId, data_slots: usize, persistence_p: f64, options: RsvOptions) -> Self {
        RsvNode {
            id,
            table: SlotTable::new(data_slots),
            contention: ContentionState::new(persistence_p),
            options,
            sent_rts: None,
            granted: None,
            provisional: None,
            next_reservation: 0,
            changes: Vec::new(),
        }
    }

    /// Table mutations since the last call.
    pub fn drain_changes(&mut self) -> std::vec::Drain<'_, TableChange> {
        self.changes.drain(..)
    }

    fn record(&mut self, change: Option<TableChange>) {
        self.changes.extend(change);
    }

    pub fn sent_rts(&self) -> bool {
        self.sent_rts.is_some()
    }

    /// Receiver of this triple's RTS, if we sent one.
    pub fn rts_target(&self) -> Option<NodeId> {
        self.sent_rts.as_ref().map(|(dst, _)| *dst)
    }

    /// Runs [`choose_request`] and remembers the RTS for the rest of the triple.
    pub fn contend<R: Rng>(
        &mut self,
        rng: &mut R,
        dst: NodeId,
        needed: usize,
        wanted: usize,
    ) -> Option<ControlMessage> {
        let rts = choose_request(&mut self.contention, rng, &self.table, self.id, dst, needed, wanted)?;
        if let ControlMessage::Rts { dst, slots, .. } = &rts {
            self.sent_rts = Some((*dst, slots.clone()));
        }
        Some(rts)
    }

    /// Sends a pre-determined RTS (scripted scenarios); slots that are not free
    /// for transmission are dropped.
    pub fn force_request(&mut self, dst: NodeId, slots: &SlotSet) -> Option<ControlMessage> {
        let free = free_tx_set(&self.table);
        let slots: SlotSet = slots.iter().filter(|s| free.contains(*s)).collect();
        if slots.is_empty() {
            return None;
        }
        self.sent_rts = Some((dst, slots.clone()));
        self.contention.last_request = slots.clone();
        Some(ControlMessage::Rts { src: self.id, dst, slots })
    }

    /// Reply in the (N)CTS mini-slot. Only called on nodes that did not send an
    /// RTS in this triple.
    pub fn on_rts_minislot(&mut self, obs: &Observation) -> Option<ControlMessage> {
        debug_assert!(self.sent_rts.is_none());
        match obs {
            Observation::Clean(Transmission::Control(ControlMessage::Rts { src, dst, slots })) => {
                if *dst == self.id {
                    let receivable = free_rx_set(&self.table);
                    let grant: SlotSet = slots.iter().filter(|s| receivable.contains(*s)).collect();
                    let ok = match self.options.grant_policy {
                        GrantPolicy::Partial => !grant.is_empty(),
                        GrantPolicy::AllOrNothing => grant.len() == slots.len(),
                    };
                    if !ok {
                        return None;
                    }
                    self.granted = Some(Grant { src: *src, slots: grant.clone() });
                    Some(ControlMessage::Cts { src: self.id, dst: *src, slots: grant })
                } else if slots.intersects(&self.table.slots_in(&[SlotState::Rr])) {
                    Some(ControlMessage::Ncts { src: self.id })
                } else {
                    self.provisional = Some(Grant { src: *src, slots: slots.clone() });
                    None
                }
            }
            Observation::Collision
                if self.options.paranoid_ncts || self.table.count(SlotState::Rr) > 0 =>
            {
                Some(ControlMessage::Ncts { src: self.id })
            }
            _ => None,
        }
    }

    /// RTS sender in the (N)CTS mini-slot: a clean CTS from the intended
    /// receiver turns the granted slots into RT and yields the CONF.
    pub fn on_ncts_minislot(&mut self, obs: &Observation) -> Result<Option<ControlMessage>, RsvError> {
        let Some((target, requested)) = self.sent_rts.clone() else {
            return Ok(None);
        };
        let Some(ControlMessage::Cts { src, dst, slots }) = obs.clean_control() else {
            return Ok(None);
        };
        if *src != target || *dst != self.id {
            return Ok(None);
        }
        if slots.is_empty() || !slots.is_subset(&requested) {
            return Err(RsvError::ProtocolViolation {
                node: self.id,
                from: *src,
                granted: slots.clone(),
                requested,
            });
        }
        let reservation = self.next_reservation;
        self.next_reservation += 1;
        for s in slots.iter() {
            let entry = SlotEntry { state: SlotState::Rt, peer: Some(target), reservation: Some(reservation) };
            let change = self.table.set(s, entry, Cause::Cts);
            self.record(change);
            self.contention.last_request.remove(s);
        }
        Ok(Some(ControlMessage::Conf { src: self.id, dst: target, slots: slots.clone() }))
    }

    /// Bystander in the (N)CTS mini-slot: a neighbor is about to receive in
    /// the named slots, so FTR slots become FR.
    pub fn overheard_cts(&mut self, obs: &Observation) {
        if self.sent_rts.is_some() {
            return;
        }
        if let Some(ControlMessage::Cts { dst, slots, .. }) = obs.clean_control() {
            if *dst == self.id {
                return;
            }
            for s in slots.iter() {
                let change = self.table.mark_if_free(s, SlotState::Fr, Cause::OverheardCts);
                self.record(change);
            }
        }
    }

    /// CONF mini-slot for every node that did not send a CONF.
    pub fn on_conf_minislot(&mut self, obs: &Observation) {
        let conf = match obs.clean_control() {
            Some(ControlMessage::Conf { src, dst, slots }) => Some((*src, *dst, slots)),
            _ => None,
        };
        if let Some(grant) = self.granted.take() {
            if let Some((src, dst, slots)) = conf {
                if src == grant.src && dst == self.id && slots.is_subset(&grant.slots) {
                    for s in slots.iter() {
                        let entry = SlotEntry { state: SlotState::Rr, peer: Some(src), reservation: None };
                        let change = self.table.set(s, entry, Cause::Conf);
                        self.record(change);
                    }
                }
            }
        }
        if let Some(heard) = self.provisional.take() {
            if let Some((src, _, slots)) = conf {
                if src == heard.src {
                    for s in slots.iter().filter(|s| heard.slots.contains(*s)) {
                        let change = self.table.mark_if_free(s, SlotState::Ft, Cause::OverheardConf);
                        self.record(change);
                    }
                }
            }
        }
    }

    /// Clears per-triple scratch state.
    pub fn end_triple(&mut self) {
        self.sent_rts = None;
        self.granted = None;
        self.provisional = None;
    }

    /// Beacon to send at the start of `slot`, if we receive in it.
    pub fn receive_beacon(&self, slot: usize) -> Option<ControlMessage> {
        let e = self.table.entry(slot);
        (e.state == SlotState::Rr).then(|| ControlMessage::Rb {
            receiver: self.id,
            transmitter: e.peer.expect("RR entry without peer"),
            slot,
        })
    }

    /// Applies [`rb_decision`] for an RT slot. On deferral the slot and every
    /// later slot of the same reservation are released; their payload goes
    /// back to contention in the next frame.
    pub fn apply_rb(&mut self, slot: usize, obs: &Observation) -> RbDecision {
        let entry = *self.table.entry(slot);
        debug_assert_eq!(entry.state, SlotState::Rt);
        let receiver = entry.peer.expect("RT entry without peer");
        if self.options.rb_ablation {
            return RbDecision::Transmit;
        }
        let decision = rb_decision(self.id, receiver, slot, obs);
        if decision == RbDecision::DeferAndRelease {
            for s in slot..self.table.len() {
                let e = *self.table.entry(s);
                if e.state == SlotState::Rt && e.reservation == entry.reservation {
                    let change = self.table.set(s, SlotEntry::FREE, Cause::Release);
                    self.record(change);
                }
            }
        }
        decision
    }

    /// Bystander in an RB mini-slot: a neighbor receives in this slot.
    pub fn overheard_rb(&mut self, slot: usize, obs: &Observation) {
        if self.table.state(slot).is_reserved() {
            return;
        }
        if let Some(ControlMessage::Rb { slot: s, .. }) = obs.clean_control() {
            if *s == slot {
                let change = self.table.mark_if_free(slot, SlotState::Fr, Cause::OverheardRb);
                self.record(change);
            }
        }
    }

    /// Receiver side of the ACK mini-slot: acknowledge a clean data frame from
    /// our transmitter.
    pub fn ack_phase(&self, slot: usize, data_obs: &Observation) -> Option<ControlMessage> {
        let e = self.table.entry(slot);
        if e.state != SlotState::Rr {
            return None;
        }
        match data_obs {
            Observation::Clean(Transmission::Data(d))
                if d.dst == self.id && Some(d.src) == e.peer && d.slot == slot =>
            {
                Some(ControlMessage::Ack { receiver: self.id, transmitter: d.src, slot })
            }
            _ => None,
        }
    }

    /// Transmitter side of the ACK mini-slot; true when the slot's payload is
    /// confirmed delivered.
    pub fn transmitter_on_ack(&self, slot: usize, obs: &Observation) -> bool {
        let peer = self.table.peer(slot);
        matches!(
            obs.clean_control(),
            Some(&ControlMessage::Ack { receiver, transmitter, slot: s })
                if Some(receiver) == peer && transmitter == self.id && s == slot
        )
    }

    /// Wipes the table back to all-FTR and re-enables contention.
    pub fn end_of_frame(&mut self) {
        for s in 0..self.table.len() {
            let change = self.table.set(s, SlotEntry::FREE, Cause::Reset);
            self.record(change);
        }
        self.end_triple();
        self.contention.withdrawn = false;
        self.contention.last_request = SlotSet::new();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::DataFrame;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: usize = 25;

    fn node(id: u32) -> RsvNode {
        RsvNode::new(NodeId(id), N, 1.0, RsvOptions::default())
    }

    fn clean(m: ControlMessage) -> Observation {
        Observation::Clean(m.into())
    }

    fn rts(src: u32, dst: u32, slots: SlotSet) -> ControlMessage {
        ControlMessage::Rts { src: NodeId(src), dst: NodeId(dst), slots }
    }

    fn set_state(n: &mut RsvNode, slot: usize, state: SlotState, peer: Option<u32>) {
        let entry = SlotEntry { state, peer: peer.map(NodeId), reservation: Some(0) };
        n.table.set(slot, entry, Cause::Reset);
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn free_set_of_fresh_table() {
        assert_eq!(free_tx_set(&SlotTable::new(N)), (0..N).collect());
    }

    #[test]
    fn free_set_excludes_rr_and_fr() {
        let mut n = node(0);
        set_state(&mut n, 3, SlotState::Rr, Some(1));
        assert_eq!(free_tx_set(&n.table), (0..N).filter(|&s| s != 3).collect());
        let mut n = node(0);
        n.table.mark_if_free(5, SlotState::Fr, Cause::OverheardCts);
        assert!(!free_tx_set(&n.table).contains(5));
        assert_eq!(free_tx_set(&n.table).len(), N - 1);
    }

    fn table_with_free(free: &[usize]) -> SlotTable {
        let mut t = SlotTable::new(8);
        for s in 0..8 {
            if !free.contains(&s) {
                t.mark_if_free(s, SlotState::Fr, Cause::OverheardCts);
            }
        }
        t
    }

    #[test]
    fn forced_request_draws_from_free_set() {
        let table = table_with_free(&[1, 4, 7]);
        let mut st = ContentionState::new(1.0);
        let mut r = rng();
        for _ in 0..20 {
            st.last_request = SlotSet::new();
            let Some(ControlMessage::Rts { slots, .. }) =
                choose_request(&mut st, &mut r, &table, NodeId(0), NodeId(1), 2, 2)
            else {
                panic!("p = 1 must transmit");
            };
            assert_eq!(slots.len(), 2);
            assert!(slots.is_subset(&[1, 4, 7].into()));
        }
        assert!(!st.withdrawn);
    }

    #[test]
    fn withdraws_when_packet_does_not_fit() {
        let table = table_with_free(&[1, 4, 7]);
        let mut st = ContentionState::new(1.0);
        let out = choose_request(&mut st, &mut rng(), &table, NodeId(0), NodeId(1), 4, 4);
        assert_eq!(out, None);
        assert!(st.withdrawn);
        // stays out for the rest of the frame even if it would now fit
        let out = choose_request(&mut st, &mut rng(), &table, NodeId(0), NodeId(1), 1, 1);
        assert_eq!(out, None);
    }

    #[test]
    fn zero_persistence_never_transmits() {
        let table = SlotTable::new(8);
        let mut st = ContentionState::new(0.0);
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(choose_request(&mut st, &mut r, &table, NodeId(0), NodeId(1), 1, 1), None);
        }
        assert!(!st.withdrawn);
    }

    #[test]
    fn batch_request_is_capped_by_free_set() {
        let table = table_with_free(&[0, 2, 3]);
        let mut st = ContentionState::new(1.0);
        let out = choose_request(&mut st, &mut rng(), &table, NodeId(0), NodeId(1), 1, 10);
        assert_eq!(out, Some(rts(0, 1, [0, 2, 3].into())));
    }

    #[test]
    fn receiver_grants_free_slots() {
        let mut r = node(1);
        let reply = r.on_rts_minislot(&clean(rts(0, 1, [2, 5].into())));
        assert_eq!(
            reply,
            Some(ControlMessage::Cts { src: NodeId(1), dst: NodeId(0), slots: [2, 5].into() })
        );
    }

    #[test]
    fn receiver_grants_subset_or_stays_silent() {
        let mut r = node(1);
        set_state(&mut r, 5, SlotState::Rt, Some(9));
        let reply = r.on_rts_minislot(&clean(rts(0, 1, [2, 5].into())));
        assert_eq!(reply, Some(ControlMessage::Cts { src: NodeId(1), dst: NodeId(0), slots: [2].into() }));

        let mut r = node(1);
        r.options.grant_policy = GrantPolicy::AllOrNothing;
        set_state(&mut r, 5, SlotState::Rt, Some(9));
        assert_eq!(r.on_rts_minislot(&clean(rts(0, 1, [2, 5].into()))), None);

        let mut r = node(1);
        r.table.mark_if_free(2, SlotState::Ft, Cause::OverheardConf);
        assert_eq!(r.on_rts_minislot(&clean(rts(0, 1, [2].into()))), None);
    }

    #[test]
    fn bystander_protects_rr_with_ncts() {
        let mut b = node(2);
        set_state(&mut b, 2, SlotState::Rr, Some(7));
        let reply = b.on_rts_minislot(&clean(rts(0, 1, [2].into())));
        assert_eq!(reply, Some(ControlMessage::Ncts { src: NodeId(2) }));
    }

    #[test]
    fn ncts_on_collision_only_with_rr_slots() {
        let mut b = node(2);
        assert_eq!(b.on_rts_minislot(&Observation::Collision), None);
        set_state(&mut b, 9, SlotState::Rr, Some(7));
        assert_eq!(b.on_rts_minislot(&Observation::Collision), Some(ControlMessage::Ncts { src: NodeId(2) }));
        let mut p = node(3);
        p.options.paranoid_ncts = true;
        assert_eq!(p.on_rts_minislot(&Observation::Collision), Some(ControlMessage::Ncts { src: NodeId(3) }));
        assert_eq!(node(4).on_rts_minislot(&Observation::Silence), None);
    }

    fn sender_with_rts(slots: SlotSet) -> RsvNode {
        let mut s = node(0);
        s.force_request(NodeId(1), &slots).unwrap();
        s
    }

    fn cts(slots: SlotSet) -> Observation {
        clean(ControlMessage::Cts { src: NodeId(1), dst: NodeId(0), slots })
    }

    #[test]
    fn full_grant_confirms() {
        let mut s = sender_with_rts([2, 5].into());
        let conf = s.on_ncts_minislot(&cts([2, 5].into())).unwrap();
        assert_eq!(conf, Some(ControlMessage::Conf { src: NodeId(0), dst: NodeId(1), slots: [2, 5].into() }));
        assert_eq!(s.table.state(2), SlotState::Rt);
        assert_eq!(s.table.state(5), SlotState::Rt);
        assert_eq!(s.table.peer(5), Some(NodeId(1)));
        assert!(s.table.check().is_ok());
    }

    #[test]
    fn partial_grant_confirms_subset() {
        let mut s = sender_with_rts([2, 5].into());
        let conf = s.on_ncts_minislot(&cts([2].into())).unwrap();
        assert_eq!(conf, Some(ControlMessage::Conf { src: NodeId(0), dst: NodeId(1), slots: [2].into() }));
        assert_eq!(s.table.state(2), SlotState::Rt);
        assert_eq!(s.table.state(5), SlotState::Ftr);
        // the residual slot is what a retry asks for first
        s.end_triple();
        let again = s.contend(&mut rng(), NodeId(1), 1, 1);
        assert_eq!(again, Some(rts(0, 1, [5].into())));
    }

    #[test]
    fn no_conf_without_clean_cts() {
        for obs in [Observation::Collision, Observation::Silence, clean(ControlMessage::Ncts { src: NodeId(4) })] {
            let mut s = sender_with_rts([2, 5].into());
            assert_eq!(s.on_ncts_minislot(&obs).unwrap(), None);
            assert_eq!(s.table.count(SlotState::Rt), 0);
        }
    }

    #[test]
    fn cts_outside_request_is_a_violation() {
        let mut s = sender_with_rts([2, 5].into());
        assert!(matches!(
            s.on_ncts_minislot(&cts([2, 6].into())),
            Err(RsvError::ProtocolViolation { .. })
        ));
    }

    #[test]
    fn receiver_marks_rr_on_conf() {
        let mut r = node(1);
        r.on_rts_minislot(&clean(rts(0, 1, [2, 5].into())));
        r.on_conf_minislot(&clean(ControlMessage::Conf { src: NodeId(0), dst: NodeId(1), slots: [2, 5].into() }));
        assert_eq!(r.table.state(2), SlotState::Rr);
        assert_eq!(r.table.state(5), SlotState::Rr);
        assert_eq!(r.table.peer(2), Some(NodeId(0)));
    }

    #[test]
    fn receiver_drops_grant_without_conf() {
        let mut r = node(1);
        r.on_rts_minislot(&clean(rts(0, 1, [2].into())));
        r.on_conf_minislot(&Observation::Silence);
        assert_eq!(r.table.state(2), SlotState::Ftr);
        r.end_triple();
        // a later CONF from the same sender does not resurrect the grant
        r.on_conf_minislot(&clean(ControlMessage::Conf { src: NodeId(0), dst: NodeId(1), slots: [2].into() }));
        assert_eq!(r.table.state(2), SlotState::Ftr);
    }

    #[test]
    fn bystander_marks_ft_on_conf() {
        let mut b = node(2);
        assert_eq!(b.on_rts_minislot(&clean(rts(0, 1, [2, 5].into()))), None);
        b.on_conf_minislot(&clean(ControlMessage::Conf { src: NodeId(0), dst: NodeId(1), slots: [2, 5].into() }));
        assert_eq!(b.table.state(2), SlotState::Ft);
        assert_eq!(b.table.state(5), SlotState::Ft);
        assert_eq!(b.table.peer(2), None);
    }

    #[test]
    fn bystander_marks_only_confirmed_subset() {
        let mut b = node(2);
        set_state(&mut b, 5, SlotState::Rr, Some(9));
        b.on_rts_minislot(&clean(rts(0, 1, [2, 7].into())));
        b.on_conf_minislot(&clean(ControlMessage::Conf { src: NodeId(0), dst: NodeId(1), slots: [2].into() }));
        assert_eq!(b.table.state(2), SlotState::Ft);
        assert_eq!(b.table.state(7), SlotState::Ftr);
    }

    #[test]
    fn overheard_cts_marks_fr() {
        let mut b = node(2);
        b.overheard_cts(&clean(ControlMessage::Cts { src: NodeId(1), dst: NodeId(0), slots: [7].into() }));
        assert_eq!(b.table.state(7), SlotState::Fr);

        let mut t = node(2);
        set_state(&mut t, 7, SlotState::Rt, Some(3));
        t.overheard_cts(&clean(ControlMessage::Cts { src: NodeId(1), dst: NodeId(0), slots: [7].into() }));
        assert_eq!(t.table.state(7), SlotState::Rt);

        let mut c = node(2);
        c.overheard_cts(&Observation::Collision);
        assert_eq!(c.table.count(SlotState::Ftr), N);
    }

    fn rb_obs(rx: u32, tx: u32, slot: usize) -> Observation {
        clean(ControlMessage::Rb { receiver: NodeId(rx), transmitter: NodeId(tx), slot })
    }

    #[test]
    fn rb_decisions() {
        let (me, rx) = (NodeId(1), NodeId(0));
        assert_eq!(rb_decision(me, rx, 3, &rb_obs(0, 1, 3)), RbDecision::Transmit);
        assert_eq!(rb_decision(me, rx, 3, &Observation::Collision), RbDecision::DeferAndRelease);
        assert_eq!(rb_decision(me, rx, 3, &Observation::Silence), RbDecision::DeferAndRelease);
        assert_eq!(rb_decision(me, rx, 3, &rb_obs(0, 5, 3)), RbDecision::DeferAndRelease);
        assert_eq!(rb_decision(me, rx, 3, &rb_obs(4, 1, 3)), RbDecision::DeferAndRelease);
    }

    #[test]
    fn deferral_releases_rest_of_reservation() {
        let mut s = sender_with_rts([1, 3, 6].into());
        s.on_ncts_minislot(&cts([1, 3, 6].into())).unwrap();
        s.end_triple();
        s.force_request(NodeId(2), &[8].into()).unwrap();
        s.on_ncts_minislot(&clean(ControlMessage::Cts { src: NodeId(2), dst: NodeId(0), slots: [8].into() }))
            .unwrap();
        assert_eq!(s.apply_rb(1, &rb_obs(1, 0, 1)), RbDecision::Transmit);
        assert_eq!(s.apply_rb(3, &Observation::Collision), RbDecision::DeferAndRelease);
        assert_eq!(s.table.state(1), SlotState::Rt);
        assert_eq!(s.table.state(3), SlotState::Ftr);
        assert_eq!(s.table.state(6), SlotState::Ftr);
        // a different reservation is unaffected
        assert_eq!(s.table.state(8), SlotState::Rt);
    }

    #[test]
    fn ablation_ignores_beacon() {
        let mut s = sender_with_rts([1].into());
        s.options.rb_ablation = true;
        s.on_ncts_minislot(&cts([1].into())).unwrap();
        assert_eq!(s.apply_rb(1, &Observation::Collision), RbDecision::Transmit);
    }

    #[test]
    fn overheard_rb_marks_fr() {
        let mut b = node(5);
        b.overheard_rb(4, &rb_obs(1, 0, 4));
        assert_eq!(b.table.state(4), SlotState::Fr);

        let mut f = node(5);
        f.table.mark_if_free(4, SlotState::Ft, Cause::OverheardConf);
        f.overheard_rb(4, &rb_obs(1, 0, 4));
        assert_eq!(f.table.state(4), SlotState::Ft);

        let mut c = node(5);
        c.overheard_rb(4, &Observation::Collision);
        assert_eq!(c.table.state(4), SlotState::Ftr);
    }

    #[test]
    fn ack_only_for_clean_data_from_peer() {
        let mut r = node(1);
        set_state(&mut r, 4, SlotState::Rr, Some(0));
        let data = |src: u32| {
            Observation::Clean(Transmission::Data(DataFrame { src: NodeId(src), dst: NodeId(1), slot: 4, packet: 9 }))
        };
        assert_eq!(
            r.ack_phase(4, &data(0)),
            Some(ControlMessage::Ack { receiver: NodeId(1), transmitter: NodeId(0), slot: 4 })
        );
        assert_eq!(r.ack_phase(4, &data(3)), None);
        assert_eq!(r.ack_phase(4, &Observation::Collision), None);
        assert_eq!(r.ack_phase(4, &Observation::Silence), None);

        let mut t = node(0);
        set_state(&mut t, 4, SlotState::Rt, Some(1));
        let ack = clean(ControlMessage::Ack { receiver: NodeId(1), transmitter: NodeId(0), slot: 4 });
        assert!(t.transmitter_on_ack(4, &ack));
        assert!(!t.transmitter_on_ack(4, &Observation::Collision));
        assert!(!t.transmitter_on_ack(4, &Observation::Silence));
    }

    #[test]
    fn end_of_frame_resets_everything() {
        let mut n = node(0);
        set_state(&mut n, 0, SlotState::Rt, Some(1));
        set_state(&mut n, 1, SlotState::Rr, Some(2));
        n.table.mark_if_free(2, SlotState::Fr, Cause::OverheardCts);
        n.contention.withdrawn = true;
        n.end_of_frame();
        assert_eq!(n.table, SlotTable::new(N));
        assert_eq!(free_tx_set(&n.table).len(), N);
        assert!(!n.contention.withdrawn);
        let resets: Vec<_> = n.drain_changes().filter(|c| c.cause == Cause::Reset).collect();
        assert_eq!(resets.len(), 3);
    }
}
