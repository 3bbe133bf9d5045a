//! Frame geometry, node and packet identifiers, and the messages exchanged on
//! the shared channel.
//!
//! A frame consists of `K` signaling triples (RTS, (N)CTS, CONF mini-slots)
//! followed by `N` data slots. Every data slot is bracketed by a receive-beacon
//! (RB) mini-slot and an acknowledgement (ACK) mini-slot. All mini-slots carry
//! one control message of `control_bytes`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// TDMA frame geometry and channel rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// RTS/(N)CTS/CONF triples per frame.
    pub triples: usize,
    /// Data slots per frame.
    pub data_slots: usize,
    /// Size of every control message in bytes.
    pub control_bytes: usize,
    /// Payload carried by one data slot in bytes.
    pub data_payload_bytes: usize,
    /// Raw channel bit rate.
    pub channel_rate_bps: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("invalid frame configuration: {0}")]
    Invalid(&'static str),
    #[error("packet of {bytes} bytes needs {slots} slots, frame has only {max}")]
    OversizePacket { bytes: usize, slots: usize, max: usize },
}

impl FrameConfig {
    /// Parameters used for the 25-node mesh experiments: 14 triples, 25 data
    /// slots, 20-byte control frames, 1044-byte data frames at 2 Mb/s.
    pub const STANDARD: FrameConfig = FrameConfig {
        triples: 14,
        data_slots: 25,
        control_bytes: 20,
        data_payload_bytes: 1044,
        channel_rate_bps: 2.0e6,
    };

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.triples == 0 {
            return Err(FrameError::Invalid("triples must be at least 1"));
        }
        if self.data_slots == 0 {
            return Err(FrameError::Invalid("data_slots must be at least 1"));
        }
        if self.control_bytes == 0 || self.data_payload_bytes == 0 {
            return Err(FrameError::Invalid("byte sizes must be at least 1"));
        }
        if !(self.channel_rate_bps > 0.0) || !self.channel_rate_bps.is_finite() {
            return Err(FrameError::Invalid("channel_rate_bps must be positive"));
        }
        Ok(())
    }

    /// Air time of one control mini-slot.
    pub fn minislot_s(&self) -> f64 {
        (self.control_bytes * 8) as f64 / self.channel_rate_bps
    }

    /// Air time of the payload part of one data slot.
    pub fn data_s(&self) -> f64 {
        (self.data_payload_bytes * 8) as f64 / self.channel_rate_bps
    }

    /// Duration of the signaling section.
    pub fn signaling_s(&self) -> f64 {
        3.0 * self.triples as f64 * self.minislot_s()
    }

    /// Length of one data slot including its RB and ACK mini-slots.
    pub fn data_slot_span_s(&self) -> f64 {
        2.0 * self.minislot_s() + self.data_s()
    }

    /// Offset from the frame start to the end of the ACK mini-slot of `slot`.
    pub fn ack_end_offset_s(&self, slot: usize) -> f64 {
        let bits = 3 * self.triples * self.control_bytes * 8
            + (slot + 1) * (2 * self.control_bytes * 8 + self.data_payload_bytes * 8);
        bits as f64 / self.channel_rate_bps
    }

    /// Number of data slots needed for `bytes` of payload.
    pub fn packet_from_bytes(&self, bytes: usize) -> Result<usize, FrameError> {
        let slots = bytes.max(1).div_ceil(self.data_payload_bytes);
        if slots > self.data_slots {
            return Err(FrameError::OversizePacket { bytes, slots, max: self.data_slots });
        }
        Ok(slots)
    }
}

/// Duration of one frame: three control mini-slots per triple plus RB, data and
/// ACK for every data slot.
pub fn frame_duration_s(cfg: &FrameConfig) -> f64 {
    let bits = 3 * cfg.triples * cfg.control_bytes * 8
        + cfg.data_slots * (2 * cfg.control_bytes * 8 + cfg.data_payload_bytes * 8);
    bits as f64 / cfg.channel_rate_bps
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A queued unicast packet, measured in data slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub length_slots: usize,
    pub bytes: usize,
    pub arrival_time_s: f64,
    /// Slots not yet acknowledged.
    pub remaining_slots: usize,
}

impl Packet {
    /// Payload bits carried by the next unacknowledged slot.
    pub fn next_slot_bits(&self, cfg: &FrameConfig) -> u64 {
        let sent_slots = self.length_slots - self.remaining_slots;
        let sent_bytes = sent_slots * cfg.data_payload_bytes;
        let left = self.bytes.saturating_sub(sent_bytes);
        (left.min(cfg.data_payload_bytes) * 8) as u64
    }
}

/// Set of data-slot indices named in a control message.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotSet(BTreeSet<usize>);

impl SlotSet {
    pub fn new() -> Self {
        SlotSet(BTreeSet::new())
    }

    pub fn single(slot: usize) -> Self {
        SlotSet(BTreeSet::from([slot]))
    }

    pub fn insert(&mut self, slot: usize) -> bool {
        self.0.insert(slot)
    }

    pub fn remove(&mut self, slot: usize) -> bool {
        self.0.remove(&slot)
    }

    pub fn contains(&self, slot: usize) -> bool {
        self.0.contains(&slot)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &SlotSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn intersects(&self, other: &SlotSet) -> bool {
        self.0.iter().any(|s| other.0.contains(s))
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl FromIterator<usize> for SlotSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        SlotSet(iter.into_iter().collect())
    }
}

impl<const M: usize> From<[usize; M]> for SlotSet {
    fn from(v: [usize; M]) -> Self {
        v.into_iter().collect()
    }
}

impl fmt::Display for SlotSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for s in &self.0 {
            if !first {
                f.write_str(";")?;
            }
            write!(f, "{s}")?;
            first = false;
        }
        Ok(())
    }
}

/// Messages carried in signaling, RB and ACK mini-slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ControlMessage {
    Rts { src: NodeId, dst: NodeId, slots: SlotSet },
    Cts { src: NodeId, dst: NodeId, slots: SlotSet },
    Ncts { src: NodeId },
    Conf { src: NodeId, dst: NodeId, slots: SlotSet },
    /// Sent by `receiver` at the start of `slot`, naming its `transmitter`.
    Rb { receiver: NodeId, transmitter: NodeId, slot: usize },
    Ack { receiver: NodeId, transmitter: NodeId, slot: usize },
}

impl ControlMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlMessage::Rts { .. } => "RTS",
            ControlMessage::Cts { .. } => "CTS",
            ControlMessage::Ncts { .. } => "NCTS",
            ControlMessage::Conf { .. } => "CONF",
            ControlMessage::Rb { .. } => "RB",
            ControlMessage::Ack { .. } => "ACK",
        }
    }

    /// Node the message is addressed to, if any.
    pub fn addressee(&self) -> Option<NodeId> {
        match *self {
            ControlMessage::Rts { dst, .. }
            | ControlMessage::Cts { dst, .. }
            | ControlMessage::Conf { dst, .. } => Some(dst),
            ControlMessage::Ncts { .. } => None,
            ControlMessage::Rb { transmitter, .. } | ControlMessage::Ack { transmitter, .. } => {
                Some(transmitter)
            }
        }
    }

    /// Checks the structural invariants against a frame with `data_slots` slots.
    pub fn validate(&self, data_slots: usize) -> Result<(), MessageParseError> {
        let check = |slots: &SlotSet| {
            if slots.is_empty() {
                Err(MessageParseError::new("empty slot set"))
            } else if slots.last().is_some_and(|m| m >= data_slots) {
                Err(MessageParseError::new("slot index out of range"))
            } else {
                Ok(())
            }
        };
        match self {
            ControlMessage::Rts { slots, .. }
            | ControlMessage::Cts { slots, .. }
            | ControlMessage::Conf { slots, .. } => check(slots),
            ControlMessage::Rb { slot, .. } | ControlMessage::Ack { slot, .. } => {
                if *slot < data_slots {
                    Ok(())
                } else {
                    Err(MessageParseError::new("slot index out of range"))
                }
            }
            ControlMessage::Ncts { .. } => Ok(()),
        }
    }
}

impl fmt::Display for ControlMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlMessage::Rts { src, dst, slots }
            | ControlMessage::Cts { src, dst, slots }
            | ControlMessage::Conf { src, dst, slots } => {
                write!(f, "{} src={src} dst={dst} slots={slots}", self.kind())
            }
            ControlMessage::Ncts { src } => write!(f, "NCTS src={src}"),
            ControlMessage::Rb { receiver, transmitter, slot }
            | ControlMessage::Ack { receiver, transmitter, slot } => {
                write!(f, "{} rx={receiver} tx={transmitter} slot={slot}", self.kind())
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse message: {reason}")]
pub struct MessageParseError {
    pub reason: String,
}

impl MessageParseError {
    pub(crate) fn new(reason: impl Into<String>) -> Self {
        MessageParseError { reason: reason.into() }
    }
}

/// Splits `key=value` tokens of a message body.
pub(crate) fn fields<'a>(
    tokens: impl Iterator<Item = &'a str>,
) -> Result<Vec<(&'a str, &'a str)>, MessageParseError> {
    tokens
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| MessageParseError::new(format!("expected key=value, got {t:?}")))
        })
        .collect()
}

pub(crate) fn field<'a>(
    fields: &[(&'a str, &'a str)],
    key: &str,
) -> Result<&'a str, MessageParseError> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| MessageParseError::new(format!("missing field {key}")))
}

pub(crate) fn parse_num<T: FromStr>(s: &str) -> Result<T, MessageParseError> {
    s.parse().map_err(|_| MessageParseError::new(format!("bad number {s:?}")))
}

fn parse_slots(s: &str) -> Result<SlotSet, MessageParseError> {
    if s.is_empty() {
        return Ok(SlotSet::new());
    }
    s.split(';').map(parse_num::<usize>).collect()
}

impl FromStr for ControlMessage {
    type Err = MessageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split_whitespace();
        let kind = tokens.next().ok_or_else(|| MessageParseError::new("empty"))?;
        let fs = fields(tokens)?;
        let node = |k: &str| -> Result<NodeId, MessageParseError> {
            Ok(NodeId(parse_num(field(&fs, k)?)?))
        };
        Ok(match kind {
            "RTS" | "CTS" | "CONF" => {
                let (src, dst) = (node("src")?, node("dst")?);
                let slots = parse_slots(field(&fs, "slots")?)?;
                match kind {
                    "RTS" => ControlMessage::Rts { src, dst, slots },
                    "CTS" => ControlMessage::Cts { src, dst, slots },
                    _ => ControlMessage::Conf { src, dst, slots },
                }
            }
            "NCTS" => ControlMessage::Ncts { src: node("src")? },
            "RB" | "ACK" => {
                let (receiver, transmitter) = (node("rx")?, node("tx")?);
                let slot = parse_num(field(&fs, "slot")?)?;
                if kind == "RB" {
                    ControlMessage::Rb { receiver, transmitter, slot }
                } else {
                    ControlMessage::Ack { receiver, transmitter, slot }
                }
            }
            other => return Err(MessageParseError::new(format!("unknown kind {other:?}"))),
        })
    }
}

/// One data slot's payload on the air.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataFrame {
    pub src: NodeId,
    pub dst: NodeId,
    pub slot: usize,
    pub packet: u64,
}

/// Anything a node can put on the channel in one mini-slot or data slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Transmission {
    Control(ControlMessage),
    Data(DataFrame),
}

impl Transmission {
    pub fn addressee(&self) -> Option<NodeId> {
        match self {
            Transmission::Control(m) => m.addressee(),
            Transmission::Data(d) => Some(d.dst),
        }
    }

    pub fn as_control(&self) -> Option<&ControlMessage> {
        match self {
            Transmission::Control(m) => Some(m),
            Transmission::Data(_) => None,
        }
    }
}

impl From<ControlMessage> for Transmission {
    fn from(m: ControlMessage) -> Self {
        Transmission::Control(m)
    }
}

impl fmt::Display for Transmission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transmission::Control(m) => m.fmt(f),
            Transmission::Data(d) => write!(
                f,
                "DATA src={} dst={} slot={} pkt={}",
                d.src, d.dst, d.slot, d.packet
            ),
        }
    }
}

impl FromStr for Transmission {
    type Err = MessageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split_whitespace();
        if tokens.next() == Some("DATA") {
            let fs = fields(tokens)?;
            return Ok(Transmission::Data(DataFrame {
                src: NodeId(parse_num(field(&fs, "src")?)?),
                dst: NodeId(parse_num(field(&fs, "dst")?)?),
                slot: parse_num(field(&fs, "slot")?)?,
                packet: parse_num(field(&fs, "pkt")?)?,
            }));
        }
        s.parse().map(Transmission::Control)
    }
}

/// What one node's radio perceives in one mini-slot or data slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    Silence,
    Clean(Transmission),
    Collision,
}

impl Observation {
    pub fn clean_control(&self) -> Option<&ControlMessage> {
        match self {
            Observation::Clean(Transmission::Control(m)) => Some(m),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Observation::Silence => "silence",
            Observation::Clean(_) => "clean",
            Observation::Collision => "collision",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_frame_duration() {
        let d = frame_duration_s(&FrameConfig::STANDARD);
        assert!((d - 0.11176).abs() < 1e-12, "{d}");
    }

    #[test]
    fn unit_frame_duration() {
        let cfg = FrameConfig {
            triples: 1,
            data_slots: 1,
            control_bytes: 1,
            data_payload_bytes: 1,
            channel_rate_bps: 8.0,
        };
        // Three 8-bit control mini-slots, then RB, data and ACK: 24 + 8 + 8 + 8 bits.
        assert_eq!(frame_duration_s(&cfg), 6.0);
        assert_eq!(cfg.ack_end_offset_s(0), 6.0);
    }

    #[test]
    fn doubling_rate_halves_duration() {
        let mut cfg = FrameConfig::STANDARD;
        let d = frame_duration_s(&cfg);
        cfg.channel_rate_bps *= 2.0;
        assert_eq!(frame_duration_s(&cfg) * 2.0, d);
    }

    #[test]
    fn last_ack_ends_the_frame() {
        let cfg = FrameConfig::STANDARD;
        let end = cfg.ack_end_offset_s(cfg.data_slots - 1);
        assert!((end - frame_duration_s(&cfg)).abs() < 1e-15);
    }

    #[test]
    fn slots_for_payload() {
        let cfg = FrameConfig::STANDARD;
        assert_eq!(cfg.packet_from_bytes(1044), Ok(1));
        assert_eq!(cfg.packet_from_bytes(1045), Ok(2));
        assert_eq!(cfg.packet_from_bytes(25 * 1044), Ok(25));
        assert!(matches!(
            cfg.packet_from_bytes(26 * 1044),
            Err(FrameError::OversizePacket { slots: 26, .. })
        ));
    }

    #[test]
    fn rejects_degenerate_config() {
        let mut cfg = FrameConfig::STANDARD;
        cfg.triples = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = FrameConfig::STANDARD;
        cfg.channel_rate_bps = 0.0;
        assert!(cfg.validate().is_err());
        assert!(FrameConfig::STANDARD.validate().is_ok());
    }

    #[test]
    fn message_validation() {
        let rts = ControlMessage::Rts { src: NodeId(0), dst: NodeId(1), slots: SlotSet::new() };
        assert!(rts.validate(4).is_err());
        let rts = ControlMessage::Rts { src: NodeId(0), dst: NodeId(1), slots: [4].into() };
        assert!(rts.validate(4).is_err());
        let rts = ControlMessage::Rts { src: NodeId(0), dst: NodeId(1), slots: [3].into() };
        assert!(rts.validate(4).is_ok());
    }

    fn frame_config() -> impl Strategy<Value = FrameConfig> {
        (1usize..40, 1usize..60, 1usize..100, 1usize..3000, 1.0f64..1e8).prop_map(
            |(triples, data_slots, control_bytes, data_payload_bytes, channel_rate_bps)| {
                FrameConfig { triples, data_slots, control_bytes, data_payload_bytes, channel_rate_bps }
            },
        )
    }

    fn node() -> impl Strategy<Value = NodeId> {
        (0u32..1000).prop_map(NodeId)
    }

    fn message() -> impl Strategy<Value = Transmission> {
        let slots = proptest::collection::btree_set(0usize..64, 0..8)
            .prop_map(|s| s.into_iter().collect::<SlotSet>());
        prop_oneof![
            (node(), node(), slots.clone())
                .prop_map(|(src, dst, slots)| ControlMessage::Rts { src, dst, slots }.into()),
            (node(), node(), slots.clone())
                .prop_map(|(src, dst, slots)| ControlMessage::Cts { src, dst, slots }.into()),
            node().prop_map(|src| ControlMessage::Ncts { src }.into()),
            (node(), node(), slots)
                .prop_map(|(src, dst, slots)| ControlMessage::Conf { src, dst, slots }.into()),
            (node(), node(), 0usize..64).prop_map(|(receiver, transmitter, slot)| {
                ControlMessage::Rb { receiver, transmitter, slot }.into()
            }),
            (node(), node(), 0usize..64).prop_map(|(receiver, transmitter, slot)| {
                ControlMessage::Ack { receiver, transmitter, slot }.into()
            }),
            (node(), node(), 0usize..64, any::<u64>()).prop_map(|(src, dst, slot, packet)| {
                Transmission::Data(DataFrame { src, dst, slot, packet })
            }),
        ]
    }

    proptest! {
        #[test]
        fn duration_strictly_monotone(cfg in frame_config()) {
            let d = frame_duration_s(&cfg);
            let bump = |f: &dyn Fn(&mut FrameConfig)| {
                let mut c = cfg;
                f(&mut c);
                frame_duration_s(&c)
            };
            prop_assert!(bump(&|c| c.triples += 1) > d);
            prop_assert!(bump(&|c| c.data_slots += 1) > d);
            prop_assert!(bump(&|c| c.control_bytes += 1) > d);
            prop_assert!(bump(&|c| c.data_payload_bytes += 1) > d);
            prop_assert!(bump(&|c| c.channel_rate_bps *= 1.5) < d);
        }

        #[test]
        fn messages_round_trip_through_text(t in message()) {
            let text = t.to_string();
            prop_assert_eq!(text.parse::<Transmission>().unwrap(), t);
        }
    }
}
