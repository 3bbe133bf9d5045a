//! Trace records.
//!
//! One line per event in the fixed column order `frame,phase,index,node,action,detail`.
//! `index` is the triple number in signaling phases and the data-slot number in
//! data phases. `detail` is a space-separated list of `key=value` tokens (or a
//! rendered message for `send`) and never contains a comma, so a line always
//! splits into exactly six fields.

use std::fmt;
use std::str::FromStr;

use crate::frame::{field, fields, parse_num, MessageParseError, NodeId, Transmission};
use crate::rsv::{Cause, SlotState, TableChange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Frame,
    Rts,
    Cts,
    Conf,
    Rb,
    Data,
    Ack,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Frame => "frame",
            Phase::Rts => "rts",
            Phase::Cts => "cts",
            Phase::Conf => "conf",
            Phase::Rb => "rb",
            Phase::Data => "data",
            Phase::Ack => "ack",
        }
    }
}

impl FromStr for Phase {
    type Err = MessageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "frame" => Phase::Frame,
            "rts" => Phase::Rts,
            "cts" => Phase::Cts,
            "conf" => Phase::Conf,
            "rb" => Phase::Rb,
            "data" => Phase::Data,
            "ack" => Phase::Ack,
            _ => return Err(MessageParseError::new(format!("unknown phase {s:?}"))),
        })
    }
}

/// How the addressee of a transmission perceived it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Clean,
    Collision,
    /// Nothing decodable: out of range, or the addressee was itself sending.
    Lost,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Clean => "clean",
            Outcome::Collision => "collision",
            Outcome::Lost => "lost",
        }
    }
}

impl FromStr for Outcome {
    type Err = MessageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "clean" => Outcome::Clean,
            "collision" => Outcome::Collision,
            "lost" => Outcome::Lost,
            _ => return Err(MessageParseError::new(format!("unknown outcome {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    Oversize,
    NoNeighbor,
    QueueFull,
}

impl DropReason {
    pub fn label(self) -> &'static str {
        match self {
            DropReason::Oversize => "oversize",
            DropReason::NoNeighbor => "no-neighbor",
            DropReason::QueueFull => "queue-full",
        }
    }
}

impl FromStr for DropReason {
    type Err = MessageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "oversize" => DropReason::Oversize,
            "no-neighbor" => DropReason::NoNeighbor,
            "queue-full" => DropReason::QueueFull,
            _ => return Err(MessageParseError::new(format!("unknown drop reason {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Arrive { packet: u64, dst: NodeId, slots: usize, bytes: usize, time_s: f64 },
    Drop { packet: u64, reason: DropReason },
    Send(Transmission),
    /// Reception outcome at the addressee of a message sent by `from`.
    Rx { from: NodeId, kind: String, outcome: Outcome },
    Table(TableChange),
    /// An RT slot given up after the RB mini-slot.
    Defer { receiver: NodeId },
    /// An acknowledged data slot; `delay_s` is set when it completes the packet.
    Delivered { packet: u64, bits: u64, delay_s: Option<f64> },
    /// Frame summary used for slot-usage and conservation accounting.
    FrameEnd { reserved: usize, queued: usize, arrived: u64, delivered: u64, dropped: u64 },
}

impl Event {
    pub fn action(&self) -> &'static str {
        match self {
            Event::Arrive { .. } => "arrive",
            Event::Drop { .. } => "drop",
            Event::Send(_) => "send",
            Event::Rx { .. } => "rx",
            Event::Table(_) => "table",
            Event::Defer { .. } => "defer",
            Event::Delivered { .. } => "delivered",
            Event::FrameEnd { .. } => "end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub frame: u64,
    pub phase: Phase,
    pub index: usize,
    pub node: NodeId,
    pub event: Event,
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},",
            self.frame,
            self.phase.label(),
            self.index,
            self.node,
            self.event.action()
        )?;
        match &self.event {
            Event::Arrive { packet, dst, slots, bytes, time_s } => {
                write!(f, "pkt={packet} dst={dst} slots={slots} bytes={bytes} t={time_s:?}")
            }
            Event::Drop { packet, reason } => write!(f, "pkt={packet} reason={}", reason.label()),
            Event::Send(t) => write!(f, "{t}"),
            Event::Rx { from, kind, outcome } => {
                write!(f, "kind={kind} from={from} outcome={}", outcome.label())
            }
            Event::Table(c) => write!(
                f,
                "slot={} old={} new={} cause={}",
                c.slot,
                c.old,
                c.new,
                c.cause.label()
            ),
            Event::Defer { receiver } => write!(f, "rx={receiver}"),
            Event::Delivered { packet, bits, delay_s } => {
                write!(f, "pkt={packet} bits={bits}")?;
                if let Some(d) = delay_s {
                    write!(f, " delay={d:?}")?;
                }
                Ok(())
            }
            Event::FrameEnd { reserved, queued, arrived, delivered, dropped } => write!(
                f,
                "reserved={reserved} queued={queued} arrived={arrived} delivered={delivered} dropped={dropped}"
            ),
        }
    }
}

impl FromStr for Record {
    type Err = MessageParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let cols: Vec<&str> = line.splitn(6, ',').collect();
        let [frame, phase, index, node, action, detail] = cols[..] else {
            return Err(MessageParseError::new("expected six comma-separated fields"));
        };
        let fs = || fields(detail.split_whitespace());
        let node_field = |fs: &[(&str, &str)], k: &str| -> Result<NodeId, MessageParseError> {
            Ok(NodeId(parse_num(field(fs, k)?)?))
        };
        let state = |s: &str| s.parse::<SlotState>().map_err(MessageParseError::new);
        let event = match action {
            "arrive" => {
                let fs = fs()?;
                Event::Arrive {
                    packet: parse_num(field(&fs, "pkt")?)?,
                    dst: node_field(&fs, "dst")?,
                    slots: parse_num(field(&fs, "slots")?)?,
                    bytes: parse_num(field(&fs, "bytes")?)?,
                    time_s: parse_num(field(&fs, "t")?)?,
                }
            }
            "drop" => {
                let fs = fs()?;
                Event::Drop { packet: parse_num(field(&fs, "pkt")?)?, reason: field(&fs, "reason")?.parse()? }
            }
            "send" => Event::Send(detail.parse()?),
            "rx" => {
                let fs = fs()?;
                Event::Rx {
                    from: node_field(&fs, "from")?,
                    kind: field(&fs, "kind")?.to_string(),
                    outcome: field(&fs, "outcome")?.parse()?,
                }
            }
            "table" => {
                let fs = fs()?;
                Event::Table(TableChange {
                    slot: parse_num(field(&fs, "slot")?)?,
                    old: state(field(&fs, "old")?)?,
                    new: state(field(&fs, "new")?)?,
                    cause: field(&fs, "cause")?.parse::<Cause>().map_err(MessageParseError::new)?,
                })
            }
            "defer" => Event::Defer { receiver: node_field(&fs()?, "rx")? },
            "delivered" => {
                let fs = fs()?;
                Event::Delivered {
                    packet: parse_num(field(&fs, "pkt")?)?,
                    bits: parse_num(field(&fs, "bits")?)?,
                    delay_s: field(&fs, "delay").ok().map(parse_num).transpose()?,
                }
            }
            "end" => {
                let fs = fs()?;
                Event::FrameEnd {
                    reserved: parse_num(field(&fs, "reserved")?)?,
                    queued: parse_num(field(&fs, "queued")?)?,
                    arrived: parse_num(field(&fs, "arrived")?)?,
                    delivered: parse_num(field(&fs, "delivered")?)?,
                    dropped: parse_num(field(&fs, "dropped")?)?,
                }
            }
            other => return Err(MessageParseError::new(format!("unknown action {other:?}"))),
        };
        Ok(Record {
            frame: parse_num(frame)?,
            phase: phase.parse()?,
            index: parse_num(index)?,
            node: NodeId(parse_num(node)?),
            event,
        })
    }
}

/// Renders records one per line.
pub fn to_text(records: &[Record]) -> String {
    let mut out = String::with_capacity(records.len() * 48);
    for r in records {
        use fmt::Write as _;
        let _ = writeln!(out, "{r}");
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<Record>, MessageParseError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{ControlMessage, DataFrame};

    fn rec(event: Event) -> Record {
        Record { frame: 3, phase: Phase::Rts, index: 2, node: NodeId(7), event }
    }

    #[test]
    fn every_event_round_trips() {
        let events = vec![
            Event::Arrive { packet: 1, dst: NodeId(2), slots: 3, bytes: 3000, time_s: 0.1 + 0.2 },
            Event::Drop { packet: 9, reason: DropReason::NoNeighbor },
            Event::Send(ControlMessage::Rts { src: NodeId(7), dst: NodeId(2), slots: [1, 4].into() }.into()),
            Event::Send(Transmission::Data(DataFrame { src: NodeId(7), dst: NodeId(2), slot: 4, packet: 11 })),
            Event::Rx { from: NodeId(2), kind: "CTS".into(), outcome: Outcome::Collision },
            Event::Table(TableChange { slot: 4, old: SlotState::Ftr, new: SlotState::Fr, cause: Cause::OverheardCts }),
            Event::Defer { receiver: NodeId(3) },
            Event::Delivered { packet: 11, bits: 8352, delay_s: Some(0.123456789) },
            Event::Delivered { packet: 11, bits: 8352, delay_s: None },
            Event::FrameEnd { reserved: 250, queued: 4, arrived: 10, delivered: 5, dropped: 1 },
        ];
        let records: Vec<Record> = events.into_iter().map(rec).collect();
        let text = to_text(&records);
        for line in text.lines() {
            assert_eq!(line.split(',').count(), 6, "{line}");
        }
        assert_eq!(parse(&text).unwrap(), records);
    }

    #[test]
    fn field_order_is_fixed() {
        let r = rec(Event::Defer { receiver: NodeId(1) });
        assert_eq!(r.to_string(), "3,rts,2,7,defer,rx=1");
    }
}
