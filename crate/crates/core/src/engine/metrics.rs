//! Folding trace records into run metrics.

use serde::Serialize;

use crate::frame::Transmission;
use crate::trace::{Event, Outcome, Record};

/// Which frames count toward steady-state throughput and delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsWindow {
    pub frame_s: f64,
    pub warmup_frames: u64,
    pub total_frames: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    /// Acknowledged payload bits per second over the measured frames.
    pub aggregate_throughput_bps: f64,
    /// Mean arrival-to-final-ACK delay of packets completed in measured frames.
    pub mean_delay_s: f64,
    pub measured_frames: u64,
    /// Data slots reserved in each frame, indexed by frame number.
    pub reserved_slots_per_frame: Vec<usize>,
    pub rts_sent: u64,
    pub rts_collisions: u64,
    pub cts_collisions: u64,
    pub rb_collisions: u64,
    pub data_sent: u64,
    /// Data frames that collided at their intended receiver.
    pub data_collisions: u64,
    pub data_lost: u64,
    pub deadlock_deferrals: u64,
    pub packets_arrived: u64,
    pub packets_delivered: u64,
    pub packets_dropped: u64,
}

/// Incremental version of [`collect_metrics`]; the engine feeds it every
/// record as it is produced.
#[derive(Debug, Clone)]
pub struct MetricsCollector {
    window: MetricsWindow,
    metrics: Metrics,
    bits: u64,
    delay_sum: f64,
    delay_count: u64,
}

impl MetricsCollector {
    pub fn new(window: MetricsWindow) -> Self {
        MetricsCollector {
            window,
            metrics: Metrics {
                reserved_slots_per_frame: vec![0; window.total_frames as usize],
                ..Metrics::default()
            },
            bits: 0,
            delay_sum: 0.0,
            delay_count: 0,
        }
    }

    pub fn observe(&mut self, record: &Record) {
        let m = &mut self.metrics;
        let measured = record.frame >= self.window.warmup_frames;
        match &record.event {
            Event::Arrive { .. } => m.packets_arrived += 1,
            Event::Drop { .. } => m.packets_dropped += 1,
            Event::Send(Transmission::Data(_)) => m.data_sent += 1,
            Event::Send(Transmission::Control(c)) if c.kind() == "RTS" => m.rts_sent += 1,
            Event::Send(_) => {}
            Event::Rx { kind, outcome, .. } => match (kind.as_str(), outcome) {
                ("RTS", Outcome::Collision) => m.rts_collisions += 1,
                ("CTS", Outcome::Collision) => m.cts_collisions += 1,
                ("RB", Outcome::Collision) => m.rb_collisions += 1,
                ("DATA", Outcome::Collision) => m.data_collisions += 1,
                ("DATA", Outcome::Lost) => m.data_lost += 1,
                _ => {}
            },
            Event::Table(_) => {}
            Event::Defer { .. } => m.deadlock_deferrals += 1,
            Event::Delivered { bits, delay_s, .. } => {
                if let Some(d) = delay_s {
                    m.packets_delivered += 1;
                    if measured {
                        self.delay_sum += d;
                        self.delay_count += 1;
                    }
                }
                if measured {
                    self.bits += bits;
                }
            }
            Event::FrameEnd { reserved, .. } => {
                let f = record.frame as usize;
                if f >= m.reserved_slots_per_frame.len() {
                    m.reserved_slots_per_frame.resize(f + 1, 0);
                }
                m.reserved_slots_per_frame[f] = *reserved;
            }
        }
    }

    pub fn finish(mut self) -> Metrics {
        let measured = self.window.total_frames.saturating_sub(self.window.warmup_frames);
        self.metrics.measured_frames = measured;
        let seconds = measured as f64 * self.window.frame_s;
        self.metrics.aggregate_throughput_bps =
            if seconds > 0.0 { self.bits as f64 / seconds } else { 0.0 };
        self.metrics.mean_delay_s =
            if self.delay_count > 0 { self.delay_sum / self.delay_count as f64 } else { 0.0 };
        self.metrics
    }
}

/// Folds a recorded trace into [`Metrics`]. Delay runs from arrival to the ACK
/// of the packet's last slot; throughput counts payload bits of acknowledged
/// slots only.
pub fn collect_metrics(trace: &[Record], window: MetricsWindow) -> Metrics {
    let mut c = MetricsCollector::new(window);
    for r in trace {
        c.observe(r);
    }
    c.finish()
}
