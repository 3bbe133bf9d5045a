//! Slotted simulator and analytical throughput model for MAC-RSV, a
//! synchronous reservation-based TDMA medium access protocol for multihop
//! wireless networks.
//!
//! * [`frame`] – frame geometry, identifiers and on-air messages.
//! * [`channel`] – unit-disk topologies, random-waypoint mobility and collision
//!   resolution.
//! * [`rsv`] – the per-node MAC-RSV state machine.
//! * [`cata`] – a simplified per-slot contention baseline.
//! * [`engine`] – the frame-by-frame simulation loop, traffic and metrics.
//! * [`analysis`] – the contender-count Markov chain and slot utilization.
//! * [`oracle`] – brute-force reference computations used for validation.
//! * [`scenario`] – scenario files and the bundled experiment set.
//! * [`validation`] – the oracle checks behind `macrsv validate`.

pub mod analysis;
pub mod cata;
pub mod channel;
pub mod engine;
pub mod frame;
pub mod oracle;
pub mod rng;
pub mod rsv;
pub mod scenario;
pub mod trace;
pub mod validation;

pub use frame::{frame_duration_s, FrameConfig, NodeId};
