//! Infinite-population Monte Carlo of the contender-count model.
//!
//! Every arrival is a fresh node with its own packet; nodes hear each other,
//! reserve whole packets only, and leave once their packet has its slots. A
//! contender whose packet no longer fits in the unreserved slots sits out the
//! rest of the frame.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::Serialize;

use super::traffic::sample_length;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationParams {
    pub triples: usize,
    pub data_slots: usize,
    pub q: f64,
    pub persistence_p: f64,
    /// Mean arrivals per frame, T/τ.
    pub load: f64,
}

/// One frame of the Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PopulationFrame {
    /// Contenders at the start of the frame.
    pub contenders: u64,
    /// Successful reservations.
    pub successes: u32,
    /// Slots reserved.
    pub reserved: u32,
}

/// Contention over the K triples of one frame; removes the winners from
/// `by_length` and returns (successes, slots reserved).
fn play_frame<R: Rng>(by_length: &mut [u64], params: &PopulationParams, rng: &mut R) -> (u32, u32) {
    let n = params.data_slots;
    let mut reserved = 0usize;
    let mut successes = 0u32;
    for _ in 0..params.triples {
        let room = n - reserved;
        let active: u64 = by_length[1..=room].iter().sum();
        if active == 0 {
            break;
        }
        let senders = Binomial::new(active, params.persistence_p).expect("p in [0, 1]").sample(rng);
        if senders != 1 {
            continue;
        }
        let mut pick = rng.random_range(0..active);
        let mut len = 1;
        while pick >= by_length[len] {
            pick -= by_length[len];
            len += 1;
        }
        by_length[len] -= 1;
        reserved += len;
        successes += 1;
    }
    (successes, reserved as u32)
}

/// Runs the model for `frames` frames starting from an empty system.
pub fn run_infinite_population(params: PopulationParams, frames: u64, seed: u64) -> Vec<PopulationFrame> {
    let n = params.data_slots;
    let mut rng = rng::stream(seed, Stream::Population, 0);
    let arrivals = (params.load > 0.0).then(|| Poisson::new(params.load).expect("positive load"));
    // by_length[l] = contenders whose packet is l slots long
    let mut by_length = vec![0u64; n + 1];
    let mut pending = 0u64;
    let mut out = Vec::with_capacity(frames as usize);
    for _ in 0..frames {
        for _ in 0..pending {
            by_length[sample_length(&mut rng, params.q, n)] += 1;
        }
        let contenders: u64 = by_length.iter().sum();
        let (successes, reserved) = play_frame(&mut by_length, &params, &mut rng);
        out.push(PopulationFrame { contenders, successes, reserved });
        pending = arrivals.as_ref().map_or(0, |a| a.sample(&mut rng) as u64);
    }
    out
}
