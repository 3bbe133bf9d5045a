//! Oracle checks behind `macrsv validate`.
//!
//! Every check pairs an implementation with an independent reference and
//! reports the measured discrepancy next to its tolerance.

use serde::Serialize;

use crate::analysis::{self, AnalysisError, AnalysisParams};
use crate::channel::build_random;
use crate::engine::{self, PacketSize, PopulationParams, TrafficPattern};
use crate::oracle;
use crate::scenario::{bundled, AnalysisSection};
use crate::trace::{Event, Outcome};

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub check: String,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn new(check: impl Into<String>, pass: bool, measured: f64, tolerance: f64, detail: String) -> Self {
        Check { check: check.into(), pass, measured, tolerance, detail }
    }
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub analysis: AnalysisSection,
    /// T/τ values for the Markov and Monte Carlo checks.
    pub loads: Vec<f64>,
    pub mc_frames: u64,
    /// Run the deadlock scenario without the receive beacon and expect the
    /// collision it would have prevented.
    pub rb_ablation: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        let analysis = bundled("analysis_smoke").and_then(|s| s.analysis).expect("bundled analysis grid");
        ValidateOptions { mc_frames: analysis.mc_frames.unwrap_or(100_000), analysis, loads: vec![0.5], rb_ablation: false }
    }
}

pub fn run_checks(opts: &ValidateOptions) -> Vec<Check> {
    let mut out = vec![closed_form_check(), successes_check(), p_succ_check()];
    for &load in &opts.loads {
        out.push(markov_check(&opts.analysis.params(load)));
        out.push(monte_carlo_check(&opts.analysis, load, opts.mc_frames));
    }
    out.push(collision_free_check());
    out.push(deadlock_check(opts.rb_ablation));
    out
}

fn closed_form_check() -> Check {
    let mut worst: f64 = 0.0;
    for q in [0.3, 0.6, 0.9] {
        for n in 1..=30 {
            for m in 1..=n.min(10) {
                let closed = analysis::reserved_slots_pmf(m, q, n).expect("m <= n");
                let conv = oracle::reserved_slots_convolution(m, q, n);
                worst = closed.iter().zip(&conv).fold(worst, |w, (a, b)| w.max((a - b).abs()));
            }
        }
    }
    Check::new(
        "reserved_slots_vs_convolution",
        worst <= 1e-12,
        worst,
        1e-12,
        "m <= 10, N <= 30, q in {0.3, 0.6, 0.9}".into(),
    )
}

fn successes_check() -> Check {
    let mut worst: f64 = 0.0;
    for q in [0.4, 0.8] {
        for p in [0.1, 0.3] {
            for k in 1..=6 {
                for n in 1..=8 {
                    let params = AnalysisParams::with_load(k, n, q, p, 1.0);
                    for n_c in 0..=8 {
                        let dp = analysis::successes_pmf(n_c, &params);
                        let en = oracle::successes_enumeration(k, dp.len() - 1, |m| analysis::p_succ(m, n_c, &params));
                        worst = dp.iter().zip(&en).fold(worst, |w, (a, b)| w.max((a - b).abs()));
                    }
                    let c = analysis::p_succ(0, 5, &params);
                    let flat = analysis::successes_dp(k, k, |_| c);
                    worst = flat
                        .iter()
                        .zip(oracle::binomial_reference(k, c))
                        .fold(worst, |w, (a, b)| w.max((a - b).abs()));
                }
            }
        }
    }
    Check::new(
        "successes_dp_vs_enumeration",
        worst <= 1e-12,
        worst,
        1e-12,
        "K <= 6, n_c <= 8, N <= 8, q in {0.4, 0.8}, p in {0.1, 0.3}, plus the flattened binomial case".into(),
    )
}

fn p_succ_check() -> Check {
    let mut worst: f64 = 0.0;
    for q in [0.4, 0.8] {
        for p in [0.1, 0.3] {
            for n in 1..=6 {
                let params = AnalysisParams::with_load(1, n, q, p, 1.0);
                for n_c in 1..=6 {
                    for m in 0..n_c.min(n + 1) {
                        let a = analysis::p_succ(m, n_c, &params);
                        worst = worst.max((a - oracle::p_succ_enumeration(m, n_c, n, q, p)).abs());
                    }
                }
            }
        }
    }
    Check::new("p_succ_vs_event_enumeration", worst <= 1e-12, worst, 1e-12, "n_c <= 6, N <= 6".into())
}

fn markov_check(params: &AnalysisParams) -> Check {
    let name = format!("markov_hygiene load={}", params.load());
    match analysis::markov_model(params) {
        Ok(m) => {
            let rows = m.max_row_sum_error();
            let pass = rows <= 1e-12 && m.residual <= params.tol && m.truncation_mass <= params.truncation_bound;
            Check::new(
                name,
                pass,
                m.truncation_mass,
                params.truncation_bound,
                format!("row error {rows:.2e}, residual {:.2e}, n_max {}", m.residual, m.n_max),
            )
        }
        Err(e) => Check::new(name, false, f64::NAN, params.truncation_bound, e.to_string()),
    }
}

/// Stationary law against the infinite-population simulation.
#[derive(Debug, Clone, Serialize)]
pub struct McComparison {
    pub analysis_utilization: f64,
    pub mc_utilization: f64,
    pub relative_gap: f64,
    /// Largest |empirical - π| / σ over bins with π >= 1e-4.
    pub worst_sigma: f64,
    pub bins: usize,
}

/// Mean and standard error of per-frame values from `batches` batch means.
pub fn batch_mean(values: &[f64], batches: usize) -> (f64, f64) {
    let size = (values.len() / batches).max(1);
    let means: Vec<f64> =
        values.chunks(size).take(batches).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let b = means.len() as f64;
    let mean = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0).max(1.0);
    (mean, (var / b).sqrt())
}

/// Mean reserved fraction of an infinite-population run after `warmup`
/// frames, and the contender count in its last frame.
pub fn population_utilization(pop: PopulationParams, frames: u64, warmup: u64, seed: u64) -> (Vec<engine::PopulationFrame>, f64) {
    let run = engine::run_infinite_population(pop, frames + warmup, seed);
    let kept = run[warmup as usize..].to_vec();
    let util = kept.iter().map(|f| f.reserved as f64).sum::<f64>() / (kept.len() as f64 * pop.data_slots as f64);
    (kept, util)
}

/// Compares analysis and simulation; the per-bin σ comes from 50 batch means
/// and is floored by the binomial standard error of the bin.
pub fn compare_with_simulation(
    params: &AnalysisParams,
    frames: &[engine::PopulationFrame],
) -> Result<McComparison, AnalysisError> {
    let (model, u) = analysis::utilization(params)?;
    let n = params.data_slots as f64;
    let util: Vec<f64> = frames.iter().map(|f| f.reserved as f64 / n).collect();
    let (mc, _) = batch_mean(&util, 50);
    let mut worst: f64 = 0.0;
    let mut bins = 0;
    for (n_c, &pi) in model.stationary.iter().enumerate() {
        if pi < 1e-4 {
            continue;
        }
        bins += 1;
        let ind: Vec<f64> = frames.iter().map(|f| (f.contenders == n_c as u64) as u8 as f64).collect();
        let (freq, se) = batch_mean(&ind, 50);
        let floor = (pi * (1.0 - pi) / frames.len() as f64).sqrt();
        worst = worst.max((freq - pi).abs() / se.max(floor));
    }
    Ok(McComparison {
        analysis_utilization: u.expected,
        mc_utilization: mc,
        relative_gap: (u.expected - mc).abs() / mc,
        worst_sigma: worst,
        bins,
    })
}

fn monte_carlo_check(grid: &AnalysisSection, load: f64, frames: u64) -> Check {
    let name = format!("analysis_vs_monte_carlo load={load}");
    let pop = PopulationParams { triples: grid.triples, data_slots: grid.data_slots, q: grid.q, persistence_p: grid.p, load };
    let (run, mc) = population_utilization(pop, frames, 1_000, 20_240 + (load * 10.0) as u64);
    match compare_with_simulation(&grid.params(load), &run) {
        Ok(c) => Check::new(
            name,
            c.relative_gap <= 0.05 && c.worst_sigma <= 3.0,
            c.relative_gap,
            0.05,
            format!(
                "analysis {:.5}, simulation {:.5}, histogram worst {:.2} sigma over {} bins, {frames} frames",
                c.analysis_utilization, c.mc_utilization, c.worst_sigma, c.bins
            ),
        ),
        Err(e) => Check::new(
            name,
            false,
            f64::NAN,
            0.05,
            format!("{e}; simulation mean R/N {mc:.5}, contenders at end {}", run.last().map_or(0, |f| f.contenders)),
        ),
    }
}

/// A shorter version of the static-topology collision suite.
fn collision_free_check() -> Check {
    let mut runs = 0;
    let mut collisions = 0;
    let mut errors = Vec::new();
    let base = bundled("fig3_saturation").and_then(|s| s.to_engine().ok()).expect("bundled mesh");
    for n in 2..=10 {
        let mut s = base.clone();
        s.name = format!("clique-{n}");
        s.frame.triples = 5;
        s.frame.data_slots = 10;
        s.persistence_p = 0.3;
        s.topology = build_random(n, (100.0, 100.0), 250.0, n as u64);
        s.traffic.pattern = TrafficPattern::PoissonNeighbors;
        s.traffic.packet = PacketSize::Geometric { q: 0.5 };
        s.traffic.offered_load_bps = 6e6;
        s.frames = 100;
        match engine::run(&s) {
            Ok(o) => {
                runs += 1;
                collisions += o.metrics.data_collisions;
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    let mut s = base;
    s.frames = 100;
    match engine::run(&s) {
        Ok(o) => {
            runs += 1;
            collisions += o.metrics.data_collisions;
        }
        Err(e) => errors.push(e.to_string()),
    }
    Check::new(
        "no_data_collisions_static",
        errors.is_empty() && collisions == 0,
        collisions as f64,
        0.0,
        format!("{runs} runs; errors: {errors:?}"),
    )
}

fn deadlock_check(ablation: bool) -> Check {
    let mut s = bundled("fig2_deadlock").and_then(|s| s.to_engine().ok()).expect("bundled deadlock scenario");
    s.record_trace = true;
    s.rsv.rb_ablation = ablation;
    let out = match engine::run(&s) {
        Ok(o) => o,
        Err(e) => return Check::new("deadlock", false, f64::NAN, 0.0, e.to_string()),
    };
    let collisions = out.metrics.data_collisions;
    let at_t2 = out.trace.iter().any(|r| {
        r.node.0 == 2 && matches!(&r.event, Event::Rx { kind, outcome: Outcome::Collision, .. } if kind == "DATA")
    });
    if ablation {
        Check::new(
            "deadlock_without_beacon_collides",
            collisions >= 1 && at_t2,
            collisions as f64,
            1.0,
            format!("collision at T2: {at_t2}"),
        )
    } else {
        Check::new(
            "deadlock_defused_by_beacon",
            collisions == 0 && out.metrics.deadlock_deferrals >= 1,
            collisions as f64,
            0.0,
            format!("deferrals {}, delivered {}", out.metrics.deadlock_deferrals, out.metrics.packets_delivered),
        )
    }
}
