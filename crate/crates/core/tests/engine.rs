use macrsv::channel::{Position, Topology};
use macrsv::engine::{self, Protocol};
use macrsv::scenario::{bundled, ScenarioFile};
use macrsv::trace::{self, Event};

fn pair_scenario(load_bps: f64, frames: u64) -> engine::Scenario {
    let text = format!(
        r#"
name = "pair"
frames = {frames}
seed = 11
warmup_fraction = 0.0
[frame]
triples = 2
data_slots = 4
control_bytes = 20
data_payload_bytes = 1044
channel_rate_bps = 2e6
[mac]
persistence = 1.0
[topology]
kind = "explicit"
positions = [[0.0, 0.0], [100.0, 0.0]]
range_m = 250.0
[traffic]
pattern = "flows"
flows = [[0, 1]]
offered_load_bps = {load_bps}
packet = {{ kind = "fixed", bytes = 1044 }}
"#
    );
    let mut s = ScenarioFile::parse(&text, "pair").unwrap().to_engine().unwrap();
    s.record_trace = true;
    s
}

#[test]
fn zero_load_is_silent() {
    let out = engine::run(&pair_scenario(0.0, 50)).unwrap();
    assert_eq!(out.metrics.aggregate_throughput_bps, 0.0);
    assert_eq!(out.metrics.rts_sent, 0);
    assert!(out.trace.iter().all(|r| matches!(r.event, Event::FrameEnd { .. })));
}

#[test]
fn lone_pair_delivers_in_the_next_frame() {
    let s = pair_scenario(20_000.0, 400);
    let frame_s = s.frame_s();
    let out = engine::run(&s).unwrap();
    let mut arrivals = std::collections::HashMap::new();
    let mut delivered = 0;
    for r in &out.trace {
        match r.event {
            Event::Arrive { packet, time_s, .. } => {
                arrivals.insert(packet, (r.frame, time_s));
            }
            Event::Delivered { packet, delay_s: Some(d), .. } => {
                let (f, t) = arrivals[&packet];
                assert_eq!(r.frame, f, "packet {packet} waited a frame");
                assert!(t < f as f64 * frame_s && t >= (f - 1) as f64 * frame_s);
                let expect = f as f64 * frame_s - t + s.frame.ack_end_offset_s(r.index);
                assert!((d - expect).abs() < 1e-9, "{d} vs {expect}");
                delivered += 1;
            }
            _ => {}
        }
    }
    assert!(delivered > 10);
    assert_eq!(out.metrics.data_collisions, 0);
}

#[test]
fn deadlock_is_defused_by_the_beacon() {
    let mut s = bundled("fig2_deadlock").unwrap().to_engine().unwrap();
    s.record_trace = true;
    let out = engine::run(&s).unwrap();
    assert_eq!(out.metrics.data_collisions, 0);
    assert_eq!(out.metrics.deadlock_deferrals, 1);
    assert_eq!(out.metrics.packets_delivered, 3);
    let defer = out.trace.iter().find(|r| matches!(r.event, Event::Defer { .. })).unwrap();
    assert_eq!((defer.frame, defer.node.0, defer.index), (0, 1, 0));

    s.rsv.rb_ablation = true;
    let out = engine::run(&s).unwrap();
    assert!(out.metrics.data_collisions >= 1);
    let collided = out
        .trace
        .iter()
        .find(|r| matches!(&r.event, Event::Rx { kind, outcome: trace::Outcome::Collision, .. } if kind == "DATA"))
        .unwrap();
    assert_eq!((collided.frame, collided.node.0, collided.index), (0, 2, 0));
}

#[test]
fn trace_text_round_trips() {
    let s = pair_scenario(200_000.0, 30);
    let out = engine::run(&s).unwrap();
    let text = trace::to_text(&out.trace);
    assert_eq!(trace::parse(&text).unwrap(), out.trace);
    let refolded = engine::collect_metrics(
        &out.trace,
        engine::MetricsWindow { frame_s: s.frame_s(), warmup_frames: 0, total_frames: s.frames },
    );
    assert_eq!(refolded, out.metrics);
}

#[test]
fn conservation_under_mobility() {
    let mut s = bundled("mobile_rwp").unwrap().to_engine().unwrap();
    s.frames = 300;
    let out = engine::run(&s).unwrap();
    assert!(out.frames.iter().all(|f| f.conserves()));
    assert!(out.metrics.packets_delivered > 0);
}

#[test]
fn cata_runs_and_is_deterministic() {
    let mut s = bundled("cata_16_16").unwrap().to_engine().unwrap();
    s.frames = 100;
    assert_eq!(s.protocol, Protocol::Cata);
    let a = engine::run(&s).unwrap();
    let b = engine::run(&s).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert!(a.metrics.aggregate_throughput_bps > 0.0);
    assert_eq!(a.metrics.data_collisions, 0);
}

#[test]
fn invalid_scenarios_are_refused() {
    let mut s = pair_scenario(1.0, 10);
    s.persistence_p = 0.0;
    assert!(matches!(engine::run(&s), Err(engine::EngineError::Config(_))));
    let mut s = pair_scenario(1.0, 10);
    s.topology = Topology::from_positions(vec![Position::new(0.0, 0.0), Position::new(900.0, 0.0)], 250.0);
    assert!(matches!(engine::run(&s), Err(engine::EngineError::Config(_))));
}

#[test]
fn saturation_smoke() {
    let mut s = bundled("fig3_saturation").unwrap().to_engine().unwrap();
    s.frames = 200;
    let t = std::time::Instant::now();
    let out = engine::run(&s).unwrap();
    println!(
        "fig3 {} frames: {:.3} Mbps in {:?}",
        s.frames,
        out.metrics.aggregate_throughput_bps / 1e6,
        t.elapsed()
    );
    assert_eq!(out.metrics.data_collisions, 0);
}
