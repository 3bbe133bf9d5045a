//! Node placement, unit-disk connectivity, random-waypoint mobility and the
//! per-slot collision model.
//!
//! Propagation is a hard range threshold with symmetric links. A node that
//! hears exactly one transmitting neighbor decodes it; two or more overlapping
//! neighbors always collide (no capture). Transmitters are half-duplex and
//! hear nothing in the slot they transmit in.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{NodeId, Observation, Transmission};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("node {0} transmits twice in the same slot")]
    DuplicateSender(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("topology text line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node positions and the unit-disk neighbor relation they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: Vec<Position>,
    range_m: f64,
    adjacency: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn from_positions(positions: Vec<Position>, range_m: f64) -> Self {
        let mut topo = Topology { positions, range_m, adjacency: Vec::new() };
        topo.recompute_adjacency();
        topo
    }

    fn recompute_adjacency(&mut self) {
        let n = self.positions.len();
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if self.positions[i].distance(&self.positions[j]) <= self.range_m {
                    adj[i].push(NodeId::from(j));
                    adj[j].push(NodeId::from(i));
                }
            }
        }
        self.adjacency = adj;
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn range_m(&self) -> f64 {
        self.range_m
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.positions.len()).map(NodeId::from)
    }

    pub fn position(&self, node: NodeId) -> Position {
        self.positions[node.index()]
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Neighbors of `node` in ascending id order.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node.index()]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency[node.index()].len()
    }

    pub fn are_neighbors(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a.index()].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// True when every pair of distinct nodes has at least one common neighbor.
    pub fn every_pair_has_common_neighbor(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            ((i + 1)..n).all(|j| {
                let (a, b) = (&self.adjacency[i], &self.adjacency[j]);
                a.iter().any(|x| b.binary_search(x).is_ok())
            })
        })
    }

    pub fn is_fully_connected(&self) -> bool {
        let n = self.len();
        self.adjacency.iter().all(|a| a.len() + 1 == n)
    }

    /// Plain-text export: a `range <meters>` header, then one `id x y` line
    /// per node.
    pub fn to_text(&self) -> String {
        let mut out = format!("range {}\n", self.range_m);
        for (i, p) in self.positions.iter().enumerate() {
            let _ = writeln!(out, "{i} {} {}", p.x, p.y);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ChannelError> {
        let err = |line: usize, reason: &str| ChannelError::Parse { line, reason: reason.into() };
        let mut range = None;
        let mut nodes: Vec<(usize, Position)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts[0] == "range" {
                let [_, r] = parts[..] else { return Err(err(no + 1, "expected `range <m>`")) };
                range = Some(r.parse::<f64>().map_err(|_| err(no + 1, "bad range"))?);
                continue;
            }
            let [id, x, y] = parts[..] else { return Err(err(no + 1, "expected `id x y`")) };
            let id = id.parse::<usize>().map_err(|_| err(no + 1, "bad id"))?;
            let x = x.parse::<f64>().map_err(|_| err(no + 1, "bad x"))?;
            let y = y.parse::<f64>().map_err(|_| err(no + 1, "bad y"))?;
            nodes.push((id, Position::new(x, y)));
        }
        let range = range.ok_or_else(|| err(0, "missing range header"))?;
        nodes.sort_by_key(|(id, _)| *id);
        if nodes.iter().enumerate().any(|(i, (id, _))| i != *id) {
            return Err(err(0, "node ids must be 0..n without gaps"));
        }
        Ok(Topology::from_positions(nodes.into_iter().map(|(_, p)| p).collect(), range))
    }
}

/// `rows x cols` nodes on a square lattice, numbered row-major.
pub fn build_grid_mesh(rows: usize, cols: usize, spacing_m: f64, range_m: f64) -> Topology {
    let positions = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| Position::new(c as f64 * spacing_m, r as f64 * spacing_m)))
        .collect();
    Topology::from_positions(positions, range_m)
}

/// `n` nodes placed uniformly at random in a `width x height` rectangle.
pub fn build_random(n: usize, area_m: (f64, f64), range_m: f64, seed: u64) -> Topology {
    let mut rng = rng::stream(seed, rng::Stream::Topology, 0);
    let positions = (0..n)
        .map(|_| Position::new(rng.random::<f64>() * area_m.0, rng.random::<f64>() * area_m.1))
        .collect();
    Topology::from_positions(positions, range_m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MobilityModel {
    Static,
    RandomWaypoint {
        area_m: (f64, f64),
        speed_mps: f64,
        #[serde(default)]
        pause_s: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Waypoint {
    target: Position,
    pause_left_s: f64,
}

/// Per-node random-waypoint state, advanced once per frame.
#[derive(Debug, Clone)]
pub struct Mobility {
    model: MobilityModel,
    waypoints: Vec<Option<Waypoint>>,
    rngs: Vec<ChaCha8Rng>,
}

impl Mobility {
    pub fn new(model: MobilityModel, nodes: usize, seed: u64) -> Self {
        Mobility {
            model,
            waypoints: vec![None; nodes],
            rngs: (0..nodes).map(|i| rng::stream(seed, rng::Stream::Mobility, i)).collect(),
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self.model, MobilityModel::Static)
            || matches!(self.model, MobilityModel::RandomWaypoint { speed_mps, .. } if speed_mps == 0.0)
    }

    /// Advances every node by `dt` seconds and recomputes adjacency.
    pub fn step(&mut self, topo: &Topology, dt: f64) -> Topology {
        let MobilityModel::RandomWaypoint { area_m, speed_mps, pause_s } = self.model else {
            return topo.clone();
        };
        let mut positions = topo.positions.clone();
        for (i, pos) in positions.iter_mut().enumerate() {
            let rng = &mut self.rngs[i];
            let fresh = |rng: &mut ChaCha8Rng| Waypoint {
                target: Position::new(rng.random::<f64>() * area_m.0, rng.random::<f64>() * area_m.1),
                pause_left_s: pause_s,
            };
            let mut left = dt;
            // Bounded by the number of waypoints reachable in `dt`.
            while left > 0.0 {
                let wp = self.waypoints[i].get_or_insert_with(|| fresh(rng));
                let dist = pos.distance(&wp.target);
                if dist > 0.0 {
                    let reach = speed_mps * left;
                    if reach < dist {
                        let f = reach / dist;
                        pos.x += (wp.target.x - pos.x) * f;
                        pos.y += (wp.target.y - pos.y) * f;
                        break;
                    }
                    left -= if speed_mps > 0.0 { dist / speed_mps } else { left };
                    *pos = wp.target;
                }
                if wp.pause_left_s >= left {
                    wp.pause_left_s -= left;
                    break;
                }
                left -= wp.pause_left_s;
                self.waypoints[i] = Some(fresh(rng));
                if speed_mps == 0.0 {
                    break;
                }
            }
            pos.x = pos.x.clamp(0.0, area_m.0);
            pos.y = pos.y.clamp(0.0, area_m.1);
        }
        Topology::from_positions(positions, topo.range_m)
    }

    #[cfg(test)]
    fn set_waypoint(&mut self, node: usize, target: Position) {
        self.waypoints[node] = Some(Waypoint { target, pause_left_s: 0.0 });
    }
}

/// Resolves simultaneous transmissions into one observation per node.
///
/// Observation of node `v` depends only on transmissions of `v`'s neighbors.
/// The result is indexed by node id.
pub fn resolve(
    transmissions: &[(NodeId, Transmission)],
    topo: &Topology,
) -> Result<Vec<Observation>, ChannelError> {
    let n = topo.len();
    let mut transmitting = vec![false; n];
    for (sender, _) in transmissions {
        let idx = sender.index();
        if idx >= n {
            return Err(ChannelError::UnknownNode(*sender));
        }
        if std::mem::replace(&mut transmitting[idx], true) {
            return Err(ChannelError::DuplicateSender(*sender));
        }
    }
    // (count of audible transmitters, index of the last one)
    let mut heard = vec![(0usize, 0usize); n];
    for (k, (sender, _)) in transmissions.iter().enumerate() {
        for v in topo.neighbors(*sender) {
            let h = &mut heard[v.index()];
            h.0 += 1;
            h.1 = k;
        }
    }
    Ok((0..n)
        .map(|v| match heard[v] {
            _ if transmitting[v] => Observation::Silence,
            (0, _) => Observation::Silence,
            (1, k) => Observation::Clean(transmissions[k].1.clone()),
            _ => Observation::Collision,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{ControlMessage, SlotSet};
    use proptest::prelude::*;

    fn rb(rx: u32, tx: u32) -> Transmission {
        ControlMessage::Rb { receiver: NodeId(rx), transmitter: NodeId(tx), slot: 0 }.into()
    }

    /// R1(0) - T1(1) - T2(2) - T3(3) on a line.
    fn deadlock_line() -> Topology {
        build_grid_mesh(1, 4, 200.0, 250.0)
    }

    #[test]
    fn mesh_degrees() {
        let t = build_grid_mesh(5, 5, 200.0, 250.0);
        assert_eq!(t.len(), 25);
        for r in 0..5 {
            for c in 0..5 {
                let id = NodeId::from(r * 5 + c);
                let border = [r == 0 || r == 4, c == 0 || c == 4];
                let expect = match border {
                    [true, true] => 2,
                    [true, false] | [false, true] => 3,
                    [false, false] => 4,
                };
                assert_eq!(t.degree(id), expect, "node {id}");
            }
        }
        assert!(!t.every_pair_has_common_neighbor());
    }

    #[test]
    fn tiny_meshes() {
        let t = build_grid_mesh(1, 2, 200.0, 250.0);
        assert!(t.are_neighbors(NodeId(0), NodeId(1)));
        let t = build_grid_mesh(5, 5, 200.0, 199.0);
        assert_eq!(t.edge_count(), 0);
    }

    #[test]
    fn random_placement_is_seeded() {
        let a = build_random(25, (1500.0, 300.0), 250.0, 9);
        let b = build_random(25, (1500.0, 300.0), 250.0, 9);
        assert_eq!(a, b);
        assert!(a.positions().iter().all(|p| (0.0..=1500.0).contains(&p.x) && (0.0..=300.0).contains(&p.y)));
        assert_ne!(a, build_random(25, (1500.0, 300.0), 250.0, 10));
        let single = build_random(1, (10.0, 10.0), 250.0, 3);
        assert_eq!(single.len(), 1);
        assert_eq!(single.edge_count(), 0);
    }

    #[test]
    fn text_round_trip() {
        let t = build_random(7, (400.0, 300.0), 250.0, 4);
        assert_eq!(Topology::from_text(&t.to_text()).unwrap(), t);
        assert!(Topology::from_text("0 1 2\n").is_err());
        assert!(Topology::from_text("range 5\n0 1\n").is_err());
    }

    #[test]
    fn static_mobility_is_identity() {
        let t = build_grid_mesh(3, 3, 200.0, 250.0);
        let mut m = Mobility::new(MobilityModel::Static, 9, 1);
        assert_eq!(m.step(&t, 5.0), t);
    }

    #[test]
    fn waypoint_kinematics() {
        let t = Topology::from_positions(vec![Position::new(0.0, 0.0)], 250.0);
        let model = MobilityModel::RandomWaypoint { area_m: (500.0, 500.0), speed_mps: 20.0, pause_s: 0.0 };
        let mut m = Mobility::new(model, 1, 1);
        m.set_waypoint(0, Position::new(100.0, 0.0));
        let next = m.step(&t, 1.0);
        let p = next.position(NodeId(0));
        assert!((p.x - 20.0).abs() < 1e-12 && p.y.abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn waypoint_pause_holds_position() {
        let t = Topology::from_positions(vec![Position::new(0.0, 0.0)], 250.0);
        let model = MobilityModel::RandomWaypoint { area_m: (500.0, 500.0), speed_mps: 10.0, pause_s: 3.0 };
        let mut m = Mobility::new(model, 1, 1);
        m.waypoints[0] = Some(Waypoint { target: Position::new(10.0, 0.0), pause_left_s: 3.0 });
        // 1 s to arrive, then 2 s of the 3 s pause.
        let t = m.step(&t, 3.0);
        assert_eq!(t.position(NodeId(0)), Position::new(10.0, 0.0));
        let t = m.step(&t, 0.5);
        assert_eq!(t.position(NodeId(0)), Position::new(10.0, 0.0));
    }

    #[test]
    fn waypoint_stays_inside_area() {
        let area = (1500.0, 300.0);
        let mut t = build_random(25, area, 250.0, 5);
        let model = MobilityModel::RandomWaypoint { area_m: area, speed_mps: 20.0, pause_s: 0.0 };
        let mut m = Mobility::new(model, 25, 5);
        for _ in 0..10_000 {
            t = m.step(&t, 0.11176);
            for p in t.positions() {
                assert!((0.0..=area.0).contains(&p.x) && (0.0..=area.1).contains(&p.y));
            }
        }
        assert_eq!(t, Topology::from_positions(t.positions().to_vec(), 250.0));
    }

    #[test]
    fn silence_without_transmissions() {
        let t = build_grid_mesh(2, 2, 200.0, 250.0);
        let obs = resolve(&[], &t).unwrap();
        assert!(obs.iter().all(|o| *o == Observation::Silence));
    }

    #[test]
    fn deadlock_rb_phase() {
        let t = deadlock_line();
        // R1 beacons T1 while T2 beacons T3.
        let tx = vec![(NodeId(0), rb(0, 1)), (NodeId(2), rb(2, 3))];
        let obs = resolve(&tx, &t).unwrap();
        assert_eq!(obs[1], Observation::Collision);
        assert_eq!(obs[3], Observation::Clean(rb(2, 3)));
        assert_eq!(obs[0], Observation::Silence);
        assert_eq!(obs[2], Observation::Silence);
    }

    #[test]
    fn single_sender_full_graph() {
        let t = build_random(4, (10.0, 10.0), 250.0, 1);
        assert!(t.is_fully_connected());
        let msg: Transmission = ControlMessage::Ncts { src: NodeId(2) }.into();
        let obs = resolve(&[(NodeId(2), msg.clone())], &t).unwrap();
        for v in [0, 1, 3] {
            assert_eq!(obs[v], Observation::Clean(msg.clone()));
        }
        assert_eq!(obs[2], Observation::Silence);
    }

    #[test]
    fn duplicate_sender_rejected() {
        let t = deadlock_line();
        let tx = vec![(NodeId(0), rb(0, 1)), (NodeId(0), rb(0, 1))];
        assert_eq!(resolve(&tx, &t), Err(ChannelError::DuplicateSender(NodeId(0))));
    }

    fn slot_msg(src: u32) -> Transmission {
        ControlMessage::Rts { src: NodeId(src), dst: NodeId(0), slots: SlotSet::single(0) }.into()
    }

    proptest! {
        #[test]
        fn resolve_semantics(seed in 0u64..500, senders in proptest::collection::btree_set(0u32..12, 0..6), rot in 0usize..6) {
            let t = build_random(12, (600.0, 600.0), 250.0, seed);
            let mut tx: Vec<_> = senders.iter().map(|&s| (NodeId(s), slot_msg(s))).collect();
            let obs = resolve(&tx, &t).unwrap();
            if !tx.is_empty() {
                let k = rot % tx.len();
                tx.rotate_left(k);
                tx.reverse();
            }
            prop_assert_eq!(&resolve(&tx, &t).unwrap(), &obs);
            for v in t.nodes() {
                let o = &obs[v.index()];
                if senders.contains(&v.0) {
                    prop_assert_eq!(o, &Observation::Silence);
                    continue;
                }
                let audible: Vec<_> = t.neighbors(v).iter().filter(|u| senders.contains(&u.0)).collect();
                match audible.len() {
                    0 => prop_assert_eq!(o, &Observation::Silence),
                    1 => prop_assert_eq!(o, &Observation::Clean(slot_msg(audible[0].0))),
                    _ => prop_assert_eq!(o, &Observation::Collision),
                }
            }
        }

        #[test]
        fn adjacency_is_symmetric(seed in 0u64..1000, n in 1usize..30) {
            let t = build_random(n, (800.0, 400.0), 250.0, seed);
            for a in t.nodes() {
                prop_assert!(!t.are_neighbors(a, a));
                for &b in t.neighbors(a) {
                    prop_assert!(t.are_neighbors(b, a));
                    prop_assert!(t.position(a).distance(&t.position(b)) <= 250.0);
                }
            }
        }
    }
}
