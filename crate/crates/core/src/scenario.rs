//! Scenario files.
//!
//! Scenarios are TOML documents. Top-level keys name the run (`name`,
//! `protocol`, `frames`, `seed`, `warmup_fraction`); tables describe the
//! frame layout, MAC options, topology, mobility, traffic, scripted RTSs and,
//! for analysis sweeps, the model parameters:
//!
//! ```toml
//! name = "example"
//! protocol = "mac-rsv"        # or "cata"
//! frames = 500
//! seed = 1
//!
//! [frame]                     # defaults to the 14/25 mesh layout
//! triples = 14
//! data_slots = 25
//! control_bytes = 20
//! data_payload_bytes = 1044
//! channel_rate_bps = 2e6
//!
//! [mac]
//! persistence = 0.175
//! grant_policy = "partial"    # or "all-or-nothing" / "all"
//!
//! [topology]
//! kind = "grid"               # grid | random | explicit | file
//! rows = 5
//! cols = 5
//! spacing_m = 200.0
//! range_m = 250.0
//!
//! [traffic]
//! pattern = "flows"           # none | flows | poisson-neighbors
//! flows = [[0, 1], [3, 2]]
//! offered_load_bps = 1e6
//! packet = { kind = "fixed", bytes = 1044 }
//! ```
//!
//! Serializing a parsed file and parsing it again yields the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnalysisParams;
use crate::channel::{build_grid_mesh, build_random, MobilityModel, Position, Topology};
use crate::engine::{self, PacketSize, Protocol, ScriptedRts, Traffic, TrafficPattern};
use crate::frame::{FrameConfig, NodeId};
use crate::rsv::{GrantPolicy, RsvOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown scenario {0:?} (not a file and not a bundled name)")]
    Unknown(String),
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.into() }
    }
}

fn default_frames() -> u64 {
    1000
}
fn default_seed() -> u64 {
    1
}
fn default_warmup() -> f64 {
    0.1
}
fn default_frame() -> FrameConfig {
    FrameConfig::STANDARD
}
fn is_default_frame(f: &FrameConfig) -> bool {
    *f == FrameConfig::STANDARD
}
fn default_persistence() -> f64 {
    0.175
}
fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    #[default]
    MacRsv,
    Cata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacSection {
    #[serde(default = "default_persistence")]
    pub persistence: f64,
    #[serde(default)]
    pub grant_policy: GrantPolicy,
    #[serde(default, skip_serializing_if = "is_false")]
    pub paranoid_ncts: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub rb_ablation: bool,
}

impl Default for MacSection {
    fn default() -> Self {
        MacSection {
            persistence: default_persistence(),
            grant_policy: GrantPolicy::Partial,
            paranoid_ncts: false,
            rb_ablation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    Grid { rows: usize, cols: usize, spacing_m: f64, range_m: f64 },
    Random {
        nodes: usize,
        area_m: (f64, f64),
        range_m: f64,
        /// Placement seed; defaults to the scenario seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Explicit { positions: Vec<(f64, f64)>, range_m: f64 },
    /// Topology text file (`range <m>` then `id x y` lines), relative to the
    /// scenario file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PacketSpec {
    Fixed { bytes: usize },
    Geometric { q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternName {
    #[default]
    None,
    Flows,
    PoissonNeighbors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    #[serde(default)]
    pub pattern: PatternName,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<(u32, u32)>,
    #[serde(default)]
    pub offered_load_bps: f64,
    #[serde(default = "default_packet")]
    pub packet: PacketSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_limit: Option<usize>,
}

fn default_packet() -> PacketSpec {
    PacketSpec::Fixed { bytes: 1044 }
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection {
            pattern: PatternName::None,
            flows: Vec::new(),
            offered_load_bps: 0.0,
            packet: default_packet(),
            queue_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub frame: u64,
    pub triple: usize,
    pub node: u32,
    pub dst: u32,
    pub slots: Vec<usize>,
}

/// Model parameters for analysis sweeps; `loads` are mean arrivals per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub triples: usize,
    pub data_slots: usize,
    pub q: f64,
    pub p: f64,
    pub loads: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    /// Frames per Monte Carlo comparison run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_frames: Option<u64>,
}

impl AnalysisSection {
    pub fn params(&self, load: f64) -> AnalysisParams {
        let mut p = AnalysisParams::with_load(self.triples, self.data_slots, self.q, self.p, load);
        p.n_max = self.n_max;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub protocol: ProtocolName,
    #[serde(default = "default_frames")]
    pub frames: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_frame", skip_serializing_if = "is_default_frame")]
    pub frame: FrameConfig,
    #[serde(default)]
    pub mac: MacSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologySpec>,
    #[serde(default = "static_mobility")]
    pub mobility: MobilityModel,
    #[serde(default)]
    pub traffic: TrafficSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn static_mobility() -> MobilityModel {
    MobilityModel::Static
}

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig3_saturation", include_str!("../scenarios/fig3_saturation.toml")),
    ("fig2_deadlock", include_str!("../scenarios/fig2_deadlock.toml")),
    ("mobile_rwp", include_str!("../scenarios/mobile_rwp.toml")),
    ("cata_16_16", include_str!("../scenarios/cata_16_16.toml")),
    ("analysis_smoke", include_str!("../scenarios/analysis_smoke.toml")),
];

pub fn bundled(name: &str) -> Option<ScenarioFile> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| ScenarioFile::parse(text, n).expect("bundled scenarios parse"))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ScenarioFile {
    /// Parses TOML text; `origin` labels diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse { origin: origin.into(), line, column, message: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut s = Self::parse(&text, &path.display().to_string())?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// A file path if one exists, otherwise a bundled scenario name.
    pub fn resolve(name_or_path: &str) -> Result<Self, ConfigError> {
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::load(path);
        }
        bundled(name_or_path).ok_or_else(|| ConfigError::Unknown(name_or_path.into()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Overrides one parameter by name, as used by sweeps.
    pub fn set_param(&mut self, name: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| ConfigError::invalid(name, format!("cannot parse {v:?}")))
        }
        match name {
            "offered_load_bps" | "load" => self.traffic.offered_load_bps = num(name, value)?,
            "persistence" | "p" => self.mac.persistence = num(name, value)?,
            "seed" => self.seed = num(name, value)?,
            "frames" => self.frames = num(name, value)?,
            "triples" => self.frame.triples = num(name, value)?,
            "data_slots" => self.frame.data_slots = num(name, value)?,
            "queue_limit" => self.traffic.queue_limit = Some(num(name, value)?),
            "protocol" => {
                self.protocol = match value {
                    "mac-rsv" => ProtocolName::MacRsv,
                    "cata" => ProtocolName::Cata,
                    _ => return Err(ConfigError::invalid(name, "expected mac-rsv or cata")),
                }
            }
            "grant_policy" => {
                self.mac.grant_policy = match value {
                    "partial" => GrantPolicy::Partial,
                    "all" | "all-or-nothing" => GrantPolicy::AllOrNothing,
                    _ => return Err(ConfigError::invalid(name, "expected partial or all")),
                }
            }
            "q" => self.traffic.packet = PacketSpec::Geometric { q: num(name, value)? },
            "packet_bytes" => self.traffic.packet = PacketSpec::Fixed { bytes: num(name, value)? },
            "speed_mps" => match &mut self.mobility {
                MobilityModel::RandomWaypoint { speed_mps, .. } => *speed_mps = num(name, value)?,
                MobilityModel::Static => return Err(ConfigError::invalid(name, "scenario is static")),
            },
            _ => return Err(ConfigError::invalid(name, "not a sweepable parameter")),
        }
        Ok(())
    }

    pub fn build_topology(&self) -> Result<Topology, ConfigError> {
        let spec = self.topology.as_ref().ok_or_else(|| ConfigError::invalid("topology", "missing"))?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("{v} must be positive")))
            }
        };
        Ok(match spec {
            TopologySpec::Grid { rows, cols, spacing_m, range_m } => {
                positive("topology.spacing_m", *spacing_m)?;
                positive("topology.range_m", *range_m)?;
                build_grid_mesh(*rows, *cols, *spacing_m, *range_m)
            }
            TopologySpec::Random { nodes, area_m, range_m, seed } => {
                positive("topology.area_m", area_m.0.min(area_m.1))?;
                positive("topology.range_m", *range_m)?;
                build_random(*nodes, *area_m, *range_m, seed.unwrap_or(self.seed))
            }
            TopologySpec::Explicit { positions, range_m } => {
                positive("topology.range_m", *range_m)?;
                Topology::from_positions(positions.iter().map(|&(x, y)| Position::new(x, y)).collect(), *range_m)
            }
            TopologySpec::File { path } => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io { path: full.clone(), source })?;
                Topology::from_text(&text).map_err(|e| ConfigError::invalid("topology.path", e.to_string()))?
            }
        })
    }

    /// Validated engine scenario.
    pub fn to_engine(&self) -> Result<engine::Scenario, ConfigError> {
        let topology = self.build_topology()?;
        let pattern = match self.traffic.pattern {
            PatternName::None => TrafficPattern::None,
            PatternName::PoissonNeighbors => TrafficPattern::PoissonNeighbors,
            PatternName::Flows => {
                if self.traffic.flows.is_empty() {
                    return Err(ConfigError::invalid("traffic.flows", "pattern flows needs at least one flow"));
                }
                TrafficPattern::Flows(self.traffic.flows.iter().map(|&(s, d)| (NodeId(s), NodeId(d))).collect())
            }
        };
        let packet = match self.traffic.packet {
            PacketSpec::Fixed { bytes } => PacketSize::Fixed { bytes },
            PacketSpec::Geometric { q } => PacketSize::Geometric { q },
        };
        let scenario = engine::Scenario {
            name: self.name.clone(),
            protocol: match self.protocol {
                ProtocolName::MacRsv => Protocol::MacRsv,
                ProtocolName::Cata => Protocol::Cata,
            },
            frame: self.frame,
            persistence_p: self.mac.persistence,
            rsv: RsvOptions {
                grant_policy: self.mac.grant_policy,
                paranoid_ncts: self.mac.paranoid_ncts,
                rb_ablation: self.mac.rb_ablation,
            },
            topology,
            mobility: self.mobility.clone(),
            traffic: Traffic {
                pattern,
                offered_load_bps: self.traffic.offered_load_bps,
                packet,
                queue_limit: self.traffic.queue_limit,
            },
            frames: self.frames,
            seed: self.seed,
            warmup_fraction: self.warmup_fraction,
            script: self
                .script
                .iter()
                .map(|e| ScriptedRts {
                    frame: e.frame,
                    triple: e.triple,
                    node: NodeId(e.node),
                    dst: NodeId(e.dst),
                    slots: e.slots.iter().copied().collect(),
                })
                .collect(),
            record_trace: false,
        };
        scenario.validate().map_err(|e| ConfigError::invalid(&self.name, e.to_string()))?;
        Ok(scenario)
    }
}
