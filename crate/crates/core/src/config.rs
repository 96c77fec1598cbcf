//! Scenario configuration.
//!
//! Every default lives in the shipped `config/defaults.toml`; scenario
//! files are merged over it key by key. Errors carry the line of the
//! offending key in the scenario text whenever it appears there.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::addrmap::AddressMapConfig;
use crate::aodv::AodvParams;
use crate::sim::{LinkParams, Topology};
use crate::time::SimDuration;

pub const DEFAULTS_TOML: &str = include_str!("../../../config/defaults.toml");

/// Scenario presets shipped with the crate, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("line7", include_str!("../../../config/scenarios/line7.toml")),
    ("star7", include_str!("../../../config/scenarios/star7.toml")),
    ("mesh7", include_str!("../../../config/scenarios/mesh7.toml")),
    ("cluster7", include_str!("../../../config/scenarios/cluster7.toml")),
    ("traffic", include_str!("../../../config/scenarios/traffic.toml")),
    ("e2e7", include_str!("../../../config/scenarios/e2e7.toml")),
    ("outage", include_str!("../../../config/scenarios/outage.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Line,
    Star,
    Cluster,
    Mesh,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: u16,
    pub b: u16,
    #[serde(default)]
    pub latency_us: Option<u64>,
    #[serde(default)]
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub preset: Preset,
    pub motes: u16,
    pub base_latency_us: u64,
    pub loss: f64,
    pub mesh_density: f64,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceConfig {
    pub id: u8,
    pub base_watts: f64,
    pub noise_watts: f64,
    pub on: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoteConfig {
    pub period_ms: u64,
    /// Each sensing instant is delayed by a uniform draw from `[0, sense_jitter_ms)`.
    pub sense_jitter_ms: u64,
    pub queue_limit: usize,
    pub tx_queue_limit: usize,
    pub reconnect_ms: u64,
    pub appliances: Vec<ApplianceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SerialConfig {
    pub latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub ipv4: Ipv4Addr,
    /// Simulated external IPv4 client that issues commands.
    pub client_ipv4: Ipv4Addr,
    pub external_latency_us: u64,
    pub probe_interval_ms: u64,
    pub command_timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub mote_id: u16,
    pub appliance_id: u8,
    pub threshold_watts: f64,
    pub sustain_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiddlewareConfig {
    pub listen: String,
    pub max_plausible_mw: u64,
    pub clock_skew_ms: u64,
    pub retention_s: u64,
    pub rule_interval_ms: u64,
    /// A mote whose newest reading is older than this is reported down.
    pub link_stale_ms: u64,
    pub rules: Vec<RuleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub counts: Vec<u16>,
    /// Delay samples sent before this instant are discarded.
    pub warmup_s: u64,
    pub xlat_packets: usize,
    pub xlat_warmup: usize,
    pub histogram_bin_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptedAction {
    LinkDown { a: u16, b: u16 },
    LinkUp { a: u16, b: u16 },
    SerialDown,
    SerialUp,
    MiddlewareDown,
    MiddlewareUp,
    GatewayRestart,
    Command { mote_id: u16, appliance_id: u8, value: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub at_ms: u64,
    pub action: ScriptedAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub duration_s: u64,
    pub epoch_ms: u64,
    pub events: Vec<ScriptedEvent>,
    pub topology: TopologyConfig,
    pub addrmap: AddressMapConfig,
    pub aodv: AodvParams,
    pub mote: MoteConfig,
    pub serial: SerialConfig,
    pub gateway: GatewayConfig,
    pub middleware: MiddlewareConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line in the scenario text.
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.key.is_empty()) {
            (Some(l), false) => write!(f, "line {l}: {}: {}", self.key, self.message),
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (None, false) => write!(f, "{}: {}", self.key, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line on which dotted `key` is assigned or opened as a table in `src`.
/// Array indices in `key` are ignored.
pub fn locate(src: &str, key: &str) -> Option<usize> {
    let path: Vec<&str> = key.split('.').map(|s| s.split('[').next().unwrap_or(s)).collect();
    let mut table: Vec<String> = Vec::new();
    let mut best = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            table = name.split('.').map(|s| s.trim().to_string()).collect();
            if table.iter().map(String::as_str).eq(path.iter().copied().take(table.len())) && table.len() <= path.len() {
                best = Some(i + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let full: Vec<String> =
            table.iter().cloned().chain(lhs.split('.').map(|s| s.trim().trim_matches('"').to_string())).collect();
        let n = full.len().min(path.len());
        if n > 0 && full[..n].iter().map(String::as_str).eq(path[..n].iter().copied()) {
            best = Some(i + 1);
            if full.len() >= path.len() {
                return best;
            }
        }
    }
    best
}

/// First line assigning a bare `key`, at any nesting depth.
fn mention(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        l.split('#').next().unwrap_or("").match_indices(key).any(|(i, _)| {
            let before = l[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric() && c != '_');
            let after = l[i + key.len()..].trim_start();
            before && after.starts_with('=')
        })
    })
    .map(|i| i + 1)
}

fn type_name(v: &toml::Value) -> &'static str {
    v.type_str()
}

/// Merges `over` into `base`, rejecting keys and types absent from `base`.
fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str, src: &str) -> Result<(), ConfigError> {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let err = |message: String| ConfigError { line: locate(src, &path), key: path.clone(), message };
        let Some(slot) = base.get_mut(&k) else {
            return Err(err("unknown key".into()));
        };
        match (slot, v) {
            (toml::Value::Table(b), toml::Value::Table(o)) => merge(b, o, &path, src)?,
            (slot @ toml::Value::Float(_), toml::Value::Integer(i)) => *slot = toml::Value::Float(i as f64),
            (slot, v) if std::mem::discriminant(slot) == std::mem::discriminant(&v) => *slot = v,
            (slot, v) => {
                return Err(err(format!("expected {}, found {}", type_name(slot), type_name(&v))));
            }
        }
    }
    Ok(())
}

fn defaults_table() -> toml::Table {
    toml::from_str(DEFAULTS_TOML).expect("shipped defaults parse")
}

impl Config {
    /// The shipped defaults.
    pub fn defaults() -> Config {
        static D: OnceLock<Config> = OnceLock::new();
        D.get_or_init(|| Config::parse("").expect("shipped defaults are valid")).clone()
    }

    /// Parses a scenario text over the shipped defaults and validates it.
    pub fn parse(src: &str) -> Result<Config, ConfigError> {
        let user: toml::Table = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of_offset(src, s.start)),
            key: String::new(),
            message: e.message().to_string(),
        })?;
        let mut table = defaults_table();
        merge(&mut table, user, "", src)?;
        let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let key = msg.split('`').nth(1).unwrap_or("").to_string();
            let line = if key.is_empty() { None } else { locate(src, &key).or_else(|| mention(src, &key)) };
            ConfigError { line, key, message: msg }
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError { line: locate(src, &key), key, message })?;
        Ok(cfg)
    }

    /// Resolves `name_or_path` as a shipped preset name or a file path.
    pub fn load(name_or_path: &str) -> Result<(String, Config), ConfigError> {
        if let Some(text) = preset(name_or_path) {
            return Config::parse(text).map(|c| (name_or_path.to_string(), c));
        }
        let text = std::fs::read_to_string(name_or_path).map_err(|e| ConfigError {
            line: None,
            key: String::new(),
            message: format!("{name_or_path}: {e}"),
        })?;
        Config::parse(&text).map(|c| (name_or_path.to_string(), c))
    }

    fn validate(&self) -> Result<(), (String, String)> {
        let bad = |k: &str, m: String| Err((k.to_string(), m));
        let t = &self.topology;
        if t.motes == 0 || t.motes == u16::MAX {
            return bad("topology.motes", format!("must be in 1..=65534, got {}", t.motes));
        }
        if !(0.0..=1.0).contains(&t.loss) {
            return bad("topology.loss", format!("must be within [0, 1], got {}", t.loss));
        }
        if t.base_latency_us == 0 {
            return bad("topology.base_latency_us", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.mesh_density) {
            return bad("topology.mesh_density", format!("must be within [0, 1], got {}", t.mesh_density));
        }
        if t.preset == Preset::Explicit && t.links.is_empty() {
            return bad("topology.links", "explicit preset needs at least one link".into());
        }
        self.build_topology().map_err(|e| ("topology.links".to_string(), e.to_string()))?;
        self.addrmap.validate(Some(self.gateway.ipv4)).map_err(|e| ("addrmap".to_string(), e.to_string()))?;
        if self.addrmap.in_pool(self.gateway.client_ipv4) {
            return bad("gateway.client_ipv4", "must lie outside the mote pool".into());
        }
        if self.gateway.client_ipv4 == self.gateway.ipv4 {
            return bad("gateway.client_ipv4", "must differ from the gateway address".into());
        }
        let m = &self.mote;
        if m.period_ms == 0 {
            return bad("mote.period_ms", "must be positive".into());
        }
        if m.sense_jitter_ms > m.period_ms {
            return bad("mote.sense_jitter_ms", "must not exceed period_ms".into());
        }
        if m.queue_limit == 0 || m.tx_queue_limit == 0 {
            return bad("mote.queue_limit", "queue limits must be positive".into());
        }
        if m.appliances.is_empty() {
            return bad("mote.appliances", "at least one appliance is required".into());
        }
        let mut ids = BTreeSet::new();
        for a in &m.appliances {
            if !ids.insert(a.id) {
                return bad("mote.appliances", format!("duplicate appliance id {}", a.id));
            }
            if !(a.base_watts >= 0.0 && a.noise_watts >= 0.0) {
                return bad("mote.appliances", format!("appliance {}: watts must be non-negative", a.id));
            }
        }
        if self.serial.latency_us == 0 || self.gateway.external_latency_us == 0 {
            return bad("serial.latency_us", "latencies must be positive".into());
        }
        if self.aodv.rreq_retries == 0 || self.aodv.rreq_hop_limit == 0 {
            return bad("aodv.rreq_retries", "retries and hop limit must be positive".into());
        }
        if self.experiment.counts.contains(&0) {
            return bad("experiment.counts", "mote counts must be positive".into());
        }
        if self.experiment.histogram_bin_us == 0 {
            return bad("experiment.histogram_bin_us", "must be positive".into());
        }
        let mw = &self.middleware;
        if mw.listen.parse::<std::net::SocketAddr>().is_err() {
            return bad("middleware.listen", format!("not a socket address: {:?}", mw.listen));
        }
        if mw.retention_s == 0 || mw.rule_interval_ms == 0 || mw.link_stale_ms == 0 {
            return bad("middleware.retention_s", "retention and intervals must be positive".into());
        }
        for r in &self.middleware.rules {
            if r.threshold_watts.is_nan() || r.threshold_watts < 0.0 {
                return bad("middleware.rules", "threshold_watts must be non-negative".into());
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let key = format!("events[{i}]");
            match e.action {
                ScriptedAction::LinkDown { a, b } | ScriptedAction::LinkUp { a, b } if a.max(b) > t.motes || a == b => {
                    return bad(&key, format!("link {a}-{b} is not between two distinct nodes"));
                }
                ScriptedAction::Command { mote_id, value, .. } if mote_id == 0 || mote_id > t.motes || value > 1 => {
                    return bad(&key, "command needs a mote id in range and value 0 or 1".into());
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn default_link(&self) -> LinkParams {
        LinkParams { latency: SimDuration::from_micros(self.topology.base_latency_us), loss: self.topology.loss }
    }

    pub fn build_topology(&self) -> Result<Topology, crate::sim::TopologyError> {
        let t = &self.topology;
        let p = self.default_link();
        Ok(match t.preset {
            Preset::Line => Topology::line(t.motes, p),
            Preset::Star => Topology::star(t.motes, p),
            Preset::Cluster => Topology::cluster(t.motes, p),
            Preset::Mesh => Topology::random_connected(t.motes, t.mesh_density, p, self.seed),
            Preset::Explicit => {
                let mut topo = Topology::empty(t.motes);
                for l in &t.links {
                    let lp = LinkParams {
                        latency: l.latency_us.map_or(p.latency, SimDuration::from_micros),
                        loss: l.loss.unwrap_or(p.loss),
                    };
                    topo.add_link(l.a, l.b, lp)?;
                }
                topo
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_preset_validates() {
        for (name, text) in PRESETS {
            Config::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn overrides_merge_over_defaults() {
        let c = Config::parse("seed = 9\n[topology]\nmotes = 3\n").unwrap();
        assert_eq!((c.seed, c.topology.motes), (9, 3));
        assert_eq!(c.mote.period_ms, Config::defaults().mote.period_ms);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let e = Config::parse("seed = 1\n\n[topology]\nmotse = 3\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (Some(4), "topology.motse"));
    }

    #[test]
    fn wrong_type_reports_its_line() {
        let e = Config::parse("[mote]\nperiod_ms = \"fast\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("expected integer"), "{e}");
    }

    #[test]
    fn invalid_value_reports_its_line() {
        let e = Config::parse("[topology]\nmotes = 3\nloss = 1.5\n").unwrap_err();
        assert_eq!((e.line, e.key.as_str()), (Some(3), "topology.loss"));
    }

    #[test]
    fn syntax_error_reports_its_line() {
        let e = Config::parse("seed = 1\nduration_s = = 2\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn gateway_inside_pool_is_rejected() {
        let e = Config::parse("[gateway]\nipv4 = \"10.77.0.9\"\n").unwrap_err();
        assert_eq!(e.key, "addrmap");
    }

    #[test]
    fn nested_array_errors_point_at_the_array() {
        let src = "[mote]\nappliances = [{ id = 1, base_watts = 1.0, noise_watts = 0.0, on = true, colour = 3 }]\n";
        let e = Config::parse(src).unwrap_err();
        assert_eq!(e.line, Some(2), "{e}");
    }
}
