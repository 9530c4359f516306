//! Scenario files and the event loop that runs them.
//!
//! ```toml
//! [channel]
//! distance_m = 1500.0
//! loss_probability = 0.0
//! seed = 7
//!
//! [device.A]
//! mmsi = 257000001
//! clock_descriptor = 3
//! target = "B"
//!
//! [device.B]
//! mmsi = 257000002
//! clock_offset_s = 2.5
//! ```
//!
//! Devices without a `keystore` path share a long-term key generated from
//! the seed with the device they target (or that targets them).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use super::{from_ns, to_ns, DeviceClock, EventQueue, VirtualSea};
use crate::authproto::{
    defer_for_rollover, tx_duration_s, AuthConfig, AuthResult, Endpoint, Inbound, LocalIdentity,
    Outgoing,
};
use crate::bitcodec::{ClockDescriptor, Mmsi};
use crate::cipher::KeyMaterial;
use crate::keystore::{KeySlot, KeyStore, KeyStoreError, LongTermKeyRecord};
use crate::time::secs_between;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    KeyStore(#[from] KeyStoreError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Separation used to place devices without an explicit position.
    pub distance_m: f64,
    pub sound_speed_mps: f64,
    pub current_mps: f64,
    pub loss_probability: f64,
    pub bit_error_rate: f64,
    pub seed: u64,
    pub stop_time_s: f64,
    pub processing_delay_s: f64,
    pub max_range_m: f64,
    pub challenge_interval_s: f64,
    pub rollover_offset_s: f64,
    /// UTC instant of simulated time zero, RFC 3339.
    pub start: String,
    /// Age of auto-provisioned long-term keys at time zero.
    pub key_age_days: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let auth = AuthConfig::default();
        Self {
            distance_m: 1500.0,
            sound_speed_mps: auth.sound_speed_mps,
            current_mps: 0.0,
            loss_probability: 0.0,
            bit_error_rate: 0.0,
            seed: 0,
            stop_time_s: 3600.0,
            processing_delay_s: auth.processing_delay_s,
            max_range_m: auth.max_range_m,
            challenge_interval_s: auth.challenge_interval_s,
            rollover_offset_s: auth.rollover_offset_s,
            start: "2026-01-05T12:00:00Z".into(),
            key_age_days: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    /// Records every packet it hears and re-transmits it later.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    #[serde(default)]
    pub mmsi: u32,
    pub position_m: Option<f64>,
    #[serde(default)]
    pub clock_offset_s: f64,
    #[serde(default)]
    pub clock_drift: f64,
    #[serde(default = "default_cd")]
    pub clock_descriptor: u8,
    pub keystore: Option<PathBuf>,
    /// Name of the device this one authenticates to.
    pub target: Option<String>,
    #[serde(default = "one")]
    pub class_id: u8,
    #[serde(default = "one")]
    pub app_type: u8,
    #[serde(default = "one_f")]
    pub start_at_s: f64,
    pub adversary: Option<AdversaryKind>,
    #[serde(default = "ten")]
    pub replay_delay_s: f64,
    /// Renew the long-term key once the session is up.
    #[serde(default)]
    pub renew: bool,
}

fn default_cd() -> u8 {
    3
}
fn one() -> u8 {
    1
}
fn one_f() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            mmsi: 0,
            position_m: None,
            clock_offset_s: 0.0,
            clock_drift: 0.0,
            clock_descriptor: default_cd(),
            keystore: None,
            target: None,
            class_id: 1,
            app_type: 1,
            start_at_s: 1.0,
            adversary: None,
            replay_delay_s: 10.0,
            renew: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub device: BTreeMap<String, DeviceConfig>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        // keystore paths are relative to the scenario file
        if let Some(dir) = path.parent() {
            for d in s.device.values_mut() {
                if let Some(p) = d.keystore.as_mut() {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
        }
        Ok(s)
    }

    /// Two honest devices `A` -> `B` at `distance_m`.
    pub fn pair(distance_m: f64, seed: u64) -> Self {
        let mut device = BTreeMap::new();
        device.insert(
            "A".to_string(),
            DeviceConfig {
                mmsi: 257_000_001,
                target: Some("B".into()),
                ..DeviceConfig::default()
            },
        );
        device.insert(
            "B".to_string(),
            DeviceConfig {
                mmsi: 257_000_002,
                ..DeviceConfig::default()
            },
        );
        Self {
            channel: ChannelConfig {
                distance_m,
                seed,
                ..ChannelConfig::default()
            },
            device,
        }
    }

    pub fn start_time(&self) -> Result<DateTime<Utc>, ScenarioError> {
        DateTime::parse_from_rfc3339(&self.channel.start)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| invalid(format!("start: {e}")))
    }

    fn auth_config(&self) -> AuthConfig {
        let c = &self.channel;
        AuthConfig {
            max_range_m: c.max_range_m,
            sound_speed_mps: c.sound_speed_mps,
            processing_delay_s: c.processing_delay_s,
            challenge_interval_s: c.challenge_interval_s,
            rollover_offset_s: c.rollover_offset_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time_s: f64,
    pub device: String,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}\t{}\t{}\t{}", self.time_s, self.device, self.kind, self.detail)
    }
}

/// Outcome of one initiator/target relationship.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkMetrics {
    pub initiator: String,
    pub target: String,
    pub established: bool,
    pub established_at_s: Option<f64>,
    pub first_challenge_s: Option<f64>,
    pub challenges_sent: usize,
    /// Packets sent by either side up to establishment.
    pub packets_to_establish: Option<usize>,
    pub session_keys_equal: Option<bool>,
    pub session_key_hex: Option<String>,
    pub true_distance_m: f64,
    pub range_estimate_m: Option<f64>,
    pub clock_offset_before_s: Option<f64>,
    pub clock_offset_after_s: Option<f64>,
    pub clock_adjusted: bool,
    pub timing_failures: usize,
    pub renewal_confirmed: bool,
    pub longterm_keys_equal: Option<bool>,
    /// Both renewed records name the other side as peer.
    pub longterm_peers_bound: Option<bool>,
}

impl LinkMetrics {
    pub fn ranging_error_m(&self) -> Option<f64> {
        self.range_estimate_m.map(|r| r - self.true_distance_m)
    }

    pub fn time_to_establish_s(&self) -> Option<f64> {
        Some(self.established_at_s? - self.first_challenge_s?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub links: Vec<LinkMetrics>,
    pub packets_sent: usize,
    pub deliveries: usize,
    pub losses: usize,
    pub integrity_drops: usize,
    pub adversary_injections: usize,
    /// Injected packets that produced a reply or completed an exchange.
    pub adversary_successes: usize,
    /// Injected packets after which some session or key changed.
    pub adversary_state_changes: usize,
    pub end_time_s: f64,
}

impl Metrics {
    pub fn all_established(&self) -> bool {
        !self.links.is_empty() && self.links.iter().all(|l| l.established)
    }

    pub fn to_tsv(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "-".into(), ToString::to_string)
        }
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push('\t');
            out.push_str(&v);
            out.push('\n');
        };
        line("packets_sent", self.packets_sent.to_string());
        line("deliveries", self.deliveries.to_string());
        line("losses", self.losses.to_string());
        line("integrity_drops", self.integrity_drops.to_string());
        line("adversary_injections", self.adversary_injections.to_string());
        line("adversary_successes", self.adversary_successes.to_string());
        line("adversary_state_changes", self.adversary_state_changes.to_string());
        line("end_time_s", format!("{:.6}", self.end_time_s));
        for l in &self.links {
            let p = format!("link.{}.{}.", l.initiator, l.target);
            line(&format!("{p}established"), l.established.to_string());
            line(&format!("{p}established_at_s"), opt(&l.established_at_s.map(|t| format!("{t:.6}"))));
            line(&format!("{p}challenges_sent"), l.challenges_sent.to_string());
            line(&format!("{p}packets_to_establish"), opt(&l.packets_to_establish));
            line(&format!("{p}session_keys_equal"), opt(&l.session_keys_equal));
            line(&format!("{p}true_distance_m"), format!("{:.3}", l.true_distance_m));
            line(&format!("{p}range_estimate_m"), opt(&l.range_estimate_m.map(|r| format!("{r:.3}"))));
            line(&format!("{p}ranging_error_m"), opt(&l.ranging_error_m().map(|r| format!("{r:.3}"))));
            line(&format!("{p}clock_offset_before_s"), opt(&l.clock_offset_before_s.map(|r| format!("{r:.6}"))));
            line(&format!("{p}clock_offset_after_s"), opt(&l.clock_offset_after_s.map(|r| format!("{r:.6}"))));
            line(&format!("{p}timing_failures"), l.timing_failures.to_string());
            line(&format!("{p}renewal_confirmed"), l.renewal_confirmed.to_string());
            line(&format!("{p}longterm_keys_equal"), opt(&l.longterm_keys_equal));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trace: Vec<TraceEvent>,
    pub metrics: Metrics,
}

impl SimOutput {
    pub fn trace_tsv(&self) -> String {
        let mut out = String::from("time_s\tdevice\tkind\tdetail\n");
        for e in &self.trace {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

struct Node {
    name: String,
    position: f64,
    clock: DeviceClock,
    endpoint: Option<Endpoint>,
    adversary: Option<(AdversaryKind, f64)>,
    link: Option<usize>,
}

struct Link {
    initiator: usize,
    target: usize,
    slot: KeySlot,
    renew: bool,
    done: bool,
    packets: usize,
    metrics: LinkMetrics,
}

enum Event {
    Challenge { node: usize },
    Arrive { node: usize, from: usize, bytes: Vec<u8>, injected: bool },
    Inject { node: usize, bytes: Vec<u8> },
}

struct Sim {
    base: DateTime<Utc>,
    sea: VirtualSea,
    config: AuthConfig,
    stop_ns: u64,
    rng: ChaCha8Rng,
    key_rng: ChaCha8Rng,
    nodes: Vec<Node>,
    links: Vec<Link>,
    queue: EventQueue<Event>,
    trace: Vec<TraceEvent>,
    metrics: Metrics,
}

/// Runs `scenario` to completion or its stop time.
pub fn run_scenario(scenario: &Scenario) -> Result<SimOutput, ScenarioError> {
    let mut sim = Sim::build(scenario)?;
    sim.run();
    sim.metrics.links = sim.links.iter().map(|l| l.metrics.clone()).collect();
    // sends are logged when scheduled, which can be ahead of the clock
    sim.trace.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    Ok(SimOutput {
        trace: sim.trace,
        metrics: sim.metrics,
    })
}

impl Sim {
    fn build(s: &Scenario) -> Result<Self, ScenarioError> {
        let c = &s.channel;
        if !(0.0..=1.0).contains(&c.loss_probability) || !(0.0..=1.0).contains(&c.bit_error_rate) {
            return Err(invalid("probabilities must lie in [0, 1]"));
        }
        if c.current_mps.abs() >= c.sound_speed_mps || c.sound_speed_mps <= 0.0 {
            return Err(invalid("current must be slower than sound"));
        }
        if s.device.is_empty() {
            return Err(invalid("no devices"));
        }
        let base = s.start_time()?;
        let config = s.auth_config();
        let key_epoch = base - TimeDelta::milliseconds((c.key_age_days * 86_400_000.0) as i64);
        let names: Vec<&String> = s.device.keys().collect();
        let index = |name: &str| names.iter().position(|n| *n == name);

        let mut nodes = Vec::new();
        let mut stores: Vec<Option<KeyStore>> = Vec::new();
        for (i, (name, d)) in s.device.iter().enumerate() {
            let descriptor = ClockDescriptor::new(d.clock_descriptor)
                .map_err(|e| invalid(format!("device {name}: {e}")))?;
            if d.clock_drift.abs() > descriptor.drift_bound() {
                return Err(invalid(format!(
                    "device {name}: drift {} exceeds the bound of clock class {}",
                    d.clock_drift,
                    descriptor.code()
                )));
            }
            let position = d
                .position_m
                .unwrap_or(if i == 0 { 0.0 } else { c.distance_m });
            let adversary = d.adversary.map(|k| (k, d.replay_delay_s));
            if adversary.is_none() {
                Mmsi::new(d.mmsi).map_err(|e| invalid(format!("device {name}: {e}")))?;
            }
            stores.push(match &d.keystore {
                Some(p) => Some(KeyStore::load(p)?),
                None => None,
            });
            nodes.push(Node {
                name: name.clone(),
                position,
                clock: DeviceClock::new(d.clock_offset_s, d.clock_drift, descriptor),
                endpoint: None,
                adversary,
                link: None,
            });
        }

        let mut key_rng = ChaCha8Rng::seed_from_u64(c.seed);
        key_rng.set_stream(1);
        let auto: Vec<bool> = stores.iter().map(Option::is_none).collect();
        let mut stores: Vec<KeyStore> = stores.into_iter().map(Option::unwrap_or_default).collect();
        let mut links = Vec::new();
        for (i, (name, d)) in s.device.iter().enumerate() {
            let Some(target) = &d.target else { continue };
            let j = index(target)
                .ok_or_else(|| invalid(format!("device {name}: unknown target {target}")))?;
            if i == j || nodes[i].adversary.is_some() || nodes[j].adversary.is_some() {
                return Err(invalid(format!("device {name}: bad target {target}")));
            }
            let slot = KeySlot::new(d.class_id, d.app_type)
                .map_err(|e| invalid(format!("device {name}: {e}")))?;
            let (ma, mb) = (Mmsi::new(d.mmsi).unwrap(), Mmsi::new(s.device[target].mmsi).unwrap());
            let key = KeyMaterial::generate_longterm(&mut key_rng);
            for (k, peer) in [(i, mb), (j, ma)] {
                if auto[k] {
                    stores[k]
                        .insert_longterm(LongTermKeyRecord::new(slot, key.clone(), key_epoch, Some(peer)))
                        .map_err(|e| invalid(format!("device {}: {e}", nodes[k].name)))?;
                }
            }
            nodes[i].link = Some(links.len());
            links.push(Link {
                initiator: i,
                target: j,
                slot,
                renew: d.renew,
                done: false,
                packets: 0,
                metrics: LinkMetrics {
                    initiator: name.clone(),
                    target: target.clone(),
                    true_distance_m: (nodes[i].position - nodes[j].position).abs(),
                    ..LinkMetrics::default()
                },
            });
        }
        for ((node, store), d) in nodes.iter_mut().zip(stores).zip(s.device.values()) {
            if node.adversary.is_none() {
                let identity = LocalIdentity {
                    mmsi: Mmsi::new(d.mmsi).unwrap(),
                    clock_descriptor: node.clock.descriptor,
                };
                node.endpoint = Some(Endpoint::new(identity, config, store));
            }
        }

        let mut queue = EventQueue::new();
        for link in &links {
            let start = s.device[&nodes[link.initiator].name].start_at_s;
            queue.push(to_ns(start.max(0.0)), Event::Challenge { node: link.initiator });
        }
        Ok(Self {
            base,
            sea: VirtualSea {
                sound_speed_mps: c.sound_speed_mps,
                current_mps: c.current_mps,
                loss_probability: c.loss_probability,
                bit_error_rate: c.bit_error_rate,
            },
            config,
            stop_ns: to_ns(c.stop_time_s.max(0.0)),
            rng: ChaCha8Rng::seed_from_u64(c.seed),
            key_rng,
            nodes,
            links,
            queue,
            trace: Vec::new(),
            metrics: Metrics::default(),
        })
    }

    fn log(&mut self, t: f64, node: usize, kind: &'static str, detail: impl Into<String>) {
        self.trace.push(TraceEvent {
            time_s: t,
            device: self.nodes[node].name.clone(),
            kind,
            detail: detail.into(),
        });
    }

    fn run(&mut self) {
        while let Some(at) = self.queue.peek_time() {
            if at > self.stop_ns {
                break;
            }
            let (at, event) = self.queue.pop().expect("peeked");
            let t = from_ns(at);
            self.metrics.end_time_s = t;
            match event {
                Event::Challenge { node } => self.on_challenge(t, node),
                Event::Arrive {
                    node,
                    from,
                    bytes,
                    injected,
                } => self.on_arrive(t, node, from, bytes, injected),
                Event::Inject { node, bytes } => {
                    self.metrics.adversary_injections += 1;
                    self.transmit(t, node, vec![bytes], "replay", true);
                }
            }
        }
    }

    /// Sends `packets` back to back from `from`, starting at `t`.
    fn transmit(&mut self, t: f64, from: usize, packets: Vec<Vec<u8>>, kind: &str, injected: bool) {
        let mut start = t;
        for bytes in packets {
            let bits = bytes.len() * 8;
            self.metrics.packets_sent += 1;
            if let Some(l) = self.nodes[from].link.or_else(|| self.link_of_target(from)) {
                self.links[l].packets += usize::from(!injected);
            }
            self.log(start, from, "send", format!("{kind} {} {}", bits, hex::encode(&bytes)));
            for to in 0..self.nodes.len() {
                if to == from || (injected && self.nodes[to].adversary.is_some()) {
                    continue;
                }
                let arrival = start
                    + self.sea.arrival_after_s(bits, self.nodes[from].position, self.nodes[to].position)
                    + self.config.processing_delay_s;
                match self.sea.impair(&bytes, &mut self.rng) {
                    None => {
                        self.metrics.losses += 1;
                        self.log(arrival, to, "lost", format!("from {}", self.nodes[from].name));
                    }
                    Some(copy) => self.queue.push(
                        to_ns(arrival),
                        Event::Arrive {
                            node: to,
                            from,
                            bytes: copy,
                            injected,
                        },
                    ),
                }
            }
            start += tx_duration_s(bits);
        }
    }

    fn link_of_target(&self, node: usize) -> Option<usize> {
        self.links.iter().position(|l| l.target == node && !l.done)
    }

    fn on_challenge(&mut self, t: f64, node: usize) {
        let l = self.nodes[node].link.expect("challenge timers belong to initiators");
        if self.links[l].done || self.links[l].metrics.established {
            return;
        }
        let now = self.nodes[node].clock.now(self.base, t);
        // keep the exchange clear of a window rollover
        let deferred = defer_for_rollover(now, self.config.rollover_offset_s);
        if deferred != now {
            let wait = secs_between(now, deferred);
            self.log(t, node, "defer", format!("rollover, {wait:.3} s"));
            self.queue.push(to_ns(t + wait), Event::Challenge { node });
            return;
        }
        let slot = self.links[l].slot;
        let ep = self.nodes[node].endpoint.as_mut().expect("initiator");
        match ep.start_challenge(slot, now) {
            Ok(out) => {
                let m = &mut self.links[l].metrics;
                m.challenges_sent += 1;
                m.first_challenge_s.get_or_insert(t);
                self.send_outgoing(t, node, vec![out]);
            }
            Err(e) => self.log(t, node, "error", e.to_string()),
        }
        self.flush_diagnostics(t, node);
        let next = t + self.config.challenge_interval_s;
        self.queue.push(to_ns(next), Event::Challenge { node });
    }

    fn send_outgoing(&mut self, t: f64, node: usize, out: Vec<Outgoing>) {
        if out.is_empty() {
            return;
        }
        let kind = out[0].kind();
        let bytes = out.iter().map(Outgoing::to_bytes).collect();
        self.transmit(t, node, bytes, kind, false);
    }

    fn flush_diagnostics(&mut self, t: f64, node: usize) {
        let Some(ep) = self.nodes[node].endpoint.as_mut() else { return };
        let diags = ep.drain_diagnostics();
        for d in diags {
            self.log(t, node, "diag", format!("{} session={} {}", d.kind, d.session_id, d.reason));
        }
    }

    fn fingerprint(&self, node: usize) -> Vec<(u64, String)> {
        let Some(ep) = self.nodes[node].endpoint.as_ref() else { return vec![] };
        let mut v: Vec<(u64, String)> = ep
            .sessions()
            .map(|s| (s.id(), s.state().to_string()))
            .collect();
        v.push((u64::MAX, ep.store().to_text()));
        v
    }

    fn on_arrive(&mut self, t: f64, node: usize, from: usize, bytes: Vec<u8>, injected: bool) {
        self.metrics.deliveries += 1;
        let from_name = self.nodes[from].name.clone();
        if let Some((AdversaryKind::Replay, delay)) = self.nodes[node].adversary {
            if !injected {
                self.log(t, node, "record", format!("from {from_name}"));
                self.queue.push(to_ns(t + delay), Event::Inject { node, bytes });
            }
            return;
        }
        let before = injected.then(|| self.fingerprint(node));
        let now = self.nodes[node].clock.now(self.base, t);
        let ep = self.nodes[node].endpoint.as_mut().expect("honest node");
        let (inbound, replies) = ep.receive(&bytes, now);
        let tag = if injected { " injected" } else { "" };
        self.log(t, node, "deliver", format!("from {from_name}{tag} {}", describe(&inbound)));
        if matches!(inbound, Inbound::Dropped) {
            let diags_crc = self.nodes[node]
                .endpoint
                .as_mut()
                .map(|ep| ep.drain_diagnostics())
                .unwrap_or_default();
            for d in diags_crc {
                if d.kind == crate::authproto::DiagnosticKind::CrcFailure {
                    self.metrics.integrity_drops += 1;
                }
                self.log(t, node, "diag", format!("{} session={} {}", d.kind, d.session_id, d.reason));
            }
        }
        if injected {
            let authenticating = !matches!(
                inbound,
                Inbound::Dropped | Inbound::RenewalFragment | Inbound::TimingRejected { .. }
            ) || !replies.is_empty();
            if authenticating {
                self.metrics.adversary_successes += 1;
            }
            if before.as_ref() != Some(&self.fingerprint(node)) {
                self.metrics.adversary_state_changes += 1;
            }
        }
        match &inbound {
            Inbound::Established(result) => self.on_established(t, node, result),
            Inbound::TimingRejected { .. } => {
                if let Some(l) = self.nodes[node].link {
                    self.links[l].metrics.timing_failures += 1;
                }
            }
            Inbound::RenewalConfirmed { .. } => self.on_renewed(t, node),
            _ => {}
        }
        self.send_outgoing(t, node, replies);
        self.flush_diagnostics(t, node);
    }

    fn on_established(&mut self, t: f64, node: usize, result: &AuthResult) {
        let l = self.nodes[node].link.expect("only initiators establish");
        let target = self.links[l].target;
        let own = self.nodes[node].endpoint.as_ref().expect("honest").identity();
        let peer_key = self.nodes[target]
            .endpoint
            .as_ref()
            .and_then(|ep| ep.store().lookup_session(own.mmsi))
            .map(|r| r.key().clone());
        let offset = |sim: &Self| {
            sim.nodes[target].clock.reported_s(t) - sim.nodes[node].clock.reported_s(t)
        };
        let before = offset(self);
        let estimate = result.range(self.config.sound_speed_mps);
        {
            let link = &mut self.links[l];
            link.metrics.established = true;
            link.metrics.established_at_s = Some(t);
            link.metrics.packets_to_establish = Some(link.packets);
            link.metrics.session_keys_equal = Some(peer_key.as_ref() == Some(&result.session_key));
            link.metrics.session_key_hex = Some(result.session_key.to_hex());
            link.metrics.range_estimate_m = Some(estimate.distance_m);
            link.metrics.clock_offset_before_s = Some(before);
        }
        self.log(
            t,
            node,
            "established",
            format!(
                "peer {} range {:.3} m offset {:.3} s",
                result.peer, estimate.distance_m, estimate.clock_offset_s
            ),
        );
        if let Some(adj) = result.clock_sync(own.clock_descriptor) {
            self.nodes[node].clock.adjust(t, adj.delta_s);
            self.links[l].metrics.clock_adjusted = true;
            self.log(t, node, "sync", format!("step {:.6} s", adj.delta_s));
        }
        let after = offset(self);
        self.links[l].metrics.clock_offset_after_s = Some(after);

        if self.links[l].renew {
            let key = KeyMaterial::generate_longterm(&mut self.key_rng);
            let slot = self.links[l].slot;
            let ep = self.nodes[node].endpoint.as_mut().expect("honest");
            match ep.start_renewal(slot, key) {
                Ok(frames) => self.send_outgoing(t, node, frames),
                Err(e) => self.log(t, node, "error", e.to_string()),
            }
        } else {
            self.links[l].done = true;
        }
    }

    fn on_renewed(&mut self, _t: f64, node: usize) {
        let l = self.nodes[node].link.expect("only initiators renew");
        let (slot, target) = (self.links[l].slot, self.links[l].target);
        let key = |n: usize| {
            self.nodes[n]
                .endpoint
                .as_ref()
                .and_then(|ep| ep.store().longterm_records().find(|r| r.slot == slot))
                .map(|r| r.key().clone())
        };
        let equal = key(node).is_some() && key(node) == key(target);
        let peer_of = |n: usize| {
            self.nodes[n]
                .endpoint
                .as_ref()
                .and_then(|ep| ep.store().longterm_records().find(|r| r.slot == slot))
                .and_then(|r| r.peer)
        };
        let mmsi = |n: usize| self.nodes[n].endpoint.as_ref().map(|ep| ep.identity().mmsi);
        let bound = peer_of(node) == mmsi(target) && peer_of(target) == mmsi(node);
        let link = &mut self.links[l];
        link.metrics.longterm_peers_bound = Some(bound);
        link.metrics.renewal_confirmed = true;
        link.metrics.longterm_keys_equal = Some(equal);
        link.done = true;
    }
}

fn describe(inbound: &Inbound) -> String {
    match inbound {
        Inbound::Dropped => "dropped".into(),
        Inbound::Responded { peer } => format!("responded to {peer}"),
        Inbound::Established(r) => format!("established with {}", r.peer),
        Inbound::TimingRejected {
            asymmetry_s,
            window_s,
        } => format!("timing-rejected asymmetry {asymmetry_s:.3} s window {window_s:.3} s"),
        Inbound::RenewalFragment => "renewal-fragment".into(),
        Inbound::RenewalAccepted { peer } => format!("renewal-accepted from {peer}"),
        Inbound::RenewalConfirmed { peer } => format!("renewal-confirmed by {peer}"),
        Inbound::Unicast(o) => format!("unicast {o:?}"),
    }
}
