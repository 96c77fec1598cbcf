//! The whole testbed under one event loop: radio mesh, motes, sink,
//! serial tunnel, gateway and one external IPv4 client.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::net::{IpAddr, Ipv6Addr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::channel::{Channel, ChannelError, ChannelStats};
use super::queue::EventQueue;
use super::topology::{TopologyError, SINK};
use crate::aodv::{Action, Control, RouteEntry, Router};
use crate::config::{Config, ScriptedAction};
use crate::gateway::{DurableBuffer, Gateway, GatewayParams, GatewayStats, ReadingDelivery, ScriptedLink, TimingLog};
use crate::mote::{MoteApp, MoteEvent, MoteStats};
use crate::net::{FrameType, Ipv4Packet, Ipv6Packet, LinkAddr, LinkFrame, BROADCAST, MINI_TCP_PROTOCOL, NO_NEXT_HEADER};
use crate::reading::SensorReading;
use crate::sink::{SinkBridge, SinkStats};
use crate::sixlowpan::{encode_for_link, ReassemblyBuffer, TagAllocator};
use crate::time::{SimDuration, SimTime};
use crate::transport::{ConnError, ConnKey, Endpoint, SocketEvent, COMMAND_PORT};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("gateway buffer: {0}")]
    Buffer(#[from] std::io::Error),
}

pub struct WorldOptions {
    /// Motes run their firmware; without it nodes only route.
    pub apps: bool,
    /// On-disk gateway buffer. Without one the in-memory buffer is carried
    /// across gateway restarts, standing in for the disk.
    pub buffer_dir: Option<PathBuf>,
    pub delivery: Box<dyn ReadingDelivery>,
    pub trace: Option<Box<dyn Write + Send>>,
}

impl WorldOptions {
    pub fn new(delivery: Box<dyn ReadingDelivery>) -> Self {
        WorldOptions { apps: true, buffer_dir: None, delivery, trace: None }
    }
}

/// Application send to gateway receive for one reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySample {
    pub mote_id: u16,
    pub seq: u32,
    pub sent: SimTime,
    pub received: SimTime,
}

impl DelaySample {
    pub fn delay(&self) -> SimDuration {
        self.received - self.sent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CommandOutcome {
    Ack(u8),
    Timeout,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommandResult {
    pub id: u64,
    pub mote_id: u16,
    pub appliance_id: u8,
    pub value: u8,
    pub outcome: CommandOutcome,
    pub issued: SimTime,
    pub completed: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub forwarded: u64,
    pub delivered_local: u64,
    pub dropped_hop_limit: u64,
    pub dropped_tx_queue: u64,
    pub dropped_unreachable: u64,
    pub dropped_encode: u64,
    pub reassembly_errors: u64,
    pub control_malformed: u64,
    pub mac_failures: u64,
}

impl NodeStats {
    fn add(&mut self, o: &NodeStats) {
        self.forwarded += o.forwarded;
        self.delivered_local += o.delivered_local;
        self.dropped_hop_limit += o.dropped_hop_limit;
        self.dropped_tx_queue += o.dropped_tx_queue;
        self.dropped_unreachable += o.dropped_unreachable;
        self.dropped_encode += o.dropped_encode;
        self.reassembly_errors += o.reassembly_errors;
        self.control_malformed += o.control_malformed;
        self.mac_failures += o.mac_failures;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorldStats {
    pub channel: ChannelStats,
    pub nodes: NodeStats,
    pub motes: MoteStats,
    pub sink: SinkStats,
    pub gateway: GatewayStats,
    pub serial_down_drops: u64,
    pub client_dropped: u64,
}

enum Ev {
    Sense(LinkAddr, u64),
    TxStart(LinkAddr),
    Frame { to: LinkAddr, frame: LinkFrame },
    NodeTimer(LinkAddr),
    SerialToGateway(Vec<u8>),
    SerialToSink(Vec<u8>),
    GatewayTimer,
    ToGateway(Vec<u8>),
    ToClient(Ipv4Packet),
    ClientTimer,
    Script(usize),
}

struct Node {
    addr: Ipv6Addr,
    router: Router<Ipv6Packet>,
    reasm: ReassemblyBuffer,
    tags: TagAllocator,
    link_seq: u8,
    ctrl_q: VecDeque<LinkFrame>,
    data_q: VecDeque<LinkFrame>,
    transmitting: bool,
    timer_at: Option<SimTime>,
    app: Option<MoteApp>,
    received: u64,
    stats: NodeStats,
}

struct Job {
    id: u64,
    mote_id: u16,
    appliance_id: u8,
    value: u8,
    issued: SimTime,
    deadline: SimTime,
}

struct Client {
    endpoint: Endpoint,
    jobs: BTreeMap<ConnKey, Job>,
    timer_at: Option<SimTime>,
    next_id: u64,
}

pub struct World {
    cfg: Config,
    q: EventQueue<Ev>,
    rng: ChaCha8Rng,
    channel: Channel,
    nodes: BTreeMap<LinkAddr, Node>,
    sink: SinkBridge,
    gateway: Option<Gateway>,
    gateway_timer: Option<SimTime>,
    middleware_switch: Arc<AtomicBool>,
    buffer_dir: Option<PathBuf>,
    timing: TimingLog,
    client: Client,
    sent_at: BTreeMap<(u16, u32), SimTime>,
    delays: Vec<DelaySample>,
    delivered_readings: Vec<SensorReading>,
    results: Vec<CommandResult>,
    trace: Option<Box<dyn Write + Send>>,
    mote_events: Vec<(SimTime, u16, MoteEvent)>,
    stats_extra: (u64, u64),
}

impl World {
    pub fn new(cfg: &Config, opts: WorldOptions) -> Result<World, WorldError> {
        let topo = cfg.build_topology()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let telemetry_dst = cfg.addrmap.host4_to_virtual6(cfg.gateway.ipv4);
        let nodes = topo
            .nodes()
            .map(|id| {
                let addr = cfg.addrmap.mote_address(id);
                let app = (opts.apps && id != SINK).then(|| MoteApp::new(id, addr, telemetry_dst, &cfg.mote));
                let node = Node {
                    addr,
                    router: Router::new(id, cfg.aodv.clone()),
                    reasm: ReassemblyBuffer::new(cfg.addrmap.mesh_prefix6),
                    tags: TagAllocator::starting_at(rng.random()),
                    link_seq: rng.random(),
                    ctrl_q: VecDeque::new(),
                    data_q: VecDeque::new(),
                    transmitting: false,
                    timer_at: None,
                    app,
                    received: 0,
                    stats: NodeStats::default(),
                };
                (id, node)
            })
            .collect();
        let buffer = match &opts.buffer_dir {
            Some(d) => DurableBuffer::open(d)?,
            None => DurableBuffer::memory(),
        };
        let link = ScriptedLink::new(opts.delivery);
        let middleware_switch = link.switch();
        let gateway = Gateway::new(GatewayParams::from_config(cfg), buffer, Box::new(link));
        let timing = gateway.timing();
        let client = Client {
            endpoint: Endpoint::new(IpAddr::V4(cfg.gateway.client_ipv4), MINI_TCP_PROTOCOL, 0xC11E_0000),
            jobs: BTreeMap::new(),
            timer_at: None,
            next_id: 1,
        };
        let mut w = World {
            cfg: cfg.clone(),
            q: EventQueue::new(),
            rng,
            channel: Channel::new(topo),
            nodes,
            sink: SinkBridge::new(cfg.addrmap),
            gateway: Some(gateway),
            gateway_timer: None,
            middleware_switch,
            buffer_dir: opts.buffer_dir,
            timing,
            client,
            sent_at: BTreeMap::new(),
            delays: Vec::new(),
            delivered_readings: Vec::new(),
            results: Vec::new(),
            trace: opts.trace,
            mote_events: Vec::new(),
            stats_extra: (0, 0),
        };
        if opts.apps {
            let ids: Vec<LinkAddr> = w.nodes.keys().copied().filter(|&n| n != SINK).collect();
            for id in ids {
                let first = w.sense_offset();
                w.q.schedule(first, Ev::Sense(id, 1));
                w.arm_node(id);
            }
        }
        for (i, e) in cfg.events.iter().enumerate() {
            w.q.schedule(SimTime::from_millis(e.at_ms), Ev::Script(i));
        }
        Ok(w)
    }

    fn sense_offset(&mut self) -> SimTime {
        let j = self.cfg.mote.sense_jitter_ms * 1000;
        SimTime(if j == 0 { 0 } else { self.rng.random_range(0..j) })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn end_time(&self) -> SimTime {
        SimTime::from_secs(self.cfg.duration_s)
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn mote(&self, id: u16) -> Option<&MoteApp> {
        self.nodes.get(&id).and_then(|n| n.app.as_ref())
    }

    pub fn gateway(&self) -> &Gateway {
        self.gateway.as_ref().expect("gateway present between events")
    }

    pub fn timing(&self) -> TimingLog {
        self.timing.clone()
    }

    pub fn delays(&self) -> &[DelaySample] {
        &self.delays
    }

    /// Readings in the order the gateway accepted them.
    pub fn accepted_readings(&self) -> &[SensorReading] {
        &self.delivered_readings
    }

    pub fn mote_events(&self) -> &[(SimTime, u16, MoteEvent)] {
        &self.mote_events
    }

    pub fn take_command_results(&mut self) -> Vec<CommandResult> {
        std::mem::take(&mut self.results)
    }

    pub fn received_raw(&self, node: LinkAddr) -> u64 {
        self.nodes.get(&node).map_or(0, |n| n.received)
    }

    pub fn route(&self, from: LinkAddr, to: LinkAddr) -> Option<RouteEntry> {
        self.nodes.get(&from).and_then(|n| n.router.route(to).copied())
    }

    pub fn routing_snapshot(&self) -> BTreeMap<LinkAddr, BTreeMap<LinkAddr, RouteEntry>> {
        self.nodes.iter().map(|(&id, n)| (id, n.router.routes().clone())).collect()
    }

    pub fn stats(&self) -> WorldStats {
        let mut s = WorldStats {
            channel: self.channel.stats,
            sink: self.sink.stats,
            gateway: self.gateway().stats,
            serial_down_drops: self.stats_extra.0,
            client_dropped: self.stats_extra.1,
            ..Default::default()
        };
        for n in self.nodes.values() {
            s.nodes.add(&n.stats);
            if let Some(a) = &n.app {
                s.motes.readings += a.stats.readings;
                s.motes.queue_overflow += a.stats.queue_overflow;
                s.motes.reconnects += a.stats.reconnects;
                s.motes.commands_ok += a.stats.commands_ok;
                s.motes.commands_rejected += a.stats.commands_rejected;
            }
        }
        s
    }

    fn trace(&mut self, v: serde_json::Value) {
        if let Some(t) = self.trace.as_mut() {
            let mut line = serde_json::to_vec(&v).expect("trace record serialises");
            line.push(b'\n');
            // Trace output is best effort; a failing sink must not stop the run.
            let _ = t.write_all(&line);
        }
    }

    pub fn flush_trace(&mut self) {
        if let Some(t) = self.trace.as_mut() {
            let _ = t.flush();
        }
    }

    /// Runs every event up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) {
        while let Some((at, ev)) = self.q.pop_until(t) {
            self.dispatch(at, ev);
        }
        self.q.advance_to(t);
    }

    /// Processes the next event alone; returns its time.
    pub fn step(&mut self) -> Option<SimTime> {
        let (at, ev) = self.q.pop_until(SimTime(u64::MAX))?;
        self.dispatch(at, ev);
        Some(at)
    }

    /// Runs the configured duration.
    pub fn run(&mut self) {
        let end = self.end_time();
        self.run_until(end);
        self.flush_trace();
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.q.peek_time()
    }

    /// Sends a bare IPv6 packet between two nodes, e.g. to exercise routing.
    pub fn send_raw(&mut self, from: LinkAddr, to: LinkAddr, payload: Vec<u8>) {
        let now = self.now();
        let p = Ipv6Packet {
            src: self.cfg.addrmap.mote_address(from),
            dst: self.cfg.addrmap.mote_address(to),
            next_header: NO_NEXT_HEADER,
            hop_limit: crate::mote::MOTE_HOP_LIMIT,
            payload,
        };
        self.route_ip(from, p, now);
        self.arm_node(from);
    }

    /// Asks the external client to switch an appliance; returns the job id.
    pub fn command(&mut self, mote_id: u16, appliance_id: u8, value: u8) -> u64 {
        let now = self.now();
        let id = self.client.next_id;
        self.client.next_id += 1;
        let dst = self.cfg.addrmap.mote_virtual4(mote_id);
        let (key, out) = self.client.endpoint.connect(IpAddr::V4(dst), COMMAND_PORT, now);
        let deadline = now + SimDuration::from_millis(self.cfg.gateway.command_timeout_ms);
        self.client.jobs.insert(key, Job { id, mote_id, appliance_id, value, issued: now, deadline });
        self.trace(json!({"t": now.0, "ev": "command", "id": id, "mote": mote_id, "appliance": appliance_id, "value": value}));
        self.client_emit(out, now);
        self.arm_client();
        id
    }

    fn dispatch(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Sense(id, k) => self.on_sense(id, k, now),
            Ev::TxStart(id) => self.on_tx_start(id, now),
            Ev::Frame { to, frame } => self.on_frame(to, frame, now),
            Ev::NodeTimer(id) => self.on_node_timer(id, now),
            Ev::SerialToGateway(bytes) => {
                let out = self.gateway.as_mut().expect("gateway").on_serial(&bytes, now);
                self.gateway_output(out, now);
            }
            Ev::SerialToSink(bytes) => self.on_serial_to_sink(&bytes, now),
            Ev::GatewayTimer => {
                if self.gateway_timer.is_some_and(|t| t <= now) {
                    self.gateway_timer = None;
                }
                let out = self.gateway.as_mut().expect("gateway").poll(now);
                self.gateway_output(out, now);
            }
            Ev::ToGateway(bytes) => {
                let out = self.gateway.as_mut().expect("gateway").on_external(&bytes, now);
                self.gateway_output(out, now);
            }
            Ev::ToClient(p) => self.on_client_packet(p, now),
            Ev::ClientTimer => self.on_client_timer(now),
            Ev::Script(i) => self.on_script(i, now),
        }
    }

    fn on_sense(&mut self, id: LinkAddr, k: u64, now: SimTime) {
        if now >= self.end_time() {
            return;
        }
        let epoch = self.cfg.epoch_ms;
        let node = self.nodes.get_mut(&id).expect("mote exists");
        let app = node.app.as_mut().expect("sensing mote has firmware");
        let (r, pkts) = app.sense(now, epoch, &mut self.rng);
        self.sent_at.insert((r.mote_id, r.seq), now);
        self.trace(json!({"t": now.0, "ev": "sense", "mote": id, "seq": r.seq, "appliance": r.appliance_id, "mw": r.watts_mw}));
        self.mote_events.push((now, id, MoteEvent::Sensed(r)));
        for p in pkts {
            self.route_ip(id, p, now);
        }
        self.arm_node(id);
        let period = self.cfg.mote.period_ms * 1000;
        let next = SimTime(k * period) + SimDuration(self.sense_offset().0);
        self.q.schedule(next, Ev::Sense(id, k + 1));
    }

    fn enqueue(&mut self, id: LinkAddr, dst: LinkAddr, ty: FrameType, payload: Vec<u8>, now: SimTime) {
        let limit = self.cfg.mote.tx_queue_limit;
        let node = self.nodes.get_mut(&id).expect("node exists");
        node.link_seq = node.link_seq.wrapping_add(1);
        let frame = LinkFrame { dst, src: id, seq: node.link_seq, frame_type: ty, payload };
        if ty == FrameType::AodvControl {
            node.ctrl_q.push_back(frame);
        } else if node.data_q.len() >= limit {
            node.stats.dropped_tx_queue += 1;
            return;
        } else {
            node.data_q.push_back(frame);
        }
        if !node.transmitting {
            node.transmitting = true;
            self.q.schedule(now, Ev::TxStart(id));
        }
    }

    fn on_tx_start(&mut self, id: LinkAddr, now: SimTime) {
        let node = self.nodes.get_mut(&id).expect("node exists");
        // Routing control goes ahead of data.
        let Some(frame) = node.ctrl_q.pop_front().or_else(|| node.data_q.pop_front()) else {
            node.transmitting = false;
            return;
        };
        let dst = (frame.dst != BROADCAST).then_some(frame.dst);
        let len = frame.encoded_len();
        match self.channel.transmit(id, dst, len, now, &mut self.rng) {
            Err(ChannelError::NoSuchLink(_, to)) => {
                self.trace(json!({"t": now.0, "ev": "mac_fail", "node": id, "dst": to}));
                let node = self.nodes.get_mut(&id).expect("node exists");
                node.stats.mac_failures += 1;
                let actions = node.router.link_broken(to);
                self.apply(id, actions, now);
                self.q.schedule(now, Ev::TxStart(id));
            }
            Ok(tx) => {
                self.trace(json!({
                    "t": now.0, "ev": "tx", "node": id, "dst": frame.dst, "seq": frame.seq,
                    "type": frame.frame_type as u8, "len": len, "start": tx.start.0, "end": tx.end.0,
                }));
                for r in &tx.receptions {
                    match r.at {
                        Some(at) => self.q.schedule(at, Ev::Frame { to: r.to, frame: frame.clone() }),
                        None => self.trace(json!({"t": now.0, "ev": "lost", "node": id, "to": r.to, "seq": frame.seq})),
                    }
                }
                self.q.schedule(tx.end, Ev::TxStart(id));
            }
        }
        self.arm_node(id);
    }

    fn on_frame(&mut self, to: LinkAddr, frame: LinkFrame, now: SimTime) {
        self.trace(json!({"t": now.0, "ev": "rx", "node": to, "from": frame.src, "seq": frame.seq}));
        let from = frame.src;
        let node = self.nodes.get_mut(&to).expect("node exists");
        match frame.frame_type {
            FrameType::AodvControl => match Control::decode(&frame.payload) {
                Ok(c) => {
                    let actions = node.router.on_control(&c, from, now);
                    self.apply(to, actions, now);
                }
                Err(_) => node.stats.control_malformed += 1,
            },
            FrameType::Data => {
                node.router.touch_neighbor(from, now);
                match node.reasm.receive(from, &frame.payload, now) {
                    Ok(Some(p)) => self.on_ip(to, p, now),
                    Ok(None) => {}
                    Err(_) => node.stats.reassembly_errors += 1,
                }
            }
            FrameType::Ack => {}
        }
        self.arm_node(to);
    }

    fn on_ip(&mut self, id: LinkAddr, mut p: Ipv6Packet, now: SimTime) {
        let node = self.nodes.get_mut(&id).expect("node exists");
        if let Ok(src) = self.cfg.addrmap.mote_id(p.src) {
            node.router.refresh(src, now);
        }
        if p.dst == node.addr {
            node.stats.delivered_local += 1;
            node.received += 1;
            if let Some(app) = node.app.as_mut() {
                let (out, events) = app.on_packet(&p, now);
                self.mote_output(id, out, events, now);
            }
            return;
        }
        if id == SINK && !self.cfg.addrmap.is_mesh(p.dst) {
            match self.sink.mesh_to_serial(&p) {
                Ok(frame) => {
                    let at = now + SimDuration::from_micros(self.cfg.serial.latency_us);
                    self.q.schedule(at, Ev::SerialToGateway(frame));
                }
                Err(_) => self.trace(json!({"t": now.0, "ev": "serial_drop"})),
            }
            return;
        }
        if p.hop_limit <= 1 {
            node.stats.dropped_hop_limit += 1;
            return;
        }
        p.hop_limit -= 1;
        node.stats.forwarded += 1;
        self.route_ip(id, p, now);
    }

    fn link_dest(&self, p: &Ipv6Packet) -> LinkAddr {
        self.cfg.addrmap.mote_id(p.dst).unwrap_or(SINK)
    }

    fn route_ip(&mut self, id: LinkAddr, p: Ipv6Packet, now: SimTime) {
        let dest = self.link_dest(&p);
        if dest == id {
            // Off-mesh traffic originated at the sink itself.
            return self.on_ip(id, p, now);
        }
        let actions = self.nodes.get_mut(&id).expect("node exists").router.send(dest, p, now);
        self.apply(id, actions, now);
    }

    fn apply(&mut self, id: LinkAddr, actions: Vec<Action<Ipv6Packet>>, now: SimTime) {
        for a in actions {
            match a {
                Action::Broadcast(c) => self.enqueue(id, BROADCAST, FrameType::AodvControl, c.encode(), now),
                Action::Unicast(to, c) => self.enqueue(id, to, FrameType::AodvControl, c.encode(), now),
                Action::Forward(to, p) => {
                    let prefix = self.cfg.addrmap.mesh_prefix6;
                    let node = self.nodes.get_mut(&id).expect("node exists");
                    match encode_for_link(&p, prefix, &mut node.tags) {
                        Ok(frames) => {
                            for f in frames {
                                self.enqueue(id, to, FrameType::Data, f, now);
                            }
                        }
                        Err(_) => node.stats.dropped_encode += 1,
                    }
                }
                Action::Unreachable(dest, _) => {
                    self.nodes.get_mut(&id).expect("node exists").stats.dropped_unreachable += 1;
                    self.trace(json!({"t": now.0, "ev": "unreachable", "node": id, "dest": dest}));
                }
            }
        }
    }

    fn mote_output(&mut self, id: LinkAddr, out: Vec<Ipv6Packet>, events: Vec<MoteEvent>, now: SimTime) {
        for e in events {
            if let MoteEvent::RelaySet { appliance_id, on } = e {
                self.trace(json!({"t": now.0, "ev": "relay", "mote": id, "appliance": appliance_id, "on": on}));
            }
            self.mote_events.push((now, id, e));
        }
        for p in out {
            self.route_ip(id, p, now);
        }
    }

    fn arm_node(&mut self, id: LinkAddr) {
        let node = self.nodes.get_mut(&id).expect("node exists");
        let deadline = [
            node.router.next_deadline(),
            node.reasm.next_deadline(),
            node.app.as_ref().and_then(|a| a.next_deadline()),
        ]
        .into_iter()
        .flatten()
        .min();
        if let Some(d) = deadline {
            if node.timer_at.is_none_or(|t| d < t) {
                node.timer_at = Some(d);
                self.q.schedule(d, Ev::NodeTimer(id));
            }
        }
    }

    fn on_node_timer(&mut self, id: LinkAddr, now: SimTime) {
        let node = self.nodes.get_mut(&id).expect("node exists");
        if node.timer_at.is_some_and(|t| t <= now) {
            node.timer_at = None;
        }
        node.reasm.expire(now);
        let actions = node.router.poll(now);
        let app_out = node.app.as_mut().map(|a| a.poll(now));
        self.apply(id, actions, now);
        if let Some((out, events)) = app_out {
            self.mote_output(id, out, events, now);
        }
        self.arm_node(id);
    }

    fn on_serial_to_sink(&mut self, bytes: &[u8], now: SimTime) {
        if !self.sink.serial_up {
            self.stats_extra.0 += 1;
            return;
        }
        for r in self.sink.serial_to_mesh(bytes) {
            match r {
                Ok(p) => self.route_ip(SINK, p, now),
                Err(e) => self.trace(json!({"t": now.0, "ev": "sink_error", "error": e.to_string()})),
            }
        }
        self.arm_node(SINK);
    }

    fn gateway_output(&mut self, out: crate::gateway::GatewayOutput, now: SimTime) {
        if !out.serial.is_empty() {
            let at = now + SimDuration::from_micros(self.cfg.serial.latency_us);
            self.q.schedule(at, Ev::SerialToSink(out.serial));
        }
        let ext = SimDuration::from_micros(self.cfg.gateway.external_latency_us);
        for p in out.external {
            self.q.schedule(now + ext, Ev::ToClient(p));
        }
        for r in out.readings {
            self.trace(json!({"t": now.0, "ev": "reading", "mote": r.mote_id, "seq": r.seq, "mw": r.watts_mw}));
            if let Some(sent) = self.sent_at.remove(&(r.mote_id, r.seq)) {
                self.delays.push(DelaySample { mote_id: r.mote_id, seq: r.seq, sent, received: now });
            }
            self.delivered_readings.push(r);
        }
        self.arm_gateway(now);
    }

    fn arm_gateway(&mut self, now: SimTime) {
        if let Some(d) = self.gateway.as_ref().and_then(|g| g.next_deadline()) {
            let d = d.max(now);
            if self.gateway_timer.is_none_or(|t| d < t) {
                self.gateway_timer = Some(d);
                self.q.schedule(d, Ev::GatewayTimer);
            }
        }
    }

    fn client_emit(&mut self, out: Vec<crate::transport::Outgoing>, now: SimTime) {
        let src = self.cfg.gateway.client_ipv4;
        let ext = SimDuration::from_micros(self.cfg.gateway.external_latency_us);
        for o in out {
            let IpAddr::V4(dst) = o.dst else { continue };
            let bytes = Ipv4Packet::new(src, dst, MINI_TCP_PROTOCOL, 64, o.bytes).encode().expect("small packet");
            self.q.schedule(now + ext, Ev::ToGateway(bytes));
        }
    }

    fn on_client_packet(&mut self, p: Ipv4Packet, now: SimTime) {
        if p.dst != self.cfg.gateway.client_ipv4 || p.protocol != MINI_TCP_PROTOCOL {
            self.stats_extra.1 += 1;
            return;
        }
        let (out, events) = self.client.endpoint.on_packet(IpAddr::V4(p.src), &p.payload, now);
        self.client_emit(out, now);
        self.client_events(events, now);
        self.arm_client();
    }

    fn finish_job(&mut self, key: ConnKey, outcome: CommandOutcome, now: SimTime) {
        let Some(job) = self.client.jobs.remove(&key) else { return };
        self.trace(json!({"t": now.0, "ev": "command_done", "id": job.id, "outcome": format!("{outcome:?}")}));
        self.results.push(CommandResult {
            id: job.id,
            mote_id: job.mote_id,
            appliance_id: job.appliance_id,
            value: job.value,
            outcome,
            issued: job.issued,
            completed: now,
        });
    }

    fn client_events(&mut self, events: Vec<SocketEvent>, now: SimTime) {
        for ev in events {
            match ev {
                SocketEvent::Connected(k) => {
                    let Some(job) = self.client.jobs.get(&k) else { continue };
                    let cmd = [job.appliance_id, job.value];
                    if let Ok(out) = self.client.endpoint.send(&k, &cmd, now) {
                        self.client_emit(out, now);
                    }
                }
                SocketEvent::Readable(k) => {
                    let data = self.client.endpoint.recv(&k);
                    if let Some(&ack) = data.first() {
                        self.finish_job(k, CommandOutcome::Ack(ack), now);
                        let out = self.client.endpoint.close(&k, now);
                        self.client_emit(out, now);
                    }
                }
                SocketEvent::Closed { key, error } => {
                    let outcome = match error {
                        Some(ConnError::Timeout) => CommandOutcome::Timeout,
                        _ => CommandOutcome::Reset,
                    };
                    self.finish_job(key, outcome, now);
                }
                SocketEvent::Accepted(_) => {}
            }
        }
    }

    fn arm_client(&mut self) {
        let deadline =
            [self.client.endpoint.next_deadline(), self.client.jobs.values().map(|j| j.deadline).min()]
                .into_iter()
                .flatten()
                .min();
        if let Some(d) = deadline {
            if self.client.timer_at.is_none_or(|t| d < t) {
                self.client.timer_at = Some(d);
                self.q.schedule(d, Ev::ClientTimer);
            }
        }
    }

    fn on_client_timer(&mut self, now: SimTime) {
        if self.client.timer_at.is_some_and(|t| t <= now) {
            self.client.timer_at = None;
        }
        let (out, events) = self.client.endpoint.poll(now);
        self.client_emit(out, now);
        self.client_events(events, now);
        let expired: Vec<ConnKey> =
            self.client.jobs.iter().filter(|(_, j)| j.deadline <= now).map(|(k, _)| *k).collect();
        for k in expired {
            self.client.endpoint.abort(&k);
            self.finish_job(k, CommandOutcome::Timeout, now);
        }
        self.arm_client();
    }

    fn on_script(&mut self, i: usize, now: SimTime) {
        let action = self.cfg.events[i].action.clone();
        self.trace(json!({"t": now.0, "ev": "script", "action": action}));
        match action {
            ScriptedAction::LinkDown { a, b } => {
                self.channel.topology_mut().remove_link(a, b);
            }
            ScriptedAction::LinkUp { a, b } => {
                let p = self.cfg.default_link();
                // Validated at load time, so the link is well-formed.
                let _ = self.channel.topology_mut().add_link(a, b, p);
            }
            ScriptedAction::SerialDown => self.sink.serial_up = false,
            ScriptedAction::SerialUp => self.sink.serial_up = true,
            ScriptedAction::MiddlewareDown => self.set_middleware(false),
            ScriptedAction::MiddlewareUp => {
                self.set_middleware(true);
                self.arm_gateway(now);
            }
            ScriptedAction::GatewayRestart => self.restart_gateway(now),
            ScriptedAction::Command { mote_id, appliance_id, value } => {
                self.command(mote_id, appliance_id, value);
            }
        }
    }

    pub fn set_middleware(&mut self, up: bool) {
        self.middleware_switch.store(up, Ordering::SeqCst);
    }

    /// Drops all volatile gateway state and reopens its buffer.
    pub fn restart_gateway(&mut self, now: SimTime) {
        let old = self.gateway.take().expect("gateway");
        let (buffer, delivery) = old.into_parts();
        let buffer = match &self.buffer_dir {
            Some(d) => {
                drop(buffer);
                DurableBuffer::open(d).expect("gateway buffer reopens")
            }
            None => buffer,
        };
        let gw = Gateway::new(GatewayParams::from_config(&self.cfg), buffer, delivery).with_timing(self.timing.clone());
        self.gateway = Some(gw);
        self.gateway_timer = None;
        self.arm_gateway(now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Collector;

    fn world(src: &str) -> (World, Collector) {
        let cfg = Config::parse(src).unwrap();
        let c = Collector::default();
        (World::new(&cfg, WorldOptions::new(Box::new(c.clone()))).unwrap(), c)
    }

    #[test]
    fn single_mote_delivers_one_reading_per_period() {
        let (mut w, sink) = world("duration_s = 60\n[topology]\npreset = \"line\"\nmotes = 1\n");
        w.run_until(SimTime::from_secs(61));
        let seqs: Vec<u32> = sink.readings().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, (1..=60).collect::<Vec<_>>());
    }

    #[test]
    fn command_reaches_far_end_of_line() {
        let (mut w, _) = world("[topology]\npreset = \"line\"\nmotes = 7\n");
        w.run_until(SimTime::from_secs(10));
        w.command(7, 1, 0);
        w.run_until(SimTime::from_secs(20));
        let r = w.take_command_results();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].outcome, CommandOutcome::Ack(crate::mote::ACK));
        assert_eq!(w.mote(7).unwrap().relays().is_on(1), Some(false));
        assert_eq!(w.route(7, SINK).unwrap().hop_count, 7);
    }
}

