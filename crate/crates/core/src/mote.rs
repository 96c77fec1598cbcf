//! Mote firmware: periodic sensing, the telemetry client, the command
//! server and relay control.

use std::collections::{BTreeMap, VecDeque};
use std::net::{IpAddr, Ipv6Addr};

use rand::Rng;
use serde::Serialize;

use crate::config::{ApplianceConfig, MoteConfig};
use crate::net::{Ipv6Packet, MINI_TCP_PROTOCOL};
use crate::reading::SensorReading;
use crate::time::{SimDuration, SimTime};
use crate::transport::{ConnKey, Endpoint, Outgoing, SocketEvent, COMMAND_PORT, TELEMETRY_PORT};

pub const ACK: u8 = 0x06;
pub const NAK: u8 = 0x15;
/// Hop limit of packets originated by motes.
pub const MOTE_HOP_LIMIT: u8 = 64;

/// Appliance relays and their consumption model.
#[derive(Debug, Clone)]
pub struct Relays {
    appliances: BTreeMap<u8, (ApplianceConfig, bool)>,
}

impl Relays {
    pub fn new(cfg: &[ApplianceConfig]) -> Self {
        Relays { appliances: cfg.iter().map(|a| (a.id, (a.clone(), a.on))).collect() }
    }

    pub fn is_on(&self, id: u8) -> Option<bool> {
        self.appliances.get(&id).map(|(_, on)| *on)
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.appliances.keys().copied()
    }

    /// Applies `[appliance_id, value]` and returns the ack byte.
    pub fn handle_command(&mut self, payload: &[u8]) -> u8 {
        let &[aid, value] = payload else { return NAK };
        match (self.appliances.get_mut(&aid), value) {
            (Some((_, on)), 0 | 1) => {
                *on = value == 1;
                ACK
            }
            _ => NAK,
        }
    }

    /// Instantaneous draw in milliwatts; zero whenever the relay is off.
    pub fn sample_mw(&self, id: u8, rng: &mut impl Rng) -> u32 {
        let Some((a, on)) = self.appliances.get(&id) else { return 0 };
        if !on {
            return 0;
        }
        let noise = if a.noise_watts > 0.0 { rng.random_range(-a.noise_watts..=a.noise_watts) } else { 0.0 };
        ((a.base_watts + noise).max(0.0) * 1000.0).round() as u32
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MoteStats {
    pub readings: u64,
    pub queue_overflow: u64,
    pub reconnects: u64,
    pub commands_ok: u64,
    pub commands_rejected: u64,
}

/// Something the application did that the world may want to trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MoteEvent {
    Sensed(SensorReading),
    RelaySet { appliance_id: u8, on: bool },
    TelemetryUp,
    TelemetryDown,
}

#[derive(Debug, Clone)]
pub struct MoteApp {
    pub id: u16,
    addr: Ipv6Addr,
    telemetry_dst: Ipv6Addr,
    relays: Relays,
    next_appliance: usize,
    seq: u32,
    queue: VecDeque<SensorReading>,
    queue_limit: usize,
    /// Readings written to the current connection, with their end offsets.
    unacked: VecDeque<(SensorReading, u64)>,
    written: u64,
    endpoint: Endpoint,
    telemetry: Option<(ConnKey, bool)>,
    reconnect_at: Option<SimTime>,
    reconnect: SimDuration,
    commands: BTreeMap<ConnKey, Vec<u8>>,
    pub stats: MoteStats,
}

impl MoteApp {
    /// `telemetry_dst` is the gateway's telemetry server as seen from the mesh.
    pub fn new(id: u16, addr: Ipv6Addr, telemetry_dst: Ipv6Addr, cfg: &MoteConfig) -> Self {
        let mut endpoint = Endpoint::new(IpAddr::V6(addr), MINI_TCP_PROTOCOL, u32::from(id).wrapping_mul(0x9E37_79B9));
        endpoint.listen(COMMAND_PORT);
        MoteApp {
            id,
            addr,
            telemetry_dst,
            relays: Relays::new(&cfg.appliances),
            next_appliance: 0,
            seq: 0,
            queue: VecDeque::new(),
            queue_limit: cfg.queue_limit,
            unacked: VecDeque::new(),
            written: 0,
            endpoint,
            telemetry: None,
            reconnect_at: Some(SimTime::ZERO),
            reconnect: SimDuration::from_millis(cfg.reconnect_ms),
            commands: BTreeMap::new(),
            stats: MoteStats::default(),
        }
    }

    pub fn addr(&self) -> Ipv6Addr {
        self.addr
    }

    pub fn relays(&self) -> &Relays {
        &self.relays
    }

    pub fn telemetry_connected(&self) -> bool {
        matches!(self.telemetry, Some((_, true)))
    }

    /// Readings not yet acknowledged by the gateway.
    pub fn backlog(&self) -> usize {
        self.queue.len() + self.unacked.len()
    }

    fn wrap(&self, out: Vec<Outgoing>) -> Vec<Ipv6Packet> {
        out.into_iter()
            .filter_map(|o| match o.dst {
                IpAddr::V6(dst) => Some(Ipv6Packet {
                    src: self.addr,
                    dst,
                    next_header: MINI_TCP_PROTOCOL,
                    hop_limit: MOTE_HOP_LIMIT,
                    payload: o.bytes,
                }),
                IpAddr::V4(_) => None,
            })
            .collect()
    }

    fn enqueue_front(&mut self, rs: impl DoubleEndedIterator<Item = SensorReading>) {
        for r in rs.rev() {
            self.queue.push_front(r);
        }
        while self.queue.len() > self.queue_limit {
            self.queue.pop_front();
            self.stats.queue_overflow += 1;
        }
    }

    /// Takes one reading (round-robin over appliances) and sends or queues it.
    pub fn sense(&mut self, now: SimTime, epoch_ms: u64, rng: &mut impl Rng) -> (SensorReading, Vec<Ipv6Packet>) {
        let ids: Vec<u8> = self.relays.ids().collect();
        let aid = ids[self.next_appliance % ids.len()];
        self.next_appliance += 1;
        self.seq += 1;
        let r = SensorReading {
            mote_id: self.id,
            appliance_id: aid,
            seq: self.seq,
            timestamp_ms: epoch_ms + now.as_millis(),
            watts_mw: self.relays.sample_mw(aid, rng),
        };
        self.stats.readings += 1;
        self.queue.push_back(r);
        while self.queue.len() > self.queue_limit {
            self.queue.pop_front();
            self.stats.queue_overflow += 1;
        }
        let out = self.pump(now);
        (r, out)
    }

    fn pump(&mut self, now: SimTime) -> Vec<Ipv6Packet> {
        let Some((key, true)) = self.telemetry else { return Vec::new() };
        let mut bytes = Vec::new();
        while let Some(r) = self.queue.pop_front() {
            bytes.extend(r.encode());
            self.written += crate::reading::READING_LEN as u64;
            self.unacked.push_back((r, self.written));
        }
        if bytes.is_empty() {
            return Vec::new();
        }
        match self.endpoint.send(&key, &bytes, now) {
            Ok(out) => self.wrap(out),
            Err(_) => Vec::new(),
        }
    }

    fn settle_acked(&mut self) {
        let Some((key, _)) = self.telemetry else { return };
        let acked = self.endpoint.connection(&key).map_or(0, |c| c.acked_bytes());
        while self.unacked.front().is_some_and(|(_, end)| *end <= acked) {
            self.unacked.pop_front();
        }
    }

    fn telemetry_lost(&mut self, now: SimTime, events: &mut Vec<MoteEvent>) {
        if let Some((key, _)) = self.telemetry.take() {
            self.endpoint.abort(&key);
        }
        let pending: Vec<SensorReading> = self.unacked.drain(..).map(|(r, _)| r).collect();
        self.enqueue_front(pending.into_iter());
        self.written = 0;
        self.reconnect_at = Some(now + self.reconnect);
        events.push(MoteEvent::TelemetryDown);
    }

    fn handle(&mut self, out: Vec<Outgoing>, socket: Vec<SocketEvent>, now: SimTime) -> (Vec<Ipv6Packet>, Vec<MoteEvent>) {
        let mut pkts = self.wrap(out);
        let mut events = Vec::new();
        self.settle_acked();
        for ev in socket {
            let telemetry_key = self.telemetry.map(|(k, _)| k);
            match ev {
                SocketEvent::Connected(k) if Some(k) == telemetry_key => {
                    self.telemetry = Some((k, true));
                    self.written = 0;
                    events.push(MoteEvent::TelemetryUp);
                    pkts.extend(self.pump(now));
                }
                SocketEvent::Closed { key, .. } if Some(key) == telemetry_key => self.telemetry_lost(now, &mut events),
                SocketEvent::Readable(k) if k.local_port == COMMAND_PORT => {
                    let data = self.endpoint.recv(&k);
                    let buf = self.commands.entry(k).or_default();
                    buf.extend(data);
                    let whole = buf.len() / 2 * 2;
                    let cmds: Vec<u8> = buf.drain(..whole).collect();
                    let mut acks = Vec::new();
                    for c in cmds.chunks_exact(2) {
                        let ack = self.relays.handle_command(c);
                        if ack == ACK {
                            self.stats.commands_ok += 1;
                            events.push(MoteEvent::RelaySet { appliance_id: c[0], on: c[1] == 1 });
                        } else {
                            self.stats.commands_rejected += 1;
                        }
                        acks.push(ack);
                    }
                    if !acks.is_empty() {
                        if let Ok(out) = self.endpoint.send(&k, &acks, now) {
                            pkts.extend(self.wrap(out));
                        }
                    }
                }
                SocketEvent::Closed { key, .. } if key.local_port == COMMAND_PORT => {
                    self.commands.remove(&key);
                }
                SocketEvent::Readable(k) => {
                    // Nothing is expected from the telemetry server.
                    self.endpoint.recv(&k);
                }
                _ => {}
            }
        }
        // A peer that closed the command connection gets our FIN too.
        let closing: Vec<ConnKey> = self
            .endpoint
            .open_connections()
            .filter(|(k, c)| k.local_port == COMMAND_PORT && c.state() == crate::transport::ConnState::FinWait)
            .map(|(k, _)| *k)
            .collect();
        for k in closing {
            let out = self.endpoint.close(&k, now);
            pkts.extend(self.wrap(out));
        }
        (pkts, events)
    }

    /// Handles an IPv6 packet addressed to this mote.
    pub fn on_packet(&mut self, p: &Ipv6Packet, now: SimTime) -> (Vec<Ipv6Packet>, Vec<MoteEvent>) {
        if p.next_header != MINI_TCP_PROTOCOL {
            return (Vec::new(), Vec::new());
        }
        let (out, ev) = self.endpoint.on_packet(IpAddr::V6(p.src), &p.payload, now);
        self.handle(out, ev, now)
    }

    pub fn poll(&mut self, now: SimTime) -> (Vec<Ipv6Packet>, Vec<MoteEvent>) {
        let (out, ev) = self.endpoint.poll(now);
        let (mut pkts, events) = self.handle(out, ev, now);
        if self.telemetry.is_none() && self.reconnect_at.is_some_and(|t| t <= now) {
            self.reconnect_at = None;
            self.stats.reconnects += 1;
            let (key, syn) = self.endpoint.connect(IpAddr::V6(self.telemetry_dst), TELEMETRY_PORT, now);
            self.telemetry = Some((key, false));
            pkts.extend(self.wrap(syn));
        }
        (pkts, events)
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        let reconnect = if self.telemetry.is_none() { self.reconnect_at } else { None };
        [self.endpoint.next_deadline(), reconnect].into_iter().flatten().min()
    }
}
