//! The IPv4/IPv6 gateway.
//!
//! Packets from the serial tunnel addressed to the gateway prefix are
//! translated to IPv4. Those for the gateway's own address reach its
//! telemetry server; the rest leave on the external side. IPv4 packets for
//! the mote pool are translated to IPv6 and written to the tunnel. The
//! gateway is sans-IO: callers feed bytes and time, and carry out what it
//! returns.

mod buffer;
mod delivery;
mod timing;
mod translate;

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

pub use buffer::DurableBuffer;
pub use delivery::{Collector, DeliveryError, ReadingDelivery, ScriptedLink};
pub use timing::{TimingLog, TimingReport};
pub use translate::{translate_4to6, translate_6to4, TranslateError};

use crate::addrmap::AddressMapConfig;
use crate::net::{serial, Ipv4Packet, Ipv6Packet, SerialDecoder, MINI_TCP_PROTOCOL};
use crate::reading::{ReadingStream, SensorReading};
use crate::time::{SimDuration, SimTime};
use crate::transport::{ConnKey, ConnState, Endpoint, SocketEvent, TELEMETRY_PORT};

/// TTL of packets the gateway originates itself.
const GATEWAY_TTL: u8 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayParams {
    pub addrmap: AddressMapConfig,
    pub ipv4: Ipv4Addr,
    pub probe_interval: SimDuration,
}

impl GatewayParams {
    pub fn from_config(c: &crate::config::Config) -> Self {
        GatewayParams {
            addrmap: c.addrmap,
            ipv4: c.gateway.ipv4,
            probe_interval: SimDuration::from_millis(c.gateway.probe_interval_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub serial_frames: u64,
    pub serial_errors: u64,
    pub external_packets: u64,
    pub translated_4to6: u64,
    pub translated_6to4: u64,
    pub dropped_malformed: u64,
    pub dropped_address: u64,
    pub dropped_protocol: u64,
    pub dropped_checksum: u64,
    pub readings_received: u64,
    pub readings_duplicate: u64,
    pub readings_delivered: u64,
    pub readings_buffered: u64,
    pub buffer_io_errors: u64,
}

/// Buffer depth and middleware link state, readable from other threads.
#[derive(Debug, Default)]
pub struct GatewayStatus {
    pub buffer_depth: AtomicU64,
    pub middleware_up: AtomicBool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatusSnapshot {
    pub buffer_depth: u64,
    pub middleware_link: &'static str,
}

impl GatewayStatus {
    pub fn snapshot(&self) -> StatusSnapshot {
        StatusSnapshot {
            buffer_depth: self.buffer_depth.load(Ordering::SeqCst),
            middleware_link: if self.middleware_up.load(Ordering::SeqCst) { "up" } else { "down" },
        }
    }
}

/// Everything one call asks the caller to emit.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct GatewayOutput {
    /// Encoded serial frames for the sink, in order.
    pub serial: Vec<u8>,
    pub external: Vec<Ipv4Packet>,
    /// Readings the telemetry server accepted (first time seen).
    pub readings: Vec<SensorReading>,
}

impl GatewayOutput {
    fn merge(&mut self, other: GatewayOutput) {
        self.serial.extend(other.serial);
        self.external.extend(other.external);
        self.readings.extend(other.readings);
    }
}

pub struct Gateway {
    params: GatewayParams,
    decoder: SerialDecoder,
    telemetry: Endpoint,
    streams: BTreeMap<ConnKey, ReadingStream>,
    buffer: DurableBuffer,
    delivery: Box<dyn ReadingDelivery>,
    link_up: bool,
    next_probe: Option<SimTime>,
    timing: TimingLog,
    status: Arc<GatewayStatus>,
    pub stats: GatewayStats,
}

impl Gateway {
    pub fn new(params: GatewayParams, buffer: DurableBuffer, delivery: Box<dyn ReadingDelivery>) -> Self {
        let mut telemetry = Endpoint::new(IpAddr::V4(params.ipv4), MINI_TCP_PROTOCOL, 0x4757_0000);
        telemetry.listen(TELEMETRY_PORT);
        let status = Arc::new(GatewayStatus::default());
        status.middleware_up.store(true, Ordering::SeqCst);
        status.buffer_depth.store(buffer.len() as u64, Ordering::SeqCst);
        Gateway {
            params,
            decoder: SerialDecoder::new(),
            telemetry,
            streams: BTreeMap::new(),
            buffer,
            delivery,
            link_up: true,
            next_probe: None,
            timing: TimingLog::default(),
            status,
            stats: GatewayStats::default(),
        }
    }

    pub fn params(&self) -> &GatewayParams {
        &self.params
    }

    pub fn timing(&self) -> TimingLog {
        self.timing.clone()
    }

    /// Shares an existing timing log, e.g. across a restart.
    pub fn with_timing(mut self, log: TimingLog) -> Self {
        self.timing = log;
        self
    }

    pub fn status(&self) -> Arc<GatewayStatus> {
        self.status.clone()
    }

    pub fn buffer(&self) -> &DurableBuffer {
        &self.buffer
    }

    /// Gives up the buffer, as a process exit would leave it on disk, and
    /// the delivery target.
    pub fn into_parts(self) -> (DurableBuffer, Box<dyn ReadingDelivery>) {
        (self.buffer, self.delivery)
    }

    pub fn middleware_up(&self) -> bool {
        self.link_up
    }

    fn publish_status(&self) {
        self.status.buffer_depth.store(self.buffer.len() as u64, Ordering::SeqCst);
        self.status.middleware_up.store(self.link_up, Ordering::SeqCst);
    }

    /// Bytes from the serial tunnel.
    pub fn on_serial(&mut self, bytes: &[u8], now: SimTime) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        for frame in self.decoder.push(bytes) {
            let started = Instant::now();
            self.stats.serial_frames += 1;
            let Ok(body) = frame else {
                self.stats.serial_errors += 1;
                continue;
            };
            let Ok(p6) = Ipv6Packet::decode(&body) else {
                self.stats.dropped_malformed += 1;
                continue;
            };
            let p4 = match translate_6to4(&p6, &self.params.addrmap) {
                Ok(p) => p,
                Err(e) => {
                    self.count_error(&e);
                    continue;
                }
            };
            self.stats.translated_6to4 += 1;
            if p4.dst == self.params.ipv4 {
                self.timing.push(started.elapsed().as_secs_f64() * 1e6);
                out.merge(self.local_telemetry(&p4, now));
            } else {
                out.external.push(p4);
                self.timing.push(started.elapsed().as_secs_f64() * 1e6);
            }
        }
        out.merge(self.flush(now));
        self.publish_status();
        out
    }

    /// One raw IPv4 packet from the external network.
    pub fn on_external(&mut self, bytes: &[u8], now: SimTime) -> GatewayOutput {
        let started = Instant::now();
        let mut out = GatewayOutput::default();
        self.stats.external_packets += 1;
        let p4 = match Ipv4Packet::decode(bytes) {
            Ok(p) => p,
            Err(_) => {
                self.stats.dropped_malformed += 1;
                return out;
            }
        };
        match self.to_serial(&p4) {
            Ok(frame) => {
                out.serial.extend(frame);
                self.timing.push(started.elapsed().as_secs_f64() * 1e6);
            }
            Err(e) => self.count_error(&e),
        }
        let _ = now;
        out
    }

    fn to_serial(&mut self, p4: &Ipv4Packet) -> Result<Vec<u8>, TranslateError> {
        let p6 = translate_4to6(p4, &self.params.addrmap)?;
        self.stats.translated_4to6 += 1;
        let body = p6.encode().map_err(|_| TranslateError::Truncated)?;
        Ok(serial::encode_frame(&body))
    }

    fn count_error(&mut self, e: &TranslateError) {
        match e {
            TranslateError::Address(_) => self.stats.dropped_address += 1,
            TranslateError::UnsupportedProtocol(_) => self.stats.dropped_protocol += 1,
            TranslateError::BadTransportChecksum => self.stats.dropped_checksum += 1,
            TranslateError::Truncated => self.stats.dropped_malformed += 1,
        }
    }

    fn local_telemetry(&mut self, p4: &Ipv4Packet, now: SimTime) -> GatewayOutput {
        let (segs, events) = self.telemetry.on_packet(IpAddr::V4(p4.src), &p4.payload, now);
        let mut out = self.emit_local(segs);
        out.merge(self.socket_events(events, now));
        out
    }

    fn emit_local(&mut self, segs: Vec<crate::transport::Outgoing>) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        for o in segs {
            let IpAddr::V4(dst) = o.dst else { continue };
            let p4 = Ipv4Packet::new(self.params.ipv4, dst, MINI_TCP_PROTOCOL, GATEWAY_TTL, o.bytes);
            match self.to_serial(&p4) {
                Ok(frame) => out.serial.extend(frame),
                Err(e) => self.count_error(&e),
            }
        }
        out
    }

    fn socket_events(&mut self, events: Vec<SocketEvent>, now: SimTime) -> GatewayOutput {
        let mut out = GatewayOutput::default();
        for ev in events {
            match ev {
                SocketEvent::Readable(k) => {
                    let bytes = self.telemetry.recv(&k);
                    let readings = self.streams.entry(k).or_default().push(&bytes);
                    for r in readings {
                        self.stats.readings_received += 1;
                        if self.ingest(r, now) {
                            out.readings.push(r);
                        }
                    }
                }
                SocketEvent::Closed { key, .. } => {
                    self.streams.remove(&key);
                }
                _ => {}
            }
        }
        let closing: Vec<ConnKey> = self
            .telemetry
            .open_connections()
            .filter(|(_, c)| c.state() == ConnState::FinWait)
            .map(|(k, _)| *k)
            .collect();
        for k in closing {
            let segs = self.telemetry.close(&k, now);
            out.merge(self.emit_local(segs));
        }
        out
    }

    /// Accepts a reading for delivery; false for duplicates.
    fn ingest(&mut self, r: SensorReading, now: SimTime) -> bool {
        if self.buffer.is_duplicate(&r) {
            self.stats.readings_duplicate += 1;
            return false;
        }
        if self.link_up && self.buffer.is_empty() {
            match self.delivery.deliver(&r) {
                Ok(()) => {
                    self.stats.readings_delivered += 1;
                    self.mark(&r);
                    return true;
                }
                Err(_) => self.link_down(now),
            }
        }
        if self.buffer.push(r).is_err() {
            self.stats.buffer_io_errors += 1;
        }
        self.stats.readings_buffered += 1;
        self.mark(&r);
        true
    }

    fn mark(&mut self, r: &SensorReading) {
        if self.buffer.mark_accepted(r).is_err() {
            self.stats.buffer_io_errors += 1;
        }
    }

    fn link_down(&mut self, now: SimTime) {
        self.link_up = false;
        self.next_probe = Some(now + self.params.probe_interval);
    }

    /// Replays buffered readings in order while the middleware accepts them.
    fn flush(&mut self, now: SimTime) -> GatewayOutput {
        if self.buffer.is_empty() || (!self.link_up && self.next_probe.is_some_and(|t| t > now)) {
            return GatewayOutput::default();
        }
        let mut sent = 0;
        let pending: Vec<SensorReading> = self.buffer.pending().copied().collect();
        for r in &pending {
            match self.delivery.deliver(r) {
                Ok(()) => sent += 1,
                Err(_) => {
                    self.link_down(now);
                    break;
                }
            }
        }
        if sent == pending.len() {
            self.link_up = true;
            self.next_probe = None;
        }
        self.stats.readings_delivered += sent as u64;
        if self.buffer.pop_delivered(sent).is_err() {
            self.stats.buffer_io_errors += 1;
        }
        GatewayOutput::default()
    }

    /// Fires transport timers and buffer probes that are due.
    pub fn poll(&mut self, now: SimTime) -> GatewayOutput {
        let (segs, events) = self.telemetry.poll(now);
        let mut out = self.emit_local(segs);
        out.merge(self.socket_events(events, now));
        out.merge(self.flush(now));
        self.publish_status();
        out
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        let probe = if self.buffer.is_empty() {
            None
        } else if self.link_up {
            Some(SimTime::ZERO)
        } else {
            self.next_probe
        };
        [self.telemetry.next_deadline(), probe].into_iter().flatten().min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::net::checksum::PseudoHeader;
    use crate::transport::{Flags, Segment};

    fn gateway(delivery: Box<dyn ReadingDelivery>) -> Gateway {
        Gateway::new(GatewayParams::from_config(&Config::defaults()), DurableBuffer::memory(), delivery)
    }

    fn reading(seq: u32) -> SensorReading {
        SensorReading { mote_id: 4, appliance_id: 1, seq, timestamp_ms: 0, watts_mw: 1 }
    }

    fn command_bytes(seq: u32) -> Vec<u8> {
        let cfg = Config::defaults();
        let (src, dst) = (cfg.gateway.client_ipv4, cfg.addrmap.mote_virtual4(3));
        let seg = Segment { src_port: 50000, dst_port: 7000, seq, ack: 0, flags: Flags::ACK, payload: vec![1, 0] };
        let pseudo = PseudoHeader::V4 { src, dst, protocol: MINI_TCP_PROTOCOL };
        Ipv4Packet::new(src, dst, MINI_TCP_PROTOCOL, 64, seg.encode(&pseudo)).encode().unwrap()
    }

    #[test]
    fn pumped_packets_are_timed_once_each() {
        let mut gw = gateway(Box::new(Collector::default()));
        let mut frames = 0;
        for i in 0..200 {
            let out = gw.on_external(&command_bytes(i), SimTime::ZERO);
            frames += serial::SerialDecoder::new().push(&out.serial).len();
        }
        assert_eq!(frames, 200);
        assert_eq!(gw.timing().len(), 200);
        assert!(gw.timing().snapshot().iter().all(|&us| us > 0.0 && us.is_finite()));
    }

    #[test]
    fn malformed_external_packet_is_counted() {
        let mut gw = gateway(Box::new(Collector::default()));
        let out = gw.on_external(&[0x45, 0, 0], SimTime::ZERO);
        assert!(out.serial.is_empty());
        assert_eq!(gw.stats.dropped_malformed, 1);
        let out = gw.on_external(&command_bytes(1), SimTime::ZERO);
        assert!(!out.serial.is_empty());
    }

    #[test]
    fn pump_keeps_arrival_order() {
        let mut gw = gateway(Box::new(Collector::default()));
        let mut dec = serial::SerialDecoder::new();
        let mut seqs = Vec::new();
        for i in 0..50 {
            for f in dec.push(&gw.on_external(&command_bytes(i), SimTime::ZERO).serial) {
                let p = Ipv6Packet::decode(&f.unwrap()).unwrap();
                seqs.push(Segment::parse_unchecked(&p.payload).seq);
            }
        }
        assert_eq!(seqs, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn outage_buffers_then_flushes_in_order() {
        let sink = Collector::default();
        let link = ScriptedLink::new(sink.clone());
        let switch = link.switch();
        let mut gw = gateway(Box::new(link));
        assert!(gw.ingest(reading(1), SimTime::ZERO));
        switch.store(false, Ordering::SeqCst);
        for s in 2..=31 {
            gw.ingest(reading(s), SimTime::from_secs(s as u64));
        }
        assert_eq!(gw.buffer().len(), 30);
        assert!(!gw.middleware_up());
        switch.store(true, Ordering::SeqCst);
        let probe = gw.next_deadline().unwrap();
        gw.poll(probe);
        assert!(gw.buffer().is_empty() && gw.middleware_up());
        let seqs: Vec<u32> = sink.readings().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, (1..=31).collect::<Vec<_>>());
    }

    #[test]
    fn replayed_reading_is_delivered_once() {
        let sink = Collector::default();
        let mut gw = gateway(Box::new(sink.clone()));
        assert!(gw.ingest(reading(1), SimTime::ZERO));
        assert!(!gw.ingest(reading(1), SimTime::ZERO));
        assert_eq!(sink.readings().len(), 1);
        assert_eq!(gw.stats.readings_duplicate, 1);
    }

    #[test]
    fn restart_recovers_buffer_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let params = GatewayParams::from_config(&Config::defaults());
        let sink = Collector::default();
        let link = ScriptedLink::new(sink.clone());
        link.switch().store(false, Ordering::SeqCst);
        let mut gw = Gateway::new(params.clone(), DurableBuffer::open(dir.path()).unwrap(), Box::new(link));
        for s in 1..=5 {
            gw.ingest(reading(s), SimTime::ZERO);
        }
        drop(gw);
        let mut gw = Gateway::new(params, DurableBuffer::open(dir.path()).unwrap(), Box::new(sink.clone()));
        assert!(!gw.ingest(reading(5), SimTime::ZERO));
        gw.poll(SimTime::from_secs(1));
        assert!(gw.ingest(reading(6), SimTime::from_secs(1)));
        let seqs: Vec<u32> = sink.readings().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5, 6]);
    }
}
