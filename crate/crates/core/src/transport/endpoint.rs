use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use super::{ConnError, ConnState, Connection, Flags, Segment};
use crate::net::checksum::PseudoHeader;
use crate::time::{SimDuration, SimTime};

/// Closed connections linger this long to re-acknowledge a repeated FIN.
const LINGER: SimDuration = SimDuration::from_secs(2);
const EPHEMERAL_START: u16 = 49152;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnKey {
    pub local_port: u16,
    pub remote: IpAddr,
    pub remote_port: u16,
}

/// A segment ready to be wrapped in an IP packet towards `dst`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub dst: IpAddr,
    pub segment: Segment,
    /// Encoded segment with its checksum already filled in.
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocketEvent {
    Connected(ConnKey),
    Accepted(ConnKey),
    Readable(ConnKey),
    Closed { key: ConnKey, error: Option<ConnError> },
}

#[derive(Debug, Clone)]
struct Slot {
    conn: Connection,
    linger_until: Option<SimTime>,
}

/// Socket table for one host address.
#[derive(Debug, Clone)]
pub struct Endpoint {
    local: IpAddr,
    protocol: u8,
    listening: BTreeSet<u16>,
    conns: BTreeMap<ConnKey, Slot>,
    next_port: u16,
    next_iss: u32,
    pub bad_checksums: u64,
    pub resets_sent: u64,
}

impl Endpoint {
    pub fn new(local: IpAddr, protocol: u8, iss_seed: u32) -> Self {
        Endpoint {
            local,
            protocol,
            listening: BTreeSet::new(),
            conns: BTreeMap::new(),
            next_port: EPHEMERAL_START,
            next_iss: iss_seed,
            bad_checksums: 0,
            resets_sent: 0,
        }
    }

    pub fn local_addr(&self) -> IpAddr {
        self.local
    }

    pub fn listen(&mut self, port: u16) {
        self.listening.insert(port);
    }

    fn iss(&mut self) -> u32 {
        let v = self.next_iss;
        self.next_iss = self.next_iss.wrapping_add(64_000);
        v
    }

    fn ephemeral_port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if self.next_port == u16::MAX { EPHEMERAL_START } else { self.next_port + 1 };
        p
    }

    fn outgoing(&self, remote: IpAddr, segs: Vec<Segment>) -> Vec<Outgoing> {
        let Some(pseudo) = PseudoHeader::for_addrs(self.local, remote, self.protocol) else {
            return Vec::new();
        };
        segs.into_iter()
            .map(|segment| Outgoing { dst: remote, bytes: segment.encode(&pseudo), segment })
            .collect()
    }

    pub fn connect(&mut self, remote: IpAddr, remote_port: u16, now: SimTime) -> (ConnKey, Vec<Outgoing>) {
        let local_port = self.ephemeral_port();
        let key = ConnKey { local_port, remote, remote_port };
        let iss = self.iss();
        let (conn, syn) = Connection::connect(local_port, remote_port, iss, now);
        self.conns.insert(key, Slot { conn, linger_until: None });
        (key, self.outgoing(remote, vec![syn]))
    }

    pub fn connection(&self, key: &ConnKey) -> Option<&Connection> {
        self.conns.get(key).map(|s| &s.conn)
    }

    pub fn state(&self, key: &ConnKey) -> Option<ConnState> {
        self.connection(key).map(Connection::state)
    }

    pub fn open_connections(&self) -> impl Iterator<Item = (&ConnKey, &Connection)> {
        self.conns.iter().filter(|(_, s)| s.conn.is_open()).map(|(k, s)| (k, &s.conn))
    }

    pub fn send(&mut self, key: &ConnKey, data: &[u8], now: SimTime) -> Result<Vec<Outgoing>, ConnError> {
        let slot = self.conns.get_mut(key).ok_or(ConnError::ConnectionReset)?;
        let segs = slot.conn.send(data, now)?;
        Ok(self.outgoing(key.remote, segs))
    }

    pub fn recv(&mut self, key: &ConnKey) -> Vec<u8> {
        self.conns.get_mut(key).map(|s| s.conn.take_received()).unwrap_or_default()
    }

    pub fn close(&mut self, key: &ConnKey, now: SimTime) -> Vec<Outgoing> {
        let Some(slot) = self.conns.get_mut(key) else {
            return Vec::new();
        };
        let segs = slot.conn.close(now);
        if slot.conn.state() == ConnState::ClosedFinal && slot.linger_until.is_none() {
            slot.linger_until = Some(now + LINGER);
        }
        self.outgoing(key.remote, segs)
    }

    /// Forgets a connection without telling the peer.
    pub fn abort(&mut self, key: &ConnKey) {
        self.conns.remove(key);
    }

    fn transition_events(key: ConnKey, before: ConnState, slot: &mut Slot, now: SimTime, events: &mut Vec<SocketEvent>) {
        let after = slot.conn.state();
        let opened = matches!(after, ConnState::Established | ConnState::FinWait | ConnState::ClosedFinal)
            && slot.conn.error().is_none();
        match before {
            ConnState::SynSent if opened => events.push(SocketEvent::Connected(key)),
            ConnState::SynRcvd if opened => events.push(SocketEvent::Accepted(key)),
            _ => {}
        }
        if slot.conn.has_received() {
            events.push(SocketEvent::Readable(key));
        }
        if before != ConnState::ClosedFinal && after == ConnState::ClosedFinal {
            slot.linger_until = Some(now + LINGER);
            events.push(SocketEvent::Closed { key, error: slot.conn.error() });
        }
    }

    /// Handles one transport payload addressed to this endpoint.
    pub fn on_packet(&mut self, src: IpAddr, bytes: &[u8], now: SimTime) -> (Vec<Outgoing>, Vec<SocketEvent>) {
        let mut events = Vec::new();
        let Some(pseudo) = PseudoHeader::for_addrs(src, self.local, self.protocol) else {
            return (Vec::new(), events);
        };
        let seg = match Segment::decode(bytes, &pseudo) {
            Ok(s) => s,
            Err(_) => {
                self.bad_checksums += 1;
                return (Vec::new(), events);
            }
        };
        let key = ConnKey { local_port: seg.dst_port, remote: src, remote_port: seg.src_port };
        let is_fresh_syn = seg.has(Flags::SYN) && !seg.has(Flags::ACK);
        let reusable = self
            .conns
            .get(&key)
            .is_none_or(|s| s.linger_until.is_some() && is_fresh_syn);
        if reusable {
            if is_fresh_syn && self.listening.contains(&seg.dst_port) {
                let iss = self.iss();
                let (conn, synack) = Connection::accept(&seg, iss, now);
                self.conns.insert(key, Slot { conn, linger_until: None });
                return (self.outgoing(src, vec![synack]), events);
            }
            if self.conns.contains_key(&key) {
                // Lingering connection: let it re-ACK a repeated FIN.
            } else {
                if seg.has(Flags::RST) {
                    return (Vec::new(), events);
                }
                self.resets_sent += 1;
                let rst = Segment {
                    src_port: seg.dst_port,
                    dst_port: seg.src_port,
                    seq: seg.ack,
                    ack: seg.seq.wrapping_add(seg.seq_len()),
                    flags: Flags::RST | Flags::ACK,
                    payload: Vec::new(),
                };
                return (self.outgoing(src, vec![rst]), events);
            }
        }
        let slot = self.conns.get_mut(&key).expect("slot exists");
        let before = slot.conn.state();
        let segs = slot.conn.on_segment(&seg, now);
        Self::transition_events(key, before, slot, now, &mut events);
        (self.outgoing(src, segs), events)
    }

    /// Fires retransmission timers and purges lingering connections.
    pub fn poll(&mut self, now: SimTime) -> (Vec<Outgoing>, Vec<SocketEvent>) {
        let mut out = Vec::new();
        let mut events = Vec::new();
        self.conns.retain(|_, s| s.linger_until.is_none_or(|t| t > now));
        let keys: Vec<ConnKey> = self.conns.keys().copied().collect();
        for key in keys {
            let slot = self.conns.get_mut(&key).expect("slot exists");
            if slot.conn.next_deadline().is_none_or(|d| d > now) {
                continue;
            }
            let before = slot.conn.state();
            let segs = slot.conn.on_timer(now).unwrap_or_default();
            Self::transition_events(key, before, slot, now, &mut events);
            out.extend(self.outgoing(key.remote, segs));
        }
        (out, events)
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.conns
            .values()
            .filter_map(|s| match s.linger_until {
                Some(t) => Some(t),
                None => s.conn.next_deadline(),
            })
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn addr(last: u8) -> IpAddr {
        IpAddr::V4(Ipv4Addr::new(10, 0, 0, last))
    }

    /// Shuttles everything between two endpoints with no loss.
    fn pump(a: &mut Endpoint, b: &mut Endpoint, mut from_a: Vec<Outgoing>, now: SimTime) -> Vec<SocketEvent> {
        let mut from_b: Vec<Outgoing> = Vec::new();
        let mut events = Vec::new();
        while !from_a.is_empty() || !from_b.is_empty() {
            for o in std::mem::take(&mut from_a) {
                let (out, ev) = b.on_packet(a.local_addr(), &o.bytes, now);
                from_b.extend(out);
                events.extend(ev);
            }
            for o in std::mem::take(&mut from_b) {
                let (out, ev) = a.on_packet(b.local_addr(), &o.bytes, now);
                from_a.extend(out);
                events.extend(ev);
            }
        }
        events
    }

    #[test]
    fn connect_send_close() {
        let mut client = Endpoint::new(addr(1), 253, 1);
        let mut server = Endpoint::new(addr(2), 253, 5);
        server.listen(7000);
        let (key, syn) = client.connect(addr(2), 7000, SimTime::ZERO);
        let ev = pump(&mut client, &mut server, syn, SimTime::ZERO);
        assert!(ev.contains(&SocketEvent::Connected(key)));
        let skey = ConnKey { local_port: 7000, remote: addr(1), remote_port: key.local_port };
        assert!(ev.contains(&SocketEvent::Accepted(skey)));

        let out = client.send(&key, &[1, 1], SimTime::ZERO).unwrap();
        let ev = pump(&mut client, &mut server, out, SimTime::ZERO);
        assert!(ev.contains(&SocketEvent::Readable(skey)));
        assert_eq!(server.recv(&skey), vec![1, 1]);

        let out = client.close(&key, SimTime::ZERO);
        let ev = pump(&mut client, &mut server, out, SimTime::ZERO);
        assert!(ev.contains(&SocketEvent::Closed { key, error: None }));
        assert!(ev.contains(&SocketEvent::Closed { key: skey, error: None }));
    }

    #[test]
    fn unknown_connection_gets_reset() {
        let mut client = Endpoint::new(addr(1), 253, 1);
        let mut server = Endpoint::new(addr(2), 253, 5);
        let (key, syn) = client.connect(addr(2), 7000, SimTime::ZERO);
        let ev = pump(&mut client, &mut server, syn, SimTime::ZERO);
        assert_eq!(ev, vec![SocketEvent::Closed { key, error: Some(ConnError::ConnectionReset) }]);
        assert_eq!(server.resets_sent, 1);
    }

    #[test]
    fn corrupted_segment_is_counted_and_dropped() {
        let mut client = Endpoint::new(addr(1), 253, 1);
        let mut server = Endpoint::new(addr(2), 253, 5);
        server.listen(7000);
        let (_, mut syn) = client.connect(addr(2), 7000, SimTime::ZERO);
        syn[0].bytes[5] ^= 0x10;
        let (out, ev) = server.on_packet(addr(1), &syn[0].bytes, SimTime::ZERO);
        assert!(out.is_empty() && ev.is_empty());
        assert_eq!(server.bad_checksums, 1);
    }
}
