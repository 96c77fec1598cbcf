use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use super::{Flags, Segment, INITIAL_RTO, MAX_DATA_RETRIES, MAX_RTO, MAX_SYN_RETRIES, MSS};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnState {
    Closed,
    SynSent,
    SynRcvd,
    Established,
    FinWait,
    ClosedFinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
pub enum ConnError {
    #[error("connection timed out")]
    Timeout,
    #[error("connection reset by peer")]
    ConnectionReset,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConnStats {
    pub segments_sent: u64,
    pub retransmissions: u64,
    pub duplicate_acks: u64,
    pub out_of_window: u64,
    pub ignored: u64,
}

#[derive(Debug, Clone)]
struct InFlight {
    seg: Segment,
    deadline: SimTime,
    retries: u32,
}

/// One end of a mini-TCP connection.
#[derive(Debug, Clone)]
pub struct Connection {
    pub local_port: u16,
    pub remote_port: u16,
    state: ConnState,
    send_next: u32,
    recv_next: u32,
    send_buf: VecDeque<u8>,
    recv_buf: Vec<u8>,
    in_flight: Option<InFlight>,
    rto: SimDuration,
    close_requested: bool,
    fin_sent: bool,
    fin_acked: bool,
    fin_received: bool,
    acked_bytes: u64,
    error: Option<ConnError>,
    stats: ConnStats,
}

impl Connection {
    fn blank(local_port: u16, remote_port: u16, state: ConnState) -> Self {
        Connection {
            local_port,
            remote_port,
            state,
            send_next: 0,
            recv_next: 0,
            send_buf: VecDeque::new(),
            recv_buf: Vec::new(),
            in_flight: None,
            rto: INITIAL_RTO,
            close_requested: false,
            fin_sent: false,
            fin_acked: false,
            fin_received: false,
            acked_bytes: 0,
            error: None,
            stats: ConnStats::default(),
        }
    }

    /// Active open: returns the connection and its SYN.
    pub fn connect(local_port: u16, remote_port: u16, iss: u32, now: SimTime) -> (Self, Segment) {
        let mut c = Self::blank(local_port, remote_port, ConnState::SynSent);
        let syn = c.segment(iss, 0, Flags::SYN, Vec::new());
        c.send_next = iss.wrapping_add(1);
        c.arm(syn.clone(), now);
        (c, syn)
    }

    /// Passive open from a received SYN: returns the connection and its SYN+ACK.
    pub fn accept(syn: &Segment, iss: u32, now: SimTime) -> (Self, Segment) {
        let mut c = Self::blank(syn.dst_port, syn.src_port, ConnState::SynRcvd);
        c.recv_next = syn.seq.wrapping_add(1);
        let synack = c.segment(iss, c.recv_next, Flags::SYN | Flags::ACK, Vec::new());
        c.send_next = iss.wrapping_add(1);
        c.arm(synack.clone(), now);
        (c, synack)
    }

    pub fn state(&self) -> ConnState {
        self.state
    }

    pub fn error(&self) -> Option<ConnError> {
        self.error
    }

    pub fn stats(&self) -> ConnStats {
        self.stats
    }

    pub fn recv_next(&self) -> u32 {
        self.recv_next
    }

    /// Payload bytes the peer has acknowledged so far.
    pub fn acked_bytes(&self) -> u64 {
        self.acked_bytes
    }

    /// Bytes accepted by [`send`](Self::send) but not yet acknowledged.
    pub fn unacked_len(&self) -> usize {
        self.send_buf.len() + self.in_flight.as_ref().map_or(0, |f| f.seg.payload.len())
    }

    pub fn is_open(&self) -> bool {
        !matches!(self.state, ConnState::Closed | ConnState::ClosedFinal)
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.in_flight.as_ref().map(|f| f.deadline)
    }

    fn segment(&self, seq: u32, ack: u32, flags: Flags, payload: Vec<u8>) -> Segment {
        Segment { src_port: self.local_port, dst_port: self.remote_port, seq, ack, flags, payload }
    }

    fn ack_segment(&mut self) -> Segment {
        self.stats.segments_sent += 1;
        self.segment(self.send_next, self.recv_next, Flags::ACK, Vec::new())
    }

    fn arm(&mut self, seg: Segment, now: SimTime) {
        self.stats.segments_sent += 1;
        self.in_flight = Some(InFlight { seg, deadline: now + self.rto, retries: 0 });
    }

    /// Queues `data` for transmission.
    pub fn send(&mut self, data: &[u8], now: SimTime) -> Result<Vec<Segment>, ConnError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        if !self.is_open() || self.close_requested {
            return Err(ConnError::ConnectionReset);
        }
        self.send_buf.extend(data);
        Ok(self.try_send(now))
    }

    pub fn has_received(&self) -> bool {
        !self.recv_buf.is_empty()
    }

    /// Drains and returns bytes delivered in order so far.
    pub fn take_received(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.recv_buf)
    }

    /// Requests a graceful close once queued data is acknowledged.
    pub fn close(&mut self, now: SimTime) -> Vec<Segment> {
        match self.state {
            ConnState::Closed | ConnState::ClosedFinal => Vec::new(),
            ConnState::SynSent => {
                self.state = ConnState::ClosedFinal;
                self.in_flight = None;
                Vec::new()
            }
            _ => {
                self.close_requested = true;
                self.try_send(now)
            }
        }
    }

    fn try_send(&mut self, now: SimTime) -> Vec<Segment> {
        if self.in_flight.is_some() || !matches!(self.state, ConnState::Established | ConnState::FinWait) {
            return Vec::new();
        }
        if !self.send_buf.is_empty() {
            let n = self.send_buf.len().min(MSS);
            let payload: Vec<u8> = self.send_buf.drain(..n).collect();
            let seg = self.segment(self.send_next, self.recv_next, Flags::ACK, payload);
            self.send_next = self.send_next.wrapping_add(n as u32);
            self.arm(seg.clone(), now);
            return vec![seg];
        }
        if self.close_requested && !self.fin_sent {
            let seg = self.segment(self.send_next, self.recv_next, Flags::FIN | Flags::ACK, Vec::new());
            self.send_next = self.send_next.wrapping_add(1);
            self.fin_sent = true;
            self.state = ConnState::FinWait;
            self.arm(seg.clone(), now);
            return vec![seg];
        }
        Vec::new()
    }

    fn finish_if_done(&mut self) {
        if self.fin_acked && self.fin_received {
            self.state = ConnState::ClosedFinal;
        }
    }

    /// Advances the state machine with one checksum-valid segment.
    pub fn on_segment(&mut self, s: &Segment, now: SimTime) -> Vec<Segment> {
        if s.has(Flags::RST) {
            if self.is_open() {
                self.state = ConnState::ClosedFinal;
                self.in_flight = None;
                self.error = Some(ConnError::ConnectionReset);
            }
            return Vec::new();
        }
        let mut out = Vec::new();
        match self.state {
            ConnState::Closed => {
                self.stats.ignored += 1;
                return out;
            }
            ConnState::ClosedFinal => {
                // Peer missed our last ACK and repeats its FIN.
                if s.has(Flags::FIN) && s.seq.wrapping_add(s.seq_len()) == self.recv_next {
                    out.push(self.ack_segment());
                } else {
                    self.stats.ignored += 1;
                }
                return out;
            }
            ConnState::SynSent => {
                if s.has(Flags::SYN) && s.has(Flags::ACK) && s.ack == self.send_next {
                    self.recv_next = s.seq.wrapping_add(1);
                    self.in_flight = None;
                    self.rto = INITIAL_RTO;
                    self.state = ConnState::Established;
                    out.push(self.ack_segment());
                    out.extend(self.try_send(now));
                } else {
                    self.stats.ignored += 1;
                }
                return out;
            }
            ConnState::SynRcvd => {
                if s.has(Flags::SYN) && !s.has(Flags::ACK) {
                    if s.seq.wrapping_add(1) == self.recv_next {
                        if let Some(f) = &self.in_flight {
                            self.stats.segments_sent += 1;
                            out.push(f.seg.clone());
                        }
                    } else {
                        self.stats.ignored += 1;
                    }
                    return out;
                }
                if s.has(Flags::ACK) && s.ack == self.send_next {
                    self.in_flight = None;
                    self.rto = INITIAL_RTO;
                    self.state = ConnState::Established;
                } else {
                    self.stats.ignored += 1;
                    return out;
                }
            }
            ConnState::Established | ConnState::FinWait => {}
        }

        // Acknowledgement of our single outstanding segment.
        if s.has(Flags::ACK) {
            let acked = self.in_flight.as_ref().is_some_and(|f| s.ack == self.send_next && !f.seg.has(Flags::SYN));
            if acked {
                let f = self.in_flight.take().expect("in flight");
                self.acked_bytes += f.seg.payload.len() as u64;
                if f.seg.has(Flags::FIN) {
                    self.fin_acked = true;
                }
                self.rto = INITIAL_RTO;
            } else if s.payload.is_empty() && !s.has(Flags::FIN) && !s.has(Flags::SYN) {
                self.stats.duplicate_acks += 1;
            }
        }

        if s.has(Flags::SYN) {
            // Retransmitted SYN+ACK: our ACK was lost.
            if s.seq.wrapping_add(1) == self.recv_next {
                out.push(self.ack_segment());
            } else {
                self.stats.ignored += 1;
            }
        } else if !s.payload.is_empty() || s.has(Flags::FIN) {
            if s.seq == self.recv_next && !self.fin_received {
                self.recv_buf.extend_from_slice(&s.payload);
                self.recv_next = self.recv_next.wrapping_add(s.payload.len() as u32);
                if s.has(Flags::FIN) {
                    self.recv_next = self.recv_next.wrapping_add(1);
                    self.fin_received = true;
                    self.close_requested = true;
                    self.state = ConnState::FinWait;
                }
            } else {
                self.stats.out_of_window += 1;
            }
            out.push(self.ack_segment());
        }

        out.extend(self.try_send(now));
        self.finish_if_done();
        out
    }

    /// Retransmits the outstanding segment if its deadline has passed.
    pub fn on_timer(&mut self, now: SimTime) -> Result<Vec<Segment>, ConnError> {
        let limit = match self.state {
            ConnState::SynSent | ConnState::SynRcvd => MAX_SYN_RETRIES,
            _ => MAX_DATA_RETRIES,
        };
        let Some(f) = self.in_flight.as_mut() else {
            return Ok(Vec::new());
        };
        if f.deadline > now {
            return Ok(Vec::new());
        }
        if f.retries >= limit {
            self.in_flight = None;
            self.state = ConnState::ClosedFinal;
            self.error = Some(ConnError::Timeout);
            return Err(ConnError::Timeout);
        }
        f.retries += 1;
        self.rto = (self.rto + self.rto).min(MAX_RTO);
        f.deadline = now + self.rto;
        f.seg.ack = self.recv_next;
        self.stats.segments_sent += 1;
        self.stats.retransmissions += 1;
        Ok(vec![f.seg.clone()])
    }
}
