//! The gateway as its own process: the serial tunnel arrives over a TCP
//! stream (e.g. from a serial-to-network bridge) and the IPv4 side is raw
//! packets carried in UDP datagrams.

use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use meshgate_core::config::Config;
use meshgate_core::gateway::{DurableBuffer, Gateway, GatewayOutput, GatewayParams, GatewayStats, ReadingDelivery};
use meshgate_core::net::Ipv4Packet;
use meshgate_core::SimTime;

pub struct GatewayOptions {
    pub serial: SocketAddr,
    pub listen: SocketAddr,
    pub buffer: PathBuf,
}

struct Io {
    serial: TcpStream,
    udp: UdpSocket,
    peers: HashMap<Ipv4Addr, SocketAddr>,
    unroutable: u64,
}

impl Io {
    fn emit(&mut self, out: GatewayOutput) -> std::io::Result<()> {
        if !out.serial.is_empty() {
            self.serial.write_all(&out.serial)?;
        }
        for p in out.external {
            match (self.peers.get(&p.dst), p.encode()) {
                (Some(peer), Ok(bytes)) => {
                    self.udp.send_to(&bytes, peer)?;
                }
                _ => self.unroutable += 1,
            }
        }
        Ok(())
    }
}

fn idle(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

/// Pumps both directions until `stop` returns true or the serial stream
/// closes. Replies go to the UDP peer that last sent from the destination
/// address.
pub fn run(
    cfg: &Config,
    opts: &GatewayOptions,
    delivery: Box<dyn ReadingDelivery>,
    stop: impl Fn() -> bool,
) -> std::io::Result<GatewayStats> {
    let serial = TcpStream::connect(opts.serial)?;
    serial.set_read_timeout(Some(Duration::from_millis(5)))?;
    let udp = UdpSocket::bind(opts.listen)?;
    udp.set_nonblocking(true)?;
    let mut io = Io { serial, udp, peers: HashMap::new(), unroutable: 0 };
    let mut gw = Gateway::new(GatewayParams::from_config(cfg), DurableBuffer::open(&opts.buffer)?, delivery);
    let started = Instant::now();
    let mut buf = vec![0u8; 65536];
    while !stop() {
        let now = || SimTime(started.elapsed().as_micros() as u64);
        match io.serial.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let out = gw.on_serial(&buf[..n], now());
                io.emit(out)?;
            }
            Err(e) if idle(&e) => {}
            Err(e) => return Err(e),
        }
        loop {
            match io.udp.recv_from(&mut buf) {
                Ok((n, peer)) => {
                    if let Ok(p) = Ipv4Packet::decode(&buf[..n]) {
                        io.peers.insert(p.src, peer);
                    }
                    let out = gw.on_external(&buf[..n], now());
                    io.emit(out)?;
                }
                Err(e) if idle(&e) => break,
                Err(e) => return Err(e),
            }
        }
        if gw.next_deadline().is_some_and(|d| d <= now()) {
            let out = gw.poll(now());
            io.emit(out)?;
        }
    }
    if io.unroutable > 0 {
        tracing::warn!(count = io.unroutable, "packets for unknown IPv4 peers dropped");
    }
    Ok(gw.stats)
}
