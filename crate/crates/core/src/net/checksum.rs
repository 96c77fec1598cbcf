//! Internet ones-complement checksum helpers.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

/// Adds `data` as big-endian 16-bit words into a 32-bit accumulator. An odd
/// trailing byte is padded with zero.
pub fn accumulate(mut acc: u32, data: &[u8]) -> u32 {
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        acc = acc.wrapping_add(u32::from(u16::from_be_bytes([c[0], c[1]])));
    }
    if let [last] = chunks.remainder() {
        acc = acc.wrapping_add(u32::from(*last) << 8);
    }
    acc
}

/// Folds carries back into 16 bits.
pub fn fold(mut acc: u32) -> u16 {
    while acc > 0xFFFF {
        acc = (acc & 0xFFFF) + (acc >> 16);
    }
    acc as u16
}

/// Ones-complement of the folded sum.
pub fn finish(acc: u32) -> u16 {
    !fold(acc)
}

/// IPv4 header checksum over a header whose checksum field is zeroed.
pub fn ipv4_header_checksum(header: &[u8]) -> u16 {
    finish(accumulate(0, header))
}

/// Upper-layer pseudo-header, one per IP family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoHeader {
    V4 { src: Ipv4Addr, dst: Ipv4Addr, protocol: u8 },
    V6 { src: Ipv6Addr, dst: Ipv6Addr, next_header: u8 },
}

impl PseudoHeader {
    /// Pseudo-header for two addresses of the same family.
    pub fn for_addrs(src: IpAddr, dst: IpAddr, protocol: u8) -> Option<PseudoHeader> {
        match (src, dst) {
            (IpAddr::V4(src), IpAddr::V4(dst)) => Some(PseudoHeader::V4 { src, dst, protocol }),
            (IpAddr::V6(src), IpAddr::V6(dst)) => Some(PseudoHeader::V6 { src, dst, next_header: protocol }),
            _ => None,
        }
    }

    /// Partial sum of the pseudo-header for an upper-layer body of `len` bytes.
    pub fn sum(&self, len: usize) -> u32 {
        match *self {
            PseudoHeader::V4 { src, dst, protocol } => {
                let mut acc = accumulate(0, &src.octets());
                acc = accumulate(acc, &dst.octets());
                acc = accumulate(acc, &[0, protocol]);
                accumulate(acc, &(len as u16).to_be_bytes())
            }
            PseudoHeader::V6 { src, dst, next_header } => {
                let mut acc = accumulate(0, &src.octets());
                acc = accumulate(acc, &dst.octets());
                acc = accumulate(acc, &(len as u32).to_be_bytes());
                accumulate(acc, &[0, 0, 0, next_header])
            }
        }
    }

    /// Checksum of `body` (with its checksum field zeroed) under this pseudo-header.
    pub fn checksum(&self, body: &[u8]) -> u16 {
        finish(accumulate(self.sum(body.len()), body))
    }

    /// True when `body`, checksum field included, sums to 0xFFFF.
    pub fn verify(&self, body: &[u8]) -> bool {
        fold(accumulate(self.sum(body.len()), body)) == 0xFFFF
    }
}
