use std::net::Ipv6Addr;

use super::{LowpanError, DISPATCH_COMPRESSED, DISPATCH_IPV6};
use crate::net::{Ipv6Packet, IPV6_HEADER_LEN};

const SRC_ELIDED: u8 = 0b01;
const DST_ELIDED: u8 = 0b10;

fn on_prefix(a: Ipv6Addr, prefix: Ipv6Addr) -> bool {
    u128::from(a) & !0xFFFF == u128::from(prefix) & !0xFFFF
}

/// Prefix-elision compression.
///
/// When either address sits under `mesh_prefix` the datagram is sent as
/// `0x42` followed by the IPv6 header with each such address shortened to its
/// 16-bit suffix. The elision flags ride in the low two bits of the first
/// header byte (the traffic-class bits, always zero in this system).
/// Otherwise the output is `0x41` followed by the plain encoding.
pub fn compress(p: &Ipv6Packet, mesh_prefix: Ipv6Addr) -> Result<Vec<u8>, LowpanError> {
    let encoded = p.encode()?;
    let mut flags = 0;
    if on_prefix(p.src, mesh_prefix) {
        flags |= SRC_ELIDED;
    }
    if on_prefix(p.dst, mesh_prefix) {
        flags |= DST_ELIDED;
    }
    let mut out = Vec::with_capacity(encoded.len() + 1);
    if flags == 0 {
        out.push(DISPATCH_IPV6);
        out.extend_from_slice(&encoded);
        return Ok(out);
    }
    out.push(DISPATCH_COMPRESSED);
    out.push(encoded[0] | flags);
    out.extend_from_slice(&encoded[1..8]);
    if flags & SRC_ELIDED != 0 {
        out.extend_from_slice(&encoded[22..24]);
    } else {
        out.extend_from_slice(&encoded[8..24]);
    }
    if flags & DST_ELIDED != 0 {
        out.extend_from_slice(&encoded[38..40]);
    } else {
        out.extend_from_slice(&encoded[24..40]);
    }
    out.extend_from_slice(&encoded[IPV6_HEADER_LEN..]);
    Ok(out)
}

/// Inverse of [`compress`] under the same prefix.
pub fn decompress(b: &[u8], mesh_prefix: Ipv6Addr) -> Result<Ipv6Packet, LowpanError> {
    match b.first() {
        Some(&DISPATCH_IPV6) => Ok(Ipv6Packet::decode(&b[1..])?),
        Some(&DISPATCH_COMPRESSED) => {
            if b.len() < 9 {
                return Err(LowpanError::Malformed("compressed header truncated"));
            }
            let flags = b[1] & 0b11;
            let mut pos = 9;
            let mut take = |elided: bool| -> Result<[u8; 16], LowpanError> {
                let mut addr = [0u8; 16];
                if elided {
                    let s = b.get(pos..pos + 2).ok_or(LowpanError::Malformed("address truncated"))?;
                    addr.copy_from_slice(&mesh_prefix.octets());
                    addr[14..].copy_from_slice(s);
                    pos += 2;
                } else {
                    let s = b.get(pos..pos + 16).ok_or(LowpanError::Malformed("address truncated"))?;
                    addr.copy_from_slice(s);
                    pos += 16;
                }
                Ok(addr)
            };
            let src = take(flags & SRC_ELIDED != 0)?;
            let dst = take(flags & DST_ELIDED != 0)?;
            let mut full = Vec::with_capacity(b.len() + 32);
            full.push(b[1] & !0b11);
            full.extend_from_slice(&b[2..9]);
            full.extend_from_slice(&src);
            full.extend_from_slice(&dst);
            full.extend_from_slice(&b[pos..]);
            Ok(Ipv6Packet::decode(&full)?)
        }
        Some(&d) => Err(LowpanError::MalformedDispatch(d)),
        None => Err(LowpanError::Malformed("empty payload")),
    }
}
