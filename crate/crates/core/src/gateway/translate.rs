use thiserror::Error;

use crate::addrmap::{AddrMapError, AddressMapConfig};
use crate::net::checksum::PseudoHeader;
use crate::net::{Ipv4Packet, Ipv6Packet, MINI_TCP_PROTOCOL};
use crate::transport::{rewrite_checksum, Segment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranslateError {
    #[error(transparent)]
    Address(#[from] AddrMapError),
    #[error("protocol {0} is not translated")]
    UnsupportedProtocol(u8),
    #[error("transport checksum invalid before translation")]
    BadTransportChecksum,
    #[error("transport segment truncated")]
    Truncated,
}

fn check_and_rewrite(payload: &[u8], old: &PseudoHeader, new: &PseudoHeader) -> Result<Vec<u8>, TranslateError> {
    Segment::decode(payload, old).map_err(|e| match e {
        crate::transport::SegmentError::Truncated => TranslateError::Truncated,
        crate::transport::SegmentError::BadChecksum => TranslateError::BadTransportChecksum,
    })?;
    let mut out = payload.to_vec();
    rewrite_checksum(&mut out, new).map_err(|_| TranslateError::Truncated)?;
    Ok(out)
}

/// External IPv4 host to mote. The segment checksum is verified under the
/// IPv4 pseudo-header and recomputed for IPv6; other bytes are untouched.
pub fn translate_4to6(p: &Ipv4Packet, cfg: &AddressMapConfig) -> Result<Ipv6Packet, TranslateError> {
    if p.protocol != MINI_TCP_PROTOCOL {
        return Err(TranslateError::UnsupportedProtocol(p.protocol));
    }
    let dst = cfg.virtual4_to_mote6(p.dst)?;
    let src = cfg.host4_to_virtual6(p.src);
    let old = PseudoHeader::V4 { src: p.src, dst: p.dst, protocol: p.protocol };
    let new = PseudoHeader::V6 { src, dst, next_header: MINI_TCP_PROTOCOL };
    let payload = check_and_rewrite(&p.payload, &old, &new)?;
    Ok(Ipv6Packet { src, dst, next_header: MINI_TCP_PROTOCOL, hop_limit: p.ttl, payload })
}

/// Mote to external IPv4 host; the mirror of [`translate_4to6`].
pub fn translate_6to4(p: &Ipv6Packet, cfg: &AddressMapConfig) -> Result<Ipv4Packet, TranslateError> {
    if p.next_header != MINI_TCP_PROTOCOL {
        return Err(TranslateError::UnsupportedProtocol(p.next_header));
    }
    let dst = cfg.virtual6_to_host4(p.dst)?;
    let src = cfg.mote6_to_virtual4(p.src)?;
    let old = PseudoHeader::V6 { src: p.src, dst: p.dst, next_header: p.next_header };
    let new = PseudoHeader::V4 { src, dst, protocol: MINI_TCP_PROTOCOL };
    let payload = check_and_rewrite(&p.payload, &old, &new)?;
    Ok(Ipv4Packet::new(src, dst, MINI_TCP_PROTOCOL, p.hop_limit, payload))
}
