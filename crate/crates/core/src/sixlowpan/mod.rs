//! Adaptation of IPv6 datagrams (up to 1280 bytes) to 121-byte link payloads.
//!
//! Dispatch bytes:
//!
//! | first byte        | meaning                                  |
//! |-------------------|------------------------------------------|
//! | `0x41`            | uncompressed IPv6 follows                |
//! | `0x42`            | prefix-compressed IPv6 follows           |
//! | `0xC0 \| size_hi` | first fragment (4-byte header)           |
//! | `0xE0 \| size_hi` | subsequent fragment (5-byte header)      |
//!
//! Fragment bodies always carry the uncompressed IPv6 encoding.

mod compress;
mod frag;
mod reassembly;

pub use compress::{compress, decompress};
pub use frag::{fragment, FragmentHeader, FragmentKind, TagAllocator};
pub use reassembly::{ReassemblyBuffer, REASSEMBLY_TIMEOUT};

use std::net::Ipv6Addr;

use thiserror::Error;

use crate::net::{Ipv6Packet, NetError, LINK_PAYLOAD_MAX};

pub const DISPATCH_IPV6: u8 = 0x41;
pub const DISPATCH_COMPRESSED: u8 = 0x42;
pub const DISPATCH_FRAG1: u8 = 0xC0;
pub const DISPATCH_FRAGN: u8 = 0xE0;

/// Payload budget available to the adaptation layer in one link frame.
pub const LINK_BUDGET: usize = LINK_PAYLOAD_MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowpanError {
    #[error("datagram of {0} bytes exceeds 1280")]
    DatagramTooLarge(usize),
    #[error("fragment belongs to a completed or expired datagram")]
    StaleFragment,
    #[error("unknown dispatch byte {0:#04x}")]
    MalformedDispatch(u8),
    #[error("malformed 6LoWPAN payload: {0}")]
    Malformed(&'static str),
    #[error("fragment overlaps earlier data with different bytes")]
    ConflictingFragment,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Encodes `p` for one hop: a single compressed payload when it fits,
/// otherwise uncompressed fragments.
pub fn encode_for_link(
    p: &Ipv6Packet,
    mesh_prefix: Ipv6Addr,
    tags: &mut TagAllocator,
) -> Result<Vec<Vec<u8>>, LowpanError> {
    if p.encoded_len() > crate::net::IPV6_MTU {
        return Err(LowpanError::DatagramTooLarge(p.encoded_len()));
    }
    let compressed = compress(p, mesh_prefix)?;
    if compressed.len() <= LINK_BUDGET {
        return Ok(vec![compressed]);
    }
    fragment(p, LINK_BUDGET, tags)
}
