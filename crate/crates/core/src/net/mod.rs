//! Wire formats shared by every layer: link frames, IPv4/IPv6 datagrams and
//! the serial tunnel framing. All multi-byte integers are big-endian.

pub mod checksum;
mod ipv4;
mod ipv6;
mod link;
pub mod serial;

pub use ipv4::{Ipv4Packet, IPV4_HEADER_LEN};
pub use ipv6::{Ipv6Packet, IPV6_HEADER_LEN, IPV6_MTU};
pub use link::{FrameType, LinkAddr, LinkFrame, BROADCAST, LINK_HEADER_LEN, LINK_MTU, LINK_PAYLOAD_MAX};
pub use serial::{SerialDecoder, SerialError};

use thiserror::Error;

/// Protocol number carried by mini-TCP segments in IPv4 `protocol` and
/// IPv6 `next_header`. Taken from the experimentation range.
pub const MINI_TCP_PROTOCOL: u8 = 253;

/// IPv6 "no next header"; used for routing probes that carry no transport.
pub const NO_NEXT_HEADER: u8 = 59;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    OversizedPayload { len: usize, max: usize },
    #[error("input of {len} bytes is shorter than the {need}-byte minimum")]
    Truncated { len: usize, need: usize },
    #[error("input of {len} bytes exceeds the {max}-byte limit")]
    Oversized { len: usize, max: usize },
    #[error("IPv4 header checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
}
