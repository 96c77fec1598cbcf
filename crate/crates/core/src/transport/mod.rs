//! Mini-TCP: a stop-and-wait, connection-oriented transport.
//!
//! One segment is in flight at a time and data segments carry at most
//! [`MSS`] bytes. Retransmission starts at one second and doubles up to
//! eight. Connections and the socket table are sans-IO: they consume
//! segments plus the current time and return segments to transmit.

mod connection;
mod endpoint;
mod segment;

pub use connection::{ConnError, ConnState, ConnStats, Connection};
pub use endpoint::{ConnKey, Endpoint, Outgoing, SocketEvent};
pub use segment::{rewrite_checksum, Flags, Segment, SegmentError, SEGMENT_HEADER_LEN};

use crate::time::SimDuration;

/// Largest payload carried by one data segment.
pub const MSS: usize = 64;
pub const INITIAL_RTO: SimDuration = SimDuration::from_secs(1);
pub const MAX_RTO: SimDuration = SimDuration::from_secs(8);
/// SYN / SYN+ACK retransmissions before a connection attempt fails.
pub const MAX_SYN_RETRIES: u32 = 5;
/// Data / FIN retransmissions before an established connection is aborted.
pub const MAX_DATA_RETRIES: u32 = 8;

/// Mote command server port.
pub const COMMAND_PORT: u16 = 7000;
/// Gateway telemetry server port.
pub const TELEMETRY_PORT: u16 = 7001;
