//! Hardware-free testbed for a sensor mesh bridged to an IPv4 network.
//!
//! Simulated motes speak IPv6 over a 6LoWPAN-style adaptation layer and
//! route with AODV. A sink tunnels their traffic over a serial link to a
//! gateway that translates statelessly between IPv4 and IPv6, terminates
//! telemetry connections and buffers readings while the middleware is
//! unreachable.

pub mod addrmap;
pub mod aodv;
pub mod config;
pub mod experiments;
pub mod gateway;
pub mod mote;
pub mod net;
pub mod reading;
pub mod sim;
pub mod sink;
pub mod sixlowpan;
pub mod stats;
pub mod sweep;
pub mod time;
pub mod transport;

pub use time::{SimDuration, SimTime};
