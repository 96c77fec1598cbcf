//! Deterministic discrete-event simulation of the radio mesh.

pub mod channel;
pub mod queue;
pub mod topology;
pub mod world;

pub use channel::{airtime, Channel, ChannelError, ChannelStats, Reception, Transmission, AIRTIME_PER_BYTE};
pub use queue::EventQueue;
pub use topology::{LinkParams, Topology, TopologyError, SINK};
pub use world::{CommandOutcome, CommandResult, DelaySample, NodeStats, World, WorldError, WorldOptions, WorldStats};
