//! Process plumbing around the core library: HTTP delivery to the
//! middleware, the live paced simulation, the standalone gateway process and
//! report plots.

pub mod delivery;
pub mod live;
pub mod plot;
pub mod standalone;
