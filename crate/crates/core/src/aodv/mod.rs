//! On-demand distance-vector routing over link addresses.
//!
//! Route requests flood once per `(originator, id)`; only the destination
//! answers. Routes through a neighbour are dropped when a unicast to it
//! fails, and route errors are broadcast to the neighbourhood.

mod msg;
mod router;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use msg::{Control, ControlError, Rerr, Rrep, Rreq, RREP_LEN, RREQ_LEN};
pub use router::{Action, RouteEntry, Router, RouterStats};

use crate::net::LinkAddr;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AodvParams {
    pub route_lifetime_ms: u64,
    pub rreq_record_ms: u64,
    /// Discovery rounds before the destination is declared unreachable.
    pub rreq_retries: u32,
    pub rreq_hop_limit: u8,
    /// Wait after the first round; it doubles for each later round.
    pub first_discovery_wait_ms: u64,
    /// Packets buffered per destination while discovery runs.
    pub pending_limit: usize,
}

impl Default for AodvParams {
    fn default() -> Self {
        crate::config::Config::defaults().aodv
    }
}

/// Walks next-hop pointers in a global snapshot of routing tables and
/// returns the first cycle found as `(dest, path)`.
pub fn find_loop(
    tables: &BTreeMap<LinkAddr, BTreeMap<LinkAddr, RouteEntry>>,
    now: SimTime,
) -> Option<(LinkAddr, Vec<LinkAddr>)> {
    let dests: BTreeSet<LinkAddr> = tables.values().flat_map(|t| t.keys().copied()).collect();
    for &dest in &dests {
        for &start in tables.keys() {
            let mut path = vec![start];
            let mut seen = BTreeSet::from([start]);
            let mut at = start;
            while at != dest {
                let Some(e) = tables.get(&at).and_then(|t| t.get(&dest)).filter(|e| e.usable(now)) else { break };
                at = e.next_hop;
                path.push(at);
                if !seen.insert(at) {
                    return Some((dest, path));
                }
            }
        }
    }
    None
}
