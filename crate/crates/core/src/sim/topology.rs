use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::LinkAddr;
use crate::time::SimDuration;

/// Link address of the sink.
pub const SINK: LinkAddr = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub latency: SimDuration,
    pub loss: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("link {0}-{1}: loss probability {2} outside [0, 1]")]
    BadLoss(LinkAddr, LinkAddr, f64),
    #[error("link {0}-{1}: base latency must be positive")]
    ZeroLatency(LinkAddr, LinkAddr),
    #[error("link {0}-{0} is a self-loop")]
    SelfLoop(LinkAddr),
    #[error("link {0}-{1} references an unknown node")]
    UnknownNode(LinkAddr, LinkAddr),
}

/// Undirected radio graph. Node 0 is the sink, motes are `1..=motes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: BTreeSet<LinkAddr>,
    links: BTreeMap<(LinkAddr, LinkAddr), LinkParams>,
}

fn key(a: LinkAddr, b: LinkAddr) -> (LinkAddr, LinkAddr) {
    (a.min(b), a.max(b))
}

impl Topology {
    pub fn empty(motes: u16) -> Self {
        Topology { nodes: (0..=motes).collect(), links: BTreeMap::new() }
    }

    pub fn add_link(&mut self, a: LinkAddr, b: LinkAddr, p: LinkParams) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        if !self.nodes.contains(&a) || !self.nodes.contains(&b) {
            return Err(TopologyError::UnknownNode(a, b));
        }
        if !(0.0..=1.0).contains(&p.loss) || p.loss.is_nan() {
            return Err(TopologyError::BadLoss(a, b, p.loss));
        }
        if p.latency == SimDuration::ZERO {
            return Err(TopologyError::ZeroLatency(a, b));
        }
        self.links.insert(key(a, b), p);
        Ok(())
    }

    pub fn remove_link(&mut self, a: LinkAddr, b: LinkAddr) -> Option<LinkParams> {
        self.links.remove(&key(a, b))
    }

    pub fn link(&self, a: LinkAddr, b: LinkAddr) -> Option<LinkParams> {
        self.links.get(&key(a, b)).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = LinkAddr> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> impl Iterator<Item = (LinkAddr, LinkAddr, LinkParams)> + '_ {
        self.links.iter().map(|(&(a, b), &p)| (a, b, p))
    }

    pub fn neighbors(&self, a: LinkAddr) -> Vec<LinkAddr> {
        self.links
            .keys()
            .filter_map(|&(x, y)| if x == a { Some(y) } else if y == a { Some(x) } else { None })
            .collect()
    }

    /// Hop distances from `src`; unreachable nodes are absent.
    pub fn bfs(&self, src: LinkAddr) -> BTreeMap<LinkAddr, u32> {
        let mut dist = BTreeMap::from([(src, 0)]);
        let mut q = VecDeque::from([src]);
        while let Some(n) = q.pop_front() {
            let d = dist[&n];
            for m in self.neighbors(n) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(m) {
                    e.insert(d + 1);
                    q.push_back(m);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.nodes.first().is_none_or(|&s| self.bfs(s).len() == self.nodes.len())
    }

    pub fn line(motes: u16, p: LinkParams) -> Self {
        let mut t = Self::empty(motes);
        for i in 0..motes {
            t.add_link(i, i + 1, p).expect("valid line link");
        }
        t
    }

    /// Every mote one hop from the sink and from each other.
    pub fn cluster(motes: u16, p: LinkParams) -> Self {
        let mut t = Self::empty(motes);
        for a in 0..=motes {
            for b in a + 1..=motes {
                t.add_link(a, b, p).expect("valid cluster link");
            }
        }
        t
    }

    /// Every mote one hop from the sink; motes do not hear each other.
    pub fn star(motes: u16, p: LinkParams) -> Self {
        let mut t = Self::empty(motes);
        for m in 1..=motes {
            t.add_link(0, m, p).expect("valid star link");
        }
        t
    }

    /// Random connected graph: a random spanning tree plus extra edges
    /// each present with probability `density`.
    pub fn random_connected(motes: u16, density: f64, p: LinkParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Self::empty(motes);
        for n in 1..=motes {
            let parent = rng.random_range(0..n);
            t.add_link(parent, n, p).expect("valid tree link");
        }
        for a in 0..=motes {
            for b in a + 1..=motes {
                if t.link(a, b).is_none() && rng.random_bool(density.clamp(0.0, 1.0)) {
                    t.add_link(a, b, p).expect("valid extra link");
                }
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: LinkParams = LinkParams { latency: SimDuration::from_millis(1), loss: 0.0 };

    #[test]
    fn adjacency_is_symmetric() {
        let t = Topology::line(3, P);
        assert!(t.link(1, 2).is_some() && t.link(2, 1).is_some());
        assert_eq!(t.neighbors(1), vec![0, 2]);
    }

    #[test]
    fn rejects_invalid_links() {
        let mut t = Topology::empty(2);
        assert_eq!(t.add_link(1, 1, P), Err(TopologyError::SelfLoop(1)));
        assert!(matches!(t.add_link(0, 1, LinkParams { loss: 1.5, ..P }), Err(TopologyError::BadLoss(..))));
        assert_eq!(
            t.add_link(0, 1, LinkParams { latency: SimDuration::ZERO, loss: 0.0 }),
            Err(TopologyError::ZeroLatency(0, 1))
        );
        assert_eq!(t.add_link(0, 9, P), Err(TopologyError::UnknownNode(0, 9)));
    }

    #[test]
    fn line_distances() {
        let t = Topology::line(7, P);
        assert_eq!(t.bfs(1)[&7], 6);
        assert!(t.is_connected());
    }

    #[test]
    fn random_graphs_are_connected() {
        for seed in 0..200 {
            assert!(Topology::random_connected(9, 0.2, P, seed).is_connected());
        }
    }
}
