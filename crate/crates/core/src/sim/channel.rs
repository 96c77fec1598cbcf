use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use super::topology::Topology;
use crate::net::LinkAddr;
use crate::time::{SimDuration, SimTime};

/// 250 kbit/s.
pub const AIRTIME_PER_BYTE: SimDuration = SimDuration::from_micros(32);

pub fn airtime(frame_bytes: usize) -> SimDuration {
    SimDuration(AIRTIME_PER_BYTE.0 * frame_bytes as u64)
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ChannelError {
    #[error("no link {0}-{1}")]
    NoSuchLink(LinkAddr, LinkAddr),
}

/// Outcome for one receiver of a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reception {
    pub to: LinkAddr,
    /// `None` when the frame was lost.
    pub at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub start: SimTime,
    pub end: SimTime,
    pub receptions: Vec<Reception>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    pub transmissions: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub total_wait_us: u64,
}

impl ChannelStats {
    pub fn mean_wait_us(&self) -> f64 {
        if self.transmissions == 0 { 0.0 } else { self.total_wait_us as f64 / self.transmissions as f64 }
    }
}

/// Shared medium with per-neighbourhood FIFO deferral.
///
/// A transmission by `a` starts at `max(now, busy_until[a])` and pushes
/// `busy_until` of `a` and all its neighbours past its end, so frames from
/// mutually adjacent transmitters never overlap.
#[derive(Debug, Clone)]
pub struct Channel {
    topo: Topology,
    busy_until: BTreeMap<LinkAddr, SimTime>,
    pub stats: ChannelStats,
}

impl Channel {
    pub fn new(topo: Topology) -> Self {
        Channel { topo, busy_until: BTreeMap::new(), stats: ChannelStats::default() }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topo
    }

    pub fn busy_until(&self, a: LinkAddr) -> SimTime {
        self.busy_until.get(&a).copied().unwrap_or(SimTime::ZERO)
    }

    /// Reserves air time for a frame of `frame_bytes` from `a` to `dst`
    /// (`None` broadcasts to every neighbour) and draws losses from `rng`.
    pub fn transmit(
        &mut self,
        a: LinkAddr,
        dst: Option<LinkAddr>,
        frame_bytes: usize,
        now: SimTime,
        rng: &mut impl Rng,
    ) -> Result<Transmission, ChannelError> {
        let targets: Vec<(LinkAddr, _)> = match dst {
            Some(b) => vec![(b, self.topo.link(a, b).ok_or(ChannelError::NoSuchLink(a, b))?)],
            None => self.topo.neighbors(a).into_iter().map(|b| (b, self.topo.link(a, b).expect("neighbour"))).collect(),
        };
        let start = now.max(self.busy_until(a));
        let end = start + airtime(frame_bytes);
        for n in self.topo.neighbors(a).into_iter().chain([a]) {
            let e = self.busy_until.entry(n).or_insert(SimTime::ZERO);
            *e = (*e).max(end);
        }
        self.stats.transmissions += 1;
        self.stats.total_wait_us += (start - now).0;
        let receptions = targets
            .into_iter()
            .map(|(to, p)| {
                let lost = p.loss > 0.0 && rng.random_bool(p.loss);
                if lost {
                    self.stats.dropped += 1;
                    Reception { to, at: None }
                } else {
                    self.stats.delivered += 1;
                    Reception { to, at: Some(end + p.latency) }
                }
            })
            .collect();
        Ok(Transmission { start, end, receptions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::topology::LinkParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LAT: SimDuration = SimDuration::from_millis(2);
    const P: LinkParams = LinkParams { latency: LAT, loss: 0.0 };

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn idle_full_frame_formula() {
        let mut ch = Channel::new(Topology::line(1, P));
        let t = SimTime::from_millis(5);
        let tx = ch.transmit(0, Some(1), 127, t, &mut rng()).unwrap();
        assert_eq!(tx.receptions[0].at, Some(SimTime(5_000 + 2_000 + 127 * 32)));
    }

    #[test]
    fn certain_loss_always_drops() {
        let mut ch = Channel::new(Topology::line(1, LinkParams { latency: LAT, loss: 1.0 }));
        let mut r = rng();
        for i in 0..100 {
            let tx = ch.transmit(0, Some(1), 20, SimTime(i * 10_000), &mut r).unwrap();
            assert_eq!(tx.receptions[0].at, None);
        }
        assert_eq!(ch.stats.dropped, 100);
    }

    #[test]
    fn simultaneous_neighbours_defer_by_airtime() {
        let mut ch = Channel::new(Topology::cluster(2, P));
        let mut r = rng();
        let a = ch.transmit(1, Some(0), 50, SimTime::ZERO, &mut r).unwrap();
        let b = ch.transmit(2, Some(0), 80, SimTime::ZERO, &mut r).unwrap();
        assert_eq!(a.receptions[0].at, Some(SimTime(50 * 32 + 2_000)));
        assert_eq!(b.start, SimTime(50 * 32));
        // Idle delivery would be 80*32 + latency; it is pushed back by the first frame.
        assert_eq!(b.receptions[0].at, Some(SimTime(80 * 32 + 2_000 + 50 * 32)));
    }

    #[test]
    fn non_adjacent_transmitters_do_not_defer() {
        let mut ch = Channel::new(Topology::line(3, P));
        let mut r = rng();
        ch.transmit(0, Some(1), 50, SimTime::ZERO, &mut r).unwrap();
        let far = ch.transmit(3, Some(2), 50, SimTime::ZERO, &mut r).unwrap();
        assert_eq!(far.start, SimTime::ZERO);
    }

    #[test]
    fn unicast_without_link_fails() {
        let mut ch = Channel::new(Topology::line(3, P));
        assert_eq!(ch.transmit(0, Some(3), 10, SimTime::ZERO, &mut rng()), Err(ChannelError::NoSuchLink(0, 3)));
    }

    #[test]
    fn every_reception_is_delivered_or_dropped_once() {
        let mut ch = Channel::new(Topology::cluster(5, LinkParams { latency: LAT, loss: 0.3 }));
        let mut r = rng();
        let mut receptions = 0;
        for i in 0..500u64 {
            let src = (i % 6) as LinkAddr;
            let dst = if i % 3 == 0 { None } else { Some(((i + 1) % 6) as LinkAddr) };
            receptions += ch.transmit(src, dst, 40, SimTime(i * 700), &mut r).unwrap().receptions.len() as u64;
        }
        assert_eq!(ch.stats.delivered + ch.stats.dropped, receptions);
    }

    /// Poisson offered load on a clique: mean wait must not fall as load rises.
    #[test]
    fn mean_wait_nondecreasing_in_load() {
        let mut last = 0.0;
        for rate_per_s in [5.0, 20.0, 50.0, 100.0, 150.0, 200.0] {
            let mut ch = Channel::new(Topology::cluster(6, P));
            let mut r = ChaCha8Rng::seed_from_u64(42);
            let mut t = 0.0f64;
            for _ in 0..20_000 {
                t += -(1.0 - r.random::<f64>()).ln() / rate_per_s * 1e6;
                let src = r.random_range(1..=6);
                ch.transmit(src, Some(0), 60, SimTime(t as u64), &mut r).unwrap();
            }
            let w = ch.stats.mean_wait_us();
            assert!(w >= last, "rate {rate_per_s}: {w} < {last}");
            last = w;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn adjacent_frames_never_overlap() {
        let topo = Topology::random_connected(8, 0.3, P, 3);
        let mut ch = Channel::new(topo.clone());
        let mut r = rng();
        let mut spans: Vec<(LinkAddr, SimTime, SimTime)> = Vec::new();
        for i in 0..400u64 {
            let src = r.random_range(0..=8);
            let tx = ch.transmit(src, None, r.random_range(10..127), SimTime(i * 300), &mut r).unwrap();
            spans.push((src, tx.start, tx.end));
        }
        for (i, &(a, s1, e1)) in spans.iter().enumerate() {
            for &(b, s2, e2) in &spans[i + 1..] {
                if a == b || topo.link(a, b).is_some() {
                    assert!(e1 <= s2 || e2 <= s1, "{a}:{s1}-{e1} overlaps {b}:{s2}-{e2}");
                }
            }
        }
    }
}
