use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::msg::{Control, Rerr, Rrep, Rreq};
use super::AodvParams;
use crate::net::LinkAddr;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RouteEntry {
    pub dest: LinkAddr,
    pub next_hop: LinkAddr,
    pub hop_count: u8,
    pub dest_seq: Option<u32>,
    pub expires: SimTime,
    pub valid: bool,
}

impl RouteEntry {
    pub fn usable(&self, now: SimTime) -> bool {
        self.valid && self.expires > now
    }
}

/// What the node must do on the router's behalf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action<P> {
    Broadcast(Control),
    Unicast(LinkAddr, Control),
    Forward(LinkAddr, P),
    /// Discovery gave up; the packet is returned for accounting.
    Unreachable(LinkAddr, P),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RouterStats {
    pub rreq_sent: u64,
    pub rrep_sent: u64,
    pub rerr_sent: u64,
    pub discoveries: u64,
    pub discoveries_failed: u64,
    pub pending_dropped: u64,
}

#[derive(Debug, Clone)]
struct Discovery<P> {
    round: u32,
    deadline: SimTime,
    pending: VecDeque<P>,
}

/// `a` is strictly newer than `b` in wrapping sequence space.
fn seq_newer(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}

/// Per-node AODV state, generic over the buffered packet type.
#[derive(Debug, Clone)]
pub struct Router<P> {
    me: LinkAddr,
    params: AodvParams,
    seq: u32,
    rreq_id: u32,
    routes: BTreeMap<LinkAddr, RouteEntry>,
    seen: BTreeMap<(LinkAddr, u32), SimTime>,
    discoveries: BTreeMap<LinkAddr, Discovery<P>>,
    pub stats: RouterStats,
}

impl<P> Router<P> {
    pub fn new(me: LinkAddr, params: AodvParams) -> Self {
        Router {
            me,
            params,
            seq: 0,
            rreq_id: 0,
            routes: BTreeMap::new(),
            seen: BTreeMap::new(),
            discoveries: BTreeMap::new(),
            stats: RouterStats::default(),
        }
    }

    pub fn addr(&self) -> LinkAddr {
        self.me
    }

    pub fn own_seq(&self) -> u32 {
        self.seq
    }

    pub fn routes(&self) -> &BTreeMap<LinkAddr, RouteEntry> {
        &self.routes
    }

    pub fn route(&self, dest: LinkAddr) -> Option<&RouteEntry> {
        self.routes.get(&dest)
    }

    pub fn is_discovering(&self, dest: LinkAddr) -> bool {
        self.discoveries.contains_key(&dest)
    }

    pub fn next_hop(&self, dest: LinkAddr, now: SimTime) -> Option<LinkAddr> {
        self.routes.get(&dest).filter(|r| r.usable(now)).map(|r| r.next_hop)
    }

    fn lifetime(&self) -> SimDuration {
        SimDuration::from_millis(self.params.route_lifetime_ms)
    }

    /// Extends a live route's lifetime.
    pub fn refresh(&mut self, dest: LinkAddr, now: SimTime) {
        let until = now + self.lifetime();
        if let Some(r) = self.routes.get_mut(&dest).filter(|r| r.usable(now)) {
            r.expires = r.expires.max(until);
        }
    }

    /// Installs or improves a route; returns whether the entry changed.
    fn update_route(&mut self, dest: LinkAddr, via: LinkAddr, hops: u8, seq: Option<u32>, now: SimTime) -> bool {
        if dest == self.me {
            return false;
        }
        let expires = now + self.lifetime();
        let fresh = RouteEntry { dest, next_hop: via, hop_count: hops, dest_seq: seq, expires, valid: true };
        let Some(e) = self.routes.get_mut(&dest) else {
            self.routes.insert(dest, fresh);
            return true;
        };
        let not_stale = match (seq, e.dest_seq) {
            (Some(n), Some(o)) => !seq_newer(o, n),
            _ => true,
        };
        let accept = (!e.usable(now) && not_stale)
            || match (seq, e.dest_seq) {
                (Some(n), Some(o)) => seq_newer(n, o) || (n == o && hops < e.hop_count),
                _ => hops < e.hop_count,
            };
        if accept {
            *e = RouteEntry { dest_seq: seq.or(e.dest_seq), ..fresh };
        } else if let (Some(n), None) = (seq, e.dest_seq) {
            e.dest_seq = Some(n);
        }
        accept
    }

    /// Records a frame heard directly from neighbour `from`.
    pub fn touch_neighbor(&mut self, from: LinkAddr, now: SimTime) {
        if !self.update_route(from, from, 1, None, now) {
            self.refresh(from, now);
        }
    }

    /// Resolves a next hop for `pkt`, starting discovery when none is live.
    pub fn send(&mut self, dest: LinkAddr, pkt: P, now: SimTime) -> Vec<Action<P>> {
        if dest == self.me {
            return vec![Action::Unreachable(dest, pkt)];
        }
        if let Some(next) = self.next_hop(dest, now) {
            self.refresh(dest, now);
            self.refresh(next, now);
            return vec![Action::Forward(next, pkt)];
        }
        let limit = self.params.pending_limit;
        if let Some(d) = self.discoveries.get_mut(&dest) {
            if d.pending.len() >= limit {
                d.pending.pop_front();
                self.stats.pending_dropped += 1;
            }
            d.pending.push_back(pkt);
            return Vec::new();
        }
        self.stats.discoveries += 1;
        let rreq = self.start_round(dest, 0, now);
        self.discoveries.insert(
            dest,
            Discovery { round: 0, deadline: now + self.round_wait(0), pending: VecDeque::from([pkt]) },
        );
        vec![rreq]
    }

    fn round_wait(&self, round: u32) -> SimDuration {
        SimDuration::from_millis(self.params.first_discovery_wait_ms << round)
    }

    fn start_round(&mut self, dest: LinkAddr, _round: u32, now: SimTime) -> Action<P> {
        self.seq = self.seq.wrapping_add(1);
        self.rreq_id = self.rreq_id.wrapping_add(1);
        self.seen.insert((self.me, self.rreq_id), now + SimDuration::from_millis(self.params.rreq_record_ms));
        self.stats.rreq_sent += 1;
        Action::Broadcast(Control::Rreq(Rreq {
            hop_count: 0,
            ttl: self.params.rreq_hop_limit,
            id: self.rreq_id,
            dest,
            dest_seq: self.routes.get(&dest).and_then(|r| r.dest_seq),
            orig: self.me,
            orig_seq: self.seq,
        }))
    }

    fn flush_pending(&mut self, now: SimTime, out: &mut Vec<Action<P>>) {
        let ready: Vec<LinkAddr> =
            self.discoveries.keys().copied().filter(|d| self.next_hop(*d, now).is_some()).collect();
        for dest in ready {
            let d = self.discoveries.remove(&dest).expect("listed");
            let next = self.next_hop(dest, now).expect("usable");
            out.extend(d.pending.into_iter().map(|p| Action::Forward(next, p)));
        }
    }

    fn is_duplicate(&self, orig: LinkAddr, id: u32, now: SimTime) -> bool {
        self.seen.get(&(orig, id)).is_some_and(|&t| t > now)
    }

    /// Route to `dest` as it stood, for judging whether a message changed it.
    fn snapshot(&self, dest: LinkAddr, now: SimTime) -> Option<(LinkAddr, u8, Option<u32>)> {
        self.routes.get(&dest).filter(|e| e.usable(now)).map(|e| (e.next_hop, e.hop_count, e.dest_seq))
    }

    pub fn on_control(&mut self, msg: &Control, from: LinkAddr, now: SimTime) -> Vec<Action<P>> {
        let mut out = Vec::new();
        match msg {
            Control::Rreq(r) => {
                let before = self.snapshot(r.orig, now);
                self.touch_neighbor(from, now);
                self.on_rreq(r, from, before, now, &mut out)
            }
            Control::Rrep(r) => {
                let before = self.snapshot(r.dest, now);
                self.touch_neighbor(from, now);
                self.on_rrep(r, from, before, now, &mut out)
            }
            Control::Rerr(r) => {
                self.touch_neighbor(from, now);
                self.on_rerr(r, from, &mut out)
            }
        }
        self.flush_pending(now, &mut out);
        out
    }

    fn on_rreq(
        &mut self,
        r: &Rreq,
        from: LinkAddr,
        before: Option<(LinkAddr, u8, Option<u32>)>,
        now: SimTime,
        out: &mut Vec<Action<P>>,
    ) {
        if r.orig == self.me {
            return;
        }
        let hops = r.hop_count.saturating_add(1);
        self.update_route(r.orig, from, hops, Some(r.orig_seq), now);
        let improved = before.map(|b| (b.0, b.1)) != self.snapshot(r.orig, now).map(|a| (a.0, a.1));
        let dup = self.is_duplicate(r.orig, r.id, now);
        if !dup {
            self.seen.insert((r.orig, r.id), now + SimDuration::from_millis(self.params.rreq_record_ms));
        }
        if r.dest == self.me {
            // A duplicate that shortened the reverse path earns a fresh reply.
            if dup && !improved {
                return;
            }
            if let Some(s) = r.dest_seq.filter(|&s| seq_newer(s, self.seq)) {
                self.seq = s;
            }
            // Every reply carries a fresh number, so relays on a path that
            // already knew this destination still take and pass it on.
            self.seq = self.seq.wrapping_add(1);
            let Some(next) = self.next_hop(r.orig, now) else { return };
            let hop_count = 0;
            self.stats.rrep_sent += 1;
            out.push(Action::Unicast(
                next,
                Control::Rrep(Rrep {
                    hop_count,
                    dest: self.me,
                    dest_seq: self.seq,
                    orig: r.orig,
                    lifetime_ms: self.params.route_lifetime_ms as u32,
                }),
            ));
            return;
        }
        if dup || r.ttl <= 1 {
            return;
        }
        self.stats.rreq_sent += 1;
        out.push(Action::Broadcast(Control::Rreq(Rreq { hop_count: hops, ttl: r.ttl - 1, ..*r })));
    }

    fn on_rrep(
        &mut self,
        r: &Rrep,
        from: LinkAddr,
        before: Option<(LinkAddr, u8, Option<u32>)>,
        now: SimTime,
        out: &mut Vec<Action<P>>,
    ) {
        let hops = r.hop_count.saturating_add(1);
        self.update_route(r.dest, from, hops, Some(r.dest_seq), now);
        let after = self.snapshot(r.dest, now);
        // Relay only replies that now define the route and changed it.
        if r.orig == self.me || after != Some((from, hops, Some(r.dest_seq))) || after == before {
            return;
        }
        if let Some(next) = self.next_hop(r.orig, now) {
            self.refresh(r.orig, now);
            self.stats.rrep_sent += 1;
            out.push(Action::Unicast(next, Control::Rrep(Rrep { hop_count: hops, ..*r })));
        }
    }

    fn on_rerr(&mut self, r: &Rerr, from: LinkAddr, out: &mut Vec<Action<P>>) {
        let mut lost = Vec::new();
        for &(dest, seq) in &r.unreachable {
            if let Some(e) = self.routes.get_mut(&dest).filter(|e| e.valid && e.next_hop == from) {
                e.valid = false;
                e.dest_seq = Some(match e.dest_seq {
                    Some(o) if seq_newer(o, seq) => o,
                    _ => seq,
                });
                lost.push((dest, e.dest_seq.unwrap_or(seq)));
            }
        }
        if !lost.is_empty() {
            self.stats.rerr_sent += 1;
            out.push(Action::Broadcast(Control::Rerr(Rerr { unreachable: lost })));
        }
    }

    /// Invalidates every route through `neighbor` after a failed unicast.
    pub fn link_broken(&mut self, neighbor: LinkAddr) -> Vec<Action<P>> {
        let mut lost = Vec::new();
        for e in self.routes.values_mut().filter(|e| e.valid && e.next_hop == neighbor) {
            e.valid = false;
            e.dest_seq = e.dest_seq.map(|s| s.wrapping_add(1));
            lost.push((e.dest, e.dest_seq.unwrap_or(0)));
        }
        if lost.is_empty() {
            return Vec::new();
        }
        self.stats.rerr_sent += 1;
        vec![Action::Broadcast(Control::Rerr(Rerr { unreachable: lost }))]
    }

    /// Retries or abandons overdue discoveries.
    pub fn poll(&mut self, now: SimTime) -> Vec<Action<P>> {
        self.seen.retain(|_, t| *t > now);
        let mut out = Vec::new();
        let due: Vec<LinkAddr> =
            self.discoveries.iter().filter(|(_, d)| d.deadline <= now).map(|(k, _)| *k).collect();
        for dest in due {
            let round = self.discoveries[&dest].round + 1;
            if round >= self.params.rreq_retries {
                let d = self.discoveries.remove(&dest).expect("listed");
                self.stats.discoveries_failed += 1;
                out.extend(d.pending.into_iter().map(|p| Action::Unreachable(dest, p)));
            } else {
                let rreq = self.start_round(dest, round, now);
                let deadline = now + self.round_wait(round);
                let d = self.discoveries.get_mut(&dest).expect("listed");
                d.round = round;
                d.deadline = deadline;
                out.push(rreq);
            }
        }
        out
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.discoveries.values().map(|d| d.deadline).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{LinkParams, Topology};

    type R = Router<u32>;

    /// Zero-contention harness: control messages travel one hop per step.
    struct Net {
        topo: Topology,
        routers: BTreeMap<LinkAddr, R>,
        delivered: Vec<(LinkAddr, LinkAddr, u32)>,
        unreachable: Vec<u32>,
        now: SimTime,
    }

    impl Net {
        fn new(topo: Topology) -> Self {
            let routers = topo.nodes().map(|n| (n, Router::new(n, AodvParams::default()))).collect();
            Net { topo, routers, delivered: Vec::new(), unreachable: Vec::new(), now: SimTime::ZERO }
        }

        fn run(&mut self, at: LinkAddr, actions: Vec<Action<u32>>) {
            let mut q: VecDeque<(LinkAddr, Action<u32>)> = actions.into_iter().map(|a| (at, a)).collect();
            while let Some((node, a)) = q.pop_front() {
                let now = self.now;
                let mut handle = |to: LinkAddr, deliver: &mut dyn FnMut(&mut R) -> Vec<Action<u32>>| {
                    let out = deliver(self.routers.get_mut(&to).unwrap());
                    out.into_iter().map(move |a| (to, a)).collect::<Vec<_>>()
                };
                match a {
                    Action::Broadcast(c) => {
                        for n in self.topo.neighbors(node) {
                            q.extend(handle(n, &mut |r| r.on_control(&c, node, now)));
                        }
                    }
                    Action::Unicast(to, c) => {
                        if self.topo.link(node, to).is_some() {
                            q.extend(handle(to, &mut |r| r.on_control(&c, node, now)));
                        } else {
                            q.extend(handle(node, &mut |r| r.link_broken(to)));
                        }
                    }
                    Action::Forward(to, p) => {
                        if self.topo.link(node, to).is_none() {
                            q.extend(handle(node, &mut |r| r.link_broken(to)));
                        } else if to == p as LinkAddr {
                            self.delivered.push((node, to, p));
                        } else {
                            q.extend(handle(to, &mut |r| r.send(p as LinkAddr, p, now)));
                        }
                    }
                    Action::Unreachable(_, p) => self.unreachable.push(p),
                }
            }
        }

        fn send(&mut self, from: LinkAddr, dest: LinkAddr) {
            let now = self.now;
            let a = self.routers.get_mut(&from).unwrap().send(dest, dest as u32, now);
            self.run(from, a);
        }

        fn tick(&mut self, by: SimDuration) {
            self.now += by;
            let nodes: Vec<LinkAddr> = self.routers.keys().copied().collect();
            for n in nodes {
                let now = self.now;
                let a = self.routers.get_mut(&n).unwrap().poll(now);
                self.run(n, a);
            }
        }
    }

    const P: LinkParams = LinkParams { latency: SimDuration::from_millis(1), loss: 0.0 };

    #[test]
    fn reply_passes_relay_that_already_knew_the_destination() {
        let mut net = Net::new(Topology::line(2, P));
        net.send(1, 0);
        net.send(2, 0);
        assert_eq!(net.delivered, vec![(1, 0, 0), (1, 0, 0)]);
        assert_eq!(net.routers[&2].route(0).unwrap().hop_count, 2);
    }

    #[test]
    fn line_route_has_bfs_hop_count() {
        let mut net = Net::new(Topology::line(6, P));
        net.send(0, 6);
        assert_eq!(net.delivered.last(), Some(&(5, 6, 6)));
        assert_eq!(net.routers[&0].route(6).unwrap().hop_count, 6);
        assert_eq!(net.routers[&6].route(0).unwrap().hop_count, 6);
    }

    #[test]
    fn duplicate_rreq_is_not_rebroadcast() {
        let mut r: R = Router::new(5, AodvParams::default());
        let rreq = Control::Rreq(Rreq { hop_count: 1, ttl: 10, id: 4, dest: 9, dest_seq: None, orig: 1, orig_seq: 3 });
        let first = r.on_control(&rreq, 2, SimTime::ZERO);
        assert!(matches!(first.as_slice(), [Action::Broadcast(Control::Rreq(_))]));
        assert!(r.on_control(&rreq, 3, SimTime::ZERO).is_empty());
        assert!(r.on_control(&rreq, 2, SimTime::from_millis(10)).is_empty());
    }

    #[test]
    fn rrep_flushes_pending_in_order() {
        let mut r: R = Router::new(1, AodvParams::default());
        let mut actions = r.send(3, 10, SimTime::ZERO);
        actions.extend(r.send(3, 11, SimTime::ZERO));
        actions.extend(r.send(3, 12, SimTime::ZERO));
        assert_eq!(actions.len(), 1);
        let rrep = Control::Rrep(Rrep { hop_count: 1, dest: 3, dest_seq: 1, orig: 1, lifetime_ms: 30_000 });
        let out = r.on_control(&rrep, 2, SimTime::from_millis(5));
        assert_eq!(out, vec![Action::Forward(2, 10), Action::Forward(2, 11), Action::Forward(2, 12)]);
        assert_eq!(r.route(3).unwrap().hop_count, 2);
    }

    #[test]
    fn partition_is_unreachable_after_all_rounds() {
        let mut topo = Topology::line(3, P);
        topo.remove_link(1, 2);
        let mut net = Net::new(topo);
        net.send(0, 3);
        for _ in 0..8 {
            net.tick(SimDuration::from_secs(1));
        }
        assert_eq!(net.unreachable, vec![3]);
        let s = net.routers[&0].stats;
        assert_eq!((s.discoveries_failed, s.rreq_sent), (1, 3));
    }

    #[test]
    fn rounds_wait_one_two_four_seconds() {
        let mut r: R = Router::new(1, AodvParams::default());
        r.send(9, 0, SimTime::ZERO);
        assert_eq!(r.next_deadline(), Some(SimTime::from_secs(1)));
        r.poll(SimTime::from_secs(1));
        assert_eq!(r.next_deadline(), Some(SimTime::from_secs(3)));
        r.poll(SimTime::from_secs(3));
        assert_eq!(r.next_deadline(), Some(SimTime::from_secs(7)));
        let out = r.poll(SimTime::from_secs(7));
        assert_eq!(out, vec![Action::Unreachable(9, 0)]);
    }

    #[test]
    fn link_break_triggers_rediscovery() {
        let mut topo = Topology::line(3, P);
        topo.add_link(0, 2, P).unwrap();
        let mut net = Net::new(topo);
        net.send(0, 3);
        assert_eq!(net.routers[&0].route(3).unwrap().next_hop, 2);
        net.topo.remove_link(2, 3);
        net.topo.add_link(1, 3, P).unwrap();
        net.delivered.clear();
        net.send(0, 3);
        // The break is learnt from the failed forward at node 2.
        assert!(!net.routers[&0].route(3).unwrap().valid);
        net.send(0, 3);
        assert_eq!(net.delivered, vec![(1, 3, 3)]);
        assert_eq!(net.routers[&0].route(3).unwrap().next_hop, 1);
    }

    #[test]
    fn own_sequence_never_decreases() {
        let mut r: R = Router::new(4, AodvParams::default());
        let mut last = r.own_seq();
        for (i, s) in [5u32, 2, 9, 9, 1].into_iter().enumerate() {
            let rreq = Control::Rreq(Rreq { hop_count: 0, ttl: 5, id: i as u32, dest: 4, dest_seq: Some(s), orig: 1, orig_seq: 1 });
            r.on_control(&rreq, 1, SimTime::ZERO);
            r.send(7, 0, SimTime::ZERO);
            assert!(r.own_seq() >= last);
            last = r.own_seq();
        }
    }
}
