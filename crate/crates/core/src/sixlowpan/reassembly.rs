use std::collections::BTreeMap;
use std::net::Ipv6Addr;

use super::{decompress, FragmentHeader, FragmentKind, LowpanError, DISPATCH_COMPRESSED, DISPATCH_IPV6};
use crate::net::{Ipv6Packet, LinkAddr};
use crate::time::{SimDuration, SimTime};

/// Incomplete datagrams are dropped this long after their first fragment.
pub const REASSEMBLY_TIMEOUT: SimDuration = SimDuration::from_secs(10);

#[derive(Debug)]
struct Entry {
    size: usize,
    data: Vec<u8>,
    /// Sorted, disjoint, merged `[start, end)` ranges already received.
    ranges: Vec<(usize, usize)>,
    deadline: SimTime,
}

impl Entry {
    fn covers(&self, start: usize, end: usize) -> bool {
        self.ranges.iter().any(|&(s, e)| s <= start && end <= e)
    }

    fn overlaps(&self, start: usize, end: usize) -> bool {
        self.ranges.iter().any(|&(s, e)| start < e && s < end)
    }

    fn insert(&mut self, start: usize, end: usize) {
        self.ranges.push((start, end));
        self.ranges.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(self.ranges.len());
        for &(s, e) in &self.ranges {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        self.ranges = merged;
    }

    fn complete(&self) -> bool {
        self.ranges == [(0, self.size)]
    }
}

/// Per-receiver reassembly state, keyed by `(link source, datagram tag)`.
#[derive(Debug)]
pub struct ReassemblyBuffer {
    mesh_prefix: Ipv6Addr,
    timeout: SimDuration,
    entries: BTreeMap<(LinkAddr, u16), Entry>,
    /// Completed or expired keys, remembered until the instant stored here.
    retired: BTreeMap<(LinkAddr, u16), SimTime>,
    pub evicted: u64,
}

impl ReassemblyBuffer {
    pub fn new(mesh_prefix: Ipv6Addr) -> Self {
        Self::with_timeout(mesh_prefix, REASSEMBLY_TIMEOUT)
    }

    pub fn with_timeout(mesh_prefix: Ipv6Addr, timeout: SimDuration) -> Self {
        ReassemblyBuffer {
            mesh_prefix,
            timeout,
            entries: BTreeMap::new(),
            retired: BTreeMap::new(),
            evicted: 0,
        }
    }

    pub fn live_entries(&self) -> usize {
        self.entries.len()
    }

    /// Drops incomplete entries whose deadline has passed.
    pub fn expire(&mut self, now: SimTime) -> usize {
        self.retired.retain(|_, until| *until > now);
        let expired: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, e)| e.deadline <= now)
            .map(|(k, _)| *k)
            .collect();
        for k in &expired {
            self.entries.remove(k);
            self.retired.insert(*k, now + self.timeout);
        }
        self.evicted += expired.len() as u64;
        expired.len()
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.entries.values().map(|e| e.deadline).min()
    }

    /// Accepts one link payload from `src`. Returns the datagram when this
    /// payload completes it; duplicates and partial progress yield `None`.
    pub fn receive(&mut self, src: LinkAddr, payload: &[u8], now: SimTime) -> Result<Option<Ipv6Packet>, LowpanError> {
        let dispatch = *payload.first().ok_or(LowpanError::Malformed("empty payload"))?;
        if dispatch == DISPATCH_IPV6 || dispatch == DISPATCH_COMPRESSED {
            return decompress(payload, self.mesh_prefix).map(Some);
        }
        let (header, body) = FragmentHeader::decode(payload)?;
        self.expire(now);
        let key = (src, header.datagram_tag);
        if self.retired.contains_key(&key) {
            return Err(LowpanError::StaleFragment);
        }
        let size = usize::from(header.datagram_size);
        let start = usize::from(header.offset) * 8;
        let end = start + body.len();
        if end > size || body.is_empty() {
            return Err(LowpanError::Malformed("fragment outside datagram"));
        }
        if header.kind == FragmentKind::First && header.offset != 0 {
            return Err(LowpanError::Malformed("first fragment with offset"));
        }
        let timeout = self.timeout;
        let entry = self.entries.entry(key).or_insert_with(|| Entry {
            size,
            data: vec![0; size],
            ranges: Vec::new(),
            deadline: now + timeout,
        });
        if entry.size != size {
            self.entries.remove(&key);
            return Err(LowpanError::ConflictingFragment);
        }
        if entry.overlaps(start, end) {
            let same = entry
                .ranges
                .iter()
                .filter(|&&(s, e)| start < e && s < end)
                .all(|&(s, e)| {
                    let (lo, hi) = (s.max(start), e.min(end));
                    entry.data[lo..hi] == body[lo - start..hi - start]
                });
            if !same {
                self.entries.remove(&key);
                return Err(LowpanError::ConflictingFragment);
            }
            if entry.covers(start, end) {
                return Ok(None);
            }
        }
        entry.data[start..end].copy_from_slice(body);
        entry.insert(start, end);
        if !entry.complete() {
            return Ok(None);
        }
        let entry = self.entries.remove(&key).expect("entry present");
        self.retired.insert(key, entry.deadline);
        Ok(Some(Ipv6Packet::decode(&entry.data)?))
    }
}
