use crate::net::LinkAddr;
use thiserror::Error;

pub const RREQ_LEN: usize = 20;
pub const RREP_LEN: usize = 16;

const T_RREQ: u8 = 1;
const T_RREP: u8 = 2;
const T_RERR: u8 = 3;
/// RREQ flag: the originator knows no sequence number for the destination.
const F_UNKNOWN_SEQ: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rreq {
    pub hop_count: u8,
    pub ttl: u8,
    pub id: u32,
    pub dest: LinkAddr,
    pub dest_seq: Option<u32>,
    pub orig: LinkAddr,
    pub orig_seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rrep {
    pub hop_count: u8,
    pub dest: LinkAddr,
    pub dest_seq: u32,
    pub orig: LinkAddr,
    pub lifetime_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rerr {
    pub unreachable: Vec<(LinkAddr, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ControlError {
    #[error("unknown control type {0}")]
    UnknownType(u8),
    #[error("control message truncated")]
    Truncated,
    #[error("trailing bytes after control message")]
    Trailing,
}

impl Control {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(RREQ_LEN);
        match self {
            Control::Rreq(r) => {
                let flags = if r.dest_seq.is_none() { F_UNKNOWN_SEQ } else { 0 };
                b.extend([T_RREQ, flags, r.hop_count, r.ttl]);
                b.extend(r.id.to_be_bytes());
                b.extend(r.dest.to_be_bytes());
                b.extend(r.dest_seq.unwrap_or(0).to_be_bytes());
                b.extend(r.orig.to_be_bytes());
                b.extend(r.orig_seq.to_be_bytes());
            }
            Control::Rrep(r) => {
                b.extend([T_RREP, 0, 0, r.hop_count]);
                b.extend(r.dest.to_be_bytes());
                b.extend(r.dest_seq.to_be_bytes());
                b.extend(r.orig.to_be_bytes());
                b.extend(r.lifetime_ms.to_be_bytes());
            }
            Control::Rerr(r) => {
                b.extend([T_RERR, r.unreachable.len() as u8]);
                for (d, s) in &r.unreachable {
                    b.extend(d.to_be_bytes());
                    b.extend(s.to_be_bytes());
                }
            }
        }
        b
    }

    pub fn decode(b: &[u8]) -> Result<Control, ControlError> {
        let u16_at = |i: usize| u16::from_be_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let exact = |n: usize| match b.len().cmp(&n) {
            std::cmp::Ordering::Less => Err(ControlError::Truncated),
            std::cmp::Ordering::Greater => Err(ControlError::Trailing),
            std::cmp::Ordering::Equal => Ok(()),
        };
        match *b.first().ok_or(ControlError::Truncated)? {
            T_RREQ => {
                exact(RREQ_LEN)?;
                Ok(Control::Rreq(Rreq {
                    hop_count: b[2],
                    ttl: b[3],
                    id: u32_at(4),
                    dest: u16_at(8),
                    dest_seq: if b[1] & F_UNKNOWN_SEQ != 0 { None } else { Some(u32_at(10)) },
                    orig: u16_at(14),
                    orig_seq: u32_at(16),
                }))
            }
            T_RREP => {
                exact(RREP_LEN)?;
                Ok(Control::Rrep(Rrep {
                    hop_count: b[3],
                    dest: u16_at(4),
                    dest_seq: u32_at(6),
                    orig: u16_at(10),
                    lifetime_ms: u32_at(12),
                }))
            }
            T_RERR => {
                let n = *b.get(1).ok_or(ControlError::Truncated)? as usize;
                exact(2 + 6 * n)?;
                let unreachable = (0..n).map(|i| (u16_at(2 + 6 * i), u32_at(4 + 6 * i))).collect();
                Ok(Control::Rerr(Rerr { unreachable }))
            }
            t => Err(ControlError::UnknownType(t)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rreq_layout() {
        let m = Control::Rreq(Rreq { hop_count: 2, ttl: 14, id: 0x0102_0304, dest: 7, dest_seq: None, orig: 1, orig_seq: 9 });
        let b = m.encode();
        assert_eq!(b.len(), RREQ_LEN);
        assert_eq!(&b[..8], &[1, 1, 2, 14, 1, 2, 3, 4]);
        assert_eq!(&b[8..10], &[0, 7]);
        assert_eq!(Control::decode(&b).unwrap(), m);
    }

    #[test]
    fn malformed_messages_are_rejected() {
        assert_eq!(Control::decode(&[]), Err(ControlError::Truncated));
        assert_eq!(Control::decode(&[9]), Err(ControlError::UnknownType(9)));
        assert_eq!(Control::decode(&[2; 15]), Err(ControlError::Truncated));
        assert_eq!(Control::decode(&[3, 1, 0, 0, 0, 0, 0, 0, 0]), Err(ControlError::Trailing));
    }

    proptest! {
        #[test]
        fn round_trip(kind in 0..3u8, a in any::<u16>(), b in any::<u16>(), s in any::<u32>(), h in any::<u8>(),
                      known in any::<bool>(), errs in proptest::collection::vec((any::<u16>(), any::<u32>()), 0..20)) {
            let m = match kind {
                0 => Control::Rreq(Rreq { hop_count: h, ttl: h ^ 0x55, id: s ^ 1, dest: a, dest_seq: known.then_some(s), orig: b, orig_seq: s.rotate_left(3) }),
                1 => Control::Rrep(Rrep { hop_count: h, dest: a, dest_seq: s, orig: b, lifetime_ms: s ^ 0xFFFF }),
                _ => Control::Rerr(Rerr { unreachable: errs }),
            };
            prop_assert_eq!(Control::decode(&m.encode()).unwrap(), m);
        }
    }
}
