use thiserror::Error;

use crate::net::checksum::PseudoHeader;

/// `src_port(2) dst_port(2) seq(4) ack(4) flags(1) reserved(1) checksum(2)`
pub const SEGMENT_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Flags(pub u8);

impl Flags {
    pub const SYN: Flags = Flags(0x01);
    pub const ACK: Flags = Flags(0x02);
    pub const FIN: Flags = Flags(0x04);
    pub const RST: Flags = Flags(0x08);

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("segment shorter than its header")]
    Truncated,
    #[error("segment checksum does not verify")]
    BadChecksum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: Flags,
    pub payload: Vec<u8>,
}

impl Segment {
    pub fn has(&self, f: Flags) -> bool {
        self.flags.contains(f)
    }

    /// Sequence space consumed: payload plus one each for SYN and FIN.
    pub fn seq_len(&self) -> u32 {
        self.payload.len() as u32 + u32::from(self.has(Flags::SYN)) + u32::from(self.has(Flags::FIN))
    }

    fn write(&self, checksum: u16) -> Vec<u8> {
        let mut out = Vec::with_capacity(SEGMENT_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.push(self.flags.0);
        out.push(0);
        out.extend_from_slice(&checksum.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Encodes with the checksum computed over `pseudo` and the segment.
    pub fn encode(&self, pseudo: &PseudoHeader) -> Vec<u8> {
        let mut out = self.write(0);
        let c = pseudo.checksum(&out);
        out[14..16].copy_from_slice(&c.to_be_bytes());
        out
    }

    /// Decodes after verifying the checksum against `pseudo`.
    pub fn decode(b: &[u8], pseudo: &PseudoHeader) -> Result<Segment, SegmentError> {
        if b.len() < SEGMENT_HEADER_LEN {
            return Err(SegmentError::Truncated);
        }
        if !pseudo.verify(b) {
            return Err(SegmentError::BadChecksum);
        }
        Ok(Self::parse_unchecked(b))
    }

    /// Parses fields without checking the checksum.
    pub fn parse_unchecked(b: &[u8]) -> Segment {
        Segment {
            src_port: u16::from_be_bytes([b[0], b[1]]),
            dst_port: u16::from_be_bytes([b[2], b[3]]),
            seq: u32::from_be_bytes([b[4], b[5], b[6], b[7]]),
            ack: u32::from_be_bytes([b[8], b[9], b[10], b[11]]),
            flags: Flags(b[12]),
            payload: b[SEGMENT_HEADER_LEN..].to_vec(),
        }
    }
}

/// Rewrites the checksum of an encoded segment for a new pseudo-header.
pub fn rewrite_checksum(bytes: &mut [u8], pseudo: &PseudoHeader) -> Result<(), SegmentError> {
    if bytes.len() < SEGMENT_HEADER_LEN {
        return Err(SegmentError::Truncated);
    }
    bytes[14] = 0;
    bytes[15] = 0;
    let c = pseudo.checksum(bytes);
    bytes[14..16].copy_from_slice(&c.to_be_bytes());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn pseudo() -> PseudoHeader {
        PseudoHeader::V4 { src: Ipv4Addr::new(192, 0, 2, 1), dst: Ipv4Addr::new(10, 77, 0, 3), protocol: 253 }
    }

    #[test]
    fn encode_decode() {
        let s = Segment { src_port: 40000, dst_port: 7000, seq: 5, ack: 9, flags: Flags::ACK, payload: vec![1, 1] };
        let b = s.encode(&pseudo());
        assert_eq!(b.len(), 18);
        assert_eq!(Segment::decode(&b, &pseudo()).unwrap(), s);
    }

    #[test]
    fn wrong_pseudo_header_fails() {
        let s = Segment { src_port: 1, dst_port: 2, seq: 0, ack: 0, flags: Flags::SYN, payload: vec![] };
        let b = s.encode(&pseudo());
        let other = PseudoHeader::V4 { src: Ipv4Addr::new(192, 0, 2, 2), dst: Ipv4Addr::new(10, 77, 0, 3), protocol: 253 };
        assert_eq!(Segment::decode(&b, &other), Err(SegmentError::BadChecksum));
        assert_eq!(Segment::decode(&b[..10], &pseudo()), Err(SegmentError::Truncated));
    }

    #[test]
    fn seq_len_counts_control_flags() {
        let s = Segment { src_port: 1, dst_port: 2, seq: 0, ack: 0, flags: Flags::SYN | Flags::FIN, payload: vec![0; 3] };
        assert_eq!(s.seq_len(), 5);
    }
}
