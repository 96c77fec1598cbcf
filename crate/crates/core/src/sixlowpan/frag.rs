use super::{LowpanError, DISPATCH_FRAG1, DISPATCH_FRAGN, DISPATCH_IPV6};
use crate::net::{Ipv6Packet, IPV6_MTU};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FragmentKind {
    First,
    Subsequent,
}

/// FRAG1 / FRAGN header. `offset` counts 8-byte units and is zero for the
/// first fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentHeader {
    pub kind: FragmentKind,
    pub datagram_size: u16,
    pub datagram_tag: u16,
    pub offset: u8,
}

impl FragmentHeader {
    pub const FIRST_LEN: usize = 4;
    pub const SUBSEQUENT_LEN: usize = 5;

    pub fn len(&self) -> usize {
        match self.kind {
            FragmentKind::First => Self::FIRST_LEN,
            FragmentKind::Subsequent => Self::SUBSEQUENT_LEN,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let base = match self.kind {
            FragmentKind::First => DISPATCH_FRAG1,
            FragmentKind::Subsequent => DISPATCH_FRAGN,
        };
        out.push(base | ((self.datagram_size >> 8) as u8 & 0x07));
        out.push(self.datagram_size as u8);
        out.extend_from_slice(&self.datagram_tag.to_be_bytes());
        if self.kind == FragmentKind::Subsequent {
            out.push(self.offset);
        }
    }

    /// Parses a fragment header, returning it with the fragment body.
    pub fn decode(b: &[u8]) -> Result<(Self, &[u8]), LowpanError> {
        let first = *b.first().ok_or(LowpanError::Malformed("empty payload"))?;
        let kind = match first & 0xF8 {
            DISPATCH_FRAG1 => FragmentKind::First,
            DISPATCH_FRAGN => FragmentKind::Subsequent,
            _ => return Err(LowpanError::MalformedDispatch(first)),
        };
        let need = if kind == FragmentKind::First { Self::FIRST_LEN } else { Self::SUBSEQUENT_LEN };
        if b.len() < need {
            return Err(LowpanError::Malformed("fragment header truncated"));
        }
        let header = FragmentHeader {
            kind,
            datagram_size: (u16::from(first & 0x07) << 8) | u16::from(b[1]),
            datagram_tag: u16::from_be_bytes([b[2], b[3]]),
            offset: if kind == FragmentKind::Subsequent { b[4] } else { 0 },
        };
        Ok((header, &b[need..]))
    }
}

/// Hands out datagram tags, wrapping at 2^16.
#[derive(Debug, Clone, Default)]
pub struct TagAllocator {
    next: u16,
}

impl TagAllocator {
    pub fn starting_at(next: u16) -> Self {
        TagAllocator { next }
    }

    pub fn next_tag(&mut self) -> u16 {
        let t = self.next;
        self.next = self.next.wrapping_add(1);
        t
    }
}

/// Splits `p` into link payloads of at most `budget` bytes.
///
/// A datagram whose uncompressed encoding fits after the one-byte dispatch is
/// returned as a single `0x41` payload. Otherwise every fragment body except
/// the last is a multiple of 8 bytes and the bodies concatenate to the
/// encoded datagram.
pub fn fragment(p: &Ipv6Packet, budget: usize, tags: &mut TagAllocator) -> Result<Vec<Vec<u8>>, LowpanError> {
    if p.encoded_len() > IPV6_MTU {
        return Err(LowpanError::DatagramTooLarge(p.encoded_len()));
    }
    let encoded = p.encode()?;
    if encoded.len() < budget {
        let mut single = Vec::with_capacity(1 + encoded.len());
        single.push(DISPATCH_IPV6);
        single.extend_from_slice(&encoded);
        return Ok(vec![single]);
    }
    assert!(budget >= FragmentHeader::SUBSEQUENT_LEN + 8, "fragment budget too small");

    let tag = tags.next_tag();
    let size = encoded.len() as u16;
    let mut out = Vec::new();
    let mut offset = 0usize;
    while offset < encoded.len() {
        let kind = if offset == 0 { FragmentKind::First } else { FragmentKind::Subsequent };
        let header_len = if offset == 0 { FragmentHeader::FIRST_LEN } else { FragmentHeader::SUBSEQUENT_LEN };
        let room = budget - header_len;
        // Only the final fragment may end off an 8-byte boundary.
        let end = if encoded.len() - offset <= room {
            encoded.len()
        } else {
            offset + room / 8 * 8
        };
        let header = FragmentHeader { kind, datagram_size: size, datagram_tag: tag, offset: (offset / 8) as u8 };
        let mut payload = Vec::with_capacity(header.len() + end - offset);
        header.encode_into(&mut payload);
        payload.extend_from_slice(&encoded[offset..end]);
        out.push(payload);
        offset = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sixlowpan::LINK_BUDGET;

    fn packet_of_len(encoded: usize) -> Ipv6Packet {
        Ipv6Packet {
            src: "fd00:6c70::1".parse().unwrap(),
            dst: "fd00:4664::c000:2fe".parse().unwrap(),
            next_header: 253,
            hop_limit: 64,
            payload: (0..encoded - 40).map(|i| i as u8).collect(),
        }
    }

    /// Independent layout oracle: walk the datagram greedily, byte by byte.
    fn oracle_body_sizes(total: usize, budget: usize) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut left = total;
        let mut header = 4;
        while left > 0 {
            let mut body = 0;
            while body < left && header + body < budget {
                body += 1;
            }
            if body < left {
                while body % 8 != 0 {
                    body -= 1;
                }
            }
            sizes.push(body);
            left -= body;
            header = 5;
        }
        sizes
    }

    #[test]
    fn small_packet_is_not_fragmented() {
        let frags = fragment(&packet_of_len(40), LINK_BUDGET, &mut TagAllocator::default()).unwrap();
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0][0], DISPATCH_IPV6);
        assert_eq!(frags[0].len(), 41);
    }

    #[test]
    fn full_mtu_layout() {
        assert_eq!(oracle_body_sizes(1280, LINK_BUDGET), {
            let mut v = vec![112; 11];
            v.push(48);
            v
        });
        let frags = fragment(&packet_of_len(1280), LINK_BUDGET, &mut TagAllocator::default()).unwrap();
        let bodies: Vec<usize> = frags
            .iter()
            .enumerate()
            .map(|(i, f)| f.len() - if i == 0 { 4 } else { 5 })
            .collect();
        assert_eq!(bodies, oracle_body_sizes(1280, LINK_BUDGET));
        assert!(frags.iter().all(|f| f.len() <= LINK_BUDGET));
    }

    #[test]
    fn layout_matches_oracle_for_every_size() {
        for len in 121..=1280 {
            let frags = fragment(&packet_of_len(len), LINK_BUDGET, &mut TagAllocator::default()).unwrap();
            let bodies: Vec<usize> = frags
                .iter()
                .map(|f| f.len() - FragmentHeader::decode(f).unwrap().0.len())
                .collect();
            assert_eq!(bodies, oracle_body_sizes(len, LINK_BUDGET), "len {len}");
        }
    }

    #[test]
    fn oversize_rejected() {
        let mut p = packet_of_len(1280);
        p.payload.push(0);
        assert_eq!(
            fragment(&p, LINK_BUDGET, &mut TagAllocator::default()),
            Err(LowpanError::DatagramTooLarge(1281))
        );
    }

    #[test]
    fn header_sizes_and_fields() {
        let frags = fragment(&packet_of_len(300), LINK_BUDGET, &mut TagAllocator::starting_at(0xBEEF)).unwrap();
        let (h0, _) = FragmentHeader::decode(&frags[0]).unwrap();
        let (h1, _) = FragmentHeader::decode(&frags[1]).unwrap();
        assert_eq!((h0.kind, h0.len(), h0.datagram_size, h0.datagram_tag), (FragmentKind::First, 4, 300, 0xBEEF));
        assert_eq!((h1.kind, h1.len(), h1.offset), (FragmentKind::Subsequent, 5, 14));
    }

    #[test]
    fn tags_wrap() {
        let mut t = TagAllocator::starting_at(0xFFFF);
        assert_eq!(t.next_tag(), 0xFFFF);
        assert_eq!(t.next_tag(), 0);
    }
}
