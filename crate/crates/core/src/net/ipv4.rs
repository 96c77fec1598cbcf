use std::net::Ipv4Addr;

use super::checksum::{accumulate, fold, ipv4_header_checksum};
use super::NetError;

/// Option-free IPv4 header length.
pub const IPV4_HEADER_LEN: usize = 20;

/// Option-free, unfragmented IPv4 datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub ttl: u8,
    pub header_checksum: u16,
    pub payload: Vec<u8>,
}

impl Ipv4Packet {
    /// Builds a packet with a correct header checksum.
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, ttl: u8, payload: Vec<u8>) -> Self {
        let mut p = Ipv4Packet { src, dst, protocol, ttl, header_checksum: 0, payload };
        p.header_checksum = ipv4_header_checksum(&p.header_bytes(0));
        p
    }

    pub fn encoded_len(&self) -> usize {
        IPV4_HEADER_LEN + self.payload.len()
    }

    fn header_bytes(&self, checksum: u16) -> [u8; IPV4_HEADER_LEN] {
        let total = (IPV4_HEADER_LEN + self.payload.len()) as u16;
        let mut h = [0u8; IPV4_HEADER_LEN];
        h[0] = 0x45;
        h[2..4].copy_from_slice(&total.to_be_bytes());
        // DF set, no fragmentation in this system.
        h[6] = 0x40;
        h[8] = self.ttl;
        h[9] = self.protocol;
        h[10..12].copy_from_slice(&checksum.to_be_bytes());
        h[12..16].copy_from_slice(&self.src.octets());
        h[16..20].copy_from_slice(&self.dst.octets());
        h
    }

    /// Encodes with a freshly computed header checksum.
    pub fn encode(&self) -> Result<Vec<u8>, NetError> {
        if self.encoded_len() > usize::from(u16::MAX) {
            return Err(NetError::OversizedPayload {
                len: self.payload.len(),
                max: usize::from(u16::MAX) - IPV4_HEADER_LEN,
            });
        }
        let checksum = ipv4_header_checksum(&self.header_bytes(0));
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header_bytes(checksum));
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes and validates the header checksum before any other field.
    pub fn decode(b: &[u8]) -> Result<Self, NetError> {
        if b.len() < IPV4_HEADER_LEN {
            return Err(NetError::Truncated { len: b.len(), need: IPV4_HEADER_LEN });
        }
        let header = &b[..IPV4_HEADER_LEN];
        if fold(accumulate(0, header)) != 0xFFFF {
            return Err(NetError::ChecksumMismatch);
        }
        if header[0] != 0x45 {
            return Err(NetError::Malformed("IPv4 version/IHL"));
        }
        let total = usize::from(u16::from_be_bytes([header[2], header[3]]));
        if total != b.len() {
            return Err(NetError::Malformed("IPv4 total length"));
        }
        if u16::from_be_bytes([header[6], header[7]]) & 0x3FFF != 0 {
            return Err(NetError::Malformed("IPv4 fragments are not supported"));
        }
        Ok(Ipv4Packet {
            src: Ipv4Addr::new(header[12], header[13], header[14], header[15]),
            dst: Ipv4Addr::new(header[16], header[17], header[18], header[19]),
            protocol: header[9],
            ttl: header[8],
            header_checksum: u16::from_be_bytes([header[10], header[11]]),
            payload: b[IPV4_HEADER_LEN..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_packet() -> impl Strategy<Value = Ipv4Packet> {
        (any::<u32>(), any::<u32>(), any::<u8>(), any::<u8>(), proptest::collection::vec(any::<u8>(), 0..200))
            .prop_map(|(s, d, proto, ttl, payload)| Ipv4Packet::new(s.into(), d.into(), proto, ttl, payload))
    }

    #[test]
    fn encoded_header_verifies() {
        let p = Ipv4Packet::new([192, 0, 2, 1].into(), [10, 77, 0, 3].into(), 253, 64, vec![1, 1]);
        let b = p.encode().unwrap();
        assert_eq!(fold(accumulate(0, &b[..20])), 0xFFFF);
        assert_eq!(u16::from_be_bytes([b[10], b[11]]), p.header_checksum);
    }

    #[test]
    fn truncated_input() {
        assert!(matches!(Ipv4Packet::decode(&[0x45; 19]), Err(NetError::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn round_trip(p in arb_packet()) {
            let b = p.encode().unwrap();
            prop_assert_eq!(Ipv4Packet::decode(&b).unwrap(), p);
        }

        #[test]
        fn any_header_bit_flip_is_detected(p in arb_packet(), bit in 0usize..(IPV4_HEADER_LEN * 8)) {
            let mut b = p.encode().unwrap();
            b[bit / 8] ^= 1 << (bit % 8);
            prop_assert_eq!(Ipv4Packet::decode(&b), Err(NetError::ChecksumMismatch));
        }
    }
}
