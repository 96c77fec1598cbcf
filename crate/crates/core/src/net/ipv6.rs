use std::net::Ipv6Addr;

use super::NetError;

pub const IPV6_HEADER_LEN: usize = 40;
/// Largest datagram carried anywhere in the system.
pub const IPV6_MTU: usize = 1280;

/// IPv6 datagram without extension headers. Traffic class and flow label
/// are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv6Packet {
    pub src: Ipv6Addr,
    pub dst: Ipv6Addr,
    pub next_header: u8,
    pub hop_limit: u8,
    pub payload: Vec<u8>,
}

impl Ipv6Packet {
    pub fn encoded_len(&self) -> usize {
        IPV6_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, NetError> {
        if self.encoded_len() > IPV6_MTU {
            return Err(NetError::OversizedPayload {
                len: self.payload.len(),
                max: IPV6_MTU - IPV6_HEADER_LEN,
            });
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&[0x60, 0, 0, 0]);
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.push(self.next_header);
        out.push(self.hop_limit);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(b: &[u8]) -> Result<Self, NetError> {
        if b.len() < IPV6_HEADER_LEN {
            return Err(NetError::Truncated { len: b.len(), need: IPV6_HEADER_LEN });
        }
        if b.len() > IPV6_MTU {
            return Err(NetError::Oversized { len: b.len(), max: IPV6_MTU });
        }
        if b[0] >> 4 != 6 {
            return Err(NetError::Malformed("IPv6 version nibble"));
        }
        let payload_len = usize::from(u16::from_be_bytes([b[4], b[5]]));
        if IPV6_HEADER_LEN + payload_len != b.len() {
            return Err(NetError::Malformed("IPv6 payload length"));
        }
        let mut src = [0u8; 16];
        let mut dst = [0u8; 16];
        src.copy_from_slice(&b[8..24]);
        dst.copy_from_slice(&b[24..40]);
        Ok(Ipv6Packet {
            src: Ipv6Addr::from(src),
            dst: Ipv6Addr::from(dst),
            next_header: b[6],
            hop_limit: b[7],
            payload: b[IPV6_HEADER_LEN..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn packet(payload: Vec<u8>) -> Ipv6Packet {
        Ipv6Packet {
            src: "fd00:6c70::1".parse().unwrap(),
            dst: "fd00:4664::c000:201".parse().unwrap(),
            next_header: 253,
            hop_limit: 64,
            payload,
        }
    }

    #[test]
    fn empty_payload_is_header_only() {
        assert_eq!(packet(vec![]).encode().unwrap().len(), 40);
    }

    #[test]
    fn size_limits() {
        assert_eq!(packet(vec![0; 1240]).encode().unwrap().len(), 1280);
        assert!(packet(vec![0; 1241]).encode().is_err());
        assert!(matches!(Ipv6Packet::decode(&[0x60; 39]), Err(NetError::Truncated { .. })));
        assert!(matches!(Ipv6Packet::decode(&[0x60; 1281]), Err(NetError::Oversized { .. })));
    }

    #[test]
    fn length_field_must_match() {
        let mut b = packet(vec![1, 2, 3]).encode().unwrap();
        b.push(4);
        assert_eq!(Ipv6Packet::decode(&b), Err(NetError::Malformed("IPv6 payload length")));
    }

    proptest! {
        #[test]
        fn round_trip(src in any::<u128>(), dst in any::<u128>(), nh in any::<u8>(), hl in any::<u8>(),
                      payload in proptest::collection::vec(any::<u8>(), 0..=1240)) {
            let p = Ipv6Packet { src: src.into(), dst: dst.into(), next_header: nh, hop_limit: hl, payload };
            let b = p.encode().unwrap();
            prop_assert!(b.len() <= IPV6_MTU);
            prop_assert_eq!(Ipv6Packet::decode(&b).unwrap(), p);
        }
    }
}
