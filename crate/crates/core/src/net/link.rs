use serde::{Deserialize, Serialize};

use super::NetError;

/// 16-bit short link address. The sink is always 0.
pub type LinkAddr = u16;

/// Link-layer broadcast destination.
pub const BROADCAST: LinkAddr = 0xFFFF;

pub const LINK_MTU: usize = 127;
pub const LINK_HEADER_LEN: usize = 6;
pub const LINK_PAYLOAD_MAX: usize = LINK_MTU - LINK_HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Data,
    AodvControl,
    Ack,
}

impl FrameType {
    fn to_byte(self) -> u8 {
        match self {
            FrameType::Data => 0,
            FrameType::AodvControl => 1,
            FrameType::Ack => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self, NetError> {
        match b {
            0 => Ok(FrameType::Data),
            1 => Ok(FrameType::AodvControl),
            2 => Ok(FrameType::Ack),
            _ => Err(NetError::Malformed("unknown link frame type")),
        }
    }
}

/// Radio frame: `dst(2) src(2) seq(1) type(1) payload(..=121)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkFrame {
    pub dst: LinkAddr,
    pub src: LinkAddr,
    pub seq: u8,
    pub frame_type: FrameType,
    pub payload: Vec<u8>,
}

impl LinkFrame {
    pub fn encoded_len(&self) -> usize {
        LINK_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, NetError> {
        if self.payload.len() > LINK_PAYLOAD_MAX {
            return Err(NetError::OversizedPayload {
                len: self.payload.len(),
                max: LINK_PAYLOAD_MAX,
            });
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.dst.to_be_bytes());
        out.extend_from_slice(&self.src.to_be_bytes());
        out.push(self.seq);
        out.push(self.frame_type.to_byte());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(b: &[u8]) -> Result<Self, NetError> {
        if b.len() < LINK_HEADER_LEN {
            return Err(NetError::Truncated { len: b.len(), need: LINK_HEADER_LEN });
        }
        if b.len() > LINK_MTU {
            return Err(NetError::Oversized { len: b.len(), max: LINK_MTU });
        }
        Ok(LinkFrame {
            dst: u16::from_be_bytes([b[0], b[1]]),
            src: u16::from_be_bytes([b[2], b[3]]),
            seq: b[4],
            frame_type: FrameType::from_byte(b[5])?,
            payload: b[LINK_HEADER_LEN..].to_vec(),
        })
    }
}
