//! Serial tunnel framing between the sink and the gateway.
//!
//! ```text
//! 0x7E | stuffed(body || crc16_be) | 0x7E
//! ```
//!
//! `0x7E` and `0x7D` inside the frame are escaped as `0x7D, byte ^ 0x20`.
//! The CRC is CRC-16 with polynomial 0x1021, initial value 0xFFFF, no
//! reflection and no final XOR.

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

const FLAG: u8 = 0x7E;
const ESCAPE: u8 = 0x7D;
const ESCAPE_XOR: u8 = 0x20;

static CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerialError {
    #[error("serial frame CRC mismatch")]
    CrcError,
    #[error("serial framing error: {0}")]
    Framing(&'static str),
}

pub fn crc16(data: &[u8]) -> u16 {
    CRC16.checksum(data)
}

fn push_stuffed(out: &mut Vec<u8>, b: u8) {
    if b == FLAG || b == ESCAPE {
        out.push(ESCAPE);
        out.push(b ^ ESCAPE_XOR);
    } else {
        out.push(b);
    }
}

/// Wraps `body` (normally an encoded IPv6 datagram) in a serial frame.
pub fn encode_frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 8);
    out.push(FLAG);
    for &b in body {
        push_stuffed(&mut out, b);
    }
    for b in crc16(body).to_be_bytes() {
        push_stuffed(&mut out, b);
    }
    out.push(FLAG);
    out
}

fn check_unstuffed(raw: &[u8]) -> Result<Vec<u8>, SerialError> {
    if raw.len() < 2 {
        return Err(SerialError::Framing("frame shorter than its CRC"));
    }
    let (body, tail) = raw.split_at(raw.len() - 2);
    if crc16(body) != u16::from_be_bytes([tail[0], tail[1]]) {
        return Err(SerialError::CrcError);
    }
    Ok(body.to_vec())
}

/// Decodes exactly one complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Vec<u8>, SerialError> {
    let inner = match bytes {
        [FLAG, inner @ .., FLAG] => inner,
        _ => return Err(SerialError::Framing("missing delimiters")),
    };
    let mut raw = Vec::with_capacity(inner.len());
    let mut it = inner.iter();
    while let Some(&b) = it.next() {
        match b {
            FLAG => return Err(SerialError::Framing("delimiter inside frame")),
            ESCAPE => match it.next() {
                Some(&e) if e ^ ESCAPE_XOR == FLAG || e ^ ESCAPE_XOR == ESCAPE => raw.push(e ^ ESCAPE_XOR),
                _ => return Err(SerialError::Framing("bad escape")),
            },
            _ => raw.push(b),
        }
    }
    check_unstuffed(&raw)
}

/// Incremental decoder for a serial byte stream.
#[derive(Debug, Default)]
pub struct SerialDecoder {
    buf: Vec<u8>,
    in_frame: bool,
    escaped: bool,
}

impl SerialDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds bytes and returns every frame they complete, in order.
    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<Vec<u8>, SerialError>> {
        let mut out = Vec::new();
        for &b in bytes {
            if b == FLAG {
                if self.in_frame && !self.buf.is_empty() {
                    let res = if self.escaped {
                        Err(SerialError::Framing("bad escape"))
                    } else {
                        check_unstuffed(&self.buf)
                    };
                    out.push(res);
                }
                // A closing flag may double as the next opening flag.
                self.buf.clear();
                self.in_frame = true;
                self.escaped = false;
                continue;
            }
            if !self.in_frame {
                continue;
            }
            if self.escaped {
                self.buf.push(b ^ ESCAPE_XOR);
                self.escaped = false;
            } else if b == ESCAPE {
                self.escaped = true;
            } else {
                self.buf.push(b);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crc_reference_value() {
        // CRC-16/CCITT-FALSE check value.
        assert_eq!(crc16(b"123456789"), 0x29B1);
    }

    #[test]
    fn stuffs_reserved_bytes() {
        let f = encode_frame(&[0x7E, 0x7D, 0x01]);
        assert_eq!(&f[..6], &[0x7E, 0x7D, 0x5E, 0x7D, 0x5D, 0x01]);
        assert_eq!(decode_frame(&f).unwrap(), vec![0x7E, 0x7D, 0x01]);
    }

    #[test]
    fn stream_decoder_splits_frames() {
        let mut stream = encode_frame(b"abc");
        stream.extend(encode_frame(&[0x7E; 3]));
        let mut d = SerialDecoder::new();
        let mut frames = Vec::new();
        for chunk in stream.chunks(3) {
            frames.extend(d.push(chunk));
        }
        assert_eq!(frames, vec![Ok(b"abc".to_vec()), Ok(vec![0x7E; 3])]);
    }

    #[test]
    fn every_single_bit_error_in_body_or_crc_is_caught() {
        let body: Vec<u8> = (0..=255u8).collect();
        let mut raw = body.clone();
        raw.extend(crc16(&body).to_be_bytes());
        for bit in 0..raw.len() * 8 {
            let mut r = raw.clone();
            r[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(check_unstuffed(&r), Err(SerialError::CrcError), "bit {bit}");
        }
    }

    proptest! {
        #[test]
        fn round_trip(body in proptest::collection::vec(any::<u8>(), 0..1300)) {
            prop_assert_eq!(decode_frame(&encode_frame(&body)).unwrap(), body);
        }

        #[test]
        fn single_bit_flip_never_decodes(body in proptest::collection::vec(any::<u8>(), 1..200), seed in any::<usize>()) {
            let mut f = encode_frame(&body);
            let bit = seed % (f.len() * 8);
            f[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(decode_frame(&f).is_err());
        }
    }
}
