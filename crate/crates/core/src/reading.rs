use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Encoded size of one reading on the wire.
pub const READING_LEN: usize = 19;

/// One consumption sample. Big-endian wire layout:
/// `mote_id u16 | appliance_id u8 | seq u32 | timestamp_ms u64 | watts_mw u32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SensorReading {
    pub mote_id: u16,
    pub appliance_id: u8,
    pub seq: u32,
    pub timestamp_ms: u64,
    pub watts_mw: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("reading needs {READING_LEN} bytes, got {0}")]
pub struct ReadingLenError(pub usize);

impl SensorReading {
    pub fn encode(&self) -> [u8; READING_LEN] {
        let mut b = [0u8; READING_LEN];
        b[0..2].copy_from_slice(&self.mote_id.to_be_bytes());
        b[2] = self.appliance_id;
        b[3..7].copy_from_slice(&self.seq.to_be_bytes());
        b[7..15].copy_from_slice(&self.timestamp_ms.to_be_bytes());
        b[15..19].copy_from_slice(&self.watts_mw.to_be_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, ReadingLenError> {
        let b: &[u8; READING_LEN] = b.try_into().map_err(|_| ReadingLenError(b.len()))?;
        Ok(SensorReading {
            mote_id: u16::from_be_bytes([b[0], b[1]]),
            appliance_id: b[2],
            seq: u32::from_be_bytes(b[3..7].try_into().expect("4 bytes")),
            timestamp_ms: u64::from_be_bytes(b[7..15].try_into().expect("8 bytes")),
            watts_mw: u32::from_be_bytes(b[15..19].try_into().expect("4 bytes")),
        })
    }

    pub fn watts(&self) -> f64 {
        self.watts_mw as f64 / 1000.0
    }
}

/// Splits a byte stream into whole readings, keeping any partial tail.
#[derive(Debug, Clone, Default)]
pub struct ReadingStream {
    buf: Vec<u8>,
}

impl ReadingStream {
    pub fn push(&mut self, bytes: &[u8]) -> Vec<SensorReading> {
        self.buf.extend_from_slice(bytes);
        let whole = self.buf.len() / READING_LEN * READING_LEN;
        let out = self.buf[..whole]
            .chunks_exact(READING_LEN)
            .map(|c| SensorReading::decode(c).expect("exact chunk"))
            .collect();
        self.buf.drain(..whole);
        out
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}
