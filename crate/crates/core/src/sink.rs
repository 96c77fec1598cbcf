//! The sink's serial side: IPv6 packets in serial frames, both ways.

use std::net::Ipv6Addr;

use serde::Serialize;
use thiserror::Error;

use crate::addrmap::AddressMapConfig;
use crate::net::{serial, Ipv6Packet, NetError, SerialDecoder, SerialError};

#[derive(Debug, Error, PartialEq)]
pub enum SinkError {
    #[error("serial link down")]
    SerialDown,
    #[error("serial frame failed its CRC")]
    CrcError,
    #[error("serial framing: {0}")]
    Framing(&'static str),
    #[error("destination {0} is outside the mesh")]
    NotForMesh(Ipv6Addr),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SinkStats {
    pub to_serial: u64,
    pub serial_down_drops: u64,
    pub from_serial: u64,
    pub crc_errors: u64,
    pub framing_errors: u64,
    pub not_for_mesh: u64,
    pub malformed: u64,
}

#[derive(Debug)]
pub struct SinkBridge {
    addrmap: AddressMapConfig,
    decoder: SerialDecoder,
    pub serial_up: bool,
    pub stats: SinkStats,
}

impl SinkBridge {
    pub fn new(addrmap: AddressMapConfig) -> Self {
        SinkBridge { addrmap, decoder: SerialDecoder::new(), serial_up: true, stats: SinkStats::default() }
    }

    /// Encodes a packet from the mesh as a serial frame for the gateway.
    pub fn mesh_to_serial(&mut self, p: &Ipv6Packet) -> Result<Vec<u8>, SinkError> {
        if !self.serial_up {
            self.stats.serial_down_drops += 1;
            return Err(SinkError::SerialDown);
        }
        let body = p.encode()?;
        self.stats.to_serial += 1;
        Ok(serial::encode_frame(&body))
    }

    /// Decodes serial bytes from the gateway into packets bound for motes.
    pub fn serial_to_mesh(&mut self, bytes: &[u8]) -> Vec<Result<Ipv6Packet, SinkError>> {
        self.decoder
            .push(bytes)
            .into_iter()
            .map(|frame| {
                let body = frame.map_err(|e| match e {
                    SerialError::CrcError => {
                        self.stats.crc_errors += 1;
                        SinkError::CrcError
                    }
                    SerialError::Framing(m) => {
                        self.stats.framing_errors += 1;
                        SinkError::Framing(m)
                    }
                })?;
                let p = Ipv6Packet::decode(&body).inspect_err(|_| self.stats.malformed += 1)?;
                if !self.addrmap.is_mesh(p.dst) {
                    self.stats.not_for_mesh += 1;
                    return Err(SinkError::NotForMesh(p.dst));
                }
                self.stats.from_serial += 1;
                Ok(p)
            })
            .collect()
    }
}
