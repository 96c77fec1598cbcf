//! Stateless bijective mapping between the IPv4 and IPv6 address spaces.
//!
//! Two independent pairs of mutually inverse functions:
//!
//! * motes: `mesh_prefix6 (/112) || id16`  <->  `pool_prefix4 (/16) || id16`
//! * IPv4 hosts: `gw_prefix6 (/96) || v4`  <->  `v4`
//!
//! Nothing here keeps state, so any packet can be translated without having
//! seen earlier traffic of its flow.

use std::net::{Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MESH_MASK: u128 = !0xFFFF;
const GW_MASK: u128 = !0xFFFF_FFFF;
const POOL_MASK: u32 = 0xFFFF_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrMapError {
    #[error("{0} is not inside the mesh prefix")]
    NotMeshAddress(Ipv6Addr),
    #[error("{0} is not inside the virtual IPv4 pool")]
    NotPoolAddress(Ipv4Addr),
    #[error("{0} is not inside the gateway IPv6 prefix")]
    NotGatewayPrefix(Ipv6Addr),
    #[error("invalid address map: {0}")]
    InvalidConfig(String),
}

/// The three prefixes that define the mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMapConfig {
    /// /112 prefix of real mote addresses.
    pub mesh_prefix6: Ipv6Addr,
    /// /16 pool of virtual mote IPv4 addresses.
    pub pool_prefix4: Ipv4Addr,
    /// /96 prefix of virtual IPv6 addresses for IPv4 hosts.
    pub gw_prefix6: Ipv6Addr,
}

impl AddressMapConfig {
    /// Checks prefix alignment and disjointness. `gateway_ipv4` must stay
    /// outside the pool.
    pub fn validate(&self, gateway_ipv4: Option<Ipv4Addr>) -> Result<(), AddrMapError> {
        let mesh = u128::from(self.mesh_prefix6);
        let gw = u128::from(self.gw_prefix6);
        let pool = u32::from(self.pool_prefix4);
        if mesh & !MESH_MASK != 0 {
            return Err(AddrMapError::InvalidConfig(format!(
                "mesh_prefix6 {} has bits set below /112",
                self.mesh_prefix6
            )));
        }
        if gw & !GW_MASK != 0 {
            return Err(AddrMapError::InvalidConfig(format!(
                "gw_prefix6 {} has bits set below /96",
                self.gw_prefix6
            )));
        }
        if pool & !POOL_MASK != 0 {
            return Err(AddrMapError::InvalidConfig(format!(
                "pool_prefix4 {} has bits set below /16",
                self.pool_prefix4
            )));
        }
        // The /112 nests inside exactly one /96, so comparing at /96 is enough.
        if mesh & GW_MASK == gw {
            return Err(AddrMapError::InvalidConfig(
                "mesh_prefix6 lies inside gw_prefix6".into(),
            ));
        }
        if let Some(addr) = gateway_ipv4 {
            if self.in_pool(addr) {
                return Err(AddrMapError::InvalidConfig(format!(
                    "gateway address {addr} lies inside pool_prefix4"
                )));
            }
        }
        Ok(())
    }

    pub fn is_mesh(&self, a: Ipv6Addr) -> bool {
        u128::from(a) & MESH_MASK == u128::from(self.mesh_prefix6)
    }

    pub fn is_gateway_prefixed(&self, a: Ipv6Addr) -> bool {
        u128::from(a) & GW_MASK == u128::from(self.gw_prefix6)
    }

    pub fn in_pool(&self, v: Ipv4Addr) -> bool {
        u32::from(v) & POOL_MASK == u32::from(self.pool_prefix4)
    }

    /// Real IPv6 address of mote `id`.
    pub fn mote_address(&self, id: u16) -> Ipv6Addr {
        Ipv6Addr::from(u128::from(self.mesh_prefix6) | u128::from(id))
    }

    /// Virtual IPv4 address of mote `id`.
    pub fn mote_virtual4(&self, id: u16) -> Ipv4Addr {
        Ipv4Addr::from(u32::from(self.pool_prefix4) | u32::from(id))
    }

    /// Mote id (low 16 bits) of a mesh address.
    pub fn mote_id(&self, a: Ipv6Addr) -> Result<u16, AddrMapError> {
        if self.is_mesh(a) {
            Ok(u128::from(a) as u16)
        } else {
            Err(AddrMapError::NotMeshAddress(a))
        }
    }

    pub fn mote6_to_virtual4(&self, a: Ipv6Addr) -> Result<Ipv4Addr, AddrMapError> {
        self.mote_id(a).map(|id| self.mote_virtual4(id))
    }

    pub fn virtual4_to_mote6(&self, v: Ipv4Addr) -> Result<Ipv6Addr, AddrMapError> {
        if self.in_pool(v) {
            Ok(self.mote_address(u32::from(v) as u16))
        } else {
            Err(AddrMapError::NotPoolAddress(v))
        }
    }

    pub fn host4_to_virtual6(&self, h: Ipv4Addr) -> Ipv6Addr {
        Ipv6Addr::from(u128::from(self.gw_prefix6) | u128::from(u32::from(h)))
    }

    pub fn virtual6_to_host4(&self, a: Ipv6Addr) -> Result<Ipv4Addr, AddrMapError> {
        if self.is_gateway_prefixed(a) {
            Ok(Ipv4Addr::from(u128::from(a) as u32))
        } else {
            Err(AddrMapError::NotGatewayPrefix(a))
        }
    }
}
