use meshgate_core::config::MiddlewareConfig;
use meshgate_core::reading::SensorReading;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("watts_mw {got} exceeds the plausible maximum {max}")]
    Implausible { got: u32, max: u64 },
    #[error("timestamp {got} is more than {skew} ms from the server clock {now}")]
    ClockSkew { got: u64, now: u64, skew: u64 },
}

/// Plausibility checks applied before anything is stored.
#[derive(Debug, Clone, Copy)]
pub struct Filter {
    pub max_plausible_mw: u64,
    pub clock_skew_ms: u64,
}

impl Filter {
    pub fn from_config(c: &MiddlewareConfig) -> Self {
        Filter { max_plausible_mw: c.max_plausible_mw, clock_skew_ms: c.clock_skew_ms }
    }

    pub fn check(&self, r: &SensorReading, now_ms: u64) -> Result<(), Rejection> {
        if r.watts_mw as u64 > self.max_plausible_mw {
            return Err(Rejection::Implausible { got: r.watts_mw, max: self.max_plausible_mw });
        }
        if r.timestamp_ms.abs_diff(now_ms) > self.clock_skew_ms {
            return Err(Rejection::ClockSkew { got: r.timestamp_ms, now: now_ms, skew: self.clock_skew_ms });
        }
        Ok(())
    }
}
