//! The two measurement campaigns: delay versus traffic in the mesh, and the
//! gateway's per-packet translation time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::gateway::{Collector, DurableBuffer, Gateway, GatewayParams, TimingReport};
use crate::net::checksum::PseudoHeader;
use crate::net::{Ipv4Packet, MINI_TCP_PROTOCOL};
use crate::sim::{DelaySample, World, WorldError, WorldOptions};
use crate::stats::{summarize, InsufficientSamples, Summary};
use crate::transport::{Flags, Segment, COMMAND_PORT};
use crate::SimTime;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{motes} motes: {source}")]
    World { motes: u16, source: WorldError },
    #[error("{motes} motes: {source}")]
    Samples { motes: u16, source: InsufficientSamples },
    #[error("translation timing: {0}")]
    Timing(#[from] InsufficientSamples),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficLevel {
    pub motes: u16,
    pub summary: Summary,
    pub samples: Vec<DelaySample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficReport {
    pub seed: u64,
    pub duration_s: u64,
    pub warmup_s: u64,
    pub levels: Vec<TrafficLevel>,
}

impl TrafficReport {
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("motes,samples,mean_us,jitter_us,min_us,max_us\n");
        for l in &self.levels {
            let m = &l.summary;
            s += &format!("{},{},{:.3},{:.3},{:.3},{:.3}\n", l.motes, m.count, m.mean, m.jitter, m.min, m.max);
        }
        s
    }

    pub fn samples_csv(&self) -> String {
        let mut s = String::from("motes,mote_id,seq,sent_us,received_us,delay_us\n");
        for l in &self.levels {
            for d in &l.samples {
                s += &format!("{},{},{},{},{},{}\n", l.motes, d.mote_id, d.seq, d.sent.0, d.received.0, d.delay().0);
            }
        }
        s
    }
}

/// The scenario for one traffic level: the base scenario resized.
pub fn level_config(base: &Config, motes: u16) -> Config {
    let mut c = base.clone();
    c.topology.motes = motes;
    c
}

pub fn run_traffic_level(cfg: &Config) -> Result<TrafficLevel, ExperimentError> {
    let motes = cfg.topology.motes;
    let mut w = World::new(cfg, WorldOptions::new(Box::new(Collector::default())))
        .map_err(|source| ExperimentError::World { motes, source })?;
    w.run();
    let warmup = SimTime::from_secs(cfg.experiment.warmup_s);
    let samples: Vec<DelaySample> = w.delays().iter().filter(|d| d.sent >= warmup).copied().collect();
    let delays: Vec<f64> = samples.iter().map(|d| d.delay().0 as f64).collect();
    let summary = summarize(&delays).map_err(|source| ExperimentError::Samples { motes, source })?;
    Ok(TrafficLevel { motes, summary, samples })
}

/// Delay and jitter for each mote count, one independent run per count.
pub fn experiment_traffic(base: &Config, counts: &[u16]) -> Result<TrafficReport, ExperimentError> {
    let levels = crate::sweep::map(counts, |&n| run_traffic_level(&level_config(base, n)));
    Ok(TrafficReport {
        seed: base.seed,
        duration_s: base.duration_s,
        warmup_s: base.experiment.warmup_s,
        levels: levels.into_iter().collect::<Result<_, _>>()?,
    })
}

/// A command segment from the external client to a mote, as it would
/// arrive at the gateway.
pub fn command_packet(cfg: &Config, mote_id: u16, seq: u32) -> Vec<u8> {
    let (src, dst) = (cfg.gateway.client_ipv4, cfg.addrmap.mote_virtual4(mote_id));
    let seg = Segment { src_port: 49152, dst_port: COMMAND_PORT, seq, ack: 0, flags: Flags::ACK, payload: vec![1, 1] };
    let pseudo = PseudoHeader::V4 { src, dst, protocol: MINI_TCP_PROTOCOL };
    Ipv4Packet::new(src, dst, MINI_TCP_PROTOCOL, 64, seg.encode(&pseudo)).encode().expect("small packet")
}

fn pump(cfg: &Config, packets: usize) -> Gateway {
    let mut gw = Gateway::new(GatewayParams::from_config(cfg), DurableBuffer::memory(), Box::new(Collector::default()));
    let motes = cfg.topology.motes.max(1);
    for i in 0..packets {
        let mote = 1 + (i % motes as usize) as u16;
        gw.on_external(&command_packet(cfg, mote, i as u32), SimTime::ZERO);
    }
    gw
}

/// Wall-clock time for the gateway to translate `packets` IPv4 packets into
/// framed IPv6. A separate gateway runs the warm-up so its samples never mix.
pub fn experiment_translation(cfg: &Config, packets: usize) -> Result<TimingReport, ExperimentError> {
    drop(pump(cfg, cfg.experiment.xlat_warmup));
    let gw = pump(cfg, packets);
    Ok(gw.timing().report(cfg.experiment.histogram_bin_us as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::channel::airtime;
    use crate::stats::mean;

    #[test]
    fn translation_report_ships_its_raw_samples() {
        let cfg = Config::defaults();
        let r = experiment_translation(&cfg, 200).unwrap();
        assert_eq!(r.samples_us.len(), 200);
        assert!((r.mean_us - mean(&r.samples_us)).abs() < 1e-9);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<u64>(), 200);
    }

    #[test]
    fn lone_mote_delay_is_the_link_formula() {
        let cfg = Config::parse("duration_s = 30\n[topology]\npreset = \"cluster\"\nmotes = 1\n").unwrap();
        let level = run_traffic_level(&cfg).unwrap();
        // Link header, dispatch, fixed IPv6 fields, elided source, the
        // off-mesh destination in full, transport header, one reading.
        let frame = 6 + 1 + 8 + 2 + 16 + 16 + crate::reading::READING_LEN;
        let expect = cfg.topology.base_latency_us + airtime(frame).0 + cfg.serial.latency_us;
        assert!(level.samples.len() >= 20);
        for d in &level.samples {
            assert_eq!(d.delay().0, expect, "{d:?}");
        }
    }
}
