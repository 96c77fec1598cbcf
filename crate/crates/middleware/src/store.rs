//! Time series of accepted readings: an append-only JSON-lines log with an
//! in-memory index rebuilt on open.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use meshgate_core::reading::SensorReading;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inserted {
    Accepted,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub appliance_id: u8,
    pub samples: usize,
    pub mean_watts: f64,
}

#[derive(Debug, Default)]
pub struct ReadingStore {
    log: Option<(PathBuf, File)>,
    /// Per (mote, appliance), strictly increasing in seq.
    series: BTreeMap<(u16, u8), Vec<SensorReading>>,
    seen: BTreeSet<(u16, u32)>,
}

impl ReadingStore {
    pub fn memory() -> Self {
        Self::default()
    }

    /// Opens or creates the log at `path` and replays it. A torn final line
    /// from an interrupted append is ignored.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::default();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                if let Ok(r) = serde_json::from_str::<SensorReading>(&line?) {
                    store.index(r);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.log = Some((path, file));
        Ok(store)
    }

    fn index(&mut self, r: SensorReading) -> Inserted {
        if !self.seen.insert((r.mote_id, r.seq)) {
            return Inserted::Duplicate;
        }
        let s = self.series.entry((r.mote_id, r.appliance_id)).or_default();
        let at = s.partition_point(|x| x.seq < r.seq);
        s.insert(at, r);
        Inserted::Accepted
    }

    pub fn insert(&mut self, r: SensorReading) -> std::io::Result<Inserted> {
        if self.seen.contains(&(r.mote_id, r.seq)) {
            return Ok(Inserted::Duplicate);
        }
        if let Some((_, f)) = self.log.as_mut() {
            let mut line = serde_json::to_vec(&r).expect("reading serialises");
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(self.index(r))
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn motes(&self) -> BTreeMap<u16, BTreeSet<u8>> {
        let mut m: BTreeMap<u16, BTreeSet<u8>> = BTreeMap::new();
        for &(mote, appliance) in self.series.keys() {
            m.entry(mote).or_default().insert(appliance);
        }
        m
    }

    fn of_mote(&self, mote: u16) -> impl Iterator<Item = &Vec<SensorReading>> {
        self.series.range((mote, 0)..=(mote, u8::MAX)).map(|(_, s)| s)
    }

    pub fn series(&self, mote: u16, appliance: u8) -> &[SensorReading] {
        self.series.get(&(mote, appliance)).map_or(&[], |s| s.as_slice())
    }

    /// The reading with the highest seq.
    pub fn latest(&self, mote: u16) -> Option<SensorReading> {
        self.of_mote(mote).filter_map(|s| s.last()).max_by_key(|r| r.seq).copied()
    }

    /// Readings stamped at or after `since_ms`, in seq order.
    pub fn window(&self, mote: u16, since_ms: u64) -> Vec<SensorReading> {
        let mut out: Vec<SensorReading> =
            self.of_mote(mote).flatten().filter(|r| r.timestamp_ms >= since_ms).copied().collect();
        out.sort_by_key(|r| r.seq);
        out
    }

    pub fn aggregates(&self, mote: u16, since_ms: u64) -> Vec<Aggregate> {
        self.series
            .range((mote, 0)..=(mote, u8::MAX))
            .filter_map(|(&(_, appliance_id), s)| {
                let w: Vec<f64> = s.iter().filter(|r| r.timestamp_ms >= since_ms).map(|r| r.watts()).collect();
                (!w.is_empty()).then(|| Aggregate {
                    appliance_id,
                    samples: w.len(),
                    mean_watts: w.iter().sum::<f64>() / w.len() as f64,
                })
            })
            .collect()
    }

    /// Drops readings stamped before `cutoff_ms` and compacts the log.
    pub fn prune(&mut self, cutoff_ms: u64) -> std::io::Result<usize> {
        let before = self.seen.len();
        for s in self.series.values_mut() {
            s.retain(|r| r.timestamp_ms >= cutoff_ms);
        }
        self.series.retain(|_, s| !s.is_empty());
        self.seen = self.series.values().flatten().map(|r| (r.mote_id, r.seq)).collect();
        let dropped = before - self.seen.len();
        if dropped > 0 {
            if let Some((path, file)) = self.log.as_mut() {
                let tmp = path.with_extension("compact");
                let mut out = File::create(&tmp)?;
                for r in self.series.values().flatten() {
                    serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
                    out.write_all(b"\n")?;
                }
                out.sync_all()?;
                fs::rename(&tmp, &*path)?;
                *file = OpenOptions::new().append(true).open(&*path)?;
            }
        }
        Ok(dropped)
    }
}
