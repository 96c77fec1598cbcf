use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::reading::SensorReading;

const LOG: &str = "buffer.jsonl";
const CURSOR: &str = "cursor";
const HWM: &str = "hwm.json";

/// Store-and-forward buffer with a per-mote high-water mark.
///
/// On disk: an append-only JSON-lines log, a cursor holding how many log
/// entries have been delivered, and the high-water marks. A memory-only
/// buffer has the same behaviour without persistence.
#[derive(Debug)]
pub struct DurableBuffer {
    dir: Option<PathBuf>,
    pending: VecDeque<SensorReading>,
    delivered_in_log: u64,
    hwm: BTreeMap<u16, u32>,
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

impl DurableBuffer {
    pub fn memory() -> Self {
        DurableBuffer { dir: None, pending: VecDeque::new(), delivered_in_log: 0, hwm: BTreeMap::new() }
    }

    /// Opens or creates a buffer in `dir`, recovering undelivered entries.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let cursor: u64 = match fs::read_to_string(dir.join(CURSOR)) {
            Ok(s) => s.trim().parse().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e),
        };
        let mut entries = Vec::new();
        match File::open(dir.join(LOG)) {
            Ok(f) => {
                for line in BufReader::new(f).lines() {
                    let line = line?;
                    // A torn final line from a crash mid-append is ignored.
                    match serde_json::from_str::<SensorReading>(&line) {
                        Ok(r) => entries.push(r),
                        Err(_) => break,
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        let hwm: BTreeMap<u16, u32> = match fs::read(dir.join(HWM)) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        let skip = (cursor as usize).min(entries.len());
        let mut b = DurableBuffer {
            dir: Some(dir),
            pending: entries.into_iter().skip(skip).collect(),
            delivered_in_log: skip as u64,
            hwm,
        };
        for r in b.pending.clone() {
            let e = b.hwm.entry(r.mote_id).or_insert(0);
            *e = (*e).max(r.seq);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn front(&self) -> Option<&SensorReading> {
        self.pending.front()
    }

    pub fn pending(&self) -> impl Iterator<Item = &SensorReading> {
        self.pending.iter()
    }

    /// True when `r` is at or below its mote's high-water mark.
    pub fn is_duplicate(&self, r: &SensorReading) -> bool {
        self.hwm.get(&r.mote_id).is_some_and(|&s| r.seq <= s)
    }

    /// Raises the high-water mark past `r`.
    pub fn mark_accepted(&mut self, r: &SensorReading) -> io::Result<()> {
        let e = self.hwm.entry(r.mote_id).or_insert(0);
        if r.seq <= *e {
            return Ok(());
        }
        *e = r.seq;
        if let Some(dir) = &self.dir {
            write_synced(&dir.join(HWM), &serde_json::to_vec(&self.hwm).expect("hwm serialises"))?;
        }
        Ok(())
    }

    /// Appends `r` durably.
    pub fn push(&mut self, r: SensorReading) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(LOG))?;
            let mut line = serde_json::to_vec(&r).expect("reading serialises");
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.pending.push_back(r);
        Ok(())
    }

    /// Drops the `n` oldest entries after they were delivered. The log is
    /// truncated once nothing remains.
    pub fn pop_delivered(&mut self, n: usize) -> io::Result<()> {
        let n = n.min(self.pending.len());
        self.pending.drain(..n);
        self.delivered_in_log += n as u64;
        let Some(dir) = &self.dir else { return Ok(()) };
        if self.pending.is_empty() {
            File::create(dir.join(LOG))?.sync_all()?;
            self.delivered_in_log = 0;
        }
        write_synced(&dir.join(CURSOR), self.delivered_in_log.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(mote: u16, seq: u32) -> SensorReading {
        SensorReading { mote_id: mote, appliance_id: 1, seq, timestamp_ms: seq as u64 * 1000, watts_mw: 5 }
    }

    #[test]
    fn survives_reopen_with_partial_delivery() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut b = DurableBuffer::open(dir.path()).unwrap();
            for s in 1..=5 {
                b.push(r(1, s)).unwrap();
                b.mark_accepted(&r(1, s)).unwrap();
            }
            b.pop_delivered(2).unwrap();
        }
        let b = DurableBuffer::open(dir.path()).unwrap();
        let seqs: Vec<u32> = b.pending().map(|x| x.seq).collect();
        assert_eq!(seqs, vec![3, 4, 5]);
        assert!(b.is_duplicate(&r(1, 5)));
        assert!(!b.is_duplicate(&r(1, 6)));
    }

    #[test]
    fn full_flush_truncates_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = DurableBuffer::open(dir.path()).unwrap();
        b.push(r(2, 1)).unwrap();
        b.pop_delivered(1).unwrap();
        assert_eq!(fs::metadata(dir.path().join(LOG)).unwrap().len(), 0);
        let b = DurableBuffer::open(dir.path()).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn torn_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = DurableBuffer::open(dir.path()).unwrap();
        b.push(r(3, 1)).unwrap();
        OpenOptions::new().append(true).open(dir.path().join(LOG)).unwrap().write_all(b"{\"mote_id\":3,").unwrap();
        let b = DurableBuffer::open(dir.path()).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn high_water_mark_is_per_mote() {
        let mut b = DurableBuffer::memory();
        b.mark_accepted(&r(1, 10)).unwrap();
        assert!(b.is_duplicate(&r(1, 10)) && b.is_duplicate(&r(1, 3)));
        assert!(!b.is_duplicate(&r(2, 1)));
    }
}
