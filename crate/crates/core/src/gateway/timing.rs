use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::stats::{self, Bin, InsufficientSamples};

/// Per-packet transformation durations in microseconds. Clones share the
/// same log, so both pump directions may append concurrently.
#[derive(Debug, Clone, Default)]
pub struct TimingLog(Arc<Mutex<Vec<f64>>>);

impl TimingLog {
    pub fn push(&self, micros: f64) {
        self.0.lock().expect("timing log poisoned").push(micros);
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("timing log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<f64> {
        self.0.lock().expect("timing log poisoned").clone()
    }

    pub fn clear(&self) {
        self.0.lock().expect("timing log poisoned").clear();
    }

    pub fn report(&self, bin_us: f64) -> Result<TimingReport, InsufficientSamples> {
        TimingReport::from_samples(self.snapshot(), bin_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub mean_us: f64,
    pub jitter_us: f64,
    pub bins: Vec<Bin>,
    pub samples_us: Vec<f64>,
}

impl TimingReport {
    pub fn from_samples(samples_us: Vec<f64>, bin_us: f64) -> Result<Self, InsufficientSamples> {
        let s = stats::summarize(&samples_us)?;
        Ok(TimingReport { mean_us: s.mean, jitter_us: s.jitter, bins: stats::histogram(&samples_us, bin_us), samples_us })
    }

    /// `packet_index,micros` rows with a header line.
    pub fn csv(&self) -> String {
        let mut out = String::from("packet_index,micros\n");
        for (i, us) in self.samples_us.iter().enumerate() {
            out.push_str(&format!("{i},{us:.3}\n"));
        }
        out
    }
}
