//! Threshold automation: switch an appliance off once its draw has stayed
//! above a limit for long enough.

use meshgate_core::config::RuleConfig;

use crate::store::ReadingStore;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Firing {
    pub rule: usize,
    pub mote_id: u16,
    pub appliance_id: u8,
}

#[derive(Debug, Clone)]
struct Armed {
    cfg: RuleConfig,
    last_seq: Option<u32>,
    /// Timestamp of the first reading in the current excursion.
    excursion_start: Option<u64>,
    fired: bool,
}

#[derive(Debug, Clone)]
pub struct RuleEngine {
    rules: Vec<Armed>,
}

impl RuleEngine {
    pub fn new(rules: &[RuleConfig]) -> Self {
        RuleEngine {
            rules: rules
                .iter()
                .map(|cfg| Armed { cfg: cfg.clone(), last_seq: None, excursion_start: None, fired: false })
                .collect(),
        }
    }

    /// Consumes readings stored since the last call. Each excursion above
    /// the threshold yields at most one firing; a reading at or below the
    /// threshold ends the excursion and re-arms the rule.
    pub fn evaluate(&mut self, store: &ReadingStore) -> Vec<Firing> {
        let mut out = Vec::new();
        for (i, rule) in self.rules.iter_mut().enumerate() {
            let series = store.series(rule.cfg.mote_id, rule.cfg.appliance_id);
            let from = rule.last_seq.map_or(0, |s| series.partition_point(|r| r.seq <= s));
            for r in &series[from..] {
                if r.watts() > rule.cfg.threshold_watts {
                    rule.excursion_start.get_or_insert(r.timestamp_ms);
                } else {
                    rule.excursion_start = None;
                    rule.fired = false;
                }
                rule.last_seq = Some(r.seq);
                let sustained = rule
                    .excursion_start
                    .is_some_and(|t0| r.timestamp_ms - t0 >= rule.cfg.sustain_seconds * 1000);
                if sustained && !rule.fired {
                    rule.fired = true;
                    out.push(Firing { rule: i, mote_id: rule.cfg.mote_id, appliance_id: rule.cfg.appliance_id });
                }
            }
        }
        out
    }

    /// The command for a firing did not go through; the next evaluation
    /// that still sees the excursion fires again.
    pub fn failed(&mut self, rule: usize) {
        if let Some(r) = self.rules.get_mut(rule) {
            r.fired = false;
            if let Some(last) = r.last_seq.as_mut() {
                *last = last.saturating_sub(1);
            }
        }
    }
}
