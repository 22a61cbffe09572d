//! Exposure risk scoring over matched observations.
//!
//! Matches are folded into contacts: runs of sightings of the same
//! identifier with no gap longer than `max_gap_beacons` beacon intervals.
//! Each contact contributes `minutes × attenuation_weight`, where the
//! weight is a step function of its mean attenuation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::keys::Rpi;
use super::matching::ExposureMatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    pub beacon_interval_s: u64,
    pub max_gap_beacons: u64,
    pub attenuation_threshold_db: i32,
    pub alert_threshold: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            beacon_interval_s: 10,
            max_gap_beacons: 2,
            attenuation_threshold_db: 60,
            alert_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub diagnosis_id: u64,
    pub rpi: Rpi,
    pub first_seen: u64,
    pub last_seen: u64,
    pub sightings: usize,
    pub mean_attenuation_db: f64,
}

impl Contact {
    pub fn duration_minutes(&self, beacon_interval_s: u64) -> f64 {
        (self.last_seen - self.first_seen + beacon_interval_s) as f64 / 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskAssessment {
    pub score: f64,
    pub alert: bool,
    pub contacts: Vec<Contact>,
}

/// Groups matches into contacts. Output is sorted by (diagnosis, rpi,
/// first_seen) regardless of input order.
pub fn group_contacts(matches: &[ExposureMatch], cfg: &RiskConfig) -> Vec<Contact> {
    let mut by_rpi: BTreeMap<(u64, Rpi), Vec<(u64, i32)>> = BTreeMap::new();
    for m in matches {
        by_rpi
            .entry((m.diagnosis_id, m.rpi))
            .or_default()
            .push((m.scan_time, m.attenuation_db()));
    }

    let max_gap = cfg.max_gap_beacons * cfg.beacon_interval_s;
    let mut contacts = Vec::new();
    for ((diagnosis_id, rpi), mut sightings) in by_rpi {
        sightings.sort_unstable();
        let mut run: Vec<(u64, i32)> = Vec::new();
        let flush = |run: &mut Vec<(u64, i32)>, out: &mut Vec<Contact>| {
            if run.is_empty() {
                return;
            }
            let sum: i64 = run.iter().map(|&(_, a)| a as i64).sum();
            out.push(Contact {
                diagnosis_id,
                rpi,
                first_seen: run[0].0,
                last_seen: run[run.len() - 1].0,
                sightings: run.len(),
                mean_attenuation_db: sum as f64 / run.len() as f64,
            });
            run.clear();
        };
        for s in sightings {
            if let Some(&(prev, _)) = run.last() {
                if s.0 - prev > max_gap {
                    flush(&mut run, &mut contacts);
                }
            }
            run.push(s);
        }
        flush(&mut run, &mut contacts);
    }
    contacts
}

pub fn risk_score(matches: &[ExposureMatch], cfg: &RiskConfig) -> RiskAssessment {
    let contacts = group_contacts(matches, cfg);
    let score = contacts
        .iter()
        .map(|c| {
            let weight = if c.mean_attenuation_db <= cfg.attenuation_threshold_db as f64 {
                1.0
            } else {
                0.0
            };
            c.duration_minutes(cfg.beacon_interval_s) * weight
        })
        .fold(0.0, |acc, x| acc + x);
    RiskAssessment {
        score,
        alert: score >= cfg.alert_threshold,
        contacts,
    }
}
