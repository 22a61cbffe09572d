//! Matching published diagnosis keys against a device's local observations.

use std::collections::HashMap;

use super::keys::{decrypt_aem, derive_aemk, expand_diagnosis_key, Aem, RotationSchedule, Rpi, Tek};
use crate::Position;

/// A protocol advertisement as stored by the scanning device.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub rpi: Rpi,
    pub aem: Aem,
    pub rssi_dbm: i16,
    pub scan_time: u64,
    pub location: Position,
}

/// A TEK as downloaded from the health authority, tagged with the upload
/// it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiagnosisKey {
    pub diagnosis_id: u64,
    pub tek: Tek,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatch {
    pub diagnosis_id: u64,
    pub tek_day: u32,
    pub interval_index: u32,
    pub rpi: Rpi,
    pub scan_time: u64,
    pub rssi_dbm: i16,
    pub tx_power_dbm: i8,
    pub location: Position,
}

impl ExposureMatch {
    pub fn attenuation_db(&self) -> i32 {
        self.tx_power_dbm as i32 - self.rssi_dbm as i32
    }
}

struct Candidate {
    key_idx: usize,
    interval: u32,
    window: (u64, u64),
}

fn in_window(t: u64, window: (u64, u64), tolerance_s: u64) -> bool {
    t >= window.0.saturating_sub(tolerance_s) && t < window.1 + tolerance_s
}

/// Every observation whose identifier was produced by one of `keys` and
/// whose scan time falls inside that identifier's validity window widened
/// by `clock_tolerance_s` on both sides. Results follow observation order,
/// then key order.
pub fn match_observations(
    keys: &[DiagnosisKey],
    store: &[Observation],
    schedule: &RotationSchedule,
    clock_tolerance_s: u64,
) -> Vec<ExposureMatch> {
    let mut index: HashMap<Rpi, Vec<Candidate>> = HashMap::new();
    for (key_idx, key) in keys.iter().enumerate() {
        for (interval, rpi) in expand_diagnosis_key(&key.tek, schedule) {
            index.entry(rpi).or_default().push(Candidate {
                key_idx,
                interval,
                window: schedule.window(key.tek.day_index, interval),
            });
        }
    }

    let aemks: Vec<_> = keys.iter().map(|k| derive_aemk(&k.tek)).collect();
    let mut out = Vec::new();
    for obs in store {
        let Some(cands) = index.get(&obs.rpi) else {
            continue;
        };
        for c in cands {
            if !in_window(obs.scan_time, c.window, clock_tolerance_s) {
                continue;
            }
            let key = &keys[c.key_idx];
            out.push(ExposureMatch {
                diagnosis_id: key.diagnosis_id,
                tek_day: key.tek.day_index,
                interval_index: c.interval,
                rpi: obs.rpi,
                scan_time: obs.scan_time,
                rssi_dbm: obs.rssi_dbm,
                tx_power_dbm: decrypt_aem(&aemks[c.key_idx], &obs.rpi, &obs.aem),
                location: obs.location,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaen::keys::{derive_rpi, derive_rpik, encrypt_aem, generate_tek, DeviceSeed};

    fn obs_for(tek: &Tek, interval: u32, t: u64) -> Observation {
        let sched = RotationSchedule::default();
        let rpi = derive_rpi(&derive_rpik(tek), interval, &sched).unwrap();
        Observation {
            rpi,
            aem: encrypt_aem(&derive_aemk(tek), &rpi, -12),
            rssi_dbm: -60,
            scan_time: t,
            location: Position::new(0.0, 0.0),
        }
    }

    #[test]
    fn in_window_observation_matches_and_decrypts_power() {
        let tek = generate_tek(&DeviceSeed::derive(1, 0), 0);
        let keys = [DiagnosisKey { diagnosis_id: 1, tek }];
        let store = [obs_for(&tek, 1, 7_300)];
        let m = match_observations(&keys, &store, &RotationSchedule::default(), 0);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].interval_index, 1);
        assert_eq!(m[0].tx_power_dbm, -12);
        assert_eq!(m[0].attenuation_db(), 48);
    }

    #[test]
    fn rebroadcast_three_hours_late_is_rejected() {
        let tek = generate_tek(&DeviceSeed::derive(1, 0), 0);
        let keys = [DiagnosisKey { diagnosis_id: 1, tek }];
        // interval 0 ends at 7200; replayed at 7200 + 3h
        let store = [obs_for(&tek, 0, 7_200 + 10_800)];
        assert!(match_observations(&keys, &store, &RotationSchedule::default(), 0).is_empty());
    }

    #[test]
    fn expiry_boundary_is_exclusive() {
        let tek = generate_tek(&DeviceSeed::derive(1, 0), 0);
        let keys = [DiagnosisKey { diagnosis_id: 1, tek }];
        let sched = RotationSchedule::default();
        for tol in [0u64, 60] {
            let end = 7_200 + tol;
            assert!(match_observations(&keys, &[obs_for(&tek, 0, end)], &sched, tol).is_empty());
            assert_eq!(
                match_observations(&keys, &[obs_for(&tek, 0, end - 1)], &sched, tol).len(),
                1
            );
        }
    }

    #[test]
    fn tolerance_extends_window_start() {
        let tek = generate_tek(&DeviceSeed::derive(1, 0), 0);
        let keys = [DiagnosisKey { diagnosis_id: 1, tek }];
        let sched = RotationSchedule::default();
        let early = [obs_for(&tek, 1, 7_200 - 30)];
        assert!(match_observations(&keys, &early, &sched, 0).is_empty());
        assert_eq!(match_observations(&keys, &early, &sched, 30).len(), 1);
    }

    #[test]
    fn unrelated_observations_do_not_match() {
        let tek = generate_tek(&DeviceSeed::derive(1, 0), 0);
        let other = generate_tek(&DeviceSeed::derive(1, 1), 0);
        let keys = [DiagnosisKey { diagnosis_id: 1, tek }];
        let store = [obs_for(&other, 0, 100)];
        assert!(match_observations(&keys, &store, &RotationSchedule::default(), 0).is_empty());
    }
}
