//! Actors of the simulation: honest exposure-notification devices (with or
//! without the contact-hash defense) and the two relay adversaries sharing a
//! malicious database.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::actguard::{self, MyContactsTable, Neighborhood, PositiveTable, Verdict};
use crate::backend::{BackendApi, BackendError, DiagnosisRequest};
use crate::gaen::{
    derive_aemk, derive_rpi, derive_rpik, encrypt_aem, generate_tek, match_observations, risk_score,
    DeviceSeed, DiagnosisKey, ExposureMatch, Observation, RiskAssessment, RiskConfig, RotationSchedule,
    Rpi, Tek,
};
use crate::radio::{decode_advertisement, AdvertisementPacket, Decoded, Delivery, NodeId, Transmission};
use crate::{Position, Quantizer};

/// Days of keys a device keeps (today plus the 13 before it).
pub const TEK_RETENTION_DAYS: u32 = 14;

/// Protocol parameters every honest device shares.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeviceParams {
    pub schedule: RotationSchedule,
    pub quantizer: Quantizer,
    pub neighborhood: Neighborhood,
    pub risk: RiskConfig,
    pub clock_tolerance_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CurrentId {
    day: u32,
    interval: u32,
    packet: AdvertisementPacket,
}

/// Defense state carried by devices that run it.
#[derive(Debug, Clone, Default)]
pub struct ActGuardState {
    pub contacts: MyContactsTable,
    pub positives: PositiveTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TickOutcome {
    pub observations: usize,
    pub new_records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosisReceipt {
    pub diagnosis_id: u64,
    pub teks: usize,
    pub hashes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureStatus {
    pub gaen_alert: bool,
    pub assessment: RiskAssessment,
    pub matches: usize,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone)]
pub struct HonestDevice {
    pub id: String,
    pub node: NodeId,
    pub position: Position,
    pub tx_power_dbm: i8,
    seed: DeviceSeed,
    teks: BTreeMap<u32, Tek>,
    current: Option<CurrentId>,
    pub observations: Vec<Observation>,
    pub actguard: Option<ActGuardState>,
    pub diagnosis_id: Option<u64>,
    last_chunk_index: u64,
    diagnosis_keys: Vec<DiagnosisKey>,
}

impl HonestDevice {
    pub fn new(
        id: impl Into<String>,
        node: NodeId,
        seed: DeviceSeed,
        position: Position,
        tx_power_dbm: i8,
        actguard_enabled: bool,
    ) -> Self {
        Self {
            id: id.into(),
            node,
            position,
            tx_power_dbm,
            seed,
            teks: BTreeMap::new(),
            current: None,
            observations: Vec::new(),
            actguard: actguard_enabled.then(ActGuardState::default),
            diagnosis_id: None,
            last_chunk_index: 0,
            diagnosis_keys: Vec::new(),
        }
    }

    pub fn actguard_enabled(&self) -> bool {
        self.actguard.is_some()
    }

    pub fn teks(&self) -> impl Iterator<Item = &Tek> {
        self.teks.values()
    }

    /// Rolls keys and identifier forward to `now`. Keys older than the
    /// retention window are dropped.
    pub fn refresh_identity(&mut self, now: u64, schedule: &RotationSchedule) {
        let day = schedule.day_of(now);
        let interval = schedule.interval_of(now);
        if self
            .current
            .is_some_and(|c| c.day == day && c.interval == interval)
        {
            return;
        }
        let seed = self.seed;
        let tek = *self
            .teks
            .entry(day)
            .or_insert_with(|| generate_tek(&seed, day));
        let oldest = day.saturating_sub(TEK_RETENTION_DAYS - 1);
        self.teks.retain(|&d, _| d >= oldest);

        let rpi = derive_rpi(&derive_rpik(&tek), interval, schedule).expect("interval from schedule");
        let aem = encrypt_aem(&derive_aemk(&tek), &rpi, self.tx_power_dbm);
        self.current = Some(CurrentId {
            day,
            interval,
            packet: AdvertisementPacket::new(rpi, aem),
        });
    }

    pub fn current_rpi(&self) -> Option<Rpi> {
        self.current.map(|c| c.packet.rpi)
    }

    /// This tick's advertisement.
    pub fn advertise(&mut self, now: u64, schedule: &RotationSchedule) -> Transmission {
        self.refresh_identity(now, schedule);
        let packet = self.current.expect("refreshed").packet;
        Transmission {
            sender: self.node,
            position: self.position,
            tx_power_dbm: self.tx_power_dbm,
            payload: packet.to_bytes().to_vec(),
        }
    }

    /// Stores every protocol advertisement addressed to this device and,
    /// with the defense on, the matching contact record.
    pub fn honest_tick<'a>(
        &mut self,
        deliveries: impl IntoIterator<Item = &'a Delivery>,
        now: u64,
        params: &DeviceParams,
    ) -> TickOutcome {
        self.refresh_identity(now, &params.schedule);
        let own = self.current_rpi().expect("refreshed");
        let mut out = TickOutcome::default();
        for d in deliveries {
            if d.receiver != self.node {
                continue;
            }
            let Decoded::Protocol { rpi, aem } = decode_advertisement(&d.payload) else {
                continue;
            };
            if rpi == own {
                continue;
            }
            self.observations.push(Observation {
                rpi,
                aem,
                rssi_dbm: d.rssi_dbm,
                scan_time: now,
                location: self.position,
            });
            out.observations += 1;
            if let Some(ag) = &mut self.actguard {
                let inserted = ag
                    .contacts
                    .record_contact(&own, &rpi, &self.position, now, &params.quantizer)
                    .expect("own identifier filtered above");
                out.new_records += inserted as usize;
            }
        }
        out
    }

    /// The request this device would send for `otp`.
    pub fn diagnosis_request(&self, otp: &str) -> DiagnosisRequest {
        let teks: Vec<Tek> = self.teks.values().copied().collect();
        let hashes = self.actguard.as_ref().map(|ag| ag.contacts.hashes());
        DiagnosisRequest::new(otp, &teks, hashes.as_deref())
    }

    /// Uploads retained keys (and contact hashes, with the defense on)
    /// under `otp`. On error the device is left untouched.
    pub fn diagnose_and_upload(
        &mut self,
        backend: &mut dyn BackendApi,
        otp: &str,
        now: u64,
    ) -> Result<DiagnosisReceipt, BackendError> {
        let req = self.diagnosis_request(otp);
        let diagnosis_id = backend.ingest_diagnosis(now, &req)?;
        self.diagnosis_id = Some(diagnosis_id);
        Ok(DiagnosisReceipt {
            diagnosis_id,
            teks: req.teks.len(),
            hashes: req.hashes.as_ref().map(Vec::len),
        })
    }

    /// Downloads new diagnoses, re-matches the whole observation store and,
    /// with the defense on, judges every matched diagnosis. Either every
    /// download succeeds and state is updated, or nothing changes.
    pub fn exposure_check(
        &mut self,
        backend: &mut dyn BackendApi,
        now: u64,
        params: &DeviceParams,
    ) -> Result<ExposureStatus, BackendError> {
        let chunks = backend.fetch_chunks(now, self.last_chunk_index)?;
        let mut batches = Vec::new();
        if self.actguard.is_some() {
            for c in &chunks {
                if let Some(b) = backend.fetch_hash_batch(now, c.index)? {
                    batches.push(b);
                }
            }
        }

        for c in &chunks {
            self.last_chunk_index = self.last_chunk_index.max(c.index);
            self.diagnosis_keys.extend(c.diagnosis_keys());
        }
        if let Some(ag) = &mut self.actguard {
            for b in batches {
                ag.positives.insert(b.diagnosis_id, b.hashes);
            }
        }
        Ok(self.assess(params))
    }

    /// Exposure state from the keys downloaded so far.
    pub fn assess(&self, params: &DeviceParams) -> ExposureStatus {
        let matches = self.matches(params);
        let assessment = risk_score(&matches, &params.risk);
        let verdicts = match &self.actguard {
            Some(ag) => actguard::verify_diagnoses(
                &matches,
                &ag.contacts,
                &ag.positives,
                &params.neighborhood,
                &params.quantizer,
            ),
            None => Vec::new(),
        };
        ExposureStatus {
            gaen_alert: assessment.alert,
            matches: matches.len(),
            assessment,
            verdicts,
        }
    }

    pub fn matches(&self, params: &DeviceParams) -> Vec<ExposureMatch> {
        let own: Vec<_> = match self.diagnosis_id {
            Some(id) => self
                .diagnosis_keys
                .iter()
                .filter(|k| k.diagnosis_id != id)
                .copied()
                .collect(),
            None => self.diagnosis_keys.clone(),
        };
        match_observations(&own, &self.observations, &params.schedule, params.clock_tolerance_s)
    }
}

/// A packet held by the adversaries, with capture metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedPacket {
    pub payload: Vec<u8>,
    pub capture_time: u64,
    pub source_place: String,
    pub sniffer: String,
}

/// Store shared by the sniffing and rebroadcasting adversaries.
/// Append-only; capture times never decrease.
#[derive(Debug, Clone, Default)]
pub struct MaliciousDatabase {
    entries: Vec<CapturedPacket>,
}

impl MaliciousDatabase {
    pub fn entries(&self) -> &[CapturedPacket] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, entry: CapturedPacket) {
        debug_assert!(self
            .entries
            .last()
            .is_none_or(|e| e.capture_time <= entry.capture_time));
        self.entries.push(entry);
    }

    pub fn contains_payload(&self, payload: &[u8]) -> bool {
        self.entries.iter().any(|e| e.payload == payload)
    }
}

#[derive(Debug, Clone)]
pub struct SnifferAdversary {
    pub id: String,
    pub node: NodeId,
    pub position: Position,
    pub place: String,
    pub captures: usize,
}

impl SnifferAdversary {
    pub fn new(id: impl Into<String>, node: NodeId, position: Position, place: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            node,
            position,
            place: place.into(),
            captures: 0,
        }
    }

    /// Copies every protocol packet it hears into the database, verbatim.
    pub fn sniff_tick<'a>(
        &mut self,
        deliveries: impl IntoIterator<Item = &'a Delivery>,
        now: u64,
        db: &mut MaliciousDatabase,
    ) -> usize {
        let mut n = 0;
        for d in deliveries {
            if d.receiver != self.node {
                continue;
            }
            if decode_advertisement(&d.payload) == Decoded::NotProtocolPacket {
                continue;
            }
            db.append(CapturedPacket {
                payload: d.payload.clone(),
                capture_time: now,
                source_place: self.place.clone(),
                sniffer: self.id.clone(),
            });
            n += 1;
        }
        self.captures += n;
        n
    }
}

#[derive(Debug, Clone)]
pub struct RebroadcastAdversary {
    pub id: String,
    pub node: NodeId,
    pub position: Position,
    pub tx_power_dbm: i8,
    pub relay_delay_s: u64,
    pub replay_ttl_s: u64,
    pub transmissions: usize,
}

impl RebroadcastAdversary {
    pub fn new(
        id: impl Into<String>,
        node: NodeId,
        position: Position,
        tx_power_dbm: i8,
        relay_delay_s: u64,
        replay_ttl_s: u64,
    ) -> Self {
        Self {
            id: id.into(),
            node,
            position,
            tx_power_dbm,
            relay_delay_s,
            replay_ttl_s,
            transmissions: 0,
        }
    }

    /// Payloads to replay at `now`: every entry captured in
    /// `(now - delay - ttl, now - delay]`, deduplicated by content in
    /// capture order.
    pub fn rebroadcast_tick(&mut self, db: &MaliciousDatabase, now: u64) -> Vec<Transmission> {
        let Some(newest) = now.checked_sub(self.relay_delay_s) else {
            return Vec::new();
        };
        let entries = db.entries();
        let hi = entries.partition_point(|e| e.capture_time <= newest);
        let lo = match newest.checked_sub(self.replay_ttl_s) {
            Some(oldest_excluded) => entries[..hi].partition_point(|e| e.capture_time <= oldest_excluded),
            None => 0,
        };
        let mut seen = HashSet::new();
        let out: Vec<_> = entries[lo..hi]
            .iter()
            .filter(|e| seen.insert(e.payload.as_slice()))
            .map(|e| Transmission {
                sender: self.node,
                position: self.position,
                tx_power_dbm: self.tx_power_dbm,
                payload: e.payload.clone(),
            })
            .collect();
        self.transmissions += out.len();
        out
    }
}

/// Identifiers an honest device has ever advertised, for tests that need
/// to tell relayed sightings apart from genuine ones.
pub fn advertised_rpis(device: &HonestDevice, schedule: &RotationSchedule) -> BTreeSet<Rpi> {
    device
        .teks()
        .flat_map(|t| crate::gaen::expand_diagnosis_key(t, schedule))
        .map(|(_, r)| r)
        .collect()
}
