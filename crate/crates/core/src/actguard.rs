//! Location-bound contact hashes.
//!
//! Both endpoints of a contact hash the ordered identifier pair together
//! with a quantized location and time. A diagnosed user publishes their
//! digests; a contact confirms an exposure only if it can reproduce one of
//! them from its own records. Relayed sightings happen somewhere else, so
//! the victim's digests never line up with the publisher's.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gaen::{ExposureMatch, Rpi, SECONDS_PER_DAY};
use crate::geo::LatLon;
use crate::Position;

pub const CONTACT_HASH_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActGuardError {
    #[error("self-contact: both identifiers are {0}")]
    SelfContact(String),
    #[error("bucket length {0} s does not divide a day")]
    BadBucket(u64),
    #[error("cell size must be positive and finite")]
    BadCellSize,
    #[error("invalid contact hash hex: {0}")]
    BadHex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GeoCell {
    pub lat: i64,
    pub lon: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeBucket(pub i64);

/// Grid used to discretize location and time before hashing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer<T> {
    pub cell_size_deg: T,
    pub bucket_seconds: u64,
}

impl<T: Float> Quantizer<T> {
    pub fn new(cell_size_deg: T, bucket_seconds: u64) -> Result<Self, ActGuardError> {
        if !(cell_size_deg > T::zero() && cell_size_deg.is_finite()) {
            return Err(ActGuardError::BadCellSize);
        }
        if bucket_seconds == 0 || !SECONDS_PER_DAY.is_multiple_of(bucket_seconds) {
            return Err(ActGuardError::BadBucket(bucket_seconds));
        }
        Ok(Self {
            cell_size_deg,
            bucket_seconds,
        })
    }

    pub fn cell(&self, p: &LatLon<T>) -> GeoCell {
        let q = |v: T| (v / self.cell_size_deg).floor().to_i64().expect("finite coordinate");
        GeoCell {
            lat: q(p.lat),
            lon: q(p.lon),
        }
    }

    pub fn bucket(&self, t: u64) -> TimeBucket {
        TimeBucket((t / self.bucket_seconds) as i64)
    }

    pub fn quantize(&self, p: &LatLon<T>, t: u64) -> (GeoCell, TimeBucket) {
        (self.cell(p), self.bucket(t))
    }
}

impl Default for Quantizer<f64> {
    fn default() -> Self {
        Self {
            cell_size_deg: 0.001,
            bucket_seconds: 300,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContactHash(pub [u8; CONTACT_HASH_LEN]);

impl ContactHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ActGuardError> {
        let mut out = [0u8; CONTACT_HASH_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|_| ActGuardError::BadHex(s.to_owned()))?;
        Ok(Self(out))
    }
}

impl fmt::Debug for ContactHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContactHash({})", self.to_hex())
    }
}

/// Canonical 56-byte hash input: `low ‖ high ‖ cell.lat ‖ cell.lon ‖ bucket`,
/// integers as big-endian i64.
pub fn contact_hash_input(low: &Rpi, high: &Rpi, cell: GeoCell, bucket: TimeBucket) -> [u8; 56] {
    let mut buf = [0u8; 56];
    buf[..16].copy_from_slice(&low.0);
    buf[16..32].copy_from_slice(&high.0);
    buf[32..40].copy_from_slice(&cell.lat.to_be_bytes());
    buf[40..48].copy_from_slice(&cell.lon.to_be_bytes());
    buf[48..56].copy_from_slice(&bucket.0.to_be_bytes());
    buf
}

fn ordered(a: Rpi, b: Rpi) -> Result<(Rpi, Rpi), ActGuardError> {
    match a.cmp(&b) {
        std::cmp::Ordering::Less => Ok((a, b)),
        std::cmp::Ordering::Greater => Ok((b, a)),
        std::cmp::Ordering::Equal => Err(ActGuardError::SelfContact(a.to_hex())),
    }
}

/// SHA-256 over the lexicographically ordered identifier pair and the
/// quantized location and time.
pub fn contact_hash(
    rpi_a: &Rpi,
    rpi_b: &Rpi,
    cell: GeoCell,
    bucket: TimeBucket,
) -> Result<ContactHash, ActGuardError> {
    let (low, high) = ordered(*rpi_a, *rpi_b)?;
    Ok(hash_ordered(&low, &high, cell, bucket))
}

fn hash_ordered(low: &Rpi, high: &Rpi, cell: GeoCell, bucket: TimeBucket) -> ContactHash {
    let digest = Sha256::digest(contact_hash_input(low, high, cell, bucket));
    ContactHash(digest.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactRecord {
    pub rpi_low: Rpi,
    pub rpi_high: Rpi,
    pub cell: GeoCell,
    pub bucket: TimeBucket,
    pub hash: ContactHash,
}

impl ContactRecord {
    pub fn new(a: &Rpi, b: &Rpi, cell: GeoCell, bucket: TimeBucket) -> Result<Self, ActGuardError> {
        let (rpi_low, rpi_high) = ordered(*a, *b)?;
        Ok(Self {
            rpi_low,
            rpi_high,
            cell,
            bucket,
            hash: hash_ordered(&rpi_low, &rpi_high, cell, bucket),
        })
    }

    pub fn involves(&self, rpi: &Rpi) -> bool {
        self.rpi_low == *rpi || self.rpi_high == *rpi
    }
}

/// Local contact evidence, keyed by digest.
#[derive(Debug, Clone, Default)]
pub struct MyContactsTable {
    records: BTreeMap<ContactHash, ContactRecord>,
    by_rpi: HashMap<Rpi, Vec<ContactHash>>,
}

impl MyContactsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, h: &ContactHash) -> bool {
        self.records.contains_key(h)
    }

    pub fn records(&self) -> impl Iterator<Item = &ContactRecord> {
        self.records.values()
    }

    /// Records in which `rpi` is one of the two endpoints.
    pub fn records_with(&self, rpi: &Rpi) -> impl Iterator<Item = &ContactRecord> {
        self.by_rpi
            .get(rpi)
            .into_iter()
            .flatten()
            .map(|h| &self.records[h])
    }

    /// Digests in canonical (sorted) order, as uploaded on diagnosis.
    pub fn hashes(&self) -> Vec<ContactHash> {
        self.records.keys().copied().collect()
    }

    /// Inserts the record for this sighting. Returns `false` when the
    /// same (pair, cell, bucket) was already recorded.
    pub fn record_contact<T: Float>(
        &mut self,
        own_rpi: &Rpi,
        peer_rpi: &Rpi,
        own_position: &LatLon<T>,
        now: u64,
        quantizer: &Quantizer<T>,
    ) -> Result<bool, ActGuardError> {
        let (cell, bucket) = quantizer.quantize(own_position, now);
        let rec = ContactRecord::new(own_rpi, peer_rpi, cell, bucket)?;
        if self.records.contains_key(&rec.hash) {
            return Ok(false);
        }
        self.by_rpi.entry(rec.rpi_low).or_default().push(rec.hash);
        self.by_rpi.entry(rec.rpi_high).or_default().push(rec.hash);
        self.records.insert(rec.hash, rec);
        Ok(true)
    }
}

/// Downloaded digest batches of diagnosed users, by diagnosis id.
#[derive(Debug, Clone, Default)]
pub struct PositiveTable {
    batches: BTreeMap<u64, BTreeSet<ContactHash>>,
}

impl PositiveTable {
    /// Stores a batch. Existing batches are never replaced.
    pub fn insert(&mut self, diagnosis_id: u64, hashes: impl IntoIterator<Item = ContactHash>) {
        self.batches
            .entry(diagnosis_id)
            .or_insert_with(|| hashes.into_iter().collect());
    }

    pub fn batch(&self, diagnosis_id: u64) -> Option<&BTreeSet<ContactHash>> {
        self.batches.get(&diagnosis_id)
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerdictKind {
    ConfirmedContact,
    RelaySuspected,
    Unverifiable,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::ConfirmedContact => "ConfirmedContact",
            Self::RelaySuspected => "RelaySuspected",
            Self::Unverifiable => "Unverifiable",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub diagnosis_id: u64,
    pub matched_rpi: Rpi,
}

/// Verifier-side search window around the victim's own records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub cells: i64,
    pub buckets: i64,
}

impl Default for Neighborhood {
    fn default() -> Self {
        Self {
            cells: 1,
            buckets: 1,
        }
    }
}

impl Neighborhood {
    /// Digests the peer could have produced for `rec` if its quantized
    /// location or time differed by up to the configured steps.
    pub fn candidates(&self, rec: &ContactRecord) -> Vec<ContactHash> {
        let mut out = Vec::new();
        for dl in -self.cells..=self.cells {
            for dn in -self.cells..=self.cells {
                for db in -self.buckets..=self.buckets {
                    let cell = GeoCell {
                        lat: rec.cell.lat + dl,
                        lon: rec.cell.lon + dn,
                    };
                    out.push(hash_ordered(
                        &rec.rpi_low,
                        &rec.rpi_high,
                        cell,
                        TimeBucket(rec.bucket.0 + db),
                    ));
                }
            }
        }
        out
    }
}

fn confirms<'a>(
    records: impl Iterator<Item = &'a ContactRecord>,
    batch: &BTreeSet<ContactHash>,
    nb: &Neighborhood,
) -> bool {
    records
        .flat_map(|r| nb.candidates(r))
        .any(|h| batch.contains(&h))
}

fn nearby_records<'a>(
    table: &'a MyContactsTable,
    m: &'a ExposureMatch,
    bucket: TimeBucket,
    nb: &'a Neighborhood,
) -> impl Iterator<Item = &'a ContactRecord> {
    table
        .records_with(&m.rpi)
        .filter(move |r| (r.bucket.0 - bucket.0).abs() <= nb.buckets)
}

/// Judges one matched sighting against the diagnosed user's digest batch.
pub fn verify_exposure<T: Float>(
    m: &ExposureMatch,
    my_table: &MyContactsTable,
    positive_batch: Option<&BTreeSet<ContactHash>>,
    nb: &Neighborhood,
    quantizer: &Quantizer<T>,
) -> Verdict {
    let kind = match positive_batch {
        None => VerdictKind::Unverifiable,
        Some(b) if b.is_empty() => VerdictKind::Unverifiable,
        Some(batch) => {
            let bucket = quantizer.bucket(m.scan_time);
            if confirms(nearby_records(my_table, m, bucket, nb), batch, nb) {
                VerdictKind::ConfirmedContact
            } else {
                VerdictKind::RelaySuspected
            }
        }
    };
    Verdict {
        kind,
        diagnosis_id: m.diagnosis_id,
        matched_rpi: m.rpi,
    }
}

/// One verdict per diagnosis id present in `matches`. A diagnosis is
/// confirmed if any of its sightings is; the reported RPI is the first
/// confirming one, else the first matched.
pub fn verify_diagnoses<T: Float>(
    matches: &[ExposureMatch],
    my_table: &MyContactsTable,
    positives: &PositiveTable,
    nb: &Neighborhood,
    quantizer: &Quantizer<T>,
) -> Vec<Verdict> {
    let mut grouped: BTreeMap<u64, Vec<&ExposureMatch>> = BTreeMap::new();
    for m in matches {
        grouped.entry(m.diagnosis_id).or_default().push(m);
    }
    let mut out = Vec::new();
    for (diagnosis_id, ms) in grouped {
        let batch = positives.batch(diagnosis_id);
        let mut seen = BTreeSet::new();
        let mut verdict: Option<Verdict> = None;
        for m in ms {
            if !seen.insert((m.rpi, quantizer.bucket(m.scan_time))) {
                continue;
            }
            let v = verify_exposure(m, my_table, batch, nb, quantizer);
            let confirmed = v.kind == VerdictKind::ConfirmedContact;
            if verdict.is_none() || confirmed {
                verdict = Some(v);
            }
            if confirmed || batch.is_none_or(|b| b.is_empty()) {
                break;
            }
        }
        out.extend(verdict);
        debug_assert!(out.last().is_some_and(|v| v.diagnosis_id == diagnosis_id));
    }
    out
}

pub type DefaultQuantizer = Quantizer<f64>;

/// Convenience for the common `f64` case.
pub fn quantize(p: &Position, t: u64, q: &DefaultQuantizer) -> (GeoCell, TimeBucket) {
    q.quantize(p, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(b: u8) -> Rpi {
        Rpi([b; 16])
    }

    #[test]
    fn quantize_examples() {
        let q = Quantizer::default();
        assert_eq!(
            q.quantize(&Position::new(0.0, 0.0), 0),
            (GeoCell { lat: 0, lon: 0 }, TimeBucket(0))
        );
        assert_eq!(q.cell(&Position::new(0.0019, 0.0)).lat, 1);
        assert_eq!(q.cell(&Position::new(-0.0001, 0.0)).lat, -1);
        assert_eq!(q.bucket(299), TimeBucket(0));
        assert_eq!(q.bucket(301), TimeBucket(1));
    }

    #[test]
    fn quantizer_validates() {
        assert!(Quantizer::new(0.001_f64, 300).is_ok());
        assert_eq!(Quantizer::new(0.001_f64, 7), Err(ActGuardError::BadBucket(7)));
        assert_eq!(Quantizer::new(0.0_f64, 300), Err(ActGuardError::BadCellSize));
        assert!(Quantizer::new(0.001_f32, 300).is_ok());
    }

    #[test]
    fn hash_is_symmetric_and_sensitive() {
        let c = GeoCell { lat: 45_000, lon: 9_000 };
        let b = TimeBucket(12);
        let h = contact_hash(&r(1), &r(2), c, b).unwrap();
        assert_eq!(h, contact_hash(&r(2), &r(1), c, b).unwrap());
        assert_ne!(h, contact_hash(&r(1), &r(2), GeoCell { lat: 45_001, ..c }, b).unwrap());
        assert_ne!(h, contact_hash(&r(1), &r(2), c, TimeBucket(13)).unwrap());
        assert_ne!(h, contact_hash(&r(1), &r(3), c, b).unwrap());
    }

    #[test]
    fn self_contact_is_an_error() {
        let e = contact_hash(&r(1), &r(1), GeoCell { lat: 0, lon: 0 }, TimeBucket(0));
        assert!(matches!(e, Err(ActGuardError::SelfContact(_))));
    }

    #[test]
    fn record_contact_dedups_within_bucket() {
        let q = Quantizer::default();
        let p = Position::new(45.0005, 9.0005);
        let mut t = MyContactsTable::new();
        assert!(t.record_contact(&r(1), &r(2), &p, 0, &q).unwrap());
        assert!(!t.record_contact(&r(1), &r(2), &p, 10, &q).unwrap());
        assert!(!t.record_contact(&r(1), &r(2), &p, 290, &q).unwrap());
        assert_eq!(t.len(), 1);
        assert!(t.record_contact(&r(1), &r(2), &p, 300, &q).unwrap());
        assert_eq!(t.len(), 2);
        assert_eq!(t.records_with(&r(2)).count(), 2);
        assert_eq!(t.records_with(&r(3)).count(), 0);
    }

    #[test]
    fn co_located_endpoints_agree() {
        let q = Quantizer::default();
        let p = Position::new(45.0005, 9.0005);
        let mut a = MyContactsTable::new();
        let mut b = MyContactsTable::new();
        for t in (0..600).step_by(10) {
            a.record_contact(&r(1), &r(2), &p, t, &q).unwrap();
            b.record_contact(&r(2), &r(1), &p, t, &q).unwrap();
        }
        assert_eq!(a.hashes(), b.hashes());
    }

    #[test]
    fn positive_batches_are_append_only() {
        let mut p = PositiveTable::default();
        let h = ContactHash([7; 32]);
        p.insert(1, [h]);
        p.insert(1, []);
        assert_eq!(p.batch(1).unwrap().len(), 1);
        assert!(p.batch(2).is_none());
    }

    #[test]
    fn hex_round_trip() {
        let h = ContactHash([0xAB; 32]);
        assert_eq!(ContactHash::from_hex(&h.to_hex()).unwrap(), h);
        assert!(ContactHash::from_hex("zz").is_err());
    }

    fn sighting(rpi: Rpi, t: u64, p: Position) -> ExposureMatch {
        ExposureMatch {
            diagnosis_id: 4,
            tek_day: 0,
            interval_index: 0,
            rpi,
            scan_time: t,
            rssi_dbm: -50,
            tx_power_dbm: -10,
            location: p,
        }
    }

    #[test]
    fn verdicts() {
        let q = Quantizer::default();
        let nb = Neighborhood::default();
        let place_y = Position::new(45.0005, 9.0005);
        let place_x = Position::new(45.0105, 9.0005);
        let (a, b, c) = (r(0xA), r(0xB), r(0xC));

        // B and C meet in Y; A sees a relayed B in X.
        let mut table_b = MyContactsTable::new();
        let mut table_c = MyContactsTable::new();
        let mut table_a = MyContactsTable::new();
        table_b.record_contact(&b, &c, &place_y, 100, &q).unwrap();
        table_c.record_contact(&c, &b, &place_y, 100, &q).unwrap();
        table_a.record_contact(&a, &b, &place_x, 100, &q).unwrap();
        // a two-way relay also puts A's identifier in B's table, but at Y
        table_b.record_contact(&b, &a, &place_y, 100, &q).unwrap();
        let batch: BTreeSet<_> = table_b.hashes().into_iter().collect();

        let vc = verify_exposure(&sighting(b, 100, place_y), &table_c, Some(&batch), &nb, &q);
        assert_eq!(vc.kind, VerdictKind::ConfirmedContact);
        let va = verify_exposure(&sighting(b, 100, place_x), &table_a, Some(&batch), &nb, &q);
        assert_eq!(va.kind, VerdictKind::RelaySuspected);
        let empty = BTreeSet::new();
        for (table, p) in [(&table_a, place_x), (&table_c, place_y)] {
            let v = verify_exposure(&sighting(b, 100, p), table, Some(&empty), &nb, &q);
            assert_eq!(v.kind, VerdictKind::Unverifiable);
            let v = verify_exposure(&sighting(b, 100, p), table, None, &nb, &q);
            assert_eq!(v.kind, VerdictKind::Unverifiable);
        }
    }

    #[test]
    fn neighborhood_absorbs_boundary_straddle() {
        let q = Quantizer::default();
        let nb = Neighborhood::default();
        let (b, c) = (r(0xB), r(0xC));
        // endpoints on either side of a cell edge and a bucket edge
        let pb = Position::new(45.00099, 9.0005);
        let pc = Position::new(45.00101, 9.0005);
        assert_ne!(q.cell(&pb), q.cell(&pc));
        let mut table_b = MyContactsTable::new();
        let mut table_c = MyContactsTable::new();
        table_b.record_contact(&b, &c, &pb, 299, &q).unwrap();
        table_c.record_contact(&c, &b, &pc, 300, &q).unwrap();
        let batch: BTreeSet<_> = table_b.hashes().into_iter().collect();
        let v = verify_exposure(&sighting(b, 300, pc), &table_c, Some(&batch), &nb, &q);
        assert_eq!(v.kind, VerdictKind::ConfirmedContact);
        let tight = Neighborhood { cells: 0, buckets: 0 };
        let v = verify_exposure(&sighting(b, 300, pc), &table_c, Some(&batch), &tight, &q);
        assert_eq!(v.kind, VerdictKind::RelaySuspected);
    }

    #[test]
    fn diagnosis_verdict_prefers_confirmation() {
        let q = Quantizer::default();
        let nb = Neighborhood::default();
        let place_y = Position::new(45.0005, 9.0005);
        let place_x = Position::new(45.0105, 9.0005);
        let (a, b) = (r(0xA), r(0xB));
        let mut table_a = MyContactsTable::new();
        let mut table_b = MyContactsTable::new();
        // A first sees a relayed B in X, later meets B for real in Y
        table_a.record_contact(&a, &b, &place_x, 100, &q).unwrap();
        table_a.record_contact(&a, &b, &place_y, 3_000, &q).unwrap();
        table_b.record_contact(&b, &a, &place_y, 3_000, &q).unwrap();
        let mut positives = PositiveTable::default();
        positives.insert(4, table_b.hashes());
        let matches = vec![sighting(b, 100, place_x), sighting(b, 3_000, place_y)];
        let v = verify_diagnoses(&matches, &table_a, &positives, &nb, &q);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, VerdictKind::ConfirmedContact);
        let v = verify_diagnoses(&matches[..1], &table_a, &positives, &nb, &q);
        assert_eq!(v[0].kind, VerdictKind::RelaySuspected);
    }
}
