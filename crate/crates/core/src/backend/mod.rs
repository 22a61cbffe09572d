//! Health-authority backend: OTP authorization, diagnosis-key ingestion and
//! publication, and the contact-hash batch store.
//!
//! [`HealthAuthority`] holds the state and runs in-process. The [`http`]
//! module puts the same logic behind a JSON-over-HTTP interface; both
//! implement [`BackendApi`] so the simulator can drive either.

pub mod http;
pub mod wire;

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actguard::ContactHash;
use crate::gaen::{DiagnosisKey, Tek, SECONDS_PER_DAY, TEK_LEN};

pub use wire::{DiagnosisRequest, TekEntry};

pub const RETENTION_DAYS: u64 = 14;
pub const DEFAULT_OTP_TTL_S: u64 = 3_600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("unknown OTP")]
    OtpUnknown,
    #[error("OTP expired")]
    OtpExpired,
    #[error("OTP already used")]
    OtpReused,
    #[error("TEK for day {day} is outside the {RETENTION_DAYS}-day upload window")]
    TekOutOfWindow { day: u32 },
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("backend unreachable: {0}")]
    Unreachable(String),
}

impl BackendError {
    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Self::OtpUnknown => "otp_unknown",
            Self::OtpExpired => "otp_expired",
            Self::OtpReused => "otp_reused",
            Self::TekOutOfWindow { .. } => "tek_out_of_window",
            Self::Malformed(_) => "malformed",
            Self::Unreachable(_) => "unreachable",
        }
    }

    pub fn is_rejection(&self) -> bool {
        !matches!(self, Self::Unreachable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Otp {
    pub code: String,
    pub authorized_at: u64,
    pub ttl: u64,
    pub used: bool,
}

impl Otp {
    pub fn is_expired(&self, now: u64) -> bool {
        now > self.authorized_at + self.ttl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublishedTek {
    pub bytes: [u8; TEK_LEN],
    pub day: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TekChunk {
    pub index: u64,
    pub teks: Vec<PublishedTek>,
    pub published_at: u64,
}

impl TekChunk {
    pub fn diagnosis_keys(&self) -> impl Iterator<Item = DiagnosisKey> + '_ {
        self.teks.iter().map(|t| DiagnosisKey {
            diagnosis_id: self.index,
            tek: Tek {
                bytes: t.bytes,
                day_index: t.day,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashBatch {
    pub diagnosis_id: u64,
    pub hashes: Vec<ContactHash>,
}

/// Operations the device side needs from the backend. `now` is the
/// caller's simulated time; remote implementations use the server clock.
pub trait BackendApi {
    fn authorize_otp(&mut self, now: u64) -> Result<String, BackendError>;
    fn ingest_diagnosis(&mut self, now: u64, req: &DiagnosisRequest) -> Result<u64, BackendError>;
    fn fetch_chunks(&mut self, now: u64, since_index: u64) -> Result<Vec<TekChunk>, BackendError>;
    fn fetch_hash_batch(&mut self, now: u64, diagnosis_id: u64) -> Result<Option<HashBatch>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub otp_ttl_s: u64,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            otp_ttl_s: DEFAULT_OTP_TTL_S,
            seed: 0,
        }
    }
}

/// In-memory server state. Chunks and batches are immutable once stored.
#[derive(Debug)]
pub struct HealthAuthority {
    config: BackendConfig,
    rng: ChaCha20Rng,
    otps: HashMap<String, Otp>,
    chunks: Vec<TekChunk>,
    batches: BTreeMap<u64, HashBatch>,
}

impl HealthAuthority {
    pub fn new(config: BackendConfig) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(config.seed),
            config,
            otps: HashMap::new(),
            chunks: Vec::new(),
            batches: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn otp(&self, code: &str) -> Option<&Otp> {
        self.otps.get(code)
    }

    /// Registers a fresh single-use code valid for `ttl` seconds.
    pub fn authorize_otp_with_ttl(&mut self, now: u64, ttl: u64) -> Otp {
        let code = loop {
            let mut raw = [0u8; 8];
            self.rng.fill_bytes(&mut raw);
            let code = hex::encode(raw);
            if !self.otps.contains_key(&code) {
                break code;
            }
        };
        let otp = Otp {
            code: code.clone(),
            authorized_at: now,
            ttl,
            used: false,
        };
        self.otps.insert(code, otp.clone());
        otp
    }

    pub fn validate_otp(&self, code: &str, now: u64) -> Result<(), BackendError> {
        let otp = self.otps.get(code).ok_or(BackendError::OtpUnknown)?;
        if otp.used {
            return Err(BackendError::OtpReused);
        }
        if otp.is_expired(now) {
            return Err(BackendError::OtpExpired);
        }
        Ok(())
    }

    /// Publishes the keys as a new chunk and stores the optional hash batch
    /// under the same index. Nothing changes on rejection.
    pub fn ingest(
        &mut self,
        now: u64,
        otp: &str,
        teks: Vec<PublishedTek>,
        hashes: Option<Vec<ContactHash>>,
    ) -> Result<u64, BackendError> {
        self.validate_otp(otp, now)?;
        let today = now / SECONDS_PER_DAY;
        for t in &teks {
            let day = t.day as u64;
            if day > today || today - day > RETENTION_DAYS {
                return Err(BackendError::TekOutOfWindow { day: t.day });
            }
        }

        let index = self.chunks.last().map_or(1, |c| c.index + 1);
        self.chunks.push(TekChunk {
            index,
            teks,
            published_at: now,
        });
        if let Some(hashes) = hashes {
            self.batches.insert(
                index,
                HashBatch {
                    diagnosis_id: index,
                    hashes,
                },
            );
        }
        self.otps.get_mut(otp).expect("validated above").used = true;
        Ok(index)
    }

    pub fn chunks_since(&self, now: u64, since_index: u64) -> Vec<TekChunk> {
        let max_age = RETENTION_DAYS * SECONDS_PER_DAY;
        self.chunks
            .iter()
            .filter(|c| c.index > since_index && now.saturating_sub(c.published_at) <= max_age)
            .cloned()
            .collect()
    }

    pub fn hash_batch(&self, diagnosis_id: u64) -> Option<HashBatch> {
        self.batches.get(&diagnosis_id).cloned()
    }
}

impl BackendApi for HealthAuthority {
    fn authorize_otp(&mut self, now: u64) -> Result<String, BackendError> {
        let ttl = self.config.otp_ttl_s;
        Ok(self.authorize_otp_with_ttl(now, ttl).code)
    }

    fn ingest_diagnosis(&mut self, now: u64, req: &DiagnosisRequest) -> Result<u64, BackendError> {
        let (teks, hashes) = req.decode()?;
        self.ingest(now, &req.otp, teks, hashes)
    }

    fn fetch_chunks(&mut self, now: u64, since_index: u64) -> Result<Vec<TekChunk>, BackendError> {
        Ok(self.chunks_since(now, since_index))
    }

    fn fetch_hash_batch(&mut self, _now: u64, diagnosis_id: u64) -> Result<Option<HashBatch>, BackendError> {
        Ok(self.hash_batch(diagnosis_id))
    }
}

/// Wraps a backend and keeps the serialized body of every upload attempt,
/// byte-identical to what the HTTP client puts on the wire.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    pub inner: B,
    pub uploads: Vec<Vec<u8>>,
}

impl<B> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            uploads: Vec::new(),
        }
    }
}

impl<B: BackendApi> BackendApi for RecordingBackend<B> {
    fn authorize_otp(&mut self, now: u64) -> Result<String, BackendError> {
        self.inner.authorize_otp(now)
    }

    fn ingest_diagnosis(&mut self, now: u64, req: &DiagnosisRequest) -> Result<u64, BackendError> {
        self.uploads
            .push(serde_json::to_vec(req).expect("request serializes"));
        self.inner.ingest_diagnosis(now, req)
    }

    fn fetch_chunks(&mut self, now: u64, since_index: u64) -> Result<Vec<TekChunk>, BackendError> {
        self.inner.fetch_chunks(now, since_index)
    }

    fn fetch_hash_batch(&mut self, now: u64, diagnosis_id: u64) -> Result<Option<HashBatch>, BackendError> {
        self.inner.fetch_hash_batch(now, diagnosis_id)
    }
}

impl<B: BackendApi + ?Sized> BackendApi for &mut B {
    fn authorize_otp(&mut self, now: u64) -> Result<String, BackendError> {
        (**self).authorize_otp(now)
    }

    fn ingest_diagnosis(&mut self, now: u64, req: &DiagnosisRequest) -> Result<u64, BackendError> {
        (**self).ingest_diagnosis(now, req)
    }

    fn fetch_chunks(&mut self, now: u64, since_index: u64) -> Result<Vec<TekChunk>, BackendError> {
        (**self).fetch_chunks(now, since_index)
    }

    fn fetch_hash_batch(&mut self, now: u64, diagnosis_id: u64) -> Result<Option<HashBatch>, BackendError> {
        (**self).fetch_hash_batch(now, diagnosis_id)
    }
}
