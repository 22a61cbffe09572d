//! JSON bodies of the HTTP interface. Field names and lowercase hex are
//! frozen; see `tests/fixtures/wire/` for golden examples.

use serde::{Deserialize, Serialize};

use super::{BackendError, HashBatch, PublishedTek, TekChunk};
use crate::actguard::ContactHash;
use crate::gaen::{Tek, TEK_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TekEntry {
    pub tek_hex: String,
    pub day: u32,
}

impl From<&PublishedTek> for TekEntry {
    fn from(t: &PublishedTek) -> Self {
        Self {
            tek_hex: hex::encode(t.bytes),
            day: t.day,
        }
    }
}

impl TekEntry {
    fn decode(&self) -> Result<PublishedTek, BackendError> {
        let mut bytes = [0u8; TEK_LEN];
        hex::decode_to_slice(&self.tek_hex, &mut bytes)
            .map_err(|_| BackendError::Malformed(format!("bad tek_hex {:?}", self.tek_hex)))?;
        Ok(PublishedTek {
            bytes,
            day: self.day,
        })
    }
}

/// Body of `POST /diagnosis`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRequest {
    pub otp: String,
    pub teks: Vec<TekEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashes: Option<Vec<String>>,
}

impl DiagnosisRequest {
    pub fn new(otp: &str, teks: &[Tek], hashes: Option<&[ContactHash]>) -> Self {
        Self {
            otp: otp.to_owned(),
            teks: teks
                .iter()
                .map(|t| TekEntry {
                    tek_hex: hex::encode(t.bytes),
                    day: t.day_index,
                })
                .collect(),
            hashes: hashes.map(|hs| hs.iter().map(ContactHash::to_hex).collect()),
        }
    }

    pub fn decode(&self) -> Result<(Vec<PublishedTek>, Option<Vec<ContactHash>>), BackendError> {
        let teks = self
            .teks
            .iter()
            .map(TekEntry::decode)
            .collect::<Result<Vec<_>, _>>()?;
        let hashes = match &self.hashes {
            None => None,
            Some(hs) => Some(
                hs.iter()
                    .map(|h| ContactHash::from_hex(h).map_err(|e| BackendError::Malformed(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok((teks, hashes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtpResponse {
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisResponse {
    pub diagnosis_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkBody {
    pub index: u64,
    pub teks: Vec<TekEntry>,
    pub published_at: u64,
}

impl From<&TekChunk> for ChunkBody {
    fn from(c: &TekChunk) -> Self {
        Self {
            index: c.index,
            teks: c.teks.iter().map(TekEntry::from).collect(),
            published_at: c.published_at,
        }
    }
}

impl ChunkBody {
    pub fn decode(&self) -> Result<TekChunk, BackendError> {
        Ok(TekChunk {
            index: self.index,
            teks: self
                .teks
                .iter()
                .map(TekEntry::decode)
                .collect::<Result<_, _>>()?,
            published_at: self.published_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashesBody {
    pub hashes: Vec<String>,
}

impl From<&HashBatch> for HashesBody {
    fn from(b: &HashBatch) -> Self {
        Self {
            hashes: b.hashes.iter().map(ContactHash::to_hex).collect(),
        }
    }
}
