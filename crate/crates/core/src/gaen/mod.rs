//! Exposure-notification cryptography: daily keys, rolling identifiers,
//! encrypted metadata, diagnosis-key matching and risk scoring.
//!
//! All functions are pure; determinism comes from explicit seeds.

pub mod keys;
pub mod matching;
pub mod risk;

use thiserror::Error;

pub use keys::{
    decrypt_aem, derive_aemk, derive_rpi, derive_rpik, encrypt_aem, expand_diagnosis_key,
    generate_tek, Aem, Aemk, DeviceSeed, RotationSchedule, Rpi, Rpik, Tek, AEMK_LABEL, AEM_LEN,
    RPIK_LABEL, RPI_LEN, SECONDS_PER_DAY, TEK_LEN,
};
pub use matching::{match_observations, DiagnosisKey, ExposureMatch, Observation};
pub use risk::{risk_score, Contact, RiskAssessment, RiskConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GaenError {
    #[error("interval {interval} outside [0, {per_day})")]
    IntervalOutOfRange { interval: u32, per_day: u32 },
    #[error("rotation period {0} s does not divide a day")]
    BadRotationPeriod(u64),
    #[error("{what} must be {expected} bytes, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}
