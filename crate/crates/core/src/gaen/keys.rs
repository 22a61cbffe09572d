//! Daily key schedule: TEK -> {RPIK, AEMK} -> rolling identifiers and
//! encrypted metadata.
//!
//! The primitives are standard (HKDF-SHA256, HMAC-SHA256, ChaCha20) but the
//! labels are simulator-specific, so outputs are *not* interoperable with
//! production exposure-notification keys.

use std::fmt;

use hkdf::Hkdf;
use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::GaenError;

pub const TEK_LEN: usize = 16;
pub const RPIK_LEN: usize = 16;
pub const AEMK_LEN: usize = 16;
pub const RPI_LEN: usize = 16;
pub const AEM_LEN: usize = 4;

/// HKDF info label for the rolling-identifier key.
pub const RPIK_LABEL: &[u8] = b"SIM-RPIK";
/// HKDF info label for the metadata key.
pub const AEMK_LABEL: &[u8] = b"SIM-AEMK";
/// HMAC message prefix for per-interval identifiers.
pub const RPI_PREFIX: &[u8] = b"SIM-RPI";
/// HMAC message prefix for the metadata keystream.
pub const AEM_PREFIX: &[u8] = b"SIM-AEM";

/// Version byte placed in front of the transmit power inside the metadata.
const AEM_VERSION: u8 = 0x40;

pub const SECONDS_PER_DAY: u64 = 86_400;

type HmacSha256 = Hmac<Sha256>;

/// Calendar parameters of the rotation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationSchedule {
    pub rotation_period_s: u64,
}

impl Default for RotationSchedule {
    fn default() -> Self {
        Self {
            rotation_period_s: 7_200,
        }
    }
}

impl RotationSchedule {
    pub fn new(rotation_period_s: u64) -> Result<Self, GaenError> {
        if rotation_period_s == 0 || !SECONDS_PER_DAY.is_multiple_of(rotation_period_s) {
            return Err(GaenError::BadRotationPeriod(rotation_period_s));
        }
        Ok(Self { rotation_period_s })
    }

    pub fn intervals_per_day(&self) -> u32 {
        (SECONDS_PER_DAY / self.rotation_period_s) as u32
    }

    pub fn day_of(&self, t: u64) -> u32 {
        (t / SECONDS_PER_DAY) as u32
    }

    pub fn interval_of(&self, t: u64) -> u32 {
        ((t % SECONDS_PER_DAY) / self.rotation_period_s) as u32
    }

    /// Half-open validity window `[start, end)` of interval `i` on `day`.
    pub fn window(&self, day: u32, interval: u32) -> (u64, u64) {
        let start = day as u64 * SECONDS_PER_DAY + interval as u64 * self.rotation_period_s;
        (start, start + self.rotation_period_s)
    }
}

macro_rules! key_newtype {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, GaenError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| GaenError::Length {
                    what: stringify!($name),
                    expected: $len,
                    got: bytes.len(),
                })?;
                Ok(Self(arr))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }
    };
}

key_newtype!(Rpik, RPIK_LEN);
key_newtype!(Aemk, AEMK_LEN);
key_newtype!(Rpi, RPI_LEN);
key_newtype!(Aem, AEM_LEN);

/// Temporary exposure key: one per device per day.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tek {
    pub bytes: [u8; TEK_LEN],
    pub day_index: u32,
}

impl fmt::Debug for Tek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tek(day {}, {})", self.day_index, hex::encode(self.bytes))
    }
}

/// Per-device seed from which every daily TEK is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceSeed(pub [u8; 32]);

impl DeviceSeed {
    /// Derives a device seed from a scenario seed and a per-actor ordinal.
    pub fn derive(scenario_seed: u64, ordinal: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(scenario_seed);
        rng.set_stream(ordinal);
        let mut out = [0u8; 32];
        rng.fill_bytes(&mut out);
        Self(out)
    }
}

/// Draws the TEK for `day_index`. Each day reads its own ChaCha20 stream so
/// keys for any day are reproducible without generating the preceding ones.
pub fn generate_tek(seed: &DeviceSeed, day_index: u32) -> Tek {
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    rng.set_stream(day_index as u64);
    let mut bytes = [0u8; TEK_LEN];
    rng.fill_bytes(&mut bytes);
    Tek { bytes, day_index }
}

fn hkdf_16(ikm: &[u8], label: &[u8]) -> [u8; 16] {
    let hk = Hkdf::<Sha256>::new(None, ikm);
    let mut okm = [0u8; 16];
    hk.expand(label, &mut okm)
        .expect("16 bytes is a valid HKDF-SHA256 output length");
    okm
}

fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

pub fn derive_rpik(tek: &Tek) -> Rpik {
    Rpik(hkdf_16(&tek.bytes, RPIK_LABEL))
}

pub fn derive_aemk(tek: &Tek) -> Aemk {
    Aemk(hkdf_16(&tek.bytes, AEMK_LABEL))
}

/// Rolling identifier for `interval_index` of the key's day.
pub fn derive_rpi(
    rpik: &Rpik,
    interval_index: u32,
    schedule: &RotationSchedule,
) -> Result<Rpi, GaenError> {
    let per_day = schedule.intervals_per_day();
    if interval_index >= per_day {
        return Err(GaenError::IntervalOutOfRange {
            interval: interval_index,
            per_day,
        });
    }
    let tag = hmac_sha256(&rpik.0, &[RPI_PREFIX, &interval_index.to_be_bytes()]);
    let mut out = [0u8; RPI_LEN];
    out.copy_from_slice(&tag[..RPI_LEN]);
    Ok(Rpi(out))
}

fn aem_keystream(aemk: &Aemk, rpi: &Rpi) -> [u8; AEM_LEN] {
    let tag = hmac_sha256(&aemk.0, &[AEM_PREFIX, &rpi.0]);
    let mut ks = [0u8; AEM_LEN];
    ks.copy_from_slice(&tag[..AEM_LEN]);
    ks
}

/// Encrypts `[version, tx_power, 0, 0]` under a keystream bound to the RPI.
pub fn encrypt_aem(aemk: &Aemk, rpi: &Rpi, tx_power_dbm: i8) -> Aem {
    let plain = [AEM_VERSION, tx_power_dbm as u8, 0, 0];
    let ks = aem_keystream(aemk, rpi);
    let mut out = [0u8; AEM_LEN];
    for i in 0..AEM_LEN {
        out[i] = plain[i] ^ ks[i];
    }
    Aem(out)
}

/// Inverse of [`encrypt_aem`]. There is no authentication: a wrong key
/// yields an arbitrary power value rather than an error.
pub fn decrypt_aem(aemk: &Aemk, rpi: &Rpi, aem: &Aem) -> i8 {
    let ks = aem_keystream(aemk, rpi);
    (aem.0[1] ^ ks[1]) as i8
}

/// All identifiers a published key would have produced that day.
pub fn expand_diagnosis_key(tek: &Tek, schedule: &RotationSchedule) -> Vec<(u32, Rpi)> {
    let rpik = derive_rpik(tek);
    (0..schedule.intervals_per_day())
        .map(|i| {
            let rpi = derive_rpi(&rpik, i, schedule).expect("interval in range by construction");
            (i, rpi)
        })
        .collect()
}
