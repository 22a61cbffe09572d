//! Simulated BLE medium: advertisement codec, propagation, discrete clock
//! and in-range delivery.

use num_traits::{Float, FloatConst};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaen::{Aem, Rpi, AEM_LEN, RPI_LEN};
use crate::geo::LatLon;
use crate::Position;

/// 16-bit service UUID carried by exposure-notification advertisements.
pub const EXPOSURE_SERVICE_UUID: u16 = 0xFD6F;
pub const PACKET_LEN: usize = 2 + RPI_LEN + AEM_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RadioError {
    #[error("{field} must be {expected} bytes, got {got}")]
    FieldLength {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("tick must be positive")]
    ZeroTick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub center: Position,
    pub radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdvertisementPacket {
    pub service_uuid: u16,
    pub rpi: Rpi,
    pub aem: Aem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Protocol { rpi: Rpi, aem: Aem },
    NotProtocolPacket,
}

/// `uuid (LE, 2 bytes) ‖ rpi (16) ‖ aem (4)`.
pub fn encode_advertisement(rpi: &[u8], aem: &[u8]) -> Result<Vec<u8>, RadioError> {
    if rpi.len() != RPI_LEN {
        return Err(RadioError::FieldLength {
            field: "rpi",
            expected: RPI_LEN,
            got: rpi.len(),
        });
    }
    if aem.len() != AEM_LEN {
        return Err(RadioError::FieldLength {
            field: "aem",
            expected: AEM_LEN,
            got: aem.len(),
        });
    }
    let mut out = Vec::with_capacity(PACKET_LEN);
    out.extend_from_slice(&EXPOSURE_SERVICE_UUID.to_le_bytes());
    out.extend_from_slice(rpi);
    out.extend_from_slice(aem);
    Ok(out)
}

impl AdvertisementPacket {
    pub fn new(rpi: Rpi, aem: Aem) -> Self {
        Self {
            service_uuid: EXPOSURE_SERVICE_UUID,
            rpi,
            aem,
        }
    }

    pub fn to_bytes(&self) -> [u8; PACKET_LEN] {
        let mut out = [0u8; PACKET_LEN];
        out[..2].copy_from_slice(&self.service_uuid.to_le_bytes());
        out[2..2 + RPI_LEN].copy_from_slice(&self.rpi.0);
        out[2 + RPI_LEN..].copy_from_slice(&self.aem.0);
        out
    }
}

/// Classifies a received buffer. Anything that is not a well-formed
/// exposure advertisement is reported as [`Decoded::NotProtocolPacket`].
pub fn decode_advertisement(bytes: &[u8]) -> Decoded {
    if bytes.len() != PACKET_LEN {
        return Decoded::NotProtocolPacket;
    }
    if u16::from_le_bytes([bytes[0], bytes[1]]) != EXPOSURE_SERVICE_UUID {
        return Decoded::NotProtocolPacket;
    }
    let mut rpi = [0u8; RPI_LEN];
    rpi.copy_from_slice(&bytes[2..2 + RPI_LEN]);
    let mut aem = [0u8; AEM_LEN];
    aem.copy_from_slice(&bytes[2 + RPI_LEN..]);
    Decoded::Protocol {
        rpi: Rpi(rpi),
        aem: Aem(aem),
    }
}

/// Log-distance propagation: `loss = ref_loss + slope·log10(d / 1 m)`,
/// with `d` clamped below at `min_distance_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogDistancePathLoss<T> {
    pub ref_loss_db: T,
    pub slope_db_per_decade: T,
    pub min_distance_m: T,
}

impl<T: Float> LogDistancePathLoss<T> {
    pub fn loss_db(&self, distance_m: T) -> T {
        let d = distance_m.max(self.min_distance_m);
        self.ref_loss_db + self.slope_db_per_decade * d.log10()
    }

    pub fn rssi_dbm(&self, tx_power_dbm: T, distance_m: T) -> T {
        tx_power_dbm - self.loss_db(distance_m)
    }
}

impl Default for LogDistancePathLoss<f64> {
    fn default() -> Self {
        Self {
            ref_loss_db: 40.0,
            slope_db_per_decade: 20.0,
            min_distance_m: 0.1,
        }
    }
}

impl Default for LogDistancePathLoss<f32> {
    fn default() -> Self {
        Self {
            ref_loss_db: 40.0,
            slope_db_per_decade: 20.0,
            min_distance_m: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub ble_range_m: f64,
    pub path_loss: LogDistancePathLoss<f64>,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            ble_range_m: 10.0,
            path_loss: LogDistancePathLoss::default(),
        }
    }
}

pub fn in_range<T: Float + FloatConst>(a: &LatLon<T>, b: &LatLon<T>, range_m: T) -> bool {
    crate::geo::within_range(a, b, range_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    now: u64,
    tick: u64,
}

impl SimClock {
    pub fn new(start: u64, tick: u64) -> Result<Self, RadioError> {
        if tick == 0 {
            return Err(RadioError::ZeroTick);
        }
        Ok(Self { now: start, tick })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn advance(&mut self) -> u64 {
        self.now += self.tick;
        self.now
    }
}

pub type NodeId = usize;

/// One over-the-air emission during the current tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub sender: NodeId,
    pub position: Position,
    pub tx_power_dbm: i8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub payload: Vec<u8>,
    pub rssi_dbm: i16,
    pub distance_m: f64,
}

/// Radio-visible state of the world for one tick.
#[derive(Debug, Clone)]
pub struct World {
    pub clock: SimClock,
    pub radio: RadioConfig,
    /// Receiver positions, indexed by node id.
    pub positions: Vec<Position>,
}

impl World {
    /// Delivers each transmission to every other node within range.
    /// Deliveries are ordered by sender, then receiver, then emission order.
    pub fn broadcast_step(&self, transmissions: &[Transmission]) -> Vec<Delivery> {
        let mut order: Vec<usize> = (0..transmissions.len()).collect();
        order.sort_by_key(|&i| transmissions[i].sender);

        let mut out = Vec::new();
        for &i in &order {
            let tx = &transmissions[i];
            for (receiver, pos) in self.positions.iter().enumerate() {
                if receiver == tx.sender {
                    continue;
                }
                let d = tx.position.distance_m(pos);
                if d > self.radio.ble_range_m {
                    continue;
                }
                let rssi = self.radio.path_loss.rssi_dbm(tx.tx_power_dbm as f64, d);
                out.push(Delivery {
                    sender: tx.sender,
                    receiver,
                    payload: tx.payload.clone(),
                    rssi_dbm: rssi.round() as i16,
                    distance_m: d,
                });
            }
        }
        // stable: emissions from one sender keep their relative order
        out.sort_by_key(|d| (d.sender, d.receiver));
        out
    }
}
