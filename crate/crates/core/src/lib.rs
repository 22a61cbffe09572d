//! Deterministic simulator of BLE exposure-notification proximity tracing,
//! the relay attack against it, and a location-bound contact-hash defense.
//!
//! Geometry, propagation and quantization are generic over the float
//! scalar; the simulator itself runs in `f64` through the aliases below.

pub mod actguard;
pub mod agents;
pub mod backend;
pub mod gaen;
pub mod geo;
pub mod radio;
pub mod scenario;

pub type Position = geo::LatLon<f64>;
pub type PathLoss = radio::LogDistancePathLoss<f64>;
pub type Quantizer = actguard::Quantizer<f64>;
